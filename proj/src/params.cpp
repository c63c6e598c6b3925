#include "cmkl/params.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "cmkl/rng.hpp"

namespace cmkl {

const char* group_name(Group g) {
  switch (g) {
    case Group::Structural: return "structural";
    case Group::Text: return "text";
    case Group::Molecular: return "molecular";
    case Group::FusionDecoder: return "fusion_decoder";
  }
  return "?";
}

Group group_from_name(const std::string& name) {
  if (name == "structural") return Group::Structural;
  if (name == "text") return Group::Text;
  if (name == "molecular") return Group::Molecular;
  if (name == "fusion_decoder") return Group::FusionDecoder;
  throw std::invalid_argument("unknown group: " + name);
}

namespace {
std::string slot_key(Group g, const std::string& name) {
  return std::string(group_name(g)) + "/" + name;
}
}  // namespace

Tensor& ModelState::add(Group group, const std::string& name, Tensor value) {
  std::string key = slot_key(group, name);
  if (index_.count(key)) throw std::invalid_argument("duplicate tensor " + key);
  index_[key] = tensors_.size();
  tensors_.push_back(NamedTensor{group, name, std::move(value)});
  return tensors_.back().value;
}

Tensor& ModelState::at(Group group, const std::string& name) {
  auto it = index_.find(slot_key(group, name));
  if (it == index_.end()) throw std::out_of_range("no tensor " + slot_key(group, name));
  return tensors_[it->second].value;
}

const Tensor& ModelState::at(Group group, const std::string& name) const {
  auto it = index_.find(slot_key(group, name));
  if (it == index_.end()) throw std::out_of_range("no tensor " + slot_key(group, name));
  return tensors_[it->second].value;
}

bool ModelState::has(Group group, const std::string& name) const {
  return index_.count(slot_key(group, name)) > 0;
}

std::size_t ModelState::slot(Group group, const std::string& name) const {
  auto it = index_.find(slot_key(group, name));
  if (it == index_.end()) throw std::out_of_range("no tensor " + slot_key(group, name));
  return it->second;
}

std::size_t ModelState::total_params() const {
  std::size_t n = 0;
  for (const NamedTensor& t : tensors_) n += t.value.numel();
  return n;
}

GradientSet GradientSet::zeros_like(const ModelState& state) {
  GradientSet g;
  g.grads.reserve(state.tensors().size());
  for (const NamedTensor& t : state.tensors()) g.grads.push_back(Tensor::zeros(t.value.shape));
  return g;
}

ModelState init_params(const std::vector<TensorSpec>& specs, std::uint64_t seed) {
  ModelState state;
  for (const TensorSpec& spec : specs) {
    if (Tensor::numel_of(spec.shape) == 0) {
      throw std::invalid_argument("init_params: zero-sized shape for " + spec.name);
    }
    Tensor t(spec.shape);
    switch (spec.scheme) {
      case InitScheme::Zeros:
        break;
      case InitScheme::Ones:
        for (double& x : t.data) x = 1.0;
        break;
      case InitScheme::Glorot: {
        // Seeded per tensor so adding one tensor never reshuffles the others.
        Rng rng(derive_seed(seed, slot_key(spec.group, spec.name)));
        std::size_t rank = spec.shape.size();
        std::size_t fan_out = rank >= 2 ? spec.shape[rank - 2] : spec.shape[0];
        std::size_t fan_in = rank >= 2 ? spec.shape[rank - 1] : spec.shape[0];
        double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        for (double& x : t.data) x = rng.uniform(-bound, bound);
        break;
      }
    }
    state.add(spec.group, spec.name, std::move(t));
  }
  return state;
}

namespace {

constexpr char kMagic[8] = {'C', 'M', 'K', 'L', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ofstream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ofstream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }
std::uint32_t read_u32(std::ifstream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
std::uint64_t read_u64(std::ifstream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 8);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelState& state) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out.write(kMagic, 8);
  write_u32(out, kVersion);
  write_u32(out, static_cast<std::uint32_t>(state.tensors().size()));
  for (const NamedTensor& t : state.tensors()) {
    write_u32(out, static_cast<std::uint32_t>(t.group));
    write_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    write_u32(out, static_cast<std::uint32_t>(t.value.shape.size()));
    for (std::size_t d : t.value.shape) write_u64(out, d);
    out.write(reinterpret_cast<const char*>(t.value.data.data()),
              static_cast<std::streamsize>(t.value.data.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

ModelState load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0) throw std::runtime_error("load_checkpoint: bad magic in " + path);
  std::uint32_t version = read_u32(in);
  if (version != kVersion) throw std::runtime_error("load_checkpoint: unsupported version");
  std::uint32_t count = read_u32(in);
  ModelState state;
  for (std::uint32_t i = 0; i < count; ++i) {
    auto group = static_cast<Group>(read_u32(in));
    std::uint32_t name_len = read_u32(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    std::uint32_t rank = read_u32(in);
    std::vector<std::size_t> shape(rank);
    for (std::uint32_t d = 0; d < rank; ++d) shape[d] = read_u64(in);
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (!in) throw std::runtime_error("load_checkpoint: truncated file " + path);
    state.add(group, name, std::move(t));
  }
  return state;
}

}  // namespace cmkl
