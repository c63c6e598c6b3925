#include "cmkl/kgdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "cmkl/rng.hpp"

namespace cmkl {

namespace fs = std::filesystem;
using nlohmann::json;

int Vocab::get_or_add(const std::string& name) {
  auto it = ids_.find(name);
  if (it != ids_.end()) return it->second;
  int id = static_cast<int>(names_.size());
  ids_.emplace(name, id);
  names_.push_back(name);
  return id;
}

std::optional<int> Vocab::find(const std::string& name) const {
  auto it = ids_.find(name);
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

void TaskDataset::recompute_active_sets() {
  std::set<int> ents, rels;
  for (const auto* split : {&train, &valid, &test}) {
    for (const Triple& t : *split) {
      ents.insert(t.head);
      ents.insert(t.tail);
      rels.insert(t.rel);
    }
  }
  entities.assign(ents.begin(), ents.end());
  relations.assign(rels.begin(), rels.end());
}

std::vector<Triple> TaskDataset::all_triples() const {
  std::vector<Triple> all = train;
  all.insert(all.end(), valid.begin(), valid.end());
  all.insert(all.end(), test.begin(), test.end());
  return all;
}

std::vector<Triple> load_triples(const std::string& path, Vocab& entities, Vocab& relations) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_triples: cannot open " + path);
  std::vector<Triple> triples;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      std::size_t tab = line.find('\t', start);
      if (tab == std::string::npos) {
        fields.push_back(line.substr(start));
        break;
      }
      fields.push_back(line.substr(start, tab - start));
      start = tab + 1;
    }
    if (fields.size() != 3 || fields[0].empty() || fields[1].empty() || fields[2].empty()) {
      throw std::runtime_error("load_triples: malformed line " + std::to_string(line_no) + " in " + path);
    }
    Triple t;
    t.head = entities.get_or_add(fields[0]);
    t.rel = relations.get_or_add(fields[1]);
    t.tail = entities.get_or_add(fields[2]);
    triples.push_back(t);
  }
  return triples;
}

void save_triples(const std::string& path, const std::vector<Triple>& triples,
                  const Vocab& entities, const Vocab& relations) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_triples: cannot open " + path);
  for (const Triple& t : triples) {
    out << entities.name(t.head) << '\t' << relations.name(t.rel) << '\t' << entities.name(t.tail) << '\n';
  }
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return out;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

FeatureLoadResult load_features(const std::string& path, FeatureKind kind, const Vocab& entities) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_features: cannot open " + path);
  FeatureLoadResult result;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields = split_csv_line(line);
    if (fields.size() < 2) {
      throw std::runtime_error("load_features: malformed line " + std::to_string(line_no) + " in " + path);
    }
    std::size_t width = fields.size() - 1;
    if (result.dim == 0) {
      result.dim = width;
    } else if (width != result.dim) {
      throw std::runtime_error("load_features: inconsistent row width at line " + std::to_string(line_no) +
                               " in " + path);
    }
    auto id = entities.find(fields[0]);
    if (!id) {
      ++result.skipped_unknown;
      continue;
    }
    std::vector<double> vec(width);
    for (std::size_t i = 0; i < width; ++i) {
      try {
        vec[i] = std::stod(fields[i + 1]);
      } catch (const std::exception&) {
        throw std::runtime_error("load_features: bad number at line " + std::to_string(line_no) + " in " + path);
      }
      if (kind == FeatureKind::Mol && vec[i] != 0.0 && vec[i] != 1.0) {
        throw std::runtime_error("load_features: non-binary molecular value at line " + std::to_string(line_no) +
                                 " in " + path);
      }
    }
    result.features[*id] = std::move(vec);
  }
  return result;
}

void save_features(const std::string& path, const std::map<int, std::vector<double>>& features,
                   FeatureKind kind, const Vocab& entities) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_features: cannot open " + path);
  for (const auto& [id, vec] : features) {
    out << entities.name(id);
    for (double v : vec) {
      if (kind == FeatureKind::Mol) {
        out << ',' << (v != 0.0 ? 1 : 0);
      } else {
        out << ',' << format_double(v);
      }
    }
    out << '\n';
  }
}

void load_type_labels(const std::string& path, TaskSequence& seq) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_type_labels: cannot open " + path);
  seq.entity_type.assign(seq.num_entities(), -1);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields = split_csv_line(line);
    if (fields.size() != 2) {
      throw std::runtime_error("load_type_labels: malformed line " + std::to_string(line_no) + " in " + path);
    }
    auto id = seq.entity_vocab.find(fields[0]);
    if (!id) continue;
    seq.entity_type[*id] = seq.type_vocab.get_or_add(fields[1]);
  }
}

void save_type_labels(const std::string& path, const TaskSequence& seq) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_type_labels: cannot open " + path);
  for (std::size_t e = 0; e < seq.entity_type.size(); ++e) {
    if (seq.entity_type[e] < 0) continue;
    out << seq.entity_vocab.name(static_cast<int>(e)) << ',' << seq.type_vocab.name(seq.entity_type[e]) << '\n';
  }
}

TaskDataset split_task(const std::vector<Triple>& triples, const SplitRatios& ratios,
                       std::uint64_t seed, int task_id, bool* degenerate_warning) {
  double sum = ratios.train + ratios.valid + ratios.test;
  if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("split_task: ratios must sum to 1");
  if (triples.empty()) throw std::invalid_argument("split_task: empty triple collection");

  TaskDataset task;
  task.task_id = task_id;
  std::vector<Triple> shuffled = triples;
  Rng rng(seed);
  rng.shuffle(shuffled);

  std::size_t n = shuffled.size();
  if (n < 3) {
    task.train = shuffled;
    if (degenerate_warning) *degenerate_warning = true;
    task.recompute_active_sets();
    return task;
  }
  std::size_t n_train = static_cast<std::size_t>(ratios.train * static_cast<double>(n));
  std::size_t n_valid = static_cast<std::size_t>(ratios.valid * static_cast<double>(n));
  std::size_t n_test = static_cast<std::size_t>(ratios.test * static_cast<double>(n));
  n_train += n - (n_train + n_valid + n_test);  // remainder to train

  task.train.assign(shuffled.begin(), shuffled.begin() + n_train);
  task.valid.assign(shuffled.begin() + n_train, shuffled.begin() + n_train + n_valid);
  task.test.assign(shuffled.begin() + n_train + n_valid, shuffled.end());
  if (degenerate_warning) *degenerate_warning = false;
  task.recompute_active_sets();
  return task;
}

std::pair<TaskSequence, FeatureStore> generate_synthetic(const SynthConfig& config, std::uint64_t seed) {
  if (config.n_types <= 0 || config.entities_per_type <= 0) {
    throw std::invalid_argument("generate_synthetic: need at least one type and one entity per type");
  }
  if (config.n_tasks <= 0 || config.n_relations <= 0 || config.triples_per_task <= 0) {
    throw std::invalid_argument("generate_synthetic: tasks, relations and triples must be positive");
  }

  TaskSequence seq;
  FeatureStore features;
  features.d_text = config.d_text;
  features.d_mol = config.d_mol;

  const int n_entities = config.n_types * config.entities_per_type;
  for (int e = 0; e < n_entities; ++e) seq.entity_vocab.get_or_add("e" + std::to_string(e));
  for (int r = 0; r < config.n_relations; ++r) seq.relation_vocab.get_or_add("r" + std::to_string(r));
  for (int c = 0; c < config.n_types; ++c) seq.type_vocab.get_or_add("t" + std::to_string(c));
  seq.entity_type.resize(n_entities);
  for (int e = 0; e < n_entities; ++e) seq.entity_type[e] = e / config.entities_per_type;

  // Ground-truth bilinear model: entities and relations get latent factors,
  // each task keeps its type group's top-scoring candidate triples.
  Rng factor_rng(derive_seed(seed, "synthetic/factors"));
  std::vector<std::vector<double>> ent_factor(n_entities, std::vector<double>(config.latent_dim));
  std::vector<std::vector<double>> rel_factor(config.n_relations, std::vector<double>(config.latent_dim));
  for (auto& f : ent_factor)
    for (double& x : f) x = factor_rng.normal();
  for (auto& f : rel_factor)
    for (double& x : f) x = factor_rng.normal();

  auto latent_score = [&](int h, int r, int t) {
    double s = 0.0;
    for (int d = 0; d < config.latent_dim; ++d) s += ent_factor[h][d] * rel_factor[r][d] * ent_factor[t][d];
    return s;
  };

  for (int k = 0; k < config.n_tasks; ++k) {
    std::vector<std::pair<double, Triple>> candidates;
    for (int h = 0; h < n_entities; ++h) {
      if (seq.entity_type[h] % config.n_tasks != k) continue;
      for (int r = 0; r < config.n_relations; ++r) {
        for (int t = 0; t < n_entities; ++t) {
          if (t == h) continue;
          candidates.push_back({latent_score(h, r, t), Triple{h, r, t}});
        }
      }
    }
    std::sort(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    std::size_t keep = std::min(candidates.size(), static_cast<std::size_t>(config.triples_per_task));
    std::vector<Triple> task_triples;
    task_triples.reserve(keep);
    for (std::size_t i = 0; i < keep; ++i) task_triples.push_back(candidates[i].second);

    seq.tasks.push_back(split_task(task_triples, config.ratios,
                                   derive_seed(seed, "synthetic/split", static_cast<std::uint64_t>(k)), k + 1));
  }

  // Text: type centroid (one-hot-ish) plus gaussian noise, on a covered subset.
  Rng text_rng(derive_seed(seed, "synthetic/text"));
  std::vector<int> text_order(n_entities);
  for (int e = 0; e < n_entities; ++e) text_order[e] = e;
  text_rng.shuffle(text_order);
  auto n_text = static_cast<std::size_t>(config.text_coverage * n_entities);
  std::vector<int> text_covered(text_order.begin(), text_order.begin() + std::min<std::size_t>(n_text, text_order.size()));
  std::sort(text_covered.begin(), text_covered.end());
  for (int e : text_covered) {
    std::vector<double> v(config.d_text, 0.0);
    if (config.d_text > 0) v[static_cast<std::size_t>(seq.entity_type[e]) % config.d_text] = 1.0;
    for (double& x : v) x += text_rng.normal(0.0, config.sigma_text);
    features.text[e] = std::move(v);
  }

  // Molecular: random bits on a fraction of the designated type only.
  Rng mol_rng(derive_seed(seed, "synthetic/mol"));
  std::vector<int> mol_candidates;
  for (int e = 0; e < n_entities; ++e) {
    if (seq.entity_type[e] == config.mol_type) mol_candidates.push_back(e);
  }
  mol_rng.shuffle(mol_candidates);
  auto n_mol = static_cast<std::size_t>(config.mol_coverage * static_cast<double>(mol_candidates.size()));
  mol_candidates.resize(std::min(n_mol, mol_candidates.size()));
  std::sort(mol_candidates.begin(), mol_candidates.end());
  for (int e : mol_candidates) {
    std::vector<double> v(config.d_mol);
    for (double& x : v) x = mol_rng.coin() ? 1.0 : 0.0;
    features.mol[e] = std::move(v);
  }

  return {std::move(seq), std::move(features)};
}

namespace {

std::string task_file(const std::string& dir, int task_id, const char* split) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "task_%03d.%s.tsv", task_id, split);
  return (fs::path(dir) / buf).string();
}

}  // namespace

void save_dataset_dir(const std::string& dir, const TaskSequence& seq, const FeatureStore& features) {
  fs::create_directories(dir);
  {
    std::ofstream out(fs::path(dir) / "entities.tsv");
    for (const std::string& n : seq.entity_vocab.names()) out << n << '\n';
  }
  {
    std::ofstream out(fs::path(dir) / "relations.tsv");
    for (const std::string& n : seq.relation_vocab.names()) out << n << '\n';
  }
  for (const TaskDataset& task : seq.tasks) {
    save_triples(task_file(dir, task.task_id, "train"), task.train, seq.entity_vocab, seq.relation_vocab);
    save_triples(task_file(dir, task.task_id, "valid"), task.valid, seq.entity_vocab, seq.relation_vocab);
    save_triples(task_file(dir, task.task_id, "test"), task.test, seq.entity_vocab, seq.relation_vocab);
  }
  if (!features.text.empty()) save_features((fs::path(dir) / "features_text.csv").string(), features.text, FeatureKind::Text, seq.entity_vocab);
  if (!features.mol.empty()) save_features((fs::path(dir) / "features_mol.csv").string(), features.mol, FeatureKind::Mol, seq.entity_vocab);
  if (!seq.entity_type.empty()) save_type_labels((fs::path(dir) / "entity_types.csv").string(), seq);

  json meta;
  meta["n_tasks"] = seq.tasks.size();
  meta["d_text"] = features.d_text;
  meta["d_mol"] = features.d_mol;
  std::ofstream out(fs::path(dir) / "meta.json");
  out << meta.dump(2) << '\n';
}

std::pair<TaskSequence, FeatureStore> load_dataset_dir(const std::string& dir) {
  TaskSequence seq;
  FeatureStore features;

  std::ifstream meta_in(fs::path(dir) / "meta.json");
  if (!meta_in) throw std::runtime_error("load_dataset_dir: missing meta.json in " + dir);
  json meta = json::parse(meta_in);
  int n_tasks = meta.at("n_tasks").get<int>();
  features.d_text = meta.value("d_text", 0);
  features.d_mol = meta.value("d_mol", 0);

  // Vocab files pin id order; entities without triples (feature-only) stay addressable.
  {
    std::ifstream in(fs::path(dir) / "entities.tsv");
    if (in) {
      std::string line;
      while (std::getline(in, line))
        if (!line.empty()) seq.entity_vocab.get_or_add(line);
    }
  }
  {
    std::ifstream in(fs::path(dir) / "relations.tsv");
    if (in) {
      std::string line;
      while (std::getline(in, line))
        if (!line.empty()) seq.relation_vocab.get_or_add(line);
    }
  }

  for (int k = 1; k <= n_tasks; ++k) {
    TaskDataset task;
    task.task_id = k;
    task.train = load_triples(task_file(dir, k, "train"), seq.entity_vocab, seq.relation_vocab);
    task.valid = load_triples(task_file(dir, k, "valid"), seq.entity_vocab, seq.relation_vocab);
    task.test = load_triples(task_file(dir, k, "test"), seq.entity_vocab, seq.relation_vocab);
    task.recompute_active_sets();
    seq.tasks.push_back(std::move(task));
  }

  fs::path text_path = fs::path(dir) / "features_text.csv";
  if (fs::exists(text_path)) {
    auto loaded = load_features(text_path.string(), FeatureKind::Text, seq.entity_vocab);
    features.text = std::move(loaded.features);
    if (loaded.dim > 0) features.d_text = loaded.dim;
  }
  fs::path mol_path = fs::path(dir) / "features_mol.csv";
  if (fs::exists(mol_path)) {
    auto loaded = load_features(mol_path.string(), FeatureKind::Mol, seq.entity_vocab);
    features.mol = std::move(loaded.features);
    if (loaded.dim > 0) features.d_mol = loaded.dim;
  }
  fs::path types_path = fs::path(dir) / "entity_types.csv";
  if (fs::exists(types_path)) {
    load_type_labels(types_path.string(), seq);
  } else {
    seq.entity_type.assign(seq.num_entities(), -1);
  }
  return {std::move(seq), std::move(features)};
}

}  // namespace cmkl
