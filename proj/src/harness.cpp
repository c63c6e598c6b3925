#include "cmkl/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace cmkl {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double json_or(const json& j, const char* key, double fallback) {
  return j.contains(key) ? j.at(key).get<double>() : fallback;
}

json number_or_null(double v) {
  if (std::isnan(v)) return nullptr;
  return v;
}

EwcMode ewc_mode_from_name(const std::string& s) {
  if (s == "per-group") return EwcMode::PerGroup;
  if (s == "uniform") return EwcMode::Uniform;
  if (s == "off") return EwcMode::Off;
  throw std::invalid_argument("unknown ewc mode: " + s);
}

const char* ewc_mode_name(EwcMode m) {
  switch (m) {
    case EwcMode::PerGroup: return "per-group";
    case EwcMode::Uniform: return "uniform";
    case EwcMode::Off: return "off";
  }
  return "?";
}

AnchorMode anchor_mode_from_name(const std::string& s) {
  if (s == "accumulate") return AnchorMode::Accumulate;
  if (s == "replace") return AnchorMode::Replace;
  if (s == "multi") return AnchorMode::Multi;
  throw std::invalid_argument("unknown anchor mode: " + s);
}

const char* anchor_mode_name(AnchorMode m) {
  switch (m) {
    case AnchorMode::Accumulate: return "accumulate";
    case AnchorMode::Replace: return "replace";
    case AnchorMode::Multi: return "multi";
  }
  return "?";
}

}  // namespace

ExperimentConfig parse_experiment_config(const json& j) {
  ExperimentConfig c;
  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    std::string source = d.value("source", "synthetic");
    if (source == "files") {
      c.synthetic = false;
      c.dataset_dir = d.at("dir").get<std::string>();
    } else if (source == "synthetic") {
      c.synthetic = true;
    } else {
      throw std::invalid_argument("dataset.source must be 'synthetic' or 'files'");
    }
    if (d.contains("synthetic")) {
      const json& s = d.at("synthetic");
      c.synth.n_types = s.value("n_types", c.synth.n_types);
      c.synth.entities_per_type = s.value("entities_per_type", c.synth.entities_per_type);
      c.synth.n_tasks = s.value("n_tasks", c.synth.n_tasks);
      c.synth.n_relations = s.value("n_relations", c.synth.n_relations);
      c.synth.triples_per_task = s.value("triples_per_task", c.synth.triples_per_task);
      c.synth.d_text = s.value("d_text", c.synth.d_text);
      c.synth.d_mol = s.value("d_mol", c.synth.d_mol);
      c.synth.text_coverage = s.value("text_coverage", c.synth.text_coverage);
      c.synth.mol_coverage = s.value("mol_coverage", c.synth.mol_coverage);
      c.synth.mol_type = s.value("mol_type", c.synth.mol_type);
      c.synth.sigma_text = s.value("sigma_text", c.synth.sigma_text);
      c.synth.latent_dim = s.value("latent_dim", c.synth.latent_dim);
      c.synth_seed = s.value("seed", c.synth_seed);
    }
  }
  if (j.contains("model")) {
    const json& m = j.at("model");
    c.model.dim = m.value("dim", c.model.dim);
    c.model.bases = m.value("bases", c.model.bases);
    if (m.contains("fusion")) c.model.fusion = fusion_from_name(m.at("fusion").get<std::string>());
    c.model.router_hidden = m.value("router_hidden", c.model.router_hidden);
    c.model.load_balance_weight = json_or(m, "load_balance_weight", c.model.load_balance_weight);
    c.model.score_fusion.alpha_text = json_or(m, "alpha_text", c.model.score_fusion.alpha_text);
    c.model.score_fusion.alpha_mol = json_or(m, "alpha_mol", c.model.score_fusion.alpha_mol);
  }
  if (j.contains("training")) {
    const json& t = j.at("training");
    c.train.lr = json_or(t, "lr", c.train.lr);
    c.train.epochs_per_task = t.value("epochs_per_task", c.train.epochs_per_task);
    c.train.batch_size = t.value("batch_size", c.train.batch_size);
    c.train.triples_per_epoch = t.value("triples_per_epoch", c.train.triples_per_epoch);
    c.train.gamma = json_or(t, "margin", c.train.gamma);
    c.train.n_neg = t.value("n_neg", c.train.n_neg);
  }
  if (j.contains("cl")) {
    const json& cl = j.at("cl");
    if (cl.contains("ewc_mode")) c.cl.ewc.mode = ewc_mode_from_name(cl.at("ewc_mode").get<std::string>());
    c.cl.ewc.lambda[0] = json_or(cl, "lambda_structural", c.cl.ewc.lambda[0]);
    c.cl.ewc.lambda[1] = json_or(cl, "lambda_text", c.cl.ewc.lambda[1]);
    c.cl.ewc.lambda[2] = json_or(cl, "lambda_molecular", c.cl.ewc.lambda[2]);
    c.cl.ewc.lambda[3] = json_or(cl, "lambda_fusion_decoder", c.cl.ewc.lambda[3]);
    c.cl.ewc.lambda_uniform = json_or(cl, "lambda_uniform", c.cl.ewc.lambda_uniform);
    if (cl.contains("anchor_mode")) c.cl.ewc.anchor_mode = anchor_mode_from_name(cl.at("anchor_mode").get<std::string>());
    c.cl.buffer_size = cl.value("buffer_size", c.cl.buffer_size);
    c.cl.replay_alpha = json_or(cl, "replay_alpha", c.cl.replay_alpha);
    c.cl.fisher_batches = cl.value("fisher_batches", c.cl.fisher_batches);
    c.cl.replay_enabled = cl.value("replay_enabled", c.cl.replay_enabled);
    c.lambda_scale = json_or(cl, "lambda_scale", c.lambda_scale);
  }
  if (j.contains("eval")) {
    std::string track = j.at("eval").value("track", "link-prediction");
    if (track == "link-prediction") {
      c.track = Track::LinkPrediction;
    } else if (track == "classification") {
      c.track = Track::Classification;
    } else {
      throw std::invalid_argument("eval.track must be 'link-prediction' or 'classification'");
    }
  }
  c.method = j.value("method", c.method);
  if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  if (c.seeds.empty()) throw std::invalid_argument("seeds must be non-empty");
  if (j.contains("logging")) {
    const json& l = j.at("logging");
    c.logging.events = l.value("events", false);
    c.logging.router_csv = l.value("router_csv", false);
    c.logging.buffer_csv = l.value("buffer_csv", false);
    c.logging.out_dir = l.value("out_dir", std::string{});
  }
  return c;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  return parse_experiment_config(json::parse(in));
}

json experiment_config_json(const ExperimentConfig& c) {
  json j;
  j["dataset"]["source"] = c.synthetic ? "synthetic" : "files";
  if (!c.synthetic) j["dataset"]["dir"] = c.dataset_dir;
  if (c.synthetic) {
    json s;
    s["n_types"] = c.synth.n_types;
    s["entities_per_type"] = c.synth.entities_per_type;
    s["n_tasks"] = c.synth.n_tasks;
    s["n_relations"] = c.synth.n_relations;
    s["triples_per_task"] = c.synth.triples_per_task;
    s["d_text"] = c.synth.d_text;
    s["d_mol"] = c.synth.d_mol;
    s["text_coverage"] = c.synth.text_coverage;
    s["mol_coverage"] = c.synth.mol_coverage;
    s["mol_type"] = c.synth.mol_type;
    s["sigma_text"] = c.synth.sigma_text;
    s["latent_dim"] = c.synth.latent_dim;
    s["seed"] = c.synth_seed;
    j["dataset"]["synthetic"] = s;
  }
  j["model"]["dim"] = c.model.dim;
  j["model"]["bases"] = c.model.bases;
  j["model"]["fusion"] = fusion_name(c.model.fusion);
  j["model"]["router_hidden"] = c.model.router_hidden;
  j["model"]["load_balance_weight"] = c.model.load_balance_weight;
  j["model"]["alpha_text"] = c.model.score_fusion.alpha_text;
  j["model"]["alpha_mol"] = c.model.score_fusion.alpha_mol;
  j["training"]["lr"] = c.train.lr;
  j["training"]["epochs_per_task"] = c.train.epochs_per_task;
  j["training"]["batch_size"] = c.train.batch_size;
  j["training"]["triples_per_epoch"] = c.train.triples_per_epoch;
  j["training"]["margin"] = c.train.gamma;
  j["training"]["n_neg"] = c.train.n_neg;
  j["cl"]["ewc_mode"] = ewc_mode_name(c.cl.ewc.mode);
  j["cl"]["lambda_structural"] = c.cl.ewc.lambda[0];
  j["cl"]["lambda_text"] = c.cl.ewc.lambda[1];
  j["cl"]["lambda_molecular"] = c.cl.ewc.lambda[2];
  j["cl"]["lambda_fusion_decoder"] = c.cl.ewc.lambda[3];
  j["cl"]["lambda_uniform"] = c.cl.ewc.lambda_uniform;
  j["cl"]["lambda_scale"] = c.lambda_scale;
  j["cl"]["anchor_mode"] = anchor_mode_name(c.cl.ewc.anchor_mode);
  j["cl"]["buffer_size"] = c.cl.buffer_size;
  j["cl"]["replay_alpha"] = c.cl.replay_alpha;
  j["cl"]["fisher_batches"] = c.cl.fisher_batches;
  j["cl"]["replay_enabled"] = c.cl.replay_enabled;
  j["eval"]["track"] = c.track == Track::LinkPrediction ? "link-prediction" : "classification";
  j["method"] = c.method;
  j["seeds"] = c.seeds;
  j["logging"]["events"] = c.logging.events;
  j["logging"]["router_csv"] = c.logging.router_csv;
  j["logging"]["buffer_csv"] = c.logging.buffer_csv;
  j["logging"]["out_dir"] = c.logging.out_dir;
  return j;
}

std::string config_hash(const ExperimentConfig& config) {
  std::uint64_t h = fnv1a64(experiment_config_json(config).dump());
  char buf[19];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

bool method_is_joint(const ExperimentConfig& config) { return config.method == "joint"; }

void apply_method(ExperimentConfig& config) {
  const std::string& m = config.method;
  if (m == "cmkl") return;
  if (m == "naive" || m == "joint") {
    config.cl.ewc.mode = EwcMode::Off;
    config.cl.buffer_size = 0;
    config.cl.replay_enabled = false;
    return;
  }
  if (m == "ewc-uniform") {
    config.cl.ewc.mode = EwcMode::Uniform;
    return;
  }
  if (m == "ewc-only") {
    config.cl.ewc.mode = EwcMode::Uniform;
    config.cl.buffer_size = 0;
    config.cl.replay_enabled = false;
    return;
  }
  if (m == "struct-only") {
    config.model.fusion = FusionKind::ForcedStruct;
    return;
  }
  if (m == "text-only") {
    config.model.fusion = FusionKind::ForcedText;
    return;
  }
  if (m == "mol-only") {
    config.model.fusion = FusionKind::ForcedMol;
    return;
  }
  throw std::invalid_argument("unknown method: " + m);
}

std::pair<TaskSequence, FeatureStore> load_experiment_dataset(const ExperimentConfig& config) {
  if (config.synthetic) return generate_synthetic(config.synth, config.synth_seed);
  return load_dataset_dir(config.dataset_dir);
}

ExperimentResult run_experiment(const ExperimentConfig& raw) {
  ExperimentConfig config = raw;
  apply_method(config);
  EwcConfig& ewc = config.cl.ewc;
  for (double& l : ewc.lambda) l *= config.lambda_scale;
  ewc.lambda_uniform *= config.lambda_scale;

  auto [seq, features] = load_experiment_dataset(config);

  ExperimentResult result;
  result.config = raw;
  for (std::uint64_t seed : config.seeds) {
    SeedRun run;
    run.seed = seed;
    run.result = run_single(seq, features, config.model, config.train, config.cl, config.track, seed,
                            method_is_joint(config), config.logging);
    result.runs.push_back(std::move(run));
  }
  return result;
}

namespace {

json matrix_to_json(const MetricsMatrix& r) {
  json rows = json::array();
  for (int j = 1; j <= r.n_tasks; ++j) {
    json row = json::array();
    for (int i = 1; i <= r.n_tasks; ++i) {
      auto v = r.get(j, i);
      row.push_back(v ? json(*v) : json(nullptr));
    }
    rows.push_back(row);
  }
  return rows;
}

struct Stats {
  double mean = std::nan("");
  double stddev = std::nan("");
};

Stats stats_of(const std::vector<double>& xs) {
  Stats s;
  std::vector<double> vals;
  for (double x : xs) {
    if (!std::isnan(x)) vals.push_back(x);
  }
  if (vals.empty()) return s;
  double m = 0.0;
  for (double x : vals) m += x;
  m /= static_cast<double>(vals.size());
  double var = 0.0;
  if (vals.size() > 1) {
    for (double x : vals) var += (x - m) * (x - m);
    var /= static_cast<double>(vals.size() - 1);
  }
  s.mean = m;
  s.stddev = std::sqrt(var);
  return s;
}

}  // namespace

json experiment_result_json(const ExperimentResult& result) {
  json j;
  j["config"] = experiment_config_json(result.config);
  j["config_hash"] = config_hash(result.config);
  j["method"] = result.config.method;
  j["track"] = result.config.track == Track::LinkPrediction ? "link-prediction" : "classification";

  std::vector<double> aps, afs, bwts, rems;
  json runs = json::array();
  for (const SeedRun& run : result.runs) {
    const RunResult& r = run.result;
    json rj;
    rj["seed"] = run.seed;
    rj["R"] = matrix_to_json(r.r);
    rj["ap"] = number_or_null(r.metrics.ap);
    rj["af"] = number_or_null(r.metrics.af);
    rj["bwt"] = number_or_null(r.metrics.bwt);
    rj["rem"] = number_or_null(r.metrics.rem);
    rj["fwt"] = r.metrics.fwt;
    rj["per_task_forgetting"] = r.metrics.per_task_forgetting;
    rj["per_task_peak"] = r.metrics.per_task_peak;
    json router = json::array();
    for (const auto& w : r.router_mean_per_task) router.push_back({w[0], w[1], w[2]});
    rj["router_mean_per_task"] = router;
    rj["max_simplex_violation"] = r.max_simplex_violation;
    rj["final_batch_loss_per_task"] = r.final_batch_loss_per_task;
    runs.push_back(std::move(rj));
    aps.push_back(r.metrics.ap);
    afs.push_back(r.metrics.af);
    bwts.push_back(r.metrics.bwt);
    rems.push_back(r.metrics.rem);
  }
  j["runs"] = runs;

  Stats ap = stats_of(aps), af = stats_of(afs), bwt = stats_of(bwts), rem = stats_of(rems);
  j["aggregate"]["ap_mean"] = number_or_null(ap.mean);
  j["aggregate"]["ap_std"] = number_or_null(ap.stddev);
  j["aggregate"]["af_mean"] = number_or_null(af.mean);
  j["aggregate"]["af_std"] = number_or_null(af.stddev);
  j["aggregate"]["bwt_mean"] = number_or_null(bwt.mean);
  j["aggregate"]["bwt_std"] = number_or_null(bwt.stddev);
  j["aggregate"]["rem_mean"] = number_or_null(rem.mean);
  j["aggregate"]["rem_std"] = number_or_null(rem.stddev);
  return j;
}

void write_results_file(const std::string& path, const ExperimentResult& result) {
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open results file " + path);
  out << experiment_result_json(result).dump(2) << '\n';
}

json run_matrix(const ExperimentConfig& base, const json& sweep, const std::string& out_dir) {
  struct Axis {
    std::string name;
    std::vector<json> values;
  };
  std::vector<Axis> axes;
  for (const char* name : {"lambda_scale", "buffer_size", "fusion", "method"}) {
    if (sweep.contains(name)) {
      Axis a;
      a.name = name;
      for (const json& v : sweep.at(name)) a.values.push_back(v);
      axes.push_back(std::move(a));
    }
  }
  if (axes.empty()) throw std::invalid_argument("run_matrix: sweep has no recognized axes");

  std::vector<std::vector<std::size_t>> cells{{}};
  for (const Axis& a : axes) {
    std::vector<std::vector<std::size_t>> next;
    for (const auto& cell : cells) {
      for (std::size_t i = 0; i < a.values.size(); ++i) {
        auto extended = cell;
        extended.push_back(i);
        next.push_back(std::move(extended));
      }
    }
    cells = std::move(next);
  }

  if (!out_dir.empty()) fs::create_directories(out_dir);
  json out;
  out["base_config"] = experiment_config_json(base);
  json results = json::array();
  for (const auto& cell : cells) {
    ExperimentConfig config = base;
    std::string label;
    for (std::size_t a = 0; a < axes.size(); ++a) {
      const Axis& axis = axes[a];
      const json& value = axis.values[cell[a]];
      if (!label.empty()) label += "|";
      label += axis.name + "=" + value.dump();
      if (axis.name == "lambda_scale") {
        config.lambda_scale = value.get<double>();
      } else if (axis.name == "buffer_size") {
        config.cl.buffer_size = value.get<std::size_t>();
      } else if (axis.name == "fusion") {
        config.model.fusion = fusion_from_name(value.get<std::string>());
      } else if (axis.name == "method") {
        config.method = value.get<std::string>();
      }
    }
    json cell_json;
    cell_json["label"] = label;
    try {
      ExperimentResult r = run_experiment(config);
      json rj = experiment_result_json(r);
      cell_json["status"] = "ok";
      cell_json["aggregate"] = rj["aggregate"];
      if (!out_dir.empty()) {
        std::string file = label;
        for (char& ch : file) {
          if (ch == '|' || ch == '=' || ch == '"' || ch == '.') ch = '_';
        }
        std::string path = (fs::path(out_dir) / ("cell_" + file + ".json")).string();
        write_results_file(path, r);
        cell_json["results_file"] = path;
      }
    } catch (const std::exception& e) {
      cell_json["status"] = "failed";
      cell_json["error"] = e.what();
    }
    results.push_back(std::move(cell_json));
  }
  out["cells"] = results;
  return out;
}

void write_matrix_csv(const json& matrix, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "cell,status,ap_mean,ap_std,af_mean,af_std,bwt_mean,bwt_std,rem_mean,rem_std\n";
  for (const json& cell : matrix.at("cells")) {
    out << cell.at("label").get<std::string>() << ',' << cell.at("status").get<std::string>();
    if (cell.at("status") == "ok") {
      const json& agg = cell.at("aggregate");
      for (const char* key : {"ap_mean", "ap_std", "af_mean", "af_std", "bwt_mean", "bwt_std", "rem_mean", "rem_std"}) {
        out << ',';
        if (!agg.at(key).is_null()) out << agg.at(key).get<double>();
      }
    } else {
      out << ",,,,,,,,";
    }
    out << '\n';
  }
}

GradCheckReport harness_gradcheck(FusionKind fusion, LossTerms terms, std::uint64_t seed,
                                  const GradCheckOptions& options) {
  // Toy scale: 20 entities, 2 relations, D=8. Partial feature coverage keeps
  // both the projection and the learned-default paths on the tape.
  SynthConfig synth;
  synth.n_types = 2;
  synth.entities_per_type = 10;
  synth.n_tasks = 2;
  synth.n_relations = 2;
  synth.triples_per_task = 40;
  synth.d_text = 4;
  synth.d_mol = 6;
  synth.text_coverage = 0.7;
  synth.mol_coverage = 0.5;
  synth.sigma_text = 0.2;
  auto [seq, features] = generate_synthetic(synth, derive_seed(seed, "gradcheck/data"));

  ModelConfig config;
  config.dim = 8;
  config.bases = 2;
  config.fusion = fusion;
  config.n_entities = seq.num_entities();
  config.n_relations = seq.num_relations();
  config.n_types = seq.num_types();
  config.d_text = features.d_text;
  config.d_mol = features.d_mol;

  ModelState state = init_model(config, derive_seed(seed, "gradcheck/init"));
  FeatureLayout layout = FeatureLayout::build(features, config.n_entities);

  bool with_ewc = terms == LossTerms::WithEwc || terms == LossTerms::Full;
  bool with_replay = terms == LossTerms::WithReplay || terms == LossTerms::Full;
  const TaskDataset& task1 = seq.tasks[0];
  const TaskDataset& task2 = seq.tasks[1];

  EwcConfig ewc_config;
  ewc_config.mode = with_ewc ? EwcMode::PerGroup : EwcMode::Off;
  EwcState ewc;
  double gamma = 1.0;
  std::size_t n_neg = 4;

  if (with_ewc) {
    // Anchor at the initial parameters with squared task-1 gradients.
    RelationGraph g1 = RelationGraph::build(task1.train, config.n_entities, config.n_relations);
    Rng rng_neg(derive_seed(seed, "gradcheck/fisherneg"));
    std::vector<GradientSet> batches;
    for (int b = 0; b < 2; ++b) {
      EmbeddingGraph g = build_embeddings(state, config, g1, layout);
      std::vector<Triple> batch(task1.train.begin(),
                                task1.train.begin() + std::min<std::size_t>(16, task1.train.size()));
      std::vector<Triple> negatives;
      for (const Triple& pos : batch) {
        auto negs = sample_negatives(pos, task1.entities, static_cast<int>(n_neg), rng_neg);
        negatives.insert(negatives.end(), negs.begin(), negs.end());
      }
      Tape::NodeId loss = lp_loss_node(g, state, config, batch, negatives, gamma, n_neg);
      g.tape.backward(loss);
      batches.push_back(collect_grads(g, state));
    }
    ewc.absorb(state, mean_squared_grads(batches), AnchorMode::Accumulate);
  }

  ReplayBuffer buffer(16);
  if (with_replay) {
    RelationGraph g1 = RelationGraph::build(task1.train, config.n_entities, config.n_relations);
    EvalEmbeddings emb = compute_embeddings(state, config, g1, layout);
    std::vector<std::vector<double>> embeds(emb.h_struct.rows());
    for (std::size_t i = 0; i < emb.h_struct.rows(); ++i) {
      embeds[i].assign(emb.h_struct.data.begin() + static_cast<long>(i * emb.h_struct.cols()),
                       emb.h_struct.data.begin() + static_cast<long>((i + 1) * emb.h_struct.cols()));
    }
    Rng rng(derive_seed(seed, "gradcheck/kmeans"));
    buffer.rebalance(task1.train, 1, embeds, 1, rng);
  }

  // Move away from the anchor so the quadratic term has nonzero gradient.
  Rng rng_perturb(derive_seed(seed, "gradcheck/perturb"));
  for (NamedTensor& t : state.tensors()) {
    for (double& x : t.value.data) x += 0.05 * rng_perturb.normal();
  }

  // Fixed batch, negatives and replay sample: the loss closure must be a pure
  // function of the parameters.
  RelationGraph graph2 = [&] {
    std::vector<Triple> edges = task2.train;
    for (const ReplayEntry& e : buffer.entries()) edges.push_back(e.triple);
    return RelationGraph::build(edges, config.n_entities, config.n_relations);
  }();
  std::vector<Triple> batch(task2.train.begin(),
                            task2.train.begin() + std::min<std::size_t>(16, task2.train.size()));
  Rng rng_neg(derive_seed(seed, "gradcheck/neg"));
  std::vector<Triple> negatives;
  for (const Triple& pos : batch) {
    auto negs = sample_negatives(pos, task2.entities, static_cast<int>(n_neg), rng_neg);
    negatives.insert(negatives.end(), negs.begin(), negs.end());
  }
  std::vector<Triple> replay_pos;
  std::vector<Triple> replay_neg;
  if (with_replay && !buffer.empty()) {
    Rng rng_r(derive_seed(seed, "gradcheck/replay"));
    for (const ReplayEntry& e : buffer.sample(8, rng_r)) replay_pos.push_back(e.triple);
    std::vector<int> pool = task1.entities;
    for (const Triple& pos : replay_pos) {
      auto negs = sample_negatives(pos, pool, static_cast<int>(n_neg), rng_r);
      replay_neg.insert(replay_neg.end(), negs.begin(), negs.end());
    }
  }

  auto build_loss = [&](const ModelState& s, bool want_grad, GradientSet* out_grads) {
    EmbeddingGraph g = build_embeddings(s, config, graph2, layout);
    Tape::NodeId total = lp_loss_node(g, s, config, batch, negatives, gamma, n_neg);
    if (with_ewc) {
      Tape::NodeId penalty = ewc_penalty_node(g.tape, g.leaves, s, ewc, ewc_config);
      if (penalty >= 0) total = g.tape.add(total, penalty);
    }
    if (!replay_pos.empty()) {
      Tape::NodeId replay = lp_loss_node(g, s, config, replay_pos, replay_neg, gamma, n_neg);
      total = g.tape.add(total, g.tape.scale(replay, 1.0));
    }
    double value = g.tape.val(total).at(0);
    if (want_grad) {
      g.tape.backward(total);
      *out_grads = collect_grads(g, s);
    }
    return value;
  };

  GradientSet analytic;
  build_loss(state, true, &analytic);
  auto loss_fn = [&](const ModelState& s) { return build_loss(s, false, nullptr); };
  return grad_check(loss_fn, state, analytic, options);
}

void collate_reports(const std::vector<std::string>& result_files, const std::string& out_csv) {
  std::ofstream out(out_csv);
  if (!out) throw std::runtime_error("cannot open " + out_csv);
  out << "file,method,track,fusion,config_hash,n_seeds,ap_mean,ap_std,af_mean,af_std,bwt_mean,bwt_std,"
         "rem_mean,rem_std\n";
  for (const std::string& file : result_files) {
    std::ifstream in(file);
    if (!in) throw std::runtime_error("cannot open " + file);
    json j = json::parse(in);
    out << file << ',' << j.value("method", "?") << ',' << j.value("track", "?") << ','
        << j.at("config").at("model").value("fusion", "?") << ',' << j.value("config_hash", "?") << ','
        << j.at("runs").size();
    const json& agg = j.at("aggregate");
    for (const char* key : {"ap_mean", "ap_std", "af_mean", "af_std", "bwt_mean", "bwt_std", "rem_mean", "rem_std"}) {
      out << ',';
      if (agg.contains(key) && !agg.at(key).is_null()) out << agg.at(key).get<double>();
    }
    out << '\n';
  }
}

}  // namespace cmkl
