#include "cmkl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>

namespace cmkl {

namespace {

struct NcEntitySplit {
  std::vector<char> is_train;  // per entity id
  std::vector<char> is_test;
};

// Global 70/10/20 entity split for the classification track, so no task ever
// trains the classifier on another task's held-out entities.
NcEntitySplit make_nc_split(const TaskSequence& seq, std::uint64_t seed) {
  NcEntitySplit split;
  split.is_train.assign(seq.num_entities(), 0);
  split.is_test.assign(seq.num_entities(), 0);
  std::vector<int> labeled;
  for (std::size_t e = 0; e < seq.entity_type.size(); ++e) {
    if (seq.entity_type[e] >= 0) labeled.push_back(static_cast<int>(e));
  }
  Rng rng(derive_seed(seed, "ncsplit"));
  rng.shuffle(labeled);
  std::size_t n = labeled.size();
  std::size_t n_train = static_cast<std::size_t>(0.7 * static_cast<double>(n));
  std::size_t n_valid = static_cast<std::size_t>(0.1 * static_cast<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    if (i < n_train) {
      split.is_train[labeled[i]] = 1;
    } else if (i >= n_train + n_valid) {
      split.is_test[labeled[i]] = 1;
    }
  }
  return split;
}

std::vector<Triple> buffer_triples(const ReplayBuffer& buffer) {
  std::vector<Triple> out;
  out.reserve(buffer.size());
  for (const ReplayEntry& e : buffer.entries()) out.push_back(e.triple);
  return out;
}

std::vector<std::vector<double>> rows_of(const Tensor& m) {
  std::vector<std::vector<double>> rows(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    rows[i].assign(m.data.begin() + static_cast<long>(i * m.cols()),
                   m.data.begin() + static_cast<long>((i + 1) * m.cols()));
  }
  return rows;
}

class TrainerImpl {
 public:
  TrainerImpl(const TaskSequence& seq, const FeatureStore& features, ModelConfig config,
              const TrainSettings& train, const ClSettings& cl, Track track, std::uint64_t seed,
              bool joint, const RunLogging& logging)
      : seq_(seq),
        features_(features),
        config_(config),
        train_(train),
        cl_(cl),
        track_(track),
        seed_(seed),
        joint_(joint),
        logging_(logging),
        buffer_(cl.buffer_size) {
    config_.n_entities = seq.num_entities();
    config_.n_relations = seq.num_relations();
    config_.n_types = seq.num_types();
    config_.d_text = std::max<std::size_t>(1, features.d_text);
    config_.d_mol = std::max<std::size_t>(1, features.d_mol);
    config_.with_classifier = track == Track::Classification;
    if (track == Track::Classification && config_.fusion == FusionKind::ScoreFusion) {
      throw std::invalid_argument("classification track requires an embedding-level fusion");
    }
    layout_ = FeatureLayout::build(features, config_.n_entities);
    state_ = init_model(config_, derive_seed(seed, "init"));
    AdamConfig adam_config;
    adam_config.lr = train.lr;
    adam_ = AdamState::init(state_, adam_config);
    if (track == Track::Classification) nc_split_ = make_nc_split(seq, seed);
    if (!logging_.out_dir.empty()) std::filesystem::create_directories(logging_.out_dir);
  }

  RunResult run() {
    int n_tasks = static_cast<int>(seq_.tasks.size());
    result_.r = MetricsMatrix::make(n_tasks);

    if (joint_) {
      TaskDataset merged;
      merged.task_id = 1;
      for (const TaskDataset& t : seq_.tasks) {
        merged.train.insert(merged.train.end(), t.train.begin(), t.train.end());
      }
      merged.recompute_active_sets();
      train_task(merged, 1, train_.epochs_per_task * n_tasks);
      evaluate_row(n_tasks);
      double ap = 0.0;
      for (int i = 1; i <= n_tasks; ++i) ap += *result_.r.get(n_tasks, i);
      result_.metrics.ap = ap / static_cast<double>(n_tasks);
      return std::move(result_);
    }

    for (int k = 1; k <= n_tasks; ++k) {
      const TaskDataset& task = seq_.tasks[k - 1];
      train_task(task, k, train_.epochs_per_task);
      if (cl_.ewc.mode != EwcMode::Off) {
        compute_fisher(task, k);
        log_event("fisher");
      }
      if (buffer_.capacity() > 0 && cl_.replay_enabled) {
        rebalance_buffer(task, k);
        log_event("rebalance");
      }
      log_router_weights(task, k);
      evaluate_row(k);
    }
    result_.metrics = cl_metrics(result_.r);
    return std::move(result_);
  }

 private:
  void log_event(const std::string& e) {
    if (logging_.events) result_.events.push_back(e);
  }

  // Entities seen in train splits of tasks 1..k, negatives pool for replay.
  std::vector<int> seen_entities(int upto_task) const {
    std::set<int> seen;
    for (int k = 1; k <= upto_task && k <= static_cast<int>(seq_.tasks.size()); ++k) {
      seen.insert(seq_.tasks[k - 1].entities.begin(), seq_.tasks[k - 1].entities.end());
    }
    return {seen.begin(), seen.end()};
  }

  std::vector<int> nc_train_entities(const TaskDataset& task) const {
    std::vector<int> out;
    for (int e : task.entities) {
      if (seq_.entity_type[e] >= 0 && nc_split_.is_train[e]) out.push_back(e);
    }
    return out;
  }

  void train_task(const TaskDataset& task, int k, int epochs) {
    bool replay_active = k > 1 && cl_.replay_enabled && buffer_.capacity() > 0 && !buffer_.empty() &&
                         cl_.replay_alpha != 0.0;
    std::vector<Triple> edges = task.train;
    if (replay_active) {
      std::vector<Triple> extra = buffer_triples(buffer_);
      edges.insert(edges.end(), extra.begin(), extra.end());
    }
    task_graph_ = RelationGraph::build(edges, config_.n_entities, config_.n_relations);

    Rng rng_train(derive_seed(seed_, "train", static_cast<std::uint64_t>(k)));
    Rng rng_neg(derive_seed(seed_, "neg", static_cast<std::uint64_t>(k)));
    Rng rng_replay(derive_seed(seed_, "replay", static_cast<std::uint64_t>(k)));
    Rng rng_replayneg(derive_seed(seed_, "replayneg", static_cast<std::uint64_t>(k)));

    std::vector<int> pool = task.entities;
    std::vector<int> replay_pool = replay_active ? seen_entities(k) : std::vector<int>{};
    std::vector<int> nc_entities = track_ == Track::Classification ? nc_train_entities(task) : std::vector<int>{};
    if (track_ == Track::Classification && nc_entities.empty()) {
      throw std::runtime_error("train_task: no labeled training entities for task " + std::to_string(task.task_id));
    }

    double last_loss = 0.0;
    for (int epoch = 0; epoch < epochs; ++epoch) {
      if (track_ == Track::LinkPrediction) {
        std::vector<Triple> epoch_triples;
        if (train_.triples_per_epoch > 0) {
          epoch_triples.reserve(train_.triples_per_epoch);
          for (int i = 0; i < train_.triples_per_epoch; ++i) {
            epoch_triples.push_back(task.train[rng_train.below(task.train.size())]);
          }
        } else {
          epoch_triples = task.train;
          rng_train.shuffle(epoch_triples);
        }
        for (std::size_t off = 0; off < epoch_triples.size(); off += train_.batch_size) {
          std::size_t end = std::min(off + train_.batch_size, epoch_triples.size());
          std::vector<Triple> batch(epoch_triples.begin() + static_cast<long>(off),
                                    epoch_triples.begin() + static_cast<long>(end));
          last_loss = step_lp(batch, pool, replay_pool, k, replay_active, rng_neg, rng_replay, rng_replayneg);
        }
      } else {
        std::vector<int> epoch_entities = nc_entities;
        rng_train.shuffle(epoch_entities);
        for (std::size_t off = 0; off < epoch_entities.size(); off += train_.batch_size) {
          std::size_t end = std::min(off + train_.batch_size, epoch_entities.size());
          std::vector<int> batch(epoch_entities.begin() + static_cast<long>(off),
                                 epoch_entities.begin() + static_cast<long>(end));
          last_loss = step_nc(batch, k, replay_active, rng_replay);
        }
      }
    }
    result_.final_batch_loss_per_task.push_back(last_loss);
  }

  double step_lp(const std::vector<Triple>& batch, const std::vector<int>& pool,
                 const std::vector<int>& replay_pool, int k, bool replay_active, Rng& rng_neg,
                 Rng& rng_replay, Rng& rng_replayneg) {
    log_event("encode");
    EmbeddingGraph g = build_embeddings(state_, config_, task_graph_, layout_);
    if (g.fused >= 0) log_event("fuse");
    track_simplex(g);

    std::vector<Triple> negatives;
    negatives.reserve(batch.size() * static_cast<std::size_t>(train_.n_neg));
    for (const Triple& pos : batch) {
      std::vector<Triple> negs = sample_negatives(pos, pool, train_.n_neg, rng_neg);
      negatives.insert(negatives.end(), negs.begin(), negs.end());
    }
    Tape::NodeId total = lp_loss_node(g, state_, config_, batch, negatives, train_.gamma,
                                      static_cast<std::size_t>(train_.n_neg));
    log_event("task_loss");
    total = add_cl_terms(g, total, k, replay_active, rng_replay, &rng_replayneg, replay_pool);
    return finish_step(g, total);
  }

  double step_nc(const std::vector<int>& batch, int k, bool replay_active, Rng& rng_replay) {
    log_event("encode");
    EmbeddingGraph g = build_embeddings(state_, config_, task_graph_, layout_);
    if (g.fused >= 0) log_event("fuse");
    track_simplex(g);

    std::vector<int> labels;
    labels.reserve(batch.size());
    for (int e : batch) labels.push_back(seq_.entity_type[e]);
    Tape::NodeId total = nc_loss_node(g, state_, config_, batch, labels);
    log_event("task_loss");
    total = add_cl_terms(g, total, k, replay_active, rng_replay, nullptr, {});
    return finish_step(g, total);
  }

  Tape::NodeId add_cl_terms(EmbeddingGraph& g, Tape::NodeId total, int k, bool replay_active,
                            Rng& rng_replay, Rng* rng_replayneg, const std::vector<int>& replay_pool) {
    if (k <= 1) return total;  // CL terms are gated off on the first task
    if (cl_.ewc.mode != EwcMode::Off && !ewc_.empty()) {
      Tape::NodeId penalty = ewc_penalty_node(g.tape, g.leaves, state_, ewc_, cl_.ewc);
      if (penalty >= 0) {
        total = g.tape.add(total, penalty);
        log_event("ewc_loss");
      }
    }
    if (replay_active) {
      std::vector<ReplayEntry> replay = buffer_.sample(train_.batch_size, rng_replay);
      Tape::NodeId replay_loss = -1;
      if (track_ == Track::LinkPrediction) {
        std::vector<Triple> positives;
        positives.reserve(replay.size());
        for (const ReplayEntry& e : replay) positives.push_back(e.triple);
        std::vector<Triple> negatives;
        negatives.reserve(positives.size() * static_cast<std::size_t>(train_.n_neg));
        for (const Triple& pos : positives) {
          std::vector<Triple> negs = sample_negatives(pos, replay_pool, train_.n_neg, *rng_replayneg);
          negatives.insert(negatives.end(), negs.begin(), negs.end());
        }
        replay_loss = lp_loss_node(g, state_, config_, positives, negatives, train_.gamma,
                                   static_cast<std::size_t>(train_.n_neg));
      } else {
        std::set<int> ents;
        for (const ReplayEntry& e : replay) {
          for (int ent : {e.triple.head, e.triple.tail}) {
            if (seq_.entity_type[ent] >= 0 && nc_split_.is_train[ent]) ents.insert(ent);
          }
        }
        if (!ents.empty()) {
          std::vector<int> entities(ents.begin(), ents.end());
          std::vector<int> labels;
          labels.reserve(entities.size());
          for (int e : entities) labels.push_back(seq_.entity_type[e]);
          replay_loss = nc_loss_node(g, state_, config_, entities, labels);
        }
      }
      if (replay_loss >= 0) {
        total = g.tape.add(total, g.tape.scale(replay_loss, cl_.replay_alpha));
        log_event("replay_loss");
      }
    }
    return total;
  }

  double finish_step(EmbeddingGraph& g, Tape::NodeId total) {
    double loss = g.tape.val(total).at(0);
    g.tape.backward(total);
    GradientSet grads = collect_grads(g, state_);
    adam_step(state_, grads, adam_);
    log_event("update");
    return loss;
  }

  void track_simplex(const EmbeddingGraph& g) {
    if (g.router_weights < 0) return;
    const Tensor& w = g.tape.val(g.router_weights);
    for (std::size_t i = 0; i < w.rows(); ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < w.cols(); ++j) {
        sum += w.at(i, j);
        result_.max_simplex_violation = std::max(result_.max_simplex_violation, -w.at(i, j));
      }
      result_.max_simplex_violation = std::max(result_.max_simplex_violation, std::fabs(sum - 1.0));
    }
  }

  void compute_fisher(const TaskDataset& task, int k) {
    Rng rng_f(derive_seed(seed_, "fisher", static_cast<std::uint64_t>(k)));
    Rng rng_fn(derive_seed(seed_, "fisherneg", static_cast<std::uint64_t>(k)));
    std::vector<int> pool = task.entities;
    std::vector<int> nc_entities = track_ == Track::Classification ? nc_train_entities(task) : std::vector<int>{};
    std::vector<GradientSet> batches;
    batches.reserve(cl_.fisher_batches);
    for (int b = 0; b < cl_.fisher_batches; ++b) {
      EmbeddingGraph g = build_embeddings(state_, config_, task_graph_, layout_);
      Tape::NodeId loss;
      if (track_ == Track::LinkPrediction) {
        std::vector<Triple> batch;
        std::size_t bs = std::min(train_.batch_size, task.train.size());
        batch.reserve(bs);
        for (std::size_t i = 0; i < bs; ++i) batch.push_back(task.train[rng_f.below(task.train.size())]);
        std::vector<Triple> negatives;
        negatives.reserve(batch.size() * static_cast<std::size_t>(train_.n_neg));
        for (const Triple& pos : batch) {
          std::vector<Triple> negs = sample_negatives(pos, pool, train_.n_neg, rng_fn);
          negatives.insert(negatives.end(), negs.begin(), negs.end());
        }
        loss = lp_loss_node(g, state_, config_, batch, negatives, train_.gamma,
                            static_cast<std::size_t>(train_.n_neg));
      } else {
        std::vector<int> batch;
        std::size_t bs = std::min(train_.batch_size, nc_entities.size());
        batch.reserve(bs);
        for (std::size_t i = 0; i < bs; ++i) batch.push_back(nc_entities[rng_f.below(nc_entities.size())]);
        std::vector<int> labels;
        labels.reserve(batch.size());
        for (int e : batch) labels.push_back(seq_.entity_type[e]);
        loss = nc_loss_node(g, state_, config_, batch, labels);
      }
      g.tape.backward(loss);
      batches.push_back(collect_grads(g, state_));
    }
    ewc_.absorb(state_, mean_squared_grads(batches), cl_.ewc.anchor_mode);
  }

  void rebalance_buffer(const TaskDataset& task, int k) {
    EvalEmbeddings emb = compute_embeddings(state_, config_, task_graph_, layout_);
    Rng rng(derive_seed(seed_, "kmeans", static_cast<std::uint64_t>(k)));
    buffer_.rebalance(task.train, k, rows_of(emb.h_struct), k, rng);
    if (logging_.buffer_csv && !logging_.out_dir.empty()) {
      buffer_.dump_csv((std::filesystem::path(logging_.out_dir) / "buffer.csv").string());
    }
  }

  void log_router_weights(const TaskDataset& task, int k) {
    if (config_.fusion != FusionKind::Moe) return;
    EvalEmbeddings emb = compute_embeddings(state_, config_, task_graph_, layout_);
    std::array<double, 3> mean = {0.0, 0.0, 0.0};
    const Tensor& w = emb.router_weights;
    for (std::size_t i = 0; i < w.rows(); ++i) {
      for (std::size_t j = 0; j < 3; ++j) mean[j] += w.at(i, j);
    }
    for (double& m : mean) m /= static_cast<double>(std::max<std::size_t>(1, w.rows()));
    result_.router_mean_per_task.push_back(mean);
    if (logging_.router_csv && !logging_.out_dir.empty()) {
      std::filesystem::path path = std::filesystem::path(logging_.out_dir) / "router_weights.csv";
      std::ofstream out(path, k == 1 ? std::ios::trunc : std::ios::app);
      if (k == 1) out << "task,entity,w_s,w_t,w_m\n";
      for (std::size_t i = 0; i < w.rows(); ++i) {
        out << task.task_id << ',' << i << ',' << w.at(i, 0) << ',' << w.at(i, 1) << ',' << w.at(i, 2) << '\n';
      }
    }
  }

  void evaluate_row(int row) {
    int upto = joint_ ? static_cast<int>(seq_.tasks.size()) : row;
    for (int i = 1; i <= upto; ++i) {
      const TaskDataset& task = seq_.tasks[i - 1];
      RelationGraph eval_graph = RelationGraph::build(task.train, config_.n_entities, config_.n_relations);
      EvalEmbeddings emb = compute_embeddings(state_, config_, eval_graph, layout_);
      std::optional<double> value;
      if (track_ == Track::LinkPrediction) {
        if (!filter_) filter_ = FilterIndex::build(seq_);
        value = evaluate_lp(make_lp_scorer(emb, state_, config_), task, *filter_);
      } else {
        std::vector<int> test_entities;
        for (int e : task.entities) {
          if (seq_.entity_type[e] >= 0 && nc_split_.is_test[e]) test_entities.push_back(e);
        }
        value = evaluate_nc(make_nc_predictor(emb, state_, config_), test_entities, seq_.entity_type,
                            static_cast<int>(config_.n_types));
      }
      if (value) result_.r.set(row, i, *value);
    }
  }

  const TaskSequence& seq_;
  const FeatureStore& features_;
  ModelConfig config_;
  TrainSettings train_;
  ClSettings cl_;
  Track track_;
  std::uint64_t seed_;
  bool joint_;
  RunLogging logging_;

  FeatureLayout layout_;
  ModelState state_;
  AdamState adam_;
  EwcState ewc_;
  ReplayBuffer buffer_;
  RelationGraph task_graph_;
  NcEntitySplit nc_split_;
  std::optional<FilterIndex> filter_;
  RunResult result_;
};

}  // namespace

RunResult run_single(const TaskSequence& seq, const FeatureStore& features, ModelConfig model_config,
                     const TrainSettings& train, const ClSettings& cl, Track track,
                     std::uint64_t seed, bool joint, const RunLogging& logging) {
  TrainerImpl impl(seq, features, model_config, train, cl, track, seed, joint, logging);
  return impl.run();
}

}  // namespace cmkl
