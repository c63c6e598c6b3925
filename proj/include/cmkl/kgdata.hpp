#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace cmkl {

struct Triple {
  int head;
  int rel;
  int tail;

  bool operator==(const Triple&) const = default;
  auto operator<=>(const Triple&) const = default;
};

// Dense ids assigned first-seen, so downstream math indexes plain arrays.
class Vocab {
 public:
  int get_or_add(const std::string& name);
  std::optional<int> find(const std::string& name) const;
  const std::string& name(int id) const { return names_.at(id); }
  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::unordered_map<std::string, int> ids_;
  std::vector<std::string> names_;
};

struct TaskDataset {
  int task_id = 0;  // 1-based
  std::vector<Triple> train;
  std::vector<Triple> valid;
  std::vector<Triple> test;
  std::vector<int> entities;   // sorted, entities active in this task
  std::vector<int> relations;  // sorted

  void recompute_active_sets();
  std::vector<Triple> all_triples() const;
};

struct TaskSequence {
  std::vector<TaskDataset> tasks;
  Vocab entity_vocab;
  Vocab relation_vocab;
  Vocab type_vocab;
  std::vector<int> entity_type;  // per entity id; -1 when unlabeled

  std::size_t num_entities() const { return entity_vocab.size(); }
  std::size_t num_relations() const { return relation_vocab.size(); }
  std::size_t num_types() const { return type_vocab.size(); }
};

struct FeatureStore {
  std::size_t d_text = 0;
  std::size_t d_mol = 0;
  std::map<int, std::vector<double>> text;  // entity id -> vector, may be partial
  std::map<int, std::vector<double>> mol;   // entries are exactly 0 or 1

  bool has_text(int e) const { return text.count(e) > 0; }
  bool has_mol(int e) const { return mol.count(e) > 0; }
};

enum class FeatureKind { Text, Mol };

struct FeatureLoadResult {
  std::map<int, std::vector<double>> features;
  std::size_t dim = 0;
  int skipped_unknown = 0;
};

// Triple file: one `head<TAB>rel<TAB>tail` per line. Ids assigned first-seen.
std::vector<Triple> load_triples(const std::string& path, Vocab& entities, Vocab& relations);
void save_triples(const std::string& path, const std::vector<Triple>& triples,
                  const Vocab& entities, const Vocab& relations);

// Feature file: `name,v1,...,vd` per line. Mol vectors must be binary.
FeatureLoadResult load_features(const std::string& path, FeatureKind kind, const Vocab& entities);
void save_features(const std::string& path, const std::map<int, std::vector<double>>& features,
                   FeatureKind kind, const Vocab& entities);

// Type-label file: `name,type-name` per line.
void load_type_labels(const std::string& path, TaskSequence& seq);
void save_type_labels(const std::string& path, const TaskSequence& seq);

struct SplitRatios {
  double train = 0.7;
  double valid = 0.1;
  double test = 0.2;
};

// Seeded shuffle, floor allocations, remainder to train. Fewer than 3 triples
// all land in train (warned, not an error).
TaskDataset split_task(const std::vector<Triple>& triples, const SplitRatios& ratios,
                       std::uint64_t seed, int task_id, bool* degenerate_warning = nullptr);

struct SynthConfig {
  int n_types = 3;
  int entities_per_type = 30;
  int n_tasks = 3;
  int n_relations = 4;
  int triples_per_task = 250;
  std::size_t d_text = 16;
  std::size_t d_mol = 32;
  double text_coverage = 1.0;
  double mol_coverage = 0.5;
  int mol_type = 0;  // the one type that carries molecular features
  double sigma_text = 0.1;
  int latent_dim = 8;
  SplitRatios ratios;
};

// Latent-factor benchmark generator. Entities get type labels, tasks group
// triples by head-entity type, text features cluster by type, molecular bits
// exist only on a fraction of one type.
std::pair<TaskSequence, FeatureStore> generate_synthetic(const SynthConfig& config, std::uint64_t seed);

// Dataset directory round trip (task_%03d.{train,valid,test}.tsv + vocab,
// feature and label files + meta.json).
void save_dataset_dir(const std::string& dir, const TaskSequence& seq, const FeatureStore& features);
std::pair<TaskSequence, FeatureStore> load_dataset_dir(const std::string& dir);

}  // namespace cmkl
