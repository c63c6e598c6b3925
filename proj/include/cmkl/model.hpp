#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cmkl/encoders.hpp"
#include "cmkl/evalharness.hpp"
#include "cmkl/fusion.hpp"
#include "cmkl/params.hpp"
#include "cmkl/scoring.hpp"
#include "cmkl/tape.hpp"

namespace cmkl {

enum class FusionKind { Moe, Concat, Gated, ScoreFusion, ForcedStruct, ForcedText, ForcedMol };

const char* fusion_name(FusionKind k);
FusionKind fusion_from_name(const std::string& name);

struct ModelConfig {
  std::size_t dim = 32;
  std::size_t bases = 4;
  FusionKind fusion = FusionKind::Moe;
  std::size_t router_hidden = 0;     // 0 = single linear router
  double load_balance_weight = 0.0;  // 0 = auxiliary loss off
  ScoreFusionConfig score_fusion;
  bool with_classifier = false;

  // Filled from the dataset.
  std::size_t n_entities = 0;
  std::size_t n_relations = 0;
  std::size_t n_types = 0;
  std::size_t d_text = 1;
  std::size_t d_mol = 1;
};

// Every trainable tensor of the configured model, in deterministic order. All
// three encoders always exist (forced-route ablations simply never propagate
// gradient into the unused ones), so structural embeddings are available for
// replay clustering in every mode.
std::vector<TensorSpec> model_tensor_specs(const ModelConfig& config);

ModelState init_model(const ModelConfig& config, std::uint64_t seed);

// One define-by-run forward over all entities. The tape's closures capture
// node ids only, so the struct is safely movable.
struct EmbeddingGraph {
  Tape tape;
  std::vector<Tape::NodeId> leaves;  // per ModelState slot
  Tape::NodeId h_struct = -1;
  Tape::NodeId h_text = -1;
  Tape::NodeId h_mol = -1;
  Tape::NodeId fused = -1;           // -1 in score-fusion mode
  Tape::NodeId router_weights = -1;  // MoE only
};

EmbeddingGraph build_embeddings(const ModelState& state, const ModelConfig& config,
                                const RelationGraph& graph, const FeatureLayout& layout);

// Margin-ranking loss over a batch; negatives grouped n_neg per positive.
Tape::NodeId lp_loss_node(EmbeddingGraph& g, const ModelState& state, const ModelConfig& config,
                          const std::vector<Triple>& positives, const std::vector<Triple>& negatives,
                          double gamma, std::size_t n_neg);

// Cross-entropy over the given entities.
Tape::NodeId nc_loss_node(EmbeddingGraph& g, const ModelState& state, const ModelConfig& config,
                          const std::vector<int>& entities, const std::vector<int>& labels);

// Copies gradients out of the tape for every slot (zeros where untouched).
GradientSet collect_grads(const EmbeddingGraph& g, const ModelState& state);

// Forward-only embedding snapshot for evaluation.
struct EvalEmbeddings {
  Tensor h_struct;
  Tensor h_text;
  Tensor h_mol;
  Tensor fused;          // empty in score-fusion mode
  Tensor router_weights;  // empty unless MoE
};

EvalEmbeddings compute_embeddings(const ModelState& state, const ModelConfig& config,
                                  const RelationGraph& graph, const FeatureLayout& layout);

// Candidate scorer over the full entity vocabulary for ranking evaluation.
CandidateScorer make_lp_scorer(const EvalEmbeddings& emb, const ModelState& state,
                               const ModelConfig& config);

// argmax-type predictor for the classification track.
std::function<int(int)> make_nc_predictor(const EvalEmbeddings& emb, const ModelState& state,
                                          const ModelConfig& config);

}  // namespace cmkl
