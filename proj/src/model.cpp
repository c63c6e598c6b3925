#include "cmkl/model.hpp"

#include <stdexcept>

namespace cmkl {

const char* fusion_name(FusionKind k) {
  switch (k) {
    case FusionKind::Moe: return "moe";
    case FusionKind::Concat: return "concat";
    case FusionKind::Gated: return "gated";
    case FusionKind::ScoreFusion: return "score";
    case FusionKind::ForcedStruct: return "struct";
    case FusionKind::ForcedText: return "text";
    case FusionKind::ForcedMol: return "mol";
  }
  return "?";
}

FusionKind fusion_from_name(const std::string& name) {
  if (name == "moe") return FusionKind::Moe;
  if (name == "concat") return FusionKind::Concat;
  if (name == "gated") return FusionKind::Gated;
  if (name == "score" || name == "score-fusion") return FusionKind::ScoreFusion;
  if (name == "struct") return FusionKind::ForcedStruct;
  if (name == "text") return FusionKind::ForcedText;
  if (name == "mol") return FusionKind::ForcedMol;
  throw std::invalid_argument("unknown fusion: " + name);
}

std::vector<TensorSpec> model_tensor_specs(const ModelConfig& config) {
  if (config.n_entities == 0 || config.n_relations == 0) {
    throw std::invalid_argument("model_tensor_specs: dataset dimensions not set");
  }
  if (config.fusion == FusionKind::Gated && config.dim % 4 != 0) {
    throw std::invalid_argument("model_tensor_specs: gated fusion needs dim divisible by 4 heads");
  }
  std::size_t d = config.dim;
  std::size_t d_text = std::max<std::size_t>(1, config.d_text);
  std::size_t d_mol = std::max<std::size_t>(1, config.d_mol);

  std::vector<TensorSpec> specs;
  specs.push_back({Group::Structural, "e0", {config.n_entities, d}, InitScheme::Glorot});
  for (int l = 1; l <= 2; ++l) {
    std::string p = "rgcn" + std::to_string(l);
    specs.push_back({Group::Structural, p + ".basis", {config.bases, d, d}, InitScheme::Glorot});
    specs.push_back({Group::Structural, p + ".coef", {config.n_relations, config.bases}, InitScheme::Glorot});
    specs.push_back({Group::Structural, p + ".self", {d, d}, InitScheme::Glorot});
  }

  specs.push_back({Group::Text, "proj.w", {d, d_text}, InitScheme::Glorot});
  specs.push_back({Group::Text, "proj.b", {d}, InitScheme::Zeros});
  specs.push_back({Group::Text, "default", {d}, InitScheme::Zeros});

  specs.push_back({Group::Molecular, "mlp.w1", {d, d_mol}, InitScheme::Glorot});
  specs.push_back({Group::Molecular, "mlp.b1", {d}, InitScheme::Zeros});
  specs.push_back({Group::Molecular, "mlp.w2", {d, d}, InitScheme::Glorot});
  specs.push_back({Group::Molecular, "mlp.b2", {d}, InitScheme::Zeros});
  specs.push_back({Group::Molecular, "default", {d}, InitScheme::Zeros});

  switch (config.fusion) {
    case FusionKind::Moe:
      if (config.router_hidden > 0) {
        specs.push_back({Group::FusionDecoder, "router.w1", {config.router_hidden, 3 * d}, InitScheme::Glorot});
        specs.push_back({Group::FusionDecoder, "router.b1", {config.router_hidden}, InitScheme::Zeros});
        specs.push_back({Group::FusionDecoder, "router.w2", {3, config.router_hidden}, InitScheme::Glorot});
        specs.push_back({Group::FusionDecoder, "router.b2", {3}, InitScheme::Zeros});
      } else {
        specs.push_back({Group::FusionDecoder, "router.w", {3, 3 * d}, InitScheme::Glorot});
        specs.push_back({Group::FusionDecoder, "router.b", {3}, InitScheme::Zeros});
      }
      break;
    case FusionKind::Concat:
      specs.push_back({Group::FusionDecoder, "concat.w", {d, 3 * d}, InitScheme::Glorot});
      specs.push_back({Group::FusionDecoder, "concat.b", {d}, InitScheme::Zeros});
      break;
    case FusionKind::Gated: {
      const char* pairs[4] = {"st", "sm", "ts", "ms"};
      for (int p = 0; p < 4; ++p) {
        std::string tag(pairs[p]);
        specs.push_back({Group::FusionDecoder, "attn." + tag + ".q", {d, d}, InitScheme::Glorot});
        specs.push_back({Group::FusionDecoder, "attn." + tag + ".k", {d, d}, InitScheme::Glorot});
        specs.push_back({Group::FusionDecoder, "attn." + tag + ".v", {d, d}, InitScheme::Glorot});
      }
      specs.push_back({Group::FusionDecoder, "fuse.w1", {d, 5 * d}, InitScheme::Glorot});
      specs.push_back({Group::FusionDecoder, "fuse.b1", {d}, InitScheme::Zeros});
      specs.push_back({Group::FusionDecoder, "fuse.w2", {d, d}, InitScheme::Glorot});
      specs.push_back({Group::FusionDecoder, "fuse.b2", {d}, InitScheme::Zeros});
      specs.push_back({Group::FusionDecoder, "ln.scale", {d}, InitScheme::Ones});
      specs.push_back({Group::FusionDecoder, "ln.shift", {d}, InitScheme::Zeros});
      break;
    }
    case FusionKind::ScoreFusion:
    case FusionKind::ForcedStruct:
    case FusionKind::ForcedText:
    case FusionKind::ForcedMol:
      break;
  }

  specs.push_back({Group::FusionDecoder, "decoder.rel", {config.n_relations, d}, InitScheme::Glorot});
  if (config.fusion == FusionKind::ScoreFusion) {
    specs.push_back({Group::FusionDecoder, "decoder.rel_text", {config.n_relations, d}, InitScheme::Glorot});
    specs.push_back({Group::FusionDecoder, "decoder.rel_mol", {config.n_relations, d}, InitScheme::Glorot});
  }
  if (config.with_classifier) {
    if (config.n_types == 0) throw std::invalid_argument("model_tensor_specs: classifier needs types");
    specs.push_back({Group::FusionDecoder, "cls.w", {config.n_types, d}, InitScheme::Glorot});
    specs.push_back({Group::FusionDecoder, "cls.b", {config.n_types}, InitScheme::Zeros});
  }
  return specs;
}

ModelState init_model(const ModelConfig& config, std::uint64_t seed) {
  return init_params(model_tensor_specs(config), seed);
}

namespace {

Tape::NodeId leaf_of(EmbeddingGraph& g, const ModelState& state, Group group, const char* name) {
  return g.leaves[state.slot(group, name)];
}

}  // namespace

EmbeddingGraph build_embeddings(const ModelState& state, const ModelConfig& config,
                                const RelationGraph& graph, const FeatureLayout& layout) {
  EmbeddingGraph g;
  g.leaves.reserve(state.tensors().size());
  for (const NamedTensor& t : state.tensors()) g.leaves.push_back(g.tape.param(t.value));

  RgcnNodes rgcn;
  rgcn.e0 = leaf_of(g, state, Group::Structural, "e0");
  for (int l = 1; l <= 2; ++l) {
    std::string p = "rgcn" + std::to_string(l);
    rgcn.layers.push_back(RgcnLayerNodes{
        g.leaves[state.slot(Group::Structural, p + ".basis")],
        g.leaves[state.slot(Group::Structural, p + ".coef")],
        g.leaves[state.slot(Group::Structural, p + ".self")],
    });
  }
  g.h_struct = rgcn_forward(g.tape, rgcn, graph);

  TextProjNodes text{
      leaf_of(g, state, Group::Text, "proj.w"),
      leaf_of(g, state, Group::Text, "proj.b"),
      leaf_of(g, state, Group::Text, "default"),
  };
  g.h_text = text_forward(g.tape, text, layout, config.n_entities);

  MolMlpNodes mol{
      leaf_of(g, state, Group::Molecular, "mlp.w1"),
      leaf_of(g, state, Group::Molecular, "mlp.b1"),
      leaf_of(g, state, Group::Molecular, "mlp.w2"),
      leaf_of(g, state, Group::Molecular, "mlp.b2"),
      leaf_of(g, state, Group::Molecular, "default"),
  };
  g.h_mol = mol_forward(g.tape, mol, layout, config.n_entities);

  switch (config.fusion) {
    case FusionKind::Moe: {
      MoeNodes nodes;
      if (config.router_hidden > 0) {
        nodes.w_hidden = leaf_of(g, state, Group::FusionDecoder, "router.w1");
        nodes.b_hidden = leaf_of(g, state, Group::FusionDecoder, "router.b1");
        nodes.w_out = leaf_of(g, state, Group::FusionDecoder, "router.w2");
        nodes.b_out = leaf_of(g, state, Group::FusionDecoder, "router.b2");
      } else {
        nodes.w_r = leaf_of(g, state, Group::FusionDecoder, "router.w");
        nodes.b_r = leaf_of(g, state, Group::FusionDecoder, "router.b");
      }
      MoeResult moe = moe_fuse(g.tape, g.h_struct, g.h_text, g.h_mol, nodes);
      g.fused = moe.fused;
      g.router_weights = moe.weights;
      break;
    }
    case FusionKind::Concat: {
      ConcatNodes nodes{
          leaf_of(g, state, Group::FusionDecoder, "concat.w"),
          leaf_of(g, state, Group::FusionDecoder, "concat.b"),
      };
      g.fused = concat_fuse(g.tape, g.h_struct, g.h_text, g.h_mol, nodes);
      break;
    }
    case FusionKind::Gated: {
      GatedAttnNodes nodes;
      const char* pairs[4] = {"st", "sm", "ts", "ms"};
      for (int p = 0; p < 4; ++p) {
        std::string tag(pairs[p]);
        nodes.w_q[p] = g.leaves[state.slot(Group::FusionDecoder, "attn." + tag + ".q")];
        nodes.w_k[p] = g.leaves[state.slot(Group::FusionDecoder, "attn." + tag + ".k")];
        nodes.w_v[p] = g.leaves[state.slot(Group::FusionDecoder, "attn." + tag + ".v")];
      }
      nodes.mlp_w1 = leaf_of(g, state, Group::FusionDecoder, "fuse.w1");
      nodes.mlp_b1 = leaf_of(g, state, Group::FusionDecoder, "fuse.b1");
      nodes.mlp_w2 = leaf_of(g, state, Group::FusionDecoder, "fuse.w2");
      nodes.mlp_b2 = leaf_of(g, state, Group::FusionDecoder, "fuse.b2");
      nodes.ln_scale = leaf_of(g, state, Group::FusionDecoder, "ln.scale");
      nodes.ln_shift = leaf_of(g, state, Group::FusionDecoder, "ln.shift");
      g.fused = gated_attn_fuse(g.tape, g.h_struct, g.h_text, g.h_mol, nodes);
      break;
    }
    case FusionKind::ScoreFusion:
      break;  // no fused embedding, scoring combines per-modality scores
    case FusionKind::ForcedStruct:
      g.fused = forced_route(g.h_struct, g.h_text, g.h_mol, Modality::Structural);
      break;
    case FusionKind::ForcedText:
      g.fused = forced_route(g.h_struct, g.h_text, g.h_mol, Modality::Text);
      break;
    case FusionKind::ForcedMol:
      g.fused = forced_route(g.h_struct, g.h_text, g.h_mol, Modality::Molecular);
      break;
  }
  return g;
}

Tape::NodeId lp_loss_node(EmbeddingGraph& g, const ModelState& state, const ModelConfig& config,
                          const std::vector<Triple>& positives, const std::vector<Triple>& negatives,
                          double gamma, std::size_t n_neg) {
  if (positives.empty()) throw std::invalid_argument("lp_loss_node: empty batch");
  if (negatives.size() != positives.size() * n_neg) {
    throw std::invalid_argument("lp_loss_node: negatives must be grouped n_neg per positive");
  }
  Tape::NodeId pos, neg;
  if (config.fusion == FusionKind::ScoreFusion) {
    Tape::NodeId rel_s = g.leaves[state.slot(Group::FusionDecoder, "decoder.rel")];
    Tape::NodeId rel_t = g.leaves[state.slot(Group::FusionDecoder, "decoder.rel_text")];
    Tape::NodeId rel_m = g.leaves[state.slot(Group::FusionDecoder, "decoder.rel_mol")];
    pos = score_fusion_scores(g.tape, g.h_struct, g.h_text, g.h_mol, rel_s, rel_t, rel_m, positives,
                              config.score_fusion);
    neg = score_fusion_scores(g.tape, g.h_struct, g.h_text, g.h_mol, rel_s, rel_t, rel_m, negatives,
                              config.score_fusion);
  } else {
    Tape::NodeId rel = g.leaves[state.slot(Group::FusionDecoder, "decoder.rel")];
    pos = distmult_scores(g.tape, g.fused, rel, positives);
    neg = distmult_scores(g.tape, g.fused, rel, negatives);
  }
  Tape::NodeId loss = margin_loss(g.tape, pos, neg, gamma, n_neg);
  if (config.load_balance_weight != 0.0 && g.router_weights >= 0) {
    loss = g.tape.add(loss, g.tape.scale(load_balance_loss(g.tape, g.router_weights), config.load_balance_weight));
  }
  return loss;
}

Tape::NodeId nc_loss_node(EmbeddingGraph& g, const ModelState& state, const ModelConfig& config,
                          const std::vector<int>& entities, const std::vector<int>& labels) {
  if (config.fusion == FusionKind::ScoreFusion) {
    throw std::invalid_argument("nc_loss_node: classification track needs an embedding-level fusion");
  }
  if (entities.empty()) throw std::invalid_argument("nc_loss_node: empty entity batch");
  ClassifierNodes cls{
      g.leaves[state.slot(Group::FusionDecoder, "cls.w")],
      g.leaves[state.slot(Group::FusionDecoder, "cls.b")],
  };
  Tape::NodeId logits = classifier_logits(g.tape, g.fused, entities, cls);
  Tape::NodeId loss = g.tape.cross_entropy(logits, labels);
  if (config.load_balance_weight != 0.0 && g.router_weights >= 0) {
    loss = g.tape.add(loss, g.tape.scale(load_balance_loss(g.tape, g.router_weights), config.load_balance_weight));
  }
  return loss;
}

GradientSet collect_grads(const EmbeddingGraph& g, const ModelState& state) {
  GradientSet grads;
  grads.grads.reserve(state.tensors().size());
  for (std::size_t i = 0; i < state.tensors().size(); ++i) {
    grads.grads.push_back(g.tape.grad(g.leaves[i]));
  }
  return grads;
}

EvalEmbeddings compute_embeddings(const ModelState& state, const ModelConfig& config,
                                  const RelationGraph& graph, const FeatureLayout& layout) {
  EmbeddingGraph g = build_embeddings(state, config, graph, layout);
  EvalEmbeddings out;
  out.h_struct = g.tape.val(g.h_struct);
  out.h_text = g.tape.val(g.h_text);
  out.h_mol = g.tape.val(g.h_mol);
  if (g.fused >= 0) out.fused = g.tape.val(g.fused);
  if (g.router_weights >= 0) out.router_weights = g.tape.val(g.router_weights);
  return out;
}

namespace {

// scores[c] = sum_d fixed[d] * rel[d] * cand[c][d], with the fixed slot folded
// into one query vector first.
void accumulate_scores(std::vector<double>& scores, const Tensor& entity_matrix,
                       const Tensor& rel_table, const Triple& query, Direction dir, double weight) {
  std::size_t d = entity_matrix.cols();
  int fixed = dir == Direction::Tail ? query.head : query.tail;
  std::vector<double> q(d);
  for (std::size_t j = 0; j < d; ++j) {
    q[j] = entity_matrix.at(fixed, j) * rel_table.at(query.rel, j);
  }
  for (std::size_t c = 0; c < entity_matrix.rows(); ++c) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += q[j] * entity_matrix.at(c, j);
    scores[c] += weight * s;
  }
}

}  // namespace

CandidateScorer make_lp_scorer(const EvalEmbeddings& emb, const ModelState& state,
                               const ModelConfig& config) {
  if (config.fusion == FusionKind::ScoreFusion) {
    Tensor rel_s = state.at(Group::FusionDecoder, "decoder.rel");
    Tensor rel_t = state.at(Group::FusionDecoder, "decoder.rel_text");
    Tensor rel_m = state.at(Group::FusionDecoder, "decoder.rel_mol");
    Tensor h_s = emb.h_struct, h_t = emb.h_text, h_m = emb.h_mol;
    ScoreFusionConfig sf = config.score_fusion;
    return [=](const Triple& query, Direction dir) {
      std::vector<double> scores(h_s.rows(), 0.0);
      accumulate_scores(scores, h_s, rel_s, query, dir, 1.0);
      if (sf.alpha_text != 0.0) accumulate_scores(scores, h_t, rel_t, query, dir, sf.alpha_text);
      if (sf.alpha_mol != 0.0) accumulate_scores(scores, h_m, rel_m, query, dir, sf.alpha_mol);
      return scores;
    };
  }
  Tensor rel = state.at(Group::FusionDecoder, "decoder.rel");
  Tensor fused = emb.fused;
  return [=](const Triple& query, Direction dir) {
    std::vector<double> scores(fused.rows(), 0.0);
    accumulate_scores(scores, fused, rel, query, dir, 1.0);
    return scores;
  };
}

std::function<int(int)> make_nc_predictor(const EvalEmbeddings& emb, const ModelState& state,
                                          const ModelConfig& config) {
  if (config.fusion == FusionKind::ScoreFusion) {
    throw std::invalid_argument("make_nc_predictor: classification track needs an embedding-level fusion");
  }
  Tensor w = state.at(Group::FusionDecoder, "cls.w");
  Tensor b = state.at(Group::FusionDecoder, "cls.b");
  Tensor fused = emb.fused;
  return [=](int entity) {
    std::vector<double> h(fused.cols());
    for (std::size_t j = 0; j < fused.cols(); ++j) h[j] = fused.at(entity, j);
    std::vector<double> probs = classify_entity(h, w, b);
    int best = 0;
    for (std::size_t c = 1; c < probs.size(); ++c) {
      if (probs[c] > probs[best]) best = static_cast<int>(c);
    }
    return best;
  };
}

}  // namespace cmkl
