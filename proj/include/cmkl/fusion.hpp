#pragma once

#include "cmkl/tape.hpp"

namespace cmkl {

enum class Modality { Structural, Text, Molecular };

struct MoeNodes {
  Tape::NodeId w_r = -1;  // (3, 3D)
  Tape::NodeId b_r = -1;  // (3)
  // Optional two-layer router; active when w_hidden >= 0.
  Tape::NodeId w_hidden = -1;  // (H, 3D)
  Tape::NodeId b_hidden = -1;  // (H)
  Tape::NodeId w_out = -1;     // (3, H)
  Tape::NodeId b_out = -1;     // (3)
};

struct MoeResult {
  Tape::NodeId fused;
  Tape::NodeId weights;  // (N, 3) on the simplex
};

// w = softmax(router([h_s; h_t; h_m])), fused = w_s h_s + w_t h_t + w_m h_m.
MoeResult moe_fuse(Tape& tape, Tape::NodeId h_s, Tape::NodeId h_t, Tape::NodeId h_m,
                   const MoeNodes& params);

struct ConcatNodes {
  Tape::NodeId w_c;  // (D, 3D)
  Tape::NodeId b_c;  // (D)
};

Tape::NodeId concat_fuse(Tape& tape, Tape::NodeId h_s, Tape::NodeId h_t, Tape::NodeId h_m,
                         const ConcatNodes& params);

struct GatedAttnNodes {
  // Directed modality pairs in fixed order: s<-t, s<-m, t<-s, m<-s. Each pair
  // attends from one query token to one source token: the softmax over that
  // single key is identically 1, so the attended output is the value
  // projection of the source. Query/key projections exist as parameters but
  // carry no gradient.
  Tape::NodeId w_q[4];
  Tape::NodeId w_k[4];
  Tape::NodeId w_v[4];  // (D, D) each
  Tape::NodeId mlp_w1;  // (D, 5D)
  Tape::NodeId mlp_b1;  // (D)
  Tape::NodeId mlp_w2;  // (D, D)
  Tape::NodeId mlp_b2;  // (D)
  Tape::NodeId ln_scale;  // (D)
  Tape::NodeId ln_shift;  // (D)
};

// out = LayerNorm(MLP([h_s; v(s<-t); v(s<-m); v(t<-s); v(m<-s)]) + h_s).
Tape::NodeId gated_attn_fuse(Tape& tape, Tape::NodeId h_s, Tape::NodeId h_t, Tape::NodeId h_m,
                             const GatedAttnNodes& params);

// Single-modality selector for ablation runs.
Tape::NodeId forced_route(Tape::NodeId h_s, Tape::NodeId h_t, Tape::NodeId h_m, Modality which);

// Mean-squared deviation of batch-mean router weights from uniform.
Tape::NodeId load_balance_loss(Tape& tape, Tape::NodeId router_weights);

}  // namespace cmkl
