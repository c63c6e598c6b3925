#include "cmkl/fusion.hpp"

namespace cmkl {

MoeResult moe_fuse(Tape& tape, Tape::NodeId h_s, Tape::NodeId h_t, Tape::NodeId h_m,
                   const MoeNodes& params) {
  Tape::NodeId z = tape.concat_cols({h_s, h_t, h_m});
  Tape::NodeId logits;
  if (params.w_hidden >= 0) {
    Tape::NodeId hidden = tape.relu(tape.add_rowvec(tape.linear(z, params.w_hidden), params.b_hidden));
    logits = tape.add_rowvec(tape.linear(hidden, params.w_out), params.b_out);
  } else {
    logits = tape.add_rowvec(tape.linear(z, params.w_r), params.b_r);
  }
  Tape::NodeId weights = tape.row_softmax(logits);
  Tape::NodeId fused = tape.colwise_scale(h_s, tape.column(weights, 0));
  fused = tape.add(fused, tape.colwise_scale(h_t, tape.column(weights, 1)));
  fused = tape.add(fused, tape.colwise_scale(h_m, tape.column(weights, 2)));
  return MoeResult{fused, weights};
}

Tape::NodeId concat_fuse(Tape& tape, Tape::NodeId h_s, Tape::NodeId h_t, Tape::NodeId h_m,
                         const ConcatNodes& params) {
  Tape::NodeId z = tape.concat_cols({h_s, h_t, h_m});
  return tape.add_rowvec(tape.linear(z, params.w_c), params.b_c);
}

Tape::NodeId gated_attn_fuse(Tape& tape, Tape::NodeId h_s, Tape::NodeId h_t, Tape::NodeId h_m,
                             const GatedAttnNodes& params) {
  // Pair order: s<-t, s<-m, t<-s, m<-s. Single-token attention reduces to the
  // source token's value projection.
  Tape::NodeId att_st = tape.linear(h_t, params.w_v[0]);
  Tape::NodeId att_sm = tape.linear(h_m, params.w_v[1]);
  Tape::NodeId att_ts = tape.linear(h_s, params.w_v[2]);
  Tape::NodeId att_ms = tape.linear(h_s, params.w_v[3]);
  Tape::NodeId c = tape.concat_cols({h_s, att_st, att_sm, att_ts, att_ms});
  Tape::NodeId hidden = tape.relu(tape.add_rowvec(tape.linear(c, params.mlp_w1), params.mlp_b1));
  Tape::NodeId mlp = tape.add_rowvec(tape.linear(hidden, params.mlp_w2), params.mlp_b2);
  return tape.layer_norm(tape.add(mlp, h_s), params.ln_scale, params.ln_shift);
}

Tape::NodeId forced_route(Tape::NodeId h_s, Tape::NodeId h_t, Tape::NodeId h_m, Modality which) {
  switch (which) {
    case Modality::Structural: return h_s;
    case Modality::Text: return h_t;
    case Modality::Molecular: return h_m;
  }
  return h_s;
}

Tape::NodeId load_balance_loss(Tape& tape, Tape::NodeId router_weights) {
  Tape::NodeId mean_w = tape.mean_rows(router_weights);
  Tape::NodeId dev = tape.add_scalar(mean_w, -1.0 / 3.0);
  return tape.mean_all(tape.mul(dev, dev));
}

}  // namespace cmkl
