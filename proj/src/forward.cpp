#include <cmath>
#include <stdexcept>

#include "bat/model.hpp"

namespace bat {

namespace {

constexpr double kLnEps = 1e-6;

struct LayerVals {
  Value ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
};

struct AdapterVals {
  Value down_w, down_b, mid_w, mid_b, up_w, up_b;
};

struct HeadVals {
  Value trunk_w, trunk_b, score_w, score_b, offset_w, offset_b, size_w, size_b;
};

Value mhsa(Value x_ln, const LayerVals& L, int heads, std::int64_t t_n, std::int64_t d) {
  Value q = add_row_bias(matmul(x_ln, L.wq), L.bq);
  Value k = add_row_bias(matmul(x_ln, L.wk), L.bk);
  Value v = add_row_bias(matmul(x_ln, L.wv), L.bv);
  std::int64_t dh = d / heads;
  double scale = 1.0 / std::sqrt(double(dh));
  std::vector<Value> outs;
  for (int h = 0; h < heads; ++h) {
    Value qh = slice(q, {0, h * dh}, {t_n, dh});
    Value kh = slice(k, {0, h * dh}, {t_n, dh});
    Value vh = slice(v, {0, h * dh}, {t_n, dh});
    Value att = softmax(scalar_mul(matmul(qh, transpose(kh)), scale), 1);
    outs.push_back(matmul(att, vh));
  }
  Value o = heads == 1 ? outs[0] : concat(outs, 1);
  return add_row_bias(matmul(o, L.wo), L.bo);
}

Value mlp_block(Value x_ln, const LayerVals& L) {
  Value h = gelu(add_row_bias(matmul(x_ln, L.w1), L.b1));
  return add_row_bias(matmul(h, L.w2), L.b2);
}

Value adapter_apply(const AdapterVals& A, Value x, bool bias) {
  Value h = matmul(x, A.down_w);
  if (bias) h = add_row_bias(h, A.down_b);
  h = matmul(h, A.mid_w);
  if (bias) h = add_row_bias(h, A.mid_b);
  h = matmul(h, A.up_w);
  if (bias) h = add_row_bias(h, A.up_b);
  return h;
}

struct HeadOut {
  Value score, offset, size;
};

HeadOut apply_head(Value grid, const HeadVals& H) {
  Value t = relu(conv2d(grid, H.trunk_w, H.trunk_b, 1, 1));
  HeadOut o;
  o.score = sigmoid(conv2d(t, H.score_w, H.score_b, 1, 0));
  o.offset = conv2d(t, H.offset_w, H.offset_b, 1, 0);
  o.size = sigmoid(conv2d(t, H.size_w, H.size_b, 1, 0));
  return o;
}

Value search_grid(Value tokens, std::int64_t t_tokens, std::int64_t s_side, std::int64_t d) {
  Value s = slice(tokens, {t_tokens, 0}, {s_side * s_side, d});
  return reshape(transpose(s), {d, s_side, s_side});
}

}  // namespace

std::unique_ptr<ForwardGraph> build_forward(Model& m) {
  auto fg = std::make_unique<ForwardGraph>();
  Graph& g = fg->g;
  const RunConfig& cfg = m.cfg;

  std::int64_t d = cfg.d_t;
  std::int64_t t_side = cfg.template_tokens_side();
  std::int64_t s_side = cfg.search_tokens_side();
  std::int64_t t_n = cfg.num_tokens();

  fg->grid = int(s_side);
  fg->patch_stride = cfg.patch_size;
  fg->crop_size = cfg.image_size_search;

  auto lref = [&](Tensor& t, const std::string& name) {
    Value v = g.leaf_ref(t, name);
    fg->params.emplace(name, v);
    return v;
  };

  std::vector<LayerVals> L;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    auto& lp = m.layers[i];
    std::string p = "backbone.layer" + std::to_string(i + 1) + ".";
    LayerVals lv;
    lv.ln1_g = lref(lp.ln1_g, p + "ln1.g");
    lv.ln1_b = lref(lp.ln1_b, p + "ln1.b");
    lv.wq = lref(lp.wq, p + "att.wq");
    lv.bq = lref(lp.bq, p + "att.bq");
    lv.wk = lref(lp.wk, p + "att.wk");
    lv.bk = lref(lp.bk, p + "att.bk");
    lv.wv = lref(lp.wv, p + "att.wv");
    lv.bv = lref(lp.bv, p + "att.bv");
    lv.wo = lref(lp.wo, p + "att.wo");
    lv.bo = lref(lp.bo, p + "att.bo");
    lv.ln2_g = lref(lp.ln2_g, p + "ln2.g");
    lv.ln2_b = lref(lp.ln2_b, p + "ln2.b");
    lv.w1 = lref(lp.w1, p + "mlp.w1");
    lv.b1 = lref(lp.b1, p + "mlp.b1");
    lv.w2 = lref(lp.w2, p + "mlp.w2");
    lv.b2 = lref(lp.b2, p + "mlp.b2");
    L.push_back(lv);
  }

  std::vector<AdapterVals> A;
  for (std::size_t i = 0; i < m.adapters.size(); ++i) {
    auto& ap = m.adapters[i];
    std::string p = adapter_entry_prefix(m.plan, int(i)) + ".";
    AdapterVals av;
    av.down_w = lref(ap.down_w, p + "down.w");
    av.down_b = lref(ap.down_b, p + "down.b");
    av.mid_w = lref(ap.mid_w, p + "mid.w");
    av.mid_b = lref(ap.mid_b, p + "mid.b");
    av.up_w = lref(ap.up_w, p + "up.w");
    av.up_b = lref(ap.up_b, p + "up.b");
    A.push_back(av);
  }

  HeadVals H;
  H.trunk_w = lref(m.head.trunk_w, "head.trunk.w");
  H.trunk_b = lref(m.head.trunk_b, "head.trunk.b");
  H.score_w = lref(m.head.score_w, "head.score.w");
  H.score_b = lref(m.head.score_b, "head.score.b");
  H.offset_w = lref(m.head.offset_w, "head.offset.w");
  H.offset_b = lref(m.head.offset_b, "head.offset.b");
  H.size_w = lref(m.head.size_w, "head.size.w");
  H.size_b = lref(m.head.size_b, "head.size.b");

  fg->tokens_rgb = g.placeholder({t_n, d}, "tokens_rgb");
  fg->tokens_tir = g.placeholder({t_n, d}, "tokens_tir");
  fg->states_rgb.push_back(fg->tokens_rgb);
  fg->states_tir.push_back(fg->tokens_tir);

  Value xr = fg->tokens_rgb;
  Value xt = fg->tokens_tir;
  bool bias = cfg.include_bias;

  for (int l = 0; l < cfg.num_layers; ++l) {
    const LayerVals& lv = L[std::size_t(l)];
    int layer1 = l + 1;
    int pi = -1;

    // Attention stage: both streams read pre-stage snapshots.
    Value ar = add(xr, mhsa(layernorm(xr, lv.ln1_g, lv.ln1_b, kLnEps), lv, cfg.num_heads,
                            t_n, d));
    if (m.plan.has_slot(layer1, Stage::Attention, Direction::Tir2Rgb, &pi))
      ar = add(ar, adapter_apply(A[std::size_t(pi)], xt, bias));
    Value at = add(xt, mhsa(layernorm(xt, lv.ln1_g, lv.ln1_b, kLnEps), lv, cfg.num_heads,
                            t_n, d));
    if (m.plan.has_slot(layer1, Stage::Attention, Direction::Rgb2Tir, &pi))
      at = add(at, adapter_apply(A[std::size_t(pi)], xr, bias));

    // MLP stage: prompts come from the other stream's post-attention snapshot.
    Value yr = add(ar, mlp_block(layernorm(ar, lv.ln2_g, lv.ln2_b, kLnEps), lv));
    if (m.plan.has_slot(layer1, Stage::Mlp, Direction::Tir2Rgb, &pi))
      yr = add(yr, adapter_apply(A[std::size_t(pi)], at, bias));
    Value yt = add(at, mlp_block(layernorm(at, lv.ln2_g, lv.ln2_b, kLnEps), lv));
    if (m.plan.has_slot(layer1, Stage::Mlp, Direction::Rgb2Tir, &pi))
      yt = add(yt, adapter_apply(A[std::size_t(pi)], ar, bias));

    xr = yr;
    xt = yt;
    fg->states_rgb.push_back(xr);
    fg->states_tir.push_back(xt);
  }

  // Every variant feeds the head the sum of the two final states; the
  // variants differ only in which adapter directions exist. Baseline-Dual
  // additionally builds per-stream heads for its max-peak selection rule.
  fg->head_in = add(xr, xt);
  HeadOut prim = apply_head(search_grid(fg->head_in, t_side * t_side, s_side, d), H);
  fg->score = prim.score;
  fg->offset = prim.offset;
  fg->size = prim.size;

  if (cfg.variant == Variant::Baseline_Dual) {
    fg->has_stream_heads = true;
    HeadOut hr = apply_head(search_grid(xr, t_side * t_side, s_side, d), H);
    fg->score_rgb = hr.score;
    fg->offset_rgb = hr.offset;
    fg->size_rgb = hr.size;
    HeadOut ht = apply_head(search_grid(xt, t_side * t_side, s_side, d), H);
    fg->score_tir = ht.score;
    fg->offset_tir = ht.offset;
    fg->size_tir = ht.size;
  }
  return fg;
}

void run_forward(ForwardGraph& fg, const Tensor& tokens_rgb, const Tensor& tokens_tir) {
  fg.g.evaluate({{"tokens_rgb", tokens_rgb}, {"tokens_tir", tokens_tir}});
}

HeadMaps ForwardGraph::maps_at(Value score_v, Value offset_v, Value size_v) const {
  HeadMaps m;
  auto sc = g.value(score_v);
  auto of = g.value(offset_v);
  auto sz = g.value(size_v);
  m.score.assign(sc.begin(), sc.end());
  m.offset.assign(of.begin(), of.end());
  m.size.assign(sz.begin(), sz.end());
  m.grid = grid;
  return m;
}

BBox decode_box(const HeadMaps& maps, int patch_stride, int crop_size) {
  int S = maps.grid;
  std::size_t n = std::size_t(S) * S;
  if (maps.score.size() != n || maps.offset.size() != 2 * n || maps.size.size() != 2 * n)
    throw std::invalid_argument("decode_box: map sizes disagree with grid");

  std::size_t best = 0;
  for (std::size_t i = 1; i < n; ++i)
    if (maps.score[i] > maps.score[best]) best = i;  // ties keep the lowest index

  std::int64_t row = std::int64_t(best) / S;
  std::int64_t col = std::int64_t(best) % S;
  double cx = (double(col) + 0.5 + maps.offset[best]) * patch_stride;
  double cy = (double(row) + 0.5 + maps.offset[n + best]) * patch_stride;
  double w = maps.size[best] * crop_size;
  double h = maps.size[n + best] * crop_size;
  return BBox{cx - w / 2.0, cy - h / 2.0, w, h};
}

Prediction predict(ForwardGraph& fg) {
  Prediction p;
  p.maps = fg.maps_at(fg.score, fg.offset, fg.size);
  p.box_crop = decode_box(p.maps, fg.patch_stride, fg.crop_size);
  return p;
}

Prediction baseline_dual_predict(ForwardGraph& fg) {
  if (!fg.has_stream_heads)
    throw std::logic_error("baseline_dual_predict needs a Baseline-Dual graph");
  auto sr = fg.g.value(fg.score_rgb);
  auto st = fg.g.value(fg.score_tir);
  double mr = sr[0], mt = st[0];
  for (double v : sr) mr = std::max(mr, v);
  for (double v : st) mt = std::max(mt, v);
  // RGB wins ties.
  bool use_tir = mt > mr;
  Prediction p;
  p.stream = use_tir ? 1 : 0;
  p.maps = use_tir ? fg.maps_at(fg.score_tir, fg.offset_tir, fg.size_tir)
                   : fg.maps_at(fg.score_rgb, fg.offset_rgb, fg.size_rgb);
  p.box_crop = decode_box(p.maps, fg.patch_stride, fg.crop_size);
  return p;
}

}  // namespace bat
