#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>

#include "bat/kernels.hpp"
#include "bat/model.hpp"
#include "bat/rng.hpp"

namespace bat {

namespace {

Tensor gauss(SplitMix64& rng, Shape shape, double std_dev) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.data) v = rng.gaussian() * std_dev;
  return t;
}

constexpr double kInitStd = 0.02;

}  // namespace

Model Model::init(const RunConfig& cfg) {
  cfg.validate();
  Model m;
  m.cfg = cfg;
  m.plan = plan_from_config(cfg);

  SplitMix64 rng(cfg.seed);
  int d = cfg.d_t;
  int patch_dim = cfg.patch_size * cfg.patch_size * 3;
  int t_side = cfg.template_tokens_side();
  int s_side = cfg.search_tokens_side();

  m.embed.patch_w = gauss(rng, {patch_dim, d}, kInitStd);
  m.embed.patch_b = Tensor::zeros({d});
  m.embed.pos_template = gauss(rng, {t_side * t_side, d}, kInitStd);
  m.embed.pos_search = gauss(rng, {s_side * s_side, d}, kInitStd);

  for (int l = 0; l < cfg.num_layers; ++l) {
    LayerParams lp;
    lp.ln1_g = Tensor::full({d}, 1.0);
    lp.ln1_b = Tensor::zeros({d});
    lp.wq = gauss(rng, {d, d}, kInitStd);
    lp.bq = Tensor::zeros({d});
    lp.wk = gauss(rng, {d, d}, kInitStd);
    lp.bk = Tensor::zeros({d});
    lp.wv = gauss(rng, {d, d}, kInitStd);
    lp.bv = Tensor::zeros({d});
    lp.wo = gauss(rng, {d, d}, kInitStd);
    lp.bo = Tensor::zeros({d});
    lp.ln2_g = Tensor::full({d}, 1.0);
    lp.ln2_b = Tensor::zeros({d});
    lp.w1 = gauss(rng, {d, cfg.mlp_ratio * d}, kInitStd);
    lp.b1 = Tensor::zeros({cfg.mlp_ratio * d});
    lp.w2 = gauss(rng, {cfg.mlp_ratio * d, d}, kInitStd);
    lp.b2 = Tensor::zeros({d});
    m.layers.push_back(std::move(lp));
  }

  m.head.trunk_w = gauss(rng, {16, d, 3, 3}, kInitStd);
  m.head.trunk_b = Tensor::zeros({16});
  m.head.score_w = gauss(rng, {1, 16, 1, 1}, kInitStd);
  m.head.score_b = Tensor::zeros({1});
  m.head.offset_w = gauss(rng, {2, 16, 1, 1}, kInitStd);
  m.head.offset_b = Tensor::zeros({2});
  m.head.size_w = gauss(rng, {2, 16, 1, 1}, kInitStd);
  m.head.size_b = Tensor::zeros({2});

  for (int i = 0; i < m.plan.instance_count; ++i) {
    AdapterParams ap;
    ap.down_w = gauss(rng, {d, cfg.d_e}, kInitStd);
    ap.down_b = Tensor::zeros({cfg.d_e});
    ap.mid_w = gauss(rng, {cfg.d_e, cfg.d_e}, kInitStd);
    ap.mid_b = Tensor::zeros({cfg.d_e});
    // Zero up-projection: an untrained adapter injects exactly nothing.
    ap.up_w = Tensor::zeros({cfg.d_e, d});
    ap.up_b = Tensor::zeros({d});
    m.adapters.push_back(std::move(ap));
  }

  m.finalize();
  return m;
}

void Model::finalize() {
  int p2 = cfg.patch_size * cfg.patch_size;
  int d = cfg.d_t;
  patch_w_gray = Tensor::zeros({p2, d});
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < p2; ++i)
      for (int j = 0; j < d; ++j)
        patch_w_gray.data[std::size_t(i) * d + j] +=
            embed.patch_w.data[(std::size_t(c) * p2 + i) * d + j];
  mark_trainable();
}

void Model::mark_trainable() {
  auto set = [](Tensor& t, bool v) { t.requires_grad = v; };
  for (Tensor* t : {&embed.patch_w, &embed.patch_b, &embed.pos_template, &embed.pos_search})
    set(*t, false);
  for (auto& lp : layers)
    for (Tensor* t : {&lp.ln1_g, &lp.ln1_b, &lp.wq, &lp.bq, &lp.wk, &lp.bk, &lp.wv, &lp.bv,
                      &lp.wo, &lp.bo, &lp.ln2_g, &lp.ln2_b, &lp.w1, &lp.b1, &lp.w2, &lp.b2})
      set(*t, false);
  bool head_train = !cfg.freeze_head;
  for (Tensor* t : {&head.trunk_w, &head.trunk_b, &head.score_w, &head.score_b, &head.offset_w,
                    &head.offset_b, &head.size_w, &head.size_b})
    set(*t, head_train);
  for (auto& ap : adapters)
    for (Tensor* t : {&ap.down_w, &ap.down_b, &ap.mid_w, &ap.mid_b, &ap.up_w, &ap.up_b})
      set(*t, true);
}

std::vector<Tensor*> Model::trainable_tensors() {
  std::vector<Tensor*> out;
  for (auto& ap : adapters)
    for (Tensor* t : {&ap.down_w, &ap.down_b, &ap.mid_w, &ap.mid_b, &ap.up_w, &ap.up_b})
      out.push_back(t);
  if (!cfg.freeze_head)
    for (Tensor* t : {&head.trunk_w, &head.trunk_b, &head.score_w, &head.score_b,
                      &head.offset_w, &head.offset_b, &head.size_w, &head.size_b})
      out.push_back(t);
  return out;
}

Tensor Model::embed_pair(const Image& tmpl, const Image& search) const {
  int p = cfg.patch_size;
  int t_side = cfg.template_tokens_side();
  int s_side = cfg.search_tokens_side();
  int t_n = cfg.num_tokens();
  int d = cfg.d_t;

  if (tmpl.w != cfg.image_size_template || tmpl.h != cfg.image_size_template)
    throw std::invalid_argument("template crop size mismatch");
  if (search.w != cfg.image_size_search || search.h != cfg.image_size_search)
    throw std::invalid_argument("search crop size mismatch");
  if ((tmpl.c != 1 && tmpl.c != 3) || (search.c != 1 && search.c != 3) || tmpl.c != search.c)
    throw std::invalid_argument("embed_pair wants matching 1- or 3-channel crops");

  bool gray = tmpl.c == 1;
  int patch_dim = gray ? p * p : p * p * 3;
  const Tensor& w = gray ? patch_w_gray : embed.patch_w;

  // Flatten patches (channel-major within a patch), row-major over the grid,
  // template block before search block.
  Tensor rows = Tensor::zeros({t_n, patch_dim});
  auto fill = [&](const Image& img, int side, int row0) {
    for (int py = 0; py < side; ++py)
      for (int px = 0; px < side; ++px) {
        double* dst = rows.data.data() + std::size_t(row0 + py * side + px) * patch_dim;
        for (int c = 0; c < img.c; ++c)
          for (int y = 0; y < p; ++y)
            for (int x = 0; x < p; ++x)
              *dst++ = img.at(c, py * p + y, px * p + x);
      }
  };
  fill(tmpl, t_side, 0);
  fill(search, s_side, t_side * t_side);

  Tensor tokens = Tensor::zeros({t_n, d});
  kernels::active().gemm_nn(rows.data.data(), w.data.data(), tokens.data.data(), t_n,
                            patch_dim, d, false);
  for (int i = 0; i < t_n; ++i) {
    const double* pos = (i < t_side * t_side)
                            ? embed.pos_template.data.data() + std::size_t(i) * d
                            : embed.pos_search.data.data() +
                                  std::size_t(i - t_side * t_side) * d;
    double* row = tokens.data.data() + std::size_t(i) * d;
    for (int j = 0; j < d; ++j) row[j] += embed.patch_b.data[j] + pos[j];
  }
  return tokens;
}

Checkpoint Model::to_checkpoint() const {
  Checkpoint ck;
  config_to_checkpoint(cfg, ck);

  ck.add("embed.patch.w", embed.patch_w);
  ck.add("embed.patch.b", embed.patch_b);
  ck.add("embed.pos_template", embed.pos_template);
  ck.add("embed.pos_search", embed.pos_search);

  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& lp = layers[i];
    std::string p = "backbone.layer" + std::to_string(i + 1) + ".";
    ck.add(p + "ln1.g", lp.ln1_g);
    ck.add(p + "ln1.b", lp.ln1_b);
    ck.add(p + "att.wq", lp.wq);
    ck.add(p + "att.bq", lp.bq);
    ck.add(p + "att.wk", lp.wk);
    ck.add(p + "att.bk", lp.bk);
    ck.add(p + "att.wv", lp.wv);
    ck.add(p + "att.bv", lp.bv);
    ck.add(p + "att.wo", lp.wo);
    ck.add(p + "att.bo", lp.bo);
    ck.add(p + "ln2.g", lp.ln2_g);
    ck.add(p + "ln2.b", lp.ln2_b);
    ck.add(p + "mlp.w1", lp.w1);
    ck.add(p + "mlp.b1", lp.b1);
    ck.add(p + "mlp.w2", lp.w2);
    ck.add(p + "mlp.b2", lp.b2);
  }

  ck.add("head.trunk.w", head.trunk_w);
  ck.add("head.trunk.b", head.trunk_b);
  ck.add("head.score.w", head.score_w);
  ck.add("head.score.b", head.score_b);
  ck.add("head.offset.w", head.offset_w);
  ck.add("head.offset.b", head.offset_b);
  ck.add("head.size.w", head.size_w);
  ck.add("head.size.b", head.size_b);

  for (int i = 0; i < plan.instance_count; ++i) {
    std::string p = adapter_entry_prefix(plan, i) + ".";
    const auto& ap = adapters[std::size_t(i)];
    ck.add(p + "down.w", ap.down_w);
    ck.add(p + "down.b", ap.down_b);
    ck.add(p + "mid.w", ap.mid_w);
    ck.add(p + "mid.b", ap.mid_b);
    ck.add(p + "up.w", ap.up_w);
    ck.add(p + "up.b", ap.up_b);
  }
  return ck;
}

Model Model::from_checkpoint(const Checkpoint& ck) {
  Model m;
  m.cfg = config_from_checkpoint(ck);
  m.cfg.validate();
  m.plan = plan_from_config(m.cfg);

  auto take = [&](const std::string& name) -> Tensor {
    const auto& e = ck.get(name);
    Tensor t = Tensor::zeros(e.shape);
    t.data = e.data;
    return t;
  };
  m.embed.patch_w = take("embed.patch.w");
  m.embed.patch_b = take("embed.patch.b");
  m.embed.pos_template = take("embed.pos_template");
  m.embed.pos_search = take("embed.pos_search");

  for (int l = 1; l <= m.cfg.num_layers; ++l) {
    std::string p = "backbone.layer" + std::to_string(l) + ".";
    LayerParams lp;
    lp.ln1_g = take(p + "ln1.g");
    lp.ln1_b = take(p + "ln1.b");
    lp.wq = take(p + "att.wq");
    lp.bq = take(p + "att.bq");
    lp.wk = take(p + "att.wk");
    lp.bk = take(p + "att.bk");
    lp.wv = take(p + "att.wv");
    lp.bv = take(p + "att.bv");
    lp.wo = take(p + "att.wo");
    lp.bo = take(p + "att.bo");
    lp.ln2_g = take(p + "ln2.g");
    lp.ln2_b = take(p + "ln2.b");
    lp.w1 = take(p + "mlp.w1");
    lp.b1 = take(p + "mlp.b1");
    lp.w2 = take(p + "mlp.w2");
    lp.b2 = take(p + "mlp.b2");
    m.layers.push_back(std::move(lp));
  }

  m.head.trunk_w = take("head.trunk.w");
  m.head.trunk_b = take("head.trunk.b");
  m.head.score_w = take("head.score.w");
  m.head.score_b = take("head.score.b");
  m.head.offset_w = take("head.offset.w");
  m.head.offset_b = take("head.offset.b");
  m.head.size_w = take("head.size.w");
  m.head.size_b = take("head.size.b");

  for (int i = 0; i < m.plan.instance_count; ++i) {
    std::string p = adapter_entry_prefix(m.plan, i) + ".";
    AdapterParams ap;
    ap.down_w = take(p + "down.w");
    ap.down_b = take(p + "down.b");
    ap.mid_w = take(p + "mid.w");
    ap.mid_b = take(p + "mid.b");
    ap.up_w = take(p + "up.w");
    ap.up_b = take(p + "up.b");
    m.adapters.push_back(std::move(ap));
  }

  m.finalize();
  return m;
}

}  // namespace bat
