#include <cstring>
#include <filesystem>
#include <set>

#include "bat/model.hpp"
#include "bat/rng.hpp"
#include "doctest.h"

using namespace bat;

namespace {

RunConfig tiny_cfg(Variant v) {
  RunConfig cfg;  // defaults are the toy preset
  cfg.image_size_template = 16;
  cfg.image_size_search = 32;
  cfg.patch_size = 16;
  cfg.d_t = 16;
  cfg.num_layers = 1;
  cfg.num_heads = 2;
  cfg.mlp_ratio = 2;
  cfg.d_e = 4;
  cfg.layer_set = {1};
  cfg.variant = v;
  return cfg;
}

Tensor random_tokens(const RunConfig& cfg, std::uint64_t seed) {
  Tensor t = Tensor::zeros({cfg.num_tokens(), cfg.d_t});
  SplitMix64 rng(seed);
  for (auto& v : t.data) v = rng.gaussian() * 0.5;
  return t;
}

Image random_image(int w, int h, int c, std::uint64_t seed) {
  Image img = Image::zeros(c, h, w);
  SplitMix64 rng(seed);
  for (auto& v : img.data) v = rng.u01();
  return img;
}

bool bits_equal(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return false;
  return a.empty() ||
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

bool bits_equal(const Tensor& a, const Tensor& b) {
  return a.shape == b.shape &&
         bits_equal(std::span<const double>(a.data), std::span<const double>(b.data));
}

}  // namespace

TEST_CASE("adapter plan layout per variant") {
  auto plan = build_adapter_plan(Variant::BAT, {1, 2}, true, true, 2);
  CHECK(plan.instance_count == 4);
  CHECK(plan.slots.size() == 8);
  int pi_a = -1, pi_b = -1;
  CHECK(plan.has_slot(1, Stage::Attention, Direction::Rgb2Tir, &pi_a));
  CHECK(plan.has_slot(1, Stage::Attention, Direction::Tir2Rgb, &pi_b));
  CHECK(pi_a == pi_b);  // shared instance serves both directions

  plan = build_adapter_plan(Variant::BAT_Dual, {1, 2}, true, true, 2);
  CHECK(plan.instance_count == 8);
  CHECK(plan.has_slot(2, Stage::Mlp, Direction::Rgb2Tir, &pi_a));
  CHECK(plan.has_slot(2, Stage::Mlp, Direction::Tir2Rgb, &pi_b));
  CHECK(pi_a != pi_b);

  plan = build_adapter_plan(Variant::BAT_RGB, {1, 2}, true, true, 2);
  CHECK(plan.instance_count == 4);
  for (const auto& s : plan.slots) CHECK(s.dir == Direction::Tir2Rgb);

  plan = build_adapter_plan(Variant::BAT_TIR, {1, 2}, true, true, 2);
  CHECK(plan.instance_count == 4);
  for (const auto& s : plan.slots) CHECK(s.dir == Direction::Rgb2Tir);

  plan = build_adapter_plan(Variant::Baseline_Dual, {1, 2}, true, true, 2);
  CHECK(plan.instance_count == 0);
  CHECK(plan.slots.empty());

  // attention-only plan at a single layer
  plan = build_adapter_plan(Variant::BAT, {2}, true, false, 4);
  CHECK(plan.instance_count == 1);
  CHECK(plan.slots.size() == 2);
  CHECK_FALSE(plan.has_slot(2, Stage::Mlp, Direction::Rgb2Tir));

  CHECK_THROWS_AS(build_adapter_plan(Variant::BAT, {0}, true, true, 2),
                  std::invalid_argument);
  CHECK_THROWS_AS(build_adapter_plan(Variant::BAT, {3}, true, true, 2),
                  std::invalid_argument);
  CHECK_THROWS_AS(build_adapter_plan(Variant::BAT, {1}, false, false, 2),
                  std::invalid_argument);
}

TEST_CASE("adapter parameter counts") {
  // Hand count, d_t=768 / d_e=8 with biases:
  //   down 768*8+8 = 6152, mid 8*8+8 = 72, up 8*768+768 = 6912  -> 13136
  auto full = build_adapter_plan(Variant::BAT, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12},
                                 true, true, 12);
  CHECK(count_trainable_params(full, 768, 8, true) == 315264);  // 24 * 13136

  auto full_dual = build_adapter_plan(Variant::BAT_Dual,
                                      {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12}, true, true, 12);
  CHECK(count_trainable_params(full_dual, 768, 8, true) == 630528);

  // Toy at one layer: (64*4+4) + (4*4+4) + (4*64+64) = 600 per instance.
  auto toy = build_adapter_plan(Variant::BAT, {1}, true, true, 2);
  CHECK(count_trainable_params(toy, 64, 4, true) == 1200);

  // Without biases the affine terms drop.
  CHECK(count_trainable_params(toy, 64, 4, false) == 2 * (64 * 4 + 4 * 4 + 4 * 64));

  // BAT-Dual always costs exactly twice BAT for matching dims.
  SplitMix64 rng(99);
  for (int i = 0; i < 20; ++i) {
    int n_layers = 1 + int(rng.index(6));
    std::vector<int> layers;
    for (int l = 1; l <= n_layers; ++l)
      if (rng.u01() < 0.7) layers.push_back(l);
    if (layers.empty()) layers.push_back(1);
    bool att = rng.u01() < 0.5;
    bool mlp = !att || rng.u01() < 0.5;
    int dt = 8 * (1 + int(rng.index(12)));
    int de = 1 + int(rng.index(16));
    bool bias = rng.u01() < 0.5;
    auto a = build_adapter_plan(Variant::BAT, layers, att, mlp, n_layers);
    auto b = build_adapter_plan(Variant::BAT_Dual, layers, att, mlp, n_layers);
    CHECK(count_trainable_params(b, dt, de, bias) ==
          2 * count_trainable_params(a, dt, de, bias));
  }
}

TEST_CASE("adapter entry names") {
  auto shared = build_adapter_plan(Variant::BAT, {3}, true, true, 4);
  CHECK(adapter_entry_prefix(shared, 0) == "adapter.3.att");
  CHECK(adapter_entry_prefix(shared, 1) == "adapter.3.mlp");

  auto dual = build_adapter_plan(Variant::BAT_Dual, {3}, true, true, 4);
  CHECK(adapter_entry_prefix(dual, 0) == "adapter.3.att.rgb2tir");
  CHECK(adapter_entry_prefix(dual, 1) == "adapter.3.att.tir2rgb");
  CHECK(adapter_entry_prefix(dual, 2) == "adapter.3.mlp.rgb2tir");
  CHECK(adapter_entry_prefix(dual, 3) == "adapter.3.mlp.tir2rgb");

  auto rgb = build_adapter_plan(Variant::BAT_RGB, {1}, true, false, 2);
  CHECK(adapter_entry_prefix(rgb, 0) == "adapter.1.att.tir2rgb");
}

TEST_CASE("model init is deterministic and shares frozen bits across variants") {
  RunConfig cfg;  // toy
  Model a = Model::init(cfg);
  Model b = Model::init(cfg);
  CHECK(bits_equal(a.embed.patch_w, b.embed.patch_w));
  CHECK(bits_equal(a.layers[1].w2, b.layers[1].w2));
  CHECK(bits_equal(a.head.trunk_w, b.head.trunk_w));
  CHECK(bits_equal(a.adapters[0].down_w, b.adapters[0].down_w));

  for (const auto& ap : a.adapters) {
    for (double v : ap.up_w.data) CHECK(v == 0.0);
    for (double v : ap.up_b.data) CHECK(v == 0.0);
  }

  // Same seed, different variant: backbone and head draws happen before the
  // adapter draws, so those tensors match bit for bit.
  RunConfig base_cfg = cfg;
  base_cfg.variant = Variant::Baseline_Dual;
  Model base = Model::init(base_cfg);
  CHECK(bits_equal(a.embed.patch_w, base.embed.patch_w));
  CHECK(bits_equal(a.embed.pos_search, base.embed.pos_search));
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    CHECK(bits_equal(a.layers[l].wq, base.layers[l].wq));
    CHECK(bits_equal(a.layers[l].w1, base.layers[l].w1));
  }
  CHECK(bits_equal(a.head.trunk_w, base.head.trunk_w));
  CHECK(bits_equal(a.head.score_w, base.head.score_w));
  CHECK(base.adapters.empty());

  RunConfig other_seed = cfg;
  other_seed.seed = 2;
  Model c = Model::init(other_seed);
  CHECK_FALSE(bits_equal(a.embed.patch_w, c.embed.patch_w));
}

TEST_CASE("patch embedding layout and gray collapse") {
  RunConfig cfg;  // toy: 32/64, patch 16, d_t 64
  Model m = Model::init(cfg);

  SUBCASE("zero weights leave bias plus position") {
    for (auto& v : m.embed.patch_w.data) v = 0.0;
    for (int j = 0; j < cfg.d_t; ++j) m.embed.patch_b.data[std::size_t(j)] = j * 0.25;
    m.finalize();
    Image tmpl = random_image(32, 32, 3, 5);
    Image search = random_image(64, 64, 3, 6);
    Tensor tok = m.embed_pair(tmpl, search);
    int t_rows = 4;
    for (int i = 0; i < tok.shape[0]; ++i)
      for (int j = 0; j < cfg.d_t; ++j) {
        double pos = i < t_rows
                         ? m.embed.pos_template.data[std::size_t(i) * cfg.d_t + j]
                         : m.embed.pos_search.data[std::size_t(i - t_rows) * cfg.d_t + j];
        CHECK(tok.data[std::size_t(i) * cfg.d_t + j] == doctest::Approx(j * 0.25 + pos).epsilon(1e-15));
      }
  }

  SUBCASE("one-hot weight picks the addressed pixel") {
    for (auto& v : m.embed.patch_w.data) v = 0.0;
    for (auto& v : m.embed.patch_b.data) v = 0.0;
    for (auto& v : m.embed.pos_template.data) v = 0.0;
    for (auto& v : m.embed.pos_search.data) v = 0.0;
    // output feature 0 reads channel 1, pixel (y=2, x=3) of each patch
    int p2 = 16 * 16;
    m.embed.patch_w.data[std::size_t(1 * p2 + 2 * 16 + 3) * 64 + 0] = 1.0;
    m.finalize();
    Image tmpl = random_image(32, 32, 3, 7);
    Image search = random_image(64, 64, 3, 8);
    Tensor tok = m.embed_pair(tmpl, search);
    // template patch (row 1, col 0) is token 2
    CHECK(tok.data[2 * 64 + 0] == doctest::Approx(tmpl.at(1, 1 * 16 + 2, 0 * 16 + 3)));
    // search patch (row 0, col 3) is token 4 + 3
    CHECK(tok.data[(4 + 3) * 64 + 0] == doctest::Approx(search.at(1, 0 * 16 + 2, 3 * 16 + 3)));
  }

  SUBCASE("single-channel input equals explicit 3-channel replication") {
    Image tmpl_g = random_image(32, 32, 1, 11);
    Image search_g = random_image(64, 64, 1, 12);
    auto replicate = [](const Image& g) {
      Image out = Image::zeros(3, g.h, g.w);
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < g.h; ++y)
          for (int x = 0; x < g.w; ++x) out.at(c, y, x) = g.at(0, y, x);
      return out;
    };
    Tensor gray = m.embed_pair(tmpl_g, search_g);
    Tensor full = m.embed_pair(replicate(tmpl_g), replicate(search_g));
    REQUIRE(gray.shape == full.shape);
    for (std::size_t i = 0; i < gray.data.size(); ++i)
      CHECK(gray.data[i] == doctest::Approx(full.data[i]).epsilon(1e-12));
  }

  SUBCASE("size and channel mismatches throw") {
    Image tmpl = random_image(32, 32, 3, 3);
    Image search = random_image(64, 64, 1, 4);
    CHECK_THROWS_AS(m.embed_pair(tmpl, search), std::invalid_argument);
    CHECK_THROWS_AS(m.embed_pair(random_image(16, 16, 3, 3), random_image(64, 64, 3, 4)),
                    std::invalid_argument);
  }
}

TEST_CASE("decode_box hand cases") {
  HeadMaps maps;
  maps.grid = 4;
  maps.score.assign(16, 0.1);
  maps.offset.assign(32, 0.0);
  maps.size.assign(32, 0.0);

  // peak at row 1, col 2 (index 6)
  maps.score[6] = 0.9;
  maps.offset[6] = 0.25;        // x offset
  maps.offset[16 + 6] = -0.5;   // y offset
  maps.size[6] = 0.5;           // width fraction
  maps.size[16 + 6] = 0.25;     // height fraction
  BBox b = decode_box(maps, 16, 64);
  CHECK(b.x == doctest::Approx(28.0));
  CHECK(b.y == doctest::Approx(8.0));
  CHECK(b.w == doctest::Approx(32.0));
  CHECK(b.h == doctest::Approx(16.0));

  // all-equal scores resolve to index 0
  maps.score.assign(16, 0.5);
  maps.offset.assign(32, 0.0);
  maps.size.assign(32, 0.0);
  maps.size[0] = 0.25;
  maps.size[16] = 0.5;
  b = decode_box(maps, 16, 64);
  CHECK(b.x == doctest::Approx(0.0));
  CHECK(b.y == doctest::Approx(-8.0));
  CHECK(b.w == doctest::Approx(16.0));
  CHECK(b.h == doctest::Approx(32.0));

  maps.score.resize(15);
  CHECK_THROWS_AS(decode_box(maps, 16, 64), std::invalid_argument);
}

TEST_CASE("zero-init adapters reproduce the adapter-free dual encoder exactly") {
  RunConfig cfg;  // toy BAT
  Model bat = Model::init(cfg);
  RunConfig base_cfg = cfg;
  base_cfg.variant = Variant::Baseline_Dual;
  Model base = Model::init(base_cfg);

  auto fg_bat = build_forward(bat);
  auto fg_base = build_forward(base);

  for (std::uint64_t trial = 0; trial < 3; ++trial) {
    Tensor tr = random_tokens(cfg, 100 + trial);
    Tensor tt = random_tokens(cfg, 200 + trial);
    run_forward(*fg_bat, tr, tt);
    run_forward(*fg_base, tr, tt);

    REQUIRE(fg_bat->states_rgb.size() == fg_base->states_rgb.size());
    for (std::size_t i = 0; i < fg_bat->states_rgb.size(); ++i) {
      CHECK(bits_equal(fg_bat->g.value(fg_bat->states_rgb[i]),
                       fg_base->g.value(fg_base->states_rgb[i])));
      CHECK(bits_equal(fg_bat->g.value(fg_bat->states_tir[i]),
                       fg_base->g.value(fg_base->states_tir[i])));
    }
    CHECK(bits_equal(fg_bat->g.value(fg_bat->score), fg_base->g.value(fg_base->score)));
    CHECK(bits_equal(fg_bat->g.value(fg_bat->offset), fg_base->g.value(fg_base->offset)));
    CHECK(bits_equal(fg_bat->g.value(fg_bat->size), fg_base->g.value(fg_base->size)));

    Prediction pa = predict(*fg_bat);
    Prediction pb = predict(*fg_base);
    CHECK(pa.box_crop.x == pb.box_crop.x);
    CHECK(pa.box_crop.y == pb.box_crop.y);
    CHECK(pa.box_crop.w == pb.box_crop.w);
    CHECK(pa.box_crop.h == pb.box_crop.h);
  }
}

TEST_CASE("shared BAT treats the streams symmetrically") {
  RunConfig cfg;  // toy BAT: one shared adapter per (layer, stage)
  Model m = Model::init(cfg);
  SplitMix64 rng(31);
  for (auto& ap : m.adapters)
    for (auto& v : ap.up_w.data) v = rng.gaussian() * 0.02;
  auto fg = build_forward(m);

  Tensor a = random_tokens(cfg, 1);
  Tensor b = random_tokens(cfg, 2);

  run_forward(*fg, a, b);
  auto score_ab = fg->g.value(fg->score);
  std::vector<double> saved(score_ab.begin(), score_ab.end());
  std::vector<double> rgb_states(fg->g.value(fg->states_rgb.back()).begin(),
                                 fg->g.value(fg->states_rgb.back()).end());

  run_forward(*fg, b, a);
  // streams swap roles...
  CHECK(bits_equal(fg->g.value(fg->states_tir.back()),
                   std::span<const double>(rgb_states)));
  // ...and the fused head sees the same sum.
  CHECK(bits_equal(fg->g.value(fg->score), std::span<const double>(saved)));
}

TEST_CASE("finite differences pass through the dual-stream layer") {
  RunConfig cfg = tiny_cfg(Variant::BAT);
  Model m = Model::init(cfg);
  SplitMix64 rng(77);
  for (auto& ap : m.adapters)
    for (auto& v : ap.up_w.data) v = rng.gaussian() * 0.05;

  auto fg = build_forward(m);
  Graph& g = fg->g;
  Value target = add(add(scalar_sum(fg->score), scalar_sum(fg->offset)),
                     scalar_sum(fg->size));
  run_forward(*fg, random_tokens(cfg, 3), random_tokens(cfg, 4));

  for (const char* name :
       {"adapter.1.att.down.w", "adapter.1.att.up.w", "adapter.1.mlp.mid.w",
        "adapter.1.mlp.up.b", "head.trunk.w", "head.score.b", "head.size.w"}) {
    double err = g.finite_diff_check(target, fg->params.at(name), 1e-5);
    INFO(name);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("gradients stop at the frozen backbone") {
  RunConfig cfg = tiny_cfg(Variant::BAT);
  Model m = Model::init(cfg);
  SplitMix64 rng(13);
  for (auto& ap : m.adapters)
    for (auto& v : ap.up_w.data) v = rng.gaussian() * 0.05;

  auto fg = build_forward(m);
  run_forward(*fg, random_tokens(cfg, 8), random_tokens(cfg, 9));

  std::vector<double> seed_s(fg->g.value(fg->score).size(), 1.0);
  std::vector<double> seed_o(fg->g.value(fg->offset).size(), 0.5);
  fg->g.backward_seeded({{fg->score, &seed_s}, {fg->offset, &seed_o}});
  fg->g.flush_leaf_grads(1.0);

  double adapter_mag = 0.0;
  for (double v : m.adapters[0].down_w.grad) adapter_mag += std::abs(v);
  CHECK(adapter_mag > 0.0);
  double head_mag = 0.0;
  for (double v : m.head.trunk_w.grad) head_mag += std::abs(v);
  CHECK(head_mag > 0.0);
  CHECK(m.layers[0].wq.grad.empty());
  CHECK(m.embed.patch_w.grad.empty());
}

TEST_CASE("baseline stream selection follows the score peaks, RGB on ties") {
  RunConfig cfg = tiny_cfg(Variant::Baseline_Dual);
  Model m = Model::init(cfg);
  auto fg = build_forward(m);
  REQUIRE(fg->has_stream_heads);

  // identical streams peak identically, so RGB must win
  Tensor same = random_tokens(cfg, 21);
  run_forward(*fg, same, same);
  CHECK(baseline_dual_predict(*fg).stream == 0);

  for (std::uint64_t t = 0; t < 5; ++t) {
    run_forward(*fg, random_tokens(cfg, 50 + t), random_tokens(cfg, 80 + t));
    auto sr = fg->g.value(fg->score_rgb);
    auto st = fg->g.value(fg->score_tir);
    double mr = *std::max_element(sr.begin(), sr.end());
    double mt = *std::max_element(st.begin(), st.end());
    Prediction p = baseline_dual_predict(*fg);
    CHECK(p.stream == (mt > mr ? 1 : 0));
    HeadMaps want = p.stream == 1 ? fg->maps_at(fg->score_tir, fg->offset_tir, fg->size_tir)
                                  : fg->maps_at(fg->score_rgb, fg->offset_rgb, fg->size_rgb);
    CHECK(bits_equal(std::span<const double>(p.maps.score),
                     std::span<const double>(want.score)));
  }

  RunConfig bat_cfg = tiny_cfg(Variant::BAT);
  Model bm = Model::init(bat_cfg);
  auto bat_fg = build_forward(bm);
  run_forward(*bat_fg, random_tokens(bat_cfg, 1), random_tokens(bat_cfg, 2));
  CHECK_THROWS_AS(baseline_dual_predict(*bat_fg), std::logic_error);
}

TEST_CASE("checkpoint round-trips the whole model") {
  for (Variant v : {Variant::BAT, Variant::BAT_Dual, Variant::BAT_RGB,
                    Variant::Baseline_Dual}) {
    RunConfig cfg = tiny_cfg(v);
    cfg.seed = 17;
    Model m = Model::init(cfg);
    SplitMix64 rng(5);
    for (auto& ap : m.adapters)
      for (auto& x : ap.up_w.data) x = rng.gaussian();

    Checkpoint ck = m.to_checkpoint();
    auto path = std::filesystem::temp_directory_path() / "bat_model_rt.ckpt";
    write_checkpoint(ck, path.string());
    Model r = Model::from_checkpoint(read_checkpoint(path.string()));

    CHECK(r.cfg.variant == v);
    CHECK(r.cfg.d_t == cfg.d_t);
    CHECK(r.cfg.seed == 17);
    CHECK(bits_equal(m.embed.patch_w, r.embed.patch_w));
    CHECK(bits_equal(m.layers[0].wo, r.layers[0].wo));
    CHECK(bits_equal(m.head.size_w, r.head.size_w));
    REQUIRE(m.adapters.size() == r.adapters.size());
    for (std::size_t i = 0; i < m.adapters.size(); ++i)
      CHECK(bits_equal(m.adapters[i].up_w, r.adapters[i].up_w));

    // loaded model computes the same maps
    auto fg_a = build_forward(m);
    auto fg_b = build_forward(r);
    Tensor tr = random_tokens(cfg, 400);
    Tensor tt = random_tokens(cfg, 401);
    run_forward(*fg_a, tr, tt);
    run_forward(*fg_b, tr, tt);
    CHECK(bits_equal(fg_a->g.value(fg_a->score), fg_b->g.value(fg_b->score)));
    std::filesystem::remove(path);
  }

  // name shape: shared vs direction-tagged entries
  RunConfig cfg = tiny_cfg(Variant::BAT);
  Checkpoint ck = Model::init(cfg).to_checkpoint();
  CHECK(ck.has("adapter.1.att.down.w"));
  CHECK_FALSE(ck.has("adapter.1.att.rgb2tir.down.w"));
  RunConfig dcfg = tiny_cfg(Variant::BAT_Dual);
  Checkpoint dck = Model::init(dcfg).to_checkpoint();
  CHECK(dck.has("adapter.1.att.rgb2tir.down.w"));
  CHECK(dck.has("adapter.1.mlp.tir2rgb.up.b"));
}

TEST_CASE("trainable tensor lists follow the freeze flags") {
  RunConfig cfg = tiny_cfg(Variant::BAT);
  Model m = Model::init(cfg);
  // 2 instances * 6 tensors + 8 head tensors
  CHECK(m.trainable_tensors().size() == 2 * 6 + 8);
  CHECK(m.head.trunk_w.requires_grad);
  CHECK_FALSE(m.layers[0].wq.requires_grad);

  cfg.freeze_head = true;
  Model froz = Model::init(cfg);
  CHECK(froz.trainable_tensors().size() == 2 * 6);
  CHECK_FALSE(froz.head.trunk_w.requires_grad);

  RunConfig base = tiny_cfg(Variant::Baseline_Dual);
  Model bm = Model::init(base);
  CHECK(bm.trainable_tensors().size() == 8);
}
