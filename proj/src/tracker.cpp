#include "bat/tracker.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <exception>
#include <filesystem>
#include <mutex>
#include <stdexcept>
#include <thread>
#include <vector>

#include "bat/loss.hpp"

namespace fs = std::filesystem;

namespace bat {

TemplateCrops make_template_crops(const RunConfig& cfg, const SequenceRecord& seq) {
  if (seq.visible.empty() || seq.infrared.empty())
    throw std::invalid_argument("sequence has no frames");
  if (seq.gt_visible.empty() || seq.gt_infrared.empty())
    throw std::invalid_argument("sequence has no frame-0 ground truth");
  TemplateCrops t;
  t.rgb = crop_and_resize(seq.visible[0], seq.gt_visible[0], kTemplateContext,
                          cfg.image_size_template);
  t.tir = crop_and_resize(seq.infrared[0], seq.gt_infrared[0], kTemplateContext,
                          cfg.image_size_template);
  return t;
}

Trainer::Trainer(Model& model, const std::vector<SequenceRecord>& data)
    : model_(model),
      data_(data),
      opt_(model.trainable_tensors(), model.cfg),
      rng_(hash64(model.cfg.seed)) {
  if (data_.empty()) throw std::invalid_argument("training needs at least one sequence");
  for (std::size_t i = 0; i < data_.size(); ++i) {
    const SequenceRecord& s = data_[i];
    if (s.visible.size() != s.infrared.size() || s.visible.size() != s.gt_visible.size() ||
        s.gt_visible.size() != s.gt_infrared.size())
      throw std::invalid_argument("sequence " + std::to_string(i) +
                                  " has mismatched frame/annotation counts");
    if (s.visible.size() < 2)
      throw std::invalid_argument("sequence " + std::to_string(i) +
                                  " has fewer than two frames");
    templates_.push_back(make_template_crops(model_.cfg, s));
  }
  fg_ = build_forward(model_);
}

TrainSample Trainer::next_sample() {
  const std::size_t si = std::size_t(rng_.index(std::int64_t(data_.size())));
  const SequenceRecord& seq = data_[si];
  const std::size_t f = 1 + std::size_t(rng_.index(std::int64_t(seq.visible.size()) - 1));
  const BBox& gt = seq.gt_visible[f];

  const double side = kSearchContext * std::sqrt(gt.w * gt.h);
  const double r = kTrainJitter * side;
  const double jx = rng_.uniform(-r, r);
  const double jy = rng_.uniform(-r, r);
  // Same shape as the ground truth, center shifted: the window side stays
  // 4*sqrt(w*h) while the target lands off-center, like it will at test time.
  const BBox around{gt.x + jx, gt.y + jy, gt.w, gt.h};

  CropWindow win;
  const Image sr =
      crop_and_resize(seq.visible[f], around, kSearchContext, model_.cfg.image_size_search, &win);
  const Image st =
      crop_and_resize(seq.infrared[f], around, kSearchContext, model_.cfg.image_size_search);

  TrainSample s;
  s.tokens_rgb = model_.embed_pair(templates_[si].rgb, sr);
  s.tokens_tir = model_.embed_pair(templates_[si].tir, st);
  s.gt_crop = win.to_crop(gt);
  return s;
}

double Trainer::step() {
  const int batch = model_.cfg.batch_size;
  if (batch < 1) throw std::invalid_argument("train step needs a non-empty batch");

  // Cosine decay from the configured rate to a tenth of it across the run;
  // the tail at low rate makes the endpoint repeatable across seeds instead
  // of a snapshot of wherever the noise happened to leave it.
  const double total = double(std::max(model_.cfg.steps, 1));
  const double frac = std::min(1.0, double(opt_.steps_taken()) / total);
  constexpr double kPi = 3.14159265358979323846;
  opt_.set_lr(model_.cfg.lr * (0.1 + 0.9 * 0.5 * (1.0 + std::cos(kPi * frac))));

  opt_.zero_grad();
  double loss_sum = 0.0;
  for (int b = 0; b < batch; ++b) {
    const TrainSample s = next_sample();
    run_forward(*fg_, s.tokens_rgb, s.tokens_tir);
    if (model_.cfg.variant == Variant::Baseline_Dual) {
      // No fused loss here: each stream's head answers for the same ground
      // truth and the two losses average, so both seed sets are halved.
      LossResult lr = compute_loss(fg_->maps_at(fg_->score_rgb, fg_->offset_rgb, fg_->size_rgb),
                                   s.gt_crop, model_.cfg);
      LossResult lt = compute_loss(fg_->maps_at(fg_->score_tir, fg_->offset_tir, fg_->size_tir),
                                   s.gt_crop, model_.cfg);
      for (auto* v : {&lr.seeds.d_score, &lr.seeds.d_offset, &lr.seeds.d_size, &lt.seeds.d_score,
                      &lt.seeds.d_offset, &lt.seeds.d_size})
        for (double& x : *v) x *= 0.5;
      fg_->g.backward_seeded({{fg_->score_rgb, &lr.seeds.d_score},
                              {fg_->offset_rgb, &lr.seeds.d_offset},
                              {fg_->size_rgb, &lr.seeds.d_size},
                              {fg_->score_tir, &lt.seeds.d_score},
                              {fg_->offset_tir, &lt.seeds.d_offset},
                              {fg_->size_tir, &lt.seeds.d_size}});
      loss_sum += 0.5 * (lr.parts.total + lt.parts.total);
    } else {
      LossResult res =
          compute_loss(fg_->maps_at(fg_->score, fg_->offset, fg_->size), s.gt_crop, model_.cfg);
      fg_->g.backward_seeded({{fg_->score, &res.seeds.d_score},
                              {fg_->offset, &res.seeds.d_offset},
                              {fg_->size, &res.seeds.d_size}});
      loss_sum += res.parts.total;
    }
    fg_->g.flush_leaf_grads(1.0 / batch);
  }
  opt_.step();
  return loss_sum / batch;
}

std::vector<BBox> track_sequence_with(const RunConfig& cfg, const SequenceRecord& seq,
                                      const CropPredictor& predictor) {
  const std::size_t n = seq.visible.size();
  if (n == 0) throw std::invalid_argument("cannot track an empty sequence");
  if (seq.infrared.size() != n || seq.gt_visible.empty() || seq.gt_infrared.empty())
    throw std::invalid_argument("sequence frames and ground truth are inconsistent");

  std::vector<BBox> out;
  out.reserve(n);
  out.push_back(seq.gt_visible[0]);  // frame 0 is given, not predicted
  for (std::size_t f = 1; f < n; ++f) {
    const BBox& prev = out.back();
    // A prediction clipped down to a sliver would make a degenerate window;
    // keep at least one pixel per side (center preserved) so the tracker can
    // still look somewhere.
    const double w = std::max(prev.w, 1.0), h = std::max(prev.h, 1.0);
    const BBox around{prev.cx() - w / 2.0, prev.cy() - h / 2.0, w, h};

    CropWindow win;
    const Image sr =
        crop_and_resize(seq.visible[f], around, kSearchContext, cfg.image_size_search, &win);
    const Image st =
        crop_and_resize(seq.infrared[f], around, kSearchContext, cfg.image_size_search);

    const BBox pred_crop = predictor(sr, st, win, int(f));
    out.push_back(
        clip_box(win.to_frame(pred_crop), double(seq.visible[f].w), double(seq.visible[f].h)));
  }
  return out;
}

std::vector<BBox> track_sequence(Model& m, ForwardGraph& fg, const SequenceRecord& seq) {
  const TemplateCrops tc = make_template_crops(m.cfg, seq);
  const bool baseline = m.cfg.variant == Variant::Baseline_Dual;
  return track_sequence_with(
      m.cfg, seq, [&](const Image& sr, const Image& st, const CropWindow&, int) {
        run_forward(fg, m.embed_pair(tc.rgb, sr), m.embed_pair(tc.tir, st));
        return (baseline ? baseline_dual_predict(fg) : predict(fg)).box_crop;
      });
}

std::vector<BBox> track_sequence(Model& m, const SequenceRecord& seq) {
  auto fg = build_forward(m);
  return track_sequence(m, *fg, seq);
}

std::vector<SequenceResult> track_dataset(const Model& m, const std::vector<SequenceRecord>& data,
                                          int jobs) {
  std::vector<SequenceResult> out(data.size());
  if (data.empty()) return out;
  jobs = std::clamp(jobs, 1, int(data.size()));

  // Each worker tracks on its own copy of the model: forward graphs keep
  // mutable references into model tensors, so one model cannot serve two
  // threads. Sequence results are independent of the schedule, which keeps
  // any job count byte-identical to jobs=1.
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr err;
  std::mutex err_mu;
  auto worker = [&] {
    try {
      Model local = m;
      auto fg = build_forward(local);
      for (std::size_t i = next.fetch_add(1); i < data.size() && !failed.load();
           i = next.fetch_add(1))
        out[i] = {data[i].name, track_sequence(local, *fg, data[i])};
    } catch (...) {
      std::lock_guard<std::mutex> lk(err_mu);
      if (!err) err = std::current_exception();
      failed.store(true);
    }
  };

  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(std::size_t(jobs));
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  if (err) std::rethrow_exception(err);
  return out;
}

void write_results(const std::vector<SequenceResult>& results, const std::string& dir) {
  fs::create_directories(dir);
  for (const SequenceResult& r : results) {
    if (r.name.empty()) throw std::invalid_argument("result entry has no sequence name");
    std::vector<BBox> rounded;
    rounded.reserve(r.boxes.size());
    for (const BBox& b : r.boxes)
      rounded.push_back(BBox{double(std::llround(b.x)), double(std::llround(b.y)),
                             double(std::llround(b.w)), double(std::llround(b.h))});
    write_box_lines((fs::path(dir) / (r.name + ".txt")).string(), rounded);
  }
}

std::vector<SequenceResult> read_results(const std::string& dir) {
  if (!fs::is_directory(dir))
    throw std::runtime_error("results dir " + dir + " is not a directory");
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".txt")
      names.push_back(e.path().stem().string());
  std::sort(names.begin(), names.end());
  if (names.empty()) throw std::runtime_error("no .txt result files under " + dir);

  std::vector<SequenceResult> out;
  out.reserve(names.size());
  for (const std::string& n : names)
    out.push_back({n, read_box_lines((fs::path(dir) / (n + ".txt")).string())});
  return out;
}

}  // namespace bat
