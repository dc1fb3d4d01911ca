#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "bat/box.hpp"
#include "bat/config.hpp"
#include "bat/image.hpp"
#include "bat/model.hpp"
#include "bat/optim.hpp"
#include "bat/rng.hpp"
#include "bat/synthdata.hpp"

namespace bat {

// Crop protocol, fixed for reproducibility: the template is cut once from
// frame 0 with context factor 2; search regions use factor 4, centered at the
// previous prediction (tracking) or at a jittered ground truth (training).
inline constexpr double kTemplateContext = 2.0;
inline constexpr double kSearchContext = 4.0;
// Training-time center jitter, as a fraction of the search-window side.
inline constexpr double kTrainJitter = 0.15;

// Per-modality template crops for one sequence, cut around each modality's
// frame-0 ground truth. Computed once per sequence and reused.
struct TemplateCrops {
  Image rgb, tir;
};
TemplateCrops make_template_crops(const RunConfig& cfg, const SequenceRecord& seq);

struct TrainSample {
  Tensor tokens_rgb, tokens_tir;  // (t_n, d_t)
  BBox gt_crop;                   // ground truth in search-crop pixels
};

// Runs training over an in-memory dataset. The forward graph is built once in
// the constructor; every sample only rebinds the token placeholders. The
// learning rate follows a cosine decay from cfg.lr down to cfg.lr / 10 over
// cfg.steps optimizer steps (steps beyond that stay at the floor).
class Trainer {
 public:
  // `model` and `data` must outlive the trainer. Throws std::invalid_argument
  // on an empty dataset or a sequence with fewer than two frames.
  Trainer(Model& model, const std::vector<SequenceRecord>& data);

  // Draws the next sample from the trainer's stream. Draw order per sample:
  // sequence index, frame index (uniform over frames >= 1), jitter x, jitter
  // y; the stream is seeded with hash64(cfg.seed) so it does not overlap the
  // parameter-init stream. Public so tests can replay the schedule.
  TrainSample next_sample();

  // One AdamW update over cfg.batch_size samples; gradients are averaged over
  // the batch. Returns the batch-mean total loss. Baseline-Dual has no fused
  // loss: each stream's head maps are scored against the same ground truth
  // and the two losses are averaged. Throws std::invalid_argument when
  // cfg.batch_size < 1.
  double step();

  std::int64_t steps_done() const { return opt_.steps_taken(); }

 private:
  Model& model_;
  const std::vector<SequenceRecord>& data_;
  std::vector<TemplateCrops> templates_;
  std::unique_ptr<ForwardGraph> fg_;
  AdamW opt_;
  SplitMix64 rng_;
};

// The sequence-level protocol, factored out so tests can inject an ideal
// predictor: frame 0 echoes the given ground truth; for each later frame the
// predictor receives the search crops plus their window and returns a box in
// search-crop pixels, which is mapped back to the frame and clipped.
using CropPredictor =
    std::function<BBox(const Image& search_rgb, const Image& search_tir, const CropWindow& win,
                       int frame)>;
std::vector<BBox> track_sequence_with(const RunConfig& cfg, const SequenceRecord& seq,
                                      const CropPredictor& predictor);

// Model-driven tracking. Adapter variants decode the fused head; Baseline-Dual
// takes the stream whose score peak is larger (RGB on ties). Deterministic
// given the model and sequence. The overload without a graph builds one.
std::vector<BBox> track_sequence(Model& m, ForwardGraph& fg, const SequenceRecord& seq);
std::vector<BBox> track_sequence(Model& m, const SequenceRecord& seq);

struct SequenceResult {
  std::string name;
  std::vector<BBox> boxes;
};

// Tracks every sequence. jobs > 1 runs sequences on worker threads, each with
// its own copy of the model; results are merged in dataset order, so the
// output is identical for any job count.
std::vector<SequenceResult> track_dataset(const Model& m, const std::vector<SequenceRecord>& data,
                                          int jobs = 1);

// One file per sequence under `dir`, named <name>.txt, one "x,y,w,h" line per
// frame: the ground-truth grammar. Coordinates are rounded to the nearest
// integer before writing. read_results loads every *.txt sorted by name.
void write_results(const std::vector<SequenceResult>& results, const std::string& dir);
std::vector<SequenceResult> read_results(const std::string& dir);

}  // namespace bat
