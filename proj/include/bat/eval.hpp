#pragma once

#include <map>
#include <string>
#include <vector>

#include "bat/box.hpp"
#include "bat/synthdata.hpp"
#include "bat/tracker.hpp"

namespace bat {

inline constexpr int kPrPoints = 51;  // center-error thresholds 0..50 px, step 1
inline constexpr int kSrPoints = 21;  // IoU thresholds 0..1, step 0.05

// Per-frame error measures. For dual ground truth the favorable value is kept
// per frame: the smaller center distance and the larger IoU.
struct FrameScore {
  double center_err = 0.0;
  double iou = 0.0;
};

// Throw std::invalid_argument on length mismatches.
std::vector<FrameScore> score_frames(const std::vector<BBox>& pred, const std::vector<BBox>& gt);
std::vector<FrameScore> score_frames_dual(const std::vector<BBox>& pred,
                                          const std::vector<BBox>& gt_rgb,
                                          const std::vector<BBox>& gt_tir);

// PR(tau) = fraction of frames with center error <= tau. SR(theta) = fraction
// with IoU strictly above theta, so identical boxes still miss the theta=1
// point and the SR headline (curve mean) tops out at 20/21. Both throw on an
// empty frame pool.
std::vector<double> precision_curve(const std::vector<FrameScore>& scores);
std::vector<double> success_curve(const std::vector<FrameScore>& scores);
double pr_at_20(const std::vector<double>& pr);
double sr_auc(const std::vector<double>& sr);

// The four curve families over one frame pool. PR/SR score against the
// visible-light ground truth; MPR/MSR take the per-frame favorable of the two
// modality ground truths, which makes them degenerate to PR/SR whenever the
// annotations agree.
struct MetricReport {
  std::vector<double> pr, sr, mpr, msr;
  double pr_at_20 = 0.0, sr_auc = 0.0;
  double mpr_at_20 = 0.0, msr_auc = 0.0;
};

MetricReport report_from_frames(const std::vector<BBox>& pred, const std::vector<BBox>& gt_rgb,
                                const std::vector<BBox>& gt_tir);

// Matches results to dataset sequences by name (the cover must be exact and
// frame counts must agree; violations throw with the sequence named) and
// pools every frame. Frame 0 is scored like any other.
MetricReport evaluate_results(const std::vector<SequenceResult>& results,
                              const std::vector<SequenceRecord>& data);

// Metrics recomputed over the union of frames of the sequences carrying each
// attribute. `filter` selects attributes (empty = every attribute present in
// the data); entries in neither the vocabulary nor the data throw. Attributes
// carried by no sequence produce no row.
std::map<std::string, MetricReport> attribute_report(
    const std::vector<SequenceResult>& results, const std::vector<SequenceRecord>& data,
    const std::vector<std::string>& filter = {});

// CSV rows "method,variant,metric,threshold,value": every curve point plus
// the four headlines, then the same for each attribute row with the tag
// folded into the metric name ("pr_at_20[LI]"). Curve thresholds double as
// plot coordinates, so the one file serves both the table and the plots.
void write_report_csv(const std::string& path, const std::string& method,
                      const std::string& variant, const MetricReport& overall,
                      const std::map<std::string, MetricReport>& by_attribute);

}  // namespace bat
