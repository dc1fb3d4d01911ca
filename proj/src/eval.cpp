#include "bat/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>

namespace bat {

std::vector<FrameScore> score_frames(const std::vector<BBox>& pred, const std::vector<BBox>& gt) {
  if (pred.size() != gt.size())
    throw std::invalid_argument("score_frames: " + std::to_string(pred.size()) +
                                " predictions vs " + std::to_string(gt.size()) +
                                " ground-truth frames");
  std::vector<FrameScore> out(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i)
    out[i] = {center_distance(pred[i], gt[i]), iou(pred[i], gt[i])};
  return out;
}

std::vector<FrameScore> score_frames_dual(const std::vector<BBox>& pred,
                                          const std::vector<BBox>& gt_rgb,
                                          const std::vector<BBox>& gt_tir) {
  if (pred.size() != gt_rgb.size() || pred.size() != gt_tir.size())
    throw std::invalid_argument("score_frames_dual: " + std::to_string(pred.size()) + " / " +
                                std::to_string(gt_rgb.size()) + " / " +
                                std::to_string(gt_tir.size()) + " frames do not agree");
  std::vector<FrameScore> out(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    out[i] = {std::min(center_distance(pred[i], gt_rgb[i]), center_distance(pred[i], gt_tir[i])),
              std::max(iou(pred[i], gt_rgb[i]), iou(pred[i], gt_tir[i]))};
  }
  return out;
}

std::vector<double> precision_curve(const std::vector<FrameScore>& scores) {
  if (scores.empty()) throw std::invalid_argument("precision_curve: no frames to evaluate");
  std::vector<double> pr(kPrPoints, 0.0);
  for (int t = 0; t < kPrPoints; ++t) {
    std::size_t hits = 0;
    for (const FrameScore& s : scores)
      if (s.center_err <= double(t)) ++hits;
    pr[std::size_t(t)] = double(hits) / double(scores.size());
  }
  return pr;
}

std::vector<double> success_curve(const std::vector<FrameScore>& scores) {
  if (scores.empty()) throw std::invalid_argument("success_curve: no frames to evaluate");
  std::vector<double> sr(kSrPoints, 0.0);
  for (int t = 0; t < kSrPoints; ++t) {
    const double theta = double(t) * 0.05;
    std::size_t hits = 0;
    for (const FrameScore& s : scores)
      if (s.iou > theta) ++hits;
    sr[std::size_t(t)] = double(hits) / double(scores.size());
  }
  return sr;
}

double pr_at_20(const std::vector<double>& pr) {
  if (pr.size() != std::size_t(kPrPoints))
    throw std::invalid_argument("pr_at_20: curve has " + std::to_string(pr.size()) + " points");
  return pr[20];
}

double sr_auc(const std::vector<double>& sr) {
  if (sr.size() != std::size_t(kSrPoints))
    throw std::invalid_argument("sr_auc: curve has " + std::to_string(sr.size()) + " points");
  double sum = 0.0;
  for (double v : sr) sum += v;
  return sum / double(kSrPoints);
}

MetricReport report_from_frames(const std::vector<BBox>& pred, const std::vector<BBox>& gt_rgb,
                                const std::vector<BBox>& gt_tir) {
  const auto single = score_frames(pred, gt_rgb);
  const auto dual = score_frames_dual(pred, gt_rgb, gt_tir);
  MetricReport rep;
  rep.pr = precision_curve(single);
  rep.sr = success_curve(single);
  rep.mpr = precision_curve(dual);
  rep.msr = success_curve(dual);
  rep.pr_at_20 = pr_at_20(rep.pr);
  rep.sr_auc = sr_auc(rep.sr);
  rep.mpr_at_20 = pr_at_20(rep.mpr);
  rep.msr_auc = sr_auc(rep.msr);
  return rep;
}

namespace {

struct MatchedPool {
  std::vector<BBox> pred, gt_rgb, gt_tir;
};

// Pools results[i] for the sequences `take` says yes to, after validating the
// name cover and per-sequence frame counts.
MatchedPool pool_frames(const std::vector<SequenceResult>& results,
                        const std::vector<SequenceRecord>& data,
                        const std::vector<bool>& take) {
  std::map<std::string, const SequenceRecord*> by_name;
  for (const SequenceRecord& d : data) {
    if (d.name.empty()) throw std::invalid_argument("dataset sequence without a name");
    if (!by_name.emplace(d.name, &d).second)
      throw std::invalid_argument("dataset has two sequences named " + d.name);
  }
  if (results.size() != data.size())
    throw std::invalid_argument("results cover " + std::to_string(results.size()) +
                                " sequences but the dataset has " + std::to_string(data.size()));

  MatchedPool pool;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const SequenceResult& r = results[i];
    auto it = by_name.find(r.name);
    if (it == by_name.end())
      throw std::invalid_argument("result " + r.name + " matches no dataset sequence");
    if (!seen.insert(r.name).second)
      throw std::invalid_argument("two results named " + r.name);
    const SequenceRecord& seq = *it->second;
    if (r.boxes.size() != seq.gt_visible.size())
      throw std::invalid_argument(r.name + ": result has " + std::to_string(r.boxes.size()) +
                                  " frames but the ground truth has " +
                                  std::to_string(seq.gt_visible.size()));
    if (!take[std::size_t(&seq - data.data())]) continue;
    pool.pred.insert(pool.pred.end(), r.boxes.begin(), r.boxes.end());
    pool.gt_rgb.insert(pool.gt_rgb.end(), seq.gt_visible.begin(), seq.gt_visible.end());
    pool.gt_tir.insert(pool.gt_tir.end(), seq.gt_infrared.begin(), seq.gt_infrared.end());
  }
  return pool;
}

}  // namespace

MetricReport evaluate_results(const std::vector<SequenceResult>& results,
                              const std::vector<SequenceRecord>& data) {
  const MatchedPool pool = pool_frames(results, data, std::vector<bool>(data.size(), true));
  return report_from_frames(pool.pred, pool.gt_rgb, pool.gt_tir);
}

std::map<std::string, MetricReport> attribute_report(const std::vector<SequenceResult>& results,
                                                     const std::vector<SequenceRecord>& data,
                                                     const std::vector<std::string>& filter) {
  std::set<std::string> present;
  for (const SequenceRecord& d : data) present.insert(d.attributes.begin(), d.attributes.end());

  std::vector<std::string> wanted = filter;
  if (wanted.empty()) {
    wanted.assign(present.begin(), present.end());
  } else {
    for (const std::string& f : wanted) {
      const bool known = present.count(f) ||
                         std::find(kAttributeVocabulary.begin(), kAttributeVocabulary.end(), f) !=
                             kAttributeVocabulary.end();
      if (!known) throw std::invalid_argument("unknown attribute " + f);
    }
  }

  std::map<std::string, MetricReport> out;
  for (const std::string& attr : wanted) {
    std::vector<bool> take(data.size(), false);
    bool any = false;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto& as = data[i].attributes;
      take[i] = std::find(as.begin(), as.end(), attr) != as.end();
      any |= take[i];
    }
    if (!any) continue;  // attributes nobody carries produce no row
    const MatchedPool pool = pool_frames(results, data, take);
    out[attr] = report_from_frames(pool.pred, pool.gt_rgb, pool.gt_tir);
  }
  return out;
}

namespace {

void write_rows(std::ofstream& out, const std::string& method, const std::string& variant,
                const std::string& tag, const MetricReport& rep) {
  const std::string suffix = tag.empty() ? "" : "[" + tag + "]";
  char buf[64];
  auto row = [&](const char* metric, const std::string& threshold, double value) {
    std::snprintf(buf, sizeof buf, "%.10g", value);
    out << method << ',' << variant << ',' << metric << suffix << ',' << threshold << ',' << buf
        << '\n';
  };
  for (int t = 0; t < kPrPoints; ++t) row("pr", std::to_string(t), rep.pr[std::size_t(t)]);
  for (int t = 0; t < kSrPoints; ++t) {
    std::snprintf(buf, sizeof buf, "%.2f", double(t) * 0.05);
    const std::string theta = buf;
    row("sr", theta, rep.sr[std::size_t(t)]);
  }
  for (int t = 0; t < kPrPoints; ++t) row("mpr", std::to_string(t), rep.mpr[std::size_t(t)]);
  for (int t = 0; t < kSrPoints; ++t) {
    std::snprintf(buf, sizeof buf, "%.2f", double(t) * 0.05);
    const std::string theta = buf;
    row("msr", theta, rep.msr[std::size_t(t)]);
  }
  row("pr_at_20", "20", rep.pr_at_20);
  row("sr_auc", "", rep.sr_auc);
  row("mpr_at_20", "20", rep.mpr_at_20);
  row("msr_auc", "", rep.msr_auc);
}

}  // namespace

void write_report_csv(const std::string& path, const std::string& method,
                      const std::string& variant, const MetricReport& overall,
                      const std::map<std::string, MetricReport>& by_attribute) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << "method,variant,metric,threshold,value\n";
  write_rows(out, method, variant, "", overall);
  for (const auto& [attr, rep] : by_attribute) write_rows(out, method, variant, attr, rep);
}

}  // namespace bat
