#include "cus3d/semantics.hpp"

#include <cmath>
#include <limits>

#include <json.hpp>

#include "cus3d/error.hpp"
#include "cus3d/parallel.hpp"
#include "cus3d/pixel_assigner.hpp"

namespace cus3d {

LabelMap classify_points(const PointFeatureField& field, const TextPrototypes& text, int threads) {
  const Classifier clf(text);
  LabelMap out(field.size(), kIgnoreLabel);
  parallel_for(field.size(), threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      if (field.valid[i]) out[i] = clf.classify(field.features.row(i));
    }
  });
  return out;
}

std::vector<float> query_similarity(const PointFeatureField& field, std::span<const float> query) {
  if (query.size() != field.dim()) throw Error(ErrorKind::InvalidArgument, "query dimension differs from field", "query");
  const double nq = norm(query);
  if (nq == 0.0 || !std::isfinite(nq)) throw Error(ErrorKind::Numeric, "zero-norm query", "query");
  std::vector<float> out(field.size(), std::numeric_limits<float>::quiet_NaN());
  for (std::size_t i = 0; i < field.size(); ++i) {
    if (!field.valid[i]) continue;
    const auto f = field.features.row(i);
    const double nf = norm(f);
    out[i] = nf == 0.0 ? 0.0f : static_cast<float>(dot(f, query) / (nf * nq));
  }
  return out;
}

EvalReport evaluate(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt, std::size_t classes,
                    std::int32_t ignore) {
  if (pred.size() != gt.size()) {
    throw Error(ErrorKind::InvalidArgument,
                "length mismatch: " + std::to_string(pred.size()) + " predictions vs " + std::to_string(gt.size()) +
                    " ground-truth labels",
                "labels");
  }
  if (classes == 0) throw Error(ErrorKind::InvalidArgument, "need at least one class", "classes");
  const auto C = static_cast<std::int32_t>(classes);
  EvalReport r;
  r.classes = classes;
  r.confusion.assign(classes * (classes + 1), 0);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const auto g = gt[i];
    if (g == ignore) continue;
    if (g < 0 || g >= C) throw Error(ErrorKind::InvalidArgument, "ground-truth label out of range", "gt");
    const auto p = pred[i];
    std::size_t col;
    if (p == ignore || p == kIgnoreLabel) {
      col = classes;
    } else if (p >= 0 && p < C) {
      col = static_cast<std::size_t>(p);
    } else {
      throw Error(ErrorKind::InvalidArgument, "predicted label out of range", "pred");
    }
    ++r.confusion[static_cast<std::size_t>(g) * (classes + 1) + col];
    ++r.counted;
  }

  std::uint64_t trace = 0;
  r.per_class_iou.assign(classes, std::numeric_limits<double>::quiet_NaN());
  r.defined.assign(classes, 0);
  double iou_sum = 0.0;
  std::size_t iou_n = 0;
  double cacc_sum = 0.0;
  std::size_t cacc_n = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    const std::uint64_t tp = r.at(c, c);
    trace += tp;
    std::uint64_t row = 0;
    for (std::size_t j = 0; j <= classes; ++j) row += r.confusion[c * (classes + 1) + j];
    std::uint64_t col = 0;
    for (std::size_t g = 0; g < classes; ++g) col += r.at(g, c);
    const std::uint64_t fn = row - tp;
    const std::uint64_t fp = col - tp;
    const std::uint64_t denom = tp + fp + fn;
    if (denom > 0) {
      r.per_class_iou[c] = static_cast<double>(tp) / static_cast<double>(denom);
      r.defined[c] = 1;
      iou_sum += r.per_class_iou[c];
      ++iou_n;
    }
    if (row > 0) {
      cacc_sum += static_cast<double>(tp) / static_cast<double>(row);
      ++cacc_n;
    }
  }
  r.acc = r.counted ? static_cast<double>(trace) / static_cast<double>(r.counted) : 0.0;
  r.miou = iou_n ? iou_sum / static_cast<double>(iou_n) : 0.0;
  r.mean_class_acc = cacc_n ? cacc_sum / static_cast<double>(cacc_n) : 0.0;
  return r;
}

double subset_miou(const EvalReport& report, std::span<const std::int32_t> classes) {
  double sum = 0.0;
  std::size_t n = 0;
  for (auto c : classes) {
    if (c < 0 || static_cast<std::size_t>(c) >= report.classes) {
      throw Error(ErrorKind::InvalidArgument, "class index out of range", "split");
    }
    if (!report.defined[static_cast<std::size_t>(c)]) continue;
    sum += report.per_class_iou[static_cast<std::size_t>(c)];
    ++n;
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

void attach_split(EvalReport& report, std::span<const std::int32_t> unseen) {
  SplitReport s;
  std::vector<std::uint8_t> is_unseen(report.classes, 0);
  for (auto c : unseen) {
    if (c < 0 || static_cast<std::size_t>(c) >= report.classes) {
      throw Error(ErrorKind::InvalidArgument, "unseen class index out of range", "unseen");
    }
    is_unseen[static_cast<std::size_t>(c)] = 1;
  }
  for (std::size_t c = 0; c < report.classes; ++c) {
    (is_unseen[c] ? s.unseen : s.seen).push_back(static_cast<std::int32_t>(c));
  }
  s.miou_seen = subset_miou(report, s.seen);
  s.miou_unseen = subset_miou(report, s.unseen);
  if (s.miou_seen > 0.0 || s.miou_unseen > 0.0) s.hiou = hiou(s.miou_seen, s.miou_unseen);
  report.split = std::move(s);
}

double hiou(double miou_seen, double miou_unseen) {
  if (!(miou_seen >= 0.0) || !(miou_unseen >= 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "mIoU values must be non-negative", "hiou");
  }
  if (miou_seen == 0.0 && miou_unseen == 0.0) {
    throw Error(ErrorKind::InvalidArgument, "harmonic mean undefined when both inputs are zero", "hiou");
  }
  return 2.0 * miou_seen * miou_unseen / (miou_seen + miou_unseen);
}

std::string report_to_json(const EvalReport& r, std::span<const std::string> names) {
  using nlohmann::json;
  const auto name_of = [&](std::size_t c) { return c < names.size() ? names[c] : "class_" + std::to_string(c); };
  json j;
  j["classes"] = r.classes;
  j["counted_points"] = r.counted;
  j["acc"] = r.acc;
  j["mean_class_acc"] = r.mean_class_acc;
  j["miou"] = r.miou;
  json iou = json::object();
  for (std::size_t c = 0; c < r.classes; ++c) {
    iou[name_of(c)] = r.defined[c] ? json(r.per_class_iou[c]) : json(nullptr);
  }
  j["per_class_iou"] = std::move(iou);
  json conf = json::array();
  for (std::size_t g = 0; g < r.classes; ++g) {
    json row = json::array();
    for (std::size_t p = 0; p <= r.classes; ++p) row.push_back(r.confusion[g * (r.classes + 1) + p]);
    conf.push_back(std::move(row));
  }
  j["confusion"] = std::move(conf);
  j["confusion_columns"] = "predicted class 0..C-1, then rejected (invalid prediction)";
  if (r.split) {
    json s;
    json seen = json::array();
    json unseen = json::array();
    for (auto c : r.split->seen) seen.push_back(name_of(static_cast<std::size_t>(c)));
    for (auto c : r.split->unseen) unseen.push_back(name_of(static_cast<std::size_t>(c)));
    s["seen"] = std::move(seen);
    s["unseen"] = std::move(unseen);
    s["miou_seen"] = r.split->miou_seen;
    s["miou_unseen"] = r.split->miou_unseen;
    s["hiou"] = r.split->hiou ? json(*r.split->hiou) : json(nullptr);
    j["split"] = std::move(s);
  }
  return j.dump(2) + "\n";
}

}  // namespace cus3d
