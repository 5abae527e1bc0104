#include "cus3d/pixel_assigner.hpp"

#include <cmath>
#include <map>

#include "cus3d/error.hpp"
#include "cus3d/parallel.hpp"

namespace cus3d {

Classifier::Classifier(const TextPrototypes& text) : text_(&text), norms_(text.count()) {
  if (text.count() == 0) throw Error(ErrorKind::InvalidArgument, "no categories", "text");
  for (std::size_t c = 0; c < text.count(); ++c) {
    norms_[c] = norm(text.rows.row(c));
    if (norms_[c] == 0.0) throw Error(ErrorKind::Numeric, "zero-norm prototype " + std::to_string(c), "text");
  }
}

std::int32_t Classifier::classify(std::span<const float> f) const {
  if (f.size() != text_->dim()) throw Error(ErrorKind::InvalidArgument, "dimension mismatch", "embedding");
  const double nf = norm(f);
  if (nf == 0.0 || !std::isfinite(nf)) throw Error(ErrorKind::Numeric, "zero-norm or non-finite embedding", "embedding");
  std::int32_t best = 0;
  double best_cos = -INFINITY;
  for (std::size_t c = 0; c < norms_.size(); ++c) {
    const double cs = dot(f, text_->rows.row(c)) / (nf * norms_[c]);
    if (cs > best_cos) {
      best_cos = cs;
      best = static_cast<std::int32_t>(c);
    }
  }
  return best;
}

std::vector<std::size_t> candidate_masks(std::span<const float> row, double beta) {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < row.size(); ++j) {
    if (static_cast<double>(row[j]) > beta) out.push_back(j);
  }
  return out;
}

std::int32_t classify_embedding(std::span<const float> f, const TextPrototypes& text) {
  return Classifier(text).classify(f);
}

std::int32_t modal_label(std::span<const std::int32_t> labels) {
  if (labels.empty()) throw Error(ErrorKind::InvalidArgument, "empty label list");
  std::map<std::int32_t, std::size_t> counts;
  for (auto l : labels) ++counts[l];
  // Ascending key order plus strict '>' keeps the lowest label on ties.
  auto best = counts.begin();
  for (auto it = counts.begin(); it != counts.end(); ++it) {
    if (it->second > best->second) best = it;
  }
  return best->first;
}

VoteResult vote_and_filter(std::span<const std::span<const float>> candidates, const TextPrototypes& text) {
  if (candidates.empty()) throw Error(ErrorKind::InvalidArgument, "empty candidate list", "candidates");
  const Classifier clf(text);
  std::vector<std::int32_t> labels(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) labels[i] = clf.classify(candidates[i]);
  VoteResult r;
  r.label = modal_label(labels);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == r.label) r.retained.push_back(i);
  }
  return r;
}

namespace {

void check_frame(const FrameObservation& frame, const TextPrototypes& text) {
  if (frame.mask_probs.rows != frame.camera.pixel_count() || frame.mask_probs.cols != frame.mask_count()) {
    throw Error(ErrorKind::InvalidArgument, "mask_probs shape does not match frame", "mask_probs");
  }
  if (frame.mask_count() > 0 && frame.mask_embeddings.cols != text.dim()) {
    throw Error(ErrorKind::InvalidArgument, "mask embedding dimension differs from text", "mask_embeddings");
  }
}

std::vector<std::int32_t> mask_labels(const FrameObservation& frame, const Classifier& clf) {
  std::vector<std::int32_t> labels(frame.mask_count());
  for (std::size_t j = 0; j < labels.size(); ++j) labels[j] = clf.classify(frame.mask_embeddings.row(j));
  return labels;
}

}  // namespace

PixelFeatureField assign_pixel_features(const FrameObservation& frame, const TextPrototypes& text, double beta,
                                        int threads) {
  check_frame(frame, text);
  const Classifier clf(text);
  // Every candidate of a pixel is a mask embedding, so labelling each mask
  // once is equivalent to labelling each candidate.
  const auto labels = mask_labels(frame, clf);
  const std::size_t npix = frame.camera.pixel_count();
  const std::size_t d = text.dim();
  const std::size_t ncls = text.count();
  PixelFeatureField out(npix, d);

  parallel_for(npix, threads, [&](std::size_t begin, std::size_t end) {
    std::vector<std::size_t> counts(ncls);
    std::vector<double> acc(d);
    for (std::size_t p = begin; p < end; ++p) {
      const auto cands = candidate_masks(frame.mask_probs.row(p), beta);
      if (cands.empty()) continue;
      std::fill(counts.begin(), counts.end(), 0);
      for (auto j : cands) ++counts[static_cast<std::size_t>(labels[j])];
      std::size_t label = 0;
      for (std::size_t c = 1; c < ncls; ++c) {
        if (counts[c] > counts[label]) label = c;
      }
      std::fill(acc.begin(), acc.end(), 0.0);
      std::size_t kept = 0;
      for (auto j : cands) {
        if (labels[j] != static_cast<std::int32_t>(label)) continue;
        const auto e = frame.mask_embeddings.row(j);
        for (std::size_t k = 0; k < d; ++k) acc[k] += e[k];
        ++kept;
      }
      auto f = out.features.row(p);
      for (std::size_t k = 0; k < d; ++k) f[k] = static_cast<float>(acc[k] / static_cast<double>(kept));
      out.valid[p] = 1;
      out.labels[p] = static_cast<std::int32_t>(label);
    }
  });
  return out;
}

PixelFeatureField assign_pixel_features_unfiltered(const FrameObservation& frame, const TextPrototypes& text,
                                                   double beta, int threads) {
  check_frame(frame, text);
  const Classifier clf(text);
  const auto labels = mask_labels(frame, clf);
  const std::size_t npix = frame.camera.pixel_count();
  const std::size_t m = frame.mask_count();
  const std::size_t d = text.dim();

  std::vector<std::size_t> area(m, 0);
  for (std::size_t p = 0; p < npix; ++p) {
    const auto row = frame.mask_probs.row(p);
    for (std::size_t j = 0; j < m; ++j) area[j] += static_cast<double>(row[j]) > beta ? 1 : 0;
  }

  PixelFeatureField out(npix, d);
  parallel_for(npix, threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t p = begin; p < end; ++p) {
      const auto cands = candidate_masks(frame.mask_probs.row(p), beta);
      if (cands.empty()) continue;
      std::size_t pick = cands.front();
      for (auto j : cands) {
        if (area[j] > area[pick]) pick = j;
      }
      const auto e = frame.mask_embeddings.row(pick);
      std::copy(e.begin(), e.end(), out.features.row(p).begin());
      out.valid[p] = 1;
      out.labels[p] = labels[pick];
    }
  });
  return out;
}

}  // namespace cus3d
