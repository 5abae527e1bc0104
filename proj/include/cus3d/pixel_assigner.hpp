#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cus3d/types.hpp"

namespace cus3d {

inline constexpr double kDefaultBeta = 0.5;

// Cosine-argmax classifier over text prototypes. Prototype norms are cached,
// so build one per TextPrototypes and reuse it. Ties go to the lowest index.
class Classifier {
 public:
  explicit Classifier(const TextPrototypes& text);

  // Throws ErrorKind::Numeric on a zero-norm input.
  std::int32_t classify(std::span<const float> f) const;
  std::size_t count() const { return norms_.size(); }

 private:
  const TextPrototypes* text_;
  std::vector<double> norms_;
};

// Indices j with row[j] > beta, ascending.
std::vector<std::size_t> candidate_masks(std::span<const float> row, double beta);

std::int32_t classify_embedding(std::span<const float> f, const TextPrototypes& text);

// Most frequent label; ties go to the lowest label. `labels` must be non-empty.
std::int32_t modal_label(std::span<const std::int32_t> labels);

struct VoteResult {
  std::int32_t label = kIgnoreLabel;
  std::vector<std::size_t> retained;  // positions in the candidate list, ascending
};

// Labels every candidate, keeps the modal label and the candidates that carry
// it. Throws on an empty list.
VoteResult vote_and_filter(std::span<const std::span<const float>> candidates, const TextPrototypes& text);

// Object-level 2D filter: per pixel, gather the embeddings of masks above beta,
// vote, drop the minority and average the rest.
PixelFeatureField assign_pixel_features(const FrameObservation& frame, const TextPrototypes& text,
                                        double beta = kDefaultBeta, int threads = 1);

// Mask-centred assignment used when the 2D filter is switched off: every pixel
// takes the embedding of the largest candidate mask (area = pixels above
// beta; ties to the lower mask index), with no voting.
PixelFeatureField assign_pixel_features_unfiltered(const FrameObservation& frame, const TextPrototypes& text,
                                                   double beta = kDefaultBeta, int threads = 1);

}  // namespace cus3d
