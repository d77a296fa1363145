#pragma once

#include <optional>
#include <string_view>
#include <vector>

#include "shortcutlab/numerics.hpp"
#include "shortcutlab/synth.hpp"

namespace shortcutlab {

// ---------------------------------------------------------------------------
// Targeted augmentations. Each one touches exactly one cue region of a
// sample: the watermark band, the background (complement of both masks), the
// co-object box, or the interior of the target mask.
// ---------------------------------------------------------------------------

enum class AugmentationKind {
  identity = 0,
  watermark_random,
  background_swap,
  coobject_swap,
  texture_randomize,
};

const char* augmentation_name(AugmentationKind k);
AugmentationKind augmentation_from_name(std::string_view name);

// Random training watermark: height fraction in [0.10, 0.22], stroke period
// in {2, 3, 4}, anchor uniform over placements where the band fits. Draws
// whose pixel realization coincides with the evaluation band are rejected
// and redrawn.
WatermarkParams draw_random_watermark(const DatasetConfig& cfg, RngStream& rng);

Sample apply_watermark_random(const DatasetConfig& cfg, const Sample& s, RngStream& rng);

// Replaces the background with the donor's background field; the sample's
// glyph and co-object pixels are kept through their masks. Cue labels and
// group follow the donor's background class.
Sample background_swap(const DatasetConfig& cfg, const Sample& s, const Sample& donor);

// Replaces the co-object box content: the sample's own background field plus
// the donor's co-object glyph through the donor's mask.
Sample coobject_swap(const DatasetConfig& cfg, const Sample& s, const Sample& donor);

// Replaces the pixels inside the target mask with seeded uniform noise,
// preserving the silhouette.
Sample texture_randomize(const DatasetConfig& cfg, const Sample& s, RngStream& rng);

// Uniform dispatch; donor may be null for kinds that do not use one.
Sample apply_augmentation(AugmentationKind kind, const DatasetConfig& cfg, const Sample& s,
                          const Sample* donor, RngStream& rng);

// ---------------------------------------------------------------------------
// Generic augmentations (category 1). These operate on flattened CHW batches
// and return possibly two-label targets with convex weights.
// ---------------------------------------------------------------------------

struct MixedBatch {
  Matrix images;
  std::vector<int> labels_a;
  std::vector<int> labels_b;
  std::vector<double> weight_a;  // weight on labels_a; labels_b gets 1 - w
};

double sample_beta(RngStream& rng, double a, double b);

// Convex pairs against a shuffled partner permutation; one Beta(alpha, alpha)
// lambda per batch. fixed_lambda bypasses the draw (the lambda = 1 endpoint
// leaves images unchanged).
MixedBatch mixup_batch(const Matrix& images, const std::vector<int>& labels, double alpha,
                       RngStream& rng, std::optional<double> fixed_lambda = {});

// Zeroes one random square of area fraction p per image; labels unchanged.
MixedBatch cutout_batch(const Matrix& images, const std::vector<int>& labels, std::size_t height,
                        std::size_t width, std::size_t channels, double p, RngStream& rng);

// Pastes one random rectangle (shared across the batch) from the partner
// image; label weight equals the actual pasted-area fraction.
MixedBatch cutmix_batch(const Matrix& images, const std::vector<int>& labels, std::size_t height,
                        std::size_t width, std::size_t channels, double alpha, RngStream& rng,
                        std::optional<double> fixed_lambda = {});

// Loss over two-label targets: mean over the batch of
// w * CE(logits, labels_a) + (1 - w) * CE(logits, labels_b).
LossResult mixed_cross_entropy(const Matrix& logits, const MixedBatch& batch);

}  // namespace shortcutlab
