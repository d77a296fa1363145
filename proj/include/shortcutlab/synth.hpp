#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "shortcutlab/common.hpp"
#include "shortcutlab/numerics.hpp"

namespace shortcutlab {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

// A spurious cue channel. rho = P(cue class == target class | target class)
// in the training split; val and test are always balanced at 0.5.
struct CueSpec {
  std::string name;
  double rho = 0.95;
};

struct DatasetConfig {
  std::uint64_t master_seed = 17;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 3;
  std::size_t classes = 2;
  std::size_t train_per_class = 4000;
  std::size_t val_total = 500;
  std::size_t test_total = 500;
  double noise_sigma = 0.05;
  // "background" and "coobject" are required; "watermark" is optional and,
  // when present, puts the band on cue class 0.
  std::vector<CueSpec> cues = {{"background", 0.95}, {"coobject", 0.95}};

  void validate() const;
};

enum class Split { train = 0, val = 1, test = 2 };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    default: return "test";
  }
}

// ---------------------------------------------------------------------------
// Samples and groups
// ---------------------------------------------------------------------------

struct Sample {
  int y = 0;
  std::vector<int> cue_labels;  // one per config cue, in config order
  int group = 0;
  std::uint64_t sample_seed = 0;
  std::vector<float> image;              // CHW, values in [0, 1]
  std::vector<std::uint8_t> target_mask;    // HW, 0/1
  std::vector<std::uint8_t> coobject_mask;  // HW, 0/1
};

// Group index = (y << K) | bits, where bit k is set iff cue k matches y.
int group_of(const DatasetConfig& cfg, int y, const std::vector<int>& cue_labels);
std::size_t num_groups(const DatasetConfig& cfg);
int cue_index(const DatasetConfig& cfg, std::string_view name);  // -1 if absent

struct Dataset {
  DatasetConfig config;
  std::vector<Sample> train, val, test;

  const std::vector<Sample>& split(Split s) const {
    switch (s) {
      case Split::train: return train;
      case Split::val: return val;
      default: return test;
    }
  }
};

// ---------------------------------------------------------------------------
// Allocation
// ---------------------------------------------------------------------------

// Integer allocation of `total` over `probs` by largest remainder. Ties in the
// fractional part are broken toward the lower index.
std::vector<std::size_t> allocate_largest_remainder(std::size_t total,
                                                    const std::vector<double>& probs);

// Exact per-group sample counts for a split, indexed by group index.
std::vector<std::size_t> plan_group_counts(const DatasetConfig& cfg, Split split);

// Training group counts normalized to frequencies; the I.D. accuracy weights.
std::vector<double> train_group_frequencies(const DatasetConfig& cfg);

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

// Fixed image layout: centered target glyph box (half the short side) and the
// right-third co-object box (quarter of the short side, flush right).
struct Layout {
  std::size_t glyph_side, glyph_x0, glyph_y0;
  std::size_t co_side, co_x0, co_y0;
};

Layout layout_of(const DatasetConfig& cfg);

// Pixel-space watermark band. Fractions are relative to image height/width;
// the band spans from the anchor column to the right edge.
struct WatermarkParams {
  double anchor_x_frac = 0.01;
  double anchor_y_frac = 0.40;
  double height_frac = 0.16;
  int stroke_period = 3;
  double alpha = 128.0 / 255.0;
};

WatermarkParams eval_watermark_params();

// Alpha-composites the band pattern (vertical strokes plus a horizontal
// midline) in white over a CHW image: out = (1 - alpha) * src + alpha.
void composite_watermark(std::vector<float>& image, std::size_t height, std::size_t width,
                         std::size_t channels, const WatermarkParams& params);

// Full-canvas background field for one class (stripes for class 0,
// checkerboard for class 1), phase-jittered and noised from streams derived
// from sample_seed.
std::vector<float> render_background(const DatasetConfig& cfg, int bg_class,
                                     std::uint64_t sample_seed);

// Paints the co-object glyph (triangle for class 0, ring for class 1) into
// `image` at the fixed right-third anchor and fills `mask`.
void render_coobject(const DatasetConfig& cfg, int co_class, std::uint64_t sample_seed,
                     std::vector<float>& image, std::vector<std::uint8_t>& mask);

// Renders a complete sample: background, center target glyph (disc/cross),
// co-object, optional watermark band, with Gaussian pixel noise everywhere.
Sample render_sample(const DatasetConfig& cfg, int y, const std::vector<int>& cue_labels,
                     std::uint64_t sample_seed);

// ---------------------------------------------------------------------------
// Dataset generation and storage
// ---------------------------------------------------------------------------

Dataset generate_dataset(const DatasetConfig& cfg);

// Directory format "shortcutlab-ds-v1": manifest.json plus samples.bin
// (little-endian float32 images, byte-packed masks, labels), with an FNV-1a
// content hash recorded in the manifest.
void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

// Per-split group counts actually present in a sample list.
std::vector<std::size_t> count_groups(const DatasetConfig& cfg, const std::vector<Sample>& split);

// ---------------------------------------------------------------------------
// Hashing helpers (shared with checkpoints and configs)
// ---------------------------------------------------------------------------

std::uint64_t fnv1a64(const unsigned char* data, std::size_t n,
                      std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);
std::uint64_t config_hash(const DatasetConfig& cfg);

}  // namespace shortcutlab
