#include "shortcutlab/augment.hpp"

#include <cmath>
#include <cstring>
#include <numeric>

namespace shortcutlab {

// ---------------------------------------------------------------------------
// Names
// ---------------------------------------------------------------------------

const char* augmentation_name(AugmentationKind k) {
  switch (k) {
    case AugmentationKind::identity: return "identity";
    case AugmentationKind::watermark_random: return "watermark_random";
    case AugmentationKind::background_swap: return "background_swap";
    case AugmentationKind::coobject_swap: return "coobject_swap";
    case AugmentationKind::texture_randomize: return "texture_randomize";
  }
  throw ConfigError("augmentation_name: unknown kind");
}

AugmentationKind augmentation_from_name(std::string_view name) {
  for (AugmentationKind k :
       {AugmentationKind::identity, AugmentationKind::watermark_random,
        AugmentationKind::background_swap, AugmentationKind::coobject_swap,
        AugmentationKind::texture_randomize}) {
    if (name == augmentation_name(k)) return k;
  }
  throw ConfigError("augmentation_from_name: unknown kind '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Targeted augmentations
// ---------------------------------------------------------------------------

namespace {

struct BandPixels {
  long x0, y0, h;
  int period;
};

BandPixels realize(const WatermarkParams& p, std::size_t height, std::size_t width) {
  BandPixels b;
  b.x0 = std::lround(p.anchor_x_frac * static_cast<double>(width));
  b.y0 = std::lround(p.anchor_y_frac * static_cast<double>(height));
  b.h = std::lround(p.height_frac * static_cast<double>(height));
  b.period = p.stroke_period;
  return b;
}

void check_same_geometry(const DatasetConfig& cfg, const Sample& a, const Sample& b,
                         const char* where) {
  if (a.image.size() != b.image.size() || a.cue_labels.size() != cfg.cues.size() ||
      b.cue_labels.size() != cfg.cues.size())
    throw ConfigError(std::string(where) + ": sample/donor geometry mismatch");
}

// Re-applies the sample's watermark band, restricted to pixels selected by
// `keep`. Used after region replacement so wm-enabled samples stay coherent.
template <typename Keep>
void reband(const DatasetConfig& cfg, const Sample& s, std::vector<float>& image, Keep keep) {
  int wm = cue_index(cfg, "watermark");
  if (wm < 0 || s.cue_labels[static_cast<std::size_t>(wm)] != 0) return;
  std::vector<float> banded = image;
  composite_watermark(banded, cfg.height, cfg.width, cfg.channels, eval_watermark_params());
  for (std::size_t c = 0; c < cfg.channels; ++c)
    for (std::size_t y = 0; y < cfg.height; ++y)
      for (std::size_t x = 0; x < cfg.width; ++x) {
        if (!keep(y, x)) continue;
        std::size_t i = (c * cfg.height + y) * cfg.width + x;
        image[i] = banded[i];
      }
}

}  // namespace

WatermarkParams draw_random_watermark(const DatasetConfig& cfg, RngStream& rng) {
  double h_d = static_cast<double>(cfg.height);
  double w_d = static_cast<double>(cfg.width);
  BandPixels eval = realize(eval_watermark_params(), cfg.height, cfg.width);

  for (int attempt = 0; attempt < 10000; ++attempt) {
    WatermarkParams p;
    p.height_frac = rng.next_uniform(0.10, 0.22);
    p.stroke_period = 2 + static_cast<int>(rng.next_index(3));
    long h = std::lround(p.height_frac * h_d);
    std::size_t y0 = rng.next_index(cfg.height - static_cast<std::size_t>(h) + 1);
    std::size_t max_x0 = cfg.width >= 4 ? cfg.width - 3 : 1;
    std::size_t x0 = rng.next_index(max_x0);
    p.anchor_x_frac = static_cast<double>(x0) / w_d;
    p.anchor_y_frac = static_cast<double>(y0) / h_d;
    BandPixels got = realize(p, cfg.height, cfg.width);
    if (got.x0 == eval.x0 && got.y0 == eval.y0 && got.h == eval.h && got.period == eval.period)
      continue;
    return p;
  }
  throw TrainingError("draw_random_watermark: rejection sampling failed");
}

Sample apply_watermark_random(const DatasetConfig& cfg, const Sample& s, RngStream& rng) {
  Sample out = s;
  WatermarkParams p = draw_random_watermark(cfg, rng);
  composite_watermark(out.image, cfg.height, cfg.width, cfg.channels, p);
  return out;
}

Sample background_swap(const DatasetConfig& cfg, const Sample& s, const Sample& donor) {
  check_same_geometry(cfg, s, donor, "background_swap");
  int bg = cue_index(cfg, "background");

  Sample out = s;
  std::vector<float> field =
      render_background(cfg, donor.cue_labels[static_cast<std::size_t>(bg)], donor.sample_seed);
  auto outside_masks = [&](std::size_t y, std::size_t x) {
    std::size_t m = y * cfg.width + x;
    return !s.target_mask[m] && !s.coobject_mask[m];
  };
  for (std::size_t c = 0; c < cfg.channels; ++c)
    for (std::size_t y = 0; y < cfg.height; ++y)
      for (std::size_t x = 0; x < cfg.width; ++x) {
        if (!outside_masks(y, x)) continue;
        std::size_t i = (c * cfg.height + y) * cfg.width + x;
        out.image[i] = field[i];
      }
  reband(cfg, s, out.image, outside_masks);

  out.cue_labels[static_cast<std::size_t>(bg)] = donor.cue_labels[static_cast<std::size_t>(bg)];
  out.group = group_of(cfg, out.y, out.cue_labels);
  return out;
}

Sample coobject_swap(const DatasetConfig& cfg, const Sample& s, const Sample& donor) {
  check_same_geometry(cfg, s, donor, "coobject_swap");
  int bg = cue_index(cfg, "background");
  int co = cue_index(cfg, "coobject");
  Layout l = layout_of(cfg);

  // The donor's glyph re-rendered clean: identical pixels to the donor's own
  // in-mask content before any watermark banding.
  std::vector<float> donor_glyph(cfg.channels * cfg.height * cfg.width, 0.0f);
  std::vector<std::uint8_t> donor_mask(cfg.height * cfg.width, 0);
  render_coobject(cfg, donor.cue_labels[static_cast<std::size_t>(co)], donor.sample_seed,
                  donor_glyph, donor_mask);

  Sample out = s;
  std::vector<float> field =
      render_background(cfg, s.cue_labels[static_cast<std::size_t>(bg)], s.sample_seed);
  auto in_box = [&](std::size_t y, std::size_t x) {
    return y >= l.co_y0 && y < l.co_y0 + l.co_side && x >= l.co_x0 && x < l.co_x0 + l.co_side;
  };
  for (std::size_t c = 0; c < cfg.channels; ++c)
    for (std::size_t y = l.co_y0; y < l.co_y0 + l.co_side; ++y)
      for (std::size_t x = l.co_x0; x < l.co_x0 + l.co_side; ++x) {
        std::size_t i = (c * cfg.height + y) * cfg.width + x;
        out.image[i] = donor_mask[y * cfg.width + x] ? donor_glyph[i] : field[i];
      }
  reband(cfg, s, out.image, in_box);

  out.coobject_mask = donor_mask;
  out.cue_labels[static_cast<std::size_t>(co)] = donor.cue_labels[static_cast<std::size_t>(co)];
  out.group = group_of(cfg, out.y, out.cue_labels);
  return out;
}

Sample texture_randomize(const DatasetConfig& cfg, const Sample& s, RngStream& rng) {
  Sample out = s;
  for (std::size_t y = 0; y < cfg.height; ++y)
    for (std::size_t x = 0; x < cfg.width; ++x) {
      if (!s.target_mask[y * cfg.width + x]) continue;
      for (std::size_t c = 0; c < cfg.channels; ++c)
        out.image[(c * cfg.height + y) * cfg.width + x] = static_cast<float>(rng.next_uniform());
    }
  return out;
}

Sample apply_augmentation(AugmentationKind kind, const DatasetConfig& cfg, const Sample& s,
                          const Sample* donor, RngStream& rng) {
  switch (kind) {
    case AugmentationKind::identity: return s;
    case AugmentationKind::watermark_random: return apply_watermark_random(cfg, s, rng);
    case AugmentationKind::background_swap:
      if (!donor) throw ConfigError("apply_augmentation: background_swap needs a donor");
      return background_swap(cfg, s, *donor);
    case AugmentationKind::coobject_swap:
      if (!donor) throw ConfigError("apply_augmentation: coobject_swap needs a donor");
      return coobject_swap(cfg, s, *donor);
    case AugmentationKind::texture_randomize: return texture_randomize(cfg, s, rng);
  }
  throw ConfigError("apply_augmentation: unknown kind");
}

// ---------------------------------------------------------------------------
// Category 1 batch augmentations
// ---------------------------------------------------------------------------

namespace {

double sample_gamma(RngStream& rng, double shape) {
  if (shape < 1.0) {
    // Boost to shape + 1, then scale down by U^{1/shape}.
    double u = 1.0 - rng.next_uniform();  // (0, 1]
    return sample_gamma(rng, shape + 1.0) * std::pow(u, 1.0 / shape);
  }
  // Marsaglia-Tsang squeeze.
  double d = shape - 1.0 / 3.0;
  double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = rng.next_normal();
    double t = 1.0 + c * x;
    if (t <= 0.0) continue;
    double v = t * t * t;
    double u = rng.next_uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (std::log(std::max(u, 1e-300)) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

std::vector<std::size_t> partner_permutation(std::size_t n, RngStream& rng) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  return perm;
}

}  // namespace

double sample_beta(RngStream& rng, double a, double b) {
  if (a <= 0.0 || b <= 0.0) throw ConfigError("sample_beta: shape parameters must be positive");
  double ga = sample_gamma(rng, a);
  double gb = sample_gamma(rng, b);
  double total = ga + gb;
  if (total <= 0.0) return 0.5;
  return ga / total;
}

MixedBatch mixup_batch(const Matrix& images, const std::vector<int>& labels, double alpha,
                       RngStream& rng, std::optional<double> fixed_lambda) {
  if (labels.size() != images.rows) throw ConfigError("mixup_batch: label count mismatch");
  if (!fixed_lambda && alpha <= 0.0) throw ConfigError("mixup_batch: alpha must be positive");

  std::vector<std::size_t> perm = partner_permutation(images.rows, rng);
  double lam = fixed_lambda ? *fixed_lambda : sample_beta(rng, alpha, alpha);

  MixedBatch out;
  out.images = Matrix(images.rows, images.cols);
  out.labels_a = labels;
  out.labels_b.resize(labels.size());
  out.weight_a.assign(labels.size(), lam);
  for (std::size_t i = 0; i < images.rows; ++i) {
    out.labels_b[i] = labels[perm[i]];
    const double* xi = images.row(i);
    const double* xj = images.row(perm[i]);
    double* oi = out.images.row(i);
    for (std::size_t k = 0; k < images.cols; ++k) oi[k] = lam * xi[k] + (1.0 - lam) * xj[k];
  }
  return out;
}

MixedBatch cutout_batch(const Matrix& images, const std::vector<int>& labels, std::size_t height,
                        std::size_t width, std::size_t channels, double p, RngStream& rng) {
  if (labels.size() != images.rows) throw ConfigError("cutout_batch: label count mismatch");
  if (images.cols != channels * height * width)
    throw ConfigError("cutout_batch: image size mismatch");
  if (p < 0.0 || p > 1.0) throw ConfigError("cutout_batch: p outside [0, 1]");

  MixedBatch out;
  out.images = images;
  out.labels_a = labels;
  out.labels_b = labels;
  out.weight_a.assign(labels.size(), 1.0);

  std::size_t side =
      static_cast<std::size_t>(std::lround(std::sqrt(p * static_cast<double>(height * width))));
  side = std::min(side, std::min(height, width));
  if (side == 0) return out;

  for (std::size_t i = 0; i < images.rows; ++i) {
    std::size_t y0 = rng.next_index(height - side + 1);
    std::size_t x0 = rng.next_index(width - side + 1);
    double* row = out.images.row(i);
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t y = y0; y < y0 + side; ++y)
        for (std::size_t x = x0; x < x0 + side; ++x) row[(c * height + y) * width + x] = 0.0;
  }
  return out;
}

MixedBatch cutmix_batch(const Matrix& images, const std::vector<int>& labels, std::size_t height,
                        std::size_t width, std::size_t channels, double alpha, RngStream& rng,
                        std::optional<double> fixed_lambda) {
  if (labels.size() != images.rows) throw ConfigError("cutmix_batch: label count mismatch");
  if (images.cols != channels * height * width)
    throw ConfigError("cutmix_batch: image size mismatch");
  if (!fixed_lambda && alpha <= 0.0) throw ConfigError("cutmix_batch: alpha must be positive");

  std::vector<std::size_t> perm = partner_permutation(images.rows, rng);
  double lam = fixed_lambda ? *fixed_lambda : sample_beta(rng, alpha, alpha);
  lam = std::min(1.0, std::max(0.0, lam));

  double cut = std::sqrt(1.0 - lam);
  std::size_t rh = std::min(
      height, static_cast<std::size_t>(std::lround(cut * static_cast<double>(height))));
  std::size_t rw =
      std::min(width, static_cast<std::size_t>(std::lround(cut * static_cast<double>(width))));

  MixedBatch out;
  out.images = images;
  out.labels_a = labels;
  out.labels_b.resize(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out.labels_b[i] = labels[perm[i]];

  if (rh == 0 || rw == 0) {
    out.weight_a.assign(labels.size(), 1.0);
    return out;
  }

  std::size_t y0 = rng.next_index(height - rh + 1);
  std::size_t x0 = rng.next_index(width - rw + 1);
  double area = static_cast<double>(rh * rw) / static_cast<double>(height * width);
  out.weight_a.assign(labels.size(), 1.0 - area);

  for (std::size_t i = 0; i < images.rows; ++i) {
    const double* src = images.row(perm[i]);
    double* dst = out.images.row(i);
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t y = y0; y < y0 + rh; ++y)
        for (std::size_t x = x0; x < x0 + rw; ++x) {
          std::size_t k = (c * height + y) * width + x;
          dst[k] = src[k];
        }
  }
  return out;
}

LossResult mixed_cross_entropy(const Matrix& logits, const MixedBatch& batch) {
  std::size_t n = logits.rows;
  if (batch.labels_a.size() != n || batch.labels_b.size() != n || batch.weight_a.size() != n)
    throw ConfigError("mixed_cross_entropy: batch size mismatch");
  double sum_a = 0.0, sum_b = 0.0;
  std::vector<double> wb(n);
  for (std::size_t i = 0; i < n; ++i) {
    double w = batch.weight_a[i];
    if (w < 0.0 || w > 1.0) throw ConfigError("mixed_cross_entropy: weight outside [0, 1]");
    wb[i] = 1.0 - w;
    sum_a += w;
    sum_b += wb[i];
  }

  LossResult res;
  res.d_logits = Matrix(logits.rows, logits.cols);
  double inv_n = 1.0 / static_cast<double>(n);
  if (sum_a > 0.0) {
    LossResult a = softmax_cross_entropy(logits, batch.labels_a, batch.weight_a);
    res.loss += a.loss * sum_a * inv_n;
    for (std::size_t i = 0; i < res.d_logits.data.size(); ++i)
      res.d_logits.data[i] += a.d_logits.data[i] * sum_a * inv_n;
  }
  if (sum_b > 0.0) {
    LossResult b = softmax_cross_entropy(logits, batch.labels_b, wb);
    res.loss += b.loss * sum_b * inv_n;
    for (std::size_t i = 0; i < res.d_logits.data.size(); ++i)
      res.d_logits.data[i] += b.d_logits.data[i] * sum_b * inv_n;
  }
  return res;
}

}  // namespace shortcutlab
