#include "shortcutlab/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace shortcutlab {

namespace {

constexpr const char* kFormatVersion = "shortcutlab-ds-v1";

// Background palettes. Class 0 is a striped field, class 1 a checkerboard;
// both share the same blue tint, so the cue lives in the texture and in a
// small difference of the noise-free means.
constexpr double kStripeLo = 0.29, kStripeHi = 0.56;
constexpr double kCheckerLo = 0.35, kCheckerHi = 0.62;
constexpr double kTint = 0.08;
constexpr int kStripeBlock = 2;   // two rows per stripe, period 4
constexpr int kCheckerCell = 4;

inline std::size_t pix(const DatasetConfig& cfg, std::size_t c, std::size_t y, std::size_t x) {
  return (c * cfg.height + y) * cfg.width + x;
}

inline float clamp01(double v) {
  return static_cast<float>(std::min(1.0, std::max(0.0, v)));
}

void paint_noisy(const DatasetConfig& cfg, std::vector<float>& img, std::size_t y, std::size_t x,
                 const double rgb[3], double sigma, RngStream& noise) {
  for (std::size_t c = 0; c < cfg.channels; ++c)
    img[pix(cfg, c, y, x)] = clamp01(rgb[c] + sigma * noise.next_normal());
}

}  // namespace

Layout layout_of(const DatasetConfig& cfg) {
  std::size_t s = std::min(cfg.height, cfg.width);
  Layout l;
  l.glyph_side = s / 2;
  l.glyph_x0 = (cfg.width - l.glyph_side) / 2;
  l.glyph_y0 = (cfg.height - l.glyph_side) / 2;
  l.co_side = s / 4;
  l.co_x0 = cfg.width - l.co_side;
  l.co_y0 = (cfg.height - l.co_side) / 2;
  return l;
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

void DatasetConfig::validate() const {
  if (classes != 2) throw ConfigError("DatasetConfig: exactly two classes are supported");
  if (channels != 3) throw ConfigError("DatasetConfig: exactly three channels are supported");
  if (height < 16 || width < 16) throw ConfigError("DatasetConfig: image must be at least 16x16");
  if (train_per_class == 0 || val_total == 0 || test_total == 0)
    throw ConfigError("DatasetConfig: empty split");
  if (noise_sigma < 0.0) throw ConfigError("DatasetConfig: negative noise sigma");
  if (cues.empty() || cues.size() > 8) throw ConfigError("DatasetConfig: need 1..8 cues");
  bool has_bg = false, has_co = false;
  for (std::size_t i = 0; i < cues.size(); ++i) {
    const CueSpec& cue = cues[i];
    if (cue.rho < 0.0 || cue.rho > 1.0) throw ConfigError("DatasetConfig: cue rho outside [0, 1]");
    if (cue.name != "background" && cue.name != "coobject" && cue.name != "watermark")
      throw ConfigError("DatasetConfig: unknown cue '" + cue.name + "'");
    for (std::size_t j = i + 1; j < cues.size(); ++j)
      if (cues[j].name == cue.name) throw ConfigError("DatasetConfig: duplicate cue '" + cue.name + "'");
    has_bg |= cue.name == "background";
    has_co |= cue.name == "coobject";
  }
  if (!has_bg || !has_co)
    throw ConfigError("DatasetConfig: background and coobject cues are required");
  Layout l = layout_of(*this);
  if (l.co_x0 < l.glyph_x0 + l.glyph_side)
    throw ConfigError("DatasetConfig: co-object box overlaps target glyph");
}

int cue_index(const DatasetConfig& cfg, std::string_view name) {
  for (std::size_t i = 0; i < cfg.cues.size(); ++i)
    if (cfg.cues[i].name == name) return static_cast<int>(i);
  return -1;
}

int group_of(const DatasetConfig& cfg, int y, const std::vector<int>& cue_labels) {
  if (cue_labels.size() != cfg.cues.size())
    throw ConfigError("group_of: cue label count mismatch");
  int bits = 0;
  for (std::size_t k = 0; k < cue_labels.size(); ++k)
    if (cue_labels[k] == y) bits |= 1 << k;
  return (y << cfg.cues.size()) | bits;
}

std::size_t num_groups(const DatasetConfig& cfg) {
  return cfg.classes << cfg.cues.size();
}

// ---------------------------------------------------------------------------
// Allocation
// ---------------------------------------------------------------------------

std::vector<std::size_t> allocate_largest_remainder(std::size_t total,
                                                    const std::vector<double>& probs) {
  if (probs.empty()) throw ConfigError("allocate_largest_remainder: empty probs");
  double sum = 0.0;
  for (double p : probs) {
    if (p < 0.0) throw ConfigError("allocate_largest_remainder: negative probability");
    sum += p;
  }
  if (sum <= 0.0) throw ConfigError("allocate_largest_remainder: probabilities sum to zero");

  std::vector<std::size_t> counts(probs.size());
  std::vector<double> frac(probs.size());
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    double expect = static_cast<double>(total) * probs[i] / sum;
    counts[i] = static_cast<std::size_t>(std::floor(expect));
    frac[i] = expect - static_cast<double>(counts[i]);
    assigned += counts[i];
  }

  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  for (std::size_t i = 0; assigned < total; ++i) {
    counts[order[i % order.size()]] += 1;
    ++assigned;
  }
  return counts;
}

std::vector<std::size_t> plan_group_counts(const DatasetConfig& cfg, Split split) {
  cfg.validate();
  std::size_t k = cfg.cues.size();
  std::size_t combos = std::size_t(1) << k;
  std::vector<std::size_t> counts(num_groups(cfg), 0);

  std::vector<std::size_t> class_totals;
  if (split == Split::train) {
    class_totals.assign(cfg.classes, cfg.train_per_class);
  } else {
    std::size_t total = split == Split::val ? cfg.val_total : cfg.test_total;
    class_totals = allocate_largest_remainder(total, std::vector<double>(cfg.classes, 1.0));
  }

  for (std::size_t y = 0; y < cfg.classes; ++y) {
    std::vector<double> probs(combos);
    for (std::size_t bits = 0; bits < combos; ++bits) {
      double p = 1.0;
      for (std::size_t c = 0; c < k; ++c) {
        double rho = split == Split::train ? cfg.cues[c].rho : 0.5;
        p *= (bits >> c) & 1 ? rho : 1.0 - rho;
      }
      probs[bits] = p;
    }
    std::vector<std::size_t> alloc = allocate_largest_remainder(class_totals[y], probs);
    for (std::size_t bits = 0; bits < combos; ++bits) counts[(y << k) | bits] = alloc[bits];
  }
  return counts;
}

std::vector<double> train_group_frequencies(const DatasetConfig& cfg) {
  std::vector<std::size_t> counts = plan_group_counts(cfg, Split::train);
  double total = 0.0;
  for (std::size_t c : counts) total += static_cast<double>(c);
  std::vector<double> freq(counts.size());
  for (std::size_t g = 0; g < counts.size(); ++g)
    freq[g] = static_cast<double>(counts[g]) / total;
  return freq;
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

WatermarkParams eval_watermark_params() { return WatermarkParams{}; }

void composite_watermark(std::vector<float>& image, std::size_t height, std::size_t width,
                         std::size_t channels, const WatermarkParams& p) {
  if (image.size() != channels * height * width)
    throw ConfigError("composite_watermark: image size mismatch");
  if (p.stroke_period < 1) throw ConfigError("composite_watermark: stroke period must be >= 1");
  if (p.alpha < 0.0 || p.alpha > 1.0) throw ConfigError("composite_watermark: alpha outside [0, 1]");
  long x0 = std::lround(p.anchor_x_frac * static_cast<double>(width));
  long y0 = std::lround(p.anchor_y_frac * static_cast<double>(height));
  long h = std::lround(p.height_frac * static_cast<double>(height));
  if (x0 < 0 || y0 < 0 || h < 1 || static_cast<std::size_t>(x0) >= width ||
      static_cast<std::size_t>(y0 + h) > height)
    throw ConfigError("composite_watermark: band does not fit inside the image");

  long midline = y0 + h / 2;
  for (long y = y0; y < y0 + h; ++y) {
    for (long x = x0; x < static_cast<long>(width); ++x) {
      bool on = (x - x0) % p.stroke_period == 0 || y == midline;
      if (!on) continue;
      for (std::size_t c = 0; c < channels; ++c) {
        std::size_t idx = (c * height + static_cast<std::size_t>(y)) * width +
                          static_cast<std::size_t>(x);
        image[idx] = static_cast<float>((1.0 - p.alpha) * image[idx] + p.alpha);
      }
    }
  }
}

std::vector<float> render_background(const DatasetConfig& cfg, int bg_class,
                                     std::uint64_t sample_seed) {
  std::vector<float> img(cfg.channels * cfg.height * cfg.width);
  RngStream phase_rng(sample_seed, stream_id("render/bg-phase"));
  RngStream noise(sample_seed, stream_id("render/bg-noise"));

  if (bg_class == 0) {
    std::size_t phase = phase_rng.next_index(2 * kStripeBlock);
    for (std::size_t y = 0; y < cfg.height; ++y) {
      double v = ((y + phase) / kStripeBlock) % 2 ? kStripeHi : kStripeLo;
      double rgb[3] = {v, v, v + kTint};
      for (std::size_t x = 0; x < cfg.width; ++x)
        for (std::size_t c = 0; c < cfg.channels; ++c) img[pix(cfg, c, y, x)] = clamp01(rgb[c]);
    }
  } else {
    std::size_t px = phase_rng.next_index(2 * kCheckerCell);
    std::size_t py = phase_rng.next_index(2 * kCheckerCell);
    for (std::size_t y = 0; y < cfg.height; ++y) {
      for (std::size_t x = 0; x < cfg.width; ++x) {
        double v = ((x + px) / kCheckerCell + (y + py) / kCheckerCell) % 2 ? kCheckerHi : kCheckerLo;
        double rgb[3] = {v, v, v + kTint};
        for (std::size_t c = 0; c < cfg.channels; ++c) img[pix(cfg, c, y, x)] = clamp01(rgb[c]);
      }
    }
  }

  for (std::size_t c = 0; c < cfg.channels; ++c)
    for (std::size_t y = 0; y < cfg.height; ++y)
      for (std::size_t x = 0; x < cfg.width; ++x) {
        std::size_t i = pix(cfg, c, y, x);
        img[i] = clamp01(img[i] + cfg.noise_sigma * noise.next_normal());
      }
  return img;
}

namespace {

// The target is a filled disc whose radius carries the class signal. Radius
// fractions are drawn from class-conditional normals whose overlap leaves the
// target right or wrong on its own about Phi(sep / jitter) of the time, so a
// classifier has to weigh it against whatever the cues offer.
constexpr double kTargetBase = 0.64;
constexpr double kTargetSep = 0.14;
constexpr double kTargetJitter = 0.0757;

void render_target(const DatasetConfig& cfg, int y_class, std::uint64_t sample_seed,
                   std::vector<float>& img, std::vector<std::uint8_t>& mask) {
  Layout l = layout_of(cfg);
  RngStream shape(sample_seed, stream_id("render/target-shape"));
  RngStream noise(sample_seed, stream_id("render/target-noise"));
  double cx = static_cast<double>(cfg.width) / 2.0;
  double cy = static_cast<double>(cfg.height) / 2.0;

  double mu = kTargetBase + (y_class == 0 ? -kTargetSep : kTargetSep);
  double frac = mu + kTargetJitter * shape.next_normal();
  frac = std::min(0.98, std::max(0.30, frac));
  double r = frac * static_cast<double>(l.glyph_side) / 2.0;
  // brightness tracks the same radius draw, which keeps the class overlap
  // fixed while giving the signal two physical readouts
  double v = std::min(1.0, std::max(0.55, 0.76 + 0.35 * (frac - kTargetBase)));

  for (std::size_t y = l.glyph_y0; y < l.glyph_y0 + l.glyph_side; ++y) {
    for (std::size_t x = l.glyph_x0; x < l.glyph_x0 + l.glyph_side; ++x) {
      double dx = static_cast<double>(x) + 0.5 - cx;
      double dy = static_cast<double>(y) + 0.5 - cy;
      if (dx * dx + dy * dy >= r * r) continue;
      mask[y * cfg.width + x] = 1;
      double rgb[3] = {v, v, v};
      paint_noisy(cfg, img, y, x, rgb, cfg.noise_sigma, noise);
    }
  }
}

}  // namespace

void render_coobject(const DatasetConfig& cfg, int co_class, std::uint64_t sample_seed,
                     std::vector<float>& img, std::vector<std::uint8_t>& mask) {
  Layout l = layout_of(cfg);
  RngStream noise(sample_seed, stream_id("render/coobj-noise"));
  double cx = static_cast<double>(l.co_x0) + static_cast<double>(l.co_side) / 2.0;
  double cy = static_cast<double>(l.co_y0) + static_cast<double>(l.co_side) / 2.0;
  double router = static_cast<double>(l.co_side) / 2.0;
  double rinner = static_cast<double>(l.co_side) / 4.0 + 0.5;

  for (std::size_t y = l.co_y0; y < l.co_y0 + l.co_side; ++y) {
    for (std::size_t x = l.co_x0; x < l.co_x0 + l.co_side; ++x) {
      double dx = static_cast<double>(x) + 0.5 - cx;
      double dy = static_cast<double>(y) + 0.5 - cy;
      bool inside;
      double rgb[3];
      if (co_class == 0) {
        double halfw = (static_cast<double>(y - l.co_y0) + 1.0) / 2.0;
        inside = std::abs(dx) <= halfw;
        rgb[0] = 0.84;
        rgb[1] = 0.75;
        rgb[2] = 0.60;
      } else {
        double d2 = dx * dx + dy * dy;
        inside = d2 >= rinner * rinner && d2 < router * router;
        rgb[0] = 0.60;
        rgb[1] = 0.75;
        rgb[2] = 0.87;
      }
      if (!inside) continue;
      mask[y * cfg.width + x] = 1;
      paint_noisy(cfg, img, y, x, rgb, cfg.noise_sigma, noise);
    }
  }
}

Sample render_sample(const DatasetConfig& cfg, int y, const std::vector<int>& cue_labels,
                     std::uint64_t sample_seed) {
  int bg = cue_index(cfg, "background");
  int co = cue_index(cfg, "coobject");
  int wm = cue_index(cfg, "watermark");
  if (cue_labels.size() != cfg.cues.size())
    throw ConfigError("render_sample: cue label count mismatch");

  Sample s;
  s.y = y;
  s.cue_labels = cue_labels;
  s.group = group_of(cfg, y, cue_labels);
  s.sample_seed = sample_seed;
  s.image = render_background(cfg, cue_labels[bg], sample_seed);
  s.target_mask.assign(cfg.height * cfg.width, 0);
  s.coobject_mask.assign(cfg.height * cfg.width, 0);
  render_target(cfg, y, sample_seed, s.image, s.target_mask);
  render_coobject(cfg, cue_labels[co], sample_seed, s.image, s.coobject_mask);
  if (wm >= 0 && cue_labels[wm] == 0)
    composite_watermark(s.image, cfg.height, cfg.width, cfg.channels, eval_watermark_params());
  return s;
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

Dataset generate_dataset(const DatasetConfig& cfg) {
  cfg.validate();
  Dataset ds;
  ds.config = cfg;
  std::size_t k = cfg.cues.size();

  for (Split split : {Split::train, Split::val, Split::test}) {
    std::vector<std::size_t> counts = plan_group_counts(cfg, split);
    std::vector<std::pair<int, std::vector<int>>> entries;
    for (std::size_t g = 0; g < counts.size(); ++g) {
      int y = static_cast<int>(g >> k);
      std::vector<int> labels(k);
      for (std::size_t c = 0; c < k; ++c)
        labels[c] = (g >> c) & 1 ? y : 1 - y;
      for (std::size_t n = 0; n < counts[g]; ++n) entries.emplace_back(y, labels);
    }

    RngStream shuffle_rng(cfg.master_seed,
                          stream_id("ds/shuffle", static_cast<std::uint64_t>(split)));
    shuffle_rng.shuffle(entries);

    std::vector<Sample>& out = split == Split::train ? ds.train
                               : split == Split::val ? ds.val
                                                     : ds.test;
    out.reserve(entries.size());
    for (std::size_t i = 0; i < entries.size(); ++i) {
      RngStream seed_rng(cfg.master_seed,
                         stream_id("ds/sample-seed", static_cast<std::uint64_t>(split), i));
      out.push_back(render_sample(cfg, entries[i].first, entries[i].second, seed_rng.next_u64()));
    }
  }
  return ds;
}

std::vector<std::size_t> count_groups(const DatasetConfig& cfg, const std::vector<Sample>& split) {
  std::vector<std::size_t> counts(num_groups(cfg), 0);
  for (const Sample& s : split) {
    if (s.group < 0 || static_cast<std::size_t>(s.group) >= counts.size())
      throw DataError("count_groups: group index out of range");
    counts[static_cast<std::size_t>(s.group)] += 1;
  }
  return counts;
}

// ---------------------------------------------------------------------------
// Storage
// ---------------------------------------------------------------------------

std::uint64_t fnv1a64(const unsigned char* data, std::size_t n, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

namespace {

using nlohmann::json;

void to_json_config(json& j, const DatasetConfig& cfg) {
  json cues = json::array();
  for (const CueSpec& c : cfg.cues) cues.push_back({{"name", c.name}, {"rho", c.rho}});
  j = json{{"master_seed", cfg.master_seed},
           {"height", cfg.height},
           {"width", cfg.width},
           {"channels", cfg.channels},
           {"classes", cfg.classes},
           {"train_per_class", cfg.train_per_class},
           {"val_total", cfg.val_total},
           {"test_total", cfg.test_total},
           {"noise_sigma", cfg.noise_sigma},
           {"cues", cues}};
}

DatasetConfig config_from_json(const json& j) {
  DatasetConfig cfg;
  cfg.master_seed = j.at("master_seed").get<std::uint64_t>();
  cfg.height = j.at("height").get<std::size_t>();
  cfg.width = j.at("width").get<std::size_t>();
  cfg.channels = j.at("channels").get<std::size_t>();
  cfg.classes = j.at("classes").get<std::size_t>();
  cfg.train_per_class = j.at("train_per_class").get<std::size_t>();
  cfg.val_total = j.at("val_total").get<std::size_t>();
  cfg.test_total = j.at("test_total").get<std::size_t>();
  cfg.noise_sigma = j.at("noise_sigma").get<double>();
  cfg.cues.clear();
  for (const json& c : j.at("cues"))
    cfg.cues.push_back({c.at("name").get<std::string>(), c.at("rho").get<double>()});
  return cfg;
}

void put_f32(std::vector<unsigned char>& buf, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<unsigned char>(bits >> (8 * i)));
}

void put_u64(std::vector<unsigned char>& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

float get_f32(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

void serialize_sample(const DatasetConfig& cfg, const Sample& s, std::vector<unsigned char>& buf) {
  for (float v : s.image) put_f32(buf, v);
  buf.insert(buf.end(), s.target_mask.begin(), s.target_mask.end());
  buf.insert(buf.end(), s.coobject_mask.begin(), s.coobject_mask.end());
  buf.push_back(static_cast<unsigned char>(s.y));
  for (int c : s.cue_labels) buf.push_back(static_cast<unsigned char>(c));
  buf.push_back(static_cast<unsigned char>(s.group));
  put_u64(buf, s.sample_seed);
  (void)cfg;
}

std::size_t sample_record_size(const DatasetConfig& cfg) {
  return cfg.channels * cfg.height * cfg.width * 4 + 2 * cfg.height * cfg.width + 1 +
         cfg.cues.size() + 1 + 8;
}

Sample deserialize_sample(const DatasetConfig& cfg, const unsigned char* p) {
  Sample s;
  std::size_t npix = cfg.channels * cfg.height * cfg.width;
  s.image.resize(npix);
  for (std::size_t i = 0; i < npix; ++i) s.image[i] = get_f32(p + 4 * i);
  p += 4 * npix;
  std::size_t hw = cfg.height * cfg.width;
  s.target_mask.assign(p, p + hw);
  p += hw;
  s.coobject_mask.assign(p, p + hw);
  p += hw;
  s.y = *p++;
  s.cue_labels.resize(cfg.cues.size());
  for (std::size_t c = 0; c < cfg.cues.size(); ++c) s.cue_labels[c] = *p++;
  s.group = *p++;
  s.sample_seed = get_u64(p);
  return s;
}

}  // namespace

std::uint64_t config_hash(const DatasetConfig& cfg) {
  json j;
  to_json_config(j, cfg);
  std::string dump = j.dump();
  return fnv1a64(reinterpret_cast<const unsigned char*>(dump.data()), dump.size());
}

void save_dataset(const Dataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("save_dataset: cannot create '" + dir + "': " + ec.message());

  std::vector<unsigned char> payload;
  std::size_t total = ds.train.size() + ds.val.size() + ds.test.size();
  payload.reserve(total * sample_record_size(ds.config));
  for (const std::vector<Sample>* split : {&ds.train, &ds.val, &ds.test})
    for (const Sample& s : *split) serialize_sample(ds.config, s, payload);

  std::string bin_path = dir + "/samples.bin";
  std::ofstream bin(bin_path, std::ios::binary | std::ios::trunc);
  if (!bin) throw IoError("save_dataset: cannot open '" + bin_path + "'");
  bin.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size()));
  if (!bin) throw IoError("save_dataset: write failed for '" + bin_path + "'");
  bin.close();

  json manifest;
  manifest["format_version"] = kFormatVersion;
  to_json_config(manifest["config"], ds.config);
  json splits;
  for (Split sp : {Split::train, Split::val, Split::test}) {
    const std::vector<Sample>& split = ds.split(sp);
    splits[split_name(sp)] = {{"size", split.size()},
                              {"group_counts", count_groups(ds.config, split)}};
  }
  manifest["splits"] = splits;
  manifest["content_hash"] = hex64(fnv1a64(payload.data(), payload.size()));

  std::string man_path = dir + "/manifest.json";
  std::ofstream man(man_path, std::ios::trunc);
  if (!man) throw IoError("save_dataset: cannot open '" + man_path + "'");
  man << manifest.dump(2) << "\n";
  if (!man) throw IoError("save_dataset: write failed for '" + man_path + "'");
}

Dataset load_dataset(const std::string& dir) {
  std::string man_path = dir + "/manifest.json";
  std::ifstream man(man_path);
  if (!man) throw IoError("load_dataset: cannot open '" + man_path + "'");
  json manifest;
  try {
    man >> manifest;
  } catch (const json::exception& e) {
    throw DataError("load_dataset: bad manifest: " + std::string(e.what()));
  }

  if (manifest.at("format_version").get<std::string>() != kFormatVersion)
    throw DataError("load_dataset: unsupported format version");

  Dataset ds;
  ds.config = config_from_json(manifest.at("config"));
  ds.config.validate();

  std::string bin_path = dir + "/samples.bin";
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw IoError("load_dataset: cannot open '" + bin_path + "'");
  std::vector<unsigned char> payload((std::istreambuf_iterator<char>(bin)),
                                     std::istreambuf_iterator<char>());

  std::string expect_hash = manifest.at("content_hash").get<std::string>();
  if (hex64(fnv1a64(payload.data(), payload.size())) != expect_hash)
    throw DataError("load_dataset: content hash mismatch");

  std::size_t rec = sample_record_size(ds.config);
  const unsigned char* p = payload.data();
  std::size_t remaining = payload.size();
  for (Split sp : {Split::train, Split::val, Split::test}) {
    const json& meta = manifest.at("splits").at(split_name(sp));
    std::size_t size = meta.at("size").get<std::size_t>();
    if (remaining < size * rec) throw DataError("load_dataset: payload truncated");
    std::vector<Sample>& out = sp == Split::train ? ds.train
                               : sp == Split::val ? ds.val
                                                  : ds.test;
    out.reserve(size);
    for (std::size_t i = 0; i < size; ++i) {
      out.push_back(deserialize_sample(ds.config, p));
      p += rec;
      remaining -= rec;
    }
    std::vector<std::size_t> expect_counts = meta.at("group_counts").get<std::vector<std::size_t>>();
    if (count_groups(ds.config, out) != expect_counts)
      throw DataError("load_dataset: group counts disagree with manifest");
  }
  if (remaining != 0) throw DataError("load_dataset: trailing bytes in payload");
  return ds;
}

}  // namespace shortcutlab
