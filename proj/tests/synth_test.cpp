#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "shortcutlab/synth.hpp"
#include "testutil.hpp"

using namespace shortcutlab;

namespace {

DatasetConfig tiny_config() {
  DatasetConfig cfg;
  cfg.master_seed = 99;
  cfg.train_per_class = 40;
  cfg.val_total = 16;
  cfg.test_total = 16;
  return cfg;
}

std::size_t mask_count(const std::vector<std::uint8_t>& m) {
  std::size_t n = 0;
  for (auto v : m) n += v;
  return n;
}

}  // namespace

// ---------------------------------------------------------------------------
// Allocation
// ---------------------------------------------------------------------------

TEST_CASE("largest remainder: frozen canonical counts") {
  // rho 0.95 x 0.95 at 4000 per class: joint probabilities
  // {0.0025, 0.0475, 0.0475, 0.9025} in bit order (00, 01, 10, 11).
  auto counts = allocate_largest_remainder(4000, {0.0025, 0.0475, 0.0475, 0.9025});
  CHECK(counts == std::vector<std::size_t>{10, 190, 190, 3610});

  // Balanced 250 over four groups: two 63s first by index, then 62s.
  auto val = allocate_largest_remainder(250, {0.25, 0.25, 0.25, 0.25});
  CHECK(val == std::vector<std::size_t>{63, 63, 62, 62});
}

TEST_CASE("largest remainder satisfies its defining properties on random cases") {
  RngStream rng(7, stream_id("test/alloc"));
  for (int trial = 0; trial < 200; ++trial) {
    std::size_t groups = 2 + rng.next_index(6);
    std::size_t total = rng.next_index(500);
    std::vector<double> probs(groups);
    for (auto& p : probs) p = rng.next_uniform(0.0, 1.0) + 1e-3;

    auto counts = allocate_largest_remainder(total, probs);
    double sum = std::accumulate(probs.begin(), probs.end(), 0.0);

    std::size_t count_sum = 0;
    std::vector<double> frac(groups);
    std::vector<bool> bumped(groups);
    for (std::size_t g = 0; g < groups; ++g) {
      double expect = static_cast<double>(total) * probs[g] / sum;
      auto fl = static_cast<std::size_t>(std::floor(expect));
      CHECK(counts[g] >= fl);
      CHECK(counts[g] <= fl + 1);
      frac[g] = expect - static_cast<double>(fl);
      bumped[g] = counts[g] == fl + 1;
      count_sum += counts[g];
    }
    CHECK(count_sum == total);

    // Every group that received the +1 must dominate every group that did
    // not: larger fractional part, or an equal one at a lower index.
    for (std::size_t a = 0; a < groups; ++a) {
      if (!bumped[a]) continue;
      for (std::size_t b = 0; b < groups; ++b) {
        if (bumped[b]) continue;
        bool dominates = frac[a] > frac[b] - 1e-12 && (frac[a] > frac[b] + 1e-12 || a < b);
        CHECK(dominates);
      }
    }
  }
}

TEST_CASE("allocation rejects bad inputs") {
  CHECK_THROWS_AS(allocate_largest_remainder(10, {}), ConfigError);
  CHECK_THROWS_AS(allocate_largest_remainder(10, {0.0, 0.0}), ConfigError);
  CHECK_THROWS_AS(allocate_largest_remainder(10, {0.5, -0.1}), ConfigError);
}

TEST_CASE("plan_group_counts reproduces the canonical training table") {
  DatasetConfig cfg;  // defaults: 4000/class, rho 0.95/0.95
  auto counts = plan_group_counts(cfg, Split::train);
  REQUIRE(counts.size() == 8);
  // Group index = (y << 2) | bits, bit 0 = background matches, bit 1 = coobject.
  for (int y = 0; y < 2; ++y) {
    CHECK(counts[(y << 2) | 0] == 10);
    CHECK(counts[(y << 2) | 1] == 190);
    CHECK(counts[(y << 2) | 2] == 190);
    CHECK(counts[(y << 2) | 3] == 3610);
  }

  // Empirical conditionals from the counts.
  double p_bg = double(counts[1] + counts[3]) / 4000.0;
  CHECK(p_bg == 0.95);
  double joint = double(counts[3]) / 4000.0;
  CHECK(std::abs(joint - p_bg * p_bg) < 1e-12);
}

TEST_CASE("val and test splits are balanced into 62s and 63s") {
  DatasetConfig cfg;
  for (Split s : {Split::val, Split::test}) {
    auto counts = plan_group_counts(cfg, s);
    std::size_t total = 0;
    for (auto c : counts) {
      CHECK((c == 62 || c == 63));
      total += c;
    }
    CHECK(total == 500);
  }
}

TEST_CASE("train_group_frequencies sums to one and matches counts") {
  DatasetConfig cfg;
  auto freq = train_group_frequencies(cfg);
  double sum = std::accumulate(freq.begin(), freq.end(), 0.0);
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(freq[3] == doctest::Approx(3610.0 / 8000.0));
  CHECK(freq[0] == doctest::Approx(10.0 / 8000.0));
}

TEST_CASE("group_of encodes (y, match bits) and rejects bad input") {
  DatasetConfig cfg;
  CHECK(group_of(cfg, 0, {0, 0}) == 3);   // both cues match class 0
  CHECK(group_of(cfg, 0, {1, 1}) == 0);
  CHECK(group_of(cfg, 0, {0, 1}) == 1);   // background matches only
  CHECK(group_of(cfg, 1, {1, 0}) == 4 + 1);
  CHECK(group_of(cfg, 1, {1, 1}) == 4 + 3);
  CHECK(num_groups(cfg) == 8);
  CHECK_THROWS_AS(group_of(cfg, 0, {0}), ConfigError);
}

// ---------------------------------------------------------------------------
// Config validation
// ---------------------------------------------------------------------------

TEST_CASE("config validation rejects malformed cue sets") {
  DatasetConfig cfg;
  cfg.cues = {{"background", 0.95}};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = DatasetConfig{};
  cfg.cues.push_back({"background", 0.9});
  CHECK_THROWS_AS(cfg.validate(), ConfigError);  // duplicate

  cfg = DatasetConfig{};
  cfg.cues[0].rho = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = DatasetConfig{};
  cfg.cues.push_back({"texture", 0.9});
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = DatasetConfig{};
  cfg.classes = 3;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = DatasetConfig{};
  cfg.cues.push_back({"watermark", 0.95});
  CHECK_NOTHROW(cfg.validate());
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

TEST_CASE("rendering is deterministic in the sample seed") {
  DatasetConfig cfg = tiny_config();
  Sample a = render_sample(cfg, 0, {0, 1}, 1234);
  Sample b = render_sample(cfg, 0, {0, 1}, 1234);
  CHECK(a.image == b.image);
  CHECK(a.target_mask == b.target_mask);
  CHECK(a.coobject_mask == b.coobject_mask);

  Sample c = render_sample(cfg, 0, {0, 1}, 1235);
  CHECK(a.image != c.image);
}

TEST_CASE("masks are disjoint, in-bounds and shape-dependent") {
  DatasetConfig cfg = tiny_config();
  for (int y = 0; y < 2; ++y) {
    for (int co = 0; co < 2; ++co) {
      Sample s = render_sample(cfg, y, {y, co}, 77 + y * 2 + co);
      REQUIRE(s.target_mask.size() == cfg.height * cfg.width);
      for (std::size_t i = 0; i < s.target_mask.size(); ++i)
        CHECK(!(s.target_mask[i] && s.coobject_mask[i]));
      CHECK(mask_count(s.target_mask) > 0);
      CHECK(mask_count(s.coobject_mask) > 0);
      // Co-object lives in the right third.
      for (std::size_t yy = 0; yy < cfg.height; ++yy)
        for (std::size_t xx = 0; xx < cfg.width; ++xx)
          if (s.coobject_mask[yy * cfg.width + xx]) CHECK(xx >= 2 * cfg.width / 3);
    }
  }
  // Disc vs cross and triangle vs ring have different pixel counts.
  Sample disc = render_sample(cfg, 0, {0, 0}, 5);
  Sample cross = render_sample(cfg, 1, {1, 1}, 5);
  CHECK(mask_count(disc.target_mask) != mask_count(cross.target_mask));
  Sample tri = render_sample(cfg, 0, {0, 0}, 5);
  Sample ring = render_sample(cfg, 0, {0, 1}, 5);
  CHECK(mask_count(tri.coobject_mask) != mask_count(ring.coobject_mask));
}

TEST_CASE("pixels stay in [0, 1] and the background region matches its field") {
  DatasetConfig cfg = tiny_config();
  Sample s = render_sample(cfg, 1, {0, 1}, 4242);
  for (float v : s.image) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  std::vector<float> bg = render_background(cfg, 0, 4242);
  for (std::size_t c = 0; c < cfg.channels; ++c)
    for (std::size_t yy = 0; yy < cfg.height; ++yy)
      for (std::size_t xx = 0; xx < cfg.width; ++xx) {
        std::size_t m = yy * cfg.width + xx;
        if (s.target_mask[m] || s.coobject_mask[m]) continue;
        std::size_t i = (c * cfg.height + yy) * cfg.width + xx;
        CHECK(s.image[i] == bg[i]);
      }
}

TEST_CASE("noise-free background means are separated by class") {
  DatasetConfig cfg = tiny_config();
  cfg.noise_sigma = 0.0;
  double means[2] = {0.0, 0.0};
  for (int cls = 0; cls < 2; ++cls) {
    double acc = 0.0;
    int n = 0;
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
      std::vector<float> bg = render_background(cfg, cls, seed);
      for (float v : bg) acc += v;
      n += static_cast<int>(bg.size());
    }
    means[cls] = acc / n;
  }
  CHECK(std::abs(means[0] - means[1]) > 0.01);
}

TEST_CASE("watermark cue renders the band on cue class 0 only") {
  DatasetConfig cfg = tiny_config();
  cfg.cues.push_back({"watermark", 0.95});

  Sample with_band = render_sample(cfg, 0, {0, 0, 0}, 31);
  Sample without = render_sample(cfg, 0, {0, 0, 1}, 31);
  CHECK(with_band.image != without.image);

  // The label-1 rendering should be identical to a config with no watermark
  // cue at all, pixel for pixel.
  DatasetConfig plain = tiny_config();
  Sample base = render_sample(plain, 0, {0, 0}, 31);
  CHECK(without.image == base.image);

  // And the band itself must match compositing onto the plain render.
  std::vector<float> expected = base.image;
  composite_watermark(expected, cfg.height, cfg.width, cfg.channels, eval_watermark_params());
  CHECK(with_band.image == expected);
}

TEST_CASE("generated datasets realize the planned group counts") {
  DatasetConfig cfg = tiny_config();
  Dataset ds = generate_dataset(cfg);
  CHECK(ds.train.size() == 80);
  CHECK(ds.val.size() == 16);
  CHECK(ds.test.size() == 16);
  CHECK(count_groups(cfg, ds.train) == plan_group_counts(cfg, Split::train));
  CHECK(count_groups(cfg, ds.val) == plan_group_counts(cfg, Split::val));
  CHECK(count_groups(cfg, ds.test) == plan_group_counts(cfg, Split::test));

  // Shuffled: the first few samples should not all share one group.
  bool varied = false;
  for (std::size_t i = 1; i < 8 && !varied; ++i) varied = ds.train[i].group != ds.train[0].group;
  CHECK(varied);
}

// ---------------------------------------------------------------------------
// Storage
// ---------------------------------------------------------------------------

TEST_CASE("dataset round-trips bit-exactly and hashes its content") {
  DatasetConfig cfg = tiny_config();
  Dataset ds = generate_dataset(cfg);
  std::string dir = "/tmp/shortcutlab_test_ds";
  std::filesystem::remove_all(dir);
  save_dataset(ds, dir);

  Dataset back = load_dataset(dir);
  REQUIRE(back.train.size() == ds.train.size());
  for (std::size_t i = 0; i < ds.train.size(); ++i) {
    CHECK(back.train[i].image == ds.train[i].image);
    CHECK(back.train[i].target_mask == ds.train[i].target_mask);
    CHECK(back.train[i].coobject_mask == ds.train[i].coobject_mask);
    CHECK(back.train[i].y == ds.train[i].y);
    CHECK(back.train[i].cue_labels == ds.train[i].cue_labels);
    CHECK(back.train[i].group == ds.train[i].group);
    CHECK(back.train[i].sample_seed == ds.train[i].sample_seed);
  }
  CHECK(back.val.size() == ds.val.size());
  CHECK(back.test.size() == ds.test.size());

  // Regenerating with the same seed produces the same manifest.
  std::string dir2 = "/tmp/shortcutlab_test_ds2";
  std::filesystem::remove_all(dir2);
  save_dataset(generate_dataset(cfg), dir2);
  std::ifstream m1(dir + "/manifest.json"), m2(dir2 + "/manifest.json");
  std::string s1((std::istreambuf_iterator<char>(m1)), std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(m2)), std::istreambuf_iterator<char>());
  CHECK(s1 == s2);
}

TEST_CASE("corrupting the payload is detected by the content hash") {
  DatasetConfig cfg = tiny_config();
  std::string dir = "/tmp/shortcutlab_test_ds_corrupt";
  std::filesystem::remove_all(dir);
  save_dataset(generate_dataset(cfg), dir);

  std::string bin = dir + "/samples.bin";
  std::fstream f(bin, std::ios::binary | std::ios::in | std::ios::out);
  f.seekp(1000);
  char b;
  f.seekg(1000);
  f.get(b);
  f.seekp(1000);
  b = static_cast<char>(b ^ 0x40);
  f.put(b);
  f.close();

  CHECK_THROWS_AS(load_dataset(dir), DataError);
}

TEST_CASE("unsupported format versions are rejected") {
  DatasetConfig cfg = tiny_config();
  std::string dir = "/tmp/shortcutlab_test_ds_ver";
  std::filesystem::remove_all(dir);
  save_dataset(generate_dataset(cfg), dir);

  std::ifstream in(dir + "/manifest.json");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  auto pos = text.find("shortcutlab-ds-v1");
  REQUIRE(pos != std::string::npos);
  text.replace(pos, 17, "shortcutlab-ds-v9");
  std::ofstream out(dir + "/manifest.json", std::ios::trunc);
  out << text;
  out.close();

  CHECK_THROWS_AS(load_dataset(dir), DataError);
}

TEST_CASE("missing directory raises an IO error") {
  CHECK_THROWS_AS(load_dataset("/tmp/shortcutlab_no_such_dir"), IoError);
}
