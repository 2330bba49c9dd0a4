#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "ember/dataset.hpp"
#include "oracles.hpp"

using namespace ember;

namespace {

std::string ppm(std::size_t w, std::size_t h, std::uint8_t v, const char* magic = "P6", std::size_t ch = 3) {
  std::ostringstream os;
  os << magic << "\n# comment\n" << w << " " << h << "\n255\n" << std::string(w * h * ch, char(v));
  return os.str();
}

NetpbmImage parse(const std::string& bytes, const char* magic) {
  std::istringstream is(bytes);
  return read_netpbm(is, magic, "test");
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("ember_dataset_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

// ---------------------------------------------------------------------------
// netpbm

TEST(Netpbm, WhiteImageIsOne) {
  const auto img = parse(ppm(2, 2, 255), "P6");
  const auto mask = parse(ppm(2, 2, 0, "P5", 1), "P5");
  const Sample s = sample_from_netpbm(img, mask, "x");
  for (float v : s.image.data()) EXPECT_EQ(v, 1.0f);
  EXPECT_EQ(s.image.shape(), (Shape{1, 3, 2, 2}));
}

TEST(Netpbm, MaskThresholdAndStrictMode) {
  const auto img = parse(ppm(2, 1, 10), "P6");
  NetpbmImage mask{2, 1, 1, {200, 100}};
  LoadReport rep;
  const Sample s = sample_from_netpbm(img, mask, "x", {}, &rep);
  EXPECT_EQ(s.mask, (std::vector<std::uint8_t>{1, 0}));
  EXPECT_EQ(rep.nonbinary_mask_pixels, 2u);
  EXPECT_THROW(sample_from_netpbm(img, mask, "x", {true}), Error);
  mask.pixels = {255, 0};
  EXPECT_NO_THROW(sample_from_netpbm(img, mask, "x", {true}));
}

TEST(Netpbm, DimensionMismatch) {
  try {
    sample_from_netpbm(parse(ppm(2, 2, 0), "P6"), parse(ppm(3, 2, 0, "P5", 1), "P5"), "x");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::dimension_mismatch);
  }
}

TEST(Netpbm, MalformedHeaders) {
  for (const std::string& bad : {std::string("P3\n2 2\n255\n"), std::string("P6\n2\n"), std::string("P6\n2 x\n255\n"), std::string("P6\n2 2\n65535\n"),
                                std::string("P6\n0 2\n255\n"), ppm(2, 2, 0).substr(0, 20)}) {
    try {
      parse(bad, "P6");
      ADD_FAILURE() << bad;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::malformed_header);
    }
  }
}

TEST(Netpbm, FileRoundTripAndManifest) {
  const auto dir = scratch("manifest");
  SynthConfig c;
  c.count = 3;
  c.size = 16;
  c.seed = 4;
  const auto samples = generate_synthetic(c);
  std::ofstream man(dir / "list.tsv");
  man << "# image\tmask\n";
  for (const auto& s : samples) {
    save_image_mask(s, (dir / (s.id + ".ppm")).string(), (dir / (s.id + ".pgm")).string());
    man << s.id << ".ppm\t" << s.id << ".pgm\n";
  }
  man.close();
  const auto back = load_manifest((dir / "list.tsv").string(), {true});
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(back[k].id, samples[k].id);
    EXPECT_EQ(back[k].mask, samples[k].mask);
    for (std::size_t i = 0; i < back[k].image.numel(); ++i) ASSERT_NEAR(back[k].image[i], samples[k].image[i], 0.5 / 255 + 1e-6);
  }
  std::ofstream bad(dir / "bad.tsv");
  bad << "no-tab-here\n";
  bad.close();
  EXPECT_THROW(read_manifest((dir / "bad.tsv").string()), Error);
  std::filesystem::remove_all(dir);
}

// ---------------------------------------------------------------------------
// split

TEST(Split, SizesFollowRemainderRule) {
  EXPECT_EQ(split_sizes(10, {}), (std::vector<std::size_t>{7, 1, 2}));
  EXPECT_EQ(split_sizes(64, {}), (std::vector<std::size_t>{44, 9, 11}));
  EXPECT_EQ(split_sizes(5, {1, 0, 0}), (std::vector<std::size_t>{5, 0, 0}));
  try {
    split_sizes(5, {0.5, 0.5, 0.5});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::fraction_sum);
  }
}

TEST(Split, PartitionAndDeterminism) {
  SynthConfig c;
  c.count = 23;
  c.size = 16;
  const auto samples = generate_synthetic(c);
  const auto a = split(samples, {}, 9), b = split(samples, {}, 9), d = split(samples, {}, 10);
  std::multiset<std::string> ids;
  for (const auto* part : {&a.train, &a.val, &a.test})
    for (const auto& s : *part) ids.insert(s.id);
  EXPECT_EQ(ids.size(), samples.size());
  EXPECT_EQ(std::set<std::string>(ids.begin(), ids.end()).size(), samples.size());
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  EXPECT_NE(a.train, d.train);
}

// ---------------------------------------------------------------------------
// resize and batching

TEST(Resize, IdentityAndConstant) {
  SynthConfig c;
  c.count = 1;
  c.size = 16;
  const auto s = generate_synthetic(c)[0];
  EXPECT_EQ(resize_bilinear(s, 16, 16), s);
  Sample flat{Tensor({1, 3, 5, 5}, 0.4f), std::vector<std::uint8_t>(25, 1), "flat"};
  const auto r = resize_bilinear(flat, 9, 3);
  for (float v : r.image.data()) EXPECT_FLOAT_EQ(v, 0.4f);
  for (auto m : r.mask) EXPECT_EQ(m, 1);
}

TEST(Resize, CheckerboardMatchesOracle) {
  Sample s{Tensor({1, 3, 4, 4}), std::vector<std::uint8_t>(16), "cb"};
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t x = 0; x < 4; ++x) {
        s.image.at(0, c, y, x) = float((x + y) % 2);
        s.mask[y * 4 + x] = (x + y) % 2;
      }
  const auto r = resize_bilinear(s, 7, 6);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 7; ++y)
      for (std::size_t x = 0; x < 6; ++x) ASSERT_NEAR(r.image.at(0, c, y, x), oracle::bilinear_at(s.image, 0, c, y, x, 7, 6), 1e-6);
  for (auto m : r.mask) EXPECT_LE(m, 1);
}

TEST(Batch, StacksSamples) {
  SynthConfig c;
  c.count = 3;
  c.size = 16;
  const auto s = generate_synthetic(c);
  const auto [x, m] = make_batch(s);
  EXPECT_EQ(x.shape(), (Shape{3, 3, 16, 16}));
  EXPECT_EQ(m.size(), 3u * 256u);
  EXPECT_EQ(x.at(2, 1, 5, 7), s[2].image.at(0, 1, 5, 7));
  EXPECT_EQ(m[2 * 256 + 5 * 16 + 7], s[2].mask[5 * 16 + 7]);
}

// ---------------------------------------------------------------------------
// generator

TEST(Synthetic, NoBlobsMeansEmptyMask) {
  SynthConfig c;
  c.count = 5;
  c.max_blobs = 0;
  for (const auto& s : generate_synthetic(c)) EXPECT_EQ(mask_fraction(s), 0.0);
}

TEST(Synthetic, SeededDeterminism) {
  SynthConfig c;
  c.count = 4;
  c.seed = 77;
  EXPECT_EQ(generate_synthetic(c), generate_synthetic(c));
  auto d = c;
  d.seed = 78;
  EXPECT_NE(generate_synthetic(c), generate_synthetic(d));
}

TEST(Synthetic, MaskIsAnalyticSupport) {
  SynthConfig c;
  c.size = 48;
  std::mt19937_64 rng(5);
  for (int t = 0; t < 20; ++t) {
    std::vector<Blob> blobs;
    const Sample s = generate_one(c, rng, "s", &blobs);
    for (std::size_t y = 0; y < c.size; ++y)
      for (std::size_t x = 0; x < c.size; ++x) {
        bool in = false;
        for (const auto& b : blobs) in = in || b.falloff(x + 0.5, y + 0.5) > kMaskFalloff;
        ASSERT_EQ(s.mask[y * c.size + x], in ? 1 : 0);
      }
    for (float v : s.image.data()) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
  }
}

TEST(Synthetic, MaskFractionWithinFixtureBounds) {
  std::ifstream f(std::string(EMBER_FIXTURE_DIR) + "/reference_run.json");
  ASSERT_TRUE(f);
  const auto fx = nlohmann::json::parse(f).at("synthetic");
  SynthConfig c;
  c.count = fx.at("samples");
  c.seed = fx.at("seed");
  const auto samples = generate_synthetic(c);
  double mean = 0;
  for (const auto& s : samples) mean += mask_fraction(s);
  mean /= double(samples.size());
  const auto bounds = fx.at("mask_fraction_bounds");
  EXPECT_GT(mean, bounds[0].get<double>());
  EXPECT_LT(mean, bounds[1].get<double>());
  EXPECT_NEAR(mean, fx.at("mask_fraction_mean").get<double>(), 1e-4);
}

TEST(Synthetic, ConfigValidation) {
  SynthConfig c;
  c.size = 8;
  EXPECT_THROW(generate_synthetic(c), Error);
  c = {};
  c.min_blobs = 5;
  EXPECT_THROW(generate_synthetic(c), Error);
}
