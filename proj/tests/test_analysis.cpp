#include <png.h>

#include <filesystem>
#include <fstream>

#include "catch_amalgamated.hpp"
#include "tprobe/analysis.hpp"
#include "tprobe/synth.hpp"

using namespace tprobe;
using Catch::Matchers::WithinAbs;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("tprobe_analysis_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

std::pair<std::uint32_t, std::uint32_t> png_size(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  unsigned char b[24] = {};
  in.read(reinterpret_cast<char*>(b), 24);
  REQUIRE(in.gcount() == 24);
  const unsigned char sig[8] = {0x89, 0x50, 0x4E, 0x47, 0x0D, 0x0A, 0x1A, 0x0A};
  REQUIRE(std::equal(b, b + 8, sig));
  REQUIRE(std::string(reinterpret_cast<char*>(b + 12), 4) == "IHDR");
  auto be = [&](int o) { return std::uint32_t(b[o]) << 24 | std::uint32_t(b[o + 1]) << 16 | b[o + 2] << 8 | b[o + 3]; };
  return {be(16), be(20)};
}

std::vector<unsigned char> decode_rgb(const std::filesystem::path& path, std::uint32_t& w, std::uint32_t& h) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  REQUIRE(png_image_begin_read_from_file(&image, path.c_str()));
  image.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> buf(PNG_IMAGE_SIZE(image));
  REQUIRE(png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr));
  w = image.width;
  h = image.height;
  return buf;
}

}  // namespace

TEST_CASE("cosine similarity matrix") {
  Tensor<float> f(4, 2);
  f(0, 0) = 1;                // [1,0]
  f(1, 0) = 1, f(1, 1) = 1;   // [1,1]
  f(2, 0) = -2;               // [-2,0]
  std::vector<std::size_t> zero;
  const auto m = cosine_similarity_matrix(f, &zero);
  CHECK(zero == std::vector<std::size_t>{3});
  CHECK(m(0, 0) == 1.0);
  CHECK_THAT(m(0, 1), WithinAbs(1.0 / std::sqrt(2.0), 1e-12));
  CHECK(m(0, 2) == -1.0);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(m(3, i) == 0.0);
    CHECK(m(i, 3) == 0.0);
    for (std::size_t j = 0; j < 4; ++j) CHECK(m(i, j) == m(j, i));
  }
}

TEST_CASE("cosine matrix is bounded and symmetric on random features") {
  Rng rng = make_rng(8);
  Tensor<float> f(30, 7);
  for (auto& v : f.values()) v = static_cast<float>(uniform01(rng) - 0.5);
  const auto m = cosine_similarity_matrix(f);
  for (std::size_t i = 0; i < 30; ++i) {
    CHECK(m(i, i) == 1.0);
    for (std::size_t j = 0; j < 30; ++j) {
      REQUIRE(m(i, j) == m(j, i));
      REQUIRE(std::abs(m(i, j)) <= 1.0);
    }
  }
}

TEST_CASE("ground truth difference matrix") {
  const std::vector<double> gt{0.0, 0.25, 1.0};
  const auto m = gt_difference_matrix(gt);
  CHECK(m(0, 1) == 0.25);
  CHECK(m(2, 0) == 1.0);
  CHECK(m(1, 1) == 0.0);
}

TEST_CASE("similarity agreement") {
  SECTION("identical features everywhere is degenerate") {
    HeatmapPair p;
    Tensor<float> f(5, 3, 1.0f);
    p.cosine = cosine_similarity_matrix(f);
    p.gt_diff = gt_difference_matrix(std::vector<double>{0, 0.1, 0.2, 0.3, 0.4});
    CHECK(similarity_agreement(p).degenerate);
  }
  SECTION("features that encode the importance agree positively") {
    // angle proportional to importance
    const std::vector<double> gt{0.0, 0.1, 0.5, 0.7, 1.0};
    Tensor<float> f(5, 2);
    for (std::size_t i = 0; i < 5; ++i) {
      f(i, 0) = static_cast<float>(std::cos(gt[i]));
      f(i, 1) = static_cast<float>(std::sin(gt[i]));
    }
    HeatmapPair p{"v", cosine_similarity_matrix(f), gt_difference_matrix(gt), {}};
    const auto c = similarity_agreement(p);
    CHECK_FALSE(c.degenerate);
    CHECK(c.value > 0.9);
  }
  SECTION("fewer than three frames is degenerate") {
    HeatmapPair p{"v", Tensor<double>(2, 2), Tensor<double>(2, 2), {}};
    CHECK(similarity_agreement(p).degenerate);
  }
}

TEST_CASE("matrix csv round trip") {
  const auto dir = temp_dir("csv");
  Tensor<double> m(2, 3);
  m(0, 0) = 0.125;
  m(1, 2) = -0.5;
  write_matrix_csv(dir / "m.csv", m);
  CHECK(read_matrix_csv(dir / "m.csv") == m);
  CHECK_THROWS(read_matrix_csv(dir / "missing.csv"));
}

TEST_CASE("color ramp endpoints") {
  CHECK(color_ramp(-3.0) == color_ramp(0.0));
  CHECK(color_ramp(7.0) == color_ramp(1.0));
  CHECK(color_ramp(NAN) == color_ramp(0.0));
  CHECK(color_ramp(0.0) != color_ramp(1.0));
}

TEST_CASE("heatmap export writes csv and png files of N·cell pixels") {
  SynthOptions o;
  o.videos = 1;
  o.frames = 12;
  o.dim = 5;
  const auto ds = make_synthetic_dataset(SynthKind::content_only, o);
  const auto pair = make_heatmaps(ds.videos[0]);
  CHECK(pair.video_id == "video_001");
  CHECK(pair.cosine.rows() == 12);

  const auto dir = temp_dir("export") / "nested";
  const auto files = export_heatmap(pair, dir, 3);
  CHECK(files.cosine_csv.filename() == "video_001.cosine.csv");
  CHECK(files.gt_diff_csv.filename() == "video_001.gtdiff.csv");
  CHECK(files.cosine_png.filename() == "video_001.cosine.png");
  CHECK(files.gt_diff_png.filename() == "video_001.gtdiff.png");
  CHECK(read_matrix_csv(files.cosine_csv).rows() == 12);
  CHECK(png_size(files.cosine_png) == std::pair<std::uint32_t, std::uint32_t>{36, 36});
  CHECK(png_size(files.gt_diff_png) == std::pair<std::uint32_t, std::uint32_t>{36, 36});

  std::uint32_t w = 0, h = 0;
  const auto rgb = decode_rgb(files.cosine_png, w, h);
  REQUIRE(w == 36);
  // top-left cell is the diagonal, cosine 1
  const auto top = color_ramp(1.0);
  CHECK(std::equal(top.begin(), top.end(), rgb.begin()));
  const auto gt = decode_rgb(files.gt_diff_png, w, h);
  CHECK(std::equal(top.begin(), top.end(), gt.begin()));
}
