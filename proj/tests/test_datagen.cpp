#include "support.hpp"
#include "uda/datagen.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <set>

namespace {

namespace fs = std::filesystem;

uda::BenchmarkSpec small_spec() {
  auto spec = uda::default_benchmark();
  spec.source_train = 6;
  spec.target_train = 4;
  spec.target_eval = 3;
  spec.scene.width = spec.scene.height = 16;
  return spec;
}

uda::DomainProfile flat_profile(int categories, double lightness) {
  uda::DomainProfile p;
  for (int c = 0; c < categories; ++c) {
    uda::CategoryAppearance look;
    look.lab = Eigen::Vector3d(lightness + 5.0 * c, 0.0, 0.0);
    p.palette.push_back(look);
  }
  return p;
}

TEST(Scene, ZeroShapesIsAllBackground) {
  uda::SceneSpec spec;
  spec.shapes_per_image = 0;
  const auto m = uda::generate_scene(spec, 3);
  EXPECT_EQ(m.labels, std::vector<int>(32 * 32, 0));
}

TEST(Scene, DeterministicPerSeed) {
  const uda::SceneSpec spec;
  EXPECT_EQ(uda::generate_scene(spec, 11), uda::generate_scene(spec, 11));
  EXPECT_NE(uda::generate_scene(spec, 11), uda::generate_scene(spec, 12));
}

TEST(Scene, HundredScenesCoverEveryCategory) {
  const uda::SceneSpec spec;
  std::vector<long> counts(spec.num_categories, 0);
  for (std::uint64_t s = 0; s < 100; ++s) {
    for (int v : uda::generate_scene(spec, s).labels) {
      ASSERT_GE(v, 0);
      ASSERT_LT(v, spec.num_categories);
      ++counts[v];
    }
  }
  for (long n : counts) EXPECT_GT(n, 0);
}

TEST(Scene, InvalidSpecRejected) {
  uda::SceneSpec spec;
  spec.num_categories = 1;
  EXPECT_THROW(uda::generate_scene(spec, 0), std::invalid_argument);
  spec = {};
  spec.max_shape_size = 2;
  EXPECT_THROW(uda::generate_scene(spec, 0), std::invalid_argument);
}

TEST(Render, IdentityProfileGivesBaseColors) {
  const uda::SceneSpec spec;
  const auto layout = uda::generate_scene(spec, 5);
  auto profile = flat_profile(spec.num_categories, 30.0);
  profile.palette[2].lab = Eigen::Vector3d(60.0, 20.0, -10.0);
  const auto img = uda::render_domain(layout, profile, 9);
  for (std::size_t i = 0; i < layout.labels.size(); ++i) {
    const auto expected = uda::lab_to_srgb(profile.palette[layout.labels[i]].lab);
    ASSERT_EQ(img.data[3 * i], expected[0]);
    ASSERT_EQ(img.data[3 * i + 1], expected[1]);
    ASSERT_EQ(img.data[3 * i + 2], expected[2]);
  }
}

TEST(Render, GammaOnFlatLayoutMatchesClosedForm) {
  const uda::LabelMap flat{16, 16, std::vector<int>(256, 0)};
  for (double gamma : {0.5, 1.0, 1.7}) {
    auto profile = flat_profile(2, 40.0);
    profile.gamma_shift = gamma;
    const auto lab = uda::rgb_to_lab(uda::render_domain(flat, profile, 1));
    // 8-bit quantization of a gray moves L by well under half a unit.
    EXPECT_NEAR(lab.L.mean(), 100.0 * std::pow(0.4, gamma), 0.3) << gamma;
  }
}

TEST(Render, ProfilesDifferingInGammaChangeOnlyImages) {
  const auto spec = uda::default_benchmark();
  const auto layout = uda::generate_scene(spec.scene, 21);
  auto other = spec.source;
  other.gamma_shift *= 1.4;
  EXPECT_NE(uda::render_domain(layout, spec.source, 2).data, uda::render_domain(layout, other, 2).data);
  EXPECT_EQ(uda::render_domain(layout, spec.source, 2).data, uda::render_domain(layout, spec.source, 2).data);
}

TEST(Render, ProfileValidation) {
  auto p = flat_profile(2, 50.0);
  p.gamma_shift = 3.5;
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p.gamma_shift = 1.0;
  p.palette[0].spread = -1.0;
  EXPECT_THROW(p.validate(), std::invalid_argument);
}

TEST(Benchmark, InMemoryMatchesSpecCounts) {
  const auto spec = small_spec();
  const auto data = uda::generate_benchmark_data(spec);
  EXPECT_EQ(data.source_train.images.size(), 6u);
  EXPECT_EQ(data.source_train.labels.size(), 6u);
  EXPECT_EQ(data.target_train.images.size(), 4u);
  EXPECT_EQ(data.target_eval.labels.size(), 3u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(data.target_train.images[i].data, data.target_train_gt.images[i].data);
  }
}

TEST(Benchmark, JsonRoundTrip) {
  const auto spec = small_spec();
  const auto back = uda::benchmark_from_json(uda::to_json(spec));
  EXPECT_EQ(uda::to_json(back).dump(), uda::to_json(spec).dump());
}

class BenchmarkFiles : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::path(UDA_SCRATCH_DIR) / ::testing::UnitTest::GetInstance()->current_test_info()->name();
    fs::remove_all(root_);
  }
  fs::path root_;
};

TEST_F(BenchmarkFiles, ManifestsMatchFilesAndWithholdTargetLabels) {
  const auto paths = uda::generate_benchmark(small_spec(), root_);
  const auto src = uda::read_manifest(paths.source_train);
  const auto tgt = uda::read_manifest(paths.target_train);
  const auto gt = uda::read_manifest(paths.target_train_gt);
  EXPECT_EQ(src.count(), 6u);
  EXPECT_TRUE(src.labelled());
  EXPECT_FALSE(tgt.labelled());
  EXPECT_TRUE(gt.labelled());
  EXPECT_EQ(tgt.count(), 4u);
  EXPECT_EQ(uda::load_unlabeled(tgt).images.size(), 4u);
  EXPECT_THROW(uda::load_labeled(tgt), std::exception);
  const auto mem = uda::generate_benchmark_data(small_spec());
  const auto loaded = uda::load_labeled(src);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(loaded.images[i].data, mem.source_train.images[i].data);
    EXPECT_EQ(loaded.labels[i], mem.source_train.labels[i]);
  }
}

TEST_F(BenchmarkFiles, RegenerationIsByteIdentical) {
  uda::generate_benchmark(small_spec(), root_ / "a");
  uda::generate_benchmark(small_spec(), root_ / "b");
  std::set<std::string> names;
  for (const auto& e : fs::directory_iterator(root_ / "a")) names.insert(e.path().filename().string());
  std::set<std::string> other;
  for (const auto& e : fs::directory_iterator(root_ / "b")) other.insert(e.path().filename().string());
  EXPECT_EQ(names, other);
  for (const auto& e : fs::recursive_directory_iterator(root_ / "a")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), root_ / "a");
    EXPECT_EQ(testing_support::read_bytes(e.path()), testing_support::read_bytes(root_ / "b" / rel))
        << rel;
  }
}

TEST_F(BenchmarkFiles, ManifestErrors) {
  const auto paths = uda::generate_benchmark(small_spec(), root_);
  auto m = uda::read_manifest(paths.source_train);
  fs::remove(m.image_path(0));
  EXPECT_THROW(uda::read_manifest(paths.source_train), std::runtime_error);
  auto bad = m;
  bad.images.push_back("x.ppm");
  uda::write_manifest(root_ / "mismatch.json", bad);
  EXPECT_THROW(uda::read_manifest(root_ / "mismatch.json"), std::runtime_error);
  {
    std::ofstream os(root_ / "v2.json");
    os << R"({"version": 2, "images": []})";
  }
  EXPECT_THROW(uda::read_manifest(root_ / "v2.json"), std::runtime_error);
  {
    std::ofstream os(root_ / "junk.json");
    os << "{not json";
  }
  EXPECT_THROW(uda::read_manifest(root_ / "junk.json"), std::runtime_error);
}

}  // namespace
