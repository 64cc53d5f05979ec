#include <filesystem>
#include <fstream>
#include <set>

#include "d3vo/config.hpp"
#include "d3vo/errors.hpp"
#include "doctest.h"

using namespace d3vo;

namespace {

std::string error_of(const std::string& text) {
  try {
    RunConfig::parse(text);
  } catch (const InputError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("run config defaults are the documented design values") {
  const RunConfig c;
  CHECK(c.huber_gamma == 9.0 / 255.0);
  CHECK(c.uncertainty_scale_alpha == 0.5);
  CHECK(c.virtual_stereo_lambda == 1.0);
  CHECK(c.pose_weight == 1.0);
  CHECK(c.prior_variance_translation == 1e-4);
  CHECK(c.prior_variance_rotation == 1e-4);
  CHECK(c.window_capacity == 7);
  CHECK(c.point_budget == 800);
  CHECK(c.cell_size == 16);
  CHECK(c.backend_max_iterations == 12);
  CHECK(c.backend_tolerance == 1e-6);
  CHECK(c.backend_max_halvings == 8);
  CHECK(c.tracking_levels == 4);
  CHECK(c.tracking_max_iterations == 20);
  CHECK(c.tracking_max_halvings == 8);
  CHECK(c.tracking_tolerance == 1e-6);
  CHECK(c.lost_fraction == 0.1);
  CHECK(c.min_reference_pixels == 200);
  CHECK(c.graph_max_nodes == 2);
  CHECK(c.keyframe_displacement == 0.02);
  CHECK(c.keyframe_valid_fraction == 0.7);
  CHECK(c.use_depth_prior);
  CHECK(c.use_pose_prior);
  CHECK(c.use_uncertainty);
  CHECK_NOTHROW(c.validate());

  // The module configs derived from the defaults are the modules' own defaults.
  const BackendConfig b = c.backend();
  const BackendConfig bd;
  CHECK(b.huber_gamma == bd.huber_gamma);
  CHECK(b.uncertainty_scale_alpha == bd.uncertainty_scale_alpha);
  CHECK(b.virtual_stereo_lambda == bd.virtual_stereo_lambda);
  CHECK(b.pose_weight == bd.pose_weight);
  CHECK(b.stereo_baseline == bd.stereo_baseline);
  CHECK(b.window_capacity == bd.window_capacity);
  CHECK(b.point_budget == bd.point_budget);
  CHECK(b.cell_size == bd.cell_size);
  CHECK(b.gradient_median_scale == bd.gradient_median_scale);
  CHECK(b.gradient_offset == bd.gradient_offset);
  CHECK(b.max_iterations == bd.max_iterations);
  CHECK(b.relative_tolerance == bd.relative_tolerance);
  CHECK(b.max_halvings == bd.max_halvings);
  CHECK(b.coarse_levels == bd.coarse_levels);
  CHECK(b.outlier_threshold == bd.outlier_threshold);
  const TrackingConfig t = c.tracking();
  const TrackingConfig td;
  CHECK(t.levels == td.levels);
  CHECK(t.max_iterations == td.max_iterations);
  CHECK(t.max_halvings == td.max_halvings);
  CHECK(t.relative_tolerance == td.relative_tolerance);
  CHECK(t.huber_gamma == td.huber_gamma);
  CHECK(t.lost_fraction == td.lost_fraction);
  CHECK(t.min_reference_pixels == td.min_reference_pixels);
  CHECK(c.covariance().diagonal == PoseCovariance().diagonal);
}

TEST_CASE("run config text roundtrip") {
  RunConfig c;
  c.huber_gamma = 0.1 / 3.0;
  c.point_budget = 517;
  c.use_uncertainty = false;
  c.prior_variance_rotation = 2.5e-5;
  const std::string text = c.to_text();
  const RunConfig back = RunConfig::parse(text);
  CHECK(back.to_text() == text);
  CHECK(back.huber_gamma == c.huber_gamma);
  CHECK(back.point_budget == 517);
  CHECK_FALSE(back.use_uncertainty);

  std::set<std::string> keys;
  for (const std::string& k : RunConfig::keys()) keys.insert(k);
  CHECK(keys.size() == RunConfig::keys().size());
  std::size_t lines = 0;
  for (char ch : text) lines += ch == '\n';
  CHECK(lines == keys.size());
}

TEST_CASE("run config parsing") {
  const RunConfig c = RunConfig::parse(
      "# tuned run\n"
      "\n"
      "  window_capacity = 5   # smaller window\n"
      "use_pose_prior=off\n"
      "pose_weight = 0.25\r\n");
  CHECK(c.window_capacity == 5);
  CHECK_FALSE(c.use_pose_prior);
  CHECK(c.pose_weight == 0.25);
  CHECK(c.point_budget == 800);

  SUBCASE("unknown key is named") {
    const std::string e = error_of("window_capacity = 5\nwindow_capasity = 6\n");
    CHECK(e.find("window_capasity") != std::string::npos);
  }
  SUBCASE("malformed values name the key") {
    CHECK(error_of("point_budget = many").find("point_budget") != std::string::npos);
    CHECK(error_of("point_budget = 12.5").find("point_budget") != std::string::npos);
    CHECK(error_of("huber_gamma = 0").find("huber_gamma") != std::string::npos);
    CHECK(error_of("huber_gamma = nan").find("huber_gamma") != std::string::npos);
    CHECK(error_of("lost_fraction = 1.5").find("lost_fraction") != std::string::npos);
    CHECK(error_of("use_uncertainty = maybe").find("use_uncertainty") != std::string::npos);
    CHECK(error_of("window_capacity = 1").find("window_capacity") != std::string::npos);
    CHECK(error_of("cell_size =").find("cell_size") != std::string::npos);
  }
  SUBCASE("structural errors") {
    CHECK(error_of("window_capacity 5").find("line 1") != std::string::npos);
    CHECK(error_of("# x\n = 3").find("line 2") != std::string::npos);
    CHECK(error_of("pose_weight = 1\npose_weight = 2").find("pose_weight") != std::string::npos);
  }
  SUBCASE("set validates per key") {
    RunConfig r;
    CHECK_THROWS_AS(r.set("tracking_levels", "0"), InputError);
    CHECK_THROWS_AS(r.set("no_such_key", "1"), InputError);
    r.set("tracking_levels", "3");
    CHECK(r.tracking().levels == 3);
  }
}

TEST_CASE("run config file loading reports the path") {
  const auto dir = std::filesystem::temp_directory_path() / "d3vo_test_config";
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "bad.cfg") << "bogus_key = 1\n";
  try {
    RunConfig::load(dir / "bad.cfg");
    FAIL("expected an error");
  } catch (const InputError& e) {
    const std::string m = e.what();
    CHECK(m.find("bad.cfg") != std::string::npos);
    CHECK(m.find("bogus_key") != std::string::npos);
  }
  CHECK_THROWS_AS(RunConfig::load(dir / "missing.cfg"), InputError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("synth config") {
  const SynthConfig s = SynthConfig::parse(
      "frames = 12\nwidth = 160\nheight = 120\nfocal = 132.5\nreflective = true\n"
      "pose_noise_translation = 0.02\nuncertainty = constant\nbrightness = identity\n");
  CHECK(s.frames == 12);
  const Intrinsics k = s.intrinsics();
  CHECK(k.fx == 132.5);
  CHECK(k.cx == 79.5);
  CHECK(k.cy == 59.5);
  const Corruption c = s.corruption(9);
  CHECK(c.seed == 9);
  CHECK(c.pose_sigma_translation == 0.02);
  CHECK(c.uncertainty == Corruption::Uncertainty::Constant);
  CHECK(c.brightness == Corruption::Brightness::Identity);
  CHECK(SynthConfig::parse(s.to_text()).to_text() == s.to_text());

  CHECK_THROWS_AS(SynthConfig::parse("brightness = dazzling"), InputError);
  CHECK_THROWS_AS(SynthConfig::parse("frames = 0"), InputError);
  CHECK_THROWS_AS(SynthConfig::parse("depth_noise = -0.1"), InputError);
}
