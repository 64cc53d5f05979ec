#include <filesystem>
#include <fstream>

#include "d3vo/errors.hpp"
#include "d3vo/imaging.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace d3vo;

namespace {

// Direct evaluation of the windowed SSIM formula, written independently of
// ssim_window: explicit neighbour list, two-pass variance.
double ssim_direct(const Raster& a, const Raster& b, int x, int y) {
  std::vector<double> va, vb;
  for (int dy = -1; dy <= 1; ++dy) {
    for (int dx = -1; dx <= 1; ++dx) {
      const int xx = std::clamp(x + dx, 0, a.width() - 1);
      const int yy = std::clamp(y + dy, 0, a.height() - 1);
      va.push_back(a.at(xx, yy));
      vb.push_back(b.at(xx, yy));
    }
  }
  double ma = 0, mb = 0;
  for (int i = 0; i < 9; ++i) {
    ma += va[i] / 9;
    mb += vb[i] / 9;
  }
  double sa = 0, sb = 0, sab = 0;
  for (int i = 0; i < 9; ++i) {
    sa += (va[i] - ma) * (va[i] - ma) / 9;
    sb += (vb[i] - mb) * (vb[i] - mb) / 9;
    sab += (va[i] - ma) * (vb[i] - mb) / 9;
  }
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  return (2 * ma * mb + c1) * (2 * sab + c2) / ((ma * ma + mb * mb + c1) * (sa + sb + c2));
}

}  // namespace

TEST_CASE("image construction clamps and rejects non-finite values") {
  const Image img(2, 1, std::vector<double>{-0.5, 1.5});
  CHECK(img.at(0, 0) == 0.0);
  CHECK(img.at(1, 0) == 1.0);
  CHECK_THROWS_AS(Image(1, 1, std::vector<double>{std::nan("")}), InputError);
  CHECK_THROWS_AS(Image(2, 2, std::vector<double>{0.1}), InputError);
}

TEST_CASE("bilinear_sample") {
  std::mt19937 rng(1);
  const Image img = test::random_image(rng, 8, 6);
  CHECK(bilinear_sample(img, Vec2(3, 2)).value == img.at(3, 2));
  CHECK(bilinear_sample(img, Vec2(7, 5)).value == img.at(7, 5));
  CHECK(bilinear_sample(img, Vec2(7, 5)).valid);

  const Image pair(2, 1, std::vector<double>{0.2, 0.4});
  const Sample mid = bilinear_sample(pair, Vec2(0.5, 0.0));
  CHECK(mid.valid);
  CHECK(std::abs(mid.value - 0.3) < 1e-15);

  CHECK_FALSE(bilinear_sample(img, Vec2(-0.5, 0)).valid);
  CHECK_FALSE(bilinear_sample(img, Vec2(7.01, 0)).valid);
  CHECK_FALSE(bilinear_sample(img, Vec2(0, 5.5)).valid);
}

TEST_CASE("bilinear_sample is Lipschitz in the local gradient") {
  std::mt19937 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Image img = test::random_image(rng, 16, 16);
  double max_step = 0.0;
  for (int y = 0; y < 16; ++y) {
    for (int x = 0; x < 16; ++x) {
      if (x + 1 < 16) max_step = std::max(max_step, std::abs(img.at(x + 1, y) - img.at(x, y)));
      if (y + 1 < 16) max_step = std::max(max_step, std::abs(img.at(x, y + 1) - img.at(x, y)));
    }
  }
  for (int i = 0; i < 2000; ++i) {
    const Vec2 p(1 + 13 * u(rng), 1 + 13 * u(rng));
    const Vec2 d(u(rng) - 0.5, u(rng) - 0.5);
    const double dv = std::abs(bilinear_sample(img, p + d).value - bilinear_sample(img, p).value);
    CHECK(dv <= (std::abs(d.x()) + std::abs(d.y())) * max_step + 1e-12);
  }
}

TEST_CASE("gradient") {
  const Image flat(10, 10, 0.4);
  const SampleGrad g0 = gradient(flat, Vec2(4.3, 5.7));
  CHECK(g0.valid);
  CHECK(g0.grad.norm() == 0.0);

  const int w = 20;
  Raster ramp(w, 10);
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < w; ++x) ramp.at(x, y) = static_cast<double>(x) / w;
  const SampleGrad gr = gradient(ramp, Vec2(7.25, 3.5));
  CHECK(std::abs(gr.grad.x() - 1.0 / w) < 1e-6);
  CHECK(std::abs(gr.grad.y()) < 1e-6);

  CHECK_FALSE(gradient(flat, Vec2(0.5, 5)).valid);
  CHECK_FALSE(gradient(flat, Vec2(5, 8.5)).valid);

  std::mt19937 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Image img = test::random_image(rng, 16, 16);
  const double h = 1e-4;
  for (int i = 0; i < 200; ++i) {
    // Stay off cell boundaries so the finite difference does not straddle one.
    const Vec2 p(1 + std::floor(13 * u(rng)) + 0.01 + 0.98 * u(rng),
                 1 + std::floor(13 * u(rng)) + 0.01 + 0.98 * u(rng));
    const SampleGrad g = gradient(img, p);
    const double fx = (bilinear_sample(img, p + Vec2(h, 0)).value -
                       bilinear_sample(img, p - Vec2(h, 0)).value) / (2 * h);
    const double fy = (bilinear_sample(img, p + Vec2(0, h)).value -
                       bilinear_sample(img, p - Vec2(0, h)).value) / (2 * h);
    CHECK(std::abs(g.grad.x() - fx) < 1e-3);
    CHECK(std::abs(g.grad.y() - fy) < 1e-3);
  }
}

TEST_CASE("pyramid levels are exact 2x2 box averages") {
  std::mt19937 rng(4);
  const Image base = test::random_image(rng, 37, 22);
  const Pyramid pyr(base, 4);
  REQUIRE(pyr.levels() == 4);
  for (int l = 1; l < 4; ++l) {
    const Image& fine = pyr.level(l - 1);
    const Image& coarse = pyr.level(l);
    CHECK(coarse.width() == 37 >> l);
    CHECK(coarse.height() == 22 >> l);
    for (int y = 0; y < coarse.height(); ++y) {
      for (int x = 0; x < coarse.width(); ++x) {
        const double box = 0.25 * (fine.at(2 * x, 2 * y) + fine.at(2 * x + 1, 2 * y) +
                                   fine.at(2 * x, 2 * y + 1) + fine.at(2 * x + 1, 2 * y + 1));
        CHECK(std::abs(bilinear_sample(coarse, Vec2(x, y)).value - box) < 1e-15);
      }
    }
  }
  CHECK_THROWS_AS(Pyramid(base, 0), InputError);
  CHECK_THROWS_AS(Pyramid(base, 6), InputError);
}

TEST_CASE("ssim_map") {
  std::mt19937 rng(5);
  const Image a = test::random_image(rng, 12, 9);
  const Image b = test::random_image(rng, 12, 9);

  const Raster self = ssim_map(a, a);
  for (double v : self.values()) CHECK(std::abs(v - 1.0) < 1e-9);

  const Raster flat = ssim_map(Image(5, 5, 0.5), Image(5, 5, 0.5));
  for (double v : flat.values()) CHECK(std::abs(v - 1.0) < 1e-12);

  Raster inv(12, 9);
  for (std::size_t i = 0; i < inv.size(); ++i) inv[i] = 1.0 - a.raster()[i];
  const Raster neg = ssim_map(a, inv);
  for (int y = 1; y < 8; ++y) {
    for (int x = 1; x < 11; ++x) {
      CHECK(std::abs(neg.at(x, y) - ssim_direct(a, inv, x, y)) < 1e-12);
      CHECK(neg.at(x, y) <= 0.0);
    }
  }

  const Raster ab = ssim_map(a, b);
  const Raster ba = ssim_map(b, a);
  for (std::size_t i = 0; i < ab.size(); ++i) {
    CHECK(std::abs(ab[i] - ba[i]) < 1e-12);
    CHECK(std::abs(ab[i] - ssim_direct(a, b, static_cast<int>(i % 12), static_cast<int>(i / 12))) < 1e-12);
    CHECK(ab[i] >= -1.0);
    CHECK(ab[i] <= 1.0);
  }

  CHECK_THROWS_AS(ssim_map(a, Image(3, 3, 0.0)), InputError);
}

TEST_CASE("ssim_map parallel kernel equals the serial reference bit for bit") {
  std::mt19937 rng(6);
  const Image a = test::random_image(rng, 64, 48);
  const Image b = test::random_image(rng, 64, 48);
  const Raster s = ssim_map(a, b, Exec::Serial);
  const Raster p = ssim_map(a, b, Exec::Parallel);
  CHECK(std::equal(s.values().begin(), s.values().end(), p.values().begin()));
}

TEST_CASE("image files") {
  const auto dir = std::filesystem::temp_directory_path() / "d3vo_test_imaging";
  std::filesystem::create_directories(dir);
  std::mt19937 rng(7);
  const Image img = test::random_image(rng, 13, 7);

  save_pgm(img, dir / "a.pgm");
  const Image pgm = load_image(dir / "a.pgm");
  REQUIRE(pgm.width() == 13);
  REQUIRE(pgm.height() == 7);
  for (std::size_t i = 0; i < pgm.raster().size(); ++i) {
    CHECK(std::abs(pgm.raster()[i] - img.raster()[i]) <= 0.5 / 255 + 1e-12);
  }

  save_raw16(img, dir / "a.raw");
  const Image raw = load_image(dir / "a.raw");
  for (std::size_t i = 0; i < raw.raster().size(); ++i) {
    CHECK(std::abs(raw.raster()[i] - img.raster()[i]) <= 0.5 / 65535 + 1e-12);
  }

  {
    std::ofstream ppm(dir / "c.ppm", std::ios::binary);
    ppm << "P6\n# comment\n1 1\n255\n";
    ppm.put(static_cast<char>(30));
    ppm.put(static_cast<char>(60));
    ppm.put(static_cast<char>(90));
  }
  CHECK(std::abs(load_image(dir / "c.ppm").at(0, 0) - 60.0 / 255) < 1e-12);

  CHECK_THROWS_AS(load_image(dir / "missing.pgm"), InputError);
  std::filesystem::remove(dir / "a.raw.hdr");
  CHECK_THROWS_AS(load_image(dir / "a.raw"), InputError);
  std::filesystem::remove_all(dir);
}
