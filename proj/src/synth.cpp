#include "d3vo/synth.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <random>

#include "d3vo/errors.hpp"
#include "d3vo/priors.hpp"

namespace d3vo {

namespace fs = std::filesystem;

namespace {

std::uint32_t lattice_hash(std::int64_t x, std::int64_t y, std::uint32_t seed) {
  std::uint32_t h = seed * 0x9E3779B1u;
  h ^= static_cast<std::uint32_t>(x) * 0x85EBCA77u;
  h ^= static_cast<std::uint32_t>(y) * 0xC2B2AE3Du;
  h ^= h >> 15;
  h *= 0x2C1B3C6Du;
  h ^= h >> 12;
  h *= 0x297A2D39u;
  h ^= h >> 15;
  return h;
}

double lattice_value(std::int64_t x, std::int64_t y, std::uint32_t seed) {
  return static_cast<double>(lattice_hash(x, y, seed)) / 4294967296.0;
}

double fade(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

double value_noise(double s, double t, std::uint32_t seed) {
  const double fs0 = std::floor(s);
  const double ft0 = std::floor(t);
  const auto x = static_cast<std::int64_t>(fs0);
  const auto y = static_cast<std::int64_t>(ft0);
  const double u = fade(s - fs0);
  const double v = fade(t - ft0);
  const double a = lattice_value(x, y, seed);
  const double b = lattice_value(x + 1, y, seed);
  const double c = lattice_value(x, y + 1, seed);
  const double d = lattice_value(x + 1, y + 1, seed);
  return (a + u * (b - a)) + v * ((c + u * (d - c)) - (a + u * (b - a)));
}

// Four octaves, amplitude halved per octave, normalized to [0,1]. The
// texture is fixed in world space so every view sees the same radiance.
double fractal_noise(double s, double t, std::uint32_t seed) {
  double sum = 0.0;
  double amp = 1.0;
  double freq = 1.0;
  double norm = 0.0;
  for (int o = 0; o < 4; ++o) {
    sum += amp * value_noise(s * freq, t * freq, seed + 7919u * static_cast<std::uint32_t>(o));
    norm += amp;
    amp *= 0.5;
    freq *= 2.0;
  }
  return sum / norm;
}

void plane_axes(const Vec3& n, Vec3& u, Vec3& v) {
  const Vec3 ref = std::abs(n.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  u = n.cross(ref).normalized();
  v = n.cross(u);
}

double albedo(const TexturedPlane& p, const Vec3& x) {
  Vec3 u, v;
  plane_axes(p.normal.normalized(), u, v);
  const double n = fractal_noise(x.dot(u) / p.cell_size, x.dot(v) / p.cell_size, p.texture_seed);
  return p.albedo_lo + (p.albedo_hi - p.albedo_lo) * n;
}

Mat3 rot_x(double a) { return Eigen::AngleAxisd(a, Vec3::UnitX()).toRotationMatrix(); }
Mat3 rot_y(double a) { return Eigen::AngleAxisd(a, Vec3::UnitY()).toRotationMatrix(); }
Mat3 rot_z(double a) { return Eigen::AngleAxisd(a, Vec3::UnitZ()).toRotationMatrix(); }

std::string frame_stem(std::size_t k) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%05zu", k);
  return buf;
}

}  // namespace

Raster smooth_gaussian_field(int width, int height, double wavelength, std::mt19937_64& rng) {
  if (!(wavelength > 0.0)) throw InputError("smooth_gaussian_field: wavelength must be positive");
  constexpr int kWaves = 32;
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::array<std::array<double, 3>, kWaves> waves{};
  for (auto& w : waves) {
    // Wavelengths between 1x and 3x the nominal one, uniform direction.
    const double len = wavelength * (1.0 + 2.0 * uni(rng));
    const double dir = 2.0 * std::numbers::pi * uni(rng);
    w = {2.0 * std::numbers::pi / len * std::cos(dir), 2.0 * std::numbers::pi / len * std::sin(dir),
         2.0 * std::numbers::pi * uni(rng)};
  }
  Raster out(width, height);
  const double scale = std::sqrt(2.0 / kWaves);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double v = 0.0;
      for (const auto& w : waves) v += std::cos(w[0] * x + w[1] * y + w[2]);
      out.at(x, y) = scale * v;
    }
  }
  return out;
}

BrightnessParams BrightnessSchedule::at(std::size_t frame) const {
  const double phase = 2.0 * std::numbers::pi * static_cast<double>(frame) / period;
  return {1.0 + gain_amplitude * std::sin(phase), bias_amplitude * std::sin(0.7 * phase + 1.0)};
}

Scene make_room_scene(std::uint32_t seed, bool reflective) {
  Scene s;
  const auto plane = [&](Vec3 n, double offset, std::uint32_t k, double cell) {
    TexturedPlane p;
    p.normal = n;
    p.offset = offset;
    p.texture_seed = seed * 131u + k;
    p.cell_size = cell;
    s.planes.push_back(p);
  };
  plane(Vec3::UnitZ(), 4.0, 1, 0.6);    // back wall
  plane(Vec3::UnitZ(), -2.5, 2, 0.6);   // wall behind the camera
  plane(Vec3::UnitY(), 1.2, 3, 0.35);   // floor
  plane(Vec3::UnitY(), -1.6, 4, 0.5);   // ceiling
  plane(Vec3::UnitX(), -2.5, 5, 0.5);   // left wall
  plane(Vec3::UnitX(), 2.5, 6, 0.5);    // right wall
  if (reflective) {
    // Centered on the light's mirror point as seen from the origin.
    const Vec3 mirrored_light(s.light.x(), s.light.y(), 8.0 - s.light.z());
    s.patches.push_back({0, mirrored_light * (4.0 / mirrored_light.z()), 0.4, 0.6, 300.0});
  }
  return s;
}

Rendering render(const Scene& scene, const Se3& world_to_camera, const Intrinsics& k,
                 const BrightnessParams& exposure, Exec exec) {
  k.validate();
  exposure.validate();
  const int w = k.width;
  const int h = k.height;
  const Se3 c2w = world_to_camera.inverse();
  const Vec3 center = c2w.translation();
  const Mat3& rot = c2w.rotation();

  Raster intensity(w, h);
  Raster depth(w, h, 0.0);
  std::vector<std::uint8_t> reflective(intensity.size(), 0);

  const int ss = scene.supersampling;
  if (ss < 1) throw InputError("render: supersampling must be positive");

  // Radiance along the ray through (u, v); `t` receives the ray parameter
  // (camera-frame depth) or stays infinite on a miss.
  auto shade = [&](double u, double v, double& t, bool& in_patch) {
    const Vec3 dir = rot * Vec3((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
    t = std::numeric_limits<double>::infinity();
    in_patch = false;
    std::size_t hit = scene.planes.size();
    for (std::size_t p = 0; p < scene.planes.size(); ++p) {
      const Vec3 n = scene.planes[p].normal.normalized();
      const double denom = n.dot(dir);
      if (std::abs(denom) < 1e-12) continue;
      const double lambda = (scene.planes[p].offset / scene.planes[p].normal.norm() - n.dot(center)) / denom;
      if (lambda > 1e-9 && lambda < t) {
        t = lambda;
        hit = p;
      }
    }
    if (hit == scene.planes.size()) return 0.0;
    const Vec3 point = center + t * dir;
    double radiance = albedo(scene.planes[hit], point);
    for (const ReflectivePatch& patch : scene.patches) {
      if (patch.plane != hit) continue;
      const double r = (point - patch.center).norm() / patch.radius;
      if (r >= 1.0) continue;
      in_patch = true;
      const Vec3 n = scene.planes[hit].normal.normalized();
      const Vec3 view = dir.normalized();
      const Vec3 mirrored = view - 2.0 * view.dot(n) * n;
      const Vec3 to_light = (scene.light - point).normalized();
      const double falloff = 1.0 - r * r;
      radiance += patch.strength * falloff * std::pow(std::max(0.0, mirrored.dot(to_light)), patch.shininess);
    }
    return radiance;
  };

  parallel_for(exec, h, [&](std::int64_t row) {
    const int y = static_cast<int>(row);
    for (int x = 0; x < w; ++x) {
      const std::size_t i = intensity.index(x, y);
      double t = 0.0;
      bool in_patch = false;
      double radiance = shade(x, y, t, in_patch);
      if (!std::isfinite(t)) continue;
      depth[i] = t;  // ray has unit z in the camera frame
      reflective[i] = in_patch ? 1 : 0;
      if (ss > 1) {
        // Box filter over the pixel footprint; depth stays at the center.
        radiance = 0.0;
        for (int sy = 0; sy < ss; ++sy) {
          for (int sx = 0; sx < ss; ++sx) {
            double ts = 0.0;
            bool unused = false;
            radiance += shade(x + (sx + 0.5) / ss - 0.5, y + (sy + 0.5) / ss - 0.5, ts, unused);
          }
        }
        radiance /= ss * ss;
      }
      intensity[i] = exposure.apply(radiance);
    }
  });
  return {Image(intensity), DepthMap(std::move(depth)), std::move(reflective)};
}

std::vector<Se3> desk_trajectory(int frames, std::uint32_t seed, double step) {
  if (frames < 1) throw InputError("desk_trajectory: need at least one frame");
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  double ph[8];
  for (double& p : ph) p = phase(rng);
  std::vector<Se3> out;
  double s = 0.0;
  for (int k = 0; k < frames; ++k) {
    const Vec3 c(0.25 * std::sin(0.9 * s + ph[0]), 0.12 * std::sin(1.3 * s + ph[1]),
                 0.2 * std::sin(0.7 * s + ph[2]));
    const Mat3 r = rot_y(0.15 * std::sin(0.5 * s + ph[3])) * rot_x(0.08 * std::sin(0.8 * s + ph[4])) *
                   rot_z(0.03 * std::sin(1.1 * s + ph[5]));
    out.push_back(Se3(r, c).inverse());
    // Nominal path speed is about 0.3 m per unit of s; the rate varies so
    // the motion is not constant-velocity.
    s += step / 0.3 * (1.0 + 0.5 * std::sin(0.37 * k + ph[6]));
  }
  return out;
}

GeneratedSequence generate_sequence(const Scene& scene, const SequenceSpec& spec,
                                    const Corruption& corruption, const fs::path& out_dir) {
  if (spec.world_to_camera.empty()) throw InputError("generate_sequence: empty trajectory");
  if (!(spec.frame_interval > 0.0)) throw InputError("generate_sequence: frame_interval must be positive");
  spec.intrinsics.validate();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw InputError("cannot create " + out_dir.string() + ": " + ec.message());

  std::mt19937_64 rng(corruption.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  GeneratedSequence seq;
  const std::size_t n = spec.world_to_camera.size();
  for (std::size_t k = 0; k < n; ++k) {
    seq.exposures.push_back(scene.schedule.at(k));
    seq.renderings.push_back(render(scene, spec.world_to_camera[k], spec.intrinsics, seq.exposures[k]));
    seq.trajectory.push_back(static_cast<double>(k) * spec.frame_interval, spec.world_to_camera[k]);
    seq.true_relative.push_back(k == 0 ? Se3() : spec.world_to_camera[k] * spec.world_to_camera[k - 1].inverse());
  }

  std::vector<ManifestEntry> entries;
  for (std::size_t k = 0; k < n; ++k) {
    const Rendering& r = seq.renderings[k];
    const std::string stem = frame_stem(k);
    save_raw16(r.image, out_dir / (stem + ".raw"));

    Raster depth = r.depth.raster();
    const Raster field = corruption.depth_log_sigma > 0.0
                             ? smooth_gaussian_field(r.image.width(), r.image.height(), corruption.depth_noise_wavelength, rng)
                             : Raster(r.image.width(), r.image.height(), 0.0);
    for (std::size_t i = 0; i < depth.size(); ++i) {
      depth[i] = r.depth.valid(i) ? depth[i] * std::exp(corruption.depth_log_sigma * field[i]) : 0.0;
    }
    save_prior_raster(depth, out_dir / (stem + ".depth"));

    Raster sigma(r.image.width(), r.image.height(), corruption.uncertainty_constant);
    if (corruption.uncertainty == Corruption::Uncertainty::TrueResidual) {
      // Residual of predicting this frame from a neighbour at the true state.
      const std::size_t j = k > 0 ? k - 1 : std::min<std::size_t>(1, n - 1);
      const Se3 k_to_j = spec.world_to_camera[j] * spec.world_to_camera[k].inverse();
      const BrightnessParams& ek = seq.exposures[k];
      const BrightnessParams& ej = seq.exposures[j];
      const Intrinsics& K = spec.intrinsics;
      for (int y = 0; y < sigma.height(); ++y) {
        for (int x = 0; x < sigma.width(); ++x) {
          double& s = sigma.at(x, y);
          s = 0.5;
          if (!r.depth.valid(x, y)) continue;
          const Vec3 pj = k_to_j * backproject(Vec2(x, y), r.depth.at(x, y), K);
          if (!(pj.z() > 0.0)) continue;
          const Sample v = bilinear_sample(seq.renderings[j].image, project(pj, K));
          if (!v.valid) continue;
          const double predicted = ek.a / ej.a * (v.value - ej.b) + ek.b;
          s = corruption.uncertainty_floor + std::abs(r.image.at(x, y) - predicted);
        }
      }
    }
    save_prior_raster(sigma, out_dir / (stem + ".uncer"));

    ManifestEntry e;
    e.timestamp = seq.trajectory[k].timestamp;
    e.image = stem + ".raw";
    e.depth = stem + ".depth";
    e.uncertainty = stem + ".uncer";
    if (k > 0) {
      Vec6 noise;
      for (int i = 0; i < 3; ++i) noise[i] = corruption.pose_sigma_translation * gauss(rng);
      for (int i = 3; i < 6; ++i) noise[i] = corruption.pose_sigma_rotation * gauss(rng);
      const Se3 prior = corruption.pose_sigma_translation > 0.0 || corruption.pose_sigma_rotation > 0.0
                            ? se3_exp(noise) * seq.true_relative[k]
                            : seq.true_relative[k];
      e.pose_twist = se3_log_vec(prior);

      const BrightnessParams& prev = seq.exposures[k - 1];
      const BrightnessParams& cur = seq.exposures[k];
      // I_k = A I_{k-1} + B.
      BrightnessParams rel{cur.a / prev.a, cur.b - cur.a / prev.a * prev.b};
      switch (corruption.brightness) {
        case Corruption::Brightness::Exact:
          break;
        case Corruption::Brightness::Noisy:
          rel.a *= std::exp(corruption.brightness_sigma * gauss(rng));
          rel.b += corruption.brightness_sigma * gauss(rng);
          break;
        case Corruption::Brightness::Identity:
          rel = {};
          break;
      }
      e.brightness = rel;
    }
    entries.push_back(e);
  }
  seq.manifest = out_dir / "manifest.txt";
  write_manifest(seq.manifest, entries);
  write_camera(out_dir / "camera.txt", spec.intrinsics);
  seq.ground_truth = out_dir / "groundtruth.txt";
  save_trajectory_tum(seq.trajectory, seq.ground_truth);
  return seq;
}

LossProblem synthetic_loss_problem(std::uint32_t seed, int size, int scales, int sources,
                                   bool with_uncertainty) {
  if (size < 8 || scales < 1 || (size >> (scales - 1)) < 4) {
    throw InputError("synthetic_loss_problem: image too small for the scale count");
  }
  if (sources < 1 || sources > 4) throw InputError("synthetic_loss_problem: 1..4 sources");
  std::mt19937 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> uni(0.05, 0.5);

  Scene scene = make_room_scene(seed);
  scene.schedule.gain_amplitude = 0.1;
  scene.schedule.bias_amplitude = 0.03;
  Intrinsics k;
  k.fx = k.fy = 0.9 * size;
  k.cx = k.cy = 0.5 * (size - 1);
  k.width = k.height = size;

  const std::vector<Se3> traj = desk_trajectory(sources + 1, seed, 0.05);
  const Rendering target = render(scene, traj[1], k, scene.schedule.at(1));
  Raster noisy_depth = target.depth.raster();
  for (double& d : noisy_depth.values()) d *= std::exp(0.05 * gauss(rng));

  LossProblem p;
  std::vector<Image> src_images;
  for (int s = 0; s < sources; ++s) {
    const std::size_t f = s == 0 ? 0 : static_cast<std::size_t>(s + 1);
    src_images.push_back(render(scene, traj[f], k, scene.schedule.at(f)).image);
    Vec6 xi;
    for (int i = 0; i < 6; ++i) xi[i] = 0.003 * gauss(rng);
    p.poses.push_back(se3_exp(xi) * traj[f] * traj[1].inverse());
    const BrightnessParams et = scene.schedule.at(1);
    const BrightnessParams es = scene.schedule.at(f);
    const double a = es.a / et.a;
    p.brightness.push_back({a * (1.0 + 0.01 * gauss(rng)), es.b - a * et.b + 0.01 * gauss(rng)});
  }

  const Pyramid target_pyr(target.image, scales);
  std::vector<Pyramid> src_pyr;
  for (const Image& im : src_images) src_pyr.emplace_back(im, scales);
  DepthMap depth(noisy_depth);
  Raster sigma = Raster(size, size);
  for (double& v : sigma.values()) v = uni(rng);
  for (int l = 0; l < scales; ++l) {
    ScaleInput in;
    in.target = target_pyr.level(l);
    for (const Pyramid& sp : src_pyr) in.sources.push_back(sp.level(l));
    in.depth = depth;
    if (with_uncertainty) in.uncertainty = UncertaintyMap(sigma);
    in.intrinsics = k.at_level(l);
    p.scales.push_back(std::move(in));
    depth = downsample(depth);
    sigma = downsample(sigma);
  }
  return p;
}

}  // namespace d3vo
