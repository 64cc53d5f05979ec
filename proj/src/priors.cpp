#include "d3vo/priors.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "d3vo/errors.hpp"

namespace d3vo {

namespace fs = std::filesystem;

namespace {

constexpr std::array<char, 4> kMagic{'D', '3', 'P', 'R'};

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_u32(std::ostream& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xffu));
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

std::string frame_label(std::size_t index, double timestamp) {
  std::ostringstream os;
  os << "frame " << index << " (t=" << std::setprecision(17) << timestamp << ")";
  return os.str();
}

}  // namespace

Intrinsics read_camera(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open camera file " + path.string());
  std::string line;
  while (std::getline(in, line)) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    Intrinsics k;
    if (!(ls >> k.fx)) continue;
    std::string extra;
    if (!(ls >> k.fy >> k.cx >> k.cy >> k.width >> k.height) || (ls >> extra)) {
      throw InputError("camera file " + path.string() + ": expected `fx fy cx cy width height`");
    }
    k.validate();
    return k;
  }
  throw InputError("camera file " + path.string() + " is empty");
}

void write_camera(const fs::path& path, const Intrinsics& k) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write camera file " + path.string());
  out << std::setprecision(17) << k.fx << ' ' << k.fy << ' ' << k.cx << ' ' << k.cy << ' ' << k.width << ' '
      << k.height << '\n';
  if (!out) throw InputError("failed writing " + path.string());
}

Raster load_prior_raster(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open prior raster " + path.string());
  unsigned char header[16];
  if (!in.read(reinterpret_cast<char*>(header), 16)) {
    throw InputError("truncated prior raster header in " + path.string());
  }
  if (std::memcmp(header, kMagic.data(), 4) != 0) {
    throw InputError("bad prior raster magic in " + path.string());
  }
  const std::uint32_t w = read_u32(header + 4);
  const std::uint32_t h = read_u32(header + 8);
  if (w == 0 || h == 0 || w > 100000 || h > 100000) {
    throw InputError("bad prior raster dimensions in " + path.string());
  }
  const std::size_t n = static_cast<std::size_t>(w) * h;
  std::vector<unsigned char> bytes(n * 4);
  if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()))) {
    throw InputError("truncated prior raster data in " + path.string());
  }
  std::vector<double> values(n);
  for (std::size_t i = 0; i < n; ++i) {
    values[i] = static_cast<double>(std::bit_cast<float>(read_u32(bytes.data() + 4 * i)));
  }
  return Raster(static_cast<int>(w), static_cast<int>(h), std::move(values));
}

void save_prior_raster(const Raster& raster, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write prior raster " + path.string());
  out.write(kMagic.data(), 4);
  put_u32(out, static_cast<std::uint32_t>(raster.width()));
  put_u32(out, static_cast<std::uint32_t>(raster.height()));
  put_u32(out, 0);
  for (double v : raster.values()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  if (!out) throw InputError("failed writing prior raster " + path.string());
}

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open manifest " + path.string());
  std::vector<ManifestEntry> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    ManifestEntry e;
    if (!(ls >> e.timestamp)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      throw InputError("manifest line " + std::to_string(line_no) + ": bad timestamp");
    }
    if (!(ls >> e.image >> e.depth >> e.uncertainty)) {
      throw InputError("manifest line " + std::to_string(line_no) + ": missing paths");
    }
    for (int i = 0; i < 6; ++i) {
      if (!(ls >> e.pose_twist[i])) {
        throw InputError("manifest line " + std::to_string(line_no) + ": missing pose twist");
      }
    }
    if (!(ls >> e.brightness.a >> e.brightness.b)) {
      throw InputError("manifest line " + std::to_string(line_no) + ": missing brightness");
    }
    std::string extra;
    if (ls >> extra) throw InputError("manifest line " + std::to_string(line_no) + ": trailing fields");
    entries.push_back(std::move(e));
  }
  return entries;
}

void write_manifest(const fs::path& path, std::span<const ManifestEntry> entries) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write manifest " + path.string());
  out << "# timestamp image depth uncertainty tx ty tz rx ry rz a b\n";
  out << std::setprecision(17);
  for (const auto& e : entries) {
    out << e.timestamp << ' ' << e.image << ' ' << e.depth << ' ' << e.uncertainty;
    for (int i = 0; i < 6; ++i) out << ' ' << e.pose_twist[i];
    out << ' ' << e.brightness.a << ' ' << e.brightness.b << '\n';
  }
}

LoadedSequence load_sequence(const fs::path& manifest, const PoseCovariance& covariance) {
  covariance.validate();
  const std::vector<ManifestEntry> entries = read_manifest(manifest);
  if (entries.empty()) throw InputError("manifest " + manifest.string() + " lists no frames");
  const fs::path base = manifest.parent_path();

  LoadedSequence seq;
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const ManifestEntry& e = entries[k];
    const std::string label = frame_label(k, e.timestamp);
    if (k > 0 && !(e.timestamp > entries[k - 1].timestamp)) {
      throw InputError(label + ": timestamps are not strictly increasing");
    }
    if (!e.pose_twist.allFinite()) throw InputError(label + ": non-finite pose prior");
    try {
      e.brightness.validate();
    } catch (const InputError& err) {
      throw InputError(label + ": " + err.what());
    }

    FrameBundle f;
    f.timestamp = e.timestamp;
    try {
      f.image = load_image(resolve(base, e.image));
      Raster depth = load_prior_raster(resolve(base, e.depth));
      Raster sigma = load_prior_raster(resolve(base, e.uncertainty));
      if (depth.width() != f.image.width() || depth.height() != f.image.height() ||
          !depth.same_shape(sigma)) {
        throw InputError("raster dimensions do not match the image");
      }
      f.depth = DepthMap(std::move(depth));
      std::size_t bad_sigma = 0;
      for (int y = 0; y < sigma.height(); ++y) {
        for (int x = 0; x < sigma.width(); ++x) {
          double& s = sigma.at(x, y);
          if (!(s > 0.0) || !std::isfinite(s)) {
            s = 1.0;
            f.depth.invalidate(x, y);
            ++bad_sigma;
          }
        }
      }
      f.uncertainty = UncertaintyMap(std::move(sigma));
      seq.masked_depth += f.depth.rejected();
      seq.masked_uncertainty += bad_sigma;
      if (f.depth.rejected() + bad_sigma > 0) {
        seq.warnings.push_back(label + ": masked " + std::to_string(f.depth.rejected()) +
                               " depth and " + std::to_string(bad_sigma) + " uncertainty entries");
      }
    } catch (const InputError& err) {
      throw InputError(label + ": " + err.what());
    }
    f.pose_prior = {k == 0 ? Se3() : se3_exp(e.pose_twist), covariance};
    f.brightness_prior = k == 0 ? BrightnessParams{} : e.brightness;
    seq.frames.push_back(std::move(f));
  }
  return seq;
}

BrightnessParams estimate_affine_ls(const Raster& target, const Raster& source,
                                    std::span<const Correspondence> correspondences) {
  // Normal equations of [I_t 1] [a b]^T = I_s.
  double sxx = 0, sx = 0, sxy = 0, sy = 0;
  std::size_t n = 0;
  for (const auto& c : correspondences) {
    const Sample t = bilinear_sample(target, c.target);
    const Sample s = bilinear_sample(source, c.source);
    if (!t.valid || !s.valid) continue;
    sxx += t.value * t.value;
    sx += t.value;
    sxy += t.value * s.value;
    sy += s.value;
    ++n;
  }
  if (n < 2) throw NumericalError("estimate_affine_ls: fewer than two valid correspondences");
  const double nn = static_cast<double>(n);
  const double det = nn * sxx - sx * sx;
  if (!(det > 1e-12 * nn * nn)) {
    throw NumericalError("estimate_affine_ls: target intensities are constant");
  }
  const double a = (nn * sxy - sx * sy) / det;
  const double b = (sxx * sy - sx * sxy) / det;
  return {a, b};
}

}  // namespace d3vo
