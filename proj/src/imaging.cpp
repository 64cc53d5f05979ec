#include "d3vo/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>

#include "d3vo/errors.hpp"

namespace d3vo {

Raster::Raster(int width, int height, double fill)
    : width_(width),
      height_(height),
      values_(static_cast<std::size_t>(std::max(width, 0)) * static_cast<std::size_t>(std::max(height, 0)),
              fill) {
  if (width < 0 || height < 0) throw InputError("raster: negative dimensions");
}

Raster::Raster(int width, int height, std::vector<double> values)
    : width_(width), height_(height), values_(std::move(values)) {
  if (width < 0 || height < 0 ||
      values_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
    throw InputError("raster: value count does not match dimensions");
  }
}

Image::Image(int width, int height, double fill)
    : Image(width, height,
            std::vector<double>(static_cast<std::size_t>(std::max(width, 0)) *
                                    static_cast<std::size_t>(std::max(height, 0)),
                                fill)) {}

Image::Image(int width, int height, std::vector<double> values) {
  for (double& v : values) {
    if (!std::isfinite(v)) throw InputError("image: non-finite intensity");
    v = std::clamp(v, 0.0, 1.0);
  }
  raster_ = Raster(width, height, std::move(values));
}

Image::Image(const Raster& raster)
    : Image(raster.width(), raster.height(),
            std::vector<double>(raster.values().begin(), raster.values().end())) {}

Raster downsample(const Raster& src) {
  const int w = src.width() / 2;
  const int h = src.height() / 2;
  Raster out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      out.at(x, y) = 0.25 * (src.at(2 * x, 2 * y) + src.at(2 * x + 1, 2 * y) +
                             src.at(2 * x, 2 * y + 1) + src.at(2 * x + 1, 2 * y + 1));
    }
  }
  return out;
}

Pyramid::Pyramid(const Image& base, int levels) {
  if (levels < 1) throw InputError("pyramid: need at least one level");
  levels_.push_back(base);
  for (int l = 1; l < levels; ++l) {
    const Raster& prev = levels_.back().raster();
    if (prev.width() < 2 || prev.height() < 2) {
      throw InputError("pyramid: image too small for the requested levels");
    }
    levels_.emplace_back(downsample(prev));
  }
}

namespace {

struct Cell {
  int x0, y0;
  double fx, fy;
};

bool locate(const Raster& img, const Vec2& p, Cell& cell) {
  const double x = p.x();
  const double y = p.y();
  if (!(x >= 0.0 && y >= 0.0 && x <= img.width() - 1 && y <= img.height() - 1)) return false;
  cell.x0 = std::min(static_cast<int>(x), std::max(img.width() - 2, 0));
  cell.y0 = std::min(static_cast<int>(y), std::max(img.height() - 2, 0));
  cell.fx = x - cell.x0;
  cell.fy = y - cell.y0;
  return true;
}

}  // namespace

Sample bilinear_sample(const Raster& img, const Vec2& p) {
  Cell c{};
  if (!locate(img, p, c)) return {};
  // Single-row or single-column rasters interpolate along the other axis only.
  const int x1 = std::min(c.x0 + 1, img.width() - 1);
  const int y1 = std::min(c.y0 + 1, img.height() - 1);
  const double v00 = img.at(c.x0, c.y0);
  const double v10 = img.at(x1, c.y0);
  const double v01 = img.at(c.x0, y1);
  const double v11 = img.at(x1, y1);
  const double top = v00 + c.fx * (v10 - v00);
  const double bottom = v01 + c.fx * (v11 - v01);
  return {top + c.fy * (bottom - top), true};
}

SampleGrad bilinear_sample_grad(const Raster& img, const Vec2& p) {
  Cell c{};
  if (img.width() < 2 || img.height() < 2 || !locate(img, p, c)) return {};
  const double v00 = img.at(c.x0, c.y0);
  const double v10 = img.at(c.x0 + 1, c.y0);
  const double v01 = img.at(c.x0, c.y0 + 1);
  const double v11 = img.at(c.x0 + 1, c.y0 + 1);
  const double top = v00 + c.fx * (v10 - v00);
  const double bottom = v01 + c.fx * (v11 - v01);
  SampleGrad out;
  out.value = top + c.fy * (bottom - top);
  out.grad.x() = (1.0 - c.fy) * (v10 - v00) + c.fy * (v11 - v01);
  out.grad.y() = bottom - top;
  out.valid = true;
  return out;
}

SampleGrad gradient(const Raster& img, const Vec2& p) {
  if (!(p.x() >= 1.0 && p.y() >= 1.0 && p.x() <= img.width() - 2 && p.y() <= img.height() - 2)) {
    return {};
  }
  return bilinear_sample_grad(img, p);
}

SsimWindow ssim_window(const Raster& a, const Raster& b, int x, int y) {
  double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
  for (int dy = -1; dy <= 1; ++dy) {
    const int yy = clamp_index(y + dy, a.height());
    for (int dx = -1; dx <= 1; ++dx) {
      const int xx = clamp_index(x + dx, a.width());
      const double va = a.at(xx, yy);
      const double vb = b.at(xx, yy);
      sa += va;
      sb += vb;
      saa += va * va;
      sbb += vb * vb;
      sab += va * vb;
    }
  }
  constexpr double inv = 1.0 / 9.0;
  SsimWindow w{};
  w.mu_a = sa * inv;
  w.mu_b = sb * inv;
  w.var_a = saa * inv - w.mu_a * w.mu_a;
  w.var_b = sbb * inv - w.mu_b * w.mu_b;
  w.cov = sab * inv - w.mu_a * w.mu_b;
  return w;
}

Raster ssim_map(const Raster& a, const Raster& b, Exec exec) {
  if (!a.same_shape(b)) throw InputError("ssim_map: dimension mismatch");
  Raster out(a.width(), a.height());
  parallel_for(exec, a.height(), [&](std::int64_t row) {
    const int y = static_cast<int>(row);
    for (int x = 0; x < a.width(); ++x) out.at(x, y) = ssim_window(a, b, x, y).value();
  });
  return out;
}

// ---------------------------------------------------------------------------
// File I/O

namespace {

std::string read_token(std::istream& in) {
  std::string tok;
  while (in) {
    const int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  in >> tok;
  return tok;
}

Image load_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open image " + path.string());
  const std::string magic = read_token(in);
  if (magic != "P5" && magic != "P6") throw InputError("unsupported PNM type in " + path.string());
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(read_token(in));
    h = std::stoi(read_token(in));
    maxval = std::stoi(read_token(in));
  } catch (const std::exception&) {
    throw InputError("malformed PNM header in " + path.string());
  }
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) {
    throw InputError("malformed PNM header in " + path.string());
  }
  in.get();  // single whitespace before the raster
  const int channels = magic == "P6" ? 3 : 1;
  const int bytes = maxval > 255 ? 2 : 1;
  const std::size_t n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  std::vector<unsigned char> buf(n * static_cast<std::size_t>(channels * bytes));
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(in.gcount()) != buf.size()) {
    throw InputError("truncated raster in " + path.string());
  }
  std::vector<double> values(n);
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (int c = 0; c < channels; ++c) {
      const std::size_t k = (i * static_cast<std::size_t>(channels) + static_cast<std::size_t>(c)) *
                            static_cast<std::size_t>(bytes);
      // PNM samples wider than 8 bits are big-endian.
      const unsigned v = bytes == 2 ? (unsigned(buf[k]) << 8) | buf[k + 1] : buf[k];
      sum += v;
    }
    values[i] = sum / (channels * static_cast<double>(maxval));
  }
  return {w, h, std::move(values)};
}

Image load_raw16(const std::filesystem::path& path) {
  std::filesystem::path hdr = path;
  hdr += ".hdr";
  std::ifstream header(hdr);
  if (!header) throw InputError("missing raster sidecar " + hdr.string());
  int w = 0, h = 0, bits = 0;
  if (!(header >> w >> h >> bits) || w <= 0 || h <= 0) {
    throw InputError("malformed raster sidecar " + hdr.string());
  }
  if (bits != 16) throw InputError("raw rasters must be 16 bit: " + hdr.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open image " + path.string());
  const std::size_t n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  std::vector<unsigned char> buf(2 * n);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(in.gcount()) != buf.size()) {
    throw InputError("truncated raster in " + path.string());
  }
  std::vector<double> values(n);
  for (std::size_t i = 0; i < n; ++i) {
    values[i] = static_cast<double>(buf[2 * i] | (unsigned(buf[2 * i + 1]) << 8)) / 65535.0;
  }
  return {w, h, std::move(values)};
}

}  // namespace

Image load_image(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") return load_pnm(path);
  return load_raw16(path);
}

void save_pgm(const Image& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << "P5\n" << img.width() << " " << img.height() << "\n255\n";
  for (double v : img.raster().values()) {
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
  }
}

void save_raw16(const Image& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  for (double v : img.raster().values()) {
    const auto q = static_cast<std::uint16_t>(std::lround(v * 65535.0));
    out.put(static_cast<char>(q & 0xff));
    out.put(static_cast<char>(q >> 8));
  }
  std::filesystem::path hdr = path;
  hdr += ".hdr";
  std::ofstream h(hdr);
  h << img.width() << " " << img.height() << " 16\n";
}

}  // namespace d3vo
