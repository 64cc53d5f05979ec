#include "d3vo/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <variant>

#include "d3vo/errors.hpp"

namespace d3vo {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename C>
struct Field {
  const char* key;
  std::variant<double C::*, int C::*, bool C::*, std::string C::*> member;
  double lo = -kInf;
  double hi = kInf;
  bool lo_open = false;  ///< lower bound excluded
  std::vector<std::string_view> choices = {};
};

[[noreturn]] void bad_value(std::string_view key, std::string_view value, const std::string& why) {
  throw InputError("config key '" + std::string(key) + "': " + why + " (got '" + std::string(value) + "')");
}

double parse_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) bad_value(key, v, "expected a number");
  return out;
}

int parse_int(std::string_view key, std::string_view v) {
  int out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v, "expected an integer");
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "on" || v == "1") return true;
  if (v == "false" || v == "off" || v == "0") return false;
  bad_value(key, v, "expected true or false");
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

template <typename C>
void check_range(const Field<C>& f, double v) {
  const bool low = f.lo_open ? v > f.lo : v >= f.lo;
  if (!low || !(v <= f.hi)) {
    std::ostringstream os;
    os << "value " << format_double(v) << " outside " << (f.lo_open ? "(" : "[") << format_double(f.lo) << ", "
       << format_double(f.hi) << "]";
    throw InputError("config key '" + std::string(f.key) + "': " + os.str());
  }
}

template <typename C>
const Field<C>& find_field(const std::vector<Field<C>>& fields, std::string_view key) {
  for (const Field<C>& f : fields) {
    if (key == f.key) return f;
  }
  throw InputError("unknown config key '" + std::string(key) + "'");
}

template <typename C>
void set_field(C& cfg, const std::vector<Field<C>>& fields, std::string_view key, std::string_view raw) {
  const Field<C>& f = find_field(fields, key);
  const std::string_view v = trim(raw);
  if (v.empty()) bad_value(key, v, "missing value");
  std::visit(
      [&](auto member) {
        using T = std::remove_reference_t<decltype(cfg.*member)>;
        if constexpr (std::is_same_v<T, double>) {
          const double d = parse_double(key, v);
          check_range(f, d);
          cfg.*member = d;
        } else if constexpr (std::is_same_v<T, int>) {
          const int i = parse_int(key, v);
          check_range(f, i);
          cfg.*member = i;
        } else if constexpr (std::is_same_v<T, bool>) {
          cfg.*member = parse_bool(key, v);
        } else {
          bool ok = false;
          for (std::string_view c : f.choices) ok = ok || c == v;
          if (!ok) bad_value(key, v, "not one of the accepted choices");
          cfg.*member = std::string(v);
        }
      },
      f.member);
}

template <typename C>
void validate_fields(const C& cfg, const std::vector<Field<C>>& fields) {
  for (const Field<C>& f : fields) {
    std::visit(
        [&](auto member) {
          using T = std::remove_cvref_t<decltype(cfg.*member)>;
          if constexpr (std::is_same_v<T, double> || std::is_same_v<T, int>) {
            const double v = static_cast<double>(cfg.*member);
            if (!std::isfinite(v)) throw InputError("config key '" + std::string(f.key) + "': not finite");
            check_range(f, v);
          } else if constexpr (std::is_same_v<T, std::string>) {
            bool ok = false;
            for (std::string_view c : f.choices) ok = ok || c == cfg.*member;
            if (!ok) bad_value(f.key, cfg.*member, "not one of the accepted choices");
          }
        },
        f.member);
  }
}

template <typename C>
std::string fields_to_text(const C& cfg, const std::vector<Field<C>>& fields) {
  std::ostringstream os;
  for (const Field<C>& f : fields) {
    os << f.key << " = ";
    std::visit(
        [&](auto member) {
          using T = std::remove_cvref_t<decltype(cfg.*member)>;
          if constexpr (std::is_same_v<T, double>) {
            os << format_double(cfg.*member);
          } else if constexpr (std::is_same_v<T, bool>) {
            os << (cfg.*member ? "true" : "false");
          } else {
            os << cfg.*member;
          }
        },
        f.member);
    os << '\n';
  }
  return os.str();
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

const std::vector<Field<RunConfig>>& run_fields() {
  using R = RunConfig;
  static const std::vector<Field<R>> fields = {
      {"huber_gamma", &R::huber_gamma, 0.0, kInf, true},
      {"uncertainty_scale_alpha", &R::uncertainty_scale_alpha, 0.0, kInf, true},
      {"virtual_stereo_lambda", &R::virtual_stereo_lambda, 0.0, kInf},
      {"pose_weight", &R::pose_weight, 0.0, kInf},
      {"prior_variance_translation", &R::prior_variance_translation, 0.0, kInf, true},
      {"prior_variance_rotation", &R::prior_variance_rotation, 0.0, kInf, true},
      {"stereo_baseline", &R::stereo_baseline, 0.0, kInf, true},
      {"window_capacity", &R::window_capacity, 2, 64},
      {"point_budget", &R::point_budget, 1, 1e6},
      {"cell_size", &R::cell_size, 2, 1024},
      {"gradient_median_scale", &R::gradient_median_scale, 0.0, kInf},
      {"gradient_offset", &R::gradient_offset, 0.0, kInf},
      {"backend_max_iterations", &R::backend_max_iterations, 1, 1000},
      {"backend_tolerance", &R::backend_tolerance, 0.0, 1.0, true},
      {"backend_max_halvings", &R::backend_max_halvings, 0, 60},
      {"backend_coarse_levels", &R::backend_coarse_levels, 0, 8},
      {"outlier_threshold", &R::outlier_threshold, 0.0, kInf, true},
      {"tracking_levels", &R::tracking_levels, 1, 10},
      {"tracking_max_iterations", &R::tracking_max_iterations, 1, 1000},
      {"tracking_max_halvings", &R::tracking_max_halvings, 0, 60},
      {"tracking_tolerance", &R::tracking_tolerance, 0.0, 1.0, true},
      {"lost_fraction", &R::lost_fraction, 0.0, 1.0},
      {"min_reference_pixels", &R::min_reference_pixels, 1, 1e8},
      {"graph_max_nodes", &R::graph_max_nodes, 1, 100},
      {"splat_radius", &R::splat_radius, 0, 10},
      {"retrack_threshold", &R::retrack_threshold, 1.0, kInf},
      {"max_gain_deviation", &R::max_gain_deviation, 0.0, kInf, true},
      {"keyframe_displacement", &R::keyframe_displacement, 0.0, 1.0, true},
      {"keyframe_valid_fraction", &R::keyframe_valid_fraction, 0.0, 1.0},
      {"use_depth_prior", &R::use_depth_prior},
      {"use_pose_prior", &R::use_pose_prior},
      {"use_uncertainty", &R::use_uncertainty},
  };
  return fields;
}

const std::vector<Field<SynthConfig>>& synth_fields() {
  using S = SynthConfig;
  static const std::vector<Field<S>> fields = {
      {"frames", &S::frames, 1, 100000},
      {"width", &S::width, 16, 8192},
      {"height", &S::height, 16, 8192},
      {"focal", &S::focal, 0.0, kInf, true},
      {"step", &S::step, 0.0, 10.0},
      {"frame_interval", &S::frame_interval, 0.0, kInf, true},
      {"reflective", &S::reflective},
      {"gain_amplitude", &S::gain_amplitude, 0.0, 0.9},
      {"bias_amplitude", &S::bias_amplitude, 0.0, 0.5},
      {"depth_noise", &S::depth_noise, 0.0, 2.0},
      {"depth_noise_wavelength", &S::depth_noise_wavelength, 0.0, kInf, true},
      {"pose_noise_translation", &S::pose_noise_translation, 0.0, 10.0},
      {"pose_noise_rotation", &S::pose_noise_rotation, 0.0, 3.0},
      {"uncertainty", &S::uncertainty, -kInf, kInf, false, {"true_residual", "constant"}},
      {"uncertainty_constant", &S::uncertainty_constant, 0.0, kInf, true},
      {"brightness", &S::brightness, -kInf, kInf, false, {"exact", "noisy", "identity"}},
      {"brightness_noise", &S::brightness_noise, 0.0, 1.0},
  };
  return fields;
}

template <typename C>
C parse_config(std::string_view text) {
  C cfg;
  for (const KeyValue& kv : parse_key_values(text)) cfg.set(kv.key, kv.value);
  cfg.validate();
  return cfg;
}

}  // namespace

std::vector<KeyValue> parse_key_values(std::string_view text) {
  std::vector<KeyValue> out;
  std::set<std::string, std::less<>> seen;
  int line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view() : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw InputError("config line " + std::to_string(line_no) + ": expected `key = value`, got '" +
                       std::string(line) + "'");
    }
    const std::string key(trim(line.substr(0, eq)));
    if (key.empty()) throw InputError("config line " + std::to_string(line_no) + ": empty key");
    if (seen.contains(key)) throw InputError("config key '" + key + "' repeated on line " + std::to_string(line_no));
    seen.insert(key);
    out.push_back({key, std::string(trim(line.substr(eq + 1))), line_no});
  }
  return out;
}

void RunConfig::set(std::string_view key, std::string_view value) { set_field(*this, run_fields(), key, value); }

void RunConfig::validate() const {
  validate_fields(*this, run_fields());
  backend().validate();
  tracking().validate();
}

std::string RunConfig::to_text() const { return fields_to_text(*this, run_fields()); }

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& f : run_fields()) out.emplace_back(f.key);
  return out;
}

BackendConfig RunConfig::backend() const {
  BackendConfig b;
  b.huber_gamma = huber_gamma;
  b.uncertainty_scale_alpha = uncertainty_scale_alpha;
  b.virtual_stereo_lambda = virtual_stereo_lambda;
  b.pose_weight = pose_weight;
  b.stereo_baseline = stereo_baseline;
  b.window_capacity = window_capacity;
  b.point_budget = point_budget;
  b.cell_size = cell_size;
  b.gradient_median_scale = gradient_median_scale;
  b.gradient_offset = gradient_offset;
  b.max_iterations = backend_max_iterations;
  b.relative_tolerance = backend_tolerance;
  b.max_halvings = backend_max_halvings;
  b.coarse_levels = backend_coarse_levels;
  b.outlier_threshold = outlier_threshold;
  b.use_uncertainty = use_uncertainty;
  b.use_depth_prior = use_depth_prior;
  b.use_pose_prior = use_pose_prior;
  return b;
}

TrackingConfig RunConfig::tracking() const {
  TrackingConfig t;
  t.levels = tracking_levels;
  t.max_iterations = tracking_max_iterations;
  t.max_halvings = tracking_max_halvings;
  t.relative_tolerance = tracking_tolerance;
  t.huber_gamma = huber_gamma;
  t.lost_fraction = lost_fraction;
  t.min_reference_pixels = min_reference_pixels;
  return t;
}

PoseCovariance RunConfig::covariance() const {
  Vec6 d;
  d << Vec3::Constant(prior_variance_translation), Vec3::Constant(prior_variance_rotation);
  return PoseCovariance(d);
}

RunConfig RunConfig::parse(std::string_view text) { return parse_config<RunConfig>(text); }

RunConfig RunConfig::load(const std::filesystem::path& path) {
  try {
    return parse(read_file(path));
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

void SynthConfig::set(std::string_view key, std::string_view value) {
  set_field(*this, synth_fields(), key, value);
}

void SynthConfig::validate() const { validate_fields(*this, synth_fields()); }

std::string SynthConfig::to_text() const { return fields_to_text(*this, synth_fields()); }

Intrinsics SynthConfig::intrinsics() const {
  Intrinsics k;
  k.fx = k.fy = focal;
  k.cx = 0.5 * (width - 1);
  k.cy = 0.5 * (height - 1);
  k.width = width;
  k.height = height;
  return k;
}

Corruption SynthConfig::corruption(std::uint64_t seed) const {
  Corruption c;
  c.depth_log_sigma = depth_noise;
  c.depth_noise_wavelength = depth_noise_wavelength;
  c.pose_sigma_translation = pose_noise_translation;
  c.pose_sigma_rotation = pose_noise_rotation;
  c.uncertainty = uncertainty == "constant" ? Corruption::Uncertainty::Constant : Corruption::Uncertainty::TrueResidual;
  c.uncertainty_constant = uncertainty_constant;
  c.brightness = brightness == "noisy"      ? Corruption::Brightness::Noisy
                 : brightness == "identity" ? Corruption::Brightness::Identity
                                            : Corruption::Brightness::Exact;
  c.brightness_sigma = brightness_noise;
  c.seed = seed;
  return c;
}

SynthConfig SynthConfig::parse(std::string_view text) { return parse_config<SynthConfig>(text); }

SynthConfig SynthConfig::load(const std::filesystem::path& path) {
  try {
    return parse(read_file(path));
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

}  // namespace d3vo
