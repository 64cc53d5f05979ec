#include "d3vo/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <Eigen/Geometry>

#include "d3vo/errors.hpp"

namespace d3vo {

namespace fs = std::filesystem;

void Trajectory::push_back(double timestamp, const Se3& pose) {
  if (!std::isfinite(timestamp)) throw InputError("trajectory: non-finite timestamp");
  if (!poses_.empty() && !(timestamp > poses_.back().timestamp)) {
    throw InputError("trajectory: timestamps must be strictly increasing");
  }
  poses_.push_back({timestamp, pose});
}

Se3 Trajectory::camera_to_world(std::size_t i) const {
  return convention_ == PoseConvention::CameraToWorld ? poses_[i].pose : poses_[i].pose.inverse();
}

Trajectory Trajectory::as_camera_to_world() const {
  Trajectory out(PoseConvention::CameraToWorld);
  for (std::size_t i = 0; i < poses_.size(); ++i) out.push_back(poses_[i].timestamp, camera_to_world(i));
  return out;
}

Trajectory load_trajectory(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open trajectory " + path.string());
  Trajectory traj(PoseConvention::CameraToWorld);
  std::string line;
  std::size_t row = 0;
  int columns = -1;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::vector<double> v;
    double x;
    while (ls >> x) v.push_back(x);
    if (!ls.eof()) throw InputError(path.string() + ": non-numeric field on row " + std::to_string(row));
    if (v.empty()) continue;
    const int n = static_cast<int>(v.size());
    if (columns < 0) columns = n;
    if (n != columns || (n != 8 && n != 12 && n != 13)) {
      throw InputError(path.string() + ": unsupported column count on row " + std::to_string(row));
    }
    double t = static_cast<double>(row);
    Se3 pose;
    if (n == 8) {
      t = v[0];
      Eigen::Quaterniond q(v[7], v[4], v[5], v[6]);
      if (!(q.norm() > 1e-9)) throw InputError(path.string() + ": zero quaternion");
      pose = Se3(q.normalized().toRotationMatrix(), Vec3(v[1], v[2], v[3]));
    } else {
      const std::size_t o = n == 13 ? 1 : 0;
      if (n == 13) t = v[0];
      Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 4; ++c) m(r, c) = v[o + static_cast<std::size_t>(4 * r + c)];
      pose = Se3::from_matrix(m).normalized();
    }
    traj.push_back(t, pose);
    ++row;
  }
  if (traj.empty()) throw InputError(path.string() + ": no poses");
  return traj;
}

void save_trajectory_tum(const Trajectory& trajectory, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write trajectory " + path.string());
  out << std::setprecision(17);
  for (std::size_t i = 0; i < trajectory.size(); ++i) {
    const Se3 p = trajectory.camera_to_world(i);
    const Eigen::Quaterniond q(p.rotation());
    out << trajectory[i].timestamp << ' ' << p.translation().x() << ' ' << p.translation().y() << ' '
        << p.translation().z() << ' ' << q.x() << ' ' << q.y() << ' ' << q.z() << ' ' << q.w() << '\n';
  }
}

void save_trajectory_kitti(const Trajectory& trajectory, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write trajectory " + path.string());
  out << std::setprecision(17);
  for (std::size_t i = 0; i < trajectory.size(); ++i) {
    const Eigen::Matrix4d m = trajectory.camera_to_world(i).matrix();
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 4; ++c) out << m(r, c) << (r == 2 && c == 3 ? '\n' : ' ');
    }
  }
}

std::vector<AssociatedPair> associate(const Trajectory& est, const Trajectory& gt, double max_dt) {
  std::vector<AssociatedPair> pairs;
  const auto gp = gt.poses();
  for (std::size_t i = 0; i < est.size(); ++i) {
    const double t = est[i].timestamp;
    auto it = std::lower_bound(gp.begin(), gp.end(), t,
                               [](const StampedPose& p, double v) { return p.timestamp < v; });
    std::size_t best = gp.size();
    double best_dt = max_dt;
    for (auto cand : {it, it == gp.begin() ? gp.end() : it - 1}) {
      if (cand == gp.end()) continue;
      const double dt = std::abs(cand->timestamp - t);
      if (dt <= best_dt) {
        best_dt = dt;
        best = static_cast<std::size_t>(cand - gp.begin());
      }
    }
    if (best < gp.size() && (pairs.empty() || pairs.back().gt < best)) pairs.push_back({i, best});
  }
  return pairs;
}

TRelResult t_rel(const Trajectory& est, const Trajectory& gt) {
  const auto pairs = associate(est, gt);
  if (pairs.size() < 2) throw InputError("t_rel: fewer than two associated poses");
  std::vector<Se3> g, e;
  for (const auto& p : pairs) {
    g.push_back(gt.camera_to_world(p.gt));
    e.push_back(est.camera_to_world(p.est));
  }
  std::vector<double> dist(g.size(), 0.0);
  for (std::size_t i = 1; i < g.size(); ++i) {
    dist[i] = dist[i - 1] + (g[i].translation() - g[i - 1].translation()).norm();
  }
  const double total = dist.back();
  TRelResult res;
  std::vector<double> lengths;
  if (total >= 100.0) {
    for (int l = 100; l <= 800; l += 100) lengths.push_back(l);
  } else {
    res.desk_scale = true;
    for (int l = 1; l <= 8; ++l) lengths.push_back(0.1 * l * total);
  }
  if (!(total > 0.0)) throw InputError("t_rel: ground-truth path has zero length");

  double sum = 0.0;
  std::size_t count = 0;
  for (double len : lengths) {
    SegmentStats s;
    s.length = len;
    double seg_sum = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      // First frame at least `len` further along the path.
      const auto it = std::lower_bound(dist.begin() + static_cast<std::ptrdiff_t>(i), dist.end(),
                                       dist[i] + len);
      if (it == dist.end()) break;
      const auto j = static_cast<std::size_t>(it - dist.begin());
      const Se3 dg = g[i].inverse() * g[j];
      const Se3 de = e[i].inverse() * e[j];
      const double err = (dg.inverse() * de).translation().norm() / len;
      seg_sum += err;
      ++s.count;
    }
    if (s.count == 0) continue;
    s.mean_error_percent = 100.0 * seg_sum / static_cast<double>(s.count);
    sum += seg_sum;
    count += s.count;
    res.segments.push_back(s);
  }
  if (count == 0) throw InputError("t_rel: no segment fits the trajectory");
  res.percent = 100.0 * sum / static_cast<double>(count);
  return res;
}

AteResult ate_rmse(const Trajectory& est, const Trajectory& gt, AlignMode mode) {
  const auto pairs = associate(est, gt);
  if (pairs.empty()) throw InputError("ate_rmse: no associated poses");
  std::vector<Vec3> pe, pg;
  for (const auto& p : pairs) {
    pe.push_back(est.position(p.est));
    pg.push_back(gt.position(p.gt));
  }
  AteResult res;
  res.pairs = pairs.size();
  if (mode != AlignMode::None) res.alignment = umeyama_align(pe, pg, mode == AlignMode::Sim3);
  double sq = 0.0;
  for (std::size_t i = 0; i < pe.size(); ++i) sq += (res.alignment.apply(pe[i]) - pg[i]).squaredNorm();
  res.rmse = std::sqrt(sq / static_cast<double>(pe.size()));
  return res;
}

EvalReport evaluate(const Trajectory& est, const Trajectory& gt, bool sim3) {
  EvalReport r;
  const TRelResult tr = t_rel(est, gt);
  r.t_rel_percent = tr.percent;
  r.desk_scale = tr.desk_scale;
  r.segments = tr.segments;
  const AteResult raw = ate_rmse(est, gt, AlignMode::None);
  const AteResult aligned = ate_rmse(est, gt, sim3 ? AlignMode::Sim3 : AlignMode::Se3);
  r.ate_rmse_raw = raw.rmse;
  r.ate_rmse_aligned = aligned.rmse;
  r.alignment = aligned.alignment;
  r.sim3 = sim3;
  r.pairs = raw.pairs;
  return r;
}

void write_eval_csv(const EvalReport& report, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << std::setprecision(10);
  out << "metric,value\n";
  out << "pairs," << report.pairs << '\n';
  out << "t_rel_percent," << report.t_rel_percent << '\n';
  out << "segment_set," << (report.desk_scale ? "desk" : "kitti") << '\n';
  out << "ate_rmse_raw_m," << report.ate_rmse_raw << '\n';
  out << "ate_rmse_aligned_m," << report.ate_rmse_aligned << '\n';
  out << "alignment," << (report.sim3 ? "sim3" : "se3") << '\n';
  out << "alignment_scale," << report.alignment.scale << '\n';
  const Vec3 t = report.alignment.transform.translation();
  out << "alignment_translation," << t.x() << ' ' << t.y() << ' ' << t.z() << '\n';
  out << "\nsegment_length_m,samples,t_rel_percent\n";
  for (const auto& s : report.segments) {
    out << s.length << ',' << s.count << ',' << s.mean_error_percent << '\n';
  }
}

}  // namespace d3vo
