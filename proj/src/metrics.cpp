#include "nowcast/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace nowcast {

namespace {

double joint_distance_cm(const Point3& a, const Point3& b) {
  const double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
  return 100.0 * std::sqrt(dx * dx + dy * dy + dz * dz);
}

void check_paired(const std::vector<Pose3D>& pred, const std::vector<Pose3D>& gt) {
  if (pred.size() != gt.size()) throw std::invalid_argument("metrics: pred/gt frame counts differ");
  for (size_t i = 0; i < pred.size(); ++i)
    if (pred[i].joint_count() != gt[i].joint_count())
      throw std::invalid_argument("metrics: pred/gt joint counts differ");
}

}  // namespace

std::pair<double, double> add_metric(const std::vector<Pose3D>& pred, const std::vector<Pose3D>& gt) {
  check_paired(pred, gt);
  double sum = 0.0;
  long n = 0;
  std::vector<double> frame_means;
  for (size_t i = 0; i < pred.size(); ++i) {
    double fsum = 0.0;
    long fn = 0;
    for (int j = 0; j < gt[i].joint_count(); ++j) {
      if (!gt[i].joint_valid(j) || !pred[i].joint_valid(j)) continue;
      const double d = joint_distance_cm(pred[i].joints[j], gt[i].joints[j]);
      fsum += d;
      ++fn;
    }
    if (fn > 0) {
      sum += fsum;
      n += fn;
      frame_means.push_back(fsum / fn);
    }
  }
  if (n == 0) throw std::invalid_argument("add_metric: no jointly-valid joints to evaluate");
  const double mean = sum / n;
  double var = 0.0;
  const double fm = [&] {
    double s = 0.0;
    for (double m : frame_means) s += m;
    return s / frame_means.size();
  }();
  for (double m : frame_means) var += (m - fm) * (m - fm);
  return {mean, std::sqrt(var / frame_means.size())};
}

std::map<double, double> map_metric(const std::vector<Pose3D>& pred, const std::vector<Pose3D>& gt,
                                    const std::vector<double>& thresholds_cm) {
  check_paired(pred, gt);
  std::vector<double> distances;
  for (size_t i = 0; i < pred.size(); ++i)
    for (int j = 0; j < gt[i].joint_count(); ++j)
      if (gt[i].joint_valid(j) && pred[i].joint_valid(j))
        distances.push_back(joint_distance_cm(pred[i].joints[j], gt[i].joints[j]));
  if (distances.empty()) throw std::invalid_argument("map_metric: no jointly-valid joints to evaluate");
  std::map<double, double> out;
  for (double t : thresholds_cm) {
    long hit = 0;
    for (double d : distances)
      if (d < t) ++hit;  // strict inequality
    out[t] = static_cast<double>(hit) / distances.size();
  }
  return out;
}

MetricsAccumulator::MetricsAccumulator(std::vector<double> horizon_offsets_s,
                                       std::vector<std::string> joint_names,
                                       std::vector<double> thresholds_cm)
    : offsets_(std::move(horizon_offsets_s)), joint_names_(std::move(joint_names)),
      thresholds_(std::move(thresholds_cm)), joint_buckets_(joint_names_.size()) {
  horizon_buckets_[0.0] = {};
  for (double o : offsets_) horizon_buckets_[o] = {};
}

void MetricsAccumulator::add(double horizon_offset_s, const Pose3D& pred, const Pose3D& gt) {
  auto it = horizon_buckets_.find(horizon_offset_s);
  if (it == horizon_buckets_.end()) throw std::invalid_argument("metrics: unknown horizon offset");
  Bucket& b = it->second;
  double fsum = 0.0;
  long fn = 0;
  for (int j = 0; j < gt.joint_count(); ++j) {
    if (!gt.joint_valid(j) || !pred.joint_valid(j)) continue;
    const double d = joint_distance_cm(pred.joints[j], gt.joints[j]);
    b.distances_cm.push_back(d);
    fsum += d;
    ++fn;
    if (horizon_offset_s == 0.0 && j < static_cast<int>(joint_buckets_.size())) {
      joint_buckets_[j].distances_cm.push_back(d);
      joint_buckets_[j].frame_means_cm.push_back(d);
      ++joint_buckets_[j].n_frames;
    }
  }
  ++b.n_frames;
  if (fn > 0) b.frame_means_cm.push_back(fsum / fn);
}

MetricsSummary MetricsAccumulator::summarize(const Bucket& b) const {
  MetricsSummary s;
  s.n_frames = b.n_frames;
  s.n_joints_evaluated = static_cast<long>(b.distances_cm.size());
  if (b.distances_cm.empty()) return s;
  double sum = 0.0;
  for (double d : b.distances_cm) sum += d;
  s.add_mean_cm = sum / b.distances_cm.size();
  double fm = 0.0;
  for (double m : b.frame_means_cm) fm += m;
  fm /= b.frame_means_cm.size();
  double var = 0.0;
  for (double m : b.frame_means_cm) var += (m - fm) * (m - fm);
  s.add_std_cm = std::sqrt(var / b.frame_means_cm.size());
  for (double t : thresholds_) {
    long hit = 0;
    for (double d : b.distances_cm)
      if (d < t) ++hit;
    s.map_at[t] = static_cast<double>(hit) / b.distances_cm.size();
  }
  return s;
}

MetricsReport MetricsAccumulator::report() const {
  MetricsReport r;
  for (const auto& [offset, bucket] : horizon_buckets_) r.per_horizon[offset] = summarize(bucket);
  r.current = r.per_horizon.at(0.0);
  for (size_t j = 0; j < joint_buckets_.size(); ++j) r.per_joint[joint_names_[j]] = summarize(joint_buckets_[j]);
  return r;
}

}  // namespace nowcast
