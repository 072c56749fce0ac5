#pragma once

#include "nowcast/pose.hpp"

#include <map>
#include <string>
#include <utility>
#include <vector>

namespace nowcast {

inline const std::vector<double> kDefaultMapThresholdsCm = {2.0, 4.0, 6.0, 8.0, 10.0};

struct MetricsSummary {
  double add_mean_cm = 0.0;
  double add_std_cm = 0.0;
  std::map<double, double> map_at;  // threshold cm -> fraction
  long n_frames = 0;
  long n_joints_evaluated = 0;
};

struct MetricsReport {
  MetricsSummary current;                          // horizon t
  std::map<double, MetricsSummary> per_horizon;    // offset seconds -> summary (0.0 = t)
  std::map<std::string, MetricsSummary> per_joint; // current pose, by joint name
  std::string mode;                                // "gt_past" | "autoregressive"
  std::string provenance;                          // config/seed echo, JSON

  std::string to_json() const;
  static MetricsReport from_json(const std::string& text);
  /// Per-horizon and per-joint tables; one row per horizon / joint.
  std::string per_horizon_csv() const;
  std::string per_joint_csv() const;
};

/// Mean L2 distance in cm over jointly-valid (frame, joint) pairs; the std is
/// taken over per-frame mean distances. Throws std::invalid_argument when no
/// pair is jointly valid.
std::pair<double, double> add_metric(const std::vector<Pose3D>& pred, const std::vector<Pose3D>& gt);

/// Fraction of jointly-valid pairs with distance strictly below each
/// threshold (joints pooled globally across frames).
std::map<double, double> map_metric(const std::vector<Pose3D>& pred, const std::vector<Pose3D>& gt,
                                    const std::vector<double>& thresholds_cm = kDefaultMapThresholdsCm);

/// Streaming accumulator used by the evaluation protocols; one bucket per
/// horizon plus per-joint buckets for the current pose.
class MetricsAccumulator {
public:
  MetricsAccumulator(std::vector<double> horizon_offsets_s, std::vector<std::string> joint_names,
                     std::vector<double> thresholds_cm = kDefaultMapThresholdsCm);

  /// horizon_offset_s == 0 accumulates the current pose (and per-joint rows).
  void add(double horizon_offset_s, const Pose3D& pred, const Pose3D& gt);

  MetricsReport report() const;

private:
  struct Bucket {
    std::vector<double> distances_cm;        // jointly-valid pairs, pooled
    std::vector<double> frame_means_cm;      // per frame with >= 1 valid pair
    long n_frames = 0;
  };
  MetricsSummary summarize(const Bucket& b) const;

  std::vector<double> offsets_;
  std::vector<std::string> joint_names_;
  std::vector<double> thresholds_;
  std::map<double, Bucket> horizon_buckets_;
  std::vector<Bucket> joint_buckets_;
};

}  // namespace nowcast
