#pragma once

#include <string>
#include <vector>

#include "svloc/world.hpp"

namespace svloc {

enum class Scenario { kLoop0, kLoop90, kLoop180, kCrossTime };

const char* scenario_name(Scenario s);
Scenario scenario_from_name(const std::string& name);

struct TrajectoryParams {
  int num_intersections = 20;
  int db_poses_per_intersection = 7;
  int query_window = 1;       // query poses emitted per intersection
  double camera_height = 1.4;
  double db_step = 0.8;       // spacing along a database pass
  double query_step = 0.6;
  double min_separation = 6.0;  // between intersection anchors
  double margin = 2.5;          // keep-out from world walls
  double clearance = 0.7;       // keep-out from solids
  double content_radius = 8.0;  // require an object within this range
  int max_attempts = 4000;
};

// Database poses (already restricted to the scenario's viewpoint band) and
// per-intersection query windows with ground truth retained in world frame.
struct Trajectory {
  Scenario scenario = Scenario::kLoop0;
  std::vector<Pose> database;
  std::vector<std::vector<Pose>> query_windows;
};

Trajectory generate_trajectory(const GroundTruthWorld& world, Scenario scenario,
                               const TrajectoryParams& params,
                               std::uint64_t seed);

struct ViewpointAudit {
  double nearest_db_distance = 0;
  double yaw_diff_deg = 0;  // |wrapped yaw difference| to nearest database pose
};

// Per query window: distance and yaw difference to the nearest database pose.
std::vector<ViewpointAudit> audit_trajectory(const Trajectory& traj);

std::string trajectory_to_json(const Trajectory& traj);
Trajectory trajectory_from_json(const std::string& text);
void save_trajectory(const Trajectory& traj, const std::string& path);
Trajectory load_trajectory(const std::string& path);

}  // namespace svloc
