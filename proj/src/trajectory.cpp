#include "svloc/trajectory.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

namespace svloc {

using nlohmann::json;

const char* scenario_name(Scenario s) {
  switch (s) {
    case Scenario::kLoop0: return "Loop0";
    case Scenario::kLoop90: return "Loop90";
    case Scenario::kLoop180: return "Loop180";
    case Scenario::kCrossTime: return "CrossTime";
  }
  return "unknown";
}

Scenario scenario_from_name(const std::string& name) {
  if (name == "Loop0") return Scenario::kLoop0;
  if (name == "Loop90") return Scenario::kLoop90;
  if (name == "Loop180") return Scenario::kLoop180;
  if (name == "CrossTime") return Scenario::kCrossTime;
  raise(Status::kInvalidArgument, "unknown scenario: " + name);
}

namespace {

bool position_ok(const GroundTruthWorld& world, const TrajectoryParams& p,
                 const Vec3& pos) {
  Aabb inner{world.extent.min + Vec3(p.margin, p.margin, 0),
             world.extent.max - Vec3(p.margin, p.margin, 0)};
  if (!inner.contains(pos)) return false;
  for (const auto& obj : world.objects) {
    if (obj.distance(pos) < p.clearance) return false;
  }
  return true;
}

bool content_nearby(const GroundTruthWorld& world, const TrajectoryParams& p,
                    const Vec3& pos) {
  if (world.objects.empty()) return world.ground.has_value();
  for (const auto& obj : world.objects) {
    if (obj.distance(pos) <= p.content_radius) return true;
  }
  return false;
}

}  // namespace

Trajectory generate_trajectory(const GroundTruthWorld& world, Scenario scenario,
                               const TrajectoryParams& params,
                               std::uint64_t seed) {
  if (params.num_intersections < 1 || params.db_poses_per_intersection < 1 ||
      params.query_window < 1) {
    raise(Status::kInvalidArgument, "trajectory params must be positive");
  }
  const Vec3 inner = world.extent.size() - Vec3(2 * params.margin,
                                                2 * params.margin, 0);
  if (inner.x() <= 0 || inner.y() <= 0) {
    raise(Status::kInvalidArgument, "trajectory does not fit world extent");
  }
  const double z = world.ground_top() + params.camera_height;
  if (z > world.extent.max.z()) {
    raise(Status::kInvalidArgument, "camera height exceeds world extent");
  }

  Rng rng(derive_seed(seed, 0x7472616aULL));  // "traj"
  Trajectory traj;
  traj.scenario = scenario;

  std::vector<Vec3> anchors;
  int attempts = 0;
  while (static_cast<int>(anchors.size()) < params.num_intersections) {
    if (++attempts > params.max_attempts) {
      raise(Status::kInfeasible,
            "could not place trajectory intersections (world too small or "
            "too cluttered)");
    }
    Vec3 cand(rng.uniform(world.extent.min.x() + params.margin,
                          world.extent.max.x() - params.margin),
              rng.uniform(world.extent.min.y() + params.margin,
                          world.extent.max.y() - params.margin),
              z);
    const double query_yaw = rng.uniform(0.0, kTwoPi);

    double offset = 0.0;
    switch (scenario) {
      case Scenario::kLoop0:
      case Scenario::kCrossTime:
        offset = 0.0;
        break;
      case Scenario::kLoop90:
        offset = (rng.bernoulli(0.5) ? 1.0 : -1.0) *
                 deg2rad(90.0 + rng.uniform(-15.0, 15.0));
        break;
      case Scenario::kLoop180:
        offset = deg2rad(180.0 + rng.uniform(-15.0, 15.0));
        break;
    }
    const double db_yaw = wrap_angle(query_yaw + offset);

    bool ok = true;
    for (const auto& a : anchors) {
      if ((a - cand).head<2>().norm() < params.min_separation) {
        ok = false;
        break;
      }
    }
    if (!ok || !content_nearby(world, params, cand)) continue;

    // database pass: straight segment through the anchor
    const Vec3 db_dir(std::cos(db_yaw), std::sin(db_yaw), 0.0);
    std::vector<Pose> db_poses;
    const int m = params.db_poses_per_intersection;
    for (int i = 0; i < m && ok; ++i) {
      const double s = (i - (m - 1) / 2.0) * params.db_step;
      const Vec3 pos = cand + s * db_dir;
      if (!position_ok(world, params, pos)) ok = false;
      db_poses.push_back(camera_pose(pos, db_yaw));
    }
    // query window walks forward from the anchor
    const Vec3 q_dir(std::cos(query_yaw), std::sin(query_yaw), 0.0);
    std::vector<Pose> q_poses;
    for (int i = 0; i < params.query_window && ok; ++i) {
      const Vec3 pos = cand + i * params.query_step * q_dir;
      if (!position_ok(world, params, pos)) ok = false;
      q_poses.push_back(camera_pose(pos, query_yaw));
    }
    if (!ok) continue;

    if (scenario == Scenario::kLoop0 || scenario == Scenario::kCrossTime) {
      // queries revisit database poses exactly
      q_poses.clear();
      const int mid = m / 2;
      for (int i = 0; i < params.query_window; ++i) {
        q_poses.push_back(db_poses[static_cast<std::size_t>(
            std::min(mid + i, m - 1))]);
      }
    }

    anchors.push_back(cand);
    traj.database.insert(traj.database.end(), db_poses.begin(), db_poses.end());
    traj.query_windows.push_back(std::move(q_poses));
  }
  return traj;
}

std::vector<ViewpointAudit> audit_trajectory(const Trajectory& traj) {
  std::vector<ViewpointAudit> out;
  for (const auto& window : traj.query_windows) {
    if (window.empty() || traj.database.empty()) {
      out.push_back({});
      continue;
    }
    const Pose& q = window.front();
    double best = std::numeric_limits<double>::infinity();
    double best_yaw = 0;
    for (const auto& d : traj.database) {
      const double dist = (d.translation - q.translation).norm();
      if (dist < best) {
        best = dist;
        best_yaw = std::abs(angle_diff(pose_yaw(d), pose_yaw(q)));
      }
    }
    out.push_back({best, rad2deg(best_yaw)});
  }
  return out;
}

namespace {

json pose_to_json(const Pose& p) {
  json j;
  j["pos"] = json::array({p.translation.x(), p.translation.y(),
                          p.translation.z()});
  j["yaw"] = pose_yaw(p);
  return j;
}

Pose pose_from_json(const json& j) {
  const auto& pos = j.at("pos");
  return camera_pose(Vec3(pos[0].get<double>(), pos[1].get<double>(),
                          pos[2].get<double>()),
                     j.at("yaw").get<double>());
}

}  // namespace

std::string trajectory_to_json(const Trajectory& traj) {
  json j;
  j["scenario"] = scenario_name(traj.scenario);
  json db = json::array();
  for (const auto& p : traj.database) db.push_back(pose_to_json(p));
  j["database"] = std::move(db);
  json qs = json::array();
  for (const auto& w : traj.query_windows) {
    json wj = json::array();
    for (const auto& p : w) wj.push_back(pose_to_json(p));
    qs.push_back(std::move(wj));
  }
  j["query_windows"] = std::move(qs);
  return j.dump(2) + "\n";
}

Trajectory trajectory_from_json(const std::string& text) {
  Trajectory traj;
  try {
    auto j = json::parse(text);
    traj.scenario = scenario_from_name(j.at("scenario").get<std::string>());
    for (const auto& pj : j.at("database")) {
      traj.database.push_back(pose_from_json(pj));
    }
    for (const auto& wj : j.at("query_windows")) {
      std::vector<Pose> w;
      for (const auto& pj : wj) w.push_back(pose_from_json(pj));
      traj.query_windows.push_back(std::move(w));
    }
  } catch (const json::exception& e) {
    raise(Status::kFormat, std::string("trajectory json: ") + e.what());
  }
  return traj;
}

void save_trajectory(const Trajectory& traj, const std::string& path) {
  std::ofstream out(path);
  if (!out) raise(Status::kIo, "cannot open for write: " + path);
  out << trajectory_to_json(traj);
  if (!out) raise(Status::kIo, "write failed: " + path);
}

Trajectory load_trajectory(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(Status::kIo, "cannot open: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return trajectory_from_json(ss.str());
}

}  // namespace svloc
