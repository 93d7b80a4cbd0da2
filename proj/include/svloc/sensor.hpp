#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "svloc/world.hpp"

namespace svloc {

struct CameraIntrinsics {
  int width = 80;
  int height = 60;
  double fx = 50.0, fy = 50.0;
  double cx = 40.0, cy = 30.0;
  double max_range = 9.0;

  void validate() const {
    if (width <= 0 || height <= 0 || fx <= 0 || fy <= 0 || max_range <= 0) {
      raise(Status::kInvalidArgument, "bad camera intrinsics");
    }
  }
};

// Depth is camera-z depth: a frontal wall at distance d reads d on every
// pixel that hits it. NaN means no return (miss or beyond range).
//
// Intrinsics are carried in memory for back-projection but are not part of
// the SVLF container; loaders take them from configuration.
struct SensorFrame {
  int width = 0;
  int height = 0;
  std::vector<float> depth;            // row-major, NaN = no return
  std::vector<std::uint16_t> labels;   // defined where depth is finite
  Pose pose;
  std::uint64_t frame_id = 0;
  CameraIntrinsics intrinsics;

  float depth_at(int u, int v) const {
    return depth[static_cast<std::size_t>(v) * width + u];
  }
  std::uint16_t label_at(int u, int v) const {
    return labels[static_cast<std::size_t>(v) * width + u];
  }
  // Camera-frame direction of pixel (u,v) with z = 1, so point = dir * depth.
  Vec3 camera_ray(int u, int v) const;
  std::size_t finite_count() const;
};

// Analytic first-hit ray cast against the world's solids.
// Requires a gravity-aligned pose (camera up == world +Z within 1e-6).
SensorFrame render_view(const GroundTruthWorld& world, const Pose& pose,
                        const CameraIntrinsics& intrinsics);

// Camera-frame ray direction of pixel (u,v), z component normalized to 1 so
// that the ray parameter equals depth.
Vec3 pixel_ray(const CameraIntrinsics& k, int u, int v);

// First hit along origin + t*dir over all solids; returns label or 0 and
// sets t. Hits at t <= eps are ignored (solids containing the origin).
int ray_hit(const GroundTruthWorld& world, const Vec3& origin, const Vec3& dir,
            double max_t, double* t_out);

// Flip exactly floor(flip_rate * n_finite) labels (seeded choice of pixels,
// uniformly random different label). Depth untouched.
SensorFrame perturb_labels(const SensorFrame& frame, double flip_rate,
                           int num_labels, std::uint64_t seed);

// SVLF container. Intrinsics are supplied by the caller on load and must be
// consistent with the stored image dimensions.
void save_frame(const SensorFrame& frame, const std::string& path);
SensorFrame load_frame(const std::string& path,
                       const CameraIntrinsics& intrinsics);

std::string intrinsics_to_json(const CameraIntrinsics& k);
CameraIntrinsics intrinsics_from_json(const std::string& text);

}  // namespace svloc
