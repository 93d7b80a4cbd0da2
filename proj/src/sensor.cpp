#include "svloc/sensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

namespace svloc {

namespace {

constexpr double kTEps = 1e-9;

// Slab intersection; returns entry parameter or infinity. Rays starting
// inside the box are treated as misses (no visible surface).
double ray_box(const Vec3& o, const Vec3& d, const Aabb& b) {
  double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 0.0) {
      if (o[a] < b.min[a] || o[a] > b.max[a]) {
        return std::numeric_limits<double>::infinity();
      }
      continue;
    }
    double lo = (b.min[a] - o[a]) / d[a];
    double hi = (b.max[a] - o[a]) / d[a];
    if (lo > hi) std::swap(lo, hi);
    t0 = std::max(t0, lo);
    t1 = std::min(t1, hi);
    if (t0 > t1) return std::numeric_limits<double>::infinity();
  }
  if (t0 <= kTEps) return std::numeric_limits<double>::infinity();
  return t0;
}

// Finite vertical cylinder (solid, with caps).
double ray_cylinder(const Vec3& o, const Vec3& d, const Solid& s) {
  const double inf = std::numeric_limits<double>::infinity();
  const double ox = o.x() - s.cyl_center.x();
  const double oy = o.y() - s.cyl_center.y();
  const double a = d.x() * d.x() + d.y() * d.y();
  const double b = 2.0 * (ox * d.x() + oy * d.y());
  const double c = ox * ox + oy * oy - s.cyl_radius * s.cyl_radius;

  double best = inf;
  if (a > 0.0) {
    const double disc = b * b - 4.0 * a * c;
    if (disc >= 0.0) {
      const double sq = std::sqrt(disc);
      for (double t : {(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)}) {
        if (t <= kTEps || t >= best) continue;
        const double z = o.z() + t * d.z();
        if (z >= s.cyl_z0 && z <= s.cyl_z1) best = t;
      }
    }
  }
  // caps
  if (d.z() != 0.0) {
    for (double zc : {s.cyl_z0, s.cyl_z1}) {
      const double t = (zc - o.z()) / d.z();
      if (t <= kTEps || t >= best) continue;
      const double x = ox + t * d.x();
      const double y = oy + t * d.y();
      if (x * x + y * y <= s.cyl_radius * s.cyl_radius) best = t;
    }
  }
  // a == 0 and inside the circle: vertical ray through the interior only
  // meets the caps, handled above
  if (best < inf && s.contains(o)) return inf;
  return best;
}

}  // namespace

std::size_t SensorFrame::finite_count() const {
  std::size_t n = 0;
  for (float d : depth) {
    if (std::isfinite(d)) ++n;
  }
  return n;
}

Vec3 SensorFrame::camera_ray(int u, int v) const {
  return pixel_ray(intrinsics, u, v);
}

Vec3 pixel_ray(const CameraIntrinsics& k, int u, int v) {
  return Vec3((u + 0.5 - k.cx) / k.fx, (v + 0.5 - k.cy) / k.fy, 1.0);
}

int ray_hit(const GroundTruthWorld& world, const Vec3& origin, const Vec3& dir,
            double max_t, double* t_out) {
  double best = std::numeric_limits<double>::infinity();
  int label = 0;
  for (const Solid* s : world.solids()) {
    double t;
    if (s->kind == Solid::Kind::kBox) {
      t = ray_box(origin, dir, s->box);
    } else {
      t = ray_cylinder(origin, dir, *s);
    }
    if (t < best) {
      best = t;
      label = s->label;
    }
  }
  if (!(best <= max_t)) return 0;
  *t_out = best;
  return label;
}

SensorFrame render_view(const GroundTruthWorld& world, const Pose& pose,
                        const CameraIntrinsics& k) {
  k.validate();
  if (!pose.is_orthonormal(1e-9)) {
    raise(Status::kInvalidArgument, "pose rotation is not orthonormal");
  }
  if (!is_gravity_aligned(pose)) {
    raise(Status::kInvalidArgument, "camera pose is not gravity-aligned");
  }
  SensorFrame f;
  f.width = k.width;
  f.height = k.height;
  f.pose = pose;
  f.intrinsics = k;
  const std::size_t n = static_cast<std::size_t>(k.width) * k.height;
  f.depth.assign(n, std::numeric_limits<float>::quiet_NaN());
  f.labels.assign(n, 0);

  for (int v = 0; v < k.height; ++v) {
    for (int u = 0; u < k.width; ++u) {
      // camera-space direction with unit z: the ray parameter is z-depth
      const Vec3 dir_world = pose.rotation * pixel_ray(k, u, v);
      double t;
      const int label = ray_hit(world, pose.translation, dir_world,
                                k.max_range, &t);
      if (label > 0) {
        const std::size_t i = static_cast<std::size_t>(v) * k.width + u;
        f.depth[i] = static_cast<float>(t);
        f.labels[i] = static_cast<std::uint16_t>(label);
      }
    }
  }
  return f;
}

SensorFrame perturb_labels(const SensorFrame& frame, double flip_rate,
                           int num_labels, std::uint64_t seed) {
  if (flip_rate < 0.0 || flip_rate >= 1.0) {
    raise(Status::kInvalidArgument, "flip_rate must be in [0, 1)");
  }
  if (num_labels < 2) {
    raise(Status::kInvalidArgument, "need at least 2 labels to flip");
  }
  SensorFrame out = frame;
  std::vector<std::size_t> finite;
  finite.reserve(frame.depth.size());
  for (std::size_t i = 0; i < frame.depth.size(); ++i) {
    if (std::isfinite(frame.depth[i])) finite.push_back(i);
  }
  const std::size_t flips =
      static_cast<std::size_t>(flip_rate * static_cast<double>(finite.size()));
  Rng rng(derive_seed(seed, 0x666c6970ULL));  // "flip"
  // partial Fisher-Yates: first `flips` entries are the chosen pixels
  for (std::size_t i = 0; i < flips; ++i) {
    const std::size_t j = i + rng.index(finite.size() - i);
    std::swap(finite[i], finite[j]);
    const std::size_t px = finite[i];
    const int old = out.labels[px];
    int pick = 1 + static_cast<int>(rng.uniform_u64(
                       static_cast<std::uint64_t>(num_labels - 1)));
    if (pick >= old) ++pick;  // uniform over {1..L} \ {old}
    out.labels[px] = static_cast<std::uint16_t>(pick);
  }
  return out;
}

//=============================================================================
// SVLF binary container
//=============================================================================

void save_frame(const SensorFrame& frame, const std::string& path) {
  ByteWriter w(path);
  w.magic("SVLF");
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(frame.width));
  w.u32(static_cast<std::uint32_t>(frame.height));
  for (float d : frame.depth) w.f32(d);
  for (std::uint16_t l : frame.labels) w.u16(l);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) w.f64(frame.pose.rotation(r, c));
  }
  for (int r = 0; r < 3; ++r) w.f64(frame.pose.translation[r]);
  w.finish();
}

SensorFrame load_frame(const std::string& path,
                       const CameraIntrinsics& intrinsics) {
  ByteReader r(path);
  r.expect_magic("SVLF");
  const std::uint32_t version = r.u32();
  if (version != 1) raise(Status::kFormat, path + ": unsupported version");
  SensorFrame f;
  f.width = static_cast<int>(r.u32());
  f.height = static_cast<int>(r.u32());
  if (f.width <= 0 || f.height <= 0 || f.width > 1 << 16 ||
      f.height > 1 << 16) {
    raise(Status::kFormat, path + ": implausible dimensions");
  }
  if (f.width != intrinsics.width || f.height != intrinsics.height) {
    raise(Status::kConfigMismatch,
          path + ": frame dimensions do not match intrinsics");
  }
  f.intrinsics = intrinsics;
  const std::size_t n = static_cast<std::size_t>(f.width) * f.height;
  f.depth.resize(n);
  for (auto& d : f.depth) d = r.f32();
  f.labels.resize(n);
  for (auto& l : f.labels) l = r.u16();
  for (int row = 0; row < 3; ++row) {
    for (int c = 0; c < 3; ++c) f.pose.rotation(row, c) = r.f64();
  }
  for (int row = 0; row < 3; ++row) f.pose.translation[row] = r.f64();
  return f;
}

std::string intrinsics_to_json(const CameraIntrinsics& k) {
  nlohmann::json j;
  j["width"] = k.width;
  j["height"] = k.height;
  j["fx"] = k.fx;
  j["fy"] = k.fy;
  j["cx"] = k.cx;
  j["cy"] = k.cy;
  j["max_range"] = k.max_range;
  return j.dump(2) + "\n";
}

CameraIntrinsics intrinsics_from_json(const std::string& text) {
  CameraIntrinsics k;
  try {
    auto j = nlohmann::json::parse(text);
    k.width = j.at("width").get<int>();
    k.height = j.at("height").get<int>();
    k.fx = j.at("fx").get<double>();
    k.fy = j.at("fy").get<double>();
    k.cx = j.at("cx").get<double>();
    k.cy = j.at("cy").get<double>();
    k.max_range = j.at("max_range").get<double>();
  } catch (const std::exception& e) {
    raise(Status::kFormat, std::string("intrinsics json: ") + e.what());
  }
  k.validate();
  return k;
}

}  // namespace svloc
