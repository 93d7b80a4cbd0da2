#include "svloc/voxel_map.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace svloc {

SemanticVoxelMap::SemanticVoxelMap(double voxel_size, Vec3 origin,
                                   int num_labels, std::uint32_t min_hits,
                                   MapRole role)
    : voxel_size_(voxel_size),
      origin_(origin),
      num_labels_(num_labels),
      min_hits_(min_hits),
      role_(role) {
  if (voxel_size <= 0) raise(Status::kInvalidArgument, "voxel_size must be > 0");
  if (num_labels < 1) raise(Status::kInvalidArgument, "num_labels must be >= 1");
  if (min_hits < 1) raise(Status::kInvalidArgument, "min_hits must be >= 1");
}

void SemanticVoxelMap::add_hit(const VoxelKey& k, int label) {
  if (label < 1 || label > num_labels_) {
    raise(Status::kInvalidArgument, "label out of range in add_hit");
  }
  auto& ev = evidence_[k];
  if (ev.label_hits.empty()) {
    ev.label_hits.assign(static_cast<std::size_t>(num_labels_), 0);
  }
  ev.label_hits[static_cast<std::size_t>(label - 1)]++;
}

void SemanticVoxelMap::merge(const SemanticVoxelMap& other) {
  if (other.voxel_size_ != voxel_size_ || other.origin_ != origin_ ||
      other.num_labels_ != num_labels_) {
    raise(Status::kConfigMismatch, "cannot merge maps with different grids");
  }
  for (const auto& [key, ev] : other.evidence_) {
    auto& mine = evidence_[key];
    mine.free_hits += ev.free_hits;
    if (!ev.label_hits.empty()) {
      if (mine.label_hits.empty()) {
        mine.label_hits.assign(static_cast<std::size_t>(num_labels_), 0);
      }
      for (std::size_t i = 0; i < ev.label_hits.size(); ++i) {
        mine.label_hits[i] += ev.label_hits[i];
      }
    }
  }
}

CellState SemanticVoxelMap::resolve(const VoxelKey& k) const {
  auto it = evidence_.find(k);
  if (it == evidence_.end()) return kUnobserved;
  const auto& ev = it->second;
  std::uint32_t total = 0;
  std::uint32_t best = 0;
  int best_label = 0;
  for (std::size_t i = 0; i < ev.label_hits.size(); ++i) {
    total += ev.label_hits[i];
    if (ev.label_hits[i] > best) {  // strict: ties keep the smaller label
      best = ev.label_hits[i];
      best_label = static_cast<int>(i) + 1;
    }
  }
  if (total >= ev.free_hits && total >= min_hits_) {
    return occupied_state(best_label);
  }
  if (ev.free_hits >= min_hits_) return kFree;
  return kUnobserved;
}

std::size_t SemanticVoxelMap::occupied_count() const {
  std::size_t n = 0;
  for (const auto& [key, ev] : evidence_) {
    if (is_occupied(resolve(key))) ++n;
  }
  return n;
}

std::vector<VoxelKey> SemanticVoxelMap::occupied_voxels() const {
  std::vector<VoxelKey> keys;
  keys.reserve(evidence_.size());
  for (const auto& [key, ev] : evidence_) {
    if (is_occupied(resolve(key))) keys.push_back(key);
  }
  std::sort(keys.begin(), keys.end());
  return keys;
}

SemanticVoxelMap SemanticVoxelMap::rotated(const Vec3& center,
                                           double yaw) const {
  SemanticVoxelMap out(voxel_size_, origin_, num_labels_, 1, role_);
  const Mat3 r_inv = rot_z(-yaw);
  // Rotating content by yaw: destination voxel v reads source at
  // R_z(-yaw)*(c(v)-center)+center. Iterate destinations covering the
  // rotated bounds of the source cells.
  if (evidence_.empty()) return out;
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (const auto& [key, ev] : evidence_) {
    const Vec3 c = voxel_center(key);
    lo = lo.cwiseMin(c);
    hi = hi.cwiseMax(c);
  }
  const Vec3 corners[4] = {Vec3(lo.x(), lo.y(), 0), Vec3(lo.x(), hi.y(), 0),
                           Vec3(hi.x(), lo.y(), 0), Vec3(hi.x(), hi.y(), 0)};
  Vec3 rlo = lo, rhi = hi;
  const Mat3 r_fwd = rot_z(yaw);
  for (const auto& corner : corners) {
    Vec3 c(corner.x(), corner.y(), 0);
    const Vec3 rc = r_fwd * (c - Vec3(center.x(), center.y(), 0)) +
                    Vec3(center.x(), center.y(), 0);
    rlo.x() = std::min(rlo.x(), rc.x());
    rlo.y() = std::min(rlo.y(), rc.y());
    rhi.x() = std::max(rhi.x(), rc.x());
    rhi.y() = std::max(rhi.y(), rc.y());
  }
  const VoxelKey klo = voxel_of(rlo - Vec3::Constant(voxel_size_));
  const VoxelKey khi = voxel_of(rhi + Vec3::Constant(voxel_size_));
  for (std::int32_t z = klo.z; z <= khi.z; ++z) {
    for (std::int32_t y = klo.y; y <= khi.y; ++y) {
      for (std::int32_t x = klo.x; x <= khi.x; ++x) {
        const VoxelKey dst{x, y, z};
        const Vec3 src = r_inv * (voxel_center(dst) - center) + center;
        const CellState s = resolve_point(src);
        if (s == kUnobserved) continue;
        if (s == kFree) {
          out.add_free(dst);
        } else {
          out.add_hit(dst, state_label(s));
        }
      }
    }
  }
  return out;
}

//=============================================================================
// Fusion
//=============================================================================

void walk_ray(const Vec3& origin, const Vec3& hit, double voxel_size,
              const Vec3& grid_origin, std::vector<VoxelKey>& out_free,
              VoxelKey& out_hit) {
  out_free.clear();
  const Vec3 o = (origin - grid_origin) / voxel_size;
  const Vec3 p = (hit - grid_origin) / voxel_size;
  VoxelKey cur{static_cast<std::int32_t>(std::floor(o.x())),
               static_cast<std::int32_t>(std::floor(o.y())),
               static_cast<std::int32_t>(std::floor(o.z()))};
  const VoxelKey target{static_cast<std::int32_t>(std::floor(p.x())),
                        static_cast<std::int32_t>(std::floor(p.y())),
                        static_cast<std::int32_t>(std::floor(p.z()))};
  out_hit = target;
  const Vec3 d = p - o;
  int step[3];
  double t_max[3], t_delta[3];
  double cell[3] = {double(cur.x), double(cur.y), double(cur.z)};
  for (int a = 0; a < 3; ++a) {
    if (d[a] > 0) {
      step[a] = 1;
      t_delta[a] = 1.0 / d[a];
      t_max[a] = (cell[a] + 1.0 - o[a]) / d[a];
    } else if (d[a] < 0) {
      step[a] = -1;
      t_delta[a] = -1.0 / d[a];
      t_max[a] = (cell[a] - o[a]) / d[a];
    } else {
      step[a] = 0;
      t_delta[a] = std::numeric_limits<double>::infinity();
      t_max[a] = std::numeric_limits<double>::infinity();
    }
  }
  std::int32_t idx[3] = {cur.x, cur.y, cur.z};
  const long max_steps = std::labs(target.x - cur.x) +
                         std::labs(target.y - cur.y) +
                         std::labs(target.z - cur.z) + 3;
  for (long i = 0; i < max_steps; ++i) {
    if (idx[0] == target.x && idx[1] == target.y && idx[2] == target.z) return;
    out_free.push_back(VoxelKey{idx[0], idx[1], idx[2]});
    int axis = 0;
    if (t_max[1] < t_max[axis]) axis = 1;
    if (t_max[2] < t_max[axis]) axis = 2;
    idx[axis] += step[axis];
    t_max[axis] += t_delta[axis];
  }
  // Numeric corner case: ran out of steps before reaching the target. The
  // hit voxel still gets its vote; missing free votes are harmless.
}

SemanticVoxelMap fuse(const std::vector<SensorFrame>& frames, double voxel_size,
                      const FuseOptions& options) {
  if (frames.empty()) raise(Status::kEmptyInput, "fuse: no frames");
  const int labels = options.collapse_labels ? 1 : options.num_labels;
  SemanticVoxelMap map(voxel_size, Vec3::Zero(), labels, options.min_hits);

  std::vector<VoxelKey> free_keys;
  for (const auto& f : frames) {
    if (!is_gravity_aligned(f.pose)) {
      raise(Status::kInvalidArgument, "fuse: frame pose not gravity-aligned");
    }
    if (static_cast<std::size_t>(f.width) * f.height != f.depth.size() ||
        f.depth.size() != f.labels.size()) {
      raise(Status::kInvalidArgument, "fuse: malformed frame buffers");
    }
    for (int v = 0; v < f.height; ++v) {
      for (int u = 0; u < f.width; ++u) {
        const std::size_t i = static_cast<std::size_t>(v) * f.width + u;
        const float d = f.depth[i];
        if (!std::isfinite(d)) continue;
        int label = f.labels[i];
        if (label < 1) {
          raise(Status::kInvalidArgument,
                "fuse: finite-depth pixel without a label");
        }
        if (!options.discard_labels.empty() &&
            std::find(options.discard_labels.begin(),
                      options.discard_labels.end(),
                      label) != options.discard_labels.end()) {
          continue;
        }
        if (options.collapse_labels) label = 1;
        if (label > labels) {
          raise(Status::kInvalidArgument, "fuse: pixel label out of range");
        }
        // back-project: camera point at z-depth d through the pixel center
        const Vec3 cam_dir = f.camera_ray(u, v);
        const Vec3 hit = f.pose.apply(cam_dir * static_cast<double>(d));
        VoxelKey hit_key;
        walk_ray(f.pose.translation, hit, voxel_size, map.origin(), free_keys,
                 hit_key);
        for (const auto& k : free_keys) map.add_free(k);
        map.add_hit(hit_key, label);
      }
    }
  }
  return map;
}

//=============================================================================
// Subvolumes
//=============================================================================

std::size_t Subvolume::count(CellState s) const {
  return static_cast<std::size_t>(
      std::count(cells.begin(), cells.end(), s));
}

std::size_t Subvolume::observed_count() const {
  return cells.size() - count(kUnobserved);
}

Subvolume extract_subvolume(const SemanticVoxelMap& map, const Vec3& center,
                            double yaw, int side) {
  if (side < 2 || (side & (side - 1)) != 0) {
    raise(Status::kInvalidArgument, "subvolume side must be a power of two");
  }
  Subvolume sv;
  sv.side = side;
  sv.center = center;
  sv.yaw = wrap_angle(yaw);
  sv.cells.assign(static_cast<std::size_t>(side) * side * side, kUnobserved);
  const Mat3 rot = rot_z(-sv.yaw);
  const double vs = map.voxel_size();
  const double half = side / 2.0;
  std::size_t i = 0;
  for (int z = 0; z < side; ++z) {
    for (int y = 0; y < side; ++y) {
      for (int x = 0; x < side; ++x, ++i) {
        const Vec3 delta((x - half + 0.5) * vs, (y - half + 0.5) * vs,
                         (z - half + 0.5) * vs);
        sv.cells[i] = map.resolve_point(center + rot * delta);
      }
    }
  }
  return sv;
}

Subvolume rotate_subvolume(const Subvolume& sv, double yaw) {
  Subvolume out = sv;
  out.yaw = wrap_angle(sv.yaw + yaw);
  const int side = sv.side;
  const double half = side / 2.0;
  const Mat3 rot = rot_z(-yaw);
  std::size_t i = 0;
  for (int z = 0; z < side; ++z) {
    for (int y = 0; y < side; ++y) {
      for (int x = 0; x < side; ++x, ++i) {
        const Vec3 delta(x - half + 0.5, y - half + 0.5, z - half + 0.5);
        const Vec3 src = rot * delta;
        const int sx = static_cast<int>(std::floor(src.x() + half));
        const int sy = static_cast<int>(std::floor(src.y() + half));
        const int sz = static_cast<int>(std::floor(src.z() + half));
        if (sx < 0 || sy < 0 || sz < 0 || sx >= side || sy >= side ||
            sz >= side) {
          out.cells[i] = kUnobserved;
        } else {
          out.cells[i] = sv.at(sx, sy, sz);
        }
      }
    }
  }
  return out;
}

std::vector<Vec3> occupied_subvolume_centers(const SemanticVoxelMap& map,
                                             int side, int stride) {
  if (stride < 1) raise(Status::kInvalidArgument, "stride must be >= 1");
  const int half = side / 2;
  std::vector<VoxelKey> lattice;
  std::unordered_map<VoxelKey, bool, VoxelKeyHash> seen;
  auto div_floor = [](std::int64_t a, std::int64_t b) {
    return static_cast<std::int32_t>(
        a >= 0 ? a / b : -((-a + b - 1) / b));
  };
  auto div_ceil = [](std::int64_t a, std::int64_t b) {
    return static_cast<std::int32_t>(
        a > 0 ? (a + b - 1) / b : -((-a) / b));
  };
  for (const auto& v : map.occupied_voxels()) {
    // window anchored at lattice point k*stride covers voxels
    // [k*stride - half, k*stride + half)
    const std::int32_t kx0 = div_ceil(std::int64_t(v.x) + 1 - half, stride);
    const std::int32_t kx1 = div_floor(std::int64_t(v.x) + half, stride);
    const std::int32_t ky0 = div_ceil(std::int64_t(v.y) + 1 - half, stride);
    const std::int32_t ky1 = div_floor(std::int64_t(v.y) + half, stride);
    const std::int32_t kz0 = div_ceil(std::int64_t(v.z) + 1 - half, stride);
    const std::int32_t kz1 = div_floor(std::int64_t(v.z) + half, stride);
    for (std::int32_t kx = kx0; kx <= kx1; ++kx) {
      for (std::int32_t ky = ky0; ky <= ky1; ++ky) {
        for (std::int32_t kz = kz0; kz <= kz1; ++kz) {
          const VoxelKey key{kx, ky, kz};
          if (!seen.emplace(key, true).second) continue;
          lattice.push_back(key);
        }
      }
    }
  }
  std::sort(lattice.begin(), lattice.end());
  std::vector<Vec3> centers;
  centers.reserve(lattice.size());
  const double cell = stride * map.voxel_size();
  for (const auto& k : lattice) {
    centers.push_back(map.origin() + cell * Vec3(k.x, k.y, k.z));
  }
  return centers;
}

std::vector<TrainingPair> training_pairs(const std::vector<SensorFrame>& frames,
                                         double voxel_size,
                                         const TrainingPairOptions& options,
                                         std::uint64_t seed) {
  if (frames.size() < 2) {
    raise(Status::kEmptyInput, "training_pairs: need at least 2 frames");
  }
  SemanticVoxelMap complete = fuse(frames, voxel_size, options.fuse);
  complete.set_role(MapRole::kTrainingComplete);

  struct PerFrame {
    SemanticVoxelMap map;
    std::vector<Vec3> centers;
  };
  std::vector<PerFrame> singles;
  singles.reserve(frames.size());
  std::size_t total_centers = 0;
  for (const auto& f : frames) {
    SemanticVoxelMap m = fuse({f}, voxel_size, options.fuse);
    m.set_role(MapRole::kTrainingIncomplete);
    auto centers =
        occupied_subvolume_centers(m, options.side, options.stride);
    total_centers += centers.size();
    singles.push_back({std::move(m), std::move(centers)});
  }
  if (total_centers == 0) {
    raise(Status::kEmptyInput, "training_pairs: no occupied voxels");
  }

  Rng rng(derive_seed(seed, 0x7061697273ULL));  // "pairs"
  std::vector<TrainingPair> pairs;
  pairs.reserve(options.samples);
  for (std::size_t s = 0; s < options.samples; ++s) {
    // uniform over all (frame, center) combinations
    std::size_t pick = rng.index(total_centers);
    std::size_t fi = 0;
    while (pick >= singles[fi].centers.size()) {
      pick -= singles[fi].centers.size();
      ++fi;
    }
    const Vec3& c = singles[fi].centers[pick];
    TrainingPair p;
    p.incomplete = extract_subvolume(singles[fi].map, c, 0.0, options.side);
    p.incomplete.role = SubvolumeRole::kIncomplete;
    p.complete = extract_subvolume(complete, c, 0.0, options.side);
    p.complete.role = SubvolumeRole::kComplete;
    pairs.push_back(std::move(p));
  }
  return pairs;
}

//=============================================================================
// Binary IO
//=============================================================================

void save_map(const SemanticVoxelMap& map, const std::string& path) {
  std::vector<std::pair<VoxelKey, CellState>> records;
  records.reserve(map.stored_cells());
  for (const auto& [key, ev] : map.cells()) {
    const CellState s = map.resolve(key);
    if (s == kUnobserved) continue;
    records.emplace_back(key, s);
  }
  std::sort(records.begin(), records.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  ByteWriter w(path);
  w.magic("SVLM");
  w.u32(1);
  w.f64(map.voxel_size());
  for (int a = 0; a < 3; ++a) w.f64(map.origin()[a]);
  w.u64(records.size());
  for (const auto& [key, state] : records) {
    w.i32(key.x);
    w.i32(key.y);
    w.i32(key.z);
    // on disk: 0 = free, 1..L = class
    w.u8(static_cast<std::uint8_t>(state - 1));
  }
  w.finish();
}

SemanticVoxelMap load_map(const std::string& path, int num_labels) {
  ByteReader r(path);
  r.expect_magic("SVLM");
  if (r.u32() != 1) raise(Status::kFormat, path + ": unsupported version");
  const double vs = r.f64();
  Vec3 origin;
  for (int a = 0; a < 3; ++a) origin[a] = r.f64();
  const std::uint64_t count = r.u64();
  SemanticVoxelMap map(vs, origin, num_labels);
  for (std::uint64_t i = 0; i < count; ++i) {
    VoxelKey k{r.i32(), r.i32(), r.i32()};
    const std::uint8_t disk = r.u8();
    if (disk == 0) {
      map.add_free(k);
    } else {
      if (disk > num_labels) {
        raise(Status::kFormat, path + ": stored label exceeds num_labels");
      }
      map.add_hit(k, disk);
    }
  }
  return map;
}

void save_subvolumes(const std::vector<Subvolume>& subvolumes, int side,
                     const std::string& path) {
  ByteWriter w(path);
  w.magic("SVLV");
  w.u32(static_cast<std::uint32_t>(side));
  w.u32(static_cast<std::uint32_t>(subvolumes.size()));
  const std::size_t n = static_cast<std::size_t>(side) * side * side;
  for (const auto& sv : subvolumes) {
    if (sv.side != side || sv.cells.size() != n) {
      raise(Status::kInvalidArgument, "save_subvolumes: side mismatch");
    }
    w.bytes(sv.cells.data(), n);
  }
  w.finish();
}

std::vector<Subvolume> load_subvolumes(const std::string& path) {
  ByteReader r(path);
  r.expect_magic("SVLV");
  const int side = static_cast<int>(r.u32());
  const std::uint32_t count = r.u32();
  if (side < 2 || side > 256) {
    raise(Status::kFormat, path + ": implausible side");
  }
  const std::size_t n = static_cast<std::size_t>(side) * side * side;
  std::vector<Subvolume> out(count);
  for (auto& sv : out) {
    sv.side = side;
    sv.cells.resize(n);
    r.bytes(sv.cells.data(), n);
  }
  return out;
}

void save_training_pairs(const std::vector<TrainingPair>& pairs,
                         const std::string& incomplete_path,
                         const std::string& complete_path) {
  if (pairs.empty()) raise(Status::kEmptyInput, "no pairs to save");
  std::vector<Subvolume> inc, comp;
  inc.reserve(pairs.size());
  comp.reserve(pairs.size());
  for (const auto& p : pairs) {
    inc.push_back(p.incomplete);
    comp.push_back(p.complete);
  }
  save_subvolumes(inc, pairs.front().incomplete.side, incomplete_path);
  save_subvolumes(comp, pairs.front().complete.side, complete_path);
}

std::vector<TrainingPair> load_training_pairs(
    const std::string& incomplete_path, const std::string& complete_path) {
  auto inc = load_subvolumes(incomplete_path);
  auto comp = load_subvolumes(complete_path);
  if (inc.size() != comp.size()) {
    raise(Status::kFormat, "pair files disagree on count");
  }
  std::vector<TrainingPair> out(inc.size());
  for (std::size_t i = 0; i < inc.size(); ++i) {
    out[i].incomplete = std::move(inc[i]);
    out[i].incomplete.role = SubvolumeRole::kIncomplete;
    out[i].complete = std::move(comp[i]);
    out[i].complete.role = SubvolumeRole::kComplete;
  }
  return out;
}

}  // namespace svloc
