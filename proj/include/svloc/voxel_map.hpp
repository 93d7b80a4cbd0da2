#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "svloc/sensor.hpp"

namespace svloc {

//=============================================================================
// Cell states
//
// One byte per cell everywhere: 0 = unobserved, 1 = free, 1+l = occupied with
// class l (l in 1..L).
//=============================================================================

using CellState = std::uint8_t;
inline constexpr CellState kUnobserved = 0;
inline constexpr CellState kFree = 1;

inline CellState occupied_state(int label) {
  return static_cast<CellState>(1 + label);
}
inline bool is_occupied(CellState s) { return s >= 2; }
inline int state_label(CellState s) { return static_cast<int>(s) - 1; }

struct VoxelKey {
  std::int32_t x = 0, y = 0, z = 0;
  bool operator==(const VoxelKey&) const = default;
  bool operator<(const VoxelKey& o) const {
    if (x != o.x) return x < o.x;
    if (y != o.y) return y < o.y;
    return z < o.z;
  }
};

struct VoxelKeyHash {
  std::size_t operator()(const VoxelKey& k) const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::int64_t v : {std::int64_t(k.x), std::int64_t(k.y),
                           std::int64_t(k.z)}) {
      h ^= static_cast<std::uint64_t>(v) + 0x9e3779b97f4a7c15ULL;
      h *= 0x100000001b3ULL;
    }
    return static_cast<std::size_t>(h);
  }
};

// Per-voxel evidence: free votes plus one hit counter per class.
struct VoxelEvidence {
  std::uint32_t free_hits = 0;
  std::vector<std::uint32_t> label_hits;  // size L, lazily allocated
};

enum class MapRole { kDatabase, kQuery, kTrainingComplete, kTrainingIncomplete };

//=============================================================================
// Sparse semantic voxel map
//
// Voxel (i,j,k) covers origin + voxel_size * [i, i+1) x [j, j+1) x [k, k+1).
// Resolution rule: occupied(argmax label) when total label hits >= free hits
// and >= min_hits; else free when free hits >= min_hits; else unobserved.
// Label argmax ties go to the smaller label; free-vs-occupied ties resolve
// occupied.
//=============================================================================

class SemanticVoxelMap {
 public:
  SemanticVoxelMap() = default;
  SemanticVoxelMap(double voxel_size, Vec3 origin, int num_labels,
                   std::uint32_t min_hits = 1, MapRole role = MapRole::kDatabase);

  double voxel_size() const { return voxel_size_; }
  const Vec3& origin() const { return origin_; }
  int num_labels() const { return num_labels_; }
  std::uint32_t min_hits() const { return min_hits_; }
  MapRole role() const { return role_; }
  void set_role(MapRole r) { role_ = r; }

  VoxelKey voxel_of(const Vec3& p) const {
    const Vec3 q = (p - origin_) / voxel_size_;
    return VoxelKey{static_cast<std::int32_t>(std::floor(q.x())),
                    static_cast<std::int32_t>(std::floor(q.y())),
                    static_cast<std::int32_t>(std::floor(q.z()))};
  }
  Vec3 voxel_center(const VoxelKey& k) const {
    return origin_ + voxel_size_ * Vec3(k.x + 0.5, k.y + 0.5, k.z + 0.5);
  }

  void add_free(const VoxelKey& k) { evidence_[k].free_hits++; }
  void add_hit(const VoxelKey& k, int label);

  // Evidence accumulation commutes, so fusing frame sets separately and
  // merging gives the same resolved map as fusing them together.
  void merge(const SemanticVoxelMap& other);

  CellState resolve(const VoxelKey& k) const;
  CellState resolve_point(const Vec3& p) const { return resolve(voxel_of(p)); }

  std::size_t stored_cells() const { return evidence_.size(); }
  std::size_t occupied_count() const;

  // Occupied voxels in deterministic (lexicographic) key order.
  std::vector<VoxelKey> occupied_voxels() const;

  const std::unordered_map<VoxelKey, VoxelEvidence, VoxelKeyHash>& cells()
      const {
    return evidence_;
  }

  // Rotate resolved content about `center` by `yaw` (nearest-neighbor
  // resampling); evidence is replaced by synthetic single votes.
  SemanticVoxelMap rotated(const Vec3& center, double yaw) const;

 private:
  double voxel_size_ = 0.3;
  Vec3 origin_ = Vec3::Zero();
  int num_labels_ = 8;
  std::uint32_t min_hits_ = 1;
  MapRole role_ = MapRole::kDatabase;
  std::unordered_map<VoxelKey, VoxelEvidence, VoxelKeyHash> evidence_;
};

struct FuseOptions {
  std::uint32_t min_hits = 1;
  std::vector<int> discard_labels;  // pixels with these labels cast no votes
  bool collapse_labels = false;     // geometric mode: everything becomes class 1
  int num_labels = 8;
};

// Ray-carve every finite-depth pixel of every frame into a shared map:
// free votes strictly before the hit voxel, one label vote at the hit voxel.
SemanticVoxelMap fuse(const std::vector<SensorFrame>& frames, double voxel_size,
                      const FuseOptions& options = {});

// Voxel segment walk used by fusion; exposed for tests.
void walk_ray(const Vec3& origin, const Vec3& hit, double voxel_size,
              const Vec3& grid_origin, std::vector<VoxelKey>& out_free,
              VoxelKey& out_hit);

//=============================================================================
// Subvolumes
//=============================================================================

enum class SubvolumeRole { kIncomplete, kComplete };

struct Subvolume {
  int side = 0;  // V
  std::vector<CellState> cells;  // x-fastest: idx = x + V*(y + V*z)
  Vec3 center = Vec3::Zero();
  double yaw = 0.0;
  SubvolumeRole role = SubvolumeRole::kIncomplete;

  CellState at(int x, int y, int z) const {
    return cells[static_cast<std::size_t>(x) +
                 static_cast<std::size_t>(side) * (y + static_cast<std::size_t>(side) * z)];
  }
  CellState& at(int x, int y, int z) {
    return cells[static_cast<std::size_t>(x) +
                 static_cast<std::size_t>(side) * (y + static_cast<std::size_t>(side) * z)];
  }
  std::size_t count(CellState s) const;
  std::size_t observed_count() const;  // non-unobserved
};

// Grid cell (i,j,k) samples the map at center + R_z(-yaw) * delta_ijk, where
// delta is the cell offset from the subvolume center at yaw 0. Extracting at
// yaw a thus equals extracting at yaw 0 from the map pre-rotated by a about
// the same center. Out-of-map lookups read unobserved.
Subvolume extract_subvolume(const SemanticVoxelMap& map, const Vec3& center,
                            double yaw, int side);

// In-grid yaw rotation (nearest neighbor, cells entering from outside become
// unobserved). Used for training augmentation.
Subvolume rotate_subvolume(const Subvolume& sv, double yaw);

// Window centers on the stride lattice (anchored at the map origin, units of
// stride*voxel_size) whose VxVxV axis-aligned voxel window contains at least
// one occupied voxel. Lexicographic lattice order.
std::vector<Vec3> occupied_subvolume_centers(const SemanticVoxelMap& map,
                                             int side, int stride);

struct TrainingPair {
  Subvolume incomplete;
  Subvolume complete;
};

struct TrainingPairOptions {
  int side = 16;
  int stride = 4;
  std::size_t samples = 5000;
  FuseOptions fuse;
};

// Fuse all frames into the complete map and each frame alone into an
// incomplete map; sample occupied centers of the incomplete maps and extract
// aligned (incomplete, complete) subvolume pairs at yaw 0.
std::vector<TrainingPair> training_pairs(const std::vector<SensorFrame>& frames,
                                         double voxel_size,
                                         const TrainingPairOptions& options,
                                         std::uint64_t seed);

//=============================================================================
// Binary IO
//=============================================================================

// SVLM stores only resolved states (free/occupied); evidence counts are not
// persisted. Records are sorted by voxel key.
void save_map(const SemanticVoxelMap& map, const std::string& path);
SemanticVoxelMap load_map(const std::string& path, int num_labels = 8);

// SVLV subvolume batches: raw cell states, x-fastest.
void save_subvolumes(const std::vector<Subvolume>& subvolumes, int side,
                     const std::string& path);
std::vector<Subvolume> load_subvolumes(const std::string& path);

void save_training_pairs(const std::vector<TrainingPair>& pairs,
                         const std::string& incomplete_path,
                         const std::string& complete_path);
std::vector<TrainingPair> load_training_pairs(const std::string& incomplete_path,
                                              const std::string& complete_path);

}  // namespace svloc
