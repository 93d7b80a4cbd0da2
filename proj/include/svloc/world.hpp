#pragma once

#include <optional>
#include <string>
#include <vector>

#include "svloc/geometry.hpp"

namespace svloc {

struct Aabb {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();

  bool contains(const Vec3& p) const {
    return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
  }
  bool contains(const Aabb& b) const {
    return (b.min.array() >= min.array()).all() &&
           (b.max.array() <= max.array()).all();
  }
  Vec3 size() const { return max - min; }
};

// Labeled solid: axis-aligned box or vertical (z-axis) cylinder.
struct Solid {
  enum class Kind { kBox, kCylinder };
  Kind kind = Kind::kBox;
  int label = 1;
  Aabb box;              // kBox
  Vec3 cyl_center = Vec3::Zero();  // kCylinder: x,y of axis; z unused
  double cyl_radius = 0;
  double cyl_z0 = 0, cyl_z1 = 0;

  bool contains(const Vec3& p) const;
  // Euclidean distance from point to the solid (0 inside).
  double distance(const Vec3& p) const;
  Aabb bounds() const;
};

// One object generator: count range, label pool, size ranges.
struct ObjectGroup {
  Solid::Kind kind = Solid::Kind::kBox;
  int count_min = 0, count_max = 0;
  std::vector<int> labels;
  Vec3 size_min = Vec3(0.5, 0.5, 0.5);  // boxes
  Vec3 size_max = Vec3(2.0, 2.0, 2.0);
  double radius_min = 0.2, radius_max = 0.8;  // cylinders
  double height_min = 1.0, height_max = 3.0;
  double size_quantum = 0.0;  // snap box sizes to multiples (0 = off)
  bool on_ground = true;      // rest object bottom on ground top
};

struct WorldSpec {
  Aabb extent{Vec3(0, 0, 0), Vec3(20, 20, 5)};
  int num_labels = 8;
  bool has_ground = true;
  int ground_label = 1;
  double ground_thickness = 0.3;
  bool require_all_labels = false;
  std::vector<ObjectGroup> groups;
  int max_placement_attempts = 200;
};

struct GroundTruthWorld {
  Aabb extent;
  int num_labels = 8;
  int ground_label = 1;
  std::uint64_t seed = 0;
  std::optional<Solid> ground;
  std::vector<Solid> objects;

  // ground + objects, ground first; the render iteration order
  std::vector<const Solid*> solids() const;
  double ground_top() const {
    return ground ? ground->box.max.z() : extent.min.z();
  }
};

GroundTruthWorld generate_world(const WorldSpec& spec, std::uint64_t seed);

// JSON (de)serialization. World dumps are deterministic: regenerating from
// the same (spec, seed) produces byte-identical files.
std::string world_to_json(const GroundTruthWorld& world);
GroundTruthWorld world_from_json(const std::string& json_text);
void save_world(const GroundTruthWorld& world, const std::string& path);
GroundTruthWorld load_world(const std::string& path);

std::string world_spec_to_json(const WorldSpec& spec);
WorldSpec world_spec_from_json(const std::string& json_text);

}  // namespace svloc
