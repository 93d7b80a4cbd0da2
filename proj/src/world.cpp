#include "svloc/world.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace svloc {

using nlohmann::json;

const char* status_name(Status s) {
  switch (s) {
    case Status::kOk: return "ok";
    case Status::kInvalidArgument: return "invalid_argument";
    case Status::kEmptyInput: return "empty_input";
    case Status::kInfeasible: return "infeasible";
    case Status::kIo: return "io";
    case Status::kFormat: return "format";
    case Status::kNumeric: return "numeric";
    case Status::kConfigMismatch: return "config_mismatch";
    case Status::kDegenerate: return "degenerate";
    case Status::kInternal: return "internal";
  }
  return "unknown";
}

std::uint64_t checksum_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(Status::kIo, "cannot open: " + path);
  char buf[1 << 16];
  std::uint64_t h = 0xcbf29ce484222325ULL;
  while (in) {
    in.read(buf, sizeof(buf));
    h = fnv1a64(buf, static_cast<std::size_t>(in.gcount()), h);
  }
  return h;
}

//=============================================================================
// Solid geometry
//=============================================================================

bool Solid::contains(const Vec3& p) const {
  if (kind == Kind::kBox) return box.contains(p);
  if (p.z() < cyl_z0 || p.z() > cyl_z1) return false;
  const double dx = p.x() - cyl_center.x();
  const double dy = p.y() - cyl_center.y();
  return dx * dx + dy * dy <= cyl_radius * cyl_radius;
}

double Solid::distance(const Vec3& p) const {
  if (kind == Kind::kBox) {
    Vec3 d = (box.min - p).cwiseMax(p - box.max).cwiseMax(0.0);
    return d.norm();
  }
  const double dx = p.x() - cyl_center.x();
  const double dy = p.y() - cyl_center.y();
  const double dr = std::max(0.0, std::sqrt(dx * dx + dy * dy) - cyl_radius);
  const double dz = std::max({0.0, cyl_z0 - p.z(), p.z() - cyl_z1});
  return std::sqrt(dr * dr + dz * dz);
}

Aabb Solid::bounds() const {
  if (kind == Kind::kBox) return box;
  return Aabb{Vec3(cyl_center.x() - cyl_radius, cyl_center.y() - cyl_radius,
                   cyl_z0),
              Vec3(cyl_center.x() + cyl_radius, cyl_center.y() + cyl_radius,
                   cyl_z1)};
}

std::vector<const Solid*> GroundTruthWorld::solids() const {
  std::vector<const Solid*> out;
  out.reserve(objects.size() + 1);
  if (ground) out.push_back(&*ground);
  for (const auto& o : objects) out.push_back(&o);
  return out;
}

//=============================================================================
// Generation
//=============================================================================

namespace {

int draw_count(Rng& rng, const ObjectGroup& g) {
  if (g.count_max < g.count_min) {
    raise(Status::kInvalidArgument, "object count range is empty");
  }
  if (g.count_max == g.count_min) return g.count_min;
  return g.count_min +
         static_cast<int>(rng.uniform_u64(
             static_cast<std::uint64_t>(g.count_max - g.count_min + 1)));
}

double snap(double v, double q) {
  if (q <= 0) return v;
  return std::max(q, std::round(v / q) * q);
}

Solid place_box(Rng& rng, const WorldSpec& spec, const ObjectGroup& g,
                int label, double floor_z) {
  Vec3 size;
  for (int a = 0; a < 3; ++a) {
    size[a] = snap(rng.uniform(g.size_min[a], g.size_max[a]), g.size_quantum);
  }
  const Vec3 ext = spec.extent.size();
  for (int a = 0; a < 3; ++a) {
    if (size[a] > ext[a]) {
      raise(Status::kInfeasible, "box does not fit world extent");
    }
  }
  for (int attempt = 0; attempt < spec.max_placement_attempts; ++attempt) {
    Vec3 lo;
    lo.x() = rng.uniform(spec.extent.min.x(), spec.extent.max.x() - size.x());
    lo.y() = rng.uniform(spec.extent.min.y(), spec.extent.max.y() - size.y());
    if (g.on_ground) {
      lo.z() = floor_z;
    } else {
      lo.z() = rng.uniform(spec.extent.min.z(),
                           std::max(spec.extent.min.z(),
                                    spec.extent.max.z() - size.z()));
    }
    if (lo.z() + size.z() > spec.extent.max.z()) continue;
    Solid s;
    s.kind = Solid::Kind::kBox;
    s.label = label;
    s.box = Aabb{lo, lo + size};
    return s;
  }
  raise(Status::kInfeasible, "could not place box inside extent");
}

Solid place_cylinder(Rng& rng, const WorldSpec& spec, const ObjectGroup& g,
                     int label, double floor_z) {
  const double r = rng.uniform(g.radius_min, g.radius_max);
  const double h = rng.uniform(g.height_min, g.height_max);
  const Vec3 ext = spec.extent.size();
  if (2 * r > ext.x() || 2 * r > ext.y() || h > ext.z()) {
    raise(Status::kInfeasible, "cylinder does not fit world extent");
  }
  for (int attempt = 0; attempt < spec.max_placement_attempts; ++attempt) {
    const double cx =
        rng.uniform(spec.extent.min.x() + r, spec.extent.max.x() - r);
    const double cy =
        rng.uniform(spec.extent.min.y() + r, spec.extent.max.y() - r);
    const double z0 = g.on_ground ? floor_z : spec.extent.min.z();
    if (z0 + h > spec.extent.max.z()) continue;
    Solid s;
    s.kind = Solid::Kind::kCylinder;
    s.label = label;
    s.cyl_center = Vec3(cx, cy, 0);
    s.cyl_radius = r;
    s.cyl_z0 = z0;
    s.cyl_z1 = z0 + h;
    return s;
  }
  raise(Status::kInfeasible, "could not place cylinder inside extent");
}

}  // namespace

GroundTruthWorld generate_world(const WorldSpec& spec, std::uint64_t seed) {
  if (spec.num_labels < 2) {
    raise(Status::kInvalidArgument, "num_labels must be >= 2");
  }
  if ((spec.extent.size().array() <= 0).any()) {
    raise(Status::kInvalidArgument, "world extent is empty");
  }
  for (const auto& g : spec.groups) {
    for (int l : g.labels) {
      if (l < 1 || l > spec.num_labels) {
        raise(Status::kInvalidArgument, "object label out of range");
      }
    }
    if (g.count_max > 0 && g.labels.empty()) {
      raise(Status::kInvalidArgument, "object group without labels");
    }
  }

  GroundTruthWorld world;
  world.extent = spec.extent;
  world.num_labels = spec.num_labels;
  world.ground_label = spec.ground_label;
  world.seed = seed;

  if (spec.has_ground) {
    if (spec.ground_label < 1 || spec.ground_label > spec.num_labels) {
      raise(Status::kInvalidArgument, "ground label out of range");
    }
    Solid g;
    g.kind = Solid::Kind::kBox;
    g.label = spec.ground_label;
    const double top = std::min(spec.extent.min.z() + spec.ground_thickness,
                                spec.extent.max.z());
    g.box = Aabb{spec.extent.min,
                 Vec3(spec.extent.max.x(), spec.extent.max.y(), top)};
    world.ground = g;
  }
  const double floor_z = world.ground_top();

  Rng rng(derive_seed(seed, 0x776f726c64ULL));  // "world"
  for (const auto& g : spec.groups) {
    const int n = draw_count(rng, g);
    for (int i = 0; i < n; ++i) {
      // round-robin first pass over the pool guarantees one object per label
      // when require_all_labels is set and the count allows it
      int label;
      if (spec.require_all_labels && i < static_cast<int>(g.labels.size())) {
        label = g.labels[static_cast<std::size_t>(i)];
      } else {
        label = g.labels[rng.index(g.labels.size())];
      }
      if (g.kind == Solid::Kind::kBox) {
        world.objects.push_back(place_box(rng, spec, g, label, floor_z));
      } else {
        world.objects.push_back(place_cylinder(rng, spec, g, label, floor_z));
      }
    }
    if (spec.require_all_labels && n < static_cast<int>(g.labels.size())) {
      raise(Status::kInfeasible,
            "require_all_labels: count below label pool size");
    }
  }
  return world;
}

//=============================================================================
// JSON IO
//=============================================================================

namespace {

json vec3_to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 vec3_from_json(const json& j) {
  if (!j.is_array() || j.size() != 3) {
    raise(Status::kFormat, "expected 3-element array");
  }
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

json solid_to_json(const Solid& s) {
  json j;
  j["label"] = s.label;
  if (s.kind == Solid::Kind::kBox) {
    j["kind"] = "box";
    j["min"] = vec3_to_json(s.box.min);
    j["max"] = vec3_to_json(s.box.max);
  } else {
    j["kind"] = "cylinder";
    j["center"] = json::array({s.cyl_center.x(), s.cyl_center.y()});
    j["radius"] = s.cyl_radius;
    j["z"] = json::array({s.cyl_z0, s.cyl_z1});
  }
  return j;
}

Solid solid_from_json(const json& j) {
  Solid s;
  s.label = j.at("label").get<int>();
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "box") {
    s.kind = Solid::Kind::kBox;
    s.box = Aabb{vec3_from_json(j.at("min")), vec3_from_json(j.at("max"))};
  } else if (kind == "cylinder") {
    s.kind = Solid::Kind::kCylinder;
    s.cyl_center =
        Vec3(j.at("center")[0].get<double>(), j.at("center")[1].get<double>(), 0);
    s.cyl_radius = j.at("radius").get<double>();
    s.cyl_z0 = j.at("z")[0].get<double>();
    s.cyl_z1 = j.at("z")[1].get<double>();
  } else {
    raise(Status::kFormat, "unknown solid kind: " + kind);
  }
  return s;
}

}  // namespace

std::string world_to_json(const GroundTruthWorld& world) {
  json j;
  j["extent"] = {{"min", vec3_to_json(world.extent.min)},
                 {"max", vec3_to_json(world.extent.max)}};
  j["num_labels"] = world.num_labels;
  j["ground_label"] = world.ground_label;
  j["seed"] = world.seed;
  j["ground"] = world.ground ? solid_to_json(*world.ground) : json(nullptr);
  json objs = json::array();
  for (const auto& o : world.objects) objs.push_back(solid_to_json(o));
  j["objects"] = std::move(objs);
  return j.dump(2) + "\n";
}

GroundTruthWorld world_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    raise(Status::kFormat, std::string("world json: ") + e.what());
  }
  GroundTruthWorld w;
  try {
    w.extent = Aabb{vec3_from_json(j.at("extent").at("min")),
                    vec3_from_json(j.at("extent").at("max"))};
    w.num_labels = j.at("num_labels").get<int>();
    w.ground_label = j.at("ground_label").get<int>();
    w.seed = j.at("seed").get<std::uint64_t>();
    if (!j.at("ground").is_null()) w.ground = solid_from_json(j.at("ground"));
    for (const auto& o : j.at("objects")) {
      w.objects.push_back(solid_from_json(o));
    }
  } catch (const json::exception& e) {
    raise(Status::kFormat, std::string("world json: ") + e.what());
  }
  return w;
}

void save_world(const GroundTruthWorld& world, const std::string& path) {
  std::ofstream out(path);
  if (!out) raise(Status::kIo, "cannot open for write: " + path);
  out << world_to_json(world);
  if (!out) raise(Status::kIo, "write failed: " + path);
}

GroundTruthWorld load_world(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(Status::kIo, "cannot open: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return world_from_json(ss.str());
}

std::string world_spec_to_json(const WorldSpec& spec) {
  json j;
  j["extent"] = {{"min", vec3_to_json(spec.extent.min)},
                 {"max", vec3_to_json(spec.extent.max)}};
  j["num_labels"] = spec.num_labels;
  if (spec.has_ground) {
    j["ground"] = {{"label", spec.ground_label},
                   {"thickness", spec.ground_thickness}};
  } else {
    j["ground"] = nullptr;
  }
  j["require_all_labels"] = spec.require_all_labels;
  j["max_placement_attempts"] = spec.max_placement_attempts;
  json groups = json::array();
  for (const auto& g : spec.groups) {
    json gj;
    gj["kind"] = g.kind == Solid::Kind::kBox ? "box" : "cylinder";
    gj["count"] = json::array({g.count_min, g.count_max});
    gj["labels"] = g.labels;
    gj["on_ground"] = g.on_ground;
    if (g.kind == Solid::Kind::kBox) {
      gj["size_min"] = vec3_to_json(g.size_min);
      gj["size_max"] = vec3_to_json(g.size_max);
      if (g.size_quantum > 0) gj["size_quantum"] = g.size_quantum;
    } else {
      gj["radius"] = json::array({g.radius_min, g.radius_max});
      gj["height"] = json::array({g.height_min, g.height_max});
    }
    groups.push_back(std::move(gj));
  }
  j["groups"] = std::move(groups);
  return j.dump(2) + "\n";
}

WorldSpec world_spec_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    raise(Status::kFormat, std::string("world spec json: ") + e.what());
  }
  WorldSpec s;
  try {
    s.extent = Aabb{vec3_from_json(j.at("extent").at("min")),
                    vec3_from_json(j.at("extent").at("max"))};
    s.num_labels = j.at("num_labels").get<int>();
    if (j.contains("ground") && !j.at("ground").is_null()) {
      s.has_ground = true;
      s.ground_label = j.at("ground").at("label").get<int>();
      s.ground_thickness = j.at("ground").value("thickness", 0.3);
    } else {
      s.has_ground = false;
    }
    s.require_all_labels = j.value("require_all_labels", false);
    s.max_placement_attempts = j.value("max_placement_attempts", 200);
    for (const auto& gj : j.value("groups", json::array())) {
      ObjectGroup g;
      const std::string kind = gj.at("kind").get<std::string>();
      if (kind == "box") {
        g.kind = Solid::Kind::kBox;
      } else if (kind == "cylinder") {
        g.kind = Solid::Kind::kCylinder;
      } else {
        raise(Status::kFormat, "unknown group kind: " + kind);
      }
      const auto& c = gj.at("count");
      if (c.is_array()) {
        g.count_min = c[0].get<int>();
        g.count_max = c[1].get<int>();
      } else {
        g.count_min = g.count_max = c.get<int>();
      }
      g.labels = gj.at("labels").get<std::vector<int>>();
      g.on_ground = gj.value("on_ground", true);
      if (g.kind == Solid::Kind::kBox) {
        g.size_min = vec3_from_json(gj.at("size_min"));
        g.size_max = vec3_from_json(gj.at("size_max"));
        g.size_quantum = gj.value("size_quantum", 0.0);
      } else {
        g.radius_min = gj.at("radius")[0].get<double>();
        g.radius_max = gj.at("radius")[1].get<double>();
        g.height_min = gj.at("height")[0].get<double>();
        g.height_max = gj.at("height")[1].get<double>();
      }
      s.groups.push_back(std::move(g));
    }
  } catch (const json::exception& e) {
    raise(Status::kFormat, std::string("world spec json: ") + e.what());
  }
  return s;
}

}  // namespace svloc
