#include "svloc/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace svloc {

namespace fs = std::filesystem;
using nlohmann::json;

//=============================================================================
// Config
//=============================================================================

void PipelineConfig::validate() const {
  if (voxel_size <= 0) raise(Status::kInvalidArgument, "voxel_size must be > 0");
  if (subvolume_side < 8 || subvolume_side % 8 != 0) {
    raise(Status::kInvalidArgument, "subvolume side must be a multiple of 8");
  }
  if (stride < 1 || orientation_count < 1 || knn < 1 || query_window < 1) {
    raise(Status::kInvalidArgument, "pipeline counts must be positive");
  }
  if (num_labels < 1) raise(Status::kInvalidArgument, "num_labels must be >= 1");
  verification.validate();
  arch.validate();
  if (arch.side != subvolume_side) {
    raise(Status::kConfigMismatch, "net side does not match subvolume side");
  }
  if (arch.num_labels() != effective_labels()) {
    raise(Status::kConfigMismatch,
          "net channels do not match the effective label count");
  }
}

FuseOptions PipelineConfig::fuse_options() const {
  FuseOptions o;
  o.min_hits = min_hits;
  o.discard_labels = discard_labels;
  o.collapse_labels = geometric_mode;
  o.num_labels = num_labels;
  return o;
}

PipelineConfig PipelineConfig::desk() {
  PipelineConfig c;
  c.arch = NetArchitecture::desk(c.effective_labels());
  return c;
}

PipelineConfig PipelineConfig::paper_preset() {
  PipelineConfig c;
  c.subvolume_side = 32;
  c.stride = 8;
  c.vocab.branching = 256;
  c.vocab.depth = 2;  // 2^16 leaves
  c.vocab.bits = 64;
  c.arch = NetArchitecture::paper(c.effective_labels());
  c.train.epochs = 2000;
  return c;
}

namespace {

json config_to_json_obj(const PipelineConfig& c) {
  json j;
  j["voxel_size"] = c.voxel_size;
  j["subvolume_side"] = c.subvolume_side;
  j["stride"] = c.stride;
  j["orientation_count"] = c.orientation_count;
  j["knn"] = c.knn;
  j["num_labels"] = c.num_labels;
  j["geometric_mode"] = c.geometric_mode;
  j["query_window"] = c.query_window;
  j["min_hits"] = c.min_hits;
  j["discard_labels"] = c.discard_labels;
  j["kappa"] = c.verification.kappa;
  j["tau"] = c.verification.tau;
  j["icp_max_iters"] = c.verification.icp_max_iters;
  j["icp_translation_eps"] = c.verification.icp_translation_eps;
  j["icp_rotation_eps_deg"] = rad2deg(c.verification.icp_rotation_eps);
  j["icp_yaw_only"] = c.verification.icp_yaw_only;
  j["vocab_branching"] = c.vocab.branching;
  j["vocab_depth"] = c.vocab.depth;
  j["hamming_bits"] = c.vocab.bits;
  j["vocab_max_iters"] = c.vocab.max_iters;
  j["net"] = {{"side", c.arch.side},
              {"in_channels", c.arch.in_channels},
              {"out_channels", c.arch.out_channels},
              {"widths", {c.arch.widths[0], c.arch.widths[1], c.arch.widths[2]}},
              {"fc_width", c.arch.fc_width},
              {"latent_dim", c.arch.latent_dim}};
  j["train"] = {{"batch_size", c.train.batch_size},
                {"epochs", c.train.epochs},
                {"rho", c.train.rho},
                {"adadelta_eps", c.train.adadelta_eps},
                {"eta", c.train.eta},
                {"dropout_rate", c.train.dropout_rate},
                {"yaw_augmentation", c.train.yaw_augmentation},
                {"w_r", c.train.weights.w_r},
                {"w_occ", c.train.weights.w_occ},
                {"seed", c.train.seed}};
  j["camera"] = {{"width", c.camera.width},   {"height", c.camera.height},
                 {"fx", c.camera.fx},         {"fy", c.camera.fy},
                 {"cx", c.camera.cx},         {"cy", c.camera.cy},
                 {"max_range", c.camera.max_range}};
  j["dedupe_grid"] = c.dedupe_grid;
  j["max_verify_hypotheses"] = c.max_verify_hypotheses;
  j["multiple_assignment"] = c.multiple_assignment;
  j["hamming_cutoff"] = c.hamming_cutoff;
  j["max_ranked"] = c.max_ranked;
  j["threads"] = c.threads;
  return j;
}

PipelineConfig config_from_json_obj(const json& j) {
  PipelineConfig c;
  c.voxel_size = j.value("voxel_size", c.voxel_size);
  c.subvolume_side = j.value("subvolume_side", c.subvolume_side);
  c.stride = j.value("stride", c.stride);
  c.orientation_count = j.value("orientation_count", c.orientation_count);
  c.knn = j.value("knn", c.knn);
  c.num_labels = j.value("num_labels", c.num_labels);
  c.geometric_mode = j.value("geometric_mode", c.geometric_mode);
  c.query_window = j.value("query_window", c.query_window);
  c.min_hits = j.value("min_hits", c.min_hits);
  c.discard_labels =
      j.value("discard_labels", std::vector<int>{});
  c.verification.kappa = j.value("kappa", c.verification.kappa);
  c.verification.tau = j.value("tau", c.verification.tau);
  c.verification.icp_max_iters =
      j.value("icp_max_iters", c.verification.icp_max_iters);
  c.verification.icp_translation_eps =
      j.value("icp_translation_eps", c.verification.icp_translation_eps);
  c.verification.icp_rotation_eps =
      deg2rad(j.value("icp_rotation_eps_deg",
                      rad2deg(c.verification.icp_rotation_eps)));
  c.verification.icp_yaw_only =
      j.value("icp_yaw_only", c.verification.icp_yaw_only);
  c.vocab.branching = j.value("vocab_branching", c.vocab.branching);
  c.vocab.depth = j.value("vocab_depth", c.vocab.depth);
  c.vocab.bits = j.value("hamming_bits", c.vocab.bits);
  c.vocab.max_iters = j.value("vocab_max_iters", c.vocab.max_iters);
  if (j.contains("net")) {
    const auto& n = j.at("net");
    c.arch.side = n.value("side", c.arch.side);
    c.arch.in_channels = n.value("in_channels", c.arch.in_channels);
    c.arch.out_channels = n.value("out_channels", c.arch.out_channels);
    if (n.contains("widths")) {
      for (int i = 0; i < 3; ++i) c.arch.widths[i] = n.at("widths")[i].get<int>();
    }
    c.arch.fc_width = n.value("fc_width", c.arch.fc_width);
    c.arch.latent_dim = n.value("latent_dim", c.arch.latent_dim);
  } else {
    c.arch = NetArchitecture::desk(c.effective_labels());
    c.arch.side = c.subvolume_side;
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    c.train.batch_size = t.value("batch_size", c.train.batch_size);
    c.train.epochs = t.value("epochs", c.train.epochs);
    c.train.rho = t.value("rho", c.train.rho);
    c.train.adadelta_eps = t.value("adadelta_eps", c.train.adadelta_eps);
    c.train.eta = t.value("eta", c.train.eta);
    c.train.dropout_rate = t.value("dropout_rate", c.train.dropout_rate);
    c.train.yaw_augmentation =
        t.value("yaw_augmentation", c.train.yaw_augmentation);
    c.train.weights.w_r = t.value("w_r", c.train.weights.w_r);
    c.train.weights.w_occ = t.value("w_occ", c.train.weights.w_occ);
    c.train.seed = t.value("seed", c.train.seed);
  }
  if (j.contains("camera")) {
    const auto& k = j.at("camera");
    c.camera.width = k.value("width", c.camera.width);
    c.camera.height = k.value("height", c.camera.height);
    c.camera.fx = k.value("fx", c.camera.fx);
    c.camera.fy = k.value("fy", c.camera.fy);
    c.camera.cx = k.value("cx", c.camera.cx);
    c.camera.cy = k.value("cy", c.camera.cy);
    c.camera.max_range = k.value("max_range", c.camera.max_range);
  }
  c.dedupe_grid = j.value("dedupe_grid", c.dedupe_grid);
  c.max_verify_hypotheses =
      j.value("max_verify_hypotheses", c.max_verify_hypotheses);
  c.multiple_assignment = j.value("multiple_assignment", c.multiple_assignment);
  c.hamming_cutoff = j.value("hamming_cutoff", c.hamming_cutoff);
  c.max_ranked = j.value("max_ranked", c.max_ranked);
  c.threads = j.value("threads", c.threads);
  return c;
}

// Fields that must agree between a stored database and the query-time config.
json compat_key(const PipelineConfig& c) {
  json j;
  j["voxel_size"] = c.voxel_size;
  j["subvolume_side"] = c.subvolume_side;
  j["stride"] = c.stride;
  j["num_labels"] = c.num_labels;
  j["geometric_mode"] = c.geometric_mode;
  j["min_hits"] = c.min_hits;
  j["discard_labels"] = c.discard_labels;
  j["vocab_branching"] = c.vocab.branching;
  j["vocab_depth"] = c.vocab.depth;
  j["hamming_bits"] = c.vocab.bits;
  j["latent_dim"] = c.arch.latent_dim;
  return j;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(Status::kIo, "cannot open: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) raise(Status::kIo, "cannot open for write: " + path);
  out << text;
  if (!out) raise(Status::kIo, "write failed: " + path);
}

}  // namespace

std::string pipeline_config_to_json(const PipelineConfig& config) {
  return config_to_json_obj(config).dump(2) + "\n";
}

PipelineConfig pipeline_config_from_json(const std::string& text) {
  try {
    return config_from_json_obj(json::parse(text));
  } catch (const json::exception& e) {
    raise(Status::kFormat, std::string("pipeline config json: ") + e.what());
  }
}

PipelineConfig load_pipeline_config(const std::string& path) {
  return pipeline_config_from_json(read_text(path));
}

void save_pipeline_config(const PipelineConfig& config,
                          const std::string& path) {
  write_text(path, pipeline_config_to_json(config));
}

//=============================================================================
// Manifest
//=============================================================================

void write_manifest(const std::string& dir,
                    const std::vector<std::string>& files,
                    const std::string& config_json) {
  json j;
  j["version"] = 1;
  j["config"] = json::parse(config_json);
  json arts = json::array();
  for (const auto& f : files) {
    char hex[32];
    std::snprintf(hex, sizeof(hex), "%016llx",
                  static_cast<unsigned long long>(
                      checksum_file(dir + "/" + f)));
    arts.push_back({{"file", f}, {"fnv1a64", hex}});
  }
  j["artifacts"] = std::move(arts);
  write_text(dir + "/manifest.json", j.dump(2) + "\n");
}

bool manifest_matches(const std::string& dir, const PipelineConfig& config,
                      std::string* why) {
  json m;
  try {
    m = json::parse(read_text(dir + "/manifest.json"));
  } catch (const std::exception& e) {
    if (why) *why = std::string("manifest unreadable: ") + e.what();
    return false;
  }
  const PipelineConfig stored =
      config_from_json_obj(m.at("config"));
  if (compat_key(stored) != compat_key(config)) {
    if (why) *why = "configuration differs from the stored database";
    return false;
  }
  for (const auto& art : m.at("artifacts")) {
    const std::string f = art.at("file").get<std::string>();
    char hex[32];
    std::snprintf(hex, sizeof(hex), "%016llx",
                  static_cast<unsigned long long>(
                      checksum_file(dir + "/" + f)));
    if (art.at("fnv1a64").get<std::string>() != hex) {
      if (why) *why = "checksum mismatch for " + f;
      return false;
    }
  }
  return true;
}

//=============================================================================
// Database
//=============================================================================

DatabaseArtifacts build_database(const std::vector<SensorFrame>& frames,
                                 const CompletionNet& net,
                                 const VocabularyTree& tree,
                                 const HammingEmbedding& embedding,
                                 const PipelineConfig& config,
                                 const std::string& dir) {
  config.validate();
  if (net.arch() != config.arch) {
    raise(Status::kConfigMismatch, "net architecture does not match config");
  }
  DatabaseArtifacts db;
  db.config = config;
  db.map = fuse(frames, config.voxel_size, config.fuse_options());
  db.map.set_role(MapRole::kDatabase);
  db.words = bag_of_words(db.map, net, config.stride, /*map_id=*/0,
                          config.threads);
  db.tree = tree;
  db.embedding = embedding;
  db.index = build_index(tree, embedding, db.words);

  fs::create_directories(dir);
  save_map(db.map, dir + "/map.svlm");
  save_words(db.words, dir + "/words.svlw");
  save_vocabulary(db.tree, dir + "/vocab.svlt");
  save_embedding(db.embedding, dir + "/hamming.svlh");
  save_index(db.index, dir + "/index.svli");
  write_manifest(dir,
                 {"map.svlm", "words.svlw", "vocab.svlt", "hamming.svlh",
                  "index.svli"},
                 pipeline_config_to_json(config));
  return db;
}

DatabaseArtifacts open_database(const std::string& dir) {
  const json m = json::parse(read_text(dir + "/manifest.json"));
  DatabaseArtifacts db;
  db.config = config_from_json_obj(m.at("config"));
  std::string why;
  if (!manifest_matches(dir, db.config, &why)) {
    raise(Status::kConfigMismatch, dir + ": " + why);
  }
  db.map = load_map(dir + "/map.svlm", db.config.effective_labels());
  db.map.set_role(MapRole::kDatabase);
  db.words = load_words(dir + "/words.svlw");
  db.tree = load_vocabulary(dir + "/vocab.svlt");
  db.embedding = load_embedding(dir + "/hamming.svlh");
  db.index = load_index(dir + "/index.svli");
  return db;
}

//=============================================================================
// Localization
//=============================================================================

LocalizationResult localize(const std::vector<SensorFrame>& window,
                            const DatabaseArtifacts& db,
                            const CompletionNet& net,
                            const PipelineConfig& config,
                            std::uint64_t query_id,
                            bool poses_are_ground_truth) {
  config.validate();
  if (compat_key(db.config) != compat_key(config)) {
    raise(Status::kConfigMismatch,
          "localize: config is incompatible with the database");
  }
  if (net.arch() != config.arch) {
    raise(Status::kConfigMismatch, "localize: net does not match config");
  }
  if (window.empty()) raise(Status::kEmptyInput, "localize: empty window");

  LocalizationResult result;
  result.query_id = query_id;

  // Re-express the window in a gravity-aligned frame anchored at the first
  // pose; only relative poses (odometry) enter the query map.
  const double anchor_yaw = pose_yaw(window.front().pose);
  const Vec3 anchor_t = window.front().pose.translation;
  const Mat3 to_local = rot_z(-anchor_yaw);
  std::vector<SensorFrame> local = window;
  for (auto& f : local) {
    f.pose.rotation = to_local * f.pose.rotation;
    f.pose.translation = to_local * (f.pose.translation - anchor_t);
  }
  if (poses_are_ground_truth) {
    result.has_ground_truth = true;
    result.gt_rotation = rot_z(anchor_yaw);
    result.gt_translation = anchor_t;
  }

  SemanticVoxelMap query_map =
      fuse(local, config.voxel_size, config.fuse_options());
  query_map.set_role(MapRole::kQuery);
  result.query_occupied = query_map.occupied_count();
  if (result.query_occupied == 0) return result;

  const auto orientations = orientation_set(config.orientation_count);
  const auto bags = oriented_bags(query_map, net, config.stride, orientations,
                                  /*map_id=*/1, config.threads);

  // flatten and match
  std::vector<const SemanticWord*> query_words;
  for (const auto& bag : bags) {
    for (const auto& w : bag) query_words.push_back(&w);
  }
  result.word_count = query_words.size();
  if (query_words.empty()) return result;

  QueryOptions qopt;
  qopt.k = config.knn;
  qopt.max_distance = config.hamming_cutoff;
  qopt.multiple_assignment = config.multiple_assignment;
  std::vector<std::vector<KnnMatch>> knn(query_words.size());
  parallel_for(query_words.size(), config.threads, [&](std::size_t i) {
    knn[i] = query_knn(db.tree, db.embedding, db.index,
                       query_words[i]->descriptor.data(), qopt);
  });

  std::vector<WordMatch> matches;
  for (std::size_t i = 0; i < query_words.size(); ++i) {
    for (const auto& m : knn[i]) {
      matches.push_back(WordMatch{query_words[i], &db.words[m.word],
                                  static_cast<std::uint32_t>(i), m.word});
    }
  }
  if (matches.empty()) return result;

  auto hyps = hypotheses_from_matches(matches, config.dedupe_cell());
  result.hypothesis_count = hyps.size();

  // verify the strongest buckets first (vote count, then creation order)
  std::sort(hyps.begin(), hyps.end(),
            [](const PoseHypothesis& a, const PoseHypothesis& b) {
              if (a.votes != b.votes) return a.votes > b.votes;
              return a.order < b.order;
            });
  if (config.max_verify_hypotheses > 0 &&
      hyps.size() > static_cast<std::size_t>(config.max_verify_hypotheses)) {
    hyps.resize(static_cast<std::size_t>(config.max_verify_hypotheses));
  }

  std::vector<Vec3> centers;
  std::vector<int> labels;
  occupied_centers(query_map, &centers, &labels);
  const VoxelNNIndex nn(db.map, config.verification.kappa);

  parallel_for(hyps.size(), config.threads, [&](std::size_t i) {
    auto& h = hyps[i];
    const auto icp = icp_refine(centers, labels, nn, h.rotation,
                                h.translation, config.verification);
    h.rotation = icp.rotation;
    h.translation = icp.translation;
    h.ratio = icp.ratio;
    h.rms = icp.rms;
    h.n_corr = icp.n_corr;
  });

  auto ranked = rank_hypotheses(std::move(hyps), config.verification.tau);
  if (ranked.size() > static_cast<std::size_t>(config.max_ranked)) {
    ranked.resize(static_cast<std::size_t>(config.max_ranked));
  }

  for (const auto& h : ranked) {
    RankedPose p;
    p.rotation = h.rotation;
    p.translation = h.translation;
    p.yaw = wrap_angle(std::atan2(h.rotation(1, 0), h.rotation(0, 0)));
    p.ratio = h.ratio;
    p.rms = h.rms;
    p.n_corr = h.n_corr;
    if (result.has_ground_truth) {
      p.position_error = (p.translation - result.gt_translation).norm();
      p.yaw_error_deg =
          std::abs(rad2deg(angle_diff(p.yaw, anchor_yaw)));
    }
    result.poses.push_back(p);
  }
  return result;
}

//=============================================================================
// Evaluation
//=============================================================================

RecallTable evaluate(const std::vector<LocalizationResult>& results,
                     const std::vector<double>& thresholds, int max_rank) {
  if (results.empty()) raise(Status::kEmptyInput, "evaluate: no results");
  if (thresholds.empty() || max_rank < 1) {
    raise(Status::kInvalidArgument, "evaluate: need thresholds and ranks");
  }
  for (const auto& r : results) {
    if (!r.has_ground_truth) {
      raise(Status::kInvalidArgument,
            "evaluate: result without ground truth (query " +
                std::to_string(r.query_id) + ")");
    }
  }
  RecallTable table;
  table.thresholds = thresholds;
  table.recall.assign(static_cast<std::size_t>(max_rank),
                      std::vector<double>(thresholds.size(), 0.0));
  const double n = static_cast<double>(results.size());
  for (int rank = 1; rank <= max_rank; ++rank) {
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
      std::size_t hit = 0;
      for (const auto& r : results) {
        double best = std::numeric_limits<double>::infinity();
        const std::size_t upto =
            std::min(static_cast<std::size_t>(rank), r.poses.size());
        for (std::size_t i = 0; i < upto; ++i) {
          best = std::min(best, r.poses[i].position_error);
        }
        if (best < thresholds[t]) ++hit;
      }
      table.recall[static_cast<std::size_t>(rank - 1)][t] =
          static_cast<double>(hit) / n;
    }
  }
  return table;
}

void save_recall_csv(const RecallTable& table, const std::string& path) {
  std::ofstream out(path);
  if (!out) raise(Status::kIo, "cannot open for write: " + path);
  out << "rank";
  char buf[64];
  for (double t : table.thresholds) {
    std::snprintf(buf, sizeof(buf), ",recall_%gm", t);
    out << buf;
  }
  out << "\n";
  for (std::size_t r = 0; r < table.recall.size(); ++r) {
    out << (r + 1);
    for (double v : table.recall[r]) {
      std::snprintf(buf, sizeof(buf), ",%.9g", v);
      out << buf;
    }
    out << "\n";
  }
  if (!out) raise(Status::kIo, "write failed: " + path);
}

void save_results_csv(const std::vector<LocalizationResult>& results,
                      const std::string& path, int top_k) {
  std::ofstream out(path);
  if (!out) raise(Status::kIo, "cannot open for write: " + path);
  out << "query_id,rank,ratio,yaw_deg,tx,ty,tz,rms,n_corr,pos_err,"
         "yaw_err_deg\n";
  char buf[320];
  for (const auto& r : results) {
    const std::size_t upto =
        std::min(static_cast<std::size_t>(top_k), r.poses.size());
    for (std::size_t i = 0; i < upto; ++i) {
      const auto& p = r.poses[i];
      std::snprintf(buf, sizeof(buf),
                    "%llu,%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%d,%.9g,%.9g\n",
                    static_cast<unsigned long long>(r.query_id), i + 1,
                    p.ratio, rad2deg(p.yaw), p.translation.x(),
                    p.translation.y(), p.translation.z(), p.rms, p.n_corr,
                    p.position_error, p.yaw_error_deg);
      out << buf;
    }
    if (upto == 0) {
      std::snprintf(buf, sizeof(buf), "%llu,0,,,,,,,,,\n",
                    static_cast<unsigned long long>(r.query_id));
      out << buf;
    }
  }
  if (!out) raise(Status::kIo, "write failed: " + path);
}

//=============================================================================
// Scenario spec
//=============================================================================

namespace {

json trajectory_params_to_json(const TrajectoryParams& p) {
  json j;
  j["num_intersections"] = p.num_intersections;
  j["db_poses_per_intersection"] = p.db_poses_per_intersection;
  j["query_window"] = p.query_window;
  j["camera_height"] = p.camera_height;
  j["db_step"] = p.db_step;
  j["query_step"] = p.query_step;
  j["min_separation"] = p.min_separation;
  j["margin"] = p.margin;
  j["clearance"] = p.clearance;
  j["content_radius"] = p.content_radius;
  j["max_attempts"] = p.max_attempts;
  return j;
}

TrajectoryParams trajectory_params_from_json(const json& j) {
  TrajectoryParams p;
  p.num_intersections = j.value("num_intersections", p.num_intersections);
  p.db_poses_per_intersection =
      j.value("db_poses_per_intersection", p.db_poses_per_intersection);
  p.query_window = j.value("query_window", p.query_window);
  p.camera_height = j.value("camera_height", p.camera_height);
  p.db_step = j.value("db_step", p.db_step);
  p.query_step = j.value("query_step", p.query_step);
  p.min_separation = j.value("min_separation", p.min_separation);
  p.margin = j.value("margin", p.margin);
  p.clearance = j.value("clearance", p.clearance);
  p.content_radius = j.value("content_radius", p.content_radius);
  p.max_attempts = j.value("max_attempts", p.max_attempts);
  return p;
}

}  // namespace

std::string scenario_spec_to_json(const ScenarioSpec& spec) {
  json j;
  j["name"] = spec.name;
  j["scenario"] = scenario_name(spec.scenario);
  j["world"] = json::parse(world_spec_to_json(spec.world));
  j["trajectory"] = trajectory_params_to_json(spec.trajectory);
  j["pipeline"] = config_to_json_obj(spec.pipeline);
  j["training_trajectory"] = trajectory_params_to_json(spec.training_trajectory);
  j["training_samples"] = spec.training_samples;
  j["net_path"] = spec.net_path;
  j["crosstime_flip_rate"] = spec.crosstime_flip_rate;
  j["crosstime_remove_fraction"] = spec.crosstime_remove_fraction;
  j["crosstime_add_objects"] = spec.crosstime_add_objects;
  j["eval_thresholds"] = spec.eval_thresholds;
  j["eval_max_rank"] = spec.eval_max_rank;
  return j.dump(2) + "\n";
}

ScenarioSpec scenario_spec_from_json(const std::string& text) {
  ScenarioSpec spec;
  try {
    const json j = json::parse(text);
    spec.name = j.value("name", spec.name);
    spec.scenario = scenario_from_name(j.value("scenario", "Loop0"));
    if (j.contains("world")) {
      spec.world = world_spec_from_json(j.at("world").dump());
    }
    if (j.contains("trajectory")) {
      spec.trajectory = trajectory_params_from_json(j.at("trajectory"));
    }
    if (j.contains("pipeline")) {
      spec.pipeline = config_from_json_obj(j.at("pipeline"));
    }
    if (j.contains("training_trajectory")) {
      spec.training_trajectory =
          trajectory_params_from_json(j.at("training_trajectory"));
    }
    spec.training_samples = j.value("training_samples", spec.training_samples);
    spec.net_path = j.value("net_path", spec.net_path);
    spec.crosstime_flip_rate =
        j.value("crosstime_flip_rate", spec.crosstime_flip_rate);
    spec.crosstime_remove_fraction =
        j.value("crosstime_remove_fraction", spec.crosstime_remove_fraction);
    spec.crosstime_add_objects =
        j.value("crosstime_add_objects", spec.crosstime_add_objects);
    spec.eval_thresholds =
        j.value("eval_thresholds", spec.eval_thresholds);
    spec.eval_max_rank = j.value("eval_max_rank", spec.eval_max_rank);
  } catch (const json::exception& e) {
    raise(Status::kFormat, std::string("scenario spec json: ") + e.what());
  }
  return spec;
}

ScenarioSpec load_scenario_spec(const std::string& path) {
  return scenario_spec_from_json(read_text(path));
}

//=============================================================================
// Scenario runner
//=============================================================================

namespace {

std::vector<SensorFrame> render_all(const GroundTruthWorld& world,
                                    const std::vector<Pose>& poses,
                                    const CameraIntrinsics& camera,
                                    int threads) {
  std::vector<SensorFrame> frames(poses.size());
  parallel_for(poses.size(), threads, [&](std::size_t i) {
    frames[i] = render_view(world, poses[i], camera);
    frames[i].frame_id = i;
  });
  return frames;
}

// CrossTime geometry churn: drop a seeded subset of objects and add clones
// of existing ones at fresh positions.
GroundTruthWorld mutate_world(const GroundTruthWorld& world,
                              double remove_fraction, int add_objects,
                              std::uint64_t seed) {
  GroundTruthWorld out = world;
  Rng rng(derive_seed(seed, 0x6d757461ULL));  // "muta"
  const std::size_t remove = static_cast<std::size_t>(
      remove_fraction * static_cast<double>(world.objects.size()));
  std::vector<std::size_t> order(world.objects.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  out.objects.clear();
  for (std::size_t i = remove; i < order.size(); ++i) {
    out.objects.push_back(world.objects[order[i]]);
  }
  for (int a = 0; a < add_objects && !world.objects.empty(); ++a) {
    Solid s = world.objects[rng.index(world.objects.size())];
    const Aabb b = s.bounds();
    const Vec3 size = b.size();
    const double nx = rng.uniform(world.extent.min.x(),
                                  world.extent.max.x() - size.x());
    const double ny = rng.uniform(world.extent.min.y(),
                                  world.extent.max.y() - size.y());
    const Vec3 shift(nx - b.min.x(), ny - b.min.y(), 0.0);
    if (s.kind == Solid::Kind::kBox) {
      s.box.min += shift;
      s.box.max += shift;
    } else {
      s.cyl_center += shift;
    }
    out.objects.push_back(s);
  }
  return out;
}

void save_audit_csv(const std::vector<ViewpointAudit>& audit,
                    const std::string& path) {
  std::ofstream out(path);
  if (!out) raise(Status::kIo, "cannot open for write: " + path);
  out << "query_id,nearest_db_distance,yaw_diff_deg\n";
  char buf[128];
  for (std::size_t i = 0; i < audit.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g\n", i,
                  audit[i].nearest_db_distance, audit[i].yaw_diff_deg);
    out << buf;
  }
}

void write_checksums(const std::string& dir,
                     const std::vector<std::string>& files) {
  json j;
  json arr = json::array();
  std::vector<std::string> sorted = files;
  std::sort(sorted.begin(), sorted.end());
  for (const auto& f : sorted) {
    char hex[32];
    std::snprintf(hex, sizeof(hex), "%016llx",
                  static_cast<unsigned long long>(checksum_file(dir + "/" + f)));
    arr.push_back({{"file", f}, {"fnv1a64", hex}});
  }
  j["files"] = std::move(arr);
  write_text(dir + "/checksums.json", j.dump(2) + "\n");
}

}  // namespace

ScenarioReport run_scenario(const ScenarioSpec& spec, std::uint64_t seed,
                            const std::string& out_dir) {
  fs::create_directories(out_dir);
  try {
    PipelineConfig config = spec.pipeline;
    config.validate();
    std::vector<std::string> emitted;

    {
      json snap = json::parse(scenario_spec_to_json(spec));
      snap["seed"] = seed;
      write_text(out_dir + "/scenario.json", snap.dump(2) + "\n");
      emitted.push_back("scenario.json");
    }

    // --- training world: descriptor net + vocabulary -----------------------
    const GroundTruthWorld train_world =
        generate_world(spec.world, derive_seed(seed, 1));
    save_world(train_world, out_dir + "/training_world.json");
    emitted.push_back("training_world.json");
    const Trajectory train_traj =
        generate_trajectory(train_world, Scenario::kLoop0,
                            spec.training_trajectory, derive_seed(seed, 2));
    const auto train_frames =
        render_all(train_world, train_traj.database, config.camera,
                   config.threads);

    TrainingPairOptions pair_opts;
    pair_opts.side = config.subvolume_side;
    pair_opts.stride = config.stride;
    pair_opts.samples = spec.training_samples;
    pair_opts.fuse = config.fuse_options();
    const auto pairs = training_pairs(train_frames, config.voxel_size,
                                      pair_opts, derive_seed(seed, 3));

    CompletionNet net;
    if (!spec.net_path.empty()) {
      net = load_net(spec.net_path);
      if (net.arch() != config.arch) {
        raise(Status::kConfigMismatch,
              "loaded net does not match the pipeline architecture");
      }
    } else {
      TrainConfig tc = config.train;
      tc.seed = derive_seed(seed, 4);
      tc.threads = config.threads;
      auto trained = train(pairs, config.arch, tc);
      net = std::move(trained.net);
      save_epoch_log(trained.log, out_dir + "/train_log.csv");
      emitted.push_back("train_log.csv");
    }
    save_net(net, out_dir + "/model.svln");
    emitted.push_back("model.svln");

    SemanticVoxelMap train_map =
        fuse(train_frames, config.voxel_size, config.fuse_options());
    train_map.set_role(MapRole::kTrainingComplete);
    const auto vocab_words =
        bag_of_words(train_map, net, config.stride, 2, config.threads);
    const auto tree =
        train_vocabulary(vocab_words, config.vocab.branching,
                         config.vocab.depth, derive_seed(seed, 5),
                         config.vocab.max_iters);
    const auto embedding =
        train_hamming(tree, vocab_words, config.vocab.bits,
                      derive_seed(seed, 6));

    // --- evaluation world ---------------------------------------------------
    const GroundTruthWorld eval_world =
        generate_world(spec.world, derive_seed(seed, 7));
    save_world(eval_world, out_dir + "/world.json");
    emitted.push_back("world.json");
    TrajectoryParams tp = spec.trajectory;
    tp.query_window = config.query_window;
    const Trajectory traj = generate_trajectory(eval_world, spec.scenario, tp,
                                                derive_seed(seed, 8));
    save_trajectory(traj, out_dir + "/trajectory.json");
    emitted.push_back("trajectory.json");
    save_audit_csv(audit_trajectory(traj), out_dir + "/audit.csv");
    emitted.push_back("audit.csv");

    const auto db_frames =
        render_all(eval_world, traj.database, config.camera, config.threads);
    const auto db = build_database(db_frames, net, tree, embedding, config,
                                   out_dir + "/db");
    for (const char* f : {"map.svlm", "words.svlw", "vocab.svlt",
                          "hamming.svlh", "index.svli", "manifest.json"}) {
      emitted.push_back(std::string("db/") + f);
    }

    // CrossTime queries see a geometrically perturbed world with label noise
    GroundTruthWorld query_world = eval_world;
    if (spec.scenario == Scenario::kCrossTime) {
      query_world =
          mutate_world(eval_world, spec.crosstime_remove_fraction,
                       spec.crosstime_add_objects, derive_seed(seed, 9));
      save_world(query_world, out_dir + "/query_world.json");
      emitted.push_back("query_world.json");
    }

    ScenarioReport report;
    report.report_dir = out_dir;
    for (std::size_t q = 0; q < traj.query_windows.size(); ++q) {
      auto frames = render_all(query_world, traj.query_windows[q],
                               config.camera, config.threads);
      if (spec.scenario == Scenario::kCrossTime &&
          spec.crosstime_flip_rate > 0) {
        for (std::size_t f = 0; f < frames.size(); ++f) {
          frames[f] = perturb_labels(frames[f], spec.crosstime_flip_rate,
                                     config.num_labels,
                                     derive_seed(seed, 100 + q * 16 + f));
        }
      }
      report.results.push_back(
          localize(frames, db, net, config, q, /*poses_are_ground_truth=*/true));
    }

    report.recall =
        evaluate(report.results, spec.eval_thresholds, spec.eval_max_rank);
    save_results_csv(report.results, out_dir + "/results.csv");
    emitted.push_back("results.csv");
    save_recall_csv(report.recall, out_dir + "/recall.csv");
    emitted.push_back("recall.csv");
    write_checksums(out_dir, emitted);
    return report;
  } catch (const std::exception& e) {
    json fail;
    fail["error"] = e.what();
    const Error* err = dynamic_cast<const Error*>(&e);
    fail["status"] = status_name(err ? err->status() : Status::kInternal);
    write_text(out_dir + "/FAILED.json", fail.dump(2) + "\n");
    throw;
  }
}

}  // namespace svloc
