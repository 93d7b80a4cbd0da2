#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "svloc/align.hpp"
#include "svloc/net.hpp"
#include "svloc/trajectory.hpp"
#include "svloc/vocab.hpp"
#include "svloc/words.hpp"

namespace svloc {

//=============================================================================
// Configuration
//=============================================================================

struct VocabConfig {
  int branching = 8;
  int depth = 2;
  int bits = 32;  // N_B
  int max_iters = 25;
};

struct PipelineConfig {
  double voxel_size = 0.3;
  int subvolume_side = 16;  // V
  int stride = 4;           // V/4
  int orientation_count = 18;
  int knn = 5;  // K
  int num_labels = 8;
  bool geometric_mode = false;  // collapse labels to one class before fusion
  int query_window = 1;
  std::uint32_t min_hits = 1;
  std::vector<int> discard_labels;
  VerificationConfig verification;
  VocabConfig vocab;
  NetArchitecture arch;
  TrainConfig train;
  CameraIntrinsics camera;
  double dedupe_grid = 0.0;        // 0: one voxel
  int max_verify_hypotheses = 400;  // vote-ordered cap; 0 = unlimited
  int multiple_assignment = 1;
  int hamming_cutoff = -1;  // -1: no cutoff
  int max_ranked = 10;
  int threads = 0;

  int effective_labels() const { return geometric_mode ? 1 : num_labels; }
  double dedupe_cell() const {
    return dedupe_grid > 0 ? dedupe_grid : voxel_size;
  }
  void validate() const;
  FuseOptions fuse_options() const;

  static PipelineConfig desk();
  // Full-scale parameterization (32^3 subvolumes, N = 256, 2^16-leaf
  // vocabulary with branching 256, 64-bit signatures).
  static PipelineConfig paper_preset();
};

std::string pipeline_config_to_json(const PipelineConfig& config);
PipelineConfig pipeline_config_from_json(const std::string& text);
PipelineConfig load_pipeline_config(const std::string& path);
void save_pipeline_config(const PipelineConfig& config, const std::string& path);

//=============================================================================
// Database artifacts
//=============================================================================

struct DatabaseArtifacts {
  SemanticVoxelMap map;
  std::vector<SemanticWord> words;
  VocabularyTree tree;
  HammingEmbedding embedding;
  WordIndex index;
  PipelineConfig config;
};

// Fuse the database frames, compute the bag of words, index it into the
// (separately trained) vocabulary, and persist everything under `dir` with a
// checksum manifest.
DatabaseArtifacts build_database(const std::vector<SensorFrame>& frames,
                                 const CompletionNet& net,
                                 const VocabularyTree& tree,
                                 const HammingEmbedding& embedding,
                                 const PipelineConfig& config,
                                 const std::string& dir);

DatabaseArtifacts open_database(const std::string& dir);

//=============================================================================
// Localization
//=============================================================================

struct RankedPose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  double yaw = 0;  // of rotation, wrapped
  double ratio = 0;
  double rms = 0;
  int n_corr = 0;
  double position_error = -1;  // vs ground truth when known
  double yaw_error_deg = -1;
};

struct LocalizationResult {
  std::uint64_t query_id = 0;
  std::vector<RankedPose> poses;  // ranked, all passing tau
  bool has_ground_truth = false;
  Mat3 gt_rotation = Mat3::Identity();
  Vec3 gt_translation = Vec3::Zero();
  std::size_t query_occupied = 0;
  std::size_t word_count = 0;
  std::size_t hypothesis_count = 0;
};

// Window poses are consumed as odometry only: frames are re-expressed in a
// gravity-aligned local frame anchored at the first pose, and the returned
// poses map that local frame into database coordinates. When the window
// poses are world-true, the anchor is the ground-truth alignment and errors
// are filled in.
LocalizationResult localize(const std::vector<SensorFrame>& window,
                            const DatabaseArtifacts& db,
                            const CompletionNet& net,
                            const PipelineConfig& config,
                            std::uint64_t query_id = 0,
                            bool poses_are_ground_truth = true);

//=============================================================================
// Evaluation
//=============================================================================

struct RecallTable {
  std::vector<double> thresholds;           // meters
  std::vector<std::vector<double>> recall;  // [rank][threshold]
};

RecallTable evaluate(const std::vector<LocalizationResult>& results,
                     const std::vector<double>& thresholds, int max_rank);

void save_recall_csv(const RecallTable& table, const std::string& path);
void save_results_csv(const std::vector<LocalizationResult>& results,
                      const std::string& path, int top_k = 3);

//=============================================================================
// Scenario runner
//=============================================================================

struct ScenarioSpec {
  std::string name = "scenario";
  Scenario scenario = Scenario::kLoop0;
  WorldSpec world;
  TrajectoryParams trajectory;
  PipelineConfig pipeline;
  // training data (vocabulary + net) comes from an independent world
  TrajectoryParams training_trajectory;
  std::size_t training_samples = 5000;
  std::string net_path;  // reuse a trained model instead of training
  double crosstime_flip_rate = 0.1;
  double crosstime_remove_fraction = 0.15;
  int crosstime_add_objects = 4;
  std::vector<double> eval_thresholds = {1.0, 5.0};
  int eval_max_rank = 5;
};

std::string scenario_spec_to_json(const ScenarioSpec& spec);
ScenarioSpec scenario_spec_from_json(const std::string& text);
ScenarioSpec load_scenario_spec(const std::string& path);

struct ScenarioReport {
  std::vector<LocalizationResult> results;
  RecallTable recall;
  std::string report_dir;
};

// End-to-end protocol: generate worlds and trajectories, train (or load) the
// descriptor net and vocabulary on the training world, build the database,
// localize every query window, and write CSV reports. Fully seeded.
ScenarioReport run_scenario(const ScenarioSpec& spec, std::uint64_t seed,
                            const std::string& out_dir);

// Manifest helpers (JSON file list with fnv1a64 checksums).
void write_manifest(const std::string& dir,
                    const std::vector<std::string>& files,
                    const std::string& config_json);
bool manifest_matches(const std::string& dir, const PipelineConfig& config,
                      std::string* why = nullptr);

}  // namespace svloc
