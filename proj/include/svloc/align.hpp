#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "svloc/voxel_map.hpp"
#include "svloc/words.hpp"

namespace svloc {

//=============================================================================
// Transformation hypotheses
//=============================================================================

// Candidate alignment of the query map into database coordinates:
// x_db = rotation * x_query + translation. Before ICP the rotation is pure
// yaw (an orientation hypothesis); ICP may refine full SE(3).
struct PoseHypothesis {
  double yaw = 0.0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  std::uint32_t query_word = 0;
  std::uint32_t db_word = 0;
  int votes = 1;      // merged duplicate matches
  int order = 0;      // creation index (final tie break)
  double ratio = 0;   // overlap ratio, recomputed after refinement
  double rms = 0;     // matched-pair RMS under the final transform
  int n_corr = 0;
};

struct WordMatch {
  const SemanticWord* query = nullptr;
  const SemanticWord* database = nullptr;
  std::uint32_t query_index = 0;
  std::uint32_t db_index = 0;
};

// One hypothesis per match: yaw = query extraction yaw, translation =
// db.center - R_z(yaw) * query.center. Duplicates within the same
// (yaw bucket, translation cell) merge into the first occurrence.
std::vector<PoseHypothesis> hypotheses_from_matches(
    const std::vector<WordMatch>& matches, double dedupe_grid,
    double yaw_bucket_rad = deg2rad(20.0));

//=============================================================================
// Verification
//=============================================================================

struct VerificationConfig {
  double kappa = 3.0;          // max center distance in meters
  double tau = 0.3;            // minimum overlap ratio
  int icp_max_iters = 20;
  double icp_translation_eps = 0.01;          // meters
  double icp_rotation_eps = deg2rad(0.1);
  bool icp_yaw_only = false;   // restrict refinement to yaw + translation

  void validate() const {
    if (kappa <= 0 || tau <= 0 || tau > 1) {
      raise(Status::kInvalidArgument, "verification needs kappa > 0, tau in (0,1]");
    }
  }
};

// Hash grid over occupied database voxel centers. Lookup expands Chebyshev
// shells outward until no closer entry is possible, so the result is the
// exact nearest occupied voxel within kappa. Grid cells are voxel-sized to
// keep per-cell occupancy near one regardless of kappa.
class VoxelNNIndex {
 public:
  VoxelNNIndex(const SemanticVoxelMap& map, double kappa);

  struct Neighbor {
    bool found = false;
    Vec3 center = Vec3::Zero();
    int label = 0;
    double distance = 0;
  };
  Neighbor nearest(const Vec3& p) const;

  std::size_t size() const { return count_; }
  double kappa() const { return kappa_; }

 private:
  struct Entry {
    Vec3 center;
    VoxelKey key;
    int label;
  };
  double cell_ = 0.3;
  double kappa_ = 3.0;
  int max_shell_ = 11;
  Vec3 bbox_min_ = Vec3::Zero();
  Vec3 bbox_max_ = Vec3::Zero();
  std::size_t count_ = 0;
  std::unordered_map<VoxelKey, std::vector<Entry>, VoxelKeyHash> grid_;
};

struct Correspondence {
  Vec3 query;     // occupied query voxel center, query frame
  Vec3 database;  // matched database voxel center, database frame
};

struct VerifyResult {
  double ratio = 0;
  std::size_t correct = 0;
  std::size_t total = 0;  // occupied query voxels
  bool empty_query = false;
  std::vector<Correspondence> correspondences;
};

// Count occupied query voxels whose transformed center has its nearest
// occupied database voxel within kappa carrying the same label. Free and
// unobserved voxels are excluded on both sides.
VerifyResult verify(const std::vector<Vec3>& query_centers,
                    const std::vector<int>& query_labels,
                    const VoxelNNIndex& db_index, const Mat3& rotation,
                    const Vec3& translation, double kappa,
                    bool keep_correspondences = true);

// Convenience overload extracting centers/labels from the query map.
VerifyResult verify(const SemanticVoxelMap& query_map,
                    const VoxelNNIndex& db_index, const Mat3& rotation,
                    const Vec3& translation, double kappa,
                    bool keep_correspondences = true);

// Occupied voxel centers + labels in deterministic order (shared by verify
// callers that loop over hypotheses).
void occupied_centers(const SemanticVoxelMap& map, std::vector<Vec3>* centers,
                      std::vector<int>* labels);

//=============================================================================
// Rigid fit + ICP
//=============================================================================

// Least-squares rigid transform minimizing sum |R*q + t - d|^2 (SVD of the
// cross covariance with determinant correction). Needs >= 3 pairs spanning
// at least a plane.
void rigid_fit(const std::vector<Correspondence>& pairs, Mat3* rotation,
               Vec3* translation);

// Yaw-constrained variant: R = R_z(phi).
void rigid_fit_yaw(const std::vector<Correspondence>& pairs, Mat3* rotation,
                   Vec3* translation);

struct IcpResult {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  double ratio = 0;          // recomputed with the final transform
  double rms = 0;
  int n_corr = 0;
  int iterations = 0;
  std::vector<double> ratio_trace;
  std::vector<double> rms_trace;  // non-increasing over accepted iterations
};

// Alternate verify-correspondences and rigid fit from P0; stop on
// convergence, iteration cap, or an RMS increase (rejected step).
IcpResult icp_refine(const std::vector<Vec3>& query_centers,
                     const std::vector<int>& query_labels,
                     const VoxelNNIndex& db_index, const Mat3& r0,
                     const Vec3& t0, const VerificationConfig& config);

// Filter ratio >= tau, sort by ratio desc; ties by smaller rms, then
// creation order. Input order does not affect the result.
std::vector<PoseHypothesis> rank_hypotheses(std::vector<PoseHypothesis> hyps,
                                            double tau);

// Debug/eval dump: "rank,ratio,yaw_deg,tx,ty,tz,rms,n_corr".
void save_hypotheses_csv(const std::vector<PoseHypothesis>& ranked,
                         const std::string& path);

}  // namespace svloc
