#include "svloc/align.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace svloc {

//=============================================================================
// Hypotheses
//=============================================================================

std::vector<PoseHypothesis> hypotheses_from_matches(
    const std::vector<WordMatch>& matches, double dedupe_grid,
    double yaw_bucket_rad) {
  if (matches.empty()) {
    raise(Status::kEmptyInput, "hypotheses_from_matches: no matches");
  }
  if (dedupe_grid <= 0 || yaw_bucket_rad <= 0) {
    raise(Status::kInvalidArgument, "dedupe buckets must be positive");
  }
  struct CellKey {
    std::int64_t x, y, z, yaw;
    bool operator==(const CellKey&) const = default;
  };
  struct CellHash {
    std::size_t operator()(const CellKey& k) const {
      std::uint64_t h = 0xcbf29ce484222325ULL;
      for (std::int64_t v : {k.x, k.y, k.z, k.yaw}) {
        h ^= static_cast<std::uint64_t>(v) + 0x9e3779b97f4a7c15ULL;
        h *= 0x100000001b3ULL;
      }
      return static_cast<std::size_t>(h);
    }
  };
  std::unordered_map<CellKey, std::size_t, CellHash> cells;
  std::vector<PoseHypothesis> hyps;
  hyps.reserve(matches.size());
  for (const auto& m : matches) {
    const double yaw = wrap_angle(m.query->yaw);
    const Mat3 rot = rot_z(yaw);
    const Vec3 t = m.database->center - rot * m.query->center;
    CellKey key{
        static_cast<std::int64_t>(std::floor(t.x() / dedupe_grid)),
        static_cast<std::int64_t>(std::floor(t.y() / dedupe_grid)),
        static_cast<std::int64_t>(std::floor(t.z() / dedupe_grid)),
        static_cast<std::int64_t>(std::floor(yaw / yaw_bucket_rad))};
    auto [it, inserted] = cells.emplace(key, hyps.size());
    if (!inserted) {
      hyps[it->second].votes++;
      continue;
    }
    PoseHypothesis h;
    h.yaw = yaw;
    h.rotation = rot;
    h.translation = t;
    h.query_word = m.query_index;
    h.db_word = m.db_index;
    h.order = static_cast<int>(hyps.size());
    hyps.push_back(h);
  }
  return hyps;
}

//=============================================================================
// VoxelNNIndex
//=============================================================================

VoxelNNIndex::VoxelNNIndex(const SemanticVoxelMap& map, double kappa)
    : cell_(map.voxel_size()), kappa_(kappa) {
  if (kappa <= 0) raise(Status::kInvalidArgument, "kappa must be > 0");
  max_shell_ = static_cast<int>(std::ceil(kappa / cell_)) + 1;
  bool first = true;
  for (const auto& key : map.occupied_voxels()) {
    const CellState s = map.resolve(key);
    const Vec3 c = map.voxel_center(key);
    if (first) {
      bbox_min_ = bbox_max_ = c;
      first = false;
    } else {
      bbox_min_ = bbox_min_.cwiseMin(c);
      bbox_max_ = bbox_max_.cwiseMax(c);
    }
    grid_[key].push_back(Entry{c, key, state_label(s)});
    ++count_;
  }
}

VoxelNNIndex::Neighbor VoxelNNIndex::nearest(const Vec3& p) const {
  Neighbor best;
  if (count_ == 0) return best;
  // cheap reject: nothing within kappa of points far outside the content box
  const Vec3 d = (bbox_min_ - p).cwiseMax(p - bbox_max_).cwiseMax(0.0);
  if (d.squaredNorm() >= kappa_ * kappa_) return best;

  double best_d2 = kappa_ * kappa_;
  VoxelKey best_key{};
  const std::int32_t cx = static_cast<std::int32_t>(std::floor(p.x() / cell_));
  const std::int32_t cy = static_cast<std::int32_t>(std::floor(p.y() / cell_));
  const std::int32_t cz = static_cast<std::int32_t>(std::floor(p.z() / cell_));
  auto scan_cell = [&](std::int32_t x, std::int32_t y, std::int32_t z) {
    auto it = grid_.find(VoxelKey{x, y, z});
    if (it == grid_.end()) return;
    for (const auto& e : it->second) {
      const double d2 = (e.center - p).squaredNorm();
      if (d2 < best_d2 || (d2 == best_d2 && best.found && e.key < best_key)) {
        best_d2 = d2;
        best.found = true;
        best.center = e.center;
        best.label = e.label;
        best_key = e.key;
      }
    }
  };
  for (int r = 0; r <= max_shell_; ++r) {
    // a cell in shell r cannot hold anything closer than (r-1)*cell
    const double shell_min = (r - 1) * cell_;
    if (shell_min > 0 && shell_min * shell_min > best_d2) break;
    if (r == 0) {
      scan_cell(cx, cy, cz);
      continue;
    }
    for (std::int32_t dz = -r; dz <= r; ++dz) {
      for (std::int32_t dy = -r; dy <= r; ++dy) {
        if (std::abs(dz) == r || std::abs(dy) == r) {
          for (std::int32_t dx = -r; dx <= r; ++dx) {
            scan_cell(cx + dx, cy + dy, cz + dz);
          }
        } else {
          scan_cell(cx - r, cy + dy, cz + dz);
          scan_cell(cx + r, cy + dy, cz + dz);
        }
      }
    }
  }
  if (best.found) best.distance = std::sqrt(best_d2);
  return best;
}

//=============================================================================
// Verify
//=============================================================================

void occupied_centers(const SemanticVoxelMap& map, std::vector<Vec3>* centers,
                      std::vector<int>* labels) {
  centers->clear();
  labels->clear();
  for (const auto& key : map.occupied_voxels()) {
    centers->push_back(map.voxel_center(key));
    labels->push_back(state_label(map.resolve(key)));
  }
}

VerifyResult verify(const std::vector<Vec3>& query_centers,
                    const std::vector<int>& query_labels,
                    const VoxelNNIndex& db_index, const Mat3& rotation,
                    const Vec3& translation, double kappa,
                    bool keep_correspondences) {
  VerifyResult result;
  result.total = query_centers.size();
  if (query_centers.empty()) {
    result.empty_query = true;
    return result;
  }
  for (std::size_t i = 0; i < query_centers.size(); ++i) {
    const Vec3 moved = rotation * query_centers[i] + translation;
    const auto nb = db_index.nearest(moved);
    if (!nb.found || nb.distance >= kappa) continue;
    if (nb.label != query_labels[i]) continue;
    result.correct++;
    if (keep_correspondences) {
      result.correspondences.push_back({query_centers[i], nb.center});
    }
  }
  result.ratio =
      static_cast<double>(result.correct) / static_cast<double>(result.total);
  return result;
}

VerifyResult verify(const SemanticVoxelMap& query_map,
                    const VoxelNNIndex& db_index, const Mat3& rotation,
                    const Vec3& translation, double kappa,
                    bool keep_correspondences) {
  std::vector<Vec3> centers;
  std::vector<int> labels;
  occupied_centers(query_map, &centers, &labels);
  return verify(centers, labels, db_index, rotation, translation, kappa,
                keep_correspondences);
}

//=============================================================================
// Rigid fit
//=============================================================================

void rigid_fit(const std::vector<Correspondence>& pairs, Mat3* rotation,
               Vec3* translation) {
  if (pairs.size() < 3) {
    raise(Status::kDegenerate, "rigid_fit: need at least 3 pairs");
  }
  Vec3 qc = Vec3::Zero(), dc = Vec3::Zero();
  for (const auto& p : pairs) {
    qc += p.query;
    dc += p.database;
  }
  const double inv = 1.0 / static_cast<double>(pairs.size());
  qc *= inv;
  dc *= inv;
  Mat3 h = Mat3::Zero();
  for (const auto& p : pairs) {
    h += (p.query - qc) * (p.database - dc).transpose();
  }
  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  // rank < 2 (collinear points): rotation about the point axis is free
  if (sv(1) <= 1e-12 * std::max(1.0, sv(0))) {
    raise(Status::kDegenerate, "rigid_fit: degenerate correspondence set");
  }
  Mat3 d = Mat3::Identity();
  d(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0
                ? -1.0
                : 1.0;
  *rotation = svd.matrixV() * d * svd.matrixU().transpose();
  *translation = dc - *rotation * qc;
}

void rigid_fit_yaw(const std::vector<Correspondence>& pairs, Mat3* rotation,
                   Vec3* translation) {
  if (pairs.size() < 3) {
    raise(Status::kDegenerate, "rigid_fit_yaw: need at least 3 pairs");
  }
  Vec3 qc = Vec3::Zero(), dc = Vec3::Zero();
  for (const auto& p : pairs) {
    qc += p.query;
    dc += p.database;
  }
  const double inv = 1.0 / static_cast<double>(pairs.size());
  qc *= inv;
  dc *= inv;
  double s = 0, c = 0;
  for (const auto& p : pairs) {
    const Vec3 q = p.query - qc;
    const Vec3 d = p.database - dc;
    s += q.x() * d.y() - q.y() * d.x();
    c += q.x() * d.x() + q.y() * d.y();
  }
  if (std::abs(s) < 1e-15 && std::abs(c) < 1e-15) {
    raise(Status::kDegenerate, "rigid_fit_yaw: degenerate correspondence set");
  }
  *rotation = rot_z(std::atan2(s, c));
  *translation = dc - *rotation * qc;
}

//=============================================================================
// ICP
//=============================================================================

namespace {

double pair_rms(const std::vector<Correspondence>& pairs, const Mat3& r,
                const Vec3& t) {
  double acc = 0;
  for (const auto& p : pairs) {
    acc += (r * p.query + t - p.database).squaredNorm();
  }
  return std::sqrt(acc / static_cast<double>(pairs.size()));
}

double rotation_angle(const Mat3& a, const Mat3& b) {
  const double tr = (a * b.transpose()).trace();
  return std::acos(std::clamp((tr - 1.0) / 2.0, -1.0, 1.0));
}

}  // namespace

IcpResult icp_refine(const std::vector<Vec3>& query_centers,
                     const std::vector<int>& query_labels,
                     const VoxelNNIndex& db_index, const Mat3& r0,
                     const Vec3& t0, const VerificationConfig& config) {
  config.validate();
  IcpResult res;
  res.rotation = r0;
  res.translation = t0;

  double accepted_rms = std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < config.icp_max_iters; ++iter) {
    const auto ver = verify(query_centers, query_labels, db_index,
                            res.rotation, res.translation, config.kappa);
    res.ratio = ver.ratio;
    res.n_corr = static_cast<int>(ver.correct);
    res.ratio_trace.push_back(ver.ratio);
    if (ver.correspondences.size() < 3) {
      // nothing to fit; keep the current transform
      res.rms = ver.correspondences.empty()
                    ? 0.0
                    : pair_rms(ver.correspondences, res.rotation,
                               res.translation);
      return res;
    }

    Mat3 r_new;
    Vec3 t_new;
    try {
      if (config.icp_yaw_only) {
        rigid_fit_yaw(ver.correspondences, &r_new, &t_new);
      } else {
        rigid_fit(ver.correspondences, &r_new, &t_new);
      }
    } catch (const Error&) {
      res.rms = pair_rms(ver.correspondences, res.rotation, res.translation);
      return res;  // degenerate fit: keep previous transform
    }

    const double rms_new = pair_rms(ver.correspondences, r_new, t_new);
    if (rms_new > accepted_rms) {
      // correspondence churn increased the error: reject and stop
      break;
    }
    const double dt = (t_new - res.translation).norm();
    const double dr = rotation_angle(r_new, res.rotation);
    res.rotation = r_new;
    res.translation = t_new;
    res.rms = rms_new;
    res.rms_trace.push_back(rms_new);
    accepted_rms = rms_new;
    res.iterations = iter + 1;
    if (dt < config.icp_translation_eps && dr < config.icp_rotation_eps) {
      break;
    }
  }
  // ratio under the final transform
  const auto final_ver = verify(query_centers, query_labels, db_index,
                                res.rotation, res.translation, config.kappa,
                                /*keep_correspondences=*/true);
  res.ratio = final_ver.ratio;
  res.n_corr = static_cast<int>(final_ver.correct);
  if (!final_ver.correspondences.empty()) {
    res.rms = pair_rms(final_ver.correspondences, res.rotation,
                       res.translation);
  }
  res.ratio_trace.push_back(final_ver.ratio);
  return res;
}

//=============================================================================
// Ranking
//=============================================================================

std::vector<PoseHypothesis> rank_hypotheses(std::vector<PoseHypothesis> hyps,
                                            double tau) {
  std::vector<PoseHypothesis> kept;
  kept.reserve(hyps.size());
  for (auto& h : hyps) {
    if (h.ratio >= tau) kept.push_back(std::move(h));
  }
  std::sort(kept.begin(), kept.end(),
            [](const PoseHypothesis& a, const PoseHypothesis& b) {
              if (a.ratio != b.ratio) return a.ratio > b.ratio;
              if (a.rms != b.rms) return a.rms < b.rms;
              return a.order < b.order;
            });
  return kept;
}

void save_hypotheses_csv(const std::vector<PoseHypothesis>& ranked,
                         const std::string& path) {
  std::ofstream out(path);
  if (!out) raise(Status::kIo, "cannot open for write: " + path);
  out << "rank,ratio,yaw_deg,tx,ty,tz,rms,n_corr\n";
  char buf[256];
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    const auto& h = ranked[i];
    const double yaw_deg =
        rad2deg(wrap_angle(std::atan2(h.rotation(1, 0), h.rotation(0, 0))));
    std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%d\n",
                  i + 1, h.ratio, yaw_deg, h.translation.x(),
                  h.translation.y(), h.translation.z(), h.rms, h.n_corr);
    out << buf;
  }
  if (!out) raise(Status::kIo, "write failed: " + path);
}

}  // namespace svloc
