#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "svloc/words.hpp"

namespace svloc {

//=============================================================================
// Hierarchical k-means vocabulary
//
// Complete b-ary tree of depth d; leaf ids are dense in [0, b^d). Nodes with
// fewer points than children are padded with duplicate centroids (marked).
//=============================================================================

class VocabularyTree {
 public:
  VocabularyTree() = default;
  VocabularyTree(int branching, int depth, int dim);

  int branching() const { return branching_; }
  int depth() const { return depth_; }
  int dim() const { return dim_; }
  std::uint32_t leaf_count() const;
  std::size_t padded_nodes() const { return padded_count_; }

  // Centroid of child `child` of internal node `node` at `level` (level 0 =
  // root's children). Node indices are level-local.
  const float* centroid(int level, std::uint32_t node) const;
  bool is_padded(int level, std::uint32_t node) const;

  std::uint32_t quantize(const float* descriptor) const;
  // The m best leaves by greedy beam descent (multiple assignment).
  std::vector<std::uint32_t> quantize_multi(const float* descriptor,
                                            int assignments) const;

  // internal: level-major centroid storage
  std::vector<std::vector<float>>& levels() { return levels_; }
  const std::vector<std::vector<float>>& levels() const { return levels_; }
  std::vector<std::vector<std::uint8_t>>& pad_flags() { return pad_flags_; }
  const std::vector<std::vector<std::uint8_t>>& pad_flags() const {
    return pad_flags_;
  }
  void set_padded_count(std::size_t n) { padded_count_ = n; }

 private:
  int branching_ = 0;
  int depth_ = 0;
  int dim_ = 0;
  std::size_t padded_count_ = 0;
  // levels_[l] holds b^(l+1) centroids of dim_ floats
  std::vector<std::vector<float>> levels_;
  std::vector<std::vector<std::uint8_t>> pad_flags_;
};

// Lloyd iterations with k-means++ seeding; empty clusters are reseeded to the
// farthest point, which keeps the objective non-increasing.
struct KMeansResult {
  std::vector<float> centroids;           // k * dim
  std::vector<std::uint32_t> assignment;  // per point
  std::vector<double> objective_trace;    // after each assignment pass
};

KMeansResult lloyd_kmeans(const std::vector<const float*>& points, int dim,
                          int k, std::uint64_t seed, int max_iters);

VocabularyTree train_vocabulary(const std::vector<SemanticWord>& words,
                                int branching, int depth, std::uint64_t seed,
                                int max_iters = 25);

//=============================================================================
// Hamming embedding
//=============================================================================

struct HammingEmbedding {
  int bits = 0;  // N_B <= 64
  int dim = 0;
  std::vector<double> projection;  // bits x dim, orthonormal rows
  std::vector<double> thresholds;  // leaf_count x bits (per-leaf medians)
  std::vector<std::uint8_t> leaf_trained;  // 0 = global-median fallback

  std::uint64_t signature(std::uint32_t leaf,
                          const float* descriptor) const;
};

HammingEmbedding train_hamming(const VocabularyTree& tree,
                               const std::vector<SemanticWord>& words,
                               int bits, std::uint64_t seed);

inline int hamming_distance(std::uint64_t a, std::uint64_t b) {
  return __builtin_popcountll(a ^ b);
}

//=============================================================================
// Database word index
//=============================================================================

struct Posting {
  std::uint64_t signature = 0;
  std::uint32_t word = 0;  // index into the database word array
};

struct WordIndex {
  std::vector<std::vector<Posting>> leaves;
  std::size_t total = 0;
};

WordIndex build_index(const VocabularyTree& tree,
                      const HammingEmbedding& embedding,
                      const std::vector<SemanticWord>& database_words);

struct KnnMatch {
  std::uint32_t word = 0;
  int distance = 0;
};

struct QueryOptions {
  int k = 5;
  int max_distance = -1;     // -1: no cutoff (N_B)
  int multiple_assignment = 1;
};

// Quantize the query, rank its leaf's postings by Hamming distance
// (insertion order breaks ties), return the top k.
std::vector<KnnMatch> query_knn(const VocabularyTree& tree,
                                const HammingEmbedding& embedding,
                                const WordIndex& index, const float* descriptor,
                                const QueryOptions& options);

//=============================================================================
// Serialization (SVLT / SVLH / SVLI)
//=============================================================================

void save_vocabulary(const VocabularyTree& tree, const std::string& path);
VocabularyTree load_vocabulary(const std::string& path);
void save_embedding(const HammingEmbedding& embedding, const std::string& path);
HammingEmbedding load_embedding(const std::string& path);
void save_index(const WordIndex& index, const std::string& path);
WordIndex load_index(const std::string& path);

}  // namespace svloc
