#include "svloc/vocab.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace svloc {

namespace {

double sq_distance(const float* a, const float* b, int dim) {
  double acc = 0;
  for (int i = 0; i < dim; ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return acc;
}

}  // namespace

//=============================================================================
// VocabularyTree
//=============================================================================

VocabularyTree::VocabularyTree(int branching, int depth, int dim)
    : branching_(branching), depth_(depth), dim_(dim) {
  if (branching < 2 || depth < 1 || dim < 1) {
    raise(Status::kInvalidArgument, "vocabulary needs b >= 2, d >= 1");
  }
  levels_.resize(static_cast<std::size_t>(depth));
  pad_flags_.resize(static_cast<std::size_t>(depth));
  std::size_t nodes = 1;
  for (int l = 0; l < depth; ++l) {
    nodes *= static_cast<std::size_t>(branching);
    levels_[static_cast<std::size_t>(l)].assign(nodes * static_cast<std::size_t>(dim), 0.0f);
    pad_flags_[static_cast<std::size_t>(l)].assign(nodes, 0);
  }
}

std::uint32_t VocabularyTree::leaf_count() const {
  std::uint32_t n = 1;
  for (int l = 0; l < depth_; ++l) n *= static_cast<std::uint32_t>(branching_);
  return n;
}

const float* VocabularyTree::centroid(int level, std::uint32_t node) const {
  return levels_[static_cast<std::size_t>(level)].data() +
         static_cast<std::size_t>(node) * dim_;
}

bool VocabularyTree::is_padded(int level, std::uint32_t node) const {
  return pad_flags_[static_cast<std::size_t>(level)][node] != 0;
}

std::uint32_t VocabularyTree::quantize(const float* descriptor) const {
  std::uint32_t node = 0;
  for (int l = 0; l < depth_; ++l) {
    const std::uint32_t base = node * static_cast<std::uint32_t>(branching_);
    std::uint32_t best = base;
    double best_d = sq_distance(descriptor, centroid(l, base), dim_);
    for (int c = 1; c < branching_; ++c) {
      const double d = sq_distance(descriptor, centroid(l, base + c), dim_);
      if (d < best_d) {  // strict: ties resolve to the lowest child index
        best_d = d;
        best = base + static_cast<std::uint32_t>(c);
      }
    }
    node = best;
  }
  return node;
}

std::vector<std::uint32_t> VocabularyTree::quantize_multi(
    const float* descriptor, int assignments) const {
  if (assignments <= 1) return {quantize(descriptor)};
  struct Cand {
    double d;
    std::uint32_t node;
  };
  std::vector<Cand> beam{{0.0, 0}};
  for (int l = 0; l < depth_; ++l) {
    std::vector<Cand> next;
    for (const auto& cand : beam) {
      const std::uint32_t base =
          cand.node * static_cast<std::uint32_t>(branching_);
      for (int c = 0; c < branching_; ++c) {
        next.push_back(
            {sq_distance(descriptor, centroid(l, base + c), dim_),
             base + static_cast<std::uint32_t>(c)});
      }
    }
    std::stable_sort(next.begin(), next.end(), [](const Cand& a, const Cand& b) {
      if (a.d != b.d) return a.d < b.d;
      return a.node < b.node;
    });
    if (static_cast<int>(next.size()) > assignments) next.resize(assignments);
    beam = std::move(next);
  }
  std::vector<std::uint32_t> leaves;
  leaves.reserve(beam.size());
  for (const auto& cand : beam) leaves.push_back(cand.node);
  return leaves;
}

//=============================================================================
// Lloyd k-means
//=============================================================================

KMeansResult lloyd_kmeans(const std::vector<const float*>& points, int dim,
                          int k, std::uint64_t seed, int max_iters) {
  const std::size_t n = points.size();
  if (n < static_cast<std::size_t>(k)) {
    raise(Status::kInvalidArgument, "k-means: fewer points than clusters");
  }
  Rng rng(derive_seed(seed, 0x6b6d65616e73ULL));  // "kmeans"
  KMeansResult result;
  result.centroids.assign(static_cast<std::size_t>(k) * dim, 0.0f);
  result.assignment.assign(n, 0);

  // k-means++ seeding
  std::vector<double> dist2(n, std::numeric_limits<double>::infinity());
  std::vector<std::size_t> chosen;
  chosen.push_back(rng.index(n));
  std::copy(points[chosen[0]], points[chosen[0]] + dim,
            result.centroids.begin());
  for (int c = 1; c < k; ++c) {
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      dist2[i] = std::min(
          dist2[i],
          sq_distance(points[i],
                      result.centroids.data() +
                          static_cast<std::size_t>(c - 1) * dim,
                      dim));
      total += dist2[i];
    }
    std::size_t pick = 0;
    if (total > 0) {
      const double r = rng.uniform() * total;
      double acc = 0;
      for (std::size_t i = 0; i < n; ++i) {
        acc += dist2[i];
        if (acc >= r) {
          pick = i;
          break;
        }
      }
    } else {
      pick = rng.index(n);  // all points identical
    }
    chosen.push_back(pick);
    std::copy(points[pick], points[pick] + dim,
              result.centroids.begin() + static_cast<std::size_t>(c) * dim);
  }

  std::vector<double> sums(static_cast<std::size_t>(k) * dim);
  std::vector<std::size_t> counts(static_cast<std::size_t>(k));
  for (int iter = 0; iter < max_iters; ++iter) {
    // assignment pass
    bool changed = false;
    double objective = 0;
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t best = 0;
      double best_d = sq_distance(points[i], result.centroids.data(), dim);
      for (int c = 1; c < k; ++c) {
        const double d = sq_distance(
            points[i],
            result.centroids.data() + static_cast<std::size_t>(c) * dim, dim);
        if (d < best_d) {
          best_d = d;
          best = static_cast<std::uint32_t>(c);
        }
      }
      if (result.assignment[i] != best) {
        result.assignment[i] = best;
        changed = true;
      }
      objective += best_d;
    }
    // reseed empty clusters to the farthest point: removes an unused
    // centroid and zeroes that point's term, so the objective cannot grow
    counts.assign(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < n; ++i) counts[result.assignment[i]]++;
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) continue;
      std::size_t far = 0;
      double far_d = -1;
      for (std::size_t i = 0; i < n; ++i) {
        const double d = sq_distance(
            points[i],
            result.centroids.data() +
                static_cast<std::size_t>(result.assignment[i]) * dim,
            dim);
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      std::copy(points[far], points[far] + dim,
                result.centroids.begin() + static_cast<std::size_t>(c) * dim);
      objective -= far_d;
      counts[static_cast<std::size_t>(result.assignment[far])]--;
      result.assignment[far] = static_cast<std::uint32_t>(c);
      counts[static_cast<std::size_t>(c)] = 1;
      changed = true;
    }
    result.objective_trace.push_back(objective);
    if (!changed && iter > 0) break;

    // update pass
    std::fill(sums.begin(), sums.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double* s = sums.data() +
                  static_cast<std::size_t>(result.assignment[i]) * dim;
      for (int a = 0; a < dim; ++a) s[a] += points[i][a];
    }
    for (int c = 0; c < k; ++c) {
      const std::size_t cnt = counts[static_cast<std::size_t>(c)];
      if (cnt == 0) continue;
      float* ctr = result.centroids.data() + static_cast<std::size_t>(c) * dim;
      const double* s = sums.data() + static_cast<std::size_t>(c) * dim;
      for (int a = 0; a < dim; ++a) {
        ctr[a] = static_cast<float>(s[a] / static_cast<double>(cnt));
      }
    }
  }
  return result;
}

//=============================================================================
// Vocabulary training
//=============================================================================

namespace {

struct NodeBuild {
  std::vector<const float*> points;
};

}  // namespace

VocabularyTree train_vocabulary(const std::vector<SemanticWord>& words,
                                int branching, int depth, std::uint64_t seed,
                                int max_iters) {
  if (words.empty()) raise(Status::kEmptyInput, "train_vocabulary: no words");
  const int dim = static_cast<int>(words[0].descriptor.size());
  if (words.size() < static_cast<std::size_t>(branching)) {
    raise(Status::kInvalidArgument,
          "train_vocabulary: fewer descriptors than branching factor");
  }
  VocabularyTree tree(branching, depth, dim);

  std::vector<NodeBuild> level{NodeBuild{}};
  level[0].points.reserve(words.size());
  for (const auto& w : words) {
    if (static_cast<int>(w.descriptor.size()) != dim) {
      raise(Status::kInvalidArgument, "descriptor dimension mismatch");
    }
    level[0].points.push_back(w.descriptor.data());
  }

  std::size_t padded = 0;
  for (int l = 0; l < depth; ++l) {
    std::vector<NodeBuild> next(level.size() * static_cast<std::size_t>(branching));
    auto& centroids = tree.levels()[static_cast<std::size_t>(l)];
    auto& flags = tree.pad_flags()[static_cast<std::size_t>(l)];
    for (std::size_t node = 0; node < level.size(); ++node) {
      auto& pts = level[node].points;
      const std::size_t base = node * static_cast<std::size_t>(branching);
      if (pts.empty()) {
        // fully padded subtree: children copy the parent's centroid
        for (int c = 0; c < branching; ++c) {
          if (l > 0) {
            const float* parent =
                tree.centroid(l - 1, static_cast<std::uint32_t>(node));
            std::copy(parent, parent + dim,
                      centroids.begin() + (base + c) * static_cast<std::size_t>(dim));
          }
          flags[base + static_cast<std::size_t>(c)] = 1;
          ++padded;
        }
        continue;
      }
      if (pts.size() < static_cast<std::size_t>(branching)) {
        // not enough points to split: one singleton cluster per point, the
        // rest duplicate the first point (padded)
        for (int c = 0; c < branching; ++c) {
          const float* src =
              pts[std::min(static_cast<std::size_t>(c), pts.size() - 1)];
          std::copy(src, src + dim,
                    centroids.begin() + (base + c) * static_cast<std::size_t>(dim));
          if (static_cast<std::size_t>(c) >= pts.size()) {
            flags[base + static_cast<std::size_t>(c)] = 1;
            ++padded;
          }
        }
        for (std::size_t i = 0; i < pts.size(); ++i) {
          next[base + std::min(i, static_cast<std::size_t>(branching - 1))]
              .points.push_back(pts[i]);
        }
        continue;
      }
      const auto km =
          lloyd_kmeans(pts, dim, branching,
                       derive_seed(seed, (static_cast<std::uint64_t>(l) << 32) |
                                             node),
                       max_iters);
      std::copy(km.centroids.begin(), km.centroids.end(),
                centroids.begin() + base * static_cast<std::size_t>(dim));
      for (std::size_t i = 0; i < pts.size(); ++i) {
        next[base + km.assignment[i]].points.push_back(pts[i]);
      }
    }
    level = std::move(next);
  }
  tree.set_padded_count(padded);
  return tree;
}

//=============================================================================
// Hamming embedding
//=============================================================================

std::uint64_t HammingEmbedding::signature(std::uint32_t leaf,
                                          const float* descriptor) const {
  std::uint64_t sig = 0;
  const double* thr = thresholds.data() + static_cast<std::size_t>(leaf) * bits;
  for (int i = 0; i < bits; ++i) {
    const double* row = projection.data() + static_cast<std::size_t>(i) * dim;
    double v = 0;
    for (int a = 0; a < dim; ++a) v += row[a] * descriptor[a];
    if (v >= thr[i]) sig |= (std::uint64_t(1) << i);
  }
  return sig;
}

HammingEmbedding train_hamming(const VocabularyTree& tree,
                               const std::vector<SemanticWord>& words,
                               int bits, std::uint64_t seed) {
  if (bits < 1 || bits > 64) {
    raise(Status::kInvalidArgument, "hamming bits must be in [1, 64]");
  }
  const int dim = tree.dim();
  if (bits > dim) {
    raise(Status::kInvalidArgument,
          "hamming bits cannot exceed descriptor dimension (orthonormal rows)");
  }
  if (words.empty()) raise(Status::kEmptyInput, "train_hamming: no words");

  HammingEmbedding emb;
  emb.bits = bits;
  emb.dim = dim;
  emb.projection.assign(static_cast<std::size_t>(bits) * dim, 0.0);

  // random Gaussian rows, Gram-Schmidt orthonormalized
  Rng rng(derive_seed(seed, 0x68616d6dULL));  // "hamm"
  for (auto& v : emb.projection) v = rng.normal();
  for (int i = 0; i < bits; ++i) {
    double* row = emb.projection.data() + static_cast<std::size_t>(i) * dim;
    for (int j = 0; j < i; ++j) {
      const double* prev =
          emb.projection.data() + static_cast<std::size_t>(j) * dim;
      double dot = 0;
      for (int a = 0; a < dim; ++a) dot += row[a] * prev[a];
      for (int a = 0; a < dim; ++a) row[a] -= dot * prev[a];
    }
    double norm = 0;
    for (int a = 0; a < dim; ++a) norm += row[a] * row[a];
    norm = std::sqrt(norm);
    if (norm < 1e-12) {
      raise(Status::kNumeric, "hamming projection degenerated");
    }
    for (int a = 0; a < dim; ++a) row[a] /= norm;
  }

  // project everything, bucket by leaf
  const std::uint32_t leaves = tree.leaf_count();
  std::vector<std::vector<std::vector<double>>> per_leaf(leaves);
  std::vector<std::vector<double>> global(static_cast<std::size_t>(bits));
  for (const auto& w : words) {
    const std::uint32_t leaf = tree.quantize(w.descriptor.data());
    auto& bucket = per_leaf[leaf];
    if (bucket.empty()) bucket.resize(static_cast<std::size_t>(bits));
    for (int i = 0; i < bits; ++i) {
      const double* row =
          emb.projection.data() + static_cast<std::size_t>(i) * dim;
      double v = 0;
      for (int a = 0; a < dim; ++a) v += row[a] * w.descriptor[a];
      bucket[static_cast<std::size_t>(i)].push_back(v);
      global[static_cast<std::size_t>(i)].push_back(v);
    }
  }

  auto median = [](std::vector<double>& v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  };

  std::vector<double> global_median(static_cast<std::size_t>(bits));
  for (int i = 0; i < bits; ++i) {
    global_median[static_cast<std::size_t>(i)] =
        median(global[static_cast<std::size_t>(i)]);
  }

  emb.thresholds.assign(static_cast<std::size_t>(leaves) * bits, 0.0);
  emb.leaf_trained.assign(leaves, 0);
  for (std::uint32_t leaf = 0; leaf < leaves; ++leaf) {
    double* thr = emb.thresholds.data() + static_cast<std::size_t>(leaf) * bits;
    if (per_leaf[leaf].empty()) {
      std::copy(global_median.begin(), global_median.end(), thr);
    } else {
      emb.leaf_trained[leaf] = 1;
      for (int i = 0; i < bits; ++i) {
        thr[i] = median(per_leaf[leaf][static_cast<std::size_t>(i)]);
      }
    }
  }
  return emb;
}

//=============================================================================
// Index + query
//=============================================================================

WordIndex build_index(const VocabularyTree& tree,
                      const HammingEmbedding& embedding,
                      const std::vector<SemanticWord>& database_words) {
  if (database_words.empty()) {
    raise(Status::kEmptyInput, "build_index: no database words");
  }
  WordIndex index;
  index.leaves.resize(tree.leaf_count());
  for (std::uint32_t i = 0; i < database_words.size(); ++i) {
    const float* d = database_words[i].descriptor.data();
    const std::uint32_t leaf = tree.quantize(d);
    index.leaves[leaf].push_back(Posting{embedding.signature(leaf, d), i});
    index.total++;
  }
  return index;
}

std::vector<KnnMatch> query_knn(const VocabularyTree& tree,
                                const HammingEmbedding& embedding,
                                const WordIndex& index, const float* descriptor,
                                const QueryOptions& options) {
  if (options.k < 1) raise(Status::kInvalidArgument, "query_knn: k must be >= 1");
  const int cutoff =
      options.max_distance < 0 ? embedding.bits : options.max_distance;
  const auto leaves =
      tree.quantize_multi(descriptor, std::max(1, options.multiple_assignment));
  std::vector<KnnMatch> matches;
  std::vector<std::uint8_t> seen;
  for (std::uint32_t leaf : leaves) {
    const std::uint64_t qsig = embedding.signature(leaf, descriptor);
    for (const auto& post : index.leaves[leaf]) {
      const int dist = hamming_distance(qsig, post.signature);
      if (dist > cutoff) continue;
      if (leaves.size() > 1) {
        if (seen.empty()) seen.assign(index.total, 0);
        if (seen[post.word]) continue;
        seen[post.word] = 1;
      }
      matches.push_back(KnnMatch{post.word, dist});
    }
  }
  // ranking: distance, then insertion order (stable sort preserves it)
  std::stable_sort(matches.begin(), matches.end(),
                   [](const KnnMatch& a, const KnnMatch& b) {
                     return a.distance < b.distance;
                   });
  if (matches.size() > static_cast<std::size_t>(options.k)) {
    matches.resize(static_cast<std::size_t>(options.k));
  }
  return matches;
}

//=============================================================================
// Serialization
//=============================================================================

void save_vocabulary(const VocabularyTree& tree, const std::string& path) {
  ByteWriter w(path);
  w.magic("SVLT");
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(tree.branching()));
  w.u32(static_cast<std::uint32_t>(tree.depth()));
  w.u32(static_cast<std::uint32_t>(tree.dim()));
  w.u64(tree.padded_nodes());
  for (int l = 0; l < tree.depth(); ++l) {
    for (float v : tree.levels()[static_cast<std::size_t>(l)]) w.f32(v);
    for (std::uint8_t f : tree.pad_flags()[static_cast<std::size_t>(l)]) w.u8(f);
  }
  w.finish();
}

VocabularyTree load_vocabulary(const std::string& path) {
  ByteReader r(path);
  r.expect_magic("SVLT");
  if (r.u32() != 1) raise(Status::kFormat, path + ": unsupported version");
  const int b = static_cast<int>(r.u32());
  const int d = static_cast<int>(r.u32());
  const int dim = static_cast<int>(r.u32());
  if (b < 2 || b > 4096 || d < 1 || d > 8 || dim < 1 || dim > 4096) {
    raise(Status::kFormat, path + ": implausible tree shape");
  }
  const std::uint64_t padded = r.u64();
  VocabularyTree tree(b, d, dim);
  for (int l = 0; l < d; ++l) {
    for (auto& v : tree.levels()[static_cast<std::size_t>(l)]) v = r.f32();
    for (auto& f : tree.pad_flags()[static_cast<std::size_t>(l)]) f = r.u8();
  }
  tree.set_padded_count(padded);
  return tree;
}

void save_embedding(const HammingEmbedding& emb, const std::string& path) {
  ByteWriter w(path);
  w.magic("SVLH");
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(emb.bits));
  w.u32(static_cast<std::uint32_t>(emb.dim));
  w.u64(emb.leaf_trained.size());
  for (double v : emb.projection) w.f64(v);
  for (double v : emb.thresholds) w.f64(v);
  for (std::uint8_t f : emb.leaf_trained) w.u8(f);
  w.finish();
}

HammingEmbedding load_embedding(const std::string& path) {
  ByteReader r(path);
  r.expect_magic("SVLH");
  if (r.u32() != 1) raise(Status::kFormat, path + ": unsupported version");
  HammingEmbedding emb;
  emb.bits = static_cast<int>(r.u32());
  emb.dim = static_cast<int>(r.u32());
  const std::uint64_t leaves = r.u64();
  if (emb.bits < 1 || emb.bits > 64 || emb.dim < 1 || emb.dim > 4096 ||
      leaves > (1ull << 24)) {
    raise(Status::kFormat, path + ": implausible embedding shape");
  }
  emb.projection.resize(static_cast<std::size_t>(emb.bits) * emb.dim);
  for (auto& v : emb.projection) v = r.f64();
  emb.thresholds.resize(static_cast<std::size_t>(leaves) * emb.bits);
  for (auto& v : emb.thresholds) v = r.f64();
  emb.leaf_trained.resize(leaves);
  for (auto& f : emb.leaf_trained) f = r.u8();
  return emb;
}

void save_index(const WordIndex& index, const std::string& path) {
  ByteWriter w(path);
  w.magic("SVLI");
  w.u32(1);
  w.u64(index.leaves.size());
  for (const auto& leaf : index.leaves) {
    w.u64(leaf.size());
    for (const auto& post : leaf) {
      w.u64(post.signature);
      w.u32(post.word);
    }
  }
  w.finish();
}

WordIndex load_index(const std::string& path) {
  ByteReader r(path);
  r.expect_magic("SVLI");
  if (r.u32() != 1) raise(Status::kFormat, path + ": unsupported version");
  WordIndex index;
  const std::uint64_t leaves = r.u64();
  if (leaves > (1ull << 24)) {
    raise(Status::kFormat, path + ": implausible leaf count");
  }
  index.leaves.resize(leaves);
  for (auto& leaf : index.leaves) {
    const std::uint64_t n = r.u64();
    leaf.resize(n);
    for (auto& post : leaf) {
      post.signature = r.u64();
      post.word = r.u32();
    }
    index.total += n;
  }
  return index;
}

}  // namespace svloc
