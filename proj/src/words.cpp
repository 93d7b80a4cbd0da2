#include "svloc/words.hpp"

#include <cmath>

namespace svloc {

std::vector<double> orientation_set(int count) {
  if (count < 1) raise(Status::kInvalidArgument, "orientation count must be >= 1");
  std::vector<double> yaws(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    yaws[static_cast<std::size_t>(i)] = i * kTwoPi / count;
  }
  return yaws;
}

std::vector<SemanticWord> bag_of_words(const SemanticVoxelMap& map,
                                       const CompletionNet& net, int stride,
                                       std::uint32_t map_id, int threads) {
  const int side = net.arch().side;
  const auto centers = occupied_subvolume_centers(map, side, stride);
  std::vector<SemanticWord> words(centers.size());
  parallel_for(centers.size(), threads, [&](std::size_t i) {
    const Subvolume sv = extract_subvolume(map, centers[i], 0.0, side);
    words[i].descriptor = net.encode(sv).mu;
    words[i].center = centers[i];
    words[i].yaw = 0.0;
    words[i].map_id = map_id;
  });
  return words;
}

std::vector<std::vector<SemanticWord>> oriented_bags(
    const SemanticVoxelMap& map, const CompletionNet& net, int stride,
    const std::vector<double>& orientations, std::uint32_t map_id,
    int threads) {
  if (orientations.empty()) {
    raise(Status::kEmptyInput, "oriented_bags: no orientations");
  }
  const int side = net.arch().side;
  const auto centers = occupied_subvolume_centers(map, side, stride);
  std::vector<std::vector<SemanticWord>> bags(orientations.size());
  for (auto& b : bags) b.resize(centers.size());
  // flat (yaw, center) index space keeps both loops parallel
  parallel_for(orientations.size() * centers.size(), threads,
               [&](std::size_t i) {
                 const std::size_t yi = i / centers.size();
                 const std::size_t ci = i % centers.size();
                 const double yaw = orientations[yi];
                 const Subvolume sv =
                     extract_subvolume(map, centers[ci], yaw, side);
                 auto& w = bags[yi][ci];
                 w.descriptor = net.encode(sv).mu;
                 w.center = centers[ci];
                 w.yaw = yaw;
                 w.map_id = map_id;
               });
  return bags;
}

void save_words(const std::vector<SemanticWord>& words,
                const std::string& path) {
  ByteWriter w(path);
  w.magic("SVLW");
  w.u32(1);
  const std::uint32_t dim =
      words.empty() ? 0 : static_cast<std::uint32_t>(words[0].descriptor.size());
  w.u32(dim);
  w.u64(words.size());
  for (const auto& word : words) {
    if (word.descriptor.size() != dim) {
      raise(Status::kInvalidArgument, "inconsistent descriptor dimensions");
    }
    for (float v : word.descriptor) w.f32(v);
    for (int a = 0; a < 3; ++a) w.f64(word.center[a]);
    w.f64(word.yaw);
  }
  w.finish();
}

std::vector<SemanticWord> load_words(const std::string& path) {
  ByteReader r(path);
  r.expect_magic("SVLW");
  if (r.u32() != 1) raise(Status::kFormat, path + ": unsupported version");
  const std::uint32_t dim = r.u32();
  const std::uint64_t count = r.u64();
  std::vector<SemanticWord> words(count);
  for (auto& word : words) {
    word.descriptor.resize(dim);
    for (auto& v : word.descriptor) v = r.f32();
    for (int a = 0; a < 3; ++a) word.center[a] = r.f64();
    word.yaw = r.f64();
  }
  return words;
}

}  // namespace svloc
