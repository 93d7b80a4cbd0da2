#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "svloc/net.hpp"

namespace svloc {

// Descriptor of one occupied subvolume plus its extraction pose. Database
// words always carry yaw = 0; query words are stamped with their orientation
// hypothesis.
struct SemanticWord {
  std::vector<float> descriptor;  // latent mean mu
  Vec3 center = Vec3::Zero();
  double yaw = 0.0;
  std::uint32_t map_id = 0;
};

// Evenly spaced yaw hypotheses: k * 2*pi / count.
std::vector<double> orientation_set(int count);

// One word per occupied subvolume center, extracted at yaw 0, in center
// order.
std::vector<SemanticWord> bag_of_words(const SemanticVoxelMap& map,
                                       const CompletionNet& net, int stride,
                                       std::uint32_t map_id = 0,
                                       int threads = 0);

// One bag per orientation hypothesis; word order is (yaw-major, center).
std::vector<std::vector<SemanticWord>> oriented_bags(
    const SemanticVoxelMap& map, const CompletionNet& net, int stride,
    const std::vector<double>& orientations, std::uint32_t map_id = 0,
    int threads = 0);

// SVLW container
void save_words(const std::vector<SemanticWord>& words, const std::string& path);
std::vector<SemanticWord> load_words(const std::string& path);

}  // namespace svloc
