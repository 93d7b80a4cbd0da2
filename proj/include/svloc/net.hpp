#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "svloc/voxel_map.hpp"

namespace svloc {

namespace detail {
template <typename T>
struct ParamsT;
}

//=============================================================================
// Architecture
//
// Encoder: 3 x (3x3x3 conv, zero pad, ReLU, 2x2x2 max pool), flatten,
// FC+tanh, two linear heads (mu, logvar). Decoder: FC+tanh, reshape to the
// coarse grid, 3 x (2x nearest upsample, 3x3x3 conv, ReLU), 1x1x1 conv to
// class logits, per-cell softmax. The latent mean mu is the descriptor.
//=============================================================================

struct NetArchitecture {
  int side = 16;         // V; must be divisible by 8 (three 2x poolings)
  int in_channels = 10;  // unobserved + free + L classes
  int out_channels = 9;  // free + L classes
  int widths[3] = {8, 16, 24};
  int fc_width = 128;
  int latent_dim = 32;   // N

  int coarse_side() const { return side / 8; }
  int flat_size() const {
    const int c = coarse_side();
    return widths[2] * c * c * c;
  }
  int num_labels() const { return in_channels - 2; }
  void validate() const;
  bool operator==(const NetArchitecture&) const = default;

  // Desk-scale default: trainable on a laptop-class CPU in minutes.
  static NetArchitecture desk(int num_labels);
  // Full-scale preset (32^3 input, N = 256, ~1M parameters).
  static NetArchitecture paper(int num_labels);
  // Minimal net for finite-difference checks.
  static NetArchitecture tiny(int num_labels);
};

struct LatentCode {
  std::vector<float> mu;
  std::vector<float> logvar;
};

struct LossWeights {
  double w_r = 10.0;    // reconstruction emphasis over the KL prior
  double w_occ = 10.0;  // occupied-cell emphasis inside the reconstruction mean
};

struct LossTerms {
  double delta = 0;
  double delta_r = 0;
  double delta_kl = 0;
  bool all_unobserved = false;  // target had no supervised cells
};

//=============================================================================
// Network
//=============================================================================

class CompletionNet {
 public:
  CompletionNet();
  CompletionNet(const NetArchitecture& arch, std::uint64_t seed);
  CompletionNet(const CompletionNet& other);
  CompletionNet& operator=(const CompletionNet& other);
  CompletionNet(CompletionNet&&) noexcept;
  CompletionNet& operator=(CompletionNet&&) noexcept;
  ~CompletionNet();

  const NetArchitecture& arch() const;
  std::size_t param_count() const;
  std::vector<float>& params();              // flat, declared tensor order
  const std::vector<float>& params() const;

  // Deterministic; the descriptor is code.mu.
  LatentCode encode(const Subvolume& input) const;

  // Per-cell class probabilities, channel-major [out_channels][side^3],
  // x-fastest within a channel. Each cell's probabilities sum to 1.
  std::vector<float> decode(const std::vector<float>& z) const;

  detail::ParamsT<float>& impl() { return *impl_; }
  const detail::ParamsT<float>& impl() const { return *impl_; }

 private:
  std::unique_ptr<detail::ParamsT<float>> impl_;
};

// z = mu + exp(logvar/2) * eps with eps ~ N(0, I); training-time sampling.
std::vector<float> sample_latent(const LatentCode& code, Rng& rng);

// Reconstruction + prior loss on a decoded probability volume.
LossTerms completion_loss(const std::vector<float>& probs,
                          const Subvolume& target, const LatentCode& code,
                          const LossWeights& weights);

//=============================================================================
// Training
//=============================================================================

struct TrainConfig {
  int batch_size = 32;
  int epochs = 50;
  double rho = 0.95;        // ADADELTA decay
  double adadelta_eps = 1e-8;
  double eta = 1.0;         // learning-rate multiplier
  double dropout_rate = 0.10;  // observed cells of the incomplete volume
  bool yaw_augmentation = true;
  LossWeights weights;
  std::uint64_t seed = 1;
  int threads = 0;  // 0 = hardware concurrency
};

struct EpochLog {
  int epoch = 0;
  double delta = 0;
  double delta_r = 0;
  double delta_kl = 0;
};

struct TrainResult {
  CompletionNet net;
  std::vector<EpochLog> log;
};

TrainResult train(const std::vector<TrainingPair>& pairs,
                  const NetArchitecture& arch, const TrainConfig& config);

// Continue training an existing net (same config semantics).
std::vector<EpochLog> train_in_place(CompletionNet& net,
                                     const std::vector<TrainingPair>& pairs,
                                     const TrainConfig& config);

// Fraction of supervised complete-target cells the encode+decode round trip
// classifies correctly.
double completion_accuracy(const CompletionNet& net,
                           const std::vector<TrainingPair>& pairs,
                           int threads = 0);

// Largest class share among supervised target cells (chance baseline).
double majority_class_fraction(const std::vector<TrainingPair>& pairs);

void save_epoch_log(const std::vector<EpochLog>& log, const std::string& path);

//=============================================================================
// Gradient verification (f64 reference path)
//=============================================================================

struct GradCheckOptions {
  double h = 1e-3;
  std::size_t max_params = 0;  // 0 = all parameters
  std::uint64_t subset_seed = 7;
  bool zero_init = false;
  std::uint64_t init_seed = 1;
  std::uint64_t eps_seed = 3;
  LossWeights weights;
};

struct GradCheckResult {
  double max_rel_error = 0;
  double max_abs_error = 0;
  std::size_t checked = 0;
};

// Central finite differences against the analytic gradient on a double
// precision copy of the computation.
GradCheckResult gradient_check(const NetArchitecture& arch,
                               const Subvolume& incomplete,
                               const Subvolume& complete,
                               const GradCheckOptions& options);

//=============================================================================
// Model file (SVLN)
//=============================================================================

void save_net(const CompletionNet& net, const std::string& path);
CompletionNet load_net(const std::string& path);

}  // namespace svloc
