#include "svloc/net.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "net_kernels.hpp"

namespace svloc {

using detail::ParamsT;
using detail::Workspace;

//=============================================================================
// Architecture
//=============================================================================

void NetArchitecture::validate() const {
  if (side < 8 || side % 8 != 0) {
    raise(Status::kInvalidArgument,
          "net side must be a multiple of 8 (three 2x poolings)");
  }
  if (in_channels < 3 || out_channels != in_channels - 1) {
    raise(Status::kInvalidArgument,
          "channel layout must be in = L+2, out = L+1");
  }
  for (int w : widths) {
    if (w < 1) raise(Status::kInvalidArgument, "channel widths must be >= 1");
  }
  if (fc_width < 1 || latent_dim < 1) {
    raise(Status::kInvalidArgument, "fc width and latent dim must be >= 1");
  }
}

NetArchitecture NetArchitecture::desk(int num_labels) {
  NetArchitecture a;
  a.side = 16;
  a.in_channels = num_labels + 2;
  a.out_channels = num_labels + 1;
  a.widths[0] = 8;
  a.widths[1] = 16;
  a.widths[2] = 24;
  a.fc_width = 128;
  a.latent_dim = 32;
  return a;
}

NetArchitecture NetArchitecture::paper(int num_labels) {
  NetArchitecture a;
  a.side = 32;
  a.in_channels = num_labels + 2;
  a.out_channels = num_labels + 1;
  a.widths[0] = 16;
  a.widths[1] = 32;
  a.widths[2] = 64;
  a.fc_width = 512;
  a.latent_dim = 256;
  return a;
}

NetArchitecture NetArchitecture::tiny(int num_labels) {
  NetArchitecture a;
  a.side = 8;
  a.in_channels = num_labels + 2;
  a.out_channels = num_labels + 1;
  a.widths[0] = 2;
  a.widths[1] = 3;
  a.widths[2] = 4;
  a.fc_width = 8;
  a.latent_dim = 4;
  return a;
}

//=============================================================================
// CompletionNet
//=============================================================================

CompletionNet::CompletionNet() : impl_(std::make_unique<ParamsT<float>>()) {}

CompletionNet::CompletionNet(const NetArchitecture& arch, std::uint64_t seed)
    : impl_(std::make_unique<ParamsT<float>>()) {
  arch.validate();
  impl_->allocate(arch);
  impl_->random_init(seed);
}

CompletionNet::CompletionNet(const CompletionNet& other)
    : impl_(std::make_unique<ParamsT<float>>(*other.impl_)) {}

CompletionNet& CompletionNet::operator=(const CompletionNet& other) {
  *impl_ = *other.impl_;
  return *this;
}

CompletionNet::CompletionNet(CompletionNet&&) noexcept = default;
CompletionNet& CompletionNet::operator=(CompletionNet&&) noexcept = default;
CompletionNet::~CompletionNet() = default;

const NetArchitecture& CompletionNet::arch() const { return impl_->arch; }
std::size_t CompletionNet::param_count() const { return impl_->data.size(); }
std::vector<float>& CompletionNet::params() { return impl_->data; }
const std::vector<float>& CompletionNet::params() const { return impl_->data; }

namespace {

void check_input(const NetArchitecture& a, const Subvolume& sv) {
  if (sv.side != a.side) {
    raise(Status::kInvalidArgument, "subvolume side does not match net");
  }
  const std::size_t n = static_cast<std::size_t>(a.side) * a.side * a.side;
  if (sv.cells.size() != n) {
    raise(Status::kInvalidArgument, "subvolume cell buffer size mismatch");
  }
  for (CellState s : sv.cells) {
    if (s >= a.in_channels) {
      raise(Status::kInvalidArgument, "cell state exceeds input channels");
    }
  }
}

}  // namespace

LatentCode CompletionNet::encode(const Subvolume& input) const {
  check_input(impl_->arch, input);
  Workspace<float> ws;
  ws.allocate(impl_->arch);
  detail::encoder_forward(*impl_, input.cells.data(), ws);
  LatentCode code;
  code.mu = ws.mu;
  code.logvar = ws.logvar;
  return code;
}

std::vector<float> CompletionNet::decode(const std::vector<float>& z) const {
  const auto& a = impl_->arch;
  if (static_cast<int>(z.size()) != a.latent_dim) {
    raise(Status::kInvalidArgument, "latent vector has wrong dimension");
  }
  Workspace<float> ws;
  ws.allocate(a);
  std::copy(z.begin(), z.end(), ws.z.begin());
  detail::decoder_forward(*impl_, ws);
  return ws.probs;
}

std::vector<float> sample_latent(const LatentCode& code, Rng& rng) {
  std::vector<float> z(code.mu.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const float lv = detail::clamp_logvar(code.logvar[i]);
    z[i] = code.mu[i] +
           std::exp(lv * 0.5f) * static_cast<float>(rng.normal());
  }
  return z;
}

LossTerms completion_loss(const std::vector<float>& probs,
                          const Subvolume& target, const LatentCode& code,
                          const LossWeights& weights) {
  const int side = target.side;
  const std::size_t vol = static_cast<std::size_t>(side) * side * side;
  if (probs.size() % vol != 0) {
    raise(Status::kInvalidArgument, "probability volume size mismatch");
  }
  const int c_out = static_cast<int>(probs.size() / vol);
  for (CellState s : target.cells) {
    if (s != kUnobserved && s - 1 >= c_out) {
      raise(Status::kInvalidArgument, "target state exceeds output channels");
    }
  }
  const auto t = detail::loss_forward(
      probs.data(), vol, c_out, target.cells.data(), code.mu.data(),
      code.logvar.data(), static_cast<int>(code.mu.size()), weights.w_r,
      weights.w_occ);
  return LossTerms{t.delta, t.delta_r, t.delta_kl, t.all_unobserved};
}

//=============================================================================
// Training
//=============================================================================

namespace {

// Per-sample augmentation drawn sequentially before the parallel section so
// the rng stream does not depend on scheduling.
struct AugmentedSample {
  std::vector<std::uint8_t> input;
  std::vector<std::uint8_t> target;
};

AugmentedSample augment(const TrainingPair& pair, double yaw,
                        double dropout_rate, std::uint64_t dropout_seed) {
  AugmentedSample s;
  if (yaw != 0.0) {
    s.input = rotate_subvolume(pair.incomplete, yaw).cells;
    s.target = rotate_subvolume(pair.complete, yaw).cells;
  } else {
    s.input = pair.incomplete.cells;
    s.target = pair.complete.cells;
  }
  if (dropout_rate > 0.0) {
    Rng rng(dropout_seed);
    for (auto& c : s.input) {
      if (c != kUnobserved && rng.bernoulli(dropout_rate)) c = kUnobserved;
    }
  }
  return s;
}

struct Adadelta {
  std::vector<double> acc_grad;
  std::vector<double> acc_step;
  double rho, eps, eta;

  Adadelta(std::size_t n, double rho_, double eps_, double eta_)
      : acc_grad(n, 0.0), acc_step(n, 0.0), rho(rho_), eps(eps_), eta(eta_) {}

  void update(std::vector<float>& params, const std::vector<double>& grad) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double g = grad[i];
      acc_grad[i] = rho * acc_grad[i] + (1.0 - rho) * g * g;
      const double step = -std::sqrt(acc_step[i] + eps) /
                          std::sqrt(acc_grad[i] + eps) * g;
      acc_step[i] = rho * acc_step[i] + (1.0 - rho) * step * step;
      params[i] += static_cast<float>(eta * step);
    }
  }
};

}  // namespace

std::vector<EpochLog> train_in_place(CompletionNet& net,
                                     const std::vector<TrainingPair>& pairs,
                                     const TrainConfig& config) {
  if (pairs.empty()) raise(Status::kEmptyInput, "train: empty dataset");
  const auto& arch = net.arch();
  for (const auto& p : pairs) {
    check_input(arch, p.incomplete);
    if (p.complete.side != arch.side) {
      raise(Status::kInvalidArgument, "target side does not match net");
    }
  }
  const int threads = effective_threads(config.threads);
  const std::size_t n_params = net.param_count();

  Adadelta opt(n_params, config.rho, config.adadelta_eps, config.eta);
  Rng rng(derive_seed(config.seed, 0x747261696eULL));  // "train"

  std::vector<Workspace<float>> ws(static_cast<std::size_t>(threads));
  for (auto& w : ws) w.allocate(arch);
  std::vector<std::vector<float>> thread_grads(
      static_cast<std::size_t>(threads));
  std::vector<std::vector<float>> sample_eps;

  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);

  std::vector<EpochLog> log;
  std::vector<double> grad(n_params);
  std::vector<AugmentedSample> batch_samples;
  std::vector<detail::LossTermsT> batch_terms;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_delta = 0, epoch_r = 0, epoch_kl = 0;
    std::size_t seen = 0;

    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t bsize =
          std::min(order.size() - start,
                   static_cast<std::size_t>(config.batch_size));
      batch_samples.resize(bsize);
      batch_terms.assign(bsize, {});
      sample_eps.assign(bsize, {});

      // sequential draws: augmentation parameters and latent noise
      for (std::size_t b = 0; b < bsize; ++b) {
        const double yaw =
            config.yaw_augmentation ? rng.uniform(0.0, kTwoPi) : 0.0;
        const std::uint64_t dropout_seed = rng.next_u64();
        batch_samples[b] = augment(pairs[order[start + b]], yaw,
                                   config.dropout_rate, dropout_seed);
        auto& eps = sample_eps[b];
        eps.resize(static_cast<std::size_t>(arch.latent_dim));
        for (auto& e : eps) e = static_cast<float>(rng.normal());
      }

      for (auto& tg : thread_grads) tg.assign(n_params, 0.0f);
      parallel_for(bsize, threads, [&](std::size_t b) {
        const int t = static_cast<int>(b % static_cast<std::size_t>(threads));
        auto& w = ws[static_cast<std::size_t>(t)];
        const auto& s = batch_samples[b];
        batch_terms[b] = detail::net_forward(
            net.impl(), s.input.data(), s.target.data(), sample_eps[b].data(),
            config.weights.w_r, config.weights.w_occ, w);
        detail::net_backward(net.impl(), s.input.data(), s.target.data(),
                             config.weights.w_r, config.weights.w_occ,
                             batch_terms[b], w,
                             thread_grads[static_cast<std::size_t>(t)].data());
      });

      // fixed-order reduction, then mean over the batch
      std::fill(grad.begin(), grad.end(), 0.0);
      for (int t = 0; t < threads; ++t) {
        const auto& tg = thread_grads[static_cast<std::size_t>(t)];
        for (std::size_t i = 0; i < n_params; ++i) {
          grad[i] += static_cast<double>(tg[i]);
        }
      }
      const double inv_b = 1.0 / static_cast<double>(bsize);
      for (auto& g : grad) g *= inv_b;

      for (std::size_t b = 0; b < bsize; ++b) {
        const auto& t = batch_terms[b];
        if (!std::isfinite(t.delta)) {
          raise(Status::kNumeric,
                "training diverged (non-finite loss) at epoch " +
                    std::to_string(epoch));
        }
        epoch_delta += t.delta;
        epoch_r += t.delta_r;
        epoch_kl += t.delta_kl;
      }
      seen += bsize;

      opt.update(net.params(), grad);
    }

    log.push_back(EpochLog{epoch, epoch_delta / static_cast<double>(seen),
                           epoch_r / static_cast<double>(seen),
                           epoch_kl / static_cast<double>(seen)});
  }
  return log;
}

TrainResult train(const std::vector<TrainingPair>& pairs,
                  const NetArchitecture& arch, const TrainConfig& config) {
  TrainResult result{CompletionNet(arch, config.seed), {}};
  result.log = train_in_place(result.net, pairs, config);
  return result;
}

double completion_accuracy(const CompletionNet& net,
                           const std::vector<TrainingPair>& pairs,
                           int threads) {
  if (pairs.empty()) raise(Status::kEmptyInput, "completion_accuracy: no pairs");
  const auto& arch = net.arch();
  const std::size_t vol =
      static_cast<std::size_t>(arch.side) * arch.side * arch.side;
  const int t = effective_threads(threads);
  std::vector<std::size_t> correct(pairs.size(), 0), total(pairs.size(), 0);
  std::vector<Workspace<float>> ws(static_cast<std::size_t>(t));
  for (auto& w : ws) w.allocate(arch);

  parallel_for(pairs.size(), t, [&](std::size_t i) {
    auto& w = ws[i % static_cast<std::size_t>(t)];
    check_input(arch, pairs[i].incomplete);
    detail::encoder_forward(net.impl(), pairs[i].incomplete.cells.data(), w);
    std::copy(w.mu.begin(), w.mu.end(), w.z.begin());  // descriptor path: z=mu
    detail::decoder_forward(net.impl(), w);
    const auto& target = pairs[i].complete.cells;
    for (std::size_t p = 0; p < vol; ++p) {
      if (target[p] == kUnobserved) continue;
      const int truth = target[p] - 1;
      int best = 0;
      float best_p = w.probs[p];
      for (int c = 1; c < arch.out_channels; ++c) {
        const float v = w.probs[static_cast<std::size_t>(c) * vol + p];
        if (v > best_p) {
          best_p = v;
          best = c;
        }
      }
      total[i]++;
      if (best == truth) correct[i]++;
    }
  });
  const auto c = std::accumulate(correct.begin(), correct.end(), std::size_t(0));
  const auto n = std::accumulate(total.begin(), total.end(), std::size_t(0));
  return n == 0 ? 0.0 : static_cast<double>(c) / static_cast<double>(n);
}

double majority_class_fraction(const std::vector<TrainingPair>& pairs) {
  std::vector<std::size_t> counts;
  std::size_t total = 0;
  for (const auto& p : pairs) {
    for (CellState s : p.complete.cells) {
      if (s == kUnobserved) continue;
      const std::size_t cls = static_cast<std::size_t>(s - 1);
      if (cls >= counts.size()) counts.resize(cls + 1, 0);
      counts[cls]++;
      total++;
    }
  }
  if (total == 0) return 0.0;
  const std::size_t best = *std::max_element(counts.begin(), counts.end());
  return static_cast<double>(best) / static_cast<double>(total);
}

void save_epoch_log(const std::vector<EpochLog>& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) raise(Status::kIo, "cannot open for write: " + path);
  out << "epoch,delta,delta_r,delta_kl\n";
  char buf[160];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g\n", e.epoch, e.delta,
                  e.delta_r, e.delta_kl);
    out << buf;
  }
  if (!out) raise(Status::kIo, "write failed: " + path);
}

//=============================================================================
// Gradient check (double path)
//=============================================================================

GradCheckResult gradient_check(const NetArchitecture& arch,
                               const Subvolume& incomplete,
                               const Subvolume& complete,
                               const GradCheckOptions& options) {
  arch.validate();
  ParamsT<double> net;
  net.allocate(arch);
  if (!options.zero_init) net.random_init(options.init_seed);

  std::vector<double> eps(static_cast<std::size_t>(arch.latent_dim));
  Rng eps_rng(derive_seed(options.eps_seed, 0x657073ULL));  // "eps"
  for (auto& e : eps) e = eps_rng.normal();

  Workspace<double> ws;
  ws.allocate(arch);
  const auto terms = detail::net_forward(
      net, incomplete.cells.data(), complete.cells.data(), eps.data(),
      options.weights.w_r, options.weights.w_occ, ws);
  std::vector<double> analytic(net.data.size(), 0.0);
  detail::net_backward(net, incomplete.cells.data(), complete.cells.data(),
                       options.weights.w_r, options.weights.w_occ, terms, ws,
                       analytic.data());

  std::vector<std::size_t> indices(net.data.size());
  std::iota(indices.begin(), indices.end(), 0);
  if (options.max_params > 0 && options.max_params < indices.size()) {
    Rng pick(derive_seed(options.subset_seed, 0x7375627365ULL));
    pick.shuffle(indices);
    indices.resize(options.max_params);
  }

  GradCheckResult result;
  result.checked = indices.size();
  auto loss_at = [&](std::size_t i, double v) {
    const double saved = net.data[i];
    net.data[i] = v;
    const auto t = detail::net_forward(
        net, incomplete.cells.data(), complete.cells.data(), eps.data(),
        options.weights.w_r, options.weights.w_occ, ws);
    net.data[i] = saved;
    return t.delta;
  };
  for (std::size_t i : indices) {
    const double x = net.data[i];
    const double fd =
        (loss_at(i, x + options.h) - loss_at(i, x - options.h)) /
        (2.0 * options.h);
    const double abs_err = std::abs(analytic[i] - fd);
    const double rel =
        abs_err / std::max({std::abs(analytic[i]), std::abs(fd), 1e-8});
    result.max_abs_error = std::max(result.max_abs_error, abs_err);
    result.max_rel_error = std::max(result.max_rel_error, rel);
  }
  return result;
}

//=============================================================================
// SVLN model file
//=============================================================================

void save_net(const CompletionNet& net, const std::string& path) {
  const auto& a = net.arch();
  ByteWriter w(path);
  w.magic("SVLN");
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(a.side));
  w.u32(static_cast<std::uint32_t>(a.in_channels));
  w.u32(static_cast<std::uint32_t>(a.out_channels));
  for (int i = 0; i < 3; ++i) w.u32(static_cast<std::uint32_t>(a.widths[i]));
  w.u32(static_cast<std::uint32_t>(a.fc_width));
  w.u32(static_cast<std::uint32_t>(a.latent_dim));
  w.u64(net.param_count());
  for (float v : net.params()) w.f32(v);
  w.finish();
}

CompletionNet load_net(const std::string& path) {
  ByteReader r(path);
  r.expect_magic("SVLN");
  if (r.u32() != 1) raise(Status::kFormat, path + ": unsupported version");
  NetArchitecture a;
  a.side = static_cast<int>(r.u32());
  a.in_channels = static_cast<int>(r.u32());
  a.out_channels = static_cast<int>(r.u32());
  for (int i = 0; i < 3; ++i) a.widths[i] = static_cast<int>(r.u32());
  a.fc_width = static_cast<int>(r.u32());
  a.latent_dim = static_cast<int>(r.u32());
  a.validate();
  const std::uint64_t count = r.u64();
  CompletionNet net(a, 0);
  if (count != net.param_count()) {
    raise(Status::kFormat, path + ": parameter count does not match header");
  }
  for (auto& v : net.params()) {
    v = r.f32();
    if (!std::isfinite(v)) {
      raise(Status::kFormat, path + ": non-finite parameter");
    }
  }
  return net;
}

}  // namespace svloc
