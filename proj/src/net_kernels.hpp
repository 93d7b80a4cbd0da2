#pragma once

// Dense 3D conv/pool/FC kernels for the completion network, templated on the
// scalar type: float for production, double for the finite-difference
// reference path. Activation layout is channel-major [C][Z][Y][X] with x
// contiguous; all loops are written so the x (or output-channel) loop
// vectorizes.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <vector>

#include "svloc/net.hpp"

namespace svloc::detail {

inline constexpr double kLogvarClamp = 20.0;

template <typename T>
inline T clamp_logvar(T v) {
  if (v < T(-kLogvarClamp)) return T(-kLogvarClamp);
  if (v > T(kLogvarClamp)) return T(kLogvarClamp);
  return v;
}

//=============================================================================
// Flat parameter block
//=============================================================================

struct ParamLayout {
  std::size_t conv1_w = 0, conv1_b = 0;
  std::size_t conv2_w = 0, conv2_b = 0;
  std::size_t conv3_w = 0, conv3_b = 0;
  std::size_t fc1_w = 0, fc1_b = 0;
  std::size_t mu_w = 0, mu_b = 0;
  std::size_t lv_w = 0, lv_b = 0;
  std::size_t dfc_w = 0, dfc_b = 0;
  std::size_t dconv1_w = 0, dconv1_b = 0;
  std::size_t dconv2_w = 0, dconv2_b = 0;
  std::size_t dconv3_w = 0, dconv3_b = 0;
  std::size_t out_w = 0, out_b = 0;
  std::size_t total = 0;

  static ParamLayout make(const NetArchitecture& a) {
    ParamLayout l;
    std::size_t off = 0;
    auto tensor = [&off](std::size_t n) {
      const std::size_t at = off;
      off += n;
      return at;
    };
    const std::size_t w0 = static_cast<std::size_t>(a.widths[0]);
    const std::size_t w1 = static_cast<std::size_t>(a.widths[1]);
    const std::size_t w2 = static_cast<std::size_t>(a.widths[2]);
    const std::size_t cin = static_cast<std::size_t>(a.in_channels);
    const std::size_t cout = static_cast<std::size_t>(a.out_channels);
    const std::size_t fc = static_cast<std::size_t>(a.fc_width);
    const std::size_t n = static_cast<std::size_t>(a.latent_dim);
    const std::size_t flat = static_cast<std::size_t>(a.flat_size());
    l.conv1_w = tensor(27 * cin * w0);  // [k][ic][oc]
    l.conv1_b = tensor(w0);
    l.conv2_w = tensor(w1 * w0 * 27);   // [oc][ic][k]
    l.conv2_b = tensor(w1);
    l.conv3_w = tensor(w2 * w1 * 27);
    l.conv3_b = tensor(w2);
    l.fc1_w = tensor(fc * flat);        // [out][in]
    l.fc1_b = tensor(fc);
    l.mu_w = tensor(n * fc);
    l.mu_b = tensor(n);
    l.lv_w = tensor(n * fc);
    l.lv_b = tensor(n);
    l.dfc_w = tensor(flat * n);
    l.dfc_b = tensor(flat);
    l.dconv1_w = tensor(w1 * w2 * 27);
    l.dconv1_b = tensor(w1);
    l.dconv2_w = tensor(w0 * w1 * 27);
    l.dconv2_b = tensor(w0);
    l.dconv3_w = tensor(w0 * w0 * 27);
    l.dconv3_b = tensor(w0);
    l.out_w = tensor(cout * w0);        // 1x1x1
    l.out_b = tensor(cout);
    l.total = off;
    return l;
  }
};

template <typename T>
struct ParamsT {
  NetArchitecture arch;
  ParamLayout layout;
  std::vector<T> data;

  void allocate(const NetArchitecture& a) {
    arch = a;
    layout = ParamLayout::make(a);
    data.assign(layout.total, T(0));
  }

  // He-style init on conv/fc weights, zero biases.
  void random_init(std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0x6e6574ULL));  // "net"
    auto fill = [&](std::size_t off, std::size_t n, std::size_t fan_in) {
      const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (std::size_t i = 0; i < n; ++i) {
        data[off + i] = static_cast<T>(rng.normal() * scale);
      }
    };
    const auto& a = arch;
    const auto& l = layout;
    fill(l.conv1_w, 27u * a.in_channels * a.widths[0], 27u * a.in_channels);
    fill(l.conv2_w, 27u * a.widths[0] * a.widths[1], 27u * a.widths[0]);
    fill(l.conv3_w, 27u * a.widths[1] * a.widths[2], 27u * a.widths[1]);
    fill(l.fc1_w, static_cast<std::size_t>(a.fc_width) * a.flat_size(),
         static_cast<std::size_t>(a.flat_size()));
    fill(l.mu_w, static_cast<std::size_t>(a.latent_dim) * a.fc_width,
         static_cast<std::size_t>(a.fc_width));
    fill(l.lv_w, static_cast<std::size_t>(a.latent_dim) * a.fc_width,
         static_cast<std::size_t>(a.fc_width));
    fill(l.dfc_w, static_cast<std::size_t>(a.flat_size()) * a.latent_dim,
         static_cast<std::size_t>(a.latent_dim));
    fill(l.dconv1_w, 27u * a.widths[2] * a.widths[1], 27u * a.widths[2]);
    fill(l.dconv2_w, 27u * a.widths[1] * a.widths[0], 27u * a.widths[1]);
    fill(l.dconv3_w, 27u * a.widths[0] * a.widths[0], 27u * a.widths[0]);
    fill(l.out_w, static_cast<std::size_t>(a.out_channels) * a.widths[0],
         static_cast<std::size_t>(a.widths[0]));
  }

  const T* at(std::size_t off) const { return data.data() + off; }
  T* at(std::size_t off) { return data.data() + off; }
};

//=============================================================================
// Kernels
//=============================================================================

// One-hot first conv: input is a state grid, so per output voxel we gather
// the active input channel of each of the 27 taps. Weights are [k][ic][oc]
// with oc contiguous.
template <typename T>
void onehot_conv_forward(const std::uint8_t* states, int d, const T* w,
                         const T* b, int cin, int cout, T* out) {
  const std::size_t vol = static_cast<std::size_t>(d) * d * d;
  for (int oc = 0; oc < cout; ++oc) {
    T* plane = out + static_cast<std::size_t>(oc) * vol;
    for (std::size_t i = 0; i < vol; ++i) plane[i] = b[oc];
  }
  std::vector<T> acc(static_cast<std::size_t>(cout));
  std::size_t p = 0;
  for (int z = 0; z < d; ++z) {
    for (int y = 0; y < d; ++y) {
      for (int x = 0; x < d; ++x, ++p) {
        for (int oc = 0; oc < cout; ++oc) acc[oc] = T(0);
        int k = 0;
        for (int dz = -1; dz <= 1; ++dz) {
          const int sz = z + dz;
          for (int dy = -1; dy <= 1; ++dy) {
            const int sy = y + dy;
            for (int dx = -1; dx <= 1; ++dx, ++k) {
              const int sx = x + dx;
              if (sx < 0 || sy < 0 || sz < 0 || sx >= d || sy >= d || sz >= d) {
                continue;  // zero padding
              }
              const int s = states[(static_cast<std::size_t>(sz) * d + sy) * d + sx];
              const T* wrow =
                  w + (static_cast<std::size_t>(k) * cin + s) * cout;
              for (int oc = 0; oc < cout; ++oc) acc[oc] += wrow[oc];
            }
          }
        }
        for (int oc = 0; oc < cout; ++oc) {
          out[static_cast<std::size_t>(oc) * vol + p] += acc[oc];
        }
      }
    }
  }
}

// Weight/bias gradients of the one-hot conv (no input gradient needed).
template <typename T>
void onehot_conv_backward(const std::uint8_t* states, int d, const T* dout,
                          int cin, int cout, T* dw, T* db) {
  const std::size_t vol = static_cast<std::size_t>(d) * d * d;
  std::vector<T> g(static_cast<std::size_t>(cout));
  std::size_t p = 0;
  for (int z = 0; z < d; ++z) {
    for (int y = 0; y < d; ++y) {
      for (int x = 0; x < d; ++x, ++p) {
        for (int oc = 0; oc < cout; ++oc) {
          g[oc] = dout[static_cast<std::size_t>(oc) * vol + p];
          db[oc] += g[oc];
        }
        int k = 0;
        for (int dz = -1; dz <= 1; ++dz) {
          const int sz = z + dz;
          for (int dy = -1; dy <= 1; ++dy) {
            const int sy = y + dy;
            for (int dx = -1; dx <= 1; ++dx, ++k) {
              const int sx = x + dx;
              if (sx < 0 || sy < 0 || sz < 0 || sx >= d || sy >= d || sz >= d) {
                continue;
              }
              const int s = states[(static_cast<std::size_t>(sz) * d + sy) * d + sx];
              T* wrow = dw + (static_cast<std::size_t>(k) * cin + s) * cout;
              for (int oc = 0; oc < cout; ++oc) wrow[oc] += g[oc];
            }
          }
        }
      }
    }
  }
}

// General 3x3x3 zero-padded conv, shift-and-add over contiguous x rows.
// Weights [oc][ic][k], k = ((dz+1)*3 + dy+1)*3 + dx+1.
template <typename T>
void conv_forward(const T* in, int d, int cin, const T* w, const T* b,
                  int cout, T* out) {
  const std::size_t vol = static_cast<std::size_t>(d) * d * d;
  for (int oc = 0; oc < cout; ++oc) {
    T* oplane = out + static_cast<std::size_t>(oc) * vol;
    for (std::size_t i = 0; i < vol; ++i) oplane[i] = b[oc];
    for (int ic = 0; ic < cin; ++ic) {
      const T* iplane = in + static_cast<std::size_t>(ic) * vol;
      const T* wk = w + (static_cast<std::size_t>(oc) * cin + ic) * 27;
      int k = 0;
      for (int dz = -1; dz <= 1; ++dz) {
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx, ++k) {
            const T wv = wk[k];
            if (wv == T(0)) continue;
            const int x0 = dx < 0 ? 1 : 0;
            const int x1 = dx > 0 ? d - 1 : d;
            for (int z = std::max(0, -dz); z < d - std::max(0, dz); ++z) {
              for (int y = std::max(0, -dy); y < d - std::max(0, dy); ++y) {
                T* orow = oplane + (static_cast<std::size_t>(z) * d + y) * d;
                const T* irow =
                    iplane +
                    (static_cast<std::size_t>(z + dz) * d + (y + dy)) * d + dx;
                for (int x = x0; x < x1; ++x) orow[x] += wv * irow[x];
              }
            }
          }
        }
      }
    }
  }
}

// din += conv_transpose(dout); dw += outer(dout, in); db += sum(dout).
template <typename T>
void conv_backward(const T* in, const T* dout, int d, int cin, const T* w,
                   int cout, T* dw, T* db, T* din) {
  const std::size_t vol = static_cast<std::size_t>(d) * d * d;
  for (int oc = 0; oc < cout; ++oc) {
    const T* gplane = dout + static_cast<std::size_t>(oc) * vol;
    T acc = T(0);
    for (std::size_t i = 0; i < vol; ++i) acc += gplane[i];
    db[oc] += acc;
    for (int ic = 0; ic < cin; ++ic) {
      const T* iplane = in + static_cast<std::size_t>(ic) * vol;
      T* dplane = din ? din + static_cast<std::size_t>(ic) * vol : nullptr;
      const T* wk = w + (static_cast<std::size_t>(oc) * cin + ic) * 27;
      T* dwk = dw + (static_cast<std::size_t>(oc) * cin + ic) * 27;
      int k = 0;
      for (int dz = -1; dz <= 1; ++dz) {
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx, ++k) {
            const int x0 = dx < 0 ? 1 : 0;
            const int x1 = dx > 0 ? d - 1 : d;
            T wgrad = T(0);
            const T wv = wk[k];
            for (int z = std::max(0, -dz); z < d - std::max(0, dz); ++z) {
              for (int y = std::max(0, -dy); y < d - std::max(0, dy); ++y) {
                const T* grow =
                    gplane + (static_cast<std::size_t>(z) * d + y) * d;
                const std::size_t ioff =
                    (static_cast<std::size_t>(z + dz) * d + (y + dy)) * d + dx;
                const T* irow = iplane + ioff;
                for (int x = x0; x < x1; ++x) wgrad += grow[x] * irow[x];
                if (dplane) {
                  T* drow = dplane + ioff;
                  for (int x = x0; x < x1; ++x) drow[x] += wv * grow[x];
                }
              }
            }
            dwk[k] += wgrad;
          }
        }
      }
    }
  }
}

template <typename T>
void relu_forward(T* a, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    if (a[i] < T(0)) a[i] = T(0);
  }
}

template <typename T>
void relu_backward(const T* act, T* grad, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    if (act[i] <= T(0)) grad[i] = T(0);
  }
}

template <typename T>
void maxpool_forward(const T* in, int d, int c, T* out, std::uint8_t* argmax) {
  const int h = d / 2;
  const std::size_t ivol = static_cast<std::size_t>(d) * d * d;
  const std::size_t ovol = static_cast<std::size_t>(h) * h * h;
  for (int ch = 0; ch < c; ++ch) {
    const T* ip = in + static_cast<std::size_t>(ch) * ivol;
    T* op = out + static_cast<std::size_t>(ch) * ovol;
    std::uint8_t* ap = argmax + static_cast<std::size_t>(ch) * ovol;
    std::size_t o = 0;
    for (int z = 0; z < h; ++z) {
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < h; ++x, ++o) {
          T best{};
          std::uint8_t bi = 0;
          bool first = true;
          for (int dz = 0; dz < 2; ++dz) {
            for (int dy = 0; dy < 2; ++dy) {
              for (int dx = 0; dx < 2; ++dx) {
                const T v = ip[(static_cast<std::size_t>(2 * z + dz) * d +
                                (2 * y + dy)) * d + (2 * x + dx)];
                if (first || v > best) {
                  best = v;
                  bi = static_cast<std::uint8_t>((dz * 2 + dy) * 2 + dx);
                  first = false;
                }
              }
            }
          }
          op[o] = best;
          ap[o] = bi;
        }
      }
    }
  }
}

template <typename T>
void maxpool_backward(const T* dout, const std::uint8_t* argmax, int d, int c,
                      T* din) {
  const int h = d / 2;
  const std::size_t ivol = static_cast<std::size_t>(d) * d * d;
  const std::size_t ovol = static_cast<std::size_t>(h) * h * h;
  std::memset(din, 0, sizeof(T) * ivol * static_cast<std::size_t>(c));
  for (int ch = 0; ch < c; ++ch) {
    const T* gp = dout + static_cast<std::size_t>(ch) * ovol;
    const std::uint8_t* ap = argmax + static_cast<std::size_t>(ch) * ovol;
    T* dp = din + static_cast<std::size_t>(ch) * ivol;
    std::size_t o = 0;
    for (int z = 0; z < h; ++z) {
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < h; ++x, ++o) {
          const int b = ap[o];
          const int dz = b >> 2, dy = (b >> 1) & 1, dx = b & 1;
          dp[(static_cast<std::size_t>(2 * z + dz) * d + (2 * y + dy)) * d +
             (2 * x + dx)] += gp[o];
        }
      }
    }
  }
}

// Nearest-repeat 2x upsampling.
template <typename T>
void upsample_forward(const T* in, int d, int c, T* out) {
  const int o = d * 2;
  const std::size_t ivol = static_cast<std::size_t>(d) * d * d;
  const std::size_t ovol = static_cast<std::size_t>(o) * o * o;
  for (int ch = 0; ch < c; ++ch) {
    const T* ip = in + static_cast<std::size_t>(ch) * ivol;
    T* op = out + static_cast<std::size_t>(ch) * ovol;
    for (int z = 0; z < o; ++z) {
      for (int y = 0; y < o; ++y) {
        const T* irow =
            ip + (static_cast<std::size_t>(z / 2) * d + (y / 2)) * d;
        T* orow = op + (static_cast<std::size_t>(z) * o + y) * o;
        for (int x = 0; x < o; ++x) orow[x] = irow[x / 2];
      }
    }
  }
}

template <typename T>
void upsample_backward(const T* dout, int d, int c, T* din) {
  const int o = d * 2;
  const std::size_t ivol = static_cast<std::size_t>(d) * d * d;
  const std::size_t ovol = static_cast<std::size_t>(o) * o * o;
  std::memset(din, 0, sizeof(T) * ivol * static_cast<std::size_t>(c));
  for (int ch = 0; ch < c; ++ch) {
    const T* gp = dout + static_cast<std::size_t>(ch) * ovol;
    T* dp = din + static_cast<std::size_t>(ch) * ivol;
    for (int z = 0; z < o; ++z) {
      for (int y = 0; y < o; ++y) {
        const T* grow = gp + (static_cast<std::size_t>(z) * o + y) * o;
        T* drow = dp + (static_cast<std::size_t>(z / 2) * d + (y / 2)) * d;
        for (int x = 0; x < o; ++x) drow[x / 2] += grow[x];
      }
    }
  }
}

template <typename T>
void fc_forward(const T* in, int n_in, const T* w, const T* b, int n_out,
                T* out) {
  for (int o = 0; o < n_out; ++o) {
    const T* row = w + static_cast<std::size_t>(o) * n_in;
    T acc = b[o];
    for (int i = 0; i < n_in; ++i) acc += row[i] * in[i];
    out[o] = acc;
  }
}

template <typename T>
void fc_backward(const T* in, const T* dout, int n_in, const T* w, int n_out,
                 T* dw, T* db, T* din) {
  if (din) {
    for (int i = 0; i < n_in; ++i) din[i] = T(0);
  }
  for (int o = 0; o < n_out; ++o) {
    const T g = dout[o];
    db[o] += g;
    const T* row = w + static_cast<std::size_t>(o) * n_in;
    T* drow = dw + static_cast<std::size_t>(o) * n_in;
    for (int i = 0; i < n_in; ++i) drow[i] += g * in[i];
    if (din) {
      for (int i = 0; i < n_in; ++i) din[i] += g * row[i];
    }
  }
}

template <typename T>
void tanh_forward(T* a, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) a[i] = std::tanh(a[i]);
}

template <typename T>
void tanh_backward(const T* act, T* grad, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) grad[i] *= (T(1) - act[i] * act[i]);
}

// Per-cell softmax over channel-major logits [C][vol].
template <typename T>
void softmax_cells(const T* logits, std::size_t vol, int c, T* probs) {
  for (std::size_t p = 0; p < vol; ++p) {
    T m = logits[p];
    for (int ch = 1; ch < c; ++ch) {
      m = std::max(m, logits[static_cast<std::size_t>(ch) * vol + p]);
    }
    T sum = T(0);
    for (int ch = 0; ch < c; ++ch) {
      const T e = std::exp(logits[static_cast<std::size_t>(ch) * vol + p] - m);
      probs[static_cast<std::size_t>(ch) * vol + p] = e;
      sum += e;
    }
    const T inv = T(1) / sum;
    for (int ch = 0; ch < c; ++ch) {
      probs[static_cast<std::size_t>(ch) * vol + p] *= inv;
    }
  }
}

//=============================================================================
// Whole-network forward/backward
//=============================================================================

template <typename T>
struct Workspace {
  // encoder
  std::vector<T> a1, p1, a2, p2, a3, p3;
  std::vector<std::uint8_t> m1, m2, m3;
  std::vector<T> fc1, mu, logvar, z, eps;
  // decoder
  std::vector<T> dfc, u1, c1, u2, c2, u3, c3, logits, probs;
  // gradient scratch (mirrors activations)
  std::vector<T> g_big0, g_big1;

  void allocate(const NetArchitecture& a) {
    const std::size_t v3 = static_cast<std::size_t>(a.side) * a.side * a.side;
    const std::size_t v3h = v3 / 8, v3q = v3 / 64, v3e = v3 / 512;
    const std::size_t w0 = static_cast<std::size_t>(a.widths[0]);
    const std::size_t w1 = static_cast<std::size_t>(a.widths[1]);
    const std::size_t w2 = static_cast<std::size_t>(a.widths[2]);
    a1.resize(w0 * v3);
    m1.resize(w0 * v3h);
    p1.resize(w0 * v3h);
    a2.resize(w1 * v3h);
    m2.resize(w1 * v3q);
    p2.resize(w1 * v3q);
    a3.resize(w2 * v3q);
    m3.resize(w2 * v3e);
    p3.resize(w2 * v3e);
    fc1.resize(static_cast<std::size_t>(a.fc_width));
    mu.resize(static_cast<std::size_t>(a.latent_dim));
    logvar.resize(static_cast<std::size_t>(a.latent_dim));
    z.resize(static_cast<std::size_t>(a.latent_dim));
    eps.resize(static_cast<std::size_t>(a.latent_dim));
    dfc.resize(w2 * v3e);
    u1.resize(w2 * v3q);
    c1.resize(w1 * v3q);
    u2.resize(w1 * v3h);
    c2.resize(w0 * v3h);
    u3.resize(w0 * v3);
    c3.resize(w0 * v3);
    logits.resize(static_cast<std::size_t>(a.out_channels) * v3);
    probs.resize(static_cast<std::size_t>(a.out_channels) * v3);
    const std::size_t biggest =
        std::max({w0 * v3, static_cast<std::size_t>(a.out_channels) * v3,
                  w1 * v3h, w2 * v3q});
    g_big0.resize(biggest);
    g_big1.resize(biggest);
  }
};

// Encoder only: states -> (mu, logvar) in ws.
template <typename T>
void encoder_forward(const ParamsT<T>& net, const std::uint8_t* states,
                     Workspace<T>& ws) {
  const auto& a = net.arch;
  const auto& l = net.layout;
  const int d0 = a.side, d1 = d0 / 2, d2 = d1 / 2;
  onehot_conv_forward(states, d0, net.at(l.conv1_w), net.at(l.conv1_b),
                      a.in_channels, a.widths[0], ws.a1.data());
  relu_forward(ws.a1.data(), ws.a1.size());
  maxpool_forward(ws.a1.data(), d0, a.widths[0], ws.p1.data(), ws.m1.data());
  conv_forward(ws.p1.data(), d1, a.widths[0], net.at(l.conv2_w),
               net.at(l.conv2_b), a.widths[1], ws.a2.data());
  relu_forward(ws.a2.data(), ws.a2.size());
  maxpool_forward(ws.a2.data(), d1, a.widths[1], ws.p2.data(), ws.m2.data());
  conv_forward(ws.p2.data(), d2, a.widths[1], net.at(l.conv3_w),
               net.at(l.conv3_b), a.widths[2], ws.a3.data());
  relu_forward(ws.a3.data(), ws.a3.size());
  maxpool_forward(ws.a3.data(), d2, a.widths[2], ws.p3.data(), ws.m3.data());
  fc_forward(ws.p3.data(), a.flat_size(), net.at(l.fc1_w), net.at(l.fc1_b),
             a.fc_width, ws.fc1.data());
  tanh_forward(ws.fc1.data(), ws.fc1.size());
  fc_forward(ws.fc1.data(), a.fc_width, net.at(l.mu_w), net.at(l.mu_b),
             a.latent_dim, ws.mu.data());
  fc_forward(ws.fc1.data(), a.fc_width, net.at(l.lv_w), net.at(l.lv_b),
             a.latent_dim, ws.logvar.data());
}

// Decoder only: ws.z -> ws.probs.
template <typename T>
void decoder_forward(const ParamsT<T>& net, Workspace<T>& ws) {
  const auto& a = net.arch;
  const auto& l = net.layout;
  const int dc = a.coarse_side();
  const std::size_t v3 = static_cast<std::size_t>(a.side) * a.side * a.side;
  fc_forward(ws.z.data(), a.latent_dim, net.at(l.dfc_w), net.at(l.dfc_b),
             a.flat_size(), ws.dfc.data());
  tanh_forward(ws.dfc.data(), ws.dfc.size());
  upsample_forward(ws.dfc.data(), dc, a.widths[2], ws.u1.data());
  conv_forward(ws.u1.data(), dc * 2, a.widths[2], net.at(l.dconv1_w),
               net.at(l.dconv1_b), a.widths[1], ws.c1.data());
  relu_forward(ws.c1.data(), ws.c1.size());
  upsample_forward(ws.c1.data(), dc * 2, a.widths[1], ws.u2.data());
  conv_forward(ws.u2.data(), dc * 4, a.widths[1], net.at(l.dconv2_w),
               net.at(l.dconv2_b), a.widths[0], ws.c2.data());
  relu_forward(ws.c2.data(), ws.c2.size());
  upsample_forward(ws.c2.data(), dc * 4, a.widths[0], ws.u3.data());
  conv_forward(ws.u3.data(), a.side, a.widths[0], net.at(l.dconv3_w),
               net.at(l.dconv3_b), a.widths[0], ws.c3.data());
  relu_forward(ws.c3.data(), ws.c3.size());
  // 1x1x1 projection to class logits
  for (int oc = 0; oc < a.out_channels; ++oc) {
    T* orow = ws.logits.data() + static_cast<std::size_t>(oc) * v3;
    const T* wrow = net.at(l.out_w) + static_cast<std::size_t>(oc) * a.widths[0];
    const T bias = net.at(l.out_b)[oc];
    for (std::size_t p = 0; p < v3; ++p) orow[p] = bias;
    for (int ic = 0; ic < a.widths[0]; ++ic) {
      const T wv = wrow[ic];
      const T* irow = ws.c3.data() + static_cast<std::size_t>(ic) * v3;
      for (std::size_t p = 0; p < v3; ++p) orow[p] += wv * irow[p];
    }
  }
  softmax_cells(ws.logits.data(), v3, a.out_channels, ws.probs.data());
}

struct LossTermsT {
  double delta = 0, delta_r = 0, delta_kl = 0;
  double weight_sum = 0;
  bool all_unobserved = false;
};

// Reconstruction loss on the softmax output: weighted mean over supervised
// (non-unobserved) target cells; occupied targets weighted w_occ.
template <typename T>
LossTermsT loss_forward(const T* probs, std::size_t vol, int c_out,
                        const std::uint8_t* target, const T* mu,
                        const T* logvar, int n, double w_r, double w_occ) {
  double sum_w = 0, sum_ce = 0;
  for (std::size_t p = 0; p < vol; ++p) {
    const std::uint8_t s = target[p];
    if (s == 0) continue;  // unobserved target: no supervision
    const int cls = s - 1;
    const double w = s >= 2 ? w_occ : 1.0;
    const double pr = std::max(
        static_cast<double>(probs[static_cast<std::size_t>(cls) * vol + p]),
        1e-12);
    sum_ce += w * -std::log(pr);
    sum_w += w;
  }
  LossTermsT t;
  t.weight_sum = sum_w;
  t.all_unobserved = sum_w == 0;
  t.delta_r = t.all_unobserved ? 0.0 : sum_ce / sum_w;
  double kl = 0;
  for (int i = 0; i < n; ++i) {
    const double m = static_cast<double>(mu[i]);
    const double lv = static_cast<double>(clamp_logvar(logvar[i]));
    kl += 0.5 * (m * m + std::exp(lv) - 1.0 - lv);
  }
  t.delta_kl = kl;
  t.delta = w_r * t.delta_r + t.delta_kl;
  return t;
}

// Gradient of w_r * delta_r wrt logits, written into dlogits.
template <typename T>
void loss_backward_logits(const T* probs, std::size_t vol, int c_out,
                          const std::uint8_t* target, double w_r,
                          double w_occ, double weight_sum, T* dlogits) {
  std::memset(dlogits, 0, sizeof(T) * vol * static_cast<std::size_t>(c_out));
  if (weight_sum == 0) return;
  for (std::size_t p = 0; p < vol; ++p) {
    const std::uint8_t s = target[p];
    if (s == 0) continue;
    const int cls = s - 1;
    const double w = (s >= 2 ? w_occ : 1.0) * w_r / weight_sum;
    for (int ch = 0; ch < c_out; ++ch) {
      const std::size_t i = static_cast<std::size_t>(ch) * vol + p;
      const double y = ch == cls ? 1.0 : 0.0;
      dlogits[i] = static_cast<T>(w * (static_cast<double>(probs[i]) - y));
    }
  }
}

// Full forward with explicit reparameterization noise; returns loss terms.
template <typename T>
LossTermsT net_forward(const ParamsT<T>& net, const std::uint8_t* in_states,
                       const std::uint8_t* target, const T* eps,
                       double w_r, double w_occ, Workspace<T>& ws) {
  const auto& a = net.arch;
  encoder_forward(net, in_states, ws);
  for (int i = 0; i < a.latent_dim; ++i) {
    ws.eps[i] = eps[i];
    const T lv = clamp_logvar(ws.logvar[i]);
    ws.z[i] = ws.mu[i] + std::exp(lv / T(2)) * eps[i];
  }
  decoder_forward(net, ws);
  const std::size_t v3 = static_cast<std::size_t>(a.side) * a.side * a.side;
  return loss_forward(ws.probs.data(), v3, a.out_channels, target,
                      ws.mu.data(), ws.logvar.data(), a.latent_dim, w_r,
                      w_occ);
}

// Accumulates d(delta)/d(params) into grad (same layout as params).
template <typename T>
void net_backward(const ParamsT<T>& net, const std::uint8_t* in_states,
                  const std::uint8_t* target, double w_r, double w_occ,
                  const LossTermsT& terms, Workspace<T>& ws, T* grad) {
  const auto& a = net.arch;
  const auto& l = net.layout;
  const int dc = a.coarse_side();
  const std::size_t v3 = static_cast<std::size_t>(a.side) * a.side * a.side;

  // ---- decoder ----
  T* g0 = ws.g_big0.data();
  T* g1 = ws.g_big1.data();
  loss_backward_logits(ws.probs.data(), v3, a.out_channels, target, w_r,
                       w_occ, terms.weight_sum, g0);  // g0 = dlogits
  // 1x1x1 projection backward
  {
    T* dc3 = g1;
    std::memset(dc3, 0, sizeof(T) * static_cast<std::size_t>(a.widths[0]) * v3);
    for (int oc = 0; oc < a.out_channels; ++oc) {
      const T* grow = g0 + static_cast<std::size_t>(oc) * v3;
      T acc = T(0);
      for (std::size_t p = 0; p < v3; ++p) acc += grow[p];
      grad[l.out_b + static_cast<std::size_t>(oc)] += acc;
      const T* wrow =
          net.at(l.out_w) + static_cast<std::size_t>(oc) * a.widths[0];
      T* dwrow = grad + l.out_w + static_cast<std::size_t>(oc) * a.widths[0];
      for (int ic = 0; ic < a.widths[0]; ++ic) {
        const T* irow = ws.c3.data() + static_cast<std::size_t>(ic) * v3;
        T* drow = dc3 + static_cast<std::size_t>(ic) * v3;
        T wgrad = T(0);
        const T wv = wrow[ic];
        for (std::size_t p = 0; p < v3; ++p) {
          wgrad += grow[p] * irow[p];
          drow[p] += wv * grow[p];
        }
        dwrow[ic] += wgrad;
      }
    }
  }
  // dconv3 (g1 = dc3 post-relu grad)
  relu_backward(ws.c3.data(), g1, static_cast<std::size_t>(a.widths[0]) * v3);
  std::memset(g0, 0, sizeof(T) * static_cast<std::size_t>(a.widths[0]) * v3);
  conv_backward(ws.u3.data(), g1, a.side, a.widths[0], net.at(l.dconv3_w),
                a.widths[0], grad + l.dconv3_w, grad + l.dconv3_b, g0);
  upsample_backward(g0, dc * 4, a.widths[0], g1);  // g1 = dc2
  relu_backward(ws.c2.data(), g1,
                static_cast<std::size_t>(a.widths[0]) * (v3 / 8));
  std::memset(g0, 0, sizeof(T) * static_cast<std::size_t>(a.widths[1]) * (v3 / 8));
  conv_backward(ws.u2.data(), g1, dc * 4, a.widths[1], net.at(l.dconv2_w),
                a.widths[0], grad + l.dconv2_w, grad + l.dconv2_b, g0);
  upsample_backward(g0, dc * 2, a.widths[1], g1);  // g1 = dc1
  relu_backward(ws.c1.data(), g1,
                static_cast<std::size_t>(a.widths[1]) * (v3 / 64));
  std::memset(g0, 0, sizeof(T) * static_cast<std::size_t>(a.widths[2]) * (v3 / 64));
  conv_backward(ws.u1.data(), g1, dc * 2, a.widths[2], net.at(l.dconv1_w),
                a.widths[1], grad + l.dconv1_w, grad + l.dconv1_b, g0);
  upsample_backward(g0, dc, a.widths[2], g1);  // g1 = d(dfc post-tanh)
  tanh_backward(ws.dfc.data(), g1, static_cast<std::size_t>(a.flat_size()));
  std::vector<T> dz(static_cast<std::size_t>(a.latent_dim));
  fc_backward(ws.z.data(), g1, a.latent_dim, net.at(l.dfc_w), a.flat_size(),
              grad + l.dfc_w, grad + l.dfc_b, dz.data());

  // ---- reparameterization + KL ----
  std::vector<T> dmu(static_cast<std::size_t>(a.latent_dim));
  std::vector<T> dlv(static_cast<std::size_t>(a.latent_dim));
  for (int i = 0; i < a.latent_dim; ++i) {
    const T lv_raw = ws.logvar[i];
    const T lv = clamp_logvar(lv_raw);
    const bool inside = lv_raw > T(-kLogvarClamp) && lv_raw < T(kLogvarClamp);
    dmu[i] = dz[i] + ws.mu[i];  // KL term: d(0.5*mu^2)/dmu = mu
    const T dkl_dlv = T(0.5) * (std::exp(lv) - T(1));
    const T dz_dlv = dz[i] * ws.eps[i] * std::exp(lv / T(2)) * T(0.5);
    dlv[i] = inside ? dkl_dlv + dz_dlv : T(0);
  }

  // ---- encoder ----
  std::vector<T> dfc1(static_cast<std::size_t>(a.fc_width), T(0));
  std::vector<T> tmp(static_cast<std::size_t>(a.fc_width));
  fc_backward(ws.fc1.data(), dmu.data(), a.fc_width, net.at(l.mu_w),
              a.latent_dim, grad + l.mu_w, grad + l.mu_b, tmp.data());
  for (int i = 0; i < a.fc_width; ++i) dfc1[i] += tmp[i];
  fc_backward(ws.fc1.data(), dlv.data(), a.fc_width, net.at(l.lv_w),
              a.latent_dim, grad + l.lv_w, grad + l.lv_b, tmp.data());
  for (int i = 0; i < a.fc_width; ++i) dfc1[i] += tmp[i];
  tanh_backward(ws.fc1.data(), dfc1.data(), dfc1.size());
  // g1 = d(p3)
  fc_backward(ws.p3.data(), dfc1.data(), a.flat_size(), net.at(l.fc1_w),
              a.fc_width, grad + l.fc1_w, grad + l.fc1_b, g1);
  maxpool_backward(g1, ws.m3.data(), a.side / 4, a.widths[2], g0);  // g0 = da3
  relu_backward(ws.a3.data(), g0,
                static_cast<std::size_t>(a.widths[2]) * (v3 / 64));
  std::memset(g1, 0, sizeof(T) * static_cast<std::size_t>(a.widths[1]) * (v3 / 64));
  conv_backward(ws.p2.data(), g0, a.side / 4, a.widths[1], net.at(l.conv3_w),
                a.widths[2], grad + l.conv3_w, grad + l.conv3_b, g1);
  maxpool_backward(g1, ws.m2.data(), a.side / 2, a.widths[1], g0);  // g0 = da2
  relu_backward(ws.a2.data(), g0,
                static_cast<std::size_t>(a.widths[1]) * (v3 / 8));
  std::memset(g1, 0, sizeof(T) * static_cast<std::size_t>(a.widths[0]) * (v3 / 8));
  conv_backward(ws.p1.data(), g0, a.side / 2, a.widths[0], net.at(l.conv2_w),
                a.widths[1], grad + l.conv2_w, grad + l.conv2_b, g1);
  maxpool_backward(g1, ws.m1.data(), a.side, a.widths[0], g0);  // g0 = da1
  relu_backward(ws.a1.data(), g0, static_cast<std::size_t>(a.widths[0]) * v3);
  onehot_conv_backward(in_states, a.side, g0, a.in_channels, a.widths[0],
                       grad + l.conv1_w, grad + l.conv1_b);
}

}  // namespace svloc::detail
