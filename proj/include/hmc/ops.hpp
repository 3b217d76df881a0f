#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "hmc/tape.hpp"
#include "hmc/tensor.hpp"

namespace hmc {

namespace detail {

inline Tape& common_tape(Var a, Var b) {
  if (a.tape != b.tape || a.tape == nullptr) throw ContractError("operands recorded on different tapes");
  return *a.tape;
}

inline void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(what) + " expects a matrix, got " + to_string(t.shape()));
  }
}

// C (m x n) += A (m x k) * B (k x n)
inline void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                     std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C (m x k) += G (m x n) * B^T, with B (k x n)
inline void gemm_nt_acc(const double* g, const double* b, double* c, std::size_t m, std::size_t n,
                        std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* gi = g + i * n;
    double* ci = c + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* bp = b + p * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += gi[j] * bp[j];
      ci[p] += s;
    }
  }
}

// C (k x n) += A^T * G, with A (m x k), G (m x n)
inline void gemm_tn_acc(const double* a, const double* g, double* c, std::size_t m, std::size_t k,
                        std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* gi = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * gi[j];
    }
  }
}

inline double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

inline Var matmul(Var a, Var b) {
  Tape& tape = detail::common_tape(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  detail::require_matrix(A, "matmul");
  detail::require_matrix(B, "matmul");
  const std::size_t m = A.shape()[0], k = A.shape()[1], n = B.shape()[1];
  if (B.shape()[0] != k) {
    throw DimensionError("matmul shape mismatch: " + to_string(A.shape()) + " by " + to_string(B.shape()));
  }
  Tensor C({m, n});
  detail::gemm_acc(A.data().data(), B.data().data(), C.data().data(), m, k, n);
  return tape.record(std::move(C), {a, b}, [&A, &B, m, k, n](const Tensor& g, std::span<Tensor* const> in) {
    if (in[0]) detail::gemm_nt_acc(g.data().data(), B.data().data(), in[0]->data().data(), m, n, k);
    if (in[1]) detail::gemm_tn_acc(A.data().data(), g.data().data(), in[1]->data().data(), m, k, n);
  });
}

inline Var add(Var a, Var b) {
  Tape& tape = detail::common_tape(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.shape() != B.shape()) {
    throw DimensionError("add shape mismatch: " + to_string(A.shape()) + " vs " + to_string(B.shape()));
  }
  Tensor C = A;
  C += B;
  return tape.record(std::move(C), {a, b}, [](const Tensor& g, std::span<Tensor* const> in) {
    if (in[0]) *in[0] += g;
    if (in[1]) *in[1] += g;
  });
}

/// x (batch x n) + b (n), bias broadcast over rows.
inline Var add_bias(Var x, Var b) {
  Tape& tape = detail::common_tape(x, b);
  const Tensor& X = x.value();
  const Tensor& B = b.value();
  detail::require_matrix(X, "add_bias");
  const std::size_t rows = X.shape()[0], n = X.shape()[1];
  if (B.size() != n) {
    throw DimensionError("bias shape " + to_string(B.shape()) + " does not match " + to_string(X.shape()));
  }
  Tensor Y = X;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < n; ++j) Y[r * n + j] += B[j];
  }
  return tape.record(std::move(Y), {x, b}, [rows, n](const Tensor& g, std::span<Tensor* const> in) {
    if (in[0]) *in[0] += g;
    if (in[1]) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < n; ++j) (*in[1])[j] += g[r * n + j];
      }
    }
  });
}

inline Var relu(Var x) {
  const Tensor& X = x.value();
  Tensor Y = X;
  for (double& v : Y.storage()) v = v > 0.0 ? v : 0.0;
  return x.tape->record(std::move(Y), {x}, [&X](const Tensor& g, std::span<Tensor* const> in) {
    // subgradient at exactly 0 is 0
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (X[i] > 0.0) (*in[0])[i] += g[i];
    }
  });
}

inline Var sigmoid(Var x) {
  Tensor Y = x.value();
  for (double& v : Y.storage()) v = detail::stable_sigmoid(v);
  Tape& tape = *x.tape;
  const std::size_t out_id = tape.size();
  return tape.record(std::move(Y), {x}, [&tape, out_id](const Tensor& g, std::span<Tensor* const> in) {
    const Tensor& s = tape.value(out_id);
    for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i] * s[i] * (1.0 - s[i]);
  });
}

inline Var scale(Var x, double factor) {
  Tensor Y = x.value();
  for (double& v : Y.storage()) v *= factor;
  return x.tape->record(std::move(Y), {x}, [factor](const Tensor& g, std::span<Tensor* const> in) {
    for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += factor * g[i];
  });
}

/// Elementwise product with a constant tensor (dropout masks).
inline Var multiply_constant(Var x, Tensor mask) {
  const Tensor& X = x.value();
  if (mask.size() != X.size()) {
    throw DimensionError("mask shape " + to_string(mask.shape()) + " does not match " + to_string(X.shape()));
  }
  Tensor Y = X;
  for (std::size_t i = 0; i < Y.size(); ++i) Y[i] *= mask[i];
  return x.tape->record(std::move(Y), {x}, [mask = std::move(mask)](const Tensor& g, std::span<Tensor* const> in) {
    for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += mask[i] * g[i];
  });
}

/// Row-wise softmax; a rank-1 tensor is treated as a single row.
inline Var softmax(Var logits) {
  const Tensor& X = logits.value();
  Tensor Y = X;
  const std::size_t rows = X.rows(), n = X.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    auto row = Y.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (double& v : row) {
      v = std::exp(v - mx);
      total += v;
    }
    for (double& v : row) v /= total;
  }
  Tape& tape = *logits.tape;
  const std::size_t out_id = tape.size();
  return tape.record(std::move(Y), {logits}, [&tape, out_id, rows, n](const Tensor& g, std::span<Tensor* const> in) {
    const Tensor& p = tape.value(out_id);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * p[r * n + j];
      for (std::size_t j = 0; j < n; ++j) (*in[0])[r * n + j] += p[r * n + j] * (g[r * n + j] - dot);
    }
  });
}

inline Var sum(Var x) {
  const Tensor& X = x.value();
  double s = 0.0;
  for (double v : X.data()) s += v;
  return x.tape->record(Tensor::scalar(s), {x}, [](const Tensor& g, std::span<Tensor* const> in) {
    const double d = g[0];
    for (double& v : in[0]->storage()) v += d;
  });
}

inline Var sum_squares(Var x) {
  const Tensor& X = x.value();
  double s = 0.0;
  for (double v : X.data()) s += v * v;
  return x.tape->record(Tensor::scalar(s), {x}, [&X](const Tensor& g, std::span<Tensor* const> in) {
    const double d = 2.0 * g[0];
    for (std::size_t i = 0; i < X.size(); ++i) (*in[0])[i] += d * X[i];
  });
}

/// Sum of scalar nodes.
inline Var add_scalars(std::span<const Var> terms) {
  if (terms.empty()) throw ContractError("add_scalars needs at least one term");
  Var acc = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  return acc;
}

/// Geometry of a channels-first image batch flattened into rows.
struct ImageGeometry {
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;

  std::size_t size() const { return channels * height * width; }
};

/// 3x3 same-padded convolution, stride 1. x: batch x (C*H*W), weight: out_c x (C*9), bias: out_c.
inline Var conv3x3(Var x, Var weight, Var bias, ImageGeometry geo) {
  Tape& tape = detail::common_tape(x, weight);
  const Tensor& X = x.value();
  const Tensor& W = weight.value();
  const Tensor& B = bias.value();
  detail::require_matrix(X, "conv3x3");
  const std::size_t batch = X.shape()[0];
  const std::size_t C = geo.channels, H = geo.height, Wd = geo.width;
  if (X.shape()[1] != geo.size() || W.rank() != 2 || W.shape()[1] != C * 9) {
    throw DimensionError("conv3x3 shape mismatch: input " + to_string(X.shape()) + ", weight " +
                         to_string(W.shape()));
  }
  const std::size_t OC = W.shape()[0];
  if (B.size() != OC) throw DimensionError("conv3x3 bias shape " + to_string(B.shape()));
  Tensor Y({batch, OC * H * Wd});
  const std::size_t plane = H * Wd;
  for (std::size_t n = 0; n < batch; ++n) {
    const double* xin = X.data().data() + n * C * plane;
    double* yout = Y.data().data() + n * OC * plane;
    for (std::size_t o = 0; o < OC; ++o) {
      double* yo = yout + o * plane;
      for (std::size_t i = 0; i < plane; ++i) yo[i] = B[o];
      for (std::size_t c = 0; c < C; ++c) {
        const double* xc = xin + c * plane;
        for (int ky = 0; ky < 3; ++ky) {
          for (int kx = 0; kx < 3; ++kx) {
            const double w = W.at(o, c * 9 + ky * 3 + kx);
            for (std::size_t yy = 0; yy < H; ++yy) {
              const long sy = static_cast<long>(yy) + ky - 1;
              if (sy < 0 || sy >= static_cast<long>(H)) continue;
              for (std::size_t xx = 0; xx < Wd; ++xx) {
                const long sx = static_cast<long>(xx) + kx - 1;
                if (sx < 0 || sx >= static_cast<long>(Wd)) continue;
                yo[yy * Wd + xx] += w * xc[sy * Wd + sx];
              }
            }
          }
        }
      }
    }
  }
  return tape.record(std::move(Y), {x, weight, bias},
                     [&X, &W, batch, C, H, Wd, OC, plane](const Tensor& g, std::span<Tensor* const> in) {
    for (std::size_t n = 0; n < batch; ++n) {
      const double* xin = X.data().data() + n * C * plane;
      const double* gout = g.data().data() + n * OC * plane;
      for (std::size_t o = 0; o < OC; ++o) {
        const double* go = gout + o * plane;
        if (in[2]) {
          double s = 0.0;
          for (std::size_t i = 0; i < plane; ++i) s += go[i];
          (*in[2])[o] += s;
        }
        for (std::size_t c = 0; c < C; ++c) {
          const double* xc = xin + c * plane;
          double* gx = in[0] ? in[0]->data().data() + n * C * plane + c * plane : nullptr;
          for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
              const std::size_t widx = c * 9 + ky * 3 + kx;
              const double w = W.at(o, widx);
              double gw = 0.0;
              for (std::size_t yy = 0; yy < H; ++yy) {
                const long sy = static_cast<long>(yy) + ky - 1;
                if (sy < 0 || sy >= static_cast<long>(H)) continue;
                for (std::size_t xx = 0; xx < Wd; ++xx) {
                  const long sx = static_cast<long>(xx) + kx - 1;
                  if (sx < 0 || sx >= static_cast<long>(Wd)) continue;
                  const double gv = go[yy * Wd + xx];
                  gw += gv * xc[sy * Wd + sx];
                  if (gx) gx[sy * Wd + sx] += gv * w;
                }
              }
              if (in[1]) in[1]->at(o, widx) += gw;
            }
          }
        }
      }
    }
  });
}

/// 2x2 average pooling with stride 2; height and width must be even.
inline Var avg_pool2(Var x, ImageGeometry geo) {
  const Tensor& X = x.value();
  detail::require_matrix(X, "avg_pool2");
  if (X.shape()[1] != geo.size() || geo.height % 2 || geo.width % 2) {
    throw DimensionError("avg_pool2 shape mismatch: " + to_string(X.shape()));
  }
  const std::size_t batch = X.shape()[0], C = geo.channels, H = geo.height, W = geo.width;
  const std::size_t oh = H / 2, ow = W / 2;
  Tensor Y({batch, C * oh * ow});
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      const double* xc = X.data().data() + (n * C + c) * H * W;
      double* yc = Y.data().data() + (n * C + c) * oh * ow;
      for (std::size_t i = 0; i < oh; ++i) {
        for (std::size_t j = 0; j < ow; ++j) {
          yc[i * ow + j] = 0.25 * (xc[2 * i * W + 2 * j] + xc[2 * i * W + 2 * j + 1] +
                                   xc[(2 * i + 1) * W + 2 * j] + xc[(2 * i + 1) * W + 2 * j + 1]);
        }
      }
    }
  }
  return x.tape->record(std::move(Y), {x}, [batch, C, H, W, oh, ow](const Tensor& g, std::span<Tensor* const> in) {
    for (std::size_t n = 0; n < batch; ++n) {
      for (std::size_t c = 0; c < C; ++c) {
        double* gx = in[0]->data().data() + (n * C + c) * H * W;
        const double* gy = g.data().data() + (n * C + c) * oh * ow;
        for (std::size_t i = 0; i < oh; ++i) {
          for (std::size_t j = 0; j < ow; ++j) {
            const double v = 0.25 * gy[i * ow + j];
            gx[2 * i * W + 2 * j] += v;
            gx[2 * i * W + 2 * j + 1] += v;
            gx[(2 * i + 1) * W + 2 * j] += v;
            gx[(2 * i + 1) * W + 2 * j + 1] += v;
          }
        }
      }
    }
  });
}

}  // namespace hmc
