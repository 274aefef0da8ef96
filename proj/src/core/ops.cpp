// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#include "moeup/core/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "moeup/core/error.hpp"

namespace moeup {
namespace {

thread_local std::uint64_t t_mac_count = 0;

// c(m x n) += a(m x k) * b(n x k)^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n) {
  t_mac_count += static_cast<std::uint64_t>(m) * k * n;
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] += acc;
    }
  }
}

// c(m x n) += a(k x m)^T * b(k x n)
void gemm_tn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n) {
  t_mac_count += static_cast<std::uint64_t>(m) * k * n;
  for (std::size_t p = 0; p < k; ++p) {
    const double* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double aval = a[p * m + i];
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aval * brow[j];
    }
  }
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    fail(ErrorCode::kDimension, std::string(op) + ": expected rank " +
                                    std::to_string(rank) + ", got shape " +
                                    shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    fail(ErrorCode::kDimension, std::string(op) + ": shape mismatch " +
                                    shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
  }
}

Tensor::Node& parent(Tensor::Node& node, std::size_t i) {
  return *node.parents[i];
}

}  // namespace

std::uint64_t mac_count() { return t_mac_count; }
void reset_mac_count() { t_mac_count = 0; }

void gemm(const double* a, const double* b, double* c, std::size_t m,
          std::size_t k, std::size_t n, bool accumulate) {
  t_mac_count += static_cast<std::uint64_t>(m) * k * n;
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    if (!accumulate) std::fill(crow, crow + n, 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double aval = a[i * k + p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aval * brow[j];
    }
  }
}

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::vector<double> softmax(std::span<const double> values,
                            std::span<const std::uint8_t> keep) {
  if (values.empty()) fail(ErrorCode::kInput, "softmax of empty vector");
  if (!keep.empty() && keep.size() != values.size()) {
    fail(ErrorCode::kDimension, "softmax: mask length differs from values");
  }
  auto kept = [&](std::size_t i) { return keep.empty() || keep[i] != 0; };
  double max = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (kept(i)) {
      max = std::max(max, values[i]);
      any = true;
    }
  }
  if (!any) fail(ErrorCode::kInvalidGate, "softmax: every entry is masked");
  std::vector<double> out(values.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (kept(i)) {
      out[i] = std::exp(values[i] - max);
      total += out[i];
    }
  }
  for (double& v : out) v /= total;
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  if (a.cols() != b.rows()) {
    fail(ErrorCode::kDimension, "matmul: inner extents differ, " +
                                    shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(m * n);
  gemm(a.data().data(), b.data().data(), out.data(), m, k, n, false);
  return make_result({m, n}, std::move(out), {a, b},
                     [m, k, n](Tensor::Node& self) {
                       auto& pa = parent(self, 0);
                       auto& pb = parent(self, 1);
                       if (pa.requires_grad) {
                         gemm_nt(self.grad.data(), pb.data.data(),
                                 pa.ensure_grad().data(), m, n, k);
                       }
                       if (pb.requires_grad) {
                         gemm_tn(pa.data.data(), self.grad.data(),
                                 pb.ensure_grad().data(), k, m, n);
                       }
                     });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Tensor::Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      auto& in = parent(self, p);
      if (!in.requires_grad) continue;
      auto g = in.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Tensor::Node& self) {
    auto& pa = parent(self, 0);
    auto& pb = parent(self, 1);
    if (pa.requires_grad) {
      auto g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.data[i];
    }
    if (pb.requires_grad) {
      auto g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.data[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v *= factor;
  return make_result(a.shape(), std::move(out), {a},
                     [factor](Tensor::Node& self) {
                       auto g = parent(self, 0).ensure_grad();
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         g[i] += self.grad[i] * factor;
                       }
                     });
}

Tensor silu(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a.data()[i];
    out[i] = x * sigmoid(x);
  }
  return make_result(a.shape(), std::move(out), {a}, [](Tensor::Node& self) {
    auto& in = parent(self, 0);
    auto g = in.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = in.data[i];
      const double s = sigmoid(x);
      g[i] += self.grad[i] * s * (1.0 + x * (1.0 - s));
    }
  });
}

Tensor softplus(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = softplus(a.data()[i]);
  return make_result(a.shape(), std::move(out), {a}, [](Tensor::Node& self) {
    auto& in = parent(self, 0);
    auto g = in.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += self.grad[i] * sigmoid(in.data[i]);
    }
  });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  return make_result({}, {total}, {a}, [](Tensor::Node& self) {
    auto g = parent(self, 0).ensure_grad();
    for (double& v : g) v += self.grad[0];
  });
}

Tensor sum_squares(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v * v;
  return make_result({}, {total}, {a}, [](Tensor::Node& self) {
    auto& in = parent(self, 0);
    auto g = in.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += 2.0 * in.data[i] * self.grad[0];
    }
  });
}

Tensor rmsnorm(const Tensor& x, const Tensor& weight, double eps) {
  require_rank(x, 2, "rmsnorm");
  if (weight.shape() != Shape{x.cols()}) {
    fail(ErrorCode::kDimension, "rmsnorm: weight " + shape_str(weight.shape()) +
                                    " does not fit input " +
                                    shape_str(x.shape()));
  }
  const std::size_t t = x.rows(), d = x.cols();
  std::vector<double> out(t * d);
  std::vector<double> inv_rms(t);
  const auto xs = x.data();
  const auto ws = weight.data();
  for (std::size_t i = 0; i < t; ++i) {
    double ms = 0.0;
    for (std::size_t j = 0; j < d; ++j) ms += xs[i * d + j] * xs[i * d + j];
    inv_rms[i] = 1.0 / std::sqrt(ms / static_cast<double>(d) + eps);
    for (std::size_t j = 0; j < d; ++j) {
      out[i * d + j] = xs[i * d + j] * inv_rms[i] * ws[j];
    }
  }
  return make_result(
      x.shape(), std::move(out), {x, weight},
      [t, d, inv_rms = std::move(inv_rms)](Tensor::Node& self) {
        auto& px = parent(self, 0);
        auto& pw = parent(self, 1);
        if (pw.requires_grad) {
          auto gw = pw.ensure_grad();
          for (std::size_t i = 0; i < t; ++i) {
            for (std::size_t j = 0; j < d; ++j) {
              gw[j] += self.grad[i * d + j] * px.data[i * d + j] * inv_rms[i];
            }
          }
        }
        if (px.requires_grad) {
          auto gx = px.ensure_grad();
          for (std::size_t i = 0; i < t; ++i) {
            const double r = inv_rms[i];
            double dot = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              dot += self.grad[i * d + j] * pw.data[j] * px.data[i * d + j];
            }
            const double coef = r * r * r * dot / static_cast<double>(d);
            for (std::size_t j = 0; j < d; ++j) {
              gx[i * d + j] += r * self.grad[i * d + j] * pw.data[j] -
                               px.data[i * d + j] * coef;
            }
          }
        }
      });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  require_rank(table, 2, "embedding");
  const std::size_t vocab = table.rows(), d = table.cols();
  std::vector<int> idx(ids.begin(), ids.end());
  std::vector<double> out(idx.size() * d);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= vocab) {
      fail(ErrorCode::kInput, "token id " + std::to_string(idx[i]) +
                                  " outside vocabulary of " +
                                  std::to_string(vocab));
    }
    std::copy_n(table.data().begin() + idx[i] * d, d, out.begin() + i * d);
  }
  const std::size_t n = idx.size();
  return make_result({n, d}, std::move(out), {table},
                     [d, idx = std::move(idx)](Tensor::Node& self) {
                       auto g = parent(self, 0).ensure_grad();
                       for (std::size_t i = 0; i < idx.size(); ++i) {
                         for (std::size_t j = 0; j < d; ++j) {
                           g[idx[i] * d + j] += self.grad[i * d + j];
                         }
                       }
                     });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require_rank(x, 2, "gather_rows");
  const std::size_t d = x.cols();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  std::vector<double> out(idx.size() * d);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= x.rows()) fail(ErrorCode::kDimension, "gather_rows: row out of range");
    std::copy_n(x.data().begin() + idx[i] * d, d, out.begin() + i * d);
  }
  const std::size_t n = idx.size();
  return make_result({n, d}, std::move(out), {x},
                     [d, idx = std::move(idx)](Tensor::Node& self) {
                       auto g = parent(self, 0).ensure_grad();
                       for (std::size_t i = 0; i < idx.size(); ++i) {
                         for (std::size_t j = 0; j < d; ++j) {
                           g[idx[i] * d + j] += self.grad[i * d + j];
                         }
                       }
                     });
}

Tensor scatter_rows(const Tensor& x, std::span<const std::size_t> rows,
                    std::size_t total_rows) {
  require_rank(x, 2, "scatter_rows");
  if (x.rows() != rows.size()) {
    fail(ErrorCode::kDimension, "scatter_rows: row count differs from index count");
  }
  const std::size_t d = x.cols();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  std::vector<double> out(total_rows * d, 0.0);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= total_rows) fail(ErrorCode::kDimension, "scatter_rows: row out of range");
    for (std::size_t j = 0; j < d; ++j) out[idx[i] * d + j] += x.data()[i * d + j];
  }
  return make_result({total_rows, d}, std::move(out), {x},
                     [d, idx = std::move(idx)](Tensor::Node& self) {
                       auto g = parent(self, 0).ensure_grad();
                       for (std::size_t i = 0; i < idx.size(); ++i) {
                         for (std::size_t j = 0; j < d; ++j) {
                           g[i * d + j] += self.grad[idx[i] * d + j];
                         }
                       }
                     });
}

Tensor gather_column(const Tensor& m, std::span<const std::size_t> rows,
                     std::size_t col) {
  require_rank(m, 2, "gather_column");
  const std::size_t cols = m.cols();
  if (col >= cols) fail(ErrorCode::kDimension, "gather_column: column out of range");
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  std::vector<double> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out[i] = m.data()[idx[i] * cols + col];
  }
  const std::size_t n = idx.size();
  return make_result({n}, std::move(out), {m},
                     [cols, col, idx = std::move(idx)](Tensor::Node& self) {
                       auto g = parent(self, 0).ensure_grad();
                       for (std::size_t i = 0; i < idx.size(); ++i) {
                         g[idx[i] * cols + col] += self.grad[i];
                       }
                     });
}

Tensor scale_rows(const Tensor& x, const Tensor& s) {
  require_rank(x, 2, "scale_rows");
  if (s.shape() != Shape{x.rows()}) {
    fail(ErrorCode::kDimension, "scale_rows: scale " + shape_str(s.shape()) +
                                    " does not fit " + shape_str(x.shape()));
  }
  const std::size_t n = x.rows(), d = x.cols();
  std::vector<double> out(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = x.data()[i * d + j] * s.data()[i];
  }
  return make_result(x.shape(), std::move(out), {x, s},
                     [n, d](Tensor::Node& self) {
                       auto& px = parent(self, 0);
                       auto& ps = parent(self, 1);
                       if (px.requires_grad) {
                         auto g = px.ensure_grad();
                         for (std::size_t i = 0; i < n; ++i) {
                           for (std::size_t j = 0; j < d; ++j) {
                             g[i * d + j] += self.grad[i * d + j] * ps.data[i];
                           }
                         }
                       }
                       if (ps.requires_grad) {
                         auto g = ps.ensure_grad();
                         for (std::size_t i = 0; i < n; ++i) {
                           double acc = 0.0;
                           for (std::size_t j = 0; j < d; ++j) {
                             acc += self.grad[i * d + j] * px.data[i * d + j];
                           }
                           g[i] += acc;
                         }
                       }
                     });
}

Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        const AttentionGeometry& geom) {
  const std::size_t seqs = geom.sequences, len = geom.seq_len;
  const std::size_t heads = geom.heads, kv_heads = geom.kv_heads;
  const std::size_t hd = geom.head_dim;
  if (kv_heads == 0 || heads % kv_heads != 0) {
    fail(ErrorCode::kDimension, "attention: heads not divisible by kv_heads");
  }
  const Shape q_shape{seqs * len, heads * hd};
  const Shape kv_shape{seqs * len, kv_heads * hd};
  if (q.shape() != q_shape || k.shape() != kv_shape || v.shape() != kv_shape) {
    fail(ErrorCode::kDimension, "attention: got q " + shape_str(q.shape()) +
                                    ", k " + shape_str(k.shape()) + ", v " +
                                    shape_str(v.shape()) + "; expected q " +
                                    shape_str(q_shape) + ", k/v " +
                                    shape_str(kv_shape));
  }
  const std::size_t group = heads / kv_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  const std::size_t qw = heads * hd, kw = kv_heads * hd;

  auto slice = [len](std::span<const double> src, std::size_t width,
                     std::size_t row0, std::size_t col0, std::size_t hd,
                     std::vector<double>& dst) {
    for (std::size_t i = 0; i < len; ++i) {
      std::copy_n(src.begin() + (row0 + i) * width + col0, hd,
                  dst.begin() + i * hd);
    }
  };

  std::vector<double> out(seqs * len * qw, 0.0);
  std::vector<double> probs(seqs * heads * len * len);
  std::vector<double> qh(len * hd), kh(len * hd), vh(len * hd), oh(len * hd);
  std::vector<std::uint8_t> keep(len);
  for (std::size_t s = 0; s < seqs; ++s) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t g = h / group;
      slice(q.data(), qw, s * len, h * hd, hd, qh);
      slice(k.data(), kw, s * len, g * hd, hd, kh);
      slice(v.data(), kw, s * len, g * hd, hd, vh);
      double* p = probs.data() + (s * heads + h) * len * len;
      std::fill(p, p + len * len, 0.0);
      gemm_nt(qh.data(), kh.data(), p, len, hd, len);
      for (std::size_t i = 0; i < len; ++i) {
        for (std::size_t j = 0; j < len; ++j) {
          keep[j] = j <= i;
          p[i * len + j] *= inv_sqrt;
        }
        const auto row = softmax(std::span<const double>(p + i * len, len), keep);
        std::copy(row.begin(), row.end(), p + i * len);
      }
      gemm(p, vh.data(), oh.data(), len, len, hd, false);
      for (std::size_t i = 0; i < len; ++i) {
        std::copy_n(oh.begin() + i * hd, hd,
                    out.begin() + (s * len + i) * qw + h * hd);
      }
    }
  }

  return make_result(
      q_shape, std::move(out), {q, k, v},
      [=, probs = std::move(probs)](Tensor::Node& self) mutable {
        auto& pq = parent(self, 0);
        auto& pk = parent(self, 1);
        auto& pv = parent(self, 2);
        std::span<double> gq, gk, gv;
        if (pq.requires_grad) gq = pq.ensure_grad();
        if (pk.requires_grad) gk = pk.ensure_grad();
        if (pv.requires_grad) gv = pv.ensure_grad();
        std::vector<double> qh(len * hd), kh(len * hd), vh(len * hd);
        std::vector<double> doh(len * hd), dp(len * len);
        std::vector<double> dqh(len * hd), dkh(len * hd), dvh(len * hd);
        for (std::size_t s = 0; s < seqs; ++s) {
          for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t g = h / group;
            const double* p = probs.data() + (s * heads + h) * len * len;
            slice(pq.data, qw, s * len, h * hd, hd, qh);
            slice(pk.data, kw, s * len, g * hd, hd, kh);
            slice(pv.data, kw, s * len, g * hd, hd, vh);
            slice(self.grad, qw, s * len, h * hd, hd, doh);
            // dP = dO V^T, dV = P^T dO
            std::fill(dp.begin(), dp.end(), 0.0);
            gemm_nt(doh.data(), vh.data(), dp.data(), len, hd, len);
            std::fill(dvh.begin(), dvh.end(), 0.0);
            gemm_tn(p, doh.data(), dvh.data(), len, len, hd);
            // softmax backward, then the 1/sqrt(hd) scale
            for (std::size_t i = 0; i < len; ++i) {
              double dot = 0.0;
              for (std::size_t j = 0; j < len; ++j) dot += dp[i * len + j] * p[i * len + j];
              for (std::size_t j = 0; j < len; ++j) {
                dp[i * len + j] = p[i * len + j] * (dp[i * len + j] - dot) * inv_sqrt;
              }
            }
            std::fill(dqh.begin(), dqh.end(), 0.0);
            gemm(dp.data(), kh.data(), dqh.data(), len, len, hd, true);
            std::fill(dkh.begin(), dkh.end(), 0.0);
            gemm_tn(dp.data(), qh.data(), dkh.data(), len, len, hd);
            for (std::size_t i = 0; i < len; ++i) {
              for (std::size_t c = 0; c < hd; ++c) {
                const std::size_t qi = (s * len + i) * qw + h * hd + c;
                const std::size_t ki = (s * len + i) * kw + g * hd + c;
                if (!gq.empty()) gq[qi] += dqh[i * hd + c];
                if (!gk.empty()) gk[ki] += dkh[i * hd + c];
                if (!gv.empty()) gv[ki] += dvh[i * hd + c];
              }
            }
          }
        }
      });
}

Tensor rope(const Tensor& x, std::size_t sequences, std::size_t seq_len,
            std::size_t heads, std::size_t head_dim, double theta) {
  if (head_dim % 2 != 0) {
    fail(ErrorCode::kDimension, "rope: head_dim must be even, got " +
                                    std::to_string(head_dim));
  }
  const Shape expected{sequences * seq_len, heads * head_dim};
  if (x.shape() != expected) {
    fail(ErrorCode::kDimension, "rope: got " + shape_str(x.shape()) +
                                    ", expected " + shape_str(expected));
  }
  const std::size_t half = head_dim / 2;
  std::vector<double> cos_t(seq_len * half), sin_t(seq_len * half);
  for (std::size_t pos = 0; pos < seq_len; ++pos) {
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = std::pow(theta, -2.0 * static_cast<double>(i) /
                                              static_cast<double>(head_dim));
      const double angle = static_cast<double>(pos) * freq;
      cos_t[pos * half + i] = std::cos(angle);
      sin_t[pos * half + i] = std::sin(angle);
    }
  }
  const std::size_t width = heads * head_dim;
  auto rotate = [=](std::span<const double> in, std::span<double> out,
                    double direction) {
    for (std::size_t r = 0; r < sequences * seq_len; ++r) {
      const std::size_t pos = r % seq_len;
      for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < half; ++i) {
          const std::size_t base = r * width + h * head_dim + 2 * i;
          const double c = cos_t[pos * half + i];
          const double s = direction * sin_t[pos * half + i];
          const double x0 = in[base], x1 = in[base + 1];
          out[base] += x0 * c - x1 * s;
          out[base + 1] += x0 * s + x1 * c;
        }
      }
    }
  };
  std::vector<double> out(x.numel(), 0.0);
  rotate(x.data(), out, 1.0);
  return make_result(x.shape(), std::move(out), {x},
                     [rotate](Tensor::Node& self) {
                       rotate(self.grad, parent(self, 0).ensure_grad(), -1.0);
                     });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
  require_rank(logits, 2, "cross_entropy");
  if (targets.empty()) fail(ErrorCode::kInput, "cross_entropy: empty targets");
  if (logits.rows() != targets.size()) {
    fail(ErrorCode::kDimension, "cross_entropy: logits " +
                                    shape_str(logits.shape()) + " vs " +
                                    std::to_string(targets.size()) + " targets");
  }
  const std::size_t t = logits.rows(), vocab = logits.cols();
  std::vector<int> tgt(targets.begin(), targets.end());
  std::vector<double> probs(t * vocab);
  double total = 0.0;
  for (std::size_t i = 0; i < t; ++i) {
    if (tgt[i] < 0 || static_cast<std::size_t>(tgt[i]) >= vocab) {
      fail(ErrorCode::kInput, "target id " + std::to_string(tgt[i]) +
                                  " outside vocabulary of " +
                                  std::to_string(vocab));
    }
    const auto row = logits.data().subspan(i * vocab, vocab);
    const double max = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) {
      probs[i * vocab + j] = std::exp(row[j] - max);
      z += probs[i * vocab + j];
    }
    for (std::size_t j = 0; j < vocab; ++j) probs[i * vocab + j] /= z;
    total += max + std::log(z) - row[tgt[i]];
  }
  const double mean = total / static_cast<double>(t);
  return make_result(
      {}, {mean}, {logits},
      [t, vocab, tgt = std::move(tgt), probs = std::move(probs)](Tensor::Node& self) {
        auto g = parent(self, 0).ensure_grad();
        const double scale = self.grad[0] / static_cast<double>(t);
        for (std::size_t i = 0; i < t; ++i) {
          for (std::size_t j = 0; j < vocab; ++j) {
            double d = probs[i * vocab + j];
            if (static_cast<int>(j) == tgt[i]) d -= 1.0;
            g[i * vocab + j] += scale * d;
          }
        }
      });
}

}  // namespace moeup
