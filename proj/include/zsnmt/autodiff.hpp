#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "zsnmt/kernels.hpp"
#include "zsnmt/tensor.hpp"

namespace zsnmt {

enum class Reduction { mean, sum };

// Reverse-mode tape. Each primitive records a closure that pushes adjoints
// from its output grad into its input grads; backward() replays the record
// once, in reverse. One tape per recording, single-threaded. Detached
// tensors (requires_grad == false) terminate propagation.
template <typename S>
class TapeT {
 public:
  using T = TensorT<S>;

  explicit TapeT(bool recording = true) : recording_(recording) {}

  TapeT(const TapeT&) = delete;
  TapeT& operator=(const TapeT&) = delete;

  bool recording() const { return recording_; }
  size_t size() const { return nodes_.size(); }

  void backward(const T& loss) {
    if (loss.numel() != 1)
      throw value_error("backward requires a scalar loss, got " + shape_str(loss.shape));
    if (consumed_)
      throw value_error("backward called twice on the same tape; re-record the graph first");
    consumed_ = true;
    if (loss.requires_grad) (*loss.grad)[0] = S(1);
    for (size_t i = nodes_.size(); i-- > 0;) nodes_[i]();
  }

  // ---- elementwise -------------------------------------------------------

  T add(const T& a, const T& b) {
    require_same(a, b, "add");
    T out = make_out(a.shape, grads(a, b));
    const S* pa = a.ptr();
    const S* pb = b.ptr();
    S* po = out.ptr();
    const size_t n = out.numel();
    for (size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    if (out.requires_grad)
      record([a, b, out]() {
        const S* g = out.gptr();
        const size_t n = out.numel();
        if (a.requires_grad) {
          S* ga = a.grad->data();
          for (size_t i = 0; i < n; ++i) ga[i] += g[i];
        }
        if (b.requires_grad) {
          S* gb = b.grad->data();
          for (size_t i = 0; i < n; ++i) gb[i] += g[i];
        }
      });
    return out;
  }

  T sub(const T& a, const T& b) {
    require_same(a, b, "sub");
    T out = make_out(a.shape, grads(a, b));
    const S* pa = a.ptr();
    const S* pb = b.ptr();
    S* po = out.ptr();
    const size_t n = out.numel();
    for (size_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
    if (out.requires_grad)
      record([a, b, out]() {
        const S* g = out.gptr();
        const size_t n = out.numel();
        if (a.requires_grad) {
          S* ga = a.grad->data();
          for (size_t i = 0; i < n; ++i) ga[i] += g[i];
        }
        if (b.requires_grad) {
          S* gb = b.grad->data();
          for (size_t i = 0; i < n; ++i) gb[i] -= g[i];
        }
      });
    return out;
  }

  T mul(const T& a, const T& b) {
    require_same(a, b, "mul");
    T out = make_out(a.shape, grads(a, b));
    const S* pa = a.ptr();
    const S* pb = b.ptr();
    S* po = out.ptr();
    const size_t n = out.numel();
    for (size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
    if (out.requires_grad)
      record([a, b, out]() {
        const S* g = out.gptr();
        const size_t n = out.numel();
        if (a.requires_grad) {
          S* ga = a.grad->data();
          const S* pb = b.ptr();
          for (size_t i = 0; i < n; ++i) ga[i] += g[i] * pb[i];
        }
        if (b.requires_grad) {
          S* gb = b.grad->data();
          const S* pa = a.ptr();
          for (size_t i = 0; i < n; ++i) gb[i] += g[i] * pa[i];
        }
      });
    return out;
  }

  T mul_scalar(const T& a, S c) {
    T out = make_out(a.shape, grads(a));
    const S* pa = a.ptr();
    S* po = out.ptr();
    const size_t n = out.numel();
    for (size_t i = 0; i < n; ++i) po[i] = pa[i] * c;
    if (out.requires_grad)
      record([a, out, c]() {
        const S* g = out.gptr();
        S* ga = a.grad->data();
        const size_t n = out.numel();
        for (size_t i = 0; i < n; ++i) ga[i] += g[i] * c;
      });
    return out;
  }

  T relu(const T& a) {
    T out = make_out(a.shape, grads(a));
    const S* pa = a.ptr();
    S* po = out.ptr();
    const size_t n = out.numel();
    for (size_t i = 0; i < n; ++i) po[i] = pa[i] > S(0) ? pa[i] : S(0);
    if (out.requires_grad)
      record([a, out]() {
        const S* g = out.gptr();
        const S* pa = a.ptr();
        S* ga = a.grad->data();
        const size_t n = out.numel();
        for (size_t i = 0; i < n; ++i)
          if (pa[i] > S(0)) ga[i] += g[i];
      });
    return out;
  }

  // out[t, :] = a[t, :] + v  (v is [H] or [1 x H])
  T add_rowvec(const T& a, const T& v) {
    if (a.shape.size() != 2 || v.numel() != a.shape[1])
      throw shape_error("add_rowvec: incompatible shapes " + shape_str(a.shape) + " and " +
                        shape_str(v.shape));
    T out = make_out(a.shape, grads(a, v));
    const size_t rows = a.shape[0], cols = a.shape[1];
    const S* pa = a.ptr();
    const S* pv = v.ptr();
    S* po = out.ptr();
    for (size_t t = 0; t < rows; ++t)
      for (size_t j = 0; j < cols; ++j) po[t * cols + j] = pa[t * cols + j] + pv[j];
    if (out.requires_grad)
      record([a, v, out, rows, cols]() {
        const S* g = out.gptr();
        if (a.requires_grad) {
          S* ga = a.grad->data();
          const size_t n = rows * cols;
          for (size_t i = 0; i < n; ++i) ga[i] += g[i];
        }
        if (v.requires_grad) {
          S* gv = v.grad->data();
          for (size_t t = 0; t < rows; ++t)
            for (size_t j = 0; j < cols; ++j) gv[j] += g[t * cols + j];
        }
      });
    return out;
  }

  // ---- linear algebra ----------------------------------------------------

  T matmul(const T& a, const T& b) {
    if (a.shape.size() != 2 || b.shape.size() != 2 || a.shape[1] != b.shape[0])
      throw shape_error("matmul: incompatible shapes " + shape_str(a.shape) + " and " +
                        shape_str(b.shape));
    const size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
    T out = make_out({m, n}, grads(a, b));
    kernels::mm_nn(a.ptr(), b.ptr(), out.ptr(), m, k, n);
    if (out.requires_grad)
      record([a, b, out, m, k, n]() {
        const S* g = out.gptr();
        if (a.requires_grad) kernels::mm_nt_acc(g, b.ptr(), a.grad->data(), m, n, k);
        if (b.requires_grad) kernels::mm_tn_acc(a.ptr(), g, b.grad->data(), m, k, n);
      });
    return out;
  }

  // a [m x k] * b[n x k]^T -> [m x n]
  T matmul_nt(const T& a, const T& b) {
    if (a.shape.size() != 2 || b.shape.size() != 2 || a.shape[1] != b.shape[1])
      throw shape_error("matmul_nt: incompatible shapes " + shape_str(a.shape) + " and " +
                        shape_str(b.shape));
    const size_t m = a.shape[0], k = a.shape[1], n = b.shape[0];
    T out = make_out({m, n}, grads(a, b));
    kernels::mm_nt(a.ptr(), b.ptr(), out.ptr(), m, k, n);
    if (out.requires_grad)
      record([a, b, out, m, k, n]() {
        const S* g = out.gptr();
        if (a.requires_grad) kernels::mm_nn_acc(g, b.ptr(), a.grad->data(), m, n, k);
        if (b.requires_grad) kernels::mm_tn_acc(g, a.ptr(), b.grad->data(), m, n, k);
      });
    return out;
  }

  // ---- shape ops ---------------------------------------------------------

  T slice_cols(const T& a, size_t c0, size_t c1) {
    if (a.shape.size() != 2 || c0 >= c1 || c1 > a.shape[1])
      throw shape_error("slice_cols [" + std::to_string(c0) + "," + std::to_string(c1) +
                        ") invalid for " + shape_str(a.shape));
    const size_t rows = a.shape[0], cols = a.shape[1], w = c1 - c0;
    T out = make_out({rows, w}, grads(a));
    const S* pa = a.ptr();
    S* po = out.ptr();
    for (size_t t = 0; t < rows; ++t)
      for (size_t j = 0; j < w; ++j) po[t * w + j] = pa[t * cols + c0 + j];
    if (out.requires_grad)
      record([a, out, c0, rows, cols, w]() {
        const S* g = out.gptr();
        S* ga = a.grad->data();
        for (size_t t = 0; t < rows; ++t)
          for (size_t j = 0; j < w; ++j) ga[t * cols + c0 + j] += g[t * w + j];
      });
    return out;
  }

  T concat_cols(const std::vector<T>& parts) {
    if (parts.empty()) throw shape_error("concat_cols on empty list");
    const size_t rows = parts[0].shape[0];
    size_t total = 0;
    bool rg = false;
    for (const T& p : parts) {
      if (p.shape.size() != 2 || p.shape[0] != rows)
        throw shape_error("concat_cols: row mismatch at " + shape_str(p.shape));
      total += p.shape[1];
      rg = rg || p.requires_grad;
    }
    T out = make_out({rows, total}, recording_ && rg);
    S* po = out.ptr();
    size_t off = 0;
    for (const T& p : parts) {
      const size_t w = p.shape[1];
      const S* pp = p.ptr();
      for (size_t t = 0; t < rows; ++t)
        for (size_t j = 0; j < w; ++j) po[t * total + off + j] = pp[t * w + j];
      off += w;
    }
    if (out.requires_grad)
      record([parts, out, rows, total]() {
        const S* g = out.gptr();
        size_t off = 0;
        for (const T& p : parts) {
          const size_t w = p.shape[1];
          if (p.requires_grad) {
            S* gp = p.grad->data();
            for (size_t t = 0; t < rows; ++t)
              for (size_t j = 0; j < w; ++j) gp[t * w + j] += g[t * total + off + j];
          }
          off += w;
        }
      });
    return out;
  }

  T gather_rows(const T& table, const std::vector<int>& ids) {
    if (table.shape.size() != 2)
      throw shape_error("gather_rows expects a 2-D table, got " + shape_str(table.shape));
    if (ids.empty()) throw value_error("gather_rows on empty id sequence");
    const size_t v = table.shape[0], h = table.shape[1];
    for (int id : ids)
      if (id < 0 || static_cast<size_t>(id) >= v)
        throw value_error("gather_rows: id " + std::to_string(id) + " out of range [0," +
                          std::to_string(v) + ")");
    T out = make_out({ids.size(), h}, grads(table));
    const S* pt = table.ptr();
    S* po = out.ptr();
    for (size_t t = 0; t < ids.size(); ++t)
      for (size_t j = 0; j < h; ++j) po[t * h + j] = pt[static_cast<size_t>(ids[t]) * h + j];
    if (out.requires_grad)
      record([table, out, ids, h]() {
        const S* g = out.gptr();
        S* gt = table.grad->data();
        for (size_t t = 0; t < ids.size(); ++t) {
          S* row = gt + static_cast<size_t>(ids[t]) * h;
          for (size_t j = 0; j < h; ++j) row[j] += g[t * h + j];
        }
      });
    return out;
  }

  // ---- normalization -----------------------------------------------------

  T softmax(const T& a, int axis) {
    const int rank = static_cast<int>(a.shape.size());
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank)
      throw value_error("softmax: axis out of range for " + shape_str(a.shape));
    const size_t len = a.shape[static_cast<size_t>(axis)];
    if (len == 0) throw value_error("softmax over empty axis");
    size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= a.shape[static_cast<size_t>(i)];
    for (int i = axis + 1; i < rank; ++i) inner *= a.shape[static_cast<size_t>(i)];
    T out = make_out(a.shape, grads(a));
    const S* pa = a.ptr();
    S* po = out.ptr();
    for (size_t o = 0; o < outer; ++o)
      for (size_t in = 0; in < inner; ++in) {
        const size_t base = o * len * inner + in;
        S mx = pa[base];
        for (size_t t = 1; t < len; ++t) mx = std::max(mx, pa[base + t * inner]);
        double sum = 0.0;
        for (size_t t = 0; t < len; ++t) {
          const S e = std::exp(pa[base + t * inner] - mx);
          po[base + t * inner] = e;
          sum += static_cast<double>(e);
        }
        const S inv = static_cast<S>(1.0 / sum);
        for (size_t t = 0; t < len; ++t) po[base + t * inner] *= inv;
      }
    if (out.requires_grad)
      record([a, out, outer, inner, len]() {
        const S* y = out.ptr();
        const S* g = out.gptr();
        S* ga = a.grad->data();
        for (size_t o = 0; o < outer; ++o)
          for (size_t in = 0; in < inner; ++in) {
            const size_t base = o * len * inner + in;
            double dot = 0.0;
            for (size_t t = 0; t < len; ++t)
              dot += static_cast<double>(g[base + t * inner]) * y[base + t * inner];
            for (size_t t = 0; t < len; ++t) {
              const size_t i = base + t * inner;
              ga[i] += y[i] * (g[i] - static_cast<S>(dot));
            }
          }
      });
    return out;
  }

  // Row softmax over scores [q x k] with a validity mask (1 byte per cell).
  // Masked positions get weight exactly 0; a fully masked row is an error.
  T masked_softmax_rows(const T& scores, const std::vector<uint8_t>& valid) {
    if (scores.shape.size() != 2)
      throw shape_error("masked_softmax_rows expects 2-D scores, got " + shape_str(scores.shape));
    const size_t q = scores.shape[0], k = scores.shape[1];
    if (valid.size() != q * k)
      throw shape_error("masked_softmax_rows: mask size " + std::to_string(valid.size()) +
                        " does not match scores " + shape_str(scores.shape));
    T out = make_out(scores.shape, grads(scores));
    const S* ps = scores.ptr();
    S* po = out.ptr();
    for (size_t i = 0; i < q; ++i) {
      const S* row = ps + i * k;
      const uint8_t* m = valid.data() + i * k;
      S mx = S(0);
      bool any = false;
      for (size_t j = 0; j < k; ++j)
        if (m[j]) {
          mx = any ? std::max(mx, row[j]) : row[j];
          any = true;
        }
      if (!any)
        throw value_error("masked_softmax_rows: row " + std::to_string(i) +
                          " has every key position masked (undefined distribution)");
      double sum = 0.0;
      for (size_t j = 0; j < k; ++j) {
        if (m[j]) {
          const S e = std::exp(row[j] - mx);
          po[i * k + j] = e;
          sum += static_cast<double>(e);
        } else {
          po[i * k + j] = S(0);
        }
      }
      const S inv = static_cast<S>(1.0 / sum);
      for (size_t j = 0; j < k; ++j)
        if (m[j]) po[i * k + j] *= inv;
    }
    if (out.requires_grad)
      record([scores, out, q, k]() {
        const S* y = out.ptr();
        const S* g = out.gptr();
        S* ga = scores.grad->data();
        for (size_t i = 0; i < q; ++i) {
          double dot = 0.0;
          for (size_t j = 0; j < k; ++j)
            dot += static_cast<double>(g[i * k + j]) * y[i * k + j];
          for (size_t j = 0; j < k; ++j)
            ga[i * k + j] += y[i * k + j] * (g[i * k + j] - static_cast<S>(dot));
        }
      });
    return out;
  }

  T layer_norm(const T& a, const T& gain, const T& bias, S eps = S(1e-5)) {
    if (a.shape.empty() || a.shape.back() < 1)
      throw shape_error("layer_norm: last extent must be >= 1, got " + shape_str(a.shape));
    if (!(eps > S(0))) throw value_error("layer_norm: epsilon must be positive");
    const size_t h = a.shape.back();
    if (gain.numel() != h || bias.numel() != h)
      throw shape_error("layer_norm: gain " + shape_str(gain.shape) + " / bias " +
                        shape_str(bias.shape) + " do not match last extent of " +
                        shape_str(a.shape));
    const size_t rows = a.numel() / h;
    T out = make_out(a.shape, grads(a, gain, bias));
    // xhat is needed by the adjoint; stored as a plain buffer.
    auto xhat = std::make_shared<std::vector<S>>(a.numel());
    auto inv_std = std::make_shared<std::vector<S>>(rows);
    const S* pa = a.ptr();
    const S* pg = gain.ptr();
    const S* pb = bias.ptr();
    S* po = out.ptr();
    for (size_t r = 0; r < rows; ++r) {
      const S* x = pa + r * h;
      double mu = 0.0;
      for (size_t j = 0; j < h; ++j) mu += x[j];
      mu /= static_cast<double>(h);
      double var = 0.0;
      for (size_t j = 0; j < h; ++j) {
        const double d = x[j] - mu;
        var += d * d;
      }
      var /= static_cast<double>(h);
      const S istd = static_cast<S>(1.0 / std::sqrt(var + static_cast<double>(eps)));
      (*inv_std)[r] = istd;
      for (size_t j = 0; j < h; ++j) {
        const S xh = (x[j] - static_cast<S>(mu)) * istd;
        (*xhat)[r * h + j] = xh;
        po[r * h + j] = xh * pg[j] + pb[j];
      }
    }
    if (out.requires_grad)
      record([a, gain, bias, out, xhat, inv_std, rows, h]() {
        const S* g = out.gptr();
        const S* pg = gain.ptr();
        for (size_t r = 0; r < rows; ++r) {
          const S* go = g + r * h;
          const S* xh = xhat->data() + r * h;
          if (gain.requires_grad) {
            S* gg = gain.grad->data();
            for (size_t j = 0; j < h; ++j) gg[j] += go[j] * xh[j];
          }
          if (bias.requires_grad) {
            S* gb = bias.grad->data();
            for (size_t j = 0; j < h; ++j) gb[j] += go[j];
          }
          if (a.requires_grad) {
            double sum_d = 0.0, sum_dx = 0.0;
            for (size_t j = 0; j < h; ++j) {
              const double d = static_cast<double>(go[j]) * pg[j];
              sum_d += d;
              sum_dx += d * xh[j];
            }
            const double mean_d = sum_d / static_cast<double>(h);
            const double mean_dx = sum_dx / static_cast<double>(h);
            S* ga = a.grad->data() + r * h;
            const S istd = (*inv_std)[r];
            for (size_t j = 0; j < h; ++j) {
              const double d = static_cast<double>(go[j]) * pg[j];
              ga[j] += static_cast<S>((d - mean_d - xh[j] * mean_dx) * istd);
            }
          }
        }
      });
    return out;
  }

  // ---- losses ------------------------------------------------------------

  // Mean (or sum) of elementwise squared differences. With a row mask, rows
  // whose mask byte is 0 are excluded entirely (the first axis indexes rows).
  T mse(const T& a, const T& b, Reduction red = Reduction::mean,
        const std::vector<uint8_t>& row_mask = {}) {
    if (a.shape != b.shape)
      throw shape_error("mse: shape mismatch " + shape_str(a.shape) + " vs " +
                        shape_str(b.shape));
    const size_t rows = a.shape[0];
    const size_t rsz = a.numel() / rows;
    if (!row_mask.empty() && row_mask.size() != rows)
      throw shape_error("mse: row mask length " + std::to_string(row_mask.size()) +
                        " does not match " + shape_str(a.shape));
    size_t valid_rows = rows;
    if (!row_mask.empty()) {
      valid_rows = 0;
      for (uint8_t m : row_mask) valid_rows += m ? 1 : 0;
      if (valid_rows == 0) throw value_error("mse: every row is masked out");
    }
    const size_t n_eff = valid_rows * rsz;
    const S* pa = a.ptr();
    const S* pb = b.ptr();
    double acc = 0.0;
    for (size_t r = 0; r < rows; ++r) {
      if (!row_mask.empty() && !row_mask[r]) continue;
      for (size_t j = 0; j < rsz; ++j) {
        const double d = static_cast<double>(pa[r * rsz + j]) - pb[r * rsz + j];
        acc += d * d;
      }
    }
    if (red == Reduction::mean) acc /= static_cast<double>(n_eff);
    T out = make_out({1}, grads(a, b));
    (*out.data)[0] = static_cast<S>(acc);
    if (out.requires_grad)
      record([a, b, out, row_mask, rows, rsz, n_eff, red]() {
        const S g = (*out.grad)[0];
        const S scale = red == Reduction::mean ? g * S(2) / static_cast<S>(n_eff) : g * S(2);
        const S* pa = a.ptr();
        const S* pb = b.ptr();
        for (size_t r = 0; r < rows; ++r) {
          if (!row_mask.empty() && !row_mask[r]) continue;
          for (size_t j = 0; j < rsz; ++j) {
            const S d = (pa[r * rsz + j] - pb[r * rsz + j]) * scale;
            if (a.requires_grad) (*a.grad)[r * rsz + j] += d;
            if (b.requires_grad) (*b.grad)[r * rsz + j] -= d;
          }
        }
      });
    return out;
  }

  // KL(p || q) where the last axis holds distributions; leading axes index
  // rows, averaged over unmasked rows. Values are clamped at 1e-9 before the
  // logs so exact zeros (softmax underflow) stay finite.
  T kl_div(const T& p, const T& q, const std::vector<uint8_t>& row_mask = {}) {
    if (p.shape != q.shape)
      throw shape_error("kl_div: shape mismatch " + shape_str(p.shape) + " vs " +
                        shape_str(q.shape));
    const size_t v = p.shape.back();
    const size_t rows = p.numel() / v;
    if (!row_mask.empty() && row_mask.size() != rows)
      throw shape_error("kl_div: row mask length does not match " + shape_str(p.shape));
    const S clamp = S(1e-9);
    const S* pp = p.ptr();
    const S* pq = q.ptr();
    size_t valid_rows = 0;
    for (size_t r = 0; r < rows; ++r) {
      if (!row_mask.empty() && !row_mask[r]) continue;
      ++valid_rows;
      double sp = 0.0, sq = 0.0;
      for (size_t j = 0; j < v; ++j) {
        sp += pp[r * v + j];
        sq += pq[r * v + j];
      }
      if (std::abs(sp - 1.0) > 1e-5 || std::abs(sq - 1.0) > 1e-5)
        throw value_error("kl_div: input row " + std::to_string(r) +
                          " is not a distribution (sums " + std::to_string(sp) + ", " +
                          std::to_string(sq) + ")");
    }
    if (valid_rows == 0) throw value_error("kl_div: every row is masked out");
    double acc = 0.0;
    for (size_t r = 0; r < rows; ++r) {
      if (!row_mask.empty() && !row_mask[r]) continue;
      for (size_t j = 0; j < v; ++j) {
        const S pc = std::max(pp[r * v + j], clamp);
        const S qc = std::max(pq[r * v + j], clamp);
        acc += static_cast<double>(pp[r * v + j]) *
               (std::log(static_cast<double>(pc)) - std::log(static_cast<double>(qc)));
      }
    }
    acc /= static_cast<double>(valid_rows);
    T out = make_out({1}, grads(p, q));
    (*out.data)[0] = static_cast<S>(acc);
    if (out.requires_grad)
      record([p, q, out, row_mask, rows, v, valid_rows, clamp]() {
        const S g = (*out.grad)[0] / static_cast<S>(valid_rows);
        const S* pp = p.ptr();
        const S* pq = q.ptr();
        for (size_t r = 0; r < rows; ++r) {
          if (!row_mask.empty() && !row_mask[r]) continue;
          for (size_t j = 0; j < v; ++j) {
            const size_t i = r * v + j;
            const S pc = std::max(pp[i], clamp);
            const S qc = std::max(pq[i], clamp);
            if (p.requires_grad) {
              S d = std::log(pc) - std::log(qc);
              if (pp[i] > clamp) d += S(1);
              (*p.grad)[i] += g * d;
            }
            if (q.requires_grad && pq[i] > clamp) (*q.grad)[i] -= g * pp[i] / qc;
          }
        }
      });
    return out;
  }

  // Mean over unmasked rows of -log softmax(logits)[target]. Fused for
  // numerical stability; the adjoint is (softmax - onehot) / n_valid.
  T cross_entropy(const T& logits, const std::vector<int>& targets,
                  const std::vector<uint8_t>& row_mask = {}) {
    if (logits.shape.size() != 2)
      throw shape_error("cross_entropy expects 2-D logits, got " + shape_str(logits.shape));
    const size_t rows = logits.shape[0], v = logits.shape[1];
    if (targets.size() != rows)
      throw shape_error("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                        shape_str(logits.shape));
    if (!row_mask.empty() && row_mask.size() != rows)
      throw shape_error("cross_entropy: row mask length does not match logits");
    size_t valid = 0;
    for (size_t r = 0; r < rows; ++r) {
      if (!row_mask.empty() && !row_mask[r]) continue;
      ++valid;
      if (targets[r] < 0 || static_cast<size_t>(targets[r]) >= v)
        throw value_error("cross_entropy: target id " + std::to_string(targets[r]) +
                          " out of range [0," + std::to_string(v) + ")");
    }
    if (valid == 0) throw value_error("cross_entropy: every position is masked out");
    auto probs = std::make_shared<std::vector<S>>(rows * v, S(0));
    const S* pl = logits.ptr();
    double acc = 0.0;
    for (size_t r = 0; r < rows; ++r) {
      if (!row_mask.empty() && !row_mask[r]) continue;
      const S* row = pl + r * v;
      S mx = row[0];
      for (size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
      double sum = 0.0;
      for (size_t j = 0; j < v; ++j) {
        const S e = std::exp(row[j] - mx);
        (*probs)[r * v + j] = e;
        sum += static_cast<double>(e);
      }
      const double inv = 1.0 / sum;
      for (size_t j = 0; j < v; ++j) (*probs)[r * v + j] *= static_cast<S>(inv);
      acc -= std::log(std::max(static_cast<double>((*probs)[r * v + static_cast<size_t>(targets[r])]),
                               1e-300));
    }
    acc /= static_cast<double>(valid);
    T out = make_out({1}, grads(logits));
    (*out.data)[0] = static_cast<S>(acc);
    if (out.requires_grad)
      record([logits, out, probs, targets, row_mask, rows, v, valid]() {
        const S g = (*out.grad)[0] / static_cast<S>(valid);
        S* gl = logits.grad->data();
        for (size_t r = 0; r < rows; ++r) {
          if (!row_mask.empty() && !row_mask[r]) continue;
          const S* pr = probs->data() + r * v;
          S* gr = gl + r * v;
          for (size_t j = 0; j < v; ++j) gr[j] += g * pr[j];
          gr[static_cast<size_t>(targets[r])] -= g;
        }
      });
    return out;
  }

  // ---- reductions --------------------------------------------------------

  T sum(const T& a) {
    T out = make_out({1}, grads(a));
    const S* pa = a.ptr();
    double acc = 0.0;
    const size_t n = a.numel();
    for (size_t i = 0; i < n; ++i) acc += pa[i];
    (*out.data)[0] = static_cast<S>(acc);
    if (out.requires_grad)
      record([a, out]() {
        const S g = (*out.grad)[0];
        S* ga = a.grad->data();
        const size_t n = a.numel();
        for (size_t i = 0; i < n; ++i) ga[i] += g;
      });
    return out;
  }

  T mean(const T& a) {
    const size_t n = a.numel();
    T out = make_out({1}, grads(a));
    const S* pa = a.ptr();
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += pa[i];
    (*out.data)[0] = static_cast<S>(acc / static_cast<double>(n));
    if (out.requires_grad)
      record([a, out, n]() {
        const S g = (*out.grad)[0] / static_cast<S>(n);
        S* ga = a.grad->data();
        for (size_t i = 0; i < n; ++i) ga[i] += g;
      });
    return out;
  }

 private:
  T make_out(std::vector<size_t> shape, bool rg) {
    T t = T::zeros(std::move(shape));
    if (rg) {
      t.requires_grad = true;
      t.grad = std::make_shared<std::vector<S>>(t.numel(), S(0));
    }
    return t;
  }

  template <typename... Ts>
  bool grads(const Ts&... ts) {
    return recording_ && (ts.requires_grad || ...);
  }

  void require_same(const T& a, const T& b, const char* op) {
    if (a.shape != b.shape)
      throw shape_error(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                        shape_str(b.shape));
  }

  void record(std::function<void()> f) { nodes_.push_back(std::move(f)); }

  bool recording_;
  bool consumed_ = false;
  std::vector<std::function<void()>> nodes_;
};

// Single-precision aliases used by the model; tests instantiate the double
// versions for finite-difference gradient checking.
using Tensor = TensorT<float>;
using Tape = TapeT<float>;

// Scaled dot-product attention over one head. `key_valid` marks usable key
// positions (one byte per key, shared by every query row).
template <typename S>
struct AttentionResult {
  TensorT<S> contexts;
  TensorT<S> weights;
};

template <typename S>
AttentionResult<S> scaled_dot_attention(TapeT<S>& tape, const TensorT<S>& queries,
                                        const TensorT<S>& keys, const TensorT<S>& values,
                                        const std::vector<uint8_t>& key_valid) {
  if (keys.shape != values.shape || keys.shape.size() != 2)
    throw shape_error("scaled_dot_attention: keys " + shape_str(keys.shape) +
                      " and values " + shape_str(values.shape) + " must match");
  if (queries.shape.size() != 2 || queries.shape[1] != keys.shape[1])
    throw shape_error("scaled_dot_attention: query dim " + shape_str(queries.shape) +
                      " does not match keys " + shape_str(keys.shape));
  const size_t tq = queries.shape[0], tk = keys.shape[0], d = keys.shape[1];
  if (key_valid.size() != tk)
    throw shape_error("scaled_dot_attention: mask length " + std::to_string(key_valid.size()) +
                      " does not match key count " + std::to_string(tk));
  std::vector<uint8_t> full(tq * tk);
  for (size_t i = 0; i < tq; ++i)
    for (size_t j = 0; j < tk; ++j) full[i * tk + j] = key_valid[j];
  TensorT<S> scores =
      tape.mul_scalar(tape.matmul_nt(queries, keys), static_cast<S>(1.0 / std::sqrt(double(d))));
  TensorT<S> weights = tape.masked_softmax_rows(scores, full);
  TensorT<S> contexts = tape.matmul(weights, values);
  return {contexts, weights};
}

}  // namespace zsnmt
