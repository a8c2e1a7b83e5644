#pragma once

// Dense tensors with reverse-mode gradients. The op set is deliberately small:
// everything the network needs is composed from matmul, depthwise conv, a few
// pointwise maps, layer norm, gather, and two fused kernels (loss and the
// selective scan, the latter in ssm.hpp). Doubles are the reference precision;
// floats are a speed mode with looser tolerances.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <cblas.h>

namespace sm {

// Thrown on caller mistakes (bad shapes, bad arguments).
struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
// Thrown on bad external input (files, configs).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::shared_ptr<std::vector<T>> data;
  // Non-null iff this tensor participates in gradient computation.
  std::shared_ptr<std::vector<T>> grad;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, T fill = T(0))
      : shape(std::move(s)),
        data(std::make_shared<std::vector<T>>(shape_numel(shape), fill)) {}

  int64_t numel() const { return data ? (int64_t)data->size() : 0; }
  T* ptr() { return data->data(); }
  const T* ptr() const { return data->data(); }
  T* gptr() { return grad->data(); }
  const T* gptr() const { return grad->data(); }
  bool tracked() const { return grad != nullptr; }

  void set_requires_grad() {
    if (!grad) grad = std::make_shared<std::vector<T>>(data->size(), T(0));
  }
  void zero_grad() {
    if (grad) std::fill(grad->begin(), grad->end(), T(0));
  }
  T scalar() const {
    if (numel() != 1) throw UsageError("scalar() on non-scalar tensor");
    return (*data)[0];
  }
};

template <typename T>
Tensor<T> from_values(std::vector<int> shape, std::vector<T> values) {
  if (shape_numel(shape) != (int64_t)values.size())
    throw UsageError("from_values: shape/data length mismatch");
  Tensor<T> t;
  t.shape = std::move(shape);
  t.data = std::make_shared<std::vector<T>>(std::move(values));
  return t;
}

// Records backward closures for one forward pass. A tape is exclusive to the
// thread that created it; nesting is allowed (innermost wins).
template <typename T>
class Tape {
 public:
  Tape() : parent_(active_) { active_ = this; }
  ~Tape() { active_ = parent_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return active_; }

  void record(std::function<void()> bw) { ops_.push_back(std::move(bw)); }
  size_t size() const { return ops_.size(); }

  // Seeds d(loss)/d(loss) = 1 and replays adjoints newest-first. One shot:
  // intermediate grad buffers are consumed by the sweep.
  void backward(Tensor<T>& loss) {
    if (loss.numel() != 1) throw UsageError("backward: loss must be scalar");
    if (!loss.tracked())
      throw UsageError("backward: loss does not track gradients");
    if (consumed_) throw UsageError("backward: tape already consumed");
    consumed_ = true;
    (*loss.grad)[0] += T(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> ops_;
  Tape* parent_ = nullptr;
  bool consumed_ = false;
  static thread_local Tape* active_;
};

template <typename T>
thread_local Tape<T>* Tape<T>::active_ = nullptr;

namespace detail {

template <typename T>
Tensor<T> make_out(std::vector<int> shape, bool tracked) {
  Tensor<T> out(std::move(shape));
  if (tracked && Tape<T>::active()) out.set_requires_grad();
  return out;
}

template <typename T>
bool want_grad(const Tensor<T>& a) {
  return Tape<T>::active() && a.tracked();
}
template <typename T>
bool want_grad(const Tensor<T>& a, const Tensor<T>& b) {
  return Tape<T>::active() && (a.tracked() || b.tracked());
}

// exp via range reduction to |r| <= ln2/2 and a degree-13 Taylor kernel
// (truncation ~4e-18, below rounding noise). Division-free so the whole body
// inlines and vectorizes, which the scan kernel depends on; matches libm to a
// few ulp.
inline double fast_exp(double x) {
  x = std::min(std::max(x, -708.0), 708.0);
  double k = std::nearbyint(x * 1.4426950408889634074);
  double r = x - k * 6.93145751953125e-1 - k * 1.42860682030941723212e-6;
  double p = 1.6059043836821614599e-10;
  p = p * r + 2.0876756987868098979e-9;
  p = p * r + 2.5052108385441718775e-8;
  p = p * r + 2.7557319223985890653e-7;
  p = p * r + 2.7557319223985890653e-6;
  p = p * r + 2.4801587301587301587e-5;
  p = p * r + 1.9841269841269841270e-4;
  p = p * r + 1.3888888888888888889e-3;
  p = p * r + 8.3333333333333333333e-3;
  p = p * r + 4.1666666666666666667e-2;
  p = p * r + 1.6666666666666666667e-1;
  p = p * r + 0.5;
  double e = (p * r + 1.0) * r + 1.0;
  int64_t ki = (int64_t)k;
  uint64_t bits = (uint64_t)(ki + 1023) << 52;
  double two_k;
  std::memcpy(&two_k, &bits, 8);
  return e * two_k;
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }
inline double softplus_stable(double v) {
  return v > 30.0 ? v : std::log1p(std::exp(v));
}

inline void blas_gemm(bool ta, bool tb, int m, int n, int k, double alpha,
                      const double* a, int lda, const double* b, int ldb,
                      double beta, double* c, int ldc) {
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans,
              tb ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb,
              beta, c, ldc);
}
inline void blas_gemm(bool ta, bool tb, int m, int n, int k, float alpha,
                      const float* a, int lda, const float* b, int ldb,
                      float beta, float* c, int ldc) {
  cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans,
              tb ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb,
              beta, c, ldc);
}

}  // namespace detail

// ---- matmul -----------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape.size() != 2 || b.shape.size() != 2)
    throw UsageError("matmul: operands must be rank 2");
  int m = a.shape[0], k = a.shape[1], k2 = b.shape[0], n = b.shape[1];
  if (k != k2) throw UsageError("matmul: inner dimensions disagree");
  Tensor<T> out = detail::make_out<T>({m, n}, detail::want_grad(a, b));
  detail::blas_gemm(false, false, m, n, k, T(1), a.ptr(), k, b.ptr(), n, T(0),
                    out.ptr(), n);
  if (out.tracked()) {
    Tape<T>::active()->record([a, b, out, m, n, k]() {
      if (a.tracked())
        detail::blas_gemm(false, true, m, k, n, T(1), out.gptr(), n, b.ptr(),
                          n, T(1), a.grad->data(), k);
      if (b.tracked())
        detail::blas_gemm(true, false, k, n, m, T(1), a.ptr(), k, out.gptr(),
                          n, T(1), b.grad->data(), n);
    });
  }
  return out;
}

// ---- depthwise conv ---------------------------------------------------

// Per-channel 2D correlation, zero-padded "same". No cross-channel mixing.
template <typename T>
Tensor<T> conv2d_depthwise(const Tensor<T>& x, const Tensor<T>& k) {
  if (x.shape.size() != 3 || k.shape.size() != 3)
    throw UsageError("conv2d_depthwise: expected CxHxW input, Cxkhxkw kernel");
  int C = x.shape[0], H = x.shape[1], W = x.shape[2];
  int kh = k.shape[1], kw = k.shape[2];
  if (k.shape[0] != C) throw UsageError("conv2d_depthwise: channel mismatch");
  if (kh % 2 == 0 || kw % 2 == 0)
    throw UsageError("conv2d_depthwise: kernel sides must be odd");
  int ph = kh / 2, pw = kw / 2;
  Tensor<T> out = detail::make_out<T>({C, H, W}, detail::want_grad(x, k));
  const T* xp = x.ptr();
  const T* kp = k.ptr();
  T* op = out.ptr();
  for (int c = 0; c < C; ++c) {
    const T* xc = xp + (int64_t)c * H * W;
    const T* kc = kp + (int64_t)c * kh * kw;
    T* oc = op + (int64_t)c * H * W;
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j) {
        T acc = 0;
        for (int u = 0; u < kh; ++u) {
          int ii = i + u - ph;
          if (ii < 0 || ii >= H) continue;
          for (int v = 0; v < kw; ++v) {
            int jj = j + v - pw;
            if (jj < 0 || jj >= W) continue;
            acc += xc[ii * W + jj] * kc[u * kw + v];
          }
        }
        oc[i * W + j] = acc;
      }
  }
  if (out.tracked()) {
    Tape<T>::active()->record([x, k, out, C, H, W, kh, kw, ph, pw]() {
      const T* go = out.gptr();
      for (int c = 0; c < C; ++c) {
        const T* gc = go + (int64_t)c * H * W;
        const T* xc = x.ptr() + (int64_t)c * H * W;
        const T* kc = k.ptr() + (int64_t)c * kh * kw;
        for (int i = 0; i < H; ++i)
          for (int j = 0; j < W; ++j) {
            T g = gc[i * W + j];
            if (g == T(0)) continue;
            for (int u = 0; u < kh; ++u) {
              int ii = i + u - ph;
              if (ii < 0 || ii >= H) continue;
              for (int v = 0; v < kw; ++v) {
                int jj = j + v - pw;
                if (jj < 0 || jj >= W) continue;
                if (k.tracked())
                  (*k.grad)[(int64_t)c * kh * kw + u * kw + v] +=
                      g * xc[ii * W + jj];
                if (x.tracked())
                  (*x.grad)[(int64_t)c * H * W + ii * W + jj] +=
                      g * kc[u * kw + v];
              }
            }
          }
      }
    });
  }
  return out;
}

// ---- pointwise maps ----------------------------------------------------

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  Tensor<T> out = detail::make_out<T>(x.shape, detail::want_grad(x));
  const T* xp = x.ptr();
  T* op = out.ptr();
  int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) {
    double s = detail::sigmoid((double)xp[i]);
    op[i] = (T)((double)xp[i] * s);
  }
  if (out.tracked()) {
    Tape<T>::active()->record([x, out, n]() {
      if (!x.tracked()) return;
      const T* xp = x.ptr();
      const T* go = out.gptr();
      T* gx = x.grad->data();
      for (int64_t i = 0; i < n; ++i) {
        double s = detail::sigmoid((double)xp[i]);
        gx[i] += go[i] * (T)(s * (1.0 + (double)xp[i] * (1.0 - s)));
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
  Tensor<T> out = detail::make_out<T>(x.shape, detail::want_grad(x));
  const T* xp = x.ptr();
  T* op = out.ptr();
  int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) op[i] = (T)detail::softplus_stable(xp[i]);
  if (out.tracked()) {
    Tape<T>::active()->record([x, out, n]() {
      if (!x.tracked()) return;
      const T* xp = x.ptr();
      const T* go = out.gptr();
      T* gx = x.grad->data();
      for (int64_t i = 0; i < n; ++i)
        gx[i] += go[i] * (T)detail::sigmoid((double)xp[i]);
    });
  }
  return out;
}

template <typename T>
Tensor<T> exp_map(const Tensor<T>& x) {
  Tensor<T> out = detail::make_out<T>(x.shape, detail::want_grad(x));
  const T* xp = x.ptr();
  T* op = out.ptr();
  int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) op[i] = (T)std::exp((double)xp[i]);
  if (out.tracked()) {
    Tape<T>::active()->record([x, out, n]() {
      if (!x.tracked()) return;
      const T* op = out.ptr();
      const T* go = out.gptr();
      T* gx = x.grad->data();
      for (int64_t i = 0; i < n; ++i) gx[i] += go[i] * op[i];
    });
  }
  return out;
}

// ---- layer norm over the channel axis ----------------------------------

// x is [C x ...]; each trailing position is normalized across the C leading
// channels, then scaled/shifted by gamma/beta.
template <typename T>
Tensor<T> layer_norm_channels(const Tensor<T>& x, const Tensor<T>& gamma,
                              const Tensor<T>& beta, T eps = T(1e-5)) {
  if (x.shape.empty()) throw UsageError("layer_norm_channels: rank 0 input");
  int C = x.shape[0];
  if (gamma.numel() != C || beta.numel() != C)
    throw UsageError("layer_norm_channels: gamma/beta must have C entries");
  if (eps <= T(0)) throw UsageError("layer_norm_channels: eps must be > 0");
  int64_t P = x.numel() / C;
  bool tg = Tape<T>::active() &&
            (x.tracked() || gamma.tracked() || beta.tracked());
  Tensor<T> out = detail::make_out<T>(x.shape, tg);
  // Cache the normalized values and inverse sigma for the adjoint.
  auto xhat = std::make_shared<std::vector<T>>();
  auto isig = std::make_shared<std::vector<T>>();
  if (out.tracked()) {
    xhat->resize(x.numel());
    isig->resize(P);
  }
  const T* xp = x.ptr();
  T* op = out.ptr();
  const T* gp = gamma.ptr();
  const T* bp = beta.ptr();
  for (int64_t p = 0; p < P; ++p) {
    double mu = 0;
    for (int c = 0; c < C; ++c) mu += xp[c * P + p];
    mu /= C;
    double var = 0;
    for (int c = 0; c < C; ++c) {
      double d = xp[c * P + p] - mu;
      var += d * d;
    }
    var /= C;
    double is = 1.0 / std::sqrt(var + (double)eps);
    if (out.tracked()) (*isig)[p] = (T)is;
    for (int c = 0; c < C; ++c) {
      double h = (xp[c * P + p] - mu) * is;
      if (out.tracked()) (*xhat)[c * P + p] = (T)h;
      op[c * P + p] = (T)(h * gp[c] + bp[c]);
    }
  }
  if (out.tracked()) {
    Tape<T>::active()->record([x, gamma, beta, out, xhat, isig, C, P]() {
      const T* go = out.gptr();
      const T* gp = gamma.ptr();
      for (int64_t p = 0; p < P; ++p) {
        if (gamma.tracked() || beta.tracked()) {
          for (int c = 0; c < C; ++c) {
            if (gamma.tracked())
              (*gamma.grad)[c] += go[c * P + p] * (*xhat)[c * P + p];
            if (beta.tracked()) (*beta.grad)[c] += go[c * P + p];
          }
        }
        if (x.tracked()) {
          double m1 = 0, m2 = 0;
          for (int c = 0; c < C; ++c) {
            double gg = (double)go[c * P + p] * gp[c];
            m1 += gg;
            m2 += gg * (*xhat)[c * P + p];
          }
          m1 /= C;
          m2 /= C;
          for (int c = 0; c < C; ++c) {
            double gg = (double)go[c * P + p] * gp[c];
            (*x.grad)[c * P + p] +=
                (T)((gg - m1 - (*xhat)[c * P + p] * m2) * (*isig)[p]);
          }
        }
      }
    });
  }
  return out;
}

// ---- elementwise combinations ------------------------------------------

template <typename T>
Tensor<T> hadamard(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape != b.shape) throw UsageError("hadamard: shape mismatch");
  Tensor<T> out = detail::make_out<T>(a.shape, detail::want_grad(a, b));
  int64_t n = a.numel();
  const T* ap = a.ptr();
  const T* bp = b.ptr();
  T* op = out.ptr();
  for (int64_t i = 0; i < n; ++i) op[i] = ap[i] * bp[i];
  if (out.tracked()) {
    Tape<T>::active()->record([a, b, out, n]() {
      const T* go = out.gptr();
      if (a.tracked()) {
        const T* bp = b.ptr();
        T* ga = a.grad->data();
        for (int64_t i = 0; i < n; ++i) ga[i] += go[i] * bp[i];
      }
      if (b.tracked()) {
        const T* ap = a.ptr();
        T* gb = b.grad->data();
        for (int64_t i = 0; i < n; ++i) gb[i] += go[i] * ap[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape != b.shape) throw UsageError("add: shape mismatch");
  Tensor<T> out = detail::make_out<T>(a.shape, detail::want_grad(a, b));
  int64_t n = a.numel();
  const T* ap = a.ptr();
  const T* bp = b.ptr();
  T* op = out.ptr();
  for (int64_t i = 0; i < n; ++i) op[i] = ap[i] + bp[i];
  if (out.tracked()) {
    Tape<T>::active()->record([a, b, out, n]() {
      const T* go = out.gptr();
      if (a.tracked()) {
        T* ga = a.grad->data();
        for (int64_t i = 0; i < n; ++i) ga[i] += go[i];
      }
      if (b.tracked()) {
        T* gb = b.grad->data();
        for (int64_t i = 0; i < n; ++i) gb[i] += go[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  Tensor<T> out = detail::make_out<T>(x.shape, detail::want_grad(x));
  int64_t n = x.numel();
  const T* xp = x.ptr();
  T* op = out.ptr();
  for (int64_t i = 0; i < n; ++i) op[i] = xp[i] * s;
  if (out.tracked()) {
    Tape<T>::active()->record([x, out, s, n]() {
      if (!x.tracked()) return;
      const T* go = out.gptr();
      T* gx = x.grad->data();
      for (int64_t i = 0; i < n; ++i) gx[i] += go[i] * s;
    });
  }
  return out;
}

// x is [C x ...]; adds b[c] to every position of channel c.
template <typename T>
Tensor<T> add_channel_bias(const Tensor<T>& x, const Tensor<T>& b) {
  if (x.shape.empty() || b.numel() != x.shape[0])
    throw UsageError("add_channel_bias: bias length must equal channels");
  int C = x.shape[0];
  int64_t P = x.numel() / C;
  Tensor<T> out = detail::make_out<T>(x.shape, detail::want_grad(x, b));
  const T* xp = x.ptr();
  const T* bp = b.ptr();
  T* op = out.ptr();
  for (int c = 0; c < C; ++c)
    for (int64_t p = 0; p < P; ++p) op[c * P + p] = xp[c * P + p] + bp[c];
  if (out.tracked()) {
    Tape<T>::active()->record([x, b, out, C, P]() {
      const T* go = out.gptr();
      if (x.tracked()) {
        T* gx = x.grad->data();
        int64_t n = C * P;
        for (int64_t i = 0; i < n; ++i) gx[i] += go[i];
      }
      if (b.tracked()) {
        T* gb = b.grad->data();
        for (int c = 0; c < C; ++c) {
          T acc = 0;
          for (int64_t p = 0; p < P; ++p) acc += go[c * P + p];
          gb[c] += acc;
        }
      }
    });
  }
  return out;
}

// ---- gather / structural ops -------------------------------------------

using IndexVec = std::vector<int64_t>;
using IndexPtr = std::shared_ptr<const IndexVec>;

// out.flat[i] = x.flat[idx[i]], with idx[i] == -1 reading as zero. The
// adjoint scatter-adds, so gathers encode permutations, padding, cropping,
// im2col and friends while staying differentiable.
template <typename T>
Tensor<T> gather_flat(const Tensor<T>& x, const IndexPtr& idx,
                      std::vector<int> out_shape) {
  if (!idx) throw UsageError("gather_flat: null index");
  if ((int64_t)idx->size() != shape_numel(out_shape))
    throw UsageError("gather_flat: index length != out shape");
  int64_t xn = x.numel();
  Tensor<T> out = detail::make_out<T>(std::move(out_shape),
                                      detail::want_grad(x));
  const T* xp = x.ptr();
  T* op = out.ptr();
  const int64_t* ip = idx->data();
  int64_t n = (int64_t)idx->size();
  for (int64_t i = 0; i < n; ++i) {
    int64_t j = ip[i];
    if (j >= xn) throw UsageError("gather_flat: index out of range");
    op[i] = j < 0 ? T(0) : xp[j];
  }
  if (out.tracked()) {
    Tape<T>::active()->record([x, out, idx, n]() {
      if (!x.tracked()) return;
      const T* go = out.gptr();
      T* gx = x.grad->data();
      const int64_t* ip = idx->data();
      for (int64_t i = 0; i < n; ++i)
        if (ip[i] >= 0) gx[ip[i]] += go[i];
    });
  }
  return out;
}

// Rows [r0, r1) of a [R x L] tensor, as a copy.
template <typename T>
Tensor<T> narrow_rows(const Tensor<T>& x, int r0, int r1) {
  if (x.shape.size() != 2) throw UsageError("narrow_rows: rank 2 expected");
  int R = x.shape[0], L = x.shape[1];
  if (r0 < 0 || r1 > R || r0 >= r1) throw UsageError("narrow_rows: bad range");
  Tensor<T> out = detail::make_out<T>({r1 - r0, L}, detail::want_grad(x));
  std::copy(x.ptr() + (int64_t)r0 * L, x.ptr() + (int64_t)r1 * L, out.ptr());
  if (out.tracked()) {
    Tape<T>::active()->record([x, out, r0, L]() {
      if (!x.tracked()) return;
      const T* go = out.gptr();
      T* gx = x.grad->data() + (int64_t)r0 * L;
      int64_t n = out.numel();
      for (int64_t i = 0; i < n; ++i) gx[i] += go[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat_rows(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape.size() != 2 || b.shape.size() != 2 || a.shape[1] != b.shape[1])
    throw UsageError("concat_rows: incompatible shapes");
  int L = a.shape[1];
  Tensor<T> out =
      detail::make_out<T>({a.shape[0] + b.shape[0], L}, detail::want_grad(a, b));
  std::copy(a.ptr(), a.ptr() + a.numel(), out.ptr());
  std::copy(b.ptr(), b.ptr() + b.numel(), out.ptr() + a.numel());
  if (out.tracked()) {
    Tape<T>::active()->record([a, b, out]() {
      const T* go = out.gptr();
      if (a.tracked()) {
        T* ga = a.grad->data();
        for (int64_t i = 0; i < a.numel(); ++i) ga[i] += go[i];
      }
      if (b.tracked()) {
        T* gb = b.grad->data();
        const T* gob = go + a.numel();
        for (int64_t i = 0; i < b.numel(); ++i) gb[i] += gob[i];
      }
    });
  }
  return out;
}

// Reinterpretation only: shares data and grad, so no tape entry is needed.
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, std::vector<int> shape) {
  if (shape_numel(shape) != x.numel())
    throw UsageError("reshape: element count must be preserved");
  Tensor<T> out;
  out.shape = std::move(shape);
  out.data = x.data;
  out.grad = x.grad;
  return out;
}

// ---- reductions / losses -----------------------------------------------

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  Tensor<T> out = detail::make_out<T>({1}, detail::want_grad(x));
  double acc = 0;
  const T* xp = x.ptr();
  int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) acc += xp[i];
  out.ptr()[0] = (T)acc;
  if (out.tracked()) {
    Tape<T>::active()->record([x, out, n]() {
      if (!x.tracked()) return;
      T g = out.gptr()[0];
      T* gx = x.grad->data();
      for (int64_t i = 0; i < n; ++i) gx[i] += g;
    });
  }
  return out;
}

// mean over elements of sqrt((pred - target)^2 + eps^2), fused.
template <typename T>
Tensor<T> charbonnier_loss(const Tensor<T>& pred, const Tensor<T>& target,
                           T eps) {
  if (pred.shape != target.shape)
    throw UsageError("charbonnier_loss: shape mismatch");
  if (eps <= T(0)) throw UsageError("charbonnier_loss: eps must be > 0");
  Tensor<T> out = detail::make_out<T>({1}, detail::want_grad(pred, target));
  int64_t n = pred.numel();
  const T* pp = pred.ptr();
  const T* tp = target.ptr();
  double e2 = (double)eps * (double)eps;
  double acc = 0;
  for (int64_t i = 0; i < n; ++i) {
    double d = (double)pp[i] - (double)tp[i];
    acc += std::sqrt(d * d + e2);
  }
  out.ptr()[0] = (T)(acc / n);
  if (out.tracked()) {
    Tape<T>::active()->record([pred, target, out, n, e2]() {
      double g = (double)out.gptr()[0] / n;
      const T* pp = pred.ptr();
      const T* tp = target.ptr();
      for (int64_t i = 0; i < n; ++i) {
        double d = (double)pp[i] - (double)tp[i];
        double w = g * d / std::sqrt(d * d + e2);
        if (pred.tracked()) (*pred.grad)[i] += (T)w;
        if (target.tracked()) (*target.grad)[i] -= (T)w;
      }
    });
  }
  return out;
}

template <typename T>
bool all_finite(const Tensor<T>& x) {
  const T* p = x.ptr();
  for (int64_t i = 0; i < x.numel(); ++i)
    if (!std::isfinite((double)p[i])) return false;
  return true;
}

}  // namespace sm
