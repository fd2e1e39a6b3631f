#include "facedet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace facedet {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << ")";
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d <= 0) throw std::invalid_argument("tensor dimension must be positive, got shape " + shape_str(s));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  const std::size_t n = shape_numel(shape);
  t.impl_->shape = std::move(shape);
  t.impl_->data.assign(n, 0.0);
  t.impl_->requires_grad = requires_grad;
  if (requires_grad) t.impl_->grad.assign(n, 0.0);
  return t;
}

Tensor Tensor::full(Shape shape, Scalar value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<Scalar> data, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  if (n != data.size())
    throw std::invalid_argument("data length " + std::to_string(data.size()) +
                                " does not match shape " + shape_str(shape));
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = std::move(shape);
  t.impl_->data = std::move(data);
  t.impl_->requires_grad = requires_grad;
  if (requires_grad) t.impl_->grad.assign(n, 0.0);
  return t;
}

Tensor Tensor::uniform(Shape shape, Scalar lo, Scalar hi, Rng& rng, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (auto& v : t.impl_->data) v = rng.uniform(lo, hi);
  return t;
}

Scalar Tensor::item() const {
  if (numel() != 1) throw std::invalid_argument("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

void Tensor::zero_grad() {
  if (impl_ && impl_->requires_grad) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

bool Tensor::all_finite() const {
  for (Scalar v : impl_->data)
    if (!std::isfinite(v)) return false;
  return true;
}

Tensor Tensor::clone(bool requires_grad) const {
  return from_data(impl_->shape, impl_->data, requires_grad);
}

namespace {

// ---- dense kernels ---------------------------------------------------------

// Reused per-thread scratch; each op uses a slot for the lifetime of one
// call only, so slots never alias within an op.
std::vector<Scalar>& scratch(int slot) {
  thread_local std::vector<Scalar> bufs[4];
  return bufs[static_cast<std::size_t>(slot)];
}

// C[M,N] = (Accumulate ? C : 0) + A[M,K] * B[K,N], row-major. Column tiles
// keep the C rows under work in L1 while B streams.
template <bool Accumulate>
void gemm(const Scalar* A, const Scalar* B, Scalar* C, int M, int K, int N) {
  constexpr int NB = 512;
  for (int j0 = 0; j0 < N; j0 += NB) {
    const int jn = std::min(NB, N - j0);
    int i = 0;
    for (; i + 4 <= M; i += 4) {
      const Scalar* a0 = A + static_cast<std::size_t>(i + 0) * K;
      const Scalar* a1 = A + static_cast<std::size_t>(i + 1) * K;
      const Scalar* a2 = A + static_cast<std::size_t>(i + 2) * K;
      const Scalar* a3 = A + static_cast<std::size_t>(i + 3) * K;
      Scalar* c0 = C + static_cast<std::size_t>(i + 0) * N + j0;
      Scalar* c1 = C + static_cast<std::size_t>(i + 1) * N + j0;
      Scalar* c2 = C + static_cast<std::size_t>(i + 2) * N + j0;
      Scalar* c3 = C + static_cast<std::size_t>(i + 3) * N + j0;
      if (!Accumulate) {
        std::fill(c0, c0 + jn, 0.0);
        std::fill(c1, c1 + jn, 0.0);
        std::fill(c2, c2 + jn, 0.0);
        std::fill(c3, c3 + jn, 0.0);
      }
      for (int k = 0; k < K; ++k) {
        const Scalar* b = B + static_cast<std::size_t>(k) * N + j0;
        const Scalar v0 = a0[k], v1 = a1[k], v2 = a2[k], v3 = a3[k];
        for (int j = 0; j < jn; ++j) {
          const Scalar bj = b[j];
          c0[j] += v0 * bj;
          c1[j] += v1 * bj;
          c2[j] += v2 * bj;
          c3[j] += v3 * bj;
        }
      }
    }
    for (; i < M; ++i) {
      const Scalar* a = A + static_cast<std::size_t>(i) * K;
      Scalar* c = C + static_cast<std::size_t>(i) * N + j0;
      if (!Accumulate) std::fill(c, c + jn, 0.0);
      for (int k = 0; k < K; ++k) {
        const Scalar av = a[k];
        const Scalar* b = B + static_cast<std::size_t>(k) * N + j0;
        for (int j = 0; j < jn; ++j) c[j] += av * b[j];
      }
    }
  }
}

void gemm_acc(const Scalar* A, const Scalar* B, Scalar* C, int M, int K, int N) {
  gemm<true>(A, B, C, M, K, N);
}

void gemm_set(const Scalar* A, const Scalar* B, Scalar* C, int M, int K, int N) {
  gemm<false>(A, B, C, M, K, N);
}

void transpose(const Scalar* src, Scalar* dst, int rows, int cols) {
  constexpr int TB = 32;
  for (int r0 = 0; r0 < rows; r0 += TB) {
    const int rn = std::min(TB, rows - r0);
    for (int c0 = 0; c0 < cols; c0 += TB) {
      const int cn = std::min(TB, cols - c0);
      for (int r = r0; r < r0 + rn; ++r)
        for (int c = c0; c < c0 + cn; ++c)
          dst[static_cast<std::size_t>(c) * rows + r] =
              src[static_cast<std::size_t>(r) * cols + c];
    }
  }
}

// C[M,K] += A[M,N] * B[K,N]^T. Transposing the smaller operand routes the
// shared-N reduction through the streaming kernel instead of a
// latency-bound dot product.
void gemm_abt_acc(const Scalar* A, const Scalar* B, Scalar* C, int M, int N, int K) {
  if (M <= K) {
    // D[K,M] = B * A^T, then C += D^T
    auto& at = scratch(1);
    at.resize(static_cast<std::size_t>(N) * M);
    transpose(A, at.data(), M, N);
    auto& d = scratch(2);
    d.resize(static_cast<std::size_t>(K) * M);
    gemm_set(B, at.data(), d.data(), K, N, M);
    for (int k = 0; k < K; ++k)
      for (int m = 0; m < M; ++m)
        C[static_cast<std::size_t>(m) * K + k] += d[static_cast<std::size_t>(k) * M + m];
  } else {
    auto& bt = scratch(1);
    bt.resize(static_cast<std::size_t>(N) * K);
    transpose(B, bt.data(), K, N);
    gemm_acc(A, bt.data(), C, M, N, K);
  }
}

// cols[C*k*k, Ho*Wo] from x[C,H,W], zero padded. Each (kh,kw) row splits
// into an out-of-bounds prefix, a contiguous copy, and a suffix.
void im2col(const Scalar* x, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo,
            Scalar* cols) {
  for (int c = 0; c < C; ++c) {
    for (int kh = 0; kh < k; ++kh) {
      for (int kw = 0; kw < k; ++kw) {
        Scalar* row = cols + (static_cast<std::size_t>(c) * k * k + kh * k + kw) *
                                 (static_cast<std::size_t>(Ho) * Wo);
        // valid output columns: 0 <= ow*stride - pad + kw < W
        int ow_lo = 0, ow_hi = Wo;
        if (stride == 1) {
          ow_lo = std::max(0, pad - kw);
          ow_hi = std::min(Wo, W + pad - kw);
        }
        for (int oh = 0; oh < Ho; ++oh) {
          const int ih = oh * stride - pad + kh;
          Scalar* out = row + static_cast<std::size_t>(oh) * Wo;
          if (ih < 0 || ih >= H) {
            std::fill(out, out + Wo, 0.0);
            continue;
          }
          const Scalar* in = x + (static_cast<std::size_t>(c) * H + ih) * W;
          if (stride == 1) {
            std::fill(out, out + ow_lo, 0.0);
            std::copy(in + (ow_lo - pad + kw), in + (ow_hi - pad + kw), out + ow_lo);
            std::fill(out + ow_hi, out + Wo, 0.0);
          } else {
            for (int ow = 0; ow < Wo; ++ow) {
              const int iw = ow * stride - pad + kw;
              out[ow] = (iw >= 0 && iw < W) ? in[iw] : 0.0;
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add cols back into x.
void col2im_acc(const Scalar* cols, int C, int H, int W, int k, int stride, int pad, int Ho,
                int Wo, Scalar* x) {
  for (int c = 0; c < C; ++c) {
    for (int kh = 0; kh < k; ++kh) {
      for (int kw = 0; kw < k; ++kw) {
        const Scalar* row = cols + (static_cast<std::size_t>(c) * k * k + kh * k + kw) *
                                       (static_cast<std::size_t>(Ho) * Wo);
        int ow_lo = 0, ow_hi = Wo;
        if (stride == 1) {
          ow_lo = std::max(0, pad - kw);
          ow_hi = std::min(Wo, W + pad - kw);
        }
        for (int oh = 0; oh < Ho; ++oh) {
          const int ih = oh * stride - pad + kh;
          if (ih < 0 || ih >= H) continue;
          Scalar* out = x + (static_cast<std::size_t>(c) * H + ih) * W;
          const Scalar* in = row + static_cast<std::size_t>(oh) * Wo;
          if (stride == 1) {
            Scalar* dst = out + (ow_lo - pad + kw);
            for (int ow = ow_lo; ow < ow_hi; ++ow) dst[ow - ow_lo] += in[ow];
          } else {
            for (int ow = 0; ow < Wo; ++ow) {
              const int iw = ow * stride - pad + kw;
              if (iw >= 0 && iw < W) out[iw] += in[ow];
            }
          }
        }
      }
    }
  }
}

struct ConvDims {
  int n, c, h, w;
  bool batched;
};

ConvDims as_nchw(const Tensor& x, const char* op) {
  if (x.ndim() == 3) return {1, x.dim(0), x.dim(1), x.dim(2), false};
  if (x.ndim() == 4) return {x.dim(0), x.dim(1), x.dim(2), x.dim(3), true};
  throw std::invalid_argument(std::string(op) + ": expected 3D or 4D input, got " +
                              shape_str(x.shape()));
}

bool any_grad(std::initializer_list<const Tensor*> ts) {
  for (const Tensor* t : ts)
    if (t->requires_grad()) return true;
  return false;
}

}  // namespace

// ---- conv2d ----------------------------------------------------------------

Tensor Tape::conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  const ConvDims d = as_nchw(x, "conv2d");
  if (w.ndim() != 4)
    throw std::invalid_argument("conv2d: weight must be 4D [C_out,C_in,k,k], got " +
                                shape_str(w.shape()));
  const int Cout = w.dim(0), Cin = w.dim(1), k = w.dim(2);
  if (w.dim(3) != k) throw std::invalid_argument("conv2d: kernel must be square, got " + shape_str(w.shape()));
  if (k < 1) throw std::invalid_argument("conv2d: kernel size must be >= 1");
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  if (d.c != Cin)
    throw std::invalid_argument("conv2d: input channels " + std::to_string(d.c) +
                                " do not match weight C_in " + std::to_string(Cin) +
                                " (input " + shape_str(x.shape()) + ", weight " +
                                shape_str(w.shape()) + ")");
  if (b.ndim() != 1 || b.dim(0) != Cout)
    throw std::invalid_argument("conv2d: bias must have shape (" + std::to_string(Cout) + ")");
  if (d.h + 2 * pad < k || d.w + 2 * pad < k)
    throw std::invalid_argument("conv2d: kernel " + std::to_string(k) +
                                " exceeds padded input " + shape_str(x.shape()));

  const int Ho = (d.h + 2 * pad - k) / stride + 1;
  const int Wo = (d.w + 2 * pad - k) / stride + 1;
  const int K = Cin * k * k;
  const std::size_t spatial = static_cast<std::size_t>(Ho) * Wo;
  const bool pointwise = k == 1 && stride == 1 && pad == 0;

  const bool needs_grad = any_grad({&x, &w, &b});
  Shape out_shape = d.batched ? Shape{d.n, Cout, Ho, Wo} : Shape{Cout, Ho, Wo};
  Tensor out = make_output(std::move(out_shape), needs_grad);

  const std::size_t in_img = static_cast<std::size_t>(d.c) * d.h * d.w;
  const std::size_t out_img = static_cast<std::size_t>(Cout) * spatial;
  for (int n = 0; n < d.n; ++n) {
    const Scalar* in = x.data() + n * in_img;
    const Scalar* patches = in;  // 1x1 stride-1: the input already is the patch matrix
    if (!pointwise) {
      auto& cols = scratch(0);
      cols.resize(static_cast<std::size_t>(K) * spatial);
      im2col(in, d.c, d.h, d.w, k, stride, pad, Ho, Wo, cols.data());
      patches = cols.data();
    }
    Scalar* o = out.data() + n * out_img;
    gemm_set(w.data(), patches, o, Cout, K, static_cast<int>(spatial));
    for (int co = 0; co < Cout; ++co) {
      const Scalar bias = b.data()[co];
      Scalar* oc = o + static_cast<std::size_t>(co) * spatial;
      for (std::size_t j = 0; j < spatial; ++j) oc[j] += bias;
    }
  }

  if (recording_ && needs_grad) {
    ConvDims dd = d;
    push_node([x, w, b, out, dd, stride, pad, k, Cin, Cout, Ho, Wo, pointwise]() {
      const int K = Cin * k * k;
      const std::size_t spatial = static_cast<std::size_t>(Ho) * Wo;
      const std::size_t in_img = static_cast<std::size_t>(dd.c) * dd.h * dd.w;
      const std::size_t out_img = static_cast<std::size_t>(Cout) * spatial;
      Tensor xg = x, wg = w, bg = b;  // aliasing handles
      auto& wt = scratch(3);
      if (xg.requires_grad()) {
        wt.resize(static_cast<std::size_t>(K) * Cout);
        transpose(w.data(), wt.data(), Cout, K);
      }
      for (int n = 0; n < dd.n; ++n) {
        const Scalar* go = out.grad() + n * out_img;
        if (bg.requires_grad()) {
          for (int co = 0; co < Cout; ++co) {
            Scalar s = 0;
            const Scalar* g = go + static_cast<std::size_t>(co) * spatial;
            for (std::size_t j = 0; j < spatial; ++j) s += g[j];
            bg.grad()[co] += s;
          }
        }
        if (wg.requires_grad()) {
          const Scalar* patches = x.data() + n * in_img;
          if (!pointwise) {
            auto& cols = scratch(0);
            cols.resize(static_cast<std::size_t>(K) * spatial);
            im2col(x.data() + n * in_img, dd.c, dd.h, dd.w, k, stride, pad, Ho, Wo, cols.data());
            patches = cols.data();
          }
          gemm_abt_acc(go, patches, wg.grad(), Cout, static_cast<int>(spatial), K);
        }
        if (xg.requires_grad()) {
          if (pointwise) {
            gemm_acc(wt.data(), go, xg.grad() + n * in_img, K, Cout, static_cast<int>(spatial));
          } else {
            auto& gcols = scratch(0);
            gcols.resize(static_cast<std::size_t>(K) * spatial);
            gemm_set(wt.data(), go, gcols.data(), K, Cout, static_cast<int>(spatial));
            col2im_acc(gcols.data(), dd.c, dd.h, dd.w, k, stride, pad, Ho, Wo,
                       xg.grad() + n * in_img);
          }
        }
      }
    });
  }
  return out;
}

// ---- conv_transpose2d ------------------------------------------------------

Tensor Tape::conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
                              int pad) {
  const ConvDims d = as_nchw(x, "conv_transpose2d");
  if (w.ndim() != 4)
    throw std::invalid_argument("conv_transpose2d: weight must be 4D [C_in,C_out,k,k], got " +
                                shape_str(w.shape()));
  const int Cin = w.dim(0), Cout = w.dim(1), k = w.dim(2);
  if (w.dim(3) != k)
    throw std::invalid_argument("conv_transpose2d: kernel must be square, got " + shape_str(w.shape()));
  if (stride < 1) throw std::invalid_argument("conv_transpose2d: stride must be >= 1");
  if (d.c != Cin)
    throw std::invalid_argument("conv_transpose2d: input channels " + std::to_string(d.c) +
                                " do not match weight C_in " + std::to_string(Cin));
  if (b.ndim() != 1 || b.dim(0) != Cout)
    throw std::invalid_argument("conv_transpose2d: bias must have shape (" + std::to_string(Cout) + ")");

  const int Ho = (d.h - 1) * stride - 2 * pad + k;
  const int Wo = (d.w - 1) * stride - 2 * pad + k;
  if (Ho <= 0 || Wo <= 0)
    throw std::invalid_argument("conv_transpose2d: configuration yields non-positive output size " +
                                std::to_string(Ho) + "x" + std::to_string(Wo));

  const int K = Cout * k * k;
  const std::size_t in_spatial = static_cast<std::size_t>(d.h) * d.w;
  const std::size_t in_img = static_cast<std::size_t>(Cin) * in_spatial;
  const std::size_t out_spatial = static_cast<std::size_t>(Ho) * Wo;
  const std::size_t out_img = static_cast<std::size_t>(Cout) * out_spatial;

  const bool needs_grad = any_grad({&x, &w, &b});
  Shape out_shape = d.batched ? Shape{d.n, Cout, Ho, Wo} : Shape{Cout, Ho, Wo};
  Tensor out = make_output(std::move(out_shape), needs_grad);

  // w viewed as [Cin, K]; cols = w^T @ x, then the im2col adjoint (with the
  // roles of input and output swapped) scatters cols into the upsampled map.
  auto& wt = scratch(3);
  wt.resize(static_cast<std::size_t>(K) * Cin);
  transpose(w.data(), wt.data(), Cin, K);
  for (int n = 0; n < d.n; ++n) {
    auto& cols = scratch(0);
    cols.resize(static_cast<std::size_t>(K) * in_spatial);
    gemm_set(wt.data(), x.data() + n * in_img, cols.data(), K, Cin, static_cast<int>(in_spatial));
    Scalar* o = out.data() + n * out_img;
    col2im_acc(cols.data(), Cout, Ho, Wo, k, stride, pad, d.h, d.w, o);
    for (int co = 0; co < Cout; ++co) {
      const Scalar bias = b.data()[co];
      Scalar* oc = o + static_cast<std::size_t>(co) * out_spatial;
      for (std::size_t j = 0; j < out_spatial; ++j) oc[j] += bias;
    }
  }

  if (recording_ && needs_grad) {
    ConvDims dd = d;
    push_node([x, w, b, out, dd, stride, pad, k, Cin, Cout, Ho, Wo]() {
      const int K = Cout * k * k;
      const std::size_t in_spatial = static_cast<std::size_t>(dd.h) * dd.w;
      const std::size_t in_img = static_cast<std::size_t>(Cin) * in_spatial;
      const std::size_t out_spatial = static_cast<std::size_t>(Ho) * Wo;
      const std::size_t out_img = static_cast<std::size_t>(Cout) * out_spatial;
      Tensor xg = x, wg = w, bg = b;
      for (int n = 0; n < dd.n; ++n) {
        const Scalar* go = out.grad() + n * out_img;
        if (bg.requires_grad()) {
          for (int co = 0; co < Cout; ++co) {
            Scalar s = 0;
            const Scalar* g = go + static_cast<std::size_t>(co) * out_spatial;
            for (std::size_t j = 0; j < out_spatial; ++j) s += g[j];
            bg.grad()[co] += s;
          }
        }
        // Both remaining grads read the same patch matrix of the output grad.
        auto& gcols = scratch(0);
        gcols.resize(static_cast<std::size_t>(K) * in_spatial);
        im2col(go, Cout, Ho, Wo, k, stride, pad, dd.h, dd.w, gcols.data());
        if (xg.requires_grad()) {
          // gx = w @ gcols, w viewed as [Cin, K]
          gemm_acc(w.data(), gcols.data(), xg.grad() + n * in_img, Cin, K,
                   static_cast<int>(in_spatial));
        }
        if (wg.requires_grad()) {
          // gw[Cin, K] += x_flat @ gcols^T
          gemm_abt_acc(x.data() + n * in_img, gcols.data(), wg.grad(), Cin,
                       static_cast<int>(in_spatial), K);
        }
      }
    });
  }
  return out;
}

// ---- maxpool2d ---------------------------------------------------------------

Tensor Tape::maxpool2d(const Tensor& x, int k, int stride) {
  const ConvDims d = as_nchw(x, "maxpool2d");
  if (k < 1 || stride < 1) throw std::invalid_argument("maxpool2d: k and stride must be >= 1");
  if (k > d.h || k > d.w)
    throw std::invalid_argument("maxpool2d: window " + std::to_string(k) + " exceeds input " +
                                shape_str(x.shape()));
  const int Ho = (d.h - k) / stride + 1;
  const int Wo = (d.w - k) / stride + 1;
  const std::size_t in_img = static_cast<std::size_t>(d.c) * d.h * d.w;
  const std::size_t out_img = static_cast<std::size_t>(d.c) * Ho * Wo;

  const bool needs_grad = x.requires_grad();
  Shape out_shape = d.batched ? Shape{d.n, d.c, Ho, Wo} : Shape{d.c, Ho, Wo};
  Tensor out = make_output(std::move(out_shape), needs_grad);

  auto argmax = std::make_shared<std::vector<std::size_t>>();
  if (recording_ && needs_grad) argmax->resize(static_cast<std::size_t>(d.n) * out_img);

  for (int n = 0; n < d.n; ++n) {
    const Scalar* in = x.data() + n * in_img;
    Scalar* o = out.data() + n * out_img;
    for (int c = 0; c < d.c; ++c) {
      const Scalar* plane = in + static_cast<std::size_t>(c) * d.h * d.w;
      for (int oh = 0; oh < Ho; ++oh) {
        for (int ow = 0; ow < Wo; ++ow) {
          Scalar best = -std::numeric_limits<Scalar>::infinity();
          std::size_t best_idx = 0;
          for (int kh = 0; kh < k; ++kh) {
            const int ih = oh * stride + kh;
            for (int kw = 0; kw < k; ++kw) {
              const int iw = ow * stride + kw;
              const std::size_t idx = static_cast<std::size_t>(ih) * d.w + iw;
              if (plane[idx] > best) {  // strict: ties keep the lowest flat index
                best = plane[idx];
                best_idx = idx;
              }
            }
          }
          const std::size_t oidx =
              (static_cast<std::size_t>(c) * Ho + oh) * Wo + ow;
          o[oidx] = best;
          if (recording_ && needs_grad)
            (*argmax)[n * out_img + oidx] = static_cast<std::size_t>(c) * d.h * d.w + best_idx;
        }
      }
    }
  }

  if (recording_ && needs_grad) {
    ConvDims dd = d;
    push_node([x, out, argmax, dd, Ho, Wo]() {
      const std::size_t in_img = static_cast<std::size_t>(dd.c) * dd.h * dd.w;
      const std::size_t out_img = static_cast<std::size_t>(dd.c) * Ho * Wo;
      Tensor xg = x;
      for (int n = 0; n < dd.n; ++n) {
        const Scalar* go = out.grad() + n * out_img;
        Scalar* gx = xg.grad() + n * in_img;
        for (std::size_t j = 0; j < out_img; ++j) gx[(*argmax)[n * out_img + j]] += go[j];
      }
    });
  }
  return out;
}

// ---- elementwise -------------------------------------------------------------

namespace {
void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}
}  // namespace

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const bool needs_grad = any_grad({&a, &b});
  Tensor out = make_output(a.shape(), needs_grad);
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  if (recording_ && needs_grad) {
    push_node([a, b, out, n]() {
      Tensor ag = a, bg = b;
      if (ag.requires_grad())
        for (std::size_t i = 0; i < n; ++i) ag.grad()[i] += out.grad()[i];
      if (bg.requires_grad())
        for (std::size_t i = 0; i < n; ++i) bg.grad()[i] += out.grad()[i];
    });
  }
  return out;
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const bool needs_grad = any_grad({&a, &b});
  Tensor out = make_output(a.shape(), needs_grad);
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (recording_ && needs_grad) {
    push_node([a, b, out, n]() {
      Tensor ag = a, bg = b;
      if (ag.requires_grad())
        for (std::size_t i = 0; i < n; ++i) ag.grad()[i] += out.grad()[i] * b.data()[i];
      if (bg.requires_grad())
        for (std::size_t i = 0; i < n; ++i) bg.grad()[i] += out.grad()[i] * a.data()[i];
    });
  }
  return out;
}

Tensor Tape::relu(const Tensor& x) {
  const bool needs_grad = x.requires_grad();
  Tensor out = make_output(x.shape(), needs_grad);
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] > 0 ? x.data()[i] : 0.0;
  if (recording_ && needs_grad) {
    push_node([x, out, n]() {
      Tensor xg = x;
      for (std::size_t i = 0; i < n; ++i)
        if (x.data()[i] > 0) xg.grad()[i] += out.grad()[i];
    });
  }
  return out;
}

Scalar stable_sigmoid(Scalar z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const Scalar e = std::exp(z);
  return e / (1.0 + e);
}

Scalar softplus(Scalar x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

Tensor Tape::sigmoid(const Tensor& x) {
  const bool needs_grad = x.requires_grad();
  Tensor out = make_output(x.shape(), needs_grad);
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = stable_sigmoid(x.data()[i]);
  if (recording_ && needs_grad) {
    push_node([x, out, n]() {
      Tensor xg = x;
      for (std::size_t i = 0; i < n; ++i) {
        const Scalar s = out.data()[i];
        xg.grad()[i] += out.grad()[i] * s * (1.0 - s);
      }
    });
  }
  return out;
}

Tensor Tape::sum(const Tensor& x) {
  const bool needs_grad = x.requires_grad();
  Tensor out = make_output({1}, needs_grad);
  Scalar s = 0;
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) s += x.data()[i];
  out.data()[0] = s;
  if (recording_ && needs_grad) {
    push_node([x, out, n]() {
      Tensor xg = x;
      const Scalar g = out.grad()[0];
      for (std::size_t i = 0; i < n; ++i) xg.grad()[i] += g;
    });
  }
  return out;
}

Tensor Tape::scale(const Tensor& x, Scalar c) {
  const bool needs_grad = x.requires_grad();
  Tensor out = make_output(x.shape(), needs_grad);
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = c * x.data()[i];
  if (recording_ && needs_grad) {
    push_node([x, out, n, c]() {
      Tensor xg = x;
      for (std::size_t i = 0; i < n; ++i) xg.grad()[i] += c * out.grad()[i];
    });
  }
  return out;
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be a scalar tensor");
  if (!loss.requires_grad())
    throw std::invalid_argument("backward: loss does not depend on any requires_grad tensor");
  Tensor l = loss;
  l.grad()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

// ---- optimizer ---------------------------------------------------------------

void OptimizerState::step(std::vector<Tensor>& params) {
  if (velocity.size() != params.size()) velocity.resize(params.size());
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& t = params[p];
    if (!t.requires_grad()) continue;
    auto& v = velocity[p];
    if (v.size() != t.numel()) v.assign(t.numel(), 0.0);
    Scalar* data = t.data();
    const Scalar* grad = t.grad();
    for (std::size_t i = 0; i < t.numel(); ++i) {
      v[i] = momentum * v[i] + grad[i] + weight_decay * data[i];
      data[i] -= learning_rate * v[i];
    }
  }
}

// ---- gradient checking ---------------------------------------------------------

Scalar finite_diff_max_rel_error(const std::function<Tensor(Tape&)>& forward,
                                 std::vector<Tensor> inputs, Scalar eps) {
  if (eps <= 0) throw std::invalid_argument("finite_diff_max_rel_error: eps must be positive");
  std::vector<std::vector<Scalar>> analytic;
  {
    Tape tape;
    Tensor loss = forward(tape);
    for (auto& t : inputs) t.zero_grad();
    tape.backward(loss);
    for (auto& t : inputs) analytic.push_back(t.grad_values());
  }
  auto eval = [&]() {
    Tape tape;
    return forward(tape).item();
  };
  Scalar worst = 0;
  for (std::size_t p = 0; p < inputs.size(); ++p) {
    Tensor& t = inputs[p];
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const Scalar saved = t.data()[i];
      t.data()[i] = saved + eps;
      const Scalar up = eval();
      t.data()[i] = saved - eps;
      const Scalar dn = eval();
      t.data()[i] = saved;
      const Scalar fd = (up - dn) / (2 * eps);
      const Scalar a = analytic[p][i];
      const Scalar denom = std::max(1e-8, std::abs(a) + std::abs(fd));
      worst = std::max(worst, std::abs(a - fd) / denom);
    }
  }
  return worst;
}

}  // namespace facedet
