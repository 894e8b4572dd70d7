#include "psal/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "psal/error.hpp"

namespace psal {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

using detail::grad_of;
using detail::make_result;
using detail::Node;

struct Geometry {
  std::size_t channels, height, width;  // the "image" side of im2col
  std::size_t kh, kw, stride, padding;
  std::size_t out_h, out_w;             // the "column" side
  std::size_t rows() const { return channels * kh * kw; }
  std::size_t cols() const { return out_h * out_w; }
};

void im2col(const double* image, const Geometry& g, double* col) {
  const auto cols = g.cols();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        double* row = col + ((c * g.kh + ki) * g.kw + kj) * cols;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride + ki) - static_cast<std::ptrdiff_t>(g.padding);
          double* dst = row + oh * g.out_w;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill(dst, dst + g.out_w, 0.0);
            continue;
          }
          const double* src = image + (c * g.height + static_cast<std::size_t>(ih)) * g.width;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const auto iw = static_cast<std::ptrdiff_t>(ow * g.stride + kj) - static_cast<std::ptrdiff_t>(g.padding);
            dst[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.width)) ? 0.0 : src[iw];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds columns back into the image.
void col2im(const double* col, const Geometry& g, double* image) {
  const auto cols = g.cols();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const double* row = col + ((c * g.kh + ki) * g.kw + kj) * cols;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride + ki) - static_cast<std::ptrdiff_t>(g.padding);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.height)) continue;
          double* dst = image + (c * g.height + static_cast<std::size_t>(ih)) * g.width;
          const double* src = row + oh * g.out_w;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const auto iw = static_cast<std::ptrdiff_t>(ow * g.stride + kj) - static_cast<std::ptrdiff_t>(g.padding);
            if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(g.width)) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank)
    throw DimensionError(std::string(what) + " expects rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

template <class Fwd, class Bwd>
Tensor unary(const Tensor& a, Fwd fwd, Bwd dfdx) {
  Buffer out(a.numel());
  const auto& x = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x[i]);
  auto res = make_result(a.shape(), std::move(out), {a});
  if (res.requires_grad()) {
    Node* self = res.node().get();
    Node* in = a.node().get();
    self->backward = [self, in, dfdx] {
      auto& g = grad_of(*in);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self->grad[i] * dfdx(in->value[i], self->value[i]);
    };
  }
  return res;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  require_rank(input, 4, "conv2d input");
  require_rank(kernel, 4, "conv2d kernel");
  if (stride < 1) throw ParameterError("conv2d: stride must be >= 1");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t f = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kernel.dim(1) != c)
    throw DimensionError("conv2d: kernel " + shape_str(kernel.shape()) + " does not match input channels " +
                         shape_str(input.shape()));
  if (bias.numel() != f) throw DimensionError("conv2d: bias must have " + std::to_string(f) + " entries");
  if (kh > h + 2 * padding || kw > w + 2 * padding)
    throw DimensionError("conv2d: kernel larger than padded input " + shape_str(input.shape()));

  Geometry g{c, h, w, kh, kw, stride, padding, (h + 2 * padding - kh) / stride + 1, (w + 2 * padding - kw) / stride + 1};
  const bool record = grad_enabled() && (input.requires_grad() || kernel.requires_grad() || bias.requires_grad());

  Buffer out(n * f * g.cols());
  auto cols = std::make_shared<Buffer>(record ? n * g.rows() * g.cols() : g.rows() * g.cols());
  ConstMatMap k(kernel.data().data(), f, g.rows());
  for (std::size_t i = 0; i < n; ++i) {
    double* col = cols->data() + (record ? i * g.rows() * g.cols() : 0);
    im2col(input.data().data() + i * c * h * w, g, col);
    MatMap o(out.data() + i * f * g.cols(), f, g.cols());
    o.noalias() = k * ConstMatMap(col, g.rows(), g.cols());
    for (std::size_t ch = 0; ch < f; ++ch) o.row(ch).array() += bias.data()[ch];
  }

  auto res = make_result({n, f, g.out_h, g.out_w}, std::move(out), {input, kernel, bias});
  if (res.requires_grad()) {
    Node* self = res.node().get();
    Node* in = input.node().get();
    Node* ker = kernel.node().get();
    Node* b = bias.node().get();
    self->backward = [self, in, ker, b, g, n, f, cols] {
      const std::size_t in_size = g.channels * g.height * g.width;
      ConstMatMap k(ker->value.data(), f, g.rows());
      RowMat dcol(g.rows(), g.cols());
      for (std::size_t i = 0; i < n; ++i) {
        ConstMatMap dout(self->grad.data() + i * f * g.cols(), f, g.cols());
        ConstMatMap col(cols->data() + i * g.rows() * g.cols(), g.rows(), g.cols());
        if (ker->requires_grad) MatMap(grad_of(*ker).data(), f, g.rows()).noalias() += dout * col.transpose();
        if (b->requires_grad) {
          auto& gb = grad_of(*b);
          for (std::size_t ch = 0; ch < f; ++ch) gb[ch] += dout.row(ch).sum();
        }
        if (in->requires_grad) {
          dcol.noalias() = k.transpose() * dout;
          col2im(dcol.data(), g, grad_of(*in).data() + i * in_size);
        }
      }
    };
  }
  return res;
}

Tensor deconv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t stride,
                std::size_t padding) {
  require_rank(input, 4, "deconv2d input");
  require_rank(kernel, 4, "deconv2d kernel");
  if (stride < 1) throw ParameterError("deconv2d: stride must be >= 1");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t f = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kernel.dim(0) != c)
    throw DimensionError("deconv2d: kernel " + shape_str(kernel.shape()) + " does not match input channels " +
                         shape_str(input.shape()));
  if (bias.numel() != f) throw DimensionError("deconv2d: bias must have " + std::to_string(f) + " entries");
  const auto full_h = static_cast<std::ptrdiff_t>((h - 1) * stride + kh);
  const auto full_w = static_cast<std::ptrdiff_t>((w - 1) * stride + kw);
  const auto pad2 = static_cast<std::ptrdiff_t>(2 * padding);
  if (full_h - pad2 <= 0 || full_w - pad2 <= 0)
    throw DimensionError("deconv2d: geometry gives non-positive output for input " + shape_str(input.shape()));
  const auto out_h = static_cast<std::size_t>(full_h - pad2), out_w = static_cast<std::size_t>(full_w - pad2);

  // The output plays the image role of im2col; the input positions are the columns.
  Geometry g{f, out_h, out_w, kh, kw, stride, padding, h, w};
  Buffer out(n * f * out_h * out_w, 0.0);
  ConstMatMap k(kernel.data().data(), c, g.rows());
  RowMat col(g.rows(), g.cols());
  for (std::size_t i = 0; i < n; ++i) {
    col.noalias() = k.transpose() * ConstMatMap(input.data().data() + i * c * h * w, c, h * w);
    double* o = out.data() + i * f * out_h * out_w;
    col2im(col.data(), g, o);
    for (std::size_t ch = 0; ch < f; ++ch)
      for (std::size_t p = 0; p < out_h * out_w; ++p) o[ch * out_h * out_w + p] += bias.data()[ch];
  }

  auto res = make_result({n, f, out_h, out_w}, std::move(out), {input, kernel, bias});
  if (res.requires_grad()) {
    Node* self = res.node().get();
    Node* in = input.node().get();
    Node* ker = kernel.node().get();
    Node* b = bias.node().get();
    self->backward = [self, in, ker, b, g, n, c] {
      const std::size_t out_size = g.channels * g.height * g.width;
      const std::size_t in_size = c * g.cols();
      ConstMatMap k(ker->value.data(), c, g.rows());
      RowMat dcol(g.rows(), g.cols());
      for (std::size_t i = 0; i < n; ++i) {
        const double* dout = self->grad.data() + i * out_size;
        if (b->requires_grad) {
          auto& gb = grad_of(*b);
          const std::size_t plane = g.height * g.width;
          for (std::size_t ch = 0; ch < g.channels; ++ch)
            for (std::size_t p = 0; p < plane; ++p) gb[ch] += dout[ch * plane + p];
        }
        if (!in->requires_grad && !ker->requires_grad) continue;
        im2col(dout, g, dcol.data());
        if (in->requires_grad) MatMap(grad_of(*in).data() + i * in_size, c, g.cols()).noalias() += k * dcol;
        if (ker->requires_grad)
          MatMap(grad_of(*ker).data(), c, g.rows()).noalias() +=
              ConstMatMap(in->value.data() + i * in_size, c, g.cols()) * dcol.transpose();
      }
    };
  }
  return res;
}

Tensor maxpool2d(const Tensor& input, std::size_t window) {
  require_rank(input, 4, "maxpool2d input");
  if (window < 1) throw ParameterError("maxpool2d: window must be >= 1");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h % window || w % window)
    throw DimensionError("maxpool2d: " + shape_str(input.shape()) + " not divisible by window " +
                         std::to_string(window));
  const std::size_t oh = h / window, ow = w / window;
  Buffer out(n * c * oh * ow);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  const auto& x = input.values();
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t best = plane * h * w + i * window * w + j * window;
        for (std::size_t di = 0; di < window; ++di)
          for (std::size_t dj = 0; dj < window; ++dj) {
            const std::size_t idx = plane * h * w + (i * window + di) * w + j * window + dj;
            if (x[idx] > x[best]) best = idx;
          }
        const std::size_t o = (plane * oh + i) * ow + j;
        out[o] = x[best];
        (*argmax)[o] = best;
      }
    }
  }
  auto res = make_result({n, c, oh, ow}, std::move(out), {input});
  if (res.requires_grad()) {
    Node* self = res.node().get();
    Node* in = input.node().get();
    self->backward = [self, in, argmax] {
      auto& g = grad_of(*in);
      for (std::size_t o = 0; o < argmax->size(); ++o) g[(*argmax)[o]] += self->grad[o];
    };
  }
  return res;
}

Tensor batchnorm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta, Mode mode, BatchNormState* state,
                   double momentum, double eps) {
  require_rank(input, 4, "batchnorm2d input");
  const std::size_t n = input.dim(0), c = input.dim(1), plane = input.dim(2) * input.dim(3);
  if (gamma.numel() != c || beta.numel() != c)
    throw DimensionError("batchnorm2d: gamma/beta must have " + std::to_string(c) + " entries");
  const std::size_t m = n * plane;
  if (mode == Mode::Train && m < 2)
    throw UsageError("batchnorm2d: train mode needs at least 2 values per channel, got " + shape_str(input.shape()));
  if (mode == Mode::Eval && state == nullptr) throw UsageError("batchnorm2d: eval mode needs running statistics");

  const auto& x = input.values();
  Buffer mu(c), inv_std(c);
  if (mode == Mode::Train) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < plane; ++p) s += x[(i * c + ch) * plane + p];
      const double mean = s / static_cast<double>(m);
      double v = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < plane; ++p) {
          const double d = x[(i * c + ch) * plane + p] - mean;
          v += d * d;
        }
      const double var = v / static_cast<double>(m);
      mu[ch] = mean;
      inv_std[ch] = 1.0 / std::sqrt(var + eps);
      if (state) {
        auto rm = state->running_mean.data();
        auto rv = state->running_var.data();
        rm[ch] = momentum * rm[ch] + (1.0 - momentum) * mean;
        // Unbiased estimate for the running variance; with very few values per
        // channel the biased one would make eval outputs systematically wider.
        rv[ch] = momentum * rv[ch] + (1.0 - momentum) * (v / static_cast<double>(m - 1));
      }
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mu[ch] = state->running_mean.data()[ch];
      inv_std[ch] = 1.0 / std::sqrt(state->running_var.data()[ch] + eps);
    }
  }

  auto xhat = std::make_shared<Buffer>(x.size());
  Buffer out(x.size());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < plane; ++p) {
        const std::size_t idx = (i * c + ch) * plane + p;
        (*xhat)[idx] = (x[idx] - mu[ch]) * inv_std[ch];
        out[idx] = gamma.data()[ch] * (*xhat)[idx] + beta.data()[ch];
      }

  auto res = make_result(input.shape(), std::move(out), {input, gamma, beta});
  if (res.requires_grad()) {
    Node* self = res.node().get();
    Node* in = input.node().get();
    Node* gm = gamma.node().get();
    Node* bt = beta.node().get();
    const bool batch_stats = mode == Mode::Train;
    self->backward = [self, in, gm, bt, xhat, inv_std, n, c, plane, m, batch_stats] {
      const auto& dy = self->grad;
      for (std::size_t ch = 0; ch < c; ++ch) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t p = 0; p < plane; ++p) {
            const std::size_t idx = (i * c + ch) * plane + p;
            sum_dy += dy[idx];
            sum_dy_xhat += dy[idx] * (*xhat)[idx];
          }
        if (gm->requires_grad) grad_of(*gm)[ch] += sum_dy_xhat;
        if (bt->requires_grad) grad_of(*bt)[ch] += sum_dy;
        if (!in->requires_grad) continue;
        auto& gx = grad_of(*in);
        const double g = gm->value[ch];
        const double md = static_cast<double>(m);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t p = 0; p < plane; ++p) {
            const std::size_t idx = (i * c + ch) * plane + p;
            if (batch_stats)
              gx[idx] += g * inv_std[ch] / md * (md * dy[idx] - sum_dy - (*xhat)[idx] * sum_dy_xhat);
            else
              gx[idx] += g * inv_std[ch] * dy[idx];
          }
      }
    };
  }
  return res;
}

Tensor dropout(const Tensor& input, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ParameterError("dropout: rate must be in [0, 1), got " + std::to_string(rate));
  if (mode == Mode::Eval || rate == 0.0) return unary(input, [](double v) { return v; }, [](double, double) { return 1.0; });
  const double keep_scale = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<Buffer>(input.numel());
  for (auto& v : *mask) v = rng.uniform() < rate ? 0.0 : keep_scale;
  Buffer out(input.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = input.values()[i] * (*mask)[i];
  auto res = make_result(input.shape(), std::move(out), {input});
  if (res.requires_grad()) {
    Node* self = res.node().get();
    Node* in = input.node().get();
    self->backward = [self, in, mask] {
      auto& g = grad_of(*in);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self->grad[i] * (*mask)[i];
    };
  }
  return res;
}

Tensor activation(const Tensor& input, Activation kind) {
  switch (kind) {
    case Activation::Relu:
      return unary(input, [](double v) { return v > 0.0 ? v : 0.0; },
                   [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
    case Activation::Tanh:
      return unary(input, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
    case Activation::Sigmoid:
      return unary(
          input,
          [](double v) {
            if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
            const double e = std::exp(v);
            return e / (1.0 + e);
          },
          [](double, double y) { return y * (1.0 - y); });
  }
  throw UsageError("activation: unknown kind");
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_rank(a, 4, "concat_channels");
  require_rank(b, 4, "concat_channels");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
    throw DimensionError("concat_channels: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), plane = a.dim(2) * a.dim(3);
  Buffer out(n * (ca + cb) * plane);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.data().data() + i * ca * plane, ca * plane, out.data() + i * (ca + cb) * plane);
    std::copy_n(b.data().data() + i * cb * plane, cb * plane, out.data() + (i * (ca + cb) + ca) * plane);
  }
  auto res = make_result({n, ca + cb, a.dim(2), a.dim(3)}, std::move(out), {a, b});
  if (res.requires_grad()) {
    Node* self = res.node().get();
    Node* na = a.node().get();
    Node* nb = b.node().get();
    self->backward = [self, na, nb, n, ca, cb, plane] {
      for (std::size_t i = 0; i < n; ++i) {
        const double* g = self->grad.data() + i * (ca + cb) * plane;
        if (na->requires_grad) {
          double* d = grad_of(*na).data() + i * ca * plane;
          for (std::size_t k = 0; k < ca * plane; ++k) d[k] += g[k];
        }
        if (nb->requires_grad) {
          double* d = grad_of(*nb).data() + i * cb * plane;
          for (std::size_t k = 0; k < cb * plane; ++k) d[k] += g[ca * plane + k];
        }
      }
    };
  }
  return res;
}

Tensor slice_channels(const Tensor& input, std::size_t begin, std::size_t end) {
  require_rank(input, 4, "slice_channels");
  if (begin >= end || end > input.dim(1))
    throw DimensionError("slice_channels: bad range [" + std::to_string(begin) + "," + std::to_string(end) + ")");
  const std::size_t n = input.dim(0), c = input.dim(1), k = end - begin, plane = input.dim(2) * input.dim(3);
  Buffer out(n * k * plane);
  for (std::size_t i = 0; i < n; ++i)
    std::copy_n(input.data().data() + (i * c + begin) * plane, k * plane, out.data() + i * k * plane);
  auto res = make_result({n, k, input.dim(2), input.dim(3)}, std::move(out), {input});
  if (res.requires_grad()) {
    Node* self = res.node().get();
    Node* in = input.node().get();
    self->backward = [self, in, n, c, k, begin, plane] {
      auto& g = grad_of(*in);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k * plane; ++j) g[(i * c + begin) * plane + j] += self->grad[i * k * plane + j];
    };
  }
  return res;
}

namespace {

template <class Fwd, class Da, class Db>
Tensor binary(const Tensor& a, const Tensor& b, const char* what, Fwd fwd, Da dfa, Db dfb) {
  require_same_shape(a, b, what);
  Buffer out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(a.values()[i], b.values()[i]);
  auto res = make_result(a.shape(), std::move(out), {a, b});
  if (res.requires_grad()) {
    Node* self = res.node().get();
    Node* na = a.node().get();
    Node* nb = b.node().get();
    self->backward = [self, na, nb, dfa, dfb] {
      if (na->requires_grad) {
        auto& g = grad_of(*na);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self->grad[i] * dfa(na->value[i], nb->value[i]);
      }
      if (nb->requires_grad) {
        auto& g = grad_of(*nb);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self->grad[i] * dfb(na->value[i], nb->value[i]);
      }
    };
  }
  return res;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(a, [factor](double v) { return factor * v; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary(a, [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Tensor abs(const Tensor& a) {
  return unary(a, [](double v) { return std::fabs(v); },
               [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor log(const Tensor& a) {
  return unary(a, [](double v) { return std::log(v); }, [](double x, double) { return 1.0 / x; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  return unary(a, [lo, hi](double v) { return std::clamp(v, lo, hi); },
               [lo, hi](double x, double) { return (x < lo || x > hi) ? 0.0 : 1.0; });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  auto res = make_result({1}, {s}, {a});
  if (res.requires_grad()) {
    Node* self = res.node().get();
    Node* in = a.node().get();
    self->backward = [self, in] {
      auto& g = grad_of(*in);
      for (auto& v : g) v += self->grad[0];
    };
  }
  return res;
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor mean_per_sample(const Tensor& a) {
  const std::size_t n = a.dim(0), per = a.numel() / n;
  Buffer out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < per; ++j) s += a.values()[i * per + j];
    out[i] = s / static_cast<double>(per);
  }
  auto res = make_result({n}, std::move(out), {a});
  if (res.requires_grad()) {
    Node* self = res.node().get();
    Node* in = a.node().get();
    self->backward = [self, in, n, per] {
      auto& g = grad_of(*in);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < per; ++j) g[i * per + j] += self->grad[i] / static_cast<double>(per);
    };
  }
  return res;
}

double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a.values()[i] * b.values()[i];
  return s;
}

}  // namespace psal
