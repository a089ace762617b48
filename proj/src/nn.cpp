#include "sdsc/nn.hpp"

#include <cmath>
#include <memory>
#include <string>

#include "gemm.hpp"
#include "sdsc/error.hpp"
#include "sdsc/ops.hpp"

namespace sdsc {

namespace {

struct ConvGeometry {
  std::size_t batch, in_ch, height, width;
  std::size_t out_ch, kh, kw;
  std::size_t stride, padding;
  std::size_t out_h, out_w;

  std::size_t patch() const { return in_ch * kh * kw; }
  std::size_t out_area() const { return out_h * out_w; }
};

std::size_t output_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding,
                          const char* axis) {
  if (in + 2 * padding < kernel) {
    throw ShapeError(std::string("conv2d: ") + axis + " extent " + std::to_string(in) + " smaller than kernel");
  }
  const std::size_t span = in + 2 * padding - kernel;
  if (span % stride != 0) {
    throw ShapeError(std::string("conv2d: non-integral output ") + axis + " for extent " + std::to_string(in) +
                     ", kernel " + std::to_string(kernel) + ", stride " + std::to_string(stride));
  }
  return span / stride + 1;
}

void im2col(const ConvGeometry& g, const float* image, float* cols) {
  const std::size_t area = g.out_area();
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    const float* plane = image + c * g.height * g.width;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        float* row = cols + ((c * g.kh + i) * g.kw + j) * area;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long y = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.padding);
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long x = static_cast<long>(ox * g.stride + j) - static_cast<long>(g.padding);
            const bool inside = y >= 0 && x >= 0 && y < static_cast<long>(g.height) && x < static_cast<long>(g.width);
            row[oy * g.out_w + ox] = inside ? plane[y * static_cast<long>(g.width) + x] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeometry& g, const float* cols, float* image) {
  const std::size_t area = g.out_area();
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    float* plane = image + c * g.height * g.width;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const float* row = cols + ((c * g.kh + i) * g.kw + j) * area;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long y = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.padding);
          if (y < 0 || y >= static_cast<long>(g.height)) continue;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long x = static_cast<long>(ox * g.stride + j) - static_cast<long>(g.padding);
            if (x < 0 || x >= static_cast<long>(g.width)) continue;
            plane[y * static_cast<long>(g.width) + x] += row[oy * g.out_w + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride, std::size_t padding) {
  if (x.rank() != 4 || w.rank() != 4) {
    throw ShapeError("conv2d: expected 4-D input and kernel, got " + shape_str(x.shape()) + " and " +
                     shape_str(w.shape()));
  }
  if (x.dim(1) != w.dim(1)) {
    throw ShapeError("conv2d: input has " + std::to_string(x.dim(1)) + " channels, kernel expects " +
                     std::to_string(w.dim(1)));
  }
  if (bias.numel() != w.dim(0)) {
    throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " does not match " + std::to_string(w.dim(0)) +
                     " output channels");
  }
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(3), stride, padding, 0, 0};
  g.out_h = output_extent(g.height, g.kh, stride, padding, "height");
  g.out_w = output_extent(g.width, g.kw, stride, padding, "width");

  const std::size_t patch = g.patch();
  const std::size_t area = g.out_area();
  const std::size_t in_plane = g.in_ch * g.height * g.width;
  auto cols = std::make_shared<std::vector<float>>(g.batch * patch * area);
  Tensor out(Shape{g.batch, g.out_ch, g.out_h, g.out_w});
  auto o = out.data();
  auto wd = w.data();
  auto bd = bias.data();
  for (std::size_t b = 0; b < g.batch; ++b) {
    float* col = cols->data() + b * patch * area;
    im2col(g, x.data().data() + b * in_plane, col);
    float* ob = o.data() + b * g.out_ch * area;
    for (std::size_t oc = 0; oc < g.out_ch; ++oc) {
      for (std::size_t p = 0; p < area; ++p) ob[oc * area + p] = bd[oc];
    }
    detail::gemm_acc(g.out_ch, area, patch, wd.data(), col, ob);
  }
  ensure_finite(out, "conv2d");

  record_op(out, {x, w, bias}, [x, w, bias, out, g, cols]() mutable {
    const std::size_t patch = g.patch();
    const std::size_t area = g.out_area();
    const std::size_t in_plane = g.in_ch * g.height * g.width;
    auto gout = out.grad();
    std::vector<float> wt;
    if (x.requires_grad()) wt = detail::transposed(g.out_ch, patch, w.data().data());
    std::vector<float> dcols(x.requires_grad() ? patch * area : 0);
    std::vector<float> colt(w.requires_grad() ? area * patch : 0);
    for (std::size_t b = 0; b < g.batch; ++b) {
      const float* gb = gout.data() + b * g.out_ch * area;
      if (bias.requires_grad()) {
        auto gbias = bias.grad_buffer();
        for (std::size_t oc = 0; oc < g.out_ch; ++oc) {
          double acc = 0.0;
          for (std::size_t p = 0; p < area; ++p) acc += gb[oc * area + p];
          gbias[oc] += static_cast<float>(acc);
        }
      }
      if (w.requires_grad()) {
        detail::transpose(patch, area, cols->data() + b * patch * area, colt.data());
        detail::gemm_acc(g.out_ch, patch, area, gb, colt.data(), w.grad_buffer().data());
      }
      if (x.requires_grad()) {
        std::fill(dcols.begin(), dcols.end(), 0.0f);
        detail::gemm_acc(patch, area, g.out_ch, wt.data(), gb, dcols.data());
        col2im_add(g, dcols.data(), x.grad_buffer().data() + b * in_plane);
      }
    }
  });
  return out;
}

Tensor conv2d(const Tensor& x, const Conv2dLayer& layer) {
  return conv2d(x, layer.weights, layer.bias, layer.stride, layer.padding);
}

Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, RunningStats& stats, Mode mode) {
  if (x.rank() < 2) throw ShapeError("batchnorm: expected (B,C,...) input, got " + shape_str(x.shape()));
  const std::size_t batch = x.dim(0);
  const std::size_t channels = x.dim(1);
  const std::size_t inner = x.numel() / (batch * channels);
  if (gamma.numel() != channels || beta.numel() != channels || !stats.mean.defined() ||
      stats.mean.numel() != channels || stats.var.numel() != channels) {
    throw ShapeError("batchnorm: parameters do not match " + std::to_string(channels) + " channels");
  }
  if (mode == Mode::kTrain && batch < 2) {
    throw ShapeError("batchnorm: training mode needs a batch of at least 2 samples");
  }
  const std::size_t count = batch * inner;
  auto xs = x.data();
  auto gs = gamma.data();
  auto bs = beta.data();
  auto running_mean = stats.mean.data();
  auto running_var = stats.var.data();

  auto xhat = std::make_shared<std::vector<float>>(x.numel());
  std::vector<float> inv_std(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    double mu;
    double var;
    if (mode == Mode::kTrain) {
      double acc = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const float* p = xs.data() + (b * channels + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) acc += p[i];
      }
      mu = acc / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const float* p = xs.data() + (b * channels + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) sq += (p[i] - mu) * (p[i] - mu);
      }
      var = sq / static_cast<double>(count);
      const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : var;
      running_mean[c] = static_cast<float>((1.0 - kBatchNormMomentum) * running_mean[c] + kBatchNormMomentum * mu);
      running_var[c] = static_cast<float>((1.0 - kBatchNormMomentum) * running_var[c] + kBatchNormMomentum * unbiased);
    } else {
      mu = running_mean[c];
      var = running_var[c];
    }
    const double istd = 1.0 / std::sqrt(var + kNormEpsilon);
    inv_std[c] = static_cast<float>(istd);
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t base = (b * channels + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) (*xhat)[base + i] = static_cast<float>((xs[base + i] - mu) * istd);
    }
  }

  Tensor out(x.shape());
  auto o = out.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t base = (b * channels + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) o[base + i] = gs[c] * (*xhat)[base + i] + bs[c];
    }
  }
  ensure_finite(out, "batchnorm");

  const bool train = mode == Mode::kTrain;
  record_op(out, {x, gamma, beta}, [x, gamma, beta, out, xhat, inv_std, batch, channels, inner, train]() mutable {
    auto g = out.grad();
    auto gs = gamma.data();
    const double count = static_cast<double>(batch * inner);
    for (std::size_t c = 0; c < channels; ++c) {
      double sum_g = 0.0;
      double sum_gx = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t base = (b * channels + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) {
          sum_g += g[base + i];
          sum_gx += static_cast<double>(g[base + i]) * (*xhat)[base + i];
        }
      }
      if (gamma.requires_grad()) gamma.grad_buffer()[c] += static_cast<float>(sum_gx);
      if (beta.requires_grad()) beta.grad_buffer()[c] += static_cast<float>(sum_g);
      if (!x.requires_grad()) continue;
      auto gx = x.grad_buffer();
      const double scale = static_cast<double>(gs[c]) * inv_std[c];
      const double mean_g = sum_g / count;
      const double mean_gx = sum_gx / count;
      for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t base = (b * channels + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) {
          const double d = train ? g[base + i] - mean_g - (*xhat)[base + i] * mean_gx : g[base + i];
          gx[base + i] += static_cast<float>(scale * d);
        }
      }
    }
  });
  return out;
}

Tensor maxpool2x2(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("maxpool2x2: expected 4-D input, got " + shape_str(x.shape()));
  const std::size_t batch = x.dim(0), channels = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("maxpool2x2: spatial extents must be even, got " + shape_str(x.shape()));
  }
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor out(Shape{batch, channels, oh, ow});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.numel());
  auto xs = x.data();
  auto o = out.data();
  for (std::size_t plane = 0; plane < batch * channels; ++plane) {
    const std::size_t in_base = plane * h * w;
    const std::size_t out_base = plane * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xo = 0; xo < ow; ++xo) {
        std::size_t best = in_base + (2 * y) * w + 2 * xo;
        const std::size_t candidates[3] = {best + 1, best + w, best + w + 1};
        for (std::size_t c : candidates) {
          if (xs[c] > xs[best]) best = c;
        }
        o[out_base + y * ow + xo] = xs[best];
        (*argmax)[out_base + y * ow + xo] = best;
      }
    }
  }
  record_op(out, {x}, [x, out, argmax]() mutable {
    auto g = out.grad();
    auto gx = x.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) gx[(*argmax)[i]] += g[i];
  });
  return out;
}

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  const std::size_t d = x.shape().back();
  if (gamma.numel() != d || beta.numel() != d) {
    throw ShapeError("layernorm: parameters do not match feature extent " + std::to_string(d));
  }
  const std::size_t rows = x.numel() / d;
  auto xs = x.data();
  auto gs = gamma.data();
  auto bs = beta.data();
  auto xhat = std::make_shared<std::vector<float>>(x.numel());
  auto inv_std = std::make_shared<std::vector<float>>(rows);
  Tensor out(x.shape());
  auto o = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const float* p = xs.data() + r * d;
    double acc = 0.0;
    for (std::size_t i = 0; i < d; ++i) acc += p[i];
    const double mu = acc / static_cast<double>(d);
    double sq = 0.0;
    for (std::size_t i = 0; i < d; ++i) sq += (p[i] - mu) * (p[i] - mu);
    const double istd = 1.0 / std::sqrt(sq / static_cast<double>(d) + kNormEpsilon);
    (*inv_std)[r] = static_cast<float>(istd);
    for (std::size_t i = 0; i < d; ++i) {
      const float xh = static_cast<float>((p[i] - mu) * istd);
      (*xhat)[r * d + i] = xh;
      o[r * d + i] = gs[i] * xh + bs[i];
    }
  }
  ensure_finite(out, "layernorm");
  record_op(out, {x, gamma, beta}, [x, gamma, beta, out, xhat, inv_std, rows, d]() mutable {
    auto g = out.grad();
    auto gs = gamma.data();
    std::span<float> gg = gamma.requires_grad() ? gamma.grad_buffer() : std::span<float>{};
    std::span<float> gb = beta.requires_grad() ? beta.grad_buffer() : std::span<float>{};
    std::span<float> gx = x.requires_grad() ? x.grad_buffer() : std::span<float>{};
    for (std::size_t r = 0; r < rows; ++r) {
      const float* gr = g.data() + r * d;
      const float* xh = xhat->data() + r * d;
      double sum_dy = 0.0;
      double sum_dyx = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        if (!gg.empty()) gg[i] += gr[i] * xh[i];
        if (!gb.empty()) gb[i] += gr[i];
        const double dy = static_cast<double>(gr[i]) * gs[i];
        sum_dy += dy;
        sum_dyx += dy * xh[i];
      }
      if (gx.empty()) continue;
      const double mean_dy = sum_dy / static_cast<double>(d);
      const double mean_dyx = sum_dyx / static_cast<double>(d);
      for (std::size_t i = 0; i < d; ++i) {
        const double dy = static_cast<double>(gr[i]) * gs[i];
        gx[r * d + i] += static_cast<float>((*inv_std)[r] * (dy - mean_dy - xh[i] * mean_dyx));
      }
    }
  });
  return out;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
  if (logits.rank() != 2 || logits.dim(0) != targets.size()) {
    throw ShapeError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                     std::to_string(targets.size()) + " targets");
  }
  const std::size_t n = logits.dim(0);
  const std::size_t k = logits.dim(1);
  std::vector<int> y(targets.begin(), targets.end());
  auto probs = std::make_shared<std::vector<float>>(n * k);
  auto ls = logits.data();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (y[i] < 0 || static_cast<std::size_t>(y[i]) >= k) {
      throw ShapeError("cross_entropy: target " + std::to_string(y[i]) + " outside " + std::to_string(k) + " classes");
    }
    const float* row = ls.data() + i * k;
    double mx = row[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < k; ++j) (*probs)[i * k + j] = static_cast<float>(std::exp(row[j] - lse));
    total += lse - row[y[i]];
  }
  Tensor out = Tensor::scalar(static_cast<float>(total / static_cast<double>(n)));
  ensure_finite(out, "cross_entropy");
  record_op(out, {logits}, [logits, out, probs, y, n, k]() mutable {
    const float g = out.grad()[0] / static_cast<float>(n);
    auto gl = logits.grad_buffer();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        const float target = static_cast<int>(j) == y[i] ? 1.0f : 0.0f;
        gl[i * k + j] += g * ((*probs)[i * k + j] - target);
      }
    }
  });
  return out;
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  if (table.rank() != 2) throw ShapeError("embedding: table must be 2-D, got " + shape_str(table.shape()));
  const std::size_t vocab = table.dim(0);
  const std::size_t d = table.dim(1);
  std::vector<int> idx(ids.begin(), ids.end());
  Tensor out(Shape{idx.size(), d});
  auto o = out.data();
  auto t = table.data();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || static_cast<std::size_t>(idx[r]) >= vocab) {
      throw ShapeError("embedding: id " + std::to_string(idx[r]) + " outside vocabulary of " + std::to_string(vocab));
    }
    std::copy_n(t.begin() + idx[r] * d, d, o.begin() + r * d);
  }
  record_op(out, {table}, [table, out, idx, d]() mutable {
    auto g = out.grad();
    auto gt = table.grad_buffer();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      for (std::size_t j = 0; j < d; ++j) gt[idx[r] * d + j] += g[r * d + j];
    }
  });
  return out;
}

Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (q.rank() != 3 || q.shape() != k.shape() || q.shape() != v.shape()) {
    throw ShapeError("causal_attention: q, k, v must share a [B,T,dh] shape, got " + shape_str(q.shape()) + ", " +
                     shape_str(k.shape()) + ", " + shape_str(v.shape()));
  }
  const std::size_t batch = q.dim(0), steps = q.dim(1), dh = q.dim(2);
  const float inv_scale = 1.0f / std::sqrt(static_cast<float>(dh));
  auto probs = std::make_shared<std::vector<float>>(batch * steps * steps, 0.0f);
  auto qs = q.data();
  auto ks = k.data();
  auto vs = v.data();
  Tensor out(q.shape());
  auto o = out.data();
  std::vector<double> scores(steps);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t base = b * steps * dh;
    for (std::size_t i = 0; i < steps; ++i) {
      double mx = -INFINITY;
      for (std::size_t j = 0; j <= i; ++j) {
        double dot = 0.0;
        for (std::size_t t = 0; t < dh; ++t) dot += qs[base + i * dh + t] * ks[base + j * dh + t];
        scores[j] = dot * inv_scale;
        mx = std::max(mx, scores[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j <= i; ++j) {
        scores[j] = std::exp(scores[j] - mx);
        z += scores[j];
      }
      float* prow = probs->data() + (b * steps + i) * steps;
      for (std::size_t j = 0; j <= i; ++j) prow[j] = static_cast<float>(scores[j] / z);
      float* orow = o.data() + base + i * dh;
      for (std::size_t j = 0; j <= i; ++j) {
        const float p = prow[j];
        for (std::size_t t = 0; t < dh; ++t) orow[t] += p * vs[base + j * dh + t];
      }
    }
  }
  ensure_finite(out, "causal_attention");
  record_op(out, {q, k, v}, [q, k, v, out, probs, batch, steps, dh, inv_scale]() mutable {
    auto g = out.grad();
    auto qs = q.data();
    auto ks = k.data();
    auto vs = v.data();
    std::span<float> gq = q.requires_grad() ? q.grad_buffer() : std::span<float>{};
    std::span<float> gk = k.requires_grad() ? k.grad_buffer() : std::span<float>{};
    std::span<float> gv = v.requires_grad() ? v.grad_buffer() : std::span<float>{};
    std::vector<double> dp(steps);
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t base = b * steps * dh;
      for (std::size_t i = 0; i < steps; ++i) {
        const float* prow = probs->data() + (b * steps + i) * steps;
        const float* grow = g.data() + base + i * dh;
        double weighted = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          double dot = 0.0;
          for (std::size_t t = 0; t < dh; ++t) dot += grow[t] * vs[base + j * dh + t];
          dp[j] = dot;
          weighted += prow[j] * dot;
          if (!gv.empty()) {
            for (std::size_t t = 0; t < dh; ++t) gv[base + j * dh + t] += prow[j] * grow[t];
          }
        }
        for (std::size_t j = 0; j <= i; ++j) {
          const float ds = static_cast<float>(prow[j] * (dp[j] - weighted)) * inv_scale;
          if (ds == 0.0f) continue;
          for (std::size_t t = 0; t < dh; ++t) {
            if (!gq.empty()) gq[base + i * dh + t] += ds * ks[base + j * dh + t];
            if (!gk.empty()) gk[base + j * dh + t] += ds * qs[base + i * dh + t];
          }
        }
      }
    }
  });
  return out;
}

Tensor attention_forward(const Tensor& x, const AttentionBlock& block, const Tensor& head_weights,
                         std::size_t context) {
  if (x.rank() != 3 || x.dim(2) != block.d_model) {
    throw ShapeError("attention_forward: expected [B,T," + std::to_string(block.d_model) + "], got " +
                     shape_str(x.shape()));
  }
  const std::size_t batch = x.dim(0), steps = x.dim(1), d = block.d_model, dh = block.d_head;
  if (steps > context) {
    throw ShapeError("attention_forward: sequence length " + std::to_string(steps) + " exceeds context " +
                     std::to_string(context));
  }
  if (head_weights.numel() != block.n_heads * block.head_params()) {
    throw ShapeError("attention_forward: head weights " + shape_str(head_weights.shape()) + " do not match " +
                     std::to_string(block.n_heads) + " heads");
  }
  const std::size_t rows = batch * steps;
  Tensor flat = reshape(x, Shape{rows, d});
  Tensor h = layernorm(flat, block.ln1_gamma, block.ln1_beta);

  Tensor attn;
  for (std::size_t head = 0; head < block.n_heads; ++head) {
    if (!block.head_live.empty() && !block.head_live[head]) continue;
    const std::size_t base = head * block.head_params();
    Tensor wq = slice(head_weights, base, Shape{d, dh});
    Tensor wk = slice(head_weights, base + d * dh, Shape{d, dh});
    Tensor wv = slice(head_weights, base + 2 * d * dh, Shape{d, dh});
    Tensor wo = slice(head_weights, base + 3 * d * dh, Shape{dh, d});
    Tensor q = reshape(matmul(h, wq), Shape{batch, steps, dh});
    Tensor k = reshape(matmul(h, wk), Shape{batch, steps, dh});
    Tensor v = reshape(matmul(h, wv), Shape{batch, steps, dh});
    Tensor a = reshape(causal_attention(q, k, v), Shape{rows, dh});
    Tensor contribution = matmul(a, wo);
    attn = attn.defined() ? add(attn, contribution) : contribution;
  }
  Tensor residual = attn.defined() ? add(flat, add_bias(attn, block.out_bias)) : add_bias(flat, block.out_bias);

  Tensor h2 = layernorm(residual, block.ln2_gamma, block.ln2_beta);
  Tensor ff = linear(relu(linear(h2, block.ff_w1, block.ff_b1)), block.ff_w2, block.ff_b2);
  return reshape(add(residual, ff), Shape{batch, steps, d});
}

Tensor attention_forward(const Tensor& x, const AttentionBlock& block, std::size_t context) {
  return attention_forward(x, block, block.heads, context);
}

}  // namespace sdsc
