#include "densedet/autodiff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>

#include "densedet/error.hpp"

namespace densedet::ad {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) fail(ErrorCode::kShapeMismatch, what);
}

// ---------------------------------------------------------------------------
// Convolution core. Every conv flavour reduces to a list of
// (input position, output position, kernel tap) triples plus a weight table
// laid out as [group][tap][in-channel-in-group][out-channel-in-group].

struct ConvGeom {
  std::size_t batch = 1;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t groups = 1;
  std::array<std::size_t, 3> in{1, 1, 1};
  std::array<std::size_t, 3> out{1, 1, 1};
  std::array<std::size_t, 3> kernel{1, 1, 1};
  std::array<std::size_t, 3> stride{1, 1, 1};
  std::array<std::size_t, 3> pad{0, 0, 0};
  bool transposed = false;

  std::size_t in_volume() const { return in[0] * in[1] * in[2]; }
  std::size_t out_volume() const { return out[0] * out[1] * out[2]; }
  std::size_t taps() const { return kernel[0] * kernel[1] * kernel[2]; }
  std::size_t cin_g() const { return in_channels / groups; }
  std::size_t cout_g() const { return out_channels / groups; }
};

struct Pair {
  std::uint32_t in;
  std::uint32_t out;
  std::uint32_t tap;
};

std::vector<Pair> enumerate_pairs(const ConvGeom& g) {
  // conv: in = out * s + k - p; transposed: out = in * s + k - p.
  const auto& small = g.transposed ? g.in : g.out;
  const auto& big = g.transposed ? g.out : g.in;
  std::vector<Pair> pairs;
  pairs.reserve(g.out_volume() * g.taps());
  for (std::size_t a = 0; a < small[0]; ++a) {
    for (std::size_t b = 0; b < small[1]; ++b) {
      for (std::size_t c = 0; c < small[2]; ++c) {
        const auto s_lin = static_cast<std::uint32_t>((a * small[1] + b) * small[2] + c);
        for (std::size_t ka = 0; ka < g.kernel[0]; ++ka) {
          const auto ba = static_cast<std::int64_t>(a * g.stride[0] + ka) -
                          static_cast<std::int64_t>(g.pad[0]);
          if (ba < 0 || ba >= static_cast<std::int64_t>(big[0])) continue;
          for (std::size_t kb = 0; kb < g.kernel[1]; ++kb) {
            const auto bb = static_cast<std::int64_t>(b * g.stride[1] + kb) -
                            static_cast<std::int64_t>(g.pad[1]);
            if (bb < 0 || bb >= static_cast<std::int64_t>(big[1])) continue;
            for (std::size_t kc = 0; kc < g.kernel[2]; ++kc) {
              const auto bc = static_cast<std::int64_t>(c * g.stride[2] + kc) -
                              static_cast<std::int64_t>(g.pad[2]);
              if (bc < 0 || bc >= static_cast<std::int64_t>(big[2])) continue;
              const auto b_lin = static_cast<std::uint32_t>(
                  (static_cast<std::size_t>(ba) * big[1] + static_cast<std::size_t>(bb)) *
                      big[2] +
                  static_cast<std::size_t>(bc));
              const auto tap =
                  static_cast<std::uint32_t>((ka * g.kernel[1] + kb) * g.kernel[2] + kc);
              if (g.transposed) {
                pairs.push_back({s_lin, b_lin, tap});
              } else {
                pairs.push_back({b_lin, s_lin, tap});
              }
            }
          }
        }
      }
    }
  }
  return pairs;
}

// [N, C, V] -> [N, V, C]
std::vector<double> to_channels_last(std::span<const double> x, std::size_t n, std::size_t c,
                                     std::size_t v) {
  std::vector<double> out(x.size());
  for (std::size_t b = 0; b < n; ++b) {
    const double* src = x.data() + b * c * v;
    double* dst = out.data() + b * c * v;
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t p = 0; p < v; ++p) dst[p * c + ch] = src[ch * v + p];
    }
  }
  return out;
}

// [N, V, C] -> [N, C, V]
std::vector<double> to_channels_first(std::span<const double> x, std::size_t n, std::size_t c,
                                      std::size_t v) {
  std::vector<double> out(x.size());
  for (std::size_t b = 0; b < n; ++b) {
    const double* src = x.data() + b * c * v;
    double* dst = out.data() + b * c * v;
    for (std::size_t p = 0; p < v; ++p) {
      for (std::size_t ch = 0; ch < c; ++ch) dst[ch * v + p] = src[p * c + ch];
    }
  }
  return out;
}

std::vector<std::uint8_t> nonzero_rows(std::span<const double> cl, std::size_t rows,
                                       std::size_t width) {
  std::vector<std::uint8_t> nz(rows, 0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = cl.data() + r * width;
    for (std::size_t i = 0; i < width; ++i) {
      if (row[i] != 0.0) {
        nz[r] = 1;
        break;
      }
    }
  }
  return nz;
}

// Index into the public weight layout for (group, tap, in-local, out-local).
std::size_t weight_offset(const ConvGeom& g, std::size_t grp, std::size_t tap, std::size_t cl,
                          std::size_t ol) {
  const std::size_t taps = g.taps();
  if (g.transposed) {
    // [C, O/g, taps]
    const std::size_t c = grp * g.cin_g() + cl;
    return (c * g.cout_g() + ol) * taps + tap;
  }
  // [O, C/g, taps]
  const std::size_t o = grp * g.cout_g() + ol;
  return (o * g.cin_g() + cl) * taps + tap;
}

std::vector<double> pack_weight(const ConvGeom& g, std::span<const double> w) {
  const std::size_t taps = g.taps(), ci = g.cin_g(), co = g.cout_g();
  std::vector<double> packed(w.size());
  for (std::size_t grp = 0; grp < g.groups; ++grp)
    for (std::size_t t = 0; t < taps; ++t)
      for (std::size_t cl = 0; cl < ci; ++cl)
        for (std::size_t ol = 0; ol < co; ++ol)
          packed[((grp * taps + t) * ci + cl) * co + ol] = w[weight_offset(g, grp, t, cl, ol)];
  return packed;
}

std::vector<double> unpack_weight(const ConvGeom& g, std::span<const double> packed) {
  const std::size_t taps = g.taps(), ci = g.cin_g(), co = g.cout_g();
  std::vector<double> w(packed.size());
  for (std::size_t grp = 0; grp < g.groups; ++grp)
    for (std::size_t t = 0; t < taps; ++t)
      for (std::size_t cl = 0; cl < ci; ++cl)
        for (std::size_t ol = 0; ol < co; ++ol)
          w[weight_offset(g, grp, t, cl, ol)] = packed[((grp * taps + t) * ci + cl) * co + ol];
  return w;
}

Tensor conv_generic(const Tensor& input, const Tensor& weight, const Tensor& bias,
                    const ConvGeom& g, Shape out_shape) {
  const std::size_t n = g.batch, cin = g.in_channels, cout = g.out_channels;
  const std::size_t vin = g.in_volume(), vout = g.out_volume();
  const std::size_t ci = g.cin_g(), co = g.cout_g(), taps = g.taps();
  const auto pairs = enumerate_pairs(g);
  const auto x_cl = to_channels_last(input.data(), n, cin, vin);
  const auto x_nz = nonzero_rows(x_cl, n * vin, cin);
  const auto wk = pack_weight(g, weight.data());

  std::vector<double> y_cl(n * vout * cout, 0.0);
  if (bias.defined()) {
    for (std::size_t r = 0; r < n * vout; ++r) {
      std::copy(bias.data().begin(), bias.data().end(), y_cl.begin() + r * cout);
    }
  }
  for (std::size_t b = 0; b < n; ++b) {
    for (const auto& pr : pairs) {
      if (!x_nz[b * vin + pr.in]) continue;
      const double* xin = x_cl.data() + (b * vin + pr.in) * cin;
      double* yout = y_cl.data() + (b * vout + pr.out) * cout;
      for (std::size_t grp = 0; grp < g.groups; ++grp) {
        const double* wt = wk.data() + (grp * taps + pr.tap) * ci * co;
        double* yo = yout + grp * co;
        for (std::size_t cl = 0; cl < ci; ++cl) {
          const double v = xin[grp * ci + cl];
          if (v == 0.0) continue;
          const double* wrow = wt + cl * co;
          for (std::size_t ol = 0; ol < co; ++ol) yo[ol] += v * wrow[ol];
        }
      }
    }
  }
  auto values = to_channels_first(y_cl, n, cout, vout);

  return make_op(
      std::move(out_shape), std::move(values), {input, weight, bias},
      [input, weight, bias, g, pairs, x_cl, x_nz, wk](Node& self) {
        const std::size_t n = g.batch, cin = g.in_channels, cout = g.out_channels;
        const std::size_t vin = g.in_volume(), vout = g.out_volume();
        const std::size_t ci = g.cin_g(), co = g.cout_g(), taps = g.taps();
        const auto gy_cl = to_channels_last(self.grad, n, cout, vout);
        const auto gy_nz = nonzero_rows(gy_cl, n * vout, cout);
        const bool want_x = input.requires_grad();
        const bool want_w = weight.requires_grad();

        std::vector<double> gx_cl(want_x ? n * vin * cin : 0, 0.0);
        // Per (group, tap) block transposed to [co, ci] so the input gradient is an axpy.
        std::vector<double> wt(want_x ? wk.size() : 0);
        if (want_x) {
          for (std::size_t blk = 0; blk < g.groups * taps; ++blk)
            for (std::size_t cl = 0; cl < ci; ++cl)
              for (std::size_t ol = 0; ol < co; ++ol)
                wt[blk * ci * co + ol * ci + cl] = wk[blk * ci * co + cl * co + ol];
        }
        std::vector<double> gwk(want_w ? wk.size() : 0, 0.0);
        for (std::size_t b = 0; b < n; ++b) {
          for (const auto& pr : pairs) {
            if (!gy_nz[b * vout + pr.out]) continue;
            const double* gy = gy_cl.data() + (b * vout + pr.out) * cout;
            for (std::size_t grp = 0; grp < g.groups; ++grp) {
              const double* gyg = gy + grp * co;
              const std::size_t wbase = (grp * taps + pr.tap) * ci * co;
              if (want_x) {
                double* gx = gx_cl.data() + (b * vin + pr.in) * cin + grp * ci;
                for (std::size_t ol = 0; ol < co; ++ol) {
                  const double v = gyg[ol];
                  if (v == 0.0) continue;
                  const double* wcol = wt.data() + wbase + ol * ci;
                  for (std::size_t cl = 0; cl < ci; ++cl) gx[cl] += v * wcol[cl];
                }
              }
              if (want_w && x_nz[b * vin + pr.in]) {
                const double* xin = x_cl.data() + (b * vin + pr.in) * cin + grp * ci;
                for (std::size_t cl = 0; cl < ci; ++cl) {
                  const double v = xin[cl];
                  if (v == 0.0) continue;
                  double* gw = gwk.data() + wbase + cl * co;
                  for (std::size_t ol = 0; ol < co; ++ol) gw[ol] += v * gyg[ol];
                }
              }
            }
          }
        }
        if (want_x) accumulate(input, to_channels_first(gx_cl, n, cin, vin));
        if (want_w) accumulate(weight, unpack_weight(g, gwk));
        if (bias.requires_grad()) {
          std::vector<double> gb(cout, 0.0);
          for (std::size_t r = 0; r < n * vout; ++r) {
            for (std::size_t o = 0; o < cout; ++o) gb[o] += gy_cl[r * cout + o];
          }
          accumulate(bias, gb);
        }
      });
}

std::size_t conv_out(std::size_t in, std::size_t k, std::size_t s, std::size_t p,
                     const char* what) {
  require(s > 0, std::string(what) + ": stride must be positive");
  require(in + 2 * p >= k, std::string(what) + ": kernel larger than padded input");
  return (in + 2 * p - k) / s + 1;
}

std::size_t deconv_out(std::size_t in, std::size_t k, std::size_t s, std::size_t p,
                       const char* what) {
  require(s > 0 && in > 0, std::string(what) + ": bad stride or input");
  const std::size_t full = (in - 1) * s + k;
  require(full > 2 * p, std::string(what) + ": padding too large");
  return full - 2 * p;
}

Tensor conv_any(const Tensor& input, const Tensor& weight, const Tensor& bias,
                const ConvOptions& opt, std::size_t spatial, bool transposed, const char* what) {
  require(input.defined() && weight.defined(), std::string(what) + ": undefined operand");
  require(input.rank() == 2 + spatial, std::string(what) + ": input rank " +
                                           std::to_string(input.rank()) + " (" +
                                           shape_str(input.shape()) + ")");
  require(weight.rank() == 2 + spatial, std::string(what) + ": weight rank");
  require(opt.groups > 0, std::string(what) + ": groups must be positive");
  ConvGeom g;
  g.transposed = transposed;
  g.batch = input.dim(0);
  g.in_channels = input.dim(1);
  g.groups = opt.groups;
  require(g.in_channels % g.groups == 0, std::string(what) + ": channels not divisible by groups");
  if (transposed) {
    require(weight.dim(0) == g.in_channels,
            std::string(what) + ": weight in-channels " + std::to_string(weight.dim(0)) +
                " != input channels " + std::to_string(g.in_channels));
    g.out_channels = weight.dim(1) * g.groups;
  } else {
    require(weight.dim(1) * g.groups == g.in_channels,
            std::string(what) + ": weight expects " + std::to_string(weight.dim(1) * g.groups) +
                " input channels, got " + std::to_string(g.in_channels));
    g.out_channels = weight.dim(0);
    require(g.out_channels % g.groups == 0, std::string(what) + ": out channels vs groups");
  }
  if (bias.defined()) {
    require(bias.rank() == 1 && bias.dim(0) == g.out_channels, std::string(what) + ": bias shape");
  }
  const std::size_t offset = 3 - spatial;
  for (std::size_t a = 0; a < spatial; ++a) {
    g.in[offset + a] = input.dim(2 + a);
    g.kernel[offset + a] = weight.dim(2 + a);
    g.stride[offset + a] = opt.stride;
    g.pad[offset + a] = opt.padding;
    g.out[offset + a] = transposed ? deconv_out(g.in[offset + a], g.kernel[offset + a],
                                                opt.stride, opt.padding, what)
                                   : conv_out(g.in[offset + a], g.kernel[offset + a],
                                              opt.stride, opt.padding, what);
  }
  Shape out_shape{g.batch, g.out_channels};
  for (std::size_t a = 0; a < spatial; ++a) out_shape.push_back(g.out[offset + a]);
  return conv_generic(input, weight, bias, g, std::move(out_shape));
}

// Elementwise unary op with derivative f'(x, y).
template <typename F, typename D>
Tensor unary(const Tensor& x, F f, D df) {
  std::vector<double> y(x.numel());
  const auto xv = x.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(xv[i]);
  auto yv = y;
  return make_op(x.shape(), std::move(y), {x}, [x, yv = std::move(yv), df](Node& self) {
    const auto xv = x.data();
    std::vector<double> g(self.grad.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * df(xv[i], yv[i]);
    accumulate(x, g);
  });
}

void require_same(const Tensor& a, const Tensor& b, const char* what) {
  require(a.shape() == b.shape(), std::string(what) + ": shapes " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              const ConvOptions& opt) {
  return conv_any(input, weight, bias, opt, 2, false, "conv2d");
}

Tensor conv3d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              const ConvOptions& opt) {
  return conv_any(input, weight, bias, opt, 3, false, "conv3d");
}

Tensor depthwise_conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
                        std::size_t padding) {
  require(input.rank() == 4, "depthwise_conv2d: input must be [N,C,H,W]");
  require(weight.rank() == 4 && weight.dim(0) == input.dim(1) && weight.dim(1) == 1,
          "depthwise_conv2d: weight must be [C,1,k,k]");
  return conv_any(input, weight, bias, {1, padding, input.dim(1)}, 2, false, "depthwise_conv2d");
}

Tensor conv_transpose2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
                        const ConvOptions& opt) {
  return conv_any(input, weight, bias, opt, 2, true, "conv_transpose2d");
}

Tensor conv_transpose3d(const Tensor& input, const Tensor& weight, const Tensor& bias,
                        const ConvOptions& opt) {
  return conv_any(input, weight, bias, opt, 3, true, "conv_transpose3d");
}

Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  std::vector<double>& running_mean, std::vector<double>& running_var,
                  bool training, double momentum, double eps) {
  require(input.rank() >= 2, "batch_norm: input rank");
  const std::size_t n = input.dim(0), c = input.dim(1);
  const std::size_t v = input.numel() / (n * c);
  const std::size_t m = n * v;
  require(m >= 1, "batch_norm: empty group");
  require(gamma.numel() == c && beta.numel() == c && running_mean.size() == c &&
              running_var.size() == c,
          "batch_norm: per-channel parameter size");
  const auto x = input.data();
  std::vector<double> mu(c, 0.0), inv_std(c, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    if (training) {
      double s = 0.0;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t p = 0; p < v; ++p) s += x[(b * c + ch) * v + p];
      const double mean = s / static_cast<double>(m);
      double ss = 0.0;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t p = 0; p < v; ++p) {
          const double d = x[(b * c + ch) * v + p] - mean;
          ss += d * d;
        }
      const double var = ss / static_cast<double>(m);
      mu[ch] = mean;
      inv_std[ch] = 1.0 / std::sqrt(var + eps);
      const double unbiased = m > 1 ? ss / static_cast<double>(m - 1) : var;
      running_mean[ch] = (1.0 - momentum) * running_mean[ch] + momentum * mean;
      running_var[ch] = (1.0 - momentum) * running_var[ch] + momentum * unbiased;
    } else {
      mu[ch] = running_mean[ch];
      inv_std[ch] = 1.0 / std::sqrt(running_var[ch] + eps);
    }
  }
  std::vector<double> xhat(x.size()), y(x.size());
  const auto gv = gamma.data();
  const auto bv = beta.data();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < v; ++p) {
        const std::size_t i = (b * c + ch) * v + p;
        xhat[i] = (x[i] - mu[ch]) * inv_std[ch];
        y[i] = gv[ch] * xhat[i] + bv[ch];
      }
  return make_op(
      input.shape(), std::move(y), {input, gamma, beta},
      [input, gamma, beta, xhat = std::move(xhat), inv_std, training, n, c, v](Node& self) {
        const auto& gy = self.grad;
        const auto gv = gamma.data();
        std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t p = 0; p < v; ++p) {
              const std::size_t i = (b * c + ch) * v + p;
              sum_g[ch] += gy[i];
              sum_gx[ch] += gy[i] * xhat[i];
            }
        if (input.requires_grad()) {
          std::vector<double> gx(gy.size());
          const double mm = static_cast<double>(n * v);
          for (std::size_t b = 0; b < n; ++b)
            for (std::size_t ch = 0; ch < c; ++ch)
              for (std::size_t p = 0; p < v; ++p) {
                const std::size_t i = (b * c + ch) * v + p;
                if (training) {
                  gx[i] = gv[ch] * inv_std[ch] *
                          (gy[i] - sum_g[ch] / mm - xhat[i] * sum_gx[ch] / mm);
                } else {
                  gx[i] = gv[ch] * inv_std[ch] * gy[i];
                }
              }
          accumulate(input, gx);
        }
        accumulate(gamma, sum_gx);
        accumulate(beta, sum_g);
      });
}

Tensor layer_norm_channels(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                           double eps) {
  require(input.rank() >= 2, "layer_norm: input rank");
  const std::size_t n = input.dim(0), c = input.dim(1);
  const std::size_t v = input.numel() / (n * c);
  require(gamma.numel() == c && beta.numel() == c, "layer_norm: per-channel parameter size");
  const auto x = input.data();
  std::vector<double> xhat(x.size()), y(x.size()), inv_std(n * v);
  const auto gv = gamma.data();
  const auto bv = beta.data();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t p = 0; p < v; ++p) {
      double s = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) s += x[(b * c + ch) * v + p];
      const double mean = s / static_cast<double>(c);
      double ss = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double d = x[(b * c + ch) * v + p] - mean;
        ss += d * d;
      }
      const double is = 1.0 / std::sqrt(ss / static_cast<double>(c) + eps);
      inv_std[b * v + p] = is;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t i = (b * c + ch) * v + p;
        xhat[i] = (x[i] - mean) * is;
        y[i] = gv[ch] * xhat[i] + bv[ch];
      }
    }
  return make_op(input.shape(), std::move(y), {input, gamma, beta},
                 [input, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), n, c,
                  v](Node& self) {
                   const auto& gy = self.grad;
                   const auto gv = gamma.data();
                   std::vector<double> gg(c, 0.0), gb(c, 0.0), gx(gy.size(), 0.0);
                   const double cc = static_cast<double>(c);
                   for (std::size_t b = 0; b < n; ++b)
                     for (std::size_t p = 0; p < v; ++p) {
                       double s1 = 0.0, s2 = 0.0;
                       for (std::size_t ch = 0; ch < c; ++ch) {
                         const std::size_t i = (b * c + ch) * v + p;
                         const double dxh = gy[i] * gv[ch];
                         s1 += dxh;
                         s2 += dxh * xhat[i];
                         gg[ch] += gy[i] * xhat[i];
                         gb[ch] += gy[i];
                       }
                       const double is = inv_std[b * v + p];
                       for (std::size_t ch = 0; ch < c; ++ch) {
                         const std::size_t i = (b * c + ch) * v + p;
                         const double dxh = gy[i] * gv[ch];
                         gx[i] = is * (dxh - s1 / cc - xhat[i] * s2 / cc);
                       }
                     }
                   accumulate(input, gx);
                   accumulate(gamma, gg);
                   accumulate(beta, gb);
                 });
}

constexpr double kInvSqrt2 = 0.70710678118654752440;

Tensor gelu(const Tensor& x) {
  return unary(
      x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
      [](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        const double pdf = std::exp(-0.5 * v * v) * kInvSqrt2 * std::numbers::inv_sqrtpi;
        return cdf + v * pdf;
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same(a, b, "add");
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] + b.data()[i];
  return make_op(a.shape(), std::move(y), {a, b}, [a, b](Node& self) {
    accumulate(a, self.grad);
    accumulate(b, self.grad);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same(a, b, "sub");
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] - b.data()[i];
  return make_op(a.shape(), std::move(y), {a, b}, [a, b](Node& self) {
    accumulate(a, self.grad);
    if (b.requires_grad()) {
      std::vector<double> g(self.grad.size());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = -self.grad[i];
      accumulate(b, g);
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same(a, b, "mul");
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] * b.data()[i];
  return make_op(a.shape(), std::move(y), {a, b}, [a, b](Node& self) {
    std::vector<double> g(self.grad.size());
    if (a.requires_grad()) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * b.data()[i];
      accumulate(a, g);
    }
    if (b.requires_grad()) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * a.data()[i];
      accumulate(b, g);
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> y(x.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x.data()[i] * factor;
  return make_op(x.shape(), std::move(y), {x}, [x, factor](Node& self) {
    std::vector<double> g(self.grad.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * factor;
    accumulate(x, g);
  });
}

Tensor mul_spatial(const Tensor& x, const Tensor& mask) {
  require(x.rank() >= 2 && mask.rank() == x.rank() && mask.dim(1) == 1,
          "mul_spatial: mask must be [N|1, 1, ...]");
  const std::size_t n = x.dim(0), c = x.dim(1);
  const std::size_t v = x.numel() / (n * c);
  require(mask.numel() == v || mask.numel() == n * v, "mul_spatial: mask volume");
  const bool per_sample = mask.numel() == n * v && n > 1;
  const auto mv = mask.data();
  const auto mask_at = [mv, per_sample, v](std::size_t b, std::size_t p) {
    return per_sample ? mv[b * v + p] : mv[p];
  };
  std::vector<double> y(x.numel());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < v; ++p) {
        const std::size_t i = (b * c + ch) * v + p;
        y[i] = x.data()[i] * mask_at(b, p);
      }
  return make_op(x.shape(), std::move(y), {x, mask}, [x, mask, n, c, v, per_sample](Node& self) {
    const auto mv = mask.data();
    const auto xv = x.data();
    if (x.requires_grad()) {
      std::vector<double> g(self.grad.size());
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t p = 0; p < v; ++p) {
            const std::size_t i = (b * c + ch) * v + p;
            g[i] = self.grad[i] * (per_sample ? mv[b * v + p] : mv[p]);
          }
      accumulate(x, g);
    }
    if (mask.requires_grad()) {
      std::vector<double> g(mask.numel(), 0.0);
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t p = 0; p < v; ++p) {
            const std::size_t i = (b * c + ch) * v + p;
            g[per_sample ? b * v + p : p] += self.grad[i] * xv[i];
          }
      accumulate(mask, g);
    }
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  require(!parts.empty(), "concat: no inputs");
  const Shape& ref = parts.front().shape();
  require(axis < ref.size(), "concat: axis out of range");
  std::size_t outer = 1, inner = 1, total = 0;
  for (std::size_t a = 0; a < axis; ++a) outer *= ref[a];
  for (std::size_t a = axis + 1; a < ref.size(); ++a) inner *= ref[a];
  for (const auto& p : parts) {
    require(p.rank() == ref.size(), "concat: rank mismatch");
    for (std::size_t a = 0; a < ref.size(); ++a) {
      if (a != axis) require(p.dim(a) == ref[a], "concat: non-axis dims differ");
    }
    total += p.dim(axis);
  }
  Shape out_shape = ref;
  out_shape[axis] = total;
  std::vector<double> y(numel(out_shape));
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t len = p.dim(axis);
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(p.data().begin() + o * len * inner, len * inner,
                  y.begin() + (o * total + offset) * inner);
    }
    offset += len;
  }
  return make_op(std::move(out_shape), std::move(y), parts,
                 [parts, axis, outer, inner, total](Node& self) {
                   std::size_t offset = 0;
                   for (const auto& p : parts) {
                     const std::size_t len = p.dim(axis);
                     if (p.requires_grad()) {
                       std::vector<double> g(p.numel());
                       for (std::size_t o = 0; o < outer; ++o) {
                         std::copy_n(self.grad.begin() + (o * total + offset) * inner,
                                     len * inner, g.begin() + o * len * inner);
                       }
                       accumulate(p, g);
                     }
                     offset += len;
                   }
                 });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require(numel(shape) == x.numel(),
          "reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  return make_op(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()), {x},
                 [x](Node& self) { accumulate(x, self.grad); });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  require(axis < x.rank() && start + length <= x.dim(axis), "slice: range out of bounds");
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= x.dim(a);
  for (std::size_t a = axis + 1; a < x.rank(); ++a) inner *= x.dim(a);
  const std::size_t full = x.dim(axis);
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  std::vector<double> y(numel(out_shape));
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(x.data().begin() + (o * full + start) * inner, length * inner,
                y.begin() + o * length * inner);
  }
  return make_op(std::move(out_shape), std::move(y), {x},
                 [x, outer, inner, full, start, length](Node& self) {
                   std::vector<double> g(x.numel(), 0.0);
                   for (std::size_t o = 0; o < outer; ++o) {
                     std::copy_n(self.grad.begin() + o * length * inner, length * inner,
                                 g.begin() + (o * full + start) * inner);
                   }
                   accumulate(x, g);
                 });
}

Tensor sum(const Tensor& x) {
  const double s = std::accumulate(x.data().begin(), x.data().end(), 0.0);
  return make_op({1}, {s}, {x}, [x](Node& self) {
    accumulate(x, std::vector<double>(x.numel(), self.grad[0]));
  });
}

Tensor mean(const Tensor& x) {
  require(x.numel() > 0, "mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor sum_squares(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v * v;
  return make_op({1}, {s}, {x}, [x](Node& self) {
    std::vector<double> g(x.numel());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = 2.0 * x.data()[i] * self.grad[0];
    accumulate(x, g);
  });
}

Tensor max_pool3d(const Tensor& x, std::size_t kernel, std::size_t stride, std::size_t padding) {
  require(x.rank() == 5, "max_pool3d: input must be [N,C,D,H,W]");
  const std::size_t n = x.dim(0), c = x.dim(1);
  const std::array<std::size_t, 3> in{x.dim(2), x.dim(3), x.dim(4)};
  std::array<std::size_t, 3> out{};
  for (int a = 0; a < 3; ++a) out[a] = conv_out(in[a], kernel, stride, padding, "max_pool3d");
  std::vector<double> y(n * c * out[0] * out[1] * out[2], -std::numeric_limits<double>::infinity());
  const auto xv = x.data();
  for (std::size_t b = 0; b < n * c; ++b)
    for (std::size_t od = 0; od < out[0]; ++od)
      for (std::size_t oh = 0; oh < out[1]; ++oh)
        for (std::size_t ow = 0; ow < out[2]; ++ow) {
          double& dst = y[((b * out[0] + od) * out[1] + oh) * out[2] + ow];
          for (std::size_t kd = 0; kd < kernel; ++kd) {
            const auto id = static_cast<std::int64_t>(od * stride + kd) - static_cast<std::int64_t>(padding);
            if (id < 0 || id >= static_cast<std::int64_t>(in[0])) continue;
            for (std::size_t kh = 0; kh < kernel; ++kh) {
              const auto ih = static_cast<std::int64_t>(oh * stride + kh) - static_cast<std::int64_t>(padding);
              if (ih < 0 || ih >= static_cast<std::int64_t>(in[1])) continue;
              for (std::size_t kw = 0; kw < kernel; ++kw) {
                const auto iw = static_cast<std::int64_t>(ow * stride + kw) - static_cast<std::int64_t>(padding);
                if (iw < 0 || iw >= static_cast<std::int64_t>(in[2])) continue;
                const double v = xv[((b * in[0] + static_cast<std::size_t>(id)) * in[1] +
                                     static_cast<std::size_t>(ih)) * in[2] + static_cast<std::size_t>(iw)];
                dst = std::max(dst, v);
              }
            }
          }
        }
  return Tensor::constant({n, c, out[0], out[1], out[2]}, std::move(y));
}

}  // namespace densedet::ad
