// Independent reference implementations used only by tests. Nothing here
// shares code with the library paths under test.
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace oracle {

inline std::vector<double> random_vector(std::size_t n, std::uint64_t seed, double lo = -1.0,
                                         double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

struct Grid {
  std::size_t n, c, d, h, w;
  std::size_t at(std::size_t b, std::size_t ch, std::size_t z, std::size_t y, std::size_t x) const {
    return (((b * c + ch) * d + z) * h + y) * w + x;
  }
  std::size_t size() const { return n * c * d * h * w; }
};

/// Direct nested-loop cross-correlation. weight [O][C/g][kd][kh][kw].
/// A depth-1 kernel means a planar conv: depth uses stride 1 and no padding.
inline std::vector<double> conv3d(const std::vector<double>& x, const Grid& in,
                                  const std::vector<double>& weight, const std::vector<double>& bias,
                                  std::size_t out_ch, std::size_t kd, std::size_t kh,
                                  std::size_t kw, std::size_t stride, std::size_t pad,
                                  std::size_t groups, Grid& out) {
  const std::size_t sd = kd == 1 ? 1 : stride, pd = kd == 1 ? 0 : pad;
  out = {in.n, out_ch, (in.d + 2 * pd - kd) / sd + 1, (in.h + 2 * pad - kh) / stride + 1,
         (in.w + 2 * pad - kw) / stride + 1};
  std::vector<double> y(out.size(), 0.0);
  const std::size_t cg = in.c / groups, og = out_ch / groups;
  for (std::size_t b = 0; b < in.n; ++b)
    for (std::size_t o = 0; o < out_ch; ++o)
      for (std::size_t z = 0; z < out.d; ++z)
        for (std::size_t yy = 0; yy < out.h; ++yy)
          for (std::size_t xx = 0; xx < out.w; ++xx) {
            double acc = bias.empty() ? 0.0 : bias[o];
            const std::size_t g = o / og;
            for (std::size_t cl = 0; cl < cg; ++cl)
              for (std::size_t a = 0; a < kd; ++a)
                for (std::size_t bb = 0; bb < kh; ++bb)
                  for (std::size_t cc = 0; cc < kw; ++cc) {
                    const long iz = static_cast<long>(z * sd + a) - static_cast<long>(pd);
                    const long iy = static_cast<long>(yy * stride + bb) - static_cast<long>(pad);
                    const long ix = static_cast<long>(xx * stride + cc) - static_cast<long>(pad);
                    if (iz < 0 || iy < 0 || ix < 0 || iz >= static_cast<long>(in.d) ||
                        iy >= static_cast<long>(in.h) || ix >= static_cast<long>(in.w))
                      continue;
                    const double wv = weight[(((o * cg + cl) * kd + a) * kh + bb) * kw + cc];
                    acc += wv * x[in.at(b, g * cg + cl, static_cast<std::size_t>(iz),
                                        static_cast<std::size_t>(iy),
                                        static_cast<std::size_t>(ix))];
                  }
            y[out.at(b, o, z, yy, xx)] = acc;
          }
  return y;
}

/// Scatter definition of the transposed convolution. weight [C][O][kd][kh][kw].
inline std::vector<double> conv_transpose3d(const std::vector<double>& x, const Grid& in,
                                            const std::vector<double>& weight,
                                            std::size_t out_ch, std::size_t k, std::size_t stride,
                                            Grid& out) {
  out = {in.n, out_ch, (in.d - 1) * stride + k, (in.h - 1) * stride + k, (in.w - 1) * stride + k};
  std::vector<double> y(out.size(), 0.0);
  for (std::size_t b = 0; b < in.n; ++b)
    for (std::size_t c = 0; c < in.c; ++c)
      for (std::size_t z = 0; z < in.d; ++z)
        for (std::size_t yy = 0; yy < in.h; ++yy)
          for (std::size_t xx = 0; xx < in.w; ++xx)
            for (std::size_t o = 0; o < out_ch; ++o)
              for (std::size_t a = 0; a < k; ++a)
                for (std::size_t bb = 0; bb < k; ++bb)
                  for (std::size_t cc = 0; cc < k; ++cc) {
                    y[out.at(b, o, z * stride + a, yy * stride + bb, xx * stride + cc)] +=
                        x[in.at(b, c, z, yy, xx)] *
                        weight[(((c * out_ch + o) * k + a) * k + bb) * k + cc];
                  }
  return y;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace oracle
