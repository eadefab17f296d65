#include "defenses/transforms.hpp"

#include <algorithm>
#include <cmath>

namespace advlab::defenses {

Tensor thermometer_encode(const Tensor& x, int levels) {
  if (levels < 2) throw Error("thermometer: levels must be >= 2");
  Shape out_shape = x.shape;
  out_shape.push_back(static_cast<std::size_t>(levels));
  Tensor out = Tensor::zeros(out_shape);
  const double l = static_cast<double>(levels);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x.data[i];
    for (int k = 0; k < levels; ++k)
      out.data[i * levels + k] = v > static_cast<double>(k) / l ? 1.0 : 0.0;
  }
  return out;
}

Tensor thermometer_surrogate(const Tensor& x, int levels) {
  if (levels < 2) throw Error("thermometer: levels must be >= 2");
  Shape out_shape = x.shape;
  out_shape.push_back(static_cast<std::size_t>(levels));
  Tensor out = Tensor::zeros(out_shape);
  const double l = static_cast<double>(levels);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x.data[i];
    for (int k = 0; k < levels; ++k)
      out.data[i * levels + k] = std::clamp(v - static_cast<double>(k) / l, 0.0, 1.0);
  }
  return out;
}

Tensor bit_depth_reduce(const Tensor& x, int bits) {
  if (bits < 1 || bits > 8) throw Error("bit_depth: bits must be in [1, 8]");
  const double q = static_cast<double>((1 << bits) - 1);
  Tensor out = x.detached();
  for (double& v : out.data) v = std::round(v * q) / q;
  return out;
}

namespace {

constexpr int kBlock = 8;

// orthonormal DCT-II basis, 8x8
struct DctBasis {
  double c[kBlock][kBlock];
  DctBasis() {
    for (int u = 0; u < kBlock; ++u) {
      const double alpha = u == 0 ? std::sqrt(1.0 / kBlock) : std::sqrt(2.0 / kBlock);
      for (int k = 0; k < kBlock; ++k)
        c[u][k] = alpha * std::cos(M_PI * (2.0 * k + 1.0) * u / (2.0 * kBlock));
    }
  }
};

const DctBasis& dct_basis() {
  static const DctBasis b;
  return b;
}

double jpeg_step(int quality) {
  const double q = std::clamp(quality, 1, 100);
  const double scale = q < 50.0 ? 5000.0 / q : 200.0 - 2.0 * q;  // percent
  return 1.4 * scale / 100.0;
}

}  // namespace

Tensor jpeg_proxy(const Tensor& x, int quality) {
  if (x.rank() != 3) throw ShapeError("jpeg_proxy: input must be H x W x C");
  const std::size_t h = x.shape[0], w = x.shape[1], c = x.shape[2];
  if (h % kBlock != 0 || w % kBlock != 0)
    throw ShapeError("jpeg_proxy: H and W must be multiples of 8, got " + shape_str(x.shape));
  if (quality < 1 || quality > 100) throw Error("jpeg_proxy: quality must be in [1, 100]");

  const DctBasis& B = dct_basis();
  const double step = jpeg_step(quality);
  Tensor out = Tensor::zeros(x.shape);

  double blk[kBlock][kBlock], tmp[kBlock][kBlock], coef[kBlock][kBlock];
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t by = 0; by < h; by += kBlock)
      for (std::size_t bx = 0; bx < w; bx += kBlock) {
        for (int i = 0; i < kBlock; ++i)
          for (int j = 0; j < kBlock; ++j) blk[i][j] = x.at3(by + i, bx + j, ch);

        // coef = C . blk . C^T
        for (int u = 0; u < kBlock; ++u)
          for (int j = 0; j < kBlock; ++j) {
            double s = 0.0;
            for (int k = 0; k < kBlock; ++k) s += B.c[u][k] * blk[k][j];
            tmp[u][j] = s;
          }
        for (int u = 0; u < kBlock; ++u)
          for (int v = 0; v < kBlock; ++v) {
            double s = 0.0;
            for (int k = 0; k < kBlock; ++k) s += tmp[u][k] * B.c[v][k];
            coef[u][v] = s;
          }

        if (step > 0.0)
          for (int u = 0; u < kBlock; ++u)
            for (int v = 0; v < kBlock; ++v) {
              if (u == 0 && v == 0) continue;  // DC passthrough
              coef[u][v] = std::round(coef[u][v] / step) * step;
            }

        // blk = C^T . coef . C
        for (int k = 0; k < kBlock; ++k)
          for (int v = 0; v < kBlock; ++v) {
            double s = 0.0;
            for (int u = 0; u < kBlock; ++u) s += B.c[u][k] * coef[u][v];
            tmp[k][v] = s;
          }
        for (int k = 0; k < kBlock; ++k)
          for (int j = 0; j < kBlock; ++j) {
            double s = 0.0;
            for (int v = 0; v < kBlock; ++v) s += tmp[k][v] * B.c[v][j];
            out.at3(by + k, bx + j, ch) = std::clamp(s, 0.0, 1.0);
          }
      }
  return out;
}

Tensor tv_minimize_masked(const Tensor& x, const Tensor& mask, double lambda, int steps,
                          double step) {
  if (x.rank() != 3) throw ShapeError("tv_minimize: input must be H x W x C");
  if (mask.shape != x.shape) throw ShapeError("tv_minimize: mask shape mismatch");
  if (steps < 1) throw Error("tv_minimize: steps must be >= 1");
  const std::size_t h = x.shape[0], w = x.shape[1], c = x.shape[2];

  Tensor z = x.detached();
  std::vector<double> grad(z.size());
  const auto sgn = [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); };

  for (int s = 0; s < steps; ++s) {
    for (std::size_t i = 0; i < z.size(); ++i)
      grad[i] = 2.0 * mask.data[i] * (z.data[i] - x.data[i]);
    if (lambda != 0.0) {
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < h; ++i)
          for (std::size_t j = 0; j < w; ++j) {
            if (i + 1 < h) {
              const double e = sgn(z.at3(i + 1, j, ch) - z.at3(i, j, ch)) * lambda;
              grad[((i + 1) * w + j) * c + ch] += e;
              grad[(i * w + j) * c + ch] -= e;
            }
            if (j + 1 < w) {
              const double e = sgn(z.at3(i, j + 1, ch) - z.at3(i, j, ch)) * lambda;
              grad[(i * w + (j + 1)) * c + ch] += e;
              grad[(i * w + j) * c + ch] -= e;
            }
          }
    }
    for (std::size_t i = 0; i < z.size(); ++i) z.data[i] -= step * grad[i];
  }
  for (double& v : z.data) v = std::clamp(v, 0.0, 1.0);
  return z;
}

std::pair<std::vector<double>, std::vector<double>> sap_mask_keep(const double* a, std::size_t n,
                                                                  int samples, Rng& rng) {
  std::vector<double> mask(n, 1.0), keep(n, 1.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += std::fabs(a[i]);
  if (total == 0.0 || samples < 1) return {mask, keep};  // degenerate row: unchanged

  std::vector<double> cum(n);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    acc += std::fabs(a[i]);
    cum[i] = acc;
  }

  std::vector<bool> kept(n, false);
  for (int s = 0; s < samples; ++s) {
    const double u = rng.uniform01() * total;
    const std::size_t i =
        std::lower_bound(cum.begin(), cum.end(), u) - cum.begin();
    kept[std::min(i, n - 1)] = true;
  }

  for (std::size_t i = 0; i < n; ++i) {
    const double p = std::fabs(a[i]) / total;
    if (kept[i]) {
      mask[i] = 1.0;
      keep[i] = 1.0 - std::pow(1.0 - p, static_cast<double>(samples));
    } else {
      mask[i] = 0.0;
      keep[i] = 1.0;  // value irrelevant behind a zero mask
    }
  }
  return {mask, keep};
}

BackwardRule thermometer_tau_hat_rule(int levels) {
  return [levels](const Tape& t, const TapeNode& nd, const Tensor& g) {
    const Tensor& x = t.value(nd.inputs[0]);
    Tensor gx = Tensor::zeros(x.shape);
    const double l = static_cast<double>(levels);
    for (std::size_t i = 0; i < x.size(); ++i) {
      double acc = 0.0;
      for (int k = 0; k < levels; ++k) {
        const double d = x.data[i] - static_cast<double>(k) / l;
        if (d > 0.0 && d < 1.0) acc += g.data[i * levels + k];
      }
      gx.data[i] = acc;
    }
    return std::vector<Tensor>{gx};
  };
}

Tensor sap_layer(const Tensor& activations, int samples, Rng& rng) {
  Tensor out = activations.detached();
  const std::size_t cols = activations.rank() == 2 ? activations.shape[1] : activations.size();
  const std::size_t rows = out.size() / cols;
  for (std::size_t r = 0; r < rows; ++r) {
    auto [mask, keep] = sap_mask_keep(&out.data[r * cols], cols, samples, rng);
    for (std::size_t i = 0; i < cols; ++i)
      out.data[r * cols + i] = out.data[r * cols + i] * mask[i] / keep[i];
  }
  return out;
}

}  // namespace advlab::defenses
