// SPDX-License-Identifier: Apache-2.0
#include "nebla/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace nebla {

namespace {

void require_same(const Shape& a, const Shape& b, const char* what) {
  if (a != b) throw std::invalid_argument(std::string(what) + ": shapes " + shape_str(a) + " and " + shape_str(b) + " differ");
}

std::vector<double> gaussian_window(const SsimOptions& o) {
  std::vector<double> w(o.window);
  const double c = (static_cast<double>(o.window) - 1) / 2;
  double s = 0;
  for (std::size_t i = 0; i < o.window; ++i) s += w[i] = std::exp(-(i - c) * (i - c) / (2 * o.sigma * o.sigma));
  for (auto& v : w) v /= s;
  return w;
}

// Separable valid-mode filter of an [h, w] image.
std::vector<double> filter_valid(const std::vector<double>& img, std::size_t h, std::size_t w,
                                 const std::vector<double>& k) {
  const std::size_t n = k.size(), oh = h - n + 1, ow = w - n + 1;
  std::vector<double> rows(h * ow, 0.0), out(oh * ow, 0.0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0;
      for (std::size_t i = 0; i < n; ++i) s += k[i] * img[y * w + x + i];
      rows[y * ow + x] = s;
    }
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0;
      for (std::size_t i = 0; i < n; ++i) s += k[i] * rows[(y + i) * ow + x];
      out[y * ow + x] = s;
    }
  return out;
}

double ssim_plane(const float* a, const float* b, std::size_t h, std::size_t w, const SsimOptions& o) {
  if (h < o.window || w < o.window) {
    throw std::invalid_argument("ssim: image " + std::to_string(h) + "x" + std::to_string(w) +
                                " is smaller than the " + std::to_string(o.window) + "-point window");
  }
  const auto k = gaussian_window(o);
  std::vector<double> x(a, a + h * w), y(b, b + h * w), xx(h * w), yy(h * w), xy(h * w);
  for (std::size_t i = 0; i < h * w; ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = filter_valid(x, h, w, k), my = filter_valid(y, h, w, k);
  const auto sxx = filter_valid(xx, h, w, k), syy = filter_valid(yy, h, w, k), sxy = filter_valid(xy, h, w, k);
  const double c1 = std::pow(o.k1 * o.data_range, 2), c2 = std::pow(o.k2 * o.data_range, 2);
  double total = 0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cxy = sxy[i] - mx[i] * my[i];
    total += ((2 * mx[i] * my[i] + c1) * (2 * cxy + c2)) / ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(mx.size());
}

}  // namespace

double psnr(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size() || a.empty()) throw std::invalid_argument("psnr: inputs differ in size or are empty");
  double se = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    se += d * d;
  }
  if (se == 0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(255.0 * 255.0 / (se / static_cast<double>(a.size())));
}

double psnr(const Volume& a, const Volume& b) {
  require_same(a.data.shape(), b.data.shape(), "psnr");
  return psnr(a.data.data(), b.data.data());
}

double ssim(const Tensor<float>& a, const Tensor<float>& b, const SsimOptions& opts) {
  require_same(a.shape(), b.shape(), "ssim");
  if (a.rank() != 2) throw std::invalid_argument("ssim: expected an [H, W] image, got " + shape_str(a.shape()));
  return ssim_plane(a.ptr(), b.ptr(), a.dim(0), a.dim(1), opts);
}

double ssim(const Volume& a, const Volume& b, const SsimOptions& opts) {
  require_same(a.data.shape(), b.data.shape(), "ssim");
  const std::size_t H = a.height(), W = a.width(), D = a.depth();
  std::vector<float> sa(H * W), sb(H * W);
  double total = 0;
  for (std::size_t d = 0; d < D; ++d) {
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t w = 0; w < W; ++w) {
        sa[h * W + w] = a.at(h, w, d);
        sb[h * W + w] = b.at(h, w, d);
      }
    total += ssim_plane(sa.data(), sb.data(), H, W, opts);
  }
  return total / static_cast<double>(D);
}

void MetricReport::add(MetricCase c) { cases.push_back(std::move(c)); }

void MetricReport::finalize() {
  auto stats = [&](auto get, double& mean, double& sd) {
    const double n = static_cast<double>(cases.size());
    mean = 0;
    for (const auto& c : cases) mean += get(c);
    mean /= n;
    double ss = 0;
    for (const auto& c : cases) {
      const double d = get(c) - mean;
      ss += std::isfinite(d) ? d * d : 0.0;
    }
    sd = cases.size() > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
  };
  if (cases.empty()) throw std::invalid_argument("metric report has no cases");
  stats([](const MetricCase& c) { return c.psnr_db; }, psnr_mean, psnr_std);
  stats([](const MetricCase& c) { return c.ssim; }, ssim_mean, ssim_std);
}

std::string format_metric(double v, int precision) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

std::string MetricReport::csv() const {
  std::ostringstream os;
  os << "case,psnr_db,ssim_pct\n";
  for (const auto& c : cases) os << c.name << ',' << format_metric(c.psnr_db) << ',' << format_metric(100 * c.ssim) << '\n';
  os << "mean," << format_metric(psnr_mean) << ',' << format_metric(100 * ssim_mean) << '\n';
  os << "std," << format_metric(psnr_std) << ',' << format_metric(100 * ssim_std) << '\n';
  return os.str();
}

std::string MetricReport::table() const {
  return "PSNR " + format_metric(psnr_mean, 2) + " +- " + format_metric(psnr_std, 2) + " dB | SSIM " +
         format_metric(100 * ssim_mean, 2) + " +- " + format_metric(100 * ssim_std, 2) + " %";
}

SsimOptions fit_window(SsimOptions opts, std::size_t h, std::size_t w) {
  const std::size_t m = std::min(h, w);
  if (m >= opts.window) return opts;
  if (m < 3) throw std::invalid_argument("ssim: image " + std::to_string(h) + "x" + std::to_string(w) + " is too small");
  const std::size_t win = m % 2 ? m : m - 1;
  opts.sigma *= static_cast<double>(win) / static_cast<double>(opts.window);
  opts.window = win;
  return opts;
}

}  // namespace nebla
