#include "psal/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <string>

#include "psal/error.hpp"

namespace psal {

Grid::Grid(std::size_t size, std::vector<double> values) : size_(size), values_(std::move(values)) {
  if (size == 0) throw DimensionError("grid size must be positive");
  if (values_.size() != size * size)
    throw DimensionError("grid of size " + std::to_string(size) + " needs " + std::to_string(size * size) +
                         " values, got " + std::to_string(values_.size()));
  for (double v : values_)
    if (!std::isfinite(v)) throw UsageError("grid values must be finite");
}

SaliencyMap::SaliencyMap(std::size_t size, std::vector<double> values) : Grid(size, std::move(values)) {
  for (double v : values_)
    if (v < 0.0 || v > 1.0) throw UsageError("saliency map values must lie in [0, 1], got " + std::to_string(v));
}

FixationSet::FixationSet(std::size_t frame, std::vector<Fixation> points) : frame_(frame), points_(std::move(points)) {
  const auto s = static_cast<int>(frame);
  for (const auto& p : points_)
    if (p.row < 0 || p.col < 0 || p.row >= s || p.col >= s)
      throw UsageError("fixation (" + std::to_string(p.row) + "," + std::to_string(p.col) + ") outside frame " +
                       std::to_string(frame));
}

namespace {

void require_same_size(const Grid& a, const Grid& b, const char* what) {
  if (a.size() != b.size())
    throw DimensionError(std::string(what) + ": size mismatch " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
}

void require_fixations(const Grid& map, const FixationSet& fix, const char* what) {
  if (fix.empty()) throw UsageError(std::string(what) + ": empty fixation set");
  if (fix.frame() != map.size())
    throw DimensionError(std::string(what) + ": fixations index a " + std::to_string(fix.frame()) +
                         " frame, map is " + std::to_string(map.size()));
}

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;

std::array<double, kSsimWindow * kSsimWindow> gaussian_window() {
  std::array<double, kSsimWindow * kSsimWindow> w{};
  const int half = kSsimWindow / 2;
  double total = 0.0;
  for (int i = 0; i < kSsimWindow; ++i)
    for (int j = 0; j < kSsimWindow; ++j) {
      const double d2 = static_cast<double>((i - half) * (i - half) + (j - half) * (j - half));
      w[i * kSsimWindow + j] = std::exp(-d2 / (2.0 * kSsimSigma * kSsimSigma));
      total += w[i * kSsimWindow + j];
    }
  for (auto& v : w) v /= total;
  return w;
}

}  // namespace

double nss(const Grid& map, const FixationSet& fixations) {
  require_fixations(map, fixations, "nss");
  const auto& v = map.values();
  const double n = static_cast<double>(v.size());
  const double mu = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double var = 0.0;
  for (double x : v) var += (x - mu) * (x - mu);
  const double sd = std::sqrt(var / n);
  if (!(sd > 0.0)) throw UndefinedMetricError("nss: map has zero variance");
  double total = 0.0;
  for (const auto& p : fixations.points()) total += (map(p.row, p.col) - mu) / sd;
  return total / static_cast<double>(fixations.points().size());
}

double kl_div(const Grid& gt, const Grid& pred, double eps) {
  require_same_size(gt, pred, "kl_div");
  double sg = 0.0, sp = 0.0;
  for (std::size_t i = 0; i < gt.numel(); ++i) {
    sg += gt.values()[i] + eps;
    sp += pred.values()[i] + eps;
  }
  double kl = 0.0;
  for (std::size_t i = 0; i < gt.numel(); ++i) {
    const double p = (gt.values()[i] + eps) / sg;
    const double q = (pred.values()[i] + eps) / sp;
    kl += p * std::log(p / q);
  }
  // Rounding can leave a tiny negative value for identical inputs.
  return std::max(kl, 0.0);
}

double ssim(const Grid& a, const Grid& b) {
  require_same_size(a, b, "ssim");
  if (a.size() < static_cast<std::size_t>(kSsimWindow))
    throw DimensionError("ssim: maps must be at least " + std::to_string(kSsimWindow) + " pixels wide");
  static const auto window = gaussian_window();
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const std::size_t out = a.size() - kSsimWindow + 1;
  double total = 0.0;
  for (std::size_t r = 0; r < out; ++r) {
    for (std::size_t c = 0; c < out; ++c) {
      double ma = 0.0, mb = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
      for (int i = 0; i < kSsimWindow; ++i)
        for (int j = 0; j < kSsimWindow; ++j) {
          const double w = window[i * kSsimWindow + j];
          const double x = a(r + i, c + j), y = b(r + i, c + j);
          ma += w * x;
          mb += w * y;
          saa += w * x * x;
          sbb += w * y * y;
          sab += w * x * y;
        }
      const double var_a = saa - ma * ma, var_b = sbb - mb * mb, cov = sab - ma * mb;
      const double num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
      const double den = (ma * ma + mb * mb + c1) * (var_a + var_b + c2);
      total += num / den;
    }
  }
  return total / static_cast<double>(out * out);
}

double auc_judd(const Grid& map, const FixationSet& fixations) {
  require_fixations(map, fixations, "auc_judd");
  const std::size_t n = map.numel();
  std::vector<char> positive(n, 0);
  for (const auto& p : fixations.points()) positive[static_cast<std::size_t>(p.row) * map.size() + p.col] = 1;
  const auto num_pos = static_cast<std::size_t>(std::count(positive.begin(), positive.end(), 1));
  const std::size_t num_neg = n - num_pos;
  if (num_neg == 0) throw UsageError("auc_judd: every pixel is fixated, no negatives");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const auto& v = map.values();
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return v[i] > v[j]; });

  // Sweep thresholds from high to low; each distinct value adds one ROC point.
  double area = 0.0;
  std::size_t tp = 0, fp = 0;
  double prev_tpr = 0.0, prev_fpr = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && v[order[j]] == v[order[i]]) {
      if (positive[order[j]])
        ++tp;
      else
        ++fp;
      ++j;
    }
    const double tpr = static_cast<double>(tp) / static_cast<double>(num_pos);
    const double fpr = static_cast<double>(fp) / static_cast<double>(num_neg);
    area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
    prev_tpr = tpr;
    prev_fpr = fpr;
    i = j;
  }
  return area;
}

double mse(const Grid& a, const Grid& b) {
  require_same_size(a, b, "mse");
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = a.values()[i] - b.values()[i];
    s += d * d;
  }
  return s / static_cast<double>(a.numel());
}

double spread(const Grid& map) {
  double mass = 0.0, cr = 0.0, cc = 0.0;
  for (std::size_t r = 0; r < map.size(); ++r)
    for (std::size_t c = 0; c < map.size(); ++c) {
      const double w = map(r, c);
      if (w < 0.0) throw UsageError("spread: map values must be non-negative");
      mass += w;
      cr += w * static_cast<double>(r);
      cc += w * static_cast<double>(c);
    }
  if (!(mass > 0.0)) throw UsageError("spread: map has no mass");
  cr /= mass;
  cc /= mass;
  double dist = 0.0;
  for (std::size_t r = 0; r < map.size(); ++r)
    for (std::size_t c = 0; c < map.size(); ++c)
      dist += map(r, c) * std::hypot(static_cast<double>(r) - cr, static_cast<double>(c) - cc);
  return dist / mass / (static_cast<double>(map.size()) * std::sqrt(2.0));
}

}  // namespace psal
