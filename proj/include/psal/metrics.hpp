#ifndef PSAL_METRICS_HPP
#define PSAL_METRICS_HPP

#include <cstddef>
#include <vector>

namespace psal {

/// Square fp64 grid, row-major. Metrics accept any finite grid; SaliencyMap
/// additionally pins values to [0, 1].
class Grid {
 public:
  Grid() = default;
  Grid(std::size_t size, std::vector<double> values);
  Grid(std::size_t size, double fill) : Grid(size, std::vector<double>(size * size, fill)) {}

  std::size_t size() const { return size_; }
  std::size_t numel() const { return values_.size(); }
  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }
  double operator()(std::size_t row, std::size_t col) const { return values_[row * size_ + col]; }
  double& operator()(std::size_t row, std::size_t col) { return values_[row * size_ + col]; }

  friend bool operator==(const Grid&, const Grid&) = default;

 protected:
  std::size_t size_ = 0;
  std::vector<double> values_;
};

class SaliencyMap : public Grid {
 public:
  SaliencyMap() = default;
  SaliencyMap(std::size_t size, std::vector<double> values);
  SaliencyMap(std::size_t size, double fill) : SaliencyMap(size, std::vector<double>(size * size, fill)) {}
};

struct Fixation {
  int row = 0;
  int col = 0;
  friend bool operator==(const Fixation&, const Fixation&) = default;
};

class FixationSet {
 public:
  FixationSet() = default;
  FixationSet(std::size_t frame, std::vector<Fixation> points);

  std::size_t frame() const { return frame_; }
  const std::vector<Fixation>& points() const { return points_; }
  bool empty() const { return points_.empty(); }

  friend bool operator==(const FixationSet&, const FixationSet&) = default;

 private:
  std::size_t frame_ = 0;
  std::vector<Fixation> points_;
};

inline constexpr double kKlEpsilon = 1e-8;

/// Normalized scanpath saliency: mean z-score (population std) at fixations.
double nss(const Grid& map, const FixationSet& fixations);

/// KL(gt || pred) after adding eps per cell and normalizing each map to sum 1.
/// Not symmetric in its arguments.
double kl_div(const Grid& gt, const Grid& pred, double eps = kKlEpsilon);

/// Mean local SSIM, 11x11 Gaussian window (sigma 1.5) over valid positions,
/// dynamic range 1, K1 = 0.01, K2 = 0.03.
double ssim(const Grid& a, const Grid& b);

/// AUC-Judd: fixated pixels are positives, every other pixel a negative,
/// one ROC point per distinct saliency value, trapezoidal area.
double auc_judd(const Grid& map, const FixationSet& fixations);

double mse(const Grid& a, const Grid& b);

/// Mass-weighted mean distance from the center of mass, divided by the grid
/// diagonal (size * sqrt 2). Values must be non-negative.
double spread(const Grid& map);

}  // namespace psal

#endif  // PSAL_METRICS_HPP
