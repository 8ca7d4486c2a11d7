#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace bayeseg {

/// Rectangular scalar field, row-major.
struct ImageGrid {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  ImageGrid() = default;
  ImageGrid(int w, int h, double fill = 0.0)
      : width(w), height(h),
        data(static_cast<std::size_t>(w > 0 && h > 0 ? w * h : 0), fill) {
    if (w <= 0 || h <= 0)
      throw std::invalid_argument("ImageGrid: dimensions must be positive");
  }

  std::size_t size() const { return data.size(); }
  double operator[](std::size_t i) const { return data[i]; }
  double& operator[](std::size_t i) { return data[i]; }
  double at(int x, int y) const {
    return data[static_cast<std::size_t>(y) * width + x];
  }
  double& at(int x, int y) {
    return data[static_cast<std::size_t>(y) * width + x];
  }
  bool same_shape(const ImageGrid& o) const {
    return width == o.width && height == o.height;
  }
};

inline void require_same_shape(const ImageGrid& a, const ImageGrid& b,
                               const char* what) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(what) + ": dimension mismatch (" +
                                std::to_string(a.width) + "x" +
                                std::to_string(a.height) + " vs " +
                                std::to_string(b.width) + "x" +
                                std::to_string(b.height) + ")");
}

inline bool all_finite(const ImageGrid& g) {
  for (double v : g.data)
    if (!std::isfinite(v)) return false;
  return true;
}

inline double grid_mean(const ImageGrid& g) {
  double s = 0.0;
  for (double v : g.data) s += v;
  return s / static_cast<double>(g.size());
}

/// Neighborhood difference operator D = I - B on a w x h grid, where B
/// averages the 4-connected neighbors with weight 0.25 each.  Out-of-bounds
/// neighbors contribute zero, which keeps D non-singular (boundary rows are
/// strictly diagonally dominant).
class StencilOperator {
 public:
  static constexpr double kNeighborWeight = 0.25;

  StencilOperator(int width, int height) : width_(width), height_(height) {
    if (width <= 0 || height <= 0)
      throw std::invalid_argument("StencilOperator: dimensions must be positive");
  }

  int width() const { return width_; }
  int height() const { return height_; }

  /// out[i] = f[i] - 0.25 * sum of in-bounds 4-neighbors of f.
  ImageGrid apply(const ImageGrid& f) const {
    check(f, "StencilOperator::apply");
    ImageGrid out(width_, height_);
    for (int y = 0; y < height_; ++y) {
      for (int x = 0; x < width_; ++x) {
        double acc = 0.0;
        if (x > 0) acc += f.at(x - 1, y);
        if (x + 1 < width_) acc += f.at(x + 1, y);
        if (y > 0) acc += f.at(x, y - 1);
        if (y + 1 < height_) acc += f.at(x, y + 1);
        out.at(x, y) = f.at(x, y) - kNeighborWeight * acc;
      }
    }
    return out;
  }

  /// Exact adjoint of apply: <apply(f), g> == <f, apply_transpose(g)>.
  /// Written as a scatter so the adjoint identity holds by construction
  /// rather than by the (true) symmetry of B.
  ImageGrid apply_transpose(const ImageGrid& g) const {
    check(g, "StencilOperator::apply_transpose");
    ImageGrid out(width_, height_);
    for (int y = 0; y < height_; ++y) {
      for (int x = 0; x < width_; ++x) {
        const double v = g.at(x, y);
        out.at(x, y) += v;
        if (x > 0) out.at(x - 1, y) -= kNeighborWeight * v;
        if (x + 1 < width_) out.at(x + 1, y) -= kNeighborWeight * v;
        if (y > 0) out.at(x, y - 1) -= kNeighborWeight * v;
        if (y + 1 < height_) out.at(x, y + 1) -= kNeighborWeight * v;
      }
    }
    return out;
  }

  /// out[i] = sum_j D[i,j]^2 * v[j] = v[i] + 0.0625 * sum of 4-neighbors.
  /// Used for the per-pixel variance quadratic <sigma^2, d_i^2>.
  ImageGrid row_squared_apply(const ImageGrid& v) const {
    check(v, "StencilOperator::row_squared_apply");
    for (double e : v.data)
      if (e < 0.0)
        throw std::invalid_argument(
            "StencilOperator::row_squared_apply: negative variance entry");
    const double w2 = kNeighborWeight * kNeighborWeight;
    ImageGrid out(width_, height_);
    for (int y = 0; y < height_; ++y) {
      for (int x = 0; x < width_; ++x) {
        double acc = 0.0;
        if (x > 0) acc += v.at(x - 1, y);
        if (x + 1 < width_) acc += v.at(x + 1, y);
        if (y > 0) acc += v.at(x, y - 1);
        if (y + 1 < height_) acc += v.at(x, y + 1);
        out.at(x, y) = v.at(x, y) + w2 * acc;
      }
    }
    return out;
  }

 private:
  void check(const ImageGrid& f, const char* what) const {
    if (f.width != width_ || f.height != height_)
      throw std::invalid_argument(std::string(what) + ": dimension mismatch");
  }

  int width_;
  int height_;
};

}  // namespace bayeseg
