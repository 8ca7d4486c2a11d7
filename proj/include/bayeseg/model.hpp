#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "bayeseg/grid.hpp"
#include "bayeseg/rng.hpp"

namespace bayeseg {

/// Per-pixel Gaussian variational factor.  Variances are stored in log
/// space so unconstrained gradient steps keep them positive.
struct GaussianField {
  std::vector<ImageGrid> mean;
  std::vector<ImageGrid> log_variance;

  int channels() const { return static_cast<int>(mean.size()); }

  static GaussianField constant(int width, int height, int channels,
                                double mean_value, double log_var_value) {
    GaussianField f;
    f.mean.assign(channels, ImageGrid(width, height, mean_value));
    f.log_variance.assign(channels, ImageGrid(width, height, log_var_value));
    return f;
  }

  ImageGrid variance(int k) const {
    ImageGrid v = log_variance[k];
    for (double& e : v.data) e = std::exp(e);
    return v;
  }
  ImageGrid stddev(int k) const {
    ImageGrid s = log_variance[k];
    for (double& e : s.data) e = std::exp(0.5 * e);
    return s;
  }
};

/// Per-pixel Gamma variational factor in (shape, rate) order.
struct GammaField {
  std::vector<ImageGrid> shape;
  std::vector<ImageGrid> rate;

  int channels() const { return static_cast<int>(shape.size()); }

  static GammaField constant(int width, int height, int channels,
                             double shape_value, double rate_value) {
    if (!(shape_value > 0.0) || !(rate_value > 0.0))
      throw std::invalid_argument("GammaField: shape and rate must be positive");
    GammaField f;
    f.shape.assign(channels, ImageGrid(width, height, shape_value));
    f.rate.assign(channels, ImageGrid(width, height, rate_value));
    return f;
  }

  ImageGrid posterior_mean(int k = 0) const {
    ImageGrid m = shape[k];
    for (std::size_t i = 0; i < m.size(); ++i) m[i] /= rate[k][i];
    return m;
  }
};

/// Per-class Beta variational factor.
struct BetaVector {
  std::vector<double> alpha;
  std::vector<double> beta;

  int classes() const { return static_cast<int>(alpha.size()); }
};

/// Fixed prior and loss constants.  Defaults follow the model's standard
/// configuration: every rate hyperparameter is 2, the Beta prior is (2,2),
/// the basis mean prior is N(0, 1), and the Gamma shape hyperparameters are
/// 1e-6 (rho), 1e-8 (upsilon), 1e-4 (omega); the balancing weight is 100.
struct Hyperparams {
  int K = 2;
  double mu0 = 0.0;
  double sigma0 = 1.0;
  double phi_rho = 2.0;
  double gamma_rho = 1e-6;
  double phi_upsilon = 2.0;
  double gamma_upsilon = 1e-8;
  double phi_omega = 2.0;
  double gamma_omega = 1e-4;
  double alpha_pi = 2.0;
  double beta_pi = 2.0;
  double lambda = 100.0;

  void validate() const {
    if (K < 1) throw std::invalid_argument("Hyperparams: K must be >= 1");
    if (!(sigma0 > 0.0)) throw std::invalid_argument("Hyperparams: sigma0 must be positive");
    if (!(phi_rho > 0.0) || !(gamma_rho > 0.0))
      throw std::invalid_argument("Hyperparams: rho hyperparameters must be positive");
    if (!(phi_upsilon > 0.0) || !(gamma_upsilon > 0.0))
      throw std::invalid_argument("Hyperparams: upsilon hyperparameters must be positive");
    if (!(phi_omega > 0.0) || !(gamma_omega > 0.0))
      throw std::invalid_argument("Hyperparams: omega hyperparameters must be positive");
    if (!(alpha_pi > 0.0) || !(beta_pi > 0.0))
      throw std::invalid_argument("Hyperparams: pi hyperparameters must be positive");
    if (!(lambda >= 0.0)) throw std::invalid_argument("Hyperparams: lambda must be >= 0");
    if (!std::isfinite(mu0)) throw std::invalid_argument("Hyperparams: mu0 must be finite");
  }
};

/// The full variational state: q(m) q(rho) q(x) q(upsilon) q(z) q(omega) q(pi).
struct VariationalState {
  GaussianField q_x;        // contour, 1 channel
  GaussianField q_m;        // basis mean, 1 channel
  GaussianField q_z;        // label, K channels
  GammaField q_rho;         // basis precision, 1 channel
  GammaField q_upsilon;     // line field, 1 channel
  GammaField q_omega;       // boundary field, K channels
  BetaVector q_pi;          // class probabilities

  int width() const { return q_x.mean[0].width; }
  int height() const { return q_x.mean[0].height; }
  int K() const { return q_z.channels(); }
};

/// Deterministic data-driven initialization: the basis mean starts at the
/// image's spatial mean, the contour at the centered image, labels at zero,
/// and all conjugate factors at their priors.
inline VariationalState init_state(const ImageGrid& y, const Hyperparams& h,
                                   std::uint64_t /*seed*/ = 0) {
  h.validate();
  if (!all_finite(y)) throw std::invalid_argument("init_state: non-finite image");
  const int w = y.width, hh = y.height;
  const double log_var0 = std::log(1e-2);
  const double ybar = grid_mean(y);

  VariationalState s;
  s.q_m = GaussianField::constant(w, hh, 1, ybar, log_var0);
  s.q_x = GaussianField::constant(w, hh, 1, 0.0, log_var0);
  s.q_x.mean[0] = y;
  for (double& e : s.q_x.mean[0].data) e -= ybar;
  s.q_z = GaussianField::constant(w, hh, h.K, 0.0, log_var0);
  s.q_rho = GammaField::constant(w, hh, 1, h.gamma_rho, h.phi_rho);
  s.q_upsilon = GammaField::constant(w, hh, 1, h.gamma_upsilon, h.phi_upsilon);
  s.q_omega = GammaField::constant(w, hh, h.K, h.gamma_omega, h.phi_omega);
  s.q_pi.alpha.assign(h.K, h.alpha_pi);
  s.q_pi.beta.assign(h.K, h.beta_pi);
  return s;
}

/// Per-channel standard-normal draws matching a Gaussian field's layout.
struct GaussianDraws {
  std::vector<ImageGrid> eps;

  static GaussianDraws zeros(const GaussianField& f) {
    GaussianDraws d;
    d.eps.assign(f.channels(),
                 ImageGrid(f.mean[0].width, f.mean[0].height, 0.0));
    return d;
  }
  static GaussianDraws standard_normal(const GaussianField& f, CounterRng& rng) {
    GaussianDraws d = zeros(f);
    for (auto& g : d.eps)
      for (double& e : g.data) e = rng.normal();
    return d;
  }
};

/// Reparameterized sample: mean + sqrt(variance) * eps, channel by channel.
inline std::vector<ImageGrid> sample_gaussian_field(const GaussianField& f,
                                                    const GaussianDraws& d) {
  std::vector<ImageGrid> out;
  out.reserve(f.channels());
  for (int k = 0; k < f.channels(); ++k) {
    ImageGrid g = f.mean[k];
    const ImageGrid& lv = f.log_variance[k];
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] += std::exp(0.5 * lv[i]) * d.eps[k][i];
    out.push_back(std::move(g));
  }
  return out;
}

inline std::vector<ImageGrid> sample_gaussian_field(const GaussianField& f,
                                                    CounterRng& rng) {
  return sample_gaussian_field(f, GaussianDraws::standard_normal(f, rng));
}

/// Per-pixel softmax over the K mean channels of the label field.  The
/// resulting weights are the nonnegative, sum-to-one segmentation weights
/// that enter the contour precision.
inline std::vector<ImageGrid> softmax_weights(const std::vector<ImageGrid>& means) {
  const int k_count = static_cast<int>(means.size());
  std::vector<ImageGrid> w(means);
  const std::size_t n = means[0].size();
  for (std::size_t i = 0; i < n; ++i) {
    double mx = means[0][i];
    for (int k = 1; k < k_count; ++k) mx = std::max(mx, means[k][i]);
    double sum = 0.0;
    for (int k = 0; k < k_count; ++k) {
      w[k][i] = std::exp(means[k][i] - mx);
      sum += w[k][i];
    }
    for (int k = 0; k < k_count; ++k) w[k][i] /= sum;
  }
  return w;
}

// ---------------------------------------------------------------------------
// Synthetic scenes (test oracle for the decomposition y = contour + basis).

enum class SceneLayout { kNestedDisks, kNestedRects };

struct SceneSpec {
  int width = 32;
  int height = 32;
  int K = 2;
  std::vector<double> levels;      // per-class intensity; size K
  double bias_amplitude = 0.5;
  double noise_sigma = 0.05;
  SceneLayout layout = SceneLayout::kNestedDisks;

  void validate() const {
    if (width <= 0 || height <= 0)
      throw std::invalid_argument("SceneSpec: dimensions must be positive");
    if (K < 1) throw std::invalid_argument("SceneSpec: K must be >= 1");
    if (static_cast<int>(levels.size()) != K)
      throw std::invalid_argument("SceneSpec: levels must have K entries");
    if (!(noise_sigma >= 0.0))
      throw std::invalid_argument("SceneSpec: noise sigma must be >= 0");
  }
};

struct Scene {
  ImageGrid y;
  ImageGrid gt_label;    // class ids 0..K-1
  ImageGrid gt_basis;    // low-frequency bias plus the global mean
  ImageGrid gt_contour;  // zero-mean piecewise-constant intensity map
};

/// Nested shapes: class k occupies a disk (or rectangle) whose radius shrinks
/// with k, class 0 is the background.
inline Scene synthesize(const SceneSpec& spec, std::uint64_t seed) {
  spec.validate();
  const int w = spec.width, h = spec.height;
  Scene sc{ImageGrid(w, h), ImageGrid(w, h), ImageGrid(w, h), ImageGrid(w, h)};

  const double cx = w / 2.0, cy = h / 2.0;
  const double r_max = 0.3125 * std::min(w, h);
  for (int yy = 0; yy < h; ++yy) {
    for (int xx = 0; xx < w; ++xx) {
      int cls = 0;
      for (int k = 1; k < spec.K; ++k) {
        const double r = r_max * (spec.K - k) / (spec.K - 1 + 1e-300);
        bool inside;
        if (spec.layout == SceneLayout::kNestedDisks) {
          const double dx = xx - cx, dy = yy - cy;
          inside = dx * dx + dy * dy <= r * r;
        } else {
          inside = std::abs(xx - cx) <= r && std::abs(yy - cy) <= r;
        }
        if (inside) cls = k;
      }
      sc.gt_label.at(xx, yy) = cls;
    }
  }

  ImageGrid intensity(w, h);
  for (std::size_t i = 0; i < intensity.size(); ++i)
    intensity[i] = spec.levels[static_cast<int>(sc.gt_label[i])];
  const double mean_level = grid_mean(intensity);

  for (int yy = 0; yy < h; ++yy)
    for (int xx = 0; xx < w; ++xx)
      sc.gt_basis.at(xx, yy) =
          mean_level + spec.bias_amplitude *
                           std::cos(M_PI * xx / std::max(1, w - 1)) *
                           std::cos(M_PI * yy / std::max(1, h - 1));

  for (std::size_t i = 0; i < intensity.size(); ++i)
    sc.gt_contour[i] = intensity[i] - mean_level;

  CounterRng rng = make_rng(seed, RngStream::kSceneNoise);
  for (std::size_t i = 0; i < sc.y.size(); ++i)
    sc.y[i] = sc.gt_contour[i] + sc.gt_basis[i] + spec.noise_sigma * rng.normal();
  return sc;
}

}  // namespace bayeseg
