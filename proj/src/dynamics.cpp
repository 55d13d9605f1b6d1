#include "mfbranch/dynamics.hpp"

#include <algorithm>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>
#include <limits>

#include "mfbranch/errors.hpp"
#include "mfbranch/parallel.hpp"
#include "mfbranch/rng.hpp"
#include "mfbranch/time_grid.hpp"

namespace mfbranch {

Kernel Kernel::constant(double value) {
  return Kernel{[value](std::span<const double>) { return value; }, 0.0, value};
}

Kernel Kernel::exponential(double length) {
  return Kernel{[length](std::span<const double> z) { return std::exp(-euclidean_norm(z) / length); },
                1.0 / length, 1.0};
}

Kernel Kernel::gaussian(double length) {
  const double inv = 1.0 / (2.0 * length * length);
  return Kernel{[inv](std::span<const double> z) {
                  double s = 0.0;
                  for (double v : z) s += v * v;
                  return std::exp(-s * inv);
                },
                1.0 / (length * std::sqrt(std::exp(1.0))), 1.0};
}

Coefficients Coefficients::zero(std::size_t dim) {
  Coefficients c;
  c.dim = dim;
  c.drift = [](std::span<const double>, double, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
  };
  c.diffusion = [](std::span<const double>, double, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
  };
  c.measure_free = true;
  return c;
}

Coefficients Coefficients::constant_drift(std::vector<double> velocity) {
  Coefficients c = zero(velocity.size());
  c.drift = [velocity](std::span<const double>, double, std::span<double> out) {
    std::copy(velocity.begin(), velocity.end(), out.begin());
  };
  return c;
}

namespace {

void write_scaled_identity(std::span<double> out, std::size_t dim, double s) {
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t k = 0; k < dim; ++k) out[k * dim + k] = s;
}

}  // namespace

Coefficients Coefficients::ornstein_uhlenbeck(std::size_t dim, double theta, double s) {
  Coefficients c;
  c.dim = dim;
  c.drift = [theta](std::span<const double> x, double, std::span<double> out) {
    for (std::size_t k = 0; k < x.size(); ++k) out[k] = -theta * x[k];
  };
  c.diffusion = [dim, s](std::span<const double>, double, std::span<double> out) {
    write_scaled_identity(out, dim, s);
  };
  c.measure_free = true;
  c.drift_lipschitz = std::abs(theta);
  c.diffusion_lipschitz = 0.0;
  c.sigma_growth = std::abs(s) * std::sqrt(static_cast<double>(dim));
  return c;
}

Coefficients Coefficients::density_diffusion(std::size_t dim, double theta, double s, double gamma) {
  Coefficients c = ornstein_uhlenbeck(dim, theta, s);
  c.diffusion = [dim, s, gamma](std::span<const double>, double v, std::span<double> out) {
    write_scaled_identity(out, dim, s * (1.0 + gamma * v));
  };
  c.measure_free = false;
  c.diffusion_lipschitz = std::abs(s * gamma) * std::sqrt(static_cast<double>(dim));
  c.sigma_growth = std::abs(s) * std::max(1.0, std::abs(gamma)) * std::sqrt(static_cast<double>(dim));
  return c;
}

TimeVaryingRates TimeVaryingRates::constant(double r, double c) {
  return TimeVaryingRates{[r](double) { return r; }, [c](double) { return c; }, r, c};
}

bool is_pure_branching(const RateSpec& rates) noexcept {
  return std::holds_alternative<TimeVaryingRates>(rates);
}

bool validate_kernel(const Kernel& k, std::size_t dim, Stream& rng, int samples) {
  std::vector<double> a(dim), b(dim);
  for (int s = 0; s < samples; ++s) {
    for (std::size_t i = 0; i < dim; ++i) {
      a[i] = 4.0 * rng.normal();
      b[i] = a[i] + 0.5 * rng.normal();
    }
    const double fa = k(a);
    const double fb = k(b);
    if (fa < 0.0 || fa > k.sup_bound * (1.0 + 1e-12)) return false;
    if (std::abs(fa - fb) > k.lipschitz_bound * std::sqrt(squared_distance(a, b)) * (1.0 + 1e-9) + 1e-15)
      return false;
  }
  return true;
}

bool validate_sigma_growth(const Coefficients& c, Stream& rng, int samples) {
  std::vector<double> x(c.dim), sigma(c.dim * c.dim);
  for (int s = 0; s < samples; ++s) {
    for (double& xi : x) xi = 5.0 * rng.normal();
    const double v = 10.0 * rng.uniform();
    c.diffusion(x, v, sigma);
    if (euclidean_norm(sigma) > c.sigma_growth * (1.0 + v) * (1.0 + 1e-12)) return false;
  }
  return true;
}

bool validate_rates(const TimeVaryingRates& rates, double horizon, int samples) {
  for (int s = 0; s <= samples; ++s) {
    const double t = horizon * static_cast<double>(s) / static_cast<double>(samples);
    const double r = rates.birth(t);
    const double c = rates.death(t);
    if (r < 0.0 || r > rates.birth_bound || c < 0.0 || c > rates.death_bound) return false;
  }
  return true;
}

double convolve(const Kernel& k, const WeightedPointMeasure& m, std::span<const double> x) {
  if (m.extinct()) return 0.0;
  const double n = static_cast<double>(m.atom_count());
  return convolve_sample(k, m.atoms(), n / static_cast<double>(m.scale()), x);
}

double convolve_sample(const Kernel& k, const PointSet& sample, double weight,
                       std::span<const double> x) {
  if (sample.empty()) return 0.0;
  std::vector<double> z(x.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const auto xi = sample[i];
    for (std::size_t d = 0; d < z.size(); ++d) z[d] = x[d] - xi[d];
    sum += k(z);
  }
  return weight * sum / static_cast<double>(sample.size());
}

void euler_update(const Coefficients& coeffs, std::span<double> x, double drift_field,
                  double diffusion_field, double h, std::span<const double> dW,
                  std::span<double> scratch) {
  const std::size_t d = coeffs.dim;
  auto drift = scratch.subspan(0, d);
  auto sigma = scratch.subspan(d, d * d);
  coeffs.drift(x, drift_field, drift);
  coeffs.diffusion(x, diffusion_field, sigma);
  for (std::size_t i = 0; i < d; ++i) {
    double noise = 0.0;
    for (std::size_t j = 0; j < d; ++j) noise += sigma[i * d + j] * dW[j];
    x[i] += drift[i] * h + noise;
  }
}

std::vector<double> euler_step(const Coefficients& coeffs, const Kernels& kernels,
                               const WeightedPointMeasure& field, std::span<const double> x,
                               double h, std::span<const double> dW) {
  if (!(h > 0.0)) throw ConfigError("Euler step must be positive");
  if (x.size() != coeffs.dim || dW.size() != coeffs.dim) throw DimensionError("euler_step dimension mismatch");
  std::vector<double> out(x.begin(), x.end());
  std::vector<double> scratch(coeffs.dim + coeffs.dim * coeffs.dim);
  const double vh = coeffs.measure_free ? 0.0 : convolve(kernels.drift_kernel, field, x);
  const double vg = coeffs.measure_free ? 0.0 : convolve(kernels.diffusion_kernel, field, x);
  euler_update(coeffs, out, vh, vg, h, dW, scratch);
  return out;
}

double logistic_mass(double n0, double r, double c, double t) {
  if (!(n0 > 0.0)) throw ConfigError("initial mass must be positive");
  // n0 e^{rt} / (1 + c n0 (e^{rt} - 1)/r), with (e^{rt}-1)/r -> t as r -> 0.
  const double growth = std::abs(r) < 1e-300 ? t : std::expm1(r * t) / r;
  return n0 * std::exp(r * t) / (1.0 + c * n0 * growth);
}

double logistic_mass_rk4(double n0, double r, double c, double t, int steps) {
  const auto f = [r, c](double n) { return (r - c * n) * n; };
  const double h = t / steps;
  double n = n0;
  for (int i = 0; i < steps; ++i) {
    const double k1 = f(n);
    const double k2 = f(n + 0.5 * h * k1);
    const double k3 = f(n + 0.5 * h * k2);
    const double k4 = f(n + h * k3);
    n += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return n;
}

double linear_mass(double n0, const TimeVaryingRates& rates, double t) {
  if (!(n0 > 0.0)) throw ConfigError("initial mass must be positive");
  if (t <= 0.0) return n0;
  const auto integrand = [&rates](double s) { return rates.birth(s) - rates.death(s); };
  const double integral =
      boost::math::quadrature::gauss_kronrod<double, 15>::integrate(integrand, 0.0, t, 15, 1e-12);
  return n0 * std::exp(integral);
}

double limit_mass(double n0, const RateSpec& rates, double t) {
  if (const auto* cr = std::get_if<ConstantRates>(&rates)) {
    return logistic_mass(n0, cr->birth - cr->killing, cr->competition, t);
  }
  return linear_mass(n0, std::get<TimeVaryingRates>(rates), t);
}

ReferenceFlow::ReferenceFlow(std::vector<double> times, std::vector<double> masses,
                             std::vector<PointSet> samples, double step)
    : times_(std::move(times)), masses_(std::move(masses)), samples_(std::move(samples)), step_(step) {
  if (times_.empty() || times_.size() != masses_.size() || times_.size() != samples_.size())
    throw ConfigError("reference flow arrays must be nonempty and of equal length");
  const std::size_t m = samples_.front().size();
  for (std::size_t j = 0; j < times_.size(); ++j) {
    if (j > 0 && !(times_[j] > times_[j - 1])) throw ConfigError("reference grid must be increasing");
    if (!(masses_[j] > 0.0)) throw ConfigError("reference masses must be positive");
    if (samples_[j].size() != m) throw ConfigError("reference sample size must be constant");
  }
  sorted_.resize(times_.size());
  if (samples_.front().dim() == 1) {
    for (std::size_t j = 0; j < times_.size(); ++j) {
      const auto c = samples_[j].coords();
      sorted_[j].assign(c.begin(), c.end());
      std::sort(sorted_[j].begin(), sorted_[j].end());
    }
  }
}

std::size_t ReferenceFlow::index_at(double t) const noexcept {
  const auto it = std::upper_bound(times_.begin(), times_.end(), t + 1e-12 * std::max(1.0, std::abs(t)));
  if (it == times_.begin()) return 0;
  return static_cast<std::size_t>(it - times_.begin()) - 1;
}

ReferenceFlow evolve_reference(const Coefficients& coeffs, const Kernels& kernels,
                               const RateSpec& rates, const ProbabilityEmpirical& initial_sample,
                               double n0, const std::vector<double>& grid, double step,
                               std::uint64_t seed, unsigned threads) {
  const std::size_t m = initial_sample.size();
  const std::size_t d = coeffs.dim;
  if (m < 2) throw ConfigError("reference ensemble needs at least two particles");
  if (initial_sample.dim() != d) throw DimensionError("reference sample dimension mismatch");
  if (grid.empty()) throw ConfigError("reference grid is empty");
  for (std::size_t j = 1; j < grid.size(); ++j)
    if (!(grid[j] > grid[j - 1])) throw ConfigError("reference grid must be strictly increasing");
  if (!(step > 0.0)) throw ConfigError("reference step must be positive");
  if (!(n0 > 0.0)) throw ConfigError("initial mass must be positive");

  PointSet particles = initial_sample.atoms();
  std::vector<Stream> streams;
  streams.reserve(m);
  for (std::size_t i = 0; i < m; ++i) streams.emplace_back(seed, std::initializer_list<std::uint64_t>{i});

  std::vector<double> masses{limit_mass(n0, rates, grid.front())};
  std::vector<PointSet> samples{particles};
  std::vector<double> drift_field(m, 0.0), diffusion_field(m, 0.0);

  double t = grid.front();
  for (std::size_t j = 1; j < grid.size(); ++j) {
    while (t < grid[j]) {
      const double t_next = next_substep_end(t, grid[j], step);
      const double dt = t_next - t;
      const double sqdt = std::sqrt(dt);
      if (!coeffs.measure_free) {
        // Barrier: the whole field is read before any particle moves.
        const double n_t = limit_mass(n0, rates, t);
        parallel_for(m, threads, [&](std::size_t i) {
          drift_field[i] = convolve_sample(kernels.drift_kernel, particles, n_t, particles[i]);
          diffusion_field[i] = convolve_sample(kernels.diffusion_kernel, particles, n_t, particles[i]);
        });
      }
      parallel_for(m, threads, [&](std::size_t i) {
        std::vector<double> dw(d), scratch(d + d * d);
        for (double& z : dw) z = sqdt * streams[i].normal();
        euler_update(coeffs, particles[i], drift_field[i], diffusion_field[i], dt, dw, scratch);
      });
      t = t_next;
    }
    t = grid[j];
    masses.push_back(limit_mass(n0, rates, t));
    samples.push_back(particles);
  }
  return ReferenceFlow(grid, std::move(masses), std::move(samples), step);
}

std::vector<double> make_time_grid(double horizon, double step, const std::vector<double>& extra) {
  if (!(step > 0.0) || !(horizon >= 0.0)) throw ConfigError("grid needs positive step and nonnegative horizon");
  // Exact times (horizon, extras) win over nearby multiples of step.
  std::vector<double> exact{horizon};
  for (double e : extra)
    if (e >= 0.0 && e <= horizon) exact.push_back(e);
  const double tol = 1e-9 * step;
  const auto near_exact = [&](double g) {
    return std::any_of(exact.begin(), exact.end(), [&](double e) { return std::abs(e - g) <= tol; });
  };
  std::vector<double> grid = exact;
  const auto n = static_cast<std::size_t>(std::floor(horizon / step + 1e-9));
  for (std::size_t k = 0; k <= n; ++k) {
    const double g = static_cast<double>(k) * step;
    if (!near_exact(g)) grid.push_back(g);
  }
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  return grid;
}

}  // namespace mfbranch
