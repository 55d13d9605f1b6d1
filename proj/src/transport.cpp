#include "mfbranch/transport.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>

#include "mfbranch/errors.hpp"

namespace mfbranch {

double ground_cost(GroundCost kind, std::span<const double> a, std::span<const double> b) noexcept {
  const double sq = squared_distance(a, b);
  switch (kind) {
    case GroundCost::SquaredEuclidean:
      return sq;
    case GroundCost::Euclidean:
      return std::sqrt(sq);
    case GroundCost::TruncatedEuclidean:
      return std::min(std::sqrt(sq), 2.0);
  }
  return sq;
}

namespace {

double scalar_cost(GroundCost kind, double a, double b) noexcept {
  const double diff = std::abs(a - b);
  switch (kind) {
    case GroundCost::SquaredEuclidean:
      return diff * diff;
    case GroundCost::Euclidean:
      return diff;
    case GroundCost::TruncatedEuclidean:
      return std::min(diff, 2.0);
  }
  return diff * diff;
}

}  // namespace

CostMatrix CostMatrix::between(const PointSet& xs, const PointSet& ys, GroundCost kind) {
  if (xs.dim() != ys.dim()) throw DimensionError("cost matrix between point sets of different dimension");
  CostMatrix c(xs.size(), ys.size());
  for (std::size_t i = 0; i < xs.size(); ++i)
    for (std::size_t j = 0; j < ys.size(); ++j) c(i, j) = ground_cost(kind, xs[i], ys[j]);
  return c;
}

std::size_t index_of(double rho) {
  if (!(rho >= 0.0)) throw ConfigError("index_of needs rho >= 0");
  return static_cast<std::size_t>(std::floor(rho)) + 1;
}

// ---------------------------------------------------------------------------
// Assignment
// ---------------------------------------------------------------------------

namespace {

// Walks the tight-edge graph to replace the optimal matching by the
// lexicographically smallest one. Rows are fixed in order; row i may move to
// a smaller tight column j if the row currently holding j can reach i's old
// column through an alternating path over unfixed rows.
void lexicographic_tiebreak(const CostMatrix& c, const std::vector<double>& u, const std::vector<double>& v,
                            std::vector<std::size_t>& assign) {
  const std::size_t n = c.rows;
  double scale = 0.0;
  for (double x : c.data) scale = std::max(scale, std::abs(x));
  const double tol = 1e-12 * (scale + 1e-300) * static_cast<double>(n);
  const auto tight = [&](std::size_t i, std::size_t j) { return c(i, j) - u[i] - v[j] <= tol; };

  std::vector<std::size_t> owner(n);
  for (std::size_t i = 0; i < n; ++i) owner[assign[i]] = i;
  std::vector<char> fixed(n, 0);
  std::vector<char> seen_col(n), seen_row(n);
  std::vector<std::size_t> via_col(n), parent_row(n), queue;
  queue.reserve(n);

  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t target = assign[i];
    for (std::size_t j = 0; j < target; ++j) {
      if (fixed[j] || !tight(i, j)) continue;
      const std::size_t root = owner[j];
      std::fill(seen_col.begin(), seen_col.end(), 0);
      std::fill(seen_row.begin(), seen_row.end(), 0);
      queue.clear();
      queue.push_back(root);
      seen_row[root] = 1;
      seen_col[j] = 1;
      std::size_t end_row = n;
      for (std::size_t head = 0; head < queue.size() && end_row == n; ++head) {
        const std::size_t r = queue[head];
        for (std::size_t col = 0; col < n; ++col) {
          if (fixed[col] || seen_col[col] || !tight(r, col)) continue;
          seen_col[col] = 1;
          if (col == target) {
            end_row = r;
            break;
          }
          const std::size_t r2 = owner[col];
          if (seen_row[r2]) continue;
          seen_row[r2] = 1;
          via_col[r2] = col;
          parent_row[r2] = r;
          queue.push_back(r2);
        }
      }
      if (end_row == n) continue;
      std::vector<std::pair<std::size_t, std::size_t>> moves{{end_row, target}};
      for (std::size_t r = end_row; r != root; r = parent_row[r]) moves.emplace_back(parent_row[r], via_col[r]);
      moves.emplace_back(i, j);
      for (auto [row, col] : moves) {
        assign[row] = col;
        owner[col] = row;
      }
      break;
    }
    fixed[assign[i]] = 1;
  }
}

}  // namespace

Assignment solve_assignment(const CostMatrix& cost) {
  if (cost.rows != cost.cols) throw DimensionError("assignment needs a square cost matrix");
  const std::size_t n = cost.rows;
  Assignment result;
  if (n == 0) return result;
  constexpr double kInf = std::numeric_limits<double>::infinity();
  // 1-based potentials; p[j] = row matched to column j.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  std::vector<double> minv(n + 1);
  std::vector<char> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), kInf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  result.permutation.assign(n, 0);
  for (std::size_t j = 1; j <= n; ++j) result.permutation[p[j] - 1] = j - 1;

  std::vector<double> row_pot(u.begin() + 1, u.end()), col_pot(v.begin() + 1, v.end());
  lexicographic_tiebreak(cost, row_pot, col_pot, result.permutation);

  for (std::size_t i = 0; i < n; ++i) result.cost += cost(i, result.permutation[i]);
  return result;
}

// ---------------------------------------------------------------------------
// Plans
// ---------------------------------------------------------------------------

TransportPlan TransportPlan::dense(std::size_t n, std::size_t m, std::vector<double> weights, double cost) {
  if (weights.size() != n * m) throw DimensionError("dense plan has wrong number of weights");
  TransportPlan plan;
  plan.kind_ = PlanKind::Dense;
  plan.n_ = n;
  plan.m_ = m;
  plan.dense_ = std::move(weights);
  plan.cost_ = cost;
  return plan;
}

TransportPlan TransportPlan::permutation(std::vector<std::size_t> perm, double cost) {
  TransportPlan plan;
  plan.kind_ = PlanKind::Permutation;
  plan.n_ = perm.size();
  plan.m_ = perm.size();
  plan.perm_ = std::move(perm);
  plan.cost_ = cost;
  return plan;
}

TransportPlan TransportPlan::sparse(std::size_t n, std::size_t m, std::vector<PlanEntry> entries, double cost) {
  TransportPlan plan;
  plan.kind_ = PlanKind::Monotone;
  plan.n_ = n;
  plan.m_ = m;
  std::stable_sort(entries.begin(), entries.end(),
                   [](const PlanEntry& a, const PlanEntry& b) { return a.source < b.source; });
  plan.entries_ = std::move(entries);
  plan.row_offsets_.assign(n + 1, 0);
  for (const auto& e : plan.entries_) ++plan.row_offsets_[e.source + 1];
  std::partial_sum(plan.row_offsets_.begin(), plan.row_offsets_.end(), plan.row_offsets_.begin());
  plan.cost_ = cost;
  return plan;
}

std::vector<PlanEntry> TransportPlan::triplets() const {
  switch (kind_) {
    case PlanKind::Monotone: {
      auto out = entries_;
      std::sort(out.begin(), out.end(), [](const PlanEntry& a, const PlanEntry& b) {
        return a.source != b.source ? a.source < b.source : a.target < b.target;
      });
      return out;
    }
    case PlanKind::Permutation: {
      std::vector<PlanEntry> out;
      const double w = 1.0 / static_cast<double>(n_);
      for (std::size_t i = 0; i < n_; ++i) out.push_back({i, perm_[i], w});
      return out;
    }
    case PlanKind::Dense: {
      std::vector<PlanEntry> out;
      for (std::size_t i = 0; i < n_; ++i)
        for (std::size_t j = 0; j < m_; ++j)
          if (dense_[i * m_ + j] > 0.0) out.push_back({i, j, dense_[i * m_ + j]});
      return out;
    }
  }
  return {};
}

std::vector<double> TransportPlan::row_sums() const {
  std::vector<double> rows(n_, 0.0);
  for (const auto& e : triplets()) rows[e.source] += e.weight;
  return rows;
}

std::vector<double> TransportPlan::col_sums() const {
  std::vector<double> cols(m_, 0.0);
  for (const auto& e : triplets()) cols[e.target] += e.weight;
  return cols;
}

double TransportPlan::max_marginal_violation() const {
  double worst = 0.0;
  for (double r : row_sums()) worst = std::max(worst, std::abs(r - 1.0 / static_cast<double>(n_)));
  for (double c : col_sums()) worst = std::max(worst, std::abs(c - 1.0 / static_cast<double>(m_)));
  return worst;
}

double TransportPlan::evaluate(const PointSet& xs, const PointSet& ys, GroundCost kind) const {
  double total = 0.0;
  for (const auto& e : triplets()) total += e.weight * ground_cost(kind, xs[e.source], ys[e.target]);
  return total;
}

std::size_t TransportPlan::sample_row(std::size_t i, double u) const {
  if (i >= n_) throw ConfigError("plan row out of range");
  switch (kind_) {
    case PlanKind::Permutation:
      return perm_[i];
    case PlanKind::Monotone: {
      const std::size_t lo = row_offsets_[i], hi = row_offsets_[i + 1];
      double total = 0.0;
      for (std::size_t k = lo; k < hi; ++k) total += entries_[k].weight;
      double acc = 0.0;
      for (std::size_t k = lo; k < hi; ++k) {
        acc += entries_[k].weight;
        if (u * total < acc) return entries_[k].target;
      }
      return entries_[hi - 1].target;
    }
    case PlanKind::Dense: {
      const double* row = dense_.data() + i * m_;
      const double total = std::accumulate(row, row + m_, 0.0);
      double acc = 0.0;
      std::size_t last = 0;
      for (std::size_t j = 0; j < m_; ++j) {
        if (row[j] <= 0.0) continue;
        last = j;
        acc += row[j];
        if (u * total < acc) return j;
      }
      return last;
    }
  }
  return 0;
}

// ---------------------------------------------------------------------------
// Monotone coupling
// ---------------------------------------------------------------------------

namespace {

std::vector<std::size_t> ascending_order(const PointSet& s) {
  std::vector<std::size_t> order(s.size());
  std::iota(order.begin(), order.end(), 0);
  const auto c = s.coords();
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return c[a] < c[b]; });
  return order;
}

// Integer merge of quantile blocks: source atoms carry M units, target atoms N.
template <typename Visit>
void merge_quantile_blocks(std::size_t n, std::size_t m, Visit&& visit) {
  std::size_t i = 0, j = 0;
  std::uint64_t rem_i = m, rem_j = n;
  while (i < n && j < m) {
    const std::uint64_t w = std::min(rem_i, rem_j);
    visit(i, j, w);
    rem_i -= w;
    rem_j -= w;
    if (rem_i == 0) {
      ++i;
      rem_i = m;
    }
    if (rem_j == 0) {
      ++j;
      rem_j = n;
    }
  }
}

}  // namespace

TransportPlan quantile_coupling(const PointSet& xs, const PointSet& ys, GroundCost kind) {
  if (xs.dim() != 1 || ys.dim() != 1) throw DimensionError("quantile coupling requires d = 1");
  if (xs.empty() || ys.empty()) throw EmptyMeasure("quantile coupling of an empty measure");
  const std::size_t n = xs.size(), m = ys.size();
  const auto ox = ascending_order(xs);
  const auto oy = ascending_order(ys);
  const double total = static_cast<double>(n) * static_cast<double>(m);
  std::vector<PlanEntry> entries;
  entries.reserve(n + m);
  double cost = 0.0;
  merge_quantile_blocks(n, m, [&](std::size_t i, std::size_t j, std::uint64_t w) {
    const double weight = static_cast<double>(w) / total;
    entries.push_back({ox[i], oy[j], weight});
    cost += weight * scalar_cost(kind, xs[ox[i]][0], ys[oy[j]][0]);
  });
  return TransportPlan::sparse(n, m, std::move(entries), cost);
}

double monotone_cost(std::span<const double> sorted_x, std::span<const double> sorted_y, GroundCost kind) {
  if (sorted_x.empty() || sorted_y.empty()) throw EmptyMeasure("monotone cost of an empty measure");
  const double total = static_cast<double>(sorted_x.size()) * static_cast<double>(sorted_y.size());
  double cost = 0.0;
  merge_quantile_blocks(sorted_x.size(), sorted_y.size(), [&](std::size_t i, std::size_t j, std::uint64_t w) {
    cost += static_cast<double>(w) * scalar_cost(kind, sorted_x[i], sorted_y[j]);
  });
  return cost / total;
}

// ---------------------------------------------------------------------------
// Entropic
// ---------------------------------------------------------------------------

double median_ground_cost(const PointSet& xs, const PointSet& ys, GroundCost kind) {
  CostMatrix c = CostMatrix::between(xs, ys, kind);
  if (c.data.empty()) return 0.0;
  auto mid = c.data.begin() + static_cast<std::ptrdiff_t>(c.data.size() / 2);
  std::nth_element(c.data.begin(), mid, c.data.end());
  return *mid;
}

namespace {

double log_sum_exp(const double* values, std::size_t count, std::size_t stride) {
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < count; ++k) hi = std::max(hi, values[k * stride]);
  if (!std::isfinite(hi)) return hi;
  double s = 0.0;
  for (std::size_t k = 0; k < count; ++k) s += std::exp(values[k * stride] - hi);
  return hi + std::log(s);
}

// Full marginal residuals of the scaled plan: rows then columns, with their L1 norm.
double dual_residual(const CostMatrix& c, double eps, double a, double b, const std::vector<double>& f,
                     const std::vector<double>& g, std::vector<double>& p, std::vector<double>& res) {
  const std::size_t n = f.size(), m = g.size();
  p.resize(n * m);
  res.assign(n + m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      const double v = std::exp((f[i] + g[j] - c(i, j)) / eps);
      p[i * m + j] = v;
      res[i] += v;
      res[n + j] += v;
    }
  double l1 = 0.0;
  for (std::size_t i = 0; i < n; ++i) l1 += std::abs(res[i] -= a);
  for (std::size_t j = 0; j < m; ++j) l1 += std::abs(res[n + j] -= b);
  return l1;
}

constexpr double kNewtonSwitch = 1e-2;

// Newton iterations on the dual potentials. The Hessian [diag(P1) P; P' diag(P'1)] / eps
// is inverted by Jacobi-preconditioned conjugate gradients; steps are damped until the
// residual decreases. Returns the L1 violation of both marginals on exit.
double newton_polish(const CostMatrix& c, double eps, double log_a, double log_b, std::vector<double>& f,
                     std::vector<double>& g, double tolerance, int& iter, int max_iter) {
  const std::size_t n = f.size(), m = g.size(), dim = n + m;
  const double a = std::exp(log_a), b = std::exp(log_b);
  std::vector<double> p, res, diag(dim), x(dim), r(dim), z(dim), d(dim), hd(dim);
  std::vector<double> f_try(n), g_try(m), p_try, res_try;
  double l1 = dual_residual(c, eps, a, b, f, g, p, res);
  const auto hess = [&](const std::vector<double>& v, std::vector<double>& out) {
    for (std::size_t k = 0; k < dim; ++k) out[k] = diag[k] * v[k];
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        const double w = p[i * m + j];
        out[i] += w * v[n + j];
        out[n + j] += w * v[i];
      }
  };
  for (int step = 0; step < 50 && iter < max_iter && l1 > tolerance; ++step, ++iter) {
    for (std::size_t i = 0; i < n; ++i) diag[i] = res[i] + a;
    for (std::size_t j = 0; j < m; ++j) diag[n + j] = res[n + j] + b;
    // Solve H x = -res (H scaled by eps, so x is the potential update).
    std::fill(x.begin(), x.end(), 0.0);
    for (std::size_t k = 0; k < dim; ++k) r[k] = -res[k];
    double rz = 0.0;
    for (std::size_t k = 0; k < dim; ++k) rz += r[k] * (z[k] = r[k] / diag[k]);
    d = z;
    const double r0 = std::sqrt(std::inner_product(r.begin(), r.end(), r.begin(), 0.0));
    for (std::size_t cg = 0; cg < 4 * dim; ++cg) {
      hess(d, hd);
      const double dhd = std::inner_product(d.begin(), d.end(), hd.begin(), 0.0);
      if (!(dhd > 0.0)) break;
      const double alpha = rz / dhd;
      for (std::size_t k = 0; k < dim; ++k) {
        x[k] += alpha * d[k];
        r[k] -= alpha * hd[k];
      }
      if (std::sqrt(std::inner_product(r.begin(), r.end(), r.begin(), 0.0)) <= 1e-3 * r0) break;
      double rz_next = 0.0;
      for (std::size_t k = 0; k < dim; ++k) rz_next += r[k] * (z[k] = r[k] / diag[k]);
      for (std::size_t k = 0; k < dim; ++k) d[k] = z[k] + rz_next / rz * d[k];
      rz = rz_next;
    }
    bool accepted = false;
    for (double t = 1.0; t > 1e-4; t *= 0.5) {
      for (std::size_t i = 0; i < n; ++i) f_try[i] = f[i] + t * eps * x[i];
      for (std::size_t j = 0; j < m; ++j) g_try[j] = g[j] + t * eps * x[n + j];
      const double l1_try = dual_residual(c, eps, a, b, f_try, g_try, p_try, res_try);
      if (l1_try < l1) {
        f.swap(f_try);
        g.swap(g_try);
        p.swap(p_try);
        res.swap(res_try);
        l1 = l1_try;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
  }
  return l1;
}

}  // namespace

EntropicResult solve_entropic(const PointSet& xs, const PointSet& ys, const EntropicOptions& opts) {
  if (xs.empty() || ys.empty()) throw EmptyMeasure("entropic transport of an empty measure");
  const std::size_t n = xs.size(), m = ys.size();
  const CostMatrix c = CostMatrix::between(xs, ys, opts.ground);
  double eps = opts.epsilon;
  if (eps <= 0.0) {
    std::vector<double> tmp = c.data;
    auto mid = tmp.begin() + static_cast<std::ptrdiff_t>(tmp.size() / 2);
    std::nth_element(tmp.begin(), mid, tmp.end());
    eps = 0.01 * *mid;
    if (!(eps > 0.0)) {
      const double mean = std::accumulate(tmp.begin(), tmp.end(), 0.0) / static_cast<double>(tmp.size());
      eps = mean > 0.0 ? 0.01 * mean : 1.0;
    }
  }
  const double log_a = -std::log(static_cast<double>(n));
  const double log_b = -std::log(static_cast<double>(m));
  std::vector<double> f(n, 0.0), g(m, 0.0), work(std::max(n, m));

  const auto update_f = [&] {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) work[j] = (g[j] - c(i, j)) / eps;
      f[i] = eps * (log_a - log_sum_exp(work.data(), m, 1));
    }
  };
  const auto update_g = [&] {
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t i = 0; i < n; ++i) work[i] = (f[i] - c(i, j)) / eps;
      g[j] = eps * (log_b - log_sum_exp(work.data(), n, 1));
    }
  };
  const auto row_violation = [&] {
    double viol = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double r = 0.0;
      for (std::size_t j = 0; j < m; ++j) r += std::exp((f[i] + g[j] - c(i, j)) / eps);
      viol += std::abs(r - std::exp(log_a));
    }
    return viol;
  };

  // Warm start by halving a large regularization down to the target.
  const double target_eps = eps;
  const double cmax = *std::max_element(c.data.begin(), c.data.end());
  int iter = 0;
  for (double stage = cmax; stage > 2.0 * target_eps && iter < opts.max_iter / 2; stage *= 0.5) {
    eps = stage;
    for (int k = 0; k < 10; ++k, ++iter) {
      update_f();
      update_g();
    }
  }
  eps = target_eps;
  double violation = std::numeric_limits<double>::infinity();
  bool polished = false;
  while (iter < opts.max_iter) {
    update_f();
    update_g();
    ++iter;
    if (iter % 5 == 0 || iter == opts.max_iter) {
      violation = row_violation();
      if (violation <= opts.tolerance) break;
      // Sinkhorn stalls at small epsilon; finish with Newton steps on the dual.
      if (!polished && violation < kNewtonSwitch) {
        polished = true;
        violation = newton_polish(c, eps, log_a, log_b, f, g, opts.tolerance, iter, opts.max_iter);
        if (violation <= opts.tolerance) break;
      }
    }
  }
  if (violation > 1e-6) throw NoConvergence("Sinkhorn marginal violation " + std::to_string(violation));

  std::vector<double> p(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) p[i * m + j] = std::exp((f[i] + g[j] - c(i, j)) / eps);

  // Round onto the transport polytope with exact uniform marginals.
  const double a = 1.0 / static_cast<double>(n), b = 1.0 / static_cast<double>(m);
  for (std::size_t i = 0; i < n; ++i) {
    double r = 0.0;
    for (std::size_t j = 0; j < m; ++j) r += p[i * m + j];
    if (r > a)
      for (std::size_t j = 0; j < m; ++j) p[i * m + j] *= a / r;
  }
  std::vector<double> col(m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) col[j] += p[i * m + j];
  for (std::size_t j = 0; j < m; ++j)
    if (col[j] > b)
      for (std::size_t i = 0; i < n; ++i) p[i * m + j] *= b / col[j];
  std::vector<double> err_a(n), err_b(m);
  double err_total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double r = 0.0;
    for (std::size_t j = 0; j < m; ++j) r += p[i * m + j];
    err_a[i] = a - r;
    err_total += err_a[i];
  }
  std::fill(col.begin(), col.end(), 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) col[j] += p[i * m + j];
  for (std::size_t j = 0; j < m; ++j) err_b[j] = b - col[j];
  if (err_total > 0.0)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) p[i * m + j] += err_a[i] * err_b[j] / err_total;

  double cost = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) cost += p[k] * c.data[k];
  return EntropicResult{TransportPlan::dense(n, m, std::move(p), cost), eps, iter, violation};
}

// ---------------------------------------------------------------------------
// Birth positions
// ---------------------------------------------------------------------------

TransportPlan optimal_plan(const PointSet& xs, const PointSet& ys, GroundCost kind,
                           const BirthSamplerOptions& opts, bool* exact) {
  if (xs.dim() != ys.dim()) throw DimensionError("plan between point sets of different dimension");
  if (xs.dim() == 1 && kind != GroundCost::TruncatedEuclidean) {
    if (exact) *exact = true;
    return quantile_coupling(xs, ys, kind);
  }
  if (xs.size() == ys.size() && xs.size() <= opts.assignment_cap) {
    if (exact) *exact = true;
    auto a = solve_assignment(CostMatrix::between(xs, ys, kind));
    const double cost = a.cost / static_cast<double>(xs.size());
    return TransportPlan::permutation(std::move(a.permutation), cost);
  }
  if (exact) *exact = false;
  EntropicOptions eo = opts.entropic;
  eo.ground = kind;
  return solve_entropic(xs, ys, eo).plan;
}

BirthSample sample_birth_position(const PointSet& state, double rho, const PointSet& reference,
                                  const BirthSamplerOptions& opts, std::span<const double> sorted_reference) {
  const std::size_t m = reference.size();
  if (m == 0) throw EmptyReference("birth position needs a nonempty reference sample");
  const std::size_t n = state.size();
  if (n == 0 || !(rho >= 0.0) || !(rho < static_cast<double>(n)))
    throw ConfigError("birth position needs 0 <= rho < N with N >= 1");
  if (state.dim() != reference.dim()) throw DimensionError("state and reference dimensions differ");

  const std::size_t parent = index_of(rho);
  const double u = rho - std::floor(rho);
  BirthSample out{parent, {}, 0};

  if (state.dim() == 1) {
    // Row `parent` of the monotone plan covers quantile levels
    // [rank/N, (rank+1)/N); ties in the state are ranked by index.
    const auto x = state.coords();
    const double xp = x[parent - 1];
    std::size_t rank = 0;
    for (std::size_t k = 0; k < n; ++k)
      if (x[k] < xp || (x[k] == xp && k < parent - 1)) ++rank;
    std::vector<double> owned;
    if (sorted_reference.size() != m) {
      const auto rc = reference.coords();
      owned.assign(rc.begin(), rc.end());
      std::sort(owned.begin(), owned.end());
      sorted_reference = owned;
    }
    const double level = (static_cast<double>(rank) + u) * static_cast<double>(m) / static_cast<double>(n);
    const auto pos = std::min(static_cast<std::size_t>(level), m - 1);
    out.reference_index = pos;
    out.position = {sorted_reference[pos]};
    return out;
  }

  const TransportPlan plan = optimal_plan(state, reference, GroundCost::SquaredEuclidean, opts);
  const std::size_t j = plan.sample_row(parent - 1, u);
  out.reference_index = j;
  out.position.assign(reference[j].begin(), reference[j].end());
  return out;
}

}  // namespace mfbranch
