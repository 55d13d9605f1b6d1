#pragma once

// Discrete optimal transport between uniform empirical measures: exact
// assignment, the monotone 1-D coupling, entropic plans, and the birth-position
// sampler that pairs a branching parent with an optimally coupled partner.

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "mfbranch/measures.hpp"

namespace mfbranch {

enum class GroundCost {
  SquaredEuclidean,
  Euclidean,
  /// min(|x - y|, 2)
  TruncatedEuclidean,
};

double ground_cost(GroundCost kind, std::span<const double> a, std::span<const double> b) noexcept;

struct CostMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  CostMatrix() = default;
  CostMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  double operator()(std::size_t i, std::size_t j) const noexcept { return data[i * cols + j]; }
  double& operator()(std::size_t i, std::size_t j) noexcept { return data[i * cols + j]; }

  static CostMatrix between(const PointSet& xs, const PointSet& ys, GroundCost kind);
};

/// 1-based: i(rho) = floor(rho) + 1.
std::size_t index_of(double rho);

struct Assignment {
  /// permutation[i] = column assigned to row i (0-based).
  std::vector<std::size_t> permutation;
  /// sum_i cost(i, permutation[i]), accumulated in row order.
  double cost = 0.0;
};

/// Minimum-cost perfect matching on a square matrix (shortest augmenting
/// paths with potentials, O(n^3)). Among optimal permutations the
/// lexicographically smallest is returned.
Assignment solve_assignment(const CostMatrix& cost);

struct PlanEntry {
  std::size_t source;
  std::size_t target;
  double weight;
};

enum class PlanKind { Dense, Permutation, Monotone };

/// Coupling of two uniform empirical measures of sizes N and M.
class TransportPlan {
 public:
  static TransportPlan dense(std::size_t n, std::size_t m, std::vector<double> weights, double cost);
  static TransportPlan permutation(std::vector<std::size_t> perm, double cost);
  /// Entries within a row keep their given order (used by sample_row).
  static TransportPlan sparse(std::size_t n, std::size_t m, std::vector<PlanEntry> entries, double cost);

  PlanKind kind() const noexcept { return kind_; }
  std::size_t source_size() const noexcept { return n_; }
  std::size_t target_size() const noexcept { return m_; }
  /// Attained cost under the ground cost the plan was solved for.
  double cost() const noexcept { return cost_; }

  /// Nonzero entries (i, j, weight), ordered by source then target.
  std::vector<PlanEntry> triplets() const;
  std::vector<double> row_sums() const;
  std::vector<double> col_sums() const;
  /// max |row_i - 1/N|, |col_j - 1/M|.
  double max_marginal_violation() const;
  double evaluate(const PointSet& xs, const PointSet& ys, GroundCost kind) const;

  /// Inverse-CDF sample of the target index given source i, using u in [0, 1).
  /// Monotone rows are walked in ascending target value, other plans in
  /// ascending target index.
  std::size_t sample_row(std::size_t i, double u) const;

 private:
  PlanKind kind_ = PlanKind::Dense;
  std::size_t n_ = 0;
  std::size_t m_ = 0;
  double cost_ = 0.0;
  std::vector<double> dense_;
  std::vector<std::size_t> perm_;
  std::vector<PlanEntry> entries_;
  std::vector<std::size_t> row_offsets_;
};

/// Monotone (quantile) coupling in d = 1; exact optimum for any convex cost of
/// x - y. Inputs need not be sorted; plan indices refer to input order.
TransportPlan quantile_coupling(const PointSet& xs, const PointSet& ys,
                                GroundCost kind = GroundCost::SquaredEuclidean);

/// Cost of the monotone coupling between two ascending value lists.
double monotone_cost(std::span<const double> sorted_x, std::span<const double> sorted_y,
                     GroundCost kind = GroundCost::SquaredEuclidean);

struct EntropicOptions {
  /// <= 0 selects 0.01 * median ground cost.
  double epsilon = 0.0;
  int max_iter = 5000;
  /// Iteration stops once the L1 marginal violation drops below this.
  double tolerance = 1e-9;
  GroundCost ground = GroundCost::SquaredEuclidean;
};

struct EntropicResult {
  TransportPlan plan;
  double epsilon;
  int iterations;
  /// L1 marginal violation before rounding.
  double violation;
};

/// Log-domain Sinkhorn from uniform scalings, warm-started by halving the
/// regularization from the largest cost down to epsilon and finished by Newton steps
/// on the dual potentials, then rounded to exact uniform marginals. Throws NoConvergence if the violation exceeds 1e-6 after max_iter.
EntropicResult solve_entropic(const PointSet& xs, const PointSet& ys, const EntropicOptions& opts = {});

double median_ground_cost(const PointSet& xs, const PointSet& ys, GroundCost kind);

struct BirthSamplerOptions {
  std::size_t assignment_cap = 512;
  EntropicOptions entropic{};
};

struct BirthSample {
  /// 1-based index i(rho) of the branching parent.
  std::size_t parent_index;
  std::vector<double> position;
  /// Index of the reference atom selected.
  std::size_t reference_index;
};

/// Optimal plan between the state empirical and the reference empirical, then
/// the partner of atom i(rho) drawn from its plan row with the fractional part
/// of rho as the uniform variate. In d = 1 the monotone row is evaluated
/// directly; `sorted_reference` (ascending values) may be supplied to skip a sort.
BirthSample sample_birth_position(const PointSet& state, double rho, const PointSet& reference,
                                  const BirthSamplerOptions& opts = {},
                                  std::span<const double> sorted_reference = {});

/// Dense/sparse plan used by sample_birth_position for d >= 2 or audits.
TransportPlan optimal_plan(const PointSet& xs, const PointSet& ys, GroundCost kind,
                           const BirthSamplerOptions& opts, bool* exact = nullptr);

}  // namespace mfbranch
