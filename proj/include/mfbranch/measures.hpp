#pragma once

// Weighted finite point measures (1/K) sum_n delta_{x_n} on R^d and their
// normalized (probability) counterparts.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

namespace mfbranch {

/// Ordered list of points in R^d stored contiguously, row-major.
class PointSet {
 public:
  PointSet() = default;
  explicit PointSet(std::size_t dim);
  PointSet(std::size_t dim, std::vector<double> coords);

  /// Convenience for d = 1.
  static PointSet from_scalars(std::vector<double> values);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return dim_ == 0 ? 0 : coords_.size() / dim_; }
  bool empty() const noexcept { return coords_.empty(); }

  std::span<const double> operator[](std::size_t i) const noexcept {
    return {coords_.data() + i * dim_, dim_};
  }
  std::span<double> operator[](std::size_t i) noexcept { return {coords_.data() + i * dim_, dim_}; }

  void push_back(std::span<const double> point);
  /// Removes atom i and shifts the tail left, preserving order.
  void erase(std::size_t i);
  void reserve(std::size_t n) { coords_.reserve(n * dim_); }

  std::span<const double> coords() const noexcept { return coords_; }
  std::span<double> coords() noexcept { return coords_; }

  /// First coordinate of every atom.
  std::vector<double> first_coordinates() const;

 private:
  std::size_t dim_ = 0;
  std::vector<double> coords_;
};

/// Multiset equality: same atoms up to reordering.
bool same_multiset(const PointSet& a, const PointSet& b);

double squared_distance(std::span<const double> a, std::span<const double> b) noexcept;
double euclidean_norm(std::span<const double> x) noexcept;

/// Element of M^K(R^d): atoms with weight 1/K each. Zero atoms is extinction.
class WeightedPointMeasure {
 public:
  WeightedPointMeasure(PointSet atoms, std::int64_t scale);

  const PointSet& atoms() const noexcept { return atoms_; }
  std::int64_t scale() const noexcept { return scale_; }
  std::size_t dim() const noexcept { return atoms_.dim(); }
  std::size_t atom_count() const noexcept { return atoms_.size(); }
  bool extinct() const noexcept { return atoms_.empty(); }

 private:
  PointSet atoms_;
  std::int64_t scale_;
};

/// Uniform empirical probability measure on a nonempty atom list.
class ProbabilityEmpirical {
 public:
  /// Throws EmptyMeasure when `atoms` is empty.
  explicit ProbabilityEmpirical(PointSet atoms);

  const PointSet& atoms() const noexcept { return atoms_; }
  std::size_t size() const noexcept { return atoms_.size(); }
  std::size_t dim() const noexcept { return atoms_.dim(); }

 private:
  PointSet atoms_;
};

/// atom_count / K.
double mass(const WeightedPointMeasure& m) noexcept;

ProbabilityEmpirical normalize(const WeightedPointMeasure& m);

/// (1/N) sum |x_i|^q with the Euclidean norm.
double moment(const ProbabilityEmpirical& p, double q);

/// Flat atom-row export: replicate,time,system,atom,x1..xd (atom is 1-based).
void write_atom_header(std::ostream& out, std::size_t dim);
void write_atom_rows(std::ostream& out, std::uint64_t replicate, double time,
                     std::string_view system_tag, const PointSet& atoms);

}  // namespace mfbranch
