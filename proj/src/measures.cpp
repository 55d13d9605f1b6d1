#include "mfbranch/measures.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "mfbranch/errors.hpp"
#include "mfbranch/io.hpp"

namespace mfbranch {

PointSet::PointSet(std::size_t dim) : dim_(dim) {
  if (dim == 0) throw DimensionError("point dimension must be at least 1");
}

PointSet::PointSet(std::size_t dim, std::vector<double> coords) : dim_(dim), coords_(std::move(coords)) {
  if (dim == 0) throw DimensionError("point dimension must be at least 1");
  if (coords_.size() % dim != 0) throw DimensionError("coordinate count is not a multiple of the dimension");
}

PointSet PointSet::from_scalars(std::vector<double> values) { return PointSet(1, std::move(values)); }

void PointSet::push_back(std::span<const double> point) {
  if (point.size() != dim_) throw DimensionError("point has wrong dimension");
  coords_.insert(coords_.end(), point.begin(), point.end());
}

void PointSet::erase(std::size_t i) {
  const auto first = coords_.begin() + static_cast<std::ptrdiff_t>(i * dim_);
  coords_.erase(first, first + static_cast<std::ptrdiff_t>(dim_));
}

std::vector<double> PointSet::first_coordinates() const {
  std::vector<double> out(size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = coords_[i * dim_];
  return out;
}

namespace {

std::vector<std::vector<double>> sorted_rows(const PointSet& s) {
  std::vector<std::vector<double>> rows;
  rows.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) rows.emplace_back(s[i].begin(), s[i].end());
  std::sort(rows.begin(), rows.end());
  return rows;
}

}  // namespace

bool same_multiset(const PointSet& a, const PointSet& b) {
  if (a.dim() != b.dim() || a.size() != b.size()) return false;
  return sorted_rows(a) == sorted_rows(b);
}

double squared_distance(std::span<const double> a, std::span<const double> b) noexcept {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double diff = a[k] - b[k];
    s += diff * diff;
  }
  return s;
}

double euclidean_norm(std::span<const double> x) noexcept {
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s);
}

WeightedPointMeasure::WeightedPointMeasure(PointSet atoms, std::int64_t scale)
    : atoms_(std::move(atoms)), scale_(scale) {
  if (scale_ < 1) throw ConfigError("carrying capacity K must be a positive integer");
}

ProbabilityEmpirical::ProbabilityEmpirical(PointSet atoms) : atoms_(std::move(atoms)) {
  if (atoms_.empty()) throw EmptyMeasure("empirical probability measure needs at least one atom");
}

double mass(const WeightedPointMeasure& m) noexcept {
  return static_cast<double>(m.atom_count()) / static_cast<double>(m.scale());
}

ProbabilityEmpirical normalize(const WeightedPointMeasure& m) {
  if (m.extinct()) throw EmptyMeasure("cannot normalize the null measure");
  return ProbabilityEmpirical(m.atoms());
}

double moment(const ProbabilityEmpirical& p, double q) {
  if (!(q >= 1.0)) throw ConfigError("moment order must be >= 1");
  const PointSet& atoms = p.atoms();
  double sum = 0.0;
  for (std::size_t i = 0; i < atoms.size(); ++i) sum += std::pow(euclidean_norm(atoms[i]), q);
  return sum / static_cast<double>(atoms.size());
}

void write_atom_header(std::ostream& out, std::size_t dim) {
  out << "replicate,time,system,atom";
  for (std::size_t k = 1; k <= dim; ++k) out << ",x" << k;
  out << '\n';
}

void write_atom_rows(std::ostream& out, std::uint64_t replicate, double time,
                     std::string_view system_tag, const PointSet& atoms) {
  for (std::size_t i = 0; i < atoms.size(); ++i) {
    out << replicate << ',' << format_double(time) << ',' << system_tag << ',' << (i + 1);
    for (double v : atoms[i]) out << ',' << format_double(v);
    out << '\n';
  }
}

}  // namespace mfbranch
