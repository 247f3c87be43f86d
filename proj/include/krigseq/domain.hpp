#pragma once

#include <Eigen/Dense>

#include "krigseq/errors.hpp"

namespace krigseq {

/// Axis-aligned box Q ⊂ R^d in physical units. All model internals work on
/// the unit cube; Domain owns the affine map in both directions.
class Domain {
 public:
  Domain(Eigen::VectorXd lower, Eigen::VectorXd upper);

  [[nodiscard]] int dim() const { return static_cast<int>(lower_.size()); }
  [[nodiscard]] const Eigen::VectorXd& lower() const { return lower_; }
  [[nodiscard]] const Eigen::VectorXd& upper() const { return upper_; }

  /// Physical -> unit cube. Throws DomainError naming the first offending
  /// coordinate when x leaves the box by more than 1e-12 of the axis span.
  [[nodiscard]] Eigen::VectorXd to_unit(const Eigen::VectorXd& x) const;

  /// Unit cube -> physical (exact inverse of to_unit up to round-off).
  [[nodiscard]] Eigen::VectorXd from_unit(const Eigen::VectorXd& u) const;

  /// Row-wise maps for designs (rows are points).
  [[nodiscard]] Eigen::MatrixXd to_unit_rows(const Eigen::MatrixXd& X) const;
  [[nodiscard]] Eigen::MatrixXd from_unit_rows(const Eigen::MatrixXd& U) const;

 private:
  Eigen::VectorXd lower_, upper_;
};

}  // namespace krigseq
