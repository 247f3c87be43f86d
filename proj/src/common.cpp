#include <mutex>
#include <sstream>
#include <utility>

#include "krigseq/domain.hpp"
#include "krigseq/errors.hpp"

namespace krigseq {

namespace {
std::mutex g_sink_mutex;
std::function<void(const std::string&)> g_sink;  // empty -> drop
}  // namespace

void set_debug_sink(std::function<void(const std::string&)> sink) {
  std::lock_guard<std::mutex> lock(g_sink_mutex);
  g_sink = std::move(sink);
}

void debug_log(const std::string& message) {
  std::lock_guard<std::mutex> lock(g_sink_mutex);
  if (g_sink) g_sink(message);
}

Domain::Domain(Eigen::VectorXd lower, Eigen::VectorXd upper)
    : lower_(std::move(lower)), upper_(std::move(upper)) {
  if (lower_.size() != upper_.size() || lower_.size() < 1)
    throw ArgumentError("Domain: bound vectors must share a length >= 1");
  for (int m = 0; m < lower_.size(); ++m)
    if (!(lower_[m] < upper_[m])) {
      std::ostringstream os;
      os << "Domain: lower[" << m << "] = " << lower_[m]
         << " must be < upper[" << m << "] = " << upper_[m];
      throw ArgumentError(os.str());
    }
}

Eigen::VectorXd Domain::to_unit(const Eigen::VectorXd& x) const {
  if (x.size() != lower_.size())
    throw ArgumentError("Domain::to_unit: dimension mismatch");
  Eigen::VectorXd u(x.size());
  for (int m = 0; m < x.size(); ++m) {
    const double span = upper_[m] - lower_[m];
    const double tol = 1e-12 * span;
    if (x[m] < lower_[m] - tol || x[m] > upper_[m] + tol) {
      std::ostringstream os;
      os << "point outside domain: coordinate " << m << " = " << x[m]
         << " not in [" << lower_[m] << ", " << upper_[m] << "]";
      throw DomainError(os.str());
    }
    u[m] = std::min(1.0, std::max(0.0, (x[m] - lower_[m]) / span));
  }
  return u;
}

Eigen::VectorXd Domain::from_unit(const Eigen::VectorXd& u) const {
  if (u.size() != lower_.size())
    throw ArgumentError("Domain::from_unit: dimension mismatch");
  return lower_.array() + u.array() * (upper_ - lower_).array();
}

Eigen::MatrixXd Domain::to_unit_rows(const Eigen::MatrixXd& X) const {
  Eigen::MatrixXd U(X.rows(), X.cols());
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    U.row(i) = to_unit(X.row(i).transpose()).transpose();
  return U;
}

Eigen::MatrixXd Domain::from_unit_rows(const Eigen::MatrixXd& U) const {
  Eigen::MatrixXd X(U.rows(), U.cols());
  for (Eigen::Index i = 0; i < U.rows(); ++i)
    X.row(i) = from_unit(U.row(i).transpose()).transpose();
  return X;
}

}  // namespace krigseq
