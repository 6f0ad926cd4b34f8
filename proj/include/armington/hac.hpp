#pragma once

#include <Eigen/Dense>

#include <string>
#include <utility>
#include <vector>

namespace armington {

/// Row structure shared by the estimators: rows are grouped by entity
/// (contiguous) and ordered by time within each entity. `time` is a dense
/// integer clock (months or years) used for kernel lags and time effects.
struct PanelIndex {
  std::vector<int> entity;
  std::vector<int> time;

  Eigen::Index rows() const { return static_cast<Eigen::Index>(time.size()); }

  /// [begin, end) row ranges, one per entity.
  std::vector<std::pair<Eigen::Index, Eigen::Index>> spans() const;

  /// One entity observed at t = 0..n-1.
  static PanelIndex single_series(Eigen::Index n);

  /// Throws std::invalid_argument unless rows are grouped and time-ordered.
  void validate() const;
};

/// Bartlett weight 1 - lag/bandwidth for lag < bandwidth, else 0.
inline double bartlett_weight(int lag, int bandwidth) {
  return lag < bandwidth ? 1.0 - static_cast<double>(lag) / bandwidth : 0.0;
}

/// Long-run covariance of the moment sum, sum_i sum_{r,s in i} w(|t_r - t_s|) g_r g_s',
/// with Bartlett weights and no cross-entity terms. Bandwidth 1 gives the
/// heteroskedasticity-robust (White) meat. A bandwidth longer than every
/// entity's time span adds a warning and is effectively truncated.
///
/// Accepts matrices and array expressions alike.
template <typename Derived>
Eigen::MatrixXd hac_vcov(const Eigen::DenseBase<Derived>& moments, const PanelIndex& index,
                         int bandwidth, std::vector<std::string>* warnings = nullptr);

/// Symmetrises and floors negative eigenvalues at zero. Sets *repaired when a
/// negative eigenvalue beyond round-off was found.
Eigen::MatrixXd floor_eigenvalues(const Eigen::MatrixXd& m, bool* repaired = nullptr);

/// bread * meat * bread'.
inline Eigen::MatrixXd sandwich(const Eigen::MatrixXd& bread, const Eigen::MatrixXd& meat) {
  return bread * meat * bread.transpose();
}

// -- implementation -------------------------------------------------------

Eigen::MatrixXd hac_vcov_dense(const Eigen::MatrixXd& moments, const PanelIndex& index,
                               int bandwidth, std::vector<std::string>* warnings);

template <typename Derived>
Eigen::MatrixXd hac_vcov(const Eigen::DenseBase<Derived>& moments, const PanelIndex& index,
                         int bandwidth, std::vector<std::string>* warnings) {
  return hac_vcov_dense(Eigen::MatrixXd(moments.derived().matrix()), index, bandwidth, warnings);
}

}  // namespace armington
