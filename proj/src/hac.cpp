#include "armington/hac.hpp"

#include <algorithm>
#include <stdexcept>

namespace armington {

std::vector<std::pair<Eigen::Index, Eigen::Index>> PanelIndex::spans() const {
  std::vector<std::pair<Eigen::Index, Eigen::Index>> out;
  const Eigen::Index n = rows();
  Eigen::Index begin = 0;
  for (Eigen::Index r = 1; r <= n; ++r) {
    if (r == n || entity[r] != entity[r - 1]) {
      out.emplace_back(begin, r);
      begin = r;
    }
  }
  return out;
}

PanelIndex PanelIndex::single_series(Eigen::Index n) {
  PanelIndex idx;
  idx.entity.assign(static_cast<std::size_t>(n), 0);
  idx.time.resize(static_cast<std::size_t>(n));
  for (Eigen::Index t = 0; t < n; ++t) idx.time[static_cast<std::size_t>(t)] = static_cast<int>(t);
  return idx;
}

void PanelIndex::validate() const {
  if (entity.size() != time.size()) throw std::invalid_argument("PanelIndex: size mismatch");
  std::vector<int> seen;
  for (std::size_t r = 0; r < time.size(); ++r) {
    if (r > 0 && entity[r] == entity[r - 1]) {
      if (!(time[r] > time[r - 1]))
        throw std::invalid_argument("PanelIndex: rows must be time-ordered within entity");
    } else {
      for (int e : seen)
        if (e == entity[r]) throw std::invalid_argument("PanelIndex: entity rows not contiguous");
      seen.push_back(entity[r]);
    }
  }
}

Eigen::MatrixXd hac_vcov_dense(const Eigen::MatrixXd& moments, const PanelIndex& index,
                               int bandwidth, std::vector<std::string>* warnings) {
  if (bandwidth < 1) throw std::invalid_argument("HAC bandwidth must be >= 1");
  if (moments.rows() != index.rows()) throw std::invalid_argument("HAC: moments/index row mismatch");
  const Eigen::Index k = moments.cols();
  Eigen::MatrixXd meat = moments.transpose() * moments;

  int longest = 0;
  for (auto [b, e] : index.spans()) {
    longest = std::max(longest, index.time[static_cast<std::size_t>(e - 1)] -
                                    index.time[static_cast<std::size_t>(b)] + 1);
    if (bandwidth == 1) continue;
    // Lagged cross products within the entity.
    Eigen::MatrixXd cross = Eigen::MatrixXd::Zero(k, k);
    for (Eigen::Index r = b; r < e; ++r) {
      for (Eigen::Index s = r + 1; s < e; ++s) {
        const int lag = index.time[static_cast<std::size_t>(s)] - index.time[static_cast<std::size_t>(r)];
        if (lag >= bandwidth) break;
        cross.noalias() += bartlett_weight(lag, bandwidth) * moments.row(s).transpose() * moments.row(r);
      }
    }
    meat += cross + cross.transpose();
  }
  if (warnings && bandwidth > longest && moments.rows() > 0)
    warnings->push_back("HAC bandwidth " + std::to_string(bandwidth) +
                        " exceeds the longest entity series (" + std::to_string(longest) +
                        "); lags truncated");
  bool repaired = false;
  meat = floor_eigenvalues(meat, &repaired);
  if (repaired && warnings) warnings->push_back("HAC covariance was not PSD; eigenvalues floored at 0");
  return meat;
}

Eigen::MatrixXd floor_eigenvalues(const Eigen::MatrixXd& m, bool* repaired) {
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  if (repaired) *repaired = false;
  if (sym.size() == 0) return sym;
  // Cheap acceptance path before the eigendecomposition.
  Eigen::LDLT<Eigen::MatrixXd> ldlt(sym);
  if (ldlt.info() == Eigen::Success) {
    const Eigen::VectorXd d = ldlt.vectorD();
    if (d.minCoeff() >= -1e-12 * std::max(1.0, d.cwiseAbs().maxCoeff())) return sym;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  const Eigen::VectorXd& values = eig.eigenvalues();
  const double tol = 1e-12 * std::max(1.0, values.cwiseAbs().maxCoeff());
  if (values.minCoeff() >= -tol) return sym;
  if (repaired) *repaired = true;
  return eig.eigenvectors() * values.cwiseMax(0.0).asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace armington
