#include "ctsmooth/marginalization.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>

namespace ctsmooth {

SchurResult schur_complement(const Eigen::MatrixXd& H, const Eigen::VectorXd& b, const std::vector<int>& keep,
                             const std::vector<int>& drop, double eig_tol) {
  const int na = static_cast<int>(keep.size());
  const int nb = static_cast<int>(drop.size());
  Eigen::MatrixXd haa(na, na), hab(na, nb), hbb(nb, nb);
  Eigen::VectorXd ba(na), bb(nb);
  for (int i = 0; i < na; ++i) {
    ba[i] = b[keep[i]];
    for (int j = 0; j < na; ++j) haa(i, j) = H(keep[i], keep[j]);
    for (int j = 0; j < nb; ++j) hab(i, j) = H(keep[i], drop[j]);
  }
  for (int i = 0; i < nb; ++i) {
    bb[i] = b[drop[i]];
    for (int j = 0; j < nb; ++j) hbb(i, j) = H(drop[i], drop[j]);
  }

  SchurResult out;
  if (nb == 0) {
    out.H = haa;
    out.b = ba;
    return out;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (hbb + hbb.transpose()));
  const Eigen::VectorXd ev = es.eigenvalues();
  const double floor = eig_tol * std::max(1.0, ev.cwiseAbs().maxCoeff());
  Eigen::VectorXd inv(nb);
  for (int i = 0; i < nb; ++i) {
    if (ev[i] > floor) {
      inv[i] = 1.0 / ev[i];
    } else {
      inv[i] = 0.0;
      out.singular = true;
    }
  }
  const Eigen::MatrixXd hbb_pinv = es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
  const Eigen::MatrixXd k = hab * hbb_pinv;
  out.H = haa - k * hab.transpose();
  out.H = 0.5 * (out.H + out.H.transpose());
  out.b = ba - k * bb;
  return out;
}

void sqrt_information(const Eigen::MatrixXd& H, const Eigen::VectorXd& b, Eigen::MatrixXd& L, Eigen::VectorXd& r0,
                      double eig_tol) {
  const int n = static_cast<int>(H.rows());
  if (n == 0) {
    L.resize(0, 0);
    r0.resize(0);
    return;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (H + H.transpose()));
  const Eigen::VectorXd ev = es.eigenvalues();
  const double floor = eig_tol * std::max(1.0, ev.cwiseAbs().maxCoeff());
  std::vector<int> kept;
  for (int i = 0; i < n; ++i) {
    if (ev[i] > floor) kept.push_back(i);
  }
  const int rank = static_cast<int>(kept.size());
  L.resize(rank, n);
  r0.resize(rank);
  for (int r = 0; r < rank; ++r) {
    const int i = kept[r];
    const double s = std::sqrt(ev[i]);
    const Eigen::VectorXd v = es.eigenvectors().col(i);
    L.row(r) = s * v.transpose();
    r0[r] = v.dot(b) / s;
  }
}

MarginalizationResult marginalize(const std::vector<FactorPtr>& factors, const EstimatorState& state,
                                  const std::vector<Key>& keep, const std::vector<Key>& drop) {
  StateLayout layout;
  for (const auto& k : keep) {
    if (state.has(k)) layout.add(state, k);
  }
  const int n_keep = layout.total_dim();
  for (const auto& k : drop) {
    if (state.has(k) && !layout.contains(k)) layout.add(state, k);
  }
  const Linearization lin = linearize(factors, state, layout);
  const int n = layout.total_dim();
  std::vector<int> keep_idx(n_keep), drop_idx(n - n_keep);
  for (int i = 0; i < n_keep; ++i) keep_idx[i] = i;
  for (int i = n_keep; i < n; ++i) drop_idx[i - n_keep] = i;
  const SchurResult schur = schur_complement(lin.H, lin.b, keep_idx, drop_idx);

  MarginalizationResult out;
  out.singular = schur.singular;
  out.kept_dim = n_keep;
  out.dropped_dim = n - n_keep;
  MarginalPrior& prior = out.prior;
  for (const auto& e : layout.entries()) {
    if (e.offset >= n_keep) break;
    prior.keys.push_back(e.key);
    prior.dims.push_back(e.dim);
    prior.linearization.push_back(state.value(e.key));
  }
  sqrt_information(schur.H, schur.b, prior.sqrt_info, prior.r0);
  return out;
}

}  // namespace ctsmooth
