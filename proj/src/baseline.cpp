#include "m3dm/baseline.hpp"

#include <cmath>

#include "m3dm/errors.hpp"

namespace m3dm {

GlobalDirection fit_direction(const MatrixXd& P, const VectorXd& a) {
  if (P.cols() < 2) throw ContractError("fit_direction needs at least 2 samples");
  if (a.size() != P.cols()) throw ContractError("label vector length does not match P columns");
  if (!P.allFinite() || !a.allFinite()) throw NumericalError("non-finite entries in fit_direction input");
  const double aa = a.squaredNorm();
  if (!(aa > 0.0)) throw ContractError("label vector is all zeros");

  GlobalDirection dir;
  dir.center = P.rowwise().mean();
  dir.p_hat = (P * a - dir.center * a.sum()) / aa;
  dir.scale_alpha = 1.0;
  dir.train_size = static_cast<std::uint64_t>(P.cols());
  return dir;
}

VectorXd apply(const GlobalDirection& dir, const VectorXd& p_src, double s_src, double s_trg) {
  if (p_src.size() != dir.p_hat.size())
    throw ContractError("parameter has dimension " + std::to_string(p_src.size()) + ", direction has " +
                        std::to_string(dir.p_hat.size()));
  return p_src + ((s_trg - s_src) * dir.scale_alpha) * dir.p_hat;
}

GlobalDirection refit_scale(GlobalDirection dir, std::span<const EditPair> pairs) {
  const double pp = dir.p_hat.squaredNorm();
  double num = 0.0, den = 0.0;
  for (const auto& e : pairs) {
    if (e.p_src.size() != dir.p_hat.size() || e.p_trg.size() != dir.p_hat.size())
      throw ContractError("refit_scale: pair dimension mismatch");
    const double ds = e.s_trg - e.s_src;
    num += ds * (e.p_trg - e.p_src).dot(dir.p_hat);
    den += ds * ds * pp;
  }
  if (!(den > 0.0)) throw ContractError("refit_scale: all score deltas are zero (or p_hat is zero)");
  dir.scale_alpha = num / den;
  return dir;
}

GlobalDirection fit_baseline(std::span<const PairedSample> samples, std::span<const bool> coins,
                             const std::string& attribute, const BaselineOptions& opts) {
  if (samples.empty()) throw ContractError("baseline needs training pairs");
  if (coins.size() != samples.size()) throw ContractError("one coin per pair required");
  const Eigen::Index k = samples.front().p_pos.size();
  const Eigen::Index n = static_cast<Eigen::Index>(samples.size());
  MatrixXd P(k, 2 * n);
  VectorXd a(2 * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = samples[static_cast<std::size_t>(i)];
    P.col(2 * i) = s.p_pos;
    P.col(2 * i + 1) = s.p_neg;
    const bool labels = opts.target == BaselineTarget::labels;
    a[2 * i] = labels ? 1.0 : s.s_pos;
    a[2 * i + 1] = labels ? -1.0 : s.s_neg;
  }
  GlobalDirection dir = fit_direction(P, a);
  dir.attribute = attribute;
  if (opts.refit) {
    std::vector<EditPair> pairs;
    pairs.reserve(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto& s = samples[i];
      const bool pos_src = coins[i];
      // Score units follow the fitted target (labels collapse scores to +-1).
      const double sp = opts.target == BaselineTarget::labels ? 1.0 : s.s_pos;
      const double sn = opts.target == BaselineTarget::labels ? -1.0 : s.s_neg;
      pairs.push_back(pos_src ? EditPair{s.p_pos, sp, s.p_neg, sn} : EditPair{s.p_neg, sn, s.p_pos, sp});
    }
    dir = refit_scale(std::move(dir), pairs);
  }
  return dir;
}

}  // namespace m3dm
