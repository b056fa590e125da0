#pragma once

// Contrastive objectives over paired augmented views: the all-negatives
// baseline (info_nce), the same-domain-negatives variant (dcon), a
// diagnostic that splits each anchor's negative mass by domain and
// common-feature proximity, and a linear-probe R^2 metric measuring how much
// of the ground-truth structure survives in learned embeddings.

#include "domclp/common.hpp"

#include <cmath>
#include <vector>

namespace domclp {

// Two augmented views per original sample; view pairs sit at rows (i, i+N).
struct ContrastiveBatch {
  Mat Z;                        // 2N x d_proj projections
  std::vector<int> domain_ids;  // length 2N
  double tau = 0.07;

  int originals() const { return static_cast<int>(Z.rows()) / 2; }

  void validate() const {
    if (Z.rows() % 2 != 0) throw ConfigError("contrastive batch must have an even row count");
    if (Z.rows() < 4) throw ConfigError("contrastive batch needs at least 2 originals (4 rows)");
    if (static_cast<Eigen::Index>(domain_ids.size()) != Z.rows())
      throw ConfigError("domain_ids length must match projection rows");
    int n = originals();
    for (int i = 0; i < n; ++i)
      if (domain_ids[static_cast<std::size_t>(i)] != domain_ids[static_cast<std::size_t>(i + n)])
        throw ConfigError("paired views must share a domain id (row " + std::to_string(i) + ")");
    if (!(tau > 0)) throw ConfigError("tau must be positive");
    if (!Z.allFinite()) throw NumericalError("contrastive batch has non-finite projections");
  }
};

struct LossGrad {
  double value = 0.0;  // always the mean of per_anchor
  Mat grad;
  std::vector<double> per_anchor;  // one contribution per anchor/sample row
};

namespace detail {

inline int positive_of(int i, int n) { return i < n ? i + n : i - n; }

// Shared core: per-anchor -log( exp(s_pos) / sum_k exp(s_k) ) with
// s_k = z_i . z_k / tau over candidates k != i, optionally restricted to the
// anchor's own domain (the positive always qualifies). Mean over 2N anchors.
// Anchors whose candidate set is exactly {positive} contribute -log(1) = 0.
inline LossGrad nt_xent(const ContrastiveBatch& b, bool same_domain_only) {
  b.validate();
  const Eigen::Index rows = b.Z.rows();
  const int n = b.originals();
  const Mat sims = (b.Z * b.Z.transpose()) / b.tau;
  LossGrad out;
  out.grad = Mat::Zero(rows, b.Z.cols());
  out.per_anchor.assign(static_cast<std::size_t>(rows), 0.0);
  const double inv_anchors = 1.0 / static_cast<double>(rows);
  std::vector<Eigen::Index> cand;
  cand.reserve(static_cast<std::size_t>(rows));
  for (Eigen::Index i = 0; i < rows; ++i) {
    const Eigen::Index pos = detail::positive_of(static_cast<int>(i), n);
    cand.clear();
    for (Eigen::Index k = 0; k < rows; ++k) {
      if (k == i) continue;
      if (same_domain_only &&
          b.domain_ids[static_cast<std::size_t>(k)] != b.domain_ids[static_cast<std::size_t>(i)])
        continue;
      cand.push_back(k);
    }
    // Log-sum-exp with max shift for stability.
    double mx = sims(i, cand.front());
    for (Eigen::Index k : cand) mx = std::max(mx, sims(i, k));
    double denom = 0.0;
    for (Eigen::Index k : cand) denom += std::exp(sims(i, k) - mx);
    const double term = std::log(denom) + mx - sims(i, pos);
    out.per_anchor[static_cast<std::size_t>(i)] = term;
    out.value += term * inv_anchors;
    // d loss_i / d s_ik = softmax_k - [k == pos]; chain through s = Z Z^T / tau.
    for (Eigen::Index k : cand) {
      double p = std::exp(sims(i, k) - mx) / denom - (k == pos ? 1.0 : 0.0);
      double w = p * inv_anchors / b.tau;
      out.grad.row(i) += w * b.Z.row(k);
      out.grad.row(k) += w * b.Z.row(i);
    }
  }
  return out;
}

}  // namespace detail

// Denominator over all 2N-1 other rows, positive included.
inline LossGrad info_nce(const ContrastiveBatch& b) { return detail::nt_xent(b, false); }

// Denominator restricted to rows sharing the anchor's domain.
inline LossGrad dcon(const ContrastiveBatch& b) { return detail::nt_xent(b, true); }

// ---------------------------------------------------------------------------
// Negative partition diagnostic
// ---------------------------------------------------------------------------

// For one anchor: its negatives' exponential mass split into same-domain
// (alpha; the positive's own term is included here, since the positive is
// same-domain by construction), cross-domain with nearby common features
// (beta), and the remainder (gamma).
struct NegativePartition {
  int anchor = 0;
  double positive_term = 0.0;  // exp(z_i . z_pos / tau), for identity checks
  double n_alpha = 0.0, n_beta = 0.0, n_gamma = 0.0;
  int count_alpha = 0, count_beta = 0, count_gamma = 0;
  double epsilon = 0.0;
};

// `common` holds one common-feature vector per batch row (2N rows; ground
// truth for toy data, or any probe features). Nearness uses the L2 norm.
inline std::vector<NegativePartition> partition_negatives(const ContrastiveBatch& b,
                                                          const Mat& common, double epsilon) {
  b.validate();
  if (common.rows() != b.Z.rows())
    throw ConfigError("partition_negatives: common-feature rows must match batch rows");
  if (!(epsilon > 0)) throw ConfigError("partition_negatives: epsilon must be positive");
  const Eigen::Index rows = b.Z.rows();
  const int n = b.originals();
  const Mat sims = (b.Z * b.Z.transpose()) / b.tau;
  std::vector<NegativePartition> parts;
  parts.reserve(static_cast<std::size_t>(rows));
  for (Eigen::Index i = 0; i < rows; ++i) {
    NegativePartition p;
    p.anchor = static_cast<int>(i);
    p.epsilon = epsilon;
    p.positive_term = std::exp(sims(i, detail::positive_of(static_cast<int>(i), n)));
    for (Eigen::Index k = 0; k < rows; ++k) {
      if (k == i) continue;
      double term = std::exp(sims(i, k));
      if (b.domain_ids[static_cast<std::size_t>(k)] == b.domain_ids[static_cast<std::size_t>(i)]) {
        p.n_alpha += term;
        ++p.count_alpha;
      } else if ((common.row(k) - common.row(i)).norm() < epsilon) {
        p.n_beta += term;
        ++p.count_beta;
      } else {
        p.n_gamma += term;
        ++p.count_gamma;
      }
    }
    parts.push_back(p);
  }
  return parts;
}

// Data-relative default: a quarter of the median pairwise distance among the
// common-feature vectors, so the "nearby" band is nonempty but selective.
inline double default_partition_epsilon(const Mat& common) {
  if (common.rows() < 2) throw ConfigError("need at least 2 rows for a pairwise distance scale");
  std::vector<double> dists;
  dists.reserve(static_cast<std::size_t>(common.rows() * (common.rows() - 1) / 2));
  for (Eigen::Index i = 0; i < common.rows(); ++i)
    for (Eigen::Index j = i + 1; j < common.rows(); ++j)
      dists.push_back((common.row(i) - common.row(j)).norm());
  double med = median(dists);
  if (med <= 0) return 1e-6;  // all-identical common vectors; any tiny band works
  return 0.25 * med;
}

// ---------------------------------------------------------------------------
// Suppression metric
// ---------------------------------------------------------------------------

struct SuppressionMetric {
  double common_energy = 0.0;  // R^2 of predicting true common features from Z
  double domain_energy = 0.0;  // R^2 of predicting true domain features from Z
  bool rank_deficient = false;
};

namespace detail {

// Pooled R^2 of the least-squares fit [Z 1] -> T. Constant target columns
// contribute nothing to either sum.
inline double linear_r2(const Mat& design, const Mat& T) {
  Mat coeff = design.completeOrthogonalDecomposition().solve(T);
  Mat resid = T - design * coeff;
  Mat centered = T.rowwise() - T.colwise().mean();
  double ss_res = resid.squaredNorm();
  double ss_tot = centered.squaredNorm();
  if (ss_tot <= 0) return 0.0;
  return 1.0 - ss_res / ss_tot;
}

}  // namespace detail

inline SuppressionMetric suppression_metric(const Mat& Z, const Mat& common, const Mat& domain) {
  if (Z.rows() != common.rows() || Z.rows() != domain.rows())
    throw ConfigError("suppression_metric: row counts must match");
  if (Z.rows() < 2) throw ConfigError("suppression_metric: need at least 2 rows");
  Mat design(Z.rows(), Z.cols() + 1);
  design.leftCols(Z.cols()) = Z;
  design.col(Z.cols()).setOnes();
  SuppressionMetric out;
  auto cod = design.completeOrthogonalDecomposition();
  out.rank_deficient = cod.rank() < design.cols();
  out.common_energy = detail::linear_r2(design, common);
  out.domain_energy = detail::linear_r2(design, domain);
  return out;
}

}  // namespace domclp
