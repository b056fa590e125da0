#pragma once

// Per-domain k-means prototypes at several granularities, concentration
// estimation, prototype-interpolation batches, and the two prototype losses:
// an L2 regression of mixed projections onto mixed prototypes, and a
// softmax pull toward each sample's own prototype against the prototypes of
// every domain.

#include "domclp/common.hpp"
#include "domclp/losses.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

namespace domclp {

struct ClusterConfig {
  std::vector<int> K{4, 8};  // cluster counts, one per granularity
  int max_iters = 100;
  double tol = 1e-6;
  std::uint64_t seed = 0;

  void validate() const {
    if (K.empty()) throw ConfigError("cluster counts K must be nonempty");
    for (int k : K)
      if (k < 1) throw ConfigError("every cluster count must be >= 1");
    if (max_iters < 1) throw ConfigError("max_iters must be >= 1");
    if (!(tol > 0)) throw ConfigError("tol must be positive");
  }
};

struct KMeansResult {
  Mat centroids;  // k x d
  std::vector<int> assignments;
  double objective = 0.0;                 // within-cluster sum of squares
  std::vector<double> objective_history;  // objective after each assignment pass
};

// ---------------------------------------------------------------------------
// k-means
// ---------------------------------------------------------------------------

namespace detail {

inline Mat kmeanspp_init(const Mat& points, int k, std::mt19937_64& rng) {
  const Eigen::Index n = points.rows();
  Mat centroids(k, points.cols());
  std::uniform_int_distribution<Eigen::Index> uniform(0, n - 1);
  centroids.row(0) = points.row(uniform(rng));
  Vec d2 = (points.rowwise() - centroids.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < k; ++c) {
    double total = d2.sum();
    Eigen::Index pick;
    if (total <= 0) {
      // All points coincide with chosen centroids; fall back to uniform.
      pick = uniform(rng);
    } else {
      std::uniform_real_distribution<double> u(0.0, total);
      double thresh = u(rng);
      double cum = 0.0;
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        cum += d2[i];
        if (cum >= thresh) {
          pick = i;
          break;
        }
      }
    }
    centroids.row(c) = points.row(pick);
    d2 = d2.cwiseMin((points.rowwise() - centroids.row(c)).rowwise().squaredNorm());
  }
  return centroids;
}

// Assigns each point to its nearest centroid (ties to the lowest centroid
// index). Empty clusters are repaired by relocating the centroid onto the
// point currently farthest from its own centroid (among clusters that can
// spare a member); the point moves to distance zero, so the within-cluster
// sum of squares never increases.
inline void assign_and_repair(const Mat& points, Mat& centroids, std::vector<int>& assign,
                              std::vector<int>& sizes, double& objective) {
  const Eigen::Index n = points.rows();
  const int k = static_cast<int>(centroids.rows());
  assign.assign(static_cast<std::size_t>(n), 0);
  sizes.assign(static_cast<std::size_t>(k), 0);
  Vec dist2(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    int best = 0;
    double best_d = (points.row(i) - centroids.row(0)).squaredNorm();
    for (int c = 1; c < k; ++c) {
      double d = (points.row(i) - centroids.row(c)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    assign[static_cast<std::size_t>(i)] = best;
    dist2[i] = best_d;
    ++sizes[static_cast<std::size_t>(best)];
  }
  for (int c = 0; c < k; ++c) {
    if (sizes[static_cast<std::size_t>(c)] > 0) continue;
    Eigen::Index far = -1;
    double far_d = -1.0;
    for (Eigen::Index i = 0; i < n; ++i)
      if (sizes[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])] > 1 &&
          dist2[i] > far_d) {
        far_d = dist2[i];
        far = i;
      }
    if (far < 0) throw NumericalError("k-means: cannot repair empty cluster");
    --sizes[static_cast<std::size_t>(assign[static_cast<std::size_t>(far)])];
    centroids.row(c) = points.row(far);
    assign[static_cast<std::size_t>(far)] = c;
    dist2[far] = 0.0;
    ++sizes[static_cast<std::size_t>(c)];
  }
  objective = dist2.sum();
}

}  // namespace detail

inline KMeansResult kmeans(const Mat& points, int k, const ClusterConfig& cfg,
                           std::mt19937_64& rng) {
  cfg.validate();
  if (points.rows() < k)
    throw ConfigError("k-means: " + std::to_string(points.rows()) + " points for k=" +
                      std::to_string(k));
  KMeansResult res;
  res.centroids = detail::kmeanspp_init(points, k, rng);
  std::vector<int> sizes;
  double objective = 0.0;
  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    detail::assign_and_repair(points, res.centroids, res.assignments, sizes, objective);
    res.objective_history.push_back(objective);
    Mat updated = Mat::Zero(k, points.cols());
    for (Eigen::Index i = 0; i < points.rows(); ++i)
      updated.row(res.assignments[static_cast<std::size_t>(i)]) += points.row(i);
    for (int c = 0; c < k; ++c) updated.row(c) /= static_cast<double>(sizes[static_cast<std::size_t>(c)]);
    double shift = (updated - res.centroids).rowwise().norm().maxCoeff();
    res.centroids = updated;
    if (shift < cfg.tol) break;
  }
  // Final pass so the returned assignments match the returned centroids.
  detail::assign_and_repair(points, res.centroids, res.assignments, sizes, objective);
  res.objective_history.push_back(objective);
  res.objective = objective;
  return res;
}

// ---------------------------------------------------------------------------
// Prototype extraction
// ---------------------------------------------------------------------------

// Prototypes at one granularity: per-domain centroid blocks concatenated in
// ascending domain order, each centroid L2-normalized, with one assigned
// global centroid index per sample and a concentration value per centroid.
struct PrototypeSet {
  int granularity = 0;             // index into ClusterConfig.K
  int cluster_count = 0;           // k at this granularity
  std::vector<int> domains;        // domain ids present, ascending; block b <-> domains[b]
  Mat centroids;                   // (domains.size() * cluster_count) x d_proj, unit rows
  std::vector<int> assignment;     // per sample, global centroid index
  std::vector<double> phi;         // per centroid
  std::vector<int> cluster_sizes;  // per centroid
  double clustering_objective = 0.0;  // summed within-cluster SSE across domains

  int total_centroids() const { return static_cast<int>(centroids.rows()); }
  int domain_of_centroid(int j) const { return domains[static_cast<std::size_t>(j / cluster_count)]; }
};

// Raw concentration of centroid j: mean distance of its members to the
// stored (normalized) centroid, damped for small clusters by the
// log(size + 10) factor; then rescaled so the mean over centroids equals
// tau and clamped to [tau/10, 10 tau]. Zero spread everywhere -> all tau.
inline std::vector<double> estimate_phi(const Mat& Z, const PrototypeSet& set, double tau) {
  const int total = set.total_centroids();
  std::vector<double> raw(static_cast<std::size_t>(total), 0.0);
  std::vector<int> sizes(static_cast<std::size_t>(total), 0);
  for (Eigen::Index i = 0; i < Z.rows(); ++i) {
    int j = set.assignment[static_cast<std::size_t>(i)];
    raw[static_cast<std::size_t>(j)] += (Z.row(i) - set.centroids.row(j)).norm();
    ++sizes[static_cast<std::size_t>(j)];
  }
  double mean_raw = 0.0;
  for (int j = 0; j < total; ++j) {
    double zj = static_cast<double>(sizes[static_cast<std::size_t>(j)]);
    if (zj <= 0) throw ConfigError("estimate_phi: centroid " + std::to_string(j) + " has no members");
    raw[static_cast<std::size_t>(j)] /= zj * std::log(zj + 10.0);
    mean_raw += raw[static_cast<std::size_t>(j)] / static_cast<double>(total);
  }
  std::vector<double> phi(static_cast<std::size_t>(total), tau);
  if (mean_raw > 0) {
    double scale = tau / mean_raw;
    for (int j = 0; j < total; ++j)
      phi[static_cast<std::size_t>(j)] =
          std::clamp(raw[static_cast<std::size_t>(j)] * scale, tau / 10.0, 10.0 * tau);
  }
  return phi;
}

// Runs k-means separately on each domain's rows of Z for every granularity.
// RNG streams are derived from (seed, "kmeans", salt, domain, granularity),
// so runs are reproducible without carrying clustering RNG state across
// epochs (the caller passes the epoch as salt).
inline std::vector<PrototypeSet> extract_prototypes(const Mat& Z, const std::vector<int>& domain_ids,
                                                    const ClusterConfig& cfg, double tau,
                                                    std::uint64_t salt = 0) {
  cfg.validate();
  if (static_cast<Eigen::Index>(domain_ids.size()) != Z.rows())
    throw ConfigError("extract_prototypes: domain_ids length must match Z rows");
  std::map<int, std::vector<Eigen::Index>> by_domain;
  for (Eigen::Index i = 0; i < Z.rows(); ++i) by_domain[domain_ids[static_cast<std::size_t>(i)]].push_back(i);

  std::vector<PrototypeSet> sets;
  for (std::size_t m = 0; m < cfg.K.size(); ++m) {
    const int k = cfg.K[m];
    PrototypeSet set;
    set.granularity = static_cast<int>(m);
    set.cluster_count = k;
    for (const auto& [dom, rows] : by_domain) {
      if (static_cast<int>(rows.size()) < k)
        throw ConfigError("domain " + std::to_string(dom) + " has " +
                          std::to_string(rows.size()) + " samples, fewer than k=" +
                          std::to_string(k));
      set.domains.push_back(dom);
    }
    set.centroids = Mat::Zero(static_cast<Eigen::Index>(set.domains.size()) * k, Z.cols());
    set.assignment.assign(static_cast<std::size_t>(Z.rows()), -1);
    set.cluster_sizes.assign(static_cast<std::size_t>(set.domains.size()) * static_cast<std::size_t>(k), 0);
    int block = 0;
    for (const auto& [dom, rows] : by_domain) {
      Mat pts(static_cast<Eigen::Index>(rows.size()), Z.cols());
      for (std::size_t r = 0; r < rows.size(); ++r) pts.row(static_cast<Eigen::Index>(r)) = Z.row(rows[r]);
      std::mt19937_64 rng = substream_rng(cfg.seed, "kmeans", salt,
                                          static_cast<std::uint64_t>(dom), m);
      KMeansResult km = kmeans(pts, k, cfg, rng);
      for (int c = 0; c < k; ++c) {
        Vec centroid = km.centroids.row(c).transpose();
        double norm = centroid.norm();
        // A degenerate all-cancelling cluster mean; pin to a fixed axis so
        // the unit-norm contract holds.
        if (norm <= kNormFloor) {
          centroid.setZero();
          centroid[0] = 1.0;
        } else {
          centroid /= norm;
        }
        set.centroids.row(block * k + c) = centroid.transpose();
      }
      for (std::size_t r = 0; r < rows.size(); ++r) {
        int global = block * k + km.assignments[r];
        set.assignment[static_cast<std::size_t>(rows[r])] = global;
        ++set.cluster_sizes[static_cast<std::size_t>(global)];
      }
      set.clustering_objective += km.objective;
      ++block;
    }
    set.phi = estimate_phi(Z, set, tau);
    sets.push_back(std::move(set));
  }
  return sets;
}

// ---------------------------------------------------------------------------
// Mixup batches
// ---------------------------------------------------------------------------

struct MixBatch {
  std::vector<int> partner;             // per batch row, index into the batch
  std::vector<double> lam;              // per batch row, in [0, 1]
  Mat mixed_inputs;                     // B x d_in
  std::vector<Mat> mixed_prototypes;    // per granularity: B x d_proj
};

// Deterministic mixing arithmetic given explicit partners and coefficients:
// convex combinations of the first-view inputs and of the assigned
// prototypes (prototype combinations are not renormalized).
inline MixBatch make_mix_batch(const Mat& inputs, const std::vector<int>& dataset_indices,
                               const std::vector<PrototypeSet>& protos,
                               const std::vector<int>& partner, const std::vector<double>& lam) {
  const Eigen::Index b = inputs.rows();
  if (static_cast<Eigen::Index>(dataset_indices.size()) != b ||
      static_cast<Eigen::Index>(partner.size()) != b || static_cast<Eigen::Index>(lam.size()) != b)
    throw ConfigError("make_mix_batch: length mismatch");
  MixBatch mix;
  mix.partner = partner;
  mix.lam = lam;
  mix.mixed_inputs = Mat::Zero(b, inputs.cols());
  for (const auto& set : protos)
    mix.mixed_prototypes.push_back(Mat::Zero(b, set.centroids.cols()));
  for (Eigen::Index i = 0; i < b; ++i) {
    int j = partner[static_cast<std::size_t>(i)];
    if (j < 0 || j >= b) throw ConfigError("make_mix_batch: partner index out of range");
    double l = lam[static_cast<std::size_t>(i)];
    if (l < 0 || l > 1) throw ConfigError("make_mix_batch: lam outside [0,1]");
    mix.mixed_inputs.row(i) = l * inputs.row(i) + (1.0 - l) * inputs.row(j);
    for (std::size_t m = 0; m < protos.size(); ++m) {
      const auto& set = protos[m];
      int pi = set.assignment[static_cast<std::size_t>(dataset_indices[static_cast<std::size_t>(i)])];
      int pj = set.assignment[static_cast<std::size_t>(dataset_indices[static_cast<std::size_t>(j)])];
      mix.mixed_prototypes[m].row(i) =
          l * set.centroids.row(pi) + (1.0 - l) * set.centroids.row(pj);
    }
  }
  return mix;
}

// Draws, per sample: a partner uniform over the batch (self allowed, any
// domain), then lambda ~ Beta(alpha, alpha) via two gamma draws.
inline MixBatch build_mix_batch(const Mat& inputs, const std::vector<int>& dataset_indices,
                                const std::vector<PrototypeSet>& protos, double alpha,
                                std::mt19937_64& rng) {
  if (!(alpha > 0)) throw ConfigError("mix alpha must be positive");
  const Eigen::Index b = inputs.rows();
  std::uniform_int_distribution<int> pick(0, static_cast<int>(b) - 1);
  std::gamma_distribution<double> gamma(alpha, 1.0);
  std::vector<int> partner(static_cast<std::size_t>(b));
  std::vector<double> lam(static_cast<std::size_t>(b));
  for (Eigen::Index i = 0; i < b; ++i) {
    partner[static_cast<std::size_t>(i)] = pick(rng);
    double ga = gamma(rng), gb = gamma(rng);
    lam[static_cast<std::size_t>(i)] = (ga + gb > 0) ? ga / (ga + gb) : 0.5;
  }
  return make_mix_batch(inputs, dataset_indices, protos, partner, lam);
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

// Mean over samples and granularities of the plain (unsquared) L2 distance
// between each mixed projection and its mixed prototype. Subgradient at an
// exact zero distance is zero.
inline LossGrad pmix_loss(const Mat& mixed_proj, const MixBatch& mix) {
  if (mix.mixed_prototypes.empty()) throw ConfigError("pmix_loss: no granularities");
  const Eigen::Index b = mixed_proj.rows();
  const auto m_count = static_cast<double>(mix.mixed_prototypes.size());
  LossGrad out;
  out.grad = Mat::Zero(b, mixed_proj.cols());
  out.per_anchor.assign(static_cast<std::size_t>(b), 0.0);
  const double scale = 1.0 / (static_cast<double>(b) * m_count);
  for (const auto& targets : mix.mixed_prototypes) {
    if (targets.rows() != b || targets.cols() != mixed_proj.cols())
      throw ConfigError("pmix_loss: prototype shape mismatch");
    for (Eigen::Index i = 0; i < b; ++i) {
      Vec diff = (mixed_proj.row(i) - targets.row(i)).transpose();
      double dist = diff.norm();
      out.value += dist * scale;
      out.per_anchor[static_cast<std::size_t>(i)] += dist / m_count;
      if (dist > 0) out.grad.row(i) += (scale / dist) * diff.transpose();
    }
  }
  return out;
}

// Mean over samples and granularities of the softmax cross-entropy pulling
// z_i toward its assigned centroid against every centroid of the
// granularity's cross-domain set, each logit tempered by that centroid's
// concentration.
inline LossGrad pcl_loss(const Mat& Z, const std::vector<PrototypeSet>& protos,
                         const std::vector<int>& dataset_indices) {
  if (protos.empty()) throw ConfigError("pcl_loss: no granularities");
  const Eigen::Index b = Z.rows();
  if (static_cast<Eigen::Index>(dataset_indices.size()) != b)
    throw ConfigError("pcl_loss: index length mismatch");
  LossGrad out;
  out.grad = Mat::Zero(b, Z.cols());
  out.per_anchor.assign(static_cast<std::size_t>(b), 0.0);
  const double m_count = static_cast<double>(protos.size());
  const double scale = 1.0 / (static_cast<double>(b) * m_count);
  for (const auto& set : protos) {
    const int total = set.total_centroids();
    for (Eigen::Index i = 0; i < b; ++i) {
      int assigned = set.assignment[static_cast<std::size_t>(dataset_indices[static_cast<std::size_t>(i)])];
      if (assigned < 0 || assigned >= total)
        throw ConfigError("pcl_loss: sample has no valid prototype assignment");
      Vec logits(total);
      for (int j = 0; j < total; ++j) {
        double phi = set.phi[static_cast<std::size_t>(j)];
        if (!(phi > 0)) throw ConfigError("pcl_loss: phi must be positive");
        logits[j] = Z.row(i).dot(set.centroids.row(j)) / phi;
      }
      double mx = logits.maxCoeff();
      double denom = (logits.array() - mx).exp().sum();
      const double term = std::log(denom) + mx - logits[assigned];
      out.per_anchor[static_cast<std::size_t>(i)] += term / m_count;
      out.value += term * scale;
      for (int j = 0; j < total; ++j) {
        double q = std::exp(logits[j] - mx) / denom - (j == assigned ? 1.0 : 0.0);
        out.grad.row(i) +=
            (q * scale / set.phi[static_cast<std::size_t>(j)]) * set.centroids.row(j);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON dump (diagnostics)
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const PrototypeSet& set) {
  nlohmann::json blocks = nlohmann::json::array();
  for (std::size_t b = 0; b < set.domains.size(); ++b) {
    nlohmann::json centroids = nlohmann::json::array();
    nlohmann::json phis = nlohmann::json::array();
    nlohmann::json sizes = nlohmann::json::array();
    for (int c = 0; c < set.cluster_count; ++c) {
      int j = static_cast<int>(b) * set.cluster_count + c;
      nlohmann::json row = nlohmann::json::array();
      for (Eigen::Index col = 0; col < set.centroids.cols(); ++col)
        row.push_back(set.centroids(j, col));
      centroids.push_back(std::move(row));
      phis.push_back(set.phi[static_cast<std::size_t>(j)]);
      sizes.push_back(set.cluster_sizes[static_cast<std::size_t>(j)]);
    }
    blocks.push_back({{"domain", set.domains[b]},
                      {"centroids", std::move(centroids)},
                      {"phi", std::move(phis)},
                      {"cluster_sizes", std::move(sizes)}});
  }
  return {{"granularity", set.granularity},
          {"cluster_count", set.cluster_count},
          {"clustering_objective", set.clustering_objective},
          {"domains", blocks}};
}

}  // namespace domclp
