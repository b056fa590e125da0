#pragma once

// Frozen-encoder evaluation: cosine kNN and linear probes with per-domain
// accuracy reports, a spectral spread diagnostic of the representation
// cloud, mean cosine similarity between (domain, class) groups, and CSV
// embedding export.

#include "domclp/common.hpp"
#include "domclp/data.hpp"
#include "domclp/model.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace domclp {

struct ProbeReport {
  std::string probe;  // "knn" or "linear"
  std::map<int, double> per_domain_accuracy;
  double average_accuracy = 0.0;  // mean over domains present in the test set
  int k = 0;                      // knn only
  bool k_clamped = false;
  double lr = 0.0;                // linear only
  int iters = 0;

  void finalize() {
    average_accuracy = 0.0;
    for (const auto& [dom, acc] : per_domain_accuracy) average_accuracy += acc;
    if (!per_domain_accuracy.empty())
      average_accuracy /= static_cast<double>(per_domain_accuracy.size());
  }
};

inline nlohmann::json to_json(const ProbeReport& r) {
  nlohmann::json per;
  for (const auto& [dom, acc] : r.per_domain_accuracy) per[std::to_string(dom)] = acc;
  nlohmann::json j{{"probe", r.probe},
                   {"per_domain_accuracy", per},
                   {"average_accuracy", r.average_accuracy}};
  if (r.probe == "knn") {
    j["k"] = r.k;
    j["k_clamped"] = r.k_clamped;
  } else {
    j["lr"] = r.lr;
    j["iters"] = r.iters;
  }
  return j;
}

namespace detail {

inline Mat normalize_rows(const Mat& Z) {
  Mat out = Z;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    double n = out.row(i).norm();
    if (n > kNormFloor) out.row(i) /= n;
    else out.row(i).setZero();
  }
  return out;
}

inline std::map<int, double> per_domain_accuracy(const std::vector<int>& pred,
                                                 const std::vector<int>& labels,
                                                 const std::vector<int>& domains) {
  std::map<int, int> hits, totals;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    ++totals[domains[i]];
    if (pred[i] == labels[i]) ++hits[domains[i]];
  }
  std::map<int, double> acc;
  for (const auto& [dom, total] : totals)
    acc[dom] = static_cast<double>(hits[dom]) / static_cast<double>(total);
  return acc;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// kNN probe
// ---------------------------------------------------------------------------

// Cosine-similarity k nearest neighbors with vote weight exp(sim / 0.07);
// neighbor ties broken by lower train index, vote ties by lower class id.
// Embeddings are normalized here, so the probe is scale invariant.
inline ProbeReport knn_probe(const Mat& train_Z, const std::vector<int>& train_labels,
                             const Mat& test_Z, const std::vector<int>& test_labels,
                             const std::vector<int>& test_domains, int k = 20) {
  if (train_Z.rows() == 0) throw ConfigError("knn_probe: empty train set");
  if (k < 1) throw ConfigError("knn_probe: k must be >= 1");
  if (static_cast<Eigen::Index>(train_labels.size()) != train_Z.rows() ||
      static_cast<Eigen::Index>(test_labels.size()) != test_Z.rows() ||
      static_cast<Eigen::Index>(test_domains.size()) != test_Z.rows())
    throw ConfigError("knn_probe: label/domain lengths must match embedding rows");
  ProbeReport rep;
  rep.probe = "knn";
  rep.k = k;
  if (k > train_Z.rows()) {
    rep.k = static_cast<int>(train_Z.rows());
    rep.k_clamped = true;
  }
  int n_classes = 1 + *std::max_element(train_labels.begin(), train_labels.end());
  Mat tr = detail::normalize_rows(train_Z);
  Mat te = detail::normalize_rows(test_Z);
  Mat sims = te * tr.transpose();
  std::vector<int> pred(static_cast<std::size_t>(te.rows()), 0);
  std::vector<std::pair<double, Eigen::Index>> order(static_cast<std::size_t>(tr.rows()));
  for (Eigen::Index i = 0; i < te.rows(); ++i) {
    for (Eigen::Index t = 0; t < tr.rows(); ++t) order[static_cast<std::size_t>(t)] = {sims(i, t), t};
    std::partial_sort(order.begin(), order.begin() + rep.k, order.end(),
                      [](const auto& a, const auto& b) {
                        if (a.first != b.first) return a.first > b.first;
                        return a.second < b.second;
                      });
    std::vector<double> votes(static_cast<std::size_t>(n_classes), 0.0);
    for (int j = 0; j < rep.k; ++j) {
      const auto& [sim, t] = order[static_cast<std::size_t>(j)];
      votes[static_cast<std::size_t>(train_labels[static_cast<std::size_t>(t)])] +=
          std::exp(sim / 0.07);
    }
    int best = 0;
    for (int c = 1; c < n_classes; ++c)
      if (votes[static_cast<std::size_t>(c)] > votes[static_cast<std::size_t>(best)]) best = c;
    pred[static_cast<std::size_t>(i)] = best;
  }
  rep.per_domain_accuracy = detail::per_domain_accuracy(pred, test_labels, test_domains);
  rep.finalize();
  return rep;
}

// ---------------------------------------------------------------------------
// Linear probe
// ---------------------------------------------------------------------------

// Mean softmax cross-entropy of logits X W + b against integer labels, with
// gradients; exposed separately so the probe's gradient can be verified by
// finite differences.
inline double multinomial_logistic(const Mat& X, const std::vector<int>& labels, const Mat& W,
                                   const Vec& b, Mat* grad_W = nullptr, Vec* grad_b = nullptr) {
  const Eigen::Index n = X.rows();
  Mat logits = (X * W).rowwise() + b.transpose();
  double loss = 0.0;
  Mat delta(n, W.cols());  // softmax - onehot, premultiplied by 1/n
  for (Eigen::Index i = 0; i < n; ++i) {
    double mx = logits.row(i).maxCoeff();
    Eigen::ArrayXd ex = (logits.row(i).array() - mx).exp();
    double denom = ex.sum();
    int y = labels[static_cast<std::size_t>(i)];
    loss += (std::log(denom) + mx - logits(i, y)) / static_cast<double>(n);
    delta.row(i) = (ex / denom).matrix().transpose() / static_cast<double>(n);
    delta(i, y) -= 1.0 / static_cast<double>(n);
  }
  if (grad_W) *grad_W = X.transpose() * delta;
  if (grad_b) *grad_b = delta.colwise().sum().transpose();
  return loss;
}

inline ProbeReport linear_probe(const Mat& train_Z, const std::vector<int>& train_labels,
                                const Mat& test_Z, const std::vector<int>& test_labels,
                                const std::vector<int>& test_domains, double lr = 0.1,
                                int iters = 500) {
  if (train_Z.rows() == 0) throw ConfigError("linear_probe: empty train set");
  std::set<int> distinct(train_labels.begin(), train_labels.end());
  if (distinct.size() < 2) throw ConfigError("linear_probe: train set has a single class");
  int n_classes = 1 + *distinct.rbegin();
  Mat W = Mat::Zero(train_Z.cols(), n_classes);
  Vec b = Vec::Zero(n_classes);
  Mat gW;
  Vec gb;
  for (int it = 0; it < iters; ++it) {
    multinomial_logistic(train_Z, train_labels, W, b, &gW, &gb);
    W -= lr * gW;
    b -= lr * gb;
  }
  Mat logits = (test_Z * W).rowwise() + b.transpose();
  std::vector<int> pred(static_cast<std::size_t>(test_Z.rows()), 0);
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    int best = 0;
    for (int c = 1; c < n_classes; ++c)
      if (logits(i, c) > logits(i, best)) best = c;
    pred[static_cast<std::size_t>(i)] = best;
  }
  ProbeReport rep;
  rep.probe = "linear";
  rep.lr = lr;
  rep.iters = iters;
  rep.per_domain_accuracy = detail::per_domain_accuracy(pred, test_labels, test_domains);
  rep.finalize();
  return rep;
}

// ---------------------------------------------------------------------------
// Condition number
// ---------------------------------------------------------------------------

struct ConditionNumberReport {
  double kappa = 1.0;
  int n = 0;
  std::vector<double> singular_values;  // first n, non-increasing
  bool infinite = false;
};

inline nlohmann::json to_json(const ConditionNumberReport& r) {
  return {{"kappa", r.infinite ? nlohmann::json() : nlohmann::json(r.kappa)},
          {"infinite", r.infinite},
          {"n", r.n},
          {"singular_values", r.singular_values}};
}

// Ratio of the largest to the n-th largest singular value of the
// mean-centered representation matrix: a spread/diversity diagnostic of the
// representation cloud. Values near 1 mean the top n directions carry
// comparable energy.
inline ConditionNumberReport condition_number(const Mat& R, int n) {
  if (n < 1) throw ConfigError("condition_number: n must be >= 1");
  if (R.rows() < n)
    throw ConfigError("condition_number: need >= n rows (" + std::to_string(R.rows()) +
                      " rows for n=" + std::to_string(n) + ")");
  if (R.cols() < n)
    throw ConfigError("condition_number: need >= n columns");
  Mat centered = R.rowwise() - R.colwise().mean();
  Eigen::BDCSVD<Mat> svd(centered);
  Vec sv = svd.singularValues();  // non-increasing
  ConditionNumberReport rep;
  rep.n = n;
  rep.singular_values.assign(sv.data(), sv.data() + n);
  double s1 = sv[0], sn = sv[n - 1];
  if (sn < 1e-12) {
    rep.infinite = true;
    rep.kappa = std::numeric_limits<double>::infinity();
  } else {
    rep.kappa = s1 / sn;
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Similarity matrix
// ---------------------------------------------------------------------------

// Mean pairwise cosine similarity between (domain, class) groups; diagonal
// entries exclude self-pairs, so singleton groups have undefined (NaN)
// diagonal entries.
struct SimilarityMatrix {
  std::vector<std::pair<int, int>> groups;  // (domain, class), ascending
  std::vector<int> group_sizes;
  Mat values;  // groups x groups, symmetric; NaN where undefined
};

inline SimilarityMatrix similarity_matrix(const Mat& Z, const std::vector<int>& domains,
                                          const std::vector<int>& classes) {
  if (static_cast<Eigen::Index>(domains.size()) != Z.rows() ||
      static_cast<Eigen::Index>(classes.size()) != Z.rows())
    throw ConfigError("similarity_matrix: label lengths must match rows");
  if (Z.rows() == 0) throw ConfigError("similarity_matrix: empty input");
  Mat zn = detail::normalize_rows(Z);
  std::map<std::pair<int, int>, std::vector<Eigen::Index>> members;
  for (Eigen::Index i = 0; i < Z.rows(); ++i)
    members[{domains[static_cast<std::size_t>(i)], classes[static_cast<std::size_t>(i)]}].push_back(i);
  SimilarityMatrix out;
  std::vector<Vec> sums;
  std::vector<double> self_dots;
  for (const auto& [key, idx] : members) {
    out.groups.push_back(key);
    out.group_sizes.push_back(static_cast<int>(idx.size()));
    Vec s = Vec::Zero(Z.cols());
    double self = 0.0;
    for (Eigen::Index i : idx) {
      s += zn.row(i).transpose();
      self += zn.row(i).squaredNorm();
    }
    sums.push_back(std::move(s));
    self_dots.push_back(self);
  }
  const auto g = static_cast<Eigen::Index>(out.groups.size());
  out.values = Mat::Zero(g, g);
  for (Eigen::Index a = 0; a < g; ++a) {
    for (Eigen::Index b_ = a; b_ < g; ++b_) {
      double na = out.group_sizes[static_cast<std::size_t>(a)];
      double nb = out.group_sizes[static_cast<std::size_t>(b_)];
      double total = sums[static_cast<std::size_t>(a)].dot(sums[static_cast<std::size_t>(b_)]);
      double pairs = na * nb;
      if (a == b_) {
        total -= self_dots[static_cast<std::size_t>(a)];
        pairs = na * (na - 1.0);
      }
      double v = pairs > 0 ? total / pairs : std::numeric_limits<double>::quiet_NaN();
      out.values(a, b_) = v;
      out.values(b_, a) = v;
    }
  }
  return out;
}

inline nlohmann::json to_json(const SimilarityMatrix& m) {
  nlohmann::json groups = nlohmann::json::array();
  for (std::size_t i = 0; i < m.groups.size(); ++i)
    groups.push_back({{"domain", m.groups[i].first},
                      {"class", m.groups[i].second},
                      {"size", m.group_sizes[i]}});
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.values.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.values.cols(); ++c) {
      double v = m.values(r, c);
      row.push_back(std::isnan(v) ? nlohmann::json() : nlohmann::json(v));
    }
    rows.push_back(std::move(row));
  }
  return {{"groups", groups}, {"values", rows}};
}

// ---------------------------------------------------------------------------
// Embedding export
// ---------------------------------------------------------------------------

// Writes `domain,class,z0..z{d-1}` rows in dataset order. `layer` selects
// the projection head output (default) or the encoder representation.
inline void export_embeddings(const ModelConfig& cfg, const ModelParams& params,
                              const MultiDomainDataset& ds, const std::string& path,
                              const std::string& layer = "projection") {
  if (layer != "projection" && layer != "encoder")
    throw ConfigError("unknown embedding layer \"" + layer + "\"");
  ds.validate();
  ForwardResult fwd = forward(cfg, params, ds.inputs());
  const Mat& E = layer == "projection" ? fwd.proj : fwd.repr;
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open for writing: " + path);
  out << "domain,class";
  for (Eigen::Index j = 0; j < E.cols(); ++j) out << ",z" << j;
  out << "\n";
  for (Eigen::Index i = 0; i < E.rows(); ++i) {
    const auto& s = ds.samples[static_cast<std::size_t>(i)];
    out << s.domain_id << "," << s.class_id;
    for (Eigen::Index j = 0; j < E.cols(); ++j) out << "," << format_double(E(i, j));
    out << "\n";
  }
  if (!out) throw ConfigError("write failed: " + path);
}

}  // namespace domclp
