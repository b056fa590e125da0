#pragma once

// Synthetic multi-domain datasets with a known common/domain decomposition,
// leave-one-domain-out splits, vector-space augmentation, and CSV I/O.

#include "domclp/common.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace domclp {

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

// Additive decomposition of a synthetic sample: x = c + d + noise, where c
// lives in the class subspace and d in the domain subspace. The noise vector
// is recoverable as x - c - d.
struct GroundTruth {
  Vec c;  // common (class-determined) component, ambient dimension
  Vec d;  // domain-determined component, ambient dimension
};

struct DomainSample {
  Vec x;
  int domain_id = 0;
  int class_id = -1;  // -1 = unlabeled
  std::optional<GroundTruth> truth;

  bool has_class() const { return class_id >= 0; }
};

struct MultiDomainDataset {
  std::vector<DomainSample> samples;
  int n_domains = 0;  // size of the domain id space; subsets keep parent ids
  int n_classes = 0;  // 0 when no sample is labeled
  int d_in = 0;

  int size() const { return static_cast<int>(samples.size()); }

  Mat inputs() const {
    Mat X(size(), d_in);
    for (int i = 0; i < size(); ++i) X.row(i) = samples[static_cast<std::size_t>(i)].x.transpose();
    return X;
  }
  std::vector<int> domain_ids() const {
    std::vector<int> ids(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) ids[i] = samples[i].domain_id;
    return ids;
  }
  std::vector<int> class_ids() const {
    std::vector<int> ids(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) ids[i] = samples[i].class_id;
    return ids;
  }
  bool has_truth() const {
    if (samples.empty()) return false;
    for (const auto& s : samples)
      if (!s.truth) return false;
    return true;
  }
  // Rows of ground-truth c (respectively d) vectors; requires has_truth().
  Mat truth_common() const { return truth_matrix(true); }
  Mat truth_domain() const { return truth_matrix(false); }

  // Domain ids that actually occur, ascending. Subsets of a split may cover
  // only part of [0, n_domains).
  std::vector<int> present_domains() const {
    std::set<int> s;
    for (const auto& smp : samples) s.insert(smp.domain_id);
    return std::vector<int>(s.begin(), s.end());
  }

  void validate() const {
    if (samples.empty()) throw ConfigError("dataset is empty");
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto& s = samples[i];
      if (s.x.size() != d_in)
        throw ConfigError("sample " + std::to_string(i) + " has dimension " +
                          std::to_string(s.x.size()) + ", expected " + std::to_string(d_in));
      if (!s.x.allFinite())
        throw ConfigError("sample " + std::to_string(i) + " has non-finite entries");
      if (s.domain_id < 0 || s.domain_id >= n_domains)
        throw ConfigError("sample " + std::to_string(i) + " has domain_id out of range");
      if (s.class_id < -1 || s.class_id >= n_classes)
        throw ConfigError("sample " + std::to_string(i) + " has class_id out of range");
      if (s.truth && (s.truth->c.size() != d_in || s.truth->d.size() != d_in))
        throw ConfigError("sample " + std::to_string(i) + " has truth of wrong dimension");
    }
  }

 private:
  Mat truth_matrix(bool common) const {
    Mat T(size(), d_in);
    for (int i = 0; i < size(); ++i) {
      const auto& s = samples[static_cast<std::size_t>(i)];
      if (!s.truth) throw ConfigError("dataset has no ground truth");
      T.row(i) = (common ? s.truth->c : s.truth->d).transpose();
    }
    return T;
  }
};

struct ToyConfig {
  int n_domains = 3;
  int n_classes = 4;
  int samples_per_class_per_domain = 50;
  int d_common = 2;
  int d_domain = 1;
  int ambient_dim = 3;
  double class_separation = 1.0;
  double domain_separation = 1.0;
  double noise_sigma = 0.05;
  std::uint64_t seed = 1;

  void validate() const {
    if (n_domains < 2) throw ConfigError("n_domains must be >= 2");
    if (n_classes < 2) throw ConfigError("n_classes must be >= 2");
    if (samples_per_class_per_domain < 1)
      throw ConfigError("samples_per_class_per_domain must be >= 1");
    if (d_common < 1 || d_domain < 1) throw ConfigError("d_common and d_domain must be >= 1");
    if (ambient_dim < d_common + d_domain)
      throw ConfigError("ambient_dim must be >= d_common + d_domain (got ambient_dim=" +
                        std::to_string(ambient_dim) + ")");
    if (class_separation <= 0 || domain_separation <= 0)
      throw ConfigError("separations must be positive");
    if (noise_sigma < 0) throw ConfigError("noise_sigma must be nonnegative");
  }
};

struct AugmentConfig {
  double noise_sigma = 0.0;
  double scale_jitter_lo = 1.0;
  double scale_jitter_hi = 1.0;
  double mask_fraction = 0.0;

  void validate() const {
    if (noise_sigma < 0) throw ConfigError("augment noise_sigma must be nonnegative");
    if (!(scale_jitter_lo > 0) || scale_jitter_lo > scale_jitter_hi)
      throw ConfigError("scale_jitter must satisfy 0 < lo <= hi");
    if (mask_fraction < 0 || mask_fraction >= 1)
      throw ConfigError("mask_fraction must lie in [0, 1)");
  }
};

struct SplitSpec {
  std::vector<int> target_domains;
  double label_fraction = 0.1;
  double validation_fraction = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (label_fraction <= 0 || label_fraction > 1)
      throw ConfigError("label_fraction must lie in (0, 1]");
    if (validation_fraction < 0 || validation_fraction >= 1)
      throw ConfigError("validation_fraction must lie in [0, 1)");
  }
};

struct SplitResult {
  MultiDomainDataset pretrain;    // unlabeled source training pool
  MultiDomainDataset labeled;     // stratified labeled subset of pretrain
  MultiDomainDataset validation;  // held-out source samples
  MultiDomainDataset target;      // all samples of the target domains
  // Original dataset indices of each part, ascending.
  std::vector<int> pretrain_indices, labeled_indices, validation_indices, target_indices;
};

// ---------------------------------------------------------------------------
// Toy generator
// ---------------------------------------------------------------------------

namespace detail {

// Draws `count` vectors in R^dim that are pairwise at least `separation`
// apart. Each candidate is uniform on a sphere of radius separation * shell;
// after 1000 rejected draws on a shell the radius escalates to the next
// shell, so tight low-dimensional instances (e.g. 3 vectors on a 1-D
// "sphere" {-r, +r}) remain solvable. Shells are capped; exhausting the cap
// means the constraints are unsatisfiable.
inline std::vector<Vec> sample_separated_vectors(int count, int dim, double separation,
                                                 std::mt19937_64& rng) {
  constexpr int kAttemptsPerShell = 1000;
  constexpr int kMaxShell = 8;
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<Vec> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int v = 0; v < count; ++v) {
    bool placed = false;
    for (int shell = 1; shell <= kMaxShell && !placed; ++shell) {
      double radius = separation * shell;
      for (int attempt = 0; attempt < kAttemptsPerShell; ++attempt) {
        Vec cand(dim);
        for (int j = 0; j < dim; ++j) cand[j] = gauss(rng);
        double norm = cand.norm();
        if (norm < 1e-12) continue;
        cand *= radius / norm;
        bool ok = true;
        for (const Vec& prev : out)
          if ((cand - prev).norm() < separation) {
            ok = false;
            break;
          }
        if (ok) {
          out.push_back(std::move(cand));
          placed = true;
          break;
        }
      }
    }
    if (!placed)
      throw ConfigError("separation constraints unsatisfiable after 1000 resampling attempts "
                        "per radius shell (vector " + std::to_string(v + 1) + " of " +
                        std::to_string(count) + " in dimension " + std::to_string(dim) + ")");
  }
  return out;
}

inline Vec embed(const Vec& v, int offset, int ambient) {
  Vec out = Vec::Zero(ambient);
  out.segment(offset, v.size()) = v;
  return out;
}

}  // namespace detail

inline MultiDomainDataset generate_toy(const ToyConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng = substream_rng(cfg.seed, "toy");
  std::vector<Vec> class_vecs =
      detail::sample_separated_vectors(cfg.n_classes, cfg.d_common, cfg.class_separation, rng);
  std::vector<Vec> domain_vecs =
      detail::sample_separated_vectors(cfg.n_domains, cfg.d_domain, cfg.domain_separation, rng);

  std::normal_distribution<double> gauss(0.0, 1.0);
  MultiDomainDataset ds;
  ds.n_domains = cfg.n_domains;
  ds.n_classes = cfg.n_classes;
  ds.d_in = cfg.ambient_dim;
  ds.samples.reserve(static_cast<std::size_t>(cfg.n_domains) * cfg.n_classes *
                     cfg.samples_per_class_per_domain);
  for (int g = 0; g < cfg.n_domains; ++g) {
    Vec dvec = detail::embed(domain_vecs[static_cast<std::size_t>(g)], cfg.d_common, cfg.ambient_dim);
    for (int y = 0; y < cfg.n_classes; ++y) {
      Vec cvec = detail::embed(class_vecs[static_cast<std::size_t>(y)], 0, cfg.ambient_dim);
      for (int s = 0; s < cfg.samples_per_class_per_domain; ++s) {
        DomainSample sample;
        sample.domain_id = g;
        sample.class_id = y;
        sample.truth = GroundTruth{cvec, dvec};
        sample.x = cvec + dvec;
        if (cfg.noise_sigma > 0)
          for (int j = 0; j < cfg.ambient_dim; ++j) sample.x[j] += cfg.noise_sigma * gauss(rng);
        ds.samples.push_back(std::move(sample));
      }
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

// Scale jitter, additive Gaussian noise, then coordinate masking, in that
// fixed draw order. Pure function of (x, cfg, rng state).
inline Vec augment(const Vec& x, const AugmentConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  if (!x.allFinite()) throw NumericalError("augment: input has non-finite entries");
  const int d = static_cast<int>(x.size());
  std::uniform_real_distribution<double> jitter(cfg.scale_jitter_lo, cfg.scale_jitter_hi);
  Vec out = x * jitter(rng);
  if (cfg.noise_sigma > 0) {
    std::normal_distribution<double> gauss(0.0, cfg.noise_sigma);
    for (int j = 0; j < d; ++j) out[j] += gauss(rng);
  }
  int n_mask = static_cast<int>(cfg.mask_fraction * d + 1e-9);
  if (n_mask > 0) {
    // Partial Fisher-Yates: pick n_mask distinct coordinates.
    std::vector<int> idx(static_cast<std::size_t>(d));
    for (int j = 0; j < d; ++j) idx[static_cast<std::size_t>(j)] = j;
    for (int j = 0; j < n_mask; ++j) {
      std::uniform_int_distribution<int> pick(j, d - 1);
      std::swap(idx[static_cast<std::size_t>(j)], idx[static_cast<std::size_t>(pick(rng))]);
      out[idx[static_cast<std::size_t>(j)]] = 0.0;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

namespace detail {

inline MultiDomainDataset subset(const MultiDomainDataset& ds, const std::vector<int>& indices) {
  MultiDomainDataset out;
  out.n_domains = ds.n_domains;
  out.n_classes = ds.n_classes;
  out.d_in = ds.d_in;
  out.samples.reserve(indices.size());
  for (int i : indices) out.samples.push_back(ds.samples[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace detail

// Target domains are held out wholesale; the remaining source samples are
// partitioned into pretrain/validation by a seeded shuffle; the labeled set
// is a stratified subset of pretrain with total size
// round(label_fraction * source count), spread over (domain, class) cells
// proportionally by largest remainder with at least one sample per cell.
inline SplitResult split(const MultiDomainDataset& ds, const SplitSpec& spec) {
  spec.validate();
  ds.validate();
  std::set<int> targets(spec.target_domains.begin(), spec.target_domains.end());
  for (int t : targets)
    if (t < 0 || t >= ds.n_domains)
      throw ConfigError("target domain " + std::to_string(t) + " out of range");

  SplitResult res;
  std::vector<int> source_idx;
  for (int i = 0; i < ds.size(); ++i) {
    if (targets.count(ds.samples[static_cast<std::size_t>(i)].domain_id))
      res.target_indices.push_back(i);
    else
      source_idx.push_back(i);
  }
  if (source_idx.empty()) throw ConfigError("no source domain remains after holding out targets");

  std::mt19937_64 rng = substream_rng(spec.seed, "split");
  std::vector<int> shuffled = source_idx;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  auto n_source = static_cast<long>(source_idx.size());
  auto n_val = static_cast<long>(std::llround(spec.validation_fraction * static_cast<double>(n_source)));
  res.validation_indices.assign(shuffled.begin(), shuffled.begin() + n_val);
  res.pretrain_indices.assign(shuffled.begin() + n_val, shuffled.end());
  std::sort(res.validation_indices.begin(), res.validation_indices.end());
  std::sort(res.pretrain_indices.begin(), res.pretrain_indices.end());

  // Stratified labeled subset of pretrain.
  auto budget = static_cast<long>(std::llround(spec.label_fraction * static_cast<double>(n_source)));
  std::map<std::pair<int, int>, std::vector<int>> cells;  // (domain, class) -> pretrain indices
  for (int i : res.pretrain_indices) {
    const auto& s = ds.samples[static_cast<std::size_t>(i)];
    cells[{s.domain_id, s.class_id}].push_back(i);
  }
  // Every (domain, class) cell present in the source must survive into
  // pretrain, or the stratification cannot cover it.
  for (int i : source_idx) {
    const auto& s = ds.samples[static_cast<std::size_t>(i)];
    if (!cells.count({s.domain_id, s.class_id}))
      throw ConfigError("stratification impossible: domain " + std::to_string(s.domain_id) +
                        " class " + std::to_string(s.class_id) + " has no pretrain samples");
  }

  auto n_pretrain = static_cast<double>(res.pretrain_indices.size());
  std::vector<std::pair<double, std::pair<int, int>>> remainders;  // (frac, cell key)
  std::map<std::pair<int, int>, long> quota;
  long total = 0;
  for (const auto& [key, members] : cells) {
    double share = static_cast<double>(budget) * static_cast<double>(members.size()) / n_pretrain;
    long base = std::max(1L, static_cast<long>(std::floor(share + 1e-12)));
    base = std::min(base, static_cast<long>(members.size()));
    quota[key] = base;
    total += base;
    remainders.push_back({share - std::floor(share + 1e-12), key});
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; total < budget; r = (r + 1) % remainders.size()) {
    bool any_capacity = false;
    for (const auto& [frac, key] : remainders)
      if (quota[key] < static_cast<long>(cells[key].size())) any_capacity = true;
    if (!any_capacity) break;
    const auto& key = remainders[r].second;
    if (quota[key] < static_cast<long>(cells[key].size())) {
      ++quota[key];
      ++total;
    }
  }
  for (auto& [key, members] : cells) {
    std::shuffle(members.begin(), members.end(), rng);
    for (long j = 0; j < quota[key]; ++j)
      res.labeled_indices.push_back(members[static_cast<std::size_t>(j)]);
  }
  std::sort(res.labeled_indices.begin(), res.labeled_indices.end());

  res.pretrain = detail::subset(ds, res.pretrain_indices);
  res.labeled = detail::subset(ds, res.labeled_indices);
  res.validation = detail::subset(ds, res.validation_indices);
  res.target = detail::subset(ds, res.target_indices);
  return res;
}

// ---------------------------------------------------------------------------
// CSV I/O
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  return fields;
}

}  // namespace detail

// Schema: domain,class,x0..x{d-1}[,c0..c{d-1},d0..d{d-1}]; class = -1 when
// unlabeled; truth columns present iff every sample carries ground truth.
inline void save_dataset(const MultiDomainDataset& ds, const std::string& path) {
  ds.validate();
  bool truth = ds.has_truth();
  if (!truth)
    for (const auto& s : ds.samples)
      if (s.truth) throw ConfigError("dataset mixes samples with and without ground truth");
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open for writing: " + path);
  out << "domain,class";
  for (int j = 0; j < ds.d_in; ++j) out << ",x" << j;
  if (truth) {
    for (int j = 0; j < ds.d_in; ++j) out << ",c" << j;
    for (int j = 0; j < ds.d_in; ++j) out << ",d" << j;
  }
  out << "\n";
  for (const auto& s : ds.samples) {
    out << s.domain_id << "," << s.class_id;
    for (int j = 0; j < ds.d_in; ++j) out << "," << format_double(s.x[j]);
    if (truth) {
      for (int j = 0; j < ds.d_in; ++j) out << "," << format_double(s.truth->c[j]);
      for (int j = 0; j < ds.d_in; ++j) out << "," << format_double(s.truth->d[j]);
    }
    out << "\n";
  }
  if (!out) throw ConfigError("write failed: " + path);
}

inline MultiDomainDataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open: " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ": empty file");
  auto header = detail::split_csv_line(line);
  auto fail = [&path](int lineno, const std::string& msg) {
    throw ParseError(path + ": line " + std::to_string(lineno) + ": " + msg);
  };
  if (header.size() < 3 || header[0] != "domain" || header[1] != "class")
    fail(1, "header must start with domain,class,x0,...");
  int d = 0;
  std::size_t pos = 2;
  while (pos < header.size() && header[pos] == "x" + std::to_string(d)) {
    ++pos;
    ++d;
  }
  if (d == 0) fail(1, "no feature columns (expected x0)");
  bool truth = pos < header.size();
  if (truth) {
    auto expect = [&](const std::string& want) {
      if (pos >= header.size())
        fail(1, "missing column \"" + want + "\"");
      else if (header[pos] != want)
        fail(1, "unexpected column \"" + header[pos] + "\" where \"" + want + "\" expected");
      ++pos;
    };
    for (int j = 0; j < d; ++j) expect("c" + std::to_string(j));
    for (int j = 0; j < d; ++j) expect("d" + std::to_string(j));
  }
  if (pos != header.size()) fail(1, "unexpected trailing column \"" + header[pos] + "\"");

  MultiDomainDataset ds;
  ds.d_in = d;
  int lineno = 1;
  int max_domain = -1, max_class = -1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto fields = detail::split_csv_line(line);
    if (fields.size() != header.size())
      fail(lineno, "expected " + std::to_string(header.size()) + " fields, got " +
                       std::to_string(fields.size()));
    DomainSample s;
    try {
      s.domain_id = std::stoi(fields[0]);
      s.class_id = std::stoi(fields[1]);
    } catch (const std::exception&) {
      fail(lineno, "domain/class must be integers");
    }
    if (s.domain_id < 0) fail(lineno, "negative domain id");
    if (s.class_id < -1) fail(lineno, "class id below -1");
    auto read_vec = [&](std::size_t offset) {
      Vec v(d);
      for (int j = 0; j < d; ++j) {
        try {
          v[j] = parse_double(fields[offset + static_cast<std::size_t>(j)]);
        } catch (const ParseError& e) {
          fail(lineno, e.what());
        }
        if (!std::isfinite(v[j])) fail(lineno, "non-finite value");
      }
      return v;
    };
    s.x = read_vec(2);
    if (truth) {
      GroundTruth gt;
      gt.c = read_vec(2 + static_cast<std::size_t>(d));
      gt.d = read_vec(2 + 2 * static_cast<std::size_t>(d));
      s.truth = std::move(gt);
    }
    max_domain = std::max(max_domain, s.domain_id);
    max_class = std::max(max_class, s.class_id);
    ds.samples.push_back(std::move(s));
  }
  if (ds.samples.empty()) throw ParseError(path + ": no data rows");
  ds.n_domains = max_domain + 1;
  ds.n_classes = max_class + 1;
  ds.validate();
  return ds;
}

}  // namespace domclp
