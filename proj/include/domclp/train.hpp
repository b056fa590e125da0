#pragma once

// Training loop: per-epoch prototype extraction from full-dataset
// representations, then mini-batch optimization of the summed objective
// (contrastive + prototype-mixup + prototype-contrastive), with resumable
// JSON checkpoints.

#include "domclp/common.hpp"
#include "domclp/data.hpp"
#include "domclp/losses.hpp"
#include "domclp/model.hpp"
#include "domclp/prototypes.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <vector>

namespace domclp {

struct LossToggles {
  bool dcon = true;     // same-domain-negatives contrastive term
  bool infonce = false; // all-negatives baseline (mutually exclusive with dcon)
  bool pmix = true;
  bool pcl = true;

  bool contrastive_enabled() const { return dcon || infonce; }
  bool any() const { return dcon || infonce || pmix || pcl; }

  void validate() const {
    if (dcon && infonce)
      throw ConfigError("enable only one contrastive objective (dcon or infonce)");
    if (!any()) throw ConfigError("no loss enabled");
  }
};

struct TrainConfig {
  int epochs = 100;
  int batch_size = 64;  // original samples per mini-batch (two views each)
  double base_lr = 3e-4;
  double weight_decay = 1e-4;
  double tau = 0.07;
  ClusterConfig cluster;
  double mix_alpha = 4.0;
  int warmup_epochs = -1;  // prototype losses disabled before this; -1 = epochs/10
  LossToggles losses;
  AugmentConfig augment;
  std::uint64_t seed = 0;

  int resolved_warmup() const { return warmup_epochs < 0 ? epochs / 10 : warmup_epochs; }

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 4 || batch_size % 2 != 0)
      throw ConfigError("batch_size must be even and >= 4");
    if (!(base_lr > 0)) throw ConfigError("base_lr must be positive");
    if (weight_decay < 0) throw ConfigError("weight_decay must be nonnegative");
    if (!(tau > 0)) throw ConfigError("tau must be positive");
    if (!(mix_alpha > 0)) throw ConfigError("mix_alpha must be positive");
    if (warmup_epochs < -1) throw ConfigError("warmup_epochs must be >= 0 (or -1 for auto)");
    cluster.validate();
    losses.validate();
    augment.validate();
  }
};

struct EpochMetrics {
  int epoch = 0;
  double loss_total = 0.0;
  double loss_dcon = 0.0;  // enabled contrastive component (dcon or the baseline)
  double loss_pmix = 0.0;
  double loss_pcl = 0.0;
  double lr = 0.0;
  std::vector<double> cluster_objectives;  // per granularity; empty when not clustered
};

inline nlohmann::json to_json(const EpochMetrics& m) {
  return {{"epoch", m.epoch},         {"loss_total", m.loss_total},
          {"loss_dcon", m.loss_dcon}, {"loss_pmix", m.loss_pmix},
          {"loss_pcl", m.loss_pcl},   {"lr", m.lr},
          {"cluster_objectives", m.cluster_objectives}};
}

// Everything needed to continue a run: parameters, optimizer moments, the
// epoch cursor, and the live training RNG (shuffles, augmentations, mixing).
struct TrainState {
  ModelConfig model_config;
  ModelParams params;
  OptimState opt;
  int next_epoch = 0;
  std::mt19937_64 train_rng;
};

inline TrainState init_train_state(const ModelConfig& model_cfg, const TrainConfig& cfg) {
  model_cfg.validate();
  cfg.validate();
  TrainState st;
  st.model_config = model_cfg;
  st.params = init_model(model_cfg);
  st.opt = make_optim_state(model_cfg, cfg.base_lr, cfg.weight_decay, cfg.epochs);
  st.train_rng = substream_rng(cfg.seed, "train");
  return st;
}

using EpochCallback = std::function<void(const TrainState&, const EpochMetrics&)>;
using PrototypeCallback = std::function<void(int, const std::vector<PrototypeSet>&)>;

// Runs epochs [state.next_epoch, cfg.epochs). Each epoch: extract prototypes
// from the full dataset's current projections (skipped during warmup or when
// no prototype loss is enabled), then shuffle and optimize mini-batches.
// Deterministic given (state, dataset, config).
inline std::vector<EpochMetrics> run_training(TrainState& state, const MultiDomainDataset& pretrain,
                                              const TrainConfig& cfg,
                                              const EpochCallback& epoch_cb = {},
                                              const PrototypeCallback& proto_cb = {}) {
  cfg.validate();
  state.model_config.validate();
  pretrain.validate();
  if (pretrain.d_in != state.model_config.input_dim())
    throw ConfigError("dataset dimension " + std::to_string(pretrain.d_in) +
                      " does not match model input " +
                      std::to_string(state.model_config.input_dim()));
  const int n = pretrain.size();
  const int b = cfg.batch_size;
  if (b > n)
    throw ConfigError("batch_size " + std::to_string(b) + " exceeds dataset size " +
                      std::to_string(n));
  const bool uses_prototypes = cfg.losses.pmix || cfg.losses.pcl;
  const int warmup = cfg.resolved_warmup();
  if (uses_prototypes && cfg.epochs > warmup) {
    int k_max = *std::max_element(cfg.cluster.K.begin(), cfg.cluster.K.end());
    std::map<int, int> counts;
    for (const auto& s : pretrain.samples) ++counts[s.domain_id];
    for (const auto& [dom, count] : counts)
      if (count < k_max)
        throw ConfigError("domain " + std::to_string(dom) + " has " + std::to_string(count) +
                          " samples, fewer than max cluster count " + std::to_string(k_max));
  }

  const Mat X = pretrain.inputs();
  const std::vector<int> domains = pretrain.domain_ids();
  std::vector<EpochMetrics> history;
  std::vector<int> perm(static_cast<std::size_t>(n));

  for (int epoch = state.next_epoch; epoch < cfg.epochs; ++epoch) {
    EpochMetrics em;
    em.epoch = epoch;
    // The optimizer state owns the schedule horizon so that runs stopped
    // early and resumed from a checkpoint report the same rates as a
    // straight run.
    em.lr = cosine_lr(state.opt.base_lr, epoch, state.opt.total_epochs);

    std::vector<PrototypeSet> protos;
    const bool protos_ready = uses_prototypes && epoch >= warmup;
    if (protos_ready) {
      ForwardResult full = forward(state.model_config, state.params, X);
      protos = extract_prototypes(full.proj, domains, cfg.cluster, cfg.tau,
                                  static_cast<std::uint64_t>(epoch));
      for (const auto& set : protos) em.cluster_objectives.push_back(set.clustering_objective);
      if (proto_cb) proto_cb(epoch, protos);
    }

    // Reset before shuffling so the epoch's permutation is a pure function
    // of the RNG state; otherwise a resumed run (fresh identity order, same
    // RNG) would draw a different permutation than a straight run.
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), state.train_rng);
    const int n_batches = n / b;
    if (n_batches == 0) throw ConfigError("no full mini-batch available");
    for (int bi = 0; bi < n_batches; ++bi) {
      std::vector<int> idx(perm.begin() + static_cast<std::ptrdiff_t>(bi) * b,
                           perm.begin() + static_cast<std::ptrdiff_t>(bi + 1) * b);
      Mat views(2 * b, pretrain.d_in);
      ContrastiveBatch batch;
      batch.tau = cfg.tau;
      batch.domain_ids.resize(static_cast<std::size_t>(2 * b));
      for (int r = 0; r < b; ++r)
        views.row(r) =
            augment(pretrain.samples[static_cast<std::size_t>(idx[static_cast<std::size_t>(r)])].x,
                    cfg.augment, state.train_rng)
                .transpose();
      for (int r = 0; r < b; ++r)
        views.row(b + r) =
            augment(pretrain.samples[static_cast<std::size_t>(idx[static_cast<std::size_t>(r)])].x,
                    cfg.augment, state.train_rng)
                .transpose();
      for (int r = 0; r < b; ++r) {
        int dom = domains[static_cast<std::size_t>(idx[static_cast<std::size_t>(r)])];
        batch.domain_ids[static_cast<std::size_t>(r)] = dom;
        batch.domain_ids[static_cast<std::size_t>(b + r)] = dom;
      }

      ForwardResult fwd = forward(state.model_config, state.params, views);
      batch.Z = fwd.proj;
      Mat dZ = Mat::Zero(2 * b, state.model_config.proj_dim());
      double batch_total = 0.0;
      if (cfg.losses.contrastive_enabled()) {
        LossGrad lg = cfg.losses.dcon ? dcon(batch) : info_nce(batch);
        em.loss_dcon += lg.value / n_batches;
        batch_total += lg.value;
        dZ += lg.grad;
      }
      if (cfg.losses.pcl && protos_ready) {
        LossGrad lg = pcl_loss(fwd.proj.topRows(b), protos, idx);
        em.loss_pcl += lg.value / n_batches;
        batch_total += lg.value;
        dZ.topRows(b) += lg.grad;
      }
      Gradients grads = backward(state.model_config, state.params, fwd, dZ);
      if (cfg.losses.pmix && protos_ready) {
        MixBatch mix =
            build_mix_batch(views.topRows(b), idx, protos, cfg.mix_alpha, state.train_rng);
        ForwardResult mixed = forward(state.model_config, state.params, mix.mixed_inputs);
        LossGrad lg = pmix_loss(mixed.proj, mix);
        em.loss_pmix += lg.value / n_batches;
        batch_total += lg.value;
        grads.add_scaled(backward(state.model_config, state.params, mixed, lg.grad), 1.0);
      }
      if (!std::isfinite(batch_total))
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                             std::to_string(bi));
      adam_step(state.params, grads, state.opt, epoch);
    }
    em.loss_total = em.loss_dcon + em.loss_pmix + em.loss_pcl;
    state.next_epoch = epoch + 1;
    history.push_back(em);
    if (epoch_cb) epoch_cb(state, em);
  }
  return history;
}

struct TrainResult {
  ModelParams params;
  std::vector<EpochMetrics> metrics;
};

inline TrainResult train(const MultiDomainDataset& pretrain, const ModelConfig& model_cfg,
                         const TrainConfig& cfg) {
  TrainState st = init_train_state(model_cfg, cfg);
  TrainResult res;
  res.metrics = run_training(st, pretrain, cfg);
  res.params = std::move(st.params);
  return res;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

inline void save_checkpoint(const TrainState& state, const std::string& path) {
  nlohmann::json j{{"version", kCheckpointVersion},
                   {"kind", "checkpoint"},
                   {"model_config", to_json(state.model_config)},
                   {"params", to_json(state.params)},
                   {"optim", to_json(state.opt)},
                   {"next_epoch", state.next_epoch},
                   {"train_rng", rng_state_string(state.train_rng)}};
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open for writing: " + path);
  out << j.dump(2) << "\n";
  if (!out) throw ConfigError("write failed: " + path);
}

namespace detail {

inline void require_shapes_match(const ModelParams& p, const ModelConfig& cfg) {
  ModelParams ref = shaped_like(cfg);
  auto check = [](const std::vector<DenseLayer>& a, const std::vector<DenseLayer>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a[i].W.rows() != b[i].W.rows() || a[i].W.cols() != b[i].W.cols() ||
          a[i].b.size() != b[i].b.size())
        return false;
    return true;
  };
  if (!check(p.encoder, ref.encoder) || !check(p.projection, ref.projection))
    throw ParseError("checkpoint parameters do not match its model config");
}

}  // namespace detail

inline TrainState load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open checkpoint: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("corrupt checkpoint " + path + ": " + e.what());
  }
  try {
    if (j.at("version").get<int>() != kCheckpointVersion)
      throw ParseError("unsupported checkpoint version in " + path);
    TrainState st;
    st.model_config = model_config_from_json(j.at("model_config"));
    st.params = model_params_from_json(j.at("params"));
    st.opt = optim_state_from_json(j.at("optim"));
    st.next_epoch = j.at("next_epoch").get<int>();
    st.train_rng = rng_from_state(j.at("train_rng").get<std::string>());
    detail::require_shapes_match(st.params, st.model_config);
    detail::require_shapes_match(st.opt.m, st.model_config);
    detail::require_shapes_match(st.opt.v, st.model_config);
    return st;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("corrupt checkpoint " + path + ": " + e.what());
  }
}

// Loading a checkpoint trained under a different architecture is an error.
// The init seed is not compared: parameters come from the checkpoint.
inline void require_model_match(const TrainState& state, const ModelConfig& expected) {
  const ModelConfig& got = state.model_config;
  if (got.encoder_layers != expected.encoder_layers ||
      got.projection_layers != expected.projection_layers ||
      got.activation != expected.activation ||
      got.normalize_projection != expected.normalize_projection)
    throw ConfigError("checkpoint model config does not match the requested model config");
}

}  // namespace domclp
