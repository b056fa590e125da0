#pragma once

// Run configuration: one versioned JSON document covering data generation,
// splitting, model, training, probes, and output paths. Unknown keys are
// hard errors. All randomness derives from a single master seed through
// named substreams unless a section pins its own seed.

#include "domclp/common.hpp"
#include "domclp/data.hpp"
#include "domclp/model.hpp"
#include "domclp/prototypes.hpp"
#include "domclp/train.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <string>
#include <vector>

namespace domclp {

struct ProbeConfig {
  int knn_k = 20;
  double linear_lr = 0.1;
  int linear_iters = 500;
  std::vector<double> label_fractions{0.1};
  std::string layer = "projection";  // embeddings fed to probes/diagnostics

  void validate() const {
    if (knn_k < 1) throw ConfigError("knn_k must be >= 1");
    if (!(linear_lr > 0)) throw ConfigError("linear_lr must be positive");
    if (linear_iters < 1) throw ConfigError("linear_iters must be >= 1");
    if (label_fractions.empty()) throw ConfigError("label_fractions must be nonempty");
    for (double f : label_fractions)
      if (f <= 0 || f > 1) throw ConfigError("label fractions must lie in (0, 1]");
    if (layer != "projection" && layer != "encoder")
      throw ConfigError("probe layer must be \"projection\" or \"encoder\"");
  }
};

struct OutputConfig {
  std::string dataset = "dataset.csv";
  std::string metrics = "metrics.jsonl";
  std::string checkpoint = "checkpoint.json";
  std::string report = "report.json";
  std::string diagnostics = "diagnostics.json";
  std::string embeddings = "embeddings.csv";
  std::string config_echo = "config.json";
  bool prototype_dumps = false;
  std::string prototypes = "prototypes.jsonl";
};

struct RunConfig {
  int version = 1;
  std::uint64_t seed = 42;
  ToyConfig toy;
  SplitSpec split;
  ModelConfig model;
  TrainConfig train;
  ProbeConfig probe;
  OutputConfig outputs;
  bool resume = false;  // continue training from an existing checkpoint

  void validate() const {
    toy.validate();
    split.validate();
    model.validate();
    train.validate();
    probe.validate();
  }
};

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                                const std::string& section) {
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key))
      throw ConfigError("unknown key \"" + key + "\" in section \"" + section + "\"");
}

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string("bad value for key \"") + key + "\"");
  }
}

inline void parse_toy(const nlohmann::json& j, ToyConfig& cfg) {
  reject_unknown_keys(j, {"n_domains", "n_classes", "samples_per_class_per_domain", "d_common",
                          "d_domain", "ambient_dim", "class_separation", "domain_separation",
                          "noise_sigma", "seed"},
                      "toy");
  read_key(j, "n_domains", cfg.n_domains);
  read_key(j, "n_classes", cfg.n_classes);
  read_key(j, "samples_per_class_per_domain", cfg.samples_per_class_per_domain);
  read_key(j, "d_common", cfg.d_common);
  read_key(j, "d_domain", cfg.d_domain);
  read_key(j, "ambient_dim", cfg.ambient_dim);
  read_key(j, "class_separation", cfg.class_separation);
  read_key(j, "domain_separation", cfg.domain_separation);
  read_key(j, "noise_sigma", cfg.noise_sigma);
  read_key(j, "seed", cfg.seed);
}

inline void parse_split(const nlohmann::json& j, SplitSpec& cfg) {
  reject_unknown_keys(j, {"target_domains", "label_fraction", "validation_fraction", "seed"},
                      "split");
  read_key(j, "target_domains", cfg.target_domains);
  read_key(j, "label_fraction", cfg.label_fraction);
  read_key(j, "validation_fraction", cfg.validation_fraction);
  read_key(j, "seed", cfg.seed);
}

inline void parse_model(const nlohmann::json& j, ModelConfig& cfg) {
  reject_unknown_keys(
      j, {"encoder_layers", "projection_layers", "activation", "normalize_projection", "seed"},
      "model");
  read_key(j, "encoder_layers", cfg.encoder_layers);
  read_key(j, "projection_layers", cfg.projection_layers);
  if (j.contains("activation"))
    cfg.activation = activation_from_string(j.at("activation").get<std::string>());
  read_key(j, "normalize_projection", cfg.normalize_projection);
  read_key(j, "seed", cfg.seed);
}

inline void parse_cluster(const nlohmann::json& j, ClusterConfig& cfg) {
  reject_unknown_keys(j, {"K", "max_iters", "tol", "seed"}, "train.cluster");
  read_key(j, "K", cfg.K);
  read_key(j, "max_iters", cfg.max_iters);
  read_key(j, "tol", cfg.tol);
  read_key(j, "seed", cfg.seed);
}

inline void parse_augment(const nlohmann::json& j, AugmentConfig& cfg) {
  reject_unknown_keys(j, {"noise_sigma", "scale_jitter", "mask_fraction"}, "train.augment");
  read_key(j, "noise_sigma", cfg.noise_sigma);
  if (j.contains("scale_jitter")) {
    std::vector<double> interval = j.at("scale_jitter").get<std::vector<double>>();
    if (interval.size() != 2) throw ConfigError("scale_jitter must be [lo, hi]");
    cfg.scale_jitter_lo = interval[0];
    cfg.scale_jitter_hi = interval[1];
  }
  read_key(j, "mask_fraction", cfg.mask_fraction);
}

inline void parse_losses(const nlohmann::json& j, LossToggles& cfg) {
  reject_unknown_keys(j, {"dcon", "infonce", "pmix", "pcl"}, "train.losses");
  read_key(j, "dcon", cfg.dcon);
  read_key(j, "infonce", cfg.infonce);
  read_key(j, "pmix", cfg.pmix);
  read_key(j, "pcl", cfg.pcl);
}

inline void parse_train(const nlohmann::json& j, TrainConfig& cfg) {
  reject_unknown_keys(j, {"epochs", "batch_size", "base_lr", "weight_decay", "tau", "cluster",
                          "mix_alpha", "warmup_epochs", "losses", "augment", "seed"},
                      "train");
  read_key(j, "epochs", cfg.epochs);
  read_key(j, "batch_size", cfg.batch_size);
  read_key(j, "base_lr", cfg.base_lr);
  read_key(j, "weight_decay", cfg.weight_decay);
  read_key(j, "tau", cfg.tau);
  if (j.contains("cluster")) parse_cluster(j.at("cluster"), cfg.cluster);
  read_key(j, "mix_alpha", cfg.mix_alpha);
  read_key(j, "warmup_epochs", cfg.warmup_epochs);
  if (j.contains("losses")) parse_losses(j.at("losses"), cfg.losses);
  if (j.contains("augment")) parse_augment(j.at("augment"), cfg.augment);
  read_key(j, "seed", cfg.seed);
}

inline void parse_probe(const nlohmann::json& j, ProbeConfig& cfg) {
  reject_unknown_keys(j, {"knn_k", "linear_lr", "linear_iters", "label_fractions", "layer"},
                      "probe");
  read_key(j, "knn_k", cfg.knn_k);
  read_key(j, "linear_lr", cfg.linear_lr);
  read_key(j, "linear_iters", cfg.linear_iters);
  read_key(j, "label_fractions", cfg.label_fractions);
  read_key(j, "layer", cfg.layer);
}

inline void parse_outputs(const nlohmann::json& j, OutputConfig& cfg) {
  reject_unknown_keys(j, {"dataset", "metrics", "checkpoint", "report", "diagnostics",
                          "embeddings", "config_echo", "prototype_dumps", "prototypes"},
                      "outputs");
  read_key(j, "dataset", cfg.dataset);
  read_key(j, "metrics", cfg.metrics);
  read_key(j, "checkpoint", cfg.checkpoint);
  read_key(j, "report", cfg.report);
  read_key(j, "diagnostics", cfg.diagnostics);
  read_key(j, "embeddings", cfg.embeddings);
  read_key(j, "config_echo", cfg.config_echo);
  read_key(j, "prototype_dumps", cfg.prototype_dumps);
  read_key(j, "prototypes", cfg.prototypes);
}

}  // namespace detail

// Parses a config document. `seed_override`, when nonnegative, replaces the
// master seed before substream derivation (sections with explicit seeds keep
// them). Sections without explicit seeds receive seeds derived from the
// master seed via named substreams, so varying one concern never perturbs
// another.
inline RunConfig parse_run_config(const nlohmann::json& j, long long seed_override = -1) {
  detail::reject_unknown_keys(
      j, {"version", "seed", "toy", "split", "model", "train", "probe", "outputs", "resume"},
      "(top level)");
  RunConfig cfg;
  if (j.contains("version")) {
    int v = j.at("version").get<int>();
    if (v != 1) throw ConfigError("unsupported config version " + std::to_string(v));
  }
  detail::read_key(j, "seed", cfg.seed);
  if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
  detail::read_key(j, "resume", cfg.resume);

  bool toy_seed = j.contains("toy") && j.at("toy").contains("seed");
  bool split_seed = j.contains("split") && j.at("split").contains("seed");
  bool model_seed = j.contains("model") && j.at("model").contains("seed");
  bool train_seed = j.contains("train") && j.at("train").contains("seed");
  bool cluster_seed =
      j.contains("train") && j.at("train").contains("cluster") && j.at("train").at("cluster").contains("seed");

  if (j.contains("toy")) detail::parse_toy(j.at("toy"), cfg.toy);
  if (j.contains("split")) detail::parse_split(j.at("split"), cfg.split);
  if (j.contains("model")) detail::parse_model(j.at("model"), cfg.model);
  if (j.contains("train")) detail::parse_train(j.at("train"), cfg.train);
  if (j.contains("probe")) detail::parse_probe(j.at("probe"), cfg.probe);
  if (j.contains("outputs")) detail::parse_outputs(j.at("outputs"), cfg.outputs);

  if (!toy_seed) cfg.toy.seed = substream_seed(cfg.seed, "data");
  if (!split_seed) cfg.split.seed = substream_seed(cfg.seed, "data");
  if (!model_seed) cfg.model.seed = substream_seed(cfg.seed, "init");
  if (!train_seed) cfg.train.seed = substream_seed(cfg.seed, "train");
  if (!cluster_seed) cfg.train.cluster.seed = substream_seed(cfg.seed, "train");

  cfg.validate();
  return cfg;
}

inline RunConfig load_run_config(const std::string& path, long long seed_override = -1) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("config " + path + ": " + e.what());
  }
  if (!j.is_object()) throw ParseError("config " + path + ": top level must be an object");
  return parse_run_config(j, seed_override);
}

// Fully resolved echo (defaults applied, seeds derived), embedded in every
// JSON output so results are self-describing.
inline nlohmann::json to_json(const RunConfig& cfg) {
  return {
      {"version", cfg.version},
      {"seed", cfg.seed},
      {"resume", cfg.resume},
      {"toy",
       {{"n_domains", cfg.toy.n_domains},
        {"n_classes", cfg.toy.n_classes},
        {"samples_per_class_per_domain", cfg.toy.samples_per_class_per_domain},
        {"d_common", cfg.toy.d_common},
        {"d_domain", cfg.toy.d_domain},
        {"ambient_dim", cfg.toy.ambient_dim},
        {"class_separation", cfg.toy.class_separation},
        {"domain_separation", cfg.toy.domain_separation},
        {"noise_sigma", cfg.toy.noise_sigma},
        {"seed", cfg.toy.seed}}},
      {"split",
       {{"target_domains", cfg.split.target_domains},
        {"label_fraction", cfg.split.label_fraction},
        {"validation_fraction", cfg.split.validation_fraction},
        {"seed", cfg.split.seed}}},
      {"model", to_json(cfg.model)},
      {"train",
       {{"epochs", cfg.train.epochs},
        {"batch_size", cfg.train.batch_size},
        {"base_lr", cfg.train.base_lr},
        {"weight_decay", cfg.train.weight_decay},
        {"tau", cfg.train.tau},
        {"cluster",
         {{"K", cfg.train.cluster.K},
          {"max_iters", cfg.train.cluster.max_iters},
          {"tol", cfg.train.cluster.tol},
          {"seed", cfg.train.cluster.seed}}},
        {"mix_alpha", cfg.train.mix_alpha},
        {"warmup_epochs", cfg.train.resolved_warmup()},
        {"losses",
         {{"dcon", cfg.train.losses.dcon},
          {"infonce", cfg.train.losses.infonce},
          {"pmix", cfg.train.losses.pmix},
          {"pcl", cfg.train.losses.pcl}}},
        {"augment",
         {{"noise_sigma", cfg.train.augment.noise_sigma},
          {"scale_jitter",
           {cfg.train.augment.scale_jitter_lo, cfg.train.augment.scale_jitter_hi}},
          {"mask_fraction", cfg.train.augment.mask_fraction}}},
        {"seed", cfg.train.seed}}},
      {"probe",
       {{"knn_k", cfg.probe.knn_k},
        {"linear_lr", cfg.probe.linear_lr},
        {"linear_iters", cfg.probe.linear_iters},
        {"label_fractions", cfg.probe.label_fractions},
        {"layer", cfg.probe.layer}}},
      {"outputs",
       {{"dataset", cfg.outputs.dataset},
        {"metrics", cfg.outputs.metrics},
        {"checkpoint", cfg.outputs.checkpoint},
        {"report", cfg.outputs.report},
        {"diagnostics", cfg.outputs.diagnostics},
        {"embeddings", cfg.outputs.embeddings},
        {"config_echo", cfg.outputs.config_echo},
        {"prototype_dumps", cfg.outputs.prototype_dumps},
        {"prototypes", cfg.outputs.prototypes}}},
  };
}

}  // namespace domclp
