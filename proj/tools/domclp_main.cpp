// Command-line laboratory: generate synthetic multi-domain data, train the
// contrastive/prototype objectives, probe frozen embeddings, and emit
// diagnostics. One JSON config drives every subcommand; outputs live in the
// --out directory and embed the fully resolved config.

#include "domclp/common.hpp"
#include "domclp/data.hpp"
#include "domclp/eval.hpp"
#include "domclp/losses.hpp"
#include "domclp/model.hpp"
#include "domclp/prototypes.hpp"
#include "domclp/run_config.hpp"
#include "domclp/train.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir = ".";
  long long seed_override = -1;
  bool quiet = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "run config JSON")->required();
  cmd->add_option("--out", args.out_dir, "artifact directory (default: current directory)");
  cmd->add_option("--seed", args.seed_override, "master seed override")
      ->check(CLI::NonNegativeNumber);
  cmd->add_flag("--quiet", args.quiet, "suppress stdout summaries");
}

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

void write_json_file(const json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw domclp::ConfigError("cannot open for writing: " + path);
  out << j.dump(2) << "\n";
  if (!out) throw domclp::ConfigError("write failed: " + path);
}

domclp::RunConfig prepare(const CommonArgs& args) {
  domclp::RunConfig cfg = domclp::load_run_config(args.config_path, args.seed_override);
  fs::create_directories(args.out_dir);
  write_json_file(domclp::to_json(cfg), join(args.out_dir, cfg.outputs.config_echo));
  return cfg;
}

void emit(const json& j, const CommonArgs& args) {
  if (!args.quiet) std::cout << j.dump(2) << "\n";
}

domclp::MultiDomainDataset load_run_dataset(const domclp::RunConfig& cfg, const CommonArgs& args) {
  std::string path = join(args.out_dir, cfg.outputs.dataset);
  if (!fs::exists(path))
    throw domclp::ConfigError("dataset not found: " + path + " (run gen-data first)");
  return domclp::load_dataset(path);
}

domclp::TrainState load_run_checkpoint(const domclp::RunConfig& cfg, const CommonArgs& args) {
  domclp::TrainState st = domclp::load_checkpoint(join(args.out_dir, cfg.outputs.checkpoint));
  domclp::require_model_match(st, cfg.model);
  return st;
}

// Embeddings of the configured probe layer for a dataset.
domclp::Mat embed(const domclp::TrainState& st, const domclp::MultiDomainDataset& ds,
                  const std::string& layer) {
  domclp::ForwardResult fwd = domclp::forward(st.model_config, st.params, ds.inputs());
  return layer == "projection" ? fwd.proj : fwd.repr;
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

int cmd_gen_data(const CommonArgs& args) {
  domclp::RunConfig cfg = prepare(args);
  domclp::MultiDomainDataset ds = domclp::generate_toy(cfg.toy);
  std::string path = join(args.out_dir, cfg.outputs.dataset);
  domclp::save_dataset(ds, path);
  json per_domain = json::object(), per_class = json::object();
  {
    std::map<int, int> dom_counts, cls_counts;
    for (const auto& s : ds.samples) {
      ++dom_counts[s.domain_id];
      ++cls_counts[s.class_id];
    }
    for (const auto& [d, c] : dom_counts) per_domain[std::to_string(d)] = c;
    for (const auto& [y, c] : cls_counts) per_class[std::to_string(y)] = c;
  }
  emit({{"command", "gen-data"},
        {"dataset", path},
        {"samples", ds.size()},
        {"n_domains", ds.n_domains},
        {"n_classes", ds.n_classes},
        {"d_in", ds.d_in},
        {"per_domain", per_domain},
        {"per_class", per_class},
        {"config", domclp::to_json(cfg)}},
       args);
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int cmd_train(const CommonArgs& args) {
  domclp::RunConfig cfg = prepare(args);
  domclp::MultiDomainDataset ds = load_run_dataset(cfg, args);
  domclp::SplitResult sp = domclp::split(ds, cfg.split);
  std::string checkpoint_path = join(args.out_dir, cfg.outputs.checkpoint);

  domclp::TrainState state;
  bool resumed = false;
  if (cfg.resume && fs::exists(checkpoint_path)) {
    state = domclp::load_checkpoint(checkpoint_path);
    domclp::require_model_match(state, cfg.model);
    if (state.opt.total_epochs != cfg.train.epochs ||
        state.opt.base_lr != cfg.train.base_lr ||
        state.opt.weight_decay != cfg.train.weight_decay)
      throw domclp::ConfigError("resume: optimizer schedule differs from checkpoint");
    resumed = true;
  } else {
    state = domclp::init_train_state(cfg.model, cfg.train);
  }

  auto mode = resumed ? std::ios::app : std::ios::trunc;
  std::ofstream metrics_out(join(args.out_dir, cfg.outputs.metrics), mode);
  if (!metrics_out) throw domclp::ConfigError("cannot open metrics file for writing");
  std::ofstream proto_out;
  if (cfg.outputs.prototype_dumps) {
    proto_out.open(join(args.out_dir, cfg.outputs.prototypes), mode);
    if (!proto_out) throw domclp::ConfigError("cannot open prototype dump file for writing");
  }

  domclp::EpochCallback epoch_cb = [&](const domclp::TrainState& st,
                                       const domclp::EpochMetrics& em) {
    metrics_out << domclp::to_json(em).dump() << "\n";
    metrics_out.flush();
    domclp::save_checkpoint(st, checkpoint_path);
  };
  domclp::PrototypeCallback proto_cb;
  if (cfg.outputs.prototype_dumps)
    proto_cb = [&](int epoch, const std::vector<domclp::PrototypeSet>& sets) {
      json line{{"epoch", epoch}, {"sets", json::array()}};
      for (const auto& s : sets) line["sets"].push_back(domclp::to_json(s));
      proto_out << line.dump() << "\n";
      proto_out.flush();
    };

  std::vector<domclp::EpochMetrics> history =
      domclp::run_training(state, sp.pretrain, cfg.train, epoch_cb, proto_cb);
  if (history.empty() && !resumed) domclp::save_checkpoint(state, checkpoint_path);

  json summary{{"command", "train"},
               {"epochs_run", history.size()},
               {"resumed_from", resumed ? json(state.next_epoch - static_cast<int>(history.size()))
                                        : json(0)},
               {"pretrain_samples", sp.pretrain.size()},
               {"checkpoint", checkpoint_path},
               {"config", domclp::to_json(cfg)}};
  if (!history.empty()) summary["final"] = domclp::to_json(history.back());
  emit(summary, args);
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

// Returns (embeddings, class labels, domain ids) of the labeled rows only.
struct LabeledEmbeddings {
  domclp::Mat Z;
  std::vector<int> labels, domains;
};

LabeledEmbeddings labeled_embeddings(const domclp::TrainState& st,
                                     const domclp::MultiDomainDataset& ds,
                                     const std::string& layer) {
  domclp::Mat all = embed(st, ds, layer);
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < all.rows(); ++i)
    if (ds.samples[static_cast<std::size_t>(i)].has_class()) keep.push_back(i);
  LabeledEmbeddings out;
  out.Z.resize(static_cast<Eigen::Index>(keep.size()), all.cols());
  for (std::size_t r = 0; r < keep.size(); ++r) {
    out.Z.row(static_cast<Eigen::Index>(r)) = all.row(keep[r]);
    out.labels.push_back(ds.samples[static_cast<std::size_t>(keep[r])].class_id);
    out.domains.push_back(ds.samples[static_cast<std::size_t>(keep[r])].domain_id);
  }
  return out;
}

int cmd_eval(const CommonArgs& args) {
  domclp::RunConfig cfg = prepare(args);
  domclp::MultiDomainDataset ds = load_run_dataset(cfg, args);
  domclp::TrainState st = load_run_checkpoint(cfg, args);

  json reports = json::object();
  std::string probe_split;
  for (double fraction : cfg.probe.label_fractions) {
    domclp::SplitSpec spec = cfg.split;
    spec.label_fraction = fraction;
    domclp::SplitResult sp = domclp::split(ds, spec);
    const domclp::MultiDomainDataset* test = &sp.target;
    probe_split = "target";
    if (test->samples.empty()) {
      test = &sp.validation;
      probe_split = "validation";
    }
    if (test->samples.empty()) {
      test = &sp.pretrain;  // sanity/leak mode: no held-out samples configured
      probe_split = "pretrain";
    }
    LabeledEmbeddings train_set = labeled_embeddings(st, sp.labeled, cfg.probe.layer);
    LabeledEmbeddings test_set = labeled_embeddings(st, *test, cfg.probe.layer);
    if (train_set.labels.empty() || test_set.labels.empty())
      throw domclp::ConfigError("no labeled samples available for probing");
    domclp::ProbeReport knn =
        domclp::knn_probe(train_set.Z, train_set.labels, test_set.Z, test_set.labels,
                          test_set.domains, cfg.probe.knn_k);
    domclp::ProbeReport linear =
        domclp::linear_probe(train_set.Z, train_set.labels, test_set.Z, test_set.labels,
                             test_set.domains, cfg.probe.linear_lr, cfg.probe.linear_iters);
    reports[domclp::format_double(fraction)] = {{"labeled_samples", train_set.labels.size()},
                                                {"knn", domclp::to_json(knn)},
                                                {"linear", domclp::to_json(linear)}};
  }
  json doc{{"command", "eval"},
           {"probe_split", probe_split},
           {"layer", cfg.probe.layer},
           {"reports", reports},
           {"config", domclp::to_json(cfg)}};
  write_json_file(doc, join(args.out_dir, cfg.outputs.report));
  emit(doc, args);
  return 0;
}

// ---------------------------------------------------------------------------
// diagnose
// ---------------------------------------------------------------------------

int cmd_diagnose(const CommonArgs& args) {
  domclp::RunConfig cfg = prepare(args);
  domclp::MultiDomainDataset ds = load_run_dataset(cfg, args);
  domclp::TrainState st = load_run_checkpoint(cfg, args);
  domclp::Mat Z = embed(st, ds, cfg.probe.layer);

  int n = std::min<int>(10, static_cast<int>(Z.cols()));
  domclp::ConditionNumberReport cond = domclp::condition_number(Z, n);

  json similarity;  // null unless class labels exist
  {
    std::vector<Eigen::Index> labeled;
    for (Eigen::Index i = 0; i < Z.rows(); ++i)
      if (ds.samples[static_cast<std::size_t>(i)].has_class()) labeled.push_back(i);
    if (labeled.empty()) {
      std::cerr << "warning: no class labels; similarity matrix omitted\n";
    } else {
      domclp::Mat Zl(static_cast<Eigen::Index>(labeled.size()), Z.cols());
      std::vector<int> doms, clss;
      for (std::size_t r = 0; r < labeled.size(); ++r) {
        Zl.row(static_cast<Eigen::Index>(r)) = Z.row(labeled[r]);
        doms.push_back(ds.samples[static_cast<std::size_t>(labeled[r])].domain_id);
        clss.push_back(ds.samples[static_cast<std::size_t>(labeled[r])].class_id);
      }
      similarity = domclp::to_json(domclp::similarity_matrix(Zl, doms, clss));
    }
  }

  json suppression, partition;  // null without ground truth
  if (!ds.has_truth()) {
    std::cerr << "warning: dataset has no ground truth; suppression and negative-partition "
                 "diagnostics omitted\n";
  } else {
    domclp::SuppressionMetric sup =
        domclp::suppression_metric(Z, ds.truth_common(), ds.truth_domain());
    suppression = {{"common_energy", sup.common_energy},
                   {"domain_energy", sup.domain_energy},
                   {"rank_deficient", sup.rank_deficient}};

    // Negative-partition statistics over a few sampled two-view batches.
    std::mt19937_64 rng = domclp::substream_rng(cfg.seed, "probe");
    const int n_batches = 8;
    const int originals = std::min(32, ds.size());
    double alpha = 0, beta = 0, gamma = 0, eps_sum = 0;
    long ca = 0, cb = 0, cg = 0, anchors = 0;
    std::uniform_int_distribution<int> pick(0, ds.size() - 1);
    for (int bi = 0; bi < n_batches; ++bi) {
      std::vector<int> idx;
      for (int r = 0; r < originals; ++r) idx.push_back(pick(rng));
      domclp::Mat views(2 * originals, ds.d_in);
      domclp::Mat common(2 * originals, ds.d_in);
      domclp::ContrastiveBatch batch;
      batch.tau = cfg.train.tau;
      batch.domain_ids.resize(static_cast<std::size_t>(2 * originals));
      for (int pass = 0; pass < 2; ++pass)
        for (int r = 0; r < originals; ++r) {
          const auto& s = ds.samples[static_cast<std::size_t>(idx[static_cast<std::size_t>(r)])];
          int row = pass * originals + r;
          views.row(row) = domclp::augment(s.x, cfg.train.augment, rng).transpose();
          common.row(row) = s.truth->c.transpose();
          batch.domain_ids[static_cast<std::size_t>(row)] = s.domain_id;
        }
      domclp::ForwardResult fwd = domclp::forward(st.model_config, st.params, views);
      batch.Z = fwd.proj;
      double eps = domclp::default_partition_epsilon(common);
      eps_sum += eps;
      for (const auto& p : domclp::partition_negatives(batch, common, eps)) {
        alpha += p.n_alpha;
        beta += p.n_beta;
        gamma += p.n_gamma;
        ca += p.count_alpha;
        cb += p.count_beta;
        cg += p.count_gamma;
        ++anchors;
      }
    }
    auto mean = [&](double v) { return v / static_cast<double>(anchors); };
    partition = {{"batches", n_batches},
                 {"anchors", anchors},
                 {"epsilon_mean", eps_sum / n_batches},
                 {"n_alpha_mean", mean(alpha)},
                 {"n_beta_mean", mean(beta)},
                 {"n_gamma_mean", mean(gamma)},
                 {"count_alpha_mean", mean(static_cast<double>(ca))},
                 {"count_beta_mean", mean(static_cast<double>(cb))},
                 {"count_gamma_mean", mean(static_cast<double>(cg))}};
  }

  json doc{{"command", "diagnose"},
           {"layer", cfg.probe.layer},
           {"condition_number", domclp::to_json(cond)},
           {"similarity_matrix", similarity},
           {"suppression", suppression},
           {"negative_partition", partition},
           {"config", domclp::to_json(cfg)}};
  write_json_file(doc, join(args.out_dir, cfg.outputs.diagnostics));
  emit(doc, args);
  return 0;
}

// ---------------------------------------------------------------------------
// export-embeddings
// ---------------------------------------------------------------------------

int cmd_export_embeddings(const CommonArgs& args) {
  domclp::RunConfig cfg = prepare(args);
  domclp::MultiDomainDataset ds = load_run_dataset(cfg, args);
  domclp::TrainState st = load_run_checkpoint(cfg, args);
  std::string path = join(args.out_dir, cfg.outputs.embeddings);
  domclp::export_embeddings(st.model_config, st.params, ds, path, cfg.probe.layer);
  emit({{"command", "export-embeddings"},
        {"embeddings", path},
        {"rows", ds.size()},
        {"layer", cfg.probe.layer},
        {"config", domclp::to_json(cfg)}},
       args);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic-data laboratory for domain-wise contrastive representation learning"};
  app.require_subcommand(1);
  CommonArgs args;
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic multi-domain dataset");
  auto* train = app.add_subcommand("train", "train on the pretrain split of the dataset");
  auto* eval_ = app.add_subcommand("eval", "probe frozen embeddings per label fraction");
  auto* diagnose = app.add_subcommand("diagnose", "representation diagnostics");
  auto* export_ = app.add_subcommand("export-embeddings", "dump embeddings as CSV");
  for (auto* cmd : {gen, train, eval_, diagnose, export_}) add_common(cmd, args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;  // usage errors are exit 2; --help is 0
  }

  try {
    if (gen->parsed()) return cmd_gen_data(args);
    if (train->parsed()) return cmd_train(args);
    if (eval_->parsed()) return cmd_eval(args);
    if (diagnose->parsed()) return cmd_diagnose(args);
    if (export_->parsed()) return cmd_export_embeddings(args);
  } catch (const domclp::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const domclp::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
