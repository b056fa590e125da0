#include <catch2/catch_amalgamated.hpp>

#include "domclp/run_config.hpp"
#include "support/tempdir.hpp"

#include <fstream>

using namespace domclp;
using Catch::Matchers::ContainsSubstring;
using nlohmann::json;

TEST_CASE("an empty document yields the documented defaults") {
  auto cfg = parse_run_config(json::object());
  CHECK(cfg.version == 1);
  CHECK(cfg.seed == 42);
  CHECK_FALSE(cfg.resume);
  CHECK(cfg.toy.n_domains == 3);
  CHECK(cfg.toy.n_classes == 4);
  CHECK(cfg.toy.samples_per_class_per_domain == 50);
  CHECK(cfg.split.target_domains.empty());
  CHECK(cfg.model.encoder_layers == std::vector<int>{3, 64, 64, 32});
  CHECK(cfg.model.projection_layers == std::vector<int>{32, 16});
  CHECK(cfg.train.epochs == 100);
  CHECK(cfg.train.batch_size == 64);
  CHECK(cfg.train.tau == 0.07);
  CHECK(cfg.train.cluster.K == std::vector<int>{4, 8});
  CHECK(cfg.train.mix_alpha == 4.0);
  CHECK(cfg.train.losses.dcon);
  CHECK_FALSE(cfg.train.losses.infonce);
  CHECK(cfg.train.losses.pmix);
  CHECK(cfg.train.losses.pcl);
  CHECK(cfg.probe.knn_k == 20);
  CHECK(cfg.probe.label_fractions == std::vector<double>{0.1});
  CHECK(cfg.probe.layer == "projection");
  CHECK(cfg.outputs.metrics == "metrics.jsonl");
  CHECK_FALSE(cfg.outputs.prototype_dumps);
}

TEST_CASE("section seeds derive from the master seed through named substreams") {
  auto cfg = parse_run_config(json::object());
  CHECK(cfg.toy.seed == substream_seed(42, "data"));
  CHECK(cfg.split.seed == substream_seed(42, "data"));
  CHECK(cfg.model.seed == substream_seed(42, "init"));
  CHECK(cfg.train.seed == substream_seed(42, "train"));
  CHECK(cfg.train.cluster.seed == substream_seed(42, "train"));

  auto other = parse_run_config(json{{"seed", 43}});
  CHECK(other.toy.seed != cfg.toy.seed);
  CHECK(other.model.seed != cfg.model.seed);
  CHECK(other.train.seed != cfg.train.seed);
  // Distinct substreams off the same master.
  CHECK(cfg.toy.seed != cfg.model.seed);
  CHECK(cfg.model.seed != cfg.train.seed);
}

TEST_CASE("the seed override replaces the master but not pinned section seeds") {
  json j = {{"seed", 7}, {"toy", {{"seed", 99}}}};
  auto cfg = parse_run_config(j, 1234);
  CHECK(cfg.seed == 1234);
  CHECK(cfg.toy.seed == 99);  // explicitly pinned, survives override
  CHECK(cfg.model.seed == substream_seed(1234, "init"));
  CHECK(cfg.train.seed == substream_seed(1234, "train"));

  // Negative override means "no override".
  auto plain = parse_run_config(j, -1);
  CHECK(plain.seed == 7);
  CHECK(plain.model.seed == substream_seed(7, "init"));
}

TEST_CASE("unknown keys are rejected with the key and section named") {
  CHECK_THROWS_WITH(parse_run_config(json{{"bogus", 1}}),
                    ContainsSubstring("bogus") && ContainsSubstring("(top level)"));
  CHECK_THROWS_WITH(parse_run_config(json{{"toy", {{"n_domain", 3}}}}),
                    ContainsSubstring("n_domain") && ContainsSubstring("toy"));
  CHECK_THROWS_WITH(parse_run_config(json{{"split", {{"targets", json::array()}}}}),
                    ContainsSubstring("targets") && ContainsSubstring("split"));
  CHECK_THROWS_WITH(parse_run_config(json{{"model", {{"layers", json::array()}}}}),
                    ContainsSubstring("layers") && ContainsSubstring("model"));
  CHECK_THROWS_WITH(parse_run_config(json{{"train", {{"lr", 0.1}}}}),
                    ContainsSubstring("lr") && ContainsSubstring("train"));
  CHECK_THROWS_WITH(parse_run_config(json{{"train", {{"cluster", {{"k", json::array()}}}}}}),
                    ContainsSubstring("\"k\"") && ContainsSubstring("train.cluster"));
  CHECK_THROWS_WITH(parse_run_config(json{{"train", {{"losses", {{"contrastive", true}}}}}}),
                    ContainsSubstring("contrastive") && ContainsSubstring("train.losses"));
  CHECK_THROWS_WITH(parse_run_config(json{{"train", {{"augment", {{"jitter", 0.1}}}}}}),
                    ContainsSubstring("jitter") && ContainsSubstring("train.augment"));
  CHECK_THROWS_WITH(parse_run_config(json{{"probe", {{"k", 5}}}}),
                    ContainsSubstring("\"k\"") && ContainsSubstring("probe"));
  CHECK_THROWS_WITH(parse_run_config(json{{"outputs", {{"metric", "m.jsonl"}}}}),
                    ContainsSubstring("metric") && ContainsSubstring("outputs"));
}

TEST_CASE("only config version 1 is accepted") {
  CHECK(parse_run_config(json{{"version", 1}}).version == 1);
  CHECK_THROWS_WITH(parse_run_config(json{{"version", 2}}),
                    ContainsSubstring("version 2"));
  CHECK_THROWS_WITH(parse_run_config(json{{"version", 0}}), ContainsSubstring("version"));
}

TEST_CASE("values flow through to the typed sections") {
  json j = {
      {"seed", 5},
      {"toy", {{"n_domains", 2}, {"n_classes", 3}, {"noise_sigma", 0.2}}},
      {"split", {{"target_domains", {1}}, {"label_fraction", 0.25}}},
      {"model",
       {{"encoder_layers", {3, 10, 8}}, {"projection_layers", {8, 4}}, {"activation", "tanh"}}},
      {"train",
       {{"epochs", 7},
        {"batch_size", 8},
        {"warmup_epochs", 2},
        {"cluster", {{"K", {2, 3}}}},
        {"losses", {{"dcon", false}, {"infonce", true}}},
        {"augment", {{"scale_jitter", {0.8, 1.2}}, {"mask_fraction", 0.25}}}}},
      {"probe", {{"label_fractions", {0.05, 0.5}}, {"layer", "encoder"}}},
      {"outputs", {{"metrics", "m.jsonl"}, {"prototype_dumps", true}}},
  };
  auto cfg = parse_run_config(j);
  CHECK(cfg.toy.n_domains == 2);
  CHECK(cfg.toy.noise_sigma == 0.2);
  CHECK(cfg.split.target_domains == std::vector<int>{1});
  CHECK(cfg.split.label_fraction == 0.25);
  CHECK(cfg.model.activation == Activation::kTanh);
  CHECK(cfg.train.epochs == 7);
  CHECK(cfg.train.resolved_warmup() == 2);
  CHECK(cfg.train.cluster.K == std::vector<int>{2, 3});
  CHECK_FALSE(cfg.train.losses.dcon);
  CHECK(cfg.train.losses.infonce);
  CHECK(cfg.train.augment.scale_jitter_lo == 0.8);
  CHECK(cfg.train.augment.scale_jitter_hi == 1.2);
  CHECK(cfg.train.augment.mask_fraction == 0.25);
  CHECK(cfg.probe.label_fractions == std::vector<double>{0.05, 0.5});
  CHECK(cfg.probe.layer == "encoder");
  CHECK(cfg.outputs.metrics == "m.jsonl");
  CHECK(cfg.outputs.prototype_dumps);
}

TEST_CASE("the resolved echo re-parses to itself") {
  json j = {{"seed", 17},
            {"toy", {{"n_domains", 2}, {"samples_per_class_per_domain", 6}}},
            {"train", {{"epochs", 4}, {"batch_size", 4}, {"cluster", {{"K", {2}}}}}}};
  auto cfg = parse_run_config(j);
  json echo = to_json(cfg);
  auto cfg2 = parse_run_config(echo);
  CHECK(to_json(cfg2) == echo);
  // The echo pins every derived seed, so a later override cannot shift them.
  auto cfg3 = parse_run_config(echo, 999);
  CHECK(cfg3.toy.seed == cfg.toy.seed);
  CHECK(cfg3.train.seed == cfg.train.seed);
}

TEST_CASE("section validation runs after parsing") {
  CHECK_THROWS_WITH(parse_run_config(json{{"toy", {{"ambient_dim", 1}}}}),
                    ContainsSubstring("ambient_dim"));
  CHECK_THROWS_WITH(parse_run_config(json{{"train", {{"batch_size", 7}}}}),
                    ContainsSubstring("batch_size"));
  CHECK_THROWS_WITH(
      parse_run_config(json{
          {"train",
           {{"losses",
             {{"dcon", false}, {"infonce", false}, {"pmix", false}, {"pcl", false}}}}}}),
      ContainsSubstring("no loss enabled"));
  CHECK_THROWS_WITH(
      parse_run_config(json{{"train", {{"losses", {{"dcon", true}, {"infonce", true}}}}}}),
      ContainsSubstring("only one"));
  CHECK_THROWS_WITH(parse_run_config(json{{"probe", {{"label_fractions", {1.5}}}}}),
                    ContainsSubstring("(0, 1]"));
  CHECK_THROWS_WITH(parse_run_config(json{{"probe", {{"layer", "logits"}}}}),
                    ContainsSubstring("layer"));
}

TEST_CASE("malformed scalar values name the offending key") {
  CHECK_THROWS_WITH(parse_run_config(json{{"train", {{"epochs", "many"}}}}),
                    ContainsSubstring("epochs"));
  CHECK_THROWS_WITH(parse_run_config(json{{"toy", {{"noise_sigma", json::array()}}}}),
                    ContainsSubstring("noise_sigma"));
  CHECK_THROWS_WITH(
      parse_run_config(json{{"train", {{"augment", {{"scale_jitter", {0.9}}}}}}}),
      ContainsSubstring("scale_jitter must be [lo, hi]"));
  CHECK_THROWS_WITH(
      parse_run_config(json{{"train", {{"augment", {{"scale_jitter", {0.9, 1.0, 1.1}}}}}}}),
      ContainsSubstring("scale_jitter must be [lo, hi]"));
}

TEST_CASE("configs load from disk with path-qualified errors") {
  testsupport::TempDir tmp;

  const std::string good = tmp.file("good.json");
  {
    std::ofstream out(good);
    out << R"({"seed": 3, "train": {"epochs": 2}})";
  }
  auto cfg = load_run_config(good);
  CHECK(cfg.seed == 3);
  CHECK(cfg.train.epochs == 2);

  CHECK_THROWS_WITH(load_run_config(tmp.file("absent.json")),
                    ContainsSubstring("cannot open"));

  const std::string garbage = tmp.file("garbage.json");
  {
    std::ofstream out(garbage);
    out << "{not json";
  }
  CHECK_THROWS_AS(load_run_config(garbage), ParseError);

  const std::string list = tmp.file("list.json");
  {
    std::ofstream out(list);
    out << "[1, 2, 3]";
  }
  CHECK_THROWS_WITH(load_run_config(list), ContainsSubstring("object"));
}
