#include <catch2/catch_amalgamated.hpp>

#include "domclp/eval.hpp"
#include "support/oracles.hpp"
#include "support/tempdir.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

using namespace domclp;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

// ---------------------------------------------------------------------------
// kNN probe
// ---------------------------------------------------------------------------

TEST_CASE("nearest neighbor with k=1 recovers exact matches") {
  Mat train(3, 2);
  train << 1, 0, 0, 1, -1, 0;
  std::vector<int> labels = {0, 1, 2};
  Mat test = train;
  std::vector<int> test_labels = {0, 1, 2};
  std::vector<int> domains = {0, 0, 1};
  auto rep = knn_probe(train, labels, test, test_labels, domains, 1);
  CHECK(rep.average_accuracy == 1.0);
  CHECK(rep.per_domain_accuracy.at(0) == 1.0);
  CHECK(rep.per_domain_accuracy.at(1) == 1.0);
  CHECK_FALSE(rep.k_clamped);
  CHECK(rep.probe == "knn");
}

TEST_CASE("similarity-weighted votes favor the closer neighbor") {
  // Train rows at right angles, one per class; the test point leans toward
  // class 0, so with k = 2 the exp(sim / 0.07) weighting must pick class 0.
  Mat train(2, 2);
  train << 1, 0, 0, 1;
  std::vector<int> labels = {0, 1};
  Mat test(1, 2);
  test << 0.9, 0.1;
  std::vector<int> test_labels = {0};
  std::vector<int> domains = {4};
  auto rep = knn_probe(train, labels, test, test_labels, domains, 2);
  CHECK(rep.average_accuracy == 1.0);
  CHECK(rep.per_domain_accuracy.count(4) == 1);
}

TEST_CASE("the probe is invariant to embedding scale") {
  auto rng = substream_rng(81, "probe");
  Mat train = oracles::random_matrix(30, 4, rng);
  Mat test = oracles::random_matrix(10, 4, rng);
  std::vector<int> labels, test_labels, domains;
  std::uniform_int_distribution<int> cls(0, 2);
  for (int i = 0; i < 30; ++i) labels.push_back(cls(rng));
  for (int i = 0; i < 10; ++i) {
    test_labels.push_back(cls(rng));
    domains.push_back(i % 2);
  }
  auto a = knn_probe(train, labels, test, test_labels, domains, 5);
  auto b = knn_probe(13.7 * train, labels, 0.02 * test, test_labels, domains, 5);
  CHECK(a.average_accuracy == b.average_accuracy);
  CHECK(a.per_domain_accuracy == b.per_domain_accuracy);
}

TEST_CASE("k larger than the train set is clamped and flagged") {
  Mat train(3, 2);
  train << 1, 0, 0, 1, 1, 1;
  std::vector<int> labels = {0, 1, 0};
  Mat test(1, 2);
  test << 1, 0;
  auto rep = knn_probe(train, labels, test, {0}, {0}, 20);
  CHECK(rep.k == 3);
  CHECK(rep.k_clamped);
}

TEST_CASE("vote ties go to the lower class id") {
  // Two train points exactly symmetric about the test point: equal
  // similarities, one vote each.
  Mat train(2, 2);
  train << 1, 0.1, 1, -0.1;
  std::vector<int> labels = {1, 0};
  Mat test(1, 2);
  test << 1, 0;
  auto rep = knn_probe(train, labels, test, {0}, {0}, 2);
  // Prediction must be class 0 (the tie resolution), which matches.
  CHECK(rep.average_accuracy == 1.0);
}

TEST_CASE("per-domain accuracies average into the headline number") {
  Mat train(2, 2);
  train << 1, 0, 0, 1;
  std::vector<int> labels = {0, 1};
  // Domain 7: both correct; domain 9: one of two correct.
  Mat test(4, 2);
  test << 1, 0, 0, 1, 1, 0, 0, 1;
  std::vector<int> test_labels = {0, 1, 1, 1};
  std::vector<int> domains = {7, 7, 9, 9};
  auto rep = knn_probe(train, labels, test, test_labels, domains, 1);
  CHECK_THAT(rep.per_domain_accuracy.at(7), WithinRel(1.0, 1e-15));
  CHECK_THAT(rep.per_domain_accuracy.at(9), WithinRel(0.5, 1e-15));
  CHECK_THAT(rep.average_accuracy, WithinRel(0.75, 1e-15));
}

TEST_CASE("knn probe validates inputs") {
  Mat train(2, 2);
  train << 1, 0, 0, 1;
  CHECK_THROWS_AS(knn_probe(Mat(0, 2), {}, train, {0, 1}, {0, 0}, 1), ConfigError);
  CHECK_THROWS_AS(knn_probe(train, {0}, train, {0, 1}, {0, 0}, 1), ConfigError);
  CHECK_THROWS_AS(knn_probe(train, {0, 1}, train, {0, 1}, {0, 0}, 0), ConfigError);
}

// ---------------------------------------------------------------------------
// Linear probe
// ---------------------------------------------------------------------------

TEST_CASE("the softmax regression gradient matches finite differences") {
  auto rng = substream_rng(82, "probe");
  Mat X = oracles::random_matrix(7, 3, rng);
  std::vector<int> labels = {0, 1, 2, 0, 1, 2, 0};
  Mat W = oracles::random_matrix(3, 3, rng, 0.3);
  Vec b = oracles::random_matrix(3, 1, rng, 0.3).col(0);

  Mat gW;
  Vec gb;
  multinomial_logistic(X, labels, W, b, &gW, &gb);

  // Flatten (W, b) into one vector for the finite-difference probe.
  Vec theta(W.size() + b.size());
  Eigen::Index pos = 0;
  for (Eigen::Index r = 0; r < W.rows(); ++r)
    for (Eigen::Index c = 0; c < W.cols(); ++c) theta[pos++] = W(r, c);
  for (Eigen::Index i = 0; i < b.size(); ++i) theta[pos++] = b[i];

  auto value = [&](const Vec& t) {
    Mat Wp = W;
    Vec bp = b;
    Eigen::Index q = 0;
    for (Eigen::Index r = 0; r < Wp.rows(); ++r)
      for (Eigen::Index c = 0; c < Wp.cols(); ++c) Wp(r, c) = t[q++];
    for (Eigen::Index i = 0; i < bp.size(); ++i) bp[i] = t[q++];
    return multinomial_logistic(X, labels, Wp, bp);
  };
  Vec fd = oracles::fd_gradient(value, theta, 1e-5);
  Vec analytic(theta.size());
  pos = 0;
  for (Eigen::Index r = 0; r < gW.rows(); ++r)
    for (Eigen::Index c = 0; c < gW.cols(); ++c) analytic[pos++] = gW(r, c);
  for (Eigen::Index i = 0; i < gb.size(); ++i) analytic[pos++] = gb[i];
  CHECK(oracles::max_rel_error(analytic, fd) < 1e-4);
}

TEST_CASE("a separable two-point problem is fit perfectly") {
  Mat train(2, 2);
  train << 1, 0, 0, 1;
  std::vector<int> labels = {0, 1};
  auto rep = linear_probe(train, labels, train, labels, {0, 0}, 0.5, 200);
  CHECK(rep.average_accuracy == 1.0);
  CHECK(rep.probe == "linear");
  CHECK(rep.lr == 0.5);
  CHECK(rep.iters == 200);
}

TEST_CASE("with zero iterations the probe predicts the lowest class everywhere") {
  // W = 0, b = 0 gives uniform logits; argmax tie-breaking picks class 0,
  // so accuracy equals the share of class 0 (1 / n_classes on balanced data).
  Mat train(4, 2);
  train << 1, 0, 0, 1, -1, 0, 0, -1;
  std::vector<int> labels = {0, 1, 2, 3};
  auto rep = linear_probe(train, labels, train, labels, {0, 0, 0, 0}, 0.1, 0);
  CHECK_THAT(rep.average_accuracy, WithinRel(0.25, 1e-15));
}

TEST_CASE("gradient descent monotonically decreases the training loss") {
  auto rng = substream_rng(83, "probe");
  Mat X = oracles::random_matrix(20, 3, rng);
  std::vector<int> labels;
  for (int i = 0; i < 20; ++i) labels.push_back(i % 3);
  Mat W = Mat::Zero(3, 3);
  Vec b = Vec::Zero(3);
  Mat gW;
  Vec gb;
  double prev = multinomial_logistic(X, labels, W, b, &gW, &gb);
  CHECK_THAT(prev, WithinRel(std::log(3.0), 1e-12));  // uniform start
  for (int it = 0; it < 50; ++it) {
    W -= 0.1 * gW;
    b -= 0.1 * gb;
    double cur = multinomial_logistic(X, labels, W, b, &gW, &gb);
    CHECK(cur <= prev + 1e-12);
    prev = cur;
  }
}

TEST_CASE("a single-class train set is rejected") {
  Mat train(3, 2);
  train << 1, 0, 0, 1, 1, 1;
  CHECK_THROWS_WITH(linear_probe(train, {1, 1, 1}, train, {1, 1, 1}, {0, 0, 0}),
                    Catch::Matchers::ContainsSubstring("single class"));
}

// ---------------------------------------------------------------------------
// Condition number
// ---------------------------------------------------------------------------

TEST_CASE("symmetric axis pairs give a perfectly balanced spectrum") {
  // Rows +-e_i for i < 5: column means vanish and the Gram matrix is 2 I,
  // so every singular value is sqrt(2) and the ratio is exactly 1.
  Mat R(10, 5);
  R.setZero();
  for (int i = 0; i < 5; ++i) {
    R(2 * i, i) = 1.0;
    R(2 * i + 1, i) = -1.0;
  }
  auto rep = condition_number(R, 5);
  CHECK_FALSE(rep.infinite);
  CHECK_THAT(rep.kappa, WithinRel(1.0, 1e-12));
  REQUIRE(rep.singular_values.size() == 5);
  for (double s : rep.singular_values) CHECK_THAT(s, WithinRel(std::sqrt(2.0), 1e-12));
}

TEST_CASE("a constructed spectrum of 10 down to 1 gives ratio 10") {
  // Rows +-s_i e_i produce a centered matrix with singular values
  // sqrt(2) * s_i; the common factor cancels in the ratio.
  Mat R(20, 10);
  R.setZero();
  for (int i = 0; i < 10; ++i) {
    double s = 10.0 - i;
    R(2 * i, i) = s;
    R(2 * i + 1, i) = -s;
  }
  auto rep = condition_number(R, 10);
  CHECK_THAT(rep.kappa, WithinRel(10.0, 1e-12));
  for (std::size_t i = 1; i < rep.singular_values.size(); ++i)
    CHECK(rep.singular_values[i] <= rep.singular_values[i - 1]);
}

TEST_CASE("the spectrum matches an independent eigenvalue computation") {
  auto rng = substream_rng(84, "probe");
  Mat R = oracles::random_matrix(100, 16, rng);
  auto rep = condition_number(R, 10);

  Mat centered = R.rowwise() - R.colwise().mean();
  Mat gram = centered.transpose() * centered;
  auto ev = oracles::jacobi_eigenvalues(gram);
  REQUIRE(ev.size() >= 10);
  for (int i = 0; i < 10; ++i) {
    double expected = std::sqrt(std::max(0.0, ev[static_cast<std::size_t>(i)]));
    CHECK_THAT(rep.singular_values[static_cast<std::size_t>(i)], WithinRel(expected, 1e-6));
  }
  CHECK_THAT(rep.kappa,
             WithinRel(std::sqrt(ev[0]) / std::sqrt(ev[9]), 1e-6));
  CHECK(rep.kappa >= 1.0);
}

TEST_CASE("rank-collapsed representations report an infinite ratio") {
  auto rng = substream_rng(85, "probe");
  Mat basis = oracles::random_matrix(1, 6, rng);
  Mat coef = oracles::random_matrix(30, 1, rng);
  Mat R = coef * basis;  // rank 1
  auto rep = condition_number(R, 3);
  CHECK(rep.infinite);
  CHECK(std::isinf(rep.kappa));
  auto j = to_json(rep);
  CHECK(j.at("kappa").is_null());
  CHECK(j.at("infinite").get<bool>());
}

TEST_CASE("condition number validates its inputs") {
  CHECK_THROWS_WITH(condition_number(Mat::Zero(5, 16), 10),
                    Catch::Matchers::ContainsSubstring("need >= n rows"));
  CHECK_THROWS_AS(condition_number(Mat::Zero(20, 4), 10), ConfigError);
  CHECK_THROWS_AS(condition_number(Mat::Zero(20, 16), 0), ConfigError);
}

// ---------------------------------------------------------------------------
// Similarity matrix
// ---------------------------------------------------------------------------

TEST_CASE("identical members give similarity one, orthogonal groups zero") {
  Mat Z(4, 2);
  Z << 1, 0, 1, 0, 0, 1, 0, 1;
  std::vector<int> domains = {0, 0, 1, 1};
  std::vector<int> classes = {0, 0, 0, 0};
  auto sm = similarity_matrix(Z, domains, classes);
  REQUIRE(sm.groups.size() == 2);
  CHECK(sm.groups[0] == std::make_pair(0, 0));
  CHECK(sm.groups[1] == std::make_pair(1, 0));
  CHECK_THAT(sm.values(0, 0), WithinRel(1.0, 1e-12));
  CHECK_THAT(sm.values(1, 1), WithinRel(1.0, 1e-12));
  CHECK_THAT(sm.values(0, 1), WithinAbs(0.0, 1e-15));
}

TEST_CASE("singleton groups have an undefined diagonal that serializes as null") {
  Mat Z(2, 2);
  Z << 1, 0, 0, 1;
  auto sm = similarity_matrix(Z, {0, 1}, {0, 0});
  CHECK(std::isnan(sm.values(0, 0)));
  CHECK(std::isnan(sm.values(1, 1)));
  CHECK_THAT(sm.values(0, 1), WithinAbs(0.0, 1e-15));
  auto j = to_json(sm);
  CHECK(j.at("values")[0][0].is_null());
  CHECK(j.at("values")[0][1].is_number());
  CHECK(j.at("groups")[0].at("size").get<int>() == 1);
}

TEST_CASE("group means match a brute-force double loop") {
  auto rng = substream_rng(86, "probe");
  Mat Z = oracles::random_matrix(18, 3, rng);
  std::vector<int> domains, classes;
  for (int i = 0; i < 18; ++i) {
    domains.push_back(i % 2);
    classes.push_back((i / 2) % 3);
  }
  auto sm = similarity_matrix(Z, domains, classes);

  Mat zn = Z;
  for (Eigen::Index i = 0; i < zn.rows(); ++i) zn.row(i) /= zn.row(i).norm();
  for (std::size_t a = 0; a < sm.groups.size(); ++a) {
    for (std::size_t b = 0; b < sm.groups.size(); ++b) {
      double total = 0.0;
      int count = 0;
      for (int i = 0; i < 18; ++i) {
        if (std::make_pair(domains[static_cast<std::size_t>(i)],
                           classes[static_cast<std::size_t>(i)]) != sm.groups[a])
          continue;
        for (int j = 0; j < 18; ++j) {
          if (i == j) continue;
          if (std::make_pair(domains[static_cast<std::size_t>(j)],
                             classes[static_cast<std::size_t>(j)]) != sm.groups[b])
            continue;
          total += zn.row(i).dot(zn.row(j));
          ++count;
        }
      }
      if (count == 0) continue;
      CHECK_THAT(sm.values(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)),
                 WithinAbs(total / count, 1e-10));
    }
  }
  // Symmetry.
  for (Eigen::Index a = 0; a < sm.values.rows(); ++a)
    for (Eigen::Index b = 0; b < sm.values.cols(); ++b)
      if (!std::isnan(sm.values(a, b))) CHECK(sm.values(a, b) == sm.values(b, a));
}

// ---------------------------------------------------------------------------
// Embedding export
// ---------------------------------------------------------------------------

TEST_CASE("exported embeddings reload to the exact forward pass") {
  testsupport::TempDir tmp;
  ToyConfig t;
  t.n_domains = 2;
  t.n_classes = 2;
  t.samples_per_class_per_domain = 4;
  t.seed = 12;
  auto ds = generate_toy(t);
  ModelConfig mc;
  mc.encoder_layers = {3, 6, 5};
  mc.projection_layers = {5, 3};
  mc.seed = 4;
  auto params = init_model(mc);

  for (std::string layer : {"projection", "encoder"}) {
    const std::string path = tmp.file(layer + ".csv");
    export_embeddings(mc, params, ds, path, layer);

    std::ifstream in(path);
    std::string header;
    REQUIRE(std::getline(in, header));
    int dim = layer == "projection" ? 3 : 5;
    std::ostringstream expect;
    expect << "domain,class";
    for (int j = 0; j < dim; ++j) expect << ",z" << j;
    CHECK(header == expect.str());

    auto fwd = forward(mc, params, ds.inputs());
    const Mat& E = layer == "projection" ? fwd.proj : fwd.repr;
    int row = 0;
    std::string line;
    while (std::getline(in, line)) {
      auto fields = [&] {
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        return f;
      }();
      REQUIRE(fields.size() == static_cast<std::size_t>(2 + dim));
      CHECK(std::stoi(fields[0]) == ds.samples[static_cast<std::size_t>(row)].domain_id);
      CHECK(std::stoi(fields[1]) == ds.samples[static_cast<std::size_t>(row)].class_id);
      for (int j = 0; j < dim; ++j)
        CHECK(parse_double(fields[static_cast<std::size_t>(2 + j)]) == E(row, j));
      ++row;
    }
    CHECK(row == ds.size());
  }
}

TEST_CASE("unlabeled samples export class -1") {
  testsupport::TempDir tmp;
  MultiDomainDataset ds;
  ds.n_domains = 1;
  ds.n_classes = 0;
  ds.d_in = 2;
  for (int i = 0; i < 3; ++i) {
    DomainSample s;
    s.x = Vec::Constant(2, static_cast<double>(i));
    ds.samples.push_back(s);
  }
  ModelConfig mc;
  mc.encoder_layers = {2, 3};
  mc.projection_layers = {3, 2};
  auto params = init_model(mc);
  const std::string path = tmp.file("unlabeled.csv");
  export_embeddings(mc, params, ds, path);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);  // header
  std::getline(in, line);
  CHECK(line.substr(0, 5) == "0,-1,");
}

TEST_CASE("export rejects unknown layers") {
  ModelConfig mc;
  mc.encoder_layers = {2, 3};
  mc.projection_layers = {3, 2};
  auto params = init_model(mc);
  MultiDomainDataset ds;
  ds.n_domains = 1;
  ds.n_classes = 0;
  ds.d_in = 2;
  DomainSample s;
  s.x = Vec::Zero(2);
  ds.samples.push_back(s);
  CHECK_THROWS_WITH(export_embeddings(mc, params, ds, "/tmp/x.csv", "logits"),
                    Catch::Matchers::ContainsSubstring("logits"));
}
