#include <doctest.h>

#include <random>

#include "ncd/evaluation.hpp"
#include "oracles.hpp"

using namespace ncd;

TEST_SUITE("evaluation") {
  TEST_CASE("argmax ties go to the lowest index") {
    Eigen::VectorXf v(4);
    v << 0.1f, 0.4f, 0.4f, 0.1f;
    CHECK(argmax(v) == 1);
    Eigen::MatrixXf probs(2, 3);
    probs << 0.2f, 0.5f, 0.3f, 0.9f, 0.05f, 0.05f;
    CHECK(assign_from_probs(probs, AssignmentSource::kGlobalHead).assignments == std::vector<int>{1, 0});
  }

  TEST_CASE("hungarian_match equals exhaustive search") {
    std::mt19937_64 rng(31);
    std::uniform_int_distribution<int> cnt(0, 40);
    for (int t = 0; t < 200; ++t) {
      const int c = 3 + t % 5;
      Eigen::MatrixXi m(c, c);
      for (Index i = 0; i < m.size(); ++i) m(i) = t % 7 == 0 ? cnt(rng) % 3 : cnt(rng);
      const auto perm = hungarian_match(m);
      REQUIRE(static_cast<int>(perm.size()) == c);
      std::vector<int> sorted = perm;
      std::sort(sorted.begin(), sorted.end());
      for (int i = 0; i < c; ++i) REQUIRE(sorted[static_cast<std::size_t>(i)] == i);
      long s = 0;
      for (int i = 0; i < c; ++i) s += m(i, perm[static_cast<std::size_t>(i)]);
      REQUIRE(s == oracle::best_matching_sum(m));
    }
  }

  TEST_CASE("clustering accuracy examples") {
    CHECK(clustering_acc({1, 1, 0, 0}, {0, 0, 1, 1}).acc == 1.0);
    const std::vector<int> pred{0, 0, 0, 1, 1, 1, 2, 2, 2, 2};
    const std::vector<int> truth{0, 0, 1, 1, 1, 2, 2, 2, 0, 2};
    CHECK(clustering_acc(pred, truth, 3).acc == doctest::Approx(0.7));
    CHECK(clustering_acc({2, 2, 2}, {0, 1, 2}, 3).acc == doctest::Approx(1.0 / 3));

    std::mt19937_64 rng(8);
    std::uniform_int_distribution<int> k(0, 4);
    for (int t = 0; t < 50; ++t) {
      std::vector<int> p(30), y(30);
      for (auto& v : p) v = k(rng);
      for (auto& v : y) v = k(rng);
      CHECK(clustering_acc(p, y, 5).acc == doctest::Approx(oracle::clustering_acc(p, y, 5)));
    }
  }

  TEST_CASE("k-means") {
    Eigen::MatrixXd x(60, 2);
    std::mt19937_64 rng(4);
    std::normal_distribution<double> g(0, 0.1);
    std::vector<int> truth;
    for (Index i = 0; i < 60; ++i) {
      const int c = static_cast<int>(i % 3);
      x(i, 0) = 10.0 * c + g(rng);
      x(i, 1) = (c == 1 ? 5.0 : 0.0) + g(rng);
      truth.push_back(c);
    }
    const auto km = kmeans_baseline(x, 3, 11);
    CHECK(clustering_acc(km.result.assignments, truth, 3).acc == 1.0);
    CHECK(km.result.source == AssignmentSource::kKMeans);
    CHECK(kmeans_baseline(x, 3, 11).result.assignments == km.result.assignments);

    const auto one = kmeans_baseline(x, 1, 2);
    const Eigen::RowVectorXd mean = x.colwise().mean();
    CHECK(one.inertia == doctest::Approx((x.rowwise() - mean).squaredNorm()).epsilon(1e-9));
    CHECK_THROWS_AS(kmeans_baseline(x, 61, 1), std::invalid_argument);
  }

  TEST_CASE("open-world scores") {
    Eigen::MatrixXf probs(4, 4);
    probs << 0.7f, 0.1f, 0.1f, 0.1f,  // seen 0, correct
        0.1f, 0.1f, 0.7f, 0.1f,      // seen 1, wrong (novel argmax is ignored for seen)
        0.1f, 0.1f, 0.7f, 0.1f,      // novel
        0.1f, 0.1f, 0.1f, 0.7f;      // novel
    HiddenLabels truth;
    truth.labels = {0, 1, 3, 2};
    truth.seen = {true, true, false, false};
    truth.num_classes = 4;
    const auto r = open_world_scores(probs, truth, 2);
    CHECK(r.seen_count == 2);
    CHECK(r.novel_count == 2);
    CHECK(r.seen_acc == doctest::Approx(0.5));
    CHECK(r.novel_acc == doctest::Approx(1.0));
  }
}
