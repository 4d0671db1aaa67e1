#include <doctest.h>

#include <random>

#include "gradcheck.hpp"
#include "ncd/losses.hpp"
#include "oracles.hpp"

using namespace ncd;

namespace {

Eigen::VectorXd simplex(std::mt19937_64& rng, Index n) {
  std::gamma_distribution<double> g(0.5, 1.0);
  Eigen::VectorXd p(n);
  for (Index i = 0; i < n; ++i) p(i) = g(rng) + 1e-300;
  return p / p.sum();
}

std::vector<long double> as_ld(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

TEST_SUITE("losses") {
  TEST_CASE("kl and jsd") {
    Eigen::VectorXd p(2), q(2);
    p << 1, 0;
    q << 0.5, 0.5;
    CHECK(std::abs(kl<double>(p, q) - std::log(2.0)) < 1e-9);
    CHECK_THROWS_AS(kl<double>(q, p), std::domain_error);
    CHECK_THROWS_AS(kl<double>(p, Eigen::VectorXd::Ones(3) / 3), std::invalid_argument);

    std::mt19937_64 rng(17);
    for (int t = 0; t < 10000; ++t) {
      const Index n = 2 + t % 9;
      const Eigen::VectorXd a = simplex(rng, n), b = simplex(rng, n);
      REQUIRE(std::abs(kl<double>(a, a)) < 1e-12);
      const double d = kl<double>(a, b);
      REQUIRE(d >= 0.0);
      REQUIRE(std::abs(jsd_sym<double>(a, b) - jsd_sym<double>(b, a)) < 1e-12);
      if (t % 100 == 0) {
        CHECK(std::abs(d - static_cast<double>(oracle::kl(as_ld(a), as_ld(b)))) < 1e-9 * std::max(1.0, d));
      }
    }
  }

  TEST_CASE("sim_distribution") {
    FifoBank<double> bank(4, 2);
    Eigen::MatrixXd rows(2, 2);
    rows << 1, 0, 0, 3;
    bank.enqueue(rows);
    Eigen::VectorXd z(2);
    z << 2, 0;
    const Eigen::VectorXd p = sim_distribution<double>(z, bank, 1.0);
    CHECK(p.sum() == doctest::Approx(1.0));
    CHECK(p(0) == doctest::Approx(std::exp(1.0) / (std::exp(1.0) + 1.0)));
    CHECK_THROWS_AS(sim_distribution<double>(z, FifoBank<double>(4, 2), 1.0), std::invalid_argument);
    CHECK_THROWS_AS(sim_distribution<double>(Eigen::VectorXd::Zero(2), bank, 1.0), std::invalid_argument);
  }

  TEST_CASE("distill_loss equals the mean per-sample symmetric divergence") {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> g;
    Eigen::MatrixXd zg(3, 4), zl(3, 4), bg(5, 4), bl(5, 4);
    for (auto* m : {&zg, &zl, &bg, &bl}) {
      for (Index i = 0; i < m->size(); ++i) (*m)(i) = g(rng);
    }
    FifoBank<double> bank_g(5, 4), bank_l(5, 4);
    bank_g.enqueue(bg);
    bank_l.enqueue(bl);
    double want = 0;
    for (Index i = 0; i < 3; ++i) {
      const Eigen::VectorXd a = sim_distribution<double>(zl.row(i).transpose(), bank_l, 0.07);
      const Eigen::VectorXd b = sim_distribution<double>(zg.row(i).transpose(), bank_g, 0.07);
      want += jsd_sym<double>(a, b);
    }
    CHECK(distill_loss<double>(zg, zl, bg, bl, 0.07) == doctest::Approx(want / 3).epsilon(1e-10));
    CHECK(distill_loss<double>(zg, zg, bg, bg, 0.07) == doctest::Approx(0.0));
    CHECK_THROWS_AS(distill_loss<double>(zg, zl, Eigen::MatrixXd(0, 4), bl, 0.07), std::invalid_argument);
  }

  TEST_CASE("pairwise bce") {
    Eigen::MatrixXd probs(2, 2);
    probs << 1, 0, 0, 1;
    PairwiseLabelMatrix s = PairwiseLabelMatrix::ones(2);
    s.labels(0, 1) = s.labels(1, 0) = 0;
    CHECK(pairwise_bce(s, probs) == doctest::Approx(-std::log(1 - kBceEps)).epsilon(1e-6));
    s.labels.setOnes();
    const double wrong = pairwise_bce(s, probs);
    CHECK(wrong == doctest::Approx(-0.5 * std::log(kBceEps) - 0.5 * std::log(1 - kBceEps)));
    CHECK_THROWS_AS(pairwise_bce(PairwiseLabelMatrix::ones(3), probs), std::invalid_argument);
    Eigen::MatrixXd bad = probs;
    bad(0, 0) = std::nan("");
    CHECK_THROWS_AS(pairwise_bce(s, bad), std::invalid_argument);
  }

  TEST_CASE("cross entropy") {
    Eigen::MatrixXd logits = Eigen::MatrixXd::Zero(2, 4);
    CHECK(cross_entropy<double>(logits, {0, 3}) == doctest::Approx(std::log(4.0)));
    CHECK_THROWS_AS(cross_entropy<double>(logits, {0, 4}), std::invalid_argument);
    CHECK_THROWS_AS(cross_entropy<double>(logits, {0}), std::invalid_argument);
    CHECK(ce_two_heads<double>(logits, logits, {1, 2}) == doctest::Approx(2 * std::log(4.0)));
  }

  TEST_CASE("mse consistency") {
    Eigen::MatrixXd p(2, 2), ph(2, 2);
    p << 1, 0, 0.5, 0.5;
    ph << 0, 1, 0.5, 0.5;
    CHECK(mse_head<double>(p, p) == 0.0);
    CHECK(mse_head<double>(p, ph) == doctest::Approx(1.0));
    CHECK_THROWS_AS(mse_head<double>(p, Eigen::MatrixXd::Zero(3, 2)), std::invalid_argument);
  }

  TEST_CASE("ramp-up weight") {
    const double lambda = 50, r = 150;
    CHECK(ramp_up(r, r, lambda) == lambda);
    CHECK(ramp_up(2 * r, r, lambda) == lambda);
    CHECK(std::abs(ramp_up(0, r, lambda) - lambda * std::exp(-5.0)) < 1e-9);
    double prev = -1;
    for (int i = 0; i <= 1000; ++i) {
      const double w = ramp_up(r * i / 1000.0, r, lambda);
      CHECK(w >= prev);
      prev = w;
    }
    CHECK_THROWS_AS(ramp_up(1, 0, lambda), std::invalid_argument);
  }

  TEST_CASE("total is the sum of the weighted components") {
    LossBreakdown l;
    l.bce_g = 0.5;
    l.bce_p = 0.25;
    l.jsd = 0.125;
    l.ce = 1.0;
    l.mse = 0.2;
    l.ramp_weight = 3.0;
    l.finalize();
    CHECK(l.total == doctest::Approx(0.5 + 0.25 + 0.125 + 1.0 + 0.6));
    l.jsd = std::nan("");
    CHECK_THROWS_WITH_AS(l.finalize(), doctest::Contains("jsd"), std::runtime_error);
  }

  TEST_CASE("analytic gradients match central differences") {
    for (std::uint64_t seed : {1u, 2u}) {
      const auto r = testing::run_gradcheck(false, seed);
      INFO(r.worst_param, "[", r.worst_index, "]");
      CHECK(r.losses.bce_g > 0);
      CHECK(r.losses.bce_p > 0);
      CHECK(r.losses.jsd > 0);
      CHECK(r.losses.ce > 0);
      CHECK(r.losses.mse > 0);
      CHECK(r.max_rel_error < 1e-4);
    }
    const auto ow = testing::run_gradcheck(false, 3, true);
    CHECK(ow.max_rel_error < 1e-4);
    const auto frozen = testing::run_gradcheck(true, 4);
    CHECK(frozen.max_rel_error < 1e-4);
  }
}
