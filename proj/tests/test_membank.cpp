#include <doctest.h>

#include <deque>
#include <random>

#include "ncd/membank.hpp"
#include "oracles.hpp"

using namespace ncd;

namespace {

Eigen::MatrixXd rows_of(std::initializer_list<double> values) {
  Eigen::MatrixXd m(static_cast<Index>(values.size()), 1);
  Index i = 0;
  for (double v : values) m(i++, 0) = v;
  return m;
}

}  // namespace

TEST_SUITE("membank") {
  TEST_CASE("new_bank") {
    const auto b = new_bank<float>(2048, 128);
    CHECK(b.count() == 0);
    CHECK(b.capacity() == 2048);
    CHECK(new_bank<double>(4, 8).capacity() == 4);
    CHECK_THROWS_AS(new_bank<double>(0, 8), std::invalid_argument);
    CHECK_THROWS_AS(new_bank<double>(4, 0), std::invalid_argument);
  }

  TEST_CASE("enqueue evicts the oldest rows") {
    auto b = new_bank<double>(4, 1);
    b.enqueue(rows_of({1, 2}));
    CHECK(b.count() == 2);
    CHECK(b.snapshot() == rows_of({1, 2}));
    b.enqueue(rows_of({3, 4}));
    b.enqueue(rows_of({5, 6}));
    CHECK(b.snapshot() == rows_of({3, 4, 5, 6}));
    CHECK_THROWS_AS(b.enqueue(rows_of({1, 2, 3, 4, 5})), std::invalid_argument);
    CHECK_THROWS_AS(b.enqueue(Eigen::MatrixXd::Zero(1, 2)), std::invalid_argument);
  }

  TEST_CASE("count after n enqueues is min(n*b, capacity)") {
    for (Index cap : {1, 3, 8, 17}) {
      for (Index bsz = 1; bsz <= cap; bsz += 2) {
        auto b = new_bank<double>(cap, 2);
        for (Index n = 1; n <= 20; ++n) {
          b.enqueue(Eigen::MatrixXd::Constant(bsz, 2, static_cast<double>(n)));
          REQUIRE(b.count() == std::min(n * bsz, cap));
        }
      }
    }
  }

  TEST_CASE("FIFO invariant under seeded random enqueue sequences") {
    std::mt19937_64 rng(9);
    std::uniform_int_distribution<Index> cap_d(1, 64);
    long ops = 0;
    for (int trial = 0; trial < 40 && ops < 10000; ++trial) {
      const Index cap = cap_d(rng);
      auto bank = new_bank<double>(cap, 3);
      std::deque<Eigen::RowVector3d> model;
      std::uniform_int_distribution<Index> bs(1, cap);
      for (int op = 0; op < 250; ++op, ++ops) {
        const Index n = bs(rng);
        Eigen::MatrixXd batch(n, 3);
        for (Index r = 0; r < n; ++r) {
          batch.row(r) << static_cast<double>(ops), static_cast<double>(r), static_cast<double>(trial);
          model.push_back(batch.row(r));
        }
        bank.enqueue(batch);
        while (static_cast<Index>(model.size()) > cap) model.pop_front();
        const Eigen::MatrixXd snap = bank.snapshot();
        REQUIRE(snap.rows() == static_cast<Index>(model.size()));
        for (Index r = 0; r < snap.rows(); ++r) REQUIRE(snap.row(r) == model[static_cast<std::size_t>(r)]);
      }
    }
  }

  TEST_CASE("stored rows are copies") {
    auto b = new_bank<double>(4, 2);
    Eigen::MatrixXd src = Eigen::MatrixXd::Ones(2, 2);
    b.enqueue(src);
    const Eigen::MatrixXd snap = b.snapshot();
    src.setConstant(7.0);
    CHECK(b.snapshot() == snap);
  }

  TEST_CASE("sample_part") {
    std::mt19937_64 rng(1);
    Eigen::MatrixXd single(3, 1);
    single << 1, 2, 3;
    for (int i = 0; i < 10; ++i) CHECK(sample_part(single, rng) == single.col(0));

    Eigen::MatrixXd map(2, 4);
    map << 0, 1, 2, 3, 10, 11, 12, 13;
    std::array<int, 4> counts{};
    for (int i = 0; i < 10000; ++i) {
      const Eigen::VectorXd p = sample_part(map, rng);
      const int loc = static_cast<int>(p(0));
      REQUIRE(p == map.col(loc));
      ++counts[static_cast<std::size_t>(loc)];
    }
    for (int c : counts) CHECK(std::abs(c / 10000.0 - 0.25) <= 0.02);
    CHECK_THROWS_AS(sample_part(Eigen::MatrixXd(2, 0), rng), std::invalid_argument);
  }

  TEST_CASE("similarity_profile examples") {
    auto dict = new_bank<double>(8, 3);
    Eigen::MatrixXd rows = Eigen::MatrixXd::Identity(3, 3);
    dict.enqueue(rows);
    Eigen::MatrixXd q(3, 1);
    q << 2, 0, 0;
    const Eigen::VectorXd o = similarity_profile(q, dict);
    CHECK(o(0) == doctest::Approx(1.0));
    CHECK(o(1) == 0.0);
    CHECK(o(2) == 0.0);

    Eigen::MatrixXd sym(3, 2);
    sym << 1, -1, 2, -2, 0.5, -0.5;
    CHECK(similarity_profile(sym, dict).cwiseAbs().maxCoeff() < 1e-15);

    auto empty = new_bank<double>(4, 3);
    CHECK_THROWS_AS(similarity_profile(q, empty), std::invalid_argument);
    Eigen::MatrixXd zero_col = Eigen::MatrixXd::Zero(3, 2);
    zero_col(0, 0) = 1;
    CHECK_THROWS_AS(similarity_profile(zero_col, dict), std::invalid_argument);
    auto zero_row = new_bank<double>(4, 3);
    zero_row.enqueue(Eigen::MatrixXd::Zero(1, 3));
    CHECK_THROWS_AS(similarity_profile(q, zero_row), std::invalid_argument);
  }

  TEST_CASE("similarity_profile matches the per-location loop oracle") {
    std::mt19937_64 rng(42);
    std::normal_distribution<double> g;
    for (int t = 0; t < 20; ++t) {
      Eigen::MatrixXd map(8, 4), rows(6, 8);
      for (Index i = 0; i < map.size(); ++i) map(i) = g(rng);
      for (Index i = 0; i < rows.size(); ++i) rows(i) = g(rng);
      auto dict = new_bank<double>(6, 8);
      dict.enqueue(rows);
      const Eigen::VectorXd got = similarity_profile(map, dict);
      const Eigen::VectorXd want = oracle::similarity_profile(map, rows);
      CHECK((got - want).cwiseAbs().maxCoeff() < 1e-12);
      CHECK(got.cwiseAbs().maxCoeff() <= 1.0 + 1e-12);
    }
  }

  TEST_CASE("similarity_profile invariances") {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> g;
    std::uniform_real_distribution<double> pos(0.1, 5.0);
    Eigen::MatrixXd map(5, 6), rows(7, 5);
    for (Index i = 0; i < map.size(); ++i) map(i) = g(rng);
    for (Index i = 0; i < rows.size(); ++i) rows(i) = g(rng);
    auto make = [](const Eigen::MatrixXd& r) {
      auto b = new_bank<double>(r.rows(), r.cols());
      b.enqueue(r);
      return b;
    };
    const Eigen::VectorXd base = similarity_profile(map, make(rows));

    Eigen::MatrixXd scaled_map = map, scaled_rows = rows;
    for (Index c = 0; c < map.cols(); ++c) scaled_map.col(c) *= pos(rng);
    for (Index r = 0; r < rows.rows(); ++r) scaled_rows.row(r) *= pos(rng);
    CHECK((similarity_profile(scaled_map, make(scaled_rows)) - base).cwiseAbs().maxCoeff() < 1e-12);

    std::vector<Index> perm(7);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Eigen::MatrixXd permuted(7, 5);
    for (Index r = 0; r < 7; ++r) permuted.row(r) = rows.row(perm[static_cast<std::size_t>(r)]);
    const Eigen::VectorXd o = similarity_profile(map, make(permuted));
    for (Index r = 0; r < 7; ++r) CHECK(o(r) == doctest::Approx(base(perm[static_cast<std::size_t>(r)])).epsilon(1e-12));
  }

  TEST_CASE("zero-norm policy used during training") {
    Eigen::MatrixXd map = Eigen::MatrixXd::Zero(3, 2);
    map(1, 0) = 1;
    Eigen::MatrixXd rows = Eigen::MatrixXd::Identity(3, 3);
    rows.row(2).setZero();
    const Eigen::MatrixXd unit = unit_dictionary(rows, ZeroNorm::kZero);
    const Eigen::VectorXd o = similarity_profile_unit(map, unit, ZeroNorm::kZero);
    CHECK(o(0) == 0.0);
    CHECK(o(1) == doctest::Approx(0.5));
    CHECK(o(2) == 0.0);
    CHECK_THROWS_AS(unit_dictionary(rows), std::invalid_argument);
  }
}
