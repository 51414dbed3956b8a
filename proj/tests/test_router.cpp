#include <algorithm>
#include <numeric>

#include "doctest.h"
#include "mass/router.hpp"
#include "json.hpp"
#include "support.hpp"

using namespace mass;
using mass::test::Rng;

namespace {

// Bundle whose routing layer "r" has right factor v (n x k).
TaskSubspaceBundle bundle_with(const std::string& id, const MatrixD& v) {
  TaskSubspaceBundle b;
  b.task_id = id;
  LayerFactors f;
  f.name = "r";
  f.v = v.cast<float>();
  f.u = Matrix(2, v.cols());
  for (std::size_t j = 0; j < v.cols() && j < 2; ++j) f.u(j, j) = 1.0f;
  f.s.assign(v.cols(), 1.0f);
  b.layers.push_back(f);
  return b;
}

// Columns [first, first + k) of the n x n identity.
MatrixD axes(std::size_t n, std::size_t first, std::size_t k) {
  MatrixD v(n, k);
  for (std::size_t j = 0; j < k; ++j) v(first + j, j) = 1.0;
  return v;
}

RouterConfig top1(double eta = 0.0) {
  RouterConfig cfg;
  cfg.layer = "r";
  cfg.eta = eta;
  cfg.top_k = 1;
  return cfg;
}

std::vector<TaskSubspaceBundle> planted(Rng& rng, std::size_t n, std::size_t tasks, std::size_t k) {
  const MatrixD q = test::random_orthonormal(rng, n, tasks * k);
  std::vector<TaskSubspaceBundle> out;
  for (std::size_t t = 0; t < tasks; ++t) {
    MatrixD v(n, k);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < k; ++j) v(r, j) = q(r, t * k + j);
    out.push_back(bundle_with("t" + std::to_string(t), v));
  }
  return out;
}

Vector in_span(Rng& rng, const TaskSubspaceBundle& b) {
  const MatrixD v = b.layers[0].v.cast<double>();
  const Vector c = test::random_vector(rng, v.cols());
  Vector z(v.rows(), 0.0);
  for (std::size_t r = 0; r < v.rows(); ++r)
    for (std::size_t j = 0; j < v.cols(); ++j) z[r] += v(r, j) * c[j];
  return z;
}

std::vector<std::size_t> argsort_desc(const Vector& w) {
  std::vector<std::size_t> idx(w.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return w[a] > w[b]; });
  return idx;
}

}  // namespace

TEST_SUITE("router") {
  TEST_CASE("residuals per task") {
    const std::vector<TaskSubspaceBundle> b{bundle_with("a", axes(3, 0, 1)), bundle_with("b", axes(3, 1, 1)),
                                            bundle_with("c", axes(3, 2, 1))};
    const Vector r = residuals(Vector{1.0, 2.0, 2.0}, b, "r");
    CHECK(r[0] == doctest::Approx(std::sqrt(8.0)).epsilon(1e-12));
    CHECK(r[1] == doctest::Approx(std::sqrt(5.0)).epsilon(1e-12));
    CHECK(r[2] == doctest::Approx(std::sqrt(5.0)).epsilon(1e-12));

    for (double x : residuals(Vector{0.0, 0.0, 0.0}, b, "r")) CHECK(x == 0.0);

    const Vector in_b = residuals(Vector{0.0, 4.0, 0.0}, b, "r");
    CHECK(in_b[1] == 0.0);
    CHECK(in_b[0] > 0.0);
    CHECK(in_b[2] > 0.0);

    CHECK_THROWS_AS(residuals(Vector{1.0, 2.0}, b, "r"), Error);
    try {
      residuals(Vector{1.0, 2.0, 2.0}, b, "missing");
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::unknown_layer);
    }
  }

  TEST_CASE("residuals never exceed the input norm") {
    Rng rng(1);
    const auto b = planted(rng, 12, 3, 3);
    for (int trial = 0; trial < 200; ++trial) {
      const Vector z = test::random_vector(rng, 12);
      for (double r : residuals(z, b, "r")) {
        CHECK(r >= 0.0);
        CHECK(r <= norm2(z) + 1e-12);
      }
    }
  }

  TEST_CASE("gate examples") {
    const Vector w{0.5, 0.3, 0.2};
    CHECK(gate(w, 0.25, 2) == std::vector<std::size_t>{0, 1});
    CHECK(gate(w, 0.25, 1) == std::vector<std::size_t>{0});
    CHECK(gate(Vector{0.4, 0.35, 0.25}, 0.6, 2) == std::vector<std::size_t>{0});
    CHECK(gate(Vector{0.3, 0.4, 0.3}, 0.0, 2) == std::vector<std::size_t>{1, 0});
    CHECK(gate(Vector{0.25, 0.25, 0.25, 0.25}, 0.0, 3) == std::vector<std::size_t>{0, 1, 2});
  }

  TEST_CASE("gated sets are never empty and never exceed top-k") {
    Rng rng(2);
    for (int trial = 0; trial < 500; ++trial) {
      const std::size_t t = test::uniform_size(rng, 1, 8);
      const Vector w = softmax_neg(test::random_vector(rng, t));
      const double eta = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
      const std::size_t k = test::uniform_size(rng, 1, t + 1);
      const auto omega = gate(w, eta, k);
      REQUIRE_FALSE(omega.empty());
      CHECK(omega.size() <= k);
      const bool fallback = std::none_of(w.begin(), w.end(), [&](double x) { return x >= eta; });
      if (fallback) {
        CHECK(omega.size() == 1);
        CHECK(omega[0] == argsort_desc(w)[0]);
      } else {
        for (std::size_t i : omega) CHECK(w[i] >= eta);
      }
    }
  }

  TEST_CASE("route picks the planted span and breaks ties to the lower index") {
    Rng rng(3);
    const auto b = planted(rng, 16, 4, 3);
    for (std::size_t t = 0; t < 4; ++t) {
      const RoutingDecision d = route(in_span(rng, b[t]), b, top1());
      CHECK(d.selected == std::vector<std::size_t>{t});
      CHECK(d.layer == "r");
      CHECK(std::accumulate(d.weights.begin(), d.weights.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-9));
    }

    const std::vector<TaskSubspaceBundle> same{bundle_with("a", axes(4, 0, 2)), bundle_with("b", axes(4, 0, 2))};
    const RoutingDecision d = route(Vector{1.0, 2.0, 3.0, 4.0}, same, top1());
    CHECK(d.weights[0] == d.weights[1]);
    CHECK(d.selected == std::vector<std::size_t>{0});
  }

  TEST_CASE("scaling the input preserves the ordering of the weights") {
    Rng rng(4);
    const auto b = planted(rng, 10, 3, 2);
    RouterConfig cfg = top1();
    cfg.top_k = 3;
    for (int trial = 0; trial < 100; ++trial) {
      const Vector z = test::random_vector(rng, 10);
      const double c = 0.1 + 10.0 * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
      Vector scaled = z;
      for (double& x : scaled) x *= c;
      const RoutingDecision a = route(z, b, cfg);
      const RoutingDecision s = route(scaled, b, cfg);
      for (std::size_t i = 0; i < 3; ++i) CHECK(s.residuals[i] == doctest::Approx(c * a.residuals[i]).epsilon(1e-9));
      CHECK(argsort_desc(a.weights) == argsort_desc(s.weights));
      CHECK(a.selected == s.selected);
    }
  }

  TEST_CASE("noisy in-span inputs are routed to their task") {
    Rng rng(5);
    const std::size_t n = 32;
    const auto b = planted(rng, n, 4, 4);
    std::size_t hits = 0;
    std::size_t total = 0;
    for (std::size_t t = 0; t < 4; ++t) {
      for (int s = 0; s < 1000; ++s) {
        Vector z = in_span(rng, b[t]);
        const double sigma = 0.1 * norm2(z) / std::sqrt(static_cast<double>(n));
        for (double& x : z) x += sigma * test::gaussian(rng);
        hits += route(z, b, top1()).selected[0] == t ? 1 : 0;
        ++total;
      }
    }
    CHECK(static_cast<double>(hits) / static_cast<double>(total) >= 0.95);
  }

  TEST_CASE("batched routing") {
    Rng rng(6);
    const auto b = planted(rng, 12, 3, 2);
    RouterConfig cfg = top1();
    const Vector z = test::random_vector(rng, 12);
    const RoutingDecision single = route(z, b, cfg);
    const std::vector<Vector> one{z};
    const RoutingDecision batch1 = batched_route(one, b, cfg);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(batch1.residuals[i] == doctest::Approx(single.residuals[i]).epsilon(1e-12));
      CHECK(batch1.weights[i] == doctest::Approx(single.weights[i]).epsilon(1e-12));
    }
    CHECK(batch1.selected == single.selected);

    const std::vector<Vector> copies(7, z);
    const RoutingDecision batch7 = batched_route(copies, b, cfg);
    for (std::size_t i = 0; i < 3; ++i) CHECK(batch7.residuals[i] == doctest::Approx(single.residuals[i]).epsilon(1e-12));
    CHECK(batch7.selected == single.selected);

    // 90% task 0, 10% task 1: the mean residual favours the majority.
    std::vector<Vector> mixed;
    for (int s = 0; s < 90; ++s) mixed.push_back(in_span(rng, b[0]));
    for (int s = 0; s < 10; ++s) mixed.push_back(in_span(rng, b[1]));
    const RoutingDecision d = batched_route(mixed, b, cfg);
    Vector mean(3, 0.0);
    for (const Vector& x : mixed) {
      const Vector r = residuals(x, b, "r");
      for (std::size_t i = 0; i < 3; ++i) mean[i] += r[i] / 100.0;
    }
    for (std::size_t i = 0; i < 3; ++i) CHECK(d.residuals[i] == doctest::Approx(mean[i]).epsilon(1e-12));
    CHECK(d.selected == std::vector<std::size_t>{0});

    CHECK_THROWS_AS(batched_route(std::vector<Vector>{}, b, cfg), Error);
  }

  TEST_CASE("orthogonalized source routes on disjoint blocks of one orthonormal basis") {
    Rng rng(7);
    std::vector<TaskSubspaceBundle> b;
    for (int t = 0; t < 3; ++t) b.push_back(bundle_with("t" + std::to_string(t), test::random_orthonormal(rng, 9, 2)));
    RouterConfig cfg = top1();
    cfg.source = SubspaceSource::orthogonalized;
    const ProjectionRouter router(b, cfg);
    std::vector<MatrixD> blocks;
    for (std::size_t t = 0; t < 3; ++t) blocks.push_back(router.subspace(t));
    CHECK(orthonormality_error(hconcat(blocks)) < 1e-9);
  }

  TEST_CASE("candidate subsets restrict the selection") {
    const std::vector<TaskSubspaceBundle> b{bundle_with("a", axes(3, 0, 1)), bundle_with("b", axes(3, 1, 1)),
                                            bundle_with("c", axes(3, 2, 1))};
    const ProjectionRouter router(b, top1(), {1, 2});
    const RoutingDecision d = router.route(Vector{5.0, 0.1, 0.0});
    CHECK(d.residuals.size() == 2);
    CHECK(d.selected == std::vector<std::size_t>{1});
    const auto j = nlohmann::json::parse(d.to_json());
    CHECK(j.at("candidates") == nlohmann::json::array({1, 2}));
    CHECK(j.at("layer") == "r");
  }

  TEST_CASE("config validation") {
    RouterConfig cfg = top1();
    cfg.eta = 1.5;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = top1();
    cfg.top_k = 0;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = top1();
    cfg.temperature = 0.0;
    CHECK_THROWS_AS(cfg.validate(), Error);
    CHECK(parse_subspace_source("orthogonalized") == SubspaceSource::orthogonalized);
    CHECK_THROWS_AS(parse_subspace_source("other"), Error);
  }

  TEST_CASE("nearest-neighbour baseline") {
    const std::vector<SupportSample> s{{{1.0, 0.0}, 0}, {{0.0, 1.0}, 1}};
    CHECK(nn_route(Vector{0.9, 0.1}, s) == 0);
    CHECK(nn_route(Vector{0.0, 1.0}, s) == 1);
    CHECK_THROWS_AS(nn_route(Vector{0.0, 0.0}, s), Error);
    const std::vector<SupportSample> tie{{{1.0, 0.0}, 3}, {{2.0, 0.0}, 1}};
    CHECK(nn_route(Vector{1.0, 0.0}, tie) == 3);
  }

  TEST_CASE("nearest-neighbour baseline matches an exhaustive scan") {
    Rng rng(8);
    std::vector<SupportSample> support;
    for (std::size_t t = 0; t < 4; ++t)
      for (int s = 0; s < 50; ++s) support.push_back({test::random_vector(rng, 8), t});
    for (int q = 0; q < 200; ++q) {
      const Vector z = test::random_vector(rng, 8);
      std::size_t best = 0;
      double best_cos = -2.0;
      for (std::size_t i = 0; i < support.size(); ++i) {
        const Vector& v = support[i].z;
        double dotp = 0.0, nz = 0.0, nv = 0.0;
        for (std::size_t k = 0; k < 8; ++k) {
          dotp += z[k] * v[k];
          nz += z[k] * z[k];
          nv += v[k] * v[k];
        }
        const double c = dotp / std::sqrt(nz * nv);
        if (c > best_cos) {
          best_cos = c;
          best = i;
        }
      }
      CHECK(nn_route(z, support) == support[best].task);
    }
  }
}
