#include <catch2/catch_amalgamated.hpp>

#include <etm/estimator.hpp>
#include <etm/inference.hpp>
#include <etm/model.hpp>
#include <etm/sampler.hpp>

using namespace etm;

namespace {

Matrix sym2(double a, double b, double c) {
  Matrix m(2, 2);
  m << a, b, b, c;
  return m;
}

} // namespace

TEST_CASE("chi-square survival function") {
  CHECK(chi_square_sf(0.0, 1) == 1.0);
  CHECK(chi_square_sf(0.0, 5) == 1.0);
  CHECK(chi_square_sf(3.841459, 1) == Catch::Approx(0.05).margin(1e-4));
  // m=2 closed form: exp(-w/2)
  CHECK(chi_square_sf(5.991465, 2) == Catch::Approx(0.05).margin(1e-4));
  for (double w : {0.1, 1.0, 4.0, 20.0})
    CHECK(chi_square_sf(w, 2) == Catch::Approx(std::exp(-w / 2.0)).epsilon(1e-10));
  CHECK_THROWS_AS(chi_square_sf(-1.0, 1), Error);
  CHECK_THROWS_AS(chi_square_sf(1.0, 0), Error);
}

TEST_CASE("empirical fisher basics") {
  TraceModel g1 = gaussian_model(1);
  Matrix rows(2, 1);
  rows << 0, 2;
  FisherTensor f = empirical_fisher(g1, Dataset::validated(rows, g1));
  // T values {0, 2}: two-point variance with 1/(n-1) is 2
  CHECK(f.info(0, 0) == Catch::Approx(2.0).epsilon(1e-12));
  CHECK(f.n == 2);

  Matrix same(3, 1);
  same << 1, 1, 1;
  FisherTensor z = empirical_fisher(g1, Dataset::validated(same, g1));
  CHECK(z.info.cwiseAbs().maxCoeff() == 0.0);

  Matrix one(1, 1);
  one << 1;
  CHECK_THROWS_AS(empirical_fisher(g1, Dataset::validated(one, g1)), Error);
}

TEST_CASE("empirical fisher converges to the Isserlis closed form") {
  TraceModel m = gaussian_model(2);
  Matrix truth = sym2(1.0, 0.3, 1.2);
  SamplerConfig cfg;
  cfg.seed = 41;
  const int n = 50000;
  Dataset data{sample(m, truth, n, cfg)};
  FisherTensor emp = empirical_fisher(m, data);
  FisherTensor mod = model_fisher(m, truth, EvalStrategy::closed_form());
  // entrywise SE of a covariance estimate is O(sqrt(var/n)); use a crude
  // bound of 3 * (|entry| + 1) / sqrt(n)
  for (int a = 0; a < emp.info.rows(); ++a)
    for (int b = 0; b < emp.info.cols(); ++b)
      CHECK(std::abs(emp.info(a, b) - mod.info(a, b)) <
            3.0 * (std::abs(mod.info(a, b)) + 1.0) / std::sqrt(double(n)));
}

TEST_CASE("model fisher under diagonal truth is cross-coordinate free") {
  TraceModel m = poisson_sqrt_model(3);
  Matrix diag = Matrix::Identity(3, 3) * 0.7;
  FisherTensor f = model_fisher(m, diag, EvalStrategy::truncated_series());
  for (int a = 0; a < f.info.rows(); ++a)
    for (int b = 0; b < f.info.cols(); ++b) {
      const auto& [i, j] = m.space.free_coords[a];
      const auto& [k, l] = m.space.free_coords[b];
      bool shares = i == k || i == l || j == k || j == l;
      if (!shares) CHECK(std::abs(f.info(a, b)) < 1e-10);
    }
}

TEST_CASE("model fisher agrees with simulation on ising") {
  TraceModel m = ising_model(2);
  Matrix truth = sym2(0.2, -0.4, 0.1);
  FisherTensor mod = model_fisher(m, truth, EvalStrategy::enumerate_states());
  SamplerConfig cfg;
  cfg.seed = 43;
  const int n = 200000;
  Dataset data{sample(m, truth, n, cfg)};
  FisherTensor emp = empirical_fisher(m, data);
  for (int a = 0; a < mod.info.rows(); ++a)
    for (int b = 0; b < mod.info.cols(); ++b)
      CHECK(std::abs(emp.info(a, b) - mod.info(a, b)) <
            4.0 * (std::abs(mod.info(a, b)) + 0.5) / std::sqrt(double(n)));
}

TEST_CASE("wald statistic arithmetic") {
  TraceModel m = gaussian_model(1);
  FitResult fit;
  fit.m_hat = Matrix::Identity(1, 1) * 0.3;

  FisherTensor fisher;
  fisher.info = Matrix::Identity(1, 1);
  fisher.n = 100;
  fisher.condition_number = 1.0;

  // lambda(M) = M_11 = 0.3 with V = I^{-1}/n = 0.01 -> W = 9
  Restriction r = Restriction::single_entry(m.space, 0, 0);
  TestResult t = wald_statistic(fit, fisher, r);
  CHECK(t.statistic == Catch::Approx(9.0).epsilon(1e-12));
  CHECK(t.dof == 1);
  CHECK(t.p_value == Catch::Approx(0.0027).margin(2e-4));
}

TEST_CASE("wald statistic is invariant under restriction scaling") {
  TraceModel m = gaussian_model(2);
  FitResult fit;
  fit.m_hat = sym2(1.0, 0.25, 1.3);
  FisherTensor fisher;
  fisher.info = Matrix::Identity(3, 3) * 2.0;
  fisher.info(0, 1) = fisher.info(1, 0) = 0.3;
  fisher.n = 50;
  fisher.condition_number = 2.0;

  Restriction base = Restriction::single_entry(m.space, 0, 1);
  Restriction scaled = base;
  const double c = 7.0;
  scaled.value = [base, c](const ParameterMatrix& mm) { return (c * base.value(mm)).eval(); };
  scaled.jacobian = [base, c](const ParameterMatrix& mm) { return (c * base.jacobian(mm)).eval(); };
  TestResult a = wald_statistic(fit, fisher, base);
  TestResult b = wald_statistic(fit, fisher, scaled);
  CHECK(a.statistic == Catch::Approx(b.statistic).epsilon(1e-12));
  CHECK(a.p_value == Catch::Approx(b.p_value).epsilon(1e-12));
}

TEST_CASE("null restriction value gives a unit p-value") {
  TraceModel m = gaussian_model(2);
  FitResult fit;
  fit.m_hat = sym2(1.0, 0.0, 1.0);
  FisherTensor fisher;
  fisher.info = Matrix::Identity(3, 3);
  fisher.n = 10;
  fisher.condition_number = 1.0;
  TestResult t = edge_test(m, fit, fisher, 0, 1);
  CHECK(t.statistic == 0.0);
  CHECK(t.p_value == 1.0);
}

TEST_CASE("simplified edge statistic matches the literal formula") {
  TraceModel m = ising_model(2);
  FitResult fit;
  fit.m_hat = sym2(0.0, 0.5, 0.0);
  FisherTensor fisher;
  fisher.info = Matrix::Zero(3, 3);
  // entry (i,j,i,j) = info(k,k)/mult^2; want 4 per sample
  int k = m.space.free_index(0, 1);
  fisher.info(k, k) = 16.0;
  fisher.info(0, 0) = fisher.info(2, 2) = 1.0;
  fisher.n = 1;
  fisher.condition_number = 16.0;
  TestResult t = edge_test(m, fit, fisher, 0, 1, /*simplified=*/true);
  CHECK(t.statistic == Catch::Approx(1.0).epsilon(1e-12)); // 4 * 0.25
  CHECK(t.p_value == Catch::Approx(0.3173).margin(1e-3));
}

TEST_CASE("masked entries are not testable") {
  TraceModel m = mixture_gaussian_binary_model(3);
  FitResult fit;
  fit.m_hat = Matrix::Identity(4, 4);
  FisherTensor fisher;
  fisher.info = Matrix::Identity(m.space.dim(), m.space.dim());
  fisher.n = 10;
  fisher.condition_number = 1.0;
  CHECK_THROWS_AS(edge_test(m, fit, fisher, 0, 2), Error); // cross-block
}

TEST_CASE("holm step-down hand example") {
  // p-values (1,2):0.01, (1,3):0.04, (2,3):0.03 at alpha 0.05:
  // 0.01 <= 0.05/3 rejects; 0.03 > 0.05/2 stops.
  auto reject = holm_rejections({0.01, 0.04, 0.03}, 0.05);
  CHECK(reject[0]);
  CHECK_FALSE(reject[1]);
  CHECK_FALSE(reject[2]);

  auto none = holm_rejections({1.0, 1.0, 1.0}, 0.05);
  CHECK_FALSE(none[0]);
  CHECK_FALSE(none[1]);
  CHECK_FALSE(none[2]);
}

TEST_CASE("confidence subgraph on simulated coupled data") {
  TraceModel m = ising_model(3);
  Matrix truth = Matrix::Zero(3, 3);
  truth(0, 1) = truth(1, 0) = -1.2; // strong edge
  SamplerConfig cfg;
  cfg.seed = 47;
  Dataset data{sample(m, truth, 3000, cfg)};
  FitResult fit = fit_mle(m, data, FitOptions(EvalStrategy::enumerate_states()));
  REQUIRE(fit.converged);
  FisherTensor fisher = empirical_fisher(m, data);
  SubgraphResult sg = confidence_subgraph(m, fit, fisher, 0.05);
  CHECK(sg.graph.has_edge(0, 1));
  CHECK(sg.p_values.size() == 3);
  for (auto& [pair, pv] : sg.p_values) {
    CHECK(pv >= 0.0);
    CHECK(pv <= 1.0);
  }

  // Holm monotonicity: smaller alpha keeps a subset of edges
  SubgraphResult tight = confidence_subgraph(m, fit, fisher, 0.01);
  for (auto [i, j] : tight.graph.edge_pairs()) CHECK(sg.graph.has_edge(i, j));
}

TEST_CASE("singular fisher is rejected") {
  TraceModel m = gaussian_model(2);
  FitResult fit;
  fit.m_hat = sym2(1.0, 0.2, 1.0);
  FisherTensor fisher;
  fisher.info = Matrix::Zero(3, 3); // rank 0
  fisher.n = 10;
  fisher.condition_number = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(
      wald_statistic(fit, fisher, Restriction::single_entry(m.space, 0, 1)),
      Error);
}
