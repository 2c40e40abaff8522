#include <catch2/catch_amalgamated.hpp>

#include <random>

#include <etm/model.hpp>
#include <etm/normalizer.hpp>

using namespace etm;

namespace {

Matrix sym2(double a, double b, double c) {
  Matrix m(2, 2);
  m << a, b, b, c;
  return m;
}

} // namespace

TEST_CASE("closed-form Gaussian log-normalizer") {
  TraceModel m = gaussian_model(1);
  Matrix one = Matrix::Identity(1, 1);
  CHECK(log_normalizer(m, one, EvalStrategy::closed_form()) ==
        Catch::Approx(0.5 * std::log(2.0 * M_PI)).epsilon(1e-12));
}

TEST_CASE("ising enumeration at zero coupling") {
  TraceModel m = ising_model(2);
  CHECK(log_normalizer(m, Matrix::Zero(2, 2), EvalStrategy::enumerate_states()) ==
        Catch::Approx(std::log(4.0)).epsilon(1e-14));
}

TEST_CASE("poisson series at the null parameter") {
  TraceModel m = poisson_sqrt_model(1);
  // sum_x 1/x! = e, so gamma = 1
  CHECK(log_normalizer(m, Matrix::Zero(1, 1), EvalStrategy::truncated_series()) ==
        Catch::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("quadrature one-dimensional baselines") {
  TraceModel expo = exponential_sqrt_model(1);
  Matrix two = 2.0 * Matrix::Identity(1, 1);
  CHECK(log_normalizer(expo, two, EvalStrategy::quadrature()) ==
        Catch::Approx(-std::log(2.0)).epsilon(1e-10));

  TraceModel lap = laplace_sqrt_model(1);
  CHECK(log_normalizer(lap, two, EvalStrategy::quadrature()) ==
        Catch::Approx(0.0).margin(1e-10));
}

TEST_CASE("first moments on one-dimensional families") {
  TraceModel ising = ising_model(1);
  MomentBundle b =
      moments(ising, Matrix::Zero(1, 1), EvalStrategy::enumerate_states());
  CHECK(b.mean_stat(0, 0) == Catch::Approx(0.5).epsilon(1e-14));

  TraceModel pois = poisson_sqrt_model(1);
  MomentBundle p0 =
      moments(pois, Matrix::Zero(1, 1), EvalStrategy::truncated_series());
  CHECK(p0.mean_stat(0, 0) == Catch::Approx(1.0).epsilon(1e-12));
  Matrix half = 0.5 * Matrix::Identity(1, 1);
  MomentBundle ph = moments(pois, half, EvalStrategy::truncated_series());
  // Poisson with parameter e^{-M_11}
  CHECK(ph.mean_stat(0, 0) == Catch::Approx(std::exp(-0.5)).epsilon(1e-9));
}

TEST_CASE("Gaussian second moments match the Isserlis expansion") {
  TraceModel m = gaussian_model(2);
  Matrix mat = sym2(1.2, -0.3, 0.9);
  MomentBundle b = moments(m, mat, EvalStrategy::closed_form(), 2);
  Matrix sigma = mat.inverse();
  // Cov(x_i x_j / 2, x_k x_l / 2) = (S_ik S_jl + S_il S_jk) / 4
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 2; ++k)
        for (int l = 0; l < 2; ++l) {
          double want =
              (sigma(i, k) * sigma(j, l) + sigma(i, l) * sigma(j, k)) / 4.0;
          CHECK(b.cov_entry(m.space, i, j, k, l) ==
                Catch::Approx(want).margin(1e-12));
        }
  // spec example: identity M, Var(x^2/2) = 1/2
  MomentBundle id = moments(m, Matrix::Identity(2, 2), EvalStrategy::closed_form(), 2);
  CHECK(id.cov_entry(m.space, 0, 0, 0, 0) == Catch::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("strategy agreement: enumeration vs monte carlo on ising") {
  TraceModel m = ising_model(3);
  Matrix mat = Matrix::Zero(3, 3);
  mat(0, 1) = mat(1, 0) = -0.4;
  mat(1, 2) = mat(2, 1) = 0.3;
  mat(0, 0) = 0.2;
  MomentBundle exact = moments(m, mat, EvalStrategy::enumerate_states());
  MomentBundle mc = moments(m, mat, EvalStrategy::monte_carlo(1000000, 7));
  CHECK(std::abs(mc.log_norm - exact.log_norm) < 3.0 * mc.error_estimate);
}

TEST_CASE("strategy agreement: quadrature node count on exponential") {
  TraceModel m = exponential_sqrt_model(2);
  Matrix mat = sym2(1.0, 0.3, 1.5);
  double g32 = log_normalizer(m, mat, EvalStrategy::quadrature(32));
  double g64 = log_normalizer(m, mat, EvalStrategy::quadrature(64));
  CHECK(std::abs(g32 - g64) < 1e-8);
}

TEST_CASE("log-normalizer convexity of the partition function") {
  TraceModel m = ising_model(2);
  Matrix a = sym2(0.3, -0.4, 0.2), b = sym2(-0.1, 0.5, 0.4);
  EvalStrategy st = EvalStrategy::enumerate_states();
  double ga = log_normalizer(m, a, st), gb = log_normalizer(m, b, st);
  for (double alpha : {0.2, 0.5, 0.8}) {
    Matrix mid = alpha * a + (1.0 - alpha) * b;
    double lhs = log_normalizer(m, mid, st);
    double rhs = std::log(alpha * std::exp(ga) + (1.0 - alpha) * std::exp(gb));
    CHECK(lhs <= rhs + 1e-12);
  }
}

TEST_CASE("mean_stat equals the finite-difference gradient of gamma") {
  struct Case {
    TraceModel model;
    Matrix mat;
    EvalStrategy st;
  };
  std::vector<Case> cases;
  cases.push_back({ising_model(2), sym2(0.3, -0.4, 0.2),
                   EvalStrategy::enumerate_states()});
  cases.push_back({poisson_sqrt_model(2), sym2(0.5, 0.2, 0.8),
                   EvalStrategy::truncated_series()});
  cases.push_back({exponential_sqrt_model(2), sym2(1.2, 0.3, 1.0),
                   EvalStrategy::quadrature()});

  const double h = 1e-5;
  for (auto& c : cases) {
    MomentBundle b = moments(c.model, c.mat, c.st);
    for (int k = 0; k < c.model.space.dim(); ++k) {
      const auto& [i, j] = c.model.space.free_coords[k];
      Vector theta = c.model.space.to_free(c.mat);
      Vector tp = theta, tm = theta;
      tp[k] += h;
      tm[k] -= h;
      double gp = log_normalizer(c.model, c.model.space.from_free(tp), c.st);
      double gm = log_normalizer(c.model, c.model.space.from_free(tm), c.st);
      double fd = (gp - gm) / (2.0 * h);
      // d gamma / d theta_k = -mult_k E[T_ij]
      double analytic = -c.model.space.multiplicity(k) * b.mean_stat(i, j);
      CHECK(std::abs(fd - analytic) <=
            1e-5 * std::max(1.0, std::abs(analytic)));
    }
  }
}

TEST_CASE("covariance over free coordinates is PSD") {
  TraceModel m = poisson_sqrt_model(2);
  MomentBundle b =
      moments(m, sym2(0.4, -0.3, 0.7), EvalStrategy::truncated_series(), 2);
  Eigen::SelfAdjointEigenSolver<Matrix> es(*b.cov_free, Eigen::EigenvaluesOnly);
  CHECK(es.eigenvalues().minCoeff() >= -1e-10);
}

TEST_CASE("moments are consistent across strategies on a mixed family") {
  TraceModel m = composite_sqrt_model(1, 1);
  Matrix mat = sym2(0.8, 0.2, 1.1);
  MomentBundle q = moments(m, mat, EvalStrategy::quadrature(), 2);
  MomentBundle mc = moments(m, mat, EvalStrategy::monte_carlo(400000, 11), 2);
  CHECK(std::abs(q.log_norm - mc.log_norm) < 4.0 * mc.error_estimate + 1e-6);
  CHECK((q.mean_stat - mc.mean_stat).cwiseAbs().maxCoeff() < 0.02);
}

TEST_CASE("mixture closed form against direct block arithmetic") {
  TraceModel m = mixture_gaussian_binary_model(3);
  Matrix mat = Matrix::Zero(4, 4);
  mat.topLeftCorner(2, 2) = sym2(1.0, 0.2, 1.4);
  mat.bottomRightCorner(2, 2) = sym2(0.7, -0.1, 0.9);
  MomentBundle b = moments(m, mat, EvalStrategy::closed_form(), 2);
  auto block_gamma = [](const Matrix& blk) {
    return 0.5 * (2.0 * std::log(2.0 * M_PI) - std::log(blk.determinant()));
  };
  double g1 = block_gamma(mat.topLeftCorner(2, 2));
  double g2 = block_gamma(mat.bottomRightCorner(2, 2));
  double want = std::log(std::exp(g1) + std::exp(g2));
  CHECK(b.log_norm == Catch::Approx(want).epsilon(1e-12));
  // E[T first block] = P(z=0) * Sigma1 / 2
  double w1 = std::exp(g1 - want);
  Matrix s1 = mat.topLeftCorner(2, 2).inverse();
  CHECK(b.mean_stat(0, 0) == Catch::Approx(w1 * s1(0, 0) / 2.0).epsilon(1e-10));
  CHECK(b.mean_stat(0, 2) == 0.0); // cross-block entries are masked
}

TEST_CASE("integrability verdicts") {
  TraceModel pois = poisson_sqrt_model(2);
  CHECK(check_integrability(pois, sym2(1.0, 0.5, 1.0)) == Integrability::finite);

  TraceModel expo = exponential_sqrt_model(2);
  Matrix barely = sym2(1.0, 1.05, 1.0); // min eigenvalue -0.05
  CHECK(check_integrability(expo, barely) == Integrability::unknown);

  // product-interaction diagnostic: a_12 = 0.1 > 0 means M_12 = -0.1
  TraceModel naive = naive_poisson_model(2);
  CHECK(check_integrability(naive, sym2(1.0, -0.1, 1.0)) ==
        Integrability::infinite);
  CHECK(check_integrability(naive, sym2(1.0, 0.2, 1.0)) ==
        Integrability::finite);
}

TEST_CASE("series divergence raises NonExistence") {
  TraceModel naive = naive_poisson_model(2);
  CHECK_THROWS_AS(
      log_normalizer(naive, sym2(1.0, -0.1, 1.0), EvalStrategy::truncated_series()),
      NonExistence);
  // and the supported family handles the same off-diagonal sign fine
  TraceModel pois = poisson_sqrt_model(2);
  CHECK(std::isfinite(
      log_normalizer(pois, sym2(1.0, -0.5, 1.0), EvalStrategy::truncated_series())));
}

TEST_CASE("incompatible strategies are rejected") {
  TraceModel ising = ising_model(2);
  CHECK_THROWS_AS(log_normalizer(ising, Matrix::Zero(2, 2),
                                 EvalStrategy::closed_form()),
                  NormalizerFailure);
  CHECK_THROWS_AS(log_normalizer(ising, Matrix::Zero(2, 2),
                                 EvalStrategy::quadrature()),
                  NormalizerFailure);
  TraceModel expo = exponential_sqrt_model(2);
  CHECK_THROWS_AS(log_normalizer(expo, Matrix::Identity(2, 2),
                                 EvalStrategy::enumerate_states()),
                  NormalizerFailure);
}

TEST_CASE("invalid parameters are rejected before evaluation") {
  TraceModel gauss = gaussian_model(2);
  Matrix indef = sym2(1.0, 2.0, 1.0);
  CHECK_THROWS_AS(log_normalizer(gauss, indef, EvalStrategy::closed_form()),
                  NormalizerFailure);
}

TEST_CASE("multinomial enumeration respects the one-hot constraint") {
  TraceModel m = multinomial_ising_model(2, 3);
  // at M = 0 every admissible state has weight 1; 3 states per block
  double g = log_normalizer(m, Matrix::Zero(4, 4), EvalStrategy::enumerate_states());
  CHECK(g == Catch::Approx(std::log(9.0)).epsilon(1e-13));
}
