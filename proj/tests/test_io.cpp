#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include <etm/cli.hpp>
#include <etm/estimator.hpp>
#include <etm/io.hpp>
#include <etm/sampler.hpp>

using namespace etm;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("etm_test_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const {
    return (path / name).string();
  }
};

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  out << content;
}

} // namespace

TEST_CASE("csv loading and validation") {
  TempDir tmp;
  TraceModel gauss = gaussian_model(2);
  write_file(tmp.file("g.csv"), "1,0\n0,1\n");
  Dataset d = load_csv(tmp.file("g.csv"), gauss);
  CHECK(d.n() == 2);
  CHECK(d.rows(0, 0) == 1.0);

  // optional header
  write_file(tmp.file("h.csv"), "a,b\n1,0\n");
  CHECK(load_csv(tmp.file("h.csv"), gauss).n() == 1);

  TraceModel ising = ising_model(2);
  write_file(tmp.file("bad.csv"), "0.5,1\n");
  CHECK_THROWS_WITH(load_csv(tmp.file("bad.csv"), ising),
                    Catch::Matchers::ContainsSubstring("column 1") &&
                        Catch::Matchers::ContainsSubstring("row 1"));

  TraceModel pois = poisson_sqrt_model(2);
  write_file(tmp.file("p.csv"), "4,1\n");
  Dataset dp = load_csv(tmp.file("p.csv"), pois);
  CHECK(dp.rows(0, 0) == 4.0);

  write_file(tmp.file("wide.csv"), "1,0,1\n");
  CHECK_THROWS_WITH(load_csv(tmp.file("wide.csv"), gauss),
                    Catch::Matchers::ContainsSubstring("columns"));

  write_file(tmp.file("junk.csv"), "1,0\nx,1\n");
  CHECK_THROWS_WITH(load_csv(tmp.file("junk.csv"), gauss),
                    Catch::Matchers::ContainsSubstring("row 2"));
}

TEST_CASE("csv round trip preserves samples exactly") {
  TempDir tmp;
  TraceModel m = gaussian_model(2);
  SamplerConfig cfg;
  cfg.seed = 3;
  Matrix draws = sample(m, Matrix::Identity(2, 2), 100, cfg);
  save_csv(draws, tmp.file("d.csv"));
  Dataset back = load_csv(tmp.file("d.csv"), m);
  REQUIRE(back.n() == 100);
  CHECK(back.rows == draws);
}

TEST_CASE("matrix json round trip") {
  Matrix m(2, 2);
  m << 1.25, -0.3333333333333333, -0.3333333333333333, 2.0;
  json j = matrix_to_json(m);
  CHECK(j["q"] == 2);
  Matrix back = matrix_from_json(j);
  CHECK(back == m);
  CHECK_THROWS_AS(matrix_from_json(json{{"q", 2}, {"rows", {{1.0, 2.0}}}}), Error);
}

TEST_CASE("model json covers every family") {
  CHECK(model_from_json({{"family", "gaussian"}, {"p", 3}}).q == 3);
  CHECK(model_from_json({{"family", "ising"}, {"p", 2}}).family == Family::ising);
  CHECK(model_from_json({{"family", "multinomial_ising"}, {"l", 2}, {"m", 3}}).q == 4);
  CHECK(model_from_json({{"family", "poisson_sqrt"}, {"p", 2}}).sqrt_interactions);
  CHECK(model_from_json({{"family", "exponential_sqrt"}, {"p", 2}}).space.require_pd);
  CHECK(model_from_json({{"family", "laplace_sqrt"}, {"p", 2}}).p == 2);
  CHECK(model_from_json({{"family", "composite_sqrt"}, {"p1", 1}, {"p2", 2}}).q == 3);
  CHECK(model_from_json({{"family", "mixture_gaussian_binary"}, {"p", 3}}).q == 4);
  CHECK(model_from_json({{"family", "poisson_naive"}, {"p", 2}}).family ==
        Family::poisson_naive);

  json npn = {{"family", "nonparanormal"},
              {"p", 2},
              {"transforms",
               {{{"type", "affine"}, {"a", 2.0}, {"b", 1.0}}, {{"type", "identity"}}}}};
  TraceModel nm = model_from_json(npn);
  CHECK(nm.transforms[0].g(1.0) == 3.0);

  json rp = {{"family", "restricted_pairwise"},
             {"p", 3},
             {"active_set", {{1, 3}}},
             {"xi", "zero"}};
  TraceModel rm = model_from_json(rp);
  CHECK(rm.space.free_index(0, 2) >= 0); // 1-based in JSON

  CHECK_THROWS_AS(model_from_json({{"family", "unknown"}, {"p", 2}}), Error);
}

TEST_CASE("strategy json round trip and defaults") {
  json j = {{"kind", "truncated_series"}, {"tail_tol", 1e-10}};
  EvalStrategy st = strategy_from_json(j);
  CHECK(st.kind == EvalStrategy::Kind::truncated_series);
  CHECK(st.tail_tol == 1e-10);
  json back = strategy_to_json(st);
  CHECK(back["kind"] == "truncated_series");

  CHECK(default_strategy(gaussian_model(2)).kind == EvalStrategy::Kind::closed_form);
  CHECK(default_strategy(ising_model(2)).kind == EvalStrategy::Kind::enumerate_states);
  CHECK(default_strategy(poisson_sqrt_model(2)).kind ==
        EvalStrategy::Kind::truncated_series);
  CHECK(default_strategy(exponential_sqrt_model(2)).kind ==
        EvalStrategy::Kind::quadrature);
  CHECK(default_strategy(exponential_sqrt_model(6)).kind ==
        EvalStrategy::Kind::monte_carlo);
}

TEST_CASE("report round trip and config hash semantics") {
  Report r;
  r.model_config = {{"family", "ising"}, {"p", 2}};
  r.strategy_config = {{"kind", "enumerate"}};
  r.seed = 42;
  r.fit.m_hat = Matrix::Identity(2, 2);
  r.fit.objective = 1.25;
  r.fit.log_likelihood = -10.5;
  r.fit.iterations = 7;
  r.fit.final_grad_norm = 1e-9;
  r.fit.converged = true;
  r.fit.stationarity_gap = 2e-9;
  r.tests.push_back({1, 2, 3.5, 1, 0.06});
  r.alpha = 0.05;
  r.subgraph_edges = {{1, 2}};
  r.config_hash = semantic_config_hash(r.model_config, r.strategy_config, r.seed);
  r.timestamp = "2026-01-01T00:00:00Z";

  json j = report_to_json(r);
  Report back = report_from_json(j);
  CHECK(report_to_json(back) == j);

  // hash changes iff a semantic field changes
  CHECK(semantic_config_hash(r.model_config, r.strategy_config, 42) ==
        r.config_hash);
  CHECK(semantic_config_hash(r.model_config, r.strategy_config, 43) !=
        r.config_hash);
  CHECK(semantic_config_hash({{"family", "ising"}, {"p", 3}},
                             r.strategy_config, 42) != r.config_hash);
}

TEST_CASE("cli fit pipeline recovers the gaussian closed form") {
  TempDir tmp;
  write_file(tmp.file("model.json"), R"({"family":"gaussian","p":2})");
  TraceModel m = gaussian_model(2);
  SamplerConfig cfg;
  cfg.seed = 7;
  Matrix badly_named = sample(m, Matrix::Identity(2, 2), 400, cfg);
  save_csv(badly_named, tmp.file("data.csv"));

  int rc = run_command({"fit", "--model", tmp.file("model.json"), "--data",
                        tmp.file("data.csv"), "--out", tmp.file("out")});
  REQUIRE(rc == 0);
  REQUIRE(fs::exists(tmp.file("out") + "/report.json"));
  REQUIRE(fs::exists(tmp.file("out") + "/m_hat.json"));

  Matrix m_hat = matrix_from_json(load_json_file(tmp.file("out") + "/m_hat.json"));
  GramMatrix g = gram_matrix(m, Dataset::validated(badly_named, m));
  Matrix want = (2.0 * g.entries).inverse(); // inverse sample covariance
  CHECK((m_hat - want).norm() / want.norm() < 1e-8);

  Report rep = report_from_json(load_json_file(tmp.file("out") + "/report.json"));
  CHECK(rep.fit.converged);
  CHECK(rep.config_hash.size() == 16);
}

TEST_CASE("cli subgraph on independent data emits an empty dot graph") {
  TempDir tmp;
  write_file(tmp.file("model.json"), R"({"family":"ising","p":2})");
  TraceModel m = ising_model(2);
  SamplerConfig cfg;
  cfg.seed = 9;
  save_csv(sample(m, Matrix::Zero(2, 2), 300, cfg), tmp.file("data.csv"));

  int rc = run_command({"subgraph", "--model", tmp.file("model.json"), "--data",
                        tmp.file("data.csv"), "--out", tmp.file("out"),
                        "--alpha", "0.05"});
  REQUIRE(rc == 0);
  std::ifstream dot(tmp.file("out") + "/graph.dot");
  std::string text((std::istreambuf_iterator<char>(dot)),
                   std::istreambuf_iterator<char>());
  CHECK(text.find("--") == std::string::npos);
  json adj = load_json_file(tmp.file("out") + "/adjacency.json");
  CHECK(adj["edges"].empty());
}

TEST_CASE("cli sample-then-fit round trip on ising") {
  TempDir tmp;
  write_file(tmp.file("model.json"), R"({"family":"ising","p":2})");
  Matrix truth(2, 2);
  truth << 0.3, -0.4, -0.4, 0.2;
  save_json_file(matrix_to_json(truth), tmp.file("params.json"));

  int rc = run_command({"sample", "--model", tmp.file("model.json"), "--params",
                        tmp.file("params.json"), "--n", "5000", "--seed", "21",
                        "--out", tmp.file("out")});
  REQUIRE(rc == 0);
  REQUIRE(fs::exists(tmp.file("out") + "/samples.csv"));

  rc = run_command({"fit", "--model", tmp.file("model.json"), "--data",
                    tmp.file("out") + "/samples.csv", "--out", tmp.file("fit")});
  REQUIRE(rc == 0);
  Matrix m_hat = matrix_from_json(load_json_file(tmp.file("fit") + "/m_hat.json"));
  CHECK((m_hat - truth).cwiseAbs().maxCoeff() < 0.15);
}

TEST_CASE("cli test and eval subcommands") {
  TempDir tmp;
  write_file(tmp.file("model.json"), R"({"family":"ising","p":2})");
  TraceModel m = ising_model(2);
  Matrix truth(2, 2);
  truth << 0.2, -0.8, -0.8, 0.1;
  SamplerConfig cfg;
  cfg.seed = 33;
  save_csv(sample(m, truth, 800, cfg), tmp.file("data.csv"));

  int rc = run_command({"test", "--model", tmp.file("model.json"), "--data",
                        tmp.file("data.csv"), "--edge", "1", "2", "--out",
                        tmp.file("out")});
  REQUIRE(rc == 0);
  json t = load_json_file(tmp.file("out") + "/test.json");
  CHECK(t["dof"] == 1);
  CHECK(t["p_value"].get<double>() <= 1.0);

  save_json_file(matrix_to_json(truth), tmp.file("params.json"));
  rc = run_command({"eval", "--model", tmp.file("model.json"), "--params",
                    tmp.file("params.json"), "--data", tmp.file("data.csv"),
                    "--out", tmp.file("ev")});
  REQUIRE(rc == 0);
  json ev = load_json_file(tmp.file("ev") + "/eval.json");
  CHECK(std::isfinite(ev["log_normalizer"].get<double>()));
  CHECK(ev.contains("log_likelihood"));
  CHECK(ev.contains("grad_norm"));
}

TEST_CASE("cli exit codes") {
  TempDir tmp;
  // usage errors
  CHECK(run_command({"frobnicate"}) == 1);
  CHECK(run_command({"fit", "--bogus-flag", "x"}) == 1);
  CHECK(run_command({"fit", "--model", tmp.file("missing.json"), "--data",
                     tmp.file("missing.csv"), "--out", tmp.file("out")}) == 1);

  // malformed model JSON
  write_file(tmp.file("broken.json"), "{nope");
  CHECK(run_command({"fit", "--model", tmp.file("broken.json"), "--data",
                     tmp.file("missing.csv"), "--out", tmp.file("out")}) == 1);

  // numerical failure: product-interaction series diverges at these params
  write_file(tmp.file("naive.json"), R"({"family":"poisson_naive","p":2})");
  Matrix bad(2, 2);
  bad << 1.0, -0.1, -0.1, 1.0;
  save_json_file(matrix_to_json(bad), tmp.file("bad.json"));
  CHECK(run_command({"eval", "--model", tmp.file("naive.json"), "--params",
                     tmp.file("bad.json")}) == 2);
}
