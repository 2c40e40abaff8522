#pragma once

/**
 * @file cli.hpp
 * @brief Command-line driver: fit, test, subgraph, sample, eval.
 *
 * Exit codes: 0 success, 1 usage/input error, 2 numerical failure
 * (non-existence or divergence). Diagnostics go to stderr.
 */

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "io.hpp"
#include "sampler.hpp"

namespace etm {

namespace detail {

struct CliArgs {
  std::string model_path, data_path, out_dir, strategy_path, params_path;
  double alpha = 0.05;
  std::vector<int> edge; ///< two 1-based endpoints
  long n = 0;
  std::uint64_t seed = 0;
};

inline std::string out_file(const CliArgs& a, const std::string& name) {
  namespace fs = std::filesystem;
  fs::create_directories(a.out_dir);
  return (fs::path(a.out_dir) / name).string();
}

inline double expanded_grad_norm(const TraceModel& model, const Vector& g) {
  double s = 0.0;
  for (int k = 0; k < model.space.dim(); ++k)
    s += g[k] * g[k] / model.space.multiplicity(k);
  return std::sqrt(s);
}

struct LoadedRun {
  TraceModel model;
  json model_config;
  EvalStrategy strategy;
  json strategy_config;
};

inline LoadedRun load_run(const CliArgs& a) {
  LoadedRun run{model_from_json(load_json_file(a.model_path)), {}, {}, {}};
  run.model_config = load_json_file(a.model_path);
  if (!a.strategy_path.empty()) {
    run.strategy_config = load_json_file(a.strategy_path);
    run.strategy = strategy_from_json(run.strategy_config);
  } else {
    run.strategy = default_strategy(run.model, a.seed);
    run.strategy_config = strategy_to_json(run.strategy);
  }
  return run;
}

inline Report base_report(const LoadedRun& run, const CliArgs& a,
                          const FitResult& fit) {
  Report rep;
  rep.model_config = run.model_config;
  rep.strategy_config = run.strategy_config;
  rep.seed = a.seed;
  rep.fit = fit;
  rep.config_hash =
      semantic_config_hash(run.model_config, run.strategy_config, a.seed);
  rep.timestamp = utc_timestamp();
  return rep;
}

inline int cmd_fit(const CliArgs& a) {
  LoadedRun run = load_run(a);
  Dataset data = load_csv(a.data_path, run.model);
  FitResult fit = fit_mle(run.model, data, FitOptions(run.strategy));
  Report rep = base_report(run, a, fit);
  save_json_file(report_to_json(rep), out_file(a, "report.json"));
  save_json_file(matrix_to_json(fit.m_hat), out_file(a, "m_hat.json"));
  std::cout << "fit: " << (fit.converged ? "converged" : "NOT converged")
            << " in " << fit.iterations << " iterations, stationarity gap "
            << fit.stationarity_gap << "\n";
  return fit.converged ? 0 : 2;
}

inline int cmd_test(const CliArgs& a) {
  LoadedRun run = load_run(a);
  Dataset data = load_csv(a.data_path, run.model);
  if (a.edge.size() != 2) throw Error("--edge requires two 1-based indices");
  int i = a.edge[0] - 1, j = a.edge[1] - 1;
  if (i < 0 || j < 0 || i >= run.model.q || j >= run.model.q || i == j)
    throw Error("--edge endpoints must be distinct and within 1.." +
                std::to_string(run.model.q));
  FitResult fit = fit_mle(run.model, data, FitOptions(run.strategy));
  FisherTensor fisher = empirical_fisher(run.model, data);
  TestResult t = edge_test(run.model, fit, fisher, i, j);
  json out = {{"i", i + 1},
              {"j", j + 1},
              {"statistic", t.statistic},
              {"dof", t.dof},
              {"p_value", t.p_value}};
  if (!a.out_dir.empty()) save_json_file(out, out_file(a, "test.json"));
  std::cout << out.dump(2) << "\n";
  return 0;
}

inline int cmd_subgraph(const CliArgs& a) {
  LoadedRun run = load_run(a);
  Dataset data = load_csv(a.data_path, run.model);
  FitResult fit = fit_mle(run.model, data, FitOptions(run.strategy));
  FisherTensor fisher = empirical_fisher(run.model, data);
  SubgraphResult sg = confidence_subgraph(run.model, fit, fisher, a.alpha);

  Report rep = base_report(run, a, fit);
  rep.alpha = a.alpha;
  for (auto [i, j] : sg.graph.edge_pairs())
    rep.subgraph_edges.emplace_back(i + 1, j + 1);
  for (const auto& [pair, pv] : sg.p_values) {
    Report::EdgeRecord rec;
    rec.i = pair.first + 1;
    rec.j = pair.second + 1;
    rec.dof = 1;
    rec.p_value = pv;
    rep.tests.push_back(rec);
  }
  save_json_file(report_to_json(rep), out_file(a, "report.json"));

  std::ofstream dot(out_file(a, "graph.dot"));
  dot << export_dot(sg.graph);

  json adjacency = json::array();
  for (auto [i, j] : sg.graph.edge_pairs()) adjacency.push_back({i + 1, j + 1});
  save_json_file(json{{"p", sg.graph.p}, {"edges", adjacency}},
                 out_file(a, "adjacency.json"));
  std::cout << "subgraph: " << sg.graph.edge_pairs().size()
            << " edges at alpha " << a.alpha << "\n";
  return 0;
}

inline int cmd_sample(const CliArgs& a) {
  LoadedRun run = load_run(a);
  if (a.params_path.empty()) throw Error("sample requires --params");
  if (a.n < 1) throw Error("sample requires --n >= 1");
  Matrix m = matrix_from_json(load_json_file(a.params_path));
  SamplerConfig cfg;
  cfg.seed = a.seed;
  Matrix draws = sample(run.model, m, a.n, cfg);
  if (!a.out_dir.empty()) {
    save_csv(draws, out_file(a, "samples.csv"));
    std::cout << "wrote " << a.n << " draws\n";
  } else {
    for (long i = 0; i < draws.rows(); ++i) {
      for (long j = 0; j < draws.cols(); ++j) {
        if (j) std::cout << ',';
        std::cout << detail::format_double(draws(i, j));
      }
      std::cout << '\n';
    }
  }
  return 0;
}

inline int cmd_eval(const CliArgs& a) {
  LoadedRun run = load_run(a);
  if (a.params_path.empty()) throw Error("eval requires --params");
  Matrix m = matrix_from_json(load_json_file(a.params_path));
  json out;
  out["log_normalizer"] = log_normalizer(run.model, m, run.strategy);
  if (!a.data_path.empty()) {
    Dataset data = load_csv(a.data_path, run.model);
    GramMatrix gram = gram_matrix(run.model, data);
    double gamma = out["log_normalizer"].get<double>();
    double xi_sum = 0.0;
    for (int i = 0; i < data.n(); ++i)
      xi_sum += evaluate_log_base(run.model, data.rows.row(i).transpose());
    out["log_likelihood"] =
        -data.n() * (trace_inner(m, gram.entries) + gamma) + xi_sum;
    Vector g = gradient(run.model, m, gram, run.strategy);
    out["grad_norm"] = expanded_grad_norm(run.model, g);
  }
  if (!a.out_dir.empty()) save_json_file(out, out_file(a, "eval.json"));
  std::cout << out.dump(2) << "\n";
  return 0;
}

} // namespace detail

/// Parses and executes one CLI invocation; returns the process exit status.
inline int run_command(const std::vector<std::string>& argv) {
  CLI::App app{"exponential trace graphical models"};
  app.require_subcommand(1);

  detail::CliArgs a;
  auto add_common = [&](CLI::App* sub, bool need_data) {
    sub->add_option("--model", a.model_path, "model JSON")->required();
    auto* d = sub->add_option("--data", a.data_path, "observations CSV");
    if (need_data) d->required();
    sub->add_option("--out", a.out_dir, "output directory");
    sub->add_option("--strategy", a.strategy_path, "strategy JSON");
    sub->add_option("--seed", a.seed, "RNG seed");
  };

  auto* fit = app.add_subcommand("fit", "maximum likelihood fit");
  add_common(fit, true);
  fit->get_option("--out")->required();

  auto* test = app.add_subcommand("test", "single-edge Wald test");
  add_common(test, true);
  test->add_option("--edge", a.edge, "1-based edge endpoints i j")
      ->expected(2)
      ->required();

  auto* subgraph = app.add_subcommand("subgraph", "confidence subgraph");
  add_common(subgraph, true);
  subgraph->get_option("--out")->required();
  subgraph->add_option("--alpha", a.alpha, "test level");

  auto* sampler = app.add_subcommand("sample", "draw observations");
  add_common(sampler, false);
  sampler->add_option("--params", a.params_path, "parameter matrix JSON")
      ->required();
  sampler->add_option("--n", a.n, "number of draws")->required();

  auto* eval = app.add_subcommand("eval", "evaluate at fixed parameters");
  add_common(eval, false);
  eval->add_option("--params", a.params_path, "parameter matrix JSON")
      ->required();

  std::vector<std::string> rev(argv.rbegin(), argv.rend());
  try {
    app.parse(rev); // CLI11 consumes reversed argument lists
  } catch (const CLI::ParseError& e) {
    std::stringstream null_out;
    int code = app.exit(e, null_out, null_out);
    if (code == 0) { // --help and friends
      std::cout << app.help() << "\n";
      return 0;
    }
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (fit->parsed()) return detail::cmd_fit(a);
    if (test->parsed()) return detail::cmd_test(a);
    if (subgraph->parsed()) return detail::cmd_subgraph(a);
    if (sampler->parsed()) return detail::cmd_sample(a);
    if (eval->parsed()) return detail::cmd_eval(a);
    std::cerr << "usage error: no subcommand\n";
    return 1;
  } catch (const NonExistence& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  } catch (const NormalizerFailure& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

/// argc/argv adapter for main().
inline int run_command(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_command(args);
}

} // namespace etm
