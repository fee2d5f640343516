// Command-line front end: solve, generate and qr-path.
//
// Exit codes: 0 success, 1 solver did not reach the tolerance, 2 bad input
// (arguments, files, data).

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sqalm/io.hpp"
#include "sqalm/sqalm.hpp"

namespace {

namespace fs = std::filesystem;
using sqalm::io::json;

constexpr int kOk = 0;
constexpr int kNotConverged = 1;
constexpr int kBadInput = 2;

void emit(const json& report, const std::string& out) {
  if (out.empty()) {
    std::cout << report.dump(2) << '\n';
  } else {
    sqalm::io::write_json(out, report);
  }
}

json settings_json(const sqalm::AlmSettings<double>& s) {
  const double prox_ratio = s.prox_ratio.value_or(sqalm::default_prox_ratio<double>());
  return {{"tol", s.tol},
          {"sigma0", s.sigma0},
          {"sigma_growth", s.sigma_growth},
          {"sigma_max", s.sigma_max},
          {"max_outer", s.max_outer},
          {"prox_ratio", prox_ratio},
          {"armijo_c", s.ssn.armijo_c},
          {"backtrack_factor", s.ssn.shrink},
          {"max_inner", s.ssn.max_iter}};
}

json trace_json(const std::vector<sqalm::TraceEntry<double>>& trace) {
  json t = json::array();
  for (const auto& e : trace) {
    t.push_back({{"outer", e.outer},
                 {"sigma", e.sigma},
                 {"inner_tol", e.inner_tol},
                 {"inner_iterations", e.inner_iterations},
                 {"inner_converged", e.inner_converged},
                 {"grad_norm", e.grad_norm},
                 {"dual_feasibility", e.dual_feasibility},
                 {"seconds", e.seconds},
                 {"residuals", sqalm::io::residuals_json(e.residuals)}});
  }
  return t;
}

struct SolveArgs {
  std::string manifest;
  double tol = 1e-8;
  int max_outer = 200;
  double sigma0 = 1.0;
  double sigma_growth = 2.0;
  std::string warm_start;
  std::string out;
  std::string state_out;
  bool trace = false;
};

int cmd_solve(const SolveArgs& a) {
  const auto loaded = sqalm::io::load_problem(a.manifest);
  const auto& prob = loaded.problem;
  sqalm::AlmSettings<double> s;
  s.tol = a.tol;
  s.max_outer = a.max_outer;
  s.sigma0 = a.sigma0;
  s.sigma_growth = a.sigma_growth;
  std::optional<sqalm::IterateState<double>> warm;
  if (!a.warm_start.empty()) {
    warm = sqalm::io::load_state(a.warm_start);
    try {
      warm->check(prob);
    } catch (const std::invalid_argument& e) {
      throw sqalm::io::FormatError(a.warm_start + ": " + e.what());
    }
  }
  const auto res = sqalm::alm_solve(prob, s, warm ? &*warm : nullptr);
  const auto& st = res.state;
  const auto fresh = sqalm::kkt_residuals(prob, st.x, st.y, st.z, st.lambda, st.mu);
  const bool ok = fresh.eta <= a.tol;

  json report;
  report["converged"] = ok;
  report["problem_hash"] = loaded.hash;
  report["objective"] = sqalm::objective_value(prob.objective, st.x);
  report["x"] = sqalm::io::to_json(st.x);
  report["residuals"] = sqalm::io::residuals_json(fresh);
  report["outer_iterations"] = res.outer_iterations;
  report["inner_iterations"] = res.inner_iterations;
  report["final_sigma"] = st.sigma;
  report["timings"] = sqalm::io::timings_json(res.timings);
  report["settings"] = settings_json(s);
  report["warm_started"] = warm.has_value();
  if (a.trace) report["trace"] = trace_json(res.trace);
  emit(report, a.out);
  if (!a.state_out.empty()) sqalm::io::write_json(a.state_out, sqalm::io::state_to_json(st));
  if (!ok) std::cerr << "sqalm solve: eta " << fresh.eta << " above tol " << a.tol << '\n';
  return ok ? kOk : kNotConverged;
}

struct GenerateArgs {
  sqalm::Index m = 0;
  sqalm::Index n = 0;
  sqalm::Index L = 1;
  double k_frac = 0;
  std::string objective = "linear";
  std::uint64_t seed = 0;
  std::string out_dir;
};

int cmd_generate(const GenerateArgs& a) {
  sqalm::SynthSpec spec;
  spec.m = a.m;
  spec.n = a.n;
  spec.L = a.L;
  spec.k_fraction = a.k_frac;
  spec.quadratic = a.objective == "quad";
  spec.seed = a.seed;
  const auto inst = sqalm::generate_synthetic<double>(spec);
  const json gen = {{"m", a.m},        {"n", a.n},         {"L", a.L},
                    {"k_frac", a.k_frac}, {"k", spec.k()}, {"objective", a.objective},
                    {"seed", a.seed}};
  const auto manifest = sqalm::io::save_problem(a.out_dir, inst.problem, &inst.witness, gen);
  std::cout << manifest.string() << '\n';
  return kOk;
}

struct QrArgs {
  std::string data;
  std::string response;
  std::string taus;
  double tol = 1e-4;
  double sigma0 = 1e-2;
  int max_outer = 200;
  bool cold = false;
  std::string out;
};

std::vector<double> parse_taus(const std::string& text) {
  std::vector<double> taus;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      throw sqalm::io::FormatError("--tau: cannot parse '" + item + "'");
    }
    if (item.find_first_not_of(" \t", used) != std::string::npos) {
      throw sqalm::io::FormatError("--tau: cannot parse '" + item + "'");
    }
    taus.push_back(v);
  }
  if (taus.empty()) throw sqalm::io::FormatError("--tau: empty list");
  return taus;
}

int cmd_qr_path(const QrArgs& a) {
  const auto data = sqalm::io::load_csv(a.data, a.response);
  const auto taus = parse_taus(a.taus);
  for (std::size_t i = 0; i < taus.size(); ++i) {
    try {
      sqalm::qr_k(taus[i], data.m());
    } catch (const std::invalid_argument& e) {
      throw sqalm::io::FormatError(std::string("--tau: ") + e.what());
    }
    if (i > 0 && !(taus[i] > taus[i - 1])) throw sqalm::io::FormatError("--tau: values must be increasing");
  }
  auto s = sqalm::qr_default_settings<double>();
  s.tol = a.tol;
  s.sigma0 = a.sigma0;
  s.max_outer = a.max_outer;
  const auto path = sqalm::solve_path(data, taus, s, !a.cold);

  json entries = json::array();
  bool all_ok = true;
  for (const auto& e : path) {
    json j;
    j["tau"] = e.tau;
    j["k"] = e.k;
    j["inverted"] = e.inverted;
    j["warm_started"] = e.warm_started;
    if (!e.error.empty()) {
      j["converged"] = false;
      j["error"] = e.error;
      all_ok = false;
      entries.push_back(j);
      continue;
    }
    j["converged"] = e.converged;
    all_ok = all_ok && e.converged;
    j["objective"] = e.objective;
    j["intercept"] = e.intercept;
    j["superquantile"] = e.superquantile;
    json slope = json::object();
    for (std::size_t c = 0; c < data.feature_names.size(); ++c) {
      slope[data.feature_names[c]] = e.slope[static_cast<sqalm::Index>(c)];
    }
    j["slope"] = slope;
    j["residuals"] = sqalm::io::residuals_json(e.residuals);
    j["outer_iterations"] = e.outer_iterations;
    j["inner_iterations"] = e.inner_iterations;
    j["timings"] = sqalm::io::timings_json(e.timings);
    entries.push_back(j);
  }
  json report;
  report["data"] = a.data;
  report["response"] = a.response;
  report["m"] = data.m();
  report["features"] = data.feature_names;
  report["settings"] = settings_json(s);
  report["warm_start"] = !a.cold;
  report["path"] = entries;
  emit(report, a.out);
  return all_ok ? kOk : kNotConverged;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Superquantile-constrained optimization by a semismooth Newton augmented Lagrangian method"};
  app.require_subcommand(1);

  SolveArgs sa;
  auto* solve = app.add_subcommand("solve", "Solve the problem described by a manifest");
  solve->add_option("manifest", sa.manifest, "Problem manifest (JSON)")->required();
  solve->add_option("--tol", sa.tol, "Target KKT residual")->capture_default_str()->check(CLI::PositiveNumber);
  solve->add_option("--max-outer", sa.max_outer, "Outer iteration limit")->capture_default_str()->check(CLI::NonNegativeNumber);
  solve->add_option("--sigma0", sa.sigma0, "Initial penalty")->capture_default_str()->check(CLI::PositiveNumber);
  solve->add_option("--sigma-growth", sa.sigma_growth, "Penalty growth factor")->capture_default_str()->check(CLI::Range(1.0, 1e6));
  solve->add_option("--warm-start", sa.warm_start, "Iterate state file to start from");
  solve->add_option("--out", sa.out, "Report file (default: stdout)");
  solve->add_option("--state-out", sa.state_out, "Write the final iterate state here");
  solve->add_flag("--trace", sa.trace, "Include per-iteration trace in the report");

  GenerateArgs ga;
  auto* gen = app.add_subcommand("generate", "Generate a random feasible instance");
  gen->add_option("--m", ga.m, "Rows per block")->required();
  gen->add_option("--n", ga.n, "Number of variables")->required();
  gen->add_option("--L", ga.L, "Number of blocks")->capture_default_str();
  gen->add_option("--k-frac", ga.k_frac, "k as a fraction of m")->required();
  gen->add_option("--objective", ga.objective, "linear or quad")
      ->capture_default_str()
      ->check(CLI::IsMember({"linear", "quad"}));
  gen->add_option("--seed", ga.seed, "Random seed")->capture_default_str();
  gen->add_option("--out-dir", ga.out_dir, "Output directory")->required();

  QrArgs qa;
  auto* qr = app.add_subcommand("qr-path", "Quantile regression over a grid of quantile levels");
  qr->add_option("--data", qa.data, "CSV file with a header row")->required();
  qr->add_option("--response", qa.response, "Name of the response column")->required();
  qr->add_option("--tau", qa.taus, "Comma-separated increasing quantile levels")->required();
  qr->add_option("--tol", qa.tol, "Target KKT residual")->capture_default_str()->check(CLI::PositiveNumber);
  qr->add_option("--sigma0", qa.sigma0, "Initial penalty")->capture_default_str()->check(CLI::PositiveNumber);
  qr->add_option("--max-outer", qa.max_outer, "Outer iteration limit per level")->capture_default_str();
  qr->add_flag("--cold", qa.cold, "Solve every level from scratch");
  qr->add_option("--out", qa.out, "Report file (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kBadInput;
  }

  try {
    if (*solve) return cmd_solve(sa);
    if (*gen) return cmd_generate(ga);
    return cmd_qr_path(qa);
  } catch (const sqalm::io::FormatError& e) {
    std::cerr << "sqalm: " << e.what() << '\n';
    return kBadInput;
  } catch (const std::invalid_argument& e) {
    std::cerr << "sqalm: " << e.what() << '\n';
    return kBadInput;
  } catch (const sqalm::NumericalError& e) {
    std::cerr << "sqalm: numerical failure: " << e.what() << '\n';
    return kNotConverged;
  } catch (const std::exception& e) {
    std::cerr << "sqalm: " << e.what() << '\n';
    return kBadInput;
  }
}
