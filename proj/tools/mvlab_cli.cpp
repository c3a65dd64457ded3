#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mvlab/experiment.hpp"

namespace {

using mvlab::ExperimentConfig;
using mvlab::ExperimentKind;

struct Flags {
  std::string config_path;
  std::string out;
  std::string phi;
  std::string psi;
  std::string functional;
  std::string init;
  std::string levels;
  int n{0};
  int replicates{0};
  int threads{0};
  int solver_steps{0};
  int solver_modes{0};
  double dt{0.0};
  double c{0.0};
  double T{0.0};
  double initial_mass{0.0};
  double init_point{0.0};
  double lambda{0.0};
  double bound{0.0};
  double se_mult{0.0};
  double qv_band{0.0};
  double residual_ratio{0.0};
  double drift_ratio{0.0};
  double var_band{0.0};
  std::uint64_t seed{0};
  bool check_manifest{false};
};

void add_common(CLI::App* cmd, Flags& f, bool with_functional) {
  cmd->add_option("--config", f.config_path, "JSON config file; flags override it");
  cmd->add_option("--out", f.out, "output directory (default $MVLAB_OUT_DIR)");
  cmd->add_option("--n-particles,--n", f.n, "particle count N");
  cmd->add_option("--dt", f.dt, "time step");
  cmd->add_option("--c", f.c, "branching rate");
  cmd->add_option("--T", f.T, "horizon");
  cmd->add_option("--initial-mass,--m", f.initial_mass, "initial total mass");
  cmd->add_option("--init", f.init, "initial layout: uniform | point")
      ->check(CLI::IsMember({"uniform", "point"}));
  cmd->add_option("--init-point", f.init_point, "atom location for --init point");
  cmd->add_option("--seed", f.seed, "RNG seed");
  cmd->add_option("--replicates", f.replicates, "Monte Carlo replicates");
  cmd->add_option("--threads", f.threads, "worker threads");
  cmd->add_option("--phi", f.phi, "test field, e.g. const:2 or const:1+cos:2:0.5");
  cmd->add_option("--psi", f.psi, "second field for path functionals");
  cmd->add_option("--levels", f.levels,
                  "comma list: dt values (ito) or dyadic exponents");
  cmd->add_option("--solver-steps", f.solver_steps, "log-Laplace solver steps");
  cmd->add_option("--solver-modes", f.solver_modes, "log-Laplace solver modes");
  cmd->add_option("--bound", f.bound, "integrand sup bound");
  cmd->add_option("--lambda", f.lambda, "exponent for the 1-D oracle");
  cmd->add_option("--se-mult", f.se_mult, "standard-error band multiplier");
  cmd->add_option("--qv-band", f.qv_band, "quadratic-variation ratio band");
  cmd->add_option("--residual-ratio", f.residual_ratio, "residual RMS ratio ceiling");
  cmd->add_option("--drift-ratio", f.drift_ratio, "drift cancellation ceiling");
  cmd->add_option("--var-band", f.var_band, "variance oracle band");
  cmd->add_flag("--check-manifest", f.check_manifest,
                "verify output hashes instead of running");
  if (with_functional)
    cmd->add_option("--functional", f.functional,
                    "family: linear | quadratic | exp-state | time-linear | "
                    "product-path | running-integral | exp-martingale");
}

std::vector<double> parse_levels(const std::string& s) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const std::size_t next = s.find(',', pos);
    const std::string tok =
        s.substr(pos, next == std::string::npos ? s.size() - pos : next - pos);
    pos = next == std::string::npos ? s.size() + 1 : next + 1;
    try {
      out.push_back(mvlab::parse_double(tok));
    } catch (const mvlab::IoError&) {
      throw mvlab::ConfigError("bad --levels entry '" + tok + "'");
    }
  }
  return out;
}

void apply_overrides(const CLI::App& cmd, const Flags& f, ExperimentConfig& cfg) {
  if (cmd.count("--out")) cfg.out_dir = f.out;
  if (cmd.count("--n-particles")) cfg.params.n_particles = f.n;
  if (cmd.count("--dt")) cfg.params.dt = f.dt;
  if (cmd.count("--c")) cfg.params.c = f.c;
  if (cmd.count("--T")) cfg.params.T = f.T;
  if (cmd.count("--initial-mass")) cfg.params.initial_mass = f.initial_mass;
  if (cmd.count("--init"))
    cfg.params.init = f.init == "point" ? mvlab::SimParams::Init::kPoint
                                        : mvlab::SimParams::Init::kUniform;
  if (cmd.count("--init-point")) cfg.params.init_point = f.init_point;
  if (cmd.count("--seed")) cfg.params.seed = f.seed;
  if (cmd.count("--replicates")) cfg.replicates = f.replicates;
  if (cmd.count("--threads")) cfg.threads = f.threads;
  if (cmd.count("--phi")) cfg.phi = f.phi;
  if (cmd.count("--psi")) cfg.psi = f.psi;
  if (cmd.count("--levels")) cfg.levels = parse_levels(f.levels);
  if (cmd.count("--solver-steps")) cfg.solver_steps = f.solver_steps;
  if (cmd.count("--solver-modes")) cfg.solver_modes = f.solver_modes;
  if (cmd.count("--bound")) cfg.bound = f.bound;
  if (cmd.count("--lambda")) cfg.lambda = f.lambda;
  if (cmd.count("--se-mult")) cfg.thresholds.se_mult = f.se_mult;
  if (cmd.count("--qv-band")) cfg.thresholds.qv_band = f.qv_band;
  if (cmd.count("--residual-ratio")) cfg.thresholds.residual_ratio = f.residual_ratio;
  if (cmd.count("--drift-ratio")) cfg.thresholds.drift_ratio = f.drift_ratio;
  if (cmd.count("--var-band")) cfg.thresholds.var_band = f.var_band;
  if (cmd.get_name() == "ito-state" || cmd.get_name() == "ito-functional") {
    if (cmd.count("--functional")) cfg.functional = f.functional;
  }
}

int run_leaf(const CLI::App& cmd, const Flags& f, ExperimentKind kind) {
  ExperimentConfig cfg;
  const bool have_file = cmd.count("--config") > 0;
  if (have_file) cfg = mvlab::load_config_file(f.config_path);
  cfg.kind = kind;
  if (kind == ExperimentKind::kSimulate && !have_file && cmd.count("--replicates") == 0)
    cfg.replicates = 10;
  apply_overrides(cmd, f, cfg);
  mvlab::finalize_config(cfg);

  if (f.check_manifest) {
    const mvlab::ManifestCheck res = mvlab::check_manifest(cfg.out_dir);
    if (res.ok) {
      std::cout << "manifest ok: " << cfg.out_dir.string() << "\n";
      return 0;
    }
    for (const std::string& p : res.problems) std::cout << p << "\n";
    return 1;
  }

  const int code = mvlab::run_experiment(cfg);

  mvlab::json summary;
  {
    auto is = mvlab::open_in(cfg.out_dir / "summary.json");
    is >> summary;
  }
  std::cout << mvlab::kind_to_string(cfg.kind) << " -> " << cfg.out_dir.string()
            << "\n";
  const auto& passes = summary["passes"];
  for (auto it = passes.begin(); it != passes.end(); ++it)
    std::cout << "  " << it.key() << ": " << (it.value().get<bool>() ? "PASS" : "FAIL")
              << "\n";
  if (passes.empty()) std::cout << "  (no pass/fail checks for this kind)\n";
  std::cout << (code == 0 ? "all checks passed" : "CHECKS FAILED") << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Monte Carlo laboratory for a measure-valued branching diffusion"};
  app.set_version_flag("--version", mvlab::kArtifactVersion);
  app.require_subcommand(1);

  Flags f;
  CLI::App* simulate = app.add_subcommand("simulate", "dump paths and mass summaries");
  add_common(simulate, f, false);

  CLI::App* verify =
      app.add_subcommand("verify", "run one verification experiment");
  verify->require_subcommand(1);
  CLI::App* v_mp = verify->add_subcommand("mp", "martingale problem residuals");
  CLI::App* v_is = verify->add_subcommand("ito-state", "state Ito decomposition");
  CLI::App* v_if =
      verify->add_subcommand("ito-functional", "path-functional Ito decomposition");
  CLI::App* v_rep =
      verify->add_subcommand("representation", "martingale representation residuals");
  CLI::App* v_dy =
      verify->add_subcommand("dyadic-convergence", "dyadic approximation distances");
  add_common(v_mp, f, false);
  add_common(v_is, f, true);
  add_common(v_if, f, true);
  add_common(v_rep, f, false);
  add_common(v_dy, f, false);

  CLI::App* oracle = app.add_subcommand("oracle", "closed-form oracle comparisons");
  oracle->require_subcommand(1);
  CLI::App* o_lap = oracle->add_subcommand("laplace", "Laplace functional vs solver");
  CLI::App* o_fel = oracle->add_subcommand("feller", "1-D total-mass diffusion");
  add_common(o_lap, f, false);
  add_common(o_fel, f, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    return 2;
  }

  try {
    if (simulate->parsed()) return run_leaf(*simulate, f, ExperimentKind::kSimulate);
    if (v_mp->parsed()) return run_leaf(*v_mp, f, ExperimentKind::kMp);
    if (v_is->parsed()) return run_leaf(*v_is, f, ExperimentKind::kItoState);
    if (v_if->parsed()) return run_leaf(*v_if, f, ExperimentKind::kItoFunctional);
    if (v_rep->parsed()) return run_leaf(*v_rep, f, ExperimentKind::kRepresentation);
    if (v_dy->parsed())
      return run_leaf(*v_dy, f, ExperimentKind::kDyadicConvergence);
    if (o_lap->parsed()) return run_leaf(*o_lap, f, ExperimentKind::kLaplaceOracle);
    if (o_fel->parsed()) return run_leaf(*o_fel, f, ExperimentKind::kFellerOracle);
    std::cerr << "no subcommand\n";
    return 2;
  } catch (const mvlab::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const mvlab::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
