// attikit command-line front end: scenario simulation, steady-state
// Riccati solves, property-suite verification, and Monte Carlo sweeps.
//
// Exit codes: 0 success, 1 property failure, 2 config error,
// 3 filter divergence, 4 no convergence.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "attikit/config.hpp"
#include "attikit/error.hpp"
#include "attikit/filters.hpp"
#include "attikit/io.hpp"
#include "attikit/sim.hpp"
#include "attikit/verify.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitPropertyFailure = 1;
constexpr int kExitConfigError = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitNoConvergence = 4;

using OrderedJson = nlohmann::ordered_json;

std::string version_string() {
#ifdef ATTIKIT_VERSION
  return ATTIKIT_VERSION;
#else
  return "unknown";
#endif
}

OrderedJson meta_json(const attikit::RunConfig& cfg, const attikit::RunRecord& rec) {
  OrderedJson meta;
  meta["config"] = cfg.echo;
  meta["seed"] = rec.meta.seed;
  meta["config_hash"] = rec.meta.config_hash;
  meta["integrator"] = rec.meta.integrator;
  meta["noise_algorithm"] = rec.meta.noise_algorithm;
  meta["k_i_dot_from_finite_difference"] = rec.meta.k_i_dot_from_fd;
  meta["versions"]["attikit"] = version_string();
  meta["versions"]["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." +
                              std::to_string(EIGEN_MAJOR_VERSION) + "." +
                              std::to_string(EIGEN_MINOR_VERSION);
  meta["versions"]["compiler"] = __VERSION__;
  return meta;
}

int env_thread_cap() {
  const char* env = std::getenv("ATTIKIT_THREADS");
  if (!env) return 0;
  try {
    const int n = std::stoi(env);
    return n > 0 ? n : 1;
  } catch (...) {
    return 0;
  }
}

std::string mat3_line(const attikit::Mat3& m) {
  std::string s;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      if (r || c) s += ' ';
      s += attikit::format_double(m(r, c));
    }
  }
  return s;
}

int cmd_simulate(const std::string& config_path, std::string out_dir,
                 std::uint64_t seed_override, bool has_seed_override) {
  attikit::RunConfig cfg = attikit::load_config(config_path);
  if (has_seed_override) {
    cfg.scenario.seed = seed_override;
    cfg.echo["seed"] = seed_override;
  }
  if (out_dir.empty()) out_dir = cfg.out_dir;
  if (out_dir.empty()) out_dir = ".";

  attikit::RunRecord rec = attikit::run_scenario(cfg.scenario);
  char hash[32];
  std::snprintf(hash, sizeof(hash), "%016llx",
                static_cast<unsigned long long>(attikit::fnv1a64(cfg.echo.dump())));
  rec.meta.config_hash = hash;

  const std::filesystem::path dir(out_dir);
  attikit::write_file(dir / "run.csv", attikit::run_csv_text(rec));
  attikit::write_file(dir / "meta.json", meta_json(cfg, rec).dump(2) + "\n");
  std::cout << "run: " << rec.samples.size() << " samples, final err_angle="
            << attikit::format_double(rec.samples.back().err_angle) << " rad\n";
  return kExitOk;
}

int cmd_riccati(const std::string& config_path) {
  const attikit::RunConfig cfg = attikit::load_config(config_path);
  attikit::NoiseParams noise;
  noise.sigma_omega = cfg.scenario.gyro.sigma_omega;
  noise.sigma_b = cfg.scenario.gyro.sigma_b;
  const attikit::RiccatiSteadyState ss =
      attikit::riccati_steady_state(cfg.scenario.model, noise);

  using attikit::eig_sym3;
  using attikit::format_double;
  using attikit::ps;
  std::cout << "p_a=" << mat3_line(ss.p_a) << "\n";
  std::cout << "p_c=" << mat3_line(ss.p_c) << "\n";
  std::cout << "p_b=" << mat3_line(ss.p_b) << "\n";
  std::cout << "res_stationarity_a=" << format_double(ss.res_a) << "\n";
  std::cout << "res_stationarity_b=" << format_double(ss.res_b) << "\n";
  std::cout << "res_stationarity_c=" << format_double(ss.res_c) << "\n";
  std::cout << "res_coupling_relation=" << format_double(ss.res_rel) << "\n";
  std::cout << "p_a_eig_min=" << format_double(eig_sym3(ss.p_a).values[2]) << "\n";
  std::cout << "p_a_eig_max=" << format_double(eig_sym3(ss.p_a).values[0]) << "\n";
  std::cout << "p_b_eig_min=" << format_double(eig_sym3(ss.p_b).values[2]) << "\n";
  std::cout << "p_b_eig_max=" << format_double(eig_sym3(ss.p_b).values[0]) << "\n";
  std::cout << "p_c_sym_eig_max=" << format_double(eig_sym3(ps(ss.p_c)).values[0]) << "\n";
  std::cout << "steps=" << ss.steps << "\n";
  return kExitOk;
}

int cmd_verify(const std::string& suite, int n, std::uint64_t seed) {
  if (n < 1) throw attikit::ConfigError("verify: sample count must be >= 1");
  const attikit::verify::SuiteResult res = attikit::verify::run_suite(suite, n, seed);
  std::cout << "suite=" << res.name << " samples=" << n << " checks=" << res.checks
            << " failures=" << res.failures << "\n";
  for (const auto& [key, worst] : res.residuals) {
    std::cout << "worst[" << key << "]=" << attikit::format_double(worst) << "\n";
  }
  std::cout << (res.passed() ? "PASS" : "FAIL") << "\n";
  return res.passed() ? kExitOk : kExitPropertyFailure;
}

int cmd_montecarlo(const std::string& config_path, int runs, std::string out_dir) {
  if (runs < 1) throw attikit::ConfigError("montecarlo: --runs must be >= 1");
  attikit::RunConfig cfg = attikit::load_config(config_path);
  if (out_dir.empty()) out_dir = cfg.out_dir;
  if (out_dir.empty()) out_dir = ".";

  attikit::InitSampler sampler;
  const attikit::McSummary mc =
      attikit::monte_carlo(cfg.scenario, runs, sampler, env_thread_cap());

  attikit::write_file(std::filesystem::path(out_dir) / "mc_summary.csv",
                      attikit::mc_csv_text(mc));
  char frac[32];
  std::snprintf(frac, sizeof(frac), "%.3f", mc.convergence_fraction);
  std::cout << "runs=" << runs << "\n";
  std::cout << "convergence_fraction=" << frac << "\n";
  std::cout << "settle_time_median_s=" << attikit::format_double(mc.settle_median) << "\n";
  std::cout << "settle_time_p95_s=" << attikit::format_double(mc.settle_p95) << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"attitude-filter simulation and verification toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_dir, suite;
  std::uint64_t seed = 0;
  int n = 1000;
  int runs = 0;

  auto* sim = app.add_subcommand("simulate", "run one scenario, write run.csv + meta.json");
  sim->add_option("--config", config_path, "configuration file")->required();
  sim->add_option("--out", out_dir, "output directory");
  auto* seed_opt = sim->add_option("--seed", seed, "seed override");

  auto* ric = app.add_subcommand("riccati", "steady-state covariance of the MEKF");
  ric->add_option("--config", config_path, "configuration file")->required();

  auto* ver = app.add_subcommand("verify", "run a property suite");
  ver->add_option("--suite", suite,
                  "identities|lyapunov|equilibria|linearization|equivalence")
      ->required();
  ver->add_option("--n", n, "sample count");
  ver->add_option("--seed", seed, "suite seed");

  auto* mc = app.add_subcommand("montecarlo", "seeded convergence sweep");
  mc->add_option("--config", config_path, "configuration file")->required();
  mc->add_option("--runs", runs, "number of runs")->required();
  mc->add_option("--out", out_dir, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfigError;
  }

  try {
    if (sim->parsed()) return cmd_simulate(config_path, out_dir, seed, seed_opt->count() > 0);
    if (ric->parsed()) return cmd_riccati(config_path);
    if (ver->parsed()) return cmd_verify(suite, n, seed);
    if (mc->parsed()) return cmd_montecarlo(config_path, runs, out_dir);
  } catch (const attikit::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const attikit::InvalidModel& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const attikit::GainNotPositiveDefinite& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const attikit::DegenerateEigenvalues& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const attikit::NotProperRotation& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const attikit::DivergenceDetected& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const attikit::CovarianceNotPD& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const attikit::DegenerateVector& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const attikit::NoConvergence& e) {
    std::cerr << "no convergence: " << e.what() << "\n";
    return kExitNoConvergence;
  } catch (const attikit::NoCertificateFound& e) {
    std::cerr << "no convergence: " << e.what() << "\n";
    return kExitNoConvergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfigError;
  }
  return kExitOk;
}
