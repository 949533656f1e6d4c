// gqlab command-line front end: run experiments, summarise their output and
// print closed-form oracle quantities for a finite MDP.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "gqlab/environments.hpp"
#include "gqlab/errors.hpp"
#include "gqlab/experiment.hpp"
#include "gqlab/mdp.hpp"

namespace {

using namespace gqlab;

void print_vector(const char* label, const DenseVector& v) {
  std::printf("%s = [", label);
  for (std::size_t i = 0; i < v.size(); ++i) std::printf("%s%.10g", i ? ", " : "", v[i]);
  std::printf("]\n");
}

void print_matrix(const char* label, const DenseMatrix& m) {
  std::printf("%s (%zu x %zu) =\n", label, m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    std::printf("  [");
    for (std::size_t c = 0; c < m.cols(); ++c) std::printf("%s%14.8g", c ? ", " : "", m(r, c));
    std::printf("]\n");
  }
}

void print_eigenvalues(const char* label, const std::vector<double>& values) {
  std::printf("%s = [", label);
  for (std::size_t i = 0; i < values.size(); ++i) std::printf("%s%.10g", i ? ", " : "", values[i]);
  std::printf("]\n");
}

MdpDefinition resolve_mdp(const std::string& spec, std::optional<double> gamma) {
  MdpDefinition def;
  if (spec == "counterexample" || spec == "baird" || spec == "boyan") {
    const auto env = make_finite_environment(spec, gamma.value_or(0.99));
    def.name = spec;
    def.mdp = std::make_shared<const FiniteMdp>(env->mdp());
    def.target = env->target();
    def.behavior = env->behavior();
    def.features = env->features();
    return def;
  }
  def = load_mdp_file(spec);
  if (gamma) def.mdp = std::make_shared<const FiniteMdp>(def.mdp->with_gamma(*gamma));
  return def;
}

int cmd_run(const std::string& config_path, const std::string& output,
            std::optional<std::size_t> workers) {
  ExperimentConfig config = load_config(config_path);
  if (!output.empty()) config.output = output;
  if (workers) config.workers = *workers;
  const ExperimentResult result = run_experiment(config);
  write_experiment(result);
  std::size_t diverged = 0;
  for (const auto& run : result.runs) diverged += run.diverged ? 1 : 0;
  std::printf("%zu runs (%zu diverged) on %zu workers -> %s\n", result.runs.size(), diverged,
              result.workers_used, config.output.string().c_str());
  return 0;
}

int cmd_summarize(const std::string& dir, std::size_t window) {
  std::cout << summarize_directory(dir, window);
  return 0;
}

int cmd_oracle(const std::string& mdp_spec, double sigma, double lambda, bool pinv,
               std::optional<double> gamma) {
  const MdpDefinition def = resolve_mdp(mdp_spec, gamma);
  const auto& mdp = *def.mdp;
  const TabularPolicy behavior =
      def.behavior.value_or(TabularPolicy::uniform(mdp.num_states(), mdp.num_actions()));
  const TabularPolicy target = def.target.value_or(behavior);
  const ModelOracle oracle(mdp, target, behavior, def.features, sigma, lambda,
                           pinv ? MetricInverse::Pseudo : MetricInverse::Strict);

  std::printf("mdp: %s (%zu states, %zu actions, gamma = %.10g)\n", def.name.c_str(),
              mdp.num_states(), mdp.num_actions(), mdp.gamma());
  std::printf("features: %s (p = %zu), sigma = %.10g, lambda = %.10g, inverse = %s\n",
              def.features->name().c_str(), oracle.dimension(), sigma, lambda,
              pinv ? "pseudo" : "strict");
  print_vector("xi", oracle.stationary());
  print_matrix("A", oracle.a_matrix());
  print_vector("b", oracle.b_vector());
  print_matrix("M", oracle.m_matrix());

  const std::vector<double> sym = symmetric_eigenvalues(oracle.a_matrix().symmetric_part());
  print_eigenvalues("eig((A + A^T) / 2)", sym);
  std::printf("negative definite: %s\n", sym.back() < 0.0 ? "yes" : "no");
  print_eigenvalues("eig(M)", symmetric_eigenvalues(oracle.m_matrix()));
  std::printf("rank(A) = %zu\n", matrix_rank(oracle.a_matrix()));
  try {
    const DenseVector theta_star = oracle.td_fixed_point();
    print_vector("theta*", theta_star);
    std::printf("MSPBE(theta*) = %.6g\n", oracle.mspbe(theta_star));
  } catch (const SingularMatrix& e) {
    std::printf("theta*: unavailable (%s); rerun with --pinv for the minimum-norm solution\n",
                e.what());
  }
  std::printf("MSPBE(0) = %.10g\n", oracle.mspbe(DenseVector(oracle.dimension())));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gqlab: GQ(sigma, lambda) experiments and oracles"};
  app.require_subcommand(1);

  std::string config_path;
  std::string output;
  std::optional<std::size_t> workers;
  auto* run = app.add_subcommand("run", "Run an experiment described by a JSON config");
  run->add_option("config", config_path, "Experiment config file")->required()->check(CLI::ExistingFile);
  run->add_option("-o,--output", output, "Output directory (overrides the config)");
  run->add_option("-j,--workers", workers, "Worker threads (GQLAB_WORKERS takes precedence)");

  std::string csv_dir;
  std::size_t window = 20;
  auto* summarize = app.add_subcommand("summarize", "Summarise the run CSVs of an experiment");
  summarize->add_option("csv-dir", csv_dir, "Experiment output directory")->required();
  summarize->add_option("-w,--window", window, "Records per run in the end window")
      ->check(CLI::PositiveNumber);

  std::string mdp_spec;
  double sigma = 0.5;
  double lambda = 0.0;
  bool pinv = false;
  std::optional<double> gamma;
  auto* oracle = app.add_subcommand("oracle", "Print A, b, theta* and spectra for a finite MDP");
  oracle->add_option("mdp", mdp_spec, "MDP file, or counterexample | baird | boyan")->required();
  oracle->add_option("--sigma", sigma, "Sampling degree in [0, 1]")->check(CLI::Range(0.0, 1.0));
  oracle->add_option("--lambda", lambda, "Trace decay in [0, 1]")->check(CLI::Range(0.0, 1.0));
  oracle->add_option("--gamma", gamma, "Override the MDP's discount");
  oracle->add_flag("--pinv", pinv, "Use pseudo-inverses for rank-deficient features");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(config_path, output, workers);
    if (summarize->parsed()) return cmd_summarize(csv_dir, window);
    if (oracle->parsed()) return cmd_oracle(mdp_spec, sigma, lambda, pinv, gamma);
  } catch (const gqlab::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
