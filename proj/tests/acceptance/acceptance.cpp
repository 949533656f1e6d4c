// Acceptance checks. Each criterion prints one line:
//   criterion N: PASS|FAIL <details>
// Usage: gqlab_acceptance [--criterion N] [--config-dir DIR]
// Exit status is 0 only when every selected criterion passes.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gqlab/environments.hpp"
#include "gqlab/errors.hpp"
#include "gqlab/evaluation.hpp"
#include "gqlab/experiment.hpp"
#include "gqlab/learners.hpp"
#include "gqlab/mdp.hpp"
#include "json.hpp"

namespace {

using namespace gqlab;
namespace fs = std::filesystem;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

const std::vector<double> kSigmaGrid{0.0, 0.25, 0.5, 0.75, 1.0};

std::string sigma_list() {
  std::string s = "[";
  for (std::size_t i = 0; i < kSigmaGrid.size(); ++i) s += (i ? ", " : "") + fmt("%g", kSigmaGrid[i]);
  return s + "]";
}

// Divergence: the monitor fires within the step
// budget and the windowed median of ||theta|| never decreases after burn-in.
struct DivergenceCheck {
  bool fired = false;
  std::size_t fired_at = 0;
  bool monotone = false;
  std::size_t windows = 0;
  double final_norm = 0.0;
};

DivergenceCheck check_divergence(const RunResult& run, std::size_t burn_in, std::size_t window) {
  DivergenceCheck c;
  c.fired = run.diverged;
  c.fired_at = run.records.empty() ? 0 : run.records.back().step;
  c.final_norm = run.records.empty() ? 0.0 : run.records.back().theta_norm;
  std::vector<double> norms;
  for (const auto& r : run.records) {
    if (r.step > burn_in) norms.push_back(std::isfinite(r.theta_norm) ? r.theta_norm : INFINITY);
  }
  const auto medians = windowed_medians(norms, window);
  c.windows = medians.size();
  c.monotone = true;
  for (std::size_t i = 1; i < medians.size(); ++i) c.monotone = c.monotone && medians[i] >= medians[i - 1];
  return c;
}

Outcome divergence_sweep(const std::string& env, const std::string& theta0, double alpha,
                         double lambda) {
  const ExperimentConfig c = parse_config(R"({"environment": ")" + env +
                                          R"(", "learner": "semi_gradient", "gamma": 0.99, "lambda": )" +
                                          fmt("%.17g", lambda) + R"(, "sigma": )" + sigma_list() +
                                          R"(, "alpha": )" + fmt("%.17g", alpha) + R"(, "theta0": )" +
                                          theta0 + R"(, "n_steps": 100000, "cadence": 1, "mspbe": "none"})");
  Outcome out{true, ""};
  for (const auto& spec : expand_runs(c)) {
    const DivergenceCheck d = check_divergence(run_single(c, spec), 1000, 1000);
    const bool ok = d.fired && d.monotone;
    out.pass = out.pass && ok;
    out.detail += "sigma=" + spec.sigma.label() + ":";
    out.detail += d.fired ? "diverged@" + std::to_string(d.fired_at) : "bounded(|theta|=" + fmt("%.4g", d.final_norm) + ")";
    out.detail += d.monotone ? ",median-nondecreasing" : ",median-decreases";
    out.detail += "(" + std::to_string(d.windows) + " windows) ";
  }
  return out;
}

// ---------------------------------------------------------------------------

Outcome criterion1() {
  return divergence_sweep("counterexample", "[2, 0]", 0.01, 0.99);
}

Outcome criterion2() {
  const ExperimentConfig c = parse_config(
      R"({"environment": "counterexample", "learner": "gq", "gamma": 0.99, "lambda": 0.99,
          "sigma": )" + sigma_list() + R"(, "alpha": 0.01, "eta": 0.25, "theta0": [2, 0],
          "n_steps": 200000, "cadence": 1, "mspbe": "empirical"})");
  Outcome out{true, ""};
  for (const auto& spec : expand_runs(c)) {
    const RunResult run = run_single(c, spec);
    double max_norm = 0.0;
    for (const auto& r : run.records) max_norm = std::max(max_norm, std::isfinite(r.theta_norm) ? r.theta_norm : INFINITY);
    std::vector<double> tail;
    for (std::size_t i = run.records.size() > 1000 ? run.records.size() - 1000 : 0; i < run.records.size(); ++i) {
      tail.push_back(run.records[i].mspbe);
    }
    const double final_mspbe = tail.empty() ? NAN : mean(tail);
    const bool ok = !run.diverged && run.steps_taken == 200000 && max_norm < 1e3 && final_mspbe < 1e-3;
    out.pass = out.pass && ok;
    out.detail += "sigma=" + spec.sigma.label() + ":max|theta|=" + fmt("%.3g", max_norm) +
                  ",mspbe=" + fmt("%.3g", final_mspbe) + (run.diverged ? ",diverged@" + std::to_string(run.steps_taken) : "") + " ";
  }
  return out;
}

Outcome criterion3() {
  const std::string theta0 = "[1, 1, 1, 1, 1, 1, 10, 1]";
  Outcome semi = divergence_sweep("baird", theta0, 0.01, 0.99);

  const ExperimentConfig c = parse_config(
      R"({"environment": "baird", "learner": "gq", "gamma": 0.99, "lambda": 0.99, "sigma": )" +
      sigma_list() + R"(, "alpha": 0.005, "eta": 0.25, "theta0": )" + theta0 +
      R"(, "n_steps": 200000, "cadence": 1000})");
  const auto env = baird_star_env();
  const DenseMatrix phi = env->features()->full_matrix();
  const DenseMatrix row_space = pseudo_inverse(phi) * phi;  // projector onto (null Phi)^perp
  Outcome gq{true, ""};
  for (const auto& spec : expand_runs(c)) {
    const RunResult run = run_single(c, spec);
    const double dist_zero = run.final_theta.norm2();
    const double dist_set = (row_space * run.final_theta).norm2();
    const bool ok = !run.diverged && dist_zero < 0.05;
    gq.pass = gq.pass && ok;
    gq.detail += "sigma=" + spec.sigma.label() + ":|theta-0|=" + fmt("%.4g", dist_zero) +
                 ",dist-to-solution-set=" + fmt("%.2g", dist_set) +
                 ",mspbe=" + fmt("%.2g", run.records.back().mspbe) + " ";
  }
  return {semi.pass && gq.pass, "semi-gradient{" + semi.detail + "} gq{" + gq.detail + "}"};
}

Outcome criterion4() {
  const auto env = boyan_chain_env(0.9999);
  const DenseVector v = state_values(env->mdp(), env->target());
  double worst = 0.0;
  for (std::size_t s = 0; s < 14; ++s) worst = std::max(worst, std::abs(v[s] + 2.0 * static_cast<double>(13 - s)));
  return {worst <= 0.05, "max |v - (-26,...,-2,0)| = " + fmt("%.4g", worst) + ", v(s1) = " + fmt("%.6g", v[0])};
}

Outcome criterion5() {
  Outcome out{true, ""};
  double worst = 0.0;
  for (const char* name : {"boyan", "counterexample"}) {
    const auto env = make_finite_environment(name, 0.99);
    const auto& features = *env->features();
    const std::size_t p = features.dimension();
    for (double sigma : {0.0, 0.5, 1.0}) {
      for (double lambda : {0.0, 0.5, 0.9}) {
        const ModelOracle o(env->mdp(), env->target(), env->behavior(), env->features(), sigma, lambda);
        EmpiricalMoments m(p);
        CounterRng env_rng(2024, 1), pol_rng(2024, 2);
        DenseVector e(p);
        auto s = std::get<std::size_t>(env->reset(env_rng));
        Action a = sample_index(env->behavior().row(s), pol_rng);
        for (std::size_t k = 0; k < 100000; ++k) {
          const StepResult r = env->step(State{s}, a, env_rng);
          const auto s2 = std::get<std::size_t>(r.next);
          FeatureTransition t;
          t.phi = features.evaluate(State{s}, a);
          t.reward = r.reward;
          t.terminal = r.terminal;
          Action a2 = 0;
          if (r.terminal) {
            t.phi_next = DenseVector(p);
            t.expected_phi_next = DenseVector(p);
          } else {
            a2 = sample_index(env->behavior().row(s2), pol_rng);
            t.phi_next = features.evaluate(r.next, a2);
            t.expected_phi_next = expected_feature(features, env->target(), s2);
          }
          e = update_trace(e, t.phi, env->mdp().gamma(), lambda);
          accumulate(m, t, e, sigma, env->mdp().gamma());
          if (r.terminal) {
            e.set_zero();
            s = std::get<std::size_t>(env->reset(env_rng));
            a = sample_index(env->behavior().row(s), pol_rng);
          } else {
            s = s2;
            a = a2;
          }
        }
        const double rel = (m.a_hat - o.a_matrix()).frobenius() / o.a_matrix().frobenius();
        worst = std::max(worst, rel);
        out.pass = out.pass && rel < 0.05;
        if (rel >= 0.05) {
          out.detail += std::string(name) + "(sigma=" + fmt("%g", sigma) + ",lambda=" + fmt("%g", lambda) +
                        ")=" + fmt("%.3g", rel) + " ";
        }
      }
    }
  }
  out.detail = "max relative Frobenius error " + fmt("%.4g", worst) + " over 18 (env, sigma, lambda) points " + out.detail;
  return out;
}

Outcome criterion6() {
  std::mt19937_64 gen(6);
  std::normal_distribution<double> normal(0.0, 3.0);
  double worst_identity = 0.0, worst_fd = 0.0;
  for (const char* name : {"counterexample", "baird", "boyan"}) {
    const auto env = make_finite_environment(name, 0.99);
    const MetricInverse inv = std::string(name) == "baird" ? MetricInverse::Pseudo : MetricInverse::Strict;
    for (double sigma : {0.0, 0.5, 1.0}) {
      const ModelOracle o(env->mdp(), env->target(), env->behavior(), env->features(), sigma, 0.5, inv);
      const std::size_t p = o.dimension();
      for (int trial = 0; trial < 20; ++trial) {
        DenseVector theta(p);
        for (std::size_t i = 0; i < p; ++i) theta[i] = normal(gen);
        const DenseVector grad = o.mspbe_gradient(theta);
        const DenseVector dir = expected_gq_direction(o, theta, o.omega_of(theta));
        worst_identity = std::max(worst_identity, (dir + grad).norm_inf() / std::max(1.0, grad.norm_inf()));
        const double h = 1e-5;
        for (std::size_t i = 0; i < p; ++i) {
          const DenseVector ei = DenseVector::unit(p, i);
          const double fd = (o.mspbe(theta + h * ei) - o.mspbe(theta - h * ei)) / (2 * h);
          worst_fd = std::max(worst_fd, std::abs(fd - grad[i]) / std::max(1.0, std::abs(grad[i])));
        }
      }
    }
  }
  return {worst_identity <= 1e-8 && worst_fd <= 1e-5,
          "max |E[gq direction] + grad MSPBE| = " + fmt("%.3g", worst_identity) +
              " (tol 1e-8), max finite-difference relative error = " + fmt("%.3g", worst_fd) + " (tol 1e-5)"};
}

Outcome criterion7() {
  std::mt19937_64 gen(7);
  std::uniform_int_distribution<std::size_t> length(1, 20), pick(0, 7);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto features = tabular_features(4, 2);
  const TabularPolicy target = TabularPolicy::constant(4, {0.3, 0.7});
  double worst = 0.0;
  for (int ep = 0; ep < 100; ++ep) {
    const std::size_t n = length(gen);
    std::vector<FeatureTransition> episode(n);
    std::vector<double> sigmas(n);
    std::size_t x = pick(gen);
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t next = pick(gen);
      auto& t = episode[k];
      t.phi = features->evaluate(State{x / 2}, x % 2);
      t.reward = normal(gen);
      t.terminal = k + 1 == n;
      t.phi_next = t.terminal ? DenseVector(8) : features->evaluate(State{next / 2}, next % 2);
      t.expected_phi_next = t.terminal ? DenseVector(8) : expected_feature(*features, target, next / 2);
      sigmas[k] = unit(gen);
      x = next;
    }
    DenseVector theta(8);
    for (std::size_t i = 0; i < 8; ++i) theta[i] = normal(gen);
    LearnerHyper h;
    h.gamma = 0.9 + 0.099 * unit(gen);
    h.lambda = unit(gen);
    h.steps = StepSizes::constant(0.1, 1.0);
    const DenseVector fwd = offline_lambda_return_update(episode, theta, sigmas, h);
    const DenseVector bwd = backward_total_update(episode, theta, sigmas, h);
    worst = std::max(worst, (fwd - bwd).norm_inf());
  }
  return {worst <= 1e-10, "max |forward - backward| over 100 episodes = " + fmt("%.3g", worst)};
}

Outcome criterion8() {
  const auto env = boyan_chain_env();
  std::mt19937_64 gen(8);
  std::normal_distribution<double> normal(0.0, 1.0);
  double max_eig = -INFINITY, max_form = -INFINITY;
  for (double sigma : {0.0, 0.5, 1.0}) {
    for (double lambda : {0.0, 0.5, 0.9}) {
      const ModelOracle o(env->mdp(), env->target(), env->behavior(), env->features(), sigma, lambda);
      max_eig = std::max(max_eig, symmetric_eigenvalues(o.a_matrix().symmetric_part()).back());
      for (int i = 0; i < 1000; ++i) {
        DenseVector x(4);
        for (std::size_t j = 0; j < 4; ++j) x[j] = normal(gen);
        max_form = std::max(max_form, x.dot(o.a_matrix() * x) / x.dot(x));
      }
    }
  }
  return {max_eig < 0.0 && max_form < 0.0, "largest eigenvalue of (A + A^T)/2 = " + fmt("%.4g", max_eig) +
                                               ", largest x^T A x / x^T x over 9000 draws = " + fmt("%.4g", max_form)};
}

Outcome criterion9() {
  const ExperimentConfig c = parse_config(
      R"({"environment": "boyan", "learner": "gq", "gamma": 0.99, "lambda": 0.5, "sigma": 0.5,
          "step_sizes": {"mode": "robbins_monro", "a": 1.0, "eta0": 1.0, "alpha_exponent": 0.6, "eta_exponent": 0.05},
          "n_runs": 5, "n_steps": 500000, "cadence": 10000, "seed": 1, "mspbe": "none"})");
  const auto env = boyan_chain_env(0.99);
  const ModelOracle o(env->mdp(), env->target(), env->behavior(), env->features(), 0.5, 0.5);
  const DenseVector theta_star = o.td_fixed_point();
  const ExperimentResult result = run_experiment(c);
  double worst_theta = 0.0, worst_omega = 0.0;
  bool ok = true;
  for (const auto& run : result.runs) {
    const double dt = run.final_theta.empty() ? INFINITY : (run.final_theta - theta_star).norm2();
    const double dw = run.final_omega.empty() ? INFINITY : run.final_omega.norm2();
    worst_theta = std::max(worst_theta, dt);
    worst_omega = std::max(worst_omega, dw);
    ok = ok && !run.diverged && dt < 0.1 && dw < 0.1;
  }
  return {ok, "5 seeds: max |theta - theta*| = " + fmt("%.4g", worst_theta) + ", max |omega| = " + fmt("%.4g", worst_omega)};
}

double random_policy_mean_length(std::size_t seeds) {
  const MountainCar env;
  double total = 0.0;
  for (std::size_t seed = 0; seed < seeds; ++seed) {
    CounterRng env_rng = make_stream(seed, Stream::Environment);
    CounterRng pol_rng = make_stream(seed, Stream::Policy);
    State s = env.reset(env_rng);
    std::size_t steps = 0;
    const std::vector<double> uniform(3, 1.0 / 3.0);
    while (steps < *env.episode_cap()) {
      const StepResult r = env.step(s, sample_index(uniform, pol_rng), env_rng);
      ++steps;
      if (r.terminal) break;
      s = r.next;
    }
    total += static_cast<double>(steps);
  }
  return total / static_cast<double>(seeds);
}

Outcome criterion10() {
  const ExperimentConfig c = parse_config(
      R"({"environment": {"name": "mountain_car", "episode_cap": 5000},
          "features": {"name": "tile_coding", "n_tilings": 8, "tiles_per_dim": 8, "p": 256, "seed": 7},
          "learner": "gq", "gamma": 0.99, "lambda": 0.9, "sigma": [0, 0.5, 1, "dynamic"],
          "alpha": 0.01, "eta": 0.0625, "epsilon": 0.1,
          "n_runs": 10, "n_episodes": 100, "seed": 100, "summary_window": 20})");
  const double baseline = random_policy_mean_length(100);
  const ExperimentResult result = run_experiment(c);

  std::vector<double> first, last, last_lengths;
  for (const auto& run : result.runs) {
    if (run.spec.sigma.mode != SigmaSchedule::Mode::Dynamic) continue;
    for (const auto& r : run.records) {
      if (r.episode < 20) first.push_back(r.episode_return);
      if (r.episode >= 80) {
        last.push_back(r.episode_return);
        last_lengths.push_back(static_cast<double>(r.episode_length));
      }
    }
  }
  const double mean_first = mean(first), mean_last = mean(last), mean_len = mean(last_lengths);
  const double improvement = (mean_last - mean_first) / std::abs(mean_first);

  const auto reports = case_reports(result.runs, c.record, c.summary_window);
  bool partition = reports.size() == 1;
  std::string cases;
  if (partition) {
    const auto& rep = reports.front();
    std::size_t intermediates = 0;
    for (const auto& [label, score] : rep.scores) {
      if (label == kSigmaZeroLabel || label == kSigmaOneLabel) continue;
      ++intermediates;
      partition = partition && rep.table.labels.count(label) == 1;
      cases += label + "=" + (rep.table.labels.count(label) ? to_string(rep.table.labels.at(label)) : "?") + " ";
    }
    partition = partition && intermediates == rep.table.labels.size() &&
                std::abs(rep.table.percent_i + rep.table.percent_ii + rep.table.percent_iii - 100.0) < 1e-9;
  }
  const bool ok = improvement >= 0.5 && mean_len < 0.5 * baseline && partition;
  return {ok, "dynamic sigma: first-20 mean return " + fmt("%.1f", mean_first) + ", last-20 " + fmt("%.1f", mean_last) +
                  " (improvement " + fmt("%.0f", 100 * improvement) + "%), last-20 mean length " + fmt("%.1f", mean_len) +
                  " vs random baseline " + fmt("%.1f", baseline) + "; cases " + cases +
                  (partition ? "(partition ok)" : "(partition broken)")};
}

std::map<std::string, std::string> experiment_files(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().filename() == "metadata.json") continue;
    std::ifstream in(entry.path(), std::ios::binary);
    std::ostringstream body;
    body << in.rdbuf();
    files[fs::relative(entry.path(), dir).string()] = body.str();
  }
  return files;
}

Outcome criterion11(const fs::path& config_dir) {
  // Each shipped config, shrunk to desk scale, run twice with different
  // worker counts; every file except metadata.json must match byte for byte.
  Outcome out{true, ""};
  std::vector<fs::path> configs;
  for (const auto& entry : fs::directory_iterator(config_dir)) {
    if (entry.path().extension() == ".json") configs.push_back(entry.path());
  }
  std::sort(configs.begin(), configs.end());
  if (configs.empty()) return {false, "no configs found in " + config_dir.string()};
  const fs::path scratch = fs::temp_directory_path() / "gqlab_acceptance_repro";
  for (const auto& path : configs) {
    ExperimentConfig c = load_config(path);
    if (c.n_steps) c.n_steps = std::min<std::size_t>(*c.n_steps, 20000);
    if (c.n_episodes) c.n_episodes = std::min<std::size_t>(*c.n_episodes, 5);
    c.n_runs = std::min<std::size_t>(c.n_runs, 2);
    std::map<std::string, std::string> bodies[2];
    for (int k = 0; k < 2; ++k) {
      c.workers = k == 0 ? 1 : 3;
      setenv("GQLAB_WORKERS", std::to_string(c.workers).c_str(), 1);
      c.output = scratch / std::to_string(k);
      fs::remove_all(c.output);
      write_experiment(run_experiment(c));
      bodies[k] = experiment_files(c.output);
    }
    const bool same = bodies[0] == bodies[1] && !bodies[0].empty();
    out.pass = out.pass && same;
    out.detail += path.filename().string() + (same ? ":identical(" + std::to_string(bodies[0].size()) + " files) " : ":DIFFERENT ");
  }
  unsetenv("GQLAB_WORKERS");
  fs::remove_all(scratch);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gqlab acceptance criteria"};
  int only = 0;
  std::string config_dir = GQLAB_CONFIG_DIR;
  app.add_option("--criterion", only, "Run a single criterion (1-11)")->check(CLI::Range(1, 11));
  app.add_option("--config-dir", config_dir, "Directory of experiment configs for criterion 11");
  CLI11_PARSE(app, argc, argv);

  const std::map<int, std::function<Outcome()>> criteria{
      {1, criterion1}, {2, criterion2}, {3, criterion3}, {4, criterion4},
      {5, criterion5}, {6, criterion6}, {7, criterion7}, {8, criterion8},
      {9, criterion9}, {10, criterion10}, {11, [&] { return criterion11(config_dir); }}};

  bool all = true;
  for (const auto& [id, run] : criteria) {
    if (only != 0 && id != only) continue;
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    std::printf("criterion %d: %s %s\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
