#include "gqlab/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <thread>

#include "gqlab/errors.hpp"
#include "json.hpp"

namespace gqlab {

namespace {

using nlohmann::json;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_short(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::string step_sizes_label(const StepSizes& s) {
  if (s.mode == StepSizes::Mode::Constant) {
    return "const:alpha=" + fmt_short(s.alpha) + ":eta=" + fmt_short(s.eta);
  }
  return "rm:a=" + fmt_short(s.alpha) + ":eta=" + fmt_short(s.eta) +
         ":ae=" + fmt_short(s.alpha_exponent) + ":ee=" + fmt_short(s.eta_exponent);
}

StepSizes parse_step_sizes_label(const std::string& label) {
  std::map<std::string, double> fields;
  std::stringstream in(label);
  std::string part;
  std::string kind;
  while (std::getline(in, part, ':')) {
    const auto eq = part.find('=');
    if (eq == std::string::npos) {
      kind = part;
      continue;
    }
    fields[part.substr(0, eq)] = std::stod(part.substr(eq + 1));
  }
  try {
    if (kind == "const") return StepSizes::constant(fields.at("alpha"), fields.at("eta"));
    if (kind == "rm") {
      return StepSizes::robbins_monro(fields.at("a"), fields.at("eta"), fields.at("ae"),
                                      fields.at("ee"));
    }
  } catch (const std::out_of_range&) {
  }
  throw ConfigError("unrecognised step-size label '" + label + "'");
}

SigmaSchedule parse_sigma_label(const std::string& label) {
  if (label == "dynamic") return SigmaSchedule::dynamic();
  try {
    return SigmaSchedule::fixed(std::stod(label));
  } catch (const std::invalid_argument&) {
    throw ConfigError("unrecognised sigma label '" + label + "'");
  }
}

bool is_finite_env(const std::string& name) {
  return name == "counterexample" || name == "baird" || name == "boyan";
}

// ---------------------------------------------------------------------------
// Config parsing

const std::set<std::string> kKnownKeys = {
    "name",       "environment",       "features",          "learner",
    "learners",   "gamma",             "lambda",            "sigma",
    "step_sizes", "alpha",             "eta",               "theta0",
    "n_runs",     "n_episodes",        "n_steps",           "seed",
    "record",     "cadence",           "epsilon",           "sigma_block_steps",
    "divergence_threshold", "stop_on_divergence", "mspbe",  "metric_inverse",
    "ridge",      "summary_window",    "output",            "workers"};

SigmaSchedule sigma_from_json(const json& j) {
  if (j.is_number()) return SigmaSchedule::fixed(j.get<double>());
  if (j.is_string()) {
    if (j.get<std::string>() == "dynamic") return SigmaSchedule::dynamic();
    throw ConfigError("sigma: expected a number or \"dynamic\"");
  }
  if (j.is_object()) {
    SigmaSchedule s = SigmaSchedule::dynamic();
    const auto mode = j.value("mode", std::string("dynamic"));
    if (mode == "fixed") return SigmaSchedule::fixed(j.at("value").get<double>());
    if (mode != "dynamic") throw ConfigError("sigma.mode must be fixed or dynamic");
    s.mu_start = j.value("mu_start", s.mu_start);
    s.mu_end = j.value("mu_end", s.mu_end);
    s.mu_step = j.value("mu_step", s.mu_step);
    s.noise_sd = j.value("noise_sd", s.noise_sd);
    s.validate();
    return s;
  }
  throw ConfigError("sigma: unsupported value");
}

StepSizes step_sizes_from_json(const json& j) {
  const auto mode = j.value("mode", std::string("constant"));
  if (mode == "constant") return StepSizes::constant(j.at("alpha").get<double>(), j.value("eta", 1.0));
  if (mode == "robbins_monro") {
    return StepSizes::robbins_monro(j.value("a", 1.0), j.value("eta0", 1.0),
                                    j.value("alpha_exponent", 0.6), j.value("eta_exponent", 0.05));
  }
  throw ConfigError("step_sizes.mode must be constant or robbins_monro");
}

LearnerKind learner_from_string(const std::string& s) {
  if (s == "gq") return LearnerKind::Gq;
  if (s == "semi_gradient") return LearnerKind::SemiGradient;
  throw ConfigError("unknown learner '" + s + "' (expected gq or semi_gradient)");
}

template <typename T, typename F>
std::vector<T> one_or_many(const json& j, F&& convert) {
  std::vector<T> out;
  if (j.is_array()) {
    for (const auto& item : j) out.push_back(convert(item));
  } else {
    out.push_back(convert(j));
  }
  return out;
}

}  // namespace

std::string to_string(LearnerKind kind) {
  return kind == LearnerKind::Gq ? "gq" : "semi_gradient";
}

std::string to_string(MspbeMode mode) {
  switch (mode) {
    case MspbeMode::None: return "none";
    case MspbeMode::Model: return "model";
    case MspbeMode::Empirical: return "empirical";
  }
  return "?";
}

void ExperimentConfig::validate() const {
  if (environment != "mountain_car" && !is_finite_env(environment)) {
    throw ConfigError("unknown environment '" + environment + "'");
  }
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in (0, 1)");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
  if (learners.empty()) throw ConfigError("no learner given");
  if (sigmas.empty()) throw ConfigError("no sigma schedule given");
  if (step_sizes.empty()) throw ConfigError("no step sizes given");
  if (n_runs < 1) throw ConfigError("n_runs must be >= 1");
  if (n_episodes.has_value() == n_steps.has_value()) {
    throw ConfigError("give exactly one of n_episodes and n_steps");
  }
  if (n_episodes && *n_episodes == 0) throw ConfigError("n_episodes must be positive");
  if (n_steps && *n_steps == 0) throw ConfigError("n_steps must be positive");
  if (cadence == 0) throw ConfigError("cadence must be positive");
  if (sigma_block_steps == 0) throw ConfigError("sigma_block_steps must be positive");
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ConfigError("epsilon must lie in [0, 1]");
  if (!(divergence_threshold > 0.0)) throw ConfigError("divergence_threshold must be positive");
  if (!(ridge >= 0.0)) throw ConfigError("ridge must be non-negative");
  if (summary_window == 0) throw ConfigError("summary_window must be positive");
  if (environment == "mountain_car") {
    if (mspbe != MspbeMode::None) throw ConfigError("MSPBE needs a finite environment");
    if (features.name != "tile_coding") throw ConfigError("mountain_car needs tile_coding features");
    if (episode_cap == 0) throw ConfigError("episode_cap must be positive");
  } else if (features.name == "tile_coding") {
    throw ConfigError("tile_coding features only apply to mountain_car");
  }
  for (const auto& s : sigmas) s.validate();
  for (const auto& s : step_sizes) s.validate();
  try {
    // Resolve every component once so errors surface before any output.
    if (environment == "mountain_car") {
      TileCoder coder(features.n_tilings, features.tiles_per_dim, features.p, features.seed);
      if (theta0 && theta0->size() != coder.dimension()) throw ConfigError("theta0 length");
    } else {
      auto env = make_finite_environment(environment, gamma);
      std::shared_ptr<const FeatureMap> f = env->features();
      if (features.name == "tabular") {
        f = tabular_features(env->mdp().num_states(), env->mdp().num_actions());
      } else if (features.name != "default" && features.name != environment) {
        throw ConfigError("feature set '" + features.name + "' does not fit " + environment);
      }
      if (theta0 && theta0->size() != f->dimension()) {
        throw ConfigError("theta0 has " + std::to_string(theta0->size()) + " entries, features have " +
                          std::to_string(f->dimension()));
      }
      if (mspbe == MspbeMode::Model) {
        for (const auto& s : sigmas) {
          ModelOracle(env->mdp(), env->target(), env->behavior(), f, s.mean_for(0), lambda,
                      metric_inverse);
        }
      }
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("invalid experiment: ") + e.what());
  }
}

ExperimentConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!kKnownKeys.contains(key)) throw ConfigError("unknown config key '" + key + "'");
  }

  ExperimentConfig c;
  try {
    c.name = j.value("name", c.name);
    const json& env = j.at("environment");
    if (env.is_string()) {
      c.environment = env.get<std::string>();
    } else {
      c.environment = env.at("name").get<std::string>();
      c.episode_cap = env.value("episode_cap", c.episode_cap);
    }
    const bool control = c.environment == "mountain_car";

    c.features.name = control ? "tile_coding" : "default";
    if (j.contains("features")) {
      const json& f = j["features"];
      if (f.is_string()) {
        c.features.name = f.get<std::string>();
      } else {
        c.features.name = f.value("name", c.features.name);
        c.features.n_tilings = f.value("n_tilings", c.features.n_tilings);
        c.features.tiles_per_dim = f.value("tiles_per_dim", c.features.tiles_per_dim);
        c.features.p = f.value("p", c.features.p);
        c.features.seed = f.value("seed", c.features.seed);
      }
    }

    const json& learner = j.contains("learners") ? j["learners"] : j.at("learner");
    c.learners = one_or_many<LearnerKind>(learner, [](const json& x) {
      return learner_from_string(x.get<std::string>());
    });
    c.gamma = j.value("gamma", c.gamma);
    c.lambda = j.value("lambda", c.lambda);
    c.sigmas = one_or_many<SigmaSchedule>(j.at("sigma"), sigma_from_json);

    if (j.contains("step_sizes")) {
      c.step_sizes = one_or_many<StepSizes>(j["step_sizes"], step_sizes_from_json);
    } else {
      const auto alphas = one_or_many<double>(j.at("alpha"), [](const json& x) { return x.get<double>(); });
      const auto etas = j.contains("eta")
                            ? one_or_many<double>(j["eta"], [](const json& x) { return x.get<double>(); })
                            : std::vector<double>{1.0};
      for (double a : alphas) {
        for (double e : etas) c.step_sizes.push_back(StepSizes::constant(a, e));
      }
    }
    if (j.contains("theta0")) c.theta0 = j["theta0"].get<std::vector<double>>();

    c.n_runs = j.value("n_runs", c.n_runs);
    if (j.contains("n_episodes")) c.n_episodes = j["n_episodes"].get<std::size_t>();
    if (j.contains("n_steps")) c.n_steps = j["n_steps"].get<std::size_t>();
    c.seed = j.value("seed", c.seed);

    c.record = c.n_episodes ? RecordMode::Episodes : RecordMode::Steps;
    if (j.contains("record")) {
      const auto r = j["record"].get<std::string>();
      if (r == "steps") c.record = RecordMode::Steps;
      else if (r == "episodes") c.record = RecordMode::Episodes;
      else throw ConfigError("record must be steps or episodes");
    }
    c.cadence = j.value("cadence", c.cadence);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.sigma_block_steps = j.value("sigma_block_steps", c.sigma_block_steps);
    c.divergence_threshold = j.value("divergence_threshold", c.divergence_threshold);
    c.stop_on_divergence = j.value("stop_on_divergence", c.stop_on_divergence);

    c.mspbe = control ? MspbeMode::None : MspbeMode::Model;
    if (j.contains("mspbe")) {
      const auto m = j["mspbe"].get<std::string>();
      if (m == "none") c.mspbe = MspbeMode::None;
      else if (m == "model") c.mspbe = MspbeMode::Model;
      else if (m == "empirical") c.mspbe = MspbeMode::Empirical;
      else throw ConfigError("mspbe must be none, model or empirical");
    }
    c.metric_inverse = c.environment == "baird" ? MetricInverse::Pseudo : MetricInverse::Strict;
    if (j.contains("metric_inverse")) {
      const auto m = j["metric_inverse"].get<std::string>();
      if (m == "strict") c.metric_inverse = MetricInverse::Strict;
      else if (m == "pseudo") c.metric_inverse = MetricInverse::Pseudo;
      else throw ConfigError("metric_inverse must be strict or pseudo");
    }
    c.ridge = j.value("ridge", c.ridge);
    c.summary_window = j.value("summary_window", c.summary_window);
    c.output = j.value("output", c.output.string());
    c.workers = j.value("workers", c.workers);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str());
}

std::string RunSpec::config_key() const {
  return to_string(learner) + ";" + step_sizes_label(steps) + ";sigma=" + sigma.label();
}

std::vector<RunSpec> expand_runs(const ExperimentConfig& config) {
  std::vector<RunSpec> runs;
  for (LearnerKind learner : config.learners) {
    for (const auto& steps : config.step_sizes) {
      for (const auto& sigma : config.sigmas) {
        for (std::size_t r = 0; r < config.n_runs; ++r) {
          RunSpec spec;
          spec.run_id = runs.size();
          spec.learner = learner;
          spec.steps = steps;
          spec.sigma = sigma;
          spec.replicate = r;
          spec.seed = config.seed + r;
          runs.push_back(spec);
        }
      }
    }
  }
  return runs;
}

// ---------------------------------------------------------------------------
// Single run

namespace {

// Policy context for one run: finite benchmarks use their fixed tables,
// Mountain Car acts epsilon-greedily on the current action values and
// evaluates the greedy policy.
class RunPolicies {
 public:
  RunPolicies(const FiniteEnvironment* finite, const FeatureMap& features, double epsilon)
      : finite_(finite), features_(features), epsilon_(epsilon) {}

  std::vector<double> behavior(const State& s, const DenseVector& theta) const {
    if (finite_) {
      const auto row = finite_->behavior().row(std::get<StateIndex>(s));
      return {row.begin(), row.end()};
    }
    return epsilon_greedy_probs(values(s, theta), epsilon_);
  }

  std::vector<double> target(const State& s, const DenseVector& theta) const {
    if (finite_) {
      const auto row = finite_->target().row(std::get<StateIndex>(s));
      return {row.begin(), row.end()};
    }
    return greedy_probs(values(s, theta));
  }

 private:
  std::vector<double> values(const State& s, const DenseVector& theta) const {
    std::vector<double> q(TileCoder::kActions);
    for (Action a = 0; a < q.size(); ++a) q[a] = theta.dot(features_.evaluate(s, a));
    return q;
  }

  const FiniteEnvironment* finite_;
  const FeatureMap& features_;
  double epsilon_;
};

}  // namespace

RunResult run_single(const ExperimentConfig& config, const RunSpec& spec) {
  const auto started = std::chrono::steady_clock::now();

  std::shared_ptr<const Environment> env;
  std::shared_ptr<const FiniteEnvironment> finite;
  std::shared_ptr<const FeatureMap> features;
  if (config.environment == "mountain_car") {
    env = std::make_shared<const MountainCar>(config.episode_cap);
    features = std::make_shared<const TileCoder>(config.features.n_tilings,
                                                 config.features.tiles_per_dim, config.features.p,
                                                 config.features.seed);
  } else {
    finite = make_finite_environment(config.environment, config.gamma);
    env = finite;
    features = config.features.name == "tabular"
                   ? tabular_features(finite->mdp().num_states(), finite->mdp().num_actions())
                   : finite->features();
  }
  const std::size_t p = features->dimension();
  const RunPolicies policies(finite.get(), *features, config.epsilon);

  CounterRng env_rng = make_stream(spec.seed, Stream::Environment);
  CounterRng policy_rng = make_stream(spec.seed, Stream::Policy);
  CounterRng sigma_rng = make_stream(spec.seed, Stream::Sigma);

  LearnerState learner(config.theta0 ? DenseVector(*config.theta0) : DenseVector(p));
  LearnerHyper hyper{config.gamma, config.lambda, spec.steps};

  // MSPBE is measured against the schedule's current sigma (its mean for
  // dynamic schedules); oracles are cached per sigma value.
  std::map<double, ModelOracle> oracles;
  auto oracle_for = [&](double sigma) -> const ModelOracle& {
    auto it = oracles.find(sigma);
    if (it == oracles.end()) {
      it = oracles
               .emplace(sigma, ModelOracle(finite->mdp(), finite->target(), finite->behavior(),
                                           features, sigma, config.lambda, config.metric_inverse))
               .first;
    }
    return it->second;
  };
  EmpiricalMoments moments(config.mspbe == MspbeMode::Empirical ? p : 0);

  RunResult result;
  result.spec = spec;
  const bool episodic = env->episodic();
  const auto cap = env->episode_cap();

  std::size_t episode = 0;
  std::size_t total_steps = 0;
  double last_return = kNaN;
  std::size_t last_length = 0;
  double current_sigma = spec.sigma.mean_for(0);

  auto sigma_index = [&]() { return episodic ? episode : total_steps / config.sigma_block_steps; };

  auto make_record = [&](bool diverged) {
    ExperimentRecord r;
    r.episode = episode;
    r.step = total_steps;
    r.sigma = current_sigma;
    r.mspbe = kNaN;
    if (!diverged && learner.theta.all_finite()) {
      if (config.mspbe == MspbeMode::Model) {
        r.mspbe = oracle_for(spec.sigma.mean_for(sigma_index())).mspbe(learner.theta);
      } else if (config.mspbe == MspbeMode::Empirical && moments.count > 0) {
        try {
          r.mspbe = empirical_mspbe(moments, learner.theta, config.ridge, config.metric_inverse);
        } catch (const SingularMatrix&) {
          r.mspbe = kNaN;
        }
      }
    }
    r.episode_return = last_return;
    r.episode_length = last_length;
    r.theta_norm = learner.theta.norm2();
    r.diverged = diverged;
    if (p <= kMaxThetaColumns) r.theta = learner.theta.data();
    return r;
  };

  if (config.record == RecordMode::Steps) result.records.push_back(make_record(false));

  bool stop = false;
  while (!stop) {
    State state = env->reset(env_rng);
    learner.begin_episode();
    learner.episode = episode;
    Action action = sample_index(policies.behavior(state, learner.theta), policy_rng);
    DenseVector phi = features->evaluate(state, action);
    double ep_return = 0.0;
    std::size_t ep_length = 0;

    while (true) {
      const StepResult step = env->step(state, action, env_rng);
      ep_return += step.reward;
      ++ep_length;
      const bool truncated = !step.terminal && cap && ep_length >= *cap;

      FeatureTransition t;
      t.phi = std::move(phi);
      t.reward = step.reward;
      t.terminal = step.terminal;
      Action next_action = 0;
      if (step.terminal) {
        t.phi_next = DenseVector(p);
        t.expected_phi_next = DenseVector(p);
      } else {
        next_action = sample_index(policies.behavior(step.next, learner.theta), policy_rng);
        t.phi_next = features->evaluate(step.next, next_action);
        t.expected_phi_next =
            expected_feature(*features, policies.target(step.next, learner.theta), step.next);
      }

      current_sigma = sigma_schedule_next(spec.sigma, sigma_index(), sigma_rng);
      bool diverged = false;
      if (spec.learner == LearnerKind::Gq) {
        try {
          gq_step(learner, t, current_sigma, hyper);
        } catch (const NonFiniteUpdate&) {
          diverged = true;
        }
      } else {
        semi_gradient_step(learner, t, current_sigma, hyper);
      }
      ++total_steps;
      if (config.mspbe == MspbeMode::Empirical) {
        accumulate(moments, t, learner.trace, current_sigma, config.gamma);
      }
      diverged = diverged || divergence_monitor(learner.theta, config.divergence_threshold) ==
                                 DivergenceStatus::Diverged;
      result.diverged = result.diverged || diverged;

      const bool episode_over = step.terminal || truncated;
      if (episode_over) {
        last_return = ep_return;
        last_length = ep_length;
      }
      const bool out_of_steps = config.n_steps && total_steps >= *config.n_steps;
      const bool out_of_episodes =
          episode_over && config.n_episodes && episode + 1 >= *config.n_episodes;

      if (config.record == RecordMode::Steps) {
        if (total_steps % config.cadence == 0 || (diverged && config.stop_on_divergence)) {
          result.records.push_back(make_record(diverged));
        }
      } else if (episode_over || (diverged && config.stop_on_divergence)) {
        result.records.push_back(make_record(diverged));
      }

      if ((diverged && config.stop_on_divergence) || out_of_steps || out_of_episodes) {
        stop = true;
        if (episode_over) ++episode;
        break;
      }
      if (episode_over) {
        ++episode;
        break;
      }
      state = step.next;
      action = next_action;
      phi = std::move(t.phi_next);
    }
  }

  result.steps_taken = total_steps;
  result.episodes_completed = episode;
  result.final_theta = learner.theta;
  result.final_omega = learner.omega;
  result.wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
  return result;
}

std::size_t resolve_workers(const ExperimentConfig& config) {
  if (const char* env = std::getenv("GQLAB_WORKERS")) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || n < 1) {
      throw ConfigError(std::string("GQLAB_WORKERS must be a positive integer, got '") + env + "'");
    }
    return static_cast<std::size_t>(n);
  }
  if (config.workers > 0) return config.workers;
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
  config.validate();
  const std::vector<RunSpec> specs = expand_runs(config);
  ExperimentResult result;
  result.config = config;
  result.workers_used = std::min(resolve_workers(config), specs.size());
  result.runs.resize(specs.size());

  std::vector<std::exception_ptr> errors(specs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i = next++; i < specs.size(); i = next++) {
      try {
        result.runs[i] = run_single(config, specs[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 1; w < result.workers_used; ++w) pool.emplace_back(worker);
    worker();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Aggregation

namespace {

struct Stats {
  double mean = kNaN;
  double var = kNaN;
};

Stats stats_of(const std::vector<double>& values) {
  std::vector<double> finite;
  for (double v : values) {
    if (std::isfinite(v)) finite.push_back(v);
  }
  Stats s;
  if (finite.empty()) return s;
  s.mean = mean(finite);
  if (finite.size() >= 2) s.var = sample_variance(finite);
  return s;
}

std::size_t tick_of(const ExperimentRecord& r, RecordMode mode) {
  return mode == RecordMode::Episodes ? r.episode : r.step;
}

std::string group_of(const RunSpec& spec) {
  return to_string(spec.learner) + ";" + step_sizes_label(spec.steps);
}

// Tracked metric for variance and case tables: returns for control runs,
// MSPBE otherwise.
bool uses_returns(const std::vector<RunResult>& runs, RecordMode mode) {
  if (mode != RecordMode::Episodes) return false;
  for (const auto& run : runs) {
    for (const auto& r : run.records) {
      if (std::isfinite(r.episode_return)) return true;
    }
  }
  return false;
}

// Mean of the metric over the last `window` records of one run.
double end_window_mean(const RunResult& run, bool returns, std::size_t window) {
  std::vector<double> values;
  for (const auto& r : run.records) {
    const double v = returns ? r.episode_return : r.mspbe;
    if (std::isfinite(v)) values.push_back(v);
  }
  if (values.empty()) return kNaN;
  const std::size_t n = std::min(window, values.size());
  return mean(std::span<const double>(values).last(n));
}

}  // namespace

std::vector<AggregateRow> aggregate(const std::vector<RunResult>& runs, RecordMode mode) {
  // config key -> tick -> records
  std::map<std::string, std::map<std::size_t, std::vector<const ExperimentRecord*>>> groups;
  std::map<std::string, const RunSpec*> specs;
  std::vector<std::string> order;
  for (const auto& run : runs) {
    const std::string key = run.spec.config_key();
    if (!specs.contains(key)) {
      specs[key] = &run.spec;
      order.push_back(key);
    }
    for (const auto& r : run.records) groups[key][tick_of(r, mode)].push_back(&r);
  }

  std::vector<AggregateRow> rows;
  for (const auto& key : order) {
    const RunSpec& spec = *specs[key];
    for (const auto& [tick, records] : groups[key]) {
      AggregateRow row;
      row.config_key = key;
      row.learner = to_string(spec.learner);
      row.sigma_schedule = spec.sigma.label();
      row.step_sizes = step_sizes_label(spec.steps);
      row.tick = tick;
      row.n = records.size();
      auto collect = [&](auto field) {
        std::vector<double> v;
        for (const auto* r : records) v.push_back(field(*r));
        return stats_of(v);
      };
      Stats s = collect([](const ExperimentRecord& r) { return r.sigma; });
      row.mean_sigma = s.mean, row.var_sigma = s.var;
      s = collect([](const ExperimentRecord& r) { return r.mspbe; });
      row.mean_mspbe = s.mean, row.var_mspbe = s.var;
      s = collect([](const ExperimentRecord& r) { return r.episode_return; });
      row.mean_return = s.mean, row.var_return = s.var;
      s = collect([](const ExperimentRecord& r) { return static_cast<double>(r.episode_length); });
      row.mean_length = s.mean, row.var_length = s.var;
      s = collect([](const ExperimentRecord& r) { return r.theta_norm; });
      row.mean_theta_norm = s.mean, row.var_theta_norm = s.var;
      double diverged = 0.0;
      for (const auto* r : records) diverged += r->diverged ? 1.0 : 0.0;
      row.diverged_fraction = diverged / static_cast<double>(records.size());
      rows.push_back(row);
    }
  }
  return rows;
}

std::vector<VarianceRow> summarize_variance(const std::vector<RunResult>& runs, RecordMode mode,
                                            std::size_t window) {
  const bool returns = uses_returns(runs, mode);
  std::map<std::pair<std::string, std::string>, std::vector<const RunResult*>> by_sigma;
  std::vector<std::pair<std::string, std::string>> order;
  for (const auto& run : runs) {
    const auto key = std::make_pair(group_of(run.spec), run.spec.sigma.label());
    if (!by_sigma.contains(key)) order.push_back(key);
    by_sigma[key].push_back(&run);
  }

  std::vector<VarianceRow> out;
  for (const auto& key : order) {
    const auto& members = by_sigma[key];
    if (members.size() < 2) {
      throw InsufficientRuns("variance for sigma " + key.second + " needs at least two runs");
    }
    VarianceRow row;
    row.group = key.first;
    row.sigma_schedule = key.second;
    row.n_runs = members.size();

    std::map<std::size_t, std::vector<double>> per_tick;
    std::vector<double> window_means;
    for (const auto* run : members) {
      for (const auto& r : run->records) {
        const double v = returns ? r.episode_return : r.mspbe;
        if (std::isfinite(v)) per_tick[tick_of(r, mode)].push_back(v);
      }
      const double m = end_window_mean(*run, returns, window);
      if (std::isfinite(m)) window_means.push_back(m);
    }
    for (const auto& [tick, values] : per_tick) {
      row.per_tick_variance.push_back(values.size() >= 2 ? sample_variance(values) : kNaN);
    }
    row.end_window_mean = window_means.empty() ? kNaN : mean(window_means);
    row.end_window_variance = window_means.size() >= 2 ? sample_variance(window_means) : kNaN;
    out.push_back(std::move(row));
  }
  return out;
}

std::vector<CaseReport> case_reports(const std::vector<RunResult>& runs, RecordMode mode,
                                     std::size_t window) {
  const bool returns = uses_returns(runs, mode);
  std::map<std::string, std::map<std::string, std::vector<double>>> groups;
  std::vector<std::string> order;
  for (const auto& run : runs) {
    const std::string g = group_of(run.spec);
    if (!groups.contains(g)) order.push_back(g);
    const double m = end_window_mean(run, returns, window);
    auto& bucket = groups[g][run.spec.sigma.label()];
    // A run without any finite metric (e.g. diverged at once) scores worst.
    bucket.push_back(std::isfinite(m) ? m
                                      : (returns ? -std::numeric_limits<double>::infinity()
                                                 : std::numeric_limits<double>::infinity()));
  }

  std::vector<CaseReport> out;
  for (const auto& g : order) {
    const auto& by_sigma = groups[g];
    if (!by_sigma.contains(kSigmaZeroLabel) || !by_sigma.contains(kSigmaOneLabel)) continue;
    CaseReport report;
    report.group = g;
    report.higher_is_better = returns;
    for (const auto& [label, values] : by_sigma) report.scores[label] = mean(values);
    report.table = classify_cases(report.scores, returns);
    out.push_back(std::move(report));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Files

std::string run_csv_header(std::size_t theta_columns) {
  std::string h =
      "run_id,config_key,learner,step_sizes,sigma_schedule,seed,episode,step,sigma,mspbe,"
      "episode_return,episode_length,theta_norm,diverged";
  for (std::size_t i = 0; i < theta_columns; ++i) h += ",theta_" + std::to_string(i);
  return h;
}

std::string format_run_csv(const RunResult& run, std::size_t theta_columns) {
  std::ostringstream out;
  out << run_csv_header(theta_columns) << '\n';
  const RunSpec& s = run.spec;
  const std::string prefix = std::to_string(s.run_id) + "," + s.config_key() + "," +
                             to_string(s.learner) + "," + step_sizes_label(s.steps) + "," +
                             s.sigma.label() + "," + std::to_string(s.seed) + ",";
  for (const auto& r : run.records) {
    out << prefix << r.episode << ',' << r.step << ',' << fmt17(r.sigma) << ',' << fmt17(r.mspbe)
        << ',' << fmt17(r.episode_return) << ',' << r.episode_length << ','
        << fmt17(r.theta_norm) << ',' << (r.diverged ? 1 : 0);
    for (std::size_t i = 0; i < theta_columns; ++i) {
      out << ',' << fmt17(i < r.theta.size() ? r.theta[i] : kNaN);
    }
    out << '\n';
  }
  return out.str();
}

std::string format_aggregate_csv(const std::vector<AggregateRow>& rows) {
  std::ostringstream out;
  out << "config_key,learner,step_sizes,sigma_schedule,tick,n,mean_sigma,var_sigma,mean_mspbe,"
         "var_mspbe,mean_return,var_return,mean_length,var_length,mean_theta_norm,"
         "var_theta_norm,diverged_fraction\n";
  for (const auto& r : rows) {
    out << r.config_key << ',' << r.learner << ',' << r.step_sizes << ',' << r.sigma_schedule
        << ',' << r.tick << ',' << r.n << ',' << fmt17(r.mean_sigma) << ',' << fmt17(r.var_sigma)
        << ',' << fmt17(r.mean_mspbe) << ',' << fmt17(r.var_mspbe) << ','
        << fmt17(r.mean_return) << ',' << fmt17(r.var_return) << ',' << fmt17(r.mean_length)
        << ',' << fmt17(r.var_length) << ',' << fmt17(r.mean_theta_norm) << ','
        << fmt17(r.var_theta_norm) << ',' << fmt17(r.diverged_fraction) << '\n';
  }
  return out.str();
}

std::string format_summary(const std::vector<RunResult>& runs, RecordMode mode,
                           std::size_t window) {
  std::ostringstream out;
  const bool returns = uses_returns(runs, mode);
  const char* metric = returns ? "return" : "mspbe";

  std::map<std::string, std::vector<const RunResult*>> by_key;
  std::vector<std::string> order;
  for (const auto& run : runs) {
    const auto key = run.spec.config_key();
    if (!by_key.contains(key)) order.push_back(key);
    by_key[key].push_back(&run);
  }
  out << "# runs\n";
  out << "config_key,n_runs,diverged_runs,mean_final_theta_norm,end_window_mean_" << metric << '\n';
  for (const auto& key : order) {
    const auto& members = by_key[key];
    std::size_t diverged = 0;
    std::vector<double> norms;
    std::vector<double> windows;
    for (const auto* run : members) {
      diverged += run->diverged ? 1 : 0;
      norms.push_back(run->records.empty() ? kNaN : run->records.back().theta_norm);
      windows.push_back(end_window_mean(*run, returns, window));
    }
    out << key << ',' << members.size() << ',' << diverged << ',' << fmt17(stats_of(norms).mean)
        << ',' << fmt17(stats_of(windows).mean) << '\n';
  }

  out << "\n# variance (" << metric << ", last " << window << " records per run)\n";
  out << "group,sigma_schedule,n_runs,end_window_mean,end_window_variance\n";
  try {
    for (const auto& row : summarize_variance(runs, mode, window)) {
      out << row.group << ',' << row.sigma_schedule << ',' << row.n_runs << ','
          << fmt17(row.end_window_mean) << ',' << fmt17(row.end_window_variance) << '\n';
    }
  } catch (const InsufficientRuns& e) {
    out << "unavailable: " << e.what() << '\n';
  }

  out << "\n# cases (" << (returns ? "higher" : "lower") << " " << metric << " is better)\n";
  out << "group,sigma_schedule,score,case\n";
  const auto reports = case_reports(runs, mode, window);
  for (const auto& rep : reports) {
    for (const auto& [label, score] : rep.scores) {
      const auto it = rep.table.labels.find(label);
      out << rep.group << ',' << label << ',' << fmt17(score) << ','
          << (it == rep.table.labels.end() ? "extreme" : to_string(it->second)) << '\n';
    }
    out << rep.group << ",percent,I=" << fmt_short(rep.table.percent_i)
        << ";II=" << fmt_short(rep.table.percent_ii) << ";III=" << fmt_short(rep.table.percent_iii)
        << ",\n";
  }
  if (reports.empty()) out << "unavailable: sigma grid lacks 0 and 1\n";
  return out.str();
}

namespace {

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << content;
  if (!out) throw IoError("write failed for " + path.string());
}

std::size_t theta_columns_for(const ExperimentResult& result) {
  for (const auto& run : result.runs) {
    if (!run.final_theta.empty()) {
      return run.final_theta.size() <= kMaxThetaColumns ? run.final_theta.size() : 0;
    }
  }
  return 0;
}

std::string cases_csv(const std::vector<CaseReport>& reports) {
  std::ostringstream out;
  out << "group,sigma_schedule,score,case\n";
  for (const auto& rep : reports) {
    for (const auto& [label, score] : rep.scores) {
      const auto it = rep.table.labels.find(label);
      out << rep.group << ',' << label << ',' << fmt17(score) << ','
          << (it == rep.table.labels.end() ? "extreme" : to_string(it->second)) << '\n';
    }
  }
  return out.str();
}

}  // namespace

void write_experiment(const ExperimentResult& result) {
  namespace fs = std::filesystem;
  const ExperimentConfig& c = result.config;
  const fs::path dir = c.output;
  std::error_code ec;
  fs::create_directories(dir / "runs", ec);
  if (ec) throw IoError("cannot create " + (dir / "runs").string() + ": " + ec.message());

  const std::size_t theta_columns = theta_columns_for(result);
  for (const auto& run : result.runs) {
    char name[32];
    std::snprintf(name, sizeof name, "run_%05zu.csv", run.spec.run_id);
    write_file(dir / "runs" / name, format_run_csv(run, theta_columns));
  }
  write_file(dir / "aggregate.csv", format_aggregate_csv(aggregate(result.runs, c.record)));
  write_file(dir / "summary.txt", format_summary(result.runs, c.record, c.summary_window));
  write_file(dir / "cases.csv", cases_csv(case_reports(result.runs, c.record, c.summary_window)));

  json meta;
  const std::time_t now = std::time(nullptr);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  meta["name"] = c.name;
  meta["written_at"] = stamp;
  meta["environment"] = c.environment;
  meta["record_mode"] = c.record == RecordMode::Episodes ? "episodes" : "steps";
  meta["mspbe"] = to_string(c.mspbe);
  meta["metric_inverse"] = c.metric_inverse == MetricInverse::Pseudo ? "pseudo" : "strict";
  meta["ridge"] = c.ridge;
  meta["ridge_used"] = c.mspbe == MspbeMode::Empirical && c.ridge > 0.0;
  meta["workers"] = result.workers_used;
  meta["summary_window"] = c.summary_window;
  json runs = json::array();
  for (const auto& run : result.runs) {
    runs.push_back({{"run_id", run.spec.run_id},
                    {"config_key", run.spec.config_key()},
                    {"seed", run.spec.seed},
                    {"steps", run.steps_taken},
                    {"episodes", run.episodes_completed},
                    {"diverged", run.diverged},
                    {"wall_clock_ms", run.wall_ms}});
  }
  meta["runs"] = std::move(runs);
  write_file(dir / "metadata.json", meta.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Reading back

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s) {
  if (s == "nan" || s == "-nan") return kNaN;
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw std::invalid_argument(s);
  return v;
}

}  // namespace

std::vector<RunResult> read_run_csvs(const std::filesystem::path& dir, RecordMode* mode) {
  namespace fs = std::filesystem;
  fs::path runs_dir = fs::exists(dir / "runs") ? dir / "runs" : dir;
  if (!fs::is_directory(runs_dir)) throw IoError("not a directory: " + runs_dir.string());

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(runs_dir)) {
    const auto name = entry.path().filename().string();
    if (entry.is_regular_file() && name.starts_with("run_") && name.ends_with(".csv")) {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("no run_*.csv files in " + runs_dir.string());

  const std::string expected = run_csv_header(0);
  std::vector<RunResult> runs;
  bool all_returns_finite = true;
  for (const auto& file : files) {
    std::ifstream in(file);
    if (!in) throw IoError("cannot read " + file.string());
    std::string line;
    std::getline(in, line);
    if (!line.starts_with(expected)) throw IoError(file.string() + ": unexpected CSV header");
    const std::size_t columns = split_csv_line(line).size();
    const std::size_t theta_columns = columns - split_csv_line(expected).size();

    RunResult run;
    bool have_spec = false;
    std::size_t line_no = 1;
    try {
      while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != columns) throw std::invalid_argument("column count");
        if (!have_spec) {
          run.spec.run_id = std::stoul(f[0]);
          run.spec.learner = learner_from_string(f[2]);
          run.spec.steps = parse_step_sizes_label(f[3]);
          run.spec.sigma = parse_sigma_label(f[4]);
          run.spec.seed = std::stoull(f[5]);
          have_spec = true;
        }
        ExperimentRecord r;
        r.episode = std::stoul(f[6]);
        r.step = std::stoul(f[7]);
        r.sigma = parse_double(f[8]);
        r.mspbe = parse_double(f[9]);
        r.episode_return = parse_double(f[10]);
        r.episode_length = std::stoul(f[11]);
        r.theta_norm = parse_double(f[12]);
        r.diverged = f[13] == "1";
        for (std::size_t i = 0; i < theta_columns; ++i) r.theta.push_back(parse_double(f[14 + i]));
        all_returns_finite = all_returns_finite && std::isfinite(r.episode_return);
        run.diverged = run.diverged || r.diverged;
        run.records.push_back(std::move(r));
      }
    } catch (const std::exception& e) {
      throw IoError(file.string() + ":" + std::to_string(line_no) + ": malformed row (" +
                    e.what() + ")");
    }
    if (!run.records.empty()) {
      const auto& last = run.records.back();
      run.steps_taken = last.step;
      run.episodes_completed = last.episode;
      if (!last.theta.empty()) {
        bool finite = true;
        for (double v : last.theta) finite = finite && std::isfinite(v);
        if (finite) run.final_theta = DenseVector(last.theta);
      }
    }
    runs.push_back(std::move(run));
  }

  if (mode) {
    *mode = all_returns_finite ? RecordMode::Episodes : RecordMode::Steps;
    std::ifstream meta_in(dir / "metadata.json");
    if (meta_in) {
      try {
        const json meta = json::parse(meta_in);
        if (meta.contains("record_mode")) {
          *mode = meta["record_mode"] == "episodes" ? RecordMode::Episodes : RecordMode::Steps;
        }
      } catch (const json::exception&) {
        // fall back to the inferred mode
      }
    }
  }
  return runs;
}

std::string summarize_directory(const std::filesystem::path& dir, std::size_t window) {
  RecordMode mode = RecordMode::Steps;
  const auto runs = read_run_csvs(dir, &mode);
  return format_summary(runs, mode, window);
}

}  // namespace gqlab
