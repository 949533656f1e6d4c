#include "gqlab/learners.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "gqlab/errors.hpp"
#include "gqlab/mdp.hpp"

namespace gqlab {

namespace {

void require_len(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw DimensionMismatch(std::string(what) + ": " + std::to_string(a) + " vs " +
                            std::to_string(b));
  }
}

double sigma_at(std::span<const double> sigmas, std::size_t k) {
  if (sigmas.empty()) throw InvalidArgument("no sigma given");
  return sigmas.size() == 1 ? sigmas[0] : sigmas[k];
}

// Bootstrap discount of a transition; zero when it ends the episode.
double bootstrap(const FeatureTransition& t, double gamma) { return t.terminal ? 0.0 : gamma; }

}  // namespace

FeatureTransition featurize(const TransitionSample& sample, const FeatureMap& features) {
  FeatureTransition t;
  t.phi = features.evaluate(sample.state, sample.action);
  t.reward = sample.reward;
  t.terminal = sample.terminal;
  const std::size_t p = features.dimension();
  if (sample.terminal) {
    t.phi_next = DenseVector(p);
    t.expected_phi_next = DenseVector(p);
    return t;
  }
  if (sample.next_action) t.phi_next = features.evaluate(sample.next_state, *sample.next_action);
  if (!sample.next_target_probs.empty()) {
    t.expected_phi_next = expected_feature(features, sample.next_target_probs, sample.next_state);
  } else {
    t.expected_phi_next = DenseVector(p);
  }
  return t;
}

LearnerState::LearnerState(DenseVector theta0)
    : theta(std::move(theta0)), omega(theta.size()), trace(theta.size()) {}

void LearnerState::begin_episode() { trace.set_zero(); }

// ---------------------------------------------------------------------------
// Step sizes

StepSizes StepSizes::constant(double alpha, double eta) {
  StepSizes s;
  s.mode = Mode::Constant;
  s.alpha = alpha;
  s.eta = eta;
  s.validate();
  return s;
}

StepSizes StepSizes::robbins_monro(double a, double eta0, double alpha_exponent,
                                   double eta_exponent) {
  StepSizes s;
  s.mode = Mode::RobbinsMonro;
  s.alpha = a;
  s.eta = eta0;
  s.alpha_exponent = alpha_exponent;
  s.eta_exponent = eta_exponent;
  s.validate();
  return s;
}

void StepSizes::validate() const {
  if (!(alpha > 0.0) || !(eta > 0.0)) throw InvalidArgument("step sizes must be positive");
  if (mode == Mode::RobbinsMonro) {
    // sum alpha_k = sum beta_k = inf and sum alpha_k^2 < inf
    if (!(alpha_exponent > 0.5 && alpha_exponent <= 1.0)) {
      throw InvalidArgument("alpha exponent must lie in (0.5, 1]");
    }
    if (!(eta_exponent >= 0.0 && alpha_exponent + eta_exponent <= 1.0)) {
      throw InvalidArgument("alpha and eta exponents must sum to at most 1");
    }
  }
}

double StepSizes::alpha_at(std::size_t k) const {
  if (mode == Mode::Constant) return alpha;
  return alpha / std::pow(static_cast<double>(k) + 1.0, alpha_exponent);
}

double StepSizes::eta_at(std::size_t k) const {
  if (mode == Mode::Constant) return eta;
  return eta / std::pow(static_cast<double>(k) + 1.0, eta_exponent);
}

// ---------------------------------------------------------------------------
// Core updates

DenseVector update_trace(const DenseVector& e, const DenseVector& phi, double gamma,
                         double lambda) {
  require_len(e.size(), phi.size(), "update_trace");
  DenseVector out = phi;
  out.axpy(lambda * gamma, e);
  return out;
}

double delta_sigma(const DenseVector& theta, const FeatureTransition& t, double sigma,
                   double gamma) {
  require_len(theta.size(), t.phi.size(), "delta_sigma");
  double target = 0.0;
  if (!t.terminal) {
    if (sigma > 0.0) {
      if (t.phi_next.empty()) throw MissingNextAction("sigma > 0 needs the next action");
      target += sigma * theta.dot(t.phi_next);
    }
    if (sigma < 1.0) target += (1.0 - sigma) * theta.dot(t.expected_phi_next);
  }
  return t.reward + gamma * target - theta.dot(t.phi);
}

double delta_sigma(const DenseVector& theta, const TransitionSample& sample, double sigma,
                   double gamma, const FeatureMap& features) {
  if (sigma > 0.0 && !sample.terminal && !sample.next_action) {
    throw MissingNextAction("sigma > 0 needs the next action");
  }
  return delta_sigma(theta, featurize(sample, features), sigma, gamma);
}

void semi_gradient_step(LearnerState& state, const FeatureTransition& t, double sigma,
                        const LearnerHyper& hyper) {
  require_len(state.theta.size(), t.phi.size(), "semi_gradient_step");
  // e_k = lambda gamma e_{k-1} + phi_k
  state.trace *= hyper.lambda * hyper.gamma;
  state.trace += t.phi;
  const double delta = delta_sigma(state.theta, t, sigma, hyper.gamma);
  state.theta.axpy(hyper.steps.alpha_at(state.step) * delta, state.trace);
  ++state.step;
}

void gq_step(LearnerState& state, const FeatureTransition& t, double sigma,
             const LearnerHyper& hyper) {
  require_len(state.theta.size(), t.phi.size(), "gq_step");
  const double gamma = hyper.gamma;
  const double lambda = hyper.lambda;
  const double alpha = hyper.steps.alpha_at(state.step);
  const double beta = hyper.steps.beta_at(state.step);

  state.trace *= lambda * gamma;
  state.trace += t.phi;
  const double delta = delta_sigma(state.theta, t, sigma, gamma);

  // gamma v_sigma omega = gamma u (e^T omega)
  const double e_omega = state.trace.dot(state.omega);
  const double g = bootstrap(t, gamma);
  const std::size_t p = state.theta.size();
  const bool has_next = !t.phi_next.empty();
  if (!t.terminal && sigma > 0.0 && !has_next) {
    throw MissingNextAction("sigma > 0 needs the next action");
  }
  const double phi_omega = t.phi.dot(state.omega);

  for (std::size_t i = 0; i < p; ++i) {
    double u = 0.0;
    if (g != 0.0) {
      const double next = has_next ? t.phi_next[i] : 0.0;
      u = (1.0 - sigma) * (t.expected_phi_next[i] - lambda * next) + sigma * (1.0 - lambda) * next;
    }
    state.theta[i] += alpha * (delta * state.trace[i] - g * u * e_omega);
  }
  for (std::size_t i = 0; i < p; ++i) {
    state.omega[i] += beta * (delta * state.trace[i] - t.phi[i] * phi_omega);
  }
  ++state.step;
  if (!state.theta.all_finite() || !state.omega.all_finite()) {
    throw NonFiniteUpdate("GQ update produced a non-finite value at step " +
                          std::to_string(state.step));
  }
}

DenseVector offline_lambda_return_update(std::span<const FeatureTransition> episode,
                                         const DenseVector& theta, std::span<const double> sigmas,
                                         const LearnerHyper& hyper) {
  const std::size_t n = episode.size();
  std::vector<double> deltas(n);
  for (std::size_t t = 0; t < n; ++t) {
    deltas[t] = delta_sigma(theta, episode[t], sigma_at(sigmas, t), hyper.gamma);
  }
  DenseVector total(theta.size());
  for (std::size_t k = 0; k < n; ++k) {
    // G_k^lambda - theta^T phi_k = sum_{t >= k} (lambda gamma)^{t-k} delta_t,
    // truncated where the episode terminates.
    double lambda_error = 0.0;
    double weight = 1.0;
    for (std::size_t t = k; t < n; ++t) {
      lambda_error += weight * deltas[t];
      if (episode[t].terminal) break;
      weight *= hyper.lambda * hyper.gamma;
    }
    total.axpy(hyper.steps.alpha_at(0) * lambda_error, episode[k].phi);
  }
  return total;
}

DenseVector backward_total_update(std::span<const FeatureTransition> episode,
                                  const DenseVector& theta, std::span<const double> sigmas,
                                  const LearnerHyper& hyper) {
  DenseVector total(theta.size());
  DenseVector trace(theta.size());
  for (std::size_t k = 0; k < episode.size(); ++k) {
    trace = update_trace(trace, episode[k].phi, hyper.gamma, hyper.lambda);
    const double delta = delta_sigma(theta, episode[k], sigma_at(sigmas, k), hyper.gamma);
    total.axpy(hyper.steps.alpha_at(0) * delta, trace);
    if (episode[k].terminal) trace.set_zero();
  }
  return total;
}

DenseVector expected_gq_direction(const ModelOracle& oracle, const DenseVector& theta,
                                  const DenseVector& omega) {
  require_len(theta.size(), oracle.dimension(), "expected_gq_direction theta");
  require_len(omega.size(), oracle.dimension(), "expected_gq_direction omega");
  return oracle.expected_td_update(theta) - oracle.expected_correction_matrix() * omega;
}

// ---------------------------------------------------------------------------
// Sigma schedules

SigmaSchedule SigmaSchedule::fixed(double sigma) {
  SigmaSchedule s;
  s.mode = Mode::Fixed;
  s.fixed_value = sigma;
  s.validate();
  return s;
}

SigmaSchedule SigmaSchedule::dynamic() {
  SigmaSchedule s;
  s.mode = Mode::Dynamic;
  return s;
}

void SigmaSchedule::validate() const {
  if (mode == Mode::Fixed) {
    if (!(fixed_value >= 0.0 && fixed_value <= 1.0)) throw InvalidArgument("sigma must lie in [0, 1]");
    return;
  }
  if (!(mu_step > 0.0) || !(mu_end >= mu_start) || !(noise_sd >= 0.0)) {
    throw InvalidArgument("dynamic sigma: need mu_step > 0, mu_end >= mu_start, noise_sd >= 0");
  }
}

std::size_t SigmaSchedule::levels() const {
  if (mode == Mode::Fixed) return 1;
  return static_cast<std::size_t>(std::llround((mu_end - mu_start) / mu_step)) + 1;
}

double SigmaSchedule::mean_for(std::size_t episode) const {
  if (mode == Mode::Fixed) return fixed_value;
  return mu_start + static_cast<double>(episode % levels()) * mu_step;
}

std::string SigmaSchedule::label() const {
  if (mode == Mode::Dynamic) return "dynamic";
  std::ostringstream out;
  out << fixed_value;
  return out.str();
}

double sigma_schedule_next(const SigmaSchedule& schedule, std::size_t episode, CounterRng& rng) {
  if (schedule.mode == SigmaSchedule::Mode::Fixed) return schedule.fixed_value;
  const double mu = schedule.mean_for(episode);
  if (schedule.noise_sd == 0.0) return std::clamp(mu, 0.0, 1.0);
  std::normal_distribution<double> noise(0.0, schedule.noise_sd);
  return std::clamp(mu + noise(rng), 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Policies over action values

std::vector<double> greedy_probs(std::span<const double> q) {
  if (q.empty()) throw InvalidArgument("greedy_probs: no actions");
  const double best = *std::max_element(q.begin(), q.end());
  std::vector<double> probs(q.size(), 0.0);
  std::size_t ties = 0;
  for (std::size_t a = 0; a < q.size(); ++a) ties += q[a] == best ? 1 : 0;
  for (std::size_t a = 0; a < q.size(); ++a) {
    if (q[a] == best) probs[a] = 1.0 / static_cast<double>(ties);
  }
  return probs;
}

std::vector<double> epsilon_greedy_probs(std::span<const double> q, double epsilon) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw InvalidArgument("epsilon must lie in [0, 1]");
  std::vector<double> probs = greedy_probs(q);
  const double floor = epsilon / static_cast<double>(q.size());
  for (double& p : probs) p = (1.0 - epsilon) * p + floor;
  return probs;
}

}  // namespace gqlab
