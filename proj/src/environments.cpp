#include "gqlab/environments.hpp"

#include <algorithm>
#include <cmath>

#include "gqlab/errors.hpp"

namespace gqlab {

namespace {

StateIndex finite_state(const State& state) {
  if (const auto* s = std::get_if<StateIndex>(&state)) return *s;
  throw InvalidArgument("finite environment received a continuous state");
}

}  // namespace

std::size_t sample_index(std::span<const double> probs, CounterRng& rng) {
  const double u = rng.uniform();
  double cumulative = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    cumulative += probs[i];
    last_positive = i;
    if (u < cumulative) return i;
  }
  return last_positive;  // rounding left u just above the cumulative sum
}

FiniteEnvironment::FiniteEnvironment(std::string name, FiniteMdp mdp, TabularPolicy target,
                                     TabularPolicy behavior,
                                     std::shared_ptr<const FeatureMap> features)
    : name_(std::move(name)),
      mdp_(std::move(mdp)),
      target_(std::move(target)),
      behavior_(std::move(behavior)),
      features_(std::move(features)) {
  if (features_ && features_->is_finite() &&
      (features_->num_states() != mdp_.num_states() ||
       features_->num_actions() != mdp_.num_actions())) {
    throw DimensionMismatch(name_ + ": feature map does not fit the MDP");
  }
}

State FiniteEnvironment::reset(CounterRng& rng) const {
  return State{sample_index(mdp_.initial().values(), rng)};
}

StepResult FiniteEnvironment::step(const State& state, Action action, CounterRng& rng) const {
  const StateIndex s = finite_state(state);
  if (s >= mdp_.num_states() || action >= mdp_.num_actions()) {
    throw InvalidArgument(name_ + ": state or action out of range");
  }
  const StateIndex next = sample_index(mdp_.next_distribution(s, action), rng);
  return {State{next}, mdp_.reward(s, action), mdp_.is_terminal(next)};
}

bool FiniteEnvironment::is_terminal(const State& state) const {
  return mdp_.is_terminal(finite_state(state));
}

std::shared_ptr<const FiniteEnvironment> counterexample_env(double gamma) {
  // [s][a][s'] with a = left, right
  std::vector<double> p = {1.0, 0.0,  0.0, 1.0,   // state 1
                           1.0, 0.0,  0.0, 1.0};  // state 2
  FiniteMdp mdp(2, 2, std::move(p), DenseMatrix(2, 2), gamma);
  return std::make_shared<const FiniteEnvironment>(
      "counterexample", std::move(mdp), TabularPolicy::deterministic(2, 2, 1),
      TabularPolicy::uniform(2, 2), counterexample_features());
}

std::shared_ptr<const FiniteEnvironment> baird_star_env(double gamma) {
  constexpr std::size_t kStates = 7;
  std::vector<double> p(kStates * 2 * kStates, 0.0);
  for (std::size_t s = 0; s < kStates; ++s) {
    for (std::size_t s2 = 0; s2 < 6; ++s2) p[(s * 2 + 0) * kStates + s2] = 1.0 / 6.0;
    p[(s * 2 + 1) * kStates + 6] = 1.0;
  }
  // 1/6 does not sum to exactly one in floating point; absorb the rounding.
  for (std::size_t s = 0; s < kStates; ++s) {
    double partial = 0.0;
    for (std::size_t s2 = 0; s2 < 5; ++s2) partial += p[(s * 2) * kStates + s2];
    p[(s * 2) * kStates + 5] = 1.0 - partial;
  }
  FiniteMdp mdp(kStates, 2, std::move(p), DenseMatrix(kStates, 2), gamma);
  return std::make_shared<const FiniteEnvironment>(
      "baird", std::move(mdp), TabularPolicy::deterministic(kStates, 2, 1),
      TabularPolicy::constant(kStates, {6.0 / 7.0, 1.0 - 6.0 / 7.0}), baird_features());
}

std::shared_ptr<const FiniteEnvironment> boyan_chain_env(double gamma) {
  constexpr std::size_t kStates = 14;
  std::vector<double> p(kStates * kStates, 0.0);
  DenseMatrix reward(kStates, 1);
  for (std::size_t s = 0; s < 12; ++s) {
    p[s * kStates + s + 1] = 0.5;
    p[s * kStates + s + 2] = 0.5;
    reward(s, 0) = -3.0;
  }
  p[12 * kStates + 13] = 1.0;
  reward(12, 0) = -2.0;
  p[13 * kStates + 13] = 1.0;

  std::vector<bool> terminal(kStates, false);
  terminal[13] = true;
  FiniteMdp mdp(kStates, 1, std::move(p), std::move(reward), gamma, std::move(terminal),
                DenseVector::unit(kStates, 0));
  auto policy = TabularPolicy::deterministic(kStates, 1, 0);
  return std::make_shared<const FiniteEnvironment>("boyan", std::move(mdp), policy, policy,
                                                   boyan_features());
}

std::shared_ptr<const FiniteEnvironment> make_finite_environment(const std::string& name,
                                                                 double gamma) {
  if (name == "counterexample") return counterexample_env(gamma);
  if (name == "baird") return baird_star_env(gamma);
  if (name == "boyan") return boyan_chain_env(gamma);
  throw ConfigError("unknown finite environment '" + name + "'");
}

State MountainCar::reset(CounterRng& rng) const {
  return State{MountainCarState{-0.6 + 0.2 * rng.uniform(), 0.0}};
}

MountainCarState MountainCar::advance(const MountainCarState& state, Action action) {
  if (action > 2) throw InvalidArgument("mountain car: action out of range");
  const double push = static_cast<double>(action) - 1.0;
  double v = state.velocity + 0.001 * push - 0.0025 * std::cos(3.0 * state.position);
  v = std::clamp(v, -kMaxSpeed, kMaxSpeed);
  double x = state.position + v;
  x = std::clamp(x, kMinPosition, kMaxPosition);
  if (x == kMinPosition && v < 0.0) v = 0.0;
  return {x, v};
}

StepResult MountainCar::step(const State& state, Action action, CounterRng&) const {
  const auto* mc = std::get_if<MountainCarState>(&state);
  if (mc == nullptr) throw InvalidArgument("mountain car received a finite state");
  const MountainCarState next = advance(*mc, action);
  return {State{next}, -1.0, next.position >= kMaxPosition};
}

bool MountainCar::is_terminal(const State& state) const {
  const auto* mc = std::get_if<MountainCarState>(&state);
  return mc != nullptr && mc->position >= kMaxPosition;
}

}  // namespace gqlab
