#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>

#include "gqlab/features.hpp"
#include "gqlab/mdp.hpp"
#include "gqlab/rng.hpp"
#include "gqlab/types.hpp"

namespace gqlab {

struct StepResult {
  State next;
  double reward = 0.0;
  bool terminal = false;
};

/// Samplable environment. Instances are stateless; all randomness comes
/// from the stream passed in, so step is a pure function of
/// (state, action, stream position).
class Environment {
 public:
  virtual ~Environment() = default;

  virtual std::string name() const = 0;
  virtual std::size_t num_actions() const = 0;
  virtual State reset(CounterRng& rng) const = 0;
  virtual StepResult step(const State& state, Action action, CounterRng& rng) const = 0;
  virtual bool is_terminal(const State& state) const = 0;
  /// True when episodes end by reaching a terminal state.
  virtual bool episodic() const = 0;
  /// Steps after which an episode is truncated (not terminated).
  virtual std::optional<std::size_t> episode_cap() const { return std::nullopt; }
};

/// Environment sampled from an explicit FiniteMdp. Also carries the
/// benchmark's default target/behaviour policies and feature map.
class FiniteEnvironment final : public Environment {
 public:
  FiniteEnvironment(std::string name, FiniteMdp mdp, TabularPolicy target, TabularPolicy behavior,
                    std::shared_ptr<const FeatureMap> features);

  std::string name() const override { return name_; }
  std::size_t num_actions() const override { return mdp_.num_actions(); }
  State reset(CounterRng& rng) const override;
  StepResult step(const State& state, Action action, CounterRng& rng) const override;
  bool is_terminal(const State& state) const override;
  bool episodic() const override { return mdp_.has_terminal_states(); }

  const FiniteMdp& mdp() const { return mdp_; }
  const TabularPolicy& target() const { return target_; }
  const TabularPolicy& behavior() const { return behavior_; }
  std::shared_ptr<const FeatureMap> features() const { return features_; }

 private:
  std::string name_;
  FiniteMdp mdp_;
  TabularPolicy target_;
  TabularPolicy behavior_;
  std::shared_ptr<const FeatureMap> features_;
};

/// Two states {1, 2}, actions {left = 0, right = 1}. Right moves 1 -> 2 and
/// stays at 2; left moves 2 -> 1 and stays at 1. Zero rewards, continuing.
/// pi(right) = 1, mu(right) = 0.5.
std::shared_ptr<const FiniteEnvironment> counterexample_env(double gamma = 0.99);

/// Baird Star: 7 states, actions {dashed = 0, solid = 1}. Dashed jumps to
/// s_1..s_6 uniformly, solid to s_7. Zero rewards, continuing, uniform start.
/// mu(dashed) = 6/7, pi(solid) = 1.
std::shared_ptr<const FiniteEnvironment> baird_star_env(double gamma = 0.99);

/// Boyan chain: 14 states, one action, start at s_1, episode ends at s_14.
std::shared_ptr<const FiniteEnvironment> boyan_chain_env(double gamma = 0.99);

/// Builds one of "counterexample", "baird", "boyan".
std::shared_ptr<const FiniteEnvironment> make_finite_environment(const std::string& name,
                                                                 double gamma);

/// Mountain Car with the textbook dynamics:
///   v' = clamp(v + 0.001 a - 0.0025 cos(3x), -0.07, 0.07)
///   x' = clamp(x + v', -1.2, 0.5), and v' = 0 when x' hits -1.2
/// Actions 0, 1, 2 push with a = -1, 0, +1. Reward -1 per step; terminal
/// once x' >= 0.5. Start x ~ U[-0.6, -0.4), v = 0.
class MountainCar final : public Environment {
 public:
  static constexpr double kMinPosition = -1.2;
  static constexpr double kMaxPosition = 0.5;
  static constexpr double kMaxSpeed = 0.07;
  static constexpr std::size_t kDefaultCap = 5000;

  explicit MountainCar(std::size_t cap = kDefaultCap) : cap_(cap) {}

  std::string name() const override { return "mountain_car"; }
  std::size_t num_actions() const override { return 3; }
  State reset(CounterRng& rng) const override;
  StepResult step(const State& state, Action action, CounterRng& rng) const override;
  bool is_terminal(const State& state) const override;
  bool episodic() const override { return true; }
  std::optional<std::size_t> episode_cap() const override { return cap_; }

  /// Deterministic dynamics.
  static MountainCarState advance(const MountainCarState& state, Action action);

 private:
  std::size_t cap_;
};

/// Index drawn from `probs` by inverting the CDF at one uniform draw.
std::size_t sample_index(std::span<const double> probs, CounterRng& rng);

}  // namespace gqlab
