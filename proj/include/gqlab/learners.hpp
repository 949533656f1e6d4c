#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gqlab/features.hpp"
#include "gqlab/linalg.hpp"
#include "gqlab/rng.hpp"
#include "gqlab/types.hpp"

namespace gqlab {

class ModelOracle;

/// One observed transition together with the target policy's action
/// probabilities at the next state.
struct TransitionSample {
  State state;
  Action action = 0;
  double reward = 0.0;
  State next_state;
  std::optional<Action> next_action;  ///< A_{k+1}; needed when sigma > 0
  bool terminal = false;              ///< next_state ends the episode
  std::vector<double> next_target_probs;
};

/// A transition mapped through a feature map. Bootstrap vectors are zero
/// at terminal transitions; phi_next is empty when no next action was given.
struct FeatureTransition {
  DenseVector phi;
  double reward = 0.0;
  DenseVector phi_next;
  DenseVector expected_phi_next;
  bool terminal = false;
};

FeatureTransition featurize(const TransitionSample& sample, const FeatureMap& features);

struct LearnerState {
  DenseVector theta;
  DenseVector omega;
  DenseVector trace;
  std::size_t step = 0;     ///< updates applied so far
  std::size_t episode = 0;

  LearnerState() = default;
  explicit LearnerState(DenseVector theta0);

  /// Zeroes the trace; call before the first step of every episode.
  void begin_episode();
};

struct StepSizes {
  enum class Mode { Constant, RobbinsMonro };

  Mode mode = Mode::Constant;
  double alpha = 0.01;  ///< constant alpha, or the scale a in a / (k+1)^alpha_exponent
  double eta = 1.0;     ///< constant eta, or eta_0 in eta_0 / (k+1)^eta_exponent
  double alpha_exponent = 0.6;
  double eta_exponent = 0.05;

  static StepSizes constant(double alpha, double eta);
  static StepSizes robbins_monro(double a, double eta0, double alpha_exponent = 0.6,
                                 double eta_exponent = 0.05);

  double alpha_at(std::size_t k) const;
  double eta_at(std::size_t k) const;
  /// beta_k = eta_k * alpha_k
  double beta_at(std::size_t k) const { return eta_at(k) * alpha_at(k); }
  void validate() const;
};

struct LearnerHyper {
  double gamma = 0.99;
  double lambda = 0.0;
  StepSizes steps;
};

/// lambda * gamma * e + phi
DenseVector update_trace(const DenseVector& e, const DenseVector& phi, double gamma, double lambda);

/// R + gamma (sigma theta^T phi' + (1 - sigma) theta^T E_pi phi') - theta^T phi.
/// Throws MissingNextAction when sigma > 0 and phi_next is absent.
double delta_sigma(const DenseVector& theta, const FeatureTransition& t, double sigma,
                   double gamma);
double delta_sigma(const DenseVector& theta, const TransitionSample& sample, double sigma,
                   double gamma, const FeatureMap& features);

/// Backward-view semi-gradient Q(sigma, lambda): e <- lambda gamma e + phi,
/// theta <- theta + alpha delta e. May diverge; never throws on overflow.
void semi_gradient_step(LearnerState& state, const FeatureTransition& t, double sigma,
                        const LearnerHyper& hyper);

/// One GQ(sigma, lambda) step in the order trace, delta, v, theta, omega.
/// The correction gamma v_sigma omega is applied as u (e^T omega) with
///   u = (1 - sigma)(E_pi phi' - lambda phi') + sigma (1 - lambda) phi'
/// so no p x p object is formed. Throws NonFiniteUpdate on overflow.
void gq_step(LearnerState& state, const FeatureTransition& t, double sigma,
             const LearnerHyper& hyper);

/// Forward view with theta frozen: sum_k alpha (G_k^lambda - theta^T phi_k) phi_k
/// where G_k^lambda - theta^T phi_k = sum_{t >= k} (lambda gamma)^{t-k} delta_t.
/// `sigmas` holds the sigma used at each step (one value broadcasts).
DenseVector offline_lambda_return_update(std::span<const FeatureTransition> episode,
                                         const DenseVector& theta, std::span<const double> sigmas,
                                         const LearnerHyper& hyper);

/// Backward view with theta frozen: sum_k alpha delta_k e_k.
DenseVector backward_total_update(std::span<const FeatureTransition> episode,
                                  const DenseVector& theta, std::span<const double> sigmas,
                                  const LearnerHyper& hyper);

/// Exact E[delta e] - gamma E[v_sigma] omega under the behaviour chain.
DenseVector expected_gq_direction(const ModelOracle& oracle, const DenseVector& theta,
                                  const DenseVector& omega);

struct SigmaSchedule {
  enum class Mode { Fixed, Dynamic };

  Mode mode = Mode::Fixed;
  double fixed_value = 0.0;
  double mu_start = 0.02;
  double mu_end = 0.98;
  double mu_step = 0.02;
  double noise_sd = 0.01;

  static SigmaSchedule fixed(double sigma);
  static SigmaSchedule dynamic();

  /// Number of distinct means the dynamic mode cycles through.
  std::size_t levels() const;
  /// Mean of the Gaussian used in `episode`.
  double mean_for(std::size_t episode) const;
  std::string label() const;
  void validate() const;
};

/// Fixed: the constant. Dynamic: clamp(N(mu_e, noise_sd^2), 0, 1) where mu_e
/// advances by mu_step each episode and wraps after mu_end.
double sigma_schedule_next(const SigmaSchedule& schedule, std::size_t episode, CounterRng& rng);

/// Action distributions built from action values; ties share mass.
std::vector<double> greedy_probs(std::span<const double> q);
std::vector<double> epsilon_greedy_probs(std::span<const double> q, double epsilon);

}  // namespace gqlab
