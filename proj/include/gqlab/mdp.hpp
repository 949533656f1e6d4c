#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gqlab/features.hpp"
#include "gqlab/linalg.hpp"
#include "gqlab/types.hpp"

namespace gqlab {

/// Finite MDP with expected rewards R[s][a] and kernel P[s][a][s'].
///
/// Terminal states end an episode. For model-based quantities an episodic
/// MDP is embedded in an ergodic chain: reaching a terminal state restarts
/// from the initial distribution, and the transition into the terminal
/// state contributes no bootstrap (its discount is cut to zero).
class FiniteMdp {
 public:
  /// transition is indexed [s][a][s'] flattened row-major.
  FiniteMdp(std::size_t n_states, std::size_t n_actions, std::vector<double> transition,
            DenseMatrix reward, double gamma, std::vector<bool> terminal = {},
            std::optional<DenseVector> initial = std::nullopt);

  std::size_t num_states() const { return n_states_; }
  std::size_t num_actions() const { return n_actions_; }
  std::size_t num_pairs() const { return n_states_ * n_actions_; }
  double gamma() const { return gamma_; }

  double transition(StateIndex s, Action a, StateIndex next) const {
    return transition_[(s * n_actions_ + a) * n_states_ + next];
  }
  std::span<const double> next_distribution(StateIndex s, Action a) const {
    return {transition_.data() + (s * n_actions_ + a) * n_states_, n_states_};
  }
  double reward(StateIndex s, Action a) const { return reward_(s, a); }
  const DenseMatrix& reward_table() const { return reward_; }
  bool is_terminal(StateIndex s) const { return terminal_[s]; }
  bool has_terminal_states() const;
  const DenseVector& initial() const { return initial_; }

  FiniteMdp with_gamma(double gamma) const;

 private:
  std::size_t n_states_;
  std::size_t n_actions_;
  std::vector<double> transition_;
  DenseMatrix reward_;
  double gamma_;
  std::vector<bool> terminal_;
  DenseVector initial_;
};

/// pi[s][a]; rows are probability distributions.
class TabularPolicy {
 public:
  explicit TabularPolicy(DenseMatrix probs);

  static TabularPolicy uniform(std::size_t n_states, std::size_t n_actions);
  static TabularPolicy deterministic(std::size_t n_states, std::size_t n_actions, Action action);
  /// Same distribution over actions in every state.
  static TabularPolicy constant(std::size_t n_states, std::vector<double> action_probs);

  double prob(StateIndex s, Action a) const { return probs_(s, a); }
  std::span<const double> row(StateIndex s) const { return probs_.row(s); }
  std::size_t num_states() const { return probs_.rows(); }
  std::size_t num_actions() const { return probs_.cols(); }
  const DenseMatrix& table() const { return probs_; }

 private:
  DenseMatrix probs_;
};

struct StationaryOptions {
  std::size_t max_iterations = 1'000'000;
  double tolerance = 1e-12;
};

/// State-action kernel of the restart-embedded chain under `policy`:
/// K[(s,a),(s',a')] = P(s'|s,a) policy(a'|s'), with mass that would enter a
/// terminal state redirected to initial(s') policy(a'|s').
DenseMatrix chain_kernel(const FiniteMdp& mdp, const TabularPolicy& policy);

/// Discounted bootstrap kernel gamma * P(s'|s,a) policy(a'|s') restricted to
/// non-terminal s'.
DenseMatrix discounted_kernel(const FiniteMdp& mdp, const TabularPolicy& policy);

/// Stationary distribution over state-action pairs, xi(s) * mu(a|s).
///
/// Power iteration is the primary route; a chain that has not settled after
/// a few thousand sweeps without progress (periodic) falls back to solving
/// the stationarity equations directly. Uniqueness is confirmed by that
/// direct solve; a reducible chain throws NoConvergence.
DenseVector stationary_distribution(const FiniteMdp& mdp, const TabularPolicy& behavior,
                                    const StationaryOptions& options = {});

/// Marginal over states of a state-action distribution.
DenseVector state_marginal(const DenseVector& pair_distribution, std::size_t n_actions);

/// v = (I - gamma P_pi)^{-1} R_pi over states, using the raw kernel (absorbing
/// states keep their self loops).
DenseVector state_values(const FiniteMdp& mdp, const TabularPolicy& policy);

/// q_pi solving q = r + gamma P_pi q over state-action pairs (terminal
/// bootstrap cut).
DenseVector action_values(const FiniteMdp& mdp, const TabularPolicy& policy);

/// How M = Phi^T Xi Phi (and A_sigma) are inverted.
enum class MetricInverse {
  Strict,  ///< elimination; rank-deficient features throw SingularMatrix
  Pseudo,  ///< Moore-Penrose inverse; for feature sets like Baird's whose Phi is rank deficient
};

/// Closed-form quantities of linear Q(sigma, lambda) on a finite MDP.
///
/// With K_mu, K_pi the discounted bootstrap kernels, Xi the stationary
/// state-action weights and r the reward vector:
///   A = Phi^T Xi (I - lambda K_mu)^{-1} (sigma K_mu + (1-sigma) K_pi - I) Phi
///   b = Phi^T Xi (I - lambda K_mu)^{-1} r
///   M = Phi^T Xi Phi
/// The discount is folded into the kernels so episodic chains are handled
/// by the same expressions.
class ModelOracle {
 public:
  ModelOracle(FiniteMdp mdp, TabularPolicy target, TabularPolicy behavior,
              std::shared_ptr<const FeatureMap> features, double sigma, double lambda,
              MetricInverse inverse = MetricInverse::Strict);

  const FiniteMdp& mdp() const { return mdp_; }
  const TabularPolicy& target() const { return target_; }
  const TabularPolicy& behavior() const { return behavior_; }
  const FeatureMap& features() const { return *features_; }
  std::shared_ptr<const FeatureMap> feature_ptr() const { return features_; }
  double sigma() const { return sigma_; }
  double lambda() const { return lambda_; }
  MetricInverse inverse_mode() const { return inverse_; }
  std::size_t dimension() const { return phi_.cols(); }

  const DenseMatrix& phi() const { return phi_; }
  const DenseVector& stationary() const { return xi_; }
  const DenseVector& reward_vector() const { return reward_; }
  const DenseMatrix& behavior_kernel() const { return k_mu_; }
  const DenseMatrix& target_kernel() const { return k_pi_; }

  const DenseMatrix& a_matrix() const { return a_; }
  const DenseVector& b_vector() const { return b_; }
  const DenseMatrix& m_matrix() const { return m_; }

  /// E[e_k (gamma_{k+1} phi_{k+1})^T] and E[e_k (gamma_{k+1} E_pi phi(S_{k+1}, .))^T].
  const DenseMatrix& trace_next_feature() const { return c_mu_; }
  const DenseMatrix& trace_expected_next_feature() const { return c_pi_; }
  /// gamma E[v_sigma] as a p x p matrix (analysis only; learners never build it).
  DenseMatrix expected_correction_matrix() const;
  /// E[delta_k e_k] at theta, assembled from reward and trace moments.
  DenseVector expected_td_update(const DenseVector& theta) const;

  /// R_pi + gamma P_pi q over state-action pairs.
  DenseVector bellman_apply(const DenseVector& q) const;
  /// Closed form of q + E_mu[sum_t (lambda gamma)^t delta_t^{pi,sigma}].
  DenseVector mixed_sampling_apply(const DenseVector& q) const;
  /// Phi (Phi^T Xi Phi)^{-1} Phi^T Xi.
  DenseMatrix projection() const;

  /// -A^{-1} b (minimum-norm solution in Pseudo mode).
  DenseVector td_fixed_point() const;
  /// M^{-1}(A theta + b).
  DenseVector omega_of(const DenseVector& theta) const;
  /// (theta*, omega*(theta)).
  std::pair<DenseVector, DenseVector> ode_fixed_points(const DenseVector& theta) const;
  /// G(theta) = A^T M^{-1} (A theta + b).
  DenseVector ode_theta_field(const DenseVector& theta) const;
  /// H(omega, theta) = A theta + b - M omega.
  DenseVector ode_omega_field(const DenseVector& omega, const DenseVector& theta) const;

  /// 1/2 ||A theta + b||^2_{M^{-1}}.
  double mspbe(const DenseVector& theta) const;
  DenseVector mspbe_gradient(const DenseVector& theta) const;
  /// 1/2 ||Phi theta - Pi B(Phi theta)||^2_Xi with B the mixed-sampling operator.
  double mspbe_projected(const DenseVector& theta) const;

 private:
  DenseVector apply_metric_inverse(const DenseVector& x) const;

  FiniteMdp mdp_;
  TabularPolicy target_;
  TabularPolicy behavior_;
  std::shared_ptr<const FeatureMap> features_;
  double sigma_;
  double lambda_;
  MetricInverse inverse_;

  DenseMatrix phi_;
  DenseVector xi_;
  DenseVector reward_;
  DenseMatrix k_mu_;
  DenseMatrix k_pi_;
  DenseMatrix resolvent_;  // (I - lambda K_mu)^{-1}
  DenseMatrix a_;
  DenseVector b_;
  DenseMatrix m_;
  DenseMatrix c_mu_;
  DenseMatrix c_pi_;
  DenseMatrix m_pinv_;  // only in Pseudo mode
};

/// MDP, policies and features read from a definition file.
struct MdpDefinition {
  std::string name;
  std::shared_ptr<const FiniteMdp> mdp;
  std::optional<TabularPolicy> target;
  std::optional<TabularPolicy> behavior;
  std::shared_ptr<const FeatureMap> features;  ///< tabular when the file has none
};

/// Parses the JSON MDP format documented in docs/formats.md.
MdpDefinition parse_mdp_definition(const std::string& text);
MdpDefinition load_mdp_file(const std::filesystem::path& path);

}  // namespace gqlab
