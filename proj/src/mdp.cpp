#include "gqlab/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>

#include "gqlab/errors.hpp"
#include "json.hpp"

namespace gqlab {

namespace {

constexpr double kRowSumTolerance = 1e-12;

void require_distribution(std::span<const double> row, const std::string& what) {
  double total = 0.0;
  for (double p : row) {
    if (!(p >= 0.0)) throw InvalidModel(what + ": negative or NaN probability");
    total += p;
  }
  if (std::abs(total - 1.0) > kRowSumTolerance) {
    std::ostringstream msg;
    msg.precision(17);
    msg << what << ": probabilities sum to " << total;
    throw InvalidModel(msg.str());
  }
}

void require_policy_shape(const FiniteMdp& mdp, const TabularPolicy& policy, const char* what) {
  if (policy.num_states() != mdp.num_states() || policy.num_actions() != mdp.num_actions()) {
    throw DimensionMismatch(std::string(what) + " policy shape does not match the MDP");
  }
}

DenseMatrix phi_transpose_xi(const DenseMatrix& phi, const DenseVector& xi) {
  DenseMatrix w(phi.cols(), phi.rows());
  for (std::size_t r = 0; r < phi.rows(); ++r) {
    for (std::size_t c = 0; c < phi.cols(); ++c) w(c, r) = phi(r, c) * xi[r];
  }
  return w;
}

// Solves x^T (K - I) = 0, sum(x) = 1 by replacing one equation with the
// normalisation. Singular systems mean the stationary distribution is not
// unique.
DenseVector solve_stationary(const DenseMatrix& kernel) {
  const std::size_t n = kernel.rows();
  DenseMatrix system = kernel.transpose();
  for (std::size_t i = 0; i < n; ++i) system(i, i) -= 1.0;
  DenseVector rhs(n);
  for (std::size_t c = 0; c < n; ++c) system(n - 1, c) = 1.0;
  rhs[n - 1] = 1.0;
  try {
    return solve(system, rhs);
  } catch (const SingularMatrix&) {
    throw NoConvergence("behaviour chain is reducible: stationary distribution is not unique");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// FiniteMdp

FiniteMdp::FiniteMdp(std::size_t n_states, std::size_t n_actions, std::vector<double> transition,
                     DenseMatrix reward, double gamma, std::vector<bool> terminal,
                     std::optional<DenseVector> initial)
    : n_states_(n_states),
      n_actions_(n_actions),
      transition_(std::move(transition)),
      reward_(std::move(reward)),
      gamma_(gamma),
      terminal_(std::move(terminal)) {
  if (n_states_ == 0 || n_actions_ == 0) throw InvalidModel("MDP needs states and actions");
  if (transition_.size() != n_states_ * n_actions_ * n_states_) {
    throw DimensionMismatch("transition tensor has " + std::to_string(transition_.size()) +
                            " entries, expected " +
                            std::to_string(n_states_ * n_actions_ * n_states_));
  }
  if (reward_.rows() != n_states_ || reward_.cols() != n_actions_) {
    throw DimensionMismatch("reward table shape does not match the MDP");
  }
  if (!(gamma_ > 0.0 && gamma_ < 1.0)) throw InvalidModel("gamma must lie strictly in (0, 1)");
  for (std::size_t s = 0; s < n_states_; ++s) {
    for (std::size_t a = 0; a < n_actions_; ++a) {
      require_distribution(next_distribution(s, a),
                           "P[" + std::to_string(s) + "][" + std::to_string(a) + "]");
    }
  }
  if (terminal_.empty()) terminal_.assign(n_states_, false);
  if (terminal_.size() != n_states_) throw DimensionMismatch("terminal flags length");

  if (initial) {
    initial_ = std::move(*initial);
  } else {
    const auto live = static_cast<double>(std::count(terminal_.begin(), terminal_.end(), false));
    if (live == 0.0) throw InvalidModel("every state is terminal");
    initial_ = DenseVector(n_states_);
    for (std::size_t s = 0; s < n_states_; ++s) initial_[s] = terminal_[s] ? 0.0 : 1.0 / live;
  }
  if (initial_.size() != n_states_) throw DimensionMismatch("initial distribution length");
  require_distribution(initial_.values(), "initial distribution");
  for (std::size_t s = 0; s < n_states_; ++s) {
    if (terminal_[s] && initial_[s] > 0.0) {
      throw InvalidModel("initial distribution puts mass on a terminal state");
    }
  }
}

bool FiniteMdp::has_terminal_states() const {
  return std::find(terminal_.begin(), terminal_.end(), true) != terminal_.end();
}

FiniteMdp FiniteMdp::with_gamma(double gamma) const {
  return FiniteMdp(n_states_, n_actions_, transition_, reward_, gamma, terminal_, initial_);
}

// ---------------------------------------------------------------------------
// TabularPolicy

TabularPolicy::TabularPolicy(DenseMatrix probs) : probs_(std::move(probs)) {
  if (probs_.rows() == 0 || probs_.cols() == 0) throw InvalidModel("empty policy table");
  for (std::size_t s = 0; s < probs_.rows(); ++s) {
    require_distribution(probs_.row(s), "policy row " + std::to_string(s));
  }
}

TabularPolicy TabularPolicy::uniform(std::size_t n_states, std::size_t n_actions) {
  return TabularPolicy(DenseMatrix(n_states, n_actions, 1.0 / static_cast<double>(n_actions)));
}

TabularPolicy TabularPolicy::deterministic(std::size_t n_states, std::size_t n_actions,
                                           Action action) {
  if (action >= n_actions) throw InvalidArgument("deterministic policy: action out of range");
  DenseMatrix probs(n_states, n_actions);
  for (std::size_t s = 0; s < n_states; ++s) probs(s, action) = 1.0;
  return TabularPolicy(std::move(probs));
}

TabularPolicy TabularPolicy::constant(std::size_t n_states, std::vector<double> action_probs) {
  DenseMatrix probs(n_states, action_probs.size());
  for (std::size_t s = 0; s < n_states; ++s) {
    std::copy(action_probs.begin(), action_probs.end(), probs.row(s).begin());
  }
  return TabularPolicy(std::move(probs));
}

// ---------------------------------------------------------------------------
// Kernels and distributions

DenseMatrix chain_kernel(const FiniteMdp& mdp, const TabularPolicy& policy) {
  require_policy_shape(mdp, policy, "chain");
  const std::size_t ns = mdp.num_states();
  const std::size_t na = mdp.num_actions();
  DenseMatrix k(mdp.num_pairs(), mdp.num_pairs());
  for (std::size_t s = 0; s < ns; ++s) {
    for (std::size_t a = 0; a < na; ++a) {
      const std::size_t x = s * na + a;
      // Terminal states are never occupied in the embedded chain; their
      // rows restart as well so that K stays stochastic.
      double restart = 0.0;
      for (std::size_t s2 = 0; s2 < ns; ++s2) {
        const double p = mdp.is_terminal(s) ? 0.0 : mdp.transition(s, a, s2);
        if (p == 0.0) continue;
        if (mdp.is_terminal(s2)) {
          restart += p;
          continue;
        }
        for (std::size_t a2 = 0; a2 < na; ++a2) k(x, s2 * na + a2) += p * policy.prob(s2, a2);
      }
      if (mdp.is_terminal(s)) restart = 1.0;
      if (restart == 0.0) continue;
      for (std::size_t s2 = 0; s2 < ns; ++s2) {
        const double d0 = mdp.initial()[s2];
        if (d0 == 0.0) continue;
        for (std::size_t a2 = 0; a2 < na; ++a2) {
          k(x, s2 * na + a2) += restart * d0 * policy.prob(s2, a2);
        }
      }
    }
  }
  return k;
}

DenseMatrix discounted_kernel(const FiniteMdp& mdp, const TabularPolicy& policy) {
  require_policy_shape(mdp, policy, "discounted kernel");
  const std::size_t ns = mdp.num_states();
  const std::size_t na = mdp.num_actions();
  DenseMatrix k(mdp.num_pairs(), mdp.num_pairs());
  for (std::size_t s = 0; s < ns; ++s) {
    if (mdp.is_terminal(s)) continue;
    for (std::size_t a = 0; a < na; ++a) {
      for (std::size_t s2 = 0; s2 < ns; ++s2) {
        const double p = mdp.transition(s, a, s2);
        if (p == 0.0 || mdp.is_terminal(s2)) continue;
        for (std::size_t a2 = 0; a2 < na; ++a2) {
          k(s * na + a, s2 * na + a2) = mdp.gamma() * p * policy.prob(s2, a2);
        }
      }
    }
  }
  return k;
}

DenseVector stationary_distribution(const FiniteMdp& mdp, const TabularPolicy& behavior,
                                    const StationaryOptions& options) {
  const DenseMatrix k = chain_kernel(mdp, behavior);
  const std::size_t n = k.rows();
  const DenseVector direct = solve_stationary(k);

  constexpr std::size_t kStallWindow = 5000;
  DenseVector d(n, 1.0 / static_cast<double>(n));
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_at = 0;
  bool converged = false;
  for (std::size_t it = 0; it < options.max_iterations; ++it) {
    DenseVector next = k.transpose_times(d);
    next *= 1.0 / next.sum();
    const double residual = (next - d).norm1();
    d = std::move(next);
    if (residual <= options.tolerance) {
      converged = true;
      break;
    }
    if (residual < 0.5 * best) {
      best = residual;
      best_at = it;
    } else if (it - best_at > kStallWindow) {
      break;  // periodic chain: power iteration oscillates
    }
  }
  if (!converged) {
    // Fall back to the direct solve, accepted only if it is a distribution.
    for (double v : direct.values()) {
      if (v < -1e-12) throw NoConvergence("stationary distribution did not converge");
    }
    d = direct;
  } else if ((d - direct).norm_inf() > 1e-8) {
    throw NoConvergence("power iteration and direct solve disagree; chain is not ergodic");
  }
  for (double& v : d.values()) v = std::max(v, 0.0);
  d *= 1.0 / d.sum();
  return d;
}

DenseVector state_marginal(const DenseVector& pair_distribution, std::size_t n_actions) {
  if (n_actions == 0 || pair_distribution.size() % n_actions != 0) {
    throw DimensionMismatch("state_marginal: length is not a multiple of n_actions");
  }
  DenseVector out(pair_distribution.size() / n_actions);
  for (std::size_t x = 0; x < pair_distribution.size(); ++x) out[x / n_actions] += pair_distribution[x];
  return out;
}

DenseVector state_values(const FiniteMdp& mdp, const TabularPolicy& policy) {
  require_policy_shape(mdp, policy, "state value");
  const std::size_t ns = mdp.num_states();
  DenseMatrix system = DenseMatrix::identity(ns);
  DenseVector r(ns);
  for (std::size_t s = 0; s < ns; ++s) {
    for (std::size_t a = 0; a < mdp.num_actions(); ++a) {
      const double pa = policy.prob(s, a);
      r[s] += pa * mdp.reward(s, a);
      for (std::size_t s2 = 0; s2 < ns; ++s2) {
        system(s, s2) -= mdp.gamma() * pa * mdp.transition(s, a, s2);
      }
    }
  }
  return solve(system, r);
}

DenseVector action_values(const FiniteMdp& mdp, const TabularPolicy& policy) {
  DenseMatrix system = DenseMatrix::identity(mdp.num_pairs());
  system -= discounted_kernel(mdp, policy);
  return solve(system, DenseVector(mdp.reward_table().data()));
}

// ---------------------------------------------------------------------------
// ModelOracle

ModelOracle::ModelOracle(FiniteMdp mdp, TabularPolicy target, TabularPolicy behavior,
                         std::shared_ptr<const FeatureMap> features, double sigma, double lambda,
                         MetricInverse inverse)
    : mdp_(std::move(mdp)),
      target_(std::move(target)),
      behavior_(std::move(behavior)),
      features_(std::move(features)),
      sigma_(sigma),
      lambda_(lambda),
      inverse_(inverse) {
  if (!features_) throw InvalidArgument("ModelOracle: null feature map");
  if (!(sigma_ >= 0.0 && sigma_ <= 1.0)) throw InvalidArgument("sigma must lie in [0, 1]");
  if (!(lambda_ >= 0.0 && lambda_ <= 1.0)) throw InvalidArgument("lambda must lie in [0, 1]");
  require_policy_shape(mdp_, target_, "target");
  require_policy_shape(mdp_, behavior_, "behavior");
  phi_ = features_->full_matrix();
  if (phi_.rows() != mdp_.num_pairs()) {
    throw DimensionMismatch("feature table rows do not match the MDP's state-action pairs");
  }

  const std::size_t n = mdp_.num_pairs();
  xi_ = stationary_distribution(mdp_, behavior_);
  reward_ = DenseVector(mdp_.reward_table().data());
  k_mu_ = discounted_kernel(mdp_, behavior_);
  k_pi_ = discounted_kernel(mdp_, target_);

  DenseMatrix trace_system = DenseMatrix::identity(n);
  trace_system -= lambda_ * k_mu_;
  resolvent_ = invert(trace_system);

  const DenseMatrix weighted = phi_transpose_xi(phi_, xi_) * resolvent_;  // Phi^T Xi (I - lambda K_mu)^{-1}
  m_ = phi_transpose_xi(phi_, xi_) * phi_;
  c_mu_ = weighted * (k_mu_ * phi_);
  c_pi_ = weighted * (k_pi_ * phi_);
  a_ = sigma_ * c_mu_ + (1.0 - sigma_) * c_pi_;
  a_ -= weighted * phi_;
  b_ = weighted * reward_;

  if (inverse_ == MetricInverse::Pseudo) {
    m_pinv_ = psd_pseudo_inverse(m_);
  } else {
    invert(m_);  // surfaces SingularMatrix for rank-deficient features up front
  }
}

DenseVector ModelOracle::apply_metric_inverse(const DenseVector& x) const {
  if (inverse_ == MetricInverse::Pseudo) return m_pinv_ * x;
  return solve(m_, x);
}

DenseMatrix ModelOracle::expected_correction_matrix() const {
  DenseMatrix out = (1.0 - sigma_) * (c_pi_.transpose() - lambda_ * c_mu_.transpose());
  out += sigma_ * (1.0 - lambda_) * c_mu_.transpose();
  return out;
}

DenseVector ModelOracle::expected_td_update(const DenseVector& theta) const {
  return a_ * theta + b_;
}

DenseVector ModelOracle::bellman_apply(const DenseVector& q) const {
  if (q.size() != mdp_.num_pairs()) throw DimensionMismatch("bellman_apply: q length");
  return reward_ + k_pi_ * q;
}

DenseVector ModelOracle::mixed_sampling_apply(const DenseVector& q) const {
  if (q.size() != mdp_.num_pairs()) throw DimensionMismatch("mixed_sampling_apply: q length");
  DenseVector residual = reward_ + sigma_ * (k_mu_ * q) + (1.0 - sigma_) * (k_pi_ * q) - q;
  return q + resolvent_ * residual;
}

DenseMatrix ModelOracle::projection() const {
  const DenseMatrix m_inv = inverse_ == MetricInverse::Pseudo ? m_pinv_ : invert(m_);
  return phi_ * (m_inv * phi_transpose_xi(phi_, xi_));
}

DenseVector ModelOracle::td_fixed_point() const {
  if (inverse_ == MetricInverse::Pseudo) return -(pseudo_inverse(a_) * b_);
  return -solve(a_, b_);
}

DenseVector ModelOracle::omega_of(const DenseVector& theta) const {
  return apply_metric_inverse(expected_td_update(theta));
}

std::pair<DenseVector, DenseVector> ModelOracle::ode_fixed_points(const DenseVector& theta) const {
  return {td_fixed_point(), omega_of(theta)};
}

DenseVector ModelOracle::ode_theta_field(const DenseVector& theta) const {
  return a_.transpose_times(omega_of(theta));
}

DenseVector ModelOracle::ode_omega_field(const DenseVector& omega,
                                         const DenseVector& theta) const {
  return expected_td_update(theta) - m_ * omega;
}

double ModelOracle::mspbe(const DenseVector& theta) const {
  const DenseVector residual = expected_td_update(theta);
  return std::max(0.0, 0.5 * residual.dot(apply_metric_inverse(residual)));
}

DenseVector ModelOracle::mspbe_gradient(const DenseVector& theta) const {
  return ode_theta_field(theta);
}

double ModelOracle::mspbe_projected(const DenseVector& theta) const {
  const DenseVector q = phi_ * theta;
  const DenseVector diff = q - projection() * mixed_sampling_apply(q);
  double acc = 0.0;
  for (std::size_t x = 0; x < diff.size(); ++x) acc += xi_[x] * diff[x] * diff[x];
  return 0.5 * acc;
}

// ---------------------------------------------------------------------------
// MDP definition files

namespace {

using nlohmann::json;

DenseMatrix matrix_from_json(const json& j, const char* what) {
  if (!j.is_array() || j.empty()) throw ConfigError(std::string(what) + ": expected a 2-D array");
  const std::size_t rows = j.size();
  const std::size_t cols = j.front().size();
  std::vector<double> data;
  data.reserve(rows * cols);
  for (const auto& row : j) {
    if (!row.is_array() || row.size() != cols) {
      throw ConfigError(std::string(what) + ": ragged rows");
    }
    for (const auto& v : row) data.push_back(v.get<double>());
  }
  return DenseMatrix(rows, cols, std::move(data));
}

std::shared_ptr<const FeatureMap> features_from_json(const json& j, std::size_t n_states,
                                                     std::size_t n_actions) {
  if (j.is_string()) {
    const auto name = j.get<std::string>();
    std::shared_ptr<const TableFeatures> f;
    if (name == "tabular") f = tabular_features(n_states, n_actions);
    else if (name == "baird") f = baird_features();
    else if (name == "boyan") f = boyan_features();
    else if (name == "counterexample") f = counterexample_features();
    else throw ConfigError("unknown feature set '" + name + "'");
    if (f->num_states() != n_states || f->num_actions() != n_actions) {
      throw ConfigError("feature set '" + name + "' does not fit this MDP");
    }
    return f;
  }
  return std::make_shared<const TableFeatures>("file", n_states, n_actions,
                                               matrix_from_json(j, "features"));
}

}  // namespace

MdpDefinition parse_mdp_definition(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("MDP file is not valid JSON: ") + e.what());
  }
  try {
    const auto n_states = j.at("n_states").get<std::size_t>();
    const auto n_actions = j.at("n_actions").get<std::size_t>();
    const auto gamma = j.at("gamma").get<double>();

    const json& p = j.at("transitions");
    if (!p.is_array() || p.size() != n_states) throw ConfigError("transitions: need one entry per state");
    std::vector<double> transition;
    transition.reserve(n_states * n_actions * n_states);
    for (const auto& per_state : p) {
      if (per_state.size() != n_actions) throw ConfigError("transitions: need one row per action");
      for (const auto& row : per_state) {
        if (row.size() != n_states) throw ConfigError("transitions: row length must be n_states");
        for (const auto& v : row) transition.push_back(v.get<double>());
      }
    }
    DenseMatrix reward = matrix_from_json(j.at("rewards"), "rewards");

    std::vector<bool> terminal;
    if (j.contains("terminal")) terminal = j["terminal"].get<std::vector<bool>>();
    std::optional<DenseVector> initial;
    if (j.contains("initial")) initial = DenseVector(j["initial"].get<std::vector<double>>());

    MdpDefinition def;
    def.name = j.value("name", std::string("mdp"));
    def.mdp = std::make_shared<const FiniteMdp>(n_states, n_actions, std::move(transition),
                                                std::move(reward), gamma, std::move(terminal),
                                                std::move(initial));
    if (j.contains("target")) def.target = TabularPolicy(matrix_from_json(j["target"], "target"));
    if (j.contains("behavior")) {
      def.behavior = TabularPolicy(matrix_from_json(j["behavior"], "behavior"));
    }
    def.features = j.contains("features") ? features_from_json(j["features"], n_states, n_actions)
                                          : tabular_features(n_states, n_actions);
    return def;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("MDP file: ") + e.what());
  } catch (const DimensionMismatch& e) {
    throw ConfigError(std::string("MDP file: ") + e.what());
  }
}

MdpDefinition load_mdp_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open MDP file " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_mdp_definition(buffer.str());
}

}  // namespace gqlab
