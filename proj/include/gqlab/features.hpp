#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "gqlab/linalg.hpp"
#include "gqlab/types.hpp"

namespace gqlab {

class TabularPolicy;

/// phi(s, a) for a linear action-value approximation.
class FeatureMap {
 public:
  virtual ~FeatureMap() = default;

  virtual std::size_t dimension() const = 0;
  virtual DenseVector evaluate(const State& state, Action action) const = 0;
  /// Uniform bound on ||phi(s, a)||_2.
  virtual double norm_bound() const = 0;
  virtual std::string name() const = 0;

  /// True when the domain is a finite state-action set.
  virtual bool is_finite() const { return false; }
  virtual std::size_t num_states() const { return 0; }
  virtual std::size_t num_actions() const { return 0; }

  /// Phi with row s * num_actions + a equal to evaluate(s, a).
  /// Throws DimensionMismatch for continuous domains.
  DenseMatrix full_matrix() const;
};

/// Features given explicitly as a table over state-action pairs.
class TableFeatures final : public FeatureMap {
 public:
  /// phi rows are indexed by s * n_actions + a.
  TableFeatures(std::string name, std::size_t n_states, std::size_t n_actions, DenseMatrix phi);

  std::size_t dimension() const override { return phi_.cols(); }
  DenseVector evaluate(const State& state, Action action) const override;
  double norm_bound() const override { return bound_; }
  std::string name() const override { return name_; }
  bool is_finite() const override { return true; }
  std::size_t num_states() const override { return n_states_; }
  std::size_t num_actions() const override { return n_actions_; }

  const DenseMatrix& table() const { return phi_; }

 private:
  std::string name_;
  std::size_t n_states_;
  std::size_t n_actions_;
  DenseMatrix phi_;
  double bound_ = 0.0;
};

/// One indicator per state-action pair.
std::shared_ptr<const TableFeatures> tabular_features(std::size_t n_states, std::size_t n_actions);

/// Baird Star: phi(s_i, .) = 2 e_i + e_8, shared by both actions (p = 8).
std::shared_ptr<const TableFeatures> baird_features();

/// Boyan chain: four triangular hat functions peaking at s_1, s_5, s_9, s_13
/// (1-indexed). Each state activates at most two features that sum to one;
/// s_14 lies past the last peak and is clamped onto it.
std::shared_ptr<const TableFeatures> boyan_features();

/// Two-state counterexample: (1,right)->(1,0), (2,right)->(2,0),
/// (1,left)->(0,1), (2,left)->(0,2). Action 0 is left, 1 is right.
std::shared_ptr<const TableFeatures> counterexample_features();

/// Hashed tile coding over Mountain Car (position, velocity) x action.
///
/// Each tiling i lays a tiles_per_dim x tiles_per_dim grid over the
/// normalised state, shifted by i / n_tilings of a tile width in both
/// dimensions (one extra tile per dimension absorbs the shift). The tuple
/// (tiling, tile_x, tile_y, action) is hashed with a seeded multiplicative
/// mix and reduced mod p. If two tilings of the same input land on the
/// same index the later one probes linearly to the next free slot, so
/// every feature vector has exactly n_tilings ones.
class TileCoder final : public FeatureMap {
 public:
  static constexpr std::size_t kActions = 3;

  TileCoder(std::size_t n_tilings, std::size_t tiles_per_dim, std::size_t p, std::uint64_t seed);

  std::size_t dimension() const override { return p_; }
  DenseVector evaluate(const State& state, Action action) const override;
  double norm_bound() const override;
  std::string name() const override { return "tile_coding"; }

  /// Indices of the active features (length n_tilings, all distinct).
  std::vector<std::size_t> active_indices(const MountainCarState& state, Action action) const;
  /// Raw tile coordinates of tiling i, before hashing.
  std::pair<long, long> tile_of(const MountainCarState& state, std::size_t tiling) const;
  /// Hash of one (tiling, tile, action) key into [0, p).
  std::size_t hash_key(std::size_t tiling, long tile_x, long tile_y, Action action) const;

  std::size_t n_tilings() const { return n_tilings_; }
  std::size_t tiles_per_dim() const { return tiles_per_dim_; }

 private:
  std::size_t n_tilings_;
  std::size_t tiles_per_dim_;
  std::size_t p_;
  std::uint64_t seed_;
};

/// sum_a probs[a] * phi(state, a).
DenseVector expected_feature(const FeatureMap& features, std::span<const double> probs,
                             const State& state);
DenseVector expected_feature(const FeatureMap& features, const TabularPolicy& policy,
                             StateIndex state);

}  // namespace gqlab
