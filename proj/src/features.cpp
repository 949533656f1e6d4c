#include "gqlab/features.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gqlab/errors.hpp"
#include "gqlab/mdp.hpp"

namespace gqlab {

namespace {

StateIndex state_index(const State& state) {
  if (const auto* s = std::get_if<StateIndex>(&state)) return *s;
  throw InvalidArgument("finite feature map evaluated on a continuous state");
}

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr double kPositionMin = -1.2;
constexpr double kPositionMax = 0.5;
constexpr double kVelocityMin = -0.07;
constexpr double kVelocityMax = 0.07;

}  // namespace

DenseMatrix FeatureMap::full_matrix() const {
  if (!is_finite()) throw DimensionMismatch(name() + ": full_matrix needs a finite domain");
  const std::size_t n_actions = num_actions();
  DenseMatrix phi(num_states() * n_actions, dimension());
  for (std::size_t s = 0; s < num_states(); ++s) {
    for (std::size_t a = 0; a < n_actions; ++a) {
      const DenseVector row = evaluate(State{s}, a);
      std::copy(row.data().begin(), row.data().end(), phi.row(s * n_actions + a).begin());
    }
  }
  return phi;
}

TableFeatures::TableFeatures(std::string name, std::size_t n_states, std::size_t n_actions,
                             DenseMatrix phi)
    : name_(std::move(name)), n_states_(n_states), n_actions_(n_actions), phi_(std::move(phi)) {
  if (phi_.rows() != n_states_ * n_actions_) {
    throw DimensionMismatch(name_ + ": feature table has " + std::to_string(phi_.rows()) +
                            " rows, expected " + std::to_string(n_states_ * n_actions_));
  }
  if (phi_.cols() == 0) throw InvalidArgument(name_ + ": zero-dimensional features");
  for (std::size_t r = 0; r < phi_.rows(); ++r) {
    double sq = 0.0;
    for (double v : phi_.row(r)) sq += v * v;
    bound_ = std::max(bound_, std::sqrt(sq));
  }
}

DenseVector TableFeatures::evaluate(const State& state, Action action) const {
  const StateIndex s = state_index(state);
  if (s >= n_states_ || action >= n_actions_) {
    throw InvalidArgument(name_ + ": state-action (" + std::to_string(s) + ", " +
                          std::to_string(action) + ") out of range");
  }
  return phi_.row_vector(s * n_actions_ + action);
}

std::shared_ptr<const TableFeatures> tabular_features(std::size_t n_states, std::size_t n_actions) {
  return std::make_shared<const TableFeatures>("tabular", n_states, n_actions,
                                               DenseMatrix::identity(n_states * n_actions));
}

std::shared_ptr<const TableFeatures> baird_features() {
  constexpr std::size_t kStates = 7;
  constexpr std::size_t kActions = 2;
  DenseMatrix phi(kStates * kActions, 8);
  for (std::size_t s = 0; s < kStates; ++s) {
    for (std::size_t a = 0; a < kActions; ++a) {
      phi(s * kActions + a, s) = 2.0;
      phi(s * kActions + a, 7) = 1.0;
    }
  }
  return std::make_shared<const TableFeatures>("baird", kStates, kActions, std::move(phi));
}

std::shared_ptr<const TableFeatures> boyan_features() {
  constexpr std::size_t kStates = 14;
  constexpr std::size_t kPeakSpacing = 4;
  DenseMatrix phi(kStates, 4);
  for (std::size_t s = 0; s < kStates; ++s) {
    const std::size_t left = std::min<std::size_t>(s / kPeakSpacing, 3);
    const double frac = left == 3 ? 0.0 : static_cast<double>(s % kPeakSpacing) / kPeakSpacing;
    phi(s, left) = 1.0 - frac;
    if (frac > 0.0) phi(s, left + 1) = frac;
  }
  return std::make_shared<const TableFeatures>("boyan", kStates, 1, std::move(phi));
}

std::shared_ptr<const TableFeatures> counterexample_features() {
  // rows: (1,left), (1,right), (2,left), (2,right)
  DenseMatrix phi{{0.0, 1.0}, {1.0, 0.0}, {0.0, 2.0}, {2.0, 0.0}};
  return std::make_shared<const TableFeatures>("counterexample", 2, 2, std::move(phi));
}

TileCoder::TileCoder(std::size_t n_tilings, std::size_t tiles_per_dim, std::size_t p,
                     std::uint64_t seed)
    : n_tilings_(n_tilings), tiles_per_dim_(tiles_per_dim), p_(p), seed_(seed) {
  if (n_tilings_ == 0) throw InvalidArgument("tile coding: n_tilings must be >= 1");
  if (tiles_per_dim_ == 0) throw InvalidArgument("tile coding: tiles_per_dim must be >= 1");
  if (p_ < 128 || p_ > 2048 || (p_ & (p_ - 1)) != 0) {
    throw InvalidArgument("tile coding: p must be a power of two in [128, 2048], got " +
                          std::to_string(p_));
  }
  if (n_tilings_ > p_) throw InvalidArgument("tile coding: more tilings than features");
}

double TileCoder::norm_bound() const { return std::sqrt(static_cast<double>(n_tilings_)); }

std::pair<long, long> TileCoder::tile_of(const MountainCarState& state, std::size_t tiling) const {
  const double scale = static_cast<double>(tiles_per_dim_);
  const double offset = static_cast<double>(tiling) / static_cast<double>(n_tilings_);
  const double x = (state.position - kPositionMin) / (kPositionMax - kPositionMin) * scale;
  const double y = (state.velocity - kVelocityMin) / (kVelocityMax - kVelocityMin) * scale;
  return {static_cast<long>(std::floor(x + offset)), static_cast<long>(std::floor(y + offset))};
}

std::size_t TileCoder::hash_key(std::size_t tiling, long tile_x, long tile_y, Action action) const {
  std::uint64_t h = mix64(seed_ ^ 0x6A09E667F3BCC909ULL);
  h = mix64(h ^ (static_cast<std::uint64_t>(tiling) * 0x9E3779B97F4A7C15ULL));
  h = mix64(h ^ (static_cast<std::uint64_t>(tile_x) * 0xC2B2AE3D27D4EB4FULL));
  h = mix64(h ^ (static_cast<std::uint64_t>(tile_y) * 0x165667B19E3779F9ULL));
  h = mix64(h ^ (static_cast<std::uint64_t>(action) * 0x27D4EB2F165667C5ULL));
  return static_cast<std::size_t>(h % p_);
}

std::vector<std::size_t> TileCoder::active_indices(const MountainCarState& state,
                                                   Action action) const {
  if (action >= kActions) throw InvalidArgument("tile coding: action out of range");
  std::vector<std::size_t> out;
  out.reserve(n_tilings_);
  for (std::size_t i = 0; i < n_tilings_; ++i) {
    const auto [tx, ty] = tile_of(state, i);
    std::size_t idx = hash_key(i, tx, ty, action);
    while (std::find(out.begin(), out.end(), idx) != out.end()) idx = (idx + 1) % p_;
    out.push_back(idx);
  }
  return out;
}

DenseVector TileCoder::evaluate(const State& state, Action action) const {
  const auto* mc = std::get_if<MountainCarState>(&state);
  if (mc == nullptr) throw InvalidArgument("tile coding needs a Mountain Car state");
  DenseVector phi(p_);
  for (std::size_t idx : active_indices(*mc, action)) phi[idx] = 1.0;
  return phi;
}

DenseVector expected_feature(const FeatureMap& features, std::span<const double> probs,
                             const State& state) {
  DenseVector out(features.dimension());
  for (std::size_t a = 0; a < probs.size(); ++a) {
    if (probs[a] == 0.0) continue;
    out.axpy(probs[a], features.evaluate(state, a));
  }
  return out;
}

DenseVector expected_feature(const FeatureMap& features, const TabularPolicy& policy,
                             StateIndex state) {
  return expected_feature(features, policy.row(state), State{state});
}

}  // namespace gqlab
