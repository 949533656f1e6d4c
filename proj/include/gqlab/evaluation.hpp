#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "gqlab/learners.hpp"
#include "gqlab/linalg.hpp"
#include "gqlab/mdp.hpp"

namespace gqlab {

/// Running means of e_k Delta_k^T, R_k e_k and phi_k phi_k^T, where
/// Delta_k = gamma_{k+1} (sigma phi' + (1 - sigma) E_pi phi') - phi_k.
struct EmpiricalMoments {
  DenseMatrix a_hat;
  DenseVector b_hat;
  DenseMatrix m_hat;
  std::size_t count = 0;

  EmpiricalMoments() = default;
  explicit EmpiricalMoments(std::size_t p);
  std::size_t dimension() const { return b_hat.size(); }
};

/// Folds one step into the means. `trace` must already include phi_k.
void accumulate(EmpiricalMoments& moments, const FeatureTransition& t, const DenseVector& trace,
                double sigma, double gamma);

/// Count-weighted mean of two accumulators.
EmpiricalMoments merge(const EmpiricalMoments& a, const EmpiricalMoments& b);

/// 1/2 (A theta + b)^T M^{-1} (A theta + b) with the hatted moments.
/// `ridge` adds ridge * I to M before inversion (0 keeps it exact); Pseudo
/// uses the Moore-Penrose inverse.
double empirical_mspbe(const EmpiricalMoments& moments, const DenseVector& theta,
                       double ridge = 0.0, MetricInverse inverse = MetricInverse::Strict);

enum class DivergenceStatus { Ok, Diverged };

inline constexpr double kDefaultDivergenceThreshold = 1e6;

/// Diverged when ||theta||_inf exceeds `threshold` or any entry is not finite.
DivergenceStatus divergence_monitor(const LearnerState& state,
                                    double threshold = kDefaultDivergenceThreshold);
DivergenceStatus divergence_monitor(const DenseVector& theta,
                                    double threshold = kDefaultDivergenceThreshold);

/// Medians of consecutive non-overlapping windows; a short tail is dropped.
std::vector<double> windowed_medians(std::span<const double> series, std::size_t window);
double median(std::vector<double> values);

enum class Case { I, II, III };
std::string to_string(Case c);

struct CaseTable {
  std::map<std::string, Case> labels;  ///< one entry per intermediate schedule
  double percent_i = 0.0;
  double percent_ii = 0.0;
  double percent_iii = 0.0;
};

inline constexpr const char* kSigmaZeroLabel = "0";
inline constexpr const char* kSigmaOneLabel = "1";

/// Labels every intermediate sigma schedule by how many of the two extremes
/// it beats strictly: both -> I, one -> II, none -> III. `scores` maps a
/// schedule label ("0", "0.5", "dynamic", ...) to a performance value;
/// `higher_is_better` selects the direction.
/// Throws MissingExtremes without the "0" and "1" rows.
CaseTable classify_cases(const std::map<std::string, double>& scores, bool higher_is_better);

/// Sample variance with n - 1 denominator. Throws InsufficientRuns for n < 2.
double sample_variance(std::span<const double> values);
double mean(std::span<const double> values);

}  // namespace gqlab
