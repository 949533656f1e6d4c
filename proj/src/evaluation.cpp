#include "gqlab/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gqlab/errors.hpp"

namespace gqlab {

EmpiricalMoments::EmpiricalMoments(std::size_t p) : a_hat(p, p), b_hat(p), m_hat(p, p) {}

void accumulate(EmpiricalMoments& moments, const FeatureTransition& t, const DenseVector& trace,
                double sigma, double gamma) {
  const std::size_t p = moments.dimension();
  if (t.phi.size() != p || trace.size() != p) {
    throw DimensionMismatch("accumulate: feature length does not match the moments");
  }
  DenseVector delta_vec = -t.phi;
  if (!t.terminal) {
    if (sigma > 0.0) {
      if (t.phi_next.empty()) throw MissingNextAction("sigma > 0 needs the next action");
      delta_vec.axpy(gamma * sigma, t.phi_next);
    }
    if (sigma < 1.0) delta_vec.axpy(gamma * (1.0 - sigma), t.expected_phi_next);
  }

  ++moments.count;
  const double w = 1.0 / static_cast<double>(moments.count);
  for (std::size_t i = 0; i < p; ++i) {
    const double ei = trace[i];
    const double pi = t.phi[i];
    for (std::size_t j = 0; j < p; ++j) {
      moments.a_hat(i, j) += w * (ei * delta_vec[j] - moments.a_hat(i, j));
      moments.m_hat(i, j) += w * (pi * t.phi[j] - moments.m_hat(i, j));
    }
    moments.b_hat[i] += w * (t.reward * ei - moments.b_hat[i]);
  }
}

EmpiricalMoments merge(const EmpiricalMoments& a, const EmpiricalMoments& b) {
  if (a.dimension() != b.dimension()) throw DimensionMismatch("merge: dimensions differ");
  if (a.count == 0) return b;
  if (b.count == 0) return a;
  EmpiricalMoments out(a.dimension());
  out.count = a.count + b.count;
  const double wa = static_cast<double>(a.count) / static_cast<double>(out.count);
  const double wb = 1.0 - wa;
  out.a_hat = wa * a.a_hat + wb * b.a_hat;
  out.m_hat = wa * a.m_hat + wb * b.m_hat;
  out.b_hat = wa * a.b_hat + wb * b.b_hat;
  return out;
}

double empirical_mspbe(const EmpiricalMoments& moments, const DenseVector& theta, double ridge,
                       MetricInverse inverse) {
  if (moments.count == 0) throw SingularMatrix("empirical_mspbe: no samples accumulated");
  const DenseVector residual = moments.a_hat * theta + moments.b_hat;
  DenseMatrix m = moments.m_hat.symmetric_part();
  if (ridge > 0.0) m += ridge * DenseMatrix::identity(m.rows());
  const DenseVector weighted =
      inverse == MetricInverse::Pseudo ? psd_pseudo_inverse(m) * residual : solve(m, residual);
  return std::max(0.0, 0.5 * residual.dot(weighted));
}

DivergenceStatus divergence_monitor(const DenseVector& theta, double threshold) {
  for (double v : theta.values()) {
    if (!std::isfinite(v) || std::abs(v) > threshold) return DivergenceStatus::Diverged;
  }
  return DivergenceStatus::Ok;
}

DivergenceStatus divergence_monitor(const LearnerState& state, double threshold) {
  return divergence_monitor(state.theta, threshold);
}

double median(std::vector<double> values) {
  if (values.empty()) throw InvalidArgument("median of an empty set");
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + mid, values.end());
  const double upper = values[mid];
  if (values.size() % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(), values.begin() + mid);
  return 0.5 * (lower + upper);
}

std::vector<double> windowed_medians(std::span<const double> series, std::size_t window) {
  if (window == 0) throw InvalidArgument("window must be positive");
  std::vector<double> out;
  for (std::size_t start = 0; start + window <= series.size(); start += window) {
    out.push_back(median({series.begin() + start, series.begin() + start + window}));
  }
  return out;
}

std::string to_string(Case c) {
  switch (c) {
    case Case::I: return "I";
    case Case::II: return "II";
    case Case::III: return "III";
  }
  return "?";
}

CaseTable classify_cases(const std::map<std::string, double>& scores, bool higher_is_better) {
  const auto lo = scores.find(kSigmaZeroLabel);
  const auto hi = scores.find(kSigmaOneLabel);
  if (lo == scores.end() || hi == scores.end()) {
    throw MissingExtremes("case classification needs sigma = 0 and sigma = 1 results");
  }
  const auto beats = [&](double x, double ref) { return higher_is_better ? x > ref : x < ref; };

  CaseTable table;
  std::size_t counts[3] = {0, 0, 0};
  for (const auto& [sigma, score] : scores) {
    if (sigma == kSigmaZeroLabel || sigma == kSigmaOneLabel) continue;
    const int beaten = (beats(score, lo->second) ? 1 : 0) + (beats(score, hi->second) ? 1 : 0);
    const Case c = beaten == 2 ? Case::I : beaten == 1 ? Case::II : Case::III;
    table.labels[sigma] = c;
    ++counts[static_cast<int>(c)];
  }
  const double n = static_cast<double>(table.labels.size());
  if (n > 0) {
    table.percent_i = 100.0 * static_cast<double>(counts[0]) / n;
    table.percent_ii = 100.0 * static_cast<double>(counts[1]) / n;
    table.percent_iii = 100.0 * static_cast<double>(counts[2]) / n;
  }
  return table;
}

double mean(std::span<const double> values) {
  if (values.empty()) throw InvalidArgument("mean of an empty set");
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

double sample_variance(std::span<const double> values) {
  if (values.size() < 2) throw InsufficientRuns("sample variance needs at least two runs");
  const double m = mean(values);
  double acc = 0.0;
  for (double v : values) acc += (v - m) * (v - m);
  return acc / static_cast<double>(values.size() - 1);
}

}  // namespace gqlab
