#include "moldiff/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>

namespace moldiff::sched {

Mapping parse_mapping(std::string_view name) {
  if (name == "linear") return Mapping::Linear;
  if (name == "cosine") return Mapping::Cosine;
  throw ScheduleError(ErrorCode::BadParams, "unknown mapping '" + std::string(name) + "'");
}

const char* to_string(Mapping m) { return m == Mapping::Cosine ? "cosine" : "linear"; }

double clamp_alpha(double a) { return std::clamp(a, kAlphaEps, 1.0 - kAlphaEps); }

BaselineSchedule sqrt_schedule(int T, double s) {
  if (T < 2) throw ScheduleError(ErrorCode::BadParams, "sqrt schedule needs T >= 2");
  if (!(s > 0.0 && s < 1.0)) throw ScheduleError(ErrorCode::BadParams, "sqrt schedule offset must lie in (0, 1)");
  BaselineSchedule out;
  out.s = s;
  out.alpha_bar.resize(static_cast<std::size_t>(T));
  for (int t = 1; t <= T; ++t) {
    out.alpha_bar[static_cast<std::size_t>(t - 1)] = clamp_alpha(1.0 - std::sqrt(static_cast<double>(t) / T + s));
  }
  return out;
}

DifficultyProfile::DifficultyProfile(int positions, int T, int buckets)
    : positions_(positions), T_(T), buckets_(std::min(buckets, T)) {
  if (positions < 1 || T < 2 || buckets < 1) throw ScheduleError(ErrorCode::BadParams, "profile needs positions >= 1, T >= 2, buckets >= 1");
  sum_.assign(static_cast<std::size_t>(positions_) * static_cast<std::size_t>(buckets_), 0.0);
  count_.assign(sum_.size(), 0);
}

int DifficultyProfile::bucket_of(int t) const {
  return static_cast<int>((static_cast<long>(t) - 1) * buckets_ / T_);
}

void DifficultyProfile::observe(int position, int t, double error) {
  if (position < 0 || position >= positions_ || t < 1 || t > T_) {
    throw ScheduleError(ErrorCode::ShapeMismatch, "observation outside the profile grid");
  }
  const std::size_t c = cell(position, bucket_of(t));
  sum_[c] += error;
  ++count_[c];
}

void DifficultyProfile::observe(const ErrorSample& sample) {
  if (static_cast<int>(sample.errors.size()) != positions_ || (!sample.mask.empty() && sample.mask.size() != sample.errors.size())) {
    throw ScheduleError(ErrorCode::ShapeMismatch, "error sample length does not match profile positions");
  }
  for (int i = 0; i < positions_; ++i) {
    if (sample.mask.empty() || sample.mask[static_cast<std::size_t>(i)]) observe(i, sample.t, sample.errors[static_cast<std::size_t>(i)]);
  }
}

void DifficultyProfile::merge(const DifficultyProfile& other) {
  if (other.positions_ != positions_ || other.T_ != T_ || other.buckets_ != buckets_) {
    throw ScheduleError(ErrorCode::ShapeMismatch, "cannot merge profiles of different shape");
  }
  for (std::size_t c = 0; c < sum_.size(); ++c) {
    sum_[c] += other.sum_[c];
    count_[c] += other.count_[c];
  }
}

void DifficultyProfile::reset() {
  std::fill(sum_.begin(), sum_.end(), 0.0);
  std::fill(count_.begin(), count_.end(), 0);
}

double DifficultyProfile::mean(int position, int bucket) const {
  const std::size_t c = cell(position, bucket);
  return count_[c] == 0 ? 0.0 : sum_[c] / static_cast<double>(count_[c]);
}

long DifficultyProfile::count(int position, int bucket) const { return count_[cell(position, bucket)]; }

bool DifficultyProfile::observed(int position) const {
  for (int b = 0; b < buckets_; ++b) {
    if (count(position, b) > 0) return true;
  }
  return false;
}

std::vector<double> DifficultyProfile::knots(int position) const {
  std::vector<int> seen;
  for (int b = 0; b < buckets_; ++b) {
    if (count(position, b) > 0) seen.push_back(b);
  }
  if (seen.empty()) throw ScheduleError(ErrorCode::EmptyProfile, "position " + std::to_string(position) + " has no observations");

  std::vector<double> out(static_cast<std::size_t>(T_));
  for (int t = 1; t <= T_; ++t) {
    // bucket-index coordinate of t; equals t - 1 when every step has its own bucket
    const double p = (t - 0.5) * buckets_ / T_ - 0.5;
    double v;
    if (p <= seen.front()) {
      v = mean(position, seen.front());
    } else if (p >= seen.back()) {
      v = mean(position, seen.back());
    } else {
      const auto hi = std::upper_bound(seen.begin(), seen.end(), p);
      const int b1 = *hi;
      const int b0 = *(hi - 1);
      const double w = (p - b0) / (b1 - b0);
      v = w == 0.0 ? mean(position, b0) : mean(position, b0) + w * (mean(position, b1) - mean(position, b0));
    }
    out[static_cast<std::size_t>(t - 1)] = v;
  }
  return out;
}

double DifficultyProfile::l_min(int position) const {
  const auto k = knots(position);
  return *std::min_element(k.begin(), k.end());
}

double DifficultyProfile::l_max(int position) const {
  const auto k = knots(position);
  return *std::max_element(k.begin(), k.end());
}

void estimate_difficulty(std::span<const ErrorSample> batch, DifficultyProfile& profile) {
  for (const auto& s : batch) profile.observe(s);
}

std::vector<double> difficulty_ramp(double l_min, double l_max, int T) {
  if (T < 2) throw ScheduleError(ErrorCode::BadParams, "ramp needs T >= 2");
  if (l_min > l_max) throw ScheduleError(ErrorCode::BadParams, "ramp needs l_min <= l_max");
  std::vector<double> out(static_cast<std::size_t>(T));
  for (int t = 1; t <= T; ++t) {
    const double v = l_min + static_cast<double>(t - 1) / (T - 1) * (l_max - l_min);
    out[static_cast<std::size_t>(t - 1)] = std::clamp(v, l_min, l_max);
  }
  out.front() = l_min;
  out.back() = l_max;
  return out;
}

double map_loss_to_alpha(double x, std::span<const double> losses, std::span<const double> alpha, Mapping mapping) {
  if (losses.size() != alpha.size() || losses.size() < 2) {
    throw ScheduleError(ErrorCode::ShapeMismatch, "knot losses and alphas must have the same length >= 2");
  }
  if (x == losses.front()) return alpha.front();
  if (x == losses.back()) return alpha.back();

  std::vector<double> knot(losses.begin(), losses.end());
  for (std::size_t t = 1; t < knot.size(); ++t) {
    if (knot[t] == knot[t - 1]) knot[t] = knot[t - 1] + kJitter;
  }
  for (std::size_t t = 1; t < knot.size(); ++t) {
    const double a = knot[t - 1];
    const double b = knot[t];
    const bool inside = a < b ? (x >= a && x < b) : (x <= a && x > b);
    if (!inside) continue;
    double w = (x - a) / (b - a);
    if (mapping == Mapping::Cosine) w = 0.5 * (1.0 - std::cos(std::numbers::pi * w));
    return alpha[t - 1] + (alpha[t] - alpha[t - 1]) * w;
  }
  throw ScheduleError(ErrorCode::OutOfRange, "difficulty value outside the profile's range");
}

std::vector<double> isotonic_project(std::span<const double> seq) {
  struct Block {
    double sum;
    double weight;
    double mean() const { return sum / weight; }
  };
  std::vector<Block> blocks;
  blocks.reserve(seq.size());
  for (double v : seq) {
    blocks.push_back({v, 1.0});
    while (blocks.size() > 1 && blocks[blocks.size() - 2].mean() < blocks.back().mean()) {
      const Block top = blocks.back();
      blocks.pop_back();
      blocks.back().sum += top.sum;
      blocks.back().weight += top.weight;
    }
  }
  std::vector<double> out;
  out.reserve(seq.size());
  for (const auto& b : blocks) out.insert(out.end(), static_cast<std::size_t>(b.weight), b.mean());
  return out;
}

TokenSchedule::TokenSchedule(Eigen::MatrixXd alpha) : alpha_(std::move(alpha)) {}

TokenSchedule TokenSchedule::uniform(const BaselineSchedule& baseline, int positions) {
  Eigen::MatrixXd m(positions, baseline.T());
  for (int i = 0; i < positions; ++i) {
    for (int t = 1; t <= baseline.T(); ++t) m(i, t - 1) = baseline.at(t);
  }
  return TokenSchedule(std::move(m));
}

void TokenSchedule::write_csv(std::ostream& out) const {
  out << "position,t,alpha_bar\n";
  const auto old = out.precision(17);
  for (int i = 0; i < positions(); ++i) {
    for (int t = 1; t <= T(); ++t) out << i << ',' << t << ',' << at(i, t) << '\n';
  }
  out.precision(old);
}

TokenSchedule build_token_schedule(const DifficultyProfile& profile, const BaselineSchedule& baseline, Mapping mapping) {
  if (profile.T() != baseline.T()) throw ScheduleError(ErrorCode::ShapeMismatch, "profile and baseline disagree on T");
  bool any = false;
  for (int i = 0; i < profile.positions() && !any; ++i) any = profile.observed(i);
  if (!any) throw ScheduleError(ErrorCode::EmptyProfile, "difficulty profile has no observations");

  const int T = baseline.T();
  TokenSchedule out = TokenSchedule::uniform(baseline, profile.positions());
  Eigen::MatrixXd m = out.matrix();
  for (int i = 0; i < profile.positions(); ++i) {
    if (!profile.observed(i)) continue;
    const std::vector<double> losses = profile.knots(i);
    const double lo = *std::min_element(losses.begin(), losses.end());
    const double hi = *std::max_element(losses.begin(), losses.end());
    // a flat profile carries no difficulty signal; keep the baseline
    if (hi - lo <= kFlatTolerance * std::max(1.0, std::abs(hi))) continue;
    const std::vector<double> ramp = difficulty_ramp(lo, hi, T);
    std::vector<double> row(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) {
      row[static_cast<std::size_t>(t)] = clamp_alpha(map_loss_to_alpha(ramp[static_cast<std::size_t>(t)], losses, baseline.alpha_bar, mapping));
    }
    row = isotonic_project(row);
    for (int t = 0; t < T; ++t) m(i, t) = row[static_cast<std::size_t>(t)];
  }
  return TokenSchedule(std::move(m));
}

}  // namespace moldiff::sched
