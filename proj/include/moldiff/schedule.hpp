#pragma once

#include <Eigen/Core>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace moldiff::sched {

inline constexpr double kAlphaEps = 1e-5;
inline constexpr double kJitter = 1e-8;
inline constexpr int kDefaultBuckets = 50;
/// Profiles whose spread is below this (relative) count as flat.
inline constexpr double kFlatTolerance = 1e-10;

enum class ErrorCode { BadParams, ShapeMismatch, OutOfRange, EmptyProfile };

class ScheduleError : public std::runtime_error {
 public:
  ScheduleError(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

enum class Mapping { Linear, Cosine };
Mapping parse_mapping(std::string_view name);
const char* to_string(Mapping m);

/// Cumulative coefficients for t = 1..T, stored at [t - 1].
struct BaselineSchedule {
  std::vector<double> alpha_bar;
  double s = 1e-4;

  int T() const { return static_cast<int>(alpha_bar.size()); }
  double at(int t) const { return alpha_bar[static_cast<std::size_t>(t - 1)]; }
};

/// alpha_bar_t = 1 - sqrt(t/T + s), clamped into [kAlphaEps, 1 - kAlphaEps].
BaselineSchedule sqrt_schedule(int T, double s = 1e-4);

double clamp_alpha(double a);

/// Squared denoising errors of one example at one timestep; mask marks
/// the positions that count (non-padding).
struct ErrorSample {
  int t = 0;
  std::vector<double> errors;
  std::vector<char> mask;
};

/// Running means of squared denoising error per (position, timestep
/// bucket). Buckets are uniform over 1..T; B = min(buckets, T).
class DifficultyProfile {
 public:
  DifficultyProfile(int positions, int T, int buckets = kDefaultBuckets);

  int positions() const { return positions_; }
  int T() const { return T_; }
  int buckets() const { return buckets_; }
  int bucket_of(int t) const;

  void observe(int position, int t, double error);
  void observe(const ErrorSample& sample);
  /// Adds another profile's sums and counts; order-independent.
  void merge(const DifficultyProfile& other);
  void reset();

  double mean(int position, int bucket) const;
  long count(int position, int bucket) const;
  bool observed(int position) const;

  /// Difficulty at t = 1..T, interpolated linearly between the centers
  /// of observed buckets and held constant beyond the outermost ones.
  std::vector<double> knots(int position) const;
  double l_min(int position) const;
  double l_max(int position) const;

 private:
  std::size_t cell(int position, int bucket) const {
    return static_cast<std::size_t>(position) * static_cast<std::size_t>(buckets_) + static_cast<std::size_t>(bucket);
  }

  int positions_;
  int T_;
  int buckets_;
  std::vector<double> sum_;
  std::vector<long> count_;
};

/// Feeds a stream of error samples into the profile.
void estimate_difficulty(std::span<const ErrorSample> batch, DifficultyProfile& profile);

/// l_min + (t-1)/(T-1) (l_max - l_min) for t = 1..T; endpoints exact.
std::vector<double> difficulty_ramp(double l_min, double l_max, int T);

/// Piecewise map from difficulty to alpha_bar through the knots
/// (losses[t], alpha[t]) taken in timestep order.
double map_loss_to_alpha(double x, std::span<const double> losses, std::span<const double> alpha, Mapping mapping = Mapping::Linear);

/// Least-squares projection onto non-increasing sequences (PAVA).
std::vector<double> isotonic_project(std::span<const double> seq);

/// Per-position cumulative coefficients, positions x T. Row i, column
/// t - 1 holds alpha_bar for position i at step t.
class TokenSchedule {
 public:
  TokenSchedule() = default;
  explicit TokenSchedule(Eigen::MatrixXd alpha);
  /// Every position follows the baseline.
  static TokenSchedule uniform(const BaselineSchedule& baseline, int positions);

  int positions() const { return static_cast<int>(alpha_.rows()); }
  int T() const { return static_cast<int>(alpha_.cols()); }
  double at(int position, int t) const { return alpha_(position, t - 1); }
  /// Column of alpha_bar values for all positions at step t.
  Eigen::VectorXd column(int t) const { return alpha_.col(t - 1); }
  const Eigen::MatrixXd& matrix() const { return alpha_; }

  /// CSV with header position,t,alpha_bar.
  void write_csv(std::ostream& out) const;

 private:
  Eigen::MatrixXd alpha_;
};

TokenSchedule build_token_schedule(const DifficultyProfile& profile, const BaselineSchedule& baseline, Mapping mapping = Mapping::Linear);

}  // namespace moldiff::sched
