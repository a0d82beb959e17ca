#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "pwlm/corpus.hpp"
#include "pwlm/guessing_model.hpp"

namespace pwlm {

// Importance-sampling rank estimator: with n i.i.d. model samples, the number
// of passwords more probable than p is estimated by
//   G(p) = sum over samples with p_i > p of 1 / (n p_i).
// Samples that did not terminate (truncated) or drew reserved tokens still
// count towards n but never contribute, since they are not passwords.
//
// The stored representation is 32-bit: sample log-probabilities (descending)
// plus log10 of the running sums of 1/(n p_i) and of 1/(n p_i^2). Queries
// round their argument to float so a sampled password never precedes itself.
class MonteCarloEstimator {
 public:
  MonteCarloEstimator() = default;

  static MonteCarloEstimator build(const GuessingModel& model, std::size_t n, std::uint64_t seed);
  // `log_probs` are the contributing samples out of `n` draws.
  static MonteCarloEstimator from_log_probs(std::vector<double> log_probs, std::size_t n,
                                            std::string model_id = "", std::uint64_t seed = 0);

  // Rebuilds an estimator from its stored tables (FormatError if inconsistent).
  static MonteCarloEstimator from_tables(std::size_t n, std::uint64_t seed, std::string model_id,
                                         std::vector<float> log_probs, std::vector<float> cum,
                                         std::vector<float> cum_sq);

  // Unclamped estimate; 0 when no sample is more probable.
  double guess_number(double log_prob) const;
  // log10 of guess_number, -inf for 0.
  double log10_guess_number(double log_prob) const;
  // Standard error of guess_number.
  double standard_error(double log_prob) const;
  // Estimate over every contributing sample, i.e. the query below all of them.
  double total() const;

  std::size_t n() const noexcept { return n_; }
  std::size_t contributing() const noexcept { return log_probs_.size(); }
  std::uint64_t seed() const noexcept { return seed_; }
  const std::string& model_id() const noexcept { return model_id_; }
  std::span<const float> log_probs() const noexcept { return log_probs_; }
  std::span<const float> log10_cumulative() const noexcept { return cum_; }
  std::span<const float> log10_cumulative_sq() const noexcept { return cum_sq_; }

  // "PWMC" | u32 version | u32 manifest length | manifest JSON | three float32
  // arrays of `contributing` entries (log-probs, log10 sums, log10 square sums).
  std::vector<std::uint8_t> serialize() const;
  static MonteCarloEstimator parse(std::span<const std::uint8_t> bytes);
  void save(const std::filesystem::path& path) const;
  static MonteCarloEstimator load(const std::filesystem::path& path);

  bool operator==(const MonteCarloEstimator&) const = default;

 private:
  std::size_t count_above(double log_prob) const;

  std::size_t n_ = 0;
  std::uint64_t seed_ = 0;
  std::string model_id_;
  std::vector<float> log_probs_;
  std::vector<float> cum_;
  std::vector<float> cum_sq_;
};

struct CurvePoint {
  double guesses = 0.0;
  double coverage = 0.0;
};

struct GuessingCurve {
  std::vector<CurvePoint> points;
  std::size_t test_size = 0;
  std::size_t unscorable = 0;
  nlohmann::json manifest = nlohmann::json::object();

  // "# <manifest json>" line, a "log10_g,coverage" header, then one record
  // per point.
  std::string to_text() const;
  static GuessingCurve from_text(std::string_view text);
};

// 81 points, log-uniform from 1e0 to 1e20.
std::vector<double> default_grid(double g_max = 1e20, std::size_t points = 81);

// Guess number per password; nullopt when the model cannot score it.
std::vector<std::optional<double>> estimate_guess_numbers(const MonteCarloEstimator& est,
                                                          const GuessingModel& scorer,
                                                          const Corpus& test,
                                                          std::size_t threads = 1);

// coverage(g) = share of entries with a guess number <= g; nullopt entries
// are never guessed. Grid must be ascending.
GuessingCurve curve_from_guess_numbers(std::span<const std::optional<double>> guesses,
                                       std::span<const double> grid);

GuessingCurve guessing_curve(const MonteCarloEstimator& est, const GuessingModel& scorer,
                             const Corpus& test, std::span<const double> grid,
                             std::size_t threads = 1);

struct CurveComparison {
  double mean_difference = 0.0;  // mean of a - b over the sampled points
  double max_difference = 0.0;   // max of a - b
  double argmax_guesses = 0.0;   // g where the max is attained
};

// Samples `points` g values log-uniformly over the shared range and
// interpolates both curves linearly in (log10 g, coverage), flat outside.
CurveComparison compare_curves(const GuessingCurve& a, const GuessingCurve& b,
                               std::size_t points = 1000);

// Coverage of a curve at g under the interpolation rule above.
double interpolate_coverage(const GuessingCurve& c, double guesses);

}  // namespace pwlm
