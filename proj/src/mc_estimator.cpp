#include "pwlm/mc_estimator.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "binary_io.hpp"
#include "parallel.hpp"
#include "pwlm/error.hpp"

namespace pwlm {

namespace {

constexpr char kMagic[4] = {'P', 'W', 'M', 'C'};
constexpr std::uint32_t kVersion = 1;
constexpr double kLog10e = std::numbers::log10e;

// log10(10^a + 10^b)
double log10_add(double a, double b) {
  if (std::isinf(a) && a < 0) return b;
  const double hi = std::max(a, b), lo = std::min(a, b);
  return hi + std::log10(1.0 + std::pow(10.0, lo - hi));
}

}  // namespace

MonteCarloEstimator MonteCarloEstimator::build(const GuessingModel& model, std::size_t n,
                                               std::uint64_t seed) {
  if (n == 0) throw ConfigError("estimator needs at least one sample");
  std::vector<double> lps;
  lps.reserve(n);
  for (const auto& s : model.sample(n, seed)) {
    if (s.status == SampleStatus::kOk) lps.push_back(s.log_prob);
  }
  return from_log_probs(std::move(lps), n, model.model_id(), seed);
}

MonteCarloEstimator MonteCarloEstimator::from_log_probs(std::vector<double> log_probs,
                                                        std::size_t n, std::string model_id,
                                                        std::uint64_t seed) {
  if (n == 0 || log_probs.size() > n) throw ConfigError("estimator needs 0 < contributing <= n");
  MonteCarloEstimator est;
  est.n_ = n;
  est.seed_ = seed;
  est.model_id_ = std::move(model_id);
  est.log_probs_.reserve(log_probs.size());
  for (double lp : log_probs) {
    if (!std::isfinite(lp)) throw Error("estimator sample log-probabilities must be finite");
    est.log_probs_.push_back(static_cast<float>(lp));
  }
  std::sort(est.log_probs_.begin(), est.log_probs_.end(), std::greater<>());

  // 1/(n p) = 10^(-lp*log10(e) - log10 n); squares accumulate 1/(n p^2).
  const double log10_n = std::log10(static_cast<double>(n));
  double acc = -std::numeric_limits<double>::infinity();
  double acc_sq = acc;
  est.cum_.reserve(est.log_probs_.size());
  est.cum_sq_.reserve(est.log_probs_.size());
  for (float lp : est.log_probs_) {
    const double w = -static_cast<double>(lp) * kLog10e;
    acc = log10_add(acc, w - log10_n);
    acc_sq = log10_add(acc_sq, 2.0 * w - log10_n);
    est.cum_.push_back(static_cast<float>(acc));
    est.cum_sq_.push_back(static_cast<float>(acc_sq));
  }
  return est;
}

std::size_t MonteCarloEstimator::count_above(double log_prob) const {
  const float q = static_cast<float>(log_prob);
  auto it = std::partition_point(log_probs_.begin(), log_probs_.end(),
                                 [q](float x) { return x > q; });
  return static_cast<std::size_t>(it - log_probs_.begin());
}

double MonteCarloEstimator::log10_guess_number(double log_prob) const {
  const std::size_t k = count_above(log_prob);
  if (k == 0) return -std::numeric_limits<double>::infinity();
  return static_cast<double>(cum_[k - 1]);
}

double MonteCarloEstimator::guess_number(double log_prob) const {
  const std::size_t k = count_above(log_prob);
  return k == 0 ? 0.0 : std::pow(10.0, static_cast<double>(cum_[k - 1]));
}

double MonteCarloEstimator::standard_error(double log_prob) const {
  const std::size_t k = count_above(log_prob);
  if (k == 0) return 0.0;
  // Var = (E[w^2] - E[w]^2) / n with E[w] = cum, E[w^2] = cum_sq.
  const double a = cum_[k - 1], b = cum_sq_[k - 1];
  const double ratio = std::pow(10.0, b - 2.0 * a);
  const double rel = std::sqrt(std::max(0.0, ratio - 1.0) / static_cast<double>(n_));
  return std::pow(10.0, a) * rel;
}

double MonteCarloEstimator::total() const {
  return cum_.empty() ? 0.0 : std::pow(10.0, static_cast<double>(cum_.back()));
}

std::vector<std::uint8_t> MonteCarloEstimator::serialize() const {
  nlohmann::json manifest{{"format_version", kVersion},
                          {"model_id", model_id_},
                          {"n", n_},
                          {"seed", seed_},
                          {"contributing", log_probs_.size()}};
  detail::ByteWriter w;
  w.bytes(kMagic, 4);
  w.pod(kVersion);
  w.prefixed(manifest.dump());
  w.array<float>(log_probs_);
  w.array<float>(cum_);
  w.array<float>(cum_sq_);
  return w.take();
}

MonteCarloEstimator MonteCarloEstimator::parse(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes, "estimator");
  auto magic = r.bytes(4);
  if (!std::equal(magic.begin(), magic.end(), kMagic)) throw FormatError("not an estimator file");
  if (r.pod<std::uint32_t>() != kVersion) throw FormatError("unsupported estimator version");
  MonteCarloEstimator est;
  std::size_t k = 0;
  try {
    auto manifest = nlohmann::json::parse(r.prefixed());
    est.model_id_ = manifest.at("model_id");
    est.n_ = manifest.at("n");
    est.seed_ = manifest.at("seed");
    k = manifest.at("contributing");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("estimator manifest: ") + e.what());
  }
  auto lp = r.array<float>(k);
  auto cum = r.array<float>(k);
  auto cum_sq = r.array<float>(k);
  if (r.remaining() != 0) throw FormatError("estimator: trailing bytes");
  return from_tables(est.n_, est.seed_, est.model_id_, std::move(lp), std::move(cum), std::move(cum_sq));
}

MonteCarloEstimator MonteCarloEstimator::from_tables(std::size_t n, std::uint64_t seed,
                                                     std::string model_id,
                                                     std::vector<float> log_probs,
                                                     std::vector<float> cum,
                                                     std::vector<float> cum_sq) {
  if (n == 0 || log_probs.size() > n || cum.size() != log_probs.size() ||
      cum_sq.size() != log_probs.size()) {
    throw FormatError("estimator tables have inconsistent sizes");
  }
  if (!std::is_sorted(log_probs.begin(), log_probs.end(), std::greater<>())) {
    throw FormatError("estimator log-probabilities are not sorted");
  }
  MonteCarloEstimator est;
  est.n_ = n;
  est.seed_ = seed;
  est.model_id_ = std::move(model_id);
  est.log_probs_ = std::move(log_probs);
  est.cum_ = std::move(cum);
  est.cum_sq_ = std::move(cum_sq);
  return est;
}

void MonteCarloEstimator::save(const std::filesystem::path& path) const {
  detail::write_file(path.string(), serialize());
}

MonteCarloEstimator MonteCarloEstimator::load(const std::filesystem::path& path) {
  return parse(detail::read_file(path.string()));
}

// ---------------------------------------------------------------------------

std::vector<double> default_grid(double g_max, std::size_t points) {
  if (points < 2 || !(g_max > 1.0)) throw ConfigError("grid needs >= 2 points and g_max > 1");
  const double top = std::log10(g_max);
  std::vector<double> grid(points);
  for (std::size_t i = 0; i < points; ++i) {
    grid[i] = std::pow(10.0, top * static_cast<double>(i) / static_cast<double>(points - 1));
  }
  return grid;
}

std::vector<std::optional<double>> estimate_guess_numbers(const MonteCarloEstimator& est,
                                                          const GuessingModel& scorer,
                                                          const Corpus& test,
                                                          std::size_t threads) {
  std::vector<std::optional<double>> out(test.size());
  detail::parallel_chunks(test.size(), threads, [&](std::size_t b, std::size_t e, std::size_t) {
    for (std::size_t i = b; i < e; ++i) {
      if (scorer.can_score(test[i])) out[i] = est.guess_number(scorer.log_prob(test[i]));
    }
  });
  return out;
}

GuessingCurve curve_from_guess_numbers(std::span<const std::optional<double>> guesses,
                                       std::span<const double> grid) {
  if (guesses.empty()) throw Error("guessing curve of an empty test set");
  if (!std::is_sorted(grid.begin(), grid.end())) throw ConfigError("grid must be ascending");
  std::vector<double> sorted;
  GuessingCurve curve;
  curve.test_size = guesses.size();
  for (const auto& g : guesses) {
    if (g) sorted.push_back(*g);
    else ++curve.unscorable;
  }
  std::sort(sorted.begin(), sorted.end());
  for (double g : grid) {
    auto hit = std::upper_bound(sorted.begin(), sorted.end(), g) - sorted.begin();
    curve.points.push_back({g, static_cast<double>(hit) / static_cast<double>(guesses.size())});
  }
  return curve;
}

GuessingCurve guessing_curve(const MonteCarloEstimator& est, const GuessingModel& scorer,
                             const Corpus& test, std::span<const double> grid,
                             std::size_t threads) {
  auto guesses = estimate_guess_numbers(est, scorer, test, threads);
  GuessingCurve curve = curve_from_guess_numbers(guesses, grid);
  curve.manifest = {{"model_id", scorer.model_id()},
                    {"n", est.n()},
                    {"seed", est.seed()},
                    {"test", test.source_label()},
                    {"test_size", curve.test_size},
                    {"unscorable", curve.unscorable}};
  return curve;
}

std::string GuessingCurve::to_text() const {
  std::ostringstream out;
  out << "# " << manifest.dump() << "\nlog10_g,coverage\n";
  // Shortest text that parses back to the same double.
  auto shortest = [](double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
  };
  for (const auto& p : points) out << shortest(std::log10(p.guesses)) << ',' << shortest(p.coverage) << '\n';
  return out.str();
}

GuessingCurve GuessingCurve::from_text(std::string_view text) {
  GuessingCurve c;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line == "log10_g,coverage") continue;
    if (line.rfind("# ", 0) == 0) {
      try {
        c.manifest = nlohmann::json::parse(line.substr(2));
      } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("curve manifest: ") + e.what());
      }
      continue;
    }
    auto comma = line.find(',');
    if (comma == std::string::npos) throw FormatError("curve record without a comma: " + line);
    try {
      const double lg = std::stod(line.substr(0, comma));
      const double cov = std::stod(line.substr(comma + 1));
      c.points.push_back({std::pow(10.0, lg), cov});
    } catch (const std::logic_error&) {
      throw FormatError("malformed curve record: " + line);
    }
  }
  if (c.points.empty()) throw FormatError("curve file has no records");
  c.test_size = c.manifest.value("test_size", std::size_t{0});
  c.unscorable = c.manifest.value("unscorable", std::size_t{0});
  return c;
}

double interpolate_coverage(const GuessingCurve& c, double guesses) {
  if (c.points.empty()) throw Error("interpolating an empty curve");
  const double x = std::log10(guesses);
  const auto& pts = c.points;
  if (x <= std::log10(pts.front().guesses)) return pts.front().coverage;
  if (x >= std::log10(pts.back().guesses)) return pts.back().coverage;
  auto it = std::upper_bound(pts.begin(), pts.end(), x, [](double v, const CurvePoint& p) {
    return v < std::log10(p.guesses);
  });
  const auto& hi = *it;
  const auto& lo = *(it - 1);
  const double x0 = std::log10(lo.guesses), x1 = std::log10(hi.guesses);
  if (x1 == x0) return hi.coverage;
  const double t = (x - x0) / (x1 - x0);
  return lo.coverage + t * (hi.coverage - lo.coverage);
}

CurveComparison compare_curves(const GuessingCurve& a, const GuessingCurve& b,
                               std::size_t points) {
  if (a.points.empty() || b.points.empty()) throw Error("cannot compare empty curves");
  if (points == 0) throw ConfigError("compare_curves needs at least one point");
  const double lo = std::max(std::log10(a.points.front().guesses), std::log10(b.points.front().guesses));
  const double hi = std::min(std::log10(a.points.back().guesses), std::log10(b.points.back().guesses));
  if (lo > hi) throw Error("curves do not share a guess-number range");
  CurveComparison out;
  out.max_difference = -std::numeric_limits<double>::infinity();
  double sum = 0;
  for (std::size_t i = 0; i < points; ++i) {
    const double x = points == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
    const double g = std::pow(10.0, x);
    const double d = interpolate_coverage(a, g) - interpolate_coverage(b, g);
    sum += d;
    if (d > out.max_difference) {
      out.max_difference = d;
      out.argmax_guesses = g;
    }
  }
  out.mean_difference = sum / static_cast<double>(points);
  return out;
}

}  // namespace pwlm
