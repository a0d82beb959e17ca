#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace pwlm {

enum class SampleStatus : std::uint8_t {
  kOk,         // ended with the end symbol within the length limit
  kTruncated,  // hit the length limit before the end symbol
  kInvalid,    // drew a reserved token that cannot appear in a password
};

struct Sample {
  std::string text;
  double log_prob = 0.0;  // natural log; for kOk this equals log_prob(text)
  SampleStatus status = SampleStatus::kOk;
};

// Anything that assigns probabilities to passwords and can draw i.i.d.
// samples from the same distribution. Both the transformer and the n-gram
// baseline implement this, which is all the Monte Carlo estimator needs.
class GuessingModel {
 public:
  virtual ~GuessingModel() = default;

  // Natural-log probability of the whole password including termination.
  virtual double log_prob(std::string_view pw) const = 0;
  // False when the password cannot be scored (e.g. longer than the context).
  virtual bool can_score(std::string_view pw) const = 0;
  // Deterministic for a given seed.
  virtual std::vector<Sample> sample(std::size_t n, std::uint64_t seed) const = 0;
  virtual std::string model_id() const = 0;
};

}  // namespace pwlm
