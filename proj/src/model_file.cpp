#include "pwlm/model_file.hpp"

#include <string>

#include "binary_io.hpp"
#include "pwlm/checkpoint.hpp"
#include "pwlm/error.hpp"
#include "pwlm/markov.hpp"

namespace pwlm {

std::unique_ptr<GuessingModel> load_guessing_model(const std::filesystem::path& path,
                                                   std::size_t threads) {
  const auto bytes = detail::read_file(path.string());
  const std::string magic(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(4, bytes.size())));
  if (magic == "PWCK") {
    auto m = std::make_unique<Decoder>(parse_checkpoint(bytes));
    m->set_threads(threads);
    return m;
  }
  if (magic == "NGRM") return std::make_unique<NgramModel>(NgramModel::parse(bytes));
  throw FormatError(path.string() + " is neither a checkpoint nor an n-gram model");
}

}  // namespace pwlm
