#pragma once

#include <filesystem>
#include <memory>

#include "pwlm/guessing_model.hpp"

namespace pwlm {

// Loads a transformer checkpoint ("PWCK") or an n-gram model ("NGRM"),
// dispatching on the file's magic bytes.
std::unique_ptr<GuessingModel> load_guessing_model(const std::filesystem::path& path,
                                                   std::size_t threads = 1);

}  // namespace pwlm
