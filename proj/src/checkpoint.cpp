#include "pwlm/checkpoint.hpp"

#include "binary_io.hpp"
#include "pwlm/error.hpp"

namespace pwlm {

namespace {
constexpr char kMagic[4] = {'P', 'W', 'C', 'K'};
}

nlohmann::json config_to_json(const ModelConfig& cfg) {
  return {{"layers", cfg.layers},
          {"embed_dim", cfg.embed_dim},
          {"intermediate_dim", cfg.intermediate_dim},
          {"heads", cfg.heads},
          {"vocab_size", cfg.vocab_size},
          {"max_positions", cfg.max_positions},
          {"attention_dropout", cfg.attention_dropout},
          {"tie_output_embedding", cfg.tie_output_embedding}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  try {
    ModelConfig cfg;
    cfg.layers = j.at("layers").get<std::size_t>();
    cfg.embed_dim = j.at("embed_dim").get<std::size_t>();
    cfg.intermediate_dim = j.at("intermediate_dim").get<std::size_t>();
    cfg.heads = j.at("heads").get<std::size_t>();
    cfg.vocab_size = j.at("vocab_size").get<std::size_t>();
    cfg.max_positions = j.at("max_positions").get<std::size_t>();
    cfg.attention_dropout = j.at("attention_dropout").get<double>();
    cfg.tie_output_embedding = j.at("tie_output_embedding").get<bool>();
    cfg.validate();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed model config: ") + e.what());
  }
}

std::vector<std::uint8_t> serialize_checkpoint(const Decoder& model) {
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& t : model.layout().tensors()) {
    tensors.push_back({{"name", t.name},
                       {"shape", t.shape},
                       {"dtype", "f32"},
                       {"offset", t.offset * sizeof(float)}});
  }
  nlohmann::json manifest{{"format_version", kCheckpointVersion},
                          {"config", config_to_json(model.config())},
                          {"vocabulary", vocabulary()},
                          {"model_id", model.model_id()},
                          {"tensors", tensors}};
  detail::ByteWriter w;
  w.bytes(kMagic, 4);
  w.pod(kCheckpointVersion);
  w.prefixed(manifest.dump());
  for (double v : model.parameters()) w.pod(static_cast<float>(v));
  return w.take();
}

Decoder parse_checkpoint(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes, "checkpoint");
  auto magic = r.bytes(4);
  if (!std::equal(magic.begin(), magic.end(), kMagic)) throw FormatError("not a checkpoint file (bad magic)");
  auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  try {
    const auto manifest = nlohmann::json::parse(r.prefixed());
    if (manifest.value("vocabulary", std::vector<std::string>{}) != vocabulary()) {
      throw FormatError("checkpoint vocabulary does not match this build");
    }
    Decoder model(config_from_json(manifest.at("config")));
    model.set_model_id(manifest.value("model_id", std::string("transformer")));
    const auto& tensors = manifest.at("tensors");
    if (tensors.size() != model.layout().tensors().size()) {
      throw FormatError("checkpoint tensor directory does not match the config");
    }
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      const auto& expect = model.layout().tensors()[i];
      if (tensors[i].at("name") != expect.name || tensors[i].at("shape") != expect.shape ||
          tensors[i].at("offset").get<std::size_t>() != expect.offset * sizeof(float)) {
        throw FormatError("checkpoint tensor '" + expect.name + "' has an unexpected layout");
      }
    }
    auto data = r.array<float>(model.parameters().size());
    if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint payload");
    std::copy(data.begin(), data.end(), model.parameters().begin());
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint manifest: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint config: ") + e.what());
  }
}

void save_checkpoint(const Decoder& model, const std::filesystem::path& path) {
  auto bytes = serialize_checkpoint(model);
  detail::write_file(path.string(), bytes);
}

Decoder load_checkpoint(const std::filesystem::path& path) {
  return parse_checkpoint(detail::read_file(path.string()));
}

}  // namespace pwlm
