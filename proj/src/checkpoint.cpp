#include <json.hpp>

#include "binary_io.hpp"
#include "ttscore/error.hpp"
#include "ttscore/generator.hpp"

namespace ttscore {

using nlohmann::json;

namespace {

constexpr char kCheckpointMagic[4] = {'T', 'T', 'S', 'C'};
constexpr std::uint32_t kCheckpointVersion = 1;

json config_to_json(const GeneratorConfig& c) {
  return {{"enc_layers", c.enc_layers}, {"dec_layers", c.dec_layers}, {"model_dim", c.model_dim},
          {"embed_dim", c.embed_dim},   {"heads", c.heads},           {"ffn_dim", c.ffn_dim},
          {"dropout", c.dropout},       {"max_len", c.max_len},       {"src_vocab", c.src_vocab},
          {"tgt_vocab", c.tgt_vocab},   {"conditional", c.conditional}};
}

GeneratorConfig config_from_json(const json& j) {
  GeneratorConfig c;
  c.enc_layers = j.at("enc_layers").get<int>();
  c.dec_layers = j.at("dec_layers").get<int>();
  c.model_dim = j.at("model_dim").get<int>();
  c.embed_dim = j.at("embed_dim").get<int>();
  c.heads = j.at("heads").get<int>();
  c.ffn_dim = j.at("ffn_dim").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.max_len = j.at("max_len").get<int>();
  c.src_vocab = j.at("src_vocab").get<int>();
  c.tgt_vocab = j.at("tgt_vocab").get<int>();
  c.conditional = j.at("conditional").get<bool>();
  return c;
}

template <typename Scalar>
std::vector<char> encode(const Generator<Scalar>& model) {
  json tensors = json::array();
  const auto& params = model.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    tensors.push_back({{"name", params.name(i)}, {"rows", params[i].rows()}, {"cols", params[i].cols()}});
  }
  json header = {{"format", "ttscore-generator"},
                 {"precision", std::is_same_v<Scalar, double> ? "double" : "single"},
                 {"config", config_to_json(model.config())},
                 {"trained_steps", model.trained_steps()},
                 {"inventory", model.inventory().symbols()},
                 {"tensors", tensors}};
  const std::string text = header.dump();
  std::vector<char> out(kCheckpointMagic, kCheckpointMagic + 4);
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = params[i];
    for (Index j = 0; j < t.size(); ++j) detail::put_le<Scalar>(out, t.data()[j]);
  }
  return out;
}

template <typename Scalar>
Generator<Scalar> decode(const json& header, detail::ByteReader& reader) {
  const auto config = config_from_json(header.at("config"));
  PhonemeInventory inventory(header.at("inventory").get<std::vector<std::string>>());
  auto model = Generator<Scalar>::build(config, 0, std::move(inventory));
  const auto& tensors = header.at("tensors");
  auto& params = model.params();
  if (tensors.size() != params.size()) {
    throw ValidationError(reader.origin() + ": tensor count does not match the configured architecture");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = tensors[i];
    if (t.at("name").get<std::string>() != params.name(i) || t.at("rows").get<Index>() != params[i].rows() ||
        t.at("cols").get<Index>() != params[i].cols()) {
      throw ValidationError(reader.origin() + ": tensor " + t.at("name").get<std::string>() +
                            " does not match the configured shape");
    }
    for (Index j = 0; j < params[i].size(); ++j) params[i].data()[j] = reader.get<Scalar>();
  }
  if (reader.remaining() != 0) throw ValidationError(reader.origin() + ": trailing bytes after tensors");
  if (!params.all_finite()) throw ValidationError(reader.origin() + ": non-finite parameters");
  model.set_trained_steps(header.at("trained_steps").get<std::int64_t>());
  return model;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const AnyGenerator& model) {
  auto bytes = std::visit([](const auto& m) { return encode(m); }, model);
  detail::write_file_bytes(path, bytes);
}

AnyGenerator load_checkpoint(const std::filesystem::path& path, const CheckpointExpectation& expect) {
  const auto bytes = detail::read_file_bytes(path);
  detail::ByteReader reader(bytes, path.string());
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw ValidationError(path.string() + ": not a generator checkpoint (magic mismatch)");
  }
  reader.take(4);
  const auto version = reader.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw ValidationError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto header_len = reader.get<std::uint64_t>();
  if (header_len > reader.remaining()) throw ValidationError(path.string() + ": truncated header");
  auto header_bytes = reader.take(static_cast<std::size_t>(header_len));
  try {
    const auto header = json::parse(header_bytes.begin(), header_bytes.end());
    if (header.at("format").get<std::string>() != "ttscore-generator") {
      throw ValidationError(path.string() + ": not a generator checkpoint");
    }
    const auto config = config_from_json(header.at("config"));
    auto mismatch = [&](const std::string& what, auto expected, auto actual) {
      throw ValidationError(path.string() + ": " + what + " mismatch (expected " + std::to_string(expected) +
                            ", checkpoint has " + std::to_string(actual) + ")");
    };
    if (expect.src_vocab && *expect.src_vocab != config.src_vocab) {
      mismatch("src_vocab", *expect.src_vocab, config.src_vocab);
    }
    if (expect.tgt_vocab && *expect.tgt_vocab != config.tgt_vocab) {
      mismatch("tgt_vocab", *expect.tgt_vocab, config.tgt_vocab);
    }
    if (expect.conditional && *expect.conditional != config.conditional) {
      throw ValidationError(path.string() + (config.conditional ? ": expected a decoder-only model"
                                                                : ": expected a conditional model"));
    }
    const auto precision = header.at("precision").get<std::string>();
    if (precision == "single") return decode<float>(header, reader);
    if (precision == "double") return decode<double>(header, reader);
    throw ValidationError(path.string() + ": unknown precision " + precision);
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": malformed checkpoint header (" + e.what() + ")");
  }
}

}  // namespace ttscore
