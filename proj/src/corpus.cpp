#include "ttscore/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "binary_io.hpp"
#include "ttscore/error.hpp"
#include "ttscore/log.hpp"

namespace ttscore {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Types

FeatureMatrix::FeatureMatrix(RowMatrix<float> values) : values_(std::move(values)) {
  if (values_.rows() < 1 || values_.cols() < 1) {
    throw ValidationError("feature matrix must have at least one frame and one dim");
  }
  if (!values_.allFinite()) throw ValidationError("feature matrix contains non-finite values");
}

bool FeatureMatrix::operator==(const FeatureMatrix& other) const {
  if (frames() != other.frames() || dims() != other.dims()) return false;
  // Bitwise comparison so that -0.0 and 0.0 are distinguished.
  return std::memcmp(values_.data(), other.values_.data(),
                     sizeof(float) * static_cast<std::size_t>(values_.size())) == 0;
}

TokenSequence::TokenSequence(std::vector<std::int32_t> ids, std::int32_t vocab_size)
    : ids_(std::move(ids)), vocab_size_(vocab_size) {
  if (vocab_size_ < 1) throw ValidationError("token vocab_size must be positive");
  if (ids_.empty()) throw ValidationError("token sequence must not be empty");
  for (auto id : ids_) {
    if (id < 0 || id >= vocab_size_) {
      throw ValidationError("token id " + std::to_string(id) + " outside vocabulary of size " +
                            std::to_string(vocab_size_));
    }
  }
}

PhonemeSequence::PhonemeSequence(std::vector<std::string> symbols) : symbols_(std::move(symbols)) {
  if (symbols_.empty()) throw ValidationError("phoneme sequence must not be empty");
  for (const auto& s : symbols_) {
    if (s.empty()) throw ValidationError("empty phoneme symbol");
  }
}

PhonemeSequence PhonemeSequence::parse(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> out;
  for (std::string s; in >> s;) out.push_back(s);
  return PhonemeSequence(std::move(out));
}

std::string PhonemeSequence::joined() const {
  std::string out;
  for (std::size_t i = 0; i < symbols_.size(); ++i) {
    if (i) out += ' ';
    out += symbols_[i];
  }
  return out;
}

PhonemeInventory::PhonemeInventory(std::vector<std::string> symbols) : symbols_(std::move(symbols)) {
  for (std::size_t i = 0; i < symbols_.size(); ++i) {
    if (!index_.emplace(symbols_[i], static_cast<std::int32_t>(i)).second) {
      throw ValidationError("duplicate phoneme in inventory: " + symbols_[i]);
    }
  }
}

PhonemeInventory PhonemeInventory::collect(std::span<const PhonemeSequence> sequences) {
  std::set<std::string> seen;
  for (const auto& seq : sequences) seen.insert(seq.symbols().begin(), seq.symbols().end());
  return PhonemeInventory(std::vector<std::string>(seen.begin(), seen.end()));
}

std::int32_t PhonemeInventory::encode_symbol(const std::string& symbol, bool warn_unknown) const {
  auto it = index_.find(symbol);
  if (it == index_.end()) {
    if (warn_unknown) warn("unknown phoneme '" + symbol + "' mapped to UNK");
    return kUnkId;
  }
  return it->second + kFirstDataId;
}

std::vector<std::int32_t> PhonemeInventory::encode(const PhonemeSequence& phonemes) const {
  std::vector<std::int32_t> ids;
  ids.reserve(phonemes.size());
  for (const auto& s : phonemes.symbols()) ids.push_back(encode_symbol(s));
  return ids;
}

F0Contour::F0Contour(Eigen::VectorXd hz) : hz_(std::move(hz)) {
  if (!hz_.allFinite()) throw ValidationError("F0 contour contains non-finite values");
  if ((hz_.array() < 0.0).any()) throw ValidationError("F0 contour contains negative values");
}

F0Contour::F0Contour(const std::vector<double>& hz)
    : F0Contour(Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(hz.data(), static_cast<Index>(hz.size())))) {}

Index F0Contour::voiced_count() const { return (hz_.array() > 0.0).count(); }

// ---------------------------------------------------------------------------
// Alignment validation

std::vector<AlignmentSegment> validate_alignment(std::vector<AlignmentSegment> segments,
                                                 Index phoneme_count, Index frames) {
  if (phoneme_count < 1) throw ValidationError("alignment: phoneme count must be >= 1");
  std::stable_sort(segments.begin(), segments.end(),
                   [](const auto& a, const auto& b) { return a.phoneme_index < b.phoneme_index; });
  if (static_cast<Index>(segments.size()) != phoneme_count) {
    throw ValidationError("alignment: gap in phoneme coverage (" + std::to_string(segments.size()) +
                          " segments for " + std::to_string(phoneme_count) + " phonemes)");
  }
  for (Index i = 0; i < phoneme_count; ++i) {
    const auto& s = segments[static_cast<std::size_t>(i)];
    if (s.phoneme_index != i) {
      throw ValidationError("alignment: gap in phoneme coverage at phoneme " + std::to_string(i));
    }
    if (s.start_frame < 0 || s.end_frame > frames) {
      throw ValidationError("alignment: segment for phoneme " + std::to_string(i) +
                            " out of frame range [0," + std::to_string(frames) + ")");
    }
    if (s.end_frame <= s.start_frame) {
      throw ValidationError("alignment: zero-length segment for phoneme " + std::to_string(i));
    }
    if (i > 0 && s.start_frame < segments[static_cast<std::size_t>(i - 1)].end_frame) {
      throw ValidationError("alignment: segment for phoneme " + std::to_string(i) +
                            " overlaps the previous one");
    }
  }
  return segments;
}

// ---------------------------------------------------------------------------
// Feature files

namespace {
constexpr char kFeatureMagic[4] = {'T', 'T', 'S', 'F'};
}

std::vector<char> encode_features(const FeatureMatrix& matrix) {
  std::vector<char> out;
  const auto& v = matrix.values();
  out.reserve(16 + sizeof(float) * static_cast<std::size_t>(v.size()));
  out.insert(out.end(), kFeatureMagic, kFeatureMagic + 4);
  detail::put_le<std::uint32_t>(out, kFeatureFormatVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(v.rows()));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(v.cols()));
  for (Index i = 0; i < v.size(); ++i) detail::put_le<float>(out, v.data()[i]);
  return out;
}

FeatureMatrix decode_features(std::span<const char> bytes, const std::string& origin) {
  detail::ByteReader reader(bytes, origin);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kFeatureMagic, 4) != 0) {
    throw ValidationError(origin + ": header magic mismatch (expected TTSF)");
  }
  reader.take(4);
  const auto version = reader.get<std::uint32_t>();
  if (version != kFeatureFormatVersion) {
    throw ValidationError(origin + ": unsupported feature format version " + std::to_string(version));
  }
  const auto frames = reader.get<std::uint32_t>();
  const auto dims = reader.get<std::uint32_t>();
  const std::size_t count = static_cast<std::size_t>(frames) * dims;
  if (reader.remaining() < count * sizeof(float)) throw ValidationError(origin + ": truncated payload");
  if (reader.remaining() > count * sizeof(float)) throw ValidationError(origin + ": trailing bytes after payload");
  RowMatrix<float> m(frames, dims);
  for (std::size_t i = 0; i < count; ++i) m.data()[i] = reader.get<float>();
  if (!m.allFinite()) throw ValidationError(origin + ": non-finite values in payload");
  return FeatureMatrix(std::move(m));
}

void write_features(const std::filesystem::path& path, const FeatureMatrix& matrix) {
  detail::write_file_bytes(path, encode_features(matrix));
}

FeatureMatrix read_features(const std::filesystem::path& path) {
  auto bytes = detail::read_file_bytes(path);
  return decode_features(bytes, path.string());
}

void write_f0(const std::filesystem::path& path, const F0Contour& f0) {
  write_features(path, FeatureMatrix::from(f0.values()));
}

F0Contour read_f0(const std::filesystem::path& path) {
  auto m = read_features(path);
  if (m.dims() != 1) throw ValidationError(path.string() + ": F0 file must have exactly one column");
  return F0Contour(Eigen::VectorXd(m.values().col(0).cast<double>()));
}

// ---------------------------------------------------------------------------
// Token files

void write_tokens(const std::filesystem::path& path, std::span<const UttTokens> entries) {
  auto out = detail::create_text(path);
  for (const auto& e : entries) {
    if (e.utt_id.empty() || e.utt_id.find_first_of("\t\n") != std::string::npos) {
      throw ValidationError("invalid utt_id for token file: '" + e.utt_id + "'");
    }
    out << e.utt_id << '\t';
    const auto& ids = e.tokens.ids();
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i) out << ' ';
      out << ids[i];
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<UttTokens> read_tokens(const std::filesystem::path& path, std::int32_t vocab_size) {
  auto in = detail::open_text(path);
  std::vector<UttTokens> out;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    const auto where = path.string() + ":" + std::to_string(line_number);
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) throw ValidationError(where + ": expected 'utt_id<TAB>ids'");
    std::string utt = line.substr(0, tab);
    std::istringstream ids_in(line.substr(tab + 1));
    std::vector<std::int32_t> ids;
    for (std::string tok; ids_in >> tok;) {
      std::size_t used = 0;
      long long v = 0;
      try {
        v = std::stoll(tok, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != tok.size() || v < 0 || v > INT32_MAX) {
        throw ValidationError(where + ": invalid token id '" + tok + "'");
      }
      ids.push_back(static_cast<std::int32_t>(v));
    }
    if (!seen.insert(utt).second) throw ValidationError(where + ": duplicate utt_id " + utt);
    try {
      out.push_back({std::move(utt), TokenSequence(std::move(ids), vocab_size)});
    } catch (const ValidationError& e) {
      throw ValidationError(where + ": " + e.what());
    }
  }
  return out;
}

TokenSequence read_tokens_for(const std::filesystem::path& path, const std::string& utt_id,
                              std::int32_t vocab_size) {
  for (auto& e : read_tokens(path, vocab_size)) {
    if (e.utt_id == utt_id) return std::move(e.tokens);
  }
  throw ValidationError(path.string() + ": no tokens for utterance " + utt_id);
}

// ---------------------------------------------------------------------------
// Manifests

namespace {

const char* const kPathFields[] = {"phoneme_path", "feature_path",          "token_path",
                                   "alignment_path", "f0_path",             "prosody_feature_path",
                                   "prosody_token_path"};

std::optional<std::string>* path_slot(EvalRecord& r, std::string_view key) {
  if (key == "phoneme_path") return &r.phoneme_path;
  if (key == "feature_path") return &r.feature_path;
  if (key == "token_path") return &r.token_path;
  if (key == "alignment_path") return &r.alignment_path;
  if (key == "f0_path") return &r.f0_path;
  if (key == "prosody_feature_path") return &r.prosody_feature_path;
  if (key == "prosody_token_path") return &r.prosody_token_path;
  return nullptr;
}

const std::optional<std::string>& path_slot(const EvalRecord& r, std::string_view key) {
  return *path_slot(const_cast<EvalRecord&>(r), key);
}

}  // namespace

std::string manifest_line(const EvalRecord& r) {
  json j = json::object();
  j["utt_id"] = r.utt_id;
  j["system_id"] = r.system_id;
  j["text"] = r.text;
  if (r.hyp_text) j["hyp_text"] = *r.hyp_text;
  if (r.phonemes) j["phonemes"] = r.phonemes->symbols();
  for (const char* key : kPathFields) {
    if (const auto& p = path_slot(r, key)) j[key] = *p;
  }
  if (r.mos) j["mos"] = *r.mos;
  if (r.wer) j["wer"] = *r.wer;
  if (r.cer) j["cer"] = *r.cer;
  for (const auto& [k, v] : r.metrics) j[k] = v;
  return j.dump();
}

EvalRecord parse_manifest_line(const std::string& line, std::size_t line_number) {
  const auto where = "line " + std::to_string(line_number);
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ValidationError(where + ": malformed JSON (" + e.what() + ")");
  }
  if (!j.is_object()) throw ValidationError(where + ": record must be a JSON object");

  auto get_string = [&](const std::string& key) -> std::optional<std::string> {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return std::nullopt;
    if (!it->is_string()) throw ValidationError(where + ": field '" + key + "' must be a string");
    return it->get<std::string>();
  };
  auto get_number = [&](const std::string& key) -> std::optional<double> {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return std::nullopt;
    if (!it->is_number()) throw ValidationError(where + ": field '" + key + "' must be a number");
    double v = it->get<double>();
    if (!std::isfinite(v)) throw ValidationError(where + ": field '" + key + "' is not finite");
    return v;
  };

  EvalRecord r;
  auto utt = get_string("utt_id");
  if (!utt || utt->empty()) throw ValidationError(where + ": missing utt_id");
  auto sys = get_string("system_id");
  if (!sys || sys->empty()) throw ValidationError(where + ": missing system_id");
  r.utt_id = *utt;
  r.system_id = *sys;
  r.text = get_string("text").value_or("");
  r.hyp_text = get_string("hyp_text");
  if (auto it = j.find("phonemes"); it != j.end() && !it->is_null()) {
    try {
      if (it->is_string()) {
        r.phonemes = PhonemeSequence::parse(it->get<std::string>());
      } else if (it->is_array()) {
        r.phonemes = PhonemeSequence(it->get<std::vector<std::string>>());
      } else {
        throw ValidationError("must be a string or an array of strings");
      }
    } catch (const json::exception&) {
      throw ValidationError(where + ": field 'phonemes' must be an array of strings");
    } catch (const ValidationError& e) {
      throw ValidationError(where + ": field 'phonemes' " + e.what());
    }
  }
  for (const char* key : kPathFields) *path_slot(r, key) = get_string(key);
  r.mos = get_number("mos");
  r.wer = get_number("wer");
  r.cer = get_number("cer");

  static const std::set<std::string> known = {
      "utt_id", "system_id", "text", "hyp_text", "phonemes", "phoneme_path", "feature_path",
      "token_path", "alignment_path", "f0_path", "prosody_feature_path", "prosody_token_path",
      "mos", "wer", "cer"};
  for (const auto& [key, value] : j.items()) {
    if (known.count(key)) continue;
    if (value.is_number()) {
      double v = value.get<double>();
      if (!std::isfinite(v)) throw ValidationError(where + ": field '" + key + "' is not finite");
      r.metrics[key] = v;
    }
  }
  return r;
}

std::vector<EvalRecord> parse_manifest(const std::filesystem::path& path) {
  auto in = detail::open_text(path);
  std::vector<EvalRecord> records;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    EvalRecord r;
    try {
      r = parse_manifest_line(line, line_number);
    } catch (const ValidationError& e) {
      throw ValidationError(path.string() + ": " + e.what());
    }
    if (!seen.insert(r.utt_id).second) {
      throw ValidationError(path.string() + ": line " + std::to_string(line_number) +
                            ": duplicate utt_id " + r.utt_id);
    }
    records.push_back(std::move(r));
  }
  return records;
}

void write_manifest(const std::filesystem::path& path, std::span<const EvalRecord> records) {
  std::unordered_set<std::string> seen;
  for (const auto& r : records) {
    if (!seen.insert(r.utt_id).second) throw ValidationError("duplicate utt_id " + r.utt_id);
  }
  auto out = detail::create_text(path);
  for (const auto& r : records) out << manifest_line(r) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Alignments

AlignmentTable read_alignment_table(const std::filesystem::path& path) {
  auto in = detail::open_text(path);
  AlignmentTable table;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto where = path.string() + ": line " + std::to_string(line_number);
    try {
      auto j = json::parse(line);
      AlignmentSegment s;
      s.phoneme_index = j.at("phoneme_index").get<Index>();
      s.start_frame = j.at("start_frame").get<Index>();
      s.end_frame = j.at("end_frame").get<Index>();
      table[j.at("utt_id").get<std::string>()].push_back(s);
    } catch (const json::exception& e) {
      throw ValidationError(where + ": malformed alignment record (" + e.what() + ")");
    }
  }
  return table;
}

void write_alignment_table(const std::filesystem::path& path, const AlignmentTable& table) {
  auto out = detail::create_text(path);
  for (const auto& [utt, segments] : table) {
    for (const auto& s : segments) {
      json j = {{"utt_id", utt},
                {"phoneme_index", s.phoneme_index},
                {"start_frame", s.start_frame},
                {"end_frame", s.end_frame}};
      out << j.dump() << '\n';
    }
  }
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<AlignmentSegment> read_alignment(const std::filesystem::path& path,
                                             const std::string& utt_id,
                                             const PhonemeSequence& phonemes, Index frames) {
  auto table = read_alignment_table(path);
  auto it = table.find(utt_id);
  if (it == table.end()) throw ValidationError(path.string() + ": no alignment for " + utt_id);
  try {
    return validate_alignment(std::move(it->second), static_cast<Index>(phonemes.size()), frames);
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + " (" + utt_id + "): " + e.what());
  }
}

std::filesystem::path resolve_path(const std::filesystem::path& manifest_path, const std::string& ref) {
  std::filesystem::path p(ref);
  if (p.is_absolute()) return p;
  return manifest_path.parent_path() / p;
}

std::optional<PhonemeSequence> record_phonemes(const std::filesystem::path& manifest_path,
                                               const EvalRecord& record) {
  if (record.phonemes) return record.phonemes;
  if (!record.phoneme_path) return std::nullopt;
  auto in = detail::open_text(resolve_path(manifest_path, *record.phoneme_path));
  std::stringstream text;
  text << in.rdbuf();
  return PhonemeSequence::parse(text.str());
}

}  // namespace ttscore
