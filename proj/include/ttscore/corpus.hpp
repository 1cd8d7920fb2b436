#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace ttscore {

using Index = Eigen::Index;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Frame-level continuous features: rows are frames, columns feature dims.
/// Always at least 1x1 and finite.
class FeatureMatrix {
 public:
  explicit FeatureMatrix(RowMatrix<float> values);

  template <typename Derived>
  static FeatureMatrix from(const Eigen::MatrixBase<Derived>& m) {
    return FeatureMatrix(m.template cast<float>());
  }

  Index frames() const { return values_.rows(); }
  Index dims() const { return values_.cols(); }
  const RowMatrix<float>& values() const { return values_; }

  bool operator==(const FeatureMatrix& other) const;

 private:
  RowMatrix<float> values_;
};

/// Discrete token ids for one utterance; every id is below vocab_size.
class TokenSequence {
 public:
  TokenSequence(std::vector<std::int32_t> ids, std::int32_t vocab_size);

  const std::vector<std::int32_t>& ids() const { return ids_; }
  std::int32_t vocab_size() const { return vocab_size_; }
  std::size_t size() const { return ids_.size(); }

  bool operator==(const TokenSequence&) const = default;

 private:
  std::vector<std::int32_t> ids_;
  std::int32_t vocab_size_;
};

/// Conditioning phoneme labels, length L >= 1.
class PhonemeSequence {
 public:
  explicit PhonemeSequence(std::vector<std::string> symbols);
  /// Splits on whitespace.
  static PhonemeSequence parse(const std::string& text);

  const std::vector<std::string>& symbols() const { return symbols_; }
  std::size_t size() const { return symbols_.size(); }
  std::string joined() const;

  bool operator==(const PhonemeSequence&) const = default;

 private:
  std::vector<std::string> symbols_;
};

// Reserved ids shared by every model vocabulary. Data ids start at kFirstDataId.
inline constexpr std::int32_t kPadId = 0;
inline constexpr std::int32_t kBosId = 1;
inline constexpr std::int32_t kEosId = 2;
inline constexpr std::int32_t kUnkId = 3;
inline constexpr std::int32_t kFirstDataId = 4;
inline constexpr std::int32_t kNumSpecialIds = 4;

/// Declared phoneme inventory. Symbol i maps to model id i + kFirstDataId;
/// unknown symbols map to kUnkId with a warning.
class PhonemeInventory {
 public:
  PhonemeInventory() = default;
  explicit PhonemeInventory(std::vector<std::string> symbols);

  /// Sorted set of distinct symbols seen in the given sequences.
  static PhonemeInventory collect(std::span<const PhonemeSequence> sequences);

  const std::vector<std::string>& symbols() const { return symbols_; }
  std::int32_t model_vocab_size() const {
    return static_cast<std::int32_t>(symbols_.size()) + kNumSpecialIds;
  }
  std::int32_t encode_symbol(const std::string& symbol, bool warn_unknown = true) const;
  std::vector<std::int32_t> encode(const PhonemeSequence& phonemes) const;

  bool operator==(const PhonemeInventory& other) const { return symbols_ == other.symbols_; }

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, std::int32_t> index_;
};

struct AlignmentSegment {
  Index phoneme_index = 0;
  Index start_frame = 0;  // inclusive
  Index end_frame = 0;    // exclusive

  bool operator==(const AlignmentSegment&) const = default;
};

/// Per-frame F0 in Hz; 0.0 marks an unvoiced frame.
class F0Contour {
 public:
  explicit F0Contour(Eigen::VectorXd hz);
  explicit F0Contour(const std::vector<double>& hz);

  const Eigen::VectorXd& values() const { return hz_; }
  Index size() const { return hz_.size(); }
  bool voiced(Index i) const { return hz_[i] > 0.0; }
  Index voiced_count() const;

  bool operator==(const F0Contour& other) const { return hz_ == other.hz_; }

 private:
  Eigen::VectorXd hz_;
};

/// One utterance of a manifest. Paths are stored as written; resolve them
/// against the manifest directory with resolve_path().
struct EvalRecord {
  std::string utt_id;
  std::string system_id;
  std::string text;
  std::optional<std::string> hyp_text;
  std::optional<PhonemeSequence> phonemes;
  std::optional<std::string> phoneme_path;
  std::optional<std::string> feature_path;
  std::optional<std::string> token_path;
  std::optional<std::string> alignment_path;
  std::optional<std::string> f0_path;
  std::optional<std::string> prosody_feature_path;
  std::optional<std::string> prosody_token_path;
  std::optional<double> mos;
  std::optional<double> wer;
  std::optional<double> cer;
  /// Further numeric columns (e.g. an external ELO rating), keyed by name.
  std::map<std::string, double> metrics;

  bool operator==(const EvalRecord&) const = default;
};

// ---------------------------------------------------------------------------
// Validation

/// Sorts by phoneme index and checks coverage of 0..L-1, frame bounds,
/// non-zero length and non-overlap. Throws ValidationError.
std::vector<AlignmentSegment> validate_alignment(std::vector<AlignmentSegment> segments,
                                                 Index phoneme_count, Index frames);

// ---------------------------------------------------------------------------
// File formats

inline constexpr std::uint32_t kFeatureFormatVersion = 1;

/// Binary .ttsf: "TTSF", u32 version, u32 frames, u32 dims, then row-major
/// little-endian float32 payload.
void write_features(const std::filesystem::path& path, const FeatureMatrix& matrix);
FeatureMatrix read_features(const std::filesystem::path& path);
std::vector<char> encode_features(const FeatureMatrix& matrix);
FeatureMatrix decode_features(std::span<const char> bytes, const std::string& origin = "<memory>");

/// F0 contours are stored as single-column .ttsf files.
void write_f0(const std::filesystem::path& path, const F0Contour& f0);
F0Contour read_f0(const std::filesystem::path& path);

struct UttTokens {
  std::string utt_id;
  TokenSequence tokens;

  bool operator==(const UttTokens&) const = default;
};

/// Text .tok: one utterance per line, "utt_id<TAB>id id id".
void write_tokens(const std::filesystem::path& path, std::span<const UttTokens> entries);
std::vector<UttTokens> read_tokens(const std::filesystem::path& path, std::int32_t vocab_size);
/// Reads the entry for one utterance; throws ValidationError when absent.
TokenSequence read_tokens_for(const std::filesystem::path& path, const std::string& utt_id,
                              std::int32_t vocab_size);

/// Line-delimited JSON manifest.
std::vector<EvalRecord> parse_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, std::span<const EvalRecord> records);
std::string manifest_line(const EvalRecord& record);
EvalRecord parse_manifest_line(const std::string& line, std::size_t line_number);

/// Line-delimited JSON alignment records {utt_id, phoneme_index, start_frame, end_frame}.
using AlignmentTable = std::map<std::string, std::vector<AlignmentSegment>>;
AlignmentTable read_alignment_table(const std::filesystem::path& path);
void write_alignment_table(const std::filesystem::path& path, const AlignmentTable& table);
/// Reads and validates the segments of one utterance.
std::vector<AlignmentSegment> read_alignment(const std::filesystem::path& path,
                                             const std::string& utt_id,
                                             const PhonemeSequence& phonemes, Index frames);

/// Inline phonemes, else the whitespace-separated contents of phoneme_path.
std::optional<PhonemeSequence> record_phonemes(const std::filesystem::path& manifest_path,
                                               const EvalRecord& record);

/// Resolves a manifest-relative path.
std::filesystem::path resolve_path(const std::filesystem::path& manifest_path,
                                   const std::string& ref);

}  // namespace ttscore
