#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace dialectid {

/// Dialectal variety code: non-empty, uppercase ASCII letters only.
class VarietyLabel {
 public:
  VarietyLabel() = default;
  explicit VarietyLabel(std::string code);

  static bool is_valid(std::string_view code);

  const std::string& code() const { return code_; }

  auto operator<=>(const VarietyLabel&) const = default;

 private:
  std::string code_;
};

/// One sentence of the classification dataset. Tokens keep their original
/// casing; models fold case before feature extraction.
struct LabeledSentence {
  std::vector<std::string> tokens;
  VarietyLabel variety;
  std::string doc_id;
};

}  // namespace dialectid

namespace dialectid::corpus {

struct Document {
  std::string id;
  VarietyLabel variety;
  std::string text;  // NFC
  std::string source;
};

struct Corpus {
  std::vector<Document> documents;  // manifest order
};

/// Reads a tab-separated manifest (`id  label  path  source`, `#` starts a
/// comment line). Paths are resolved relative to the manifest's directory.
/// Throws DataError naming the offending row or file.
Corpus load_corpus(const std::filesystem::path& manifest_path);

/// Splits on `.` `!` `?` `:` `;` followed by whitespace or end of text, and on
/// newlines. Delimiters stay with the left sentence, internal whitespace is
/// collapsed to single spaces, empty sentences are dropped.
std::vector<std::string> segment_sentences(std::string_view text);

std::vector<std::string> tokenize(std::string_view sentence);

/// Lowercased copies of the tokens, for n-gram and embedding features.
std::vector<std::string> feature_tokens(const std::vector<std::string>& tokens);

struct PrepareOptions {
  std::size_t min_variety_tokens = 10000;  // varieties need strictly more
  std::size_t min_sentence_len = 5;        // sentences need at least this many
};

/// Applies the variety cutoff and the sentence-length filter. Output is
/// ordered by document id, then sentence index. Throws DataError when
/// nothing survives.
std::vector<LabeledSentence> prepare_dataset(const Corpus& corpus,
                                             const PrepareOptions& options = {});

inline constexpr std::size_t kHistogramBuckets = 40;  // lengths 1..39, then 40+

struct Counts {
  std::size_t documents = 0;
  std::size_t tokens = 0;
  std::size_t characters = 0;  // code points of tokens, whitespace excluded
  std::array<std::size_t, kHistogramBuckets> token_length_histogram{};

  double chars_per_token() const {
    return tokens == 0 ? 0.0 : static_cast<double>(characters) / static_cast<double>(tokens);
  }
};

struct VarietyStats {
  VarietyLabel label;
  Counts counts;
};

struct CorpusStats {
  std::vector<VarietyStats> varieties;  // descending token count, then label
  Counts total;
};

CorpusStats compute_stats(const Corpus& corpus);

/// `label,docs,tokens,chars,ratio`, one row per variety.
void write_stats_csv(const CorpusStats& stats, std::ostream& out);
nlohmann::json stats_to_json(const CorpusStats& stats);

}  // namespace dialectid::corpus
