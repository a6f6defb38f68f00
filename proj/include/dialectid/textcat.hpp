#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dialectid/corpus.hpp"

// Character n-gram profiles ranked by frequency, compared with the
// out-of-place measure.
namespace dialectid::textcat {

struct ProfileOptions {
  std::size_t n_min = 2;
  std::size_t n_max = 5;
  std::size_t profile_size = 2000;
};

/// Exact n-gram occurrence counts. Ordered so iteration is deterministic.
using NGramCounts = std::map<std::string, std::size_t>;

/// Each whitespace-separated token is padded as `_token_` and every
/// code-point n-gram with n_min <= n <= n_max is counted. Input is expected
/// to be case-folded and NFC already.
NGramCounts extract_ngrams(std::string_view text, std::size_t n_min = 2, std::size_t n_max = 5);

struct ProfileEntry {
  std::string ngram;
  std::size_t count = 0;
};

/// Ranked n-gram table. The rank of an entry is its index.
class NGramProfile {
 public:
  NGramProfile() = default;
  NGramProfile(std::string owner, ProfileOptions options, std::vector<ProfileEntry> entries);

  const std::string& owner() const { return owner_; }
  const ProfileOptions& options() const { return options_; }
  std::size_t profile_size() const { return options_.profile_size; }
  const std::vector<ProfileEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::optional<std::size_t> rank_of(const std::string& ngram) const;

 private:
  std::string owner_;
  ProfileOptions options_;
  std::vector<ProfileEntry> entries_;
  std::unordered_map<std::string, std::size_t> rank_;
};

/// Sorts by descending count, ties lexicographically ascending, then keeps
/// the first profile_size entries.
NGramProfile profile_from_counts(const NGramCounts& counts, std::string owner,
                                 const ProfileOptions& options = {});

/// Throws ConfigError when texts is empty or yields no n-gram.
NGramProfile build_profile(std::span<const std::string> texts, std::string owner,
                           const ProfileOptions& options = {});

/// Sum over query entries of |rank_q - rank_r|; n-grams missing from the
/// reference cost the reference's profile_size.
std::size_t out_of_place_distance(const NGramProfile& query, const NGramProfile& reference);

struct TextCatModel {
  ProfileOptions options;
  std::vector<VarietyLabel> labels;     // sorted
  std::vector<NGramProfile> profiles;   // parallel to labels
};

/// One profile per variety, built from the case-folded sentences.
TextCatModel train_textcat(std::span<const LabeledSentence> sentences, const ProfileOptions& options = {});

struct TextCatScore {
  VarietyLabel label;
  std::size_t distance = 0;
  double probability = 0.0;
};

/// Ranked ascending by distance (ties by label order). Probabilities are a
/// softmax of -distance / profile_size. Throws ConfigError on empty text.
std::vector<TextCatScore> classify_textcat(std::string_view text, const TextCatModel& model);

/// `rank<TAB>ngram<TAB>count` per line.
void write_profile(const NGramProfile& profile, const std::filesystem::path& path);
NGramProfile read_profile(const std::filesystem::path& path, std::string owner,
                          const ProfileOptions& options);

/// Writes `<LABEL>.profile` files plus `textcat.json` (n range, size, labels).
void save_textcat(const TextCatModel& model, const std::filesystem::path& dir);
TextCatModel load_textcat(const std::filesystem::path& dir);

}  // namespace dialectid::textcat
