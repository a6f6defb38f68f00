#include "dialectid/textcat.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "dialectid/errors.hpp"
#include "dialectid/text.hpp"

namespace dialectid::textcat {

NGramCounts extract_ngrams(std::string_view input, std::size_t n_min, std::size_t n_max) {
  NGramCounts counts;
  for (const auto& token : text::split_whitespace(input)) {
    std::u32string padded = U"_";
    padded += text::decode(token);
    padded += U'_';
    for (std::size_t n = n_min; n <= n_max; ++n) {
      if (padded.size() < n) break;
      for (std::size_t i = 0; i + n <= padded.size(); ++i) {
        ++counts[text::encode(std::u32string_view(padded).substr(i, n))];
      }
    }
  }
  return counts;
}

NGramProfile::NGramProfile(std::string owner, ProfileOptions options, std::vector<ProfileEntry> entries)
    : owner_(std::move(owner)), options_(options), entries_(std::move(entries)) {
  rank_.reserve(entries_.size());
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (!rank_.emplace(entries_[i].ngram, i).second) {
      throw DataError("duplicate n-gram in profile '" + owner_ + "': " + entries_[i].ngram);
    }
  }
}

std::optional<std::size_t> NGramProfile::rank_of(const std::string& ngram) const {
  const auto it = rank_.find(ngram);
  if (it == rank_.end()) return std::nullopt;
  return it->second;
}

NGramProfile profile_from_counts(const NGramCounts& counts, std::string owner, const ProfileOptions& options) {
  std::vector<ProfileEntry> entries;
  entries.reserve(counts.size());
  for (const auto& [ngram, count] : counts) entries.push_back({ngram, count});
  // counts is ordered by n-gram, so a stable sort on count alone gives the
  // lexicographic tie rule.
  std::stable_sort(entries.begin(), entries.end(),
                   [](const ProfileEntry& a, const ProfileEntry& b) { return a.count > b.count; });
  if (entries.size() > options.profile_size) entries.resize(options.profile_size);
  return NGramProfile(std::move(owner), options, std::move(entries));
}

NGramProfile build_profile(std::span<const std::string> texts, std::string owner, const ProfileOptions& options) {
  if (texts.empty()) throw ConfigError("cannot build a profile from zero texts");
  NGramCounts counts;
  for (const auto& t : texts) {
    for (const auto& [ngram, c] : extract_ngrams(t, options.n_min, options.n_max)) counts[ngram] += c;
  }
  if (counts.empty()) throw ConfigError("texts for profile '" + owner + "' contain no n-grams");
  return profile_from_counts(counts, std::move(owner), options);
}

std::size_t out_of_place_distance(const NGramProfile& query, const NGramProfile& reference) {
  std::size_t distance = 0;
  const auto& entries = query.entries();
  for (std::size_t rank = 0; rank < entries.size(); ++rank) {
    if (const auto other = reference.rank_of(entries[rank].ngram)) {
      distance += rank > *other ? rank - *other : *other - rank;
    } else {
      distance += reference.profile_size();
    }
  }
  return distance;
}

TextCatModel train_textcat(std::span<const LabeledSentence> sentences, const ProfileOptions& options) {
  std::map<VarietyLabel, NGramCounts> per_label;
  for (const auto& s : sentences) {
    auto& counts = per_label[s.variety];
    for (const auto& token : corpus::feature_tokens(s.tokens)) {
      for (const auto& [ngram, c] : extract_ngrams(token, options.n_min, options.n_max)) counts[ngram] += c;
    }
  }
  if (per_label.size() < 2) throw ConfigError("textcat needs at least 2 varieties");
  TextCatModel model;
  model.options = options;
  for (const auto& [label, counts] : per_label) {
    model.labels.push_back(label);
    model.profiles.push_back(profile_from_counts(counts, label.code(), options));
  }
  return model;
}

std::vector<TextCatScore> classify_textcat(std::string_view input, const TextCatModel& model) {
  if (model.profiles.size() < 2) throw ConfigError("textcat model needs at least 2 profiles");
  if (text::split_whitespace(input).empty()) throw ConfigError("cannot classify empty text");
  const auto counts = extract_ngrams(input, model.options.n_min, model.options.n_max);
  const auto query = profile_from_counts(counts, "query", model.options);

  std::vector<TextCatScore> scores;
  for (std::size_t i = 0; i < model.profiles.size(); ++i) {
    scores.push_back({model.labels[i], out_of_place_distance(query, model.profiles[i]), 0.0});
  }
  std::stable_sort(scores.begin(), scores.end(),
                   [](const TextCatScore& a, const TextCatScore& b) { return a.distance < b.distance; });

  const double temperature = static_cast<double>(model.options.profile_size);
  const double best = static_cast<double>(scores.front().distance);
  double total = 0.0;
  for (auto& s : scores) {
    s.probability = std::exp(-(static_cast<double>(s.distance) - best) / temperature);
    total += s.probability;
  }
  for (auto& s : scores) s.probability /= total;
  return scores;
}

void write_profile(const NGramProfile& profile, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write profile: " + path.string());
  const auto& entries = profile.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    out << i << '\t' << entries[i].ngram << '\t' << entries[i].count << '\n';
  }
  if (!out) throw Error("failed writing profile: " + path.string());
}

NGramProfile read_profile(const std::filesystem::path& path, std::string owner, const ProfileOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read profile: " + path.string());
  std::vector<ProfileEntry> entries;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) throw DataError("malformed profile line in " + path.string() + ": " + line);
    const auto rank = std::stoull(line.substr(0, t1));
    if (rank != entries.size()) throw DataError("profile ranks are not contiguous in " + path.string());
    entries.push_back({line.substr(t1 + 1, t2 - t1 - 1), std::stoull(line.substr(t2 + 1))});
  }
  return NGramProfile(std::move(owner), options, std::move(entries));
}

void save_textcat(const TextCatModel& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json labels = nlohmann::json::array();
  for (std::size_t i = 0; i < model.labels.size(); ++i) {
    labels.push_back(model.labels[i].code());
    write_profile(model.profiles[i], dir / (model.labels[i].code() + ".profile"));
  }
  const nlohmann::json manifest = {{"n_min", model.options.n_min},
                                   {"n_max", model.options.n_max},
                                   {"profile_size", model.options.profile_size},
                                   {"labels", labels}};
  std::ofstream out(dir / "textcat.json");
  out << manifest.dump(2) << '\n';
  if (!out) throw Error("cannot write " + (dir / "textcat.json").string());
}

TextCatModel load_textcat(const std::filesystem::path& dir) {
  std::ifstream in(dir / "textcat.json");
  if (!in) throw DataError("missing textcat.json in " + dir.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed textcat.json: " + std::string(e.what()));
  }
  TextCatModel model;
  model.options.n_min = manifest.at("n_min").get<std::size_t>();
  model.options.n_max = manifest.at("n_max").get<std::size_t>();
  model.options.profile_size = manifest.at("profile_size").get<std::size_t>();
  for (const auto& code : manifest.at("labels")) {
    VarietyLabel label(code.get<std::string>());
    model.profiles.push_back(read_profile(dir / (label.code() + ".profile"), label.code(), model.options));
    model.labels.push_back(std::move(label));
  }
  return model;
}

}  // namespace dialectid::textcat
