#include "dialectid/corpus.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "dialectid/errors.hpp"
#include "dialectid/text.hpp"

namespace dialectid {

VarietyLabel::VarietyLabel(std::string code) : code_(std::move(code)) {
  if (!is_valid(code_)) {
    throw DataError("invalid variety label '" + code_ + "': expected uppercase ASCII letters");
  }
}

bool VarietyLabel::is_valid(std::string_view code) {
  return !code.empty() &&
         std::all_of(code.begin(), code.end(), [](char c) { return c >= 'A' && c <= 'Z'; });
}

}  // namespace dialectid

namespace dialectid::corpus {
namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return fields;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read file: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

bool is_sentence_delimiter(char32_t c) {
  return c == U'.' || c == U'!' || c == U'?' || c == U':' || c == U';';
}

bool is_newline(char32_t c) {
  return c == U'\n' || c == U'\r' || c == U'\v' || c == U'\f' || c == U'\u0085' ||
         c == U'\u2028' || c == U'\u2029';
}

std::size_t histogram_bucket(std::size_t length) {
  return std::min(length, kHistogramBuckets) - 1;
}

void add_tokens(Counts& counts, const std::vector<std::string>& tokens) {
  for (const auto& token : tokens) {
    const auto len = text::code_point_count(token);
    ++counts.tokens;
    counts.characters += len;
    ++counts.token_length_histogram[histogram_bucket(len)];
  }
}

}  // namespace

Corpus load_corpus(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw DataError("cannot open manifest: " + manifest_path.string());
  const auto base = manifest_path.parent_path();

  Corpus corpus;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto where = manifest_path.string() + ":" + std::to_string(line_no) + ": ";

    auto fields = split_tabs(line);
    if (fields.size() == 3) fields.emplace_back();
    if (fields.size() != 4) {
      throw DataError(where + "expected 4 tab-separated fields (id, label, path, source), got " +
                      std::to_string(fields.size()));
    }
    const auto& id = fields[0];
    if (id.empty()) throw DataError(where + "empty document id");
    if (!VarietyLabel::is_valid(fields[1])) {
      throw DataError(where + "invalid label '" + fields[1] + "'");
    }
    if (!seen.insert(id).second) throw DataError(where + "duplicate document id '" + id + "'");

    std::filesystem::path doc_path = fields[2];
    if (doc_path.is_relative()) doc_path = base / doc_path;
    if (!std::filesystem::is_regular_file(doc_path)) {
      throw DataError(where + "missing document file: " + doc_path.string());
    }
    const auto raw = read_file(doc_path);
    if (!text::is_valid_utf8(raw)) throw DataError(where + "file is not valid UTF-8: " + doc_path.string());
    auto normalized = text::nfc(raw);
    if (tokenize(normalized).empty()) throw DataError(where + "document is empty: " + doc_path.string());

    corpus.documents.push_back(
        Document{id, VarietyLabel(fields[1]), std::move(normalized), fields[3]});
  }
  return corpus;
}

std::vector<std::string> segment_sentences(std::string_view input) {
  const auto chars = text::decode(input);
  std::vector<std::string> sentences;
  std::u32string current;
  bool pending_space = false;

  auto flush = [&] {
    if (!current.empty()) sentences.push_back(text::encode(current));
    current.clear();
    pending_space = false;
  };

  for (std::size_t i = 0; i < chars.size(); ++i) {
    const char32_t c = chars[i];
    if (is_newline(c)) {
      flush();
      continue;
    }
    if (text::is_whitespace(c)) {
      pending_space = !current.empty();
      continue;
    }
    if (pending_space) current.push_back(U' ');
    pending_space = false;
    current.push_back(c);
    if (is_sentence_delimiter(c) &&
        (i + 1 == chars.size() || text::is_whitespace(chars[i + 1]))) {
      flush();
    }
  }
  flush();
  return sentences;
}

std::vector<std::string> tokenize(std::string_view sentence) { return text::split_whitespace(sentence); }

std::vector<std::string> feature_tokens(const std::vector<std::string>& tokens) {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(text::fold_case(t));
  return out;
}

std::vector<LabeledSentence> prepare_dataset(const Corpus& corpus, const PrepareOptions& options) {
  std::map<VarietyLabel, std::size_t> variety_tokens;
  for (const auto& doc : corpus.documents) variety_tokens[doc.variety] += tokenize(doc.text).size();

  std::vector<const Document*> docs;
  for (const auto& doc : corpus.documents) {
    if (variety_tokens[doc.variety] > options.min_variety_tokens) docs.push_back(&doc);
  }
  std::sort(docs.begin(), docs.end(), [](const Document* a, const Document* b) { return a->id < b->id; });

  std::vector<LabeledSentence> out;
  for (const Document* doc : docs) {
    for (const auto& sentence : segment_sentences(doc->text)) {
      auto tokens = tokenize(sentence);
      if (tokens.size() < options.min_sentence_len) continue;
      out.push_back(LabeledSentence{std::move(tokens), doc->variety, doc->id});
    }
  }
  if (out.empty()) throw DataError("no data after filtering");
  return out;
}

CorpusStats compute_stats(const Corpus& corpus) {
  std::map<VarietyLabel, Counts> per_variety;
  CorpusStats stats;
  for (const auto& doc : corpus.documents) {
    const auto tokens = tokenize(doc.text);
    auto& counts = per_variety[doc.variety];
    ++counts.documents;
    add_tokens(counts, tokens);
    ++stats.total.documents;
    add_tokens(stats.total, tokens);
  }
  for (auto& [label, counts] : per_variety) stats.varieties.push_back(VarietyStats{label, counts});
  std::stable_sort(stats.varieties.begin(), stats.varieties.end(),
                   [](const VarietyStats& a, const VarietyStats& b) { return a.counts.tokens > b.counts.tokens; });
  return stats;
}

void write_stats_csv(const CorpusStats& stats, std::ostream& out) {
  out << "label,docs,tokens,chars,ratio\n";
  for (const auto& v : stats.varieties) {
    char ratio[32];
    std::snprintf(ratio, sizeof ratio, "%.6f", v.counts.chars_per_token());
    out << v.label.code() << ',' << v.counts.documents << ',' << v.counts.tokens << ','
        << v.counts.characters << ',' << ratio << '\n';
  }
}

namespace {

nlohmann::json counts_to_json(const Counts& c) {
  return {{"docs", c.documents},
          {"tokens", c.tokens},
          {"chars", c.characters},
          {"ratio", c.chars_per_token()},
          {"token_length_histogram", c.token_length_histogram}};
}

}  // namespace

nlohmann::json stats_to_json(const CorpusStats& stats) {
  nlohmann::json varieties = nlohmann::json::array();
  for (const auto& v : stats.varieties) {
    auto row = counts_to_json(v.counts);
    row["label"] = v.label.code();
    varieties.push_back(std::move(row));
  }
  return {{"histogram_buckets", "index i counts tokens of length i+1; last bucket is 40+"},
          {"varieties", std::move(varieties)},
          {"total", counts_to_json(stats.total)}};
}

}  // namespace dialectid::corpus
