#include "dialectid/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <unistd.h>

#include "dialectid/corpus.hpp"
#include "dialectid/errors.hpp"
#include "dialectid/eval.hpp"
#include "dialectid/model.hpp"
#include "dialectid/synthgen.hpp"
#include "dialectid/text.hpp"

namespace dialectid::cli {
namespace {

namespace fs = std::filesystem;

std::string default_output_dir() {
  const char* env = std::getenv(kOutputDirEnv);
  return env && *env ? env : kDefaultOutputDir;
}

struct PrepareFlags {
  std::size_t min_variety_tokens = corpus::PrepareOptions{}.min_variety_tokens;
  std::size_t min_sentence_len = corpus::PrepareOptions{}.min_sentence_len;

  void add(CLI::App* app) {
    app->add_option("--min-variety-tokens", min_variety_tokens,
                    "Keep varieties with strictly more tokens than this")
        ->capture_default_str();
    app->add_option("--min-sentence-len", min_sentence_len, "Drop sentences with fewer tokens")->capture_default_str();
  }

  std::vector<LabeledSentence> load(const std::string& manifest) const {
    return corpus::prepare_dataset(corpus::load_corpus(manifest), {min_variety_tokens, min_sentence_len});
  }
};

// Hyperparameter overrides shared by train and evaluate.
struct Overrides {
  std::optional<std::size_t> epochs;
  std::optional<double> dropout;
  std::optional<double> learning_rate;
  std::optional<std::size_t> batch_size;
  std::optional<std::size_t> patience;
  std::optional<std::size_t> hidden_size;
  std::optional<std::size_t> max_len;
  std::optional<std::size_t> dim;
  std::optional<std::size_t> embedding_epochs;
  std::optional<std::size_t> buckets;
  std::optional<std::size_t> min_count;
  std::optional<std::string> gamma;
  std::optional<double> svm_c;
  std::optional<std::size_t> max_passes;
  std::optional<std::string> svm_features;
  std::optional<std::size_t> profile_size;

  void add(CLI::App* app) {
    app->add_option("--epochs", epochs, "Neural training epochs (default 25)");
    app->add_option("--dropout", dropout, "Dropout rate (default 0.5)");
    app->add_option("--learning-rate", learning_rate, "Adam learning rate (default 0.001)");
    app->add_option("--batch-size", batch_size, "Mini-batch size (default 64)");
    app->add_option("--patience", patience, "Early-stopping patience in epochs (default 3)");
    app->add_option("--hidden-size", hidden_size, "LSTM hidden size (default 100)");
    app->add_option("--max-len", max_len, "Tokens kept per sentence (default 60)");
    app->add_option("--dim", dim, "Embedding dimension (default 100)");
    app->add_option("--embedding-epochs", embedding_epochs, "Embedding training epochs (default 5)");
    app->add_option("--buckets", buckets, "Subword hash buckets, a power of two (default 2^20)");
    app->add_option("--min-count", min_count, "Minimum word frequency for a word vector (default 2)");
    app->add_option("--gamma", gamma, "SVM RBF gamma: 'scale' or a positive number (default scale)");
    app->add_option("--C", svm_c, "SVM regularisation (default 1.0)");
    app->add_option("--max-passes", max_passes, "SMO sweep limit (default 100)");
    app->add_option("--svm-features", svm_features, "SVM input: mean-embedding or char-tfidf (default mean-embedding)")
        ->check(CLI::IsMember({"mean-embedding", "char-tfidf"}));
    app->add_option("--profile-size", profile_size, "TextCat profile length (default 2000)");
  }

  ModelSpec apply(ModelKind kind, std::uint64_t seed) const {
    ModelSpec spec = ModelSpec::defaults(kind);
    const bool neural = kind == ModelKind::Cnn || kind == ModelKind::Lstm || kind == ModelKind::CLstm;
    auto require = [&](bool ok, const char* flag, const char* kinds) {
      if (!ok) throw ConfigError(std::string(flag) + " applies only to " + kinds);
    };
    auto& t = nn::training_of(spec.network);
    if (epochs) require(neural, "--epochs", "cnn, lstm, clstm"), t.epochs = *epochs;
    if (dropout) require(neural, "--dropout", "cnn, lstm, clstm"), t.dropout = *dropout;
    if (learning_rate) require(neural, "--learning-rate", "cnn, lstm, clstm"), t.learning_rate = *learning_rate;
    if (batch_size) require(neural, "--batch-size", "cnn, lstm, clstm"), t.batch_size = *batch_size;
    if (patience) require(neural, "--patience", "cnn, lstm, clstm"), t.patience = *patience;
    if (max_len) require(neural, "--max-len", "cnn, lstm, clstm"), t.max_len = *max_len;
    if (hidden_size) {
      require(kind == ModelKind::Lstm || kind == ModelKind::CLstm, "--hidden-size", "lstm, clstm");
      std::visit(
          [&](auto& c) {
            if constexpr (requires { c.hidden_size; }) c.hidden_size = *hidden_size;
          },
          spec.network);
    }
    if (dim) spec.embedding.dim = *dim;
    if (embedding_epochs) spec.embedding.epochs = *embedding_epochs;
    if (buckets) spec.embedding.bucket_count = *buckets;
    if (min_count) spec.embedding.min_count = *min_count;
    if (gamma) require(kind == ModelKind::Svm, "--gamma", "svm"), spec.svm.gamma = svm::GammaSetting::parse(*gamma);
    if (svm_c) require(kind == ModelKind::Svm, "--C", "svm"), spec.svm.C = *svm_c;
    if (max_passes) require(kind == ModelKind::Svm, "--max-passes", "svm"), spec.svm.max_passes = *max_passes;
    if (svm_features) {
      require(kind == ModelKind::Svm, "--svm-features", "svm");
      spec.svm_features = *svm_features == "char-tfidf" ? SvmFeatures::CharNgramTfidf : SvmFeatures::MeanEmbedding;
    }
    if (profile_size) spec.textcat.profile_size = *profile_size;
    spec.reseed(seed);
    spec.validate();
    return spec;
  }
};

void write_text(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << content;
  out.flush();
  if (!out) throw Error("cannot write " + path.string());
}

int cmd_stats(const std::string& manifest, bool json, const fs::path& out_dir, std::ostream& out) {
  const auto stats = corpus::compute_stats(corpus::load_corpus(manifest));
  std::string body;
  if (json) {
    body = corpus::stats_to_json(stats).dump(2) + "\n";
    write_text(out_dir / "stats.json", body);
  } else {
    std::ostringstream s;
    corpus::write_stats_csv(stats, s);
    body = s.str();
    write_text(out_dir / "stats.csv", body);
  }
  out << body;
  return kOk;
}

int cmd_train(const std::string& arch, const std::string& manifest, const PrepareFlags& prepare,
              const Overrides& overrides, std::uint64_t seed, const fs::path& model_dir, std::ostream& out) {
  const auto spec = overrides.apply(parse_model_kind(arch), seed);
  const auto data = prepare.load(manifest);
  const auto model = train_model(spec, data);
  model.save(model_dir);
  out << "trained " << arch << " on " << data.size() << " sentences, " << model.labels().size()
      << " varieties; config " << spec.config_hash() << "; model written to " << model_dir.string() << '\n';
  if (!model.training_log().epochs.empty()) {
    out << "epochs run " << model.training_log().epochs.size() << ", best epoch "
        << model.training_log().best_epoch << '\n';
  }
  return kOk;
}

int cmd_classify(const fs::path& model_dir, const std::string& input, const std::optional<std::string>& embeddings,
                 std::size_t top, std::ostream& out) {
  std::optional<fs::path> override_path;
  if (embeddings) override_path = *embeddings;
  const auto model = ClassifierModel::load(model_dir, override_path);

  std::ifstream file;
  std::istream* in = &std::cin;
  if (!input.empty() && input != "-") {
    file.open(input, std::ios::binary);
    if (!file) throw ConfigError("cannot open input " + input);
    in = &file;
  }
  std::string line;
  std::size_t number = 0;
  char buf[32];
  while (std::getline(*in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!text::is_valid_utf8(line)) throw DataError("line " + std::to_string(number) + ": invalid UTF-8");
    const auto tokens = corpus::tokenize(text::nfc(line));
    out << number << '\t';
    if (tokens.empty()) {
      out << "SKIP\n";
      continue;
    }
    const auto p = model.predict(tokens);
    out << p.label.code();
    std::vector<std::size_t> order(p.probabilities.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return p.probabilities[a] > p.probabilities[b]; });
    for (std::size_t r = 0; r < std::min(top, order.size()); ++r) {
      std::snprintf(buf, sizeof buf, "%.4f", p.probabilities[order[r]]);
      out << '\t' << model.labels()[order[r]].code() << ':' << buf;
    }
    out << '\n';
  }
  return kOk;
}

// Reports are written to a staging directory and only moved into place once
// every architecture finished, so a failed or interrupted run leaves nothing.
int cmd_evaluate(const std::vector<std::string>& archs, const std::string& manifest, const PrepareFlags& prepare,
                 const Overrides& overrides, const eval::ExperimentOptions& options, const fs::path& out_dir,
                 std::ostream& out) {
  std::vector<ModelSpec> specs;
  for (const auto& a : archs) specs.push_back(overrides.apply(parse_model_kind(a), options.seed));
  const auto data = prepare.load(manifest);

  const fs::path target = fs::absolute(out_dir);
  const fs::path staging = target.parent_path() / ("." + target.filename().string() + ".partial-" +
                                                   std::to_string(static_cast<long>(::getpid())));
  fs::remove_all(staging);
  try {
    std::vector<eval::EvaluationReport> reports;
    for (const auto& spec : specs) {
      reports.push_back(eval::run_experiment(spec, data, options));
      eval::emit_report(reports.back(), staging);
      out << to_string(spec.kind) << ": macro P " << reports.back().macro.precision << " R "
          << reports.back().macro.recall << " F " << reports.back().macro.f1 << '\n';
    }
    if (reports.size() > 1) {
      std::ofstream merged(staging / "merged_report.csv", std::ios::binary);
      eval::write_table_csv(reports, merged);
      if (!merged) throw Error("cannot write merged report");
    }
    fs::create_directories(target);
    for (const auto& entry : fs::directory_iterator(staging)) {
      fs::rename(entry.path(), target / entry.path().filename());
    }
    fs::remove_all(staging);
  } catch (...) {
    std::error_code ignored;
    fs::remove_all(staging, ignored);
    throw;
  }
  out << "reports written to " << target.string() << '\n';
  return kOk;
}

int cmd_synth(const synthgen::SynthConfig& config, const fs::path& out_dir, std::ostream& out) {
  const auto manifest = synthgen::write_corpus(synthgen::generate(config), out_dir);
  out << "wrote " << config.classes << " classes x " << config.sentences_per_class << " sentences to "
      << manifest.string() << '\n';
  return kOk;
}

int cmd_dump(const fs::path& model_dir, const std::vector<std::string>& tokens, std::size_t k, std::ostream& out) {
  const auto model = ClassifierModel::load(model_dir);
  const auto embeddings = model.embeddings();
  if (!embeddings) throw ConfigError("model has no embeddings (textcat or tf-idf svm)");
  out << "vocabulary " << embeddings->vocab_size() << ", dim " << embeddings->dim() << '\n';
  char buf[32];
  for (const auto& t : tokens) {
    out << t;
    for (const auto& [word, sim] : embeddings::nearest_neighbors(*embeddings, text::fold_case(t), k)) {
      std::snprintf(buf, sizeof buf, "%.4f", sim);
      out << '\t' << word << ':' << buf;
    }
    out << '\n';
  }
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dialect identification toolkit: corpus statistics, classifier training, evaluation"};
  app.name("dialectid");
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  std::uint64_t seed = kDefaultSeed;
  std::string out_dir = default_output_dir();
  const std::string seed_help = "Master seed; all randomness derives from it (default " + std::to_string(kDefaultSeed) + ")";
  const std::string out_help = std::string("Output directory (default $") + kOutputDirEnv + " or " + kDefaultOutputDir + ")";

  // stats
  auto* stats = app.add_subcommand("stats", "Per-variety document, token and character counts");
  std::string stats_manifest;
  bool stats_json = false;
  stats->add_option("manifest", stats_manifest, "Corpus manifest (TSV)")->required()->check(CLI::ExistingFile);
  stats->add_flag("--json", stats_json, "Write JSON instead of CSV");
  stats->add_option("--out", out_dir, out_help);

  // train
  auto* train = app.add_subcommand("train", "Train one classifier and save it as a model directory");
  std::string train_arch, train_manifest, model_path;
  PrepareFlags train_prepare;
  Overrides train_overrides;
  train->add_option("arch", train_arch, "textcat, svm, cnn, lstm or clstm")->required();
  train->add_option("manifest", train_manifest, "Corpus manifest (TSV)")->required()->check(CLI::ExistingFile);
  train->add_option("--model", model_path, "Model directory (default <out>/model-<arch>)");
  train->add_option("--out", out_dir, out_help);
  train->add_option("--seed", seed, seed_help);
  train_prepare.add(train);
  train_overrides.add(train);

  // classify
  auto* classify = app.add_subcommand("classify", "Label one sentence per input line");
  std::string classify_model, classify_input;
  std::optional<std::string> classify_embeddings;
  std::size_t top = 3;
  classify->add_option("model", classify_model, "Model directory")->required()->check(CLI::ExistingDirectory);
  classify->add_option("input", classify_input, "Input text file; '-' or omitted reads stdin");
  classify->add_option("--embeddings", classify_embeddings, "Use this embedding file instead of the stored one")
      ->check(CLI::ExistingFile);
  classify->add_option("--top", top, "Labels listed per line")->capture_default_str()->check(CLI::PositiveNumber);

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Repeated stratified 80/20 evaluation");
  std::string eval_manifest;
  std::vector<std::string> eval_archs;
  PrepareFlags eval_prepare;
  Overrides eval_overrides;
  eval::ExperimentOptions experiment;
  std::string split_unit = "sentence";
  evaluate->add_option("manifest", eval_manifest, "Corpus manifest (TSV)")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--arch", eval_archs, "Architectures to evaluate (repeatable or comma separated)")
      ->required()
      ->delimiter(',');
  evaluate->add_option("--runs", experiment.runs, "Number of stratified resamples")->capture_default_str();
  evaluate->add_option("--jobs", experiment.jobs, "Runs trained in parallel")->capture_default_str();
  evaluate->add_option("--split", split_unit, "Split unit: sentence or document")
      ->capture_default_str()
      ->check(CLI::IsMember({"sentence", "document"}));
  evaluate->add_option("--out", out_dir, out_help);
  evaluate->add_option("--seed", seed, seed_help);
  eval_prepare.add(evaluate);
  eval_overrides.add(evaluate);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic labeled corpus");
  synthgen::SynthConfig synth_config;
  synth->add_option("--classes", synth_config.classes, "Number of varieties")->capture_default_str();
  synth->add_option("--sentences", synth_config.sentences_per_class, "Sentences per variety")->capture_default_str();
  synth->add_option("--divergence", synth_config.divergence, "Inter-variety divergence in [0, 1]")
      ->capture_default_str();
  synth->add_option("--min-tokens", synth_config.min_tokens, "Fewest tokens per sentence")->capture_default_str();
  synth->add_option("--max-tokens", synth_config.max_tokens, "Most tokens per sentence")->capture_default_str();
  synth->add_option("--min-token-length", synth_config.min_token_length, "Shortest token")->capture_default_str();
  synth->add_option("--max-token-length", synth_config.max_token_length, "Longest token")->capture_default_str();
  synth->add_option("--alphabet", synth_config.alphabet, "Symbols used by the chains")->capture_default_str();
  synth->add_option("--order", synth_config.order, "Markov order")->capture_default_str();
  synth->add_option("--lexicon-size", synth_config.lexicon_size, "Words per lexicon")->capture_default_str();
  synth->add_option("--zipf", synth_config.zipf_exponent, "Zipf exponent of word frequencies")->capture_default_str();
  synth->add_option("--sentences-per-document", synth_config.sentences_per_document, "Sentences per file")
      ->capture_default_str();
  synth->add_option("--out", out_dir, out_help);
  synth->add_option("--seed", seed, seed_help);

  // dump
  auto* dump = app.add_subcommand("dump", "Show nearest neighbours in a model's embedding space");
  std::string dump_model;
  std::vector<std::string> dump_tokens;
  std::size_t neighbours = 10;
  dump->add_option("model", dump_model, "Model directory")->required()->check(CLI::ExistingDirectory);
  dump->add_option("tokens", dump_tokens, "Query tokens")->required();
  dump->add_option("-k", neighbours, "Neighbours per token")->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*stats) return cmd_stats(stats_manifest, stats_json, out_dir, out);
    if (*train) {
      const fs::path dir = model_path.empty() ? fs::path(out_dir) / ("model-" + train_arch) : fs::path(model_path);
      return cmd_train(train_arch, train_manifest, train_prepare, train_overrides, seed, dir, out);
    }
    if (*classify) return cmd_classify(classify_model, classify_input, classify_embeddings, top, out);
    if (*evaluate) {
      experiment.seed = seed;
      experiment.unit = eval::parse_split_unit(split_unit);
      return cmd_evaluate(eval_archs, eval_manifest, eval_prepare, eval_overrides, experiment, out_dir, out);
    }
    if (*synth) {
      synth_config.seed = seed;
      return cmd_synth(synth_config, out_dir, out);
    }
    if (*dump) return cmd_dump(dump_model, dump_tokens, neighbours, out);
  } catch (const Interrupted&) {
    err << "dialectid: interrupted\n";
    return kRuntimeError;
  } catch (const ConfigError& e) {
    err << "dialectid: " << e.what() << '\n';
    return kUsage;
  } catch (const DataError& e) {
    err << "dialectid: " << e.what() << '\n';
    return kDataError;
  } catch (const std::exception& e) {
    err << "dialectid: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kUsage;
}

}  // namespace dialectid::cli
