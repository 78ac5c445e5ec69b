#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "casreader/casreader.hpp"

namespace fs = std::filesystem;
using namespace casreader;

namespace {

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage: return 2;
    case ErrorKind::validation: return 3;
    case ErrorKind::numeric: return 4;
    case ErrorKind::io: return 5;
    case ErrorKind::configuration: return 6;
    case ErrorKind::parse: return 7;
    case ErrorKind::corruption: return 8;
    default: return 1;
  }
}

int fail(std::string_view kind, const std::string& message, int code) {
  Json j;
  j["error"] = kind;
  j["message"] = message;
  std::cerr << j.dump() << '\n';
  return code;
}

std::vector<EncodedSample> encode_all(const Vocabulary& vocab, const std::vector<ClozeSample>& samples,
                                      const std::string& prefix) {
  std::vector<EncodedSample> out;
  out.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    out.push_back(encode_sample(vocab, s, s.meta.doc_id.empty() ? prefix + std::to_string(i + 1) : ""));
  }
  return out;
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  return out;
}

Json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("'" + path + "' is not valid JSON: " + e.what());
  }
}

std::optional<std::size_t> parse_shortlist(const std::string& text) {
  if (text == "unbounded") return std::nullopt;
  std::size_t value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || value == 0) {
    throw UsageError("--shortlist expects a positive integer or 'unbounded', got '" + text + "'");
  }
  return value;
}

// ---- subcommands --------------------------------------------------------------------

struct GenerateArgs {
  std::string input, output, skip_log;
  std::uint64_t seed = 1;
  std::size_t samples_per_doc = 1;
  std::vector<std::string> noun_tags;
};

void run_generate(const GenerateArgs& a) {
  DatagenConfig config;
  config.samples_per_doc = a.samples_per_doc;
  if (!a.noun_tags.empty()) config.is_noun = NounPredicate({a.noun_tags.begin(), a.noun_tags.end()});
  const auto docs = load_tagged_corpus(a.input);
  const auto result = generate_corpus(docs, a.seed, config);
  save_dataset(a.output, result.samples);
  std::ostringstream skips;
  for (const auto& s : result.skipped) skips << s.doc_id << '\t' << s.reason << '\n';
  if (!a.skip_log.empty()) {
    auto out = open_output(a.skip_log);
    out << skips.str();
  } else {
    std::cerr << skips.str();
  }
  Json summary;
  summary["documents"] = docs.size();
  summary["samples"] = result.samples.size();
  summary["skipped"] = result.skipped.size();
  std::cout << summary.dump() << '\n';
}

struct BuildVocabArgs {
  std::vector<std::string> inputs;
  std::string shortlist = "unbounded";
  std::string output;
};

void run_build_vocab(const BuildVocabArgs& a) {
  std::vector<ClozeSample> all;
  for (const auto& path : a.inputs) {
    auto loaded = load_dataset(path);
    all.insert(all.end(), loaded.samples.begin(), loaded.samples.end());
  }
  const Vocabulary vocab = build_vocab(all, parse_shortlist(a.shortlist));
  save_vocab(vocab, a.output);
  Json summary;
  summary["size"] = vocab.size();
  summary["shortlisted"] = vocab.size() - Vocabulary::kReserved;
  std::cout << summary.dump() << '\n';
}

struct TrainArgs {
  std::string train, valid, vocab, config, out, log;
};

void run_train(const TrainArgs& a) {
  const TrainConfig config = a.config.empty() ? TrainConfig::desk() : train_config_from_json(read_json_file(a.config));
  const Vocabulary vocab = load_vocab(a.vocab);
  const auto train_set = encode_all(vocab, load_dataset(a.train).samples, "train-");
  const auto valid_set = encode_all(vocab, load_dataset(a.valid).samples, "valid-");
  fs::create_directories(a.out);
  const std::string log_path = a.log.empty() ? (fs::path(a.out) / "train_log.jsonl").string() : a.log;
  auto log = open_output(log_path);
  TrainResult result = train(config, vocab.size(), train_set, valid_set, [&](const EpochLog& e) {
    log << to_json(e).dump() << '\n';
    log.flush();
    std::cerr << "epoch " << e.epoch << " loss " << e.mean_loss << " train " << e.train_accuracy << " valid "
              << e.valid_accuracy << " (" << e.wall_time_s << " s)\n";
  });
  save_checkpoint(a.out, result.best, result.best_adam, config, &vocab);
  Json summary;
  summary["best_epoch"] = result.best_epoch;
  summary["best_valid_accuracy"] = result.best_valid_accuracy;
  summary["epochs_run"] = result.log.size();
  summary["excluded_samples"] = result.excluded_samples;
  summary["diverged"] = result.diverged;
  if (result.diverged) summary["divergence"] = result.divergence_reason;
  std::cout << summary.dump() << '\n';
  if (result.diverged && result.log.empty()) throw NumericError("training diverged in the first epoch: " + result.divergence_reason);
}

struct EvalArgs {
  std::string checkpoint, data, mode = "avg", dump_attention, vocab;
  bool restrict_candidates = false;
  bool records = false;
};

void run_eval(const EvalArgs& a) {
  Checkpoint ck = load_checkpoint(a.checkpoint);
  Vocabulary vocab;
  if (!a.vocab.empty()) {
    vocab = load_vocab(a.vocab);
  } else if (ck.vocab) {
    vocab = *ck.vocab;
  } else {
    throw UsageError("checkpoint has no vocabulary; pass --vocab");
  }
  if (vocab.size() != ck.params.config.vocab_size) {
    throw ConfigError("vocabulary has " + std::to_string(vocab.size()) + " entries but the checkpoint embeds " +
                      std::to_string(ck.params.config.vocab_size));
  }
  const auto samples = encode_all(vocab, load_dataset(a.data).samples, "sample-");
  EvalOptions options;
  options.mode = parse_reader_mode(a.mode);
  options.restrict_candidates = a.restrict_candidates;
  options.keep_records = a.records;
  options.dataset_name = fs::path(a.data).filename().string();
  std::ofstream dump;
  if (!a.dump_attention.empty()) {
    dump = open_output(a.dump_attention);
    options.attention_dump = &dump;
  }
  std::cout << to_json(evaluate(ck.params, vocab, samples, options)).dump() << '\n';
}

struct SynthArgs {
  std::string out;
  SynthConfig config;
};

void run_synth(const SynthArgs& a) {
  const SynthCorpus corpus = generate_synthetic_corpus(a.config);
  fs::create_directories(a.out);
  const fs::path dir(a.out);
  save_dataset((dir / "train.jsonl").string(), corpus.train);
  save_dataset((dir / "valid.jsonl").string(), corpus.valid);
  save_dataset((dir / "test.jsonl").string(), corpus.test);
  Json stats;
  stats["train"] = to_json(dataset_stats(corpus.train));
  stats["valid"] = to_json(dataset_stats(corpus.valid));
  stats["test"] = to_json(dataset_stats(corpus.test));
  auto out = open_output((dir / "stats.json").string());
  out << stats.dump(2) << '\n';
  Json summary;
  summary["train"] = corpus.train.size();
  summary["valid"] = corpus.valid.size();
  summary["test"] = corpus.test.size();
  summary["frequency_baseline_test"] = frequency_baseline_accuracy(corpus.test);
  std::cout << summary.dump() << '\n';
}

struct StatsArgs {
  std::string data, golden, split;
};

void run_stats(const StatsArgs& a) {
  const DatasetStats stats = dataset_stats(load_dataset(a.data).samples);
  std::cout << to_json(stats).dump() << '\n';
  if (!a.golden.empty()) {
    Json golden = read_json_file(a.golden);
    if (!a.split.empty()) {
      if (!golden.contains(a.split)) throw ParseError("golden file has no '" + a.split + "' entry");
      golden = golden[a.split];
    }
    if (stats_from_json(golden) != stats) {
      throw ValidationError("statistics differ from golden " + golden.dump());
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Consensus attention sum reader: data generation, training and evaluation"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "Cloze samples from a POS-tagged corpus");
  generate->add_option("--input", gen.input, "Tagged corpus")->required();
  generate->add_option("--output", gen.output, "Output JSON-lines file")->required();
  generate->add_option("--seed", gen.seed, "Random seed");
  generate->add_option("--samples-per-doc", gen.samples_per_doc, "Samples drawn per document")
      ->check(CLI::PositiveNumber);
  generate->add_option("--noun-tags", gen.noun_tags, "Tags counted as nouns")->delimiter(',');
  generate->add_option("--skip-log", gen.skip_log, "Where to write skipped documents (default stderr)");

  BuildVocabArgs bv;
  auto* build = app.add_subcommand("build-vocab", "Frequency-ranked vocabulary from datasets");
  build->add_option("--input", bv.inputs, "Dataset files")->required();
  build->add_option("--shortlist", bv.shortlist, "Shortlist size or 'unbounded'");
  build->add_option("--output", bv.output, "Vocabulary file")->required();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a reader and write the best checkpoint");
  train_cmd->add_option("--train", tr.train, "Training set")->required();
  train_cmd->add_option("--valid", tr.valid, "Validation set")->required();
  train_cmd->add_option("--vocab", tr.vocab, "Vocabulary file")->required();
  train_cmd->add_option("--config", tr.config, "Training configuration (JSON)");
  train_cmd->add_option("--out", tr.out, "Checkpoint directory")->required();
  train_cmd->add_option("--log", tr.log, "Training log (default <out>/train_log.jsonl)");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Accuracy of a checkpoint on a dataset");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint directory")->required();
  eval_cmd->add_option("--data", ev.data, "Dataset")->required();
  eval_cmd->add_option("--mode", ev.mode, "sum, avg, max or as-baseline")
      ->check(CLI::IsMember({"sum", "avg", "max", "as-baseline"}));
  eval_cmd->add_flag("--restrict-candidates", ev.restrict_candidates, "Only predict listed candidates");
  eval_cmd->add_option("--dump-attention", ev.dump_attention, "Write per-sample attention as JSON-lines");
  eval_cmd->add_flag("--records", ev.records, "Include per-sample records");
  eval_cmd->add_option("--vocab", ev.vocab, "Vocabulary to use instead of the checkpoint's");

  SynthArgs sy;
  auto* synth = app.add_subcommand("synth", "Synthetic copy-task corpus");
  synth->add_option("--out", sy.out, "Output directory")->required();
  synth->add_option("--seed", sy.config.seed, "Random seed");
  synth->add_option("--vocab-size", sy.config.vocab_size, "Distinct words");
  synth->add_option("--train-docs", sy.config.train_docs, "Training documents");
  synth->add_option("--valid-docs", sy.config.valid_docs, "Validation documents");
  synth->add_option("--test-docs", sy.config.test_docs, "Test documents");
  synth->add_option("--sentences", sy.config.sentences, "Sentences per document");
  synth->add_option("--sentence-length", sy.config.sentence_length, "Tokens per sentence");
  synth->add_option("--occurrences", sy.config.occurrences, "Answer copies per document");
  synth->add_option("--tie-every", sy.config.tie_every, "One distractor document in this many (0 disables)");

  StatsArgs st;
  auto* stats = app.add_subcommand("stats", "Corpus statistics");
  stats->add_option("--data", st.data, "Dataset")->required();
  stats->add_option("--golden", st.golden, "Fail unless the statistics match this JSON file");
  stats->add_option("--split", st.split, "Entry of the golden file to compare (e.g. test)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    if (*generate) run_generate(gen);
    if (*build) run_build_vocab(bv);
    if (*train_cmd) run_train(tr);
    if (*eval_cmd) run_eval(ev);
    if (*synth) run_synth(sy);
    if (*stats) run_stats(st);
  } catch (const Error& e) {
    return fail(to_string(e.kind()), e.what(), exit_code(e.kind()));
  } catch (const fs::filesystem_error& e) {
    return fail("io", e.what(), exit_code(ErrorKind::io));
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 1);
  }
  return 0;
}
