#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "casreader/casreader.hpp"

using namespace casreader;
namespace fs = std::filesystem;

namespace {

ClozeSample river_sample() {
  ClozeSample s;
  s.document = {"the", "river", "flows", "past", "the", "bank", "river"};
  s.query = {"a", "boat", "on", "the", std::string(kPlaceholder)};
  s.answer = "river";
  s.candidates = std::vector<std::string>{"river", "bank"};
  s.meta = {"doc-7", 2, 4};
  return s;
}

fs::path scratch_dir() {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  fs::path dir = fs::temp_directory_path() / ("casreader_eval_" + std::string(info->name()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

struct CliResult {
  int status = -1;
  std::string out, err;
};

CliResult run_cli(const std::string& args, const fs::path& scratch) {
  const fs::path out = scratch / "stdout.txt", err = scratch / "stderr.txt";
  const std::string cmd = std::string(CASREADER_CLI_PATH) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int raw = std::system(cmd.c_str());
  CliResult r;
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.out = read_text(out);
  r.err = read_text(err);
  return r;
}

std::vector<EncodedSample> encode_all(const Vocabulary& vocab, const std::vector<ClozeSample>& samples) {
  std::vector<EncodedSample> out;
  for (std::size_t i = 0; i < samples.size(); ++i) out.push_back(encode_sample(vocab, samples[i], "s" + std::to_string(i)));
  return out;
}

SynthConfig small_synth() {
  SynthConfig c;
  c.vocab_size = 24;
  c.sentences = 4;
  c.sentence_length = 4;
  c.occurrences = 2;
  c.train_docs = 30;
  c.valid_docs = 10;
  c.test_docs = 10;
  return c;
}

}  // namespace

// ---- dataset files ---------------------------------------------------------------------

TEST(Dataset, SaveThenLoadRoundTrips) {
  ClozeSample bare = river_sample();
  bare.candidates.reset();
  bare.meta = {};
  std::stringstream ss;
  save_dataset(ss, {river_sample(), bare});
  const LoadedDataset loaded = load_dataset(ss);
  EXPECT_EQ(loaded.samples, (std::vector<ClozeSample>{river_sample(), bare}));
  EXPECT_TRUE(loaded.rejected.empty());
}

TEST(Dataset, AcceptsIntegerDocIdsAndBlankLines) {
  std::istringstream in("\n{\"document\":[\"a\",\"b\"],\"query\":[\"⟨X⟩\"],\"answer\":\"a\",\"meta\":{\"doc_id\":12}}\n\n");
  const LoadedDataset loaded = load_dataset(in);
  ASSERT_EQ(loaded.samples.size(), 1u);
  EXPECT_EQ(loaded.samples[0].meta.doc_id, "12");
}

TEST(Dataset, InvalidSampleIsValidationErrorWithLineNumber) {
  std::stringstream ss;
  save_dataset(ss, {river_sample()});
  ss << R"({"document":["a"],"query":["no","hole"],"answer":"a"})" << '\n';
  try {
    load_dataset(ss);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
}

TEST(Dataset, MalformedJsonAndSchemaAreParseErrors) {
  std::istringstream broken("{\"document\": [\n");
  EXPECT_THROW(load_dataset(broken), ParseError);
  std::istringstream wrong_type(R"({"document":"a b","query":["⟨X⟩"],"answer":"a"})");
  EXPECT_THROW(load_dataset(wrong_type), ParseError);
  std::istringstream missing(R"({"document":["a"],"query":["⟨X⟩"]})");
  EXPECT_THROW(load_dataset(missing), ParseError);
  EXPECT_THROW(load_dataset(std::string("/nonexistent/data.jsonl")), IoError);
}

TEST(Dataset, LenientModeCollectsRejects) {
  std::stringstream ss;
  save_dataset(ss, {river_sample()});
  ss << "not json\n";
  ss << R"({"document":["a"],"query":["⟨X⟩"],"answer":"b"})" << '\n';
  save_dataset(ss, {river_sample()});
  const LoadedDataset loaded = load_dataset(ss, false);
  EXPECT_EQ(loaded.samples.size(), 2u);
  ASSERT_EQ(loaded.rejected.size(), 2u);
  EXPECT_EQ(loaded.rejected[0].rfind("line 2: ", 0), 0u);
  EXPECT_EQ(loaded.rejected[1].rfind("line 3: ", 0), 0u);
}

// ---- scoring ---------------------------------------------------------------------------

TEST(EvaluateWith, CountsCorrectPredictions) {
  const Vocabulary vocab = build_vocab(std::vector<std::string>{"a", "b", "c"}, std::nullopt);
  const TokenId a = vocab.id("a"), b = vocab.id("b");
  std::vector<EncodedSample> samples(4);
  for (std::size_t i = 0; i < 4; ++i) samples[i] = {"s" + std::to_string(i), {a, b}, {kPlaceholderId}, a, {}, false};
  // Second sample predicts b.
  Scorer scorer = [&](const EncodedSample& s) {
    return s.id == "s1" ? WordProbs{{a, 0.2}, {b, 0.8}} : WordProbs{{a, 0.7}, {b, 0.3}};
  };
  EvalOptions options;
  options.keep_records = true;
  const EvalReport r = evaluate_with(scorer, vocab, samples, options);
  EXPECT_EQ(r.total, 4u);
  EXPECT_EQ(r.correct, 3u);
  EXPECT_DOUBLE_EQ(r.accuracy, 0.75);
  ASSERT_TRUE(r.records);
  EXPECT_EQ((*r.records)[1].predicted, "b");
  EXPECT_EQ((*r.records)[1].gold_rank, 2u);
  EXPECT_EQ((*r.records)[0].gold_rank, 1u);
}

TEST(EvaluateWith, ConstantPredictorScoresItsHitRate) {
  std::vector<std::string> words;
  for (int k = 0; k < 10; ++k) words.push_back("w" + std::to_string(k));
  const Vocabulary vocab = build_vocab(words, std::nullopt);
  std::vector<EncodedSample> samples;
  for (int k = 0; k < 100; ++k) {
    const TokenId gold = vocab.id(words[static_cast<std::size_t>(k % 10)]);
    samples.push_back({"s", {gold, vocab.id("w0")}, {kPlaceholderId}, gold, {}, false});
  }
  Scorer always_w0 = [&](const EncodedSample&) { return WordProbs{{vocab.id("w0"), 1.0}}; };
  EXPECT_DOUBLE_EQ(evaluate_with(always_w0, vocab, samples, {}).accuracy, 0.10);
  EXPECT_THROW(evaluate_with(always_w0, vocab, {}, {}), UsageError);
}

TEST(EvaluateWith, RestrictionAndMissingAnswers) {
  const Vocabulary vocab = build_vocab(std::vector<std::string>{"a", "b", "c"}, std::nullopt);
  const TokenId a = vocab.id("a"), b = vocab.id("b"), c = vocab.id("c");
  EncodedSample s{"s", {a, b, c}, {kPlaceholderId}, b, {a, b}, false};
  Scorer scorer = [&](const EncodedSample&) { return WordProbs{{a, 0.2}, {b, 0.3}, {c, 0.5}}; };
  EvalOptions options;
  EXPECT_EQ(evaluate_with(scorer, vocab, {s}, options).correct, 0u);
  options.restrict_candidates = true;
  EXPECT_EQ(evaluate_with(scorer, vocab, {s}, options).correct, 1u);
  s.answer_missing = true;
  EXPECT_EQ(evaluate_with(scorer, vocab, {s}, options).correct, 0u);
}

class ModelEval : public ::testing::Test {
 protected:
  void SetUp() override {
    corpus = generate_synthetic_corpus(small_synth());
    vocab = build_vocab(corpus.train, std::nullopt);
    test = encode_all(vocab, corpus.test);
    Rng rng(17);
    params = ModelParams::init({vocab.size(), 6, 5, 0.0, ReaderMode::avg}, rng);
  }

  SynthCorpus corpus;
  Vocabulary vocab;
  std::vector<EncodedSample> test;
  ModelParams params;
};

TEST_F(ModelEval, DeterministicAndSideEffectFree) {
  std::vector<double> before;
  for (Tensor* t : params.tensors()) before.insert(before.end(), t->data.begin(), t->data.end());
  EvalOptions options;
  options.keep_records = true;
  const EvalReport a = evaluate(params, vocab, test, options);
  const EvalReport b = evaluate(params, vocab, test, options);
  EXPECT_EQ(a, b);
  std::vector<double> after;
  for (Tensor* t : params.tensors()) after.insert(after.end(), t->data.begin(), t->data.end());
  EXPECT_EQ(before, after);
  EXPECT_DOUBLE_EQ(a.accuracy, accuracy(params, test, ReaderMode::avg));
}

TEST_F(ModelEval, VocabularyMismatchIsConfigError) {
  const Vocabulary other = build_vocab(std::vector<std::string>{"x"}, std::nullopt);
  EXPECT_THROW(evaluate(params, other, test, {}), ConfigError);
}

TEST_F(ModelEval, AttentionDumpRecordsAreDistributions) {
  std::ostringstream dump;
  EvalOptions options;
  options.mode = ReaderMode::max;
  options.attention_dump = &dump;
  evaluate(params, vocab, test, options);
  std::istringstream lines(dump.str());
  std::string line;
  std::size_t count = 0;
  while (std::getline(lines, line)) {
    const Json j = Json::parse(line);
    const auto& sample = test[count];
    ASSERT_EQ(j["alpha"].size(), sample.query.size());
    for (const auto& row : j["alpha"]) {
      ASSERT_EQ(row.size(), sample.document.size());
      double total = 0.0;
      for (const auto& v : row) total += v.get<double>();
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
    double merged = 0.0, words = 0.0;
    for (const auto& v : j["merged"]) merged += v.get<double>();
    for (const auto& w : j["word_probs"]) {
      words += w["p"].get<double>();
      EXPECT_EQ(vocab.id(w["token"].get<std::string>()), w["id"].get<TokenId>());
    }
    EXPECT_NEAR(merged, 1.0, 1e-12);
    EXPECT_NEAR(words, 1.0, 1e-12);
    ++count;
  }
  EXPECT_EQ(count, test.size());
}

// ---- frequency baseline ----------------------------------------------------------------

TEST(FrequencyBaseline, PicksMostFrequentCandidate) {
  EXPECT_EQ(frequency_baseline(river_sample()), "river");
  ClozeSample s = river_sample();
  s.candidates = std::vector<std::string>{"bank", "flows"};
  EXPECT_EQ(frequency_baseline(s), "flows");
  s.candidates = std::vector<std::string>{"bank", "past"};
  EXPECT_EQ(frequency_baseline(s), "past");
  s.candidates.reset();
  EXPECT_EQ(frequency_baseline(s), "the");
}

TEST(FrequencyBaseline, AccuracyOverSamples) {
  ClozeSample wrong = river_sample();
  wrong.answer = "bank";
  EXPECT_DOUBLE_EQ(frequency_baseline_accuracy({river_sample(), wrong}), 0.5);
  EXPECT_THROW(frequency_baseline_accuracy({}), UsageError);
}

// ---- configuration JSON ----------------------------------------------------------------

TEST(TrainConfigJson, PresetsAndOverrides) {
  EXPECT_EQ(train_config_from_json(Json::object()), TrainConfig::desk());
  TrainConfig pd = train_config_from_json(Json::parse(R"({"preset":"people-daily","epochs":3})"));
  TrainConfig expected = TrainConfig::people_daily();
  expected.epochs = 3;
  EXPECT_EQ(pd, expected);
  const TrainConfig c = train_config_from_json(
      Json::parse(R"({"lr":0.01,"mode":"max","shortlist_size":"unbounded","seed":9,"batch_size":4})"));
  EXPECT_EQ(c.mode, ReaderMode::max);
  EXPECT_FALSE(c.shortlist_size);
  EXPECT_EQ(train_config_from_json(to_json(c)), c);
}

TEST(TrainConfigJson, RejectsBadInput) {
  EXPECT_THROW(train_config_from_json(Json::parse(R"({"learning_rate":0.1})")), ConfigError);
  EXPECT_THROW(train_config_from_json(Json::parse(R"({"epochs":-1})")), ConfigError);
  EXPECT_THROW(train_config_from_json(Json::parse(R"({"epochs":0})")), ConfigError);
  EXPECT_THROW(train_config_from_json(Json::parse(R"({"preset":"huge"})")), ConfigError);
  EXPECT_THROW(train_config_from_json(Json::parse(R"({"mode":"median"})")), Error);
  EXPECT_THROW(train_config_from_json(Json::parse("[1]")), ConfigError);
}

// ---- synthetic corpus ------------------------------------------------------------------

TEST(SyntheticCorpus, SamplesAreValidAndDeterministic) {
  const SynthCorpus a = generate_synthetic_corpus(SynthConfig{});
  const SynthCorpus b = generate_synthetic_corpus(SynthConfig{});
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  ASSERT_EQ(a.train.size(), 200u);
  for (const auto* split : {&a.train, &a.valid, &a.test}) {
    for (const auto& s : *split) {
      ASSERT_NO_THROW(validate_sample(s));
      EXPECT_EQ(count_token(s.document, s.answer), 2u);
      EXPECT_EQ(s.document.size(), 36u);
      ASSERT_TRUE(s.candidates);
      EXPECT_NE(std::find(s.candidates->begin(), s.candidates->end(), s.answer), s.candidates->end());
    }
  }
  SynthConfig other;
  other.seed = 2;
  EXPECT_NE(generate_synthetic_corpus(other).train, a.train);
}

TEST(SyntheticCorpus, FrequencyBaselineIsStrongButNotPerfect) {
  const SynthCorpus corpus = generate_synthetic_corpus(SynthConfig{});
  const double train = frequency_baseline_accuracy(corpus.train);
  EXPECT_GE(train, 0.6);
  EXPECT_LE(train, 0.9);
}

TEST(SyntheticCorpus, RejectsUnworkableConfigurations) {
  SynthConfig c;
  c.vocab_size = 10;
  EXPECT_THROW(generate_synthetic_corpus(c), ConfigError);
  c = SynthConfig{};
  c.occurrences = 6;
  EXPECT_THROW(generate_synthetic_corpus(c), ConfigError);
}

// ---- command line ----------------------------------------------------------------------

class Cli : public ::testing::Test {
 protected:
  void SetUp() override { dir = scratch_dir(); }
  void TearDown() override { fs::remove_all(dir); }
  fs::path dir;
};

TEST_F(Cli, FullPipeline) {
  const std::string d = dir.string();
  ASSERT_EQ(run_cli("synth --out " + d + " --seed 2 --vocab-size 24 --sentences 4 --sentence-length 4 "
                    "--occurrences 2 --train-docs 24 --valid-docs 8 --test-docs 8",
                    dir)
                .status,
            0);
  for (const char* f : {"train.jsonl", "valid.jsonl", "test.jsonl", "stats.json"}) EXPECT_TRUE(fs::exists(dir / f));
  ASSERT_EQ(run_cli("build-vocab --input " + d + "/train.jsonl --output " + d + "/vocab.txt", dir).status, 0);
  std::ofstream(dir / "config.json") << R"({"epochs":2,"embed_dim":6,"hidden_dim":5,"batch_size":8,"lr":0.01})";
  const CliResult trained = run_cli("train --train " + d + "/train.jsonl --valid " + d + "/valid.jsonl --vocab " + d +
                                        "/vocab.txt --config " + d + "/config.json --out " + d + "/ck",
                                    dir);
  ASSERT_EQ(trained.status, 0) << trained.err;
  EXPECT_EQ(Json::parse(trained.out)["epochs_run"], 2);
  std::istringstream log(read_text(dir / "ck" / "train_log.jsonl"));
  std::string line;
  int entries = 0;
  while (std::getline(log, line)) EXPECT_EQ(Json::parse(line)["epoch"], ++entries);
  EXPECT_EQ(entries, 2);

  const CliResult evaluated = run_cli("eval --checkpoint " + d + "/ck --data " + d + "/test.jsonl --mode max --records "
                                      "--dump-attention " + d + "/attention.jsonl",
                                      dir);
  ASSERT_EQ(evaluated.status, 0) << evaluated.err;
  const Json report = Json::parse(evaluated.out);
  EXPECT_EQ(report["total"], 8);
  EXPECT_EQ(report["mode"], "max");
  EXPECT_EQ(report["records"].size(), 8u);
  EXPECT_TRUE(fs::exists(dir / "attention.jsonl"));

  const Checkpoint ck = load_checkpoint(dir / "ck");
  EXPECT_EQ(ck.config.epochs, 2u);
}

TEST_F(Cli, ErrorsMapToExitCodesAndJson) {
  const std::string d = dir.string();
  CliResult r = run_cli("eval --checkpoint " + d + " --data " + d + "/x.jsonl --bogus", dir);
  EXPECT_EQ(r.status, 2);
  EXPECT_EQ(Json::parse(r.err)["error"], "usage");
  r = run_cli("stats --data " + d + "/missing.jsonl", dir);
  EXPECT_EQ(r.status, 5);
  EXPECT_EQ(Json::parse(r.err)["error"], "io");
  std::ofstream(dir / "bad.jsonl") << "{\"document\":[\"a\"],\"query\":[\"x\"],\"answer\":\"a\"}\n";
  r = run_cli("stats --data " + d + "/bad.jsonl", dir);
  EXPECT_EQ(r.status, 3);
  EXPECT_NE(Json::parse(r.err)["message"].get<std::string>().find("line 1"), std::string::npos);
  std::ofstream(dir / "broken.jsonl") << "{\n";
  EXPECT_EQ(run_cli("stats --data " + d + "/broken.jsonl", dir).status, 7);
}

TEST_F(Cli, MismatchedVocabularyIsRejected) {
  const std::string d = dir.string();
  ASSERT_EQ(run_cli("synth --out " + d + " --vocab-size 24 --sentences 4 --sentence-length 4 --occurrences 2 "
                    "--train-docs 8 --valid-docs 4 --test-docs 4",
                    dir)
                .status,
            0);
  ASSERT_EQ(run_cli("build-vocab --input " + d + "/train.jsonl --output " + d + "/vocab.txt", dir).status, 0);
  std::ofstream(dir / "config.json") << R"({"epochs":1,"embed_dim":4,"hidden_dim":4})";
  ASSERT_EQ(run_cli("train --train " + d + "/train.jsonl --valid " + d + "/valid.jsonl --vocab " + d +
                        "/vocab.txt --config " + d + "/config.json --out " + d + "/ck",
                    dir)
                .status,
            0);
  ASSERT_EQ(run_cli("build-vocab --input " + d + "/train.jsonl --shortlist 3 --output " + d + "/small.txt", dir).status,
            0);
  const CliResult r =
      run_cli("eval --checkpoint " + d + "/ck --data " + d + "/test.jsonl --vocab " + d + "/small.txt", dir);
  EXPECT_EQ(r.status, 6);
  EXPECT_EQ(Json::parse(r.err)["error"], "configuration");
  const std::string manifest = read_text(dir / "ck" / "manifest.txt");
  std::ofstream(dir / "ck" / "manifest.txt") << "garbage\n" << manifest;
  EXPECT_EQ(run_cli("eval --checkpoint " + d + "/ck --data " + d + "/test.jsonl", dir).status, 8);
}

TEST_F(Cli, StatsAgreeWithGoldenFile) {
  const std::string d = dir.string();
  ASSERT_EQ(run_cli("synth --out " + d + " --seed 1", dir).status, 0);
  const std::string golden = std::string(CASREADER_TEST_DATA) + "/synth_seed1_stats.json";
  EXPECT_EQ(run_cli("stats --data " + d + "/test.jsonl --golden " + golden + " --split test", dir).status, 0);
  EXPECT_EQ(run_cli("stats --data " + d + "/test.jsonl --golden " + golden + " --split train", dir).status, 3);
  const CliResult r = run_cli("stats --data " + d + "/valid.jsonl", dir);
  EXPECT_EQ(stats_from_json(Json::parse(r.out)),
            stats_from_json(Json::parse(read_text(golden))["valid"]));
}

TEST_F(Cli, GenerateWritesSamplesAndSkipLog) {
  std::ofstream(dir / "corpus.txt") << "#doc keep\nthe\tx\nriver\tn\n\nriver\tn\nflows\tv\n\n"
                                       "#doc drop\nsky\tn\nis\tv\nblue\tx\n";
  const std::string d = dir.string();
  const CliResult r = run_cli("generate --input " + d + "/corpus.txt --output " + d + "/out.jsonl --skip-log " + d +
                                  "/skips.tsv --seed 4",
                              dir);
  ASSERT_EQ(r.status, 0) << r.err;
  const LoadedDataset loaded = load_dataset((dir / "out.jsonl").string());
  ASSERT_EQ(loaded.samples.size(), 1u);
  EXPECT_EQ(loaded.samples[0].answer, "river");
  EXPECT_EQ(loaded.samples[0].meta.doc_id, "keep");
  EXPECT_EQ(read_text(dir / "skips.tsv").rfind("drop\t", 0), 0u);
  std::ofstream(dir / "bad.txt") << "river\tn\n";
  EXPECT_EQ(run_cli("generate --input " + d + "/bad.txt --output " + d + "/o.jsonl", dir).status, 7);
}
