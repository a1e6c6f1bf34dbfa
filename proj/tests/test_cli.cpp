#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cli.hpp"
#include "pathm3/config.hpp"

using namespace pathm3;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("pathm3_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

fs::path write_file(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
  return p;
}

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorKind::ShapeMismatch;
}

std::string error_text(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(Config, EmptyFileGivesDocumentedDefaults) {
  const fs::path dir = scratch("empty");
  const RunConfig c = parse_config(write_file(dir / "empty.json", ""), {});
  EXPECT_EQ(config_to_json(c), config_to_json(preset_config("desk")));
  const json echo = json::parse(config_to_json(c));
  for (const auto& k : config_keys()) {
    ASSERT_TRUE(echo.contains(k.name)) << k.name;
    const auto& v = echo[k.name];
    EXPECT_EQ(v.is_string() ? v.get<std::string>() : v.dump(), k.default_value) << k.name;
  }
  EXPECT_EQ(c.train.alpha, 0.5);
  EXPECT_EQ(c.model.d_model, 64u);
  EXPECT_EQ(c.model.num_queries, 4u);
  EXPECT_EQ(c.model.num_blocks, 2u);
  EXPECT_EQ(c.model.landmark_count, 16u);
  EXPECT_EQ(c.model.vocab_size, 64u);
}

TEST(Config, AlphaOutOfRangeNamesKey) {
  EXPECT_EQ(kind_of([] { parse_config(std::nullopt, {{"alpha", "1.5"}}); }), ErrorKind::RangeError);
  EXPECT_NE(error_text([] { parse_config(std::nullopt, {{"alpha", "1.5"}}); }).find("alpha"), std::string::npos);
}

TEST(Config, FlagBeatsFile) {
  const fs::path dir = scratch("precedence");
  const fs::path file = write_file(dir / "c.json", R"({"lr": 1e-4, "epochs": 7})");
  const RunConfig c = parse_config(file, {{"lr", "5e-5"}});
  EXPECT_DOUBLE_EQ(c.train.lr, 5e-5);
  EXPECT_EQ(c.train.epochs, 7u);
}

TEST(Config, PresetUnderFileUnderFlags) {
  const fs::path dir = scratch("preset");
  const fs::path file = write_file(dir / "c.json", R"({"preset": "tiny", "num_heads": 1})");
  const RunConfig c = parse_config(file, {{"num_queries", "3"}});
  EXPECT_EQ(c.preset, "tiny");
  EXPECT_EQ(c.model.d_model, 8u);
  EXPECT_EQ(c.model.num_heads, 1u);
  EXPECT_EQ(c.model.num_queries, 3u);
  // An explicit preset argument wins over the file's.
  EXPECT_EQ(parse_config(file, {}, "paper").model.d_model, 768u);
}

TEST(Config, PaperPresetCarriesTableValues) {
  const RunConfig c = preset_config("paper");
  EXPECT_EQ(c.model.d_enc, 1408u);
  EXPECT_EQ(c.model.d_model, 768u);
  EXPECT_EQ(c.model.num_queries, 32u);
  EXPECT_EQ(c.model.num_blocks, 12u);
  EXPECT_EQ(c.train.batch_size, 16u);
  EXPECT_DOUBLE_EQ(c.train.lr, 1e-4);
  EXPECT_DOUBLE_EQ(c.train.warmup_lr, 1e-5);
  EXPECT_EQ(c.train.warmup_steps, 1000u);
  EXPECT_DOUBLE_EQ(c.train.adamw.weight_decay, 0.05);
  EXPECT_DOUBLE_EQ(c.train.adamw.beta1, 0.9);
  EXPECT_DOUBLE_EQ(c.train.adamw.beta2, 0.999);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, Errors) {
  const fs::path dir = scratch("errors");
  EXPECT_EQ(kind_of([&] { parse_config(write_file(dir / "a.json", R"({"colour": 1})"), {}); }), ErrorKind::UnknownKey);
  EXPECT_EQ(kind_of([] { parse_config(std::nullopt, {{"learning_rate", "1"}}); }), ErrorKind::UnknownKey);
  EXPECT_EQ(kind_of([&] { parse_config(write_file(dir / "b.json", R"({"lr": "fast"})"), {}); }), ErrorKind::TypeError);
  EXPECT_EQ(kind_of([] { parse_config(std::nullopt, {{"epochs", "many"}}); }), ErrorKind::TypeError);
  EXPECT_EQ(kind_of([] { parse_config(std::nullopt, {{"use_correlation", "maybe"}}); }), ErrorKind::TypeError);
  EXPECT_EQ(kind_of([&] { parse_config(write_file(dir / "c.json", R"({"epochs": -2})"), {}); }), ErrorKind::RangeError);
  EXPECT_EQ(kind_of([] { parse_config(std::nullopt, {{"mode", "sideways"}}); }), ErrorKind::RangeError);
  EXPECT_EQ(kind_of([] { parse_config(std::nullopt, {{"num_heads", "3"}}); }), ErrorKind::RangeError);
  EXPECT_EQ(kind_of([] { parse_config(std::nullopt, {{"split_val", "0.5"}}); }), ErrorKind::RangeError);
  EXPECT_EQ(kind_of([] { parse_config(std::nullopt, {}, "huge"); }), ErrorKind::RangeError);
  EXPECT_EQ(kind_of([&] { parse_config(write_file(dir / "d.json", "[1, 2]"), {}); }), ErrorKind::TypeError);
}

TEST(Config, FlagTypes) {
  const RunConfig c = parse_config(std::nullopt, {{"use_correlation", "false"},
                                                  {"mode", "image_and_text"},
                                                  {"bench_lengths", "16,32"},
                                                  {"eval_split", "val"},
                                                  {"data_dir", "/tmp/x"}});
  EXPECT_FALSE(c.model.use_correlation);
  EXPECT_EQ(c.eval_mode, FusionMode::ImageAndText);
  EXPECT_EQ(c.bench.lengths, (std::vector<std::size_t>{16, 32}));
  EXPECT_EQ(c.eval_split, Split::Val);
  EXPECT_EQ(c.data_dir, "/tmp/x");
}

TEST(Config, EchoRoundTrips) {
  const RunConfig c = parse_config(std::nullopt, {{"lr", "2e-3"}, {"seed", "9"}}, "tiny");
  EXPECT_EQ(config_to_json(parse_config_string(config_to_json(c))), config_to_json(c));
}

TEST(Cli, HelpListsEveryKeyWithDefaultAndProvenance) {
  for (const auto& args : {std::vector<std::string>{"--help"}, std::vector<std::string>{"train", "--help"}}) {
    const Result r = run(args);
    EXPECT_EQ(r.code, 0);
    for (const auto& k : config_keys()) {
      const auto pos = r.out.find("  " + k.name + " ");
      ASSERT_NE(pos, std::string::npos) << k.name;
      const std::string line = r.out.substr(pos, r.out.find('\n', pos) - pos);
      EXPECT_NE(line.find(k.default_value), std::string::npos) << line;
      EXPECT_NE(line.find(k.provenance), std::string::npos) << line;
    }
  }
}

TEST(Cli, UnknownSubcommand) {
  const Result r = run({"frobnicate"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("usage:"), std::string::npos);
  EXPECT_NE(r.err.find("UnknownSubcommand"), std::string::npos);
  EXPECT_EQ(run({}).code, 1);
}

TEST(Cli, ValidationErrorsExitOne) {
  const Result r = run({"train", "--alpha", "1.5"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("alpha"), std::string::npos);
  EXPECT_EQ(run({"train", "--no_such_key", "1"}).code, 1);
}

TEST(Cli, RuntimeFailureExitsTwo) {
  const fs::path dir = scratch("missing");
  const Result r = run({"train", "--preset", "tiny", "--data_dir", (dir / "nothing").string(), "--runs_dir",
                        (dir / "runs").string()});
  EXPECT_EQ(r.code, 2);
}

TEST(Cli, GradcheckTinyPasses) {
  const fs::path dir = scratch("gradcheck");
  const Result r = run({"gradcheck", "--preset", "tiny", "--runs_dir", (dir / "runs").string()});
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  EXPECT_NE(r.out.find("all within tolerance"), std::string::npos);
}

TEST(Cli, GenTrainEvalCaptionStayInsideTheirDirectories) {
  const fs::path dir = scratch("e2e");
  const std::string data = (dir / "data").string(), runs = (dir / "runs").string();
  const std::vector<std::string> common{"--preset", "tiny", "--data_dir", data, "--runs_dir", runs};
  auto with = [&](std::vector<std::string> head) {
    head.insert(head.end(), common.begin(), common.end());
    return head;
  };
  ASSERT_EQ(run(with({"gen-data"})).code, 0);
  EXPECT_TRUE(fs::exists(dir / "data" / "manifest.json"));
  const Result t = run(with({"train"}));
  ASSERT_EQ(t.code, 0) << t.err;
  const fs::path trained = cli::latest_run(runs);
  for (const char* f : {"config.json", "metrics.csv", "metrics.json", "checkpoint.pm3w", "checkpoint.json"})
    EXPECT_TRUE(fs::exists(trained / f)) << f;

  const Result e = run(with({"eval", "--mode", "image_and_text"}));
  ASSERT_EQ(e.code, 0) << e.err;
  // Eval writes a fresh run directory without a checkpoint; the latest
  // checkpointed run is unchanged.
  EXPECT_EQ(cli::latest_run(runs), trained);
  fs::path eval_dir;
  for (const auto& entry : fs::directory_iterator(runs))
    if (entry.path() != trained) eval_dir = entry.path();
  std::ifstream csv(eval_dir / "metrics.csv");
  std::string header, row;
  std::getline(csv, header);
  std::getline(csv, row);
  EXPECT_EQ(header, "epoch,split,loss_c,loss_g,loss_overall,accuracy,bleu4,wall_s");
  std::vector<std::string> cells;
  std::stringstream ss(row);
  for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
  ASSERT_EQ(cells.size(), 8u);
  EXPECT_EQ(cells[1], "test");
  EXPECT_FALSE(cells[5].empty());
  const double acc = std::stod(cells[5]);
  EXPECT_TRUE(acc >= 0.0 && acc <= 1.0);
  EXPECT_EQ(json::parse(std::ifstream(eval_dir / "config.json"))["mode"], "image_and_text");

  EXPECT_EQ(run(with({"caption"})).code, 0);
  std::size_t entries = 0;
  for ([[maybe_unused]] const auto& e2 : fs::directory_iterator(dir)) ++entries;
  EXPECT_EQ(entries, 2u);  // data/ and runs/ only
}

TEST(Cli, BenchWritesCsv) {
  const fs::path dir = scratch("bench");
  const Result r = run({"bench", "--preset", "tiny", "--bench_repeats", "1", "--runs_dir", (dir / "runs").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("M,m,method,wall_ms,mean_rel_err"), std::string::npos);
}

TEST(Cli, LatestRunNeedsCheckpoint) {
  const fs::path dir = scratch("latest");
  fs::create_directories(dir / "20260101-000000-seed0");
  fs::create_directories(dir / "20260102-000000-seed0");
  fs::create_directories(dir / "20260103-000000-seed0");
  std::ofstream(dir / "20260101-000000-seed0" / "checkpoint.pm3w") << "x";
  std::ofstream(dir / "20260102-000000-seed0" / "checkpoint.pm3w") << "x";
  EXPECT_EQ(cli::latest_run(dir).filename(), "20260102-000000-seed0");
  EXPECT_THROW(cli::latest_run(dir / "20260103-000000-seed0"), Error);
}
