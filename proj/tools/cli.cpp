#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "pathm3/bench.hpp"
#include "pathm3/config.hpp"
#include "pathm3/metrics.hpp"
#include "pathm3/train.hpp"

namespace pathm3::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const std::vector<std::pair<std::string, std::string>> kCommands{
    {"gen-data", "generate the synthetic corpus and its split into data_dir"},
    {"train", "train a model on data_dir; writes a new run directory"},
    {"eval", "evaluate a trained run on eval_split under the given mode"},
    {"caption", "greedy-decode captions for eval_split from a trained run"},
    {"bench", "time exact vs Nystrom attention over bench_lengths"},
    {"gradcheck", "finite-difference check of every model parameter"},
};

bool is_validation(ErrorKind k) {
  switch (k) {
    case ErrorKind::UnknownKey:
    case ErrorKind::TypeError:
    case ErrorKind::RangeError:
    case ErrorKind::InvalidSpec:
    case ErrorKind::InvalidFractions:
    case ErrorKind::UnknownSubcommand:
      return true;
    default:
      return false;
  }
}

std::string keys_table() {
  std::ostringstream out;
  out << "Config keys (desk defaults; provenance paper|chosen). Set with --<key> VALUE, or in a JSON file\n"
         "passed as --config FILE. Precedence: defaults < --preset < file < flags.\n";
  std::size_t width = 0;
  for (const auto& k : config_keys()) width = std::max(width, k.default_value.size());
  for (const auto& k : config_keys()) {
    out << "  " << std::left << std::setw(20) << k.name << std::setw(static_cast<int>(width + 2)) << k.default_value
        << std::setw(8) << k.provenance << k.help << '\n';
  }
  return out.str();
}

std::string usage() {
  std::ostringstream out;
  out << "usage: pathm3 <command> [--preset desk|paper|tiny] [--config FILE] [--<key> VALUE ...]\n\ncommands:\n";
  for (const auto& [name, help] : kCommands) out << "  " << std::left << std::setw(11) << name << help << '\n';
  return out.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::IoError, "cannot write '" + path.string() + "'");
  out << text;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::IoError, "cannot read '" + path.string() + "'");
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) fail(ErrorKind::IoError, "'" + path.string() + "' is not valid JSON");
  return j;
}

// <runs_dir>/<YYYYmmdd-HHMMSS>-seed<seed>, suffixed -2, -3, ... on collision.
fs::path make_run_dir(const RunConfig& cfg) {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream name;
  name << std::put_time(&tm, "%Y%m%d-%H%M%S") << "-seed" << cfg.train.seed;
  fs::path dir = fs::path(cfg.runs_dir) / name.str();
  for (int n = 2; fs::exists(dir); ++n) dir = fs::path(cfg.runs_dir) / (name.str() + "-" + std::to_string(n));
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::IoError, "cannot create run directory '" + dir.string() + "': " + ec.message());
  write_text(dir / "config.json", config_to_json(cfg) + "\n");
  return dir;
}

json row_json(const MetricsRow& r) {
  json j{{"epoch", r.epoch}, {"split", r.split},          {"loss_c", r.loss_c},
         {"loss_g", r.loss_g}, {"loss_overall", r.loss_overall}, {"wall_s", r.wall_s}};
  j["accuracy"] = r.accuracy ? json(*r.accuracy) : json(nullptr);
  j["bleu4"] = r.bleu4 ? json(*r.bleu4) : json(nullptr);
  return j;
}

Manifest load_data(const RunConfig& cfg) { return load_manifest(fs::path(cfg.data_dir) / "manifest.json"); }

struct LoadedRun {
  fs::path dir;
  Model<float> model;
  std::size_t best_epoch = 0;
};

LoadedRun load_run(const RunConfig& cfg) {
  LoadedRun r;
  r.dir = cfg.run.empty() ? latest_run(cfg.runs_dir) : fs::path(cfg.run);
  const json side = read_json(r.dir / "checkpoint.json");
  const RunConfig trained = parse_config_string(side.at("config").dump());
  r.model = Model<float>::init(trained.model, trained.train.seed);
  load_checkpoint_into(r.model.store, r.dir / "checkpoint.pm3w");
  r.best_epoch = side.value("best_epoch", std::size_t{0});
  return r;
}

int cmd_gen_data(const RunConfig& cfg, std::ostream& out) {
  const SyntheticSpec spec = cfg.synthetic();
  const fs::path dir = cfg.data_dir;
  Manifest m = generate_synthetic_corpus(spec, dir);
  m = split_dataset(m, cfg.split, spec.seed, cfg.stratify);
  save_manifest(m, dir / "manifest.json");
  out << "wrote " << m.bags.size() << " bags to " << dir.string() << " (train " << m.in_split(Split::Train).size()
      << ", val " << m.in_split(Split::Val).size() << ", test " << m.in_split(Split::Test).size() << ")\n";
  return 0;
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
  const Manifest m = load_data(cfg);
  const fs::path dir = make_run_dir(cfg);
  out << "run directory " << dir.string() << '\n';
  std::size_t last_epoch = 0;
  auto hook = [&](const StepInfo& s, const ParameterStore<float>&) {
    if (s.epoch != last_epoch) {
      last_epoch = s.epoch;
      out << "epoch " << s.epoch << "/" << cfg.train.epochs << " lr " << s.lr << '\n' << std::flush;
    }
  };
  const TrainResult r = train(m, cfg.data_dir, cfg.model, cfg.train, hook);

  write_metrics_csv(r.rows, dir / "metrics.csv");
  json report{{"best_epoch", r.best_epoch}, {"best_val_accuracy", r.best_val_accuracy}, {"rows", json::array()}};
  for (const auto& row : r.rows) report["rows"].push_back(row_json(row));
  write_text(dir / "metrics.json", report.dump(2) + "\n");

  write_checkpoint(r.best.store, dir / "checkpoint.pm3w");
  write_checkpoint(r.last.store, dir / "last.pm3w");
  json side{{"config", json::parse(config_to_json(cfg))},
            {"seed", cfg.train.seed},
            {"best_epoch", r.best_epoch},
            {"best_val_accuracy", r.best_val_accuracy},
            {"data_dir", cfg.data_dir}};
  write_text(dir / "checkpoint.json", side.dump(2) + "\n");

  for (const auto& row : r.rows) {
    if (row.split == "train") continue;
    out << row.split << " epoch " << row.epoch << ": loss " << row.loss_overall;
    if (row.accuracy) out << ", accuracy " << *row.accuracy;
    if (row.bleu4) out << ", bleu4 " << *row.bleu4;
    out << '\n';
  }
  out << "best epoch " << r.best_epoch << " (val accuracy " << r.best_val_accuracy << ")\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, std::ostream& out) {
  LoadedRun run = load_run(cfg);
  const Manifest m = load_data(cfg);
  const auto bags = load_split(m, cfg.data_dir, cfg.eval_split);
  const EvalReport rep =
      evaluate(run.model, bags, cfg.eval_split, cfg.eval_mode, cfg.train.alpha, true, cfg.train.decode_max_len);
  const fs::path dir = make_run_dir(cfg);
  const MetricsRow row{run.best_epoch, rep.split, rep.loss_c, rep.loss_g, rep.loss_overall, rep.accuracy, rep.bleu4, 0.0};
  write_metrics_csv({row}, dir / "metrics.csv");
  json report = row_json(row);
  report["mode"] = fusion_mode_name(rep.mode);
  report["count"] = rep.count;
  report["checkpoint"] = (run.dir / "checkpoint.pm3w").string();
  write_text(dir / "metrics.json", report.dump(2) + "\n");
  out << "evaluated " << run.dir.string() << " on " << rep.split << " (" << rep.count << " bags, "
      << fusion_mode_name(rep.mode) << "): accuracy " << rep.accuracy << ", bleu4 " << rep.bleu4.value_or(0.0)
      << "\nwrote " << (dir / "metrics.csv").string() << '\n';
  return 0;
}

int cmd_caption(const RunConfig& cfg, std::ostream& out) {
  LoadedRun run = load_run(cfg);
  const Manifest m = load_data(cfg);
  const auto bags = load_split(m, cfg.data_dir, cfg.eval_split);
  if (bags.empty()) fail(ErrorKind::EmptySplit, std::string("split '") + split_name(cfg.eval_split) + "' has no bags");
  const fs::path dir = make_run_dir(cfg);
  std::ofstream tsv(dir / "captions.tsv");
  tsv << "bag_id\treference\tgenerated\tbleu4\n";
  for (const LoadedBag& bag : bags) {
    const auto ids = caption_bag(run.model, bag.features, cfg.train.decode_max_len);
    const std::string gen = decode_caption(m.vocab, ids), ref = decode_caption(m.vocab, bag.record->caption);
    tsv << bag.record->bag_id << '\t' << ref << '\t' << gen << '\t' << bleu4(ids, {bag.record->caption}) << '\n';
    out << bag.record->bag_id << ": " << gen << '\n';
  }
  out << "wrote " << (dir / "captions.tsv").string() << '\n';
  return 0;
}

int cmd_bench(const RunConfig& cfg, std::ostream& out) {
  BenchConfig b = cfg.bench;
  b.pinv_iterations = cfg.model.pinv_iterations;
  b.seed = cfg.train.seed;
  const auto rows = bench_attention(b);
  const fs::path dir = make_run_dir(cfg);
  write_bench_csv(rows, dir / "bench.csv");
  out << bench_csv(rows);
  if (b.lengths.size() >= 2) {
    std::vector<double> x, te, tn;
    for (const auto& r : rows) {
      if (r.method == "exact") {
        x.push_back(static_cast<double>(r.M));
        te.push_back(r.wall_ms);
      } else {
        tn.push_back(r.wall_ms);
      }
    }
    out << "log-log slope: exact " << loglog_slope(x, te) << ", nystrom " << loglog_slope(x, tn) << '\n';
  }
  out << "wrote " << (dir / "bench.csv").string() << '\n';
  return 0;
}

int cmd_gradcheck(const RunConfig& cfg, std::ostream& out) {
  const GradCheckReport rep = model_grad_check(cfg.model, cfg.train.seed, cfg.gradcheck_step, cfg.gradcheck_tol);
  const fs::path dir = make_run_dir(cfg);
  std::ofstream csv(dir / "gradcheck.csv");
  csv << "parameter,size,max_rel_err,passed\n";
  csv.precision(9);
  for (const auto& e : rep.entries) {
    csv << e.name << ',' << e.size << ',' << e.max_rel_error << ',' << (e.passed ? 1 : 0) << '\n';
    out << (e.passed ? "ok   " : "FAIL ") << e.name << " (" << e.size << ") max rel err " << e.max_rel_error << '\n';
  }
  out << rep.entries.size() << " parameters, worst relative error " << rep.max_rel_error << ", tolerance "
      << cfg.gradcheck_tol << (rep.all_passed ? ": all within tolerance\n" : ": FAILED\n");
  return rep.all_passed ? 0 : 2;
}

}  // namespace

fs::path latest_run(const fs::path& runs_dir) {
  std::optional<fs::path> best;
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(runs_dir, ec)) {
    if (!entry.is_directory() || !fs::exists(entry.path() / "checkpoint.pm3w")) continue;
    if (!best || entry.path().filename().string() > best->filename().string()) best = entry.path();
  }
  if (!best) fail(ErrorKind::IoError, "no trained run with a checkpoint under '" + runs_dir.string() + "'");
  return *best;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  if (args.empty()) {
    err << usage();
    return 1;
  }
  const std::string& first = args.front();
  if (first == "--help" || first == "-h") {
    out << usage() << '\n' << keys_table();
    return 0;
  }
  const bool known = std::any_of(kCommands.begin(), kCommands.end(), [&](const auto& c) { return c.first == first; });
  if (!known) {
    err << "UnknownSubcommand: '" << first << "'\n" << usage();
    return 1;
  }

  CLI::App app{"pathm3 " + first};
  app.set_help_flag("-h,--help", "print this help (includes every config key)");
  app.footer(keys_table());
  app.allow_extras();
  std::string config_file, preset;
  app.add_option("--config", config_file, "JSON config file");
  app.add_option("--preset", preset, "desk | paper | tiny");
  std::map<std::string, std::string> values;
  std::vector<std::pair<std::string, CLI::Option*>> opts;
  for (const auto& k : config_keys()) {
    opts.emplace_back(k.name, app.add_option("--" + k.name, values[k.name])->take_last()->group(""));
  }

  std::vector<std::string> rest(args.begin() + 1, args.end());
  std::reverse(rest.begin(), rest.end());
  try {
    app.parse(rest);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    for (const auto& extra : app.remaining()) {
      if (extra.rfind("--", 0) == 0) fail(ErrorKind::UnknownKey, "unknown config key '" + extra.substr(2) + "'");
      fail(ErrorKind::TypeError, "unexpected argument '" + extra + "'");
    }
    std::vector<std::pair<std::string, std::string>> overrides;
    for (const auto& [name, opt] : opts)
      if (opt->count() > 0) overrides.emplace_back(name, values[name]);
    const RunConfig cfg = parse_config(config_file.empty() ? std::nullopt : std::optional<fs::path>(config_file),
                                       overrides, preset.empty() ? std::nullopt : std::optional<std::string>(preset));
    if (first == "gen-data") return cmd_gen_data(cfg, out);
    if (first == "train") return cmd_train(cfg, out);
    if (first == "eval") return cmd_eval(cfg, out);
    if (first == "caption") return cmd_caption(cfg, out);
    if (first == "bench") return cmd_bench(cfg, out);
    return cmd_gradcheck(cfg, out);
  } catch (const Error& e) {
    err << e.what() << '\n';
    if (is_validation(e.kind())) {
      err << usage();
      return 1;
    }
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace pathm3::cli
