#include "transrank/cli/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <stdexcept>

#include "transrank/eval/probes.hpp"
#include "transrank/eval/report.hpp"
#include "transrank/eval/retrieval.hpp"
#include "transrank/model/checkpoint.hpp"
#include "transrank/train/config.hpp"

namespace transrank::cli {
namespace {

namespace fs = std::filesystem;
using train::RunConfig;

constexpr const char* kResolvedName = "config.resolved";
constexpr const char* kCheckpointName = "checkpoint.trkc";

// Flag values collected by CLI11. Empty optionals leave the config untouched.
struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string ckpt;
  std::string data;
  std::optional<std::size_t> workers;
  std::string framework;
  std::string transforms;
  std::string head;
  std::string preset;
  bool svg = false;
};

// Bad flag values map to the usage exit code, like config errors.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void add_common(CLI::App& cmd, Flags& f) {
  cmd.add_option("--config", f.config, "Config file (key = value, [section] headers)");
  cmd.add_option("--seed", f.seed, "Seed every random stream derives from");
  cmd.add_option("--out", f.out, "Output directory")->required();
  cmd.add_option("--workers", f.workers, "Worker threads")->check(CLI::PositiveNumber);
}

void add_data(CLI::App& cmd, Flags& f) {
  cmd.add_option("--data", f.data, "Dataset directory from gen-data (default: generate in memory)");
}

void add_model(CLI::App& cmd, Flags& f) {
  cmd.add_option("--framework", f.framework, "Pretext framework")->check(CLI::IsMember({"rank", "cls"}));
  cmd.add_option("--transforms", f.transforms, "Temporal transform set, e.g. 1x,2x,rev,rev2x");
  cmd.add_option("--head", f.head, "Temporal head")->check(CLI::IsMember({"fc", "mlp"}));
}

RunConfig resolve(const Flags& f, bool seed_is_data_seed) {
  RunConfig cfg;
  if (!f.config.empty()) cfg = train::load_config(f.config);
  if (f.seed) (seed_is_data_seed ? cfg.data.seed : cfg.seed) = *f.seed;
  if (f.workers) cfg.workers = *f.workers;
  if (!f.data.empty()) cfg.data.dir = f.data;
  try {
    if (!f.framework.empty()) cfg.pretrain.framework = train::parse_framework(f.framework);
    if (!f.transforms.empty()) cfg.pretrain.transforms = parse_transform_list(f.transforms);
    if (!f.head.empty()) cfg.pretrain.head = parse_head_kind(f.head);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  os << text;
  if (!os) throw std::runtime_error("cannot write " + path.string());
}

// The manifest alone reproduces the run: `--config config.resolved` with the
// same command gives the same outputs.
void write_resolved(const fs::path& out, const std::string& command, const RunConfig& cfg,
                    const std::string& ckpt = "") {
  fs::create_directories(out);
  std::string head = "# command: " + command;
  if (!ckpt.empty()) head += " --ckpt " + ckpt;
  write_text(out / kResolvedName, head + "\n" + train::format_config(cfg));
}

Dataset open_split(const RunConfig& cfg, const std::string& split) {
  if (!cfg.data.dir.empty() && !fs::is_directory(fs::path(cfg.data.dir) / split))
    throw DatasetFormatError(cfg.data.dir + ": no '" + split + "' split directory");
  return train::open_split(cfg.data, split, cfg.workers);
}

Checkpoint open_checkpoint(const std::string& path) {
  if (path.empty()) throw UsageError("--ckpt is required");
  if (!fs::is_regular_file(path)) throw CheckpointError(path + ": no such checkpoint");
  return load_checkpoint(path);
}

void print_epoch(std::ostream& out, const train::EpochStats& s, int epochs) {
  out << "epoch " << s.epoch + 1 << "/" << epochs << "  loss " << std::fixed << std::setprecision(4) << s.loss
      << "  pretext_acc " << s.pretext_acc << "  lr " << s.lr << std::defaultfloat << "\n";
  out.flush();
}

eval::RetrievalReport run_retrieval(Encoder& encoder, const Dataset& train_set, const Dataset& test_set,
                                    const RunConfig& cfg, std::ostream& err) {
  const auto bank_train = eval::build_feature_bank(encoder, train_set, cfg.eval, cfg.seed, cfg.workers);
  const auto bank_test = eval::build_feature_bank(encoder, test_set, cfg.eval, cfg.seed, cfg.workers);
  return eval::retrieve(bank_train, bank_test, &err);
}

// Pretrains from scratch, or resumes from `ckpt` when given.
train::PretrainResult run_pretrain(const RunConfig& cfg, const Dataset& data, const std::string& ckpt,
                                   std::ostream& out) {
  train::Pretrainer trainer(cfg.pretrain, cfg.seed);
  if (!ckpt.empty()) {
    trainer.restore(open_checkpoint(ckpt));
    out << "resuming at epoch " << trainer.epoch() << "\n";
  }
  train::PretrainResult result;
  while (trainer.epoch() < cfg.pretrain.epochs) {
    result.history.push_back(trainer.train_epoch(data, cfg.workers));
    print_epoch(out, result.history.back(), cfg.pretrain.epochs);
  }
  result.checkpoint = trainer.checkpoint();
  return result;
}

void save_pretrain(const fs::path& dir, const RunConfig& cfg, const train::PretrainResult& result) {
  train::write_history_csv(dir / "metrics.csv", result.history, cfg.pretrain.transforms);
  save_checkpoint(dir / kCheckpointName, result.checkpoint);
}

std::string set_dir_name(const std::string& framework, const std::string& set) {
  std::string name = framework + "_" + set;
  std::replace(name.begin(), name.end(), ',', '+');
  return name;
}

int cmd_pretrain(const Flags& f, std::ostream& out, std::ostream& err) {
  const fs::path dir = f.out;
  if (f.preset.empty()) {
    const RunConfig cfg = resolve(f, false);
    write_resolved(dir, "pretrain", cfg, f.ckpt);
    const Dataset data = open_split(cfg, "train");
    const auto result = run_pretrain(cfg, data, f.ckpt, out);
    save_pretrain(dir, cfg, result);
    return kExitOk;
  }
  if (f.preset != "paper-ablation") throw UsageError("unknown preset '" + f.preset + "'");
  if (!f.transforms.empty() || !f.framework.empty() || !f.ckpt.empty())
    throw UsageError("--preset paper-ablation sets the framework and transforms itself");

  const RunConfig base = resolve(f, false);
  write_resolved(dir, "pretrain --preset paper-ablation", base);
  const Dataset train_set = open_split(base, "train");
  const Dataset test_set = open_split(base, "test");

  std::ostringstream table;
  table << "framework,transforms,pretext_acc,r1,r5,r10\n";
  for (const auto framework : {train::Framework::Rank, train::Framework::Cls}) {
    for (const auto& set : ablation_transform_sets()) {
      RunConfig cfg = base;
      cfg.pretrain.framework = framework;
      cfg.pretrain.transforms = parse_transform_list(set);
      const std::string name = train::framework_name(framework);
      const fs::path sub = dir / set_dir_name(name, set);
      out << "== " << name << " {" << set << "}\n";
      write_resolved(sub, "pretrain", cfg);
      const auto result = run_pretrain(cfg, train_set, "", out);
      save_pretrain(sub, cfg, result);

      VideoModel model = train::load_video_model(result.checkpoint);
      const auto report = run_retrieval(model.encoder(), train_set, test_set, cfg, err);
      const auto rows = eval::retrieval_rows(report);
      eval::write_metric_csv(sub / "retrieval.csv", rows);
      std::string quoted = set;
      std::replace(quoted.begin(), quoted.end(), ',', '+');
      table << name << "," << quoted << "," << eval::format_double(result.history.back().pretext_acc) << ","
            << eval::format_double(report.r1) << "," << eval::format_double(report.r5) << ","
            << eval::format_double(report.r10) << "\n";
    }
  }
  write_text(dir / "ablation.csv", table.str());
  out << table.str();
  return kExitOk;
}

int cmd_gen_data(const Flags& f, std::ostream& out) {
  const RunConfig cfg = resolve(f, true);
  write_resolved(f.out, "gen-data", cfg);
  build_dataset(f.out, cfg.data.spec(), cfg.workers);
  out << "wrote " << cfg.data.train << " train and " << cfg.data.test << " test videos to " << f.out << "\n";
  return kExitOk;
}

int cmd_transfer(const Flags& f, train::TransferMode mode, std::ostream& out) {
  RunConfig cfg = resolve(f, false);
  cfg.transfer.mode = mode;
  const std::string command = mode == train::TransferMode::Linear ? "linear-eval" : "finetune";
  write_resolved(f.out, command, cfg, f.ckpt);
  const Dataset train_set = open_split(cfg, "train");
  const Dataset test_set = open_split(cfg, "test");

  train::TransferReport report;
  if (mode == train::TransferMode::Finetune) {
    report = train::finetune(open_checkpoint(f.ckpt), train_set, test_set, cfg.transfer, cfg.eval, cfg.seed,
                             cfg.workers);
  } else if (f.ckpt.empty()) {
    // No checkpoint: the randomly initialized encoder, as a baseline.
    VideoModel model(cfg.pretrain.model_config(), cfg.seed);
    report = train::linear_eval(model.encoder(), train_set, test_set, cfg.transfer, cfg.eval, cfg.seed, cfg.workers);
  } else {
    VideoModel model = train::load_video_model(open_checkpoint(f.ckpt));
    report = train::linear_eval(model.encoder(), train_set, test_set, cfg.transfer, cfg.eval, cfg.seed, cfg.workers);
  }
  const auto rows = train::transfer_rows(report);
  eval::write_metric_csv(fs::path(f.out) / "metrics.csv", rows);
  out << command << ": best accuracy " << eval::format_double(report.best_accuracy) << " at lr "
      << eval::format_double(report.best_lr) << "\n";
  return kExitOk;
}

// The pretrained model, or a random one when --ckpt is absent.
VideoModel frozen_model(const Flags& f, const RunConfig& cfg) {
  if (f.ckpt.empty()) return VideoModel(cfg.pretrain.model_config(), cfg.seed);
  return train::load_video_model(open_checkpoint(f.ckpt));
}

int cmd_retrieval(const Flags& f, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = resolve(f, false);
  write_resolved(f.out, "eval-retrieval", cfg, f.ckpt);
  const Dataset train_set = open_split(cfg, "train");
  const Dataset test_set = open_split(cfg, "test");
  VideoModel model = frozen_model(f, cfg);
  const auto report = run_retrieval(model.encoder(), train_set, test_set, cfg, err);
  const auto rows = eval::retrieval_rows(report);
  eval::write_metric_csv(fs::path(f.out) / "retrieval.csv", rows);
  out << "R@1 " << eval::format_double(report.r1) << "  R@5 " << eval::format_double(report.r5) << "  R@10 "
      << eval::format_double(report.r10) << "\n";
  return kExitOk;
}

int cmd_speediness(const Flags& f, std::ostream& out) {
  const RunConfig cfg = resolve(f, false);
  write_resolved(f.out, "speediness", cfg, f.ckpt);
  const Checkpoint ckpt = open_checkpoint(f.ckpt);
  const auto trained = train::checkpoint_transforms(ckpt);
  VideoModel model = train::load_video_model(ckpt);
  const Dataset test_set = open_split(cfg, "test");
  const auto records = eval::speediness(model, trained, test_set, cfg.eval, cfg.seed, cfg.workers);
  const auto rows = eval::summarize_speediness(records, cfg.eval.probe_rates);
  eval::write_quantile_csv(fs::path(f.out) / "speediness.csv", rows);
  if (f.svg) write_text(fs::path(f.out) / "speediness.svg", speediness_svg(rows));
  for (const auto& r : rows) out << r.rate << "  median " << eval::format_double(r.q50) << "\n";
  return kExitOk;
}

int cmd_temporal(const Flags& f, std::ostream& out) {
  const RunConfig cfg = resolve(f, false);
  write_resolved(f.out, "eval-temporal", cfg, f.ckpt);
  const Dataset train_set = open_split(cfg, "train");
  const Dataset test_set = open_split(cfg, "test");
  VideoModel model = frozen_model(f, cfg);
  const double sync = eval::temporal_probe_sync(model.encoder(), train_set, test_set, cfg.eval, cfg.seed, cfg.workers);
  const double order =
      eval::temporal_probe_order(model.encoder(), train_set, test_set, cfg.eval, cfg.seed, cfg.workers);
  const std::vector<eval::MetricRow> rows{{"sync", sync}, {"order", order}};
  eval::write_metric_csv(fs::path(f.out) / "temporal.csv", rows);
  out << "sync " << eval::format_double(sync) << "  order " << eval::format_double(order) << "\n";
  return kExitOk;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

// Rows of one CSV as (metric, value) text pairs. metric,value files pass
// through; quantile tables give `<rate>.<column>`; other tables (training
// history, the ablation grid) contribute their last row.
std::vector<std::pair<std::string, std::string>> report_rows(const fs::path& path) {
  std::ifstream is(path);
  std::string line;
  std::vector<std::vector<std::string>> table;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) table.push_back(split_csv_line(line));
  }
  std::vector<std::pair<std::string, std::string>> rows;
  if (table.size() < 2) return rows;
  const auto& header = table.front();
  for (std::size_t r = 1; r < table.size(); ++r)
    if (table[r].size() != header.size())
      throw DatasetFormatError(path.string() + ":" + std::to_string(r + 1) + ": expected " +
                               std::to_string(header.size()) + " fields");
  if (header == std::vector<std::string>{"metric", "value"}) {
    for (std::size_t r = 1; r < table.size(); ++r) rows.emplace_back(table[r][0], table[r][1]);
  } else if (header.front() == "rate") {
    for (std::size_t r = 1; r < table.size(); ++r)
      for (std::size_t c = 1; c < header.size(); ++c) rows.emplace_back(table[r][0] + "." + header[c], table[r][c]);
  } else if (header.front() == "epoch") {
    for (std::size_t c = 0; c < header.size(); ++c) rows.emplace_back("final." + header[c], table.back()[c]);
  } else {
    for (std::size_t r = 1; r < table.size(); ++r)
      for (std::size_t c = 2; c < header.size(); ++c)
        rows.emplace_back(table[r][0] + "." + table[r][1] + "." + header[c], table[r][c]);
  }
  return rows;
}

int cmd_report(const Flags& f, std::ostream& out) {
  const fs::path dir = f.out;
  if (!fs::is_directory(dir)) throw DatasetFormatError(f.out + ": no such directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".csv") continue;
    if (entry.path() == dir / "report.csv") continue;
    files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::ostringstream text;
  text << "source,metric,value\n";
  for (const auto& path : files) {
    const std::string source = fs::relative(path, dir).generic_string();
    for (const auto& [metric, value] : report_rows(path)) text << source << "," << metric << "," << value << "\n";
  }
  write_text(dir / "report.csv", text.str());
  out << text.str();
  return kExitOk;
}

std::string svg_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

std::vector<std::string> ablation_transform_sets() {
  return {"1x,2x", "1x,2x,rev", "1x,2x,rev,4x", "1x,2x,rev,rev2x"};
}

std::string speediness_svg(std::span<const eval::QuantileRow> rows) {
  constexpr double kWidth = 480, kHeight = 320, kLeft = 50, kRight = 20, kTop = 20, kBottom = 40;
  double lo = 0, hi = 1;
  for (const auto& r : rows) {
    lo = std::min(lo, r.q05);
    hi = std::max(hi, r.q95);
  }
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;
  const auto y = [&](double v) { return kTop + (hi - v) / (hi - lo) * (kHeight - kTop - kBottom); };
  const double slot = (kWidth - kLeft - kRight) / static_cast<double>(std::max<std::size_t>(rows.size(), 1));
  const double half = slot * 0.25;

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kHeight - kBottom
    << "\" stroke=\"black\"/>\n";
  for (const double tick : {0.0, 1.0}) {
    s << "<line x1=\"" << kLeft << "\" y1=\"" << svg_number(y(tick)) << "\" x2=\"" << kWidth - kRight << "\" y2=\""
      << svg_number(y(tick)) << "\" stroke=\"#bbb\" stroke-dasharray=\"4 3\"/>\n";
    s << "<text x=\"" << kLeft - 6 << "\" y=\"" << svg_number(y(tick) + 4) << "\" text-anchor=\"end\">" << tick
      << "</text>\n";
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    const double cx = kLeft + slot * (static_cast<double>(i) + 0.5);
    s << "<line x1=\"" << svg_number(cx) << "\" y1=\"" << svg_number(y(r.q95)) << "\" x2=\"" << svg_number(cx)
      << "\" y2=\"" << svg_number(y(r.q05)) << "\" stroke=\"black\"/>\n";
    for (const double w : {r.q05, r.q95})
      s << "<line x1=\"" << svg_number(cx - half / 2) << "\" y1=\"" << svg_number(y(w)) << "\" x2=\""
        << svg_number(cx + half / 2) << "\" y2=\"" << svg_number(y(w)) << "\" stroke=\"black\"/>\n";
    s << "<rect x=\"" << svg_number(cx - half) << "\" y=\"" << svg_number(y(r.q75)) << "\" width=\""
      << svg_number(2 * half) << "\" height=\"" << svg_number(y(r.q25) - y(r.q75))
      << "\" fill=\"#9ecae1\" stroke=\"black\"/>\n";
    s << "<line x1=\"" << svg_number(cx - half) << "\" y1=\"" << svg_number(y(r.q50)) << "\" x2=\""
      << svg_number(cx + half) << "\" y2=\"" << svg_number(y(r.q50)) << "\" stroke=\"black\" stroke-width=\"2\"/>\n";
    s << "<text x=\"" << svg_number(cx) << "\" y=\"" << kHeight - kBottom + 18 << "\" text-anchor=\"middle\">"
      << r.rate << "</text>\n";
  }
  s << "<text x=\"" << kLeft + (kWidth - kLeft - kRight) / 2 << "\" y=\"" << kHeight - 6
    << "\" text-anchor=\"middle\">probe rate (normalized speediness)</text>\n";
  s << "</svg>\n";
  return s.str();
}

int run(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"TransRank: ranking-based transformation recognition for self-supervised video", "transrank"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);
  Flags f;

  auto* gen = app.add_subcommand("gen-data", "Render the synthetic train/test splits");
  add_common(*gen, f);

  auto* pre = app.add_subcommand("pretrain", "Self-supervised pretraining");
  add_common(*pre, f);
  add_data(*pre, f);
  add_model(*pre, f);
  pre->add_option("--ckpt", f.ckpt, "Checkpoint to resume from");
  pre->add_option("--preset", f.preset, "Experiment preset")->check(CLI::IsMember({"paper-ablation"}));

  auto* fine = app.add_subcommand("finetune", "End-to-end action classification from a checkpoint");
  auto* linear = app.add_subcommand("linear-eval", "Affine classifier on frozen features");
  auto* retrieval = app.add_subcommand("eval-retrieval", "Nearest-neighbour retrieval R@k");
  auto* speed = app.add_subcommand("speediness", "Normalized speediness quantiles per probe rate");
  auto* temporal = app.add_subcommand("eval-temporal", "Sync and Order probes on frozen features");
  for (auto* cmd : {fine, linear, retrieval, speed, temporal}) {
    add_common(*cmd, f);
    add_data(*cmd, f);
    add_model(*cmd, f);
    auto* opt = cmd->add_option("--ckpt", f.ckpt, "Pretraining checkpoint");
    if (cmd == fine || cmd == speed) opt->required();
  }
  speed->add_flag("--svg", f.svg, "Also write speediness.svg");

  auto* report = app.add_subcommand("report", "Collect every CSV under --out into report.csv");
  report->add_option("--out", f.out, "Directory to scan")->required();

  std::vector<std::string> reversed(args.size() > 0 ? args.begin() + 1 : args.end(), args.end());
  std::reverse(reversed.begin(), reversed.end());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(f, out);
    if (pre->parsed()) return cmd_pretrain(f, out, err);
    if (fine->parsed()) return cmd_transfer(f, train::TransferMode::Finetune, out);
    if (linear->parsed()) return cmd_transfer(f, train::TransferMode::Linear, out);
    if (retrieval->parsed()) return cmd_retrieval(f, out, err);
    if (speed->parsed()) return cmd_speediness(f, out);
    if (temporal->parsed()) return cmd_temporal(f, out);
    return cmd_report(f, out);
  } catch (const train::ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DatasetFormatError& e) {
    err << "error: " << e.what() << "\n";
    return kExitFormat;
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << "\n";
    return kExitFormat;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace transrank::cli
