// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "mosa/checkpoint.hpp"
#include "mosa/config.hpp"
#include "mosa/dataset.hpp"
#include "mosa/errors.hpp"
#include "mosa/experiment.hpp"
#include "mosa/inference.hpp"
#include "mosa/training.hpp"

namespace mosa::cli {

namespace fs = std::filesystem;

namespace {

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("MOSA_SEED");
  if (s == nullptr || *s == '\0') return std::nullopt;
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(s, &end, 10);
  if (errno != 0 || *end != '\0' || *s == '-') {
    throw ConfigError("MOSA_SEED must be an unsigned integer, got '" + std::string(s) + "'");
  }
  return v;
}

std::optional<std::uint64_t> resolve_seed(const std::optional<std::uint64_t>& flag) {
  return flag ? flag : env_seed();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out.flush()) throw DataError("write failed for " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory " + dir.string() + ": " + ec.message());
}

RunConfig resolve_config(const std::string& path, const std::vector<std::string>& overrides,
                         const std::optional<std::uint64_t>& seed, std::ostream& err) {
  ParsedConfig parsed = load_config(path);
  for (const auto& n : parsed.notices) err << n << '\n';
  for (const auto& o : overrides) apply_override(parsed.config, o);
  if (seed) parsed.config.plan.seed = *seed;
  parsed.config.validate();
  return parsed.config;
}

bool is_degenerate(const RunConfig& cfg) {
  return cfg.tuning == Tuning::kAdapter && cfg.adapter.num_experts == 1 &&
         cfg.plan.alpha == 0.0 && cfg.plan.beta == 0.0;
}

struct RunOutcome {
  Experiment experiment;
  TrainResult result;
};

RunOutcome train_run(const RunConfig& cfg) {
  if (cfg.train_data.empty()) throw ConfigError("train_data is not set");
  const Dataset train_set = load_dataset(cfg.train_data);
  std::optional<Dataset> val_set;
  if (!cfg.val_data.empty()) val_set = load_dataset(cfg.val_data);
  Experiment exp = make_experiment(cfg);
  TrainResult result = train(exp.model, exp.adapters, train_set, val_set ? &*val_set : nullptr,
                             cfg.plan, {}, std::move(exp.optimizer));
  exp.optimizer = result.optimizer;
  return {std::move(exp), std::move(result)};
}

void write_run(const fs::path& dir, const RunConfig& cfg, const RunOutcome& run) {
  ensure_dir(dir);
  save_checkpoint(to_checkpoint(run.experiment), dir / "final.mosa-ckpt");
  write_text(dir / "metrics.csv", metrics_csv(run.result.epochs));
  if (cfg.log_steps) write_text(dir / "steps.csv", metrics_csv(run.result.steps));
  write_text(dir / "resolved-config.txt", config_text(cfg));
}

int cmd_train(const std::string& config, const std::string& out_dir,
              const std::vector<std::string>& overrides,
              const std::optional<std::uint64_t>& seed_flag, std::ostream& out,
              std::ostream& err) {
  RunConfig cfg = resolve_config(config, overrides, resolve_seed(seed_flag), err);
  cfg.out_dir = out_dir;
  if (is_degenerate(cfg)) {
    err << "degenerate configuration (num_experts=1, alpha=0, beta=0): "
           "standard adapter tuning path, single forward pass, dense updates\n";
  }
  const RunOutcome run = train_run(cfg);
  write_run(out_dir, cfg, run);
  const auto& last = run.result.epochs;
  out << "epochs,steps,final_loss,val_top1\n" << last.size() << ',' << run.result.steps.size() << ',';
  if (!last.empty()) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", last.back().loss);
    out << buf;
  }
  out << ',';
  if (!last.empty() && last.back().val_top1) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", *last.back().val_top1);
    out << buf;
  }
  out << '\n';
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_path, const std::string& mode,
             std::size_t fixed_index, const std::optional<std::uint64_t>& seed_flag,
             std::size_t batch_size, const std::string& dump, std::ostream& out) {
  InferenceMode m;
  m.variant = parse_variant(mode);
  m.fixed_index = fixed_index;
  m.seed = resolve_seed(seed_flag).value_or(0);
  const Experiment exp = from_checkpoint(load_checkpoint(ckpt_path));
  const Dataset data = load_dataset(data_path);
  std::optional<fs::path> dump_path;
  if (!dump.empty()) dump_path = dump;
  const EvalReport report = evaluate(exp.model, exp.adapters, data, m, batch_size, dump_path);
  out << EvalReport::csv_header() << '\n' << report.csv_row() << '\n';
  return 0;
}

int cmd_merge(const std::string& in, const std::string& out_path, std::ostream& out) {
  const Experiment exp = from_checkpoint(load_checkpoint(in));
  const Experiment merged = merged_experiment(exp);
  save_checkpoint(to_checkpoint(merged), out_path);
  out << "experts_merged,out\n" << exp.adapters.num_experts() << ',' << out_path << '\n';
  return 0;
}

int cmd_params(const std::string& config, const std::vector<std::string>& overrides,
               std::ostream& out, std::ostream& err) {
  RunConfig cfg = resolve_config(config, overrides, std::nullopt, err);
  out << "params_excl_head\n" << count_config_params(cfg) << '\n';
  return 0;
}

struct Sweep {
  std::string key;
  std::vector<std::string> values;
};

Sweep parse_sweep(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == text.size()) {
    throw ConfigError("sweep '" + text + "' is not key=v1,v2,...");
  }
  Sweep s{text.substr(0, eq), {}};
  std::stringstream ss(text.substr(eq + 1));
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) throw ConfigError("sweep '" + text + "' has an empty value");
    s.values.push_back(item);
  }
  return s;
}

std::string csv_escape(const std::string& v) {
  if (v.find_first_of(",\"\n") == std::string::npos) return v;
  std::string out = "\"";
  for (char c : v) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

int cmd_ablate(const std::string& config, const std::vector<std::string>& sweep_args,
               const std::string& out_dir, const std::vector<std::string>& overrides,
               const std::optional<std::uint64_t>& seed_flag, std::size_t jobs, std::ostream& out,
               std::ostream& err) {
  const RunConfig base = resolve_config(config, overrides, resolve_seed(seed_flag), err);
  if (base.val_data.empty()) throw ConfigError("ablate needs val_data in the config");
  std::vector<Sweep> sweeps;
  for (const auto& s : sweep_args) {
    sweeps.push_back(parse_sweep(s));
    config_value(base, sweeps.back().key);
  }

  std::vector<RunConfig> cells{base};
  std::vector<std::vector<std::string>> labels{{}};
  for (const auto& s : sweeps) {
    std::vector<RunConfig> next_cells;
    std::vector<std::vector<std::string>> next_labels;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      for (const auto& v : s.values) {
        RunConfig cfg = cells[c];
        apply_override(cfg, s.key + "=" + v);
        next_cells.push_back(cfg);
        auto l = labels[c];
        l.push_back(config_value(cfg, s.key));
        next_labels.push_back(l);
      }
    }
    cells = std::move(next_cells);
    labels = std::move(next_labels);
  }
  for (const auto& c : cells) c.validate();

  ensure_dir(out_dir);
  const Dataset val_set = load_dataset(base.val_data);
  std::vector<std::string> rows(cells.size());
  std::mutex log_mutex;
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      try {
        RunConfig cfg = cells[i];
        char name[32];
        std::snprintf(name, sizeof name, "cell-%03zu", i);
        cfg.out_dir = (fs::path(out_dir) / name).string();
        const RunOutcome run = train_run(cfg);
        write_run(cfg.out_dir, cfg, run);
        const EvalReport report =
            evaluate(run.experiment.model, run.experiment.adapters, val_set, InferenceMode{});
        std::string row;
        for (const auto& l : labels[i]) row += csv_escape(l) + ",";
        char buf[96];
        std::snprintf(buf, sizeof buf, "%.17g,%zu", report.top1, report.params_excl_head);
        rows[i] = row + buf;
        std::lock_guard lock(log_mutex);
        err << name << ": top1=" << report.top1 << '\n';
      } catch (...) {
        std::lock_guard lock(log_mutex);
        if (!failure) failure = std::current_exception();
        next = cells.size();
      }
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(jobs, cells.size()));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  std::string csv;
  for (const auto& s : sweeps) csv += s.key + ",";
  csv += "top1,params\n";
  for (const auto& r : rows) csv += r + "\n";
  write_text(fs::path(out_dir) / "ablation.csv", csv);
  out << csv;
  return 0;
}

int cmd_gen_data(const SyntheticSpec& spec, const std::string& train_path,
                 const std::string& val_path, std::ostream& out) {
  if (spec.classes < 2) throw ConfigError("gen-data: --classes must be >= 2");
  if (spec.image_size < 1 || spec.channels < 1 || spec.samples_per_class < 1) {
    throw ConfigError("gen-data: image size, channels and samples per class must be >= 1");
  }
  if (!(spec.difficulty >= 0.0)) throw ConfigError("gen-data: --difficulty must be >= 0");
  const DatasetPair pair = gen_synthetic(spec);
  save_dataset(pair.train, train_path);
  save_dataset(pair.val, val_path);
  out << "split,path,samples\n"
      << "train," << train_path << ',' << pair.train.size() << '\n'
      << "val," << val_path << ',' << pair.val.size() << '\n';
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Mixture of sparse adapters: training, evaluation and merging"};
  app.name("mosa");
  app.require_subcommand(1);

  std::string config, out_dir, ckpt, data, mode = "merge", dump, merge_out, train_path, val_path;
  std::vector<std::string> overrides, sweeps;
  std::optional<std::uint64_t> seed;
  std::size_t fixed_index = 0, batch_size = 256, jobs = 1;
  SyntheticSpec spec;

  auto* train_cmd = app.add_subcommand("train", "Train adapters on a frozen backbone");
  train_cmd->add_option("--config", config, "Run config file")->required();
  train_cmd->add_option("--out", out_dir, "Output directory")->required();
  train_cmd->add_option("--seed", seed, "Seed (default: MOSA_SEED, then config)");
  train_cmd->add_option("--override", overrides, "key=value assignments")->expected(1, -1);

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  eval_cmd->add_option("--data", data, "Dataset file")->required();
  eval_cmd->add_option("--mode", mode, "fixed, stochastic, ensemble or merge");
  eval_cmd->add_option("--fixed-index", fixed_index, "Expert used by --mode fixed");
  eval_cmd->add_option("--seed", seed, "Seed for --mode stochastic (default: MOSA_SEED, then 0)");
  eval_cmd->add_option("--batch-size", batch_size, "Images per forward pass");
  eval_cmd->add_option("--dump-features", dump, "Write pooled features as CSV");

  auto* merge_cmd = app.add_subcommand("merge", "Merge expert splits into dense adapters");
  merge_cmd->add_option("--ckpt", ckpt, "Input checkpoint")->required();
  merge_cmd->add_option("--out", merge_out, "Output checkpoint")->required();

  auto* params_cmd = app.add_subcommand("params", "Count trainable parameters (head excluded)");
  params_cmd->add_option("--config", config, "Run config file")->required();
  params_cmd->add_option("--override", overrides, "key=value assignments")->expected(1, -1);

  auto* ablate_cmd = app.add_subcommand("ablate", "Train and evaluate a grid of configs");
  ablate_cmd->add_option("--config", config, "Base run config")->required();
  ablate_cmd->add_option("--sweep", sweeps, "key=v1,v2,...")->required();
  ablate_cmd->add_option("--out", out_dir, "Output directory")->required();
  ablate_cmd->add_option("--override", overrides, "key=value assignments")->expected(1, -1);
  ablate_cmd->add_option("--seed", seed, "Seed (default: MOSA_SEED, then config)");
  ablate_cmd->add_option("--jobs", jobs, "Cells trained in parallel")->check(CLI::PositiveNumber);

  auto* gen_cmd = app.add_subcommand("gen-data", "Write a synthetic train/val dataset pair");
  gen_cmd->add_option("--train-out", train_path, "Train split path")->required();
  gen_cmd->add_option("--val-out", val_path, "Validation split path")->required();
  gen_cmd->add_option("--classes", spec.classes, "Number of classes");
  gen_cmd->add_option("--samples-per-class", spec.samples_per_class, "Train samples per class");
  gen_cmd->add_option("--val-per-class", spec.val_per_class, "Validation samples per class");
  gen_cmd->add_option("--image-size", spec.image_size, "Image height and width");
  gen_cmd->add_option("--channels", spec.channels, "Image channels");
  gen_cmd->add_option("--difficulty", spec.difficulty, "Nuisance scale");
  gen_cmd->add_option("--seed", seed, "Seed (default: MOSA_SEED, then 0)");

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : static_cast<int>(ExitCode::kConfig);
  }

  try {
    if (*train_cmd) return cmd_train(config, out_dir, overrides, seed, out, err);
    if (*eval_cmd) return cmd_eval(ckpt, data, mode, fixed_index, seed, batch_size, dump, out);
    if (*merge_cmd) return cmd_merge(ckpt, merge_out, out);
    if (*params_cmd) return cmd_params(config, overrides, out, err);
    if (*ablate_cmd) {
      return cmd_ablate(config, sweeps, out_dir, overrides, seed, jobs, out, err);
    }
    if (*gen_cmd) {
      spec.seed = resolve_seed(seed).value_or(0);
      return cmd_gen_data(spec, train_path, val_path, out);
    }
  } catch (const Error& e) {
    err << "mosa: " << e.what() << '\n';
    return static_cast<int>(e.exit_code());
  } catch (const fs::filesystem_error& e) {
    err << "mosa: " << e.what() << '\n';
    return static_cast<int>(ExitCode::kData);
  } catch (const std::exception& e) {
    err << "mosa: internal error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::kInternal);
  }
  return static_cast<int>(ExitCode::kInternal);
}

}  // namespace mosa::cli
