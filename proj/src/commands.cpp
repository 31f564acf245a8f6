#include "pegnn/commands.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "pegnn/checkpoint.hpp"
#include "pegnn/errors.hpp"
#include "pegnn/experiment.hpp"
#include "pegnn/metrics.hpp"
#include "pegnn/nbody.hpp"
#include "pegnn/training.hpp"

namespace pegnn {

namespace fs = std::filesystem;

namespace {

template <typename F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const DivergenceError& e) {
    err << e.what() << "\n";
    return kExitDivergence;
  } catch (const CompatibilityError& e) {
    err << "incompatible checkpoint: " << e.what() << "\n";
    return kExitCompatibility;
  } catch (const fs::filesystem_error& e) {
    err << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  return out;
}

std::vector<GraphSample> load_split(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("dataset '" + path.string() + "' does not exist");
  return read_dataset(path).samples;
}

}  // namespace

int cmd_generate(const fs::path& config_path, const fs::path& out_dir, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig config = load_run_config(config_path);
    make_dir(out_dir);
    RunManifest manifest;
    manifest.command = "generate";
    manifest.config_path = config_path.string();
    manifest.resolved_config = dump_run_config(config);
    manifest.seeds = {config.sim.seed};
    manifest.started_at = utc_timestamp();
    const std::pair<Split, std::size_t> splits[] = {
        {Split::kTrain, config.sizes.train}, {Split::kVal, config.sizes.val}, {Split::kTest, config.sizes.test}};
    for (const auto& [split, n] : splits) {
      manifest.outputs.push_back((out_dir / (std::string(split_name(split)) + ".bin")).string());
    }
    manifest.write(out_dir / "manifest.json");

    for (const auto& [split, n] : splits) {
      const fs::path path = out_dir / (std::string(split_name(split)) + ".bin");
      write_dataset(path, config.sim, split, generate_dataset(config.sim, n, split));
      out << "wrote " << path.string() << " (" << n << " samples)\n";
    }
    manifest.status = "completed";
    manifest.finished_at = utc_timestamp();
    manifest.write(out_dir / "manifest.json");
    return kExitOk;
  });
}

int cmd_train(const TrainOptions& opt, std::ostream& out, std::ostream& err) {
  RunManifest manifest;
  fs::path manifest_path;
  return guarded(err, [&] {
    RunConfig config = load_run_config(opt.config_path);
    if (opt.seed) config.train.seed = *opt.seed;
    if (opt.mode) config.train.mode = parse_mode(*opt.mode);
    const TrainMode mode = config.train.mode;
    const EgnnConfig model = config.model_for(mode);
    config.train.validate(model);

    const fs::path train_path = opt.data_dir / "train.bin";
    const fs::path val_path = opt.data_dir / "val.bin";
    const auto train_data = load_split(train_path);
    const auto val_data = load_split(val_path);

    make_dir(opt.out_dir);
    const fs::path state_path = opt.out_dir / "train_state.bin";
    const bool single = mode != TrainMode::kEnsemble;
    const int n_members = single ? 1 : config.train.ensemble_size;
    auto ckpt_path = [&](int m) {
      return single ? opt.out_dir / "model.ckpt"
                    : opt.out_dir / "ensemble" / ("member_" + std::to_string(m) + ".ckpt");
    };
    auto log_path = [&](int m) {
      return single ? opt.out_dir / "log.csv" : opt.out_dir / ("log_member_" + std::to_string(m) + ".csv");
    };

    manifest.command = "train";
    manifest.config_path = opt.config_path.string();
    manifest.resolved_config = dump_run_config(config);
    for (int m = 0; m < n_members; ++m) manifest.seeds.push_back(member_seed(config.train, m));
    manifest.inputs = {train_path.string(), val_path.string()};
    manifest.outputs.push_back(state_path.string());
    for (int m = 0; m < n_members; ++m) {
      manifest.outputs.push_back(ckpt_path(m).string());
      manifest.outputs.push_back(log_path(m).string());
    }
    manifest.started_at = utc_timestamp();
    manifest_path = opt.out_dir / "manifest.json";
    manifest.write(manifest_path);

    TrainState state;
    if (opt.resume && fs::exists(state_path)) {
      state = load_train_state(state_path, model);
      if (static_cast<int>(state.members.size()) != n_members) {
        throw CompatibilityError("train state holds " + std::to_string(state.members.size()) +
                                 " models but the configuration requires " + std::to_string(n_members));
      }
      out << "resuming from epoch " << state.members.front().epoch << "\n";
    } else {
      state = init_train_state(config.train, model);
    }

    auto report = [&](int m, const LogRow& r) {
      out << "member " << m << " epoch " << r.epoch << " train " << std::setprecision(6) << r.train_loss
          << " val " << r.val_metric << "\n";
    };
    try {
      train(state, config.train, model, train_data, val_data, opt.max_epochs_this_run, report);
    } catch (const TrainingDiverged& e) {
      manifest.status = "diverged";
      manifest.divergence_json = e.report().to_json();
      manifest.finished_at = utc_timestamp();
      manifest.write(manifest_path);
      throw;
    }

    save_train_state(state_path, state, model);
    if (!single) make_dir(opt.out_dir / "ensemble");
    bool finished = true;
    for (int m = 0; m < n_members; ++m) {
      const ModelState& ms = state.members[static_cast<std::size_t>(m)];
      finished = finished && ms.finished;
      write_checkpoint(ckpt_path(m), model, ms.best_params, CheckpointMeta{mode_name(mode), ms.seed, m});
      auto log = open_out(log_path(m));
      write_log_csv(log, ms.log);
    }
    manifest.status = finished ? "completed" : "partial";
    manifest.finished_at = utc_timestamp();
    manifest.write(manifest_path);
    out << (finished ? "training complete" : "training paused; rerun with --resume") << "\n";
    return kExitOk;
  });
}

namespace {

struct EvalEntry {
  std::string name;
  std::vector<Checkpoint> members;
};

EvalEntry load_entry(const fs::path& path) {
  EvalEntry e;
  e.name = path.filename().empty() ? path.parent_path().filename().string() : path.filename().string();
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& it : fs::directory_iterator(path)) {
      if (it.is_regular_file() && it.path().extension() == ".ckpt") files.push_back(it.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw IoError("no .ckpt files in '" + path.string() + "'");
    for (const auto& f : files) e.members.push_back(read_checkpoint(f));
    for (const auto& m : e.members) {
      if (!(m.config == e.members.front().config)) {
        throw CompatibilityError("ensemble members in '" + path.string() + "' have different configurations");
      }
    }
  } else {
    if (!fs::exists(path)) throw IoError("checkpoint '" + path.string() + "' does not exist");
    e.members.push_back(read_checkpoint(path));
  }
  return e;
}

}  // namespace

int cmd_evaluate(const EvaluateOptions& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (opt.checkpoints.empty()) throw ConfigError("no checkpoints given");
    if (opt.k < 1) throw ConfigError("--K must be >= 1");
    if (opt.seeds.empty()) throw ConfigError("at least one seed is required");
    std::optional<RunConfig> config;
    if (opt.config_path) config = load_run_config(*opt.config_path);

    std::vector<EvalEntry> entries;
    for (const auto& p : opt.checkpoints) entries.push_back(load_entry(p));
    if (config) {
      for (const auto& e : entries) {
        const Checkpoint& c = e.members.front();
        const EgnnConfig expected =
            config->model_for(c.config.perturbed() ? TrainMode::kCrps : TrainMode::kDeterministic);
        const std::size_t want = make_param_layout(expected).size();
        if (c.params.size() != want) {
          throw CompatibilityError("checkpoint '" + e.name + "' holds " + std::to_string(c.params.size()) +
                                   " parameters but the configuration requires " + std::to_string(want));
        }
      }
    }
    const auto test_data = load_split(opt.test_path);

    std::vector<MetricsReport> runs;
    for (const auto& e : entries) {
      const Checkpoint& first = e.members.front();
      if (e.members.size() > 1) {
        std::vector<ad::ParamVector> params;
        for (const auto& m : e.members) params.push_back(m.params);
        MetricsReport r = evaluate(ensemble_forecaster(std::move(params), first.config), test_data);
        r.label = e.name;
        r.seed = first.meta.seed;
        runs.push_back(std::move(r));
      } else if (!first.config.perturbed()) {
        MetricsReport r = evaluate(deterministic_forecaster(first.params, first.config, 1), test_data);
        r.label = e.name;
        r.seed = first.meta.seed;
        runs.push_back(std::move(r));
      } else {
        for (const auto s : opt.seeds) {
          MetricsReport r = evaluate(perturbed_forecaster(first.params, first.config, opt.k, s), test_data);
          r.label = opt.seeds.size() > 1 ? e.name + "@eval" + std::to_string(s) : e.name;
          r.seed = first.meta.seed;
          runs.push_back(std::move(r));
        }
      }
    }
    if (opt.out_csv) {
      if (opt.out_csv->has_parent_path()) make_dir(opt.out_csv->parent_path());
      auto csv = open_out(*opt.out_csv);
      write_metrics_csv(csv, runs);
      out << format_metrics(runs);
    } else {
      write_metrics_csv(out, runs);
    }
    return kExitOk;
  });
}

int cmd_params(const fs::path& config_path, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig config = load_run_config(config_path);
    EgnnConfig backbone = config.model;
    backbone.noise_dim = 0;
    const ParamCount base = param_count(backbone);
    const ParamCount pert = param_count(config.model);
    const int k = config.train.ensemble_size;
    out << std::left << std::setw(22) << "model" << std::right << std::setw(12) << "parameters" << std::setw(9)
        << "ratio" << "\n";
    auto row = [&](const std::string& name, std::int64_t count) {
      std::ostringstream ratio;
      ratio << std::fixed << std::setprecision(2) << static_cast<double>(count) / static_cast<double>(base.backbone)
            << "x";
      out << std::left << std::setw(22) << name << std::right << std::setw(12) << count << std::setw(9)
          << ratio.str() << "\n";
    };
    row("EGNN", base.backbone);
    row("EGNN ensemble (K=" + std::to_string(k) + ")", base.backbone * k);
    row("P-EGNN", pert.backbone + pert.noise_overhead);
    out << "backbone P = " << pert.backbone << ", noise overhead dP = " << pert.noise_overhead
        << " (d_z^2 + 2 L d_h d_z with d_z = " << config.model.noise_dim << ", L = " << config.model.n_layers
        << ", d_h = " << config.model.hidden << ")\n";
    return kExitOk;
  });
}

int cmd_sweep(const SweepOptions& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    RunConfig config = load_run_config(opt.config_path);
    if (opt.sizes) config.sweep_sizes = *opt.sizes;
    if (opt.seeds) config.sweep_seeds = *opt.seeds;
    config.validate();
    make_dir(opt.out_dir);
    const fs::path csv_path = opt.out_dir / "sweep.csv";
    const fs::path manifest_path = opt.out_dir / "manifest.json";
    RunManifest manifest;
    manifest.command = "sweep";
    manifest.config_path = opt.config_path.string();
    manifest.resolved_config = dump_run_config(config);
    manifest.seeds = config.sweep_seeds;
    manifest.outputs = {csv_path.string()};
    manifest.started_at = utc_timestamp();
    manifest.write(manifest_path);

    const auto test_data = generate_dataset(config.sim, config.sizes.test, Split::kTest);
    std::vector<SweepRow> rows;
    const std::pair<TrainMode, const char*> models[] = {
        {TrainMode::kDeterministic, "egnn"}, {TrainMode::kEnsemble, "ensemble"}, {TrainMode::kCrps, "pegnn"}};
    for (const std::size_t n : config.sweep_sizes) {
      const auto train_data = generate_dataset(config.sim, n, Split::kTrain);
      const auto val_data = generate_dataset(config.sim, default_split_sizes(n).val, Split::kVal);
      for (const auto seed : config.sweep_seeds) {
        for (const auto& [mode, name] : models) {
          try {
            const TrainedModel trained = train_model(config, mode, seed, train_data, val_data);
            const MetricsReport r = evaluate_model(trained, test_data, config.k_eval, config.eval_seed);
            rows.push_back(SweepRow{n, name, seed, r.mse_of_mean, r.crps, r.ssr});
          } catch (const TrainingDiverged& e) {
            manifest.status = "diverged";
            manifest.divergence_json = e.report().to_json();
            manifest.finished_at = utc_timestamp();
            manifest.write(manifest_path);
            throw;
          }
          out << "n=" << n << " seed=" << seed << " " << name << " mse=" << rows.back().mse
              << " crps=" << rows.back().crps << "\n";
          auto csv = open_out(csv_path);
          write_sweep_csv(csv, rows);
        }
      }
    }
    manifest.status = "completed";
    manifest.finished_at = utc_timestamp();
    manifest.write(manifest_path);
    return kExitOk;
  });
}

}  // namespace pegnn
