// SPDX-License-Identifier: Apache-2.0
//
// esm2: generate synthetic logs, train and evaluate CVR models, and run
// multi-seed comparisons, sweeps and the DAction ablation.
//
// Exit codes: 0 success, 1 validation error, 2 runtime failure.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <zlib.h>

#include "esm2/config.hpp"
#include "esm2/datagen.hpp"
#include "esm2/error.hpp"
#include "esm2/experiments.hpp"
#include "esm2/kernels.hpp"
#include "esm2/text.hpp"
#include "esm2/training.hpp"

namespace fs = std::filesystem;
using namespace esm2;

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool quiet = false;
};

Globals g_opts;

void log(const std::string& msg) {
  if (!g_opts.quiet) std::cerr << msg << '\n';
}

RunConfig resolve_config() {
  RunConfig rc = g_opts.config_path.empty() ? RunConfig{} : load_run_config(g_opts.config_path);
  if (g_opts.seed) {
    rc.generator.seed = *g_opts.seed;
    rc.model.seed = *g_opts.seed;
  }
  return rc;
}

fs::path ensure_dir(const fs::path& dir) {
  if (!fs::exists(dir)) {
    fs::create_directories(dir);
    log("created directory " + dir.string());
  }
  return dir;
}

// Written as <path>.partial and renamed on completion.
void write_artifact(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) ensure_dir(path.parent_path());
  const fs::path tmp = path.string() + ".partial";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + tmp.string() + "'");
    out << content;
    if (!out) throw Error("failed writing '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

// adler32: a CRC over a checkpoint (which ends in its own CRC) is constant.
std::string file_checksum(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read '" + path.string() + "'");
  uLong sum = adler32(0L, Z_NULL, 0);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    const auto n = in.gcount();
    if (n > 0) sum = adler32(sum, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(n));
  }
  char hex[9];
  std::snprintf(hex, sizeof hex, "%08lx", static_cast<unsigned long>(sum));
  return hex;
}

std::string rate_row(const char* name, double target, double got) {
  std::ostringstream os;
  os << "  " << std::left << std::setw(24) << name << std::right << std::fixed
     << std::setprecision(5) << std::setw(10) << target << std::setw(10) << got << std::setw(9)
     << std::setprecision(2) << 100.0 * (got - target) / target << "%";
  return os.str();
}

fs::path data_dir(const RunConfig& rc, const std::string& override_dir) {
  if (!override_dir.empty()) return override_dir;
  return rc.paths.data_dir;
}

fs::path out_dir(const std::string& fallback) {
  return g_opts.out.empty() ? fs::path(fallback) : fs::path(g_opts.out);
}

// ---- gen ----------------------------------------------------------------------

struct GenOpts {
  std::optional<std::uint64_t> impressions;
  std::optional<std::uint64_t> shards;
};

void cmd_gen(const GenOpts& o) {
  RunConfig rc = resolve_config();
  if (o.impressions) rc.generator.num_impressions = *o.impressions;
  if (o.shards) rc.generator.shards = *o.shards;
  rc.generator.validate();
  const fs::path dir = ensure_dir(out_dir(rc.paths.data_dir));
  const auto res = generate_dataset(rc.generator, dir);
  const auto& s = res.overall;
  const auto& g = rc.generator;
  const double buy_target = g.target_daction_given_click * g.target_buy_given_daction +
                            (1.0 - g.target_daction_given_click) * g.target_buy_given_oaction;
  std::cout << "calibration (target vs empirical, " << s.impressions << " impressions)\n"
            << "  " << std::left << std::setw(24) << "rate" << std::right << std::setw(10)
            << "target" << std::setw(10) << "got" << std::setw(10) << "rel.err" << '\n'
            << rate_row("P(click)", g.target_click_rate, s.click_rate()) << '\n'
            << rate_row("P(DAction | click)", g.target_daction_given_click,
                        s.daction_given_click())
            << '\n'
            << rate_row("P(purchase | click)", buy_target, s.purchase_given_click()) << '\n'
            << rate_row("P(purchase | DAction)", g.target_buy_given_daction,
                        s.purchase_given_daction())
            << '\n'
            << rate_row("P(purchase | OAction)", g.target_buy_given_oaction,
                        s.purchase_given_oaction())
            << '\n';
  std::cout << "files\n";
  for (const auto& p : {res.train_path, res.val_path, res.test_path, res.stats_path}) {
    std::cout << "  adler32 " << file_checksum(p) << "  " << p.string() << '\n';
  }
}

// ---- train --------------------------------------------------------------------

struct TrainOpts {
  std::string data;
  std::string variant;
  std::string daction;
  std::optional<std::uint64_t> epochs;
  std::optional<double> lr;
  std::optional<double> dropout;
  std::optional<std::uint64_t> batch_size;
};

void apply_train_overrides(TrainConfig& tc, const TrainOpts& o) {
  if (!o.variant.empty()) tc.variant = parse_variant(o.variant);
  if (!o.daction.empty()) tc.daction_composition = parse_daction(o.daction);
  if (o.epochs) tc.epochs = *o.epochs;
  if (o.lr) tc.learning_rate = *o.lr;
  if (o.dropout) tc.dropout = *o.dropout;
  if (o.batch_size) tc.batch_size = *o.batch_size;
  tc.validate();
}

void cmd_train(const TrainOpts& o) {
  RunConfig rc = resolve_config();
  apply_train_overrides(rc.model, o);
  const fs::path dir = data_dir(rc, o.data);
  const auto train_data = load_dataset(dir / "train.tsv");
  const auto val_data = load_dataset(dir / "val.tsv");
  const auto& tc = rc.model;
  log("training " + variant_label(tc.variant) + " (DAction = " +
      daction_label(tc.daction_composition) + ") on " +
      std::to_string(train_data.records.size()) + " impressions, kernels: " +
      std::string(kernels::isa_name(kernels::active_isa())));
  if (tc.variant == Variant::dnn || tc.variant == Variant::dnn_os) {
    std::size_t clicked = 0;
    for (const auto& r : train_data.records) clicked += r.c;
    log("CVR tower trains on the clicked subset: " + std::to_string(clicked) + " samples" +
        (tc.variant == Variant::dnn_os
             ? " (purchases repeated x" + std::to_string(tc.oversample_factor) + ")"
             : std::string()));
  }
  const auto t0 = std::chrono::steady_clock::now();
  const auto res = train(train_data, val_data, tc, [](const EpochRecord& e) {
    std::ostringstream os;
    os << "epoch " << e.epoch << "  loss " << std::fixed << std::setprecision(5) << e.train_loss
       << "  val CVR AUC " << std::setprecision(4) << e.val_cvr_auc << "  val CTCVR AUC "
       << e.val_ctcvr_auc;
    log(os.str());
  });
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const fs::path ckdir = ensure_dir(out_dir(rc.paths.checkpoint_dir));
  const auto final_path = ckdir / "final.ckpt";
  const auto best_path = ckdir / "best.ckpt";
  write_artifact(final_path, [&] {
    const auto b = serialize_checkpoint(res.final_model);
    return std::string(b.begin(), b.end());
  }());
  write_artifact(best_path, [&] {
    const auto b = serialize_checkpoint(res.best_model);
    return std::string(b.begin(), b.end());
  }());
  write_artifact(ckdir / "history.csv", history_csv(res.final_model.history));
  std::cout << "trained " << variant_label(tc.variant) << " in " << std::fixed
            << std::setprecision(1) << secs << " s; best epoch " << res.best_epoch << '\n'
            << "  " << final_path.string() << "  adler32 " << file_checksum(final_path) << '\n'
            << "  " << best_path.string() << "  adler32 " << file_checksum(best_path) << '\n'
            << "  " << (ckdir / "history.csv").string() << '\n';
}

// ---- eval ---------------------------------------------------------------------

struct EvalOpts {
  std::string checkpoint;
  std::string reference;
  std::string data;
  std::vector<double> thresholds;
  bool tie_credit = false;
  bool oracle_scores = false;
};

void cmd_eval(const EvalOpts& o) {
  RunConfig rc = resolve_config();
  if (!o.thresholds.empty()) rc.eval.thresholds = o.thresholds;
  if (o.tie_credit) rc.eval.tie_credit = true;
  const fs::path data_path =
      o.data.empty() ? fs::path(rc.paths.data_dir) / "test.tsv" : fs::path(o.data);
  auto test = load_dataset(data_path);

  EvalReport report;
  std::string echo;
  if (o.oracle_scores) {
    // Test hook: scores equal to the labels rank perfectly.
    std::vector<ComposedProbs> probs;
    for (const auto& r : test.records) {
      probs.push_back(ComposedProbs{double(r.c), double(r.a), double(r.b), double(r.b)});
    }
    report = evaluate_probs("oracle", probs, test, rc.eval);
  } else {
    if (o.checkpoint.empty()) throw ValidationError("eval needs --checkpoint (or --oracle-scores)");
    const Model model = load_checkpoint(o.checkpoint);
    check_compatible(model, test);
    test = recompose_daction(test, model.config.daction_composition);
    std::optional<Model> ref;
    if (!o.reference.empty()) {
      ref = load_checkpoint(o.reference);
      check_compatible(*ref, test);
    }
    report = evaluate(model, test, rc.eval, ref ? &*ref : nullptr);
    echo = "[model]\n" + to_text(model.config);
  }
  const std::string text = format_report(report);
  std::cout << text;
  const fs::path dir = out_dir(rc.paths.report_dir);
  const std::string header = "[eval]\n" + to_text(rc.eval) + echo;
  write_artifact(dir / "eval.txt", text + "\n# resolved config\n" + header);
  write_artifact(dir / "eval.csv", report_csv(report));
  write_artifact(dir / "eval.config.ini", header);
  log("wrote " + (dir / "eval.txt").string() + " and " + (dir / "eval.csv").string());
}

// ---- multi-seed commands ----------------------------------------------------------

struct ExperimentOpts {
  std::vector<std::uint64_t> seeds;
  std::optional<std::uint64_t> impressions;
  std::optional<std::uint64_t> epochs;
};

void emit_experiment(const std::string& stem, const RunConfig& rc,
                     const std::vector<ArmResult>& results, const std::string& preface) {
  const std::string text = preface + summary_text(results, rc.eval);
  std::cout << text;
  const fs::path dir = out_dir(rc.paths.report_dir);
  write_artifact(dir / (stem + ".txt"), text + "\n# resolved config\n" + to_text(rc));
  write_artifact(dir / (stem + ".csv"), summary_csv(results, rc.eval));
  write_artifact(dir / (stem + ".config.ini"), to_text(rc));
  log("wrote " + (dir / (stem + ".csv")).string());
}

RunConfig experiment_config(const ExperimentOpts& o) {
  RunConfig rc = resolve_config();
  if (!o.seeds.empty()) rc.experiment.seeds = o.seeds;
  if (g_opts.seed && o.seeds.empty()) rc.experiment.seeds = {*g_opts.seed};
  if (o.impressions) rc.generator.num_impressions = *o.impressions;
  if (o.epochs) rc.model.epochs = *o.epochs;
  rc.generator.validate();
  rc.model.validate();
  return rc;
}

bool any_failed(const std::vector<ArmResult>& results) {
  for (const auto& a : results) {
    for (const auto& r : a.runs) {
      if (!r.ok) return true;
    }
  }
  return false;
}

int cmd_sweep(const ExperimentOpts& o, const std::string& axis, const std::vector<double>& values) {
  const RunConfig rc = experiment_config(o);
  const auto ax = parse_sweep_axis(axis);
  const auto arms = sweep_arms(rc, ax, values);
  const auto results = run_arms(rc.generator, arms, rc.experiment.seeds, rc.eval, log);
  emit_experiment("sweep_" + std::string(to_string(ax)), rc, results, "");
  return any_failed(results) ? 2 : 0;
}

int cmd_ablate(const ExperimentOpts& o) {
  const RunConfig rc = experiment_config(o);
  const auto results = run_arms(rc.generator, ablation_arms(rc), rc.experiment.seeds, rc.eval, log);
  std::ostringstream pre;
  pre << "train P(DAction | click) per composition (mean over seeds):";
  for (const auto& a : results) {
    std::vector<double> rates;
    for (const auto& r : a.runs) rates.push_back(r.train_daction_rate);
    pre << "  " << a.label << " " << std::fixed << std::setprecision(4) << summarize(rates).mean;
  }
  pre << '\n';
  emit_experiment("ablation", rc, results, pre.str());
  return any_failed(results) ? 2 : 0;
}

int cmd_report(const ExperimentOpts& o) {
  const RunConfig rc = experiment_config(o);
  const auto results = run_arms(rc.generator, variant_arms(rc), rc.experiment.seeds, rc.eval, log);
  emit_experiment("comparison", rc, results, "");
  return any_failed(results) ? 2 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ESM2 entire-space multi-task CVR modelling on synthetic behavior logs"};
  app.require_subcommand(1);
  app.add_option("--config", g_opts.config_path, "Run configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", g_opts.seed, "Overrides generator and model seeds");
  app.add_option("--out", g_opts.out, "Output directory for the command's artifacts");
  app.add_flag("--quiet", g_opts.quiet, "Suppress progress logging");

  GenOpts gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate train/val/test logs and a stats sidecar");
  gen_cmd->add_option("--impressions", gen.impressions, "Total impressions");
  gen_cmd->add_option("--shards", gen.shards, "Generation shards (one thread each)");

  TrainOpts tr;
  auto* train_cmd = app.add_subcommand("train", "Train one model variant");
  train_cmd->add_option("--data", tr.data, "Directory with train.tsv and val.tsv");
  train_cmd->add_option("--variant", tr.variant, "esm2 | esmm | dnn | dnn_os");
  train_cmd->add_option("--daction", tr.daction, "scart | wish | both");
  train_cmd->add_option("--epochs", tr.epochs, "Passes over the training split");
  train_cmd->add_option("--lr", tr.lr, "Adam learning rate");
  train_cmd->add_option("--dropout", tr.dropout, "Hidden-layer dropout probability");
  train_cmd->add_option("--batch-size", tr.batch_size, "Impressions per mini-batch");

  EvalOpts ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint to score with");
  eval_cmd->add_option("--reference", ev.reference, "Second checkpoint for grouped AUC gains");
  eval_cmd->add_option("--data", ev.data, "Dataset file (default <data_dir>/test.tsv)");
  eval_cmd->add_option("--thresholds", ev.thresholds, "Top-k percentages")->delimiter(',');
  eval_cmd->add_flag("--tie-credit", ev.tie_credit, "Count tied pairs as 1/2 in AUC");
  eval_cmd->add_flag("--oracle-scores", ev.oracle_scores, "Score with the labels (test hook)");

  ExperimentOpts ex;
  std::string axis;
  std::vector<double> values;
  auto add_experiment_opts = [&](CLI::App* c) {
    c->add_option("--seeds", ex.seeds, "Seeds (comma separated)")->delimiter(',');
    c->add_option("--impressions", ex.impressions, "Impressions per generated dataset");
    c->add_option("--epochs", ex.epochs, "Passes over each training split");
  };
  auto* sweep_cmd = app.add_subcommand("sweep", "Sweep one hyper-parameter over seeds");
  sweep_cmd->add_option("--axis", axis, "dropout | layers | emb_dim")->required();
  sweep_cmd->add_option("--values", values, "Values (default: grid from config)")->delimiter(',');
  add_experiment_opts(sweep_cmd);
  auto* ablate_cmd = app.add_subcommand("ablate", "DAction composition ablation over seeds");
  add_experiment_opts(ablate_cmd);
  auto* report_cmd = app.add_subcommand("report", "Compare model variants over seeds");
  add_experiment_opts(report_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (gen_cmd->parsed()) cmd_gen(gen);
    if (train_cmd->parsed()) cmd_train(tr);
    if (eval_cmd->parsed()) cmd_eval(ev);
    if (sweep_cmd->parsed()) return cmd_sweep(ex, axis, values);
    if (ablate_cmd->parsed()) return cmd_ablate(ex);
    if (report_cmd->parsed()) return cmd_report(ex);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
