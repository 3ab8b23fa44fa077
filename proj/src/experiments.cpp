// SPDX-License-Identifier: Apache-2.0
#include "esm2/experiments.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "esm2/error.hpp"
#include "esm2/text.hpp"

namespace esm2 {

std::vector<ComposedProbs> predict_all(const Model& model, const Dataset& data) {
  check_compatible(model, data);
  std::vector<ComposedProbs> out;
  out.reserve(data.records.size());
  for (const auto& r : data.records) out.push_back(model.predict(r));
  return out;
}

TaskScores task_scores(std::span<const ComposedProbs> probs, const Dataset& data) {
  if (probs.size() != data.records.size()) {
    throw ValidationError("scores cover " + std::to_string(probs.size()) + " records, dataset has " +
                          std::to_string(data.records.size()));
  }
  TaskScores t;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const auto& r = data.records[i];
    t.ctcvr.scores.push_back(probs[i].pctcvr);
    t.ctcvr.labels.push_back(r.b);
    t.ctcvr.group_keys.push_back(r.user_id);
    if (r.c) {
      t.cvr.scores.push_back(probs[i].pcvr);
      t.cvr.labels.push_back(r.b);
      t.cvr.group_keys.push_back(r.user_id);
    }
  }
  return t;
}

std::map<std::uint64_t, std::uint64_t> purchases_per_user(const Dataset& data) {
  std::map<std::uint64_t, std::uint64_t> counts;
  for (const auto& r : data.records) counts[r.user_id] += r.b;
  return counts;
}

EvalReport evaluate_probs(const std::string& name, std::span<const ComposedProbs> probs,
                          const Dataset& data, const EvalConfig& eval,
                          std::span<const ComposedProbs> reference) {
  const auto scores = task_scores(probs, data);
  EvalReport r;
  r.model = name;
  r.impressions = data.records.size();
  for (const auto& rec : data.records) {
    r.clicks += rec.c;
    r.purchases += rec.b;
  }
  r.cvr = make_report(scores.cvr, eval.thresholds, eval.tie_credit);
  ScoredSet all_cvr;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    all_cvr.scores.push_back(probs[i].pcvr);
    all_cvr.labels.push_back(data.records[i].b);
    all_cvr.group_keys.push_back(data.records[i].user_id);
  }
  r.cvr_all = make_report(all_cvr, eval.thresholds, eval.tie_credit);
  r.ctcvr = make_report(scores.ctcvr, eval.thresholds, eval.tie_credit);
  // Entire-space inference: the CTCVR population is every impression.
  if (r.ctcvr.samples != data.records.size() || r.cvr.samples != r.clicks) {
    throw Error("evaluation population does not match the dataset");
  }
  std::optional<TaskScores> ref;
  if (!reference.empty()) ref = task_scores(reference, data);
  r.grouped = grouped_auc_by_purchase_count(scores, ref ? &*ref : nullptr,
                                            purchases_per_user(data), eval.tie_credit);
  return r;
}

EvalReport evaluate(const Model& model, const Dataset& data, const EvalConfig& eval,
                    const Model* reference) {
  const auto probs = predict_all(model, data);
  std::vector<ComposedProbs> ref;
  if (reference) ref = predict_all(*reference, data);
  return evaluate_probs(variant_label(model.config.variant), probs, data, eval, ref);
}

namespace {

std::string opt(const std::optional<double>& v, int precision = 4) {
  if (!v || !std::isfinite(*v)) return "-";
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << *v;
  return os.str();
}

std::string fixed(double v, int precision = 4) { return opt(std::optional<double>(v), precision); }

std::string csv_opt(const std::optional<double>& v) {
  return v && std::isfinite(*v) ? format_double(*v) : "";
}

void task_text(std::ostringstream& os, const char* title, const MetricsReport& m) {
  os << title << "  samples=" << m.samples << " positives=" << m.positives
     << "  AUC=" << opt(m.auc) << "  GAUC=" << opt(m.gauc) << '\n';
  os << "  " << std::left << std::setw(10) << "threshold" << std::right << std::setw(10)
     << "recall" << std::setw(11) << "precision" << std::setw(10) << "F1" << '\n';
  for (const auto& row : m.f1_table) {
    os << "  " << std::left << std::setw(10) << row.tag << std::right << std::setw(10)
       << fixed(row.recall) << std::setw(11) << fixed(row.precision) << std::setw(10)
       << fixed(row.f1) << '\n';
  }
}

}  // namespace

std::string format_report(const EvalReport& r) {
  std::ostringstream os;
  os << "model " << r.model << ": impressions=" << r.impressions << " clicks=" << r.clicks
     << " purchases=" << r.purchases << '\n';
  os << "CVR AUC is over clicked impressions (label: purchase); CTCVR AUC is over all "
        "impressions.\n\n";
  task_text(os, "CVR (clicked)", r.cvr);
  task_text(os, "CVR (all impressions)", r.cvr_all);
  task_text(os, "CTCVR", r.ctcvr);
  os << "\nAUC by user purchase count\n";
  os << "  " << std::left << std::setw(9) << "bin" << std::right << std::setw(7) << "users"
     << std::setw(9) << "cvr_n" << std::setw(10) << "ctcvr_n" << std::setw(9) << "CVR"
     << std::setw(9) << "CTCVR" << std::setw(10) << "CVR ref" << std::setw(10) << "CTCVR ref"
     << std::setw(10) << "CVR gain" << std::setw(11) << "CTCVR gain" << '\n';
  for (const auto& g : r.grouped) {
    os << "  " << std::left << std::setw(9) << g.bin << std::right << std::setw(7) << g.users
       << std::setw(9) << g.cvr_samples << std::setw(10) << g.ctcvr_samples << std::setw(9)
       << opt(g.cvr_auc) << std::setw(9) << opt(g.ctcvr_auc) << std::setw(10)
       << opt(g.cvr_auc_ref) << std::setw(10) << opt(g.ctcvr_auc_ref) << std::setw(10)
       << opt(g.cvr_gain) << std::setw(11) << opt(g.ctcvr_gain) << '\n';
  }
  return os.str();
}

std::string report_csv(const EvalReport& r) {
  std::ostringstream os;
  os << "model,task,population,metric,value\n";
  auto task = [&](const char* name, const char* pop, const MetricsReport& m) {
    os << r.model << ',' << name << ',' << pop << ",samples," << m.samples << '\n';
    os << r.model << ',' << name << ',' << pop << ",positives," << m.positives << '\n';
    os << r.model << ',' << name << ',' << pop << ",auc," << csv_opt(m.auc) << '\n';
    os << r.model << ',' << name << ',' << pop << ",gauc," << csv_opt(m.gauc) << '\n';
    for (const auto& row : m.f1_table) {
      os << r.model << ',' << name << ',' << pop << ',' << row.tag << "_recall,"
         << format_double(row.recall) << '\n';
      os << r.model << ',' << name << ',' << pop << ',' << row.tag << "_precision,"
         << format_double(row.precision) << '\n';
      os << r.model << ',' << name << ',' << pop << ',' << row.tag << "_f1,"
         << format_double(row.f1) << '\n';
    }
  };
  task("cvr", "clicked", r.cvr);
  task("cvr", "all", r.cvr_all);
  task("ctcvr", "all", r.ctcvr);
  for (const auto& g : r.grouped) {
    const std::string pre = r.model + ",grouped,purchases" + g.bin + ',';
    os << pre << "users," << g.users << '\n';
    os << pre << "cvr_auc," << csv_opt(g.cvr_auc) << '\n';
    os << pre << "ctcvr_auc," << csv_opt(g.ctcvr_auc) << '\n';
    os << pre << "cvr_auc_ref," << csv_opt(g.cvr_auc_ref) << '\n';
    os << pre << "ctcvr_auc_ref," << csv_opt(g.ctcvr_auc_ref) << '\n';
    os << pre << "cvr_gain," << csv_opt(g.cvr_gain) << '\n';
    os << pre << "ctcvr_gain," << csv_opt(g.ctcvr_gain) << '\n';
  }
  return os.str();
}

Summary summarize(const std::vector<double>& xs) {
  Summary s;
  double sum = 0.0;
  for (double x : xs) {
    if (!std::isfinite(x)) continue;
    sum += x;
    ++s.n;
  }
  if (s.n == 0) return Summary{std::nan(""), std::nan(""), 0};
  s.mean = sum / static_cast<double>(s.n);
  if (s.n > 1) {
    double ss = 0.0;
    for (double x : xs) {
      if (std::isfinite(x)) ss += (x - s.mean) * (x - s.mean);
    }
    s.stddev = std::sqrt(ss / static_cast<double>(s.n - 1));
  }
  return s;
}

std::vector<double> ArmResult::values(
    const std::function<std::optional<double>(const EvalReport&)>& f) const {
  std::vector<double> out;
  for (const auto& run : runs) {
    if (!run.ok) continue;
    out.push_back(f(run.report).value_or(std::nan("")));
  }
  return out;
}

Summary ArmResult::cvr_auc() const {
  return summarize(values([](const EvalReport& r) { return r.cvr.auc; }));
}

Summary ArmResult::ctcvr_auc() const {
  return summarize(values([](const EvalReport& r) { return r.ctcvr.auc; }));
}

std::vector<ArmResult> run_arms(const GeneratorConfig& generator, const std::vector<Arm>& arms,
                                const std::vector<std::uint64_t>& seeds, const EvalConfig& eval,
                                const Progress& progress) {
  std::vector<ArmResult> results;
  for (const auto& arm : arms) results.push_back(ArmResult{arm.label, {}});
  for (auto seed : seeds) {
    GeneratorConfig g = generator;
    g.seed = seed;
    const auto splits = generate_splits(g);
    for (std::size_t a = 0; a < arms.size(); ++a) {
      RunOutcome run;
      run.seed = seed;
      TrainConfig tc = arms[a].config;
      tc.seed = seed;
      try {
        const auto recomposed = recompose_daction(splits.train, tc.daction_composition);
        const auto rates = compute_rates(recomposed.records);
        run.train_daction_rate = rates.daction_given_click();
        auto res = train(splits.train, splits.val, tc);
        run.best_epoch = res.best_epoch;
        const auto test = recompose_daction(splits.test, tc.daction_composition);
        run.report = evaluate(res.best_model, test, eval);
        run.report.model = arms[a].label;
        run.ok = true;
      } catch (const std::exception& e) {
        run.error = e.what();
      }
      if (progress) {
        std::ostringstream os;
        os << "seed " << seed << " " << arms[a].label << ": ";
        if (run.ok) {
          os << "CVR AUC " << opt(run.report.cvr.auc) << ", CTCVR AUC " << opt(run.report.ctcvr.auc)
             << ", best epoch " << run.best_epoch << ", train P(a|c) "
             << fixed(run.train_daction_rate);
        } else {
          os << "FAILED: " << run.error;
        }
        progress(os.str());
      }
      results[a].runs.push_back(std::move(run));
    }
  }
  return results;
}

std::string variant_label(Variant v) {
  switch (v) {
    case Variant::esm2: return "ESM2";
    case Variant::esmm: return "ESMM";
    case Variant::dnn: return "DNN";
    case Variant::dnn_os: return "DNN-OS";
  }
  return "?";
}

std::string daction_label(DActionChoice c) {
  switch (c) {
    case DActionChoice::scart: return "SCart";
    case DActionChoice::wish: return "Wish";
    case DActionChoice::both: return "SCart and Wish";
  }
  return "?";
}

std::vector<Arm> variant_arms(const RunConfig& rc) {
  std::vector<Arm> arms;
  for (auto v : rc.experiment.variants) {
    TrainConfig tc = rc.model;
    tc.variant = v;
    arms.push_back(Arm{variant_label(v), tc});
  }
  return arms;
}

std::vector<Arm> ablation_arms(const RunConfig& rc) {
  std::vector<Arm> arms;
  for (auto c : {DActionChoice::scart, DActionChoice::wish, DActionChoice::both}) {
    TrainConfig tc = rc.model;
    tc.variant = Variant::esm2;
    tc.daction_composition = c;
    arms.push_back(Arm{daction_label(c), tc});
  }
  return arms;
}

SweepAxis parse_sweep_axis(std::string_view s) {
  if (s == "dropout") return SweepAxis::dropout;
  if (s == "layers") return SweepAxis::layers;
  if (s == "emb_dim") return SweepAxis::emb_dim;
  throw ValidationError("unknown sweep axis '" + std::string(s) + "' (dropout, layers, emb_dim)");
}

std::string_view to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::dropout: return "dropout";
    case SweepAxis::layers: return "layers";
    case SweepAxis::emb_dim: return "emb_dim";
  }
  return "?";
}

std::vector<Arm> sweep_arms(const RunConfig& rc, SweepAxis axis, std::vector<double> values) {
  if (values.empty()) {
    switch (axis) {
      case SweepAxis::dropout: values = rc.experiment.dropout_grid; break;
      case SweepAxis::layers:
        for (auto v : rc.experiment.layers_grid) values.push_back(static_cast<double>(v));
        break;
      case SweepAxis::emb_dim:
        for (auto v : rc.experiment.emb_dim_grid) values.push_back(static_cast<double>(v));
        break;
    }
  }
  if (values.empty()) throw ValidationError("sweep has no values");
  std::vector<Arm> arms;
  for (double v : values) {
    TrainConfig tc = rc.model;
    switch (axis) {
      case SweepAxis::dropout: tc.dropout = v; break;
      case SweepAxis::layers: {
        if (v < 1 || v != std::floor(v)) throw ValidationError("layers must be a positive integer");
        tc.tower_dims = tower_dims_for_depth(static_cast<std::size_t>(v));
        break;
      }
      case SweepAxis::emb_dim: {
        if (v < 1 || v != std::floor(v)) throw ValidationError("emb_dim must be a positive integer");
        for (auto& d : tc.embedding_dims) d = static_cast<std::size_t>(v);
        break;
      }
    }
    tc.validate();
    arms.push_back(Arm{std::string(to_string(axis)) + "=" + format_double(v), tc});
  }
  return arms;
}

namespace {

struct Column {
  std::string name;
  std::function<std::optional<double>(const EvalReport&)> get;
};

std::vector<Column> summary_columns(const EvalConfig& eval) {
  std::vector<Column> cols{
      {"cvr_auc", [](const EvalReport& r) { return r.cvr.auc; }},
      {"cvr_gauc", [](const EvalReport& r) { return r.cvr.gauc; }},
      {"cvr_auc_all", [](const EvalReport& r) { return r.cvr_all.auc; }},
      {"ctcvr_auc", [](const EvalReport& r) { return r.ctcvr.auc; }},
      {"ctcvr_gauc", [](const EvalReport& r) { return r.ctcvr.gauc; }},
  };
  for (std::size_t i = 0; i < eval.thresholds.size(); ++i) {
    const auto tag = topk_tag(eval.thresholds[i]);
    cols.push_back({"cvr_f1@" + tag, [i](const EvalReport& r) -> std::optional<double> {
                      if (i >= r.cvr.f1_table.size()) return std::nullopt;
                      return r.cvr.f1_table[i].f1;
                    }});
    cols.push_back({"ctcvr_f1@" + tag, [i](const EvalReport& r) -> std::optional<double> {
                      if (i >= r.ctcvr.f1_table.size()) return std::nullopt;
                      return r.ctcvr.f1_table[i].f1;
                    }});
  }
  return cols;
}

std::size_t failures(const ArmResult& a) {
  std::size_t n = 0;
  for (const auto& r : a.runs) n += r.ok ? 0 : 1;
  return n;
}

}  // namespace

std::string summary_csv(const std::vector<ArmResult>& arms, const EvalConfig& eval) {
  const auto cols = summary_columns(eval);
  std::ostringstream os;
  os << "arm,runs,failed";
  for (const auto& c : cols) os << ',' << c.name << "_mean," << c.name << "_std";
  os << '\n';
  for (const auto& a : arms) {
    os << a.label << ',' << a.runs.size() << ',' << failures(a);
    for (const auto& c : cols) {
      const auto s = summarize(a.values(c.get));
      os << ',' << (s.n ? format_double(s.mean) : "") << ','
         << (s.n ? format_double(s.stddev) : "");
    }
    os << '\n';
  }
  return os.str();
}

std::string summary_text(const std::vector<ArmResult>& arms, const EvalConfig& eval) {
  const auto cols = summary_columns(eval);
  std::size_t label_w = 5;
  for (const auto& a : arms) label_w = std::max(label_w, a.label.size() + 2);
  std::ostringstream os;
  os << "Mean +- sample stddev over seeds. CVR over clicked impressions, CTCVR over all.\n";
  os << std::left << std::setw(static_cast<int>(label_w)) << "arm" << std::right;
  for (const auto& c : cols) os << std::setw(22) << c.name;
  os << '\n';
  for (const auto& a : arms) {
    os << std::left << std::setw(static_cast<int>(label_w)) << a.label << std::right;
    for (const auto& c : cols) {
      const auto s = summarize(a.values(c.get));
      os << std::setw(22) << (s.n ? fixed(s.mean) + " +- " + fixed(s.stddev) : "-");
    }
    if (failures(a)) os << "  (" << failures(a) << " failed)";
    os << '\n';
  }
  return os.str();
}

}  // namespace esm2
