// SPDX-License-Identifier: Apache-2.0
#include "esm2/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fstream>
#include <set>
#include <sstream>

#include "esm2/error.hpp"
#include "esm2/text.hpp"

namespace esm2 {

namespace {

// Consumes keys from one section and complains about leftovers.
class SectionReader {
 public:
  SectionReader(std::string name, const std::map<std::string, std::string>& kv)
      : name_(std::move(name)), kv_(kv) {}

  const std::string* get(const std::string& key) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return nullptr;
    seen_.insert(key);
    return &it->second;
  }

  template <typename F>
  void with(const std::string& key, F&& f) {
    if (const auto* v = get(key)) {
      try {
        f(*v);
      } catch (const ValidationError& e) {
        throw ValidationError("[" + name_ + "] " + key + ": " + e.what());
      }
    }
  }

  void finish() const {
    for (const auto& [k, v] : kv_) {
      if (!seen_.count(k)) throw ValidationError("[" + name_ + "] unknown key '" + k + "'");
    }
  }

 private:
  std::string name_;
  const std::map<std::string, std::string>& kv_;
  std::set<std::string> seen_;
};

std::vector<std::size_t> to_sizes(const std::vector<std::uint64_t>& v) {
  return {v.begin(), v.end()};
}

std::string sizes_text(const std::vector<std::size_t>& v) {
  return format_list(std::vector<std::uint64_t>(v.begin(), v.end()));
}

}  // namespace

ConfigSections parse_sections(std::string_view text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in{std::string(text)};
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  ConfigSections out;
  for (const auto& [section, body] : tree) {
    if (!body.data().empty()) {
      throw ValidationError("config: key '" + section + "' outside of a [section]");
    }
    auto& dst = out[section];
    for (const auto& [key, value] : body) dst[key] = std::string(trim(value.data()));
  }
  return out;
}

void apply_section(GeneratorConfig& c, const std::map<std::string, std::string>& kv) {
  SectionReader r("generator", kv);
  r.with("num_users", [&](auto& v) { c.num_users = parse_uint(v); });
  r.with("num_items", [&](auto& v) { c.num_items = parse_uint(v); });
  r.with("num_impressions", [&](auto& v) { c.num_impressions = parse_uint(v); });
  r.with("latent_dim", [&](auto& v) { c.latent_dim = parse_uint(v); });
  r.with("target_click_rate", [&](auto& v) { c.target_click_rate = parse_double(v); });
  r.with("target_daction_given_click",
         [&](auto& v) { c.target_daction_given_click = parse_double(v); });
  r.with("target_buy_given_daction", [&](auto& v) { c.target_buy_given_daction = parse_double(v); });
  r.with("target_buy_given_oaction", [&](auto& v) { c.target_buy_given_oaction = parse_double(v); });
  r.with("scart_share_of_daction", [&](auto& v) { c.scart_share_of_daction = parse_double(v); });
  r.with("feature_noise_sigma", [&](auto& v) { c.feature_noise_sigma = parse_double(v); });
  r.with("seed", [&](auto& v) { c.seed = parse_uint(v); });
  r.with("split", [&](auto& v) {
    const auto f = parse_double_list(v);
    if (f.size() != 3) throw ValidationError("expected train,val,test fractions");
    c.split = SplitFractions{f[0], f[1], f[2]};
  });
  r.with("user_buckets", [&](auto& v) { c.user_buckets = parse_uint(v); });
  r.with("item_buckets", [&](auto& v) { c.item_buckets = parse_uint(v); });
  r.with("category_buckets", [&](auto& v) { c.category_buckets = parse_uint(v); });
  r.with("dense_dim", [&](auto& v) { c.dense_dim = parse_uint(v); });
  r.with("user_zipf_exponent", [&](auto& v) { c.user_zipf_exponent = parse_double(v); });
  r.with("shards", [&](auto& v) { c.shards = parse_uint(v); });
  r.finish();
}

void apply_section(TrainConfig& c, const std::map<std::string, std::string>& kv) {
  SectionReader r("model", kv);
  r.with("variant", [&](auto& v) { c.variant = parse_variant(v); });
  r.with("daction_composition", [&](auto& v) { c.daction_composition = parse_daction(v); });
  r.with("batch_size", [&](auto& v) { c.batch_size = parse_uint(v); });
  r.with("learning_rate", [&](auto& v) { c.learning_rate = parse_double(v); });
  r.with("epochs", [&](auto& v) { c.epochs = parse_uint(v); });
  r.with("dropout", [&](auto& v) { c.dropout = parse_double(v); });
  r.with("tower_dims", [&](auto& v) { c.tower_dims = to_sizes(parse_uint_list(v)); });
  r.with("embedding_dims", [&](auto& v) { c.embedding_dims = to_sizes(parse_uint_list(v)); });
  r.with("dense_mode", [&](auto& v) { c.dense_mode = parse_dense_mode(v); });
  r.with("dense_bins", [&](auto& v) { c.dense_bins = parse_uint(v); });
  r.with("dense_embedding_dim", [&](auto& v) { c.dense_embedding_dim = parse_uint(v); });
  r.with("seed", [&](auto& v) { c.seed = parse_uint(v); });
  r.with("oversample_factor", [&](auto& v) { c.oversample_factor = parse_uint(v); });
  r.with("w_ctr", [&](auto& v) { c.loss_weights.ctr = parse_double(v); });
  r.with("w_ctavr", [&](auto& v) { c.loss_weights.ctavr = parse_double(v); });
  r.with("w_ctcvr", [&](auto& v) { c.loss_weights.ctcvr = parse_double(v); });
  r.with("adam_beta1", [&](auto& v) { c.adam_beta1 = parse_double(v); });
  r.with("adam_beta2", [&](auto& v) { c.adam_beta2 = parse_double(v); });
  r.with("adam_eps", [&](auto& v) { c.adam_eps = parse_double(v); });
  r.finish();
}

namespace {

void apply_eval(EvalConfig& c, const std::map<std::string, std::string>& kv) {
  SectionReader r("eval", kv);
  r.with("thresholds", [&](auto& v) { c.thresholds = parse_double_list(v); });
  r.with("tie_credit", [&](auto& v) { c.tie_credit = parse_bool(v); });
  r.finish();
  for (double k : c.thresholds) {
    if (!(k > 0.0 && k <= 100.0)) throw ValidationError("[eval] thresholds must lie in (0, 100]");
  }
}

void apply_paths(PathsConfig& c, const std::map<std::string, std::string>& kv) {
  SectionReader r("paths", kv);
  r.with("data_dir", [&](auto& v) { c.data_dir = v; });
  r.with("checkpoint_dir", [&](auto& v) { c.checkpoint_dir = v; });
  r.with("report_dir", [&](auto& v) { c.report_dir = v; });
  r.finish();
}

void apply_experiment(ExperimentConfig& c, const std::map<std::string, std::string>& kv) {
  SectionReader r("experiment", kv);
  r.with("seeds", [&](auto& v) { c.seeds = parse_uint_list(v); });
  r.with("dropout_grid", [&](auto& v) { c.dropout_grid = parse_double_list(v); });
  r.with("layers_grid", [&](auto& v) { c.layers_grid = parse_uint_list(v); });
  r.with("emb_dim_grid", [&](auto& v) { c.emb_dim_grid = parse_uint_list(v); });
  r.with("variants", [&](auto& v) {
    c.variants.clear();
    for (auto tok : split(v, ',')) c.variants.push_back(parse_variant(trim(tok)));
  });
  r.finish();
  if (c.seeds.empty()) throw ValidationError("[experiment] seeds must not be empty");
}

}  // namespace

RunConfig parse_run_config(std::string_view text) {
  RunConfig rc;
  for (const auto& [section, kv] : parse_sections(text)) {
    if (section == "generator") {
      apply_section(rc.generator, kv);
    } else if (section == "model") {
      apply_section(rc.model, kv);
    } else if (section == "eval") {
      apply_eval(rc.eval, kv);
    } else if (section == "paths") {
      apply_paths(rc.paths, kv);
    } else if (section == "experiment") {
      apply_experiment(rc.experiment, kv);
    } else {
      throw ValidationError("config: unknown section [" + section + "]");
    }
  }
  rc.generator.validate();
  rc.model.validate();
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read config '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string to_text(const TrainConfig& c) {
  std::ostringstream os;
  os << "variant = " << to_string(c.variant) << '\n'
     << "daction_composition = " << to_string(c.daction_composition) << '\n'
     << "batch_size = " << c.batch_size << '\n'
     << "learning_rate = " << format_double(c.learning_rate) << '\n'
     << "epochs = " << c.epochs << '\n'
     << "dropout = " << format_double(c.dropout) << '\n'
     << "tower_dims = " << sizes_text(c.tower_dims) << '\n'
     << "embedding_dims = " << sizes_text(c.embedding_dims) << '\n'
     << "dense_mode = " << to_string(c.dense_mode) << '\n'
     << "dense_bins = " << c.dense_bins << '\n'
     << "dense_embedding_dim = " << c.dense_embedding_dim << '\n'
     << "seed = " << c.seed << '\n'
     << "oversample_factor = " << c.oversample_factor << '\n'
     << "w_ctr = " << format_double(c.loss_weights.ctr) << '\n'
     << "w_ctavr = " << format_double(c.loss_weights.ctavr) << '\n'
     << "w_ctcvr = " << format_double(c.loss_weights.ctcvr) << '\n'
     << "adam_beta1 = " << format_double(c.adam_beta1) << '\n'
     << "adam_beta2 = " << format_double(c.adam_beta2) << '\n'
     << "adam_eps = " << format_double(c.adam_eps) << '\n';
  return os.str();
}

std::string to_text(const EvalConfig& c) {
  return "thresholds = " + format_list(c.thresholds) + "\ntie_credit = " +
         (c.tie_credit ? "true" : "false") + "\n";
}

std::string to_text(const PathsConfig& c) {
  return "data_dir = " + c.data_dir + "\ncheckpoint_dir = " + c.checkpoint_dir +
         "\nreport_dir = " + c.report_dir + "\n";
}

std::string to_text(const ExperimentConfig& c) {
  std::string variants;
  for (std::size_t i = 0; i < c.variants.size(); ++i) {
    if (i) variants += ',';
    variants += to_string(c.variants[i]);
  }
  return "seeds = " + format_list(c.seeds) + "\ndropout_grid = " + format_list(c.dropout_grid) +
         "\nlayers_grid = " + format_list(c.layers_grid) +
         "\nemb_dim_grid = " + format_list(c.emb_dim_grid) + "\nvariants = " + variants + "\n";
}

std::string to_text(const RunConfig& c) {
  return "[generator]\n" + to_text(c.generator) + "[model]\n" + to_text(c.model) + "[eval]\n" +
         to_text(c.eval) + "[paths]\n" + to_text(c.paths) + "[experiment]\n" +
         to_text(c.experiment);
}

std::vector<std::size_t> tower_dims_for_depth(std::size_t layers) {
  if (layers < 1) throw ValidationError("tower depth must be >= 1");
  std::vector<std::size_t> dims;
  std::size_t width = 64;
  for (std::size_t i = 0; i + 1 < layers; ++i) {
    dims.push_back(width);
    width = std::max<std::size_t>(8, width / 2);
  }
  dims.push_back(1);
  return dims;
}

}  // namespace esm2
