// SPDX-License-Identifier: Apache-2.0
#include "esm2/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include "esm2/error.hpp"
#include "esm2/text.hpp"

namespace esm2 {

namespace {

constexpr std::uint64_t kUserSalt = 0x9E3779B97F4A7C15ULL;
constexpr std::uint64_t kItemSalt = 0xC2B2AE3D27D4EB4FULL;
constexpr std::uint64_t kCategorySalt = 0x165667B19E3779F9ULL;
constexpr std::size_t kCalibrationSamples = 400000;
constexpr double kBiasLo = -30.0;
constexpr double kBiasHi = 30.0;

bool open_unit(double p) { return p > 0.0 && p < 1.0; }

void require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError("generator config: " + what);
}

double safe_ratio(std::uint64_t num, std::uint64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

std::vector<double> normal_vector(std::mt19937_64& rng, std::size_t n, double sd = 1.0) {
  std::normal_distribution<double> dist(0.0, sd);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

// rho * a + sqrt(1 - rho^2) * b, element-wise.
std::vector<double> blend(const std::vector<double>& a, const std::vector<double>& b,
                          double rho) {
  const double rest = std::sqrt(1.0 - rho * rho);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = rho * a[i] + rest * b[i];
  return out;
}

double mean_sigmoid(std::span<const double> logits, std::span<const double> weights,
                    double weight_sum, double bias) {
  double acc = 0.0;
  if (weights.empty()) {
    for (double l : logits) acc += sigmoid(l + bias);
  } else {
    for (std::size_t i = 0; i < logits.size(); ++i) acc += weights[i] * sigmoid(logits[i] + bias);
  }
  return acc / weight_sum;
}

double calibrate_impl(std::span<const double> logits, std::span<const double> weights,
                      double target) {
  if (logits.empty()) throw CalibrationError("calibrate_bias: no logit samples");
  if (!open_unit(target)) {
    throw CalibrationError("calibrate_bias: target rate must lie in (0, 1), got " +
                           format_double(target));
  }
  double weight_sum = static_cast<double>(logits.size());
  if (!weights.empty()) {
    if (weights.size() != logits.size()) {
      throw ValidationError("calibrate_bias: weights and logits differ in length");
    }
    weight_sum = std::accumulate(weights.begin(), weights.end(), 0.0);
    if (!(weight_sum > 0.0)) throw CalibrationError("calibrate_bias: zero total weight");
  }
  double lo = kBiasLo;
  double hi = kBiasHi;
  const double f_lo = mean_sigmoid(logits, weights, weight_sum, lo);
  const double f_hi = mean_sigmoid(logits, weights, weight_sum, hi);
  if (target < f_lo || target > f_hi) {
    throw CalibrationError("calibrate_bias: target " + format_double(target) +
                           " unreachable within bias bracket [-30, 30] (range " +
                           format_double(f_lo) + " .. " + format_double(f_hi) + ")");
  }
  for (int iter = 0; iter < 200; ++iter) {
    const double mid = 0.5 * (lo + hi);
    const double f = mean_sigmoid(logits, weights, weight_sum, mid);
    if (std::abs(f - target) <= 1e-12 || hi - lo < 1e-14) return mid;
    (f < target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

void GeneratorConfig::validate() const {
  require(num_users >= 1, "num_users must be >= 1");
  require(num_items >= 1, "num_items must be >= 1");
  require(num_impressions >= 1, "num_impressions must be >= 1");
  require(latent_dim >= 1, "latent_dim must be >= 1");
  require(open_unit(target_click_rate), "target_click_rate must lie in (0, 1)");
  require(open_unit(target_daction_given_click), "target_daction_given_click must lie in (0, 1)");
  require(open_unit(target_buy_given_daction), "target_buy_given_daction must lie in (0, 1)");
  require(open_unit(target_buy_given_oaction), "target_buy_given_oaction must lie in (0, 1)");
  require(scart_share_of_daction >= 0.0 && scart_share_of_daction <= 1.0,
          "scart_share_of_daction must lie in [0, 1]");
  require(std::isfinite(feature_noise_sigma) && feature_noise_sigma >= 0.0,
          "feature_noise_sigma must be finite and >= 0");
  require(split.train > 0.0 && split.val > 0.0 && split.test > 0.0,
          "split fractions must be positive");
  require(std::abs(split.train + split.val + split.test - 1.0) <= 1e-9,
          "split fractions must sum to 1");
  require(user_buckets >= 1 && item_buckets >= 1 && category_buckets >= 1,
          "bucket counts must be >= 1");
  require(user_buckets <= UINT32_MAX && item_buckets <= UINT32_MAX &&
              category_buckets <= UINT32_MAX,
          "bucket counts must fit in 32 bits");
  require(dense_dim >= 1, "dense_dim must be >= 1");
  require(std::isfinite(user_zipf_exponent) && user_zipf_exponent >= 0.0,
          "user_zipf_exponent must be finite and >= 0");
  require(shards >= 1 && shards <= num_impressions, "shards must lie in [1, num_impressions]");
}

void validate_labels(const BehaviorRecord& r, std::size_t line) {
  for (std::uint8_t v : {r.c, r.scart, r.wish, r.a, r.b}) {
    if (v > 1) throw DataError("labels must be binary", line);
  }
  if (r.c == 0 && (r.scart || r.wish || r.a || r.b)) {
    throw DataError(
        "label consistency violated: post-click label set on an unclicked impression "
        "(c=0 with scart/wish/purchase=1)",
        line);
  }
  if (r.a != (r.scart | r.wish)) {
    throw DataError("label consistency violated: DAction must equal scart OR wish", line);
  }
}

void Dataset::validate() const {
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.sparse_ids.size() != field_vocab_sizes.size()) {
      throw DataError("record " + std::to_string(i) + ": wrong number of sparse fields", 0);
    }
    for (std::size_t f = 0; f < r.sparse_ids.size(); ++f) {
      if (r.sparse_ids[f] >= field_vocab_sizes[f]) {
        throw DataError("record " + std::to_string(i) + ": bucket out of range in field " +
                            std::to_string(f),
                        0);
      }
    }
    if (r.dense.size() != dense_dim) {
      throw DataError("record " + std::to_string(i) + ": wrong dense width", 0);
    }
    validate_labels(r);
  }
}

double RateStats::click_rate() const { return safe_ratio(clicks, impressions); }
double RateStats::daction_given_click() const { return safe_ratio(dactions, clicks); }
double RateStats::purchase_given_click() const { return safe_ratio(purchases, clicks); }
double RateStats::purchase_given_daction() const {
  return safe_ratio(purchases_after_daction, dactions);
}
double RateStats::purchase_given_oaction() const {
  return safe_ratio(purchases - purchases_after_daction, clicks - dactions);
}
double RateStats::scart_given_click() const { return safe_ratio(scarts, clicks); }
double RateStats::wish_given_click() const { return safe_ratio(wishes, clicks); }

RateStats compute_rates(std::span<const BehaviorRecord> records) {
  RateStats s;
  for (const auto& r : records) {
    ++s.impressions;
    s.clicks += r.c;
    s.scarts += r.scart;
    s.wishes += r.wish;
    s.dactions += r.a;
    s.purchases += r.b;
    s.purchases_after_daction += (r.a && r.b) ? 1 : 0;
  }
  return s;
}

double calibrate_bias(std::span<const double> logits, double target_rate) {
  return calibrate_impl(logits, {}, target_rate);
}

double calibrate_bias(std::span<const double> logits, std::span<const double> weights,
                      double target_rate) {
  return calibrate_impl(logits, weights, target_rate);
}

Labels sample_labels(std::mt19937_64& rng, const EdgeLogits& logits, const EdgeBiases& biases) {
  // Always five draws per record so the stream position does not depend on
  // the labels.
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double u[5];
  for (double& x : u) x = unif(rng);

  Labels l;
  l.c = u[0] < sigmoid(logits.click + biases.click);
  if (!l.c) return l;
  l.scart = u[1] < sigmoid(logits.scart + biases.scart);
  l.wish = u[2] < sigmoid(logits.wish + biases.wish);
  l.a = l.scart | l.wish;
  const double buy_logit =
      l.a ? logits.buy_daction + biases.buy_daction : logits.buy_oaction + biases.buy_oaction;
  l.b = u[3] < sigmoid(buy_logit);
  return l;
}

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

BehaviorModel::BehaviorModel(const GeneratorConfig& config) : config_(config) {
  config_.validate();
  const std::size_t d = config_.latent_dim;
  std::seed_seq seq{config_.seed, std::uint64_t{0xA11CE}};
  std::mt19937_64 rng(seq);

  // Items cluster around category centres so the category field carries
  // shared signal across items.
  const auto centers = normal_vector(rng, config_.category_buckets * d);
  item_category_.resize(config_.num_items);
  item_latents_.resize(config_.num_items * d);
  std::normal_distribution<double> unit(0.0, 1.0);
  for (std::uint64_t i = 0; i < config_.num_items; ++i) {
    const auto cat =
        static_cast<std::uint32_t>(mix64(i ^ kCategorySalt) % config_.category_buckets);
    item_category_[i] = cat;
    for (std::size_t k = 0; k < d; ++k) {
      item_latents_[i * d + k] = 0.8 * centers[cat * d + k] + 0.6 * unit(rng);
    }
  }
  user_latents_ = normal_vector(rng, config_.num_users * d);

  struct Direction {
    std::vector<double> interaction, user, item;
  };
  auto fresh = [&] {
    return Direction{normal_vector(rng, d), normal_vector(rng, d), normal_vector(rng, d)};
  };
  auto blend_dir = [](const Direction& a, const Direction& b, double rho) {
    return Direction{blend(a.interaction, b.interaction, rho), blend(a.user, b.user, rho),
                     blend(a.item, b.item, rho)};
  };
  // Post-click edges share a common "intent" direction that is itself
  // correlated with click propensity; purchase edges follow the intent.
  const Direction click = fresh();
  const Direction intent = blend_dir(click, fresh(), 0.6);
  const Direction scart = blend_dir(intent, fresh(), 0.9);
  const Direction wish = blend_dir(intent, fresh(), 0.7);
  const Direction buy_d = blend_dir(intent, fresh(), 0.6);
  const Direction buy_o = blend_dir(intent, fresh(), 0.6);
  const std::array<std::pair<const Direction*, double>, 5> spec{{
      {&click, 1.5}, {&scart, 2.0}, {&wish, 2.0}, {&buy_d, 1.0}, {&buy_o, 1.0}}};
  for (std::size_t e = 0; e < edges_.size(); ++e) {
    edges_[e].interaction = spec[e].first->interaction;
    edges_[e].user = spec[e].first->user;
    edges_[e].item = spec[e].first->item;
    edges_[e].scale = spec[e].second;
  }

  const std::size_t width = 3 * d;
  projection_ = normal_vector(rng, config_.dense_dim * width, 1.0 / std::sqrt(double(width)));

  // Zipf-like user activity over a random popularity order.
  std::vector<std::uint64_t> order(config_.num_users);
  std::iota(order.begin(), order.end(), std::uint64_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<double> weights(config_.num_users);
  for (std::uint64_t rank = 0; rank < config_.num_users; ++rank) {
    weights[order[rank]] = std::pow(double(rank + 1), -config_.user_zipf_exponent);
  }
  user_cdf_.resize(weights.size());
  std::partial_sum(weights.begin(), weights.end(), user_cdf_.begin());

  calibrate();
}

std::span<const double> BehaviorModel::user_latent(std::uint64_t user) const {
  const std::size_t d = config_.latent_dim;
  return std::span<const double>(user_latents_).subspan(user * d, d);
}

std::span<const double> BehaviorModel::item_latent(std::uint64_t item) const {
  const std::size_t d = config_.latent_dim;
  return std::span<const double>(item_latents_).subspan(item * d, d);
}

double BehaviorModel::edge_score(const EdgeWeights& w, std::span<const double> u,
                                 std::span<const double> t) const {
  // Plain loops: generated files must not depend on the active SIMD variant.
  double inter = 0.0, lin = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    inter += w.interaction[k] * u[k] * t[k];
    lin += w.user[k] * u[k] + w.item[k] * t[k];
  }
  return w.scale * (inter + 0.5 * lin) / std::sqrt(double(u.size()));
}

EdgeLogits BehaviorModel::edge_logits(std::span<const double> u,
                                      std::span<const double> t) const {
  return EdgeLogits{edge_score(edges_[0], u, t), edge_score(edges_[1], u, t),
                    edge_score(edges_[2], u, t), edge_score(edges_[3], u, t),
                    edge_score(edges_[4], u, t)};
}

void BehaviorModel::calibrate() {
  // Each edge is calibrated against the calibration population weighted by
  // the probability of reaching its parent node, so conditional rates hit
  // their targets in expectation.
  std::seed_seq seq{config_.seed, std::uint64_t{0xCA11B}};
  std::mt19937_64 rng(seq);
  std::uniform_int_distribution<std::uint64_t> item_dist(0, config_.num_items - 1);
  const std::size_t n = kCalibrationSamples;
  std::vector<double> click(n), scart(n), wish(n), buy_d(n), buy_o(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto user = draw_user(rng);
    const auto item = item_dist(rng);
    const auto l = edge_logits(user_latent(user), item_latent(item));
    click[i] = l.click;
    scart[i] = l.scart;
    wish[i] = l.wish;
    buy_d[i] = l.buy_daction;
    buy_o[i] = l.buy_oaction;
  }

  biases_.click = calibrate_bias(click, config_.target_click_rate);
  std::vector<double> p_click(n);
  for (std::size_t i = 0; i < n; ++i) p_click[i] = sigmoid(click[i] + biases_.click);
  const double click_mass = std::accumulate(p_click.begin(), p_click.end(), 0.0);

  const double target_d = config_.target_daction_given_click;
  const double scart_target = config_.scart_share_of_daction * target_d;
  std::vector<double> p_scart(n, 0.0);
  if (scart_target > 0.0) {
    biases_.scart = calibrate_bias(scart, p_click, scart_target);
    for (std::size_t i = 0; i < n; ++i) p_scart[i] = sigmoid(scart[i] + biases_.scart);
  } else {
    biases_.scart = kBiasLo;
  }

  // Wish covers the part of the DAction rate that scart leaves uncovered.
  std::vector<double> w_wish(n);
  double wish_mass = 0.0, scart_mass = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    w_wish[i] = p_click[i] * (1.0 - p_scart[i]);
    wish_mass += w_wish[i];
    scart_mass += p_click[i] * p_scart[i];
  }
  const double wish_target = (target_d * click_mass - scart_mass) / wish_mass;
  if (config_.scart_share_of_daction >= 1.0 || wish_target <= 0.0) {
    biases_.wish = kBiasLo;
  } else {
    biases_.wish = calibrate_bias(wish, w_wish, wish_target);
  }

  std::vector<double> w_d(n), w_o(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double p_wish = sigmoid(wish[i] + biases_.wish);
    const double p_a = p_scart[i] + (1.0 - p_scart[i]) * p_wish;
    w_d[i] = p_click[i] * p_a;
    w_o[i] = p_click[i] * (1.0 - p_a);
  }
  biases_.buy_daction = calibrate_bias(buy_d, w_d, config_.target_buy_given_daction);
  biases_.buy_oaction = calibrate_bias(buy_o, w_o, config_.target_buy_given_oaction);
}

BehaviorRecord BehaviorModel::sample_record(std::mt19937_64& rng, std::uint64_t user,
                                            std::uint64_t item) const {
  const auto u = user_latent(user);
  const auto t = item_latent(item);
  const std::size_t d = config_.latent_dim;

  BehaviorRecord r;
  r.user_id = user;
  r.item_id = item;
  r.sparse_ids = {static_cast<std::uint32_t>(mix64(user ^ kUserSalt) % config_.user_buckets),
                  static_cast<std::uint32_t>(mix64(item ^ kItemSalt) % config_.item_buckets),
                  item_category_[item]};

  std::vector<double> z(3 * d);
  for (std::size_t k = 0; k < d; ++k) {
    z[k] = u[k];
    z[d + k] = t[k];
    z[2 * d + k] = u[k] * t[k];
  }
  std::normal_distribution<double> noise(0.0, 1.0);
  r.dense.resize(config_.dense_dim);
  for (std::size_t j = 0; j < config_.dense_dim; ++j) {
    double acc = 0.0;
    for (std::size_t k = 0; k < z.size(); ++k) acc += projection_[j * z.size() + k] * z[k];
    r.dense[j] = acc + config_.feature_noise_sigma * noise(rng);
  }

  const Labels l = sample_labels(rng, edge_logits(u, t), biases_);
  r.c = l.c;
  r.scart = l.scart;
  r.wish = l.wish;
  r.a = l.a;
  r.b = l.b;
  return r;
}

std::uint64_t BehaviorModel::draw_user(std::mt19937_64& rng) const {
  std::uniform_real_distribution<double> unif(0.0, user_cdf_.back());
  const auto it = std::upper_bound(user_cdf_.begin(), user_cdf_.end(), unif(rng));
  return std::min<std::uint64_t>(it - user_cdf_.begin(), user_cdf_.size() - 1);
}

BehaviorRecord BehaviorModel::sample_impression(std::mt19937_64& rng) const {
  std::uniform_int_distribution<std::uint64_t> item_dist(0, config_.num_items - 1);
  const auto user = draw_user(rng);
  const auto item = item_dist(rng);
  return sample_record(rng, user, item);
}

std::vector<std::uint64_t> BehaviorModel::field_vocab_sizes() const {
  return {config_.user_buckets, config_.item_buckets, config_.category_buckets};
}

std::array<std::size_t, 3> split_counts(std::size_t n, const SplitFractions& f) {
  const std::array<double, 3> fr{f.train, f.val, f.test};
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double exact = fr[i] * static_cast<double>(n);
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    rem[i] = exact - std::floor(exact);
    assigned += counts[i];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
  for (std::size_t k = 0; assigned < n; k = (k + 1) % 3, ++assigned) ++counts[order[k]];
  return counts;
}

GeneratedSplits generate_splits(const GeneratorConfig& config) {
  const BehaviorModel world(config);
  const std::size_t n = config.num_impressions;
  const std::size_t shards = config.shards;

  std::vector<std::vector<BehaviorRecord>> parts(shards);
  auto run_shard = [&](std::size_t s) {
    std::seed_seq seq{config.seed, std::uint64_t{s}, std::uint64_t{0x5EED}};
    std::mt19937_64 rng(seq);
    const std::size_t begin = s * n / shards;
    const std::size_t end = (s + 1) * n / shards;
    parts[s].reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) parts[s].push_back(world.sample_impression(rng));
  };
  if (shards == 1) {
    run_shard(0);
  } else {
    std::vector<std::jthread> workers;
    for (std::size_t s = 0; s < shards; ++s) workers.emplace_back(run_shard, s);
  }

  const auto counts = split_counts(n, config.split);
  GeneratedSplits out;
  out.biases = world.biases();
  Dataset* targets[3] = {&out.train, &out.val, &out.test};
  for (Dataset* t : targets) {
    t->field_vocab_sizes = world.field_vocab_sizes();
    t->dense_dim = config.dense_dim;
  }
  std::size_t split_index = 0, filled = 0;
  for (auto& part : parts) {
    for (auto& rec : part) {
      while (filled == counts[split_index]) {
        ++split_index;
        filled = 0;
      }
      targets[split_index]->records.push_back(std::move(rec));
      ++filled;
    }
  }
  return out;
}

std::string dataset_header(std::size_t num_fields, std::size_t dense_dim) {
  std::string h = "user_id\titem_id";
  for (std::size_t f = 0; f < num_fields; ++f) h += "\tsparse_field" + std::to_string(f);
  for (std::size_t j = 0; j < dense_dim; ++j) h += "\tdense" + std::to_string(j);
  h += "\tc\tscart\twish\tb";
  return h;
}

std::string to_text(const GeneratorConfig& c) {
  std::ostringstream os;
  os << "num_users = " << c.num_users << '\n'
     << "num_items = " << c.num_items << '\n'
     << "num_impressions = " << c.num_impressions << '\n'
     << "latent_dim = " << c.latent_dim << '\n'
     << "target_click_rate = " << format_double(c.target_click_rate) << '\n'
     << "target_daction_given_click = " << format_double(c.target_daction_given_click) << '\n'
     << "target_buy_given_daction = " << format_double(c.target_buy_given_daction) << '\n'
     << "target_buy_given_oaction = " << format_double(c.target_buy_given_oaction) << '\n'
     << "scart_share_of_daction = " << format_double(c.scart_share_of_daction) << '\n'
     << "feature_noise_sigma = " << format_double(c.feature_noise_sigma) << '\n'
     << "seed = " << c.seed << '\n'
     << "split = " << format_list(std::vector<double>{c.split.train, c.split.val, c.split.test})
     << '\n'
     << "user_buckets = " << c.user_buckets << '\n'
     << "item_buckets = " << c.item_buckets << '\n'
     << "category_buckets = " << c.category_buckets << '\n'
     << "dense_dim = " << c.dense_dim << '\n'
     << "user_zipf_exponent = " << format_double(c.user_zipf_exponent) << '\n'
     << "shards = " << c.shards << '\n';
  return os.str();
}

namespace {

std::string rates_text(const RateStats& s) {
  std::ostringstream os;
  os << "impressions = " << s.impressions << '\n'
     << "clicks = " << s.clicks << '\n'
     << "dactions = " << s.dactions << '\n'
     << "purchases = " << s.purchases << '\n'
     << "click_rate = " << format_double(s.click_rate()) << '\n'
     << "daction_given_click = " << format_double(s.daction_given_click()) << '\n'
     << "purchase_given_click = " << format_double(s.purchase_given_click()) << '\n'
     << "scart_given_click = " << format_double(s.scart_given_click()) << '\n'
     << "wish_given_click = " << format_double(s.wish_given_click()) << '\n'
     << "purchase_given_daction = " << format_double(s.purchase_given_daction()) << '\n'
     << "purchase_given_oaction = " << format_double(s.purchase_given_oaction()) << '\n';
  return os.str();
}

std::filesystem::path meta_path(const std::filesystem::path& p) {
  auto m = p;
  m += ".meta";
  return m;
}

}  // namespace

void write_dataset(const Dataset& data, const std::filesystem::path& path,
                   const std::string& extra_meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out << dataset_header(data.field_vocab_sizes.size(), data.dense_dim) << '\n';
  std::string line;
  for (const auto& r : data.records) {
    line.clear();
    line += std::to_string(r.user_id);
    line += '\t';
    line += std::to_string(r.item_id);
    for (auto id : r.sparse_ids) {
      line += '\t';
      line += std::to_string(id);
    }
    for (double x : r.dense) {
      line += '\t';
      line += format_double(x);
    }
    for (auto l : {r.c, r.scart, r.wish, r.b}) {
      line += '\t';
      line += static_cast<char>('0' + l);
    }
    line += '\n';
    out << line;
  }
  if (!out) throw Error("write failed for '" + path.string() + "'");

  std::ofstream meta(meta_path(path), std::ios::binary);
  if (!meta) throw Error("cannot open '" + meta_path(path).string() + "' for writing");
  meta << "[dataset]\n"
       << "records = " << data.records.size() << '\n'
       << "field_vocab_sizes = " << format_list(data.field_vocab_sizes) << '\n'
       << "dense_dim = " << data.dense_dim << '\n'
       << "[rates]\n"
       << rates_text(compute_rates(data.records)) << extra_meta;
  if (!meta) throw Error("write failed for '" + meta_path(path).string() + "'");
}

GenerateResult generate_dataset(const GeneratorConfig& config,
                                const std::filesystem::path& out_dir) {
  config.validate();
  std::filesystem::create_directories(out_dir);
  auto splits = generate_splits(config);

  GenerateResult res;
  res.biases = splits.biases;
  res.train_path = out_dir / "train.tsv";
  res.val_path = out_dir / "val.tsv";
  res.test_path = out_dir / "test.tsv";
  res.stats_path = out_dir / "stats.txt";

  const std::string gen_meta = "[generator]\n" + to_text(config);
  write_dataset(splits.train, res.train_path, gen_meta);
  write_dataset(splits.val, res.val_path, gen_meta);
  write_dataset(splits.test, res.test_path, gen_meta);

  RateStats overall;
  for (const Dataset* d : {&splits.train, &splits.val, &splits.test}) {
    const auto s = compute_rates(d->records);
    overall.impressions += s.impressions;
    overall.clicks += s.clicks;
    overall.scarts += s.scarts;
    overall.wishes += s.wishes;
    overall.dactions += s.dactions;
    overall.purchases += s.purchases;
    overall.purchases_after_daction += s.purchases_after_daction;
  }
  res.overall = overall;

  const double target_buy =
      config.target_daction_given_click * config.target_buy_given_daction +
      (1.0 - config.target_daction_given_click) * config.target_buy_given_oaction;
  std::ofstream stats(res.stats_path, std::ios::binary);
  if (!stats) throw Error("cannot open '" + res.stats_path.string() + "' for writing");
  stats << "[rates]\n"
        << rates_text(overall) << "[targets]\n"
        << "click_rate = " << format_double(config.target_click_rate) << '\n'
        << "daction_given_click = " << format_double(config.target_daction_given_click) << '\n'
        << "purchase_given_click = " << format_double(target_buy) << '\n'
        << "purchase_given_daction = " << format_double(config.target_buy_given_daction) << '\n'
        << "purchase_given_oaction = " << format_double(config.target_buy_given_oaction) << '\n'
        << "[biases]\n"
        << "click = " << format_double(res.biases.click) << '\n'
        << "scart = " << format_double(res.biases.scart) << '\n'
        << "wish = " << format_double(res.biases.wish) << '\n'
        << "buy_daction = " << format_double(res.biases.buy_daction) << '\n'
        << "buy_oaction = " << format_double(res.biases.buy_oaction) << '\n'
        << gen_meta;
  return res;
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset '" + path.string() + "'", 0);

  std::string line;
  if (!std::getline(in, line) || trim(line).empty()) {
    throw DataError("empty dataset '" + path.string() + "'", 0);
  }
  if (!line.empty() && line.back() == '\r') line.pop_back();

  // Layout from the header.
  const auto cols = split(line, '\t');
  std::size_t num_fields = 0, dense_dim = 0;
  for (auto c : cols) {
    if (c.starts_with("sparse_field")) ++num_fields;
    if (c.starts_with("dense")) ++dense_dim;
  }
  if (line != dataset_header(num_fields, dense_dim)) {
    throw DataError("malformed header", 1);
  }

  Dataset data;
  data.dense_dim = dense_dim;
  const auto meta = meta_path(path);
  bool have_vocab = false;
  if (std::filesystem::exists(meta)) {
    std::ifstream m(meta);
    std::string ml, section;
    while (std::getline(m, ml)) {
      const auto t = trim(ml);
      if (t.empty() || t.front() == '#') continue;
      if (t.front() == '[') {
        section = std::string(t);
        continue;
      }
      if (section != "[dataset]") continue;
      const auto eq = t.find('=');
      if (eq == std::string_view::npos) continue;
      const auto key = trim(t.substr(0, eq));
      const auto val = trim(t.substr(eq + 1));
      if (key == "field_vocab_sizes") {
        data.field_vocab_sizes = parse_uint_list(val);
        have_vocab = true;
      } else if (key == "dense_dim" && parse_uint(val) != dense_dim) {
        throw DataError("sidecar dense_dim disagrees with header", 0);
      }
    }
    if (have_vocab && data.field_vocab_sizes.size() != num_fields) {
      throw DataError("sidecar vocab sizes disagree with header field count", 0);
    }
  }

  const std::size_t expected_cols = 2 + num_fields + dense_dim + 4;
  std::vector<std::uint64_t> max_bucket(num_fields, 0);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tok = split(line, '\t');
    if (tok.size() != expected_cols) {
      throw DataError("expected " + std::to_string(expected_cols) + " columns, found " +
                          std::to_string(tok.size()),
                      lineno);
    }
    BehaviorRecord r;
    try {
      std::size_t k = 0;
      r.user_id = parse_uint(tok[k++]);
      r.item_id = parse_uint(tok[k++]);
      r.sparse_ids.resize(num_fields);
      for (std::size_t f = 0; f < num_fields; ++f) {
        const auto id = parse_uint(tok[k++]);
        if (have_vocab && id >= data.field_vocab_sizes[f]) {
          throw DataError("bucket " + std::to_string(id) + " out of range for field " +
                              std::to_string(f),
                          lineno);
        }
        if (id > UINT32_MAX) throw DataError("bucket id too large", lineno);
        r.sparse_ids[f] = static_cast<std::uint32_t>(id);
        max_bucket[f] = std::max<std::uint64_t>(max_bucket[f], id);
      }
      r.dense.resize(dense_dim);
      for (std::size_t j = 0; j < dense_dim; ++j) {
        r.dense[j] = parse_double(tok[k++]);
        if (!std::isfinite(r.dense[j])) throw DataError("non-finite dense value", lineno);
      }
      std::uint8_t* labels[] = {&r.c, &r.scart, &r.wish, &r.b};
      for (auto* l : labels) {
        const auto v = parse_uint(tok[k++]);
        if (v > 1) throw DataError("labels must be 0 or 1", lineno);
        *l = static_cast<std::uint8_t>(v);
      }
    } catch (const DataError&) {
      throw;
    } catch (const ValidationError& e) {
      throw DataError(e.what(), lineno);
    }
    r.a = r.scart | r.wish;
    validate_labels(r, lineno);
    data.records.push_back(std::move(r));
  }
  if (data.records.empty()) throw DataError("empty dataset '" + path.string() + "'", 0);
  if (!have_vocab) {
    data.field_vocab_sizes.resize(num_fields);
    for (std::size_t f = 0; f < num_fields; ++f) data.field_vocab_sizes[f] = max_bucket[f] + 1;
  }
  return data;
}

}  // namespace esm2
