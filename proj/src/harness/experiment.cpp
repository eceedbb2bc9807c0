#include "keep/harness/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <limits>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_map>

#include <json.hpp>

#include "keep/binary.hpp"
#include "keep/error.hpp"
#include "keep/extractor/pretrain.hpp"
#include "keep/gkc/net.hpp"
#include "keep/gkc/store.hpp"
#include "keep/harness/online.hpp"
#include "keep/plug/knowledge.hpp"
#include "keep/serving/snapshot.hpp"
#include "keep/serving/two_tower.hpp"

namespace keep::harness {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

std::uint64_t mix(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed * 0x9E3779B97F4A7C15ULL + salt;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

const std::set<std::string>& known_modes() {
  static const std::set<std::string> m = {"base",           "sample_merging",  "keep",
                                          "keep_c",         "keep_decomposed", "keep_degenerated",
                                          "keep_decomp_degen"};
  return m;
}

plug::KnowledgeMask parse_knowledge_mask(const std::string& text) {
  return plug::KnowledgeMask::parse(text);
}

std::array<bool, extractor::kNumTasks> parse_task_set(const std::string& text) {
  std::array<bool, extractor::kNumTasks> tasks{};
  for (const auto& part : split(text, '+')) {
    try {
      tasks[static_cast<std::size_t>(extractor::parse_task(part))] = true;
    } catch (const InvalidArgument&) {
      throw ConfigError("task ablation '" + text + "': unknown task '" + part + "'");
    }
  }
  if (!tasks[0]) throw ConfigError("task ablation '" + text + "' must include click");
  return tasks;
}

std::vector<std::uint64_t> parse_seeds(const std::vector<std::string>& items) {
  std::vector<std::uint64_t> out;
  for (const auto& s : items) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoull(s, &used));
      if (used != s.size()) throw std::invalid_argument(s);
    } catch (const std::exception&) {
      throw ConfigError("seed '" + s + "' is not an unsigned integer");
    }
  }
  return out;
}

std::string join(const std::vector<std::string>& v, const char* sep) {
  std::string out;
  for (std::size_t k = 0; k < v.size(); ++k) {
    if (k) out += sep;
    out += v[k];
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

data::GeneratorConfig parse_generator(const KeyValues& kv, const std::string& prefix) {
  data::GeneratorConfig g;
  g.n_users = kv.get_uint(prefix + "n_users", g.n_users);
  g.n_items = kv.get_uint(prefix + "n_items", g.n_items);
  g.n_categories = kv.get_uint(prefix + "n_categories", g.n_categories);
  g.n_shops = kv.get_uint(prefix + "n_shops", g.n_shops);
  g.n_days = static_cast<std::int32_t>(kv.get_int(prefix + "n_days", g.n_days));
  g.super_impressions_per_user_day = kv.get_double(prefix + "super_rate", g.super_impressions_per_user_day);
  g.sub_impressions_per_user_day = kv.get_double(prefix + "sub_rate", g.sub_impressions_per_user_day);
  g.activity_sigma = kv.get_double(prefix + "activity_sigma", g.activity_sigma);
  g.latent_dim = kv.get_uint(prefix + "latent_dim", g.latent_dim);
  g.preference_scale = kv.get_double(prefix + "preference_scale", g.preference_scale);
  g.item_noise = kv.get_double(prefix + "item_noise", g.item_noise);
  g.category_bias_std = kv.get_double(prefix + "category_bias_std", g.category_bias_std);
  g.drift_rate = kv.get_double(prefix + "drift_rate", g.drift_rate);
  g.sub_domain_shift = kv.get_double(prefix + "sub_domain_shift", g.sub_domain_shift);
  g.sub_item_fraction = kv.get_double(prefix + "sub_item_fraction", g.sub_item_fraction);
  g.base_click_rate = kv.get_double(prefix + "click_rate", g.base_click_rate);
  g.conversion_given_click = kv.get_double(prefix + "conversion_given_click", g.conversion_given_click);
  g.cart_given_click = kv.get_double(prefix + "cart_given_click", g.cart_given_click);
  g.max_behaviors = kv.get_uint(prefix + "max_behaviors", g.max_behaviors);
  g.max_session_length = kv.get_uint(prefix + "max_session_length", g.max_session_length);
  g.seed = kv.get_uint(prefix + "seed", g.seed);
  return g;
}

ExperimentConfig ExperimentConfig::from_kv(const KeyValues& kv) {
  ExperimentConfig c;
  c.super_log_path = kv.get_string("super_log", "");
  c.sub_log_path = kv.get_string("sub_log", "");

  c.generator = parse_generator(kv, "gen.");

  if (kv.has("pretrain_days")) c.pretrain_days = data::DayRange::parse(kv.get_string("pretrain_days", ""));
  if (kv.has("train_days")) c.train_days = data::DayRange::parse(kv.get_string("train_days", ""));
  c.test_day = static_cast<std::int32_t>(kv.get_int("test_day", c.test_day));
  if (kv.has("seeds")) c.seeds = parse_seeds(kv.get_list("seeds", {}));

  c.modes = kv.get_list("modes", c.modes);
  c.knowledge_ablations = kv.get_list("knowledge_ablations", c.knowledge_ablations);
  c.task_ablations = kv.get_list("task_ablations", c.task_ablations);

  auto& e = c.extractor;
  e.user_dim = kv.get_uint("extractor.user_dim", e.user_dim);
  e.feature_dim = kv.get_uint("extractor.feature_dim", e.feature_dim);
  e.attention_hidden = kv.get_uint("extractor.attention_hidden", e.attention_hidden);
  e.head_dims = kv.get_sizes("extractor.head_dims", e.head_dims);
  c.pretrain_batch = kv.get_uint("pretrain_batch", c.pretrain_batch);
  c.alpha = kv.get_double("alpha", c.alpha);
  c.triplet_cap = kv.get_uint("triplet_cap", c.triplet_cap);
  c.extractor_lr = kv.get_double("extractor_lr", c.extractor_lr);

  auto& d = c.downstream;
  d.feature_dim = kv.get_uint("downstream.feature_dim", d.feature_dim);
  d.attention_hidden = kv.get_uint("downstream.attention_hidden", d.attention_hidden);
  d.mlp_dims = kv.get_sizes("downstream.mlp_dims", d.mlp_dims);
  d.plug_layer = kv.get_uint("downstream.plug_layer", d.plug_layer);
  c.downstream_batch = kv.get_uint("downstream_batch", c.downstream_batch);
  c.downstream_lr = kv.get_double("downstream_lr", c.downstream_lr);

  c.two_tower_hidden = kv.get_uint("two_tower.hidden", c.two_tower_hidden);
  c.two_tower_dim = kv.get_uint("two_tower.dim", c.two_tower_dim);
  c.two_tower_batch = kv.get_uint("two_tower_batch", c.two_tower_batch);

  c.max_behaviors = kv.get_uint("max_behaviors", c.max_behaviors);
  c.knowledge = kv.get_string("knowledge", c.knowledge);
  c.snapshot_dir = kv.get_string("snapshot_dir", c.snapshot_dir);
  c.version_base = static_cast<std::uint32_t>(kv.get_uint("version_base", c.version_base));
  c.report_dir = kv.get_string("report_dir", c.report_dir);
  c.threads = kv.get_uint("threads", c.threads);
  c.checks = kv.get_bool("checks", c.checks);
  c.min_keep_gain = kv.get_double("min_keep_gain", c.min_keep_gain);
  c.max_runtime_seconds = kv.get_double("max_runtime_seconds", c.max_runtime_seconds);

  const auto unused = kv.unused_keys();
  if (!unused.empty()) throw ConfigError("unknown experiment config keys: " + join(unused, ", "));
  c.validate();
  return c;
}

void ExperimentConfig::validate() const {
  if (super_log_path.empty() != sub_log_path.empty()) {
    throw ConfigError("super_log and sub_log must be given together");
  }
  if (super_log_path.empty()) generator.validate();
  if (pretrain_days.first > pretrain_days.last || train_days.first > train_days.last) {
    throw ConfigError("day windows must be non-empty");
  }
  if (test_day <= train_days.last) {
    throw ConfigError("test day " + std::to_string(test_day) + " must come after the train window");
  }
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ConfigError("seeds must be distinct");
  }
  if (modes.empty() && knowledge_ablations.empty() && task_ablations.empty()) {
    throw ConfigError("nothing to run");
  }
  for (const auto& m : modes) {
    if (!known_modes().count(m)) throw ConfigError("unknown mode '" + m + "'");
  }
  for (const auto& a : knowledge_ablations) parse_knowledge_mask(a);
  for (const auto& a : task_ablations) parse_task_set(a);
  if (pretrain_batch == 0 || downstream_batch == 0 || two_tower_batch == 0) {
    throw ConfigError("batch sizes must be > 0");
  }
  if (threads == 0) throw ConfigError("threads must be > 0");
  downstream.resolved_plug_layer();
  if (knowledge != "local") {
    gkc::parse_endpoint(knowledge);
    if (snapshot_dir.empty()) throw ConfigError("a remote knowledge service needs snapshot_dir");
  }
}

std::vector<std::string> ExperimentConfig::arms() const {
  std::vector<std::string> out;
  auto has = [&](const char* m) { return std::find(modes.begin(), modes.end(), m) != modes.end(); };
  for (const char* m : {"base", "sample_merging", "keep_c", "keep"}) {
    if (has(m)) out.push_back(m);
  }
  for (const auto& a : knowledge_ablations) out.push_back("keep[" + a + "]");
  for (const auto& a : task_ablations) out.push_back("keep{" + a + "}");
  for (const char* m : {"keep_decomposed", "keep_degenerated", "keep_decomp_degen"}) {
    if (has(m)) out.push_back(m);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Results

std::size_t ArmResult::ok_runs() const {
  return static_cast<std::size_t>(std::count_if(
      runs.begin(), runs.end(), [](const auto& r) { return r.ok && !r.report.empty; }));
}

double ArmResult::mean() const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : runs) {
    if (r.ok && !r.report.empty) {
      sum += r.report.gauc;
      ++n;
    }
  }
  return n ? sum / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

double ArmResult::stddev() const {
  const double m = mean();
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : runs) {
    if (r.ok && !r.report.empty) {
      sum += (r.report.gauc - m) * (r.report.gauc - m);
      ++n;
    }
  }
  if (n == 0) return std::numeric_limits<double>::quiet_NaN();
  return n > 1 ? std::sqrt(sum / static_cast<double>(n - 1)) : 0.0;
}

double ArmResult::group_mean(std::size_t g) const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : runs) {
    if (r.ok && !r.report.groups[g].empty) {
      sum += r.report.groups[g].gauc;
      ++n;
    }
  }
  return n ? sum / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

const ArmResult* ExperimentResult::find(const std::string& name) const {
  for (const auto& a : arms) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

bool ExperimentResult::all_checks_passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passed; });
}

// ---------------------------------------------------------------------------
// Running

namespace {

struct Dataset {
  std::vector<data::ImpressionRecord> super_log;
  std::vector<data::ImpressionRecord> sub_log;
  data::Catalog catalog;
  plug::UserProfiles profiles;
  std::size_t n_users = 0, n_items = 0, n_shops = 0, n_categories = 0;
  std::vector<std::size_t> test_rows;  // sub_log indices of the test day
  std::vector<const data::ImpressionRecord*> test;
  std::unordered_map<std::uint64_t, std::uint64_t> user_clicks;  // super clicks before the test day
};

Dataset load_dataset(const ExperimentConfig& c) {
  Dataset d;
  if (!c.super_log_path.empty()) {
    d.super_log = data::read_log_file(c.super_log_path);
    d.sub_log = data::read_log_file(c.sub_log_path);
    for (const auto* log : {&d.super_log, &d.sub_log}) {
      for (const auto& r : *log) {
        d.n_users = std::max<std::size_t>(d.n_users, r.user_id + 1);
        d.n_items = std::max<std::size_t>(d.n_items, r.item_id + 1);
        d.n_shops = std::max<std::size_t>(d.n_shops, r.shop_id + 1);
        d.n_categories = std::max<std::size_t>(d.n_categories, r.category_id + 1);
      }
    }
  } else {
    auto logs = data::generate(c.generator);
    d.super_log = std::move(logs.super_log);
    d.sub_log = std::move(logs.sub_log);
    d.n_users = c.generator.n_users;
    d.n_items = c.generator.n_items;
    d.n_shops = c.generator.n_shops;
    d.n_categories = c.generator.n_categories;
  }
  d.catalog.add_all(d.super_log);
  d.catalog.add_all(d.sub_log);
  d.profiles = plug::UserProfiles(d.super_log, c.max_behaviors);
  for (std::size_t k = 0; k < d.sub_log.size(); ++k) {
    if (d.sub_log[k].day == c.test_day) {
      d.test_rows.push_back(k);
      d.test.push_back(&d.sub_log[k]);
    }
  }
  if (d.test.empty()) throw ConfigError("sub log has no records on test day " + std::to_string(c.test_day));
  for (const auto& r : d.super_log) {
    if (r.day < c.test_day && r.click) ++d.user_clicks[r.user_id];
  }
  return d;
}

// Where the serving arms publish snapshots and look knowledge up.
class ServingBackend {
 public:
  explicit ServingBackend(const ExperimentConfig& c) : config_(c), next_version_(c.version_base) {
    if (c.knowledge != "local") {
      const auto [host, port] = gkc::parse_endpoint(c.knowledge);
      host_ = host;
      port_ = port;
      std::filesystem::create_directories(c.snapshot_dir);
    }
  }

  // Publishes `snap` under a fresh version, then runs `use` with a service
  // that holds it. Remote publishes are serialized so the version stays
  // retained while it is read.
  template <class F>
  void with_snapshot(serving::KnowledgeSnapshot snap, gkc::VersionStore& local, F&& use) {
    if (host_.empty()) {
      // Per-seed stores: versions only need to rise within one seed.
      snap.version = local_version_for(local);
      if (!config_.snapshot_dir.empty()) {
        std::filesystem::create_directories(config_.snapshot_dir);
        serving::save_snapshot(snapshot_path(snap.version), snap);
      }
      const auto v = local.publish(std::move(snap));
      use(static_cast<gkc::KnowledgeService&>(local), v);
      return;
    }
    std::lock_guard lock(remote_mu_);
    snap.version = next_version_++;
    const auto path = snapshot_path(snap.version);
    serving::save_snapshot(path, snap);
    gkc::Client client(host_, port_);
    const auto v = client.publish(snap.version, std::filesystem::absolute(path).string());
    use(static_cast<gkc::KnowledgeService&>(client), v);
  }

 private:
  std::uint32_t local_version_for(const gkc::VersionStore& store) {
    const auto vs = store.versions();
    return vs.empty() ? config_.version_base : vs.back() + 1;
  }
  std::string snapshot_path(std::uint32_t v) const {
    return (std::filesystem::path(config_.snapshot_dir) / ("v" + std::to_string(v) + ".ksnp")).string();
  }

  const ExperimentConfig& config_;
  std::string host_;
  std::uint16_t port_ = 0;
  std::mutex remote_mu_;
  std::uint32_t next_version_;
};

class SeedRun {
 public:
  SeedRun(const ExperimentConfig& c, const Dataset& d, ServingBackend& backend, std::uint64_t seed,
          std::ostream* progress, std::mutex& progress_mu)
      : c_(c), d_(d), backend_(backend), seed_(seed), progress_(progress), progress_mu_(progress_mu) {
    for (std::size_t k = 0; k < d.sub_log.size(); ++k) {
      const auto day = d.sub_log[k].day;
      if (c.train_days.contains(day) || day == c.test_day) {
        used_rows_.push_back(k);
        used_.push_back(&d.sub_log[k]);
      }
    }
  }

  ArmSeedResult run(const std::string& arm) {
    ArmSeedResult r;
    r.seed = seed_;
    const auto t0 = Clock::now();
    try {
      r.report = run_arm(arm);
      r.ok = true;
    } catch (const std::exception& e) {
      r.error = e.what();
    }
    r.seconds = seconds_since(t0);
    say(arm + (r.ok ? " gauc " + fixed(r.report.gauc, 4) : " FAILED: " + r.error) + " (" +
        fixed(r.seconds, 1) + "s)");
    return r;
  }

  std::vector<std::string> notes;

 private:
  static std::string fixed(double v, int digits) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(digits) << v;
    return s.str();
  }

  void say(const std::string& msg) {
    if (progress_ == nullptr) return;
    std::lock_guard lock(progress_mu_);
    *progress_ << "[seed " << seed_ << "] " << msg << std::endl;
  }

  extractor::ExtractorConfig extractor_config(extractor::Variant v, std::uint64_t salt) const {
    auto e = c_.extractor;
    e.variant = v;
    e.n_users = d_.n_users;
    e.n_items = d_.n_items;
    e.n_shops = d_.n_shops;
    e.n_categories = d_.n_categories;
    e.seed = mix(seed_, salt);
    return e;
  }

  extractor::PretrainConfig pretrain_config(std::array<bool, extractor::kNumTasks> tasks,
                                            std::uint64_t salt) const {
    extractor::PretrainConfig p;
    p.alpha = c_.alpha;
    p.batch_size = c_.pretrain_batch;
    p.lr = c_.extractor_lr;
    p.triplet_cap = c_.triplet_cap;
    p.tasks = tasks;
    p.seed = mix(seed_, salt);
    return p;
  }

  using ExtractorPtr = std::shared_ptr<extractor::ExtractorModel<float>>;

  ExtractorPtr pretrained(extractor::Variant v, std::array<bool, extractor::kNumTasks> tasks) {
    const auto key = std::make_pair(v == extractor::Variant::kFull ? 0 : 1,
                                    (tasks[0] ? 1 : 0) | (tasks[1] ? 2 : 0) | (tasks[2] ? 4 : 0));
    if (auto it = extractors_.find(key); it != extractors_.end()) return it->second;
    const auto t0 = Clock::now();
    auto m = std::make_shared<extractor::ExtractorModel<float>>(extractor_config(v, 11));
    nn::Adam adam({c_.extractor_lr});
    const auto prog = extractor::pretrain(*m, adam, d_.super_log, c_.pretrain_days,
                                          pretrain_config(tasks, 12), &d_.catalog);
    std::string task_text;
    for (std::size_t t = 0; t < extractor::kNumTasks; ++t) {
      if (!tasks[t]) continue;
      if (!task_text.empty()) task_text += "+";
      task_text += extractor::task_name(static_cast<extractor::Task>(t));
    }
    const std::string note = std::string(v == extractor::Variant::kFull ? "full" : "degenerated") +
                             " extractor {" + task_text + "}: " + std::to_string(prog.steps) +
                             " steps, loss " + fixed(prog.first_mean_loss, 4) + " -> " +
                             fixed(prog.last_mean_loss, 4) + " (" + fixed(seconds_since(t0), 1) + "s)";
    say(note);
    notes.push_back("seed " + std::to_string(seed_) + ": " + note);
    extractors_[key] = m;
    return m;
  }

  static constexpr std::array<bool, extractor::kNumTasks> kAll = {true, true, true};

  // Knowledge rows for every used sub record, from a frozen extractor.
  const nn::Matrix& full_knowledge(std::array<bool, extractor::kNumTasks> tasks) {
    const int key = (tasks[0] ? 1 : 0) | (tasks[1] ? 2 : 0) | (tasks[2] ? 4 : 0);
    if (auto it = knowledge_.find(key); it != knowledge_.end()) return it->second;
    auto m = pretrained(extractor::Variant::kFull, tasks);
    plug::KnowledgeMask mask;
    mask.tasks = tasks;
    plug::ExtractorKnowledge src(*m, d_.profiles, mask, &d_.catalog);
    nn::Matrix k;
    src.fill(used_, k);
    return knowledge_[key] = expand(k);
  }

  // Rows of `compact` (aligned with used_) scattered to sub_log positions.
  nn::Matrix expand(const nn::Matrix& compact) const {
    nn::Matrix out(d_.sub_log.size(), compact.cols());
    for (std::size_t k = 0; k < used_rows_.size(); ++k) {
      auto src = compact.row(k);
      std::copy(src.begin(), src.end(), out.row(used_rows_[k]).begin());
    }
    return out;
  }

  std::shared_ptr<serving::TwoTower<float>> two_tower() {
    if (two_tower_) return two_tower_;
    const auto t0 = Clock::now();
    serving::TwoTowerConfig tc;
    tc.n_users = d_.n_users;
    tc.n_items = d_.n_items;
    tc.n_shops = d_.n_shops;
    tc.n_categories = d_.n_categories;
    tc.user_dim = c_.extractor.user_dim;
    tc.feature_dim = c_.extractor.feature_dim;
    tc.hidden = c_.two_tower_hidden;
    tc.tower_dim = c_.two_tower_dim;
    tc.seed = mix(seed_, 21);
    two_tower_ = std::make_shared<serving::TwoTower<float>>(tc);
    nn::Adam adam({c_.extractor_lr});
    const auto prog = serving::train_two_tower(*two_tower_, adam, d_.super_log, c_.pretrain_days,
                                               c_.two_tower_batch, mix(seed_, 22));
    const std::string note = "two-tower: " + std::to_string(prog.steps) + " steps, loss " +
                             fixed(prog.first_mean_loss, 4) + " -> " + fixed(prog.last_mean_loss, 4) +
                             " (" + fixed(seconds_since(t0), 1) + "s)";
    say(note);
    notes.push_back("seed " + std::to_string(seed_) + ": " + note);
    return two_tower_;
  }

  serving::SnapshotInputs snapshot_inputs(std::int32_t day) const {
    serving::SnapshotInputs in;
    std::set<std::uint64_t> users, items;
    std::set<serving::UcKey> ucs;
    for (const auto* r : used_) {
      if (r->day != day) continue;
      users.insert(r->user_id);
      items.insert(r->item_id);
      ucs.insert({r->user_id, r->category_id});
    }
    for (auto u : users) {
      in.users.push_back(u);
      in.user_behaviors.push_back(d_.profiles.before(u, day));
    }
    for (auto i : items) {
      const auto* info = d_.catalog.find(i);
      in.items.push_back(i);
      in.item_shops.push_back(info->shop_id);
      in.item_categories.push_back(info->category_id);
    }
    in.uc_pairs.assign(ucs.begin(), ucs.end());
    return in;
  }

  // Composed knowledge looked up from per-day snapshots: day d is served
  // from the snapshot built with profiles as of the end of day d - 1.
  const nn::Matrix& served_knowledge(gkc::ServingSlots slots, bool degenerated) {
    const int key = (slots.user ? 1 : 0) | (slots.item ? 2 : 0) | (slots.product ? 4 : 0) |
                    (slots.uc ? 8 : 0) | (degenerated ? 16 : 0);
    if (auto it = served_.find(key); it != served_.end()) return it->second;
    auto tt = two_tower();
    ExtractorPtr degen;
    if (degenerated) degen = pretrained(extractor::Variant::kDegenerated, kAll);
    const std::size_t d_uc = degen ? degen->interaction_dim() * extractor::kNumTasks : 0;

    std::vector<std::int32_t> days;
    for (auto day = c_.train_days.first; day <= c_.train_days.last; ++day) days.push_back(day);
    days.push_back(c_.test_day);

    nn::Matrix out;
    std::size_t misses = 0;
    for (auto day : days) {
      std::vector<std::size_t> rows;
      std::vector<const data::ImpressionRecord*> recs;
      for (std::size_t k = 0; k < used_.size(); ++k) {
        if (used_[k]->day == day) {
          rows.push_back(used_rows_[k]);
          recs.push_back(used_[k]);
        }
      }
      auto snap = serving::build_snapshot(*tt, degen.get(), &d_.catalog, snapshot_inputs(day), 0,
                                          static_cast<std::uint64_t>(day));
      backend_.with_snapshot(std::move(snap), store_, [&](gkc::KnowledgeService& svc, std::uint32_t v) {
        gkc::ServiceKnowledge src(svc, v, tt->dim(), d_uc, slots);
        nn::Matrix k;
        misses += src.fill(recs, k);
        if (out.rows() == 0) out.reset(d_.sub_log.size(), k.cols());
        for (std::size_t j = 0; j < rows.size(); ++j) {
          auto s = k.row(j);
          std::copy(s.begin(), s.end(), out.row(rows[j]).begin());
        }
      });
    }
    if (misses > 0) say("served knowledge: " + std::to_string(misses) + " lookups with misses");
    return served_[key] = std::move(out);
  }

  nn::Matrix keep_c_knowledge() {
    const auto t0 = Clock::now();
    extractor::ExtractorModel<float> m(extractor_config(extractor::Variant::kFull, 31));
    nn::Adam adam({c_.extractor_lr});
    nn::Matrix out;
    auto fill_day = [&](std::int32_t day) {
      std::vector<std::size_t> rows;
      std::vector<const data::ImpressionRecord*> recs;
      for (std::size_t k = 0; k < used_.size(); ++k) {
        if (used_[k]->day == day) {
          rows.push_back(used_rows_[k]);
          recs.push_back(used_[k]);
        }
      }
      plug::ExtractorKnowledge src(m, d_.profiles, {}, &d_.catalog);
      nn::Matrix k;
      src.fill(recs, k);
      if (out.rows() == 0) out.reset(d_.sub_log.size(), k.cols());
      for (std::size_t j = 0; j < rows.size(); ++j) {
        auto s = k.row(j);
        std::copy(s.begin(), s.end(), out.row(rows[j]).begin());
      }
    };
    // The extractor learns from each day's super-domain data alongside the
    // downstream model; no earlier pre-training.
    for (auto day = c_.train_days.first; day <= c_.train_days.last; ++day) {
      extractor::pretrain(m, adam, d_.super_log, {day, day},
                          pretrain_config(kAll, 32 + static_cast<std::uint64_t>(day)), &d_.catalog);
      fill_day(day);
    }
    fill_day(c_.test_day);
    say("keep_c extractor trained on super days " + std::to_string(c_.train_days.first) + "-" +
        std::to_string(c_.train_days.last) + " (" + fixed(seconds_since(t0), 1) + "s)");
    return out;
  }

  OnlineConfig online_config(std::size_t knowledge_dim) const {
    OnlineConfig oc;
    oc.model = c_.downstream;
    oc.model.n_items = d_.n_items;
    oc.model.n_shops = d_.n_shops;
    oc.model.n_categories = d_.n_categories;
    oc.model.seed = mix(seed_, 41);
    oc.knowledge_dim = knowledge_dim;
    oc.adam.lr = c_.downstream_lr;
    oc.batch_size = c_.downstream_batch;
    oc.seed = mix(seed_, 42);
    oc.train_days = c_.train_days;
    return oc;
  }

  GaucReport evaluate(const OnlineConfig& oc, const std::string& checkpoint, const nn::Matrix* k) {
    nn::Matrix kt;
    if (k != nullptr) {
      kt.reset(d_.test_rows.size(), k->cols());
      for (std::size_t j = 0; j < d_.test_rows.size(); ++j) {
        auto s = k->row(d_.test_rows[j]);
        std::copy(s.begin(), s.end(), kt.row(j).begin());
      }
    }
    const auto scores = score_records(oc, checkpoint, d_.test, k ? &kt : nullptr);
    const auto rows = to_scored(d_.test, scores);
    return gauc(rows, [&](std::uint64_t u) {
      auto it = d_.user_clicks.find(u);
      return it == d_.user_clicks.end() ? std::uint64_t{0} : it->second;
    });
  }

  GaucReport train_and_evaluate(const nn::Matrix* k) {
    const auto oc = online_config(k ? k->cols() : 0);
    const auto res = run_online_loop(oc, d_.sub_log, [k](std::int32_t) { return k; });
    return evaluate(oc, res.checkpoint, k);
  }

  GaucReport run_arm(const std::string& arm) {
    if (arm == "base") return train_and_evaluate(nullptr);
    if (arm == "keep") return train_and_evaluate(&full_knowledge(kAll));
    if (arm == "sample_merging") {
      // Same pipeline as base; the training days also carry super records.
      std::vector<data::ImpressionRecord> merged = d_.sub_log;
      for (const auto& r : d_.super_log) {
        if (c_.train_days.contains(r.day)) merged.push_back(r);
      }
      const auto oc = online_config(0);
      const auto res = run_online_loop(oc, merged, [](std::int32_t) { return nullptr; });
      return evaluate(oc, res.checkpoint, nullptr);
    }
    if (arm == "keep_c") {
      const auto k = keep_c_knowledge();
      return train_and_evaluate(&k);
    }
    if (arm.rfind("keep[", 0) == 0) {
      const auto mask = parse_knowledge_mask(arm.substr(5, arm.size() - 6));
      const auto model = pretrained(extractor::Variant::kFull, kAll);
      const auto cols = mask.columns(model->config().user_dim, model->item_knowledge_dim(),
                                     model->interaction_dim());
      const auto k = plug::select_columns(full_knowledge(kAll), cols);
      return train_and_evaluate(&k);
    }
    if (arm.rfind("keep{", 0) == 0) {
      const auto tasks = parse_task_set(arm.substr(5, arm.size() - 6));
      return train_and_evaluate(&full_knowledge(tasks));
    }
    if (arm == "keep_decomposed") {
      return train_and_evaluate(&served_knowledge({true, true, true, false}, false));
    }
    if (arm == "keep_decomp_degen") {
      return train_and_evaluate(&served_knowledge({true, true, true, true}, true));
    }
    if (arm == "keep_degenerated") {
      // K_u and K_i from the full extractor, K̂_uc served per (user, category).
      const auto model = pretrained(extractor::Variant::kFull, kAll);
      plug::KnowledgeMask ui;
      ui.interaction = false;
      const auto left = plug::select_columns(
          full_knowledge(kAll),
          ui.columns(model->config().user_dim, model->item_knowledge_dim(), model->interaction_dim()));
      const auto& right = served_knowledge({false, false, false, true}, true);
      nn::Matrix k(left.rows(), left.cols() + right.cols());
      nn::set_columns(k, 0, left);
      nn::set_columns(k, left.cols(), right);
      return train_and_evaluate(&k);
    }
    throw ConfigError("unknown arm '" + arm + "'");
  }

  const ExperimentConfig& c_;
  const Dataset& d_;
  ServingBackend& backend_;
  std::uint64_t seed_;
  std::ostream* progress_;
  std::mutex& progress_mu_;
  std::vector<std::size_t> used_rows_;
  std::vector<const data::ImpressionRecord*> used_;
  std::map<std::pair<int, int>, ExtractorPtr> extractors_;
  std::map<int, nn::Matrix> knowledge_;
  std::map<int, nn::Matrix> served_;
  std::shared_ptr<serving::TwoTower<float>> two_tower_;
  gkc::VersionStore store_{5};
};

void add_check(ExperimentResult& res, std::string name, bool passed, std::string detail) {
  res.checks.push_back({std::move(name), passed, std::move(detail)});
}

std::string fmt(double v, int digits = 4) {
  if (std::isnan(v)) return "n/a";
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

std::string signed_fmt(double v, int digits = 4) {
  if (std::isnan(v)) return "n/a";
  std::ostringstream s;
  s << std::showpos << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

void run_checks(const ExperimentConfig& c, ExperimentResult& res) {
  auto mean_of = [&](const std::string& name) {
    const auto* a = res.find(name);
    return a ? a->mean() : std::numeric_limits<double>::quiet_NaN();
  };
  auto present = [&](const std::string& name) { return res.find(name) != nullptr; };

  std::size_t failed = 0;
  for (const auto& a : res.arms) {
    for (const auto& r : a.runs) failed += r.ok ? 0 : 1;
  }
  add_check(res, "all_runs_succeeded", failed == 0, std::to_string(failed) + " failed runs");

  if (present("base") && present("keep")) {
    const double gain = mean_of("keep") - mean_of("base");
    add_check(res, "keep_gain", gain >= c.min_keep_gain,
              "keep - base = " + signed_fmt(gain) + " (need >= " + fmt(c.min_keep_gain) + ")");
  }
  if (present("sample_merging") && present("keep")) {
    add_check(res, "keep_beats_sample_merging", mean_of("keep") > mean_of("sample_merging"),
              "keep " + fmt(mean_of("keep")) + " vs sample_merging " + fmt(mean_of("sample_merging")));
  }
  if (present("base") && present("keep") && present("keep[u]") && present("keep[u+i]")) {
    const double b = mean_of("base"), u = mean_of("keep[u]"), ui = mean_of("keep[u+i]"),
                 all = mean_of("keep");
    add_check(res, "knowledge_ablation_order", all >= ui && ui >= u && u >= b,
              "keep " + fmt(all) + " >= u+i " + fmt(ui) + " >= u " + fmt(u) + " >= base " + fmt(b));
  }
  if (present("keep_decomposed") && present("keep_decomp_degen")) {
    add_check(res, "degeneration_helps_decomposition",
              mean_of("keep_decomp_degen") >= mean_of("keep_decomposed"),
              "decomp+degen " + fmt(mean_of("keep_decomp_degen")) + " vs decomp " +
                  fmt(mean_of("keep_decomposed")));
  }
  add_check(res, "runtime", res.seconds < c.max_runtime_seconds,
            fmt(res.seconds, 1) + "s (limit " + fmt(c.max_runtime_seconds, 0) + "s)");
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config, std::ostream* progress) {
  config.validate();
  const auto t0 = Clock::now();
  const Dataset data = load_dataset(config);
  std::mutex progress_mu;
  if (progress) {
    *progress << "data: " << data.super_log.size() << " super, " << data.sub_log.size()
              << " sub records; " << data.test.size() << " test impressions" << std::endl;
  }
  ServingBackend backend(config);
  const auto arms = config.arms();

  // results[seed index][arm index]
  std::vector<std::vector<ArmSeedResult>> results(config.seeds.size());
  std::vector<std::vector<std::string>> notes(config.seeds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t s; (s = next++) < config.seeds.size();) {
      SeedRun run(config, data, backend, config.seeds[s], progress, progress_mu);
      for (const auto& arm : arms) results[s].push_back(run.run(arm));
      notes[s] = std::move(run.notes);
    }
  };
  const std::size_t n_threads = std::min(config.threads, config.seeds.size());
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t k = 0; k < n_threads; ++k) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  ExperimentResult res;
  for (std::size_t a = 0; a < arms.size(); ++a) {
    ArmResult ar;
    ar.name = arms[a];
    for (std::size_t s = 0; s < config.seeds.size(); ++s) ar.runs.push_back(results[s][a]);
    res.arms.push_back(std::move(ar));
  }
  for (auto& n : notes) res.notes.insert(res.notes.end(), n.begin(), n.end());
  res.seconds = seconds_since(t0);
  if (config.checks) run_checks(config, res);

  if (!config.report_dir.empty()) {
    std::filesystem::create_directories(config.report_dir);
    const std::filesystem::path dir(config.report_dir);
    write_file((dir / "report.txt").string(), render_report(config, res));
    write_file((dir / "report.json").string(), render_json(config, res));
  }
  return res;
}

// ---------------------------------------------------------------------------
// Reports

namespace {

class TextTable {
 public:
  explicit TextTable(std::vector<std::string> header) { rows_.push_back(std::move(header)); }
  void add(std::vector<std::string> row) { rows_.push_back(std::move(row)); }

  std::string render() const {
    std::vector<std::size_t> width;
    for (const auto& r : rows_) {
      width.resize(std::max(width.size(), r.size()), 0);
      for (std::size_t k = 0; k < r.size(); ++k) width[k] = std::max(width[k], r[k].size());
    }
    std::ostringstream out;
    auto line = [&](const std::vector<std::string>& r) {
      for (std::size_t k = 0; k < r.size(); ++k) {
        out << (k ? "  " : "") << r[k];
        if (k + 1 < r.size()) out << std::string(width[k] - r[k].size(), ' ');
      }
      out << '\n';
    };
    line(rows_[0]);
    std::size_t total = 0;
    for (auto w : width) total += w;
    out << std::string(total + 2 * (width.size() - 1), '-') << '\n';
    for (std::size_t k = 1; k < rows_.size(); ++k) line(rows_[k]);
    return out.str();
  }

 private:
  std::vector<std::vector<std::string>> rows_;
};

std::string cell(const ArmResult& a) {
  std::string s = fmt(a.mean()) + " +- " + fmt(a.stddev());
  const auto failed = a.runs.size() - a.ok_runs();
  if (failed > 0) s += " [FAILED " + std::to_string(failed) + "/" + std::to_string(a.runs.size()) + "]";
  return s;
}

struct RefRow {
  std::string label;
  std::string arm;
  double reference;
};

void render_section(std::ostringstream& out, const ExperimentResult& res, const std::string& title,
                    const std::string& anchor, const std::string& delta_label,
                    const std::vector<RefRow>& rows, double anchor_ref) {
  const auto* base = res.find(anchor);
  TextTable t({"Setting", "GAUC (mean +- std)", delta_label, "Ref. GAUC", "Ref. " + delta_label});
  bool any = false;
  for (const auto& r : rows) {
    const auto* a = res.find(r.arm);
    if (a == nullptr) continue;
    any = true;
    const double d = base ? a->mean() - base->mean() : std::numeric_limits<double>::quiet_NaN();
    const bool has_ref = !std::isnan(r.reference);
    t.add({r.label, cell(*a), signed_fmt(d), has_ref ? fmt(r.reference) : "",
           has_ref && !std::isnan(anchor_ref) ? signed_fmt(r.reference - anchor_ref) : ""});
  }
  if (!any) return;
  out << title << '\n' << t.render() << '\n';
}

constexpr double kNoRef = std::numeric_limits<double>::quiet_NaN();

}  // namespace

std::string render_report(const ExperimentConfig& config, const ExperimentResult& res) {
  std::ostringstream out;
  out << "KEEP experiment: " << config.seeds.size() << " seed(s), pretrain days "
      << config.pretrain_days.first << "-" << config.pretrain_days.last << ", train days "
      << config.train_days.first << "-" << config.train_days.last << ", test day " << config.test_day
      << '\n'
      << "Ref. columns: production reference numbers, shown for context only.\n\n";

  render_section(out, res, "Cross-domain and pre-training", "base", "Improv.",
                 {{"Base", "base", 0.6310},
                  {"Sample Merging", "sample_merging", 0.6185},
                  {"KEEP-C", "keep_c", 0.6348},
                  {"KEEP", "keep", 0.6380}},
                 0.6310);

  {
    std::vector<RefRow> rows = {{"Base", "base", 0.6310}};
    for (const auto& a : config.knowledge_ablations) {
      const auto mask = parse_knowledge_mask(a);
      double ref = kNoRef;
      std::string label;
      if (mask.user) label += "K_u";
      if (mask.item) label += std::string(label.empty() ? "" : "+") + "K_i";
      if (mask.interaction) label += std::string(label.empty() ? "" : "+") + "K_ui";
      if (mask.user && !mask.item && !mask.interaction) ref = 0.6332;
      if (mask.user && mask.item && !mask.interaction) ref = 0.6347;
      rows.push_back({label, "keep[" + a + "]", ref});
    }
    rows.push_back({"K_u+K_i+K_ui", "keep", 0.6380});
    if (!config.knowledge_ablations.empty()) {
      render_section(out, res, "Knowledge ablation", "base", "Improv.", rows, 0.6310);
    }
  }

  if (!config.task_ablations.empty()) {
    std::vector<RefRow> rows = {{"Base", "base", 0.6310}};
    for (const auto& a : config.task_ablations) {
      const auto tasks = parse_task_set(a);
      double ref = kNoRef;
      if (tasks[0] && !tasks[1] && !tasks[2]) ref = 0.6368;
      if (tasks[0] && tasks[1] && !tasks[2]) ref = 0.6374;
      std::string label;
      for (std::size_t t = 0; t < extractor::kNumTasks; ++t) {
        if (!tasks[t]) continue;
        label += std::string(label.empty() ? "" : "+") +
                 std::string(extractor::task_name(static_cast<extractor::Task>(t)));
      }
      rows.push_back({label, "keep{" + a + "}", ref});
    }
    rows.push_back({"click+conversion+cart", "keep", 0.6380});
    render_section(out, res, "Pre-training task ablation", "base", "Improv.", rows, 0.6310);
  }

  if (const auto* b = res.find("base"); b != nullptr) {
    if (const auto* k = res.find("keep"); k != nullptr) {
      static const std::array<std::array<double, 2>, kNumGroups> refs = {
          {{0.6573, 0.6627}, {0.6628, 0.6668}, {0.6669, 0.6703}, {0.6687, 0.6718}}};
      TextTable t({"User clicks", "Users", "Base", "KEEP", "Improv.", "Ref. Base", "Ref. KEEP",
                   "Ref. Improv."});
      for (std::size_t g = 0; g < kNumGroups; ++g) {
        std::size_t users = 0;
        for (const auto& r : k->runs) {
          if (r.ok) users = std::max(users, r.report.groups[g].users);
        }
        const double bm = b->group_mean(g), km = k->group_mean(g);
        t.add({group_label(g), std::to_string(users), fmt(bm), fmt(km), signed_fmt(km - bm),
               fmt(refs[g][0]), fmt(refs[g][1]), signed_fmt(refs[g][1] - refs[g][0])});
      }
      out << "User groups (super-domain clicks before the test day)\n" << t.render() << '\n';
    }
  }

  render_section(out, res, "Serving strategies", "keep", "vs KEEP",
                 {{"KEEP (full)", "keep", 0.6703},
                  {"Decomposition", "keep_decomposed", 0.6691},
                  {"Degeneration", "keep_degenerated", 0.6683},
                  {"Decomposition+Degeneration", "keep_decomp_degen", 0.6698}},
                 0.6703);

  if (!res.checks.empty()) {
    TextTable t({"Check", "Result", "Detail"});
    for (const auto& c : res.checks) t.add({c.name, c.passed ? "PASS" : "FAIL", c.detail});
    out << "Checks\n" << t.render() << '\n';
  }
  for (const auto& a : res.arms) {
    for (const auto& r : a.runs) {
      if (!r.ok) out << "failure: " << a.name << " seed " << r.seed << ": " << r.error << '\n';
    }
  }
  out << "total time " << fmt(res.seconds, 1) << "s\n";
  return out.str();
}

std::string render_json(const ExperimentConfig& config, const ExperimentResult& res) {
  using nlohmann::ordered_json;
  auto num = [](double v) -> ordered_json { return std::isnan(v) ? ordered_json(nullptr) : ordered_json(v); };
  ordered_json j;
  j["seeds"] = config.seeds;
  j["pretrain_days"] = {config.pretrain_days.first, config.pretrain_days.last};
  j["train_days"] = {config.train_days.first, config.train_days.last};
  j["test_day"] = config.test_day;
  j["seconds"] = res.seconds;
  j["arms"] = ordered_json::array();
  for (const auto& a : res.arms) {
    ordered_json ja;
    ja["name"] = a.name;
    ja["mean"] = num(a.mean());
    ja["std"] = num(a.stddev());
    ja["runs"] = ordered_json::array();
    for (const auto& r : a.runs) {
      ordered_json jr;
      jr["seed"] = r.seed;
      jr["ok"] = r.ok;
      if (!r.ok) jr["error"] = r.error;
      jr["gauc"] = r.ok && !r.report.empty ? num(r.report.gauc) : ordered_json(nullptr);
      jr["users"] = r.report.users;
      jr["excluded_users"] = r.report.excluded_users;
      jr["impressions"] = r.report.impressions;
      jr["total_impressions"] = r.report.total_impressions;
      jr["groups"] = ordered_json::array();
      for (std::size_t g = 0; g < kNumGroups; ++g) {
        const auto& gs = r.report.groups[g];
        jr["groups"].push_back({{"group", group_label(g)},
                                {"gauc", gs.empty ? ordered_json(nullptr) : num(gs.gauc)},
                                {"users", gs.users},
                                {"impressions", gs.impressions}});
      }
      jr["seconds"] = r.seconds;
      ja["runs"].push_back(std::move(jr));
    }
    j["arms"].push_back(std::move(ja));
  }
  j["checks"] = ordered_json::array();
  for (const auto& c : res.checks) {
    j["checks"].push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
  }
  j["notes"] = res.notes;
  return j.dump(2) + "\n";
}

}  // namespace keep::harness
