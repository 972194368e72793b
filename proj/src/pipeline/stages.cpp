#include "rlp/pipeline/stages.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <ctime>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "rlp/common/error.hpp"
#include "rlp/seqmodel/checkpoint.hpp"
#include "rlp/taskworld/records.hpp"

#ifndef RLP_CODE_VERSION
#define RLP_CODE_VERSION "unknown"
#endif

namespace rlp::pipe {

using json = nlohmann::json;

std::string code_version() { return RLP_CODE_VERSION; }

std::string sha256_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 16];
  while (is) {
    is.read(buf, sizeof buf);
    EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(is.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::ofstream open_out(const fs::path& path) {
  fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  return os;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  return is;
}

json tally_json(const Tally& t) {
  return {{"wins", t.wins}, {"ties", t.ties}, {"losses", t.losses}, {"win_rate", t.win_rate()}};
}

Tally tally_from(const json& j) {
  Tally t;
  t.wins = j.at("wins").get<int>();
  t.ties = j.at("ties").get<int>();
  t.losses = j.at("losses").get<int>();
  return t;
}

json report_json(const WinRateReport& r) {
  json j{{"method", r.method}, {"opponent", r.opponent}, {"overall", tally_json(r.overall)},
         {"mean", r.mean},     {"stddev", r.stddev}};
  for (const auto& [s, t] : r.per_seed) {
    json e = tally_json(t);
    e["seed"] = s;
    j["per_seed"].push_back(e);
  }
  for (const auto& [f, t] : r.per_family) {
    json e = tally_json(t);
    e["family"] = std::string(world::family_name(f));
    j["per_family"].push_back(e);
  }
  return j;
}

WinRateReport report_from(const json& j) {
  WinRateReport r;
  r.method = j.at("method");
  r.opponent = j.at("opponent");
  r.overall = tally_from(j.at("overall"));
  r.mean = j.at("mean");
  r.stddev = j.at("stddev");
  for (const auto& e : j.at("per_seed")) r.per_seed.emplace_back(e.at("seed").get<std::uint64_t>(), tally_from(e));
  for (const auto& e : j.at("per_family"))
    r.per_family.emplace_back(world::parse_family(e.at("family").get<std::string>()), tally_from(e));
  return r;
}

}  // namespace

void save_policy_samples(const fs::path& path, std::span<const spg::PolicySampleSet> samples, const std::string& split) {
  auto os = open_out(path);
  os << "#rlp policy-samples v1 split=" << split << '\n';
  for (const auto& s : samples) {
    os << world::format_instruction_fields(s.x) << "\tproducer=" << s.producer << "\tn=" << s.ys.size();
    for (std::size_t i = 0; i < s.ys.size(); ++i) os << "\ty" << i << '=' << world::vocab::format_tokens(s.ys[i].tokens);
    os << '\n';
  }
}

std::vector<spg::PolicySampleSet> load_policy_samples(const fs::path& path) {
  auto is = open_in(path);
  std::string line;
  if (!std::getline(is, line) || line.rfind("#rlp policy-samples v1 split=", 0) != 0)
    throw FormatError("bad header for policy-samples file " + path.string());
  std::vector<spg::PolicySampleSet> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = world::parse_fields(line);
    spg::PolicySampleSet s;
    s.x = world::parse_instruction_fields(f);
    s.producer = world::field(f, "producer");
    std::size_t n = 0;
    try {
      n = std::stoul(world::field(f, "n"));
    } catch (const std::logic_error&) {
      throw FormatError("policy-samples record has a non-numeric n");
    }
    for (std::size_t i = 0; i < n; ++i) {
      world::Response y;
      y.tokens = world::vocab::parse_tokens(world::field(f, "y" + std::to_string(i)));
      y.producer = s.producer;
      s.ys.push_back(std::move(y));
    }
    out.push_back(std::move(s));
  }
  return out;
}

RunManifest RunManifest::load(const fs::path& path) {
  RunManifest m;
  json j;
  try {
    auto is = open_in(path);
    j = json::parse(is);
    m.code_version = j.at("code_version");
    m.config_text = j.at("config");
    for (const auto& [name, s] : j.at("stages").items()) {
      StageRecord r;
      r.status = s.at("status");
      r.started = s.at("started");
      r.finished = s.at("finished");
      r.seconds = s.at("seconds");
      r.error = s.value("error", "");
      for (const auto& [p, h] : s.at("outputs").items()) r.outputs[p] = h.get<std::string>();
      m.stages[name] = std::move(r);
    }
  } catch (const json::exception& e) {
    throw FormatError("malformed manifest " + path.string() + ": " + e.what());
  }
  return m;
}

void RunManifest::save(const fs::path& path) const {
  json j{{"code_version", code_version}, {"config", config_text}, {"stages", json::object()}};
  for (const auto& [name, r] : stages) {
    json s{{"status", r.status}, {"started", r.started}, {"finished", r.finished}, {"seconds", r.seconds},
           {"outputs", json::object()}};
    if (!r.error.empty()) s["error"] = r.error;
    for (const auto& [p, h] : r.outputs) s["outputs"][p] = h;
    j["stages"][name] = s;
  }
  const fs::path tmp = path.string() + ".tmp";
  {
    auto os = open_out(tmp);
    os << j.dump(2) << '\n';
  }
  fs::rename(tmp, path);
}

bool RunManifest::up_to_date(const std::string& stage, const fs::path& root) const {
  auto it = stages.find(stage);
  if (it == stages.end() || it->second.status != "complete") return false;
  for (const auto& [rel, hash] : it->second.outputs) {
    const fs::path p = root / rel;
    if (!fs::exists(p) || sha256_file(p) != hash) return false;
  }
  return true;
}

namespace {
// Keys allowed to change between invocations on one run directory.
bool volatile_key(const std::string& k) { return k == "method" || k == "out_dir"; }
}  // namespace

Run::Run(ExperimentConfig cfg, std::ostream* log) : cfg_(std::move(cfg)), root_(cfg_.out_dir), log_(log) {
  cfg_.validate();
  fs::create_directories(root_);
  const fs::path mpath = root_ / "manifest.json";
  if (fs::exists(mpath)) {
    manifest_ = RunManifest::load(mpath);
    const auto previous = ExperimentConfig::parse(manifest_.config_text);
    std::vector<std::string> changed;
    for (const auto& k : config_diff(previous, cfg_))
      if (!volatile_key(k)) changed.push_back(k);
    if (!changed.empty()) {
      std::string keys;
      for (const auto& k : changed) keys += (keys.empty() ? "" : ", ") + k;
      throw ConfigError("run directory " + root_.string() + " was created with a different config (" + keys +
                        "); use a fresh out_dir");
    }
  } else {
    manifest_.config_text = cfg_.to_text();
  }
  manifest_.code_version = code_version();
  {
    auto os = open_out(root_ / "config.txt");
    os << manifest_.config_text;
  }
  manifest_.save(mpath);
}

template <class F>
void Run::stage(const std::string& name, F&& body) {
  if (!force_ && manifest_.up_to_date(name, root_)) {
    if (log_) *log_ << "[" << name << "] up to date\n";
    return;
  }
  if (log_) *log_ << "[" << name << "] running\n" << std::flush;
  StageRecord rec;
  rec.started = utc_now();
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::string> outputs;
  try {
    outputs = body();
  } catch (const std::exception& e) {
    rec.status = "failed";
    rec.finished = utc_now();
    rec.error = e.what();
    manifest_.stages[name] = rec;
    manifest_.save(root_ / "manifest.json");
    throw;
  }
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  rec.finished = utc_now();
  rec.status = "complete";
  for (const auto& rel : outputs) rec.outputs[rel] = sha256_file(root_ / rel);
  manifest_.stages[name] = rec;
  manifest_.save(root_ / "manifest.json");
  if (log_) *log_ << "[" << name << "] done in " << rec.seconds << " s\n";
}

void Run::require(const std::string& stage, const std::string& hint) const {
  if (!manifest_.up_to_date(stage, root_))
    throw std::runtime_error("stage '" + stage + "' has not completed in " + root_.string() + "; run `" + hint + "` first");
}

void Run::gen_data() {
  stage("gen-data", [&] {
    const auto s = make_splits(cfg_);
    std::vector<std::string> out;
    for (const auto* set : {&s.sft, &s.preference, &s.unlabeled, &s.eval}) {
      const std::string rel = "data/" + set->split + ".tsv";
      world::save_instructions(path(rel), *set);
      out.push_back(rel);
    }
    return out;
  });
}

void Run::sft() {
  require("gen-data", "gen-data");
  stage("sft", [&] {
    seq::SftReport rep;
    const auto model = train_sft_model(cfg_, world::load_instructions(path("data/sft.tsv")), &rep);
    seq::save_policy(model, path("models/sft.ckpt"));
    auto os = open_out(path("logs/sft.jsonl"));
    os << json{{"initial_loss", rep.initial_loss}}.dump() << '\n';
    for (std::size_t e = 0; e < rep.epoch_loss.size(); ++e) os << json{{"epoch", e + 1}, {"loss", rep.epoch_loss[e]}}.dump() << '\n';
    return std::vector<std::string>{"models/sft.ckpt", "logs/sft.jsonl"};
  });
}

void Run::collect_prefs() {
  require("sft", "sft");
  stage("collect-prefs", [&] {
    const auto model = seq::load_policy(path("models/sft.ckpt"));
    const auto res = collect_annotated(cfg_, model, world::load_instructions(path("data/preference.tsv")));
    world::save_preferences(path("data/D.tsv"), res.dataset);
    return std::vector<std::string>{"data/D.tsv"};
  });
}

namespace {
void write_reward_log(const fs::path& p, const rm::RewardTrainReport& rep) {
  std::ofstream os = open_out(p);
  for (const auto& e : rep.epochs) {
    json j{{"epoch", e.epoch},         {"pairwise", e.pairwise}, {"representation", e.representation},
           {"mi", e.mi},               {"skl", e.skl},
           {"train_accuracy", e.train_accuracy}};
    if (e.heldout_accuracy) j["heldout_accuracy"] = *e.heldout_accuracy;
    os << j.dump() << '\n';
  }
}

void write_ppo_log(const fs::path& p, const std::vector<rl::IterationLog>& log) {
  std::ofstream os = open_out(p);
  for (const auto& l : log)
    os << json{{"iteration", l.iteration},
               {"mean_score", l.mean_score},
               {"mean_kl", l.mean_kl},
               {"mean_length", l.mean_length},
               {"policy_loss", l.update.policy_loss},
               {"value_loss", l.update.value_loss},
               {"clip_fraction", l.update.clip_fraction},
               {"approx_kl", l.update.approx_kl},
               {"steps", l.update.steps},
               {"early_stopped", l.update.early_stopped}}
              .dump()
       << '\n';
}
}  // namespace

void Run::train_rm() {
  require("collect-prefs", "collect-prefs");
  stage("train-rm", [&] {
    const auto model = seq::load_policy(path("models/sft.ckpt"));
    rm::RewardTrainReport rep;
    const auto reward = train_initial_reward(cfg_, model, world::load_preferences(path("data/D.tsv")), &rep);
    rm::save_reward(reward, nullptr, path("models/reward-initial.ckpt"));
    write_reward_log(path("logs/reward-initial.jsonl"), rep);
    return std::vector<std::string>{"models/reward-initial.ckpt", "logs/reward-initial.jsonl"};
  });
}

void Run::ppo() {
  require("train-rm", "train-rm");
  stage("ppo", [&] {
    const auto model = seq::load_policy(path("models/sft.ckpt"));
    const auto reward = rm::load_reward(path("models/reward-initial.ckpt"));
    const auto res = train_rl_policy(cfg_, model, reward, world::load_instructions(path("data/unlabeled.tsv")), "ppo");
    seq::save_policy(res.policy, path("models/ppo.ckpt"));
    write_ppo_log(path("logs/ppo.jsonl"), res.log);
    return std::vector<std::string>{"models/ppo.ckpt", "logs/ppo.jsonl"};
  });
}

void Run::sample_policy() {
  require("ppo", "ppo");
  stage("sample-policy", [&] {
    const auto policy = seq::load_policy(path("models/ppo.ckpt"));
    const auto samples = pipe::sample_policy(cfg_, policy, world::load_instructions(path("data/unlabeled.tsv")));
    save_policy_samples(path("data/P.tsv"), samples, "unlabeled");
    return std::vector<std::string>{"data/P.tsv"};
  });
}

void Run::retrain_rm(Method method) {
  if (!retrains_reward(method)) throw ConfigError(std::string("retrain-rm: method ") + method_name(method) + " keeps r_phi");
  require("sample-policy", "sample-policy");
  const std::string name = method_name(method);
  stage("retrain-rm:" + name, [&] {
    const auto sft = seq::load_policy(path("models/sft.ckpt"));
    const auto initial = rm::load_reward(path("models/reward-initial.ckpt"));
    const auto policy = seq::load_policy(path("models/ppo.ckpt"));
    const auto samples = load_policy_samples(path("data/P.tsv"));
    const auto out = retrain_reward(cfg_, method, sft, initial, policy, world::load_preferences(path("data/D.tsv")),
                                    samples, world::load_instructions(path("data/unlabeled.tsv")));
    std::vector<std::string> files{"models/reward-" + name + ".ckpt", "logs/reward-" + name + ".jsonl"};
    rm::save_reward(out.reward, out.head ? &*out.head : nullptr, path(files[0]));
    write_reward_log(path(files[1]), out.log);
    if (out.synthetic) {
      files.push_back("data/Dhat-" + name + ".tsv");
      world::save_preferences(path(files.back()), *out.synthetic);
    }
    if (!out.decisions.empty()) {
      files.push_back("logs/spg-decisions-" + name + ".tsv");
      auto os = open_out(path(files.back()));
      spg::write_decisions(os, out.decisions);
    }
    return files;
  });
}

void Run::retrain_policy(Method method) {
  const std::string name = method_name(method);
  require("retrain-rm:" + name, "retrain-rm --method " + name);
  stage("retrain-policy:" + name, [&] {
    const auto sft = seq::load_policy(path("models/sft.ckpt"));
    const auto reward = rm::load_reward(path("models/reward-" + name + ".ckpt"));
    const auto res = train_rl_policy(cfg_, sft, reward, world::load_instructions(path("data/unlabeled.tsv")), name);
    std::vector<std::string> files{"models/policy-" + name + ".ckpt", "logs/policy-" + name + ".jsonl"};
    seq::save_policy(res.policy, path(files[0]));
    write_ppo_log(path(files[1]), res.log);
    return files;
  });
}

WinRateReport Run::eval(Method method) {
  const std::string name = method_name(method);
  fs::path model_path;
  switch (method) {
    case Method::Sft:
    case Method::BestOfN:
      require("sft", "sft");
      model_path = path("models/sft.ckpt");
      if (method == Method::BestOfN) require("train-rm", "train-rm");
      break;
    case Method::Ppo:
      require("ppo", "ppo");
      model_path = path("models/ppo.ckpt");
      break;
    default:
      require("retrain-policy:" + name, "retrain-policy --method " + name);
      model_path = path("models/policy-" + name + ".ckpt");
  }
  const std::string rel = "eval/" + name + ".json";
  stage("eval:" + name, [&] {
    const auto sft = seq::load_policy(path("models/sft.ckpt"));
    const auto model = seq::load_policy(model_path);
    const int max_new = cfg_.world.max_response;
    const Player reference = policy_player("sft", sft, cfg_.eval_temperature, max_new);
    std::optional<rm::RewardModel> reward;
    Player player;
    if (method == Method::BestOfN) {
      reward = rm::load_reward(path("models/reward-initial.ckpt"));
      player = best_of_n_player(name, model, *reward, cfg_.best_of_n, cfg_.eval_temperature, max_new);
    } else {
      player = policy_player(name, model, cfg_.eval_temperature, max_new);
    }
    const auto seeds = eval_seeds(cfg_);
    const auto r = evaluate_winrate(player, reference, world::load_instructions(path("data/eval.tsv")), cfg_.annotator, seeds);
    auto os = open_out(path(rel));
    os << report_json(r).dump(2) << '\n';
    return std::vector<std::string>{rel};
  });
  auto is = open_in(path(rel));
  return report_from(json::parse(is));
}

std::vector<WinRateReport> Run::run_methods(std::span<const Method> methods) {
  gen_data();
  sft();
  bool need_rm = false, need_retrain = false, need_ppo = false;
  for (Method m : methods) {
    need_rm |= m != Method::Sft;
    need_ppo |= m == Method::Ppo || retrains_reward(m);
    need_retrain |= retrains_reward(m);
  }
  if (need_rm) {
    collect_prefs();
    train_rm();
  }
  if (need_ppo) ppo();
  if (need_retrain) sample_policy();
  std::vector<WinRateReport> out;
  for (Method m : methods) {
    if (retrains_reward(m)) {
      retrain_rm(m);
      retrain_policy(m);
    }
    out.push_back(eval(m));
  }
  return out;
}

std::string Run::report() {
  std::vector<MethodSummary> rows;
  std::vector<Method> all = main_methods();
  for (Method m : representation_ablations()) all.push_back(m);
  for (Method m : synthesis_ablations()) all.push_back(m);
  for (Method m : all) {
    const std::string name = method_name(m);
    const fs::path p = path("eval/" + name + ".json");
    if (!fs::exists(p) || std::any_of(rows.begin(), rows.end(), [&](const auto& r) { return r.method == m; })) continue;
    auto is = open_in(p);
    const auto r = report_from(json::parse(is));
    MethodSummary s;
    s.method = m;
    for (const auto& [seed, t] : r.per_seed) s.per_seed.push_back(t.win_rate());
    s.mean = r.mean;
    s.stddev = r.stddev;
    for (const auto& [f, t] : r.per_family) s.per_family.emplace_back(f, t.win_rate());
    const fs::path dhat = path("data/Dhat-" + name + ".tsv");
    if (fs::exists(dhat)) {
      const auto d = world::load_preferences(dhat);
      if (!d.empty()) s.synthetic_accuracy = spg::true_preference_accuracy(d, cfg_.annotator);
    }
    rows.push_back(std::move(s));
  }
  if (rows.empty()) throw std::runtime_error("report: no evaluation results in " + root_.string() + "/eval");
  const std::string text = emit_report(rows);
  auto os = open_out(path("report.txt"));
  os << text;
  return text;
}

}  // namespace rlp::pipe
