#pragma once

#include <filesystem>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "rlp/pipeline/suite.hpp"

// File-backed pipeline. Every stage reads its inputs from the run directory,
// writes its outputs there and records them in manifest.json with a SHA-256
// per file. A stage whose recorded outputs are still present and unchanged is
// skipped, so an interrupted run resumes where it stopped.
//
//   <out>/config.txt            resolved configuration
//   <out>/manifest.json
//   <out>/data/{sft,preference,unlabeled,eval}.tsv
//   <out>/data/D.tsv  data/P.tsv  data/Dhat-<method>.tsv
//   <out>/models/{sft,reward-initial,ppo}.ckpt
//   <out>/models/{reward,policy}-<method>.ckpt
//   <out>/logs/*.jsonl  <out>/eval/<method>.json  <out>/report.txt
namespace rlp::pipe {

namespace fs = std::filesystem;

std::string sha256_file(const fs::path& path);
std::string code_version();

// Policy-sample records: header `#rlp policy-samples v1 split=<tag>`, then per
// instruction the instruction fields, `producer=` and `n=`, then y0..y<n-1>.
void save_policy_samples(const fs::path& path, std::span<const spg::PolicySampleSet> samples, const std::string& split);
std::vector<spg::PolicySampleSet> load_policy_samples(const fs::path& path);

struct StageRecord {
  std::string status;  // complete | failed
  std::string started, finished;
  double seconds = 0.0;
  std::map<std::string, std::string> outputs;  // path relative to the run dir -> sha256
  std::string error;
};

class RunManifest {
 public:
  std::string code_version;
  std::string config_text;
  std::map<std::string, StageRecord> stages;

  static RunManifest load(const fs::path& path);
  void save(const fs::path& path) const;
  // Recorded complete and every output still hashes to the recorded value.
  bool up_to_date(const std::string& stage, const fs::path& root) const;
};

class Run {
 public:
  // Creates or reopens cfg.out_dir. Reopening with a config that differs in
  // anything but `method` or `out_dir` raises ConfigError.
  explicit Run(ExperimentConfig cfg, std::ostream* log = nullptr);

  const ExperimentConfig& config() const { return cfg_; }
  const fs::path& root() const { return root_; }
  const RunManifest& manifest() const { return manifest_; }
  void set_force(bool force) { force_ = force; }

  void gen_data();
  void sft();
  void collect_prefs();
  void train_rm();
  void ppo();
  void sample_policy();
  void retrain_rm(Method method);
  void retrain_policy(Method method);
  WinRateReport eval(Method method);
  // Every stage needed for the listed methods, then their evaluations.
  std::vector<WinRateReport> run_methods(std::span<const Method> methods);
  // Report over every eval/<method>.json present.
  std::string report();

  fs::path path(const std::string& rel) const { return root_ / rel; }

 private:
  template <class F>
  void stage(const std::string& name, F&& body);
  void require(const std::string& stage, const std::string& hint) const;

  ExperimentConfig cfg_;
  fs::path root_;
  RunManifest manifest_;
  std::ostream* log_;
  bool force_ = false;
};


}  // namespace rlp::pipe
