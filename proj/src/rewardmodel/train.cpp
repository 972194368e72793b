#include "rlp/rewardmodel/train.hpp"

#include <cmath>
#include <numeric>

#include "rlp/common/error.hpp"
#include "rlp/numerics/ops.hpp"
#include "rlp/seqmodel/checkpoint.hpp"

namespace rlp::rm {

using num::Tape;
using num::Var;

std::vector<ViewPair> draw_view_pairs(std::span<const spg::PolicySampleSet> samples, Rng& rng) {
  std::vector<ViewPair> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    if (s.ys.size() < 2) throw std::invalid_argument("draw_view_pairs: sample set with fewer than two responses");
    const std::size_t i = rng.below(s.ys.size());
    std::size_t j = rng.below(s.ys.size() - 1);
    if (j >= i) ++j;
    out.push_back({s.x, s.ys[i], s.ys[j]});
  }
  return out;
}

std::pair<Var, Var> view_features(Tape& tape, seq::Transformer& net, std::span<const ViewPair> views) {
  std::vector<Var> a, b;
  for (const auto& v : views) {
    a.push_back(pooled_features(tape, net, v.x, v.y1));
    b.push_back(pooled_features(tape, net, v.x, v.y2));
  }
  return {num::concat_rows(a), num::concat_rows(b)};
}

RewardTrainReport train_reward(RewardModel& model, const world::PreferenceDataset& annotated,
                               const world::PreferenceDataset* synthetic, MIBHead* head,
                               std::span<const spg::PolicySampleSet> samples, const RewardTrainConfig& cfg,
                               std::span<const world::PreferencePair> heldout) {
  if (annotated.empty()) throw ConfigError("train_reward: annotated preference data is empty");
  if (cfg.lambda < 0.0 || !std::isfinite(cfg.lambda)) throw ConfigError("train_reward: lambda must be >= 0");
  const bool use_views = cfg.lambda > 0.0;
  if (use_views && (head == nullptr || samples.empty()))
    throw ConfigError("train_reward: lambda > 0 needs a representation head and policy samples");
  if (use_views && cfg.view_batch < 2) throw ConfigError("train_reward: view_batch must be >= 2");
  if (cfg.batch_size < 1) throw ConfigError("train_reward: batch_size must be >= 1");

  std::vector<world::PreferencePair> data = annotated.pairs();
  if (synthetic) data.insert(data.end(), synthetic->pairs().begin(), synthetic->pairs().end());

  if (!(cfg.backbone_lr_scale >= 0.0) || !std::isfinite(cfg.backbone_lr_scale))
    throw ConfigError("train_reward: backbone_lr_scale must be >= 0");
  std::vector<num::Tensor*> params = model.head_parameters();
  if (use_views) {
    const auto hp = head->parameters();
    params.insert(params.end(), hp.begin(), hp.end());
  }
  num::Adam opt(params, cfg.adam);
  num::AdamConfig backbone_adam = cfg.adam;
  backbone_adam.learning_rate *= cfg.backbone_lr_scale;
  num::Adam backbone_opt(model.backbone.parameters(), backbone_adam);
  opt.zero_grad();
  backbone_opt.zero_grad();

  Rng order_rng(derive_seed({cfg.seed, 0x4d1}));
  Rng view_rng(derive_seed({cfg.seed, 0x4d2}));
  std::vector<ViewPair> views;
  std::size_t view_cursor = 0;
  auto next_views = [&] {
    std::vector<ViewPair> batch;
    while (batch.size() < static_cast<std::size_t>(cfg.view_batch)) {
      if (view_cursor >= views.size()) {
        views = draw_view_pairs(samples, view_rng);
        view_rng.shuffle(views);
        view_cursor = 0;
      }
      batch.push_back(views[view_cursor++]);
    }
    return batch;
  };

  RewardTrainReport report;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  std::uint64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    order_rng.shuffle(order);
    RewardEpochRecord rec;
    rec.epoch = epoch + 1;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      std::vector<world::PreferencePair> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + bs); ++i) batch.push_back(data[order[i]]);
      Tape tape;
      Var loss = pairwise_loss(tape, model, batch);
      RewardStepRecord sr;
      sr.epoch = rec.epoch;
      sr.pairwise = loss.item();
      if (use_views) {
        const auto vb = next_views();
        Var v1, v2;
        if (cfg.backbone_flow) {
          std::tie(v1, v2) = view_features(tape, model.backbone, vb);
        } else {
          Tape frozen(false);
          auto [f1, f2] = view_features(frozen, model.backbone, vb);
          v1 = tape.constant(f1.value());
          v2 = tape.constant(f2.value());
        }
        auto terms = representation_loss(tape, *head, cfg.representation, v1, v2, derive_seed({cfg.seed, 0x4d3, step}));
        sr.representation = terms.loss.item();
        sr.mi = terms.mi;
        sr.skl = terms.skl;
        loss = num::add(loss, num::scale(terms.loss, cfg.lambda));
      }
      sr.total = loss.item();
      if (!std::isfinite(sr.total)) throw DivergenceError("train_reward: non-finite loss at epoch " + std::to_string(rec.epoch));
      tape.backward(loss);
      opt.step();
      if (cfg.backbone_lr_scale > 0.0)
        backbone_opt.step();
      else
        backbone_opt.zero_grad();
      ++step;
      ++steps;
      rec.pairwise += sr.pairwise;
      rec.representation += sr.representation;
      rec.mi += sr.mi;
      rec.skl += sr.skl;
      report.steps.push_back(sr);
    }
    const double n = static_cast<double>(steps);
    rec.pairwise /= n;
    rec.representation /= n;
    rec.mi /= n;
    rec.skl /= n;
    rec.train_accuracy = preference_accuracy(model, annotated.pairs());
    if (!heldout.empty()) rec.heldout_accuracy = preference_accuracy(model, heldout);
    report.epochs.push_back(rec);
  }
  return report;
}

void save_reward(const RewardModel& model, const MIBHead* head, const std::filesystem::path& path) {
  seq::Checkpoint ck;
  ck.kind = "reward";
  ck.role = model.role;
  seq::export_weights(model.backbone, ck);
  ck.sections.emplace_back("scalar_head.weight", model.head_weight);
  ck.sections.emplace_back("scalar_head.bias", model.head_bias);
  if (head) {
    const auto& c = head->config();
    ck.sections.emplace_back("mib.config", num::Tensor::row({static_cast<double>(c.feature_dim), static_cast<double>(c.latent),
                                                             static_cast<double>(c.hidden), static_cast<double>(c.critic_hidden),
                                                             c.cl_temperature}));
    auto params = const_cast<MIBHead*>(head)->parameters();
    const auto names = head->parameter_names();
    for (std::size_t i = 0; i < params.size(); ++i) ck.sections.emplace_back(names[i], *params[i]);
  }
  for (auto& [name, t] : ck.sections) t.drop_grad();
  ck.save(path);
}

RewardModel load_reward(const std::filesystem::path& path, MIBHead* head) {
  const seq::Checkpoint ck = seq::Checkpoint::load(path);
  if (ck.kind != "reward") throw FormatError("checkpoint: expected a reward model, found " + ck.kind);
  ck.arch.validate();
  RewardModel m(ck.arch, ck.role);
  seq::import_weights(m.backbone, ck);
  auto copy = [&](const std::string& name, num::Tensor& dst) {
    const auto& src = ck.section(name);
    if (!src.same_shape(dst)) throw FormatError("checkpoint: shape mismatch for " + name);
    std::copy(src.values().begin(), src.values().end(), dst.values().begin());
  };
  copy("scalar_head.weight", m.head_weight);
  copy("scalar_head.bias", m.head_bias);
  if (head) {
    if (!ck.has_section("mib.config")) throw FormatError("checkpoint: no representation head in " + path.string());
    const auto& c = ck.section("mib.config");
    if (c.size() != 5) throw FormatError("checkpoint: malformed mib.config");
    MibConfig cfg;
    cfg.feature_dim = static_cast<int>(c[0]);
    cfg.latent = static_cast<int>(c[1]);
    cfg.hidden = static_cast<int>(c[2]);
    cfg.critic_hidden = static_cast<int>(c[3]);
    cfg.cl_temperature = c[4];
    *head = MIBHead(cfg);
    auto params = head->parameters();
    const auto names = head->parameter_names();
    for (std::size_t i = 0; i < params.size(); ++i) copy(names[i], *params[i]);
  }
  return m;
}

}  // namespace rlp::rm
