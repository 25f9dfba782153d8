#pragma once

// k-shot evaluation: train from scratch on k samples per class, test on the
// full test set, repeat over seeds.

#include <cmath>
#include <cstdint>
#include <vector>

#include "biolearn/data.hpp"
#include "biolearn/network.hpp"
#include "biolearn/plasticity.hpp"

namespace biolearn {

enum class Rule { bio, bp };

inline constexpr std::size_t kFewShotEpochs = 200;

struct TrainerConfig {
  Rule rule = Rule::bio;
  Architecture arch;
  BioHyperParams bio;
  BpParams bp;
};

struct FewShotReport {
  std::size_t shots = 0;
  std::size_t epochs = 0;
  std::vector<double> accuracies;  // one per seed
  double mean = 0.0;
  double std = 0.0;  // population std over seeds
};

/// Trains `cfg` on a fresh model with the configured rule. Batch sizes are
/// capped at the training-set size.
inline TrainResult train_with(const TrainerConfig& cfg, const Dataset& train, const Rng& rng,
                              const TrainOptions& opt = {}) {
  MlpModel model = init_model(cfg.arch, rng.split(1));
  if (cfg.rule == Rule::bio) {
    auto hp = cfg.bio;
    hp.batch_size = std::min(hp.batch_size, train.size());
    return train_bio(std::move(model), train, hp, rng.split(2), opt);
  }
  auto bp = cfg.bp;
  bp.batch_size = std::min(bp.batch_size, train.size());
  return train_bp(std::move(model), train, bp, rng.split(2), opt);
}

/// The epoch counts in `cfg` are used as given; callers pick the few-shot
/// budget (kFewShotEpochs by default at the CLI).
inline FewShotReport few_shot_eval(const TrainerConfig& cfg, const Dataset& train,
                                   const Dataset& test, std::size_t shots, std::size_t n_seeds,
                                   const Rng& rng) {
  if (shots < 1) throw ParameterError("few_shot_eval: shots must be >= 1");
  if (n_seeds < 1) throw ParameterError("few_shot_eval: n_seeds must be >= 1");
  FewShotReport rep;
  rep.shots = shots;
  rep.epochs = cfg.rule == Rule::bio ? cfg.bio.epochs : cfg.bp.epochs;
  for (std::size_t s = 0; s < n_seeds; ++s) {
    const Rng seed_rng = rng.split(1000 + s);
    const Dataset sub = few_shot_subset(train, shots, seed_rng.split(0));
    const auto res = train_with(cfg, sub, seed_rng);
    rep.accuracies.push_back(accuracy(res.model, test));
  }
  double sum = 0.0;
  for (double a : rep.accuracies) sum += a;
  rep.mean = sum / static_cast<double>(n_seeds);
  double ss = 0.0;
  for (double a : rep.accuracies) ss += (a - rep.mean) * (a - rep.mean);
  rep.std = std::sqrt(ss / static_cast<double>(n_seeds));
  return rep;
}

}  // namespace biolearn
