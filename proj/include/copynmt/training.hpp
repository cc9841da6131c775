#pragma once

#include <functional>
#include <ostream>

#include "copynmt/decode.hpp"
#include "copynmt/expert.hpp"
#include "copynmt/model.hpp"

namespace copynmt {

struct RewardConfig {
  double alpha = 0.5;
  int max_ngram = 4;
  bool per_n = false;  // average per-order min(p, r) instead of pooling

  void validate() const {
    if (alpha < 0.0 || alpha > 1.0) fail("RewardConfig: alpha must be in [0, 1]");
  }
};

struct RewardValue {
  double r = 0.0;
  double hit = 0.0;
  double gleu = 0.0;
};

// Fraction of suggestion words (multiset, all records) present in the
// hypothesis. Returns 1.0 when there are no suggestion words; reward()
// applies the no-annotation rule instead of trusting that value.
double hit_score(const std::vector<std::string>& hyp, const std::vector<AnnotationRecord>& records);

// min(precision, recall) over pooled 1..max_n n-grams, clipped matches.
double gleu_score(const std::vector<std::string>& hyp, const std::vector<std::string>& ref,
                  int max_n = 4, bool per_n = false);

RewardValue reward(const std::vector<std::string>& hyp, const std::vector<std::string>& ref,
                   const std::vector<AnnotationRecord>& records, const RewardConfig& cfg);

class Adam {
 public:
  explicit Adam(const ModelParams& shape)
      : m_(zero_like(shape)), v_(zero_like(shape)) {}

  // grads are consumed (zeroed) by the update.
  void step(ModelParams& params, ModelParams& grads, double lr);

  long steps() const { return t_; }
  void set_steps(long t) { t_ = t; }
  ModelParams& moments1() { return m_; }
  ModelParams& moments2() { return v_; }

  static constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;

 private:
  ModelParams m_, v_;
  long t_ = 0;
};

struct TrainExample {
  std::vector<int> src;  // annotated, encoded
  std::vector<int> tgt;  // encoded, no BOS/EOS
  std::vector<std::string> ref_words;
  std::vector<AnnotationRecord> records;
};

struct EpochLog {
  int epoch = 0;
  std::string split;
  double loss_or_ppl = 0.0;
  double mean_reward = 0.0;
  double mean_hit = 0.0;
  double lr = 0.0;
};

std::string format_log_line(const EpochLog& e);

// dev_ppl is NaN for stages without a validation pass this epoch.
using EpochCallback = std::function<void(int epoch, double metric, double lr, Adam& opt)>;

struct XentOptions {
  int epochs = 30;
  std::size_t batch_size = 128;
  double lr_start = 0.001;
  double lr_floor = 0.00025;
  bool anneal = true;
  std::uint64_t seed = 1;
  int start_epoch = 0;
  double lr_override = -1.0;  // fixed rate (fine-tuning); disables annealing
  // annealing state carried across a resume (start_epoch > 0)
  double resume_lr = -1.0;
  double resume_best_ppl = -1.0;
};

std::vector<EpochLog> train_xent(ModelParams& params, const std::vector<TrainExample>& train,
                                 const std::vector<TrainExample>& dev, const XentOptions& opts,
                                 Adam& opt, const EpochCallback& cb = {});

double validation_perplexity(const ModelParams& params, const std::vector<TrainExample>& dev);

struct RlOptions {
  RewardConfig reward;
  double lr = 0.0001;
  int epochs = 50;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;
  int samples_per_sentence = 1;
  int start_epoch = 0;
};

struct RlStepResult {
  double mean_advantage = 0.0;
  double mean_sample_reward = 0.0;
  double mean_baseline_reward = 0.0;
  double mean_hit = 0.0;
};

// One self-critical batch: ancestral sample vs greedy baseline (no gradient
// through the baseline); gradient of -advantage * log p(sample), averaged
// over the batch, is accumulated into grads.
RlStepResult self_critical_step(const ModelParams& params, ModelParams& grads,
                                const std::vector<TrainExample>& batch, const RewardConfig& cfg,
                                const Vocabulary& vocab, std::uint64_t seed,
                                int samples_per_sentence = 1);

std::vector<EpochLog> train_rl(ModelParams& params, const std::vector<TrainExample>& rl_set,
                               const RlOptions& opts, Adam& opt, const Vocabulary& vocab,
                               const EpochCallback& cb = {});

// Mean greedy-decode reward over a split (the self-critical baseline metric).
RewardValue mean_greedy_reward(const ModelParams& params, const std::vector<TrainExample>& split,
                               const RewardConfig& cfg, const Vocabulary& vocab);

// Central finite differences over every coordinate vs analytic gradients of
// the summed cross-entropy loss.
double finite_diff_check(ModelParams& params, const std::vector<TrainExample>& batch, double eps);

}  // namespace copynmt
