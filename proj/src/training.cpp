#include "copynmt/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

namespace copynmt {

namespace {

std::map<std::string, long> multiset(const std::vector<std::string>& words) {
  std::map<std::string, long> out;
  for (const auto& w : words) ++out[w];
  return out;
}

std::map<std::vector<std::string>, long> ngrams(const std::vector<std::string>& words, int n) {
  std::map<std::vector<std::string>, long> out;
  for (std::size_t i = 0; i + std::size_t(n) <= words.size(); ++i)
    ++out[std::vector<std::string>(words.begin() + long(i), words.begin() + long(i) + n)];
  return out;
}

}  // namespace

double hit_score(const std::vector<std::string>& hyp,
                 const std::vector<AnnotationRecord>& records) {
  std::vector<std::string> sugg;
  for (const auto& r : records) sugg.insert(sugg.end(), r.suggestion.begin(), r.suggestion.end());
  if (sugg.empty()) return 1.0;
  auto hyp_counts = multiset(hyp);
  auto sugg_counts = multiset(sugg);
  long matched = 0;
  for (const auto& [w, c] : sugg_counts) {
    auto it = hyp_counts.find(w);
    if (it != hyp_counts.end()) matched += std::min(c, it->second);
  }
  return double(matched) / double(sugg.size());
}

double gleu_score(const std::vector<std::string>& hyp, const std::vector<std::string>& ref,
                  int max_n, bool per_n) {
  if (hyp.empty() || ref.empty()) return 0.0;
  long matched_pool = 0, hyp_pool = 0, ref_pool = 0;
  double per_n_sum = 0.0;
  int per_n_terms = 0;
  for (int n = 1; n <= max_n; ++n) {
    auto hg = ngrams(hyp, n);
    auto rg = ngrams(ref, n);
    long matched = 0, hyp_total = 0, ref_total = 0;
    for (const auto& [g, c] : hg) {
      hyp_total += c;
      auto it = rg.find(g);
      if (it != rg.end()) matched += std::min(c, it->second);
    }
    for (const auto& [g, c] : rg) ref_total += c;
    matched_pool += matched;
    hyp_pool += hyp_total;
    ref_pool += ref_total;
    if (per_n && hyp_total > 0 && ref_total > 0) {
      per_n_sum += std::min(double(matched) / double(hyp_total),
                            double(matched) / double(ref_total));
      ++per_n_terms;
    }
  }
  if (per_n) return per_n_terms == 0 ? 0.0 : per_n_sum / double(per_n_terms);
  if (hyp_pool == 0 || ref_pool == 0) return 0.0;
  double precision = double(matched_pool) / double(hyp_pool);
  double recall = double(matched_pool) / double(ref_pool);
  return std::min(precision, recall);
}

RewardValue reward(const std::vector<std::string>& hyp, const std::vector<std::string>& ref,
                   const std::vector<AnnotationRecord>& records, const RewardConfig& cfg) {
  cfg.validate();
  RewardValue out;
  out.gleu = gleu_score(hyp, ref, cfg.max_ngram, cfg.per_n);
  long sugg_words = 0;
  for (const auto& r : records) sugg_words += long(r.suggestion.size());
  if (sugg_words == 0) {
    // a vacuous HIT of 1.0 would leak free reward
    out.hit = 1.0;
    out.r = out.gleu;
    return out;
  }
  out.hit = hit_score(hyp, records);
  out.r = cfg.alpha * out.hit + (1.0 - cfg.alpha) * out.gleu;
  return out;
}

void Adam::step(ModelParams& params, ModelParams& grads, double lr) {
  ++t_;
  double bc1 = 1.0 - std::pow(kBeta1, double(t_));
  double bc2 = 1.0 - std::pow(kBeta2, double(t_));
  std::vector<Mat*> ps, gs, ms, vs;
  params.visit([&](const std::string&, Mat& x) { ps.push_back(&x); });
  grads.visit([&](const std::string&, Mat& x) { gs.push_back(&x); });
  m_.visit([&](const std::string&, Mat& x) { ms.push_back(&x); });
  v_.visit([&](const std::string&, Mat& x) { vs.push_back(&x); });
  for (std::size_t i = 0; i < ps.size(); ++i) {
    Mat& g = *gs[i];
    // moments still decay on zero-gradient tensors; the update is a no-op
    // only when both moments are zero, matching the m=v=0 fixed point
    if (g.size() == 0) g = Mat::Zero(ps[i]->rows(), ps[i]->cols());
    Mat& m = *ms[i];
    Mat& v = *vs[i];
    m = kBeta1 * m + (1.0 - kBeta1) * g;
    v = kBeta2 * v + (1.0 - kBeta2) * g.array().square().matrix();
    ps[i]->array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + kEps);
    g.setZero();
  }
}

std::string format_log_line(const EpochLog& e) {
  std::ostringstream out;
  out << e.epoch << '\t' << e.split << '\t' << e.loss_or_ppl << '\t' << e.mean_reward << '\t'
      << e.mean_hit << '\t' << e.lr;
  return out.str();
}

double validation_perplexity(const ModelParams& params, const std::vector<TrainExample>& dev) {
  double nll = 0.0;
  long tokens = 0;
  for (const auto& ex : dev) {
    ForwardResult fr = forward_logprob(params, ex.src, ex.tgt);
    nll -= fr.logprob;
    tokens += long(ex.tgt.size()) + 1;  // + EOS
  }
  return tokens == 0 ? 0.0 : std::exp(nll / double(tokens));
}

namespace {

std::vector<ParallelBatch> example_batches(const std::vector<TrainExample>& examples,
                                           std::size_t batch_size, std::uint64_t seed) {
  std::vector<SentencePair> pairs;
  pairs.reserve(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i)
    pairs.push_back(SentencePair{examples[i].src, examples[i].tgt, int(i)});
  return make_batches(pairs, batch_size, seed);
}

}  // namespace

std::vector<EpochLog> train_xent(ModelParams& params, const std::vector<TrainExample>& train,
                                 const std::vector<TrainExample>& dev, const XentOptions& opts,
                                 Adam& opt, const EpochCallback& cb) {
  if (train.empty()) fail("train_xent: no training batches");
  std::vector<EpochLog> logs;
  double lr = opts.lr_override > 0.0 ? opts.lr_override
              : opts.resume_lr > 0.0 ? opts.resume_lr
                                     : opts.lr_start;
  double best_ppl = opts.resume_best_ppl > 0.0 ? opts.resume_best_ppl
                                               : std::numeric_limits<double>::infinity();
  ModelParams grads = zero_like(params);
  for (int epoch = opts.start_epoch; epoch < opts.epochs; ++epoch) {
    auto batches = example_batches(train, opts.batch_size, opts.seed * 0x9e3779b9ULL + std::uint64_t(epoch));
    double epoch_loss = 0.0;
    long epoch_tokens = 0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto& batch = batches[bi];
      double batch_nll = 0.0;
      long batch_tokens = 0;
      for (const auto& pr : batch.pairs) {
        Graph g;
        // deterministic per-sentence dropout stream: a resumed run replays the
        // same masks because the seed depends only on (seed, epoch, batch, id)
        Rng drng(opts.seed * 0x9e3779b9ULL + std::uint64_t(epoch) * 1000003ULL +
                 bi * 131ULL + std::uint64_t(pr.index));
        GraphBuilder gb(g, params, &grads,
                        params.cfg.dropout > 0.0 ? &drng : nullptr);
        SequenceLoss sl = gb.sequence_nll(pr.src, pr.tgt);
        batch_nll += g.scalar(sl.loss);
        batch_tokens += sl.tokens;
        g.backward(sl.loss);
      }
      double loss = batch_nll / double(batch_tokens);
      if (std::isnan(loss))
        fail("train_xent: NaN loss in epoch " + std::to_string(epoch) + ", batch " + std::to_string(bi));
      grads.visit([&](const std::string&, Mat& m) {
        if (m.size() > 0) m /= double(batch_tokens);
      });
      opt.step(params, grads, lr);
      epoch_loss += batch_nll;
      epoch_tokens += batch_tokens;
    }
    double train_loss = epoch_loss / double(epoch_tokens);
    double ppl = dev.empty() ? std::numeric_limits<double>::quiet_NaN()
                             : validation_perplexity(params, dev);
    logs.push_back(EpochLog{epoch, "train", train_loss, 0.0, 0.0, lr});
    if (!dev.empty()) logs.push_back(EpochLog{epoch, "dev", ppl, 0.0, 0.0, lr});
    // anneal before the callback so checkpoints carry the next epoch's rate
    if (!dev.empty() && opts.anneal && opts.lr_override <= 0.0) {
      if (ppl < best_ppl) best_ppl = ppl;
      else lr = std::max(lr / 2.0, opts.lr_floor);
    }
    if (cb) cb(epoch, ppl, lr, opt);
  }
  return logs;
}

RlStepResult self_critical_step(const ModelParams& params, ModelParams& grads,
                                const std::vector<TrainExample>& batch, const RewardConfig& cfg,
                                const Vocabulary& vocab, std::uint64_t seed,
                                int samples_per_sentence) {
  if (batch.empty()) fail("self_critical_step: empty batch");
  RlStepResult res;
  long n_terms = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& ex = batch[i];
    int max_len = 2 * int(ex.src.size());
    Hypothesis base = greedy(params, ex.src, max_len);
    RewardValue rb = reward(ids_to_words(base.output_ids(), vocab), ex.ref_words, ex.records, cfg);
    for (int s = 0; s < samples_per_sentence; ++s) {
      std::uint64_t draw_seed = fnv1a(&i, sizeof(i), seed) * 31 + std::uint64_t(s);
      Hypothesis w = sample(params, ex.src, max_len, draw_seed);
      RewardValue rw = reward(ids_to_words(w.output_ids(), vocab), ex.ref_words, ex.records, cfg);
      double advantage = rw.r - rb.r;
      if (advantage != 0.0 && !w.output_ids().empty()) {
        Graph g;
        GraphBuilder gb(g, params, &grads);
        SequenceLoss sl = gb.sequence_nll(ex.src, w.output_ids(), w.finished);
        g.backward(sl.loss, advantage);
      }
      res.mean_advantage += advantage;
      res.mean_sample_reward += rw.r;
      res.mean_hit += rw.hit;
      ++n_terms;
    }
    res.mean_baseline_reward += rb.r;
  }
  double scale = 1.0 / double(n_terms);
  grads.visit([&](const std::string&, Mat& m) {
    if (m.size() > 0) m *= scale;
  });
  res.mean_advantage *= scale;
  res.mean_sample_reward *= scale;
  res.mean_hit *= scale;
  res.mean_baseline_reward /= double(batch.size());
  return res;
}

std::vector<EpochLog> train_rl(ModelParams& params, const std::vector<TrainExample>& rl_set,
                               const RlOptions& opts, Adam& opt, const Vocabulary& vocab,
                               const EpochCallback& cb) {
  if (rl_set.empty()) fail("train_rl: empty training set");
  opts.reward.validate();
  std::vector<EpochLog> logs;
  ModelParams grads = zero_like(params);
  for (int epoch = opts.start_epoch; epoch < opts.epochs; ++epoch) {
    auto batches = example_batches(rl_set, opts.batch_size,
                                   opts.seed * 0x51ed270bULL + std::uint64_t(epoch));
    double sum_reward = 0.0, sum_hit = 0.0, sum_adv = 0.0;
    long n = 0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      std::vector<TrainExample> exs;
      for (const auto& pr : batches[bi].pairs) exs.push_back(rl_set[std::size_t(pr.index)]);
      std::uint64_t step_seed = opts.seed ^ (std::uint64_t(epoch) << 32) ^ std::uint64_t(bi);
      RlStepResult r = self_critical_step(params, grads, exs, opts.reward, vocab, step_seed,
                                          opts.samples_per_sentence);
      opt.step(params, grads, opts.lr);
      sum_reward += r.mean_sample_reward * double(exs.size());
      sum_hit += r.mean_hit * double(exs.size());
      sum_adv += r.mean_advantage * double(exs.size());
      n += long(exs.size());
    }
    EpochLog log{epoch, "rl", sum_adv / double(n), sum_reward / double(n), sum_hit / double(n),
                 opts.lr};
    logs.push_back(log);
    if (cb) cb(epoch, sum_reward / double(n), opts.lr, opt);
  }
  return logs;
}

RewardValue mean_greedy_reward(const ModelParams& params, const std::vector<TrainExample>& split,
                               const RewardConfig& cfg, const Vocabulary& vocab) {
  RewardValue acc;
  for (const auto& ex : split) {
    Hypothesis h = greedy(params, ex.src, 2 * int(ex.src.size()));
    RewardValue r = reward(ids_to_words(h.output_ids(), vocab), ex.ref_words, ex.records, cfg);
    acc.r += r.r;
    acc.hit += r.hit;
    acc.gleu += r.gleu;
  }
  double n = double(split.size());
  acc.r /= n;
  acc.hit /= n;
  acc.gleu /= n;
  return acc;
}

double finite_diff_check(ModelParams& params, const std::vector<TrainExample>& batch, double eps) {
  if (eps <= 0.0) fail("finite_diff_check: eps must be > 0");
  ModelParams grads = zero_like(params);
  auto total_loss = [&]() {
    double loss = 0.0;
    for (const auto& ex : batch) {
      Graph g;
      GraphBuilder gb(g, params, nullptr);
      loss += g.scalar(gb.sequence_nll(ex.src, ex.tgt).loss);
    }
    return loss;
  };
  for (const auto& ex : batch) {
    Graph g;
    GraphBuilder gb(g, params, &grads);
    SequenceLoss sl = gb.sequence_nll(ex.src, ex.tgt);
    g.backward(sl.loss);
  }
  double max_rel = 0.0;
  std::vector<std::pair<Mat*, Mat*>> tensors;
  {
    std::vector<Mat*> ps, gs;
    params.visit([&](const std::string&, Mat& m) { ps.push_back(&m); });
    grads.visit([&](const std::string&, Mat& m) { gs.push_back(&m); });
    for (std::size_t i = 0; i < ps.size(); ++i) tensors.emplace_back(ps[i], gs[i]);
  }
  for (auto& [p, gm] : tensors) {
    for (Eigen::Index j = 0; j < p->cols(); ++j)
      for (Eigen::Index i = 0; i < p->rows(); ++i) {
        double saved = (*p)(i, j);
        (*p)(i, j) = saved + eps;
        double lp = total_loss();
        (*p)(i, j) = saved - eps;
        double lm = total_loss();
        (*p)(i, j) = saved;
        double fd = (lp - lm) / (2.0 * eps);
        double an = gm->size() == 0 ? 0.0 : (*gm)(i, j);
        double rel = std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)});
        max_rel = std::max(max_rel, rel);
      }
  }
  return max_rel;
}

}  // namespace copynmt
