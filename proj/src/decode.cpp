#include "copynmt/decode.hpp"

#include <algorithm>
#include <cmath>

namespace copynmt {

namespace {

constexpr double kProbFloor = 1e-12;

double safe_log(double p) { return std::log(std::max(p, kProbFloor)); }

int argmax_lowest_id(const Vec& p) {
  int best = 0;
  for (int i = 1; i < p.size(); ++i)
    if (p[i] > p[best]) best = i;
  return best;
}

double normalized(const Hypothesis& h) {
  return h.ids.empty() ? -1e30 : h.logprob / double(h.ids.size());
}

}  // namespace

int default_max_len(std::size_t src_len) { return 2 * int(src_len) + 5; }

Hypothesis greedy(const ModelParams& params, const std::vector<int>& src, int max_len,
                  DecodeTrace* trace) {
  if (max_len < 1) fail("greedy: max_len must be >= 1");
  DecodeSession session(params, src);
  int state = session.initial_state();
  Hypothesis hyp;
  int prev = kBos;
  for (int t = 0; t < max_len; ++t) {
    auto [dist, next] = session.step(state, prev);
    int y = argmax_lowest_id(dist.p);
    double lp = safe_log(dist.p[y]);
    hyp.ids.push_back(y);
    hyp.logprob += lp;
    hyp.step_logprobs.push_back(lp);
    if (trace) {
      trace->attn.push_back(dist.attn);
      trace->gamma.push_back(dist.gamma);
    }
    if (y == kEos) {
      hyp.finished = true;
      break;
    }
    state = next;
    prev = y;
  }
  return hyp;
}

BeamResult beam(const ModelParams& params, const std::vector<int>& src, int k, int max_len) {
  if (k < 1) fail("beam: k must be >= 1");
  if (max_len < 1) fail("beam: max_len must be >= 1");
  DecodeSession session(params, src);

  struct Item {
    Hypothesis hyp;
    int state = 0;
    int prev = kBos;
  };
  std::vector<Item> live;
  live.push_back(Item{{}, session.initial_state(), kBos});
  std::vector<Hypothesis> finished;

  for (int t = 0; t < max_len && !live.empty(); ++t) {
    struct Cand {
      double logprob;
      double step_lp;
      std::size_t parent;
      int token;
    };
    std::vector<Cand> cands;
    std::vector<int> next_states(live.size());
    for (std::size_t b = 0; b < live.size(); ++b) {
      auto [dist, next] = session.step(live[b].state, live[b].prev);
      next_states[b] = next;
      for (int v = 0; v < dist.p.size(); ++v) {
        double lp = safe_log(dist.p[v]);
        cands.push_back(Cand{live[b].hyp.logprob + lp, lp, b, v});
      }
    }
    // candidates are generated parent-major, token-ascending; stable sort
    // keeps that order on ties so k=1 matches greedy exactly
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Cand& a, const Cand& b) { return a.logprob > b.logprob; });
    std::vector<Item> next_live;
    int taken = 0;
    for (const Cand& c : cands) {
      if (taken >= k) break;
      ++taken;
      Hypothesis h = live[c.parent].hyp;
      h.ids.push_back(c.token);
      h.logprob = c.logprob;
      h.step_logprobs.push_back(c.step_lp);
      if (c.token == kEos) {
        h.finished = true;
        finished.push_back(std::move(h));
      } else {
        next_live.push_back(Item{std::move(h), next_states[c.parent], c.token});
      }
    }
    live = std::move(next_live);
  }
  std::vector<Hypothesis> all = std::move(finished);
  for (auto& it : live) all.push_back(std::move(it.hyp));
  std::stable_sort(all.begin(), all.end(),
                   [](const Hypothesis& a, const Hypothesis& b) {
                     return normalized(a) > normalized(b);
                   });
  if (all.size() > std::size_t(k)) all.resize(std::size_t(k));
  BeamResult out;
  out.topk = all;
  out.best = all.front();
  return out;
}

Hypothesis sample(const ModelParams& params, const std::vector<int>& src, int max_len,
                  std::uint64_t seed) {
  if (max_len < 1) fail("sample: max_len must be >= 1");
  Rng rng(seed);
  DecodeSession session(params, src);
  int state = session.initial_state();
  Hypothesis hyp;
  int prev = kBos;
  for (int t = 0; t < max_len; ++t) {
    auto [dist, next] = session.step(state, prev);
    int y = rng.categorical(dist.p);
    double lp = safe_log(dist.p[y]);
    hyp.ids.push_back(y);
    hyp.logprob += lp;
    hyp.step_logprobs.push_back(lp);
    if (y == kEos) {
      hyp.finished = true;
      break;
    }
    state = next;
    prev = y;
  }
  return hyp;
}

std::vector<std::string> ids_to_words(const std::vector<int>& ids, const Vocabulary& vocab) {
  std::vector<Token> pieces;
  for (int id : ids) {
    if (id == kPad || id == kBos || id == kEos || id == kAnnotOpen || id == kAnnotSep ||
        id == kAnnotClose)
      continue;
    pieces.push_back(parse_piece(vocab.token_of(id)));
  }
  return detokenize(pieces);
}

}  // namespace copynmt
