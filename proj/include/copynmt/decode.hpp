#pragma once

#include "copynmt/corpus.hpp"
#include "copynmt/model.hpp"

namespace copynmt {

struct Hypothesis {
  std::vector<int> ids;  // ends with EOS iff finished
  double logprob = 0.0;
  bool finished = false;
  std::vector<double> step_logprobs;

  // output tokens excluding the terminating EOS
  std::vector<int> output_ids() const {
    if (finished) return std::vector<int>(ids.begin(), ids.end() - 1);
    return ids;
  }
};

// Per-step attention rows and gate values, recorded when requested.
struct DecodeTrace {
  std::vector<Vec> attn;
  std::vector<double> gamma;
};

int default_max_len(std::size_t src_len);

Hypothesis greedy(const ModelParams& params, const std::vector<int>& src, int max_len,
                  DecodeTrace* trace = nullptr);

struct BeamResult {
  Hypothesis best;
  std::vector<Hypothesis> topk;  // ranked by length-normalized log-probability
};

BeamResult beam(const ModelParams& params, const std::vector<int>& src, int k, int max_len);

Hypothesis sample(const ModelParams& params, const std::vector<int>& src, int max_len,
                  std::uint64_t seed);

// BPE-join a decoded id sequence into words, dropping annotation markers.
std::vector<std::string> ids_to_words(const std::vector<int>& ids, const Vocabulary& vocab);

}  // namespace copynmt
