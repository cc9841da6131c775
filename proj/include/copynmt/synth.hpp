#pragma once

#include "copynmt/eval.hpp"

namespace copynmt {

struct SynthConfig {
  int n_common = 120;
  int n_rare = 80;
  int train_size = 2000;
  int finetune_size = 400;
  int dev_size = 200;
  int test_size = 300;
  double inject_prob = 0.3;          // chance of replacing a slot with a rare word
  double zipf_exponent = 1.0;        // common-word weighting
  double expert_error_rate = 0.0;
  double heldout_rare_fraction = 0.5;  // rare types kept out of train/finetune
  int min_len = 4;
  int max_len = 9;
  bool reorder = false;  // random local swaps on the target side
  std::uint64_t seed = 42;

  void validate() const;
};

struct ParallelSplit {
  WordCorpus src, tgt;
};

// ordered source -> target pairs; order is part of the deterministic output
using Lexicon = std::vector<std::pair<std::string, std::string>>;

struct SynthOutput {
  ParallelSplit train, finetune, dev, test;
  Lexicon lexicon;  // full hidden word-for-word mapping
  Lexicon expert;   // rare entries only, corrupted at the configured rate
  std::vector<std::string> heldout_rare;
};

SynthOutput generate(const SynthConfig& cfg);

// Independently replace each target by a wrong word with the given rate.
Lexicon corrupt_lexicon(const Lexicon& lexicon, double rate, std::uint64_t seed);

// Corpus files, a phrase table (scores 1.0), and a manifest under dir.
void write_synth(const SynthOutput& out, const SynthConfig& cfg, const std::string& dir);

}  // namespace copynmt
