#pragma once

#include "copynmt/decode.hpp"
#include "copynmt/expert.hpp"

namespace copynmt {

struct CorpusScore {
  std::string name;
  double value = 0.0;
  double numerator = 0.0;
  double denominator = 0.0;
  bool defined = true;  // false => reported as "n/a"
};

using WordCorpus = std::vector<std::vector<std::string>>;

// Corpus BLEU: geometric mean of clipped n-gram precisions (n=1..4) with
// brevity penalty, counts pooled over the corpus, no smoothing.
CorpusScore bleu(const WordCorpus& hypotheses, const WordCorpus& references);

// Mean sentence-level GLEU (reported alongside BLEU by `score gleu`).
CorpusScore mean_gleu(const WordCorpus& hypotheses, const WordCorpus& references);

// Corpus-level HIT: pooled suggestion-word matches over all records.
CorpusScore corpus_hit(const WordCorpus& hypotheses,
                       const std::vector<std::vector<AnnotationRecord>>& records);

// Fraction of suggestion words (multiset, with multiplicity unless
// unique_words) found in the aligned hypothesis.
CorpusScore sug(const WordCorpus& hypotheses,
                const std::vector<std::vector<AnnotationRecord>>& records,
                bool unique_words = false);

// Among suggestion words confirmed by the reference, the fraction also in
// the hypothesis. Empty denominator => undefined.
CorpusScore sac(const WordCorpus& hypotheses,
                const std::vector<std::vector<AnnotationRecord>>& records,
                const WordCorpus& references);

std::string format_score_line(const CorpusScore& s);
void write_report(const std::string& path, const std::vector<CorpusScore>& scores);

// Attention matrix (rows = target steps, cols = source positions) plus both
// token sequences and per-step gate values, tab-separated.
void attention_dump(const DecodeTrace& trace, const std::vector<std::string>& src_tokens,
                    const std::vector<std::string>& tgt_tokens, const std::string& path);

}  // namespace copynmt
