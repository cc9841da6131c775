#pragma once

#include <array>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "copynmt/corpus.hpp"

namespace copynmt {

struct PhraseCandidate {
  std::string target;  // space-joined words
  std::array<double, 4> scores{};
  double mean_score() const {
    return (scores[0] + scores[1] + scores[2] + scores[3]) / 4.0;
  }
};

class PhraseTable {
 public:
  void add(const std::string& source, PhraseCandidate cand);
  const std::vector<PhraseCandidate>* lookup(const std::string& source) const;
  bool contains(const std::string& source) const { return lookup(source) != nullptr; }
  std::size_t size() const { return entries_.size(); }
  int max_phrase_len() const { return max_phrase_len_; }

 private:
  std::unordered_map<std::string, std::vector<PhraseCandidate>> entries_;
  int max_phrase_len_ = 0;
};

// Moses-style "src ||| tgt ||| s1 s2 s3 s4" lines.
PhraseTable load_phrase_table(const std::string& path);
void save_phrase_table(const std::string& path, const std::vector<std::pair<std::string, PhraseCandidate>>& entries);

// Candidate with the highest arithmetic-mean score; ties to the
// lexicographically smallest target.
std::optional<std::string> best_translation(const PhraseTable& table, const std::string& phrase);

struct Span {
  int begin = 0, end = 0;  // half-open, word indices
};

using WordFreq = std::unordered_map<std::string, long>;

WordFreq count_words(const std::vector<std::vector<std::string>>& corpus);

// Non-overlapping spans around words with frequency < threshold, each
// extended greedily to the longest phrase-table match covering the word.
std::vector<Span> find_rare_spans(const std::vector<std::string>& words, const WordFreq& freq,
                                  long threshold, const PhraseTable& table);

struct AnnotationRecord {
  int begin = 0, end = 0;               // source word span, pre-BPE indices
  std::vector<std::string> suggestion;  // target words
  std::vector<Token> suggestion_pieces;
  // item indices of the markers inside AnnotatedSentence::items
  int open_pos = -1, sep_pos = -1, close_pos = -1;
};

struct AnnotItem {
  enum Kind { kPiece, kOpen, kSep, kClose };
  Kind kind = kPiece;
  Token piece;  // valid when kind == kPiece
};

struct AnnotatedSentence {
  std::vector<AnnotItem> items;
  std::vector<AnnotationRecord> records;
};

AnnotatedSentence annotate(const std::vector<std::string>& words, const std::vector<Span>& spans,
                           const PhraseTable& table, const BpeCodes& codes);

// Remove annotation segments (markers + suggestion pieces); what remains is
// the plain BPE source.
std::vector<Token> strip_annotations(const AnnotatedSentence& s);

// Map items to vocabulary ids (markers to their reserved ids). Pieces
// missing from the vocabulary map to kPad.
std::vector<int> encode(const AnnotatedSentence& s, const Vocabulary& vocab);

std::string render(const AnnotatedSentence& s);
AnnotatedSentence parse_annotated(const std::string& line);

struct CoverageStats {
  long rare_words = 0;
  long covered = 0;
  double fraction() const { return rare_words == 0 ? 0.0 : double(covered) / double(rare_words); }
};

// Rare-word count plus the fraction whose best table suggestion appears
// entirely in the aligned reference.
CoverageStats coverage_stats(const std::vector<std::vector<std::string>>& corpus,
                             const PhraseTable& table,
                             const std::vector<std::vector<std::string>>& references,
                             long threshold);

}  // namespace copynmt
