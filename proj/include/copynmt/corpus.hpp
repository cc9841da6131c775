#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "copynmt/common.hpp"

namespace copynmt {

struct Token {
  std::string surface;
  bool continues = false;  // subword that joins to the next piece
};

inline bool operator==(const Token& a, const Token& b) {
  return a.surface == b.surface && a.continues == b.continues;
}

// Ordered merge list; position in `merges` is the learned priority.
struct BpeCodes {
  std::vector<std::pair<std::string, std::string>> merges;
  int n_ops = 0;
};

class Vocabulary {
 public:
  Vocabulary();

  // id for token, inserting with zero frequency if absent
  int add(const std::string& token);
  void count(const std::string& token, long n = 1);
  std::optional<int> id_of(const std::string& token) const;
  const std::string& token_of(int id) const;
  long freq_of_id(int id) const { return freqs_[std::size_t(id)]; }
  long freq_of(const std::string& token) const;
  int size() const { return int(tokens_.size()); }

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

 private:
  std::vector<std::string> tokens_;
  std::vector<long> freqs_;
  std::unordered_map<std::string, int> ids_;
};

struct SentencePair {
  std::vector<int> src;
  std::vector<int> tgt;
  int index = -1;  // position in the original corpus, for annotation alignment
};

struct ParallelBatch {
  std::vector<SentencePair> pairs;
};

// Whitespace split with punctuation detached as single-character tokens.
std::vector<std::string> tokenize(const std::string& line);

std::vector<Token> to_tokens(const std::vector<std::string>& words);

BpeCodes learn_bpe(const std::vector<std::pair<std::string, long>>& word_counts, int n_ops);
BpeCodes learn_bpe(const std::vector<std::vector<std::string>>& corpus, int n_ops);

// Decompose one word into subword pieces (all but the last marked as continuing).
std::vector<Token> apply_bpe_word(const std::string& word, const BpeCodes& codes);
std::vector<Token> apply_bpe(const std::vector<std::string>& words, const BpeCodes& codes);

// Inverse of apply_bpe: join pieces on continuation markers.
std::vector<std::string> detokenize(const std::vector<Token>& pieces);

// Render/parse the continuation marker ("@@" suffix on non-final pieces).
std::string render_piece(const Token& t, const std::string& marker = "@@");
Token parse_piece(const std::string& s, const std::string& marker = "@@");

// Joint vocabulary over both corpus sides (already BPE-split); reserved
// symbols first, then descending frequency, ties lexicographic.
Vocabulary build_vocab(const std::vector<std::vector<Token>>& src_corpus,
                       const std::vector<std::vector<Token>>& tgt_corpus);

// Group by source length, chunk to max_size, shuffle chunk order by seed.
std::vector<ParallelBatch> make_batches(const std::vector<SentencePair>& pairs,
                                        std::size_t max_size, std::uint64_t seed);

std::vector<std::string> read_lines(const std::string& path);
void write_lines(const std::string& path, const std::vector<std::string>& lines);

void save_bpe_codes(const std::string& path, const BpeCodes& codes);
BpeCodes load_bpe_codes(const std::string& path);

}  // namespace copynmt
