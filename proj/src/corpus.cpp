#include "copynmt/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

namespace copynmt {

namespace {

bool is_punct_byte(unsigned char c) { return c < 0x80 && std::ispunct(c) != 0; }

// Split a UTF-8 string into code points (as byte strings).
std::vector<std::string> utf8_chars(const std::string& s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    unsigned char c = (unsigned char)s[i];
    std::size_t len = 1;
    if ((c & 0xE0) == 0xC0) len = 2;
    else if ((c & 0xF0) == 0xE0) len = 3;
    else if ((c & 0xF8) == 0xF0) len = 4;
    len = std::min(len, s.size() - i);
    out.push_back(s.substr(i, len));
    i += len;
  }
  return out;
}

}  // namespace

std::vector<std::string> tokenize(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  };
  for (std::size_t i = 0; i < line.size(); ++i) {
    unsigned char c = (unsigned char)line[i];
    if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
      flush();
    } else if (is_punct_byte(c)) {
      flush();
      out.push_back(std::string(1, char(c)));
    } else {
      cur.push_back(char(c));
    }
  }
  flush();
  return out;
}

std::vector<Token> to_tokens(const std::vector<std::string>& words) {
  std::vector<Token> out;
  out.reserve(words.size());
  for (const auto& w : words) out.push_back(Token{w, false});
  return out;
}

BpeCodes learn_bpe(const std::vector<std::pair<std::string, long>>& word_counts, int n_ops) {
  if (word_counts.empty()) fail("learn_bpe: empty corpus");
  BpeCodes codes;
  codes.n_ops = n_ops;
  // working decomposition of each word
  std::vector<std::vector<std::string>> words;
  words.reserve(word_counts.size());
  for (const auto& [w, c] : word_counts) {
    (void)c;
    words.push_back(utf8_chars(w));
  }
  for (int op = 0; op < n_ops; ++op) {
    std::map<std::pair<std::string, std::string>, long> pair_counts;
    for (std::size_t wi = 0; wi < words.size(); ++wi) {
      const auto& syms = words[wi];
      long c = word_counts[wi].second;
      for (std::size_t j = 0; j + 1 < syms.size(); ++j)
        pair_counts[{syms[j], syms[j + 1]}] += c;
    }
    if (pair_counts.empty()) break;
    // max count; std::map iteration gives lexicographic tie-break for free
    auto best = pair_counts.begin();
    for (auto it = pair_counts.begin(); it != pair_counts.end(); ++it)
      if (it->second > best->second) best = it;
    codes.merges.push_back(best->first);
    const auto& [l, r] = best->first;
    for (auto& syms : words) {
      std::vector<std::string> merged;
      merged.reserve(syms.size());
      for (std::size_t j = 0; j < syms.size();) {
        if (j + 1 < syms.size() && syms[j] == l && syms[j + 1] == r) {
          merged.push_back(l + r);
          j += 2;
        } else {
          merged.push_back(syms[j]);
          ++j;
        }
      }
      syms = std::move(merged);
    }
  }
  return codes;
}

BpeCodes learn_bpe(const std::vector<std::vector<std::string>>& corpus, int n_ops) {
  if (corpus.empty()) fail("learn_bpe: empty corpus");
  std::map<std::string, long> counts;
  for (const auto& sent : corpus)
    for (const auto& w : sent) counts[w] += 1;
  if (counts.empty()) fail("learn_bpe: empty corpus");
  std::vector<std::pair<std::string, long>> wc(counts.begin(), counts.end());
  return learn_bpe(wc, n_ops);
}

std::vector<Token> apply_bpe_word(const std::string& word, const BpeCodes& codes) {
  std::vector<std::string> syms = utf8_chars(word);
  std::map<std::pair<std::string, std::string>, int> rank;
  for (std::size_t i = 0; i < codes.merges.size(); ++i)
    rank.emplace(codes.merges[i], int(i));
  while (syms.size() > 1) {
    int best_rank = int(codes.merges.size());
    for (std::size_t j = 0; j + 1 < syms.size(); ++j) {
      auto it = rank.find({syms[j], syms[j + 1]});
      if (it != rank.end() && it->second < best_rank) best_rank = it->second;
    }
    if (best_rank == int(codes.merges.size())) break;
    const auto& [l, r] = codes.merges[std::size_t(best_rank)];
    std::vector<std::string> merged;
    merged.reserve(syms.size());
    for (std::size_t j = 0; j < syms.size();) {
      if (j + 1 < syms.size() && syms[j] == l && syms[j + 1] == r) {
        merged.push_back(l + r);
        j += 2;
      } else {
        merged.push_back(syms[j]);
        ++j;
      }
    }
    syms = std::move(merged);
  }
  std::vector<Token> out;
  out.reserve(syms.size());
  for (std::size_t j = 0; j < syms.size(); ++j)
    out.push_back(Token{syms[j], j + 1 < syms.size()});
  return out;
}

std::vector<Token> apply_bpe(const std::vector<std::string>& words, const BpeCodes& codes) {
  std::vector<Token> out;
  for (const auto& w : words) {
    auto pieces = apply_bpe_word(w, codes);
    out.insert(out.end(), pieces.begin(), pieces.end());
  }
  return out;
}

std::vector<std::string> detokenize(const std::vector<Token>& pieces) {
  std::vector<std::string> out;
  std::string cur;
  for (const auto& p : pieces) {
    cur += p.surface;
    if (!p.continues) {
      out.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(cur);  // dangling continuation at end of line
  return out;
}

std::string render_piece(const Token& t, const std::string& marker) {
  return t.continues ? t.surface + marker : t.surface;
}

Token parse_piece(const std::string& s, const std::string& marker) {
  if (s.size() > marker.size() && s.compare(s.size() - marker.size(), marker.size(), marker) == 0)
    return Token{s.substr(0, s.size() - marker.size()), true};
  return Token{s, false};
}

Vocabulary::Vocabulary() {
  // reserved surfaces; open/close share "#" on purpose, ids drive parsing
  const char* reserved[] = {"<pad>", "<s>", "</s>", "#", "##", "#"};
  for (const char* r : reserved) {
    tokens_.push_back(r);
    freqs_.push_back(0);
    ids_.emplace(r, int(tokens_.size()) - 1);
  }
}

int Vocabulary::add(const std::string& token) {
  auto it = ids_.find(token);
  if (it != ids_.end()) return it->second;
  tokens_.push_back(token);
  freqs_.push_back(0);
  ids_.emplace(token, int(tokens_.size()) - 1);
  return int(tokens_.size()) - 1;
}

void Vocabulary::count(const std::string& token, long n) {
  freqs_[std::size_t(add(token))] += n;
}

std::optional<int> Vocabulary::id_of(const std::string& token) const {
  auto it = ids_.find(token);
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocabulary::token_of(int id) const {
  if (id < 0 || id >= size()) fail("Vocabulary: id out of range");
  return tokens_[std::size_t(id)];
}

long Vocabulary::freq_of(const std::string& token) const {
  auto id = id_of(token);
  return id ? freqs_[std::size_t(*id)] : 0;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) fail("cannot write " + path);
  for (int i = 0; i < size(); ++i)
    out << i << '\t' << tokens_[std::size_t(i)] << '\t' << freqs_[std::size_t(i)] << '\n';
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot read " + path);
  Vocabulary v;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::size_t t1 = line.find('\t');
    std::size_t t2 = line.rfind('\t');
    if (t1 == std::string::npos || t2 == t1)
      fail("vocab parse error at line " + std::to_string(lineno));
    int id = std::stoi(line.substr(0, t1));
    std::string tok = line.substr(t1 + 1, t2 - t1 - 1);
    long freq = std::stol(line.substr(t2 + 1));
    if (id < kNumReserved) {
      if (tok != v.token_of(id)) fail("vocab reserved symbol mismatch at line " + std::to_string(lineno));
      v.freqs_[std::size_t(id)] = freq;
      continue;
    }
    if (id != v.size()) fail("vocab ids not contiguous at line " + std::to_string(lineno));
    v.tokens_.push_back(tok);
    v.freqs_.push_back(freq);
    v.ids_.emplace(tok, id);
  }
  return v;
}

Vocabulary build_vocab(const std::vector<std::vector<Token>>& src_corpus,
                       const std::vector<std::vector<Token>>& tgt_corpus) {
  std::map<std::string, long> counts;
  for (const auto* corpus : {&src_corpus, &tgt_corpus})
    for (const auto& sent : *corpus)
      for (const auto& t : sent) counts[render_piece(t)] += 1;
  std::vector<std::pair<std::string, long>> entries(counts.begin(), counts.end());
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocabulary v;
  for (const auto& [tok, c] : entries) v.count(tok, c);
  return v;
}

std::vector<ParallelBatch> make_batches(const std::vector<SentencePair>& pairs,
                                        std::size_t max_size, std::uint64_t seed) {
  if (max_size < 1) fail("make_batches: max_size must be >= 1");
  std::map<std::size_t, std::vector<SentencePair>> by_len;
  for (const auto& p : pairs) by_len[p.src.size()].push_back(p);
  std::vector<ParallelBatch> batches;
  for (auto& [len, group] : by_len) {
    (void)len;
    for (std::size_t i = 0; i < group.size(); i += max_size) {
      ParallelBatch b;
      for (std::size_t j = i; j < std::min(i + max_size, group.size()); ++j)
        b.pairs.push_back(group[j]);
      batches.push_back(std::move(b));
    }
  }
  Rng rng(seed);
  rng.shuffle(batches);
  return batches;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot read " + path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    out.push_back(line);
  }
  return out;
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream out(path);
  if (!out) fail("cannot write " + path);
  for (const auto& l : lines) out << l << '\n';
}

void save_bpe_codes(const std::string& path, const BpeCodes& codes) {
  std::ofstream out(path);
  if (!out) fail("cannot write " + path);
  out << "bpe-codes v1 " << codes.n_ops << '\n';
  for (const auto& [l, r] : codes.merges) out << l << '\t' << r << '\n';
}

BpeCodes load_bpe_codes(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot read " + path);
  std::string header;
  if (!std::getline(in, header) || header.rfind("bpe-codes v1 ", 0) != 0)
    fail("bad BPE codes header in " + path);
  BpeCodes codes;
  codes.n_ops = std::stoi(header.substr(13));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::size_t tab = line.find('\t');
    if (tab == std::string::npos) fail("bad BPE merge line in " + path);
    codes.merges.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  return codes;
}

}  // namespace copynmt
