#include "copynmt/expert.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace copynmt {

namespace {

std::string join(const std::vector<std::string>& words, int begin, int end) {
  std::string out;
  for (int i = begin; i < end; ++i) {
    if (i > begin) out += ' ';
    out += words[std::size_t(i)];
  }
  return out;
}

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

}  // namespace

void PhraseTable::add(const std::string& source, PhraseCandidate cand) {
  auto& cands = entries_[source];
  for (auto& c : cands) {
    if (c.target == cand.target) {
      if (cand.mean_score() > c.mean_score()) c = std::move(cand);
      return;
    }
  }
  cands.push_back(std::move(cand));
  int len = 1 + int(std::count(source.begin(), source.end(), ' '));
  max_phrase_len_ = std::max(max_phrase_len_, len);
}

const std::vector<PhraseCandidate>* PhraseTable::lookup(const std::string& source) const {
  auto it = entries_.find(source);
  return it == entries_.end() ? nullptr : &it->second;
}

PhraseTable load_phrase_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot read " + path);
  PhraseTable table;
  std::string line;
  int lineno = 0;
  const std::string sep = " ||| ";
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::size_t p1 = line.find(sep);
    std::size_t p2 = p1 == std::string::npos ? p1 : line.find(sep, p1 + sep.size());
    if (p1 == std::string::npos || p2 == std::string::npos)
      fail("phrase table parse error at line " + std::to_string(lineno) + ": missing field separator");
    std::string src = line.substr(0, p1);
    PhraseCandidate cand;
    cand.target = line.substr(p1 + sep.size(), p2 - p1 - sep.size());
    std::istringstream scores(line.substr(p2 + sep.size()));
    int n = 0;
    double s;
    while (scores >> s) {
      if (n < 4) cand.scores[std::size_t(n)] = s;
      ++n;
    }
    if (n != 4)
      fail("phrase table parse error at line " + std::to_string(lineno) + ": expected 4 scores, got " + std::to_string(n));
    for (double v : cand.scores)
      if (!(v >= 0.0) || !std::isfinite(v))
        fail("phrase table parse error at line " + std::to_string(lineno) + ": negative or non-finite score");
    if (src.empty() || cand.target.empty())
      fail("phrase table parse error at line " + std::to_string(lineno) + ": empty phrase");
    table.add(src, std::move(cand));
  }
  return table;
}

void save_phrase_table(const std::string& path,
                       const std::vector<std::pair<std::string, PhraseCandidate>>& entries) {
  std::ofstream out(path);
  if (!out) fail("cannot write " + path);
  for (const auto& [src, cand] : entries) {
    out << src << " ||| " << cand.target << " |||";
    for (double s : cand.scores) out << ' ' << s;
    out << '\n';
  }
}

std::optional<std::string> best_translation(const PhraseTable& table, const std::string& phrase) {
  const auto* cands = table.lookup(phrase);
  if (!cands || cands->empty()) return std::nullopt;
  const PhraseCandidate* best = &(*cands)[0];
  for (const auto& c : *cands) {
    double m = c.mean_score(), bm = best->mean_score();
    if (m > bm || (m == bm && c.target < best->target)) best = &c;
  }
  return best->target;
}

WordFreq count_words(const std::vector<std::vector<std::string>>& corpus) {
  WordFreq freq;
  for (const auto& sent : corpus)
    for (const auto& w : sent) ++freq[w];
  return freq;
}

std::vector<Span> find_rare_spans(const std::vector<std::string>& words, const WordFreq& freq,
                                  long threshold, const PhraseTable& table) {
  std::vector<Span> spans;
  int n = int(words.size());
  int next_free = 0;
  for (int i = 0; i < n; ++i) {
    if (i < next_free) continue;
    auto it = freq.find(words[std::size_t(i)]);
    long f = it == freq.end() ? 0 : it->second;
    if (f >= threshold) continue;
    // longest table phrase covering word i, not crossing an earlier span
    Span best{i, i + 1};
    int max_len = std::max(1, table.max_phrase_len());
    for (int b = std::max(next_free, i - max_len + 1); b <= i; ++b) {
      for (int e = std::min(n, b + max_len); e > i; --e) {
        if (e - b <= best.end - best.begin) break;
        if (table.contains(join(words, b, e))) {
          best = Span{b, e};
          break;
        }
      }
    }
    spans.push_back(best);
    next_free = best.end;
  }
  return spans;
}

AnnotatedSentence annotate(const std::vector<std::string>& words, const std::vector<Span>& spans,
                           const PhraseTable& table, const BpeCodes& codes) {
  AnnotatedSentence out;
  std::size_t si = 0;
  auto emit_word = [&](int i) {
    for (auto& p : apply_bpe_word(words[std::size_t(i)], codes))
      out.items.push_back(AnnotItem{AnnotItem::kPiece, std::move(p)});
  };
  for (int i = 0; i < int(words.size());) {
    if (si < spans.size() && spans[si].begin == i) {
      const Span& sp = spans[si];
      auto sugg = best_translation(table, join(words, sp.begin, sp.end));
      if (sugg) {
        AnnotationRecord rec;
        rec.begin = sp.begin;
        rec.end = sp.end;
        rec.suggestion = split_ws(*sugg);
        rec.open_pos = int(out.items.size());
        out.items.push_back(AnnotItem{AnnotItem::kOpen, {}});
        for (int j = sp.begin; j < sp.end; ++j) emit_word(j);
        rec.sep_pos = int(out.items.size());
        out.items.push_back(AnnotItem{AnnotItem::kSep, {}});
        for (const auto& w : rec.suggestion)
          for (auto& p : apply_bpe_word(w, codes)) {
            rec.suggestion_pieces.push_back(p);
            out.items.push_back(AnnotItem{AnnotItem::kPiece, std::move(p)});
          }
        rec.close_pos = int(out.items.size());
        out.items.push_back(AnnotItem{AnnotItem::kClose, {}});
        out.records.push_back(std::move(rec));
      } else {
        for (int j = sp.begin; j < sp.end; ++j) emit_word(j);
      }
      i = sp.end;
      ++si;
    } else {
      emit_word(i);
      ++i;
    }
  }
  return out;
}

std::vector<Token> strip_annotations(const AnnotatedSentence& s) {
  std::vector<Token> out;
  bool in_suggestion = false;
  for (const auto& item : s.items) {
    switch (item.kind) {
      case AnnotItem::kOpen:
        break;
      case AnnotItem::kSep:
        in_suggestion = true;
        break;
      case AnnotItem::kClose:
        in_suggestion = false;
        break;
      case AnnotItem::kPiece:
        if (!in_suggestion) out.push_back(item.piece);
        break;
    }
  }
  return out;
}

std::vector<int> encode(const AnnotatedSentence& s, const Vocabulary& vocab) {
  std::vector<int> out;
  out.reserve(s.items.size());
  for (const auto& item : s.items) {
    switch (item.kind) {
      case AnnotItem::kOpen: out.push_back(kAnnotOpen); break;
      case AnnotItem::kSep: out.push_back(kAnnotSep); break;
      case AnnotItem::kClose: out.push_back(kAnnotClose); break;
      case AnnotItem::kPiece: {
        auto id = vocab.id_of(render_piece(item.piece));
        out.push_back(id ? *id : int(kPad));
        break;
      }
    }
  }
  return out;
}

std::string render(const AnnotatedSentence& s) {
  std::string out;
  for (const auto& item : s.items) {
    if (!out.empty()) out += ' ';
    switch (item.kind) {
      case AnnotItem::kOpen: out += "#"; break;
      case AnnotItem::kSep: out += "##"; break;
      case AnnotItem::kClose: out += "#"; break;
      case AnnotItem::kPiece: out += render_piece(item.piece); break;
    }
  }
  return out;
}

AnnotatedSentence parse_annotated(const std::string& line) {
  AnnotatedSentence out;
  enum State { kOutside, kSourceSpan, kSuggestion } state = kOutside;
  AnnotationRecord rec;
  for (const auto& tok : split_ws(line)) {
    if (tok == "#" && state == kOutside) {
      rec = AnnotationRecord{};
      rec.open_pos = int(out.items.size());
      out.items.push_back(AnnotItem{AnnotItem::kOpen, {}});
      state = kSourceSpan;
    } else if (tok == "##" && state == kSourceSpan) {
      rec.sep_pos = int(out.items.size());
      out.items.push_back(AnnotItem{AnnotItem::kSep, {}});
      state = kSuggestion;
    } else if (tok == "#" && state == kSuggestion) {
      rec.close_pos = int(out.items.size());
      out.items.push_back(AnnotItem{AnnotItem::kClose, {}});
      rec.suggestion = detokenize(rec.suggestion_pieces);
      out.records.push_back(rec);
      state = kOutside;
    } else {
      Token p = parse_piece(tok);
      if (state == kSuggestion) rec.suggestion_pieces.push_back(p);
      out.items.push_back(AnnotItem{AnnotItem::kPiece, std::move(p)});
    }
  }
  if (state != kOutside) fail("parse_annotated: unbalanced annotation markers");
  return out;
}

CoverageStats coverage_stats(const std::vector<std::vector<std::string>>& corpus,
                             const PhraseTable& table,
                             const std::vector<std::vector<std::string>>& references,
                             long threshold) {
  if (corpus.size() != references.size())
    fail("coverage_stats: corpus/reference length mismatch");
  WordFreq freq = count_words(corpus);
  CoverageStats stats;
  for (std::size_t s = 0; s < corpus.size(); ++s) {
    std::set<std::string> ref_words(references[s].begin(), references[s].end());
    for (const auto& w : corpus[s]) {
      auto it = freq.find(w);
      long f = it == freq.end() ? 0 : it->second;
      if (f >= threshold) continue;
      ++stats.rare_words;
      auto sugg = best_translation(table, w);
      if (!sugg) continue;
      bool all_in_ref = true;
      for (const auto& sw : split_ws(*sugg))
        if (!ref_words.count(sw)) { all_in_ref = false; break; }
      if (all_in_ref) ++stats.covered;
    }
  }
  return stats;
}

}  // namespace copynmt
