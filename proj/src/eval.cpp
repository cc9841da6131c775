#include "copynmt/eval.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "copynmt/training.hpp"

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

CorpusScore bleu(const WordCorpus& hypotheses, const WordCorpus& references) {
  if (hypotheses.size() != references.size()) fail("bleu: corpus length mismatch");
  constexpr int kMaxN = 4;
  long matched[kMaxN] = {0, 0, 0, 0};
  long total[kMaxN] = {0, 0, 0, 0};
  long hyp_len = 0, ref_len = 0;
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    hyp_len += long(hypotheses[s].size());
    ref_len += long(references[s].size());
    for (int n = 1; n <= kMaxN; ++n) {
      auto hg = ngrams(hypotheses[s], n);
      auto rg = ngrams(references[s], n);
      for (const auto& [g, c] : hg) {
        total[n - 1] += c;
        auto it = rg.find(g);
        if (it != rg.end()) matched[n - 1] += std::min(c, it->second);
      }
    }
  }
  CorpusScore out{"bleu", 0.0, double(matched[0]), double(total[0])};
  if (hyp_len == 0) return out;
  double log_prec = 0.0;
  for (int n = 0; n < kMaxN; ++n) {
    if (matched[n] == 0 || total[n] == 0) return out;  // geometric mean collapses to 0
    log_prec += std::log(double(matched[n]) / double(total[n]));
  }
  double bp = hyp_len >= ref_len ? 1.0 : std::exp(1.0 - double(ref_len) / double(hyp_len));
  out.value = bp * std::exp(log_prec / double(kMaxN));
  return out;
}

CorpusScore mean_gleu(const WordCorpus& hypotheses, const WordCorpus& references) {
  if (hypotheses.size() != references.size()) fail("gleu: corpus length mismatch");
  double sum = 0.0;
  for (std::size_t s = 0; s < hypotheses.size(); ++s)
    sum += gleu_score(hypotheses[s], references[s]);
  CorpusScore out{"gleu", 0.0, sum, double(hypotheses.size())};
  if (!hypotheses.empty()) out.value = sum / double(hypotheses.size());
  return out;
}

CorpusScore corpus_hit(const WordCorpus& hypotheses,
                       const std::vector<std::vector<AnnotationRecord>>& records) {
  if (hypotheses.size() != records.size()) fail("hit: corpus length mismatch");
  long matched = 0, total = 0;
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    auto hyp_counts = multiset(hypotheses[s]);
    std::vector<std::string> sugg;
    for (const auto& r : records[s]) sugg.insert(sugg.end(), r.suggestion.begin(), r.suggestion.end());
    total += long(sugg.size());
    for (const auto& [w, c] : multiset(sugg)) {
      auto it = hyp_counts.find(w);
      if (it != hyp_counts.end()) matched += std::min(c, it->second);
    }
  }
  CorpusScore out{"hit", 0.0, double(matched), double(total)};
  if (total == 0) out.defined = false;
  else out.value = double(matched) / double(total);
  return out;
}

CorpusScore sug(const WordCorpus& hypotheses,
                const std::vector<std::vector<AnnotationRecord>>& records, bool unique_words) {
  if (hypotheses.size() != records.size()) fail("sug: corpus length mismatch");
  long matched = 0, total = 0;
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    auto hyp_counts = multiset(hypotheses[s]);
    std::vector<std::string> sugg;
    for (const auto& r : records[s]) sugg.insert(sugg.end(), r.suggestion.begin(), r.suggestion.end());
    auto sugg_counts = multiset(sugg);
    for (const auto& [w, c] : sugg_counts) {
      long count = unique_words ? 1 : c;
      total += count;
      auto it = hyp_counts.find(w);
      if (it != hyp_counts.end()) matched += std::min(count, it->second);
    }
  }
  CorpusScore out{"sug", 0.0, double(matched), double(total)};
  if (total > 0) out.value = double(matched) / double(total);
  return out;
}

CorpusScore sac(const WordCorpus& hypotheses,
                const std::vector<std::vector<AnnotationRecord>>& records,
                const WordCorpus& references) {
  if (hypotheses.size() != records.size() || hypotheses.size() != references.size())
    fail("sac: corpus length mismatch");
  long matched = 0, total = 0;
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    auto hyp_counts = multiset(hypotheses[s]);
    auto ref_counts = multiset(references[s]);
    std::vector<std::string> sugg;
    for (const auto& r : records[s]) sugg.insert(sugg.end(), r.suggestion.begin(), r.suggestion.end());
    for (const auto& [w, c] : multiset(sugg)) {
      auto rit = ref_counts.find(w);
      if (rit == ref_counts.end()) continue;
      long confirmed = std::min(c, rit->second);
      total += confirmed;
      auto hit_ = hyp_counts.find(w);
      if (hit_ != hyp_counts.end()) matched += std::min(confirmed, hit_->second);
    }
  }
  CorpusScore out{"sac", 0.0, double(matched), double(total)};
  if (total == 0) out.defined = false;
  else out.value = double(matched) / double(total);
  return out;
}

std::string format_score_line(const CorpusScore& s) {
  std::ostringstream out;
  out << s.name << '\t';
  if (s.defined) out << s.value;
  else out << "n/a";
  out << '\t' << s.numerator << '\t' << s.denominator;
  return out.str();
}

void write_report(const std::string& path, const std::vector<CorpusScore>& scores) {
  std::ofstream out(path);
  if (!out) fail("cannot write " + path);
  for (const auto& s : scores) out << format_score_line(s) << '\n';
}

void attention_dump(const DecodeTrace& trace, const std::vector<std::string>& src_tokens,
                    const std::vector<std::string>& tgt_tokens, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail("cannot write " + path);
  out << "attention v1 rows=" << trace.attn.size() << " cols="
      << (trace.attn.empty() ? 0 : trace.attn[0].size()) << '\n';
  out << "src:";
  for (const auto& t : src_tokens) out << '\t' << t;
  out << '\n';
  out << "tgt:";
  for (const auto& t : tgt_tokens) out << '\t' << t;
  out << '\n';
  out << "gamma:";
  for (double g : trace.gamma) out << '\t' << g;
  out << '\n';
  for (const auto& row : trace.attn) {
    for (int j = 0; j < row.size(); ++j) out << (j ? "\t" : "") << row[j];
    out << '\n';
  }
  if (!out) fail("write failed: " + path);
}

}  // namespace copynmt
