#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "copynmt/eval.hpp"
#include "copynmt/training.hpp"

using namespace copynmt;

namespace {

AnnotationRecord rec(std::vector<std::string> sugg) {
  AnnotationRecord r;
  r.suggestion = std::move(sugg);
  return r;
}

std::vector<std::string> random_sentence(Rng& rng, int max_len, int alphabet = 5) {
  static const char* letters[] = {"a", "b", "c", "d", "e", "f", "g", "h"};
  std::vector<std::string> out;
  int len = 1 + int(rng.index(std::size_t(max_len)));
  for (int i = 0; i < len; ++i) out.push_back(letters[rng.index(std::size_t(alphabet))]);
  return out;
}

// independent corpus BLEU from the textbook formula
double oracle_bleu(const WordCorpus& hyp, const WordCorpus& ref) {
  long matched[4] = {}, total[4] = {};
  long hl = 0, rl = 0;
  for (std::size_t s = 0; s < hyp.size(); ++s) {
    hl += long(hyp[s].size());
    rl += long(ref[s].size());
    for (int n = 1; n <= 4; ++n) {
      std::map<std::string, long> hc, rc;
      auto key = [&](const std::vector<std::string>& v, std::size_t i) {
        std::string k;
        for (int t = 0; t < n; ++t) k += v[i + std::size_t(t)] + "\x01";
        return k;
      };
      for (std::size_t i = 0; i + std::size_t(n) <= hyp[s].size(); ++i) ++hc[key(hyp[s], i)];
      for (std::size_t i = 0; i + std::size_t(n) <= ref[s].size(); ++i) ++rc[key(ref[s], i)];
      for (const auto& [k, c] : hc) {
        total[n - 1] += c;
        auto it = rc.find(k);
        if (it != rc.end()) matched[n - 1] += std::min(c, it->second);
      }
    }
  }
  double lp = 0.0;
  for (int n = 0; n < 4; ++n) {
    if (total[n] == 0 || matched[n] == 0) return 0.0;
    lp += std::log(double(matched[n]) / double(total[n]));
  }
  double bp = hl >= rl ? 1.0 : std::exp(1.0 - double(rl) / double(hl));
  return bp * std::exp(lp / 4.0);
}

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("bleu: identity, zero 4-gram collapse, brevity penalty") {
  WordCorpus ref{{"the", "cat", "sat", "on", "the", "mat"}};
  CHECK(bleu(ref, ref).value == doctest::Approx(1.0));

  // no 4-gram match anywhere -> geometric mean collapses to 0
  WordCorpus hyp{{"the", "cat", "was", "on", "a", "mat"}};
  CHECK(bleu(hyp, ref).value == 0.0);

  // perfect prefix, shorter: precisions 1, score = brevity penalty
  WordCorpus pre{{"the", "cat", "sat", "on"}};
  CHECK(bleu(pre, ref).value == doctest::Approx(std::exp(1.0 - 6.0 / 4.0)).epsilon(1e-12));

  CHECK(bleu({}, {}).value == 0.0);
  CHECK_THROWS_AS(bleu(hyp, {}), std::runtime_error);
}

TEST_CASE("bleu matches an independent recomputation on random corpora") {
  Rng rng(515);
  for (int trial = 0; trial < 30; ++trial) {
    WordCorpus hyp, ref;
    for (int s = 0; s < 10; ++s) {
      hyp.push_back(random_sentence(rng, 10));
      ref.push_back(random_sentence(rng, 10));
    }
    // make matches likely: copy some references verbatim
    for (int s = 0; s < 4; ++s) hyp[std::size_t(s)] = ref[std::size_t(s)];
    CHECK(std::abs(bleu(hyp, ref).value - oracle_bleu(hyp, ref)) < 1e-12);
  }
}

TEST_CASE("mean_gleu averages the sentence scores") {
  WordCorpus hyp{{"a", "b", "c", "d"}, {"a", "b", "c"}};
  WordCorpus ref{{"a", "b", "c"}, {"a", "b", "c"}};
  // sentence scores 0.6 and 1.0
  CorpusScore s = mean_gleu(hyp, ref);
  CHECK(s.value == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(s.numerator == doctest::Approx(1.6));
  CHECK(s.denominator == 2.0);
  CHECK(mean_gleu({}, {}).value == 0.0);
}

TEST_CASE("corpus_hit pools matches over the corpus") {
  WordCorpus hyp{{"x", "house"}, {"y"}};
  std::vector<std::vector<AnnotationRecord>> recs{{rec({"house", "white"})}, {rec({"z"})}};
  CorpusScore s = corpus_hit(hyp, recs);
  CHECK(s.value == doctest::Approx(1.0 / 3.0));
  CHECK(s.numerator == 1.0);
  CHECK(s.denominator == 3.0);

  // no suggestions anywhere -> undefined
  CHECK(!corpus_hit({{"a"}}, {{}}).defined);
}

TEST_CASE("sug: 3 of 4 suggestion words present = 0.75; unique_words collapses repeats") {
  WordCorpus hyp{{"white", "house", "today", "red"}};
  std::vector<std::vector<AnnotationRecord>> recs{{rec({"white", "house"}), rec({"red", "car"})}};
  CorpusScore s = sug(hyp, recs);
  CHECK(s.value == doctest::Approx(0.75).epsilon(1e-12));

  // multiplicity: "b b" suggested, hypothesis has one "b"
  std::vector<std::vector<AnnotationRecord>> dup{{rec({"b", "b"})}};
  CHECK(sug({{"b"}}, dup).value == doctest::Approx(0.5));
  CHECK(sug({{"b"}}, dup, true).value == doctest::Approx(1.0));
}

TEST_CASE("sac: confirmed-by-reference denominator, n/a when empty") {
  // suggestions: white house car; reference confirms white, house;
  // hypothesis contains white only -> 1/2
  WordCorpus hyp{{"white", "today"}};
  WordCorpus ref{{"white", "house", "today"}};
  std::vector<std::vector<AnnotationRecord>> recs{{rec({"white", "house", "car"})}};
  CorpusScore s = sac(hyp, recs, ref);
  CHECK(s.defined);
  CHECK(s.value == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(s.denominator == 2.0);

  // reference confirms nothing -> undefined, rendered as n/a
  CorpusScore und = sac(hyp, recs, {{"nothing", "matches"}});
  CHECK(!und.defined);
  CHECK(format_score_line(und).find("n/a") != std::string::npos);
}

TEST_CASE("format_score_line and write_report") {
  CorpusScore s{"bleu", 0.25, 1.0, 4.0, true};
  CHECK(format_score_line(s) == "bleu\t0.25\t1\t4");

  std::string path = tmp_path("copynmt_report_test.txt");
  write_report(path, {s, CorpusScore{"sac", 0.0, 0.0, 0.0, false}});
  std::ifstream in(path);
  std::string l1, l2;
  std::getline(in, l1);
  std::getline(in, l2);
  CHECK(l1 == "bleu\t0.25\t1\t4");
  CHECK(l2 == "sac\tn/a\t0\t0");
  std::remove(path.c_str());
}

TEST_CASE("attention_dump layout") {
  DecodeTrace trace;
  Vec a1(2), a2(2);
  a1 << 0.25, 0.75;
  a2 << 1.0, 0.0;
  trace.attn = {a1, a2};
  trace.gamma = {0.5, 0.125};
  std::string path = tmp_path("copynmt_attn_test.txt");
  attention_dump(trace, {"casa", "azul"}, {"blue", "house"}, path);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "attention v1 rows=2 cols=2");
  std::getline(in, line);
  CHECK(line == "src:\tcasa\tazul");
  std::getline(in, line);
  CHECK(line == "tgt:\tblue\thouse");
  std::getline(in, line);
  CHECK(line == "gamma:\t0.5\t0.125");
  std::getline(in, line);
  CHECK(line == "0.25\t0.75");
  std::getline(in, line);
  CHECK(line == "1\t0");
  std::remove(path.c_str());
}
