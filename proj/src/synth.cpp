#include "copynmt/synth.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "copynmt/expert.hpp"

namespace copynmt {

namespace {

std::string random_word(Rng& rng, int len, char base) {
  std::string w;
  for (int i = 0; i < len; ++i) w.push_back(char(base + int(rng.index(26))));
  return w;
}

// word with all-distinct letters: content-based attention can only address a
// character span unambiguously when no letter repeats inside it
std::string random_distinct_word(Rng& rng, int len, char base) {
  std::string alpha;
  for (int i = 0; i < 26; ++i) alpha.push_back(char(base + i));
  for (int i = 0; i < len; ++i) {
    std::size_t j = std::size_t(i) + rng.index(std::size_t(26 - i));
    std::swap(alpha[std::size_t(i)], alpha[j]);
  }
  return alpha.substr(0, std::size_t(len));
}

// n distinct words; word i always contains letter (base + i%26) so every
// letter of the alphabet is reachable through BPE
std::vector<std::string> word_pool(Rng& rng, int n, int min_len, int max_len, char base,
                                   std::set<std::string>& used, bool distinct = false) {
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) {
    char cover = char(base + i % 26);  // every letter reachable through BPE
    std::string w;
    do {
      int len = min_len + int(rng.index(std::size_t(max_len - min_len + 1)));
      if (distinct) {
        w = random_distinct_word(rng, len + 1, base);
        if (w.find(cover) == std::string::npos) w.back() = cover;
      } else {
        w = random_word(rng, len, base);
        w.push_back(cover);
      }
    } while (used.count(w));
    used.insert(w);
    out.push_back(std::move(w));
  }
  return out;
}

}  // namespace

void SynthConfig::validate() const {
  if (n_common < 1 || n_rare < 1) fail("SynthConfig: pools must be non-empty");
  if (inject_prob < 0.0 || inject_prob > 1.0) fail("SynthConfig: inject_prob must be in [0, 1]");
  if (expert_error_rate < 0.0 || expert_error_rate > 1.0)
    fail("SynthConfig: expert_error_rate must be in [0, 1]");
  if (heldout_rare_fraction < 0.0 || heldout_rare_fraction >= 1.0)
    fail("SynthConfig: heldout_rare_fraction must be in [0, 1)");
  if (min_len < 1 || max_len < min_len) fail("SynthConfig: bad sentence length range");
  int heldout = int(std::ceil(heldout_rare_fraction * double(n_rare)));
  if (n_rare - heldout < 1)
    fail("SynthConfig: rare pool too small for the requested heldout fraction");
}

Lexicon corrupt_lexicon(const Lexicon& lexicon, double rate, std::uint64_t seed) {
  if (rate < 0.0 || rate > 1.0) fail("corrupt_lexicon: rate must be in [0, 1]");
  Rng rng(seed);
  Lexicon out = lexicon;
  std::size_t n = lexicon.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (rng.next_double() >= rate) continue;
    if (n < 2) fail("corrupt_lexicon: cannot corrupt a single-entry lexicon");
    std::size_t j = (i + 1 + rng.index(n - 1)) % n;  // any entry but i
    out[i].second = lexicon[j].second;
  }
  return out;
}

SynthOutput generate(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  SynthOutput out;

  std::set<std::string> used_src, used_tgt;
  // Rare words are short (4 chars) with all-distinct letters. Held-out rare
  // words never occur in the BPE training corpus, so their suggestions stay
  // character-split; the copy mechanism has to walk those characters by
  // content-based attention, which is only unambiguous when no letter repeats
  // within the span. That matches the paper's setting, where suggestions are
  // ordinary words of a few distinct BPE pieces, not long random strings.
  auto common = word_pool(rng, cfg.n_common, 3, 5, 'a', used_src);
  auto rare = word_pool(rng, cfg.n_rare, 3, 3, 'a', used_src, /*distinct=*/true);
  auto common_tgt = word_pool(rng, cfg.n_common, 3, 5, 'A', used_tgt);
  auto rare_tgt = word_pool(rng, cfg.n_rare, 3, 3, 'A', used_tgt, /*distinct=*/true);

  for (int i = 0; i < cfg.n_common; ++i)
    out.lexicon.emplace_back(common[std::size_t(i)], common_tgt[std::size_t(i)]);
  Lexicon rare_lex;
  for (int i = 0; i < cfg.n_rare; ++i) {
    out.lexicon.emplace_back(rare[std::size_t(i)], rare_tgt[std::size_t(i)]);
    rare_lex.emplace_back(rare[std::size_t(i)], rare_tgt[std::size_t(i)]);
  }
  out.expert = corrupt_lexicon(rare_lex, cfg.expert_error_rate, cfg.seed ^ 0xe4e4ULL);

  int n_heldout = int(std::ceil(cfg.heldout_rare_fraction * double(cfg.n_rare)));
  std::vector<std::string> train_rare(rare.begin(), rare.end() - n_heldout);
  out.heldout_rare.assign(rare.end() - n_heldout, rare.end());

  std::unordered_map<std::string, std::string> mapping;
  for (const auto& [s, t] : out.lexicon) mapping[s] = t;

  // Zipf weights over common words
  std::vector<double> cum;
  double total = 0.0;
  for (int i = 0; i < cfg.n_common; ++i) {
    total += 1.0 / std::pow(double(i + 1), cfg.zipf_exponent);
    cum.push_back(total);
  }
  auto draw_common = [&]() -> const std::string& {
    double u = rng.next_double() * total;
    std::size_t lo = 0, hi = cum.size() - 1;
    while (lo < hi) {
      std::size_t mid = (lo + hi) / 2;
      if (cum[mid] < u) lo = mid + 1;
      else hi = mid;
    }
    return common[lo];
  };

  auto make_sentence = [&](const std::vector<std::string>& rare_pool,
                           std::vector<std::string>& src, std::vector<std::string>& tgt) {
    int len = cfg.min_len + int(rng.index(std::size_t(cfg.max_len - cfg.min_len + 1)));
    src.clear();
    for (int i = 0; i < len; ++i) {
      if (!rare_pool.empty() && rng.next_double() < cfg.inject_prob)
        src.push_back(rare_pool[rng.index(rare_pool.size())]);
      else
        src.push_back(draw_common());
    }
    tgt.clear();
    for (const auto& w : src) tgt.push_back(mapping[w]);
    if (cfg.reorder && tgt.size() > 1) {
      std::size_t i = rng.index(tgt.size() - 1);
      std::swap(tgt[i], tgt[i + 1]);
    }
  };

  // regenerate on collision so the four splits stay pairwise disjoint
  std::set<std::vector<std::string>> seen;
  auto fill = [&](ParallelSplit& split, int n, const std::vector<std::string>& rare_pool) {
    for (int s = 0; s < n; ++s) {
      std::vector<std::string> src, tgt;
      do {
        make_sentence(rare_pool, src, tgt);
      } while (!seen.insert(src).second);
      split.src.push_back(std::move(src));
      split.tgt.push_back(std::move(tgt));
    }
  };
  fill(out.train, cfg.train_size, train_rare);
  fill(out.finetune, cfg.finetune_size, train_rare);
  fill(out.dev, cfg.dev_size, rare);
  fill(out.test, cfg.test_size, rare);
  return out;
}

void write_synth(const SynthOutput& out, const SynthConfig& cfg, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto join = [](const std::vector<std::string>& words) {
    std::string s;
    for (const auto& w : words) {
      if (!s.empty()) s += ' ';
      s += w;
    }
    return s;
  };
  auto dump = [&](const ParallelSplit& split, const std::string& name) {
    std::vector<std::string> src_lines, tgt_lines;
    for (const auto& s : split.src) src_lines.push_back(join(s));
    for (const auto& t : split.tgt) tgt_lines.push_back(join(t));
    write_lines(dir + "/" + name + ".src", src_lines);
    write_lines(dir + "/" + name + ".tgt", tgt_lines);
  };
  dump(out.train, "train");
  dump(out.finetune, "finetune");
  dump(out.dev, "dev");
  dump(out.test, "test");

  std::vector<std::pair<std::string, PhraseCandidate>> entries;
  for (const auto& [src, tgt] : out.expert)
    entries.emplace_back(src, PhraseCandidate{tgt, {1.0, 1.0, 1.0, 1.0}});
  save_phrase_table(dir + "/expert.pt", entries);

  std::ofstream mf(dir + "/manifest.txt");
  if (!mf) fail("cannot write " + dir + "/manifest.txt");
  mf << "synth v1\n";
  mf << "seed\t" << cfg.seed << '\n';
  mf << "train\t" << out.train.src.size() << '\n';
  mf << "finetune\t" << out.finetune.src.size() << '\n';
  mf << "dev\t" << out.dev.src.size() << '\n';
  mf << "test\t" << out.test.src.size() << '\n';
  mf << "common\t" << cfg.n_common << '\n';
  mf << "rare\t" << cfg.n_rare << '\n';
  mf << "heldout_rare\t" << out.heldout_rare.size() << '\n';
  mf << "expert_error_rate\t" << cfg.expert_error_rate << '\n';
}

}  // namespace copynmt
