#include "copynmt/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace fs = std::filesystem;

namespace copynmt {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string part;
  while (std::getline(in, part, ',')) {
    part = trim(part);
    if (!part.empty()) out.push_back(part);
  }
  return out;
}

}  // namespace

PipelineConfig PipelineConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("config: cannot open " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ValidationError("config: line " + std::to_string(lineno) + " is not key=value: " + t);
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (key.empty() || key.find('.') == std::string::npos)
      throw ValidationError("config: line " + std::to_string(lineno) +
                            " has a malformed key (want section.name): " + t);
    if (kv.count(key))
      throw ValidationError("config: duplicate key " + key + " at line " + std::to_string(lineno));
    kv[key] = value;
  }
  return from_map(std::move(kv));
}

PipelineConfig PipelineConfig::from_map(std::map<std::string, std::string> kv) {
  PipelineConfig c;
  c.kv_ = std::move(kv);
  return c;
}

std::string PipelineConfig::get(const std::string& key, const std::string& fallback) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? fallback : it->second;
}

std::string PipelineConfig::require(const std::string& key) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) throw ValidationError("config: missing required key " + key);
  return it->second;
}

int PipelineConfig::geti(const std::string& key, int fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  try {
    std::size_t used = 0;
    int v = std::stoi(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ValidationError("config: key " + key + " wants an integer, got \"" + it->second + "\"");
  }
}

double PipelineConfig::getd(const std::string& key, double fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  try {
    std::size_t used = 0;
    double v = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ValidationError("config: key " + key + " wants a number, got \"" + it->second + "\"");
  }
}

bool PipelineConfig::getb(const std::string& key, bool fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  throw ValidationError("config: key " + key + " wants true/false, got \"" + it->second + "\"");
}

std::uint64_t PipelineConfig::content_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [k, v] : kv_) h = fnv1a(v, fnv1a(k, h) * 31);
  return h;
}

void PipelineConfig::validate_paths() const {
  for (const auto& [k, v] : kv_) {
    if (k.rfind("data.", 0) != 0 || k == "data.work_dir") continue;
    if (!fs::exists(v)) throw ValidationError("config: " + k + " points to missing file " + v);
  }
}

WorkDirLock::WorkDirLock(const std::string& work_dir) {
  fs::create_directories(work_dir);
  path_ = work_dir + "/.lock";
  int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    path_.clear();
    fail("work dir " + work_dir + " is locked by another run (remove .lock if stale)");
  }
  ::close(fd);
}

WorkDirLock::~WorkDirLock() {
  if (!path_.empty()) ::unlink(path_.c_str());
}

void Manifest::put(const std::string& key, const std::string& value) {
  for (auto& e : entries_)
    if (e.first == key) {
      e.second = value;
      return;
    }
  entries_.emplace_back(key, value);
}

void Manifest::put_hash(const std::string& key, const std::string& file_path) {
  std::ostringstream h;
  h << std::hex << file_hash(file_path);
  put(key, h.str());
}

void Manifest::save() const {
  std::ofstream out(path_);
  if (!out) fail("manifest: cannot write " + path_);
  for (const auto& [k, v] : entries_) out << k << '\t' << v << '\n';
}

std::uint64_t file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("file_hash: cannot open " + path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[65536];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
    h = fnv1a(buf, std::size_t(in.gcount()), h);
  return h;
}

namespace {

WordCorpus tokenize_file(const std::string& path) {
  WordCorpus out;
  for (const auto& line : read_lines(path)) out.push_back(tokenize(line));
  return out;
}

struct RawSplit {
  WordCorpus src, tgt;
};

RawSplit load_split(const PipelineConfig& cfg, const std::string& name, bool required) {
  RawSplit s;
  std::string src_key = "data." + name + "_src", tgt_key = "data." + name + "_tgt";
  if (!cfg.has(src_key)) {
    if (required) throw ValidationError("config: missing required key " + src_key);
    return s;
  }
  s.src = tokenize_file(cfg.require(src_key));
  s.tgt = tokenize_file(cfg.require(tgt_key));
  if (s.src.size() != s.tgt.size())
    fail("split " + name + ": source has " + std::to_string(s.src.size()) +
         " lines but target has " + std::to_string(s.tgt.size()));
  return s;
}

std::vector<int> encode_target(const std::vector<Token>& pieces, const Vocabulary& vocab) {
  std::vector<int> ids;
  ids.reserve(pieces.size());
  for (const auto& t : pieces) {
    auto id = vocab.id_of(render_piece(t));
    ids.push_back(id ? *id : kPad);
  }
  return ids;
}

}  // namespace

Prepared prepare_data(const PipelineConfig& cfg, Manifest& manifest) {
  cfg.validate_paths();
  std::string wd = cfg.work_dir();
  fs::create_directories(wd);

  RawSplit train = load_split(cfg, "train", true);
  RawSplit finetune = load_split(cfg, "finetune", false);
  RawSplit dev = load_split(cfg, "dev", true);
  RawSplit test = load_split(cfg, "test", false);

  Prepared out;
  bool expert_on = cfg.getb("expert.enabled", true);
  if (expert_on) out.table = load_phrase_table(cfg.require("data.phrase_table"));
  long threshold = cfg.geti("expert.threshold", 5);

  out.word_freq = count_words(train.src);

  // BPE over plain (unannotated) words of both training sides
  {
    WordCorpus joint = train.src;
    joint.insert(joint.end(), train.tgt.begin(), train.tgt.end());
    out.codes = learn_bpe(joint, cfg.geti("bpe.n_ops", 500));
  }
  save_bpe_codes(wd + "/bpe.codes", out.codes);

  struct Encoded {
    std::vector<AnnotatedSentence> ann;
    std::vector<std::vector<Token>> tgt_pieces;
  };
  auto annotate_split = [&](const RawSplit& raw) {
    Encoded e;
    for (std::size_t i = 0; i < raw.src.size(); ++i) {
      std::vector<Span> spans;
      if (expert_on)
        spans = find_rare_spans(raw.src[i], out.word_freq, threshold, out.table);
      e.ann.push_back(annotate(raw.src[i], spans, out.table, out.codes));
      e.tgt_pieces.push_back(apply_bpe(raw.tgt[i], out.codes));
    }
    return e;
  };
  Encoded etrain = annotate_split(train);
  Encoded efinetune = annotate_split(finetune);
  Encoded edev = annotate_split(dev);
  Encoded etest = annotate_split(test);

  // vocabulary over the annotated training source (incl. suggestion pieces)
  // and the training target
  {
    std::vector<std::vector<Token>> src_pieces;
    for (const auto& a : etrain.ann) {
      std::vector<Token> row;
      for (const auto& it : a.items)
        if (it.kind == AnnotItem::kPiece) row.push_back(it.piece);
      src_pieces.push_back(std::move(row));
    }
    out.vocab = build_vocab(src_pieces, etrain.tgt_pieces);
  }

  // close the vocabulary over everything the codes can produce: any piece of
  // an unseen word is a single training character or a merge output, so add
  // both continuation variants of each (zero frequency, sorted for
  // determinism). Without this, held-out words would encode to <pad>.
  {
    std::set<std::string> pieces;
    auto add_surface = [&](const std::string& s) {
      pieces.insert(render_piece(Token{s, false}));
      pieces.insert(render_piece(Token{s, true}));
    };
    for (const WordCorpus* side : {&train.src, &train.tgt})
      for (const auto& sent : *side)
        for (const auto& w : sent)
          for (char c : w) add_surface(std::string(1, c));
    for (const auto& [a, b] : out.codes.merges) add_surface(a + b);
    for (const auto& s : pieces)
      if (!out.vocab.id_of(s)) out.vocab.add(s);
  }
  out.vocab.save(wd + "/vocab.txt");

  auto to_examples = [&](const Encoded& e, const RawSplit& raw) {
    std::vector<TrainExample> exs;
    for (std::size_t i = 0; i < e.ann.size(); ++i) {
      TrainExample ex;
      ex.src = encode(e.ann[i], out.vocab);
      ex.tgt = encode_target(e.tgt_pieces[i], out.vocab);
      ex.ref_words = raw.tgt[i];
      ex.records = e.ann[i].records;
      exs.push_back(std::move(ex));
    }
    return exs;
  };
  out.train = to_examples(etrain, train);
  out.finetune = to_examples(efinetune, finetune);
  out.dev = to_examples(edev, dev);
  out.test = to_examples(etest, test);
  out.test_src_words = test.src;
  out.test_annotated = etest.ann;

  auto dump_annotated = [&](const Encoded& e, const std::string& name) {
    if (e.ann.empty()) return;
    std::vector<std::string> lines;
    for (const auto& a : e.ann) lines.push_back(render(a));
    write_lines(wd + "/" + name + ".annotated.src", lines);
  };
  dump_annotated(etrain, "train");
  dump_annotated(efinetune, "finetune");
  dump_annotated(edev, "dev");
  dump_annotated(etest, "test");

  std::ostringstream ch;
  ch << std::hex << cfg.content_hash();
  manifest.put("config_hash", ch.str());
  manifest.put("vocab_size", std::to_string(out.vocab.size()));
  manifest.put("bpe_ops", std::to_string(out.codes.n_ops));
  manifest.put("expert_enabled", expert_on ? "true" : "false");
  for (const auto& name : {"train", "finetune", "dev", "test"})
    if (cfg.has(std::string("data.") + name + "_src")) {
      manifest.put_hash(std::string("hash.") + name + "_src",
                        cfg.require(std::string("data.") + name + "_src"));
      manifest.put_hash(std::string("hash.") + name + "_tgt",
                        cfg.require(std::string("data.") + name + "_tgt"));
    }
  if (expert_on) manifest.put_hash("hash.phrase_table", cfg.require("data.phrase_table"));
  manifest.save();
  return out;
}

namespace {

// stage state saved after every epoch so a killed run restarts bitwise
void save_stage_ckpt(const std::string& path, ModelParams& params, Adam& opt,
                     std::map<std::string, std::string> meta) {
  std::vector<std::pair<std::string, const Mat*>> extra;
  opt.moments1().visit([&](const std::string& n, Mat& m) { extra.emplace_back("adam_m." + n, &m); });
  opt.moments2().visit([&](const std::string& n, Mat& m) { extra.emplace_back("adam_v." + n, &m); });
  meta["adam_steps"] = std::to_string(opt.steps());
  save_checkpoint(path, params, meta, extra);
}

void restore_adam(Adam& opt, const Checkpoint& ck) {
  opt.moments1().visit([&](const std::string& n, Mat& m) {
    auto it = ck.extra.find("adam_m." + n);
    if (it != ck.extra.end()) m = it->second;
  });
  opt.moments2().visit([&](const std::string& n, Mat& m) {
    auto it = ck.extra.find("adam_v." + n);
    if (it != ck.extra.end()) m = it->second;
  });
  auto it = ck.meta.find("adam_steps");
  if (it != ck.meta.end()) opt.set_steps(std::stol(it->second));
}

double meta_d(const std::map<std::string, std::string>& meta, const std::string& key,
              double fallback) {
  auto it = meta.find(key);
  return it == meta.end() ? fallback : std::stod(it->second);
}

}  // namespace

void run_training(const PipelineConfig& cfg, const Prepared& data, Manifest& manifest,
                  const std::string& only_stage) {
  std::string wd = cfg.work_dir();
  std::vector<std::string> stages = split_csv(cfg.get("train.stages", "xent,finetune,rl"));
  if (stages.empty()) throw ValidationError("config: train.stages is empty");
  for (const auto& s : stages)
    if (s != "xent" && s != "finetune" && s != "rl")
      throw ValidationError("config: unknown stage \"" + s + "\" in train.stages");
  if (!only_stage.empty() &&
      std::find(stages.begin(), stages.end(), only_stage) == stages.end())
    throw ValidationError("config: requested stage \"" + only_stage + "\" not in train.stages");

  ModelConfig mc;
  mc.vocab = data.vocab.size();
  mc.dim = cfg.geti("model.dim", 64);
  mc.layers = cfg.geti("model.layers", 1);
  mc.dropout = cfg.getd("model.dropout", 0.2);
  mc.input_feed = cfg.getb("model.input_feed", true);
  mc.validate();
  std::uint64_t seed = std::uint64_t(cfg.geti("train.seed", 1));

  std::ofstream log(wd + "/train.log", std::ios::app);

  std::string prev_best;
  for (std::size_t si = 0; si < stages.size(); ++si) {
    const std::string& stage = stages[si];
    std::string last_path = wd + "/" + stage + ".last.ckpt";
    std::string best_path = wd + "/" + stage + ".best.ckpt";
    int total_epochs = stage == "xent"       ? cfg.geti("train.xent_epochs", 30)
                       : stage == "finetune" ? cfg.geti("train.finetune_epochs", 10)
                                             : cfg.geti("train.rl_epochs", 50);
    bool run_this = only_stage.empty() || only_stage == stage;
    if (!run_this) {
      if (fs::exists(best_path)) prev_best = best_path;
      continue;
    }

    ModelParams params = make_shell(mc);
    int start_epoch = 0;
    double resume_lr = -1.0, resume_best = -1.0;
    Checkpoint resume_ck;
    bool resumed = false;
    if (fs::exists(last_path)) {
      resume_ck = load_checkpoint(last_path);
      if (!(resume_ck.params.cfg == mc))
        fail("stage " + stage + ": checkpoint " + last_path + " has a different model config");
      params = std::move(resume_ck.params);
      start_epoch = int(meta_d(resume_ck.meta, "next_epoch", 0));
      resume_lr = meta_d(resume_ck.meta, "lr", -1.0);
      resume_best = meta_d(resume_ck.meta, "best_metric", -1.0);
      resumed = true;
    } else if (!prev_best.empty()) {
      Checkpoint ck = load_checkpoint(prev_best);
      if (!(ck.params.cfg == mc))
        fail("stage " + stage + ": checkpoint " + prev_best + " has a different model config");
      params = std::move(ck.params);
    } else if (si == 0) {
      params = init_params(mc, seed);
    } else {
      fail("stage " + stage + ": no checkpoint from the preceding stage in " + wd);
    }

    Adam opt(params);
    if (resumed) restore_adam(opt, resume_ck);

    if (start_epoch >= total_epochs) {
      if (fs::exists(best_path)) prev_best = best_path;
      continue;  // stage already finished
    }

    const std::vector<TrainExample>& ft_set = data.finetune.empty() ? data.train : data.finetune;
    bool lower_better = stage != "rl";
    // best_metric persists across resume; +-inf means "no epoch scored yet"
    double best_metric = resume_best >= 0.0 ? resume_best
                         : lower_better     ? std::numeric_limits<double>::infinity()
                                            : -std::numeric_limits<double>::infinity();
    auto checkpoint_cb = [&](int epoch, double metric, double lr, Adam& o) {
      bool improved = std::isnan(metric) ||
                      (lower_better ? metric < best_metric : metric > best_metric);
      if (improved && !std::isnan(metric)) best_metric = metric;
      std::map<std::string, std::string> meta{{"stage", stage},
                                              {"next_epoch", std::to_string(epoch + 1)},
                                              {"lr", std::to_string(lr)},
                                              {"best_metric", std::to_string(best_metric)}};
      save_stage_ckpt(last_path, params, o, meta);
      if (improved || !fs::exists(best_path)) save_stage_ckpt(best_path, params, o, meta);
    };

    std::vector<EpochLog> logs;
    if (stage == "xent" || stage == "finetune") {
      XentOptions xo;
      xo.batch_size = std::size_t(cfg.geti("train.batch_size", 128));
      xo.seed = seed + (stage == "finetune" ? 1000 : 0);
      xo.start_epoch = start_epoch;
      xo.epochs = total_epochs;
      xo.resume_lr = resume_lr;
      xo.resume_best_ppl = resume_best;
      if (stage == "xent") {
        xo.lr_start = cfg.getd("train.lr", 0.001);
        xo.lr_floor = cfg.getd("train.lr_floor", 0.00025);
        logs = train_xent(params, data.train, data.dev, xo, opt, checkpoint_cb);
      } else {
        xo.lr_override = cfg.getd("train.finetune_lr", 0.0002);
        logs = train_xent(params, ft_set, data.dev, xo, opt, checkpoint_cb);
      }
    } else {
      RlOptions ro;
      ro.reward.alpha = cfg.getd("train.alpha", 0.5);
      ro.reward.per_n = cfg.getb("train.gleu_per_n", false);
      ro.lr = cfg.getd("train.rl_lr", 0.0001);
      ro.epochs = total_epochs;
      ro.batch_size = std::size_t(cfg.geti("train.rl_batch_size", 32));
      ro.seed = seed + 2000;
      ro.samples_per_sentence = cfg.geti("train.rl_samples", 1);
      ro.start_epoch = start_epoch;
      logs = train_rl(params, ft_set, ro, opt, data.vocab, checkpoint_cb);
    }
    for (const auto& l : logs) log << stage << '\t' << format_log_line(l) << '\n';
    log.flush();
    prev_best = best_path;
    manifest.put("stage." + stage + ".epochs", std::to_string(total_epochs));
    manifest.put("stage." + stage + ".best_metric", std::to_string(best_metric));
  }
  manifest.save();
}

std::string best_checkpoint_path(const PipelineConfig& cfg) {
  std::string wd = cfg.work_dir();
  for (const char* stage : {"rl", "finetune", "xent"}) {
    std::string p = wd + "/" + stage + ".best.ckpt";
    if (fs::exists(p)) return p;
  }
  fail("no trained checkpoint in " + wd + " (run `train` first)");
}

TranslateResult translate_split(const PipelineConfig&, const Prepared& data,
                                const std::vector<TrainExample>& split, int beam_k,
                                const std::string& ckpt_path) {
  Checkpoint ck = load_checkpoint(ckpt_path);
  TranslateResult out;
  for (const auto& ex : split) {
    int max_len = default_max_len(ex.src.size());
    Hypothesis h = beam_k <= 1 ? greedy(ck.params, ex.src, max_len)
                               : beam(ck.params, ex.src, beam_k, max_len).best;
    out.hypotheses.push_back(ids_to_words(h.output_ids(), data.vocab));
    out.raw.push_back(std::move(h));
  }
  return out;
}

std::vector<CorpusScore> score_all(const WordCorpus& hyp, const WordCorpus& ref,
                                   const std::vector<std::vector<AnnotationRecord>>& records) {
  std::vector<CorpusScore> out;
  out.push_back(bleu(hyp, ref));
  out.push_back(mean_gleu(hyp, ref));
  out.push_back(corpus_hit(hyp, records));
  out.push_back(sug(hyp, records));
  out.push_back(sac(hyp, records, ref));
  return out;
}

}  // namespace copynmt
