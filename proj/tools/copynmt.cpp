// copynmt command line: corpus prep, expert annotation, training, decoding,
// scoring. Exit status: 0 ok, 1 config/usage error, 2 runtime failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "copynmt/pipeline.hpp"

namespace fs = std::filesystem;
using namespace copynmt;

namespace {

WordCorpus tokenize_file(const std::string& path) {
  WordCorpus out;
  for (const auto& line : read_lines(path)) out.push_back(tokenize(line));
  return out;
}

// pieces-per-line file (output of bpe-apply) back into Token rows
std::vector<std::vector<Token>> read_piece_file(const std::string& path) {
  std::vector<std::vector<Token>> out;
  for (const auto& line : read_lines(path)) {
    std::vector<Token> row;
    std::istringstream in(line);
    std::string piece;
    while (in >> piece) row.push_back(parse_piece(piece));
    out.push_back(std::move(row));
  }
  return out;
}

int cmd_bpe_learn(const std::vector<std::string>& inputs, int ops, const std::string& out) {
  WordCorpus corpus;
  for (const auto& p : inputs) {
    WordCorpus part = tokenize_file(p);
    corpus.insert(corpus.end(), part.begin(), part.end());
  }
  BpeCodes codes = learn_bpe(corpus, ops);
  save_bpe_codes(out, codes);
  Manifest man(out + ".manifest");
  man.put("command", "bpe-learn");
  man.put("ops", std::to_string(ops));
  for (std::size_t i = 0; i < inputs.size(); ++i)
    man.put_hash("hash.input" + std::to_string(i), inputs[i]);
  man.put_hash("hash.output", out);
  man.save();
  std::cout << "learned " << codes.merges.size() << " merges -> " << out << '\n';
  return 0;
}

int cmd_bpe_apply(const std::string& codes_path, const std::string& input,
                  const std::string& out) {
  BpeCodes codes = load_bpe_codes(codes_path);
  std::vector<std::string> lines;
  for (const auto& words : tokenize_file(input)) {
    std::ostringstream o;
    auto pieces = apply_bpe(words, codes);
    for (std::size_t i = 0; i < pieces.size(); ++i)
      o << (i ? " " : "") << render_piece(pieces[i]);
    lines.push_back(o.str());
  }
  write_lines(out, lines);
  Manifest man(out + ".manifest");
  man.put("command", "bpe-apply");
  man.put_hash("hash.codes", codes_path);
  man.put_hash("hash.input", input);
  man.put_hash("hash.output", out);
  man.save();
  return 0;
}

int cmd_vocab(const std::vector<std::string>& inputs, const std::string& out) {
  std::vector<std::vector<Token>> all;
  for (const auto& p : inputs) {
    auto part = read_piece_file(p);
    all.insert(all.end(), part.begin(), part.end());
  }
  Vocabulary v = build_vocab(all, {});
  v.save(out);
  Manifest man(out + ".manifest");
  man.put("command", "vocab");
  for (std::size_t i = 0; i < inputs.size(); ++i)
    man.put_hash("hash.input" + std::to_string(i), inputs[i]);
  man.put_hash("hash.output", out);
  man.save();
  std::cout << "vocab size " << v.size() << " -> " << out << '\n';
  return 0;
}

int cmd_annotate(const std::string& src, const std::string& table_path,
                 const std::string& codes_path, const std::string& freq_path, long threshold,
                 const std::string& out) {
  PhraseTable table = load_phrase_table(table_path);
  BpeCodes codes = load_bpe_codes(codes_path);
  WordFreq freq = count_words(tokenize_file(freq_path.empty() ? src : freq_path));
  std::vector<std::string> lines;
  long annotated_words = 0;
  for (const auto& words : tokenize_file(src)) {
    auto spans = find_rare_spans(words, freq, threshold, table);
    AnnotatedSentence a = annotate(words, spans, table, codes);
    annotated_words += long(a.records.size());
    lines.push_back(render(a));
  }
  write_lines(out, lines);
  Manifest man(out + ".manifest");
  man.put("command", "annotate");
  man.put("threshold", std::to_string(threshold));
  man.put("annotations", std::to_string(annotated_words));
  man.put_hash("hash.src", src);
  man.put_hash("hash.table", table_path);
  man.put_hash("hash.codes", codes_path);
  man.put_hash("hash.output", out);
  man.save();
  std::cout << "annotated " << annotated_words << " spans -> " << out << '\n';
  return 0;
}

int cmd_synth(const SynthConfig& sc, const std::string& out_dir) {
  sc.validate();
  SynthOutput so = generate(sc);
  write_synth(so, sc, out_dir);
  std::cout << "synthetic corpus -> " << out_dir << '\n';
  return 0;
}

int cmd_train(const PipelineConfig& cfg, const std::string& stage) {
  WorkDirLock lock(cfg.work_dir());
  Manifest man(cfg.work_dir() + "/manifest.txt");
  man.put("command", "train");
  man.put("seed", cfg.get("train.seed", "1"));
  Prepared data = prepare_data(cfg, man);
  run_training(cfg, data, man, stage);
  return 0;
}

int cmd_translate(const PipelineConfig& cfg, int beam_k, const std::string& out,
                  std::string ckpt, const std::string& split) {
  Manifest man(out + ".manifest");
  man.put("command", "translate");
  Prepared data = prepare_data(cfg, man);
  if (ckpt.empty()) ckpt = best_checkpoint_path(cfg);
  const std::vector<TrainExample>* sp = &data.test;
  if (split == "dev") sp = &data.dev;
  else if (split == "train") sp = &data.train;
  else if (split == "finetune") sp = &data.finetune;
  else if (split != "test") throw ValidationError("translate: unknown split " + split);
  if (sp->empty()) throw ValidationError("translate: split " + split + " is empty");
  TranslateResult res = translate_split(cfg, data, *sp, beam_k, ckpt);
  std::vector<std::string> lines;
  for (const auto& words : res.hypotheses) {
    std::ostringstream o;
    for (std::size_t i = 0; i < words.size(); ++i) o << (i ? " " : "") << words[i];
    lines.push_back(o.str());
  }
  write_lines(out, lines);
  man.put("beam", std::to_string(beam_k));
  man.put("split", split);
  man.put_hash("hash.checkpoint", ckpt);
  man.put_hash("hash.output", out);
  man.save();
  return 0;
}

int cmd_score(const std::string& metric, const std::string& hyp_path, const std::string& ref_path,
              const std::string& ann_path, const std::string& out) {
  WordCorpus hyp = tokenize_file(hyp_path);
  WordCorpus ref = tokenize_file(ref_path);
  if (hyp.size() != ref.size())
    throw ValidationError("score: hypothesis has " + std::to_string(hyp.size()) +
                          " lines but reference has " + std::to_string(ref.size()));
  std::vector<std::vector<AnnotationRecord>> records(hyp.size());
  if (!ann_path.empty()) {
    auto lines = read_lines(ann_path);
    if (lines.size() != hyp.size())
      throw ValidationError("score: annotated file has " + std::to_string(lines.size()) +
                            " lines but hypothesis has " + std::to_string(hyp.size()));
    for (std::size_t i = 0; i < lines.size(); ++i)
      records[i] = parse_annotated(lines[i]).records;
  } else if (metric == "hit" || metric == "sug" || metric == "sac") {
    throw ValidationError("score: metric " + metric + " needs --annotated");
  }
  std::vector<CorpusScore> scores;
  auto want = [&](const std::string& m) { return metric == "all" || metric == m; };
  if (want("bleu")) scores.push_back(bleu(hyp, ref));
  if (want("gleu")) scores.push_back(mean_gleu(hyp, ref));
  if (!ann_path.empty()) {
    if (want("hit")) scores.push_back(corpus_hit(hyp, records));
    if (want("sug")) scores.push_back(sug(hyp, records));
    if (want("sac")) scores.push_back(sac(hyp, records, ref));
  }
  for (const auto& s : scores) std::cout << format_score_line(s) << '\n';
  if (!out.empty()) {
    write_report(out, scores);
    Manifest man(out + ".manifest");
    man.put("command", "score");
    man.put("metric", metric);
    man.put_hash("hash.hyp", hyp_path);
    man.put_hash("hash.ref", ref_path);
    if (!ann_path.empty()) man.put_hash("hash.annotated", ann_path);
    man.save();
  }
  return 0;
}

int cmd_attn_dump(const PipelineConfig& cfg, std::string ckpt, int index,
                  const std::string& out) {
  Manifest man(out + ".manifest");
  man.put("command", "attn-dump");
  Prepared data = prepare_data(cfg, man);
  if (ckpt.empty()) ckpt = best_checkpoint_path(cfg);
  if (index < 0 || std::size_t(index) >= data.test.size())
    throw ValidationError("attn-dump: --index out of range (test split has " +
                          std::to_string(data.test.size()) + " sentences)");
  Checkpoint ck = load_checkpoint(ckpt);
  const TrainExample& ex = data.test[std::size_t(index)];
  DecodeTrace trace;
  Hypothesis h = greedy(ck.params, ex.src, default_max_len(ex.src.size()), &trace);
  std::vector<std::string> src_tokens, tgt_tokens;
  for (int id : ex.src) src_tokens.push_back(data.vocab.token_of(id));
  for (int id : h.ids) tgt_tokens.push_back(data.vocab.token_of(id));
  attention_dump(trace, src_tokens, tgt_tokens, out);
  man.put("index", std::to_string(index));
  man.put_hash("hash.checkpoint", ckpt);
  man.put_hash("hash.output", out);
  man.save();
  return 0;
}

int cmd_grad_check(int dim, int vocab, int layers, int sentences, double eps, double tol,
                   std::uint64_t seed) {
  ModelConfig mc;
  mc.vocab = vocab;
  mc.dim = dim;
  mc.layers = layers;
  mc.dropout = 0.0;
  mc.validate();
  ModelParams params = init_params(mc, seed);
  Rng rng(seed * 7919 + 1);
  std::vector<TrainExample> batch;
  for (int i = 0; i < sentences; ++i) {
    TrainExample ex;
    int src_len = 3 + int(rng.index(3));
    int tgt_len = 2 + int(rng.index(3));
    for (int j = 0; j < src_len; ++j)
      ex.src.push_back(kNumReserved + int(rng.index(std::size_t(vocab - kNumReserved))));
    // one annotation-style marker sandwich keeps the gate path exercised
    if (src_len >= 3) {
      ex.src[std::size_t(src_len - 3)] = kAnnotOpen;
      ex.src[std::size_t(src_len - 2)] = kAnnotSep;
      ex.src[std::size_t(src_len - 1)] = kAnnotClose;
    }
    for (int j = 0; j < tgt_len; ++j)
      ex.tgt.push_back(kNumReserved + int(rng.index(std::size_t(vocab - kNumReserved))));
    batch.push_back(std::move(ex));
  }
  double max_rel = finite_diff_check(params, batch, eps);
  std::cout << "grad-check\tmax_rel_err\t" << max_rel << "\ttol\t" << tol << '\n';
  return max_rel < tol ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"copy-generator NMT with expert annotations"};
  app.require_subcommand(1);

  // bpe-learn
  auto* bl = app.add_subcommand("bpe-learn", "learn BPE merges from raw text");
  std::vector<std::string> bl_inputs;
  int bl_ops = 500;
  std::string bl_out;
  bl->add_option("--input", bl_inputs, "input text file(s)")->required();
  bl->add_option("--ops", bl_ops, "number of merge operations");
  bl->add_option("--out", bl_out, "output codes file")->required();

  // bpe-apply
  auto* ba = app.add_subcommand("bpe-apply", "apply BPE codes to raw text");
  std::string ba_codes, ba_input, ba_out;
  ba->add_option("--codes", ba_codes, "codes file")->required();
  ba->add_option("--input", ba_input, "input text file")->required();
  ba->add_option("--out", ba_out, "output pieces file")->required();

  // vocab
  auto* vc = app.add_subcommand("vocab", "build a vocabulary from BPE pieces");
  std::vector<std::string> vc_inputs;
  std::string vc_out;
  vc->add_option("--input", vc_inputs, "piece file(s)")->required();
  vc->add_option("--out", vc_out, "output vocab file")->required();

  // annotate
  auto* an = app.add_subcommand("annotate", "insert expert annotations for rare words");
  std::string an_src, an_table, an_codes, an_freq, an_out;
  long an_threshold = 5;
  an->add_option("--src", an_src, "source text")->required();
  an->add_option("--table", an_table, "phrase table")->required();
  an->add_option("--codes", an_codes, "BPE codes")->required();
  an->add_option("--freq-from", an_freq, "corpus for word frequencies (default: --src)");
  an->add_option("--threshold", an_threshold, "rare-word frequency threshold");
  an->add_option("--out", an_out, "annotated output")->required();

  // synth
  auto* sy = app.add_subcommand("synth", "generate the synthetic oracle-expert corpus");
  SynthConfig sc;
  std::string sy_out;
  sy->add_option("--out", sy_out, "output directory")->required();
  sy->add_option("--common", sc.n_common, "common word types");
  sy->add_option("--rare", sc.n_rare, "rare word types");
  sy->add_option("--train-size", sc.train_size, "training sentences");
  sy->add_option("--finetune-size", sc.finetune_size, "fine-tuning sentences");
  sy->add_option("--dev-size", sc.dev_size, "dev sentences");
  sy->add_option("--test-size", sc.test_size, "test sentences");
  sy->add_option("--inject-prob", sc.inject_prob, "rare-word injection probability");
  sy->add_option("--expert-error", sc.expert_error_rate, "expert lexicon error rate");
  sy->add_option("--heldout-rare", sc.heldout_rare_fraction, "rare types held out of training");
  sy->add_option("--seed", sc.seed, "generator seed");
  sy->add_flag("--reorder", sc.reorder, "random local swaps on the target side");

  // shared pipeline options
  std::string cfg_path, stage, out_path, ckpt_path, split = "test";
  int beam_k = 1, attn_index = 0;
  long long seed_override = -1;
  double alpha_override = -1.0;

  auto* tr = app.add_subcommand("train", "run the training stages");
  tr->add_option("--config", cfg_path, "pipeline config")->required();
  tr->add_option("--stage", stage, "run only this stage (xent|finetune|rl)");
  tr->add_option("--seed", seed_override, "override train.seed");
  tr->add_option("--alpha", alpha_override, "override train.alpha");

  auto* tl = app.add_subcommand("translate", "decode a split with the trained model");
  tl->add_option("--config", cfg_path, "pipeline config")->required();
  tl->add_option("--beam", beam_k, "beam width (1 = greedy)");
  tl->add_option("--out", out_path, "hypothesis output file")->required();
  tl->add_option("--ckpt", ckpt_path, "checkpoint (default: best)");
  tl->add_option("--split", split, "split to decode (train|finetune|dev|test)");

  auto* scr = app.add_subcommand("score", "score hypotheses against references");
  std::string sc_metric = "all", sc_hyp, sc_ref, sc_ann;
  scr->add_option("--metric", sc_metric, "bleu|gleu|hit|sug|sac|all")
      ->check(CLI::IsMember({"bleu", "gleu", "hit", "sug", "sac", "all"}));
  scr->add_option("--hyp", sc_hyp, "hypothesis file")->required();
  scr->add_option("--ref", sc_ref, "reference file")->required();
  scr->add_option("--annotated", sc_ann, "annotated source (for hit/sug/sac)");
  scr->add_option("--out", out_path, "also write a report file");

  auto* ad = app.add_subcommand("attn-dump", "dump the attention matrix for one sentence");
  ad->add_option("--config", cfg_path, "pipeline config")->required();
  ad->add_option("--ckpt", ckpt_path, "checkpoint (default: best)");
  ad->add_option("--index", attn_index, "test-split sentence index");
  ad->add_option("--out", out_path, "output file")->required();

  auto* gc = app.add_subcommand("grad-check", "finite-difference gradient check");
  int gc_dim = 4, gc_vocab = 12, gc_layers = 1, gc_sentences = 3;
  double gc_eps = 1e-4, gc_tol = 1e-4;
  std::uint64_t gc_seed = 7;
  gc->add_option("--dim", gc_dim, "hidden size");
  gc->add_option("--vocab-size", gc_vocab, "vocabulary size");
  gc->add_option("--layers", gc_layers, "LSTM layers");
  gc->add_option("--sentences", gc_sentences, "batch size");
  gc->add_option("--eps", gc_eps, "finite-difference step");
  gc->add_option("--tol", gc_tol, "pass threshold on max relative error");
  gc->add_option("--seed", gc_seed, "parameter seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*bl) return cmd_bpe_learn(bl_inputs, bl_ops, bl_out);
    if (*ba) return cmd_bpe_apply(ba_codes, ba_input, ba_out);
    if (*vc) return cmd_vocab(vc_inputs, vc_out);
    if (*an) return cmd_annotate(an_src, an_table, an_codes, an_freq, an_threshold, an_out);
    if (*sy) return cmd_synth(sc, sy_out);
    if (*tr || *tl || *ad) {
      PipelineConfig cfg = PipelineConfig::load(cfg_path);
      if (seed_override >= 0) cfg.set("train.seed", std::to_string(seed_override));
      if (alpha_override >= 0.0) cfg.set("train.alpha", std::to_string(alpha_override));
      if (*tr) return cmd_train(cfg, stage);
      if (*tl) return cmd_translate(cfg, beam_k, out_path, ckpt_path, split);
      return cmd_attn_dump(cfg, ckpt_path, attn_index, out_path);
    }
    if (*scr) return cmd_score(sc_metric, sc_hyp, sc_ref, sc_ann, out_path);
    if (*gc) return cmd_grad_check(gc_dim, gc_vocab, gc_layers, gc_sentences, gc_eps, gc_tol, gc_seed);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
