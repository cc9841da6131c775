#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "copynmt/pipeline.hpp"

using namespace copynmt;
namespace fs = std::filesystem;

namespace {

std::string tmp_dir(const std::string& name) {
  std::string dir = (fs::temp_directory_path() / name).string();
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  out << content;
  return path;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

// tiny synthetic task on disk + a config pointing at it
PipelineConfig synth_config(const std::string& dir, const std::string& work) {
  SynthConfig sc;
  sc.n_common = 20;
  sc.n_rare = 6;
  sc.train_size = 80;
  sc.finetune_size = 20;
  sc.dev_size = 10;
  sc.test_size = 10;
  sc.heldout_rare_fraction = 0.3;
  sc.seed = 5;
  write_synth(generate(sc), sc, dir);

  std::map<std::string, std::string> kv{
      {"data.train_src", dir + "/train.src"},   {"data.train_tgt", dir + "/train.tgt"},
      {"data.finetune_src", dir + "/finetune.src"},
      {"data.finetune_tgt", dir + "/finetune.tgt"},
      {"data.dev_src", dir + "/dev.src"},       {"data.dev_tgt", dir + "/dev.tgt"},
      {"data.test_src", dir + "/test.src"},     {"data.test_tgt", dir + "/test.tgt"},
      {"data.phrase_table", dir + "/expert.pt"},
      {"data.work_dir", work},
      {"bpe.n_ops", "60"},
      // the xent split draws from two injected rare types here, so each shows
      // up ~80x; the threshold must sit above that for them to count as rare
      {"expert.threshold", "150"},
      {"model.dim", "16"},
      {"model.dropout", "0"},
      {"train.seed", "3"},
      {"train.batch_size", "32"},
      {"train.xent_epochs", "3"},
      {"train.finetune_epochs", "1"},
      {"train.rl_epochs", "1"},
  };
  return PipelineConfig::from_map(std::move(kv));
}

}  // namespace

TEST_CASE("config parser: comments, whitespace, and line-numbered errors") {
  std::string dir = tmp_dir("copynmt_cfgtest");
  std::string good = write_file(dir + "/good.cfg",
                                "# a comment\n"
                                "\n"
                                "  data.work_dir = /tmp/w  \n"
                                "train.seed=9\n");
  PipelineConfig c = PipelineConfig::load(good);
  CHECK(c.work_dir() == "/tmp/w");
  CHECK(c.geti("train.seed", 0) == 9);
  CHECK(c.get("absent.key", "fb") == "fb");

  std::string noeq = write_file(dir + "/noeq.cfg", "data.a=1\njust words\n");
  CHECK_THROWS_WITH_AS(PipelineConfig::load(noeq), doctest::Contains("line 2"), ValidationError);

  std::string nodot = write_file(dir + "/nodot.cfg", "seed=9\n");
  CHECK_THROWS_WITH_AS(PipelineConfig::load(nodot), doctest::Contains("section.name"),
                       ValidationError);

  std::string dup = write_file(dir + "/dup.cfg", "a.x=1\na.x=2\n");
  CHECK_THROWS_WITH_AS(PipelineConfig::load(dup), doctest::Contains("duplicate key a.x"),
                       ValidationError);

  CHECK_THROWS_AS(PipelineConfig::load(dir + "/missing.cfg"), ValidationError);
  fs::remove_all(dir);
}

TEST_CASE("typed getters name the offending key") {
  PipelineConfig c = PipelineConfig::from_map(
      {{"a.int", "12"}, {"a.bad", "12x"}, {"a.num", "0.5"}, {"a.flag", "true"}});
  CHECK(c.geti("a.int", 0) == 12);
  CHECK(c.getd("a.num", 0.0) == 0.5);
  CHECK(c.getb("a.flag", false));
  CHECK(c.geti("absent.x", 7) == 7);
  CHECK_THROWS_WITH_AS(c.geti("a.bad", 0), doctest::Contains("a.bad"), ValidationError);
  CHECK_THROWS_WITH_AS(c.getd("a.bad", 0.0), doctest::Contains("a.bad"), ValidationError);
  CHECK_THROWS_WITH_AS(c.getb("a.int", false), doctest::Contains("a.int"), ValidationError);
  CHECK_THROWS_WITH_AS(c.require("b.missing"), doctest::Contains("b.missing"), ValidationError);
}

TEST_CASE("content_hash is stable and sensitive to keys and values") {
  PipelineConfig a = PipelineConfig::from_map({{"x.a", "1"}, {"x.b", "2"}});
  PipelineConfig b = PipelineConfig::from_map({{"x.a", "1"}, {"x.b", "2"}});
  CHECK(a.content_hash() == b.content_hash());
  PipelineConfig c = PipelineConfig::from_map({{"x.a", "1"}, {"x.b", "3"}});
  CHECK(a.content_hash() != c.content_hash());
  PipelineConfig d = PipelineConfig::from_map({{"x.a", "1"}, {"x.c", "2"}});
  CHECK(a.content_hash() != d.content_hash());
}

TEST_CASE("validate_paths flags missing data files but ignores work_dir") {
  std::string dir = tmp_dir("copynmt_pathtest");
  write_file(dir + "/exists.txt", "x\n");
  PipelineConfig ok = PipelineConfig::from_map(
      {{"data.train_src", dir + "/exists.txt"}, {"data.work_dir", dir + "/not_yet_created"}});
  CHECK_NOTHROW(ok.validate_paths());
  PipelineConfig bad = PipelineConfig::from_map({{"data.train_src", dir + "/nope.txt"}});
  CHECK_THROWS_WITH_AS(bad.validate_paths(), doctest::Contains("data.train_src"), ValidationError);
  fs::remove_all(dir);
}

TEST_CASE("work dir lock is exclusive and released on destruction") {
  std::string dir = tmp_dir("copynmt_locktest");
  {
    WorkDirLock lock(dir);
    CHECK(fs::exists(dir + "/.lock"));
    CHECK_THROWS_WITH_AS(WorkDirLock{dir}, doctest::Contains("locked"), std::runtime_error);
  }
  CHECK(!fs::exists(dir + "/.lock"));
  CHECK_NOTHROW(WorkDirLock{dir});  // reacquirable after release
  fs::remove_all(dir);
}

TEST_CASE("manifest writes tab-separated keys, last put wins") {
  std::string dir = tmp_dir("copynmt_mantest");
  write_file(dir + "/input.txt", "hello\n");
  Manifest m(dir + "/manifest.txt");
  m.put("k", "v1");
  m.put("k", "v2");
  m.put_hash("hash.input", dir + "/input.txt");
  m.save();
  std::string text = read_file(dir + "/manifest.txt");
  CHECK(text.find("k\tv2") != std::string::npos);
  CHECK(text.find("v1") == std::string::npos);
  CHECK(text.find("hash.input\t") != std::string::npos);

  CHECK(file_hash(dir + "/input.txt") == file_hash(dir + "/input.txt"));
  write_file(dir + "/other.txt", "world\n");
  CHECK(file_hash(dir + "/input.txt") != file_hash(dir + "/other.txt"));
  fs::remove_all(dir);
}

TEST_CASE("prepare_data builds artifacts, vocabulary, and encoded splits") {
  std::string data = tmp_dir("copynmt_prep_data");
  std::string work = tmp_dir("copynmt_prep_work");
  PipelineConfig cfg = synth_config(data, work);
  Manifest m(work + "/manifest.txt");
  Prepared p = prepare_data(cfg, m);

  CHECK(p.train.size() == 80);
  CHECK(p.finetune.size() == 20);
  CHECK(p.dev.size() == 10);
  CHECK(p.test.size() == 10);
  CHECK(p.test_src_words.size() == 10);
  CHECK(p.test_annotated.size() == 10);
  CHECK(p.vocab.size() > kNumReserved);

  for (const char* f : {"/bpe.codes", "/vocab.txt", "/train.annotated.src",
                        "/dev.annotated.src", "/test.annotated.src", "/manifest.txt"})
    CHECK(fs::exists(work + f));

  // every encoded target id is in range; no target should hit the pad fallback
  for (const auto& ex : p.train)
    for (int id : ex.tgt) {
      CHECK(id >= kNumReserved);
      CHECK(id < p.vocab.size());
    }

  // rare words picked up annotations somewhere in the training split
  long records = 0;
  for (const auto& ex : p.train) records += long(ex.records.size());
  CHECK(records > 0);

  // annotated lines parse back and carry the markers
  bool any_marker = false;
  for (const auto& line : read_lines(work + "/train.annotated.src")) {
    AnnotatedSentence a = parse_annotated(line);
    any_marker = any_marker || !a.records.empty();
  }
  CHECK(any_marker);

  // disabling the expert removes all annotation markers
  PipelineConfig plain = cfg;
  plain.set("expert.enabled", "false");
  plain.set("data.work_dir", work + "_plain");
  Manifest m2(work + "_plain/manifest.txt");
  Prepared q = prepare_data(plain, m2);
  for (const auto& ex : q.train) CHECK(ex.records.empty());

  fs::remove_all(data);
  fs::remove_all(work);
  fs::remove_all(work + "_plain");
}

TEST_CASE("run_training: stage validation errors") {
  std::string data = tmp_dir("copynmt_stage_data");
  std::string work = tmp_dir("copynmt_stage_work");
  PipelineConfig cfg = synth_config(data, work);
  Manifest m(work + "/manifest.txt");
  Prepared p = prepare_data(cfg, m);

  PipelineConfig bad = cfg;
  bad.set("train.stages", "xent,warp");
  CHECK_THROWS_WITH_AS(run_training(bad, p, m), doctest::Contains("warp"), ValidationError);

  CHECK_THROWS_WITH_AS(run_training(cfg, p, m, "rl2"), doctest::Contains("rl2"), ValidationError);

  // rl without a preceding checkpoint fails cleanly
  PipelineConfig rl_only = cfg;
  rl_only.set("data.work_dir", work + "_rlonly");
  CHECK_THROWS_WITH_AS(run_training(rl_only, p, m, "rl"), doctest::Contains("no checkpoint"),
                       std::runtime_error);

  fs::remove_all(data);
  fs::remove_all(work);
  fs::remove_all(work + "_rlonly");
}

TEST_CASE("interrupted training resumes to a bitwise-identical checkpoint") {
  std::string data = tmp_dir("copynmt_resume_data");
  std::string work_a = tmp_dir("copynmt_resume_a");
  std::string work_b = tmp_dir("copynmt_resume_b");
  PipelineConfig cfg = synth_config(data, work_a);
  cfg.set("train.stages", "xent");
  cfg.set("train.xent_epochs", "4");

  Manifest ma(work_a + "/manifest.txt");
  Prepared p = prepare_data(cfg, ma);
  run_training(cfg, p, ma);  // uninterrupted: 4 epochs straight

  PipelineConfig cfg_b = cfg;
  cfg_b.set("data.work_dir", work_b);
  Manifest mb(work_b + "/manifest.txt");
  cfg_b.set("train.xent_epochs", "2");
  run_training(cfg_b, p, mb);  // "interrupted" after 2 epochs
  cfg_b.set("train.xent_epochs", "4");
  run_training(cfg_b, p, mb);  // resumed from xent.last.ckpt

  CHECK(read_file(work_a + "/xent.last.ckpt") == read_file(work_b + "/xent.last.ckpt"));
  CHECK(read_file(work_a + "/xent.best.ckpt") == read_file(work_b + "/xent.best.ckpt"));

  // re-running a finished stage is a no-op that keeps the checkpoint intact
  std::string before = read_file(work_b + "/xent.last.ckpt");
  run_training(cfg_b, p, mb);
  CHECK(read_file(work_b + "/xent.last.ckpt") == before);

  fs::remove_all(data);
  fs::remove_all(work_a);
  fs::remove_all(work_b);
}

TEST_CASE("full pipeline twice from the same seeds is bitwise identical") {
  std::string data = tmp_dir("copynmt_repro_data");
  std::string work_a = tmp_dir("copynmt_repro_a");
  std::string work_b = tmp_dir("copynmt_repro_b");
  PipelineConfig cfg = synth_config(data, work_a);

  auto run = [&](const std::string& work) {
    PipelineConfig c = cfg;
    c.set("data.work_dir", work);
    Manifest m(work + "/manifest.txt");
    Prepared p = prepare_data(c, m);
    run_training(c, p, m);
    TranslateResult t = translate_split(c, p, p.test, 1, best_checkpoint_path(c));
    std::vector<std::vector<AnnotationRecord>> recs;
    for (const auto& a : p.test_annotated) recs.push_back(a.records);
    WordCorpus refs;
    for (const auto& ex : p.test) refs.push_back(ex.ref_words);
    write_report(work + "/report.txt", score_all(t.hypotheses, refs, recs));
    return t.hypotheses;
  };
  WordCorpus ha = run(work_a);
  WordCorpus hb = run(work_b);
  CHECK(ha == hb);
  for (const char* stage : {"xent", "finetune", "rl"})
    CHECK(read_file(work_a + "/" + stage + ".best.ckpt") ==
          read_file(work_b + "/" + stage + ".best.ckpt"));
  CHECK(read_file(work_a + "/report.txt") == read_file(work_b + "/report.txt"));

  // the report has one line per metric
  CHECK(read_lines(work_a + "/report.txt").size() == 5);

  fs::remove_all(data);
  fs::remove_all(work_a);
  fs::remove_all(work_b);
}

TEST_CASE("best_checkpoint_path prefers rl over finetune over xent") {
  std::string work = tmp_dir("copynmt_bestckpt");
  PipelineConfig cfg = PipelineConfig::from_map({{"data.work_dir", work}});
  CHECK_THROWS_WITH_AS(best_checkpoint_path(cfg), doctest::Contains("no trained checkpoint"),
                       std::runtime_error);
  write_file(work + "/xent.best.ckpt", "x");
  CHECK(best_checkpoint_path(cfg) == work + "/xent.best.ckpt");
  write_file(work + "/finetune.best.ckpt", "f");
  CHECK(best_checkpoint_path(cfg) == work + "/finetune.best.ckpt");
  write_file(work + "/rl.best.ckpt", "r");
  CHECK(best_checkpoint_path(cfg) == work + "/rl.best.ckpt");
  fs::remove_all(work);
}
