#pragma once

#include "copynmt/synth.hpp"
#include "copynmt/training.hpp"

namespace copynmt {

// config/CLI problems exit with status 1; everything else with 2
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Flat "section.key=value" file; '#' starts a comment line.
class PipelineConfig {
 public:
  static PipelineConfig load(const std::string& path);
  static PipelineConfig from_map(std::map<std::string, std::string> kv);

  std::string get(const std::string& key, const std::string& fallback) const;
  std::string require(const std::string& key) const;
  int geti(const std::string& key, int fallback) const;
  double getd(const std::string& key, double fallback) const;
  bool getb(const std::string& key, bool fallback) const;
  bool has(const std::string& key) const { return kv_.count(key) > 0; }
  void set(const std::string& key, const std::string& value) { kv_[key] = value; }

  std::string work_dir() const { return require("data.work_dir"); }
  std::uint64_t content_hash() const;
  // every referenced data.* path must exist
  void validate_paths() const;

 private:
  std::map<std::string, std::string> kv_;
};

// exclusive ownership of a work dir (lock file), released on destruction
class WorkDirLock {
 public:
  explicit WorkDirLock(const std::string& work_dir);
  ~WorkDirLock();
  WorkDirLock(const WorkDirLock&) = delete;
  WorkDirLock& operator=(const WorkDirLock&) = delete;

 private:
  std::string path_;
};

class Manifest {
 public:
  explicit Manifest(std::string path) : path_(std::move(path)) {}
  void put(const std::string& key, const std::string& value);
  void put_hash(const std::string& key, const std::string& file_path);
  void save() const;

 private:
  std::string path_;
  std::vector<std::pair<std::string, std::string>> entries_;
};

std::uint64_t file_hash(const std::string& path);

struct Prepared {
  BpeCodes codes;
  Vocabulary vocab;
  WordFreq word_freq;  // source-side training words, pre-BPE
  PhraseTable table;
  std::vector<TrainExample> train, finetune, dev, test;
  WordCorpus test_src_words;
  std::vector<AnnotatedSentence> test_annotated;
};

// Tokenize, annotate, BPE and encode all configured splits; artifacts
// (codes, vocab, annotated corpora) land in the work dir.
Prepared prepare_data(const PipelineConfig& cfg, Manifest& manifest);

// Stage-aware training: xent -> finetune -> rl (a prefix may be omitted via
// train.stages). Resumes from <stage>.last.ckpt when present.
void run_training(const PipelineConfig& cfg, const Prepared& data, Manifest& manifest,
                  const std::string& only_stage = "");

// Most advanced stage with a best checkpoint in the work dir.
std::string best_checkpoint_path(const PipelineConfig& cfg);

struct TranslateResult {
  WordCorpus hypotheses;
  std::vector<Hypothesis> raw;
};

TranslateResult translate_split(const PipelineConfig& cfg, const Prepared& data,
                                const std::vector<TrainExample>& split, int beam_k,
                                const std::string& ckpt_path);

std::vector<CorpusScore> score_all(const WordCorpus& hyp, const WordCorpus& ref,
                                   const std::vector<std::vector<AnnotationRecord>>& records);

}  // namespace copynmt
