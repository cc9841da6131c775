#pragma once

#include <map>
#include <string>
#include <vector>

#include "copynmt/graph.hpp"

namespace copynmt {

struct ModelConfig {
  int vocab = 0;
  int dim = 64;       // embedding and hidden size
  int layers = 1;
  double dropout = 0.2;  // vertical, between LSTM layers, training only
  bool input_feed = true;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct LstmWeights {
  Mat Wx, Wh, b;  // gates packed [input; forget; cell; output], b is 4d x 1
};

// All trainable tensors. One embedding matrix is shared by the encoder
// input, decoder input, and (transposed) the output projection.
struct ModelParams {
  ModelConfig cfg;
  Mat embedding;  // V x d
  std::vector<LstmWeights> enc_fwd, enc_bwd, dec;
  Mat attn_Wq, attn_Wc, attn_b, attn_v;  // 2-layer feed-forward attention scorer
  Mat comb_W, comb_b;                    // attentional vector tanh(W [h; ctx] + b)
  Mat gate_w, gate_b;                    // copy gate, sigmoid(w . h~ + b)
  Mat out_bias;                          // V x 1

  // Enumerates every tensor in a fixed order; the order defines the
  // checkpoint layout and the finite-difference sweep.
  template <class F>
  void visit(F&& f) {
    f("embedding", embedding);
    for (std::size_t l = 0; l < enc_fwd.size(); ++l) {
      std::string p = "enc_fwd." + std::to_string(l) + ".";
      f(p + "Wx", enc_fwd[l].Wx);
      f(p + "Wh", enc_fwd[l].Wh);
      f(p + "b", enc_fwd[l].b);
    }
    for (std::size_t l = 0; l < enc_bwd.size(); ++l) {
      std::string p = "enc_bwd." + std::to_string(l) + ".";
      f(p + "Wx", enc_bwd[l].Wx);
      f(p + "Wh", enc_bwd[l].Wh);
      f(p + "b", enc_bwd[l].b);
    }
    for (std::size_t l = 0; l < dec.size(); ++l) {
      std::string p = "dec." + std::to_string(l) + ".";
      f(p + "Wx", dec[l].Wx);
      f(p + "Wh", dec[l].Wh);
      f(p + "b", dec[l].b);
    }
    f("attn_Wq", attn_Wq);
    f("attn_Wc", attn_Wc);
    f("attn_b", attn_b);
    f("attn_v", attn_v);
    f("comb_W", comb_W);
    f("comb_b", comb_b);
    f("gate_w", gate_w);
    f("gate_b", gate_b);
    f("out_bias", out_bias);
  }

  void zero();
  std::size_t coordinate_count();
};

// Correctly-shaped zero tensors for a config.
ModelParams make_shell(const ModelConfig& cfg);
// Uniform init in [-0.1, 0.1]; forget-gate biases start at 1.0.
ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);
// Same shapes, all zeros (gradient / optimizer-moment storage).
ModelParams zero_like(const ModelParams& p);

struct StepDistribution {
  Vec p_gen, p_copy, p;  // each over the vocabulary
  Vec attn;              // over source positions
  double gamma = 0.0;
};

struct DecoderState {
  std::vector<std::pair<Vec, Vec>> layers;  // (h, c) per layer
  Vec attn_feed;                            // previous attentional vector
};

struct EncoderStates {
  Mat contexts;              // d x M, per-position context vectors
  std::vector<int> src_ids;  // for the copy scatter
  DecoderState init;
};

EncoderStates encode(const ModelParams& params, const std::vector<int>& src);

std::pair<StepDistribution, DecoderState> decode_step(const ModelParams& params,
                                                      const EncoderStates& enc,
                                                      const DecoderState& state, int prev_id);

// Incremental decoding over one source sentence; parameters are bound once
// and successor states live inside a single evaluation graph (no gradients).
// States are addressed by handle so beam search can branch freely.
class DecodeSession {
 public:
  DecodeSession(const ModelParams& params, const std::vector<int>& src);
  ~DecodeSession();
  DecodeSession(const DecodeSession&) = delete;
  DecodeSession& operator=(const DecodeSession&) = delete;

  int initial_state() const { return 0; }
  std::pair<StepDistribution, int> step(int state, int prev_id);

 private:
  struct Impl;
  Impl* impl_;
};

struct ForwardResult {
  double logprob = 0.0;
  std::vector<StepDistribution> steps;
  bool clamped = false;  // some gold probability hit the 1e-12 floor
};

// Teacher-forced log P(tgt | src). tgt excludes BOS/EOS; EOS is appended
// when append_eos is set (decoding truncated at max length leaves it off).
ForwardResult forward_logprob(const ModelParams& params, const std::vector<int>& src,
                              const std::vector<int>& tgt, bool append_eos = true);

// Graph-building interface shared by the trainer and the RL step.
struct ParamExprs;

struct SequenceLoss {
  Graph::Expr loss;  // negative log-likelihood, 1x1
  int tokens = 0;
  std::vector<Graph::Expr> step_dists;  // mixed P per step
  std::vector<Graph::Expr> step_attn;
  std::vector<Graph::Expr> step_gamma;
  std::vector<Graph::Expr> step_gen;
  std::vector<Graph::Expr> step_copy;
};

class GraphBuilder {
 public:
  // grads may be null for evaluation graphs.
  GraphBuilder(Graph& g, const ModelParams& params, ModelParams* grads,
               Rng* dropout_rng = nullptr);
  ~GraphBuilder();

  SequenceLoss sequence_nll(const std::vector<int>& src, const std::vector<int>& tgt,
                            bool append_eos = true);

 private:
  Graph& g_;
  const ModelParams& params_;
  ParamExprs* px_;
  Rng* dropout_rng_;
};

// Checkpoint container: "ckpt v1", config block, then named float64 tensors.
void save_checkpoint(const std::string& path, ModelParams& params,
                     const std::map<std::string, std::string>& meta = {},
                     const std::vector<std::pair<std::string, const Mat*>>& extra = {});
struct Checkpoint {
  ModelParams params;
  std::map<std::string, std::string> meta;
  std::map<std::string, Mat> extra;
};
Checkpoint load_checkpoint(const std::string& path);

}  // namespace copynmt
