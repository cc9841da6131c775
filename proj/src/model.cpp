#include "copynmt/model.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace copynmt {

void ModelConfig::validate() const {
  if (vocab < kNumReserved) fail("ModelConfig: vocab must cover the reserved symbols");
  if (dim < 1) fail("ModelConfig: dim must be >= 1");
  if (layers < 1) fail("ModelConfig: layers must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) fail("ModelConfig: dropout must be in [0, 1)");
}

// Allocate every tensor at its configured shape, zero-filled.
ModelParams make_shell(const ModelConfig& cfg) {
  cfg.validate();
  const int d = cfg.dim;
  ModelParams p;
  p.cfg = cfg;
  p.embedding = Mat::Zero(cfg.vocab, d);
  auto lstm = [&](int in_dim) {
    return LstmWeights{Mat::Zero(4 * d, in_dim), Mat::Zero(4 * d, d), Mat::Zero(4 * d, 1)};
  };
  for (int l = 0; l < cfg.layers; ++l) {
    p.enc_fwd.push_back(lstm(d));
    p.enc_bwd.push_back(lstm(d));
    int in_dim = (l == 0 && cfg.input_feed) ? 2 * d : d;
    p.dec.push_back(lstm(in_dim));
  }
  p.attn_Wq = Mat::Zero(d, d);
  p.attn_Wc = Mat::Zero(d, d);
  p.attn_b = Mat::Zero(d, 1);
  p.attn_v = Mat::Zero(d, 1);
  p.comb_W = Mat::Zero(d, 2 * d);
  p.comb_b = Mat::Zero(d, 1);
  p.gate_w = Mat::Zero(1, d);
  p.gate_b = Mat::Zero(1, 1);
  p.out_bias = Mat::Zero(cfg.vocab, 1);
  return p;
}

void ModelParams::zero() {
  visit([](const std::string&, Mat& m) { m.setZero(); });
}

std::size_t ModelParams::coordinate_count() {
  std::size_t n = 0;
  visit([&](const std::string&, Mat& m) { n += std::size_t(m.size()); });
  return n;
}

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams p = make_shell(cfg);
  Rng rng(seed);
  p.visit([&](const std::string&, Mat& m) {
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = rng.uniform(-0.1, 0.1);
  });
  const int d = cfg.dim;
  for (auto* bank : {&p.enc_fwd, &p.enc_bwd, &p.dec})
    for (auto& w : *bank) w.b.middleRows(d, d).setConstant(1.0);  // forget gate
  return p;
}

ModelParams zero_like(const ModelParams& p) { return make_shell(p.cfg); }

// ---------------------------------------------------------------------------
// graph construction

struct LstmExprs {
  Graph::Expr Wx, Wh, b;
};

struct ParamExprs {
  Graph::Expr E;
  std::vector<LstmExprs> enc_fwd, enc_bwd, dec;
  Graph::Expr attn_Wq, attn_Wc, attn_b, attn_v, comb_W, comb_b, gate_w, gate_b, out_bias;
};

namespace {

ParamExprs bind_params(Graph& g, const ModelParams& p, ModelParams* grads) {
  ParamExprs x;
  auto bind = [&](const Mat& v, Mat* gr) { return g.param(v, gr); };
  x.E = bind(p.embedding, grads ? &grads->embedding : nullptr);
  auto bind_lstm = [&](const LstmWeights& w, LstmWeights* gw) {
    return LstmExprs{bind(w.Wx, gw ? &gw->Wx : nullptr), bind(w.Wh, gw ? &gw->Wh : nullptr),
                     bind(w.b, gw ? &gw->b : nullptr)};
  };
  for (std::size_t l = 0; l < p.enc_fwd.size(); ++l)
    x.enc_fwd.push_back(bind_lstm(p.enc_fwd[l], grads ? &grads->enc_fwd[l] : nullptr));
  for (std::size_t l = 0; l < p.enc_bwd.size(); ++l)
    x.enc_bwd.push_back(bind_lstm(p.enc_bwd[l], grads ? &grads->enc_bwd[l] : nullptr));
  for (std::size_t l = 0; l < p.dec.size(); ++l)
    x.dec.push_back(bind_lstm(p.dec[l], grads ? &grads->dec[l] : nullptr));
  x.attn_Wq = bind(p.attn_Wq, grads ? &grads->attn_Wq : nullptr);
  x.attn_Wc = bind(p.attn_Wc, grads ? &grads->attn_Wc : nullptr);
  x.attn_b = bind(p.attn_b, grads ? &grads->attn_b : nullptr);
  x.attn_v = bind(p.attn_v, grads ? &grads->attn_v : nullptr);
  x.comb_W = bind(p.comb_W, grads ? &grads->comb_W : nullptr);
  x.comb_b = bind(p.comb_b, grads ? &grads->comb_b : nullptr);
  x.gate_w = bind(p.gate_w, grads ? &grads->gate_w : nullptr);
  x.gate_b = bind(p.gate_b, grads ? &grads->gate_b : nullptr);
  x.out_bias = bind(p.out_bias, grads ? &grads->out_bias : nullptr);
  return x;
}

std::pair<Graph::Expr, Graph::Expr> lstm_step(Graph& g, const LstmExprs& w, Graph::Expr x,
                                              Graph::Expr h, Graph::Expr c, int d) {
  auto gates = g.add(g.add(g.matmul(w.Wx, x), g.matmul(w.Wh, h)), w.b);
  auto in = g.sigmoid(g.slice_rows(gates, 0, d));
  auto forget = g.sigmoid(g.slice_rows(gates, d, d));
  auto cand = g.tanh(g.slice_rows(gates, 2 * d, d));
  auto out = g.sigmoid(g.slice_rows(gates, 3 * d, d));
  auto c2 = g.add(g.cmul(forget, c), g.cmul(in, cand));
  auto h2 = g.cmul(out, g.tanh(c2));
  return {h2, c2};
}

Graph::Expr dropout_mask(Graph& g, int d, double rate, Rng& rng) {
  Mat m(d, 1);
  for (int i = 0; i < d; ++i)
    m(i, 0) = rng.next_double() < rate ? 0.0 : 1.0 / (1.0 - rate);
  return g.input(std::move(m));
}

struct EncExpr {
  Graph::Expr contexts;  // d x M
  std::vector<std::pair<Graph::Expr, Graph::Expr>> init;  // (h, c) per decoder layer
};

EncExpr encode_expr(Graph& g, const ParamExprs& px, const ModelConfig& cfg,
                    const std::vector<int>& src, Rng* dropout_rng) {
  if (src.empty()) fail("encode: empty source");
  const int d = cfg.dim;
  const int M = int(src.size());
  std::vector<Graph::Expr> layer_in(static_cast<std::size_t>(M));
  for (int j = 0; j < M; ++j) layer_in[std::size_t(j)] = g.row_lookup(px.E, src[std::size_t(j)]);

  EncExpr out;
  auto zero = [&] { return g.input(Mat::Zero(d, 1)); };
  for (int l = 0; l < cfg.layers; ++l) {
    if (l > 0 && dropout_rng && cfg.dropout > 0.0)
      for (auto& x : layer_in) x = g.cmul(x, dropout_mask(g, d, cfg.dropout, *dropout_rng));
    std::vector<Graph::Expr> fwd(static_cast<std::size_t>(M)), bwd(static_cast<std::size_t>(M));
    Graph::Expr h = zero(), c = zero();
    for (int j = 0; j < M; ++j) {
      std::tie(h, c) = lstm_step(g, px.enc_fwd[std::size_t(l)], layer_in[std::size_t(j)], h, c, d);
      fwd[std::size_t(j)] = h;
    }
    auto hf = h, cf = c;
    h = zero();
    c = zero();
    for (int j = M - 1; j >= 0; --j) {
      std::tie(h, c) = lstm_step(g, px.enc_bwd[std::size_t(l)], layer_in[std::size_t(j)], h, c, d);
      bwd[std::size_t(j)] = h;
    }
    out.init.emplace_back(g.add(hf, h), g.add(cf, c));
    for (int j = 0; j < M; ++j)
      layer_in[std::size_t(j)] = g.add(fwd[std::size_t(j)], bwd[std::size_t(j)]);
  }
  out.contexts = g.concat_cols(layer_in);
  return out;
}

struct StepExpr {
  Graph::Expr p, p_gen, p_copy, gamma, attn, attn_feed;
  std::vector<std::pair<Graph::Expr, Graph::Expr>> state;
};

StepExpr decode_step_expr(Graph& g, const ParamExprs& px, const ModelConfig& cfg,
                          Graph::Expr contexts, Graph::Expr ctx_proj,
                          const std::vector<int>& src_ids, int prev_id,
                          const std::vector<std::pair<Graph::Expr, Graph::Expr>>& state,
                          Graph::Expr attn_feed, Rng* dropout_rng) {
  const int d = cfg.dim;
  StepExpr out;
  Graph::Expr x = g.row_lookup(px.E, prev_id);
  if (cfg.input_feed) x = g.vcat(x, attn_feed);
  for (int l = 0; l < cfg.layers; ++l) {
    if (l > 0 && dropout_rng && cfg.dropout > 0.0)
      x = g.cmul(x, dropout_mask(g, d, cfg.dropout, *dropout_rng));
    auto [h, c] = lstm_step(g, px.dec[std::size_t(l)], x, state[std::size_t(l)].first,
                            state[std::size_t(l)].second, d);
    out.state.emplace_back(h, c);
    x = h;
  }
  Graph::Expr h_top = x;
  // attention: e_j = v^T tanh(Wq h + Wc ctx_j + b), softmax over j
  auto query = g.add(g.matmul(px.attn_Wq, h_top), px.attn_b);
  auto scores = g.mat_t_vec(g.tanh(g.broadcast_add_col(ctx_proj, query)), px.attn_v);
  out.attn = g.softmax(scores);
  auto ctx = g.matmul(contexts, out.attn);
  auto h_til = g.tanh(g.add(g.matmul(px.comb_W, g.vcat(h_top, ctx)), px.comb_b));
  out.attn_feed = h_til;
  // tied output projection: logits = E h~ + bias
  out.p_gen = g.softmax(g.add(g.matmul(px.E, h_til), px.out_bias));
  out.gamma = g.sigmoid(g.add(g.matmul(px.gate_w, h_til), px.gate_b));
  out.p_copy = g.scatter_by_ids(out.attn, src_ids, cfg.vocab);
  out.p = g.add(g.scalar_mul(out.gamma, out.p_gen),
                g.scalar_mul(g.one_minus(out.gamma), out.p_copy));
  return out;
}

StepDistribution extract_step(const Graph& g, const StepExpr& s) {
  StepDistribution d;
  d.p_gen = g.value(s.p_gen).col(0);
  d.p_copy = g.value(s.p_copy).col(0);
  d.p = g.value(s.p).col(0);
  d.attn = g.value(s.attn).col(0);
  d.gamma = g.scalar(s.gamma);
  return d;
}

}  // namespace

GraphBuilder::GraphBuilder(Graph& g, const ModelParams& params, ModelParams* grads,
                           Rng* dropout_rng)
    : g_(g), params_(params), px_(new ParamExprs(bind_params(g, params, grads))),
      dropout_rng_(dropout_rng) {}

GraphBuilder::~GraphBuilder() { delete px_; }

SequenceLoss GraphBuilder::sequence_nll(const std::vector<int>& src, const std::vector<int>& tgt,
                                        bool append_eos) {
  const ModelConfig& cfg = params_.cfg;
  EncExpr enc = encode_expr(g_, *px_, cfg, src, dropout_rng_);
  auto ctx_proj = g_.matmul(px_->attn_Wc, enc.contexts);
  std::vector<int> outputs = tgt;
  if (append_eos) outputs.push_back(kEos);

  SequenceLoss out;
  auto state = enc.init;
  auto attn_feed = g_.input(Mat::Zero(cfg.dim, 1));
  int prev = kBos;
  Graph::Expr total{};
  for (int y : outputs) {
    StepExpr step = decode_step_expr(g_, *px_, cfg, enc.contexts, ctx_proj, src, prev, state,
                                     attn_feed, dropout_rng_);
    auto lp = g_.log_pick(step.p, y);
    total = total.valid() ? g_.add(total, lp) : lp;
    out.step_dists.push_back(step.p);
    out.step_attn.push_back(step.attn);
    out.step_gamma.push_back(step.gamma);
    out.step_gen.push_back(step.p_gen);
    out.step_copy.push_back(step.p_copy);
    state = step.state;
    attn_feed = step.attn_feed;
    prev = y;
  }
  out.tokens = int(outputs.size());
  out.loss = g_.scale(total, -1.0);
  return out;
}

EncoderStates encode(const ModelParams& params, const std::vector<int>& src) {
  Graph g;
  ParamExprs px = bind_params(g, params, nullptr);
  EncExpr enc = encode_expr(g, px, params.cfg, src, nullptr);
  EncoderStates out;
  out.contexts = g.value(enc.contexts);
  out.src_ids = src;
  for (auto& [h, c] : enc.init)
    out.init.layers.emplace_back(g.value(h).col(0), g.value(c).col(0));
  out.init.attn_feed = Vec::Zero(params.cfg.dim);
  return out;
}

std::pair<StepDistribution, DecoderState> decode_step(const ModelParams& params,
                                                      const EncoderStates& enc,
                                                      const DecoderState& state, int prev_id) {
  const ModelConfig& cfg = params.cfg;
  if (int(state.layers.size()) != cfg.layers || state.attn_feed.size() != cfg.dim)
    fail("decode_step: state does not match model config");
  if (enc.contexts.rows() != cfg.dim) fail("decode_step: encoder states do not match config");
  Graph g;
  ParamExprs px = bind_params(g, params, nullptr);
  auto contexts = g.input(enc.contexts);
  auto ctx_proj = g.matmul(px.attn_Wc, contexts);
  std::vector<std::pair<Graph::Expr, Graph::Expr>> st;
  for (const auto& [h, c] : state.layers) st.emplace_back(g.input(h), g.input(c));
  auto feed = g.input(state.attn_feed);
  StepExpr step = decode_step_expr(g, px, cfg, contexts, ctx_proj, enc.src_ids, prev_id, st, feed,
                                   nullptr);
  DecoderState ns;
  for (auto& [h, c] : step.state) ns.layers.emplace_back(g.value(h).col(0), g.value(c).col(0));
  ns.attn_feed = g.value(step.attn_feed).col(0);
  return {extract_step(g, step), std::move(ns)};
}

struct DecodeSession::Impl {
  Graph g;
  const ModelParams& params;
  ParamExprs px;
  std::vector<int> src;
  Graph::Expr contexts, ctx_proj;
  struct St {
    std::vector<std::pair<Graph::Expr, Graph::Expr>> layers;
    Graph::Expr attn_feed;
  };
  std::vector<St> states;

  Impl(const ModelParams& p, const std::vector<int>& s)
      : params(p), px(bind_params(g, p, nullptr)), src(s) {
    EncExpr enc = encode_expr(g, px, p.cfg, src, nullptr);
    contexts = enc.contexts;
    ctx_proj = g.matmul(px.attn_Wc, contexts);
    states.push_back(St{enc.init, g.input(Mat::Zero(p.cfg.dim, 1))});
  }
};

DecodeSession::DecodeSession(const ModelParams& params, const std::vector<int>& src)
    : impl_(new Impl(params, src)) {}

DecodeSession::~DecodeSession() { delete impl_; }

std::pair<StepDistribution, int> DecodeSession::step(int state, int prev_id) {
  Impl& im = *impl_;
  const Impl::St& st = im.states[std::size_t(state)];
  StepExpr s = decode_step_expr(im.g, im.px, im.params.cfg, im.contexts, im.ctx_proj, im.src,
                                prev_id, st.layers, st.attn_feed, nullptr);
  im.states.push_back(Impl::St{s.state, s.attn_feed});
  return {extract_step(im.g, s), int(im.states.size()) - 1};
}

ForwardResult forward_logprob(const ModelParams& params, const std::vector<int>& src,
                              const std::vector<int>& tgt, bool append_eos) {
  Graph g;
  GraphBuilder gb(g, params, nullptr);
  SequenceLoss sl = gb.sequence_nll(src, tgt, append_eos);
  ForwardResult out;
  out.logprob = -g.scalar(sl.loss);
  out.clamped = g.log_clamp_hit();
  for (std::size_t t = 0; t < sl.step_dists.size(); ++t) {
    StepDistribution d;
    d.p = g.value(sl.step_dists[t]).col(0);
    d.p_gen = g.value(sl.step_gen[t]).col(0);
    d.p_copy = g.value(sl.step_copy[t]).col(0);
    d.attn = g.value(sl.step_attn[t]).col(0);
    d.gamma = g.scalar(sl.step_gamma[t]);
    out.steps.push_back(std::move(d));
  }
  return out;
}

// ---------------------------------------------------------------------------
// checkpoint io

void save_checkpoint(const std::string& path, ModelParams& params,
                     const std::map<std::string, std::string>& meta,
                     const std::vector<std::pair<std::string, const Mat*>>& extra) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write " + path);
  out << "ckpt v1\n";
  out << "vocab=" << params.cfg.vocab << '\n';
  out << "dim=" << params.cfg.dim << '\n';
  out << "layers=" << params.cfg.layers << '\n';
  out << "dropout=" << params.cfg.dropout << '\n';
  out << "input_feed=" << (params.cfg.input_feed ? 1 : 0) << '\n';
  for (const auto& [k, v] : meta) out << "meta." << k << '=' << v << '\n';
  out << '\n';
  auto dump = [&](const std::string& name, const Mat& m) {
    out << "tensor " << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        double v = m(i, j);
        char buf[8];
        std::memcpy(buf, &v, 8);  // little-endian host assumed
        out.write(buf, 8);
      }
    out << '\n';
  };
  params.visit([&](const std::string& name, Mat& m) { dump(name, m); });
  for (const auto& [name, m] : extra) dump(name, *m);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot read " + path);
  std::string line;
  if (!std::getline(in, line) || line != "ckpt v1") fail("bad checkpoint header in " + path);
  ModelConfig cfg;
  Checkpoint ck;
  while (std::getline(in, line) && !line.empty()) {
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) fail("bad checkpoint config line: " + line);
    std::string k = line.substr(0, eq), v = line.substr(eq + 1);
    if (k == "vocab") cfg.vocab = std::stoi(v);
    else if (k == "dim") cfg.dim = std::stoi(v);
    else if (k == "layers") cfg.layers = std::stoi(v);
    else if (k == "dropout") cfg.dropout = std::stod(v);
    else if (k == "input_feed") cfg.input_feed = v != "0";
    else if (k.rfind("meta.", 0) == 0) ck.meta[k.substr(5)] = v;
    else fail("unknown checkpoint config key: " + k);
  }
  ck.params = make_shell(cfg);
  std::map<std::string, Mat*> slots;
  ck.params.visit([&](const std::string& name, Mat& m) { slots[name] = &m; });
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream hdr(line);
    std::string tag, name;
    Eigen::Index rows, cols;
    hdr >> tag >> name >> rows >> cols;
    if (tag != "tensor" || hdr.fail()) fail("bad tensor header in " + path + ": " + line);
    Mat* dst;
    auto it = slots.find(name);
    if (it != slots.end()) {
      if (it->second->rows() != rows || it->second->cols() != cols)
        fail("checkpoint tensor " + name + " shape does not match config");
      dst = it->second;
    } else {
      dst = &ck.extra[name];
      *dst = Mat::Zero(rows, cols);
    }
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) {
        char buf[8];
        in.read(buf, 8);
        if (!in) fail("truncated tensor " + name + " in " + path);
        double v;
        std::memcpy(&v, buf, 8);
        (*dst)(i, j) = v;
      }
    in.get();  // trailing newline
  }
  return ck;
}

}  // namespace copynmt
