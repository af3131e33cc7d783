#pragma once

#include <Eigen/Dense>
#include <cctype>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "ras/encoders.hpp"
#include "ras/errors.hpp"
#include "ras/feature.hpp"
#include "ras/rng.hpp"
#include "ras/sample.hpp"

namespace ras {

using Mat = Eigen::MatrixXd;

enum class TokenMode { None, Shared, Distinct };
enum class DecoderKind { NonAr, Ar };

inline const char* token_mode_name(TokenMode m) {
  switch (m) {
    case TokenMode::None: return "none";
    case TokenMode::Shared: return "shared";
    case TokenMode::Distinct: return "distinct";
  }
  return "?";
}

inline TokenMode token_mode_from_name(const std::string& s) {
  for (TokenMode m : {TokenMode::None, TokenMode::Shared, TokenMode::Distinct})
    if (s == token_mode_name(m)) return m;
  fail(ErrorCode::ConfigInvalid, "unknown special_token_mode '" + s + "'");
}

inline const char* decoder_name(DecoderKind d) { return d == DecoderKind::NonAr ? "nonar" : "ar"; }

inline DecoderKind decoder_from_name(const std::string& s) {
  if (s == "nonar") return DecoderKind::NonAr;
  if (s == "ar") return DecoderKind::Ar;
  fail(ErrorCode::ConfigInvalid, "unknown decoder '" + s + "'");
}

struct TrainConfig {
  int d = 64;
  int layers = 3;
  int heads = 4;
  int ffn_hidden = 128;
  double pos_weight = 5.0;
  double threshold = 0.5;
  double base_lr = 3e-4;
  double warmup_frac = 0.03;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  int batch_size = 32;
  int epochs = 10;
  uint64_t seed = 0;
  TokenMode special_token_mode = TokenMode::Distinct;
  int max_candidates = 24;
  int max_seq_len = 128;
  bool normalize_by_weight_sum = false;
  DecoderKind decoder = DecoderKind::NonAr;
  double init_std = 0.02;

  void validate() const {
    if (d <= 0 || heads <= 0 || d % heads != 0)
      fail(ErrorCode::ConfigInvalid, "d must be a positive multiple of heads");
    if (pos_weight <= 0) fail(ErrorCode::ConfigInvalid, "pos_weight must be positive");
    if (threshold <= 0 || threshold >= 1) fail(ErrorCode::ConfigInvalid, "threshold not in (0,1)");
    if (layers < 0 || ffn_hidden <= 0 || batch_size <= 0 || epochs < 0 || max_candidates <= 0 ||
        max_seq_len <= 0)
      fail(ErrorCode::ConfigInvalid, "invalid model size or training parameter");
  }
};

inline nlohmann::ordered_json train_config_to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["d"] = c.d;
  j["layers"] = c.layers;
  j["heads"] = c.heads;
  j["ffn_hidden"] = c.ffn_hidden;
  j["pos_weight"] = c.pos_weight;
  j["threshold"] = c.threshold;
  j["base_lr"] = c.base_lr;
  j["warmup_frac"] = c.warmup_frac;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["adam_eps"] = c.adam_eps;
  j["weight_decay"] = c.weight_decay;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["seed"] = c.seed;
  j["special_token_mode"] = token_mode_name(c.special_token_mode);
  j["max_candidates"] = c.max_candidates;
  j["max_seq_len"] = c.max_seq_len;
  j["normalize_by_weight_sum"] = c.normalize_by_weight_sum;
  j["decoder"] = decoder_name(c.decoder);
  j["init_std"] = c.init_std;
  return j;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.d = j.at("d").get<int>();
  c.layers = j.at("layers").get<int>();
  c.heads = j.at("heads").get<int>();
  c.ffn_hidden = j.at("ffn_hidden").get<int>();
  c.pos_weight = j.at("pos_weight").get<double>();
  c.threshold = j.at("threshold").get<double>();
  c.base_lr = j.at("base_lr").get<double>();
  c.warmup_frac = j.at("warmup_frac").get<double>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.adam_eps = j.at("adam_eps").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.epochs = j.at("epochs").get<int>();
  c.seed = j.at("seed").get<uint64_t>();
  c.special_token_mode = token_mode_from_name(j.at("special_token_mode").get<std::string>());
  c.max_candidates = j.at("max_candidates").get<int>();
  c.max_seq_len = j.at("max_seq_len").get<int>();
  c.normalize_by_weight_sum = j.at("normalize_by_weight_sum").get<bool>();
  c.decoder = decoder_from_name(j.at("decoder").get<std::string>());
  c.init_std = j.at("init_std").get<double>();
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Vocabulary (word-level over the closed template vocabulary)

struct Vocab {
  std::vector<std::string> words;
  std::map<std::string, int> index;

  int id(const std::string& w) const {
    auto it = index.find(w);
    if (it == index.end()) fail(ErrorCode::VocabMiss, "unknown prompt word '" + w + "'");
    return it->second;
  }
  int size() const { return int(words.size()); }
};

/// Lowercase and strip non-alphanumeric edges; placeholders pass unchanged.
inline std::vector<std::string> tokenize_prompt(const std::string& prompt) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < prompt.size()) {
    while (i < prompt.size() && std::isspace(uint8_t(prompt[i]))) ++i;
    size_t j = i;
    while (j < prompt.size() && !std::isspace(uint8_t(prompt[j]))) ++j;
    if (j > i) {
      std::string tok = prompt.substr(i, j - i);
      if (tok.find(kMaskRefPlaceholder) != std::string::npos) {
        out.emplace_back(kMaskRefPlaceholder);
      } else {
        size_t a = 0, b = tok.size();
        while (a < b && !std::isalnum(uint8_t(tok[a]))) ++a;
        while (b > a && !std::isalnum(uint8_t(tok[b - 1]))) --b;
        if (b > a) {
          std::string w = tok.substr(a, b - a);
          for (char& ch : w) ch = char(std::tolower(uint8_t(ch)));
          out.push_back(std::move(w));
        }
      }
    }
    i = j;
  }
  return out;
}

inline Vocab build_vocab(const std::vector<std::string>& prompts) {
  std::set<std::string> words;
  for (const auto& p : prompts)
    for (const auto& w : tokenize_prompt(p))
      if (w != kMaskRefPlaceholder) words.insert(w);
  Vocab v;
  for (const auto& w : words) {
    v.index[w] = int(v.words.size());
    v.words.push_back(w);
  }
  return v;
}

// ---------------------------------------------------------------------------
// Sequence layout

enum class Role : uint8_t { PromptWord, RefPre, RefToken, PoolPre, CandContext, CandQuery, ArTarget };

struct LayoutItem {
  Role role;
  int index;  // word id for PromptWord, candidate index otherwise (-1 for pre tokens)
};

struct SequenceLayout {
  std::vector<LayoutItem> items;
  std::vector<int> query_positions;  // position of the query copy of candidate i
  int n_candidates = 0;
};

/// Context-then-requery layout: prompt words with `<mask-ref>` placeholders
/// replaced by [ref_pre?, ref token], then per candidate [pool_pre?, token],
/// then every candidate token again as the query copy.
inline SequenceLayout build_sequence(const std::string& prompt,
                                     const std::vector<int>& ref_indices, int n_candidates,
                                     const Vocab& vocab, const TrainConfig& cfg,
                                     bool include_queries = true) {
  if (n_candidates > cfg.max_candidates)
    fail(ErrorCode::TooManyCandidates,
         std::to_string(n_candidates) + " candidates, limit " + std::to_string(cfg.max_candidates));

  SequenceLayout layout;
  layout.n_candidates = n_candidates;
  bool pre = cfg.special_token_mode != TokenMode::None;

  size_t next_ref = 0;
  for (const std::string& tok : tokenize_prompt(prompt)) {
    if (tok == kMaskRefPlaceholder) {
      if (next_ref >= ref_indices.size())
        fail(ErrorCode::IndexOutOfRange, "more placeholders than ref indices");
      int cand = ref_indices[next_ref++];
      if (cand < 0 || cand >= n_candidates)
        fail(ErrorCode::IndexOutOfRange, "ref index out of candidate range");
      if (pre) layout.items.push_back({Role::RefPre, cand});
      layout.items.push_back({Role::RefToken, cand});
    } else {
      layout.items.push_back({Role::PromptWord, vocab.id(tok)});
    }
  }
  if (next_ref != ref_indices.size())
    fail(ErrorCode::IndexOutOfRange, "unused ref indices");

  for (int i = 0; i < n_candidates; ++i) {
    if (pre) layout.items.push_back({Role::PoolPre, i});
    layout.items.push_back({Role::CandContext, i});
  }
  if (include_queries) {
    for (int i = 0; i < n_candidates; ++i) {
      layout.query_positions.push_back(int(layout.items.size()));
      layout.items.push_back({Role::CandQuery, i});
    }
  }
  if (int(layout.items.size()) > cfg.max_seq_len)
    fail(ErrorCode::SequenceTooLong, "sequence length " + std::to_string(layout.items.size()) +
                                         " exceeds " + std::to_string(cfg.max_seq_len));
  return layout;
}

// ---------------------------------------------------------------------------
// Parameters

struct ModelParams {
  TrainConfig cfg;
  int vocab_size = 0;
  int feat_dim = 0;  // concatenated ensemble channels

  Mat word_emb, pos_emb;
  Mat proj_w1, proj_b1, proj_w2, proj_b2;
  Mat pool_pre, ref_pre;
  struct Block {
    Mat ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
    Mat ln2_g, ln2_b, fw1, fb1, fw2, fb2;
  };
  std::vector<Block> blocks;
  Mat lnf_g, lnf_b;
  Mat head_w1, head_b1, head_w2, head_b2;
  Mat ar_w1, ar_b1, ar_w2, ar_b2, stop_emb;
};

/// Enumerates every tensor with a stable name; ordering defines the checkpoint
/// payload order and the gradient-check coordinate space.
template <typename Params, typename Fn>
void visit_params(Params& p, Fn&& fn) {
  fn("word_emb", p.word_emb);
  fn("pos_emb", p.pos_emb);
  fn("proj_w1", p.proj_w1);
  fn("proj_b1", p.proj_b1);
  fn("proj_w2", p.proj_w2);
  fn("proj_b2", p.proj_b2);
  fn("pool_pre", p.pool_pre);
  fn("ref_pre", p.ref_pre);
  for (size_t l = 0; l < p.blocks.size(); ++l) {
    auto& b = p.blocks[l];
    std::string base = "blocks." + std::to_string(l) + ".";
    fn(base + "ln1_g", b.ln1_g);
    fn(base + "ln1_b", b.ln1_b);
    fn(base + "wq", b.wq);
    fn(base + "bq", b.bq);
    fn(base + "wk", b.wk);
    fn(base + "bk", b.bk);
    fn(base + "wv", b.wv);
    fn(base + "bv", b.bv);
    fn(base + "wo", b.wo);
    fn(base + "bo", b.bo);
    fn(base + "ln2_g", b.ln2_g);
    fn(base + "ln2_b", b.ln2_b);
    fn(base + "fw1", b.fw1);
    fn(base + "fb1", b.fb1);
    fn(base + "fw2", b.fw2);
    fn(base + "fb2", b.fb2);
  }
  fn("lnf_g", p.lnf_g);
  fn("lnf_b", p.lnf_b);
  fn("head_w1", p.head_w1);
  fn("head_b1", p.head_b1);
  fn("head_w2", p.head_w2);
  fn("head_b2", p.head_b2);
  fn("ar_w1", p.ar_w1);
  fn("ar_b1", p.ar_b1);
  fn("ar_w2", p.ar_w2);
  fn("ar_b2", p.ar_b2);
  fn("stop_emb", p.stop_emb);
}

inline ModelParams init_params(const TrainConfig& cfg, int vocab_size, int feat_dim,
                               uint64_t seed) {
  cfg.validate();
  ModelParams p;
  p.cfg = cfg;
  p.vocab_size = vocab_size;
  p.feat_dim = feat_dim;
  const int d = cfg.d, h = cfg.ffn_hidden;

  p.word_emb.resize(vocab_size, d);
  p.pos_emb.resize(cfg.max_seq_len, d);
  p.proj_w1.resize(feat_dim, d);
  p.proj_b1.resize(d, 1);
  p.proj_w2.resize(d, d);
  p.proj_b2.resize(d, 1);
  p.pool_pre.resize(d, 1);
  p.ref_pre.resize(d, 1);
  p.blocks.resize(size_t(cfg.layers));
  for (auto& b : p.blocks) {
    b.ln1_g.resize(d, 1);
    b.ln1_b.resize(d, 1);
    b.wq.resize(d, d);
    b.bq.resize(d, 1);
    b.wk.resize(d, d);
    b.bk.resize(d, 1);
    b.wv.resize(d, d);
    b.bv.resize(d, 1);
    b.wo.resize(d, d);
    b.bo.resize(d, 1);
    b.ln2_g.resize(d, 1);
    b.ln2_b.resize(d, 1);
    b.fw1.resize(d, h);
    b.fb1.resize(h, 1);
    b.fw2.resize(h, d);
    b.fb2.resize(d, 1);
  }
  p.lnf_g.resize(d, 1);
  p.lnf_b.resize(d, 1);
  p.head_w1.resize(d, d);
  p.head_b1.resize(d, 1);
  p.head_w2.resize(d, 1);
  p.head_b2.resize(1, 1);
  p.ar_w1.resize(d, d);
  p.ar_b1.resize(d, 1);
  p.ar_w2.resize(d, d);
  p.ar_b2.resize(d, 1);
  p.stop_emb.resize(d, 1);

  Rng rng = Rng(seed).child("init");
  visit_params(p, [&](const std::string& name, Mat& m) {
    std::string leaf = name.substr(name.rfind('.') + 1);
    bool gain = leaf.ends_with("_g");
    bool bias = leaf.ends_with("_b") || leaf == "bq" || leaf == "bk" || leaf == "bv" ||
                leaf == "bo" || leaf.starts_with("fb") || leaf.starts_with("proj_b") ||
                leaf.starts_with("head_b") || leaf.starts_with("ar_b");
    if (gain) {
      m.setOnes();
    } else if (bias) {
      m.setZero();
    } else {
      for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = cfg.init_std * rng.normal();
    }
  });
  return p;
}

inline ModelParams zeros_like(const ModelParams& p) {
  ModelParams g = p;
  visit_params(g, [](const std::string&, Mat& m) { m.setZero(); });
  return g;
}

// ---------------------------------------------------------------------------
// Mask tokenization

/// Pool each ensemble feature map over the mask (exact-area downsample, bbox
/// center fallback) and concatenate in encoder order.
inline std::vector<double> pool_ensemble(const std::vector<FeatureMap>& fms,
                                         const BinaryMask& mask) {
  std::vector<double> out;
  for (const FeatureMap& fm : fms) {
    CoverageMask cov = downsample(mask, fm.grid_h, fm.grid_w);
    auto cell = pool_fallback_cell(mask, fm.grid_h, fm.grid_w);
    auto pooled = mask_pool(fm, cov, cell);
    out.insert(out.end(), pooled.begin(), pooled.end());
  }
  return out;
}

/// Projector forward: rows of `pooled` (n x feat_dim) to mask tokens (n x d).
inline Mat project_tokens(const ModelParams& p, const Mat& pooled, Mat* t1_cache = nullptr) {
  Mat t1 = (pooled * p.proj_w1).rowwise() + p.proj_b1.col(0).transpose();
  if (t1_cache) *t1_cache = t1;
  Mat a1 = t1.unaryExpr([](double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); });
  return (a1 * p.proj_w2).rowwise() + p.proj_b2.col(0).transpose();
}

/// The spec's tokenize_mask: ensemble pooling followed by the projector.
inline Eigen::VectorXd tokenize_mask(const std::vector<FeatureMap>& fms, const BinaryMask& mask,
                                     const ModelParams& params) {
  auto pooled = pool_ensemble(fms, mask);
  if (int(pooled.size()) != params.feat_dim)
    fail(ErrorCode::DimensionMismatch, "pooled feature size does not match projector input");
  Mat row(1, params.feat_dim);
  for (int i = 0; i < params.feat_dim; ++i) row(0, i) = pooled[size_t(i)];
  return project_tokens(params, row).row(0).transpose();
}

// ---------------------------------------------------------------------------
// Forward / backward

namespace nn {

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }
inline double gelu_grad(double x) {
  return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) + x * std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
}

inline constexpr double kLnEps = 1e-5;

// y = g * (x - mean) / sqrt(var + eps) + b, rowwise
inline void layer_norm(const Mat& x, const Mat& g, const Mat& b, Mat& xhat, Eigen::VectorXd& inv,
                       Mat& y) {
  const Eigen::Index d = x.cols();
  xhat.resize(x.rows(), d);
  inv.resize(x.rows());
  y.resize(x.rows(), d);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double mu = x.row(r).mean();
    double var = (x.row(r).array() - mu).square().sum() / double(d);
    double is = 1.0 / std::sqrt(var + kLnEps);
    inv(r) = is;
    xhat.row(r) = (x.row(r).array() - mu) * is;
    y.row(r) = xhat.row(r).cwiseProduct(g.col(0).transpose()) + b.col(0).transpose();
  }
}

inline void layer_norm_backward(const Mat& dy, const Mat& xhat, const Eigen::VectorXd& inv,
                                const Mat& g, Mat& dx, Mat& dg, Mat& db) {
  const Eigen::Index d = xhat.cols();
  dx.resize(xhat.rows(), d);
  for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
    Eigen::RowVectorXd dxh = dy.row(r).cwiseProduct(g.col(0).transpose());
    double m1 = dxh.mean();
    double m2 = dxh.cwiseProduct(xhat.row(r)).mean();
    dx.row(r) = (dxh.array() - m1 - xhat.row(r).array() * m2) * inv(r);
    dg.col(0) += dy.row(r).cwiseProduct(xhat.row(r)).transpose();
    db.col(0) += dy.row(r).transpose();
  }
}

}  // namespace nn

/// Attention visibility. Queries read the prompt and every candidate's context
/// pair but not each other, and context pairs do not read other candidates;
/// with zeroed positional embeddings this makes candidate logits equivariant
/// to candidate order. AR target tokens decode causally over everything.
inline std::vector<uint8_t> attention_mask(const SequenceLayout& layout) {
  const int S = int(layout.items.size());
  std::vector<uint8_t> allow(size_t(S) * S, 0);
  auto seg = [&](int p) -> std::pair<int, int> {  // (kind, candidate)
    switch (layout.items[size_t(p)].role) {
      case Role::PromptWord:
      case Role::RefPre:
      case Role::RefToken: return {0, -1};
      case Role::PoolPre:
      case Role::CandContext: return {1, layout.items[size_t(p)].index};
      case Role::CandQuery: return {2, layout.items[size_t(p)].index};
      case Role::ArTarget: return {3, -1};
    }
    return {0, -1};
  };
  for (int i = 0; i < S; ++i) {
    auto [ki, ci] = seg(i);
    for (int j = 0; j <= i; ++j) {
      auto [kj, cj] = seg(j);
      bool ok = false;
      if (ki == 0) ok = kj == 0;
      else if (ki == 1) ok = kj == 0 || (kj == 1 && cj == ci);
      else if (ki == 2) ok = kj == 0 || kj == 1 || j == i;
      else ok = kj == 0 || kj == 1 || kj == 3;
      if (ok) allow[size_t(i) * S + j] = 1;
    }
  }
  return allow;
}

struct LayerCache {
  Mat x_in, ln1_xhat, a, q, k, v, o, x_mid, ln2_xhat, b, f1, g;
  Eigen::VectorXd ln1_inv, ln2_inv;
  std::vector<Mat> attn;  // per-head softmax probabilities
};

struct ForwardTrace {
  Mat pooled;      // n_candidates x feat_dim (constant input)
  Mat proj_t1;     // projector hidden pre-activation
  Mat tokens;      // n_candidates x d
  Mat x0;          // input embeddings incl. positions
  std::vector<LayerCache> layers;
  Mat lnf_xhat, y;
  Eigen::VectorXd lnf_inv;
  std::vector<int> readouts;  // positions fed to the readout head
  Mat head_h1;                // readout MLP hidden pre-activation
  std::vector<double> logits; // binary head
  Mat ar_preds;               // AR head, one row per readout
  bool zero_ref = false;
};

struct ForwardOptions {
  bool zero_ref = false;                 // replace reference mask tokens by zero vectors
  DecoderKind head = DecoderKind::NonAr;
  std::vector<int> readouts;             // defaults to layout.query_positions
};

inline ForwardTrace forward(const ModelParams& p, const SequenceLayout& layout, const Mat& pooled,
                            const ForwardOptions& opts = {}) {
  const int S = int(layout.items.size());
  const int d = p.cfg.d, H = p.cfg.heads, dh = d / H;
  if (S > p.cfg.max_seq_len)
    fail(ErrorCode::SequenceTooLong, "sequence length " + std::to_string(S));

  ForwardTrace t;
  t.pooled = pooled;
  t.zero_ref = opts.zero_ref;
  t.tokens = project_tokens(p, pooled, &t.proj_t1);

  t.x0.resize(S, d);
  for (int pos = 0; pos < S; ++pos) {
    const LayoutItem& it = layout.items[size_t(pos)];
    switch (it.role) {
      case Role::PromptWord: t.x0.row(pos) = p.word_emb.row(it.index); break;
      case Role::RefPre:
        t.x0.row(pos) = (p.cfg.special_token_mode == TokenMode::Shared ? p.pool_pre : p.ref_pre)
                            .col(0)
                            .transpose();
        break;
      case Role::PoolPre: t.x0.row(pos) = p.pool_pre.col(0).transpose(); break;
      case Role::RefToken:
        if (opts.zero_ref)
          t.x0.row(pos).setZero();
        else
          t.x0.row(pos) = t.tokens.row(it.index);
        break;
      case Role::CandContext:
      case Role::CandQuery:
      case Role::ArTarget: t.x0.row(pos) = t.tokens.row(it.index); break;
    }
    t.x0.row(pos) += p.pos_emb.row(pos);
  }

  std::vector<uint8_t> allow = attention_mask(layout);
  const double scale = 1.0 / std::sqrt(double(dh));
  Mat x = t.x0;
  t.layers.resize(p.blocks.size());
  for (size_t l = 0; l < p.blocks.size(); ++l) {
    const auto& blk = p.blocks[l];
    LayerCache& c = t.layers[l];
    c.x_in = x;
    nn::layer_norm(x, blk.ln1_g, blk.ln1_b, c.ln1_xhat, c.ln1_inv, c.a);
    c.q.noalias() = c.a * blk.wq;
    c.q.rowwise() += blk.bq.col(0).transpose();
    c.k.noalias() = c.a * blk.wk;
    c.k.rowwise() += blk.bk.col(0).transpose();
    c.v.noalias() = c.a * blk.wv;
    c.v.rowwise() += blk.bv.col(0).transpose();

    c.o.resize(S, d);
    c.attn.assign(size_t(H), Mat());
    for (int h = 0; h < H; ++h) {
      auto Qh = c.q.middleCols(h * dh, dh);
      auto Kh = c.k.middleCols(h * dh, dh);
      auto Vh = c.v.middleCols(h * dh, dh);
      Mat scores = Qh * Kh.transpose() * scale;
      Mat& prob = c.attn[size_t(h)];
      prob.resize(S, S);
      for (int i = 0; i < S; ++i) {
        double mx = -1e300;
        for (int j = 0; j < S; ++j)
          if (allow[size_t(i) * S + j]) mx = std::max(mx, scores(i, j));
        double sum = 0.0;
        for (int j = 0; j < S; ++j) {
          double e = allow[size_t(i) * S + j] ? std::exp(scores(i, j) - mx) : 0.0;
          prob(i, j) = e;
          sum += e;
        }
        prob.row(i) /= sum;
      }
      c.o.middleCols(h * dh, dh).noalias() = prob * Vh;
    }
    Mat attn_out = c.o * blk.wo;
    attn_out.rowwise() += blk.bo.col(0).transpose();
    c.x_mid = x + attn_out;

    nn::layer_norm(c.x_mid, blk.ln2_g, blk.ln2_b, c.ln2_xhat, c.ln2_inv, c.b);
    c.f1.noalias() = c.b * blk.fw1;
    c.f1.rowwise() += blk.fb1.col(0).transpose();
    c.g = c.f1.unaryExpr(&nn::gelu);
    Mat f = c.g * blk.fw2;
    f.rowwise() += blk.fb2.col(0).transpose();
    x = c.x_mid + f;
  }
  nn::layer_norm(x, p.lnf_g, p.lnf_b, t.lnf_xhat, t.lnf_inv, t.y);

  t.readouts = opts.readouts.empty() && opts.head == DecoderKind::NonAr ? layout.query_positions
                                                                        : opts.readouts;
  const int R = int(t.readouts.size());
  if (opts.head == DecoderKind::NonAr) {
    t.head_h1.resize(R, d);
    t.logits.resize(size_t(R));
    for (int r = 0; r < R; ++r) {
      Eigen::RowVectorXd h1 =
          t.y.row(t.readouts[size_t(r)]) * p.head_w1 + p.head_b1.col(0).transpose();
      t.head_h1.row(r) = h1;
      double logit = h1.unaryExpr(&nn::gelu).dot(p.head_w2.col(0)) + p.head_b2(0, 0);
      t.logits[size_t(r)] = logit;
    }
  } else {
    t.head_h1.resize(R, d);
    t.ar_preds.resize(R, d);
    for (int r = 0; r < R; ++r) {
      Eigen::RowVectorXd h1 =
          t.y.row(t.readouts[size_t(r)]) * p.ar_w1 + p.ar_b1.col(0).transpose();
      t.head_h1.row(r) = h1;
      t.ar_preds.row(r) =
          h1.unaryExpr(&nn::gelu) * p.ar_w2 + p.ar_b2.col(0).transpose();
    }
  }
  return t;
}

/// Backpropagate readout gradients (one row per readout: dlogit in column 0
/// for the binary head, or a full d-row for the AR head) into `grads`.
inline void backward(const ModelParams& p, const SequenceLayout& layout, const ForwardTrace& t,
                     const Mat& readout_grads, DecoderKind head, ModelParams& grads) {
  const int S = int(layout.items.size());
  const int d = p.cfg.d, H = p.cfg.heads, dh = d / H;
  const double scale = 1.0 / std::sqrt(double(dh));

  Mat dy = Mat::Zero(S, d);
  const int R = int(t.readouts.size());
  for (int r = 0; r < R; ++r) {
    Eigen::RowVectorXd h1 = t.head_h1.row(r);
    Eigen::RowVectorXd a = h1.unaryExpr(&nn::gelu);
    Eigen::RowVectorXd dh1;
    if (head == DecoderKind::NonAr) {
      double dl = readout_grads(r, 0);
      grads.head_w2.col(0) += dl * a.transpose();
      grads.head_b2(0, 0) += dl;
      Eigen::RowVectorXd da = dl * p.head_w2.col(0).transpose();
      dh1 = da.cwiseProduct(h1.unaryExpr(&nn::gelu_grad));
      grads.head_w1.noalias() += t.y.row(t.readouts[size_t(r)]).transpose() * dh1;
      grads.head_b1.col(0) += dh1.transpose();
      dy.row(t.readouts[size_t(r)]) += dh1 * p.head_w1.transpose();
    } else {
      Eigen::RowVectorXd dpred = readout_grads.row(r);
      grads.ar_w2.noalias() += a.transpose() * dpred;
      grads.ar_b2.col(0) += dpred.transpose();
      Eigen::RowVectorXd da = dpred * p.ar_w2.transpose();
      dh1 = da.cwiseProduct(h1.unaryExpr(&nn::gelu_grad));
      grads.ar_w1.noalias() += t.y.row(t.readouts[size_t(r)]).transpose() * dh1;
      grads.ar_b1.col(0) += dh1.transpose();
      dy.row(t.readouts[size_t(r)]) += dh1 * p.ar_w1.transpose();
    }
  }

  Mat dx;
  nn::layer_norm_backward(dy, t.lnf_xhat, t.lnf_inv, p.lnf_g, dx, grads.lnf_g, grads.lnf_b);

  for (int l = int(p.blocks.size()) - 1; l >= 0; --l) {
    const auto& blk = p.blocks[size_t(l)];
    auto& gblk = grads.blocks[size_t(l)];
    const LayerCache& c = t.layers[size_t(l)];

    // FFN branch: x = x_mid + gelu(b fw1 + fb1) fw2 + fb2
    Mat dg = dx * blk.fw2.transpose();
    gblk.fw2.noalias() += c.g.transpose() * dx;
    gblk.fb2.col(0) += dx.colwise().sum().transpose();
    Mat df1 = dg.cwiseProduct(c.f1.unaryExpr(&nn::gelu_grad));
    gblk.fw1.noalias() += c.b.transpose() * df1;
    gblk.fb1.col(0) += df1.colwise().sum().transpose();
    Mat db_ln = df1 * blk.fw1.transpose();
    Mat dx_mid;
    nn::layer_norm_backward(db_ln, c.ln2_xhat, c.ln2_inv, blk.ln2_g, dx_mid, gblk.ln2_g,
                            gblk.ln2_b);
    dx_mid += dx;  // residual

    // attention branch: x_mid = x_in + (o wo + bo)
    Mat do_ = dx_mid * blk.wo.transpose();
    gblk.wo.noalias() += c.o.transpose() * dx_mid;
    gblk.bo.col(0) += dx_mid.colwise().sum().transpose();

    Mat dq = Mat::Zero(S, d), dk = Mat::Zero(S, d), dv = Mat::Zero(S, d);
    for (int h = 0; h < H; ++h) {
      auto Qh = c.q.middleCols(h * dh, dh);
      auto Kh = c.k.middleCols(h * dh, dh);
      auto Vh = c.v.middleCols(h * dh, dh);
      const Mat& prob = c.attn[size_t(h)];
      Mat doh = do_.middleCols(h * dh, dh);
      Mat dprob = doh * Vh.transpose();
      dv.middleCols(h * dh, dh).noalias() += prob.transpose() * doh;
      // softmax backward row-wise
      Mat dscore(S, S);
      for (int i = 0; i < S; ++i) {
        double dot = dprob.row(i).dot(prob.row(i));
        dscore.row(i) = prob.row(i).cwiseProduct((dprob.row(i).array() - dot).matrix());
      }
      dq.middleCols(h * dh, dh).noalias() += dscore * Kh * scale;
      dk.middleCols(h * dh, dh).noalias() += dscore.transpose() * Qh * scale;
    }
    Mat da = Mat::Zero(S, d);
    gblk.wq.noalias() += c.a.transpose() * dq;
    gblk.bq.col(0) += dq.colwise().sum().transpose();
    da.noalias() += dq * blk.wq.transpose();
    gblk.wk.noalias() += c.a.transpose() * dk;
    gblk.bk.col(0) += dk.colwise().sum().transpose();
    da.noalias() += dk * blk.wk.transpose();
    gblk.wv.noalias() += c.a.transpose() * dv;
    gblk.bv.col(0) += dv.colwise().sum().transpose();
    da.noalias() += dv * blk.wv.transpose();

    Mat dx_in;
    nn::layer_norm_backward(da, c.ln1_xhat, c.ln1_inv, blk.ln1_g, dx_in, gblk.ln1_g, gblk.ln1_b);
    dx = dx_in + dx_mid;  // residual
  }

  // distribute input gradients to embeddings, special tokens and mask tokens
  Mat dtokens = Mat::Zero(t.tokens.rows(), d);
  for (int pos = 0; pos < S; ++pos) {
    const LayoutItem& it = layout.items[size_t(pos)];
    grads.pos_emb.row(pos) += dx.row(pos);
    switch (it.role) {
      case Role::PromptWord: grads.word_emb.row(it.index) += dx.row(pos); break;
      case Role::RefPre:
        (p.cfg.special_token_mode == TokenMode::Shared ? grads.pool_pre : grads.ref_pre).col(0) +=
            dx.row(pos).transpose();
        break;
      case Role::PoolPre: grads.pool_pre.col(0) += dx.row(pos).transpose(); break;
      case Role::RefToken:
        if (!t.zero_ref) dtokens.row(it.index) += dx.row(pos);
        break;
      case Role::CandContext:
      case Role::CandQuery:
      case Role::ArTarget: dtokens.row(it.index) += dx.row(pos); break;
    }
  }

  // projector backward (pooled features are constant inputs)
  Mat da1 = dtokens * p.proj_w2.transpose();
  Mat a1 = t.proj_t1.unaryExpr(&nn::gelu);
  grads.proj_w2.noalias() += a1.transpose() * dtokens;
  grads.proj_b2.col(0) += dtokens.colwise().sum().transpose();
  Mat dt1 = da1.cwiseProduct(t.proj_t1.unaryExpr(&nn::gelu_grad));
  grads.proj_w1.noalias() += t.pooled.transpose() * dt1;
  grads.proj_b1.col(0) += dt1.colwise().sum().transpose();
}

// ---------------------------------------------------------------------------
// Losses

struct LossResult {
  double loss = 0.0;
  Mat readout_grads;  // shape matches the head: (n,1) for binary, (n,d) for AR
};

/// Weighted binary cross-entropy, averaged over all candidates. Positive
/// candidates are up-weighted by pos_weight; normalization divides by the
/// candidate count (or by the weight sum behind the config flag).
inline LossResult bce_loss(const std::vector<double>& logits, const std::vector<uint8_t>& labels,
                           double pos_weight, bool normalize_by_weight_sum = false) {
  if (logits.empty() || logits.size() != labels.size())
    fail(ErrorCode::EmptyBatch, "bce_loss needs matching non-empty logits and labels");
  double denom = 0.0;
  if (normalize_by_weight_sum) {
    for (uint8_t y : labels) denom += y ? pos_weight : 1.0;
  } else {
    denom = double(logits.size());
  }
  LossResult res;
  res.readout_grads.resize(Eigen::Index(logits.size()), 1);
  for (size_t i = 0; i < logits.size(); ++i) {
    double l = logits[i], y = labels[i] ? 1.0 : 0.0;
    double w = labels[i] ? pos_weight : 1.0;
    res.loss += w * (std::max(l, 0.0) - l * y + std::log1p(std::exp(-std::abs(l))));
    double sig = 1.0 / (1.0 + std::exp(-l));
    res.readout_grads(Eigen::Index(i), 0) = w * (sig - y) / denom;
  }
  res.loss /= denom;
  return res;
}

/// Per-coordinate mean squared error against the target embeddings; the rows
/// of `targets` are treated as constants (the stop row's gradient is returned
/// separately so the learnable stop embedding still trains).
inline LossResult ar_loss(const Mat& preds, const Mat& targets, Mat* dstop = nullptr) {
  if (preds.rows() == 0) fail(ErrorCode::EmptyBatch, "ar_loss on empty prediction sequence");
  LossResult res;
  double denom = double(preds.rows()) * double(preds.cols());
  Mat diff = preds - targets;
  res.loss = diff.squaredNorm() / denom;
  res.readout_grads = 2.0 * diff / denom;
  if (dstop) *dstop = -2.0 * diff.row(preds.rows() - 1).transpose() / denom;
  return res;
}

// ---------------------------------------------------------------------------
// Prediction

inline std::vector<int> predict_selection(const std::vector<double>& logits, double threshold) {
  std::vector<int> out;
  for (size_t i = 0; i < logits.size(); ++i) {
    double sig = 1.0 / (1.0 + std::exp(-logits[i]));
    if (sig > threshold) out.push_back(int(i));
  }
  return out;
}

inline double cosine(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
  double na = a.norm(), nb = b.norm();
  return a.dot(b) / (na * nb + 1e-12);
}

/// One AR matching step: pick the unchosen candidate closest to the emitted
/// embedding, or stop (-1) when the stop embedding is strictly closer than all
/// remaining candidates.
inline int match_step(const Eigen::RowVectorXd& emitted, const Mat& tokens,
                      const std::vector<uint8_t>& chosen, const Mat& stop_emb) {
  double stop_sim = cosine(emitted, stop_emb.col(0).transpose());
  int best = -1;
  double best_sim = -2.0;
  for (Eigen::Index i = 0; i < tokens.rows(); ++i) {
    if (chosen[size_t(i)]) continue;
    double sim = cosine(emitted, tokens.row(i));
    if (sim > best_sim) {
      best_sim = sim;
      best = int(i);
    }
  }
  if (best < 0 || stop_sim > best_sim) return -1;
  return best;
}

/// Run the whole matching loop over a fixed sequence of emitted embeddings
/// (used by tests to verify subset coverage of the AR decoder).
inline std::vector<int> match_embeddings(const Mat& emitted, const Mat& tokens,
                                         const Mat& stop_emb) {
  std::vector<uint8_t> chosen(size_t(tokens.rows()), 0);
  std::vector<int> out;
  for (Eigen::Index s = 0; s < emitted.rows(); ++s) {
    int pick = match_step(emitted.row(s), tokens, chosen, stop_emb);
    if (pick < 0) break;
    chosen[size_t(pick)] = 1;
    out.push_back(pick);
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Gradient check

/// Compare the analytic gradient of the binary-head loss on one sample against
/// central finite differences on a seeded coordinate subsample (at least two
/// coordinates per tensor and min_coords overall). Coordinates where both
/// gradients vanish are skipped.
inline double grad_check(const ModelParams& params, const SequenceLayout& layout,
                         const Mat& pooled, const std::vector<uint8_t>& labels, double eps = 1e-4,
                         int min_coords = 200, uint64_t seed = 0) {
  ModelParams grads = zeros_like(params);
  {
    ForwardTrace t = forward(params, layout, pooled);
    LossResult lr = bce_loss(t.logits, labels, params.cfg.pos_weight,
                             params.cfg.normalize_by_weight_sum);
    backward(params, layout, t, lr.readout_grads, DecoderKind::NonAr, grads);
  }

  auto loss_at = [&](const ModelParams& p) {
    ForwardTrace t = forward(p, layout, pooled);
    return bce_loss(t.logits, labels, p.cfg.pos_weight, p.cfg.normalize_by_weight_sum).loss;
  };

  struct Coord {
    std::string name;
    Eigen::Index i, j;
  };
  std::vector<Coord> coords;
  std::vector<std::pair<std::string, Eigen::Index>> tensor_sizes;
  visit_params(const_cast<ModelParams&>(params), [&](const std::string& name, Mat& m) {
    tensor_sizes.emplace_back(name, m.size());
  });
  Rng rng = Rng(seed).child("gradcheck");
  std::map<std::string, std::pair<Eigen::Index, Eigen::Index>> shapes;
  visit_params(const_cast<ModelParams&>(params), [&](const std::string& name, Mat& m) {
    shapes[name] = {m.rows(), m.cols()};
    for (int k = 0; k < 2 && k < m.size(); ++k) {
      Eigen::Index flat = Eigen::Index(rng.next_u64() % uint64_t(m.size()));
      coords.push_back({name, flat % m.rows(), flat / m.rows()});
    }
  });
  Eigen::Index total = 0;
  for (auto& [n, s] : tensor_sizes) total += s;
  while (int(coords.size()) < min_coords) {
    Eigen::Index flat = Eigen::Index(rng.next_u64() % uint64_t(total));
    for (auto& [name, size] : tensor_sizes) {
      if (flat < size) {
        auto [r, c] = shapes[name];
        coords.push_back({name, flat % r, flat / r});
        break;
      }
      flat -= size;
    }
  }

  ModelParams probe = params;
  double max_rel = 0.0;
  for (const Coord& c : coords) {
    Mat* m = nullptr;
    visit_params(probe, [&](const std::string& name, Mat& mm) {
      if (name == c.name) m = &mm;
    });
    double orig = (*m)(c.i, c.j);
    auto central = [&](double e) {
      (*m)(c.i, c.j) = orig + e;
      double lp = loss_at(probe);
      (*m)(c.i, c.j) = orig - e;
      double lm = loss_at(probe);
      (*m)(c.i, c.j) = orig;
      return (lp - lm) / (2.0 * e);
    };
    // Richardson extrapolation of two central differences removes the eps^2
    // truncation term, leaving rounding noise as the only error source.
    double numeric = (4.0 * central(eps / 2) - central(eps)) / 3.0;
    double analytic = 0.0;
    visit_params(grads, [&](const std::string& name, Mat& mm) {
      if (name == c.name) analytic = mm(c.i, c.j);
    });
    double denom = std::abs(analytic) + std::abs(numeric);
    if (denom < 1e-10) continue;  // both vanish (e.g. unused AR head)
    max_rel = std::max(max_rel, std::abs(analytic - numeric) / denom);
  }
  return max_rel;
}

}  // namespace ras
