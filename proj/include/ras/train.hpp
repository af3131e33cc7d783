#pragma once

#include <algorithm>
#include <chrono>
#include <functional>
#include <numeric>
#include <vector>

#include "ras/metrics.hpp"
#include "ras/model.hpp"

namespace ras {

/// One dataset sample prepared for the model: layouts for both decoders, the
/// pooled ensemble features per candidate, binary labels, and the AR teacher
/// sequence (targets in raster order by bbox top-left).
struct TrainingSample {
  int sample_id = 0;
  SequenceLayout layout;      // context + query copies (non-AR)
  SequenceLayout ctx_layout;  // context only (AR)
  Mat pooled;                 // n_candidates x feat_dim
  std::vector<uint8_t> labels;
  std::vector<int> ar_targets;  // target candidate indices, raster order
  Provenance provenance = Provenance::Category;
};

inline TrainingSample make_training_sample(const GroupSample& gs, const Mat& pooled,
                                           const Vocab& vocab, const TrainConfig& cfg,
                                           int sample_id) {
  TrainingSample ts;
  ts.sample_id = sample_id;
  ts.pooled = pooled;
  ts.provenance = gs.provenance;
  int n = int(gs.candidates.size());
  ts.layout = build_sequence(gs.prompt, gs.ref_indices, n, vocab, cfg, true);
  ts.ctx_layout = build_sequence(gs.prompt, gs.ref_indices, n, vocab, cfg, false);
  ts.labels.assign(size_t(n), 0);
  for (int t : gs.targets) ts.labels[size_t(t)] = 1;

  // raster order: bbox top-left (y, then x); empty masks sort first
  std::vector<std::pair<std::pair<int, int>, int>> keyed;
  for (int t : gs.targets) {
    BinaryMask m = rle_decode(gs.candidates[size_t(t)]);
    std::pair<int, int> key{-1, -1};
    if (!m.empty_mask()) {
      BBox b = bbox_of(m);
      key = {b.y_min, b.x_min};
    }
    keyed.push_back({key, t});
  }
  std::sort(keyed.begin(), keyed.end());
  for (auto& [k, t] : keyed) ts.ar_targets.push_back(t);
  return ts;
}

// ---------------------------------------------------------------------------
// Optimizer and schedule

/// Linear warmup into a cosine decay to zero.
inline double lr_at(int64_t step, int64_t total_steps, double base_lr, double warmup_frac) {
  int64_t warm = std::max<int64_t>(1, int64_t(warmup_frac * double(total_steps)));
  if (step < warm) return base_lr * double(step + 1) / double(warm);
  if (total_steps <= warm) return base_lr;
  double progress = double(step - warm) / double(total_steps - warm);
  return base_lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

struct AdamState {
  ModelParams m, v;
  int64_t step = 0;

  explicit AdamState(const ModelParams& p) : m(zeros_like(p)), v(zeros_like(p)) {}
};

inline void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state,
                      double lr) {
  const TrainConfig& c = params.cfg;
  ++state.step;
  double bc1 = 1.0 - std::pow(c.beta1, double(state.step));
  double bc2 = 1.0 - std::pow(c.beta2, double(state.step));

  std::vector<Mat*> ps, ms, vs;
  std::vector<const Mat*> gs;
  visit_params(params, [&](const std::string&, Mat& x) { ps.push_back(&x); });
  visit_params(const_cast<ModelParams&>(grads), [&](const std::string&, Mat& x) { gs.push_back(&x); });
  visit_params(state.m, [&](const std::string&, Mat& x) { ms.push_back(&x); });
  visit_params(state.v, [&](const std::string&, Mat& x) { vs.push_back(&x); });
  for (size_t i = 0; i < ps.size(); ++i) {
    Mat& p = *ps[i];
    const Mat& g = *gs[i];
    Mat& m = *ms[i];
    Mat& v = *vs[i];
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
    Mat mhat = m / bc1;
    Mat vhat = v / bc2;
    if (c.weight_decay != 0.0) p -= lr * c.weight_decay * p;
    p.array() -= lr * mhat.array() / (vhat.array().sqrt() + c.adam_eps);
  }
}

// ---------------------------------------------------------------------------
// Per-sample losses for both decoding paradigms

struct SampleStats {
  double loss = 0.0;
  int correct = 0;  // per-candidate (non-AR) or per-step (AR) hits
  int total = 0;
};

inline SampleStats accumulate_nonar(const ModelParams& params, const TrainingSample& ts,
                                    ModelParams& grads) {
  ForwardTrace t = forward(params, ts.layout, ts.pooled);
  LossResult lr =
      bce_loss(t.logits, ts.labels, params.cfg.pos_weight, params.cfg.normalize_by_weight_sum);
  backward(params, ts.layout, t, lr.readout_grads, DecoderKind::NonAr, grads);
  SampleStats st;
  st.loss = lr.loss;
  for (size_t i = 0; i < t.logits.size(); ++i) {
    bool sel = 1.0 / (1.0 + std::exp(-t.logits[i])) > params.cfg.threshold;
    st.correct += int(sel == bool(ts.labels[i]));
    ++st.total;
  }
  return st;
}

/// Teacher-forced AR regression: the context is followed by the target mask
/// tokens in raster order; each readout regresses the next target embedding,
/// the last one the stop embedding. Candidate-token targets are constants;
/// the stop embedding receives gradient through the loss.
inline SampleStats accumulate_ar(const ModelParams& params, const TrainingSample& ts,
                                 ModelParams& grads) {
  SequenceLayout layout = ts.ctx_layout;
  std::vector<int> readouts;
  readouts.push_back(int(layout.items.size()) - 1);
  for (int t : ts.ar_targets) {
    readouts.push_back(int(layout.items.size()));
    layout.items.push_back({Role::ArTarget, t});
  }
  ForwardOptions opts;
  opts.head = DecoderKind::Ar;
  opts.readouts = readouts;
  ForwardTrace t = forward(params, layout, ts.pooled, opts);

  const int T = int(ts.ar_targets.size());
  Mat targets(T + 1, params.cfg.d);
  for (int k = 0; k < T; ++k) targets.row(k) = t.tokens.row(ts.ar_targets[size_t(k)]);
  targets.row(T) = params.stop_emb.col(0).transpose();

  Mat dstop;
  LossResult lr = ar_loss(t.ar_preds, targets, &dstop);
  backward(params, layout, t, lr.readout_grads, DecoderKind::Ar, grads);
  grads.stop_emb += dstop;

  SampleStats st;
  st.loss = lr.loss;
  // teacher-forced matching accuracy: is the emitted embedding closest to the
  // token it was supposed to produce?
  std::vector<uint8_t> chosen(size_t(t.tokens.rows()), 0);
  for (int k = 0; k <= T; ++k) {
    int pick = match_step(t.ar_preds.row(k), t.tokens, chosen, params.stop_emb);
    int want = (k < T) ? ts.ar_targets[size_t(k)] : -1;
    st.correct += int(pick == want);
    ++st.total;
    if (want >= 0) chosen[size_t(want)] = 1;
  }
  return st;
}

// ---------------------------------------------------------------------------
// Prediction

inline GroupPrediction predict_group(const ModelParams& params, const TrainingSample& ts,
                                     bool zero_ref = false) {
  ForwardOptions opts;
  opts.zero_ref = zero_ref;
  ForwardTrace t = forward(params, ts.layout, ts.pooled, opts);
  return GroupPrediction{ts.sample_id, predict_selection(t.logits, params.cfg.threshold)};
}

/// Iterative AR decoding: emit an embedding, match it against the unchosen
/// candidate tokens and the stop embedding, append the chosen token, repeat.
/// Runs |selected|+1 full forward passes.
inline GroupPrediction predict_ar(const ModelParams& params, const TrainingSample& ts) {
  SequenceLayout layout = ts.ctx_layout;
  const int n = layout.n_candidates;
  std::vector<uint8_t> chosen(size_t(n), 0);
  std::vector<int> picks;
  for (int step = 0; step <= std::min(n, params.cfg.max_candidates); ++step) {
    ForwardOptions opts;
    opts.head = DecoderKind::Ar;
    opts.readouts = {int(layout.items.size()) - 1};
    ForwardTrace t = forward(params, layout, ts.pooled, opts);
    int pick = match_step(t.ar_preds.row(0), t.tokens, chosen, params.stop_emb);
    if (pick < 0) break;
    chosen[size_t(pick)] = 1;
    picks.push_back(pick);
    layout.items.push_back({Role::ArTarget, pick});
    if (int(picks.size()) >= n) break;
  }
  std::sort(picks.begin(), picks.end());
  return GroupPrediction{ts.sample_id, picks};
}

inline GroupPrediction predict_with(const ModelParams& params, const TrainingSample& ts,
                                    DecoderKind decoder, bool zero_ref = false) {
  return decoder == DecoderKind::NonAr ? predict_group(params, ts, zero_ref)
                                       : predict_ar(params, ts);
}

// ---------------------------------------------------------------------------
// Training loop

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  double mask_acc = 0.0;
  double holdout_giou = 0.0;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochLog> log;
  int64_t step = 0;
  int64_t total_steps = 0;
};

inline std::string train_log_csv(const std::vector<EpochLog>& log) {
  std::string out = "epoch,loss,mask_acc,holdout_giou\n";
  for (const auto& row : log)
    out += std::to_string(row.epoch) + ',' + format_double(row.loss) + ',' +
           format_double(row.mask_acc) + ',' + format_double(row.holdout_giou) + '\n';
  return out;
}

/// Seeded, single-threaded training: identical inputs give bit-identical
/// parameters. The evaluation callback (if any) is invoked once per epoch with
/// the current parameters and its value logged as holdout_giou.
inline TrainResult train(const std::vector<TrainingSample>& samples, const TrainConfig& cfg,
                         int vocab_size, int feat_dim,
                         const std::function<double(const ModelParams&)>& holdout_eval = {},
                         const ModelParams* resume = nullptr, int64_t resume_step = 0,
                         int64_t resume_total = 0) {
  cfg.validate();
  if (samples.empty() && cfg.epochs > 0)
    fail(ErrorCode::ConfigInvalid, "training on an empty dataset");

  TrainResult res;
  res.params = resume ? *resume : init_params(cfg, vocab_size, feat_dim, cfg.seed);
  if (resume) res.params.cfg = cfg;

  const int64_t n = int64_t(samples.size());
  const int64_t steps_per_epoch = samples.empty() ? 0 : (n + cfg.batch_size - 1) / cfg.batch_size;
  res.total_steps = resume ? resume_total : steps_per_epoch * cfg.epochs;
  res.step = resume_step;

  AdamState opt(res.params);
  opt.step = resume_step;
  Rng root(cfg.seed);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle = root.child("shuffle", uint64_t(epoch) + uint64_t(resume_step));
    for (int64_t i = n - 1; i > 0; --i)
      std::swap(order[size_t(i)], order[size_t(shuffle.uniform_int(0, int(i)))]);

    double loss_sum = 0.0;
    int64_t correct = 0, total = 0;
    for (int64_t b = 0; b < steps_per_epoch; ++b) {
      ModelParams grads = zeros_like(res.params);
      int64_t lo = b * cfg.batch_size, hi = std::min(n, lo + cfg.batch_size);
      for (int64_t i = lo; i < hi; ++i) {
        const TrainingSample& ts = samples[size_t(order[size_t(i)])];
        SampleStats st = cfg.decoder == DecoderKind::NonAr
                             ? accumulate_nonar(res.params, ts, grads)
                             : accumulate_ar(res.params, ts, grads);
        loss_sum += st.loss;
        correct += st.correct;
        total += st.total;
      }
      double inv = 1.0 / double(hi - lo);
      visit_params(grads, [&](const std::string&, Mat& m) { m *= inv; });
      adam_step(res.params, grads, opt, lr_at(res.step, res.total_steps, cfg.base_lr,
                                              cfg.warmup_frac));
      ++res.step;
    }

    EpochLog row;
    row.epoch = epoch;
    row.loss = n ? loss_sum / double(n) : 0.0;
    row.mask_acc = total ? double(correct) / double(total) : 0.0;
    row.holdout_giou = holdout_eval ? holdout_eval(res.params) : 0.0;
    res.log.push_back(row);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Latency

/// Wall-clock mean seconds per sample, single-threaded, after a warmup pass.
inline double latency_bench(const ModelParams& params, const std::vector<TrainingSample>& samples,
                            DecoderKind decoder, size_t max_samples = 0) {
  if (samples.empty()) fail(ErrorCode::EmptyBatch, "latency_bench on empty dataset");
  size_t count = max_samples ? std::min(max_samples, samples.size()) : samples.size();
  (void)predict_with(params, samples[0], decoder);  // warmup
  auto t0 = std::chrono::steady_clock::now();
  for (size_t i = 0; i < count; ++i) (void)predict_with(params, samples[i], decoder);
  auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double>(t1 - t0).count() / double(count);
}

}  // namespace ras
