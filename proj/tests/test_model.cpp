#include <catch2/catch_amalgamated.hpp>

#include "ras/datagen.hpp"
#include "ras/model.hpp"
#include "ras/synth.hpp"

using namespace ras;

namespace {

TrainConfig small_cfg(int d = 16, int layers = 2, TokenMode mode = TokenMode::Distinct) {
  TrainConfig cfg;
  cfg.d = d;
  cfg.layers = layers;
  cfg.heads = 4;
  cfg.ffn_hidden = 2 * d;
  cfg.special_token_mode = mode;
  return cfg;
}

Vocab test_vocab() {
  return build_vocab({"Select all circle", "Select all red objects",
                      tpl_category_ref(), tpl_position_rel("above")});
}

Mat random_pooled(Rng& rng, int n, int feat_dim) {
  Mat m(n, feat_dim);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rng.normal();
  return m;
}

}  // namespace

TEST_CASE("tokenize_prompt strips punctuation and keeps placeholders") {
  auto toks = tokenize_prompt("Find all the objects above <mask-ref>.");
  REQUIRE(toks.size() == 6);
  CHECK(toks[0] == "find");
  CHECK(toks[4] == "above");
  CHECK(toks[5] == kMaskRefPlaceholder);
}

TEST_CASE("vocab lookups raise VocabMiss on unknown words") {
  Vocab v = test_vocab();
  CHECK(v.id("circle") >= 0);
  CHECK_THROWS_AS(v.id("zeppelin"), Error);
}

TEST_CASE("build_sequence layout per spec") {
  Vocab v = test_vocab();
  TrainConfig cfg = small_cfg();

  // 0 placeholders, 2 candidates, distinct mode
  SequenceLayout l = build_sequence("Select all circle", {}, 2, v, cfg);
  std::vector<Role> roles;
  for (const auto& it : l.items) roles.push_back(it.role);
  std::vector<Role> expect{Role::PromptWord, Role::PromptWord, Role::PromptWord,
                           Role::PoolPre,    Role::CandContext, Role::PoolPre,
                           Role::CandContext, Role::CandQuery,  Role::CandQuery};
  CHECK(roles == expect);
  REQUIRE(l.query_positions.size() == 2);
  CHECK(l.items[size_t(l.query_positions[0])].index == 0);
  CHECK(l.items[size_t(l.query_positions[1])].index == 1);

  // 1 placeholder -> exactly one (ref_pre, ref_token) pair at its position
  SequenceLayout lr = build_sequence(tpl_category_ref(), {1}, 2, v, cfg);
  int ref_pre = 0, ref_tok = 0;
  for (const auto& it : lr.items) {
    if (it.role == Role::RefPre) ++ref_pre;
    if (it.role == Role::RefToken) {
      ++ref_tok;
      CHECK(it.index == 1);
    }
  }
  CHECK(ref_pre == 1);
  CHECK(ref_tok == 1);

  // mode none -> no pre-token roles anywhere
  cfg.special_token_mode = TokenMode::None;
  SequenceLayout ln = build_sequence(tpl_category_ref(), {0}, 2, v, cfg);
  for (const auto& it : ln.items) {
    CHECK(it.role != Role::RefPre);
    CHECK(it.role != Role::PoolPre);
  }
}

TEST_CASE("build_sequence limit errors") {
  Vocab v = test_vocab();
  TrainConfig cfg = small_cfg();
  cfg.max_candidates = 3;
  CHECK_THROWS_AS(build_sequence("Select all circle", {}, 4, v, cfg), Error);
  cfg.max_candidates = 24;
  cfg.max_seq_len = 10;
  CHECK_THROWS_AS(build_sequence("Select all circle", {}, 8, v, cfg), Error);
}

TEST_CASE("tokenize_mask fixed cases") {
  TrainConfig cfg = small_cfg();
  Vocab v = test_vocab();
  ModelParams p = init_params(cfg, v.size(), 15, 7);

  SceneConfig scfg;
  Rng rng(5);
  SynthScene s = sample_scene(rng, scfg, 0);
  Image img = render(s);
  auto fms = encode_ensemble(img);
  const BinaryMask& mask = s.annotation.entities[0].mask;

  // purity: identical masks produce identical tokens
  Eigen::VectorXd t1 = tokenize_mask(fms, mask, p);
  Eigen::VectorXd t2 = tokenize_mask(fms, mask, p);
  CHECK(t1 == t2);
  CHECK(t1.allFinite());

  // zero projector -> zero token for any mask
  ModelParams zero = p;
  zero.proj_w1.setZero();
  zero.proj_b1.setZero();
  zero.proj_w2.setZero();
  zero.proj_b2.setZero();
  CHECK(tokenize_mask(fms, mask, zero).norm() == 0.0);
}

TEST_CASE("pooled E1 components match for two disjoint same-color shapes") {
  SynthScene s;
  s.width = s.height = 128;
  s.shapes.push_back(ShapeSpec{ShapeKind::Circle, 2, false, 30, 30, 9});
  s.shapes.push_back(ShapeSpec{ShapeKind::Circle, 2, false, 98, 98, 9});
  Image img = render(s);
  auto fms = encode_ensemble(img);
  auto pa = pool_ensemble(fms, raw_shape_mask(s.shapes[0], 128, 128));
  auto pb = pool_ensemble(fms, raw_shape_mask(s.shapes[1], 128, 128));
  for (int c = 0; c < 3; ++c) CHECK(std::abs(pa[size_t(c)] - pb[size_t(c)]) <= 1.0 / 255.0);
}

TEST_CASE("bce loss hand-computed values") {
  auto r = bce_loss({0.0, 0.0}, {1, 0}, 5.0);
  CHECK(r.loss == Catch::Approx(3.0 * std::log(2.0)).epsilon(1e-12));

  auto r2 = bce_loss({0.0, 0.0, 0.0}, {0, 0, 0}, 1.0);
  CHECK(r2.loss == Catch::Approx(std::log(2.0)).epsilon(1e-12));

  // perfect confident predictions -> loss near zero
  auto r3 = bce_loss({30.0, -30.0}, {1, 0}, 5.0);
  CHECK(r3.loss < 1e-10);

  CHECK_THROWS_AS(bce_loss({}, {}, 5.0), Error);

  // weight-sum normalization flag
  auto r4 = bce_loss({0.0, 0.0}, {1, 0}, 5.0, true);
  CHECK(r4.loss == Catch::Approx(6.0 * std::log(2.0) / 6.0).epsilon(1e-12));
}

TEST_CASE("predict_selection threshold rule") {
  CHECK(predict_selection({2.0, -1.0, 0.3}, 0.5) == std::vector<int>{0, 2});
  CHECK(predict_selection({-10, -10, -10}, 0.5).empty());
  CHECK(predict_selection({0.0}, 0.5).empty());  // strict inequality at the cutoff
}

TEST_CASE("forward produces finite logits, one per candidate") {
  TrainConfig cfg = small_cfg();
  Vocab v = test_vocab();
  ModelParams p = init_params(cfg, v.size(), 15, 3);
  Rng rng(11);

  for (int n : {1, 3, 7}) {
    SequenceLayout l = build_sequence("Select all circle", {}, n, v, cfg);
    Mat pooled = random_pooled(rng, n, 15);
    ForwardTrace t = forward(p, l, pooled);
    REQUIRE(int(t.logits.size()) == n);
    for (double lg : t.logits) REQUIRE(std::isfinite(lg));
  }
}

TEST_CASE("candidate logits are permutation-equivariant with zeroed positions") {
  TrainConfig cfg = small_cfg(16, 2);
  Vocab v = test_vocab();
  ModelParams p = init_params(cfg, v.size(), 15, 13);
  p.pos_emb.setZero();
  Rng rng(17);

  const int n = 5;
  Mat pooled = random_pooled(rng, n, 15);
  std::vector<int> perm{3, 0, 4, 1, 2};
  Mat pooled_perm(n, 15);
  for (int i = 0; i < n; ++i) pooled_perm.row(i) = pooled.row(perm[size_t(i)]);

  SequenceLayout l = build_sequence(tpl_category_ref(), {2}, n, v, cfg);
  // the reference must point at the same underlying candidate after permuting
  int ref_after = 4;  // perm[4] == 2
  SequenceLayout lp = build_sequence(tpl_category_ref(), {ref_after}, n, v, cfg);

  ForwardTrace t = forward(p, l, pooled);
  ForwardTrace tp = forward(p, lp, pooled_perm);
  for (int i = 0; i < n; ++i)
    REQUIRE(t.logits[size_t(perm[size_t(i)])] ==
            Catch::Approx(tp.logits[size_t(i)]).margin(1e-9));
}

TEST_CASE("gradient check: linear-only model") {
  TrainConfig cfg = small_cfg(16, 0);
  Vocab v = test_vocab();
  ModelParams p = init_params(cfg, v.size(), 15, 23);
  Rng rng(29);
  SequenceLayout l = build_sequence("Select all circle", {}, 3, v, cfg);
  Mat pooled = random_pooled(rng, 3, 15);
  double err = grad_check(p, l, pooled, {1, 0, 1}, 1e-3, 200, 31);
  CHECK(err < 1e-7);
}

TEST_CASE("gradient check: full model d=16 L=2") {
  TrainConfig cfg = small_cfg(16, 2);
  Vocab v = test_vocab();
  ModelParams p = init_params(cfg, v.size(), 15, 37);
  Rng rng(41);
  SequenceLayout l = build_sequence(tpl_category_ref(), {0}, 4, v, cfg);
  Mat pooled = random_pooled(rng, 4, 15);
  double err = grad_check(p, l, pooled, {1, 0, 0, 1}, 1e-4, 250, 43);
  CHECK(err < 1e-4);
}

TEST_CASE("gradient check across special token modes") {
  Vocab v = test_vocab();
  Rng rng(47);
  for (TokenMode mode : {TokenMode::None, TokenMode::Shared, TokenMode::Distinct}) {
    TrainConfig cfg = small_cfg(16, 1, mode);
    ModelParams p = init_params(cfg, v.size(), 15, 53);
    SequenceLayout l = build_sequence(tpl_category_ref(), {1}, 3, v, cfg);
    Mat pooled = random_pooled(rng, 3, 15);
    double err = grad_check(p, l, pooled, {0, 1, 0}, 1e-4, 200, 59);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("gradient check at a saturated zero-loss point skips dead coords") {
  TrainConfig cfg = small_cfg(16, 0);
  Vocab v = test_vocab();
  ModelParams p = init_params(cfg, v.size(), 15, 61);
  // force hugely confident logits agreeing with the labels via the head bias
  p.head_w1.setZero();
  p.head_w2.setZero();
  p.head_b2(0, 0) = 50.0;
  Rng rng(67);
  SequenceLayout l = build_sequence("Select all circle", {}, 2, v, cfg);
  Mat pooled = random_pooled(rng, 2, 15);
  double err = grad_check(p, l, pooled, {1, 1}, 1e-4, 200, 71);
  CHECK(err < 1e-4);  // near-zero gradients are skipped rather than amplified
}

TEST_CASE("ar head gradient matches finite differences") {
  TrainConfig cfg = small_cfg(16, 1);
  Vocab v = test_vocab();
  ModelParams p = init_params(cfg, v.size(), 15, 73);
  Rng rng(79);
  const int n = 3;
  Mat pooled = random_pooled(rng, n, 15);

  SequenceLayout ctx = build_sequence("Select all circle", {}, n, v, cfg, false);
  SequenceLayout l = ctx;
  l.items.push_back({Role::ArTarget, 1});  // teacher-forced target token
  std::vector<int> readouts{int(ctx.items.size()) - 1, int(l.items.size()) - 1};

  // candidate-token regression targets are detached constants; only the stop
  // embedding tracks the (perturbed) parameters
  Mat detached_target = project_tokens(p, pooled).row(1);
  auto ar_loss_at = [&](const ModelParams& params) {
    ForwardOptions opts;
    opts.head = DecoderKind::Ar;
    opts.readouts = readouts;
    ForwardTrace t = forward(params, l, pooled, opts);
    Mat targets(2, cfg.d);
    targets.row(0) = detached_target;
    targets.row(1) = params.stop_emb.col(0).transpose();
    return ar_loss(t.ar_preds, targets).loss;
  };
  // analytic gradients
  ModelParams grads = zeros_like(p);
  {
    ForwardOptions opts;
    opts.head = DecoderKind::Ar;
    opts.readouts = readouts;
    ForwardTrace t = forward(p, l, pooled, opts);
    Mat targets(2, cfg.d);
    targets.row(0) = t.tokens.row(1);
    targets.row(1) = p.stop_emb.col(0).transpose();
    Mat dstop;
    LossResult lr = ar_loss(t.ar_preds, targets, &dstop);
    backward(p, l, t, lr.readout_grads, DecoderKind::Ar, grads);
    grads.stop_emb += dstop;
  }
  Rng pick(83);
  double max_rel = 0.0;
  for (int trial = 0; trial < 60; ++trial) {
    const char* names[] = {"ar_w1", "ar_w2", "stop_emb", "blocks.0.wq", "proj_w1", "word_emb"};
    std::string name = names[pick.uniform_int(0, 5)];
    ModelParams probe = p;
    Mat* m = nullptr;
    Mat* g = nullptr;
    visit_params(probe, [&](const std::string& nm, Mat& mm) {
      if (nm == name) m = &mm;
    });
    visit_params(grads, [&](const std::string& nm, Mat& mm) {
      if (nm == name) g = &mm;
    });
    Eigen::Index i = pick.uniform_int(0, int(m->rows() - 1));
    Eigen::Index j = pick.uniform_int(0, int(m->cols() - 1));
    double eps = 1e-5;
    double orig = (*m)(i, j);
    (*m)(i, j) = orig + eps;
    double lp = ar_loss_at(probe);
    (*m)(i, j) = orig - eps;
    double lm = ar_loss_at(probe);
    (*m)(i, j) = orig;
    double numeric = (lp - lm) / (2 * eps);
    double analytic = (*g)(i, j);
    double denom = std::abs(numeric) + std::abs(analytic);
    if (denom < 1e-10) continue;
    max_rel = std::max(max_rel, std::abs(numeric - analytic) / denom);
  }
  CHECK(max_rel < 1e-4);
}

TEST_CASE("one small gradient step does not increase the loss") {
  Vocab v = test_vocab();
  Rng rng(89);
  for (int batch = 0; batch < 50; ++batch) {
    TrainConfig cfg = small_cfg(16, 1);
    ModelParams p = init_params(cfg, v.size(), 15, 1000 + uint64_t(batch));
    int n = rng.uniform_int(1, 5);
    SequenceLayout l = build_sequence("Select all circle", {}, n, v, cfg);
    Mat pooled = random_pooled(rng, n, 15);
    std::vector<uint8_t> labels;
    for (int i = 0; i < n; ++i) labels.push_back(rng.bernoulli(0.5) ? 1 : 0);

    ModelParams grads = zeros_like(p);
    ForwardTrace t = forward(p, l, pooled);
    LossResult lr = bce_loss(t.logits, labels, cfg.pos_weight);
    backward(p, l, t, lr.readout_grads, DecoderKind::NonAr, grads);

    const double lrate = 1e-3;
    ModelParams stepped = p;
    visit_params(stepped, [&](const std::string& name, Mat& m) {
      visit_params(grads, [&](const std::string& gn, Mat& gm) {
        if (gn == name) m -= lrate * gm;
      });
    });
    ForwardTrace t2 = forward(stepped, l, pooled);
    double after = bce_loss(t2.logits, labels, cfg.pos_weight).loss;
    REQUIRE(after <= lr.loss + 1e-12);
  }
}

TEST_CASE("ar matching covers every subset for up to 3 candidates") {
  // orthogonal token embeddings: emitting a candidate's own token matches it
  const int d = 8;
  for (int n = 1; n <= 3; ++n) {
    Mat tokens = Mat::Zero(n, d);
    for (int i = 0; i < n; ++i) tokens(i, i) = 1.0;
    Mat stop = Mat::Zero(d, 1);
    stop(7, 0) = 1.0;

    for (int subset = 0; subset < (1 << n); ++subset) {
      std::vector<int> want;
      Mat emitted = Mat::Zero(n + 1, d);
      int row = 0;
      for (int i = 0; i < n; ++i)
        if (subset & (1 << i)) {
          want.push_back(i);
          emitted.row(row++) = tokens.row(i);
        }
      emitted.row(row) = stop.col(0).transpose();
      std::vector<int> got = match_embeddings(emitted.topRows(row + 1), tokens, stop);
      REQUIRE(got == want);
    }
  }
}

TEST_CASE("ar matching never repeats and stops on empty preference") {
  const int d = 4;
  Mat tokens = Mat::Zero(2, d);
  tokens(0, 0) = 1.0;
  tokens(1, 1) = 1.0;
  Mat stop = Mat::Zero(d, 1);
  stop(3, 0) = 1.0;

  // keeps emitting candidate 0's embedding: second emission must not repeat it
  Mat emitted = Mat::Zero(3, d);
  emitted(0, 0) = 1.0;
  emitted(1, 0) = 1.0;
  emitted(2, 0) = 1.0;
  auto got = match_embeddings(emitted, tokens, stop);
  // after 0 is taken, emission is orthogonal to candidate 1 and stop: sim 0 vs 0 -> candidate wins ties
  CHECK(got == std::vector<int>{0, 1});

  // immediate stop emission selects nothing
  Mat stop_first = stop.col(0).transpose();
  CHECK(match_embeddings(stop_first, tokens, stop).empty());
}
