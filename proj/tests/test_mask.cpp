#include <catch2/catch_amalgamated.hpp>

#include "ras/feature.hpp"
#include "ras/mask.hpp"
#include "ras/perturb.hpp"
#include "ras/rng.hpp"

using namespace ras;

namespace {

BinaryMask random_mask(Rng& rng, int w, int h, double density) {
  BinaryMask m(w, h);
  for (auto& b : m.bits) b = rng.bernoulli(density) ? 1 : 0;
  return m;
}

// Pixel-loop oracle, independent of the bit-twiddling in iou().
double iou_oracle(const BinaryMask& a, const BinaryMask& b) {
  long long inter = 0, uni = 0;
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x) {
      bool pa = a.at(y, x), pb = b.at(y, x);
      if (pa && pb) ++inter;
      if (pa || pb) ++uni;
    }
  if (uni == 0) return 1.0;
  return double(inter) / double(uni);
}

// Exact integer area-overlap oracle for downsample: for every (pixel, cell)
// pair compute the overlap of the two rectangles scaled by grid_h*grid_w.
std::vector<int64_t> downsample_oracle_units(const BinaryMask& m, int gh, int gw) {
  std::vector<int64_t> units(size_t(gh) * gw, 0);
  for (int gy = 0; gy < gh; ++gy)
    for (int gx = 0; gx < gw; ++gx)
      for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) {
          if (!m.at(y, x)) continue;
          int64_t oy = std::min(int64_t(y + 1) * gh, int64_t(gy + 1) * m.height) -
                       std::max(int64_t(y) * gh, int64_t(gy) * m.height);
          int64_t ox = std::min(int64_t(x + 1) * gw, int64_t(gx + 1) * m.width) -
                       std::max(int64_t(x) * gw, int64_t(gx) * m.width);
          if (oy > 0 && ox > 0) units[size_t(gy) * gw + gx] += oy * ox;
        }
  return units;
}

BinaryMask from_rows(const std::vector<std::string>& rows) {
  BinaryMask m(int(rows[0].size()), int(rows.size()));
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x)
      if (rows[y][x] == '#') m.set(y, x);
  return m;
}

}  // namespace

TEST_CASE("rle encode fixed cases") {
  BinaryMask bg(3, 3);
  CHECK(rle_encode(bg).counts == std::vector<int>{9});

  BinaryMask fg(2, 3);
  for (auto& b : fg.bits) b = 1;
  CHECK(rle_encode(fg).counts == std::vector<int>{0, 6});

  BinaryMask one(2, 2);
  one.set(0, 0);
  CHECK(rle_encode(one).counts == std::vector<int>{0, 1, 3});
}

TEST_CASE("rle decode fixed cases") {
  CHECK(rle_decode(RleMask{3, 3, {9}}) == BinaryMask(3, 3));

  BinaryMask fg(2, 3);
  for (auto& b : fg.bits) b = 1;
  CHECK(rle_decode(RleMask{2, 3, {0, 6}}) == fg);

  BinaryMask one(2, 2);
  one.set(0, 0);
  CHECK(rle_decode(RleMask{2, 2, {0, 1, 3}}) == one);
}

TEST_CASE("rle decode rejects malformed input") {
  CHECK_THROWS_MATCHES(rle_decode(RleMask{2, 2, {3}}), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code() == ErrorCode::SumMismatch;
                       }));
  CHECK_THROWS_MATCHES(rle_decode(RleMask{2, 2, {1, 0, 3}}), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code() == ErrorCode::IllegalZeroRun;
                       }));
}

TEST_CASE("rle roundtrip on random masks") {
  Rng rng(101);
  for (int i = 0; i < 300; ++i) {
    int w = rng.uniform_int(1, 17), h = rng.uniform_int(1, 17);
    BinaryMask m = random_mask(rng, w, h, rng.uniform());
    RleMask r = rle_encode(m);
    int64_t sum = 0;
    for (size_t k = 0; k < r.counts.size(); ++k) {
      sum += r.counts[k];
      if (k > 0) REQUIRE(r.counts[k] > 0);
    }
    REQUIRE(sum == int64_t(w) * h);
    REQUIRE(rle_decode(r) == m);
  }
}

TEST_CASE("iou fixed cases and conventions") {
  BinaryMask a(4, 4), b(4, 4);
  a.set(1, 1);
  a.set(1, 2);
  b.set(1, 1);
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, b) == 0.5);

  BinaryMask c(4, 4);
  c.set(3, 3);
  CHECK(iou(a, c) == 0.0);

  BinaryMask e1(4, 4), e2(4, 4);
  CHECK(iou(e1, e2) == 1.0);  // both empty
  CHECK(iou(e1, a) == 0.0);   // one empty

  CHECK_THROWS_AS(iou(a, BinaryMask(3, 4)), Error);
}

TEST_CASE("iou matches pixel oracle and is symmetric") {
  Rng rng(202);
  for (int i = 0; i < 200; ++i) {
    int w = rng.uniform_int(1, 12), h = rng.uniform_int(1, 12);
    BinaryMask a = random_mask(rng, w, h, rng.uniform());
    BinaryMask b = random_mask(rng, w, h, rng.uniform());
    double ab = iou(a, b);
    REQUIRE(ab == iou_oracle(a, b));
    REQUIRE(ab == iou(b, a));
  }
}

TEST_CASE("downsample fixed cases") {
  BinaryMask m(4, 4);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x) m.set(y, x);
  CoverageMask cov = downsample(m, 2, 2);
  CHECK(cov.at(0, 0) == 1.0);
  CHECK(cov.at(0, 1) == 0.0);
  CHECK(cov.at(1, 0) == 0.0);
  CHECK(cov.at(1, 1) == 0.0);

  BinaryMask one(4, 4);
  one.set(0, 0);
  CoverageMask c1 = downsample(one, 2, 2);
  CHECK(c1.at(0, 0) == 0.25);

  BinaryMask full(5, 3);
  for (auto& b : full.bits) b = 1;
  CoverageMask cf = downsample(full, 2, 4);
  for (double c : cf.coverage) CHECK(c == 1.0);
}

TEST_CASE("downsample matches exact area oracle and conserves area") {
  Rng rng(303);
  for (int i = 0; i < 60; ++i) {
    int w = rng.uniform_int(1, 13), h = rng.uniform_int(1, 13);
    int gw = rng.uniform_int(1, 9), gh = rng.uniform_int(1, 9);
    BinaryMask m = random_mask(rng, w, h, rng.uniform());
    CoverageMask cov = downsample(m, gh, gw);
    REQUIRE(cov.units == downsample_oracle_units(m, gh, gw));
    int64_t total_units = 0;
    for (int64_t u : cov.units) total_units += u;
    // one pixel = gh*gw units, so conservation is exact in integers
    REQUIRE(total_units == m.area() * gh * gw);
    for (double c : cov.coverage) {
      REQUIRE(c >= 0.0);
      REQUIRE(c <= 1.0);
    }
  }
}

TEST_CASE("mask_pool fixed cases") {
  FeatureMap fm(1, 2, 2);
  fm.at(0, 0, 0) = 1;
  fm.at(0, 0, 1) = 2;
  fm.at(0, 1, 0) = 3;
  fm.at(0, 1, 1) = 4;

  CoverageMask cov;
  cov.grid_h = cov.grid_w = 2;
  cov.coverage = {1, 0, 0, 0};
  CHECK(mask_pool(fm, cov)[0] == 1.0);

  cov.coverage = {0.5, 0.5, 0, 0};
  CHECK(mask_pool(fm, cov)[0] == 1.5);

  cov.coverage = {0, 0, 0, 0};
  CHECK(mask_pool(fm, cov, std::pair{1, 1})[0] == 4.0);

  CoverageMask bad;
  bad.grid_h = 3;
  bad.grid_w = 2;
  bad.coverage.assign(6, 0.0);
  CHECK_THROWS_AS(mask_pool(fm, bad), Error);
}

TEST_CASE("mask_pool stays within channel bounds") {
  Rng rng(404);
  for (int i = 0; i < 100; ++i) {
    int gh = rng.uniform_int(1, 6), gw = rng.uniform_int(1, 6);
    FeatureMap fm(3, gh, gw);
    for (auto& v : fm.values) v = rng.normal();
    BinaryMask m = random_mask(rng, gw * 2, gh * 2, 0.4);
    if (m.empty_mask()) continue;
    CoverageMask cov = downsample(m, gh, gw);
    auto pooled = mask_pool(fm, cov);
    for (int c = 0; c < 3; ++c) {
      double lo = 1e300, hi = -1e300;
      for (int gy = 0; gy < gh; ++gy)
        for (int gx = 0; gx < gw; ++gx) {
          lo = std::min(lo, fm.at(c, gy, gx));
          hi = std::max(hi, fm.at(c, gy, gx));
        }
      REQUIRE(pooled[c] >= lo - 1e-12);
      REQUIRE(pooled[c] <= hi + 1e-12);
    }
  }
}

TEST_CASE("bbox_of fixed cases") {
  BinaryMask m(6, 6);
  m.set(2, 3);
  CHECK(bbox_of(m) == BBox{3, 2, 4, 3});

  BinaryMask full(4, 5);
  for (auto& b : full.bits) b = 1;
  CHECK(bbox_of(full) == BBox{0, 0, 4, 5});

  BinaryMask two(5, 5);
  two.set(0, 0);
  two.set(4, 4);
  CHECK(bbox_of(two) == BBox{0, 0, 5, 5});

  CHECK_THROWS_AS(bbox_of(BinaryMask(3, 3)), Error);
}

TEST_CASE("perturb fixed cases") {
  BinaryMask m = from_rows({"...", ".#.", "..."});
  CHECK(perturb(m, Translate{0, 0}) == m);
  CHECK(perturb(m, Dilate{0}) == m);
  CHECK(perturb(m, Dilate{1}) == from_rows({".#.", "###", ".#."}));
  CHECK(perturb(m, Translate{1, 0}) == from_rows({"...", "..#", "..."}));
  CHECK(perturb(m, Translate{2, 0}) == BinaryMask(3, 3));  // clipped away
  CHECK(perturb(m, Erode{1}) == BinaryMask(3, 3));

  BinaryMask other = from_rows({"#..", "...", "..."});
  BinaryMask merged = perturb(m, MergeWith{other});
  CHECK(merged.area() == 2);

  BinaryMask bar = from_rows({"....", "####", "...."});
  CHECK(perturb(bar, SplitHalf{SplitAxis::Vertical, true}) == from_rows({"....", "##..", "...."}));
  CHECK(perturb(bar, SplitHalf{SplitAxis::Vertical, false}) == from_rows({"....", "..##", "...."}));
}

TEST_CASE("perturb erode then dilate shrinks area monotonically") {
  Rng rng(505);
  for (int i = 0; i < 50; ++i) {
    BinaryMask m = random_mask(rng, 10, 10, 0.6);
    BinaryMask er = perturb(m, Erode{1});
    BinaryMask di = perturb(m, Dilate{1});
    REQUIRE(er.area() <= m.area());
    REQUIRE(di.area() >= m.area());
    // erosion result is a subset, dilation a superset
    for (size_t k = 0; k < m.bits.size(); ++k) {
      REQUIRE((er.bits[k] == 0 || m.bits[k] == 1));
      REQUIRE((m.bits[k] == 0 || di.bits[k] == 1));
    }
  }
}
