#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "salref/instances.hpp"
#include "salref/rng.hpp"

using namespace salref;

TEST_CASE("single voxel gives one instance of cardinality 1") {
  BinaryMask m({5, 5, 5});
  m.set(2, 3, 1, true);
  auto [labels, inst] = connected_components(m);
  REQUIRE(inst.size() == 1);
  CHECK(inst[0].id == 1);
  CHECK(inst[0].cardinality == 1);
  CHECK(inst[0].voxels[0] == Coord{2, 3, 1});
  CHECK(labels.get(2, 3, 1) == 1);
}

TEST_CASE("diagonal voxels: 26-connectivity joins, 6-connectivity splits") {
  BinaryMask m({3, 3, 3});
  m.set(0, 0, 0, true);
  m.set(1, 1, 1, true);
  CHECK(connected_components(m, 26).second.size() == 1);
  CHECK(connected_components(m, 6).second.size() == 2);
}

TEST_CASE("all-true 4x4x4 mask is one instance of 64") {
  BinaryMask m({4, 4, 4}, true);
  auto [labels, inst] = connected_components(m);
  REQUIRE(inst.size() == 1);
  CHECK(inst[0].cardinality == 64);
}

TEST_CASE("empty mask yields no instances") {
  BinaryMask m({4, 4, 4});
  CHECK(connected_components(m).second.empty());
}

TEST_CASE("labels assigned in first-encountered x-fastest order") {
  BinaryMask m({5, 5, 1});
  m.set(4, 0, 0, true);  // encountered first in the scan
  m.set(0, 2, 0, true);
  auto [labels, inst] = connected_components(m);
  CHECK(labels.get(4, 0, 0) == 1);
  CHECK(labels.get(0, 2, 0) == 2);
  CHECK(inst[0].voxels[0] == Coord{4, 0, 0});
}

TEST_CASE("instance union covers the mask and instances are disjoint") {
  Rng rng(31);
  BinaryMask m({8, 8, 8});
  for (std::size_t i = 0; i < m.bits.size(); ++i) {
    m.bits[i] = rng.uniform() < 0.2;
  }
  auto [labels, inst] = connected_components(m);
  BinaryMask cover(m.dims);
  std::size_t total = 0;
  for (const LesionInstance& li : inst) {
    for (const Coord& v : li.voxels) {
      CHECK(!cover.get(v.x, v.y, v.z));  // disjoint
      cover.set(v.x, v.y, v.z, true);
    }
    total += li.cardinality;
  }
  CHECK(total == m.count_true());
  CHECK(cover.bits == m.bits);
}

namespace {

LabelMap paint(Dims d, std::initializer_list<std::pair<Coord, int>> voxels) {
  LabelMap l(d);
  for (const auto& [c, id] : voxels) l.labels[d.index(c.x, c.y, c.z)] = id;
  return l;
}

}  // namespace

TEST_CASE("match: identical maps are all TP") {
  const Dims d{6, 6, 6};
  LabelMap gt = paint(d, {{{0, 0, 0}, 1}, {{3, 3, 3}, 2}, {{5, 5, 5}, 3}});
  MatchResult r = match_lesions(gt, gt);
  CHECK(r.n_tp == 3);
  CHECK(r.n_fp == 0);
  CHECK(r.n_fn == 0);
}

TEST_CASE("match: disjoint single instances") {
  const Dims d{4, 4, 4};
  LabelMap pred = paint(d, {{{0, 0, 0}, 1}});
  LabelMap gt = paint(d, {{{3, 3, 3}, 1}});
  MatchResult r = match_lesions(pred, gt);
  CHECK(r.n_tp == 0);
  CHECK(r.n_fp == 1);
  CHECK(r.n_fn == 1);
}

TEST_CASE("match: one shared voxel is enough for TP") {
  const Dims d{4, 4, 4};
  LabelMap pred = paint(d, {{{1, 1, 1}, 1}, {{2, 1, 1}, 1}});
  LabelMap gt = paint(d, {{{2, 1, 1}, 1}, {{3, 1, 1}, 1}});
  MatchResult r = match_lesions(pred, gt);
  CHECK(r.n_tp == 1);
  CHECK(r.n_fp == 0);
  CHECK(r.n_fn == 0);
  CHECK(r.is_tp(1));
}

TEST_CASE("match: swapping pred and gt swaps fp and fn") {
  const Dims d{6, 6, 6};
  LabelMap pred = paint(d, {{{0, 0, 0}, 1}, {{2, 2, 2}, 2}});
  LabelMap gt = paint(d, {{{2, 2, 2}, 1}, {{5, 5, 5}, 2}, {{0, 5, 0}, 3}});
  MatchResult a = match_lesions(pred, gt);
  MatchResult b = match_lesions(gt, pred);
  CHECK(a.n_fp == b.n_fn);
  CHECK(a.n_fn == b.n_fp);
}

TEST_CASE("match: dims mismatch rejected") {
  LabelMap a({3, 3, 3}), b({3, 3, 4});
  CHECK_THROWS_AS(match_lesions(a, b), ValidationError);
}

TEST_CASE("dilate single voxel radius 1") {
  BinaryMask m({5, 5, 5});
  m.set(2, 2, 2, true);
  CHECK(dilate(m, 1, Structuring::k26).count_true() == 27);
  CHECK(dilate(m, 1, Structuring::k6).count_true() == 7);
}

TEST_CASE("dilate radius r equals r radius-1 passes, clipped at boundary") {
  BinaryMask m({7, 7, 7});
  m.set(0, 0, 3, true);
  BinaryMask two = dilate(m, 2, Structuring::k26);
  BinaryMask twice = dilate(dilate(m, 1, Structuring::k26), 1, Structuring::k26);
  CHECK(two.bits == twice.bits);
  CHECK(two.count_true() == 3 * 3 * 5);  // clipped at x=0, y=0
}

TEST_CASE("dilate empty mask stays empty, dilation is monotone") {
  BinaryMask e({4, 4, 4});
  CHECK(dilate(e, 1).count_true() == 0);

  Rng rng(5);
  BinaryMask a({6, 6, 6}), b({6, 6, 6});
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    a.bits[i] = rng.uniform() < 0.1;
    b.bits[i] = a.bits[i] || rng.uniform() < 0.1;  // a subset of b
  }
  BinaryMask da = dilate(a, 1), db = dilate(b, 1);
  for (std::size_t i = 0; i < da.bits.size(); ++i) {
    if (da.bits[i]) CHECK(db.bits[i]);
  }
}
