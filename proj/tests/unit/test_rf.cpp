#include "advscope/error.hpp"
#include "advscope/image_ops.hpp"
#include "advscope/mask.hpp"
#include "advscope/rf.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace advscope;

namespace {

ForwardTrace trace_with_maps(Tensor<float> maps) {
  ForwardTrace t;
  t.last_conv_maps = std::move(maps);
  return t;
}

Mask first_n(std::size_t h, std::size_t w, std::size_t n) {
  Mask m(h, w);
  for (std::size_t i = 0; i < n; ++i) m.bits[i] = 1;
  return m;
}

}  // namespace

TEST_CASE("mask algebra") {
  SplitMix64 rng(1);
  const Mask a = test::random_mask(rng, 9, 7, 0.4);
  const Mask not_a = mask_complement(a);
  const Mask pair[] = {a, not_a};
  CHECK(mask_union(pair).count() == 63);
  CHECK(mask_intersection(pair).count() == 0);
  const Mask single[] = {a};
  CHECK(mask_union(single) == a);
  CHECK(mask_intersection(single) == a);
  const Mask b = test::random_mask(rng, 9, 7, 0.5);
  const Mask ab[] = {a, b};
  const Mask u = mask_union(ab), n = mask_intersection(ab);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(n.bits[i] <= a.bits[i]);
    CHECK(a.bits[i] <= u.bits[i]);
  }
  const Mask wrong[] = {a, Mask(7, 9)};
  CHECK_THROWS_AS(mask_union(wrong), ValidationError);
}

TEST_CASE("run length encoding round trip") {
  SplitMix64 rng(2);
  for (int i = 0; i < 50; ++i) {
    const Mask m = test::random_mask(rng, 5, 6, rng.uniform());
    const auto runs = m.run_lengths();
    CHECK(Mask::from_run_lengths(5, 6, runs) == m);
  }
  const Mask ones(2, 2, 1);
  CHECK(ones.run_lengths() == std::vector<std::size_t>{0, 4});
  const std::size_t bad[] = {1, 2};
  CHECK_THROWS_AS(Mask::from_run_lengths(2, 2, bad), FormatError);
}

TEST_CASE("iou examples") {
  const Mask a = first_n(8, 8, 20);
  CHECK(iou(a, a) == 1.0);
  Mask disjoint(8, 8);
  disjoint.bits[63] = 1;
  CHECK(iou(a, disjoint) == 0.0);
  CHECK(iou(first_n(8, 8, 10), first_n(8, 8, 40)) == 0.25);
  CHECK(iou(Mask(8, 8), Mask(8, 8)) == 0.0);
}

TEST_CASE("receptive field of the paper's reference geometry") {
  // 14x14 feature map and a 224x224 input, both resized to 120x120.
  SplitMix64 rng(3);
  Tensor<float> maps({2, 14, 14});
  for (auto& v : maps.span()) v = static_cast<float>(rng.uniform(-1, 1));
  const auto image = test::random_image(rng, 3, 224, 224);
  const RfParams params{120, 0.5};
  const auto rf = receptive_field(trace_with_maps(maps), 1, image, params);
  CHECK(rf.mask.height == 120);
  CHECK(rf.image.shape() == Shape{3, 120, 120});
  const auto resized = resize_bilinear(image, 120, 120);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < 14400; ++i) {
      CHECK(rf.image[c * 14400 + i] == (rf.mask.bits[i] ? resized[c * 14400 + i] : 0.0f));
    }
  }
  CHECK(rf.mask.count() > 0);
  CHECK(rf.mask.count() < 14400);
}

TEST_CASE("receptive field threshold edge cases") {
  SplitMix64 rng(4);
  const auto image = test::random_image(rng, 3, 16, 16);
  Tensor<float> positive({1, 4, 4});
  for (auto& v : positive.span()) v = static_cast<float>(rng.uniform(0.5, 2));
  const auto all = receptive_field(trace_with_maps(positive), 0, image, RfParams{16, 1e-9});
  CHECK(all.mask.count() == 256);
  CHECK(all.image == image);

  const Tensor<float> constant({1, 4, 4}, 0.7f);
  for (double t : {0.1, 0.5, 1.0}) {
    CHECK(receptive_field(trace_with_maps(constant), 0, image, RfParams{16, t}).mask.count() == 256);
  }
  const Tensor<float> dead({1, 4, 4}, -0.3f);
  const auto none = receptive_field(trace_with_maps(dead), 0, image, RfParams{16, 0.5});
  CHECK(none.dead);
  CHECK(none.mask.count() == 0);

  CHECK_THROWS_AS(receptive_field(trace_with_maps(constant), 0, image, RfParams{16, 0.0}), ValidationError);
  CHECK_THROWS_AS(receptive_field(trace_with_maps(constant), 0, image, RfParams{16, 1.5}), ValidationError);
  CHECK_THROWS_AS(receptive_field(trace_with_maps(constant), 0, image, RfParams{3, 0.5}), ValidationError);
  CHECK_THROWS_AS(receptive_field(trace_with_maps(constant), 1, image, RfParams{16, 0.5}), NotFoundError);
}

TEST_CASE("bilinear resize") {
  Tensor<float> image({1, 2, 2}, std::vector<float>{0, 1, 2, 3});
  CHECK(resize_bilinear(image, 2, 2) == image);
  const auto big = resize_bilinear(image, 4, 4);
  CHECK(big[0] == 0.0f);
  CHECK(big[15] == 3.0f);
  CHECK(big[5] == doctest::Approx(0.75));  // (0.25, 0.25) between the four corners
}

TEST_CASE("png and base64 encoding") {
  CHECK(base64_encode({'M', 'a', 'n'}) == "TWFu");
  CHECK(base64_encode({'M', 'a'}) == "TWE=");
  CHECK(base64_encode({'M'}) == "TQ==");
  const auto png = encode_png(Tensor<float>({3, 4, 4}, 0.5f));
  REQUIRE(png.size() > 8);
  CHECK(png[1] == 'P');
  CHECK(png[2] == 'N');
  CHECK(png[3] == 'G');
  CHECK(encode_heatmap_png(std::vector<double>(6, 0.0), 2, 3).size() > 8);
}

TEST_CASE("context images") {
  test::TempDir dir("ctx");
  const Workspace ws = Workspace::open(test::make_run(dir.path()), 1);
  std::vector<std::size_t> all;
  for (const auto& p : ws.pairs()) all.push_back(p.id);
  const RfParams params{0, 0.5};

  const auto everything = context_images(ws, 0, all, ContextSort::Activation, all.size() + 5, params);
  CHECK(everything.size() == all.size());
  for (std::size_t i = 1; i < everything.size(); ++i) {
    CHECK(everything[i - 1].score >= everything[i].score);
    if (everything[i - 1].score == everything[i].score) CHECK(everything[i - 1].pair_id < everything[i].pair_id);
  }
  std::size_t best = all[0];
  for (std::size_t id : all) {
    if (ws.trace(id, ImageSide::Benign).pooled[0] > ws.trace(best, ImageSide::Benign).pooled[0]) best = id;
  }
  CHECK(everything.front().pair_id == best);

  const auto six = context_images(ws, 2, all, ContextSort::Confidence, 6, params);
  CHECK(six.size() == std::min<std::size_t>(6, all.size()));
  for (const auto& c : six) {
    const auto& p = ws.pair(c.pair_id);
    CHECK(c.score == ws.trace(c.pair_id, ImageSide::Benign).probabilities[p.benign_label]);
    CHECK(c.benign.mask.height == 16);
    CHECK(c.adversarial.neuron == 2);
  }
  CHECK_THROWS_AS(context_images(ws, 0, all, ContextSort::Activation, 0, params), ValidationError);
}
