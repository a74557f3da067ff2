#include "advscope/error.hpp"
#include "advscope/neuron_measures.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace advscope;

TEST_CASE("band gap piecewise cases") {
  CHECK(band_gap(0, 1, 2, 3) == -1.0);
  CHECK(band_gap(2, 3, 0, 1) == 1.0);
  CHECK(band_gap(0, 2, 1, 3) == 0.0);
  CHECK(band_gap(0, 1, 1, 2) == 0.0);  // touching bands overlap
}

TEST_CASE("z value and bands") {
  CHECK(z_value(0.95) == doctest::Approx(1.959963984540054).epsilon(1e-12));
  CHECK(z_value(0.99) > z_value(0.95));
  CHECK_THROWS_AS(z_value(1.0), ValidationError);

  ContributionVector a{0, {1.0, 2.0}}, b{0, {3.0, 2.0}};
  const auto same = band_from_members({a, a, a}, 0.95);
  CHECK(same.lower == a.values);
  CHECK(same.upper == a.values);
  const auto two = band_from_members({a, b}, 0.95);
  CHECK((two.lower[0] + two.upper[0]) / 2 == doctest::Approx(2.0));
  CHECK(two.upper[0] - 2.0 == doctest::Approx(z_value(0.95) * 1.0));
  CHECK(two.lower[1] == two.upper[1]);
  const auto wide = band_from_members({a, b}, 0.99);
  CHECK(wide.upper[0] - wide.lower[0] > two.upper[0] - two.lower[0]);
  CHECK_THROWS_AS(band_from_members({a}, 0.95), InsufficientMembersError);
}

TEST_CASE("ranking by gap") {
  CHECK(rank_by_gap({0, 0, 0}) == std::vector<std::size_t>{0, 1, 2});
  CHECK(rank_by_gap({-0.5, 0.0, 0.7}) == std::vector<std::size_t>{2, 1, 0});
  CHECK(rank_by_gap({0.1, -0.1, 0.1, 0.0}) == std::vector<std::size_t>{0, 2, 3, 1});
}

TEST_CASE("contributions decompose the logit") {
  SplitMix64 rng(2);
  Model<float> model = init_model<float>(test::tiny_spec(), 5);
  test::randomize_batchnorm(model, rng);
  const auto trace = forward(model, test::random_image(rng, 3, 16, 16));
  for (std::size_t c = 0; c < 3; ++c) {
    const auto v = contribution(model, trace, c);
    double sum = model.dense_bias()[c];
    for (double x : v.values) sum += x;
    CHECK(std::abs(sum - trace.logits[c]) < 1e-5);
  }
  ForwardTrace zero = trace;
  std::fill(zero.pooled.begin(), zero.pooled.end(), 0.0);
  for (double x : contribution(model, zero, 1).values) CHECK(x == 0.0);
  ForwardTrace doubled = trace;
  doubled.pooled[3] *= 2;
  const auto base = contribution(model, trace, 1).values, twice = contribution(model, doubled, 1).values;
  for (std::size_t k = 0; k < base.size(); ++k) CHECK(twice[k] == (k == 3 ? 2 * base[k] : base[k]));
  CHECK_THROWS_AS(contribution(model, trace, 3), ValidationError);
}

TEST_CASE("neuron substitution") {
  SplitMix64 rng(3);
  Model<float> model = init_model<float>(test::tiny_spec(), 6);
  test::randomize_batchnorm(model, rng);
  const auto b = forward(model, test::random_image(rng, 3, 16, 16));
  const auto a = forward(model, test::random_image(rng, 3, 16, 16));
  const auto none = neuron_substitution_delta(model, b, b, 2, 0, 1);
  CHECK(none.benign == 0.0);
  CHECK(none.adversarial == 0.0);
  for (std::size_t k = 0; k < 6; ++k) {
    const auto d = neuron_substitution_delta(model, b, a, k, 0, 1);
    // Oracle: patch the pooled vector and evaluate dense + softmax by hand.
    auto pooled = b.pooled;
    pooled[k] = a.pooled[k];
    std::vector<double> logits(3);
    for (std::size_t c = 0; c < 3; ++c) {
      logits[c] = model.dense_bias()[c];
      for (std::size_t j = 0; j < 6; ++j) logits[c] += model.dense_weight()[c * 6 + j] * pooled[j];
    }
    const auto p = softmax(logits);
    CHECK(std::abs(d.benign - (p[0] - b.probabilities[0])) < 1e-6);
    CHECK(std::abs(d.adversarial - (p[1] - b.probabilities[1])) < 1e-6);
  }
  // Replacing every neuron reproduces the adversarial logits.
  const auto all = dense_logits(model, a.pooled);
  for (std::size_t c = 0; c < 3; ++c) CHECK(all[c] == doctest::Approx(a.logits[c]).epsilon(1e-6));
}

TEST_CASE("neuron rows on a run") {
  test::TempDir dir("rows");
  const Workspace ws = Workspace::open(test::make_run(dir.path(), 3, 40), 1);
  bool any = false;
  for (const auto& pair : ws.pairs()) {
    try {
      const auto rows = neuron_rows(ws, pair.id, 0.95);
      any = true;
      CHECK(rows.size() == ws.neuron_count());
      for (const auto& r : rows) {
        CHECK(r.band_b.first <= r.band_b.second);
        CHECK(r.bg == band_gap(r.band_a.first, r.band_a.second, r.band_b.first, r.band_b.second));
      }
    } catch (const InsufficientMembersError&) {
    }
  }
  CHECK(any);
}
