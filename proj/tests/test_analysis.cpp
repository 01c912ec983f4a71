#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "malpipe/analysis.hpp"
#include "oracles.hpp"

using namespace malpipe;
using namespace malpipe::analysis;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("confusion counting") {
  {
    const auto cm = confusion({0, 1, 2}, {0, 1, 2}, {"a", "b", "c"});
    for (std::size_t t = 0; t < 3; ++t)
      for (std::size_t p = 0; p < 3; ++p)
        CHECK(cm.counts[t][p] == (t == p ? 1u : 0u));
  }
  {
    const auto cm = confusion({0, 0, 1}, {0, 1, 1}, {"a", "b"});
    CHECK(cm.counts[0][0] == 1);
    CHECK(cm.counts[0][1] == 1);
    CHECK(cm.counts[1][0] == 0);
    CHECK(cm.counts[1][1] == 1);
  }
  {
    const auto cm = confusion({}, {}, {"a", "b"});
    CHECK(cm.total() == 0);
  }
  CHECK_THROWS_AS(confusion({2}, {0}, {"a", "b"}), DataError);
}

TEST_CASE("metrics hand-computed example") {
  ConfusionMatrix cm;
  cm.class_names = {"a", "b"};
  cm.counts = {{8, 2}, {1, 9}};
  const auto r = metrics(cm);
  CHECK(r.per_class[0].precision == doctest::Approx(8.0 / 9.0).epsilon(1e-12));
  CHECK(r.per_class[0].recall == doctest::Approx(0.8));
  CHECK(r.per_class[0].f1 == doctest::Approx(0.8421).epsilon(1e-4));
  CHECK(r.accuracy == doctest::Approx(0.85));
  CHECK(r.per_class[0].support == 10);
  CHECK(r.weighted_avg.support == 20);
}

TEST_CASE("metrics conventions") {
  // F1 from P=0.5, R=1.
  ConfusionMatrix cm;
  cm.class_names = {"a", "b"};
  cm.counts = {{1, 0}, {1, 0}};
  const auto r = metrics(cm);
  CHECK(r.per_class[0].precision == doctest::Approx(0.5));
  CHECK(r.per_class[0].recall == doctest::Approx(1.0));
  CHECK(r.per_class[0].f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  // Class b receives no predictions: precision 0 by convention.
  CHECK(r.per_class[1].precision == 0.0);
  CHECK(r.per_class[1].f1 == 0.0);
}

TEST_CASE("weighted-average recall equals accuracy on random matrices") {
  Rng rng(61);
  for (int round = 0; round < 200; ++round) {
    const std::size_t c = 2 + rng.below(5);
    ConfusionMatrix cm;
    cm.class_names.assign(c, "x");
    cm.counts.assign(c, std::vector<std::uint64_t>(c, 0));
    for (std::size_t t = 0; t < c; ++t)
      for (std::size_t p = 0; p < c; ++p) cm.counts[t][p] = rng.below(30);
    if (cm.total() == 0) continue;
    const auto r = metrics(cm);
    CHECK(std::abs(r.weighted_avg.recall - r.accuracy) <= 1e-12);
  }
}

TEST_CASE("pr_curve hand-swept examples") {
  {
    const auto curve = pr_curve({0.9, 0.8, 0.7}, {true, true, false});
    CHECK(curve.average_precision == doctest::Approx(1.0));
  }
  {
    const auto curve = pr_curve({0.9, 0.8, 0.7}, {true, false, true});
    CHECK(curve.average_precision == doctest::Approx(0.5 + 0.5 * (2.0 / 3.0)).epsilon(1e-12));
  }
  {
    // Single positive ranked last among k=4.
    const auto curve = pr_curve({0.9, 0.8, 0.7, 0.6}, {false, false, false, true});
    CHECK(curve.average_precision == doctest::Approx(0.25));
  }
  CHECK_THROWS_AS(pr_curve({0.5, 0.4}, {false, false}), DataError);
}

TEST_CASE("pr_curve processes tied scores together") {
  const auto curve = pr_curve({0.5, 0.5, 0.5, 0.1}, {true, false, true, false});
  // One threshold admits all three tied scores at once: P=2/3, R=1.
  CHECK(curve.recall[0] == doctest::Approx(1.0));
  CHECK(curve.precision[0] == doctest::Approx(2.0 / 3.0));
  CHECK(curve.average_precision == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("average precision of a random ranking concentrates at the positive rate") {
  Rng rng(67);
  const std::size_t n = 10000;
  std::vector<double> scores(n);
  std::vector<bool> truth(n);
  std::size_t positives = 0;
  for (std::size_t i = 0; i < n; ++i) {
    scores[i] = rng.uniform();
    truth[i] = rng.below(4) == 0;  // positive rate 0.25
    positives += truth[i] ? 1 : 0;
  }
  const auto curve = pr_curve(scores, truth);
  const double rate = static_cast<double>(positives) / n;
  CHECK(std::abs(curve.average_precision - rate) <= 0.05);
}

TEST_CASE("shapley_exact axioms on canonical functions") {
  const std::vector<double> baseline{0.0, 0.0}, instance{1.0, 1.0};
  {
    const auto ex = shapley_exact(
        [](std::span<const double> v) { return v[0] + 2.0 * v[1]; }, baseline, instance);
    CHECK(ex.phi[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(ex.phi[1] == doctest::Approx(2.0).epsilon(1e-12));
  }
  {
    const auto ex =
        shapley_exact([](std::span<const double>) { return 3.5; }, baseline, instance);
    CHECK(ex.phi[0] == 0.0);
    CHECK(ex.phi[1] == 0.0);
  }
  {
    const auto ex = shapley_exact(
        [](std::span<const double> v) { return v[0] * v[1]; }, baseline, instance);
    CHECK(ex.phi[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(ex.phi[1] == doctest::Approx(0.5).epsilon(1e-12));
  }
}

TEST_CASE("shapley_exact efficiency and symmetry on random quadratics") {
  Rng rng(71);
  for (int round = 0; round < 50; ++round) {
    const std::size_t d = 5;
    std::vector<double> lin(d), baseline(d), instance(d);
    Matrix quad = oracles::random_matrix(rng, d, d, -0.5, 0.5);
    for (std::size_t j = 0; j < d; ++j) {
      lin[j] = rng.uniform(-1.0, 1.0);
      baseline[j] = rng.uniform(-1.0, 1.0);
      instance[j] = rng.uniform(-1.0, 1.0);
    }
    const auto f = [&](std::span<const double> v) {
      double out = 0.0;
      for (std::size_t a = 0; a < d; ++a) {
        out += lin[a] * v[a];
        for (std::size_t b = 0; b < d; ++b) out += quad(a, b) * v[a] * v[b];
      }
      return out;
    };
    const auto ex = shapley_exact(f, baseline, instance);
    double sum = 0.0;
    for (double p : ex.phi) sum += p;
    CHECK(std::abs(sum - (ex.output_value - ex.base_value)) <= 1e-9);
  }

  // Exchangeable features of a symmetric function get identical credit.
  const auto sym = [](std::span<const double> v) {
    return v[0] * v[1] + std::sin(v[0] + v[1]);
  };
  const auto ex = shapley_exact(sym, {0.2, 0.2}, {0.9, 0.9});
  CHECK(std::abs(ex.phi[0] - ex.phi[1]) <= 1e-12);
}

TEST_CASE("shapley_exact refuses wide inputs, pointing at sampling") {
  const std::vector<double> wide(17, 0.0);
  CHECK_THROWS_WITH_AS(
      shapley_exact([](std::span<const double>) { return 0.0; }, wide, wide),
      doctest::Contains("shapley_sample"), ConfigError);
}

TEST_CASE("shapley_sample matches exact values") {
  const std::vector<double> baseline{0, 0, 0}, instance{1, 2, 3};
  const auto additive = [](std::span<const double> v) {
    return 2.0 * v[0] - v[1] + 0.5 * v[2];
  };
  // Additive models have constant marginals: any permutation count is exact.
  const auto sampled = shapley_sample(additive, baseline, instance, 3, 9);
  CHECK(sampled.phi[0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(sampled.phi[1] == doctest::Approx(-2.0).epsilon(1e-12));
  CHECK(sampled.phi[2] == doctest::Approx(1.5).epsilon(1e-12));

  // Product model, d=5: 2000 permutations stay within 0.05 of exact.
  Rng rng(73);
  std::vector<double> b5(5), i5(5);
  for (std::size_t j = 0; j < 5; ++j) {
    b5[j] = rng.uniform(0.0, 0.4);
    i5[j] = rng.uniform(0.6, 1.2);
  }
  const auto product = [](std::span<const double> v) {
    double out = 1.0;
    for (double x : v) out *= x;
    return out;
  };
  const auto exact = shapley_exact(product, b5, i5);
  const auto mc = shapley_sample(product, b5, i5, 2000, 31);
  for (std::size_t j = 0; j < 5; ++j) CHECK(std::abs(mc.phi[j] - exact.phi[j]) <= 0.05);

  const auto mc2 = shapley_sample(product, b5, i5, 2000, 31);
  CHECK(mc.phi == mc2.phi);
}

TEST_CASE("global_importance ranking and ties") {
  Explanation a, b;
  a.phi = {1.0, 0.0};
  b.phi = {-1.0, 2.0};
  a.instance = a.baseline = b.instance = b.baseline = {0.0, 0.0};
  const auto ranked = global_importance({a, b});
  CHECK(ranked[0].feature == 0);  // means tie at 1.0; lower index first
  CHECK(ranked[0].mean_abs_phi == doctest::Approx(1.0));
  CHECK(ranked[1].feature == 1);

  Explanation zero;
  zero.phi = {0.0, 0.0, 0.0};
  zero.instance = zero.baseline = {0, 0, 0};
  const auto flat = global_importance({zero});
  CHECK(flat[0].feature == 0);
  CHECK(flat[1].feature == 1);
  CHECK(flat[2].feature == 2);

  CHECK_THROWS_AS(global_importance({}), DataError);
}

TEST_CASE("exports are byte-stable and internally consistent") {
  const auto dir = std::filesystem::temp_directory_path();
  const auto f = [](std::span<const double> v) { return v[0] * v[1] + v[0]; };
  const auto ex = shapley_exact(f, {0.0, 0.0}, {1.5, -0.5});

  const auto waterfall = dir / "malpipe_waterfall.csv";
  export_waterfall(ex, {"x0", "x1"}, waterfall);
  const std::string body = slurp(waterfall);
  // Final cumulative row reproduces f(instance).
  const auto last_comma = body.find_last_of(',');
  const double final_value = std::stod(body.substr(last_comma + 1));
  CHECK(final_value == doctest::Approx(ex.output_value).epsilon(1e-9));

  export_waterfall(ex, {"x0", "x1"}, waterfall);
  CHECK(slurp(waterfall) == body);

  ConfusionMatrix cm;
  cm.class_names = {"a", "b"};
  cm.counts = {{3, 1}, {0, 2}};
  const auto confusion_path = dir / "malpipe_confusion.csv";
  export_confusion(cm, confusion_path);
  const std::string conf = slurp(confusion_path);
  CHECK(std::count(conf.begin(), conf.end(), '\n') == 1 + 4);  // header + C*C cells

  std::filesystem::remove(waterfall);
  std::filesystem::remove(confusion_path);
}
