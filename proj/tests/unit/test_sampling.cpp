#include <set>
#include <sstream>

#include "doctest.h"
#include "osal/errors.hpp"
#include "osal/sampling.hpp"
#include "support.hpp"

using namespace osal;

namespace {

SampleRecord record(std::uint64_t id, std::vector<float> x, std::optional<int> label = {}) {
  return {SampleId{id}, std::move(x), label, {}};
}

std::vector<UncertaintyScore> scores_of(std::initializer_list<std::pair<std::uint64_t, double>> v) {
  std::vector<UncertaintyScore> out;
  for (auto [id, s] : v) out.push_back({SampleId{id}, s});
  return out;
}

Matrix ring_classifier(int classes) {
  Matrix w(classes, 2);
  for (int c = 0; c < classes; ++c) {
    w(c, 0) = std::cos(2 * M_PI * c / classes);
    w(c, 1) = std::sin(2 * M_PI * c / classes);
  }
  return w;
}

}  // namespace

TEST_CASE("uncertainty_scores") {
  SUBCASE("uniform classifier over 10 classes scores 1/10") {
    const auto model = testing::identity_encoder_model(2, Matrix::Zero(10, 2));
    std::vector<SampleRecord> rs = {record(0, {0.3f, 1.0f}), record(1, {-2.0f, 0.5f})};
    for (const auto& s : uncertainty_scores(model, testing::pointers(rs))) {
      CHECK(s.max_class_probability == doctest::Approx(0.1).epsilon(1e-12));
    }
  }
  SUBCASE("known probability vectors") {
    // Logits (x0, x1) with x0 - x1 = ln(0.6/0.4) and ln(0.9/0.1).
    Matrix w(2, 2);
    w << 1, 0, 0, 1;
    const auto model = testing::identity_encoder_model(2, w);
    std::vector<SampleRecord> rs = {record(4, {static_cast<float>(std::log(1.5)), 0.0f}),
                                    record(9, {0.0f, static_cast<float>(std::log(9.0))})};
    const auto s = uncertainty_scores(model, testing::pointers(rs));
    CHECK(s[0].id == SampleId{4});
    CHECK(s[0].max_class_probability == doctest::Approx(0.6).epsilon(1e-6));
    CHECK(s[1].max_class_probability == doctest::Approx(0.9).epsilon(1e-6));
  }
  SUBCASE("confident output approaches one") {
    Matrix w(2, 1);
    w << 100, -100;
    const auto model = testing::identity_encoder_model(1, w);
    std::vector<SampleRecord> rs = {record(0, {1.0f})};
    CHECK(uncertainty_scores(model, testing::pointers(rs))[0].max_class_probability ==
          doctest::Approx(1.0));
  }
  SUBCASE("bounds hold for random models and inputs") {
    ModelSpec spec;
    spec.input_shape = {1, 1, 6};
    spec.num_classes = 7;
    Rng rng(2);
    std::normal_distribution<double> n(0.0, 5.0);
    for (int trial = 0; trial < 5; ++trial) {
      auto model = VnnModel::create(spec, rng);
      model.parameters() *= 4.0;
      std::vector<SampleRecord> rs;
      for (std::uint64_t i = 0; i < 200; ++i) {
        std::vector<float> x(6);
        for (auto& v : x) v = static_cast<float>(n(rng));
        rs.push_back(record(i, x));
      }
      for (const auto& s : uncertainty_scores(model, testing::pointers(rs))) {
        CHECK(s.max_class_probability >= 1.0 / 7 - 1e-6);
        CHECK(s.max_class_probability <= 1.0 + 1e-6);
      }
    }
  }
  const auto model = testing::identity_encoder_model(2, Matrix::Zero(3, 2));
  CHECK_THROWS_AS(uncertainty_scores(model, {}), EmptyPoolError);
}

TEST_CASE("select_uncertain") {
  SUBCASE("order statistics") {
    const auto s = scores_of({{10, 0.3}, {11, 0.9}, {12, 0.5}});
    CHECK(select_uncertain(s, 2).selected_ids == std::vector<SampleId>{SampleId{10}, SampleId{12}});
  }
  SUBCASE("ties by ascending id") {
    const auto s = scores_of({{7, 0.5}, {3, 0.5}, {5, 0.5}});
    CHECK(select_uncertain(s, 2).selected_ids == std::vector<SampleId>{SampleId{3}, SampleId{5}});
  }
  SUBCASE("whole pool and errors") {
    const auto s = scores_of({{1, 0.2}, {2, 0.1}});
    CHECK(select_uncertain(s, 2).selected_ids.size() == 2);
    CHECK(select_uncertain(s, 0).selected_ids.empty());
    CHECK_THROWS_AS(select_uncertain(s, 3), BudgetError);
  }
  SUBCASE("selection is invariant to pool order") {
    Rng rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<UncertaintyScore> s;
    for (std::uint64_t i = 0; i < 300; ++i) s.push_back({SampleId{i}, std::round(u(rng) * 20) / 20});
    const auto a = select_uncertain(s, 40);
    partial_shuffle(s, s.size(), rng);
    const auto b = select_uncertain(s, 40);
    CHECK(a.selected_ids == b.selected_ids);
    CHECK(std::set<SampleId>(a.selected_ids.begin(), a.selected_ids.end()).size() == 40);
  }
}

TEST_CASE("class_latent_means") {
  Matrix w(2, 2);
  w << 1, 0, 0, 1;  // predicts class 0 when x0 > x1
  const auto model = testing::identity_encoder_model(2, w);
  std::vector<SampleRecord> rs = {record(0, {1, 0}), record(1, {3, 2}), record(2, {0, 5}),
                                  record(3, {4, 1})};
  std::vector<ClassIndex> labels = {0, 0, 0, 1};
  const auto stats = class_latent_means(model, testing::pointers(rs), labels);
  // Sample 2 is labeled 0 but predicted 1; sample 3 is labeled 1 but predicted 0.
  REQUIRE(stats.size() == 1);
  CHECK(stats.at(0).mean[0] == doctest::Approx(2.0));
  CHECK(stats.at(0).mean[1] == doctest::Approx(1.0));
  CHECK(stats.at(0).correct_ids == std::vector<SampleId>{SampleId{0}, SampleId{1}});

  SUBCASE("single correct sample") {
    std::vector<ClassIndex> one = {1, 1, 1, 0};
    const auto s = class_latent_means(model, testing::pointers(rs), one);
    CHECK(s.at(1).mean[1] == doctest::Approx(5.0));
    CHECK(s.at(0).mean[0] == doctest::Approx(4.0));
  }
  SUBCASE("nothing correct") {
    std::vector<ClassIndex> wrong = {1, 1, 0, 1};
    CHECK_THROWS_AS(class_latent_means(model, testing::pointers(rs), wrong), DegenerateStatsError);
  }
}

TEST_CASE("fit_weibull") {
  SUBCASE("exponential draws give shape 1, scale 1") {
    Rng rng(11);
    std::exponential_distribution<double> e(1.0);
    std::vector<double> x(10000);
    for (auto& v : x) v = e(rng);
    const auto fit = fit_weibull(x, 1.0);
    const auto [k_oracle, l_oracle] = testing::weibull_grid_mle(x);
    CHECK(fit.shape == doctest::Approx(k_oracle).epsilon(1e-5));
    CHECK(fit.scale == doctest::Approx(l_oracle).epsilon(1e-5));
    CHECK(std::abs(fit.shape - 1.0) <= 0.05);
    CHECK(std::abs(fit.scale - 1.0) <= 0.05);
    CHECK(fit.tail_size == 10000);
  }
  SUBCASE("parameter recovery") {
    std::uint64_t seed = 100;
    for (double k : {0.5, 1.0, 2.0}) {
      for (double l : {0.5, 1.0, 3.0}) {
        CAPTURE(k);
        CAPTURE(l);
        const auto x = testing::weibull_draws(k, l, 10000, ++seed);
        const auto fit = fit_weibull(x, 1.0);
        CHECK(fit.shape == doctest::Approx(k).epsilon(0.05));
        CHECK(fit.scale == doctest::Approx(l).epsilon(0.05));
        const auto [ko, lo] = testing::weibull_grid_mle(x);
        CHECK(fit.shape == doctest::Approx(ko).epsilon(1e-5));
        CHECK(fit.scale == doctest::Approx(lo).epsilon(1e-5));
      }
    }
  }
  SUBCASE("scale equivariance") {
    auto x = testing::weibull_draws(1.7, 2.0, 500, 3);
    const auto a = fit_weibull(x, 0.25);
    for (auto& v : x) v *= 3.0;
    const auto b = fit_weibull(x, 0.25);
    CHECK(b.scale == doctest::Approx(3.0 * a.scale).epsilon(1e-6));
    CHECK(std::abs(b.shape - a.shape) <= 1e-3);
  }
  SUBCASE("tail truncation keeps the largest distances") {
    std::vector<double> x;
    for (int i = 1; i <= 40; ++i) x.push_back(i);
    std::vector<double> top(x.end() - 10, x.end());
    const auto a = fit_weibull(x, 0.25);
    const auto b = fit_weibull(top, 1.0);
    CHECK(a.tail_size == 10);
    CHECK(a.shape == doctest::Approx(b.shape));
    CHECK(a.scale == doctest::Approx(b.scale));
  }
  SUBCASE("degenerate inputs") {
    CHECK_THROWS_AS(fit_weibull(std::vector<double>(5, 1.0), 1.0), DegenerateStatsError);
    CHECK_THROWS_AS(fit_weibull(std::vector<double>(20, 2.0), 1.0), DegenerateStatsError);
    CHECK_THROWS_AS(fit_weibull(testing::weibull_draws(1, 1, 20, 1), 0.25), DegenerateStatsError);
    CHECK_THROWS_AS(fit_weibull(testing::weibull_draws(1, 1, 20, 1), 0.0), ContractError);
  }
  SUBCASE("an iteration budget of zero fails to converge") {
    WeibullOptions opts;
    opts.max_iterations = 0;
    CHECK_THROWS_AS(fit_weibull(testing::weibull_draws(1, 1, 100, 1), 1.0, opts), FitError);
  }
}

TEST_CASE("outlier_probability") {
  std::map<ClassIndex, WeibullClassModel> models;
  models[0] = {0, Vector::Zero(2), 2.0, 1.5, 10, 10};
  Vector z(2);
  z << 0.0, 0.0;
  CHECK(outlier_probability(z, models) == 0.0);
  z << 1.5, 0.0;
  CHECK(outlier_probability(z, models) == doctest::Approx(1.0 - std::exp(-1.0)));

  SUBCASE("minimum over classes") {
    // Pick scales so the two CDFs at distance 1 are 0.9 and 0.2 with shape 1.
    Vector m1(2);
    m1 << 1.0, 0.0;
    models[0] = {0, Vector::Zero(2), 1.0, -1.0 / std::log(0.1), 10, 10};
    models[1] = {1, m1, 1.0, -1.0 / std::log(0.8), 10, 10};
    Vector p(2);
    p << 0.0, 1.0;  // distance 1 to mean 0, sqrt 2 to mean 1
    const double psi0 = 0.9;
    const double psi1 = weibull_cdf(std::sqrt(2.0), 1.0, -1.0 / std::log(0.8));
    CHECK(outlier_probability(p, models) == doctest::Approx(std::min(psi0, psi1)));
  }
  SUBCASE("monotone in distance") {
    double prev = -1.0;
    for (double d = 0.0; d < 10.0; d += 0.05) {
      z << d, 0.0;
      const double p = outlier_probability(z, models);
      CHECK(p >= prev);
      prev = p;
    }
  }
  CHECK_THROWS_AS(outlier_probability(z, {}), DegenerateStatsError);
}

TEST_CASE("select_weibull rejects a far foreign blob") {
  const auto in = testing::blobs(4, 100, 2, 21);
  const auto model = testing::identity_encoder_model(2, ring_classifier(4));
  const auto labeled = testing::pointers(in.train_records);
  std::vector<ClassIndex> labels;
  for (const auto& r : in.train_records) labels.push_back(*r.true_label);

  BlobConfig fc;
  fc.classes = 1;
  fc.n_per_class = 50;
  fc.offset = {40.0, 40.0};
  fc.seed = 3;
  auto foreign = make_blobs(fc).train_records;
  std::vector<SampleRecord> pool = in.eval_records;
  for (auto& r : foreign) {
    r.id.value += 10000;
    r.origin = Origin::foreign("far");
    r.true_label.reset();
    pool.push_back(r);
  }
  const auto unlabeled = testing::pointers(pool);

  // Brute-force check of the construction: every foreign point is farther from every class
  // mean than any in-distribution point is from its nearest mean.
  const auto stats = class_latent_means(model, labeled, labels);
  auto nearest = [&](const SampleRecord& r) {
    double best = INFINITY;
    for (const auto& [c, s] : stats) {
      best = std::min(best, std::hypot(r.features[0] - s.mean[0], r.features[1] - s.mean[1]));
    }
    return best;
  };
  double max_in = 0.0, min_out = INFINITY;
  for (const auto& r : in.eval_records) max_in = std::max(max_in, nearest(r));
  for (const auto& r : foreign) min_out = std::min(min_out, nearest(r));
  REQUIRE(min_out > 2.0 * max_in);

  const auto result = select_weibull(model, unlabeled, labeled, labels, 20, 0.25, 0.95);
  std::size_t foreign_rejected = 0;
  for (auto id : result.rejected_ood_ids) foreign_rejected += id.value >= 10000;
  CHECK(foreign_rejected >= 45);
  for (auto id : result.selected_ids) CHECK(id.value < 10000);
  CHECK(result.selected_ids.size() == 20);
  CHECK_FALSE(result.shortfall);
  CHECK(result.scores.size() == pool.size());
  // Selection is the highest outlier probability among the kept samples.
  const double lowest_selected = result.scores.at(result.selected_ids.back());
  const std::set<SampleId> chosen(result.selected_ids.begin(), result.selected_ids.end());
  const std::set<SampleId> rejected(result.rejected_ood_ids.begin(), result.rejected_ood_ids.end());
  for (const auto& [id, p] : result.scores) {
    if (!chosen.contains(id) && !rejected.contains(id)) CHECK(p <= lowest_selected);
  }

  SUBCASE("threshold 1 disables rejection") {
    const auto open = select_weibull(model, unlabeled, labeled, labels, 30, 0.25, 1.0);
    CHECK(open.rejected_ood_ids.empty());
    std::vector<std::pair<double, SampleId>> all;
    for (const auto& [id, p] : open.scores) all.emplace_back(-p, id);
    std::sort(all.begin(), all.end());
    for (std::size_t i = 0; i < 30; ++i) CHECK(open.selected_ids[i] == all[i].second);
  }
  SUBCASE("everything rejected leaves a shortfall") {
    std::vector<SampleRecord> only_foreign(foreign.begin(), foreign.end());
    const auto r = select_weibull(model, testing::pointers(only_foreign), labeled, labels, 5, 0.25,
                                  0.95);
    CHECK(r.selected_ids.empty());
    CHECK(r.shortfall);
  }
  SUBCASE("pool order does not change the selection") {
    auto reversed = unlabeled;
    std::reverse(reversed.begin(), reversed.end());
    const auto r = select_weibull(model, reversed, labeled, labels, 20, 0.25, 0.95);
    CHECK(r.selected_ids == result.selected_ids);
    CHECK(r.rejected_ood_ids == result.rejected_ood_ids);
  }
}

TEST_CASE("random_select") {
  std::vector<SampleId> ids;
  for (std::uint64_t i = 0; i < 10; ++i) ids.push_back(SampleId{i * 3});
  CHECK(random_select(ids, 4, 9).selected_ids == random_select(ids, 4, 9).selected_ids);
  const auto all = random_select(ids, 10, 1).selected_ids;
  CHECK(std::set<SampleId>(all.begin(), all.end()) == std::set<SampleId>(ids.begin(), ids.end()));
  CHECK_THROWS_AS(random_select(ids, 11, 1), BudgetError);

  std::map<SampleId, int> hits;
  for (std::uint64_t seed = 0; seed < 10000; ++seed) ++hits[random_select(ids, 1, seed).selected_ids[0]];
  double chi2 = 0.0;
  for (const auto& [id, h] : hits) {
    CHECK(std::abs(h - 1000) <= 150);
    chi2 += (h - 1000.0) * (h - 1000.0) / 1000.0;
  }
  CHECK(hits.size() == 10);
  // 9 degrees of freedom, p = 0.001 critical value.
  CHECK(chi2 < 27.88);
}

TEST_CASE("selection properties over random pools") {
  Rng rng(123);
  for (int trial = 0; trial < 20; ++trial) {
    const auto ds = testing::blobs(3, 30, 2, static_cast<std::uint64_t>(trial));
    const auto model = testing::identity_encoder_model(2, ring_classifier(3));
    std::vector<const SampleRecord*> labeled, unlabeled;
    std::vector<ClassIndex> labels;
    for (const auto& r : ds.train_records) {
      if (uniform_index(rng, 2) == 0) {
        labeled.push_back(&r);
        labels.push_back(*r.true_label);
      } else {
        unlabeled.push_back(&r);
      }
    }
    const std::size_t b = 1 + uniform_index(rng, unlabeled.size());
    std::set<SampleId> pool;
    for (auto* r : unlabeled) pool.insert(r->id);
    for (const auto& sel : {select_uncertain(uncertainty_scores(model, unlabeled), b),
                            select_weibull(model, unlabeled, labeled, labels, b, 0.25, 0.95)}) {
      std::set<SampleId> seen;
      for (auto id : sel.selected_ids) {
        CHECK(pool.contains(id));
        CHECK(seen.insert(id).second);
      }
    }
  }
}

TEST_CASE("selection CSV") {
  SelectionResult r;
  r.scores = {{SampleId{2}, 0.5}, {SampleId{1}, 0.25}, {SampleId{3}, 0.99}};
  r.selected_ids = {SampleId{2}};
  r.rejected_ood_ids = {SampleId{3}};
  std::ostringstream out;
  write_selection_csv(out, 4, Strategy::weibull, r, true);
  CHECK(out.str() ==
        "stage,sample_id,strategy,score,selected,rejected_ood\n"
        "4,1,weibull,0.25,0,0\n"
        "4,2,weibull,0.5,1,0\n"
        "4,3,weibull,0.99,0,1\n");
  CHECK(parse_strategy("random") == Strategy::random);
  CHECK_THROWS_AS(parse_strategy("coreset"), ConfigError);
}
