#include "doctest.h"
#include "osal/binary_io.hpp"
#include "osal/errors.hpp"
#include "osal/report.hpp"
#include "support.hpp"

using namespace osal;
namespace fs = std::filesystem;

namespace {

Aggregate make_aggregate(const std::string& name, std::vector<double> acc, std::size_t runs = 5) {
  Aggregate a;
  a.config_json = R"({"name":")" + name + R"(","strategy":"uncertainty","variant":"m1","train":{"optimizer":"adam"}})";
  a.train_size = 1000;
  for (std::size_t i = 0; i < runs; ++i) a.seeds.push_back(i);
  a.single_run = runs == 1;
  for (std::size_t s = 0; s < acc.size(); ++s) {
    a.stages.push_back({static_cast<int>(s), 100.0 * static_cast<double>(s + 1), acc[s], runs == 1 ? 0.0 : 0.01, runs});
  }
  return a;
}

}  // namespace

TEST_CASE("curves from aggregates") {
  const auto c = curve_from_aggregate(make_aggregate("a", {0.5, 0.6, 0.7}));
  CHECK(c.label == "a");
  CHECK(c.strategy == "uncertainty");
  CHECK(c.optimizer == "adam");
  CHECK(c.labeled == std::vector<double>{100, 200, 300});
  CHECK(c.fraction[2] == doctest::Approx(0.3));
  CHECK(!c.single_run);
  CHECK_THROWS_AS(curve_from_aggregate(Aggregate{}), AggregationError);
}

TEST_CASE("four curves of seven points") {
  std::vector<CurveSet> curves;
  for (int v = 0; v < 4; ++v) {
    curves.push_back(curve_from_aggregate(make_aggregate("v" + std::to_string(v), std::vector<double>(7, 0.5 + 0.01 * v))));
  }
  const auto csv = curves_csv(curves);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 4 * 7);
  CHECK(csv.rfind("strategy,variant,optimizer,stage,labeled_count,labeled_fraction,acc_mean,acc_std,n_seeds", 0) == 0);
}

TEST_CASE("legend ordered by final accuracy") {
  std::vector<CurveSet> curves = {curve_from_aggregate(make_aggregate("low", {0.5, 0.54})),
                                  curve_from_aggregate(make_aggregate("high", {0.5, 0.61}))};
  CHECK(legend_order(curves) == std::vector<std::size_t>{1, 0});
  const auto svg = render_svg(curves, "t");
  CHECK(svg.find("high (0.610)") < svg.find("low (0.540)"));
}

TEST_CASE("single seed curve is flagged and drawn without a band") {
  const auto c = curve_from_aggregate(make_aggregate("solo", {0.4, 0.5}, 1));
  CHECK(c.single_run);
  const auto svg = render_svg({c}, "t");
  CHECK(svg.find("polygon") == std::string::npos);
  CHECK(svg.find("1 seed") != std::string::npos);
}

TEST_CASE("emit_curves is byte-stable") {
  const auto dir = testing::temp_dir("report_emit");
  std::vector<CurveSet> curves = {curve_from_aggregate(make_aggregate("a", {0.5, 0.6})),
                                  curve_from_aggregate(make_aggregate("b/c", {0.55, 0.65}))};
  emit_curves(curves, dir, "fig");
  const auto first = read_text(dir / "fig.csv");
  emit_curves(curves, dir, "fig");
  CHECK(read_text(dir / "fig.csv") == first);
  CHECK(fs::exists(dir / "fig_a.csv"));
  CHECK(fs::exists(dir / "fig_b_c.csv"));
  CHECK(fs::exists(dir / "fig.svg"));
  CHECK_THROWS_AS(emit_curves({}, dir, "none"), AggregationError);
}

TEST_CASE("time_sampling") {
  const auto ds = testing::blobs(3, 40, 2, 5);
  Rng rng(3);
  ModelSpec spec;
  spec.input_shape = ds.shape;
  spec.z_dim = 2;
  spec.num_classes = 3;
  spec.encoder.hidden = {8};
  auto model = VnnModel::create(spec, rng);
  const auto all = testing::pointers(ds.train_records);
  std::vector<const SampleRecord*> labeled(all.begin(), all.begin() + 60);
  std::vector<const SampleRecord*> unlabeled(all.begin() + 60, all.end());
  std::vector<ClassIndex> labels;
  // Labels equal to the model's own predictions make every labeled sample "correct".
  for (int p : predict(model, labeled)) labels.push_back(p);

  const auto t = time_sampling(Strategy::uncertainty, model, unlabeled, labeled, labels, 5, 3);
  CHECK(t.seconds.size() == 3);
  CHECK(t.pool_size == 60);
  double sum = 0;
  for (double s : t.seconds) sum += s;
  CHECK(t.mean_seconds == doctest::Approx(sum / 3));
  CHECK(t.std_seconds >= 0.0);
  CHECK_NOTHROW(time_sampling(Strategy::random, model, unlabeled, labeled, labels, 5, 4));
  CHECK_THROWS_AS(time_sampling(Strategy::uncertainty, model, {}, labeled, labels, 5, 3), EmptyPoolError);
  CHECK_THROWS_AS(time_sampling(Strategy::uncertainty, model, unlabeled, labeled, labels, 5, 2), ContractError);
  const auto csv = timing_csv({t});
  CHECK(csv.rfind("strategy,pool_size,mean_seconds,std_seconds,repetitions\nuncertainty,60,", 0) == 0);
}

TEST_CASE("load_curve over run directories") {
  ExperimentConfig c;
  c.name = "curve";
  BlobConfig b;
  b.classes = 3;
  b.n_per_class = 30;
  b.eval_per_class = 10;
  c.dataset.blobs = b;
  c.z_dim = 2;
  c.encoder.hidden = {8};
  c.budget.schedule = {15, 25};
  c.train.epochs_per_stage = 2;
  const auto root = testing::temp_dir("report_curve");
  run_seeds(c, root, {0, 1});
  const auto curve = load_curve(root);
  CHECK(curve.n_seeds == 2);
  CHECK(curve.labeled == std::vector<double>{15, 25});
  CHECK(curve.fraction[0] == doctest::Approx(15.0 / 90.0));
  CHECK_THROWS_AS(load_curve(root / "nothing"), AggregationError);
}
