#include <fstream>

#include "doctest.h"
#include "osal/binary_io.hpp"
#include "osal/config.hpp"
#include "osal/errors.hpp"
#include "support.hpp"

using namespace osal;
namespace fs = std::filesystem;

namespace {

const char* kMinimal = R"({
  "name": "tiny",
  "dataset": {"format": "synthetic_blobs", "blobs": {"classes": 4, "n_per_class": 50}}
})";

std::string error_of(const std::string& text, const std::vector<std::string>& overrides = {}) {
  try {
    parse_config(apply_overrides(text, overrides));
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

bool contains(const std::string& haystack, const std::string& needle) {
  return haystack.find(needle) != std::string::npos;
}

}  // namespace

TEST_CASE("defaults") {
  const auto c = parse_config(kMinimal);
  CHECK(c.name == "tiny");
  CHECK(c.z_dim == 60);
  CHECK(c.max_labeled_fraction == doctest::Approx(0.4));
  CHECK(c.seeds.size() == 5);
  CHECK(c.train.batch_size == 128);
  CHECK(c.train.learning_rate == doctest::Approx(1e-3));
  CHECK(c.train.weight_decay == doctest::Approx(1e-5));
  CHECK(c.loss.beta == doctest::Approx(1.0));
  CHECK(c.loss.mc_samples == 1);
  CHECK(c.warm_start);
  REQUIRE(c.dataset.blobs);
  CHECK(c.dataset.blobs->classes == 4);
  CHECK(!c.ood);
}

TEST_CASE("budget forms") {
  SUBCASE("sugar") {
    const auto c = parse_config(apply_overrides(kMinimal, {R"(budget={"initial":20,"per_stage":10,"stages":3})"}));
    CHECK(c.budget.schedule == std::vector<double>{20, 30, 40});
    CHECK(c.budget.resolve(200) == std::vector<std::size_t>{20, 30, 40});
  }
  SUBCASE("percent") {
    const auto c = parse_config(apply_overrides(
        kMinimal, {R"(budget={"unit":"percent","schedule":[10,15,20,25,30,35,40]})"}));
    const auto counts = c.budget.resolve(50000);
    REQUIRE(counts.size() == 7);
    CHECK(counts.front() == 5000);
    CHECK(counts.back() == 20000);
  }
  SUBCASE("resolve rejects targets beyond the pool") {
    BudgetSpec b;
    b.schedule = {10, 100};
    CHECK_THROWS_AS(b.resolve(100), ConfigError);
  }
}

TEST_CASE("validation names the field") {
  CHECK(contains(error_of(kMinimal, {"max_labeled_fraction=1.5"}), "max_labeled_fraction"));
  CHECK(contains(error_of(kMinimal, {"max_labeled_fraction=0"}), "max_labeled_fraction"));
  CHECK(contains(error_of(kMinimal, {"budget.schedule=[100,50]"}), "budget.schedule"));
  CHECK(contains(error_of(kMinimal, {"budget.schedule=[0,50]"}), "budget.schedule"));
  CHECK(contains(error_of(kMinimal, {"oracle.noise_rate=1.2"}), "oracle.noise_rate"));
  CHECK(contains(error_of(kMinimal, {"seeds=[1,1]"}), "seeds"));
  CHECK(contains(error_of(kMinimal, {"seeds=[]"}), "seeds"));
  CHECK(contains(error_of(kMinimal, {"sampling.reject_threshold=0"}), "sampling.reject_threshold"));
  CHECK(contains(error_of(kMinimal, {"train.batch_size=0"}), "train.batch_size"));
  CHECK(contains(error_of(kMinimal, {"loss.mc_samples=0"}), "loss.mc_samples"));
  CHECK(contains(error_of(kMinimal, {"z_dim=\"wide\""}), "z_dim"));
  CHECK(contains(error_of(kMinimal, {"strategy=entropy"}), "strategy"));
  CHECK(contains(error_of(kMinimal, {"train.learnin_rate=0.1"}), "train.learnin_rate"));
  CHECK(contains(error_of(kMinimal, {"bogus=1"}), "unknown key"));
  CHECK(contains(error_of(R"({"name":"x"})"), "dataset"));
}

TEST_CASE("parse errors report line and column") {
  const std::string bad = "{\n  \"name\": \"x\",\n  \"z_dim\": ,\n}";
  const auto msg = error_of(bad);
  CHECK(contains(msg, "line 3"));
  CHECK(contains(msg, "column"));
}

TEST_CASE("overrides") {
  const auto text = apply_overrides(kMinimal, {"strategy=weibull", "train.epochs_per_stage=3",
                                               "oracle.kind=noisy", "oracle.noise_rate=0.3",
                                               "seeds=[7]"});
  const auto c = parse_config(text);
  CHECK(c.strategy == Strategy::weibull);
  CHECK(c.train.epochs_per_stage == 3);
  CHECK(c.oracle.kind == OracleKind::noisy);
  CHECK(c.oracle.noise_rate == doctest::Approx(0.3));
  CHECK(c.seeds == std::vector<std::uint64_t>{7});
  CHECK_THROWS_AS(apply_overrides(kMinimal, {"novalue"}), ConfigError);
  CHECK_THROWS_AS(apply_overrides(kMinimal, {"name.inner=1"}), ConfigError);
  const auto cleared = parse_config(apply_overrides(kMinimal, {"biased_pool.excluded_classes=[1]", "biased_pool=null"}));
  CHECK(cleared.excluded_initial_classes.empty());
}

TEST_CASE("round trip through JSON") {
  const auto c = parse_config(apply_overrides(
      kMinimal, {"variant=m2", "strategy=random", "encoder.kind=lenet", "oracle.superclass_map={\"0\":0,\"1\":0}",
                 "biased_pool.excluded_classes=[0,1]",
                 R"(ood={"dataset":{"format":"synthetic_blobs","blobs":{"classes":2,"n_per_class":5,"offset":[10,10]}},"fraction":0.2})"}));
  const auto again = parse_config(config_to_json(c));
  CHECK(config_to_json(again) == config_to_json(c));
  CHECK(again.variant == Variant::m2);
  CHECK(again.encoder.kind == EncoderSpec::Kind::lenet);
  CHECK(again.oracle.superclass_map.size() == 2);
  CHECK(again.excluded_initial_classes == std::set<ClassIndex>{0, 1});
  REQUIRE(again.ood);
  CHECK(again.ood->dataset.blobs->offset == std::vector<double>{10, 10});
}

TEST_CASE("relative paths resolve against the config file") {
  const auto dir = testing::temp_dir("config_paths");
  fs::create_directories(dir / "sub");
  write_text_atomic(dir / "sub" / "exp.json",
                    R"({"dataset":{"format":"idx","path":"../data"},"seeds":[1]})");
  const auto c = load_config(dir / "sub" / "exp.json");
  CHECK(c.dataset.path == fs::weakly_canonical(dir / "data"));
  CHECK_THROWS_AS(load_config(dir / "missing.json"), ConfigError);
}

TEST_CASE("bundled MNIST subset through a dataset spec") {
  DatasetSpec spec{DatasetFormat::idx, fs::path(OSAL_SOURCE_DIR) / "data" / "mnist5k", std::nullopt};
  const auto ds = load_dataset(spec);
  CHECK(ds.num_classes == 10);
  CHECK(ds.train_size() == 4000);
}
