#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mcnet/configfile.hpp"

using namespace mcnet;

TEST_CASE("config parsing: sections, values, comments, quotes, lists") {
  std::string text = R"(
# top comment
[model]
preprocessing = "learned_dn"   # inline comment
depth = 6
kernel_set = [1, 3, 5]
attention = true

[train]
lr = 1e-3
batch_pairs = 10
dn_target = residual
)";
  ConfigFile cf = ConfigFile::parse(text, "test.toml");
  CHECK(cf.get_string("model", "preprocessing", "") == "learned_dn");
  CHECK(cf.get_int("model", "depth", 0) == 6);
  CHECK(cf.get_int_list("model", "kernel_set", {}) == std::vector<int>{1, 3, 5});
  CHECK(cf.get_bool("model", "attention", false));
  CHECK(cf.get_double("train", "lr", 0) == doctest::Approx(1e-3));
  CHECK(cf.get_string("train", "dn_target", "") == "residual");
  CHECK(cf.get_int("train", "missing", 41) == 41);  // fallback
}

TEST_CASE("config parsing errors carry file:line positions") {
  CHECK_THROWS_WITH_AS(ConfigFile::parse("[model]\ndepth 6\n", "bad.toml"),
                       doctest::Contains("bad.toml:2"), UsageError);
  CHECK_THROWS_WITH_AS(ConfigFile::parse("depth = 6\n", "bad.toml"),
                       doctest::Contains("outside any [section]"), UsageError);
  CHECK_THROWS_WITH_AS(ConfigFile::parse("[model\n", "bad.toml"),
                       doctest::Contains("bad.toml:1"), UsageError);

  ConfigFile cf = ConfigFile::parse("[model]\ndepth = six\n", "bad.toml");
  CHECK_THROWS_WITH_AS(cf.get_int("model", "depth", 0), doctest::Contains("bad.toml:2"),
                       UsageError);
}

TEST_CASE("model and schedule sections apply over profile bases") {
  std::string text = R"(
[model]
preprocessing = srm
depth = 4
kernel_set = [3, 5]
branch_width = 16
attention = false

[train]
epochs = 12
batch_pairs = 4
seed = 99
end_to_end = true
)";
  ConfigFile cf = ConfigFile::parse(text);
  ModelConfig m = model_config_from(cf, ModelConfig::desk());
  CHECK(m.preprocessing == Preproc::srm);
  CHECK(m.depth == 4);
  CHECK(m.kernel_set == std::vector<int>{3, 5});
  CHECK(m.branch_width == 16);
  CHECK(m.input_size == 64);  // desk base survives
  CHECK(!m.attention);

  TrainSchedule s = schedule_from(cf, "train", TrainSchedule::mcnet_defaults());
  CHECK(s.epochs == 12);
  CHECK(s.batch_pairs == 4);
  CHECK(s.seed == 99);
  CHECK(s.end_to_end);
  CHECK(s.lr == doctest::Approx(1e-3));  // default survives

  CHECK_THROWS_WITH_AS(model_config_from(ConfigFile::parse("[model]\nnope = 1\n"), ModelConfig()),
                       doctest::Contains("unknown model key"), UsageError);
}

TEST_CASE("ablation grids: ordered axes and dotted overrides") {
  std::string text = R"(
[grid]
model.depth = [2, 6]
model.preprocessing = [none, srm]
train.seed = [1]
)";
  ConfigFile cf = ConfigFile::parse(text);
  auto axes = grid_axes(cf);
  REQUIRE(axes.size() == 3);
  CHECK(axes[0].key == "model.depth");
  CHECK(axes[0].values == std::vector<std::string>{"2", "6"});
  CHECK(axes[1].values == std::vector<std::string>{"none", "srm"});

  ModelConfig m;
  TrainSchedule s;
  apply_override(m, s, "model.depth", "2");
  apply_override(m, s, "train.epochs", "7");
  CHECK(m.depth == 2);
  CHECK(s.epochs == 7);
  CHECK_THROWS_AS(apply_override(m, s, "bogus.depth", "2"), UsageError);
  CHECK_THROWS_AS(apply_override(m, s, "model.bogus", "2"), UsageError);

  CHECK_THROWS_WITH_AS(grid_axes(ConfigFile::parse("[grid]\nmodel.depth = []\n")),
                       doctest::Contains("empty grid axis"), UsageError);
}
