#include "fracsim/config.hpp"
#include "fracsim/errors.hpp"

#include <gtest/gtest.h>

#include <string>

using fracsim::ConfigError;
using fracsim::RunConfig;
using fracsim::TaskKind;
using nlohmann::json;

namespace {

std::string config_error(const json& doc) {
  try {
    fracsim::parse_config(doc).validate();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(Config, UnknownFieldIsNamed) {
  const std::string msg = config_error(json{{"train", {{"epochs_flaot", 3}}}});
  EXPECT_NE(msg.find("train.epochs_flaot"), std::string::npos) << msg;
  EXPECT_NE(config_error(json{{"colour", "red"}}).find("colour"), std::string::npos);
}

TEST(Config, WrongTypeIsNamed) {
  const std::string msg = config_error(json{{"quant", {{"bits", "eight"}}}});
  EXPECT_NE(msg.find("quant.bits"), std::string::npos) << msg;
  EXPECT_NE(config_error(json{{"size", {{"include_bias", 1.5}}}}).find("size.include_bias"), std::string::npos);
  EXPECT_NE(config_error(json{{"model", 3}}).find("model"), std::string::npos);
}

TEST(Config, OutOfRangeValuesAreNamed) {
  EXPECT_NE(config_error(json{{"quant", {{"bits", 9}}}}).find("quant.bits"), std::string::npos);
  EXPECT_NE(config_error(json{{"quant", {{"mode", "ternary"}}}}).find("quant.mode"), std::string::npos);
  EXPECT_NE(config_error(json{{"task", "audio"}}).find("task"), std::string::npos);
  EXPECT_NE(config_error(json{{"seed", -1}}).find("seed"), std::string::npos);
  EXPECT_NE(config_error(json{{"size", {{"beta", -0.1}}}}).find("size.beta"), std::string::npos);
  EXPECT_NE(config_error(json{{"task", "fewshot"}, {"dataset", {{"num_classes", 6}}}}).find("dataset.num_classes"),
            std::string::npos);
  EXPECT_NE(config_error(json{{"dataset", {{"samples_per_class", 20}}}}).find("eval.samples_per_round"), std::string::npos);
}

TEST(Config, DefaultsDependOnTask) {
  const RunConfig generic = fracsim::parse_config(json::object());
  EXPECT_EQ(generic.task, TaskKind::Generic);
  EXPECT_NO_THROW(generic.validate());
  const RunConfig fewshot = fracsim::parse_config(json{{"task", "fewshot"}});
  EXPECT_GE(fewshot.dataset.num_classes, fewshot.episode.n_way);
  EXPECT_NO_THROW(fewshot.validate());
}

TEST(Config, JsonRoundTripIsExact) {
  RunConfig cfg = fracsim::default_config(TaskKind::FewShot);
  cfg.seed = 12345678901234ULL;
  cfg.dataset_seed = 99;
  cfg.quant.mode = fracsim::QuantKind::FracBits;
  cfg.quant.target_bytes = 4321.5;
  cfg.train.bit_lr = 0.0375;
  cfg.size.include_bias = false;
  cfg.accel.clock_hz = 1.25e8;
  const json doc = fracsim::config_to_json(cfg);
  const RunConfig back = fracsim::parse_config(doc);
  EXPECT_EQ(fracsim::config_to_json(back), doc);
  EXPECT_EQ(back.seed, cfg.seed);
  EXPECT_EQ(back.dataset_seed, cfg.dataset_seed);
  EXPECT_EQ(back.quant.target_bytes, cfg.quant.target_bytes);
}

TEST(Config, TargetResolvesFromFractionOrBytes) {
  RunConfig cfg = fracsim::default_config(TaskKind::Generic);
  const auto spec = fracsim::build_model(cfg);
  cfg.quant.target_fraction = 0.5;
  EXPECT_DOUBLE_EQ(fracsim::resolved_target_bytes(cfg, spec), 5520.0);  // half of 11040 B
  cfg.quant.target_bytes = 7000.0;
  EXPECT_DOUBLE_EQ(fracsim::resolved_target_bytes(cfg, spec), 7000.0);
}

TEST(Config, DatasetSeedIsDerivedUnlessGiven) {
  RunConfig a = fracsim::default_config(TaskKind::Generic);
  RunConfig b = a;
  b.seed = a.seed + 1;
  EXPECT_NE(fracsim::resolved_dataset(a).seed, fracsim::resolved_dataset(b).seed);
  a.dataset_seed = b.dataset_seed = 5;
  EXPECT_EQ(fracsim::resolved_dataset(a).seed, 5u);
  EXPECT_EQ(fracsim::resolved_dataset(b).seed, 5u);
}
