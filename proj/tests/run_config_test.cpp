#include <gtest/gtest.h>

#include "wdis/error.hpp"
#include "wdis/run_config.hpp"

namespace wdis {
namespace {

ErrorCode code_of(std::string_view text, std::string* message = nullptr) {
  try {
    parse_config(text);
  } catch (const Error& e) {
    if (message) *message = e.what();
    return e.code();
  }
  ADD_FAILURE() << "accepted: " << text;
  return ErrorCode::kIo;
}

TEST(RunConfig, EmptyObjectGivesDefaults) {
  const RunConfig c = parse_config("{}");
  EXPECT_EQ(c.model.k_fg, 16u);
  EXPECT_EQ(c.model.k_bg, 8u);
  EXPECT_EQ(c.model.d_x, 32u);
  EXPECT_EQ(c.model.d_z, 24u);
  EXPECT_EQ(c.model.split, 16u);
  EXPECT_EQ(c.train.lambda, 10.0);
  EXPECT_EQ(c.train.alpha, 1.0);
  EXPECT_EQ(c.train.critic_ratio, 5u);
  EXPECT_EQ(c.train.adam.lr, 1e-4);
  EXPECT_EQ(c.train.adam.beta1, 0.0);
  EXPECT_EQ(c.train.adam.beta2, 0.9);
  EXPECT_EQ(c.train.batch, 64u);
  EXPECT_EQ(c.train.iterations, 5000u);
  EXPECT_EQ(c.guides.strength, 0.9);
  EXPECT_EQ(c.guides.backgrounds.size(), 10u);
}

TEST(RunConfig, SeedPropagates) {
  const RunConfig c = parse_config(R"({"seed": 77})");
  EXPECT_EQ(c.train.seed, 77u);
  EXPECT_EQ(c.probe.seed, 77u);
  EXPECT_EQ(c.factor_spec().seed, 77u);
}

TEST(RunConfig, MisspelledKeyIsUnknown) {
  std::string msg;
  EXPECT_EQ(code_of(R"({"train": {"lamda": 5}})", &msg), ErrorCode::kConfigUnknownKey);
  EXPECT_NE(msg.find("lamda"), std::string::npos);
  EXPECT_NE(msg.find("train"), std::string::npos);
  EXPECT_EQ(code_of(R"({"sed": 1})"), ErrorCode::kConfigUnknownKey);
}

TEST(RunConfig, InvalidValuesNameTheField) {
  std::string msg;
  EXPECT_EQ(code_of(R"({"train": {"beta1": 1.0}})", &msg), ErrorCode::kConfigInvalid);
  EXPECT_NE(msg.find("beta1"), std::string::npos);
  EXPECT_EQ(code_of(R"({"train": {"lr": "fast"}})", &msg), ErrorCode::kConfigInvalid);
  EXPECT_NE(msg.find("train.lr"), std::string::npos);
  EXPECT_EQ(code_of(R"({"model": {"split": 24}})"), ErrorCode::kConfigInvalid);
  EXPECT_EQ(code_of(R"({"model": {"k_fg": -3}})"), ErrorCode::kConfigInvalid);
  EXPECT_EQ(code_of(R"({"train": {"objective": "gan"}})"), ErrorCode::kConfigInvalid);
  EXPECT_EQ(code_of(R"({"guides": {"strength": 1.5}})"), ErrorCode::kConfigInvalid);
  EXPECT_EQ(code_of(R"({"guides": {"scale_min": 0.2}})"), ErrorCode::kConfigInvalid);
  EXPECT_EQ(code_of(R"({"data": {"corr_pairs": 9}})"), ErrorCode::kConfigInvalid);
  EXPECT_EQ(code_of("[1, 2]"), ErrorCode::kConfigInvalid);
  EXPECT_EQ(code_of("{"), ErrorCode::kConfigInvalid);
}

TEST(RunConfig, JsonRoundTrip) {
  const RunConfig a = parse_config(
      R"({"seed": 5, "model": {"trunk_widths": [10, 12], "d_z": 6, "split": 2},
          "train": {"alpha": 0.25, "objective": "baseline", "product_mode": "independent"},
          "data": {"missing_bg_fraction": 0.3}, "guides": {"manifest": "m.json"}})");
  const std::string text = config_to_json(a, 2);
  const RunConfig b = parse_config(text);
  EXPECT_EQ(config_to_json(b, 2), text);
  EXPECT_EQ(b.model.trunk_widths, (std::vector<std::size_t>{10, 12}));
  EXPECT_EQ(b.train.objective, Objective::kBaseline);
  EXPECT_EQ(b.train.product_mode, ProductMode::kIndependent);
  EXPECT_EQ(b.data.missing_bg_fraction, 0.3);
  EXPECT_EQ(b.guides.manifest, "m.json");
}

TEST(RunConfig, CorrPairingIsTruncated) {
  const RunConfig c = parse_config(R"({"data": {"corr_pairs": 3}})");
  EXPECT_EQ(c.corr_pairing().size(), 3u);
}

}  // namespace
}  // namespace wdis
