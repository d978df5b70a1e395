#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "seamforge/checkpoint.hpp"
#include "seamforge/data.hpp"

using namespace seamforge;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("seamforge_ckpt_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Matrix<float> probe(int n, int d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Matrix<float> x(n, d);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = u(rng);
  return x;
}

}  // namespace

TEST(Checkpoint, MlpRoundTripIsExact) {
  const auto dir = scratch("mlp");
  const auto net = build_network<float>({8, 8, 1}, mlp_specs({32, 16}, 10), 10, 3);
  save_checkpoint(net, dir / "m.json");
  const auto back = load_checkpoint(dir / "m.json");
  EXPECT_EQ(back.flatten_weights(), net.flatten_weights());
  const auto x = probe(17, 64, 1);
  EXPECT_EQ((forward(back, x) - forward(net, x)).cwiseAbs().maxCoeff(), 0.0f);
}

TEST(Checkpoint, CnnRoundTripIsExact) {
  const auto dir = scratch("cnn");
  const auto net = build_network<float>({6, 7, 2}, small_cnn_specs(4, 3, 5), 5, 8);
  save_checkpoint(net, dir / "c.json");
  const auto back = load_checkpoint(dir / "c.json");
  EXPECT_EQ(back.specs(), net.specs());
  EXPECT_EQ(back.input_shape(), net.input_shape());
  const auto x = probe(5, 84, 2);
  EXPECT_EQ((forward(back, x) - forward(net, x)).cwiseAbs().maxCoeff(), 0.0f);
}

TEST(Checkpoint, AwkwardFloatsSurvive) {
  auto net = build_network<float>(Shape::features(3), mlp_specs({}, 2), 2, 1);
  Vector<float> w(net.param_count());
  const float vals[] = {1e-38f, -3.4028235e38f, 0.1f, 1.0f / 3.0f, 16777217.0f, -0.0f, 7.006492e-45f, 2.5f};
  for (Eigen::Index i = 0; i < w.size(); ++i) w[i] = vals[i % 8];
  net.unflatten_weights(w);
  const auto back = checkpoint_from_json(nlohmann::json::parse(checkpoint_to_json(net).dump()));
  const auto wb = back.flatten_weights();
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    EXPECT_EQ(std::memcmp(&wb[i], &w[i], sizeof(float)), 0) << "param " << i;
  }
}

TEST(Checkpoint, TrainingWithSameSeedGivesIdenticalBytes) {
  const auto dir = scratch("determinism");
  const auto data = synth_images({}, 20, 4);
  TrainConfig cfg;
  cfg.max_epochs = 3;
  cfg.seed = 99;
  for (int run = 0; run < 2; ++run) {
    auto net = build_network<float>({8, 8, 1}, mlp_specs({16}, 10), 10, 5);
    save_checkpoint(sgd_train(std::move(net), data, cfg).network, dir / ("r" + std::to_string(run)));
  }
  EXPECT_EQ(slurp(dir / "r0"), slurp(dir / "r1"));
}

TEST(Checkpoint, TruncatedFileIsRejected) {
  const auto dir = scratch("trunc");
  const auto net = build_network<float>(Shape::features(4), mlp_specs({5}, 3), 3, 1);
  save_checkpoint(net, dir / "full");
  const auto text = slurp(dir / "full");
  std::ofstream(dir / "half") << text.substr(0, text.size() / 2);
  EXPECT_THROW(load_checkpoint(dir / "half"), FormatError);
  EXPECT_THROW(load_checkpoint(dir / "missing"), FormatError);
}

TEST(Checkpoint, UnknownVersionIsAVersionError) {
  const auto net = build_network<float>(Shape::features(4), mlp_specs({5}, 3), 3, 1);
  auto j = checkpoint_to_json(net);
  j["version"] = 2;
  try {
    checkpoint_from_json(j);
    FAIL() << "expected a version error";
  } catch (const VersionError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
}

TEST(Checkpoint, InconsistentContentIsRejected) {
  const auto net = build_network<float>(Shape::features(4), mlp_specs({5}, 3), 3, 1);
  auto j = checkpoint_to_json(net);
  j["params"][1].erase(0);
  EXPECT_THROW(checkpoint_from_json(j), FormatError);

  j = checkpoint_to_json(net);
  j["arch"][1]["in"] = 7;
  EXPECT_THROW(checkpoint_from_json(j), FormatError);

  j = checkpoint_to_json(net);
  j["arch"][2]["type"] = "tanh";
  EXPECT_THROW(checkpoint_from_json(j), FormatError);
}
