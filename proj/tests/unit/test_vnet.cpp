#include <bit>
#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "voxelseg/error.hpp"
#include "voxelseg/overlap.hpp"
#include "voxelseg/trainer.hpp"
#include "voxelseg/vnet.hpp"

using namespace voxelseg;
using namespace voxelseg::vnet;
using ad::Tensor;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected a voxelseg::Error");
  return ErrorCode::IoError;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::bit_cast<std::uint64_t>(a.data()[i]) != std::bit_cast<std::uint64_t>(b.data()[i])) return false;
  return true;
}

Tensor random_input(RngStream& rng, std::size_t n, std::size_t e) {
  return Tensor({n, 1, e, e, e}, oracle::random_values(rng, n * e * e * e, -2, 2));
}

std::size_t conv_params(std::size_t out, std::size_t in, std::size_t taps) { return out * in * taps + out; }

}  // namespace

TEST_CASE("default parameter count matches a hand count") {
  RngStream rng(1);
  const Model m = Model::build({}, rng);
  // Channels 8/16/32, two 3^3 convs per stage, PReLU slope per activation.
  std::size_t n = 0;
  n += conv_params(8, 1, 27) + conv_params(8, 8, 27) + 2 + conv_params(8, 1, 1);  // enc0 + projection
  n += conv_params(16, 8, 8) + 1;                                                  // down 0->1
  n += conv_params(16, 16, 27) * 2 + 2;                                            // enc1
  n += conv_params(32, 16, 8) + 1;                                                 // down 1->2
  n += conv_params(32, 32, 27) * 2 + 2;                                            // enc2
  n += 32 * 16 * 8 + 16 + 1 + conv_params(16, 32, 27) + conv_params(16, 16, 27) + 2;  // dec1
  n += 16 * 8 * 8 + 8 + 1 + conv_params(8, 16, 27) + conv_params(8, 8, 27) + 2;       // dec0
  n += conv_params(1, 8, 1);                                                          // head
  CHECK(m.parameter_count() == n);
  CHECK(n == 107495);
}

TEST_CASE("build is deterministic and validates its config") {
  RngStream a(5), b(5);
  const auto pa = Model::build({}, a).parameters();
  const auto pb = Model::build({}, b).parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    CHECK(bitwise_equal(pa[i].tensor, pb[i].tensor));
  }
  RngStream rng(0);
  CHECK(code_of([&] { Model::build({1, {8}}, rng); }) == ErrorCode::InvalidConfig);
  CHECK(code_of([&] { Model::build({1, {8, 0}}, rng); }) == ErrorCode::InvalidConfig);
  VNetConfig even;
  even.kernel = {2, 2, 2};
  CHECK(code_of([&] { Model::build(even, rng); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("initial weights follow the fan-in scale") {
  RngStream rng(2);
  const Model m = Model::build({}, rng);
  for (const auto& p : m.parameters()) {
    if (p.name != "enc2.conv1.weight") continue;
    double s2 = 0;
    for (double v : p.tensor.data()) s2 += v * v;
    const double var = s2 / double(p.tensor.size());
    CHECK(var == doctest::Approx(1.0 / (32 * 27)).epsilon(0.05));
  }
}

TEST_CASE("forward shape, range and determinism") {
  RngStream rng(3);
  const Model m = Model::build({}, rng);
  const Tensor x = random_input(rng, 1, 32);
  const Tensor y = m.forward(x);
  CHECK(y.shape() == ad::Shape{1, 1, 32, 32, 32});
  for (double v : y.data()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  CHECK(bitwise_equal(y, m.forward(x)));
  CHECK(code_of([&] { m.forward(random_input(rng, 1, 10)); }) == ErrorCode::ShapeMismatch);
  CHECK(code_of([&] { m.forward(Tensor::zeros({1, 2, 8, 8, 8})); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("bottleneck is an eighth of a 32 patch") {
  RngStream rng(4);
  Model m = Model::build({}, rng);
  const Tensor x = random_input(rng, 1, 32);
  const auto& enc = m.encoder();
  Tensor h = x;
  for (std::size_t s = 0; s < enc.size(); ++s) {
    h = m.encoder_stage_output(s, h);
    if (enc[s].has_down) h = ad::conv3d_down(h, enc[s].down.weight, enc[s].down.bias);
  }
  CHECK(h.shape() == ad::Shape{1, 32, 8, 8, 8});
}

TEST_CASE("zeroed head gives one half everywhere") {
  RngStream rng(5);
  Model m = Model::build({}, rng);
  for (double& v : m.head().weight.mutable_data()) v = 0.0;
  for (double& v : m.head().bias.mutable_data()) v = 0.0;
  const Tensor y = m.forward(random_input(rng, 2, 16));
  for (double v : y.data()) CHECK(v == 0.5);
}

TEST_CASE("zeroed stage convolutions make the stage an identity") {
  RngStream rng(6);
  for (auto nl : {Nonlinearity::PReLU, Nonlinearity::ReLU}) {
    VNetConfig cfg;
    cfg.nonlinearity = nl;
    Model m = Model::build(cfg, rng);
    EncoderStage& st = m.encoder()[1];
    for (auto& c : st.convs) {
      for (double& v : c.weight.mutable_data()) v = 0.0;
      for (double& v : c.bias.mutable_data()) v = 0.0;
    }
    const Tensor x({1, 16, 8, 8, 8}, oracle::random_values(rng, 16 * 512));
    CHECK(bitwise_equal(m.encoder_stage_output(1, x), x));
  }
}

TEST_CASE("checkpoint round trip is bit exact") {
  RngStream rng(7);
  VNetConfig cfg;
  cfg.nonlinearity = Nonlinearity::ReLU;
  cfg.stage_channels = {4, 6, 5};
  cfg.kernel = {3, 1, 5};
  const Model m = Model::build(cfg, rng);
  const auto bytes = save(m);
  CHECK(std::memcmp(bytes.data(), "VNCK", 4) == 0);
  const Model r = load(bytes);
  CHECK(r.config() == cfg);
  const auto a = m.parameters(), b = r.parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(bitwise_equal(a[i].tensor, b[i].tensor));
  const Tensor x = random_input(rng, 1, 8);
  CHECK(bitwise_equal(m.forward(x), r.forward(x)));
  CHECK(save(r) == bytes);
}

TEST_CASE("checkpoint corruption is typed") {
  RngStream rng(8);
  const auto good = save(Model::build({1, {2, 3}}, rng));

  auto bad = good;
  bad[0] = 'X';
  CHECK(code_of([&] { load(bad); }) == ErrorCode::BadMagic);

  bad = good;
  bad[4] = 2;
  CHECK(code_of([&] { load(bad); }) == ErrorCode::VersionMismatch);

  bad = good;
  bad.resize(bad.size() - 9);
  CHECK(code_of([&] { load(bad); }) == ErrorCode::ManifestCorrupt);

  bad = good;
  bad[20] = '}';
  CHECK(code_of([&] { load(bad); }) == ErrorCode::ManifestCorrupt);

  bad = std::vector<std::uint8_t>(good.begin(), good.begin() + 12);
  CHECK(code_of([&] { load(bad); }) == ErrorCode::ManifestCorrupt);
}

TEST_CASE("config JSON round trip and strictness") {
  VNetConfig cfg;
  cfg.stage_channels = {4, 8};
  cfg.convs_per_stage = 3;
  CHECK(config_from_json(config_to_json(cfg)) == cfg);
  CHECK(config_from_json(R"({"kernel": 5})").kernel == ad::Triple{5, 5, 5});
  CHECK(code_of([] { config_from_json(R"({"stages": 3})"); }) == ErrorCode::InvalidConfig);
  CHECK(code_of([] { config_from_json(R"({"nonlinearity": "tanh"})"); }) == ErrorCode::InvalidConfig);
  CHECK(code_of([] { config_from_json("not json"); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("end-to-end parameter gradients of a two-stage model") {
  RngStream rng(9);
  VNetConfig cfg;
  cfg.stage_channels = {2, 4};
  Model m = Model::build(cfg, rng);
  // Nudge slopes and biases off their initial values so every path is exercised.
  for (auto& p : m.parameters())
    if (p.name.find("bias") != std::string::npos || p.name.find("slope") != std::string::npos)
      for (double& v : p.tensor.mutable_data()) v += rng.uniform(-0.2, 0.2);

  const Tensor x = random_input(rng, 1, 8);
  std::vector<double> truth(512);
  for (double& g : truth) g = rng.uniform() < 0.3 ? 1.0 : 0.0;
  auto loss = [&] { return overlap::soft_loss(m.forward(x).data(), truth, overlap::LossKind::Dice); };

  m.zero_grad();
  trainer::overlap_loss(m.forward(x), truth, overlap::LossKind::Dice).backward();
  double worst = 0;
  for (auto& p : m.parameters()) {
    Tensor t = p.tensor;
    REQUIRE(t.has_grad());
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    const auto numeric = oracle::numeric_grad(loss, t.mutable_data());
    const double e = oracle::max_rel_err(analytic, numeric);
    CAPTURE(p.name);
    CHECK(e < 1e-3);
    worst = std::max(worst, e);
  }
  MESSAGE("worst relative error " << worst);
}
