#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "nowcast/checkpoint.hpp"
#include "nowcast/network.hpp"
#include "oracles.hpp"

using namespace nowcast;
using namespace nowcast::testing;

namespace {

GridSequence tiny_sequence(int rows, int cols, int hours, std::uint32_t seed = 1) {
  SyntheticParams p;
  p.rows = rows;
  p.cols = cols;
  p.hours = hours;
  p.cloud_count = 2;
  p.blob_sigma = 3.0;
  return generate_synthetic(p, seed);
}

template <class S>
void zero_all(NowcastModel<S>& m) {
  for (auto& ref : model_state_tensors(m)) ref.tensor->array().setZero();
}

}  // namespace

TEST_CASE("assemble_input: one-hot broadcast planes") {
  auto seq = tiny_sequence(8, 8, 30);
  auto windows = build_windows(seq);
  REQUIRE(!windows.empty());
  // pick the window whose prediction instant is 00:xx is not possible within
  // one day starting at midnight + 2; use the first window and check against
  // its own features instead of fixed channels
  const auto& w = windows[0];
  auto x = assemble_input<float>(w, {1200.f, true});
  CHECK(x.shape() == Shape{3, 37, 8, 8});
  const Eigen::Index plane = 64;
  for (int f = 0; f < 36; ++f) {
    for (int t = 0; t < 3; ++t) {
      Eigen::Map<const ArrayX<float>> ch(x.data() + (Eigen::Index(t) * 37 + f + 1) * plane, plane);
      CHECK(ch.minCoeff() == ch.maxCoeff());                  // constant plane
      CHECK(ch[0] == w.time_features[size_t(f)]);             // matches the one-hot
    }
    // time-invariant across the 3 steps
    CHECK(x(0, f + 1, 0, 0) == x(2, f + 1, 0, 0));
  }
  // DSR channel normalized into [0,1]
  for (int t = 0; t < 3; ++t) {
    Eigen::Map<const ArrayX<float>> dsr(x.data() + Eigen::Index(t) * 37 * plane, plane);
    CHECK(dsr.minCoeff() >= 0.f);
    CHECK(dsr.maxCoeff() <= 1.f);
  }
}

TEST_CASE("batchnorm: train-mode statistics and running averages") {
  std::mt19937 rng(1);
  auto x = random_tensor<float>({2, 3, 4, 5, 5}, rng, -3.f, 7.f);
  auto p = BatchNormParams<float>::init(4);
  auto y = batchnorm_forward(x, p, true);
  // per-channel mean ~0, var ~1 before gamma/beta
  const Eigen::Index C = 4, plane = 25, per_channel = 2 * 3 * plane;
  for (Eigen::Index c = 0; c < C; ++c) {
    double sum = 0, sq = 0;
    for (Eigen::Index b = 0; b < 2; ++b)
      for (Eigen::Index t = 0; t < 3; ++t) {
        Eigen::Map<const ArrayX<float>> m(y.data() + (((b * 3 + t) * C) + c) * plane, plane);
        sum += m.template cast<double>().sum();
        sq += m.template cast<double>().square().sum();
      }
    CHECK(std::abs(sum / per_channel) < 1e-4);
    CHECK(std::abs(sq / per_channel - 1.0) < 1e-3);
  }
  // running stats moved toward batch stats with momentum 0.9
  CHECK(p.running_mean[0] != 0.f);
  CHECK(p.running_var[0] != 1.f);

  // infer mode uses running stats and is deterministic
  auto y1 = batchnorm_forward(x, p, false);
  auto y2 = batchnorm_forward(x, p, false);
  CHECK(y1 == y2);
}

TEST_CASE("batchnorm backward vs finite differences") {
  std::mt19937 rng(2);
  auto x = random_tensor<double>({2, 2, 3, 3, 3}, rng);
  auto p = BatchNormParams<double>::init(3);
  p.gamma = random_tensor<double>({3}, rng, 0.5, 1.5);
  p.beta = random_tensor<double>({3}, rng);
  auto g = random_tensor<double>({2, 2, 3, 3, 3}, rng);
  BatchNormCache<double> cache;
  batchnorm_forward(x, p, true, &cache);
  auto grads = batchnorm_backward(g, cache, p);
  auto loss = [&] {
    auto pp = p;  // keep running stats fixed
    return (batchnorm_forward(x, pp, true).array() * g.array()).sum();
  };
  CHECK(max_rel_error(grads.dx, finite_difference_grad<double>(x, loss), 1e-4) < 1e-5);
  CHECK(max_rel_error(grads.dgamma, finite_difference_grad<double>(p.gamma, loss), 1e-4) < 1e-5);
  CHECK(max_rel_error(grads.dbeta, finite_difference_grad<double>(p.beta, loss), 1e-4) < 1e-5);
}

TEST_CASE("batchnorm gamma gradient matches hand-derived closed form") {
  // B=2, one channel, 1x1 spatial: xhat_i = +-d/sqrt(d^2+eps), d=(x1-x2)/2
  auto p = BatchNormParams<double>::init(1);
  Tensord x({2, 1, 1, 1, 1});
  x[0] = 3.0;
  x[1] = 1.0;
  Tensord g({2, 1, 1, 1, 1});
  g[0] = 0.7;
  g[1] = -0.2;
  BatchNormCache<double> cache;
  batchnorm_forward(x, p, true, &cache);
  auto grads = batchnorm_backward(g, cache, p);
  const double d = (x[0] - x[1]) / 2.0;
  const double expect = (g[0] - g[1]) * d / std::sqrt(d * d + p.epsilon);
  CHECK(grads.dgamma[0] == doctest::Approx(expect).epsilon(1e-12));
  CHECK(grads.dbeta[0] == doctest::Approx(g[0] + g[1]).epsilon(1e-12));
}

TEST_CASE("forward: output shape, sigmoid range, infer determinism") {
  NetworkConfig cfg;
  cfg.layer_channels = {4, 4, 2};
  cfg.kernel = 3;
  cfg.rows = 8;
  cfg.cols = 8;
  auto model = make_model<float>(cfg, 7);
  std::mt19937 rng(3);
  auto input = random_tensor<float>({2, 3, 37, 8, 8}, rng, 0.f, 1.f);
  auto y = forward(model, input, RunMode::infer);
  CHECK(y.shape() == Shape{2, 3, 1, 8, 8});
  CHECK(y.array().minCoeff() > 0.f);
  CHECK(y.array().maxCoeff() < 1.f);
  auto y2 = forward(model, input, RunMode::infer);
  CHECK(y == y2);

  CHECK_THROWS_AS(forward(model, random_tensor<float>({1, 3, 5, 8, 8}, rng), RunMode::infer),
                  std::invalid_argument);
}

TEST_CASE("forward flags non-finite activations with the layer name") {
  NetworkConfig cfg;
  cfg.layer_channels = {2, 2};
  cfg.kernel = 3;
  cfg.rows = 4;
  cfg.cols = 4;
  auto model = make_model<float>(cfg, 1);
  std::mt19937 rng(4);
  auto input = random_tensor<float>({1, 3, 37, 4, 4}, rng);
  input[0] = std::numeric_limits<float>::quiet_NaN();
  try {
    forward(model, input, RunMode::infer);
    FAIL("expected divergence error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("layer 0") != std::string::npos);
  }
}

TEST_CASE("whole-network gradients match finite differences") {
  for (auto cell : {CellType::convlstm, CellType::convlstm_peephole, CellType::convgru}) {
    NetworkConfig cfg;
    cfg.layer_channels = {2, 2};
    cfg.kernel = 3;
    cfg.head_kernel = {3, 3, 3};
    cfg.cell_type = cell;
    cfg.input_channels = 1;
    cfg.rows = 5;
    cfg.cols = 5;
    auto model = make_model<double>(cfg, 11);
    std::mt19937 rng(5);
    auto input = random_tensor<double>({2, 3, 1, 5, 5}, rng, 0.0, 1.0);
    auto proj = random_tensor<double>({2, 3, 1, 5, 5}, rng);

    ForwardCache<double> cache;
    forward(model, input, RunMode::train, &cache);
    auto grads = backward(model, cache, proj);

    auto loss = [&] {
      auto m2 = model;  // keep running stats of the checked model fixed
      return (forward(m2, input, RunMode::train).array() * proj.array()).sum();
    };
    auto refs = model_parameters(model);
    REQUIRE(grads.size() == refs.size());
    for (size_t i = 0; i < refs.size(); ++i) {
      CAPTURE(refs[i].name);
      auto fd = finite_difference_grad<double>(*refs[i].tensor, loss);
      CHECK(max_rel_error(grads[i], fd, 1e-4) < 1e-4);
    }
  }
}

TEST_CASE("zero grad_out yields zero parameter gradients") {
  NetworkConfig cfg;
  cfg.layer_channels = {2, 2};
  cfg.kernel = 3;
  cfg.input_channels = 1;
  cfg.rows = 4;
  cfg.cols = 4;
  auto model = make_model<float>(cfg, 3);
  std::mt19937 rng(6);
  auto input = random_tensor<float>({1, 3, 1, 4, 4}, rng, 0.f, 1.f);
  ForwardCache<float> cache;
  forward(model, input, RunMode::train, &cache);
  auto grads = backward(model, cache, Tensorf::zeros({1, 3, 1, 4, 4}));
  for (const auto& g : grads) CHECK(g.array().abs().maxCoeff() == 0.f);
}

TEST_CASE("predict_window: zeroed model emits 0.5 * dsr_max everywhere") {
  GridSequence seq;
  for (int i = 0; i < 6; ++i) {
    GridFrame f;
    f.timestamp = 1577836800 + i * 3600;
    f.rows = 6;
    f.cols = 6;
    f.extent = {30, 50, -120, -90};
    f.values = ArrayX<float>::Zero(36);
    seq.frames.push_back(std::move(f));
  }
  auto windows = build_windows(seq);
  REQUIRE(windows.size() == 1);

  NetworkConfig cfg;
  cfg.layer_channels = {2, 2};
  cfg.kernel = 3;
  cfg.input_channels = 1;
  cfg.rows = 6;
  cfg.cols = 6;
  std::vector<NowcastModel<float>> models;
  for (int h = 1; h <= 3; ++h) {
    cfg.horizon = h;
    auto m = make_model<float>(cfg, 1, {1200.f, true});
    zero_all(m);
    models.push_back(std::move(m));
  }
  std::vector<const NowcastModel<float>*> ptrs{&models[0], &models[1], &models[2]};
  auto frames = predict_window(ptrs, windows[0]);
  for (int h = 0; h < 3; ++h) {
    CHECK(frames[size_t(h)].timestamp == seq.frames[2].timestamp + (h + 1) * 3600);
    for (Eigen::Index i = 0; i < 36; ++i)
      CHECK(frames[size_t(h)].values[i] == doctest::Approx(600.f));
  }

  std::vector<const NowcastModel<float>*> missing{&models[0], &models[2]};
  CHECK_THROWS_AS(predict_window(missing, windows[0]), std::invalid_argument);
}

TEST_CASE("predictions stay inside [0, dsr_max]") {
  auto seq = tiny_sequence(8, 8, 40);
  auto windows = build_windows(seq);
  REQUIRE(!windows.empty());
  NetworkConfig cfg;
  cfg.layer_channels = {3, 2};
  cfg.kernel = 3;
  cfg.rows = 8;
  cfg.cols = 8;
  std::vector<NowcastModel<float>> models;
  for (int h = 1; h <= 3; ++h) {
    cfg.horizon = h;
    models.push_back(make_model<float>(cfg, std::uint64_t(h), {1200.f, true}));
  }
  std::vector<const NowcastModel<float>*> ptrs{&models[0], &models[1], &models[2]};
  auto frames = predict_window(ptrs, windows[0]);
  for (const auto& f : frames) {
    CHECK(f.values.minCoeff() >= 0.f);
    CHECK(f.values.maxCoeff() <= 1200.f);
  }
}

TEST_CASE("checkpoint roundtrip is bit-exact") {
  NetworkConfig cfg;
  cfg.layer_channels = {3, 2};
  cfg.kernel = 3;
  cfg.cell_type = CellType::convlstm_peephole;
  cfg.rows = 6;
  cfg.cols = 7;
  cfg.horizon = 2;
  auto model = make_model<float>(cfg, 99, {1000.f, false});
  model.epochs_trained = 5;
  model.train_loss_history = {0.5f, 0.25f};
  model.val_loss_history = {0.6f, 0.3f};

  std::ostringstream os;
  save_model(model, os);
  std::istringstream is(os.str());
  auto loaded = load_model<float>(is);

  CHECK(loaded.config == model.config);
  CHECK(loaded.normalization.dsr_max == model.normalization.dsr_max);
  CHECK(loaded.normalization.clip == model.normalization.clip);
  CHECK(loaded.seed == model.seed);
  CHECK(loaded.epochs_trained == model.epochs_trained);
  CHECK(loaded.train_loss_history == model.train_loss_history);
  auto a = model_state_tensors(model);
  auto b = model_state_tensors(loaded);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(*a[i].tensor == *b[i].tensor);

  // identical predictions bitwise
  std::mt19937 rng(7);
  auto input = random_tensor<float>({1, 3, 37, 6, 7}, rng, 0.f, 1.f);
  CHECK(forward(model, input, RunMode::infer) == forward(loaded, input, RunMode::infer));
}

TEST_CASE("checkpoint rejects truncation and shape mismatch") {
  NetworkConfig cfg;
  cfg.layer_channels = {2};
  cfg.kernel = 3;
  cfg.rows = 4;
  cfg.cols = 4;
  auto model = make_model<float>(cfg, 1);
  std::ostringstream os;
  size_t n = save_model(model, os);

  std::istringstream trunc(os.str().substr(0, n - 25));
  CHECK_THROWS_WITH_AS(load_model<float>(trunc),
                       "checkpoint: checksum mismatch (corrupted or truncated file)",
                       std::runtime_error);

  std::istringstream flipped([&] {
    std::string s = os.str();
    s[100] ^= 0x40;
    return s;
  }());
  CHECK_THROWS_AS(load_model<float>(flipped), std::runtime_error);

  std::istringstream is(os.str());
  CHECK_THROWS_AS(load_model<float>(is, 166, 394), std::runtime_error);
}

TEST_CASE("horizon models share no parameters") {
  NetworkConfig cfg;
  cfg.layer_channels = {2};
  cfg.kernel = 3;
  cfg.input_channels = 1;
  cfg.rows = 4;
  cfg.cols = 4;
  cfg.horizon = 1;
  auto m1 = make_model<float>(cfg, 1);
  cfg.horizon = 2;
  auto m2 = make_model<float>(cfg, 2);
  std::mt19937 rng(8);
  auto input = random_tensor<float>({1, 3, 1, 4, 4}, rng, 0.f, 1.f);
  auto before = forward(m2, input, RunMode::infer);
  for (auto& ref : model_parameters(m1)) ref.tensor->array() += 0.5f;  // "retrain" m1
  CHECK(forward(m2, input, RunMode::infer) == before);
}
