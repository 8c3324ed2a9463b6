// Acceptance suite: exercises the engine end to end and prints one
// PASS/FAIL line per criterion. Exits nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>

#include "nowcast/baseline.hpp"
#include "nowcast/checkpoint.hpp"
#include "nowcast/eval.hpp"
#include "nowcast/serve.hpp"
#include "nowcast/train.hpp"
#include "oracles.hpp"

using namespace nowcast;
using namespace nowcast::testing;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void report(int index, const std::string& name, bool ok, const std::string& detail) {
  if (!ok) ++failures;
  std::cout << "[" << index << "] " << std::left << std::setw(34) << name
            << (ok ? "PASS" : "FAIL") << (detail.empty() ? "" : "  (" + detail + ")") << std::endl;
}

template <class Fn>
void criterion(int index, const std::string& name, Fn&& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    report(index, name, false, std::string("exception: ") + e.what());
  }
}

std::string fmt(double v, int precision = 3) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness: every parameter tensor and the input of the full
//    tiny network, for each cell type, against central finite differences.
// ---------------------------------------------------------------------------
void check_gradients() {
  const auto t0 = Clock::now();
  double worst = 0;
  std::string worst_name;
  for (auto cell : {CellType::convlstm, CellType::convlstm_peephole, CellType::convgru}) {
    NetworkConfig cfg;
    cfg.layer_channels = {4, 4, 2};
    cfg.kernel = 3;
    cfg.cell_type = cell;
    cfg.activation = Activation::tanh;  // smooth, so the 1e-5 FD step is exact
    cfg.input_channels = 1;
    cfg.rows = 8;
    cfg.cols = 8;
    auto model = make_model<double>(cfg, 17 + std::uint64_t(cell));
    std::mt19937 rng(31 + unsigned(cell));
    auto input = random_tensor<double>({2, 3, 1, 8, 8}, rng, 0.0, 1.0);
    auto proj = random_tensor<double>({2, 3, 1, 8, 8}, rng);

    ForwardCache<double> cache;
    forward(model, input, RunMode::train, &cache);
    Tensor<double> dinput;
    auto grads = backward(model, cache, proj, &dinput);

    auto loss = [&] {
      auto m2 = model;  // keep the checked model's running stats fixed
      return (forward(m2, input, RunMode::train).array() * proj.array()).sum();
    };
    auto refs = model_parameters(model);
    for (size_t i = 0; i < refs.size(); ++i) {
      auto fd = finite_difference_grad<double>(*refs[i].tensor, loss);
      const double err = max_rel_error(grads[i], fd, 1e-4);
      if (err > worst) {
        worst = err;
        worst_name = std::string(cell_type_name(cell)) + "/" + refs[i].name;
      }
    }
    auto fd_in = finite_difference_grad<double>(input, loss);
    const double err = max_rel_error(dinput, fd_in, 1e-4);
    if (err > worst) {
      worst = err;
      worst_name = std::string(cell_type_name(cell)) + "/input";
    }
  }
  const double secs = seconds_since(t0);
  report(1, "gradient correctness", worst < 1e-4 && secs < 120.0,
         "worst rel err " + fmt(worst) + " at " + worst_name + ", " + fmt(secs) + " s");
}

// ---------------------------------------------------------------------------
// 2. Convolution oracle equivalence on 200 random shapes.
// ---------------------------------------------------------------------------
void check_conv_oracle() {
  const auto t0 = Clock::now();
  std::mt19937 rng(7);
  auto pick = [&](int lo, int hi) { return lo + int(rng() % unsigned(hi - lo + 1)); };
  const int odd[] = {1, 3, 5};
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int C = pick(1, 4), H = pick(3, 9), W = pick(3, 9), O = pick(1, 4);
    auto k = make_kernel2d<double>(O, C, odd[rng() % 3], odd[rng() % 3]);
    k.weights = random_tensor<double>(k.weights.shape(), rng);
    k.bias = random_tensor<double>(k.bias.shape(), rng);
    auto in = random_tensor<double>({C, H, W}, rng);
    worst = std::max(worst, max_rel_error(conv2d_same(in, k), conv2d_loop_reference(in, k)));
  }
  for (int trial = 0; trial < 100; ++trial) {
    const int C = pick(1, 3), T = pick(1, 4), H = pick(3, 8), W = pick(3, 8), O = pick(1, 3);
    auto k = make_kernel3d<double>(O, C, odd[rng() % 2], odd[rng() % 3], odd[rng() % 3]);
    k.weights = random_tensor<double>(k.weights.shape(), rng);
    k.bias = random_tensor<double>(k.bias.shape(), rng);
    auto in = random_tensor<double>({C, T, H, W}, rng);
    worst = std::max(worst, max_rel_error(conv3d_same(in, k), conv3d_loop_reference(in, k)));
  }
  const double secs = seconds_since(t0);
  report(2, "conv oracle equivalence", worst <= 1e-6 && secs < 60.0,
         "200 shapes, worst rel err " + fmt(worst) + ", " + fmt(secs) + " s");
}

// ---------------------------------------------------------------------------
// 3. ConvLSTMPeephole with zero peephole kernels reduces to ConvLSTM bitwise.
// ---------------------------------------------------------------------------
void check_peephole_reduction() {
  std::mt19937 rng(11);
  auto pick = [&](int lo, int hi) { return lo + int(rng() % unsigned(hi - lo + 1)); };
  const int odd[] = {1, 3, 5};
  int ok = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const int in_ch = pick(1, 4), hid = pick(1, 4), k = odd[rng() % 3];
    const int H = pick(4, 8), W = pick(4, 8);
    auto wp = make_cell_weights<float>(CellType::convlstm_peephole, in_ch, hid, k);
    std::mt19937 init(100 + unsigned(trial));
    init_cell_weights(wp, init);
    for (auto& p : wp.peephole) p.array().setZero();
    auto wl = make_cell_weights<float>(CellType::convlstm, in_ch, hid, k);
    wl.gates = wp.gates;
    CellState<float> prev{random_tensor<float>({hid, H, W}, rng),
                          random_tensor<float>({hid, H, W}, rng)};
    auto x = random_tensor<float>({in_ch, H, W}, rng);
    const auto act = (trial % 2) ? Activation::tanh : Activation::relu;
    auto a = convlstm_peephole_step(x, prev, wp, act);
    auto b = convlstm_step(x, prev, wl, act);
    if (std::memcmp(a.H.data(), b.H.data(), sizeof(float) * size_t(a.H.size())) == 0 &&
        std::memcmp(a.C.data(), b.C.data(), sizeof(float) * size_t(a.C.size())) == 0)
      ++ok;
  }
  report(3, "peephole reduction (bitwise)", ok == 50, std::to_string(ok) + "/50 cases identical");
}

// ---------------------------------------------------------------------------
// 4 + 5. Learnability on synthetic advection, and monotonic horizon
//        degradation across the three trained per-horizon models.
// ---------------------------------------------------------------------------

// RMSE of a model over the held-out windows, daylight pixels in `region` only.
double model_rmse(const NowcastModel<float>& model, const std::vector<SampleWindow>& windows,
                  const Region& region) {
  const int h = model.config.horizon;
  const Eigen::Index cols = model.config.cols, plane = model.config.rows * cols;
  double sq = 0;
  long n = 0;
  for (const auto& w : windows) {
    auto xi = assemble_input<float>(w, model.normalization, model.config.input_channels);
    Tensor<float> x({1, xi.dim(0), xi.dim(1), xi.dim(2), xi.dim(3)});
    std::memcpy(x.data(), xi.data(), sizeof(float) * size_t(xi.size()));
    auto y = forward(model, x, RunMode::infer);  // (1,3,1,H,W); frame 2 is t+h
    const GridFrame& truth = w.seq->frames[size_t(w.t_index + h)];
    for (int r = region.row0; r < region.row0 + region.rows; ++r)
      for (int c = region.col0; c < region.col0 + region.cols; ++c) {
        const Eigen::Index j = Eigen::Index(r) * cols + c;
        const double t = truth.values[j];
        if (!(t > 0)) continue;
        const double p = double(y[2 * plane + j]) * double(model.normalization.dsr_max);
        sq += (p - t) * (p - t);
        ++n;
      }
  }
  return std::sqrt(sq / double(n));
}

// RMSE of predicting frame t+h from frame t (persistence), same protocol.
double persistence_rmse(const std::vector<SampleWindow>& windows, int h, const Region& region,
                        Eigen::Index cols) {
  double sq = 0;
  long n = 0;
  for (const auto& w : windows) {
    const GridFrame& cur = w.seq->frames[size_t(w.t_index)];
    const GridFrame& truth = w.seq->frames[size_t(w.t_index + h)];
    for (int r = region.row0; r < region.row0 + region.rows; ++r)
      for (int c = region.col0; c < region.col0 + region.cols; ++c) {
        const Eigen::Index j = Eigen::Index(r) * cols + c;
        const double t = truth.values[j];
        if (!(t > 0)) continue;
        sq += (cur.values[j] - t) * (cur.values[j] - t);
        ++n;
      }
  }
  return std::sqrt(sq / double(n));
}

double linear_rmse(const LinearPixelModel& lin, const std::vector<SampleWindow>& windows,
                   const Region& region, Eigen::Index cols) {
  double sq = 0;
  long n = 0;
  for (const auto& w : windows) {
    auto pred = predict_linear_at(lin, *w.seq, w.t_index);
    const GridFrame& truth = w.seq->frames[size_t(w.t_index + 1)];
    for (int r = region.row0; r < region.row0 + region.rows; ++r)
      for (int c = region.col0; c < region.col0 + region.cols; ++c) {
        const Eigen::Index j = Eigen::Index(r) * cols + c;
        const double t = truth.values[j];
        if (!(t > 0)) continue;
        sq += (pred.values[j] - t) * (pred.values[j] - t);
        ++n;
      }
  }
  return std::sqrt(sq / double(n));
}

// Every `stride`-th window; stride must stay coprime with the 24-hour cycle
// so the subsample still covers every hour-of-day one-hot feature.
std::vector<SampleWindow> subsample(const std::vector<SampleWindow>& w, size_t stride) {
  std::vector<SampleWindow> out;
  for (size_t i = 0; i < w.size(); i += stride) out.push_back(w[i]);
  return out;
}

void check_learnability_and_monotonicity() {
  const auto t0 = Clock::now();

  SyntheticParams sp;
  sp.rows = 64;
  sp.cols = 64;
  sp.hours = 500;
  sp.vel_row = 0.5;
  sp.vel_col = 1.5;  // constant cloud velocity
  auto seq = generate_synthetic(sp, 2024);

  GridSequence train_seq, test_seq;
  for (int i = 0; i < 400; ++i) train_seq.frames.push_back(seq.frames[size_t(i)]);
  // overlap by 5 frames so test windows start exactly at hour 400
  for (int i = 395; i < 500; ++i) test_seq.frames.push_back(seq.frames[size_t(i)]);
  const auto train_windows = build_windows(train_seq);
  const auto test_windows = build_windows(test_seq);
  const auto region = interior_region(sp.rows, sp.cols, 40);

  auto train_one = [&](int horizon, std::vector<int> channels, size_t stride, int epochs,
                       double lr, std::uint64_t seed) {
    NetworkConfig cfg;
    cfg.layer_channels = std::move(channels);
    cfg.kernel = 3;
    cfg.rows = sp.rows;
    cfg.cols = sp.cols;
    cfg.horizon = horizon;
    auto model = make_model<float>(cfg, seed, {sp.dsr_max, true});
    TrainConfig tc;
    tc.learning_rate = lr;
    tc.max_epochs = epochs;
    tc.validation_fraction = 0.1;
    tc.seed = seed;
    train_model(model, subsample(train_windows, stride), tc, nullptr);
    return model;
  };

  // horizon 1 gets most of the budget; horizons 2 and 3 share one cheaper
  // recipe with a common seed so only the task difficulty differs
  auto m1 = train_one(1, {16, 16}, 1, 20, 3e-3, 1);
  auto m2 = train_one(2, {8, 8}, 5, 30, 3e-3, 7);
  auto m3 = train_one(3, {8, 8}, 5, 30, 3e-3, 7);
  const double train_secs = seconds_since(t0);

  auto lin = fit_linear_sequence(train_seq, region, 1e-3, 40, 20000, 1);

  const double r1 = model_rmse(m1, test_windows, region);
  const double r2 = model_rmse(m2, test_windows, region);
  const double r3 = model_rmse(m3, test_windows, region);
  const double rp = persistence_rmse(test_windows, 1, region, sp.cols);
  const double rl = linear_rmse(lin, test_windows, region, sp.cols);

  const double vs_persistence = (rp - r1) / rp * 100.0;
  const bool ok4 = vs_persistence >= 10.0 && r1 < rl && train_secs < 900.0;
  report(4, "learnability on synthetic data", ok4,
         "model " + fmt(r1, 4) + " vs persistence " + fmt(rp, 4) + " (-" + fmt(vs_persistence) +
             "%) vs linear " + fmt(rl, 4) + " W/m2, training " + fmt(train_secs) + " s");
  report(5, "monotonic horizon degradation", r3 >= r2 && r2 >= r1,
         "h1 " + fmt(r1, 4) + " <= h2 " + fmt(r2, 4) + " <= h3 " + fmt(r3, 4) + " W/m2");
}

// ---------------------------------------------------------------------------
// 6. Inference budget: full architecture, 166x394 grid, three horizons.
// ---------------------------------------------------------------------------
void check_inference_budget() {
  NetworkConfig cfg;  // defaults: {128,128,64} channels, 5x5 kernels, 37 inputs
  cfg.rows = 166;
  cfg.cols = 394;
  std::vector<NowcastModel<float>> models;
  for (int h = 1; h <= 3; ++h) {
    cfg.horizon = h;
    models.push_back(make_model<float>(cfg, std::uint64_t(h)));
  }
  std::mt19937 rng(3);
  auto input = random_tensor<float>({1, 3, 37, 166, 394}, rng, 0.f, 1.f);
  const auto t0 = Clock::now();
  for (const auto& m : models) {
    auto y = forward(m, input, RunMode::infer);
    if (y.size() != Eigen::Index(3) * 166 * 394) throw std::runtime_error("unexpected output size");
  }
  const double secs = seconds_since(t0);
  report(6, "inference budget (full arch)", secs < 60.0,
         "3 horizons on 166x394 in " + fmt(secs) + " s");
}

// ---------------------------------------------------------------------------
// 7. Evaluation exactness.
// ---------------------------------------------------------------------------
void check_eval_exactness() {
  std::mt19937 rng(13);
  std::uniform_real_distribution<float> val(0.f, 1400.f);
  std::vector<GridFrame> preds, truths;
  for (int i = 0; i < 6; ++i) {
    GridFrame p, t;
    p.timestamp = t.timestamp = 1577836800 + i * 3600;
    p.rows = t.rows = 20;
    p.cols = t.cols = 20;
    p.extent = t.extent = {30, 50, -120, -90};
    p.values = ArrayX<float>::NullaryExpr(400, [&] { return val(rng); });
    t.values = ArrayX<float>::NullaryExpr(400, [&] { return val(rng); });
    for (int k = 0; k < 8; ++k) {  // sprinkle missing pixels on both sides
      p.values[Eigen::Index(rng() % 400)] = std::numeric_limits<float>::quiet_NaN();
      t.values[Eigen::Index(rng() % 400)] = std::numeric_limits<float>::quiet_NaN();
    }
    preds.push_back(std::move(p));
    truths.push_back(std::move(t));
  }
  auto got = stratified_rmse(preds, truths);

  // flat-loop oracle with the same binning-by-truth rule
  const auto bins = default_bins();
  std::vector<double> sq(bins.size(), 0);
  std::vector<long> n(bins.size(), 0);
  double all_sq = 0;
  long all_n = 0;
  for (size_t i = 0; i < preds.size(); ++i)
    for (Eigen::Index j = 0; j < 400; ++j) {
      const double p = preds[i].values[j], t = truths[i].values[j];
      if (std::isnan(p) || std::isnan(t)) continue;
      const double d = p - t;
      all_sq += d * d;
      ++all_n;
      for (size_t b = 0; b < bins.size(); ++b)
        if (t >= bins[b].lo && t < bins[b].hi) {
          sq[b] += d * d;
          ++n[b];
          break;
        }
    }
  double worst = std::abs(got.overall_rmse - std::sqrt(all_sq / double(all_n))) /
                 std::sqrt(all_sq / double(all_n));
  for (size_t b = 0; b < bins.size(); ++b) {
    const double want = std::sqrt(sq[b] / double(n[b]));
    worst = std::max(worst, std::abs(got.bins[b].rmse - want) / want);
    if (got.bins[b].n != n[b]) worst = 1;
  }

  // decomposition identity: overall^2 * N == sum over bins of rmse^2 * n
  double recomposed = 0;
  for (const auto& b : got.bins) recomposed += b.rmse * b.rmse * double(b.n);
  const double decomp_err =
      std::abs(recomposed - got.overall_rmse * got.overall_rmse * double(got.overall_n)) /
      (got.overall_rmse * got.overall_rmse * double(got.overall_n));

  // published overall delta from the rounded baseline/model RMSE pair
  EvalReport a = got, b = got;
  a.overall_rmse = 124.9;
  b.overall_rmse = 108.6;
  const double delta = compare_reports(a, b).overall.decrease_pct;

  const bool ok = worst <= 1e-9 && decomp_err <= 1e-9 && std::abs(delta - 13.05) <= 0.1;
  report(7, "evaluation exactness", ok,
         "oracle rel err " + fmt(worst) + ", decomposition rel err " + fmt(decomp_err) +
             ", 124.9 vs 108.6 -> " + fmt(delta, 4) + "%");
}

// ---------------------------------------------------------------------------
// 8. Bit-exact roundtrips for the grid format and checkpoints, and the grid
//    endpoint re-parsing through read_sequence.
// ---------------------------------------------------------------------------
void check_roundtrips() {
  std::mt19937 rng(23);
  auto pick = [&](int lo, int hi) { return lo + int(rng() % unsigned(hi - lo + 1)); };
  std::uniform_real_distribution<float> val(-50.f, 1500.f);

  int dsrg_ok = 0;
  for (int trial = 0; trial < 100; ++trial) {
    GridSequence seq;
    const int rows = pick(1, 12), cols = pick(1, 12), count = pick(1, 4);
    const GeoExtent ext{-10.0 + pick(0, 5), 40.0, -100.0, -60.0 + pick(0, 5)};
    for (int i = 0; i < count; ++i) {
      GridFrame f;
      f.timestamp = 1577836800 + i * 3600;
      f.rows = rows;
      f.cols = cols;
      f.extent = ext;
      f.values = ArrayX<float>::NullaryExpr(Eigen::Index(rows) * cols, [&] {
        return (rng() % 7 == 0) ? std::numeric_limits<float>::quiet_NaN()
                                : std::max(0.f, val(rng));
      });
      seq.frames.push_back(std::move(f));
    }
    std::ostringstream first;
    write_sequence(seq, first);
    std::istringstream is(first.str());
    auto back = read_sequence(is);
    std::ostringstream second;
    write_sequence(back, second);
    if (first.str() == second.str()) ++dsrg_ok;
  }

  int ckpt_ok = 0;
  for (int trial = 0; trial < 100; ++trial) {
    NetworkConfig cfg;
    cfg.layer_channels.assign(size_t(pick(1, 2)), 0);
    for (auto& c : cfg.layer_channels) c = pick(1, 3);
    cfg.kernel = (rng() % 2) ? 3 : 1;
    cfg.cell_type = CellType(rng() % 3);
    cfg.activation = (rng() % 2) ? Activation::tanh : Activation::relu;
    cfg.input_channels = 1;
    cfg.horizon = pick(1, 3);
    cfg.rows = pick(4, 6);
    cfg.cols = pick(4, 6);
    auto model = make_model<float>(cfg, rng(), {1000.f + float(pick(0, 400)), bool(rng() % 2)});
    model.epochs_trained = std::uint32_t(pick(0, 9));
    for (int e = 0; e < pick(0, 4); ++e) {
      model.train_loss_history.push_back(val(rng));
      model.val_loss_history.push_back(val(rng));
    }
    model.val_loss_history.resize(model.train_loss_history.size());
    std::ostringstream first;
    save_model(model, first);
    std::istringstream is(first.str());
    auto back = load_model<float>(is);
    std::ostringstream second;
    save_model(back, second);
    if (first.str() == second.str()) ++ckpt_ok;
  }

  // grid endpoint output parses back through read_sequence
  NetworkConfig cfg;
  cfg.layer_channels = {2};
  cfg.kernel = 3;
  cfg.input_channels = 1;
  cfg.rows = 8;
  cfg.cols = 8;
  std::vector<NowcastModel<float>> models;
  for (int h = 1; h <= 3; ++h) {
    cfg.horizon = h;
    models.push_back(make_model<float>(cfg, std::uint64_t(h), {1200.f, true}));
  }
  ForecastService svc(std::move(models));
  for (int i = 0; i < 3; ++i) {
    GridFrame f;
    f.timestamp = 1577901600 + i * 3600;
    f.rows = 8;
    f.cols = 8;
    f.extent = {30, 50, -120, -90};
    f.values = ArrayX<float>::NullaryExpr(64, [&] { return std::max(0.f, val(rng)); });
    svc.ingest_frame(f);
  }
  bool grid_ok = true;
  auto snap = svc.snapshot();
  for (int h = 1; h <= 3; ++h) {
    auto res = svc.handle_grid(h);
    std::istringstream is(res.body);
    auto parsed = read_sequence(is);
    const auto& want = snap->predictions[size_t(h - 1)];
    grid_ok = grid_ok && res.status == 200 && parsed.frames.size() == 1 &&
              parsed.frames[0].timestamp == want.timestamp &&
              std::memcmp(parsed.frames[0].values.data(), want.values.data(),
                          sizeof(float) * 64) == 0;
  }

  report(8, "roundtrips bit-exact", dsrg_ok == 100 && ckpt_ok == 100 && grid_ok,
         "DSRG " + std::to_string(dsrg_ok) + "/100, checkpoints " + std::to_string(ckpt_ok) +
             "/100, grid endpoint " + (grid_ok ? "re-parses" : "broken"));
}

// ---------------------------------------------------------------------------
// 9. Pipeline determinism through the CLI: generate -> train 2 epochs ->
//    predict, twice, bitwise-identical artifacts.
// ---------------------------------------------------------------------------
void check_determinism() {
  const fs::path dir = fs::temp_directory_path() / "nowcast_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto slurp = [](const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
  };
  auto run = [&](const std::string& args) {
    const std::string cmd = std::string(NOWCAST_CLI_PATH) + " " + args + " > " +
                            (dir / "log.txt").string() + " 2>&1";
    if (std::system(cmd.c_str()) != 0)
      throw std::runtime_error("pipeline step failed: " + args + "\n" + slurp(dir / "log.txt"));
  };
  auto pipeline = [&](const std::string& tag) {
    const std::string data = (dir / (tag + ".dsrg")).string();
    run("generate --out " + data + " --rows 16 --cols 16 --hours 24 --seed 11");
    for (int h = 1; h <= 3; ++h)
      run("train --data " + data + " --out " + (dir / (tag + std::to_string(h))).string() +
          ".nwcm --horizon " + std::to_string(h) + " --channels 2 --epochs 2 --seed 9");
    run("predict --data " + data + " --h1 " + (dir / (tag + "1.nwcm")).string() + " --h2 " +
        (dir / (tag + "2.nwcm")).string() + " --h3 " + (dir / (tag + "3.nwcm")).string() +
        " --out " + (dir / (tag + "_pred.dsrg")).string());
  };
  pipeline("a");
  pipeline("b");
  bool ok = slurp(dir / "a.dsrg") == slurp(dir / "b.dsrg");
  for (int h = 1; h <= 3; ++h)
    ok = ok && slurp(dir / ("a" + std::to_string(h) + ".nwcm")) ==
                   slurp(dir / ("b" + std::to_string(h) + ".nwcm"));
  ok = ok && !slurp(dir / "a_pred.dsrg").empty() &&
       slurp(dir / "a_pred.dsrg") == slurp(dir / "b_pred.dsrg");
  report(9, "pipeline determinism", ok,
         ok ? "two generate/train/predict runs bitwise identical" : "artifacts differ");
  fs::remove_all(dir);
}

}  // namespace

int main(int argc, char** argv) {
  // optional arguments select a subset of criteria, e.g. `acceptance 1 5`
  auto wanted = [&](int index) {
    if (argc < 2) return true;
    for (int i = 1; i < argc; ++i)
      if (std::atoi(argv[i]) == index) return true;
    return false;
  };
  if (wanted(1)) criterion(1, "gradient correctness", check_gradients);
  if (wanted(2)) criterion(2, "conv oracle equivalence", check_conv_oracle);
  if (wanted(3)) criterion(3, "peephole reduction (bitwise)", check_peephole_reduction);
  if (wanted(4) || wanted(5)) try {
      check_learnability_and_monotonicity();
    } catch (const std::exception& e) {
      report(4, "learnability on synthetic data", false, std::string("exception: ") + e.what());
      report(5, "monotonic horizon degradation", false, "not evaluated");
    }
  if (wanted(6)) criterion(6, "inference budget (full arch)", check_inference_budget);
  if (wanted(7)) criterion(7, "evaluation exactness", check_eval_exactness);
  if (wanted(8)) criterion(8, "roundtrips bit-exact", check_roundtrips);
  if (wanted(9)) criterion(9, "pipeline determinism", check_determinism);
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
