// nowcast: command-line entry point for the DSR nowcasting pipeline.
#include <CLI11.hpp>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include "nowcast/baseline.hpp"
#include "nowcast/checkpoint.hpp"
#include "nowcast/eval.hpp"
#include "nowcast/serve.hpp"
#include "nowcast/train.hpp"

#ifdef NOWCAST_ENABLE_HTTP
#include <httplib.h>
#endif

namespace {

using namespace nowcast;

void apply_thread_cap() {
  if (const char* env = std::getenv("NOWCAST_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) Eigen::setNbThreads(n);
  }
}

GridSequence read_dsrg(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  return read_sequence(f);
}

void write_dsrg(const GridSequence& seq, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path);
  write_sequence(seq, f);
}

/// 8-bit grayscale preview: value = round(255 * dsr / dsr_max), missing = 0.
void write_pgm(const GridFrame& frame, float dsr_max, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << "P5\n" << frame.cols << " " << frame.rows << "\n255\n";
  for (Eigen::Index i = 0; i < frame.values.size(); ++i) {
    const float v = frame.values[i];
    const float scaled = std::isnan(v) ? 0.f : std::min(255.f, std::round(255.f * v / dsr_max));
    f.put(char(static_cast<unsigned char>(std::max(0.f, scaled))));
  }
  if (!f) throw std::runtime_error("cannot write " + path);
}

CellType parse_cell(const std::string& s) {
  if (s == "convlstm") return CellType::convlstm;
  if (s == "peephole") return CellType::convlstm_peephole;
  if (s == "convgru") return CellType::convgru;
  throw std::runtime_error("unknown cell type '" + s + "' (convlstm|peephole|convgru)");
}

std::vector<NowcastModel<float>> load_horizon_models(const std::array<std::string, 3>& paths,
                                                     int rows, int cols) {
  std::vector<NowcastModel<float>> models;
  for (int h = 1; h <= 3; ++h) {
    const auto& p = paths[size_t(h - 1)];
    if (p.empty())
      throw std::runtime_error("missing checkpoint for horizon " + std::to_string(h) +
                               " (pass --h" + std::to_string(h) + ")");
    std::ifstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + p);
    auto m = load_model<float>(f, rows, cols);
    if (m.config.horizon != h)
      throw std::runtime_error(p + " holds a horizon-" + std::to_string(m.config.horizon) +
                               " model, expected horizon " + std::to_string(h));
    models.push_back(std::move(m));
  }
  return models;
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

int cmd_generate(const std::string& out, SyntheticParams p, std::uint64_t seed) {
  std::cout << "effective-config: generate out=" << out << " rows=" << p.rows
            << " cols=" << p.cols << " hours=" << p.hours << " seed=" << seed
            << " clouds=" << p.cloud_count << " vel_row=" << p.vel_row
            << " vel_col=" << p.vel_col << " blob_sigma=" << p.blob_sigma
            << " opacity=" << p.opacity << " dsr_max=" << p.dsr_max << "\n";
  auto seq = generate_synthetic(p, seed);
  write_dsrg(seq, out);
  std::cout << "wrote " << seq.frames.size() << " frames (" << p.rows << "x" << p.cols << ") to "
            << out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// import
// ---------------------------------------------------------------------------

int cmd_import(const std::string& csv, const std::string& out, GeoExtent extent) {
  std::cout << "effective-config: import csv=" << csv << " out=" << out
            << " lat_min=" << extent.lat_min << " lat_max=" << extent.lat_max
            << " lon_min=" << extent.lon_min << " lon_max=" << extent.lon_max << "\n";
  std::ifstream f(csv);
  if (!f) throw std::runtime_error("cannot open " + csv);
  auto seq = import_csv(f, extent);
  write_dsrg(seq, out);
  std::cout << "wrote " << seq.frames.size() << " frames to " << out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data, out, cell = "convlstm", config_path, history_path;
  int horizon = 1;
  std::vector<int> channels{8, 8};
  int kernel = 3;
  std::vector<int> head_kernel{3, 3, 3};
  bool no_time_features = false;
  double dsr_max = 1200;
  bool no_clip = false;
  TrainConfig tc;
  // linear baseline options (--cell linear)
  int patch = 40;
  double lambda = 1e-3;
  long max_rows = 200000;
};

int cmd_train(const TrainArgs& a) {
  auto seq = read_dsrg(a.data);
  if (seq.frames.empty()) throw std::runtime_error(a.data + " holds no frames");
  const int rows = seq.frames[0].rows, cols = seq.frames[0].cols;
  NormalizationSpec norm{float(a.dsr_max), !a.no_clip};

  TrainConfig tc = a.tc;
  if (!a.config_path.empty()) {
    std::ifstream cf(a.config_path);
    if (!cf) throw std::runtime_error("cannot open " + a.config_path);
    tc = parse_train_config(cf, tc);
  }

  if (a.cell == "linear") {
    std::cout << "effective-config: train data=" << a.data << " out=" << a.out
              << " cell=linear patch=" << a.patch << " lambda=" << a.lambda
              << " max_rows=" << a.max_rows << " seed=" << tc.seed << " dsr_max=" << a.dsr_max
              << "\n";
    auto region = interior_region(rows, cols, a.patch);
    auto model = fit_linear_sequence(seq, region, a.lambda, a.patch, a.max_rows, tc.seed, norm);
    std::ofstream f(a.out, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + a.out);
    save_baseline(model, f);
    std::cout << "wrote linear baseline to " << a.out << "\n";
    return 0;
  }

  NetworkConfig cfg;
  cfg.layer_channels = a.channels;
  cfg.kernel = a.kernel;
  if (a.head_kernel.size() != 3) throw std::runtime_error("--head-kernel needs 3 values");
  cfg.head_kernel = {a.head_kernel[0], a.head_kernel[1], a.head_kernel[2]};
  cfg.cell_type = parse_cell(a.cell);
  cfg.input_channels = a.no_time_features ? 1 : 1 + kTimeFeatureCount;
  cfg.horizon = a.horizon;
  cfg.rows = rows;
  cfg.cols = cols;

  std::cout << "effective-config: train data=" << a.data << " out=" << a.out << " cell=" << a.cell
            << " horizon=" << a.horizon << " channels=";
  for (size_t i = 0; i < a.channels.size(); ++i)
    std::cout << (i ? "," : "") << a.channels[i];
  std::cout << " kernel=" << a.kernel << " head_kernel=" << cfg.head_kernel[0] << ","
            << cfg.head_kernel[1] << "," << cfg.head_kernel[2]
            << " time_features=" << (a.no_time_features ? 0 : 1) << " dsr_max=" << a.dsr_max
            << " clip=" << (a.no_clip ? 0 : 1) << " lr=" << tc.learning_rate
            << " batch_size=" << tc.batch_size << " max_epochs=" << tc.max_epochs
            << " optimizer=" << (tc.optimizer == OptimizerKind::adam ? "adam" : "sgd")
            << " seed=" << tc.seed << " patience=" << tc.patience
            << " val_fraction=" << tc.validation_fraction << " clip_norm=" << tc.clip_norm << "\n";

  auto windows = build_windows(seq);
  if (windows.empty())
    throw std::runtime_error(a.data + " yields no training windows (need 6+ gap-free frames)");
  auto model = make_model<float>(cfg, tc.seed, norm);
  train_model(model, windows, tc, &std::cout);
  std::ofstream f(a.out, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + a.out);
  save_model(model, f);
  std::cout << "wrote checkpoint to " << a.out << " (" << model.epochs_trained << " epochs)\n";
  if (!a.history_path.empty()) {
    std::ofstream h(a.history_path, std::ios::trunc);
    if (!h) throw std::runtime_error("cannot write " + a.history_path);
    write_loss_history_csv(model, h);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

int cmd_predict(const std::string& data, const std::array<std::string, 3>& ckpts,
                const std::string& out, const std::string& pgm_prefix) {
  std::cout << "effective-config: predict data=" << data << " h1=" << ckpts[0]
            << " h2=" << ckpts[1] << " h3=" << ckpts[2] << " out=" << out
            << " pgm=" << pgm_prefix << "\n";
  auto seq = read_dsrg(data);
  if (seq.frames.size() < 3) throw std::runtime_error(data + " holds fewer than 3 frames");
  const int rows = seq.frames[0].rows, cols = seq.frames[0].cols;
  auto models = load_horizon_models(ckpts, rows, cols);

  // most recent 3 consecutive frames
  const int t = int(seq.frames.size()) - 1;
  for (int i = t - 2; i < t; ++i)
    if (seq.frames[size_t(i + 1)].timestamp - seq.frames[size_t(i)].timestamp !=
        seq.cadence_seconds)
      throw std::runtime_error("last 3 frames of " + data + " are not consecutive hourly");
  SampleWindow window;
  window.seq = &seq;
  window.t_index = t;
  window.time_features = encode_time_features(seq.frames[size_t(t)].timestamp);

  std::vector<const NowcastModel<float>*> ptrs;
  for (const auto& m : models) ptrs.push_back(&m);
  auto frames = predict_window(ptrs, window);

  GridSequence result;
  result.frames = {frames[0], frames[1], frames[2]};
  write_dsrg(result, out);
  std::cout << "wrote 3 forecast frames to " << out << "\n";
  if (!pgm_prefix.empty()) {
    for (int h = 1; h <= 3; ++h) {
      const std::string path = pgm_prefix + "_h" + std::to_string(h) + ".pgm";
      write_pgm(frames[size_t(h - 1)], models[0].normalization.dsr_max, path);
      std::cout << "wrote preview " << path << "\n";
    }
  }
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string data;
  std::array<std::string, 3> ckpts;
  std::string linear_path;
  bool persistence = false;
  int horizon = 1;
  bool daylight_only = false;
  std::string json_out;
  std::string sites_csv;
  int window_start = 0, window_end = 24, utc_offset = 0;
};

std::vector<SiteSpec> read_sites_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::vector<SiteSpec> sites;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#' || line.rfind("name,", 0) == 0) continue;
    std::istringstream ls(line);
    SiteSpec s;
    std::string field;
    if (!std::getline(ls, s.name, ',')) continue;
    auto num = [&](auto& out_val) {
      if (!std::getline(ls, field, ',')) throw std::runtime_error("bad site line: " + line);
      out_val = std::stod(field);
    };
    double row = 0, col = 0;
    num(s.lat);
    num(s.lon);
    num(row);
    num(col);
    s.row = int(row);
    s.col = int(col);
    sites.push_back(s);
  }
  if (sites.empty()) throw std::runtime_error(path + " holds no sites");
  return sites;
}

int cmd_eval(const EvalArgs& a) {
  const char* source = a.persistence ? "persistence" : (!a.linear_path.empty() ? "linear" : "model");
  std::cout << "effective-config: eval data=" << a.data << " source=" << source
            << " horizon=" << a.horizon << " daylight_only=" << (a.daylight_only ? 1 : 0)
            << " json=" << a.json_out << " sites=" << a.sites_csv << "\n";
  auto seq = read_dsrg(a.data);
  if (a.horizon < 1 || a.horizon > 3) throw std::runtime_error("--horizon must be 1, 2 or 3");

  std::vector<GridFrame> preds, truths;
  EvalOptions opts;
  opts.daylight_only = a.daylight_only;
  opts.horizon = a.horizon;
  if (!seq.frames.empty())
    opts.data_range = std::to_string(seq.frames.front().timestamp) + ".." +
                      std::to_string(seq.frames.back().timestamp);

  if (a.persistence) {
    opts.model_id = "persistence";
    for (int t = 0; t + a.horizon < int(seq.frames.size()); ++t) {
      if (seq.frames[size_t(t + a.horizon)].timestamp - seq.frames[size_t(t)].timestamp !=
          a.horizon * seq.cadence_seconds)
        continue;
      auto p = seq.frames[size_t(t)];
      p.timestamp = seq.frames[size_t(t + a.horizon)].timestamp;
      preds.push_back(std::move(p));
      truths.push_back(seq.frames[size_t(t + a.horizon)]);
    }
  } else if (!a.linear_path.empty()) {
    if (a.horizon != 1) throw std::runtime_error("the linear baseline predicts horizon 1 only");
    std::ifstream f(a.linear_path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + a.linear_path);
    auto model = load_baseline(f);
    opts.model_id = "linear";
    for (int t = 2; t + 1 < int(seq.frames.size()); ++t) {
      bool ok = true;
      for (int i = t - 2; i <= t; ++i)
        ok = ok && seq.frames[size_t(i + 1)].timestamp - seq.frames[size_t(i)].timestamp ==
                       seq.cadence_seconds;
      if (!ok) continue;
      preds.push_back(predict_linear_at(model, seq, t));
      truths.push_back(seq.frames[size_t(t + 1)]);
    }
  } else {
    if (seq.frames.empty()) throw std::runtime_error(a.data + " holds no frames");
    auto models = load_horizon_models(a.ckpts, seq.frames[0].rows, seq.frames[0].cols);
    opts.model_id = std::string(cell_type_name(models[0].config.cell_type)) + "-h" +
                    std::to_string(a.horizon);
    auto windows = build_windows(seq);
    if (windows.empty())
      throw std::runtime_error(a.data + " yields no evaluation windows (need 6+ gap-free frames)");
    std::vector<const NowcastModel<float>*> ptrs;
    for (const auto& m : models) ptrs.push_back(&m);
    for (const auto& w : windows) {
      auto frames = predict_window(ptrs, w);
      preds.push_back(frames[size_t(a.horizon - 1)]);
      truths.push_back(w.seq->frames[size_t(w.t_index + a.horizon)]);
    }
  }

  EvalReport report;
  if (!a.sites_csv.empty()) {
    auto sites = read_sites_csv(a.sites_csv);
    HourWindow window{a.window_start, a.window_end, a.utc_offset};
    report = site_eval(preds, truths, sites, window, opts);
  } else {
    report = stratified_rmse(preds, truths, opts);
  }
  print_report(report, std::cout);
  if (!a.json_out.empty()) {
    std::ofstream jf(a.json_out, std::ios::trunc);
    if (!jf) throw std::runtime_error("cannot write " + a.json_out);
    jf << report_to_json(report).dump(2) << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

int cmd_compare(const std::string& a_path, const std::string& b_path,
                const std::string& json_out) {
  std::cout << "effective-config: compare a=" << a_path << " b=" << b_path
            << " json=" << json_out << "\n";
  auto read_report = [](const std::string& p) {
    std::ifstream f(p);
    if (!f) throw std::runtime_error("cannot open " + p);
    return report_from_json(nlohmann::json::parse(f));
  };
  auto a = read_report(a_path);
  auto b = read_report(b_path);
  auto c = compare_reports(a, b);
  print_comparison(c, std::cout);
  if (!json_out.empty()) {
    nlohmann::json bins = nlohmann::json::array();
    for (const auto& e : c.bins)
      bins.push_back({{"lo", e.edges.lo},
                      {"hi", std::isfinite(e.edges.hi) ? nlohmann::json(e.edges.hi)
                                                       : nlohmann::json(nullptr)},
                      {"a_rmse", e.a_rmse},
                      {"b_rmse", e.b_rmse},
                      {"decrease_pct", e.decrease_pct}});
    nlohmann::json j{{"overall",
                      {{"a_rmse", c.overall.a_rmse},
                       {"b_rmse", c.overall.b_rmse},
                       {"decrease_pct", c.overall.decrease_pct}}},
                     {"bins", bins}};
    std::ofstream jf(json_out, std::ios::trunc);
    if (!jf) throw std::runtime_error("cannot write " + json_out);
    jf << j.dump(2) << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// serve
// ---------------------------------------------------------------------------

int cmd_serve(const std::array<std::string, 3>& ckpts, const std::string& host, int port,
              const std::string& snapshot_path, const std::string& warm_data) {
#ifndef NOWCAST_ENABLE_HTTP
  (void)ckpts;
  (void)host;
  (void)port;
  (void)snapshot_path;
  (void)warm_data;
  throw std::runtime_error("serve support was disabled at build time");
#else
  std::cout << "effective-config: serve h1=" << ckpts[0] << " h2=" << ckpts[1]
            << " h3=" << ckpts[2] << " host=" << host << " port=" << port
            << " snapshot=" << snapshot_path << " warm_data=" << warm_data << "\n";
  auto models = load_horizon_models(ckpts, -1, -1);
  const int rows = models[0].config.rows, cols = models[0].config.cols;
  for (const auto& m : models)
    if (m.config.rows != rows || m.config.cols != cols)
      throw std::runtime_error("horizon checkpoints disagree on grid shape");
  ForecastService svc(std::move(models), snapshot_path);
  if (!warm_data.empty()) {
    auto seq = read_dsrg(warm_data);
    for (const auto& f : seq.frames) svc.ingest_frame(f);
    std::cout << "warmed with " << seq.frames.size() << " frames from " << warm_data << "\n";
  }

  httplib::Server srv;
  auto send = [](httplib::Response& res, const HttpResult& r) {
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  };
  srv.Get("/v1/health", [&](const httplib::Request&, httplib::Response& res) {
    send(res, svc.handle_health());
  });
  srv.Get("/v1/point", [&](const httplib::Request& req, httplib::Response& res) {
    if (!req.has_param("lat") || !req.has_param("lon") || !req.has_param("h")) {
      send(res, http_error(400, "bad_request", "required query parameters: lat, lon, h"));
      return;
    }
    try {
      send(res, svc.handle_point(std::stod(req.get_param_value("lat")),
                                 std::stod(req.get_param_value("lon")),
                                 std::stoi(req.get_param_value("h"))));
    } catch (const std::exception&) {
      send(res, http_error(400, "bad_request", "lat, lon must be numbers and h an integer"));
    }
  });
  srv.Get(R"(/v1/grid/(\d+))", [&](const httplib::Request& req, httplib::Response& res) {
    send(res, svc.handle_grid(std::atoi(req.matches[1].str().c_str())));
  });
  srv.Post("/v1/ingest", [&](const httplib::Request& req, httplib::Response& res) {
    send(res, svc.handle_ingest(req.body));
  });
  std::cout << "listening on " << host << ":" << port << "\n";
  if (!srv.listen(host, port)) throw std::runtime_error("failed to bind " + host + ":" + std::to_string(port));
  return 0;
#endif
}

}  // namespace

int main(int argc, char** argv) {
  apply_thread_cap();
  CLI::App app{"Spatiotemporal DSR nowcasting pipeline"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "Write a synthetic cloud-advection DSRG file");
  std::string gen_out;
  SyntheticParams gp;
  std::uint64_t gen_seed = 0;
  gen->add_option("--out", gen_out, "Output DSRG path")->required();
  gen->add_option("--rows", gp.rows, "Grid rows");
  gen->add_option("--cols", gp.cols, "Grid cols");
  gen->add_option("--hours", gp.hours, "Number of hourly frames");
  gen->add_option("--seed", gen_seed, "Random seed");
  gen->add_option("--clouds", gp.cloud_count, "Cloud blob count");
  gen->add_option("--vel-row", gp.vel_row, "Cloud velocity, rows/hour");
  gen->add_option("--vel-col", gp.vel_col, "Cloud velocity, cols/hour");
  gen->add_option("--blob-sigma", gp.blob_sigma, "Cloud blob radius (pixels)");
  gen->add_option("--opacity", gp.opacity, "Cloud opacity in [0,1]");
  gen->add_option("--dsr-max", gp.dsr_max, "Clear-sky peak DSR (W/m2)");

  // import
  auto* imp = app.add_subcommand("import", "Convert timestamp,row,col,value CSV to DSRG");
  std::string imp_csv, imp_out;
  GeoExtent imp_extent{30, 50, -120, -90};
  imp->add_option("--csv", imp_csv, "Input CSV path")->required();
  imp->add_option("--out", imp_out, "Output DSRG path")->required();
  imp->add_option("--lat-min", imp_extent.lat_min, "Extent: south edge");
  imp->add_option("--lat-max", imp_extent.lat_max, "Extent: north edge");
  imp->add_option("--lon-min", imp_extent.lon_min, "Extent: west edge");
  imp->add_option("--lon-max", imp_extent.lon_max, "Extent: east edge");

  // train
  auto* tr = app.add_subcommand("train", "Train a per-horizon model or the linear baseline");
  TrainArgs ta;
  std::string tr_optimizer = "adam";
  tr->add_option("--data", ta.data, "Training DSRG path")->required();
  tr->add_option("--out", ta.out, "Output checkpoint path")->required();
  tr->add_option("--horizon", ta.horizon, "Forecast horizon (1|2|3)")->check(CLI::Range(1, 3));
  tr->add_option("--cell", ta.cell, "Cell type: convlstm|peephole|convgru|linear");
  tr->add_option("--channels", ta.channels, "Hidden channels per recurrent layer");
  tr->add_option("--kernel", ta.kernel, "Recurrent kernel size (odd)");
  tr->add_option("--head-kernel", ta.head_kernel, "Output head kernel (kT kH kW)")->expected(3);
  tr->add_flag("--no-time-features", ta.no_time_features, "Feed DSR only (no month/hour one-hot)");
  tr->add_option("--dsr-max", ta.dsr_max, "Normalization divisor (W/m2)");
  tr->add_flag("--no-clip", ta.no_clip, "Do not clip values above dsr-max");
  tr->add_option("--config", ta.config_path, "key=value training config file");
  tr->add_option("--history", ta.history_path, "Write epoch,train_loss,val_loss CSV here");
  tr->add_option("--lr", ta.tc.learning_rate, "Learning rate");
  tr->add_option("--batch-size", ta.tc.batch_size, "Mini-batch size");
  tr->add_option("--epochs", ta.tc.max_epochs, "Maximum epochs");
  tr->add_option("--optimizer", tr_optimizer, "adam|sgd");
  tr->add_option("--seed", ta.tc.seed, "Random seed");
  tr->add_option("--patience", ta.tc.patience, "Early-stop patience (epochs)");
  tr->add_option("--val-fraction", ta.tc.validation_fraction, "Validation split fraction");
  tr->add_option("--clip-norm", ta.tc.clip_norm, "Global gradient-norm cap");
  tr->add_option("--patch", ta.patch, "Linear baseline patch size");
  tr->add_option("--lambda", ta.lambda, "Linear baseline ridge strength");
  tr->add_option("--max-rows", ta.max_rows, "Linear baseline sample cap");

  // predict
  auto* pr = app.add_subcommand("predict", "Forecast 3 hours from the latest frames");
  std::string pr_data, pr_out, pr_pgm;
  std::array<std::string, 3> pr_ckpts;
  pr->add_option("--data", pr_data, "Input DSRG path (last 3 frames are used)")->required();
  pr->add_option("--h1", pr_ckpts[0], "Horizon-1 checkpoint");
  pr->add_option("--h2", pr_ckpts[1], "Horizon-2 checkpoint");
  pr->add_option("--h3", pr_ckpts[2], "Horizon-3 checkpoint");
  pr->add_option("--out", pr_out, "Output DSRG path (3 frames)")->required();
  pr->add_option("--pgm", pr_pgm, "Write <prefix>_h{1,2,3}.pgm previews");

  // eval
  auto* ev = app.add_subcommand("eval", "Stratified RMSE report");
  EvalArgs ea;
  ev->add_option("--data", ea.data, "Truth DSRG path")->required();
  ev->add_option("--h1", ea.ckpts[0], "Horizon-1 checkpoint");
  ev->add_option("--h2", ea.ckpts[1], "Horizon-2 checkpoint");
  ev->add_option("--h3", ea.ckpts[2], "Horizon-3 checkpoint");
  ev->add_option("--linear", ea.linear_path, "Evaluate a linear-baseline checkpoint instead");
  ev->add_flag("--persistence", ea.persistence, "Evaluate the persistence baseline instead");
  ev->add_option("--horizon", ea.horizon, "Horizon to report (1|2|3)")->check(CLI::Range(1, 3));
  ev->add_flag("--daylight-only", ea.daylight_only, "Restrict to pixels with true DSR > 0");
  ev->add_option("--json", ea.json_out, "Write the JSON report here");
  ev->add_option("--sites", ea.sites_csv, "Site CSV (name,lat,lon,row,col) for site-level eval");
  ev->add_option("--window-start", ea.window_start, "Local window start hour");
  ev->add_option("--window-end", ea.window_end, "Local window end hour (exclusive)");
  ev->add_option("--utc-offset", ea.utc_offset, "Local time offset from UTC in hours");

  // compare
  auto* cp = app.add_subcommand("compare", "Relative RMSE deltas between two reports");
  std::string cp_a, cp_b, cp_json;
  cp->add_option("--a", cp_a, "Reference report JSON")->required();
  cp->add_option("--b", cp_b, "Candidate report JSON")->required();
  cp->add_option("--json", cp_json, "Write the comparison JSON here");

  // serve
  auto* sv = app.add_subcommand("serve", "HTTP prediction service");
  std::array<std::string, 3> sv_ckpts;
  std::string sv_host = "127.0.0.1", sv_snapshot, sv_warm;
  int sv_port = 8080;
  sv->add_option("--h1", sv_ckpts[0], "Horizon-1 checkpoint");
  sv->add_option("--h2", sv_ckpts[1], "Horizon-2 checkpoint");
  sv->add_option("--h3", sv_ckpts[2], "Horizon-3 checkpoint");
  sv->add_option("--host", sv_host, "Bind address");
  sv->add_option("--port", sv_port, "Bind port");
  sv->add_option("--snapshot", sv_snapshot, "ForecastStore snapshot file (persisted)");
  sv->add_option("--warm", sv_warm, "DSRG file ingested at startup");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_generate(gen_out, gp, gen_seed);
    if (imp->parsed()) return cmd_import(imp_csv, imp_out, imp_extent);
    if (tr->parsed()) {
      if (tr_optimizer == "sgd") ta.tc.optimizer = OptimizerKind::sgd;
      else if (tr_optimizer != "adam") throw std::runtime_error("--optimizer must be adam or sgd");
      return cmd_train(ta);
    }
    if (pr->parsed()) return cmd_predict(pr_data, pr_ckpts, pr_out, pr_pgm);
    if (ev->parsed()) return cmd_eval(ea);
    if (cp->parsed()) return cmd_compare(cp_a, cp_b, cp_json);
    if (sv->parsed()) return cmd_serve(sv_ckpts, sv_host, sv_port, sv_snapshot, sv_warm);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
