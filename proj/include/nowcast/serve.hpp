#pragma once

#include <algorithm>
#include <fstream>
#include <json.hpp>
#include <memory>
#include <mutex>
#include <sstream>

#include "nowcast/checkpoint.hpp"
#include "nowcast/network.hpp"

namespace nowcast {

// ---------------------------------------------------------------------------
// ForecastStore: immutable snapshot of the latest inputs and forecasts,
// published atomically so readers never observe a torn update.
// ---------------------------------------------------------------------------

struct ForecastSnapshot {
  std::vector<GridFrame> inputs;         // rolling buffer, oldest first, <= 3
  std::array<GridFrame, 3> predictions;  // horizons 1..3, valid when ready
  std::int64_t generated_at = 0;         // timestamp of the newest input
  bool ready = false;                    // 3 consecutive inputs + predictions
};

/// "FSNP" snapshot file: magic, version u16, generated_at i64, ready u8,
/// inputs as a DSRG blob, predictions as a DSRG blob, trailing CRC-32.
inline size_t save_snapshot(const ForecastSnapshot& s, std::ostream& os) {
  detail::ByteWriter w;
  w.put_bytes("FSNP", 4);
  w.put<std::uint16_t>(1);
  w.put<std::int64_t>(s.generated_at);
  w.put<std::uint8_t>(s.ready ? 1 : 0);
  auto put_blob = [&](const std::vector<GridFrame>& frames) {
    GridSequence seq;
    seq.frames = frames;
    std::ostringstream blob;
    write_sequence(seq, blob);
    const std::string b = blob.str();
    w.put<std::uint64_t>(b.size());
    w.put_bytes(b.data(), b.size());
  };
  put_blob(s.inputs);
  put_blob(s.ready ? std::vector<GridFrame>(s.predictions.begin(), s.predictions.end())
                   : std::vector<GridFrame>{});
  w.put<std::uint32_t>(crc32(w.buf.data(), w.buf.size()));
  os.write(w.buf.data(), std::streamsize(w.buf.size()));
  if (!os) throw std::runtime_error("snapshot: write failed");
  return w.buf.size();
}

inline ForecastSnapshot load_snapshot(std::istream& is) {
  std::string buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (buf.size() < 10 || buf.compare(0, 4, "FSNP") != 0)
    throw std::runtime_error("snapshot: bad magic");
  const std::uint32_t stored =
      std::uint32_t(std::uint8_t(buf[buf.size() - 4])) |
      std::uint32_t(std::uint8_t(buf[buf.size() - 3])) << 8 |
      std::uint32_t(std::uint8_t(buf[buf.size() - 2])) << 16 |
      std::uint32_t(std::uint8_t(buf[buf.size() - 1])) << 24;
  if (crc32(buf.data(), buf.size() - 4) != stored)
    throw std::runtime_error("snapshot: checksum mismatch (corrupted or truncated file)");
  detail::ByteReader r(buf);
  r.pos = 4;
  if (r.get<std::uint16_t>("version") != 1)
    throw std::runtime_error("snapshot: unsupported version");
  ForecastSnapshot s;
  s.generated_at = r.get<std::int64_t>("generated_at");
  s.ready = r.get<std::uint8_t>("ready") != 0;
  auto get_blob = [&] {
    const auto n = r.get<std::uint64_t>("blob length");
    std::string b(n, '\0');
    r.get_bytes(b.data(), n, "blob");
    std::istringstream bs(b);
    return read_sequence(bs).frames;
  };
  s.inputs = get_blob();
  auto preds = get_blob();
  if (s.ready) {
    if (preds.size() != 3) throw std::runtime_error("snapshot: expected 3 prediction frames");
    for (int h = 0; h < 3; ++h) s.predictions[size_t(h)] = preds[size_t(h)];
  }
  if (r.pos != buf.size() - 4) throw std::runtime_error("snapshot: trailing bytes");
  return s;
}

// ---------------------------------------------------------------------------
// Service core: transport-independent handlers returning status + body
// ---------------------------------------------------------------------------

struct HttpResult {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

inline HttpResult http_error(int status, const std::string& error, const std::string& detail) {
  return {status, "application/json", nlohmann::json{{"error", error}, {"detail", detail}}.dump()};
}

class ForecastService {
 public:
  /// Takes ownership of one model per horizon 1..3 (same grid shape).
  ForecastService(std::vector<NowcastModel<float>> models, std::string snapshot_path = "")
      : models_(std::move(models)), snapshot_path_(std::move(snapshot_path)) {
    if (models_.size() != 3) throw std::invalid_argument("serve: need exactly 3 horizon models");
    std::sort(models_.begin(), models_.end(),
              [](const auto& a, const auto& b) { return a.config.horizon < b.config.horizon; });
    for (int h = 1; h <= 3; ++h) {
      const auto& m = models_[size_t(h - 1)];
      if (m.config.horizon != h)
        throw std::invalid_argument("serve: missing model for horizon " + std::to_string(h));
      if (m.config.rows != models_[0].config.rows || m.config.cols != models_[0].config.cols)
        throw std::invalid_argument("serve: horizon models disagree on grid shape");
    }
    snapshot_ = std::make_shared<const ForecastSnapshot>();
    if (!snapshot_path_.empty()) {
      std::ifstream f(snapshot_path_, std::ios::binary);
      if (f) {
        auto s = load_snapshot(f);
        if (!s.inputs.empty() &&
            (s.inputs[0].rows != models_[0].config.rows ||
             s.inputs[0].cols != models_[0].config.cols))
          throw std::runtime_error("snapshot: grid shape does not match the models");
        snapshot_ = std::make_shared<const ForecastSnapshot>(std::move(s));
      }
    }
  }

  int rows() const { return models_[0].config.rows; }
  int cols() const { return models_[0].config.cols; }

  std::shared_ptr<const ForecastSnapshot> snapshot() const {
    std::lock_guard<std::mutex> lock(read_mu_);
    return snapshot_;
  }

  /// Rolls the input buffer and, once 3 consecutive hourly frames are
  /// buffered, recomputes all horizons and atomically publishes the result.
  /// Returns whether forecasts are available.
  bool ingest_frame(const GridFrame& frame) {
    std::lock_guard<std::mutex> writer(write_mu_);
    frame.validate();
    if (frame.rows != rows() || frame.cols != cols())
      throw std::invalid_argument("ingest: frame shape " + std::to_string(frame.rows) + "x" +
                                  std::to_string(frame.cols) + " does not match configured " +
                                  std::to_string(rows()) + "x" + std::to_string(cols()));
    auto current = snapshot();
    if (!current->inputs.empty() && frame.timestamp <= current->inputs.back().timestamp)
      throw std::invalid_argument("ingest: stale timestamp (not newer than the stored latest)");

    auto next = std::make_shared<ForecastSnapshot>();
    next->inputs = current->inputs;
    // a cadence gap invalidates the history; restart the buffer
    if (!next->inputs.empty() &&
        frame.timestamp - next->inputs.back().timestamp != kCadenceSeconds)
      next->inputs.clear();
    next->inputs.push_back(frame);
    if (next->inputs.size() > 3) next->inputs.erase(next->inputs.begin());
    next->generated_at = frame.timestamp;

    if (next->inputs.size() == 3) {
      GridSequence seq;
      seq.frames = next->inputs;
      SampleWindow window;
      window.seq = &seq;
      window.t_index = 2;
      window.time_features = encode_time_features(seq.frames[2].timestamp);
      std::vector<const NowcastModel<float>*> ptrs;
      for (const auto& m : models_) ptrs.push_back(&m);
      next->predictions = predict_window(ptrs, window);
      next->ready = true;
    }

    if (!snapshot_path_.empty()) {
      std::ofstream f(snapshot_path_, std::ios::binary | std::ios::trunc);
      save_snapshot(*next, f);
    }
    {
      std::lock_guard<std::mutex> lock(read_mu_);
      snapshot_ = std::move(next);
    }
    return snapshot()->ready;
  }

  // ---- endpoint handlers -------------------------------------------------

  HttpResult handle_health() const {
    auto s = snapshot();
    nlohmann::json ids = nlohmann::json::array();
    for (const auto& m : models_)
      ids.push_back(std::string(cell_type_name(m.config.cell_type)) + "-h" +
                    std::to_string(m.config.horizon));
    return {200, "application/json",
            nlohmann::json{{"status", s->ready ? "ok" : "warming_up"},
                           {"frames_buffered", s->inputs.size()},
                           {"generated_at", s->generated_at},
                           {"models", ids}}
                .dump()};
  }

  HttpResult handle_point(double lat, double lon, int horizon) const {
    if (horizon < 1 || horizon > 3)
      return http_error(400, "bad_horizon", "horizon must be 1, 2 or 3");
    auto s = snapshot();
    if (!s->ready)
      return http_error(503, "warming_up",
                        "need 3 consecutive hourly frames, have " +
                            std::to_string(s->inputs.size()));
    const GridFrame& grid = s->predictions[size_t(horizon - 1)];
    const auto& e = grid.extent;
    if (lat < e.lat_min || lat > e.lat_max || lon < e.lon_min || lon > e.lon_max)
      return http_error(404, "out_of_extent", "coordinates outside the forecast grid");
    // nearest pixel center; row 0 is the northern edge (latitude descends)
    const double dlat = (e.lat_max - e.lat_min) / grid.rows;
    const double dlon = (e.lon_max - e.lon_min) / grid.cols;
    int r = int((e.lat_max - lat) / dlat);
    int c = int((lon - e.lon_min) / dlon);
    r = std::clamp(r, 0, grid.rows - 1);
    c = std::clamp(c, 0, grid.cols - 1);
    const float v = grid.values[Eigen::Index(r) * grid.cols + c];
    nlohmann::json out{{"valid_time", grid.timestamp}, {"generated_at", s->generated_at}};
    if (std::isnan(v)) out["dsr_wm2"] = nullptr;
    else out["dsr_wm2"] = v;
    return {200, "application/json", out.dump()};
  }

  HttpResult handle_grid(int horizon) const {
    if (horizon < 1 || horizon > 3)
      return http_error(400, "bad_horizon", "horizon must be 1, 2 or 3");
    auto s = snapshot();
    if (!s->ready)
      return http_error(503, "warming_up",
                        "need 3 consecutive hourly frames, have " +
                            std::to_string(s->inputs.size()));
    GridSequence seq;
    seq.frames = {s->predictions[size_t(horizon - 1)]};
    std::ostringstream os;
    write_sequence(seq, os);
    return {200, "application/octet-stream", os.str()};
  }

  HttpResult handle_ingest(const std::string& body) {
    try {
      std::istringstream is(body);
      auto seq = read_sequence(is);
      if (seq.frames.empty()) return http_error(400, "bad_request", "no frames in DSRG body");
      bool ready = false;
      for (const auto& f : seq.frames) ready = ingest_frame(f);
      auto s = snapshot();
      return {200, "application/json",
              nlohmann::json{{"status", ready ? "ok" : "warming_up"},
                             {"frames_buffered", s->inputs.size()},
                             {"generated_at", s->generated_at}}
                  .dump()};
    } catch (const std::invalid_argument& e) {
      return http_error(409, "rejected", e.what());
    } catch (const std::runtime_error& e) {
      return http_error(400, "bad_request", e.what());
    }
  }

 private:
  static constexpr std::int64_t kCadenceSeconds = 3600;
  std::vector<NowcastModel<float>> models_;
  std::string snapshot_path_;
  std::shared_ptr<const ForecastSnapshot> snapshot_;
  mutable std::mutex read_mu_;
  std::mutex write_mu_;
};

}  // namespace nowcast
