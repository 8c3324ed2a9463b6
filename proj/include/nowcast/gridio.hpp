#pragma once

#include <array>
#include <cmath>
#include <cstring>
#include <ctime>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "nowcast/tensor.hpp"

namespace nowcast {

struct GeoExtent {
  double lat_min = 0, lat_max = 1, lon_min = 0, lon_max = 1;
  bool well_ordered() const { return lat_min < lat_max && lon_min < lon_max; }
  bool operator==(const GeoExtent&) const = default;
};

/// One hourly DSR raster in W/m^2. Missing pixels are NaN.
struct GridFrame {
  std::int64_t timestamp = 0;  // UTC epoch seconds
  int rows = 0, cols = 0;
  ArrayX<float> values;  // row-major, length rows*cols
  GeoExtent extent;

  void validate() const {
    if (rows <= 0 || cols <= 0 || values.size() != Eigen::Index(rows) * cols)
      throw std::invalid_argument("GridFrame: rows*cols != values length");
    if (!extent.well_ordered()) throw std::invalid_argument("GridFrame: extent not well-ordered");
    for (Eigen::Index i = 0; i < values.size(); ++i) {
      const float v = values[i];
      if (std::isnan(v)) continue;  // missing-data sentinel
      if (!std::isfinite(v) || v < 0.f)
        throw std::invalid_argument("GridFrame: values must be finite and >= 0 (or NaN)");
    }
  }
};

struct GridSequence {
  std::vector<GridFrame> frames;
  int cadence_seconds = 3600;

  void validate() const {
    for (size_t i = 0; i < frames.size(); ++i) {
      frames[i].validate();
      if (i > 0) {
        if (frames[i].timestamp <= frames[i - 1].timestamp)
          throw std::invalid_argument("GridSequence: timestamps not strictly increasing");
        if (frames[i].rows != frames[0].rows || frames[i].cols != frames[0].cols ||
            !(frames[i].extent == frames[0].extent))
          throw std::invalid_argument("GridSequence: frames disagree on shape or extent");
      }
    }
  }

  bool operator==(const GridSequence& o) const {
    if (cadence_seconds != o.cadence_seconds || frames.size() != o.frames.size()) return false;
    for (size_t i = 0; i < frames.size(); ++i) {
      const auto& a = frames[i];
      const auto& b = o.frames[i];
      if (a.timestamp != b.timestamp || a.rows != b.rows || a.cols != b.cols ||
          !(a.extent == b.extent))
        return false;
      // NaN sentinels compare equal by bit pattern
      if (std::memcmp(a.values.data(), b.values.data(), sizeof(float) * size_t(a.values.size())))
        return false;
    }
    return true;
  }
};

struct NormalizationSpec {
  float dsr_max = 1200.f;
  bool clip = true;
};

// ---------------------------------------------------------------------------
// DSRG binary format (little-endian):
//   magic "DSRG" | version u16=1 | rows u32 | cols u32 | frame_count u32 |
//   extent 4 x f64 | per frame: timestamp i64, rows*cols f32 row-major.
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));  // little-endian host
}

template <class T>
T get(std::istream& is, const std::string& what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("DSRG: truncated payload (" + what + ")");
  return v;
}

}  // namespace detail

inline constexpr size_t kDsrgHeaderBytes = 4 + 2 + 4 + 4 + 4 + 4 * 8;

inline size_t write_sequence(const GridSequence& seq, std::ostream& os) {
  seq.validate();
  const auto start = os.tellp();
  os.write("DSRG", 4);
  detail::put<std::uint16_t>(os, 1);
  const int rows = seq.frames.empty() ? 0 : seq.frames[0].rows;
  const int cols = seq.frames.empty() ? 0 : seq.frames[0].cols;
  const GeoExtent ext = seq.frames.empty() ? GeoExtent{} : seq.frames[0].extent;
  detail::put<std::uint32_t>(os, std::uint32_t(rows));
  detail::put<std::uint32_t>(os, std::uint32_t(cols));
  detail::put<std::uint32_t>(os, std::uint32_t(seq.frames.size()));
  detail::put<double>(os, ext.lat_min);
  detail::put<double>(os, ext.lat_max);
  detail::put<double>(os, ext.lon_min);
  detail::put<double>(os, ext.lon_max);
  for (const auto& f : seq.frames) {
    detail::put<std::int64_t>(os, f.timestamp);
    os.write(reinterpret_cast<const char*>(f.values.data()), std::streamsize(sizeof(float)) * f.values.size());
  }
  if (!os) throw std::runtime_error("DSRG: write failed");
  return size_t(os.tellp() - start);
}

inline GridSequence read_sequence(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "DSRG", 4) != 0) throw std::runtime_error("DSRG: bad magic");
  const auto version = detail::get<std::uint16_t>(is, "version");
  if (version != 1)
    throw std::runtime_error("DSRG: unsupported version " + std::to_string(version));
  const auto rows = detail::get<std::uint32_t>(is, "rows");
  const auto cols = detail::get<std::uint32_t>(is, "cols");
  const auto count = detail::get<std::uint32_t>(is, "frame_count");
  if ((count > 0 && (rows == 0 || cols == 0)) || rows > (1u << 20) || cols > (1u << 20))
    throw std::runtime_error("DSRG: malformed shape " + std::to_string(rows) + "x" +
                             std::to_string(cols));
  GeoExtent ext;
  ext.lat_min = detail::get<double>(is, "extent");
  ext.lat_max = detail::get<double>(is, "extent");
  ext.lon_min = detail::get<double>(is, "extent");
  ext.lon_max = detail::get<double>(is, "extent");
  GridSequence seq;
  seq.frames.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    GridFrame f;
    f.rows = int(rows);
    f.cols = int(cols);
    f.extent = ext;
    f.timestamp = detail::get<std::int64_t>(is, "frame " + std::to_string(i));
    f.values.resize(Eigen::Index(rows) * cols);
    is.read(reinterpret_cast<char*>(f.values.data()), std::streamsize(sizeof(float)) * f.values.size());
    if (!is) throw std::runtime_error("DSRG: truncated payload (frame " + std::to_string(i) + ")");
    if (i > 0 && f.timestamp <= seq.frames.back().timestamp)
      throw std::runtime_error("DSRG: non-increasing timestamps at frame " + std::to_string(i));
    seq.frames.push_back(std::move(f));
  }
  return seq;
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// Pixel -> min(v, dsr_max)/dsr_max (clip) or v/dsr_max; NaN sentinel -> 0.
template <class S>
Tensor<S> normalize(const GridFrame& frame, const NormalizationSpec& spec) {
  if (!(spec.dsr_max > 0)) throw std::invalid_argument("NormalizationSpec: dsr_max must be > 0");
  Tensor<S> out({frame.rows, frame.cols});
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    const float v = frame.values[i];
    if (std::isnan(v)) {
      out[i] = S(0);
    } else {
      const float c = spec.clip ? std::min(v, spec.dsr_max) : v;
      out[i] = S(c) / S(spec.dsr_max);
    }
  }
  return out;
}

/// Mask tensor: 1 where the pixel is observed, 0 where it is the sentinel.
template <class S>
Tensor<S> observation_mask(const GridFrame& frame) {
  Tensor<S> out({frame.rows, frame.cols});
  for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = std::isnan(frame.values[i]) ? S(0) : S(1);
  return out;
}

template <class S>
S denormalize_value(S v, const NormalizationSpec& spec) {
  return v * S(spec.dsr_max);
}

// ---------------------------------------------------------------------------
// Time features and sample windows
// ---------------------------------------------------------------------------

/// 36-vector: [0,12) month one-hot, [12,36) UTC-hour one-hot.
inline std::array<float, 36> encode_time_features(std::int64_t timestamp) {
  std::time_t t = static_cast<std::time_t>(timestamp);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::array<float, 36> out{};
  out[size_t(tm.tm_mon)] = 1.f;
  out[size_t(12 + tm.tm_hour)] = 1.f;
  return out;
}

inline int utc_hour(std::int64_t timestamp) {
  std::time_t t = static_cast<std::time_t>(timestamp);
  std::tm tm{};
  gmtime_r(&t, &tm);
  return tm.tm_hour;
}

/// 6 consecutive hourly frames: inputs t-2..t, targets t+1..t+3, plus the
/// month/hour one-hot pair for hour t. Holds indices into the source sequence.
struct SampleWindow {
  const GridSequence* seq = nullptr;
  int t_index = 0;  // index of frame t
  std::array<float, 36> time_features{};

  const GridFrame& input(int i) const { return seq->frames[size_t(t_index - 2 + i)]; }
  const GridFrame& target(int i) const { return seq->frames[size_t(t_index + 1 + i)]; }
};

/// One window per index t with 2 prior and 3 following gap-free hourly frames.
inline std::vector<SampleWindow> build_windows(const GridSequence& seq) {
  std::vector<SampleWindow> out;
  const int n = int(seq.frames.size());
  if (n < 6) return out;
  for (int t = 2; t + 3 < n; ++t) {
    bool consecutive = true;
    for (int i = t - 2; i < t + 3; ++i)
      if (seq.frames[size_t(i + 1)].timestamp - seq.frames[size_t(i)].timestamp !=
          seq.cadence_seconds) {
        consecutive = false;
        break;
      }
    if (!consecutive) continue;
    SampleWindow w;
    w.seq = &seq;
    w.t_index = t;
    w.time_features = encode_time_features(seq.frames[size_t(t)].timestamp);
    out.push_back(w);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic cloud advection
// ---------------------------------------------------------------------------

struct SyntheticParams {
  int rows = 64, cols = 64, hours = 48;
  std::int64_t start_timestamp = 1577836800;  // 2020-01-01T00:00Z
  int cloud_count = 3;
  double vel_row = 0.0, vel_col = 1.0;  // pixels per hour
  double blob_sigma = 6.0;
  double opacity = 0.8;
  float dsr_max = 1200.f;
  GeoExtent extent{30.0, 50.0, -120.0, -90.0};
};

/// Clear-sky diurnal amplitude: dsr_max * sin(pi*(h-6)/12) for 6 <= h <= 18
/// UTC, zero at night.
inline double diurnal_amplitude(std::int64_t timestamp, float dsr_max) {
  std::time_t t = static_cast<std::time_t>(timestamp);
  std::tm tm{};
  gmtime_r(&t, &tm);
  const double h = tm.tm_hour + tm.tm_min / 60.0;
  if (h < 6.0 || h > 18.0) return 0.0;
  return double(dsr_max) * std::sin(M_PI * (h - 6.0) / 12.0);
}

/// Gaussian cloud blobs advected by a constant velocity with periodic wrap,
/// multiplied into the diurnal clear-sky field. Deterministic given the seed.
inline GridSequence generate_synthetic(const SyntheticParams& p, std::uint32_t seed) {
  if (p.rows < 8 || p.cols < 8) throw std::invalid_argument("generate_synthetic: rows, cols >= 8");
  if (p.hours < 6) throw std::invalid_argument("generate_synthetic: hours >= 6");
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> ur(0.0, 1.0);
  struct Blob {
    double r0, c0, amp, sigma;
  };
  std::vector<Blob> blobs;
  for (int i = 0; i < p.cloud_count; ++i)
    blobs.push_back({ur(rng) * p.rows, ur(rng) * p.cols, p.opacity * (0.6 + 0.4 * ur(rng)),
                     p.blob_sigma * (0.7 + 0.6 * ur(rng))});

  auto wrap_delta = [](double a, double b, double n) {
    double d = std::fabs(a - b);
    return std::min(d, n - d);
  };

  GridSequence seq;
  for (int t = 0; t < p.hours; ++t) {
    GridFrame f;
    f.timestamp = p.start_timestamp + std::int64_t(t) * 3600;
    f.rows = p.rows;
    f.cols = p.cols;
    f.extent = p.extent;
    f.values.resize(Eigen::Index(p.rows) * p.cols);
    const double amp = diurnal_amplitude(f.timestamp, p.dsr_max);
    for (int r = 0; r < p.rows; ++r) {
      for (int c = 0; c < p.cols; ++c) {
        double transmission = 1.0;
        for (const auto& b : blobs) {
          const double br = std::fmod(std::fmod(b.r0 + p.vel_row * t, double(p.rows)) + p.rows,
                                      double(p.rows));
          const double bc = std::fmod(std::fmod(b.c0 + p.vel_col * t, double(p.cols)) + p.cols,
                                      double(p.cols));
          const double dr = wrap_delta(double(r), br, double(p.rows));
          const double dc = wrap_delta(double(c), bc, double(p.cols));
          const double d2 = dr * dr + dc * dc;
          transmission *= 1.0 - b.amp * std::exp(-d2 / (2.0 * b.sigma * b.sigma));
        }
        const double v = std::clamp(amp * transmission, 0.0, double(p.dsr_max));
        f.values[Eigen::Index(r) * p.cols + c] = float(v);
      }
    }
    seq.frames.push_back(std::move(f));
  }
  return seq;
}

// ---------------------------------------------------------------------------
// CSV import: lines of `timestamp,row,col,value`
// ---------------------------------------------------------------------------

inline GridSequence import_csv(std::istream& is, const GeoExtent& extent) {
  std::map<std::int64_t, std::vector<std::tuple<int, int, float>>> cells;
  int max_row = -1, max_col = -1;
  std::string line;
  size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    if (lineno == 1 && line.find("timestamp") != std::string::npos) continue;  // header
    std::int64_t ts;
    int r, c;
    float v;
    if (std::sscanf(line.c_str(), "%ld,%d,%d,%f", &ts, &r, &c, &v) != 4)
      throw std::runtime_error("CSV import: malformed line " + std::to_string(lineno));
    if (r < 0 || c < 0) throw std::runtime_error("CSV import: negative index at line " + std::to_string(lineno));
    max_row = std::max(max_row, r);
    max_col = std::max(max_col, c);
    cells[ts].push_back({r, c, v});
  }
  if (cells.empty()) throw std::runtime_error("CSV import: no data rows");
  GridSequence seq;
  for (const auto& [ts, entries] : cells) {
    GridFrame f;
    f.timestamp = ts;
    f.rows = max_row + 1;
    f.cols = max_col + 1;
    f.extent = extent;
    f.values.setConstant(Eigen::Index(f.rows) * f.cols, std::nanf(""));
    for (const auto& [r, c, v] : entries) f.values[Eigen::Index(r) * f.cols + c] = v;
    seq.frames.push_back(std::move(f));
  }
  seq.validate();
  return seq;
}

}  // namespace nowcast
