#pragma once

#include <istream>
#include <numeric>
#include <ostream>

#include "nowcast/checkpoint.hpp"
#include "nowcast/gridio.hpp"

namespace nowcast {

// ---------------------------------------------------------------------------
// Pixel-wise linear baseline: predicts a pixel at t+1 from the three prior
// hourly patches centered on it, with the same weights at every location.
// ---------------------------------------------------------------------------

/// Rectangular pixel region (inclusive origin, exclusive end).
struct Region {
  int row0 = 0, col0 = 0, rows = 0, cols = 0;

  void validate(int grid_rows, int grid_cols) const {
    if (rows <= 0 || cols <= 0 || row0 < 0 || col0 < 0 || row0 + rows > grid_rows ||
        col0 + cols > grid_cols)
      throw std::invalid_argument("region does not fit the grid");
  }
};

/// The largest region whose pixels all admit a full patch: offsets span
/// [-p/2, p/2 - 1], so valid centers are rows [p/2, R - p/2].
inline Region interior_region(int grid_rows, int grid_cols, int patch_size) {
  const int h = patch_size / 2;
  Region r{h, h, grid_rows - patch_size + 1, grid_cols - patch_size + 1};
  if (r.rows <= 0 || r.cols <= 0)
    throw std::invalid_argument("grid too small for any full patch");
  return r;
}

struct LinearPixelModel {
  int patch_size = 40;
  ArrayX<double> weights;  // 3 * patch_size^2, (hour, row, col) flattened
  double intercept = 0;
  NormalizationSpec normalization;

  void validate() const {
    if (patch_size < 2 || patch_size % 2 != 0)
      throw std::invalid_argument("linear baseline: patch_size must be even and >= 2");
    if (weights.size() != Eigen::Index(3) * patch_size * patch_size)
      throw std::invalid_argument("linear baseline: weight count must be 3*patch_size^2");
    if (!weights.isFinite().all() || !std::isfinite(intercept))
      throw std::invalid_argument("linear baseline: non-finite coefficients");
  }

  Eigen::Index feature_count() const { return Eigen::Index(3) * patch_size * patch_size; }
  /// Feature index of (hour h in 0..2, patch offset dr, dc).
  Eigen::Index feature_index(int h, int dr, int dc) const {
    const int p = patch_size;
    return (Eigen::Index(h) * p + (dr + p / 2)) * p + (dc + p / 2);
  }
};

namespace detail {

/// Fills `row` (3*p^2 doubles) with the patches centered on (r, c) from the
/// three frames ending at t. Returns false when any pixel is missing or
/// outside the grid.
inline bool fill_feature_row(const GridSequence& seq, int t, int r, int c, int p, double* row) {
  const int h = p / 2;
  const GridFrame& f0 = seq.frames[size_t(t - 2)];
  if (r - h < 0 || c - h < 0 || r + h - 1 >= f0.rows || c + h - 1 >= f0.cols) return false;
  for (int ht = 0; ht < 3; ++ht) {
    const GridFrame& f = seq.frames[size_t(t - 2 + ht)];
    for (int dr = -h; dr < h; ++dr) {
      const float* src = f.values.data() + Eigen::Index(r + dr) * f.cols + (c - h);
      double* dst = row + (Eigen::Index(ht) * p + (dr + h)) * p;
      for (int k = 0; k < p; ++k) {
        if (std::isnan(src[k])) return false;
        dst[k] = double(src[k]);
      }
    }
  }
  return true;
}

/// Streaming normal-equations accumulator for ridge regression with an
/// unpenalized intercept (the trailing augmented all-ones column). Rows are
/// buffered and folded into the Gram matrix with rank-k updates so the
/// accumulation runs at GEMM speed instead of one rank-1 update per sample.
struct RidgeAccumulator {
  Eigen::MatrixXd xtx;  // lower triangle holds the accumulated Gram matrix
  Eigen::VectorXd xty;
  Eigen::Index n_features = 0;
  long n_rows = 0;

  explicit RidgeAccumulator(Eigen::Index features, Eigen::Index buffer_rows = 256)
      : xtx(Eigen::MatrixXd::Zero(features + 1, features + 1)),
        xty(Eigen::VectorXd::Zero(features + 1)),
        n_features(features),
        buffer_(buffer_rows, features + 1),
        targets_(buffer_rows) {}

  void add_row(const double* feats, double target) {
    buffer_.row(filled_).head(n_features) = Eigen::Map<const Eigen::RowVectorXd>(feats, n_features);
    buffer_(filled_, n_features) = 1.0;
    targets_(filled_) = target;
    n_rows += 1;
    if (++filled_ == buffer_.rows()) flush();
  }

  /// Solves (X'X + lambda I) w = X'y; the intercept row is not penalized.
  void solve(double lambda, ArrayX<double>& weights, double& intercept) {
    if (n_rows < 1) throw std::invalid_argument("fit_linear: at least one sample required");
    flush();
    Eigen::MatrixXd a = xtx.selfadjointView<Eigen::Lower>();
    a.diagonal().head(n_features).array() += lambda;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
    const double dmax = ldlt.vectorD().cwiseAbs().maxCoeff();
    if (ldlt.info() != Eigen::Success || !(dmax > 0))
      throw std::runtime_error("fit_linear: singular system (try ridge lambda > 0)");
    // without regularization a rank-deficient Gram matrix shows up as a
    // (near-)zero pivot; with lambda > 0 the system is positive definite
    if (lambda <= 0 && ldlt.vectorD().cwiseAbs().minCoeff() <= 1e-12 * dmax)
      throw std::runtime_error("fit_linear: singular system (try ridge lambda > 0)");
    Eigen::VectorXd w = ldlt.solve(xty);
    if (!w.allFinite()) throw std::runtime_error("fit_linear: singular system (try ridge lambda > 0)");
    weights = w.head(n_features).array();
    intercept = w(n_features);
  }

 private:
  void flush() {
    if (filled_ == 0) return;
    auto rows = buffer_.topRows(filled_);
    xtx.selfadjointView<Eigen::Lower>().rankUpdate(rows.transpose(), 1.0);
    xty.noalias() += rows.transpose() * targets_.head(filled_);
    filled_ = 0;
  }

  RowMat<double> buffer_;
  Eigen::VectorXd targets_;
  Eigen::Index filled_ = 0;
};

}  // namespace detail

/// Enumerates rows (pixel, time) over the region for every usable hour t
/// (2 <= t <= n-2, target at t+1). Rows touching a missing pixel are skipped.
struct PatchSamples {
  RowMat<double> features;  // n_rows x 3p^2
  ArrayX<double> targets;
};

inline PatchSamples extract_patch_samples(const GridSequence& seq, const Region& region,
                                          int patch_size = 40) {
  if (seq.frames.size() < 4)
    throw std::invalid_argument("extract_patch_samples: need at least 4 frames");
  const GridFrame& f0 = seq.frames[0];
  region.validate(f0.rows, f0.cols);
  const Region interior = interior_region(f0.rows, f0.cols, patch_size);
  if (region.row0 < interior.row0 || region.col0 < interior.col0 ||
      region.row0 + region.rows > interior.row0 + interior.rows ||
      region.col0 + region.cols > interior.col0 + interior.cols)
    throw std::invalid_argument("extract_patch_samples: region too close to the grid edge for full patches");

  const Eigen::Index nfeat = Eigen::Index(3) * patch_size * patch_size;
  const int usable_hours = int(seq.frames.size()) - 3;
  std::vector<double> row(static_cast<size_t>(nfeat));
  RowMat<double> features(Eigen::Index(region.rows) * region.cols * usable_hours, nfeat);
  std::vector<double> targets;
  Eigen::Index n = 0;
  for (int t = 2; t + 1 < int(seq.frames.size()); ++t) {
    const GridFrame& tgt = seq.frames[size_t(t + 1)];
    for (int r = region.row0; r < region.row0 + region.rows; ++r)
      for (int c = region.col0; c < region.col0 + region.cols; ++c) {
        const float y = tgt.values[Eigen::Index(r) * tgt.cols + c];
        if (std::isnan(y)) continue;
        if (!detail::fill_feature_row(seq, t, r, c, patch_size, row.data())) continue;
        features.row(n) = Eigen::Map<const Eigen::RowVectorXd>(row.data(), nfeat);
        targets.push_back(double(y));
        ++n;
      }
  }
  features.conservativeResize(n, nfeat);
  return {std::move(features),
          Eigen::Map<const ArrayX<double>>(targets.data(), Eigen::Index(targets.size()))};
}

/// Ridge fit on materialized samples (normal equations, double precision).
inline LinearPixelModel fit_linear(const RowMat<double>& features, const ArrayX<double>& targets,
                                   double lambda, int patch_size = 40,
                                   NormalizationSpec norm = {}) {
  if (features.rows() != targets.size())
    throw std::invalid_argument("fit_linear: feature/target row mismatch");
  if (features.cols() != Eigen::Index(3) * patch_size * patch_size)
    throw std::invalid_argument("fit_linear: feature count must be 3*patch_size^2");
  if (lambda < 0) throw std::invalid_argument("fit_linear: lambda must be >= 0");
  detail::RidgeAccumulator acc(features.cols());
  std::vector<double> row(size_t(features.cols()));
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    Eigen::Map<Eigen::RowVectorXd>(row.data(), features.cols()) = features.row(i);
    acc.add_row(row.data(), targets[i]);
  }
  LinearPixelModel m;
  m.patch_size = patch_size;
  m.normalization = norm;
  acc.solve(lambda, m.weights, m.intercept);
  m.validate();
  return m;
}

/// Streaming fit over a sequence: enumerates the same rows as
/// extract_patch_samples without materializing the feature matrix, with a
/// seeded subsample cap on the row count.
inline LinearPixelModel fit_linear_sequence(const GridSequence& seq, const Region& region,
                                            double lambda, int patch_size = 40,
                                            long max_rows = 200000, std::uint64_t seed = 0,
                                            NormalizationSpec norm = {}) {
  if (seq.frames.size() < 4)
    throw std::invalid_argument("fit_linear_sequence: need at least 4 frames");
  if (max_rows < 1) throw std::invalid_argument("fit_linear_sequence: max_rows must be >= 1");
  const int usable_hours = int(seq.frames.size()) - 3;
  const long candidates = long(region.rows) * region.cols * usable_hours;
  std::vector<char> keep(size_t(candidates), 1);
  if (candidates > max_rows) {
    std::vector<long> idx(static_cast<size_t>(candidates));
    std::iota(idx.begin(), idx.end(), 0L);
    std::mt19937 rng(static_cast<std::uint32_t>(seed ^ (seed >> 32)));
    std::shuffle(idx.begin(), idx.end(), rng);
    std::fill(keep.begin(), keep.end(), char(0));
    for (long i = 0; i < max_rows; ++i) keep[size_t(idx[size_t(i)])] = 1;
  }

  const GridFrame& f0 = seq.frames[0];
  region.validate(f0.rows, f0.cols);
  const Eigen::Index nfeat = Eigen::Index(3) * patch_size * patch_size;
  detail::RidgeAccumulator acc(nfeat);
  std::vector<double> row(static_cast<size_t>(nfeat));
  long candidate = 0;
  for (int t = 2; t + 1 < int(seq.frames.size()); ++t) {
    const GridFrame& tgt = seq.frames[size_t(t + 1)];
    for (int r = region.row0; r < region.row0 + region.rows; ++r)
      for (int c = region.col0; c < region.col0 + region.cols; ++c, ++candidate) {
        if (!keep[size_t(candidate)]) continue;
        const float y = tgt.values[Eigen::Index(r) * tgt.cols + c];
        if (std::isnan(y)) continue;
        if (!detail::fill_feature_row(seq, t, r, c, patch_size, row.data())) continue;
        acc.add_row(row.data(), double(y));
      }
  }
  LinearPixelModel m;
  m.patch_size = patch_size;
  m.normalization = norm;
  acc.solve(lambda, m.weights, m.intercept);
  m.validate();
  return m;
}

/// Predicts the frame at t+1 from the three frames ending at index t.
/// Pixels without a full clean patch are marked missing (NaN).
inline GridFrame predict_linear_at(const LinearPixelModel& model, const GridSequence& seq, int t) {
  model.validate();
  if (t < 2 || t >= int(seq.frames.size()))
    throw std::invalid_argument("predict_linear: need 3 prior frames at index t");
  const GridFrame& cur = seq.frames[size_t(t)];
  GridFrame out;
  out.timestamp = cur.timestamp + seq.cadence_seconds;
  out.rows = cur.rows;
  out.cols = cur.cols;
  out.extent = cur.extent;
  out.values = ArrayX<float>::Constant(Eigen::Index(cur.rows) * cur.cols,
                                       std::numeric_limits<float>::quiet_NaN());
  std::vector<double> row(size_t(model.feature_count()));
  for (int r = 0; r < cur.rows; ++r)
    for (int c = 0; c < cur.cols; ++c) {
      if (!detail::fill_feature_row(seq, t, r, c, model.patch_size, row.data())) continue;
      // plain ordered accumulation so predictions are reproducible bit for bit
      double y = model.intercept;
      for (Eigen::Index i = 0; i < model.weights.size(); ++i) y += row[size_t(i)] * model.weights[i];
      out.values[Eigen::Index(r) * cur.cols + c] = float(y);
    }
  return out;
}

/// Convenience: prediction one hour past the final frame.
inline GridFrame predict_linear(const LinearPixelModel& model, const GridSequence& seq) {
  return predict_linear_at(model, seq, int(seq.frames.size()) - 1);
}

/// Persistence reference: the frame at index t copied forward h = 1..3 hours.
inline std::array<GridFrame, 3> persistence_at(const GridSequence& seq, int t) {
  if (t < 0 || t >= int(seq.frames.size()))
    throw std::invalid_argument("persistence: frame index out of range");
  std::array<GridFrame, 3> out;
  for (int h = 1; h <= 3; ++h) {
    out[size_t(h - 1)] = seq.frames[size_t(t)];
    out[size_t(h - 1)].timestamp = seq.frames[size_t(t)].timestamp + h * seq.cadence_seconds;
  }
  return out;
}

inline std::array<GridFrame, 3> persistence(const GridSequence& seq) {
  if (seq.frames.empty()) throw std::invalid_argument("persistence: empty sequence");
  return persistence_at(seq, int(seq.frames.size()) - 1);
}

// ---------------------------------------------------------------------------
// NWCL checkpoint (same container conventions as NWCM: magic, version,
// config, coefficient block, trailing CRC-32)
// ---------------------------------------------------------------------------

inline size_t save_baseline(const LinearPixelModel& model, std::ostream& os) {
  model.validate();
  detail::ByteWriter w;
  w.put_bytes("NWCL", 4);
  w.put<std::uint16_t>(1);
  w.put<std::uint32_t>(std::uint32_t(model.patch_size));
  w.put<double>(double(model.normalization.dsr_max));
  w.put<std::uint8_t>(model.normalization.clip ? 1 : 0);
  w.put<double>(model.intercept);
  w.put_bytes(model.weights.data(), sizeof(double) * size_t(model.weights.size()));
  w.put<std::uint32_t>(crc32(w.buf.data(), w.buf.size()));
  os.write(w.buf.data(), std::streamsize(w.buf.size()));
  if (!os) throw std::runtime_error("checkpoint: write failed");
  return w.buf.size();
}

inline LinearPixelModel load_baseline(std::istream& is) {
  std::string buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (buf.size() < 10 || buf.compare(0, 4, "NWCL") != 0)
    throw std::runtime_error("checkpoint: bad magic");
  const std::uint32_t stored =
      std::uint32_t(std::uint8_t(buf[buf.size() - 4])) |
      std::uint32_t(std::uint8_t(buf[buf.size() - 3])) << 8 |
      std::uint32_t(std::uint8_t(buf[buf.size() - 2])) << 16 |
      std::uint32_t(std::uint8_t(buf[buf.size() - 1])) << 24;
  if (crc32(buf.data(), buf.size() - 4) != stored)
    throw std::runtime_error("checkpoint: checksum mismatch (corrupted or truncated file)");
  detail::ByteReader r(buf);
  r.pos = 4;
  const auto version = r.get<std::uint16_t>("version");
  if (version != 1)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  LinearPixelModel m;
  m.patch_size = int(r.get<std::uint32_t>("patch size"));
  m.normalization.dsr_max = float(r.get<double>("dsr_max"));
  m.normalization.clip = r.get<std::uint8_t>("clip") != 0;
  m.intercept = r.get<double>("intercept");
  m.weights.resize(Eigen::Index(3) * m.patch_size * m.patch_size);
  r.get_bytes(m.weights.data(), sizeof(double) * size_t(m.weights.size()), "weights");
  if (r.pos != buf.size() - 4) throw std::runtime_error("checkpoint: trailing bytes");
  m.validate();
  return m;
}

}  // namespace nowcast
