#pragma once

#include <iomanip>
#include <json.hpp>
#include <ostream>
#include <sstream>

#include "nowcast/gridio.hpp"

namespace nowcast {

// ---------------------------------------------------------------------------
// Stratified RMSE reports: overall plus per-bin RMSE where bins partition
// [0, inf) by the TRUE DSR value (W/m^2), boundary assigned upward.
// ---------------------------------------------------------------------------

struct BinEdges {
  double lo = 0, hi = std::numeric_limits<double>::infinity();
  bool operator==(const BinEdges&) const = default;
};

inline std::vector<BinEdges> default_bins() {
  return {{0, 300}, {300, 600}, {600, std::numeric_limits<double>::infinity()}};
}

struct BinStat {
  BinEdges edges;
  double rmse = 0;
  long n = 0;
};

struct EvalReport {
  int horizon = 0;
  double overall_rmse = 0;
  long overall_n = 0;
  std::vector<BinStat> bins;
  std::string model_id;
  std::string data_range;
};

struct EvalOptions {
  std::vector<BinEdges> bins = default_bins();
  bool daylight_only = false;  // restrict to truth > 0
  int horizon = 0;
  std::string model_id;
  std::string data_range;
};

namespace detail {

struct RmseAccumulator {
  std::vector<BinEdges> edges;
  std::vector<double> sq;
  std::vector<long> n;
  double total_sq = 0;
  long total_n = 0;

  explicit RmseAccumulator(std::vector<BinEdges> bins) : edges(std::move(bins)) {
    if (edges.empty()) throw std::invalid_argument("eval: at least one bin required");
    for (size_t i = 0; i < edges.size(); ++i) {
      if (edges[i].hi <= edges[i].lo) throw std::invalid_argument("eval: empty bin interval");
      if (i > 0 && edges[i].lo != edges[i - 1].hi)
        throw std::invalid_argument("eval: bins must partition contiguously");
    }
    sq.assign(edges.size(), 0.0);
    n.assign(edges.size(), 0);
  }

  void add(double pred, double truth) {
    const double d = pred - truth;
    for (size_t i = 0; i < edges.size(); ++i)
      if (truth >= edges[i].lo && truth < edges[i].hi) {
        sq[i] += d * d;
        n[i] += 1;
        total_sq += d * d;
        total_n += 1;
        return;
      }
  }

  EvalReport report(const EvalOptions& opts) const {
    if (total_n == 0) throw std::runtime_error("eval: empty overlap (no valid samples)");
    EvalReport r;
    r.horizon = opts.horizon;
    r.model_id = opts.model_id;
    r.data_range = opts.data_range;
    r.overall_rmse = std::sqrt(total_sq / double(total_n));
    r.overall_n = total_n;
    for (size_t i = 0; i < edges.size(); ++i)
      r.bins.push_back({edges[i], n[i] > 0 ? std::sqrt(sq[i] / double(n[i])) : 0.0, n[i]});
    return r;
  }
};

inline void check_aligned(const std::vector<GridFrame>& predictions,
                          const std::vector<GridFrame>& truths) {
  if (predictions.size() != truths.size())
    throw std::invalid_argument("eval: prediction/truth frame count mismatch");
  if (predictions.empty()) throw std::runtime_error("eval: empty overlap (no valid samples)");
  for (size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i].timestamp != truths[i].timestamp)
      throw std::invalid_argument("eval: misaligned timestamps at frame " + std::to_string(i));
    if (predictions[i].rows != truths[i].rows || predictions[i].cols != truths[i].cols)
      throw std::invalid_argument("eval: grid shape mismatch at frame " + std::to_string(i));
  }
}

}  // namespace detail

/// RMSE in W/m^2 over aligned frame lists, stratified by the true value.
/// Pixels where either side is missing (NaN) are excluded.
inline EvalReport stratified_rmse(const std::vector<GridFrame>& predictions,
                                  const std::vector<GridFrame>& truths,
                                  const EvalOptions& opts = {}) {
  detail::check_aligned(predictions, truths);
  detail::RmseAccumulator acc(opts.bins);
  for (size_t i = 0; i < predictions.size(); ++i) {
    const auto& p = predictions[i].values;
    const auto& t = truths[i].values;
    for (Eigen::Index j = 0; j < t.size(); ++j) {
      if (std::isnan(p[j]) || std::isnan(t[j])) continue;
      if (opts.daylight_only && !(t[j] > 0)) continue;
      acc.add(double(p[j]), double(t[j]));
    }
  }
  return acc.report(opts);
}

// ---------------------------------------------------------------------------
// Site-level evaluation (Table 2 protocol): selected pixels, local-time window
// ---------------------------------------------------------------------------

struct SiteSpec {
  std::string name;
  double lat = 0, lon = 0;
  int row = 0, col = 0;  // grid position after projection

  void validate(int grid_rows, int grid_cols) const {
    if (row < 0 || col < 0 || row >= grid_rows || col >= grid_cols)
      throw std::invalid_argument("site '" + name + "' is outside the grid");
  }
};

/// Local evaluation window: half-open local hours [start, end) at a fixed
/// UTC offset (e.g. 10:00-15:00 PST is {10, 15, -8}).
struct HourWindow {
  int start_hour = 0;
  int end_hour = 24;
  int utc_offset = 0;

  bool contains_utc(std::int64_t timestamp) const {
    const int local = ((utc_hour(timestamp) + utc_offset) % 24 + 24) % 24;
    return local >= start_hour && local < end_hour;
  }
};

/// Restricts evaluation to site pixels within the local-time window, then
/// applies the stratified protocol.
inline EvalReport site_eval(const std::vector<GridFrame>& predictions,
                            const std::vector<GridFrame>& truths,
                            const std::vector<SiteSpec>& sites, const HourWindow& window,
                            const EvalOptions& opts = {}) {
  detail::check_aligned(predictions, truths);
  if (sites.empty()) throw std::invalid_argument("site_eval: no sites given");
  for (const auto& s : sites) s.validate(truths[0].rows, truths[0].cols);
  detail::RmseAccumulator acc(opts.bins);
  for (size_t i = 0; i < predictions.size(); ++i) {
    if (!window.contains_utc(truths[i].timestamp)) continue;
    for (const auto& s : sites) {
      const Eigen::Index j = Eigen::Index(s.row) * truths[i].cols + s.col;
      const float p = predictions[i].values[j], t = truths[i].values[j];
      if (std::isnan(p) || std::isnan(t)) continue;
      if (opts.daylight_only && !(t > 0)) continue;
      acc.add(double(p), double(t));
    }
  }
  return acc.report(opts);
}

// ---------------------------------------------------------------------------
// Report comparison: per-stratum (a - b) / a as percentages
// ---------------------------------------------------------------------------

struct CompareEntry {
  BinEdges edges;
  double a_rmse = 0, b_rmse = 0;
  double decrease_pct = 0;  // positive when b improves on a
};

struct CompareReport {
  CompareEntry overall;
  std::vector<CompareEntry> bins;
};

inline CompareReport compare_reports(const EvalReport& a, const EvalReport& b) {
  if (a.bins.size() != b.bins.size())
    throw std::invalid_argument("compare: reports have different strata");
  for (size_t i = 0; i < a.bins.size(); ++i)
    if (!(a.bins[i].edges == b.bins[i].edges))
      throw std::invalid_argument("compare: reports have different strata");
  auto entry = [](BinEdges e, double ra, double rb) {
    CompareEntry c{e, ra, rb, 0};
    if (ra != 0) c.decrease_pct = (ra - rb) / ra * 100.0;
    return c;
  };
  CompareReport out;
  out.overall = entry({0, std::numeric_limits<double>::infinity()}, a.overall_rmse, b.overall_rmse);
  for (size_t i = 0; i < a.bins.size(); ++i)
    out.bins.push_back(entry(a.bins[i].edges, a.bins[i].rmse, b.bins[i].rmse));
  return out;
}

// ---------------------------------------------------------------------------
// JSON + text rendering
// ---------------------------------------------------------------------------

inline nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json bins = nlohmann::json::array();
  for (const auto& b : r.bins) {
    nlohmann::json e{{"lo", b.edges.lo}, {"rmse", b.rmse}, {"n", b.n}};
    if (std::isfinite(b.edges.hi)) e["hi"] = b.edges.hi;
    else e["hi"] = nullptr;
    bins.push_back(e);
  }
  return nlohmann::json{{"horizon", r.horizon},
                        {"overall", {{"rmse", r.overall_rmse}, {"n", r.overall_n}}},
                        {"bins", bins},
                        {"meta", {{"model_id", r.model_id}, {"data_range", r.data_range}}}};
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.horizon = j.at("horizon").get<int>();
  r.overall_rmse = j.at("overall").at("rmse").get<double>();
  r.overall_n = j.at("overall").at("n").get<long>();
  for (const auto& e : j.at("bins")) {
    BinStat b;
    b.edges.lo = e.at("lo").get<double>();
    b.edges.hi = e.at("hi").is_null() ? std::numeric_limits<double>::infinity()
                                      : e.at("hi").get<double>();
    b.rmse = e.at("rmse").get<double>();
    b.n = e.at("n").get<long>();
    r.bins.push_back(b);
  }
  if (j.contains("meta")) {
    r.model_id = j.at("meta").value("model_id", "");
    r.data_range = j.at("meta").value("data_range", "");
  }
  return r;
}

inline std::string bin_label(const BinEdges& e) {
  std::ostringstream os;
  os << "[" << e.lo << ", ";
  if (std::isfinite(e.hi)) os << e.hi << ")";
  else os << "inf)";
  return os.str();
}

inline void print_report(const EvalReport& r, std::ostream& os) {
  os << "horizon " << r.horizon;
  if (!r.model_id.empty()) os << "  model " << r.model_id;
  if (!r.data_range.empty()) os << "  data " << r.data_range;
  os << "\n";
  os << std::left << std::setw(16) << "stratum" << std::right << std::setw(12) << "RMSE (W/m2)"
     << std::setw(12) << "samples" << "\n";
  os << std::fixed << std::setprecision(2);
  os << std::left << std::setw(16) << "overall" << std::right << std::setw(12) << r.overall_rmse
     << std::setw(12) << r.overall_n << "\n";
  for (const auto& b : r.bins)
    os << std::left << std::setw(16) << bin_label(b.edges) << std::right << std::setw(12) << b.rmse
       << std::setw(12) << b.n << "\n";
  os.unsetf(std::ios::fixed);
  os << std::setprecision(6);
}

inline void print_comparison(const CompareReport& c, std::ostream& os) {
  os << std::left << std::setw(16) << "stratum" << std::right << std::setw(12) << "A (W/m2)"
     << std::setw(12) << "B (W/m2)" << std::setw(14) << "decrease (%)" << "\n";
  os << std::fixed << std::setprecision(2);
  os << std::left << std::setw(16) << "overall" << std::right << std::setw(12) << c.overall.a_rmse
     << std::setw(12) << c.overall.b_rmse << std::setw(14) << c.overall.decrease_pct << "\n";
  for (const auto& b : c.bins)
    os << std::left << std::setw(16) << bin_label(b.edges) << std::right << std::setw(12)
       << b.a_rmse << std::setw(12) << b.b_rmse << std::setw(14) << b.decrease_pct << "\n";
  os.unsetf(std::ios::fixed);
  os << std::setprecision(6);
}

}  // namespace nowcast
