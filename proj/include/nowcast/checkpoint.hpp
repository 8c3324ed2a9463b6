#pragma once

#include <istream>
#include <ostream>
#include <sstream>

#include "nowcast/network.hpp"

namespace nowcast {

// ---------------------------------------------------------------------------
// CRC-32 (IEEE, reflected, poly 0xEDB88320)
// ---------------------------------------------------------------------------

inline std::uint32_t crc32(const void* data, size_t len, std::uint32_t crc = 0) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  crc = ~crc;
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) crc = table[(crc ^ p[i]) & 0xFF] ^ (crc >> 8);
  return ~crc;
}

namespace detail {

struct ByteWriter {
  std::string buf;
  template <class T>
  void put(T v) {
    buf.append(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void put_bytes(const void* p, size_t n) { buf.append(static_cast<const char*>(p), n); }
};

struct ByteReader {
  const std::string& buf;
  size_t pos = 0;
  explicit ByteReader(const std::string& b) : buf(b) {}
  template <class T>
  T get(const char* what) {
    if (pos + sizeof(T) > buf.size())
      throw std::runtime_error(std::string("checkpoint: truncated (") + what + ")");
    T v;
    std::memcpy(&v, buf.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
  void get_bytes(void* p, size_t n, const char* what) {
    if (pos + n > buf.size())
      throw std::runtime_error(std::string("checkpoint: truncated (") + what + ")");
    std::memcpy(p, buf.data() + pos, n);
    pos += n;
  }
};

template <class S>
void write_tensor_f32(ByteWriter& w, const Tensor<S>& t) {
  if constexpr (std::is_same_v<S, float>) {
    w.put_bytes(t.data(), sizeof(float) * size_t(t.size()));
  } else {
    for (Eigen::Index i = 0; i < t.size(); ++i) w.put<float>(float(t[i]));
  }
}

template <class S>
void read_tensor_f32(ByteReader& r, Tensor<S>& t, const std::string& name) {
  if constexpr (std::is_same_v<S, float>) {
    r.get_bytes(t.data(), sizeof(float) * size_t(t.size()), name.c_str());
  } else {
    for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = S(r.get<float>(name.c_str()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// NWCM checkpoint: magic, version u16, config block, parameter blocks in
// declared order (f32), trailing CRC-32 over all preceding bytes.
// ---------------------------------------------------------------------------

template <class S>
size_t save_model(const NowcastModel<S>& model, std::ostream& os) {
  detail::ByteWriter w;
  w.put_bytes("NWCM", 4);
  w.put<std::uint16_t>(1);
  w.put<std::uint32_t>(std::uint32_t(model.config.layer_channels.size()));
  for (int ch : model.config.layer_channels) w.put<std::uint32_t>(std::uint32_t(ch));
  w.put<std::uint32_t>(std::uint32_t(model.config.kernel));
  w.put<std::uint8_t>(std::uint8_t(model.config.cell_type));
  w.put<std::uint8_t>(std::uint8_t(model.config.activation));
  for (int k : model.config.head_kernel) w.put<std::uint32_t>(std::uint32_t(k));
  w.put<std::uint32_t>(std::uint32_t(model.config.input_channels));
  w.put<std::uint32_t>(std::uint32_t(model.config.horizon));
  w.put<std::uint32_t>(std::uint32_t(model.config.rows));
  w.put<std::uint32_t>(std::uint32_t(model.config.cols));
  w.put<double>(double(model.normalization.dsr_max));
  w.put<std::uint8_t>(model.normalization.clip ? 1 : 0);
  w.put<std::uint64_t>(model.seed);
  w.put<std::uint32_t>(model.epochs_trained);
  w.put<std::uint32_t>(std::uint32_t(model.train_loss_history.size()));
  for (size_t i = 0; i < model.train_loss_history.size(); ++i) {
    w.put<float>(model.train_loss_history[i]);
    w.put<float>(i < model.val_loss_history.size() ? model.val_loss_history[i] : 0.f);
  }
  auto refs = model_state_tensors(const_cast<NowcastModel<S>&>(model));
  for (const auto& r : refs) detail::write_tensor_f32(w, *r.tensor);
  w.put<std::uint32_t>(crc32(w.buf.data(), w.buf.size()));
  os.write(w.buf.data(), std::streamsize(w.buf.size()));
  if (!os) throw std::runtime_error("checkpoint: write failed");
  return w.buf.size();
}

/// Loads an NWCM checkpoint. When expect_rows/cols are given, the stored grid
/// shape must match.
template <class S>
NowcastModel<S> load_model(std::istream& is, int expect_rows = -1, int expect_cols = -1) {
  std::string buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (buf.size() < 10 || buf.compare(0, 4, "NWCM") != 0)
    throw std::runtime_error("checkpoint: bad magic");
  const std::uint32_t stored_crc =
      std::uint32_t(std::uint8_t(buf[buf.size() - 4])) |
      std::uint32_t(std::uint8_t(buf[buf.size() - 3])) << 8 |
      std::uint32_t(std::uint8_t(buf[buf.size() - 2])) << 16 |
      std::uint32_t(std::uint8_t(buf[buf.size() - 1])) << 24;
  if (crc32(buf.data(), buf.size() - 4) != stored_crc)
    throw std::runtime_error("checkpoint: checksum mismatch (corrupted or truncated file)");

  detail::ByteReader r(buf);
  r.pos = 4;
  const auto version = r.get<std::uint16_t>("version");
  if (version != 1)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  NetworkConfig cfg;
  const auto nlayers = r.get<std::uint32_t>("layer count");
  if (nlayers == 0 || nlayers > 64) throw std::runtime_error("checkpoint: malformed layer count");
  cfg.layer_channels.clear();
  for (std::uint32_t i = 0; i < nlayers; ++i)
    cfg.layer_channels.push_back(int(r.get<std::uint32_t>("layer channels")));
  cfg.kernel = int(r.get<std::uint32_t>("kernel"));
  cfg.cell_type = CellType(r.get<std::uint8_t>("cell type"));
  cfg.activation = Activation(r.get<std::uint8_t>("activation"));
  for (int i = 0; i < 3; ++i) cfg.head_kernel[size_t(i)] = int(r.get<std::uint32_t>("head kernel"));
  cfg.input_channels = int(r.get<std::uint32_t>("input channels"));
  cfg.horizon = int(r.get<std::uint32_t>("horizon"));
  cfg.rows = int(r.get<std::uint32_t>("rows"));
  cfg.cols = int(r.get<std::uint32_t>("cols"));
  NormalizationSpec norm;
  norm.dsr_max = float(r.get<double>("dsr_max"));
  norm.clip = r.get<std::uint8_t>("clip") != 0;
  if ((expect_rows >= 0 && cfg.rows != expect_rows) || (expect_cols >= 0 && cfg.cols != expect_cols))
    throw std::runtime_error("checkpoint: grid shape " + std::to_string(cfg.rows) + "x" +
                             std::to_string(cfg.cols) + " does not match expected " +
                             std::to_string(expect_rows) + "x" + std::to_string(expect_cols));
  auto model = make_model<S>(cfg, 0, norm);
  model.seed = r.get<std::uint64_t>("seed");
  model.epochs_trained = r.get<std::uint32_t>("epochs");
  const auto hist = r.get<std::uint32_t>("history length");
  for (std::uint32_t i = 0; i < hist; ++i) {
    model.train_loss_history.push_back(r.get<float>("loss history"));
    model.val_loss_history.push_back(r.get<float>("loss history"));
  }
  for (auto& ref : model_state_tensors(model)) detail::read_tensor_f32(r, *ref.tensor, ref.name);
  if (r.pos != buf.size() - 4) throw std::runtime_error("checkpoint: trailing bytes");
  return model;
}

}  // namespace nowcast
