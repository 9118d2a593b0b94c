#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "simrec/data.hpp"
#include "simrec/error.hpp"
#include "simrec/io_util.hpp"
#include "simrec/model.hpp"
#include "simrec/optim.hpp"
#include "simrec/rng.hpp"

namespace simrec {

// Per-training-sample scalar weights keyed by (user, cut). Absent keys read
// as 1.0.
class WeightTable {
 public:
  double get(const SampleKey& k) const {
    const auto it = map_.find(k);
    return it == map_.end() ? 1.0 : it->second;
  }
  void set(const SampleKey& k, double v) { map_[k] = v; }
  std::size_t size() const { return map_.size(); }
  bool empty() const { return map_.empty(); }
  void clear() { map_.clear(); }

  std::vector<std::pair<SampleKey, double>> sorted_entries() const {
    std::vector<std::pair<SampleKey, double>> v(map_.begin(), map_.end());
    std::sort(v.begin(), v.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    return v;
  }

 private:
  struct Hash {
    std::size_t operator()(const SampleKey& k) const {
      std::uint64_t h = k.user * 0x9e3779b97f4a7c15ull;
      h ^= k.cut + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
      return static_cast<std::size_t>(h);
    }
  };
  std::unordered_map<SampleKey, double, Hash> map_;
};

// Everything needed to restore or resume a training run.
struct Checkpoint {
  Hyperparams hp;
  ModelParams params;
  AdamState adam_item, adam_pos, adam_w1, adam_w2;
  WeightTable weights;
  Rng rng_negatives, rng_batching;
  std::uint64_t q = 0;
  std::uint64_t epoch = 0;
  double best_metric = -1.0;
  std::uint64_t patience_left = 0;
};

namespace detail {

inline constexpr char kCheckpointMagic[8] = {'S', 'M', 'I', 'R', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::uint32_t crc32(const unsigned char* data, std::size_t n) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t crc = 0xFFFFFFFFu;
  for (std::size_t i = 0; i < n; ++i) crc = table[(crc ^ data[i]) & 0xFFu] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

struct ByteWriter {
  std::string buf;
  void bytes(const void* p, std::size_t n) {
    buf.append(static_cast<const char*>(p), n);
  }
  void u8(std::uint8_t v) { buf.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    u8(static_cast<std::uint8_t>(s.size()));
    bytes(s.data(), s.size());
  }
};

struct ByteReader {
  const unsigned char* p;
  std::size_t n;
  std::size_t pos = 0;

  void need(std::size_t k) const {
    if (pos + k > n)
      throw CheckpointError(CheckpointError::Kind::Truncated, "checkpoint truncated");
  }
  void bytes(void* out, std::size_t k) {
    need(k);
    std::memcpy(out, p + pos, k);
    pos += k;
  }
  std::uint8_t u8() {
    need(1);
    return p[pos++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[pos++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[pos++]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint8_t len = u8();
    std::string s(len, '\0');
    bytes(s.data(), len);
    return s;
  }
};

inline void write_tensor(ByteWriter& w, std::string_view name, const Matrix& m) {
  w.str(name);
  w.u64(m.rows());
  w.u64(m.cols());
  for (std::size_t i = 0; i < m.size(); ++i) w.f64(m.data()[i]);
}

inline Matrix read_tensor(ByteReader& r, std::string_view expect) {
  const std::string name = r.str();
  if (name != expect)
    throw CheckpointError(CheckpointError::Kind::Truncated,
                          "unexpected tensor '" + name + "'");
  const std::uint64_t rows = r.u64(), cols = r.u64();
  if (rows > (1u << 28) || cols > (1u << 28))
    throw CheckpointError(CheckpointError::Kind::Truncated, "absurd tensor shape");
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = r.f64();
  return m;
}

inline nlohmann::json kernel_to_json(const KernelConfig& k) {
  return {{"mode", k.mode == KernelConfig::Mode::Fixed ? "fixed" : "median"},
          {"sigma", k.sigma},
          {"floor", k.median_floor}};
}

inline KernelConfig kernel_from_json(const nlohmann::json& j) {
  KernelConfig k;
  k.mode = j.at("mode").get<std::string>() == "fixed" ? KernelConfig::Mode::Fixed
                                                      : KernelConfig::Mode::Median;
  k.sigma = j.at("sigma").get<double>();
  k.median_floor = j.at("floor").get<double>();
  return k;
}

inline nlohmann::json hyperparams_to_json(const Hyperparams& hp) {
  return {{"d", hp.d},
          {"d_hat", hp.d_hat},
          {"c", hp.c},
          {"T", hp.T},
          {"vocab", hp.vocab},
          {"lambda", hp.lambda},
          {"negatives", hp.negatives},
          {"lr", hp.lr},
          {"lr_omega", hp.lr_omega},
          {"omega_steps", hp.omega_steps},
          {"batch", hp.batch},
          {"kernel", kernel_to_json(hp.kernel)}};
}

inline Hyperparams hyperparams_from_json(const nlohmann::json& j) {
  Hyperparams hp;
  hp.d = j.at("d").get<std::size_t>();
  hp.d_hat = j.at("d_hat").get<std::size_t>();
  hp.c = j.at("c").get<std::size_t>();
  hp.T = j.at("T").get<std::size_t>();
  hp.vocab = j.at("vocab").get<std::size_t>();
  hp.lambda = j.at("lambda").get<double>();
  hp.negatives = j.at("negatives").get<std::size_t>();
  hp.lr = j.at("lr").get<double>();
  hp.lr_omega = j.at("lr_omega").get<double>();
  hp.omega_steps = j.at("omega_steps").get<std::size_t>();
  hp.batch = j.at("batch").get<std::size_t>();
  hp.kernel = kernel_from_json(j.at("kernel"));
  return hp;
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  using nlohmann::json;
  detail::ByteWriter w;
  w.bytes(detail::kCheckpointMagic, 8);
  w.u32(detail::kCheckpointVersion);

  json header;
  header["hyperparams"] = detail::hyperparams_to_json(ck.hp);
  header["trainer"] = {
      {"q", ck.q},
      {"epoch", ck.epoch},
      {"best_metric", ck.best_metric},
      {"patience_left", ck.patience_left},
      {"adam",
       {{"beta1", ck.adam_item.beta1},
        {"beta2", ck.adam_item.beta2},
        {"eps", ck.adam_item.eps},
        {"steps",
         {{"item_emb", ck.adam_item.step},
          {"pos_emb", ck.adam_pos.step},
          {"attn_w1", ck.adam_w1.step},
          {"attn_w2", ck.adam_w2.step}}}}}};
  const std::string hdr = header.dump();
  w.u32(static_cast<std::uint32_t>(hdr.size()));
  w.bytes(hdr.data(), hdr.size());

  w.u32(12);  // tensor count
  detail::write_tensor(w, "item_emb", ck.params.item_emb);
  detail::write_tensor(w, "pos_emb", ck.params.pos_emb);
  detail::write_tensor(w, "attn_w1", ck.params.attn_w1);
  detail::write_tensor(w, "attn_w2", ck.params.attn_w2);
  detail::write_tensor(w, "adam_item.m", ck.adam_item.m);
  detail::write_tensor(w, "adam_item.v", ck.adam_item.v);
  detail::write_tensor(w, "adam_pos.m", ck.adam_pos.m);
  detail::write_tensor(w, "adam_pos.v", ck.adam_pos.v);
  detail::write_tensor(w, "adam_w1.m", ck.adam_w1.m);
  detail::write_tensor(w, "adam_w1.v", ck.adam_w1.v);
  detail::write_tensor(w, "adam_w2.m", ck.adam_w2.m);
  detail::write_tensor(w, "adam_w2.v", ck.adam_w2.v);

  const auto entries = ck.weights.sorted_entries();
  w.u64(entries.size());
  for (const auto& [key, value] : entries) {
    w.u64(key.user);
    w.u64(key.cut);
    w.f64(value);
  }

  w.u8(2);
  w.str("negatives");
  w.u64(ck.rng_negatives.state());
  w.u64(ck.rng_negatives.inc());
  w.str("batching");
  w.u64(ck.rng_batching.state());
  w.u64(ck.rng_batching.inc());

  const std::uint32_t crc = detail::crc32(
      reinterpret_cast<const unsigned char*>(w.buf.data()), w.buf.size());
  w.u32(crc);
  return std::move(w.buf);
}

inline Checkpoint deserialize_checkpoint(std::string_view bytes) {
  using nlohmann::json;
  if (bytes.size() < 16)
    throw CheckpointError(CheckpointError::Kind::Truncated, "checkpoint too small");
  detail::ByteReader r{reinterpret_cast<const unsigned char*>(bytes.data()),
                       bytes.size() - 4};
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, detail::kCheckpointMagic, 8) != 0)
    throw CheckpointError(CheckpointError::Kind::Version, "bad checkpoint magic");
  const std::uint32_t version = r.u32();
  if (version != detail::kCheckpointVersion)
    throw CheckpointError(CheckpointError::Kind::Version,
                          "unsupported checkpoint version " + std::to_string(version));

  std::uint32_t stored_le = 0;
  for (int i = 3; i >= 0; --i)
    stored_le = (stored_le << 8) |
                static_cast<unsigned char>(bytes[bytes.size() - 4 + static_cast<std::size_t>(i)]);
  const std::uint32_t actual = detail::crc32(
      reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size() - 4);
  if (stored_le != actual)
    throw CheckpointError(CheckpointError::Kind::Checksum, "checkpoint checksum mismatch");

  Checkpoint ck;
  const std::uint32_t hdr_len = r.u32();
  std::string hdr(hdr_len, '\0');
  r.bytes(hdr.data(), hdr_len);
  json header;
  try {
    header = json::parse(hdr);
    ck.hp = detail::hyperparams_from_json(header.at("hyperparams"));
    const auto& tr = header.at("trainer");
    ck.q = tr.at("q").get<std::uint64_t>();
    ck.epoch = tr.at("epoch").get<std::uint64_t>();
    ck.best_metric = tr.at("best_metric").get<double>();
    ck.patience_left = tr.at("patience_left").get<std::uint64_t>();
    const auto& adam = tr.at("adam");
    for (AdamState* st : {&ck.adam_item, &ck.adam_pos, &ck.adam_w1, &ck.adam_w2}) {
      st->beta1 = adam.at("beta1").get<double>();
      st->beta2 = adam.at("beta2").get<double>();
      st->eps = adam.at("eps").get<double>();
    }
    ck.adam_item.step = adam.at("steps").at("item_emb").get<std::int64_t>();
    ck.adam_pos.step = adam.at("steps").at("pos_emb").get<std::int64_t>();
    ck.adam_w1.step = adam.at("steps").at("attn_w1").get<std::int64_t>();
    ck.adam_w2.step = adam.at("steps").at("attn_w2").get<std::int64_t>();
  } catch (const json::exception& e) {
    throw CheckpointError(CheckpointError::Kind::Truncated,
                          std::string("bad checkpoint header: ") + e.what());
  }

  const std::uint32_t n_tensors = r.u32();
  if (n_tensors != 12)
    throw CheckpointError(CheckpointError::Kind::Truncated, "unexpected tensor count");
  ck.params.item_emb = detail::read_tensor(r, "item_emb");
  ck.params.pos_emb = detail::read_tensor(r, "pos_emb");
  ck.params.attn_w1 = detail::read_tensor(r, "attn_w1");
  ck.params.attn_w2 = detail::read_tensor(r, "attn_w2");
  ck.adam_item.m = detail::read_tensor(r, "adam_item.m");
  ck.adam_item.v = detail::read_tensor(r, "adam_item.v");
  ck.adam_pos.m = detail::read_tensor(r, "adam_pos.m");
  ck.adam_pos.v = detail::read_tensor(r, "adam_pos.v");
  ck.adam_w1.m = detail::read_tensor(r, "adam_w1.m");
  ck.adam_w1.v = detail::read_tensor(r, "adam_w1.v");
  ck.adam_w2.m = detail::read_tensor(r, "adam_w2.m");
  ck.adam_w2.v = detail::read_tensor(r, "adam_w2.v");

  const std::uint64_t n_weights = r.u64();
  for (std::uint64_t i = 0; i < n_weights; ++i) {
    SampleKey key{r.u64(), r.u64()};
    ck.weights.set(key, r.f64());
  }

  const std::uint8_t n_streams = r.u8();
  if (n_streams != 2)
    throw CheckpointError(CheckpointError::Kind::Truncated, "unexpected rng count");
  for (int i = 0; i < 2; ++i) {
    const std::string name = r.str();
    const std::uint64_t state = r.u64();
    const std::uint64_t inc = r.u64();
    if (name == "negatives")
      ck.rng_negatives = Rng::from_state(state, inc);
    else if (name == "batching")
      ck.rng_batching = Rng::from_state(state, inc);
    else
      throw CheckpointError(CheckpointError::Kind::Truncated,
                            "unknown rng stream '" + name + "'");
  }
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  write_file(path, serialize_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  return deserialize_checkpoint(read_file(path));
}

}  // namespace simrec
