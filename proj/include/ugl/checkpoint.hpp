#pragma once

// Checkpoint layout (all integers little-endian):
//
//   "UGL1"
//   u32 n_config, then n_config x u64: dim, n_layers, n_heads, max_len,
//       vocab_size, date_buckets, freq_buckets, ffn_mult
//   u32 n_tensors, then per tensor: u32 name_len, name bytes, u64 rows,
//       u64 cols, u64 offset (bytes from the start of the data section)
//   data section: float32 values of each tensor, row-major, manifest order

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "ugl/error.hpp"
#include "ugl/model.hpp"

namespace ugl {

inline constexpr std::array<char, 4> kCheckpointMagic{'U', 'G', 'L', '1'};

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b, 4);
}

inline void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b, 8);
}

inline std::uint64_t get_le(std::istream& in, int bytes, const char* what) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), bytes)) throw Error(std::string("truncated checkpoint reading ") + what);
  std::uint64_t v = 0;
  for (int i = bytes - 1; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

}  // namespace detail

template <class Real>
void write_checkpoint(std::ostream& out, const ModelParams<Real>& params) {
  const ModelConfig& c = params.config;
  out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  const std::array<std::uint64_t, 8> cfg{c.dim, c.n_layers, c.n_heads, c.max_len,
                                          c.vocab_size, c.date_buckets, c.freq_buckets, c.ffn_mult};
  detail::put_u32(out, cfg.size());
  for (auto v : cfg) detail::put_u64(out, v);

  const auto tensors = params.tensors();
  detail::put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_u64(out, static_cast<std::uint64_t>(t->rows()));
    detail::put_u64(out, static_cast<std::uint64_t>(t->cols()));
    detail::put_u64(out, offset);
    offset += static_cast<std::uint64_t>(t->size()) * 4;
  }
  for (const auto& [name, t] : tensors)
    for (Eigen::Index i = 0; i < t->size(); ++i)
      detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(t->data()[i])));
  if (!out) throw Error("failed writing checkpoint");
}

template <class Real = float>
ModelParams<Real> read_checkpoint(std::istream& in) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kCheckpointMagic) throw Error("not a UGL1 checkpoint");
  const auto n_cfg = detail::get_le(in, 4, "config count");
  if (n_cfg != 8) throw Error("unexpected checkpoint config length " + std::to_string(n_cfg));
  ModelConfig c;
  for (std::size_t* field : {&c.dim, &c.n_layers, &c.n_heads, &c.max_len, &c.vocab_size, &c.date_buckets,
                             &c.freq_buckets, &c.ffn_mult})
    *field = static_cast<std::size_t>(detail::get_le(in, 8, "config"));
  ModelParams<Real> params = ModelParams<Real>::zeros(c);

  auto tensors = params.tensors();
  const auto n_tensors = detail::get_le(in, 4, "tensor count");
  if (n_tensors != tensors.size()) throw Error("checkpoint tensor count does not match its config");
  std::uint64_t expected_offset = 0;
  for (auto& [name, t] : tensors) {
    const auto len = detail::get_le(in, 4, "name length");
    std::string stored(len, '\0');
    if (!in.read(stored.data(), static_cast<std::streamsize>(len))) throw Error("truncated checkpoint name");
    const auto rows = detail::get_le(in, 8, "rows");
    const auto cols = detail::get_le(in, 8, "cols");
    const auto offset = detail::get_le(in, 8, "offset");
    if (stored != name || rows != static_cast<std::uint64_t>(t->rows()) ||
        cols != static_cast<std::uint64_t>(t->cols()) || offset != expected_offset)
      throw Error("checkpoint manifest mismatch at tensor '" + stored + "'");
    expected_offset += rows * cols * 4;
  }
  for (auto& [name, t] : tensors)
    for (Eigen::Index i = 0; i < t->size(); ++i)
      t->data()[i] = static_cast<Real>(std::bit_cast<float>(static_cast<std::uint32_t>(detail::get_le(in, 4, "data"))));
  return params;
}

template <class Real>
void save_checkpoint(const std::string& path, const ModelParams<Real>& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  write_checkpoint(out, params);
}

template <class Real = float>
ModelParams<Real> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint '" + path + "'");
  return read_checkpoint<Real>(in);
}

}  // namespace ugl
