#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <map>
#include <string>
#include <string_view>

#include "pcgrpo/error.hpp"
#include "pcgrpo/io.hpp"
#include "pcgrpo/policy.hpp"

namespace pcgrpo {

/// One policy per answer schema, keyed by schema key (ordered, so iteration
/// and serialisation are deterministic).
using PolicySet = std::map<std::string, PolicyParams>;

/// Binary checkpoint layout (all integers and floats little-endian):
///
///   "PCGRPOCK"  magic, 8 bytes
///   u32         format version (1)
///   u32         number of policies
///   per policy:
///     u32 key length, key bytes (UTF-8)
///     u32 slots, u32 vocab, u32 features, u8 permutation flag
///     u64 value count, then that many IEEE-754 binary64 values in
///         PolicyParams' declared order
namespace checkpoint {

inline constexpr std::string_view kMagic = "PCGRPOCK";
inline constexpr std::uint32_t kVersion = 1;

namespace detail {

template <typename T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i)
    out += static_cast<char>(static_cast<std::uint64_t>(v) >> (8 * i) & 0xff);
}

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }
  std::string_view bytes(std::size_t n) {
    need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw ValidationError("checkpoint: truncated file");
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize(const PolicySet& set) {
  std::string out(kMagic);
  detail::put_le<std::uint32_t>(out, kVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(set.size()));
  for (const auto& [key, params] : set) {
    const PolicySchema& s = params.schema();
    if (key != s.key) throw ValidationError("checkpoint: map key differs from schema key");
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(key.size()));
    out += key;
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.slots));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.vocab));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.features));
    detail::put_le<std::uint8_t>(out, s.permutation ? 1 : 0);
    detail::put_le<std::uint64_t>(out, params.values().size());
    for (double x : params.values()) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(x));
  }
  return out;
}

inline PolicySet deserialize(std::string_view data) {
  detail::Reader in(data);
  if (in.bytes(kMagic.size()) != kMagic) throw ValidationError("checkpoint: bad magic");
  const auto version = in.get<std::uint32_t>();
  if (version != kVersion)
    throw ValidationError("checkpoint: unsupported version " + std::to_string(version));
  const auto count = in.get<std::uint32_t>();
  PolicySet set;
  for (std::uint32_t i = 0; i < count; ++i) {
    PolicySchema s;
    s.key = std::string(in.bytes(in.get<std::uint32_t>()));
    s.slots = static_cast<int>(in.get<std::uint32_t>());
    s.vocab = static_cast<int>(in.get<std::uint32_t>());
    s.features = static_cast<int>(in.get<std::uint32_t>());
    s.permutation = in.get<std::uint8_t>() != 0;
    const auto n = in.get<std::uint64_t>();
    if (n != PolicyParams::size_for(s)) throw ValidationError("checkpoint: value count mismatch");
    std::vector<double> values(n);
    for (auto& x : values) x = std::bit_cast<double>(in.get<std::uint64_t>());
    set.emplace(s.key, PolicyParams(s, std::move(values)));
  }
  if (!in.done()) throw ValidationError("checkpoint: trailing bytes");
  return set;
}

inline void save(const std::string& path, const PolicySet& set) { atomic_write(path, serialize(set)); }

inline PolicySet load(const std::string& path) { return deserialize(read_file(path)); }

}  // namespace checkpoint
}  // namespace pcgrpo
