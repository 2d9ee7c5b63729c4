#pragma once

// Array container: 8-byte magic "DCEARRAY", u32 version, u32 dtype, u32 ndim,
// u64 dims[ndim], then the row-major payload. All integers and values are
// little-endian. A JSON sidecar "<file>.json" records provenance.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dcedip/kspace.hpp"
#include "dcedip/types.hpp"

namespace dcedip {

enum class DType : std::uint32_t { complex64 = 0, complex128 = 1, float32 = 2, float64 = 3 };

inline constexpr char kArrayMagic[8] = {'D', 'C', 'E', 'A', 'R', 'R', 'A', 'Y'};
inline constexpr std::uint32_t kArrayVersion = 1;
inline constexpr const char* kToolVersion = "dcedip 1.0.0";

inline std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::complex64: return 8;
    case DType::complex128: return 16;
    case DType::float32: return 4;
    case DType::float64: return 8;
  }
  throw DataError("unknown dtype code " + std::to_string(static_cast<std::uint32_t>(d)));
}

inline bool dtype_is_complex(DType d) { return d == DType::complex64 || d == DType::complex128; }

inline std::string dtype_name(DType d) {
  switch (d) {
    case DType::complex64: return "complex64";
    case DType::complex128: return "complex128";
    case DType::float32: return "float32";
    case DType::float64: return "float64";
  }
  return "unknown";
}

/// Values are held as doubles; complex arrays interleave real and imaginary parts.
struct ArrayData {
  DType dtype = DType::float64;
  std::vector<std::uint64_t> shape;
  std::vector<double> values;

  std::uint64_t elements() const {
    std::uint64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }
};

namespace detail {

template <class U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <class U>
U get_le(const std::string& in, std::size_t& pos, const std::string& what) {
  if (pos + sizeof(U) > in.size()) throw DataError(what + ": truncated");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += sizeof(U);
  return v;
}

inline std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError(path + ": cannot open");
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::string& bytes) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw DataError(path + ": write failed");
}

}  // namespace detail

inline std::string encode_array(const ArrayData& a) {
  const std::uint64_t scalars = a.elements() * (dtype_is_complex(a.dtype) ? 2 : 1);
  require(a.values.size() == scalars, "encode_array: value count does not match shape");
  std::string out(kArrayMagic, kArrayMagic + 8);
  detail::put_le<std::uint32_t>(out, kArrayVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(a.dtype));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(a.shape.size()));
  for (auto d : a.shape) detail::put_le<std::uint64_t>(out, d);
  const bool single = a.dtype == DType::complex64 || a.dtype == DType::float32;
  out.reserve(out.size() + scalars * (single ? 4 : 8));
  for (double v : a.values) {
    if (single)
      detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    else
      detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

inline ArrayData decode_array(const std::string& bytes, const std::string& what = "array") {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kArrayMagic, 8) != 0) throw DataError(what + ": bad magic");
  std::size_t pos = 8;
  const auto version = detail::get_le<std::uint32_t>(bytes, pos, what);
  if (version != kArrayVersion) throw DataError(what + ": unsupported version " + std::to_string(version));
  ArrayData a;
  const auto code = detail::get_le<std::uint32_t>(bytes, pos, what);
  if (code > 3) throw DataError(what + ": field dtype has unknown code " + std::to_string(code));
  a.dtype = static_cast<DType>(code);
  const auto ndim = detail::get_le<std::uint32_t>(bytes, pos, what);
  if (ndim > 16) throw DataError(what + ": field ndim = " + std::to_string(ndim) + " is implausible");
  for (std::uint32_t i = 0; i < ndim; ++i) a.shape.push_back(detail::get_le<std::uint64_t>(bytes, pos, what));
  const std::uint64_t scalars = a.elements() * (dtype_is_complex(a.dtype) ? 2 : 1);
  const std::size_t width = dtype_size(a.dtype) / (dtype_is_complex(a.dtype) ? 2 : 1);
  if (bytes.size() - pos != scalars * width)
    throw DataError(what + ": payload has " + std::to_string(bytes.size() - pos) + " bytes, shape implies " +
                    std::to_string(scalars * width));
  a.values.resize(scalars);
  for (auto& v : a.values)
    v = width == 4 ? static_cast<double>(std::bit_cast<float>(detail::get_le<std::uint32_t>(bytes, pos, what)))
                   : std::bit_cast<double>(detail::get_le<std::uint64_t>(bytes, pos, what));
  return a;
}

inline void write_array(const std::string& path, const ArrayData& a) { detail::write_file(path, encode_array(a)); }
inline ArrayData read_array(const std::string& path) { return decode_array(detail::read_file(path), path); }

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[i] = digits[v & 0xf];
  return s;
}

/// Hash of the canonical (key-sorted, compact) JSON text.
inline std::string config_hash(const nlohmann::json& cfg) { return hex64(fnv1a(cfg.dump())); }

inline std::string sidecar_path(const std::string& path) { return path + ".json"; }

/// Provenance sidecar; `extra` carries artifact-specific metadata. No timestamps, so reruns are byte-identical.
inline void write_sidecar(const std::string& path, const ArrayData& a, const std::string& hash,
                          const nlohmann::json& extra = nlohmann::json::object()) {
  nlohmann::json j;
  j["format"] = "DCEARRAY";
  j["version"] = kArrayVersion;
  j["dtype"] = dtype_name(a.dtype);
  j["shape"] = a.shape;
  j["config_hash"] = hash;
  j["tool_version"] = kToolVersion;
  j["meta"] = extra;
  detail::write_file(sidecar_path(path), j.dump(2) + "\n");
}

inline nlohmann::json read_sidecar(const std::string& path) {
  const auto text = detail::read_file(sidecar_path(path));
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(sidecar_path(path) + ": " + e.what());
  }
}

inline ArrayData pack_images(const ImageSeq& x) {
  require(!x.empty(), "pack_images: empty sequence");
  ArrayData a;
  a.dtype = DType::complex128;
  a.shape = {x.size(), static_cast<std::uint64_t>(x[0].rows()), static_cast<std::uint64_t>(x[0].cols())};
  a.values.reserve(2 * a.elements());
  for (const auto& f : x) {
    require(f.rows() == x[0].rows() && f.cols() == x[0].cols(), "pack_images: frame sizes differ");
    for (Eigen::Index i = 0; i < f.size(); ++i) {
      a.values.push_back(f(i).real());
      a.values.push_back(f(i).imag());
    }
  }
  return a;
}

inline ImageSeq unpack_images(const ArrayData& a, const std::string& what = "images") {
  if (!dtype_is_complex(a.dtype) || a.shape.size() != 3)
    throw DataError(what + ": expected a complex array of shape (T, n, n)");
  ImageSeq x(a.shape[0], Image(a.shape[1], a.shape[2]));
  std::size_t k = 0;
  for (auto& f : x)
    for (Eigen::Index i = 0; i < f.size(); ++i, k += 2) f(i) = cplx(a.values[k], a.values[k + 1]);
  return x;
}

inline ArrayData pack_labels(const LabelImage& l) {
  ArrayData a;
  a.dtype = DType::float64;
  a.shape = {static_cast<std::uint64_t>(l.rows()), static_cast<std::uint64_t>(l.cols())};
  for (Eigen::Index i = 0; i < l.size(); ++i) a.values.push_back(l(i));
  return a;
}

inline LabelImage unpack_labels(const ArrayData& a, const std::string& what = "labels") {
  if (a.dtype != DType::float64 || a.shape.size() != 2) throw DataError(what + ": expected float64 (n, n)");
  LabelImage l(a.shape[0], a.shape[1]);
  for (Eigen::Index i = 0; i < l.size(); ++i) l(i) = static_cast<int>(a.values[i]);
  return l;
}

/// k-space samples as complex128 (T, coils, samples); acquisition metadata goes to the sidecar.
inline ArrayData pack_kspace(const KSpaceFrames& k) {
  require(!k.frames.empty(), "pack_kspace: no frames");
  ArrayData a;
  a.dtype = DType::complex128;
  a.shape = {k.frames.size(), static_cast<std::uint64_t>(k.frames[0].rows()),
             static_cast<std::uint64_t>(k.frames[0].cols())};
  for (const auto& f : k.frames)
    for (Eigen::Index i = 0; i < f.size(); ++i) {
      a.values.push_back(f(i).real());
      a.values.push_back(f(i).imag());
    }
  return a;
}

inline nlohmann::json kspace_meta(const KSpaceFrames& k) {
  return {{"n", k.n},
          {"coils", k.coils},
          {"spokes_per_frame", k.spokes_per_frame},
          {"readout", k.readout},
          {"golden_angle", k.golden_angle},
          {"noise_sigma", k.noise_sigma},
          {"seed", k.seed}};
}

inline KSpaceFrames unpack_kspace(const ArrayData& a, const nlohmann::json& meta, const std::string& what = "kspace") {
  if (!dtype_is_complex(a.dtype) || a.shape.size() != 3)
    throw DataError(what + ": expected a complex array of shape (T, coils, samples)");
  KSpaceFrames k;
  try {
    k.n = meta.at("n").get<int>();
    k.coils = meta.at("coils").get<int>();
    k.spokes_per_frame = meta.at("spokes_per_frame").get<int>();
    k.readout = meta.at("readout").get<int>();
    k.golden_angle = meta.at("golden_angle").get<double>();
    k.noise_sigma = meta.at("noise_sigma").get<double>();
    k.seed = meta.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(what + " sidecar: " + e.what());
  }
  if (a.shape[1] != static_cast<std::uint64_t>(k.coils) ||
      a.shape[2] != static_cast<std::uint64_t>(k.spokes_per_frame) * k.readout)
    throw DataError(what + ": shape disagrees with sidecar coils/spokes/readout");
  std::size_t idx = 0;
  for (std::uint64_t t = 0; t < a.shape[0]; ++t) {
    FrameSamples f(a.shape[1], a.shape[2]);
    for (Eigen::Index i = 0; i < f.size(); ++i, idx += 2) f(i) = cplx(a.values[idx], a.values[idx + 1]);
    k.frames.push_back(std::move(f));
  }
  return k;
}

}  // namespace dcedip
