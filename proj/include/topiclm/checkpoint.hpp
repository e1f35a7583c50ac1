#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "topiclm/errors.hpp"
#include "topiclm/tensor.hpp"

namespace topiclm {

// One serialized tensor: dtype 0 = f32, 1 = f64; payload is little-endian.
struct TensorRecord {
  std::uint8_t dtype = 0;
  std::vector<int> dims;
  std::vector<std::uint8_t> payload;

  long numel() const {
    long n = 1;
    for (int d : dims) n *= d;
    return n;
  }
};

// Named-tensor archive. Layout:
//   "KPLT" | u32 version=1 | u32 tensor_count
//   per tensor: u32 name_len | name | u8 dtype | u8 rank | u32 dims[rank] | payload
//   u32 metadata_len | metadata (UTF-8)
// All integers little-endian. Loading validates magic, version and
// structure; truncated files are rejected without a partial result.
struct CheckpointData {
  std::vector<std::pair<std::string, TensorRecord>> tensors;
  std::string metadata;

  const TensorRecord* find(const std::string& name) const {
    for (const auto& [n, r] : tensors)
      if (n == name) return &r;
    return nullptr;
  }
};

void save_checkpoint_file(const CheckpointData& data, const std::string& path);
CheckpointData load_checkpoint_file(const std::string& path);

// Serialized byte size of one tensor entry, for layout accounting.
std::size_t tensor_entry_size(const std::string& name, const TensorRecord& rec);

template <class S>
TensorRecord record_from(const Tensor<S>& t) {
  TensorRecord rec;
  rec.dtype = sizeof(S) == 4 ? 0 : 1;
  rec.dims = t.shape();
  rec.payload.resize(static_cast<std::size_t>(t.numel()) * sizeof(S));
  for (long i = 0; i < t.numel(); ++i) {
    S v = t.data()[i];
    std::uint64_t bits = 0;
    if constexpr (sizeof(S) == 4) {
      std::uint32_t b;
      static_assert(sizeof(float) == 4);
      __builtin_memcpy(&b, &v, 4);
      bits = b;
    } else {
      __builtin_memcpy(&bits, &v, 8);
    }
    for (std::size_t k = 0; k < sizeof(S); ++k)
      rec.payload[static_cast<std::size_t>(i) * sizeof(S) + k] =
          static_cast<std::uint8_t>((bits >> (8 * k)) & 0xff);
  }
  return rec;
}

template <class S>
Tensor<S> tensor_from(const TensorRecord& rec, bool requires_grad = true) {
  const std::size_t width = rec.dtype == 0 ? 4 : 8;
  if (rec.payload.size() != static_cast<std::size_t>(rec.numel()) * width)
    throw CheckpointError(CheckpointError::Kind::truncated, "tensor payload length mismatch");
  std::vector<S> data(static_cast<std::size_t>(rec.numel()));
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::uint64_t bits = 0;
    for (std::size_t k = 0; k < width; ++k)
      bits |= static_cast<std::uint64_t>(rec.payload[i * width + k]) << (8 * k);
    if (rec.dtype == 0) {
      std::uint32_t b = static_cast<std::uint32_t>(bits);
      float f;
      __builtin_memcpy(&f, &b, 4);
      data[i] = static_cast<S>(f);
    } else {
      double d;
      __builtin_memcpy(&d, &bits, 8);
      data[i] = static_cast<S>(d);
    }
  }
  return Tensor<S>(rec.dims, std::move(data), requires_grad);
}

}  // namespace topiclm
