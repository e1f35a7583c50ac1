#include "topiclm/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <set>

namespace topiclm {

namespace {

constexpr char kMagic[4] = {'K', 'P', 'L', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n, const char* what) {
    if (pos + n > buf.size())
      throw CheckpointError(CheckpointError::Kind::truncated,
                            std::string("checkpoint truncated while reading ") + what);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k)
      v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[pos + static_cast<std::size_t>(k)]))
           << (8 * k);
    pos += 4;
    return v;
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<std::uint8_t>(buf[pos++]);
  }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

std::size_t tensor_entry_size(const std::string& name, const TensorRecord& rec) {
  return 4 + name.size() + 1 + 1 + 4 * rec.dims.size() + rec.payload.size();
}

void save_checkpoint_file(const CheckpointData& data, const std::string& path) {
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(data.tensors.size()));
  for (const auto& [name, rec] : data.tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.append(name);
    out.push_back(static_cast<char>(rec.dtype));
    out.push_back(static_cast<char>(rec.dims.size()));
    for (int d : rec.dims) put_u32(out, static_cast<std::uint32_t>(d));
    out.append(reinterpret_cast<const char*>(rec.payload.data()), rec.payload.size());
  }
  put_u32(out, static_cast<std::uint32_t>(data.metadata.size()));
  out.append(data.metadata);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError(CheckpointError::Kind::io, "cannot write checkpoint '" + path + "'");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw CheckpointError(CheckpointError::Kind::io, "short write on '" + path + "'");
}

CheckpointData load_checkpoint_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError(CheckpointError::Kind::io, "cannot open checkpoint '" + path + "'");
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  Reader r{buf};
  const std::string magic = r.bytes(4, "magic");
  if (magic != std::string(kMagic, 4))
    throw CheckpointError(CheckpointError::Kind::bad_magic, "bad magic in '" + path + "'");
  const std::uint32_t version = r.u32("version");
  if (version != kVersion)
    throw CheckpointError(CheckpointError::Kind::bad_version,
                          "unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t count = r.u32("tensor count");

  CheckpointData data;
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32("name length");
    const std::string name = r.bytes(name_len, "name");
    if (!seen.insert(name).second)
      throw CheckpointError(CheckpointError::Kind::shape_mismatch,
                            "duplicate tensor '" + name + "'");
    TensorRecord rec;
    rec.dtype = r.u8("dtype");
    if (rec.dtype > 1)
      throw CheckpointError(CheckpointError::Kind::shape_mismatch,
                            "unknown dtype for '" + name + "'");
    const std::uint8_t rank = r.u8("rank");
    if (rank > 4)
      throw CheckpointError(CheckpointError::Kind::shape_mismatch, "rank > 4 for '" + name + "'");
    for (int k = 0; k < rank; ++k) rec.dims.push_back(static_cast<int>(r.u32("dim")));
    const std::size_t width = rec.dtype == 0 ? 4 : 8;
    const std::string payload = r.bytes(static_cast<std::size_t>(rec.numel()) * width, "payload");
    rec.payload.assign(payload.begin(), payload.end());
    data.tensors.emplace_back(name, std::move(rec));
  }
  const std::uint32_t meta_len = r.u32("metadata length");
  data.metadata = r.bytes(meta_len, "metadata");
  if (r.pos != buf.size())
    throw CheckpointError(CheckpointError::Kind::truncated,
                          "trailing bytes after metadata in '" + path + "'");
  return data;
}

}  // namespace topiclm
