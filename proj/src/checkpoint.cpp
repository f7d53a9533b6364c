#include "tokenpose/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "tokenpose/errors.hpp"

namespace tokenpose {

namespace {

template <typename T>
void write_le(std::ostream& out, T value) {
  unsigned char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i)
    bytes[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  in.read(reinterpret_cast<char*>(bytes), sizeof(T));
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return static_cast<T>(v);
}

void write_f32_le(std::ostream& out, const float* data, std::size_t count) {
  static_assert(sizeof(float) == 4);
  // x86 target is little-endian; byte-swap portably anyway
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, data + i, 4);
    write_le<std::uint32_t>(out, bits);
  }
}

void read_f32_le(std::istream& in, float* data, std::size_t count) {
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t bits = read_le<std::uint32_t>(in);
    std::memcpy(data + i, &bits, 4);
  }
}

}  // namespace

void Checkpoint::add(const std::string& name, std::vector<std::uint32_t> dims,
                     std::vector<float> data) {
  if (find(name)) throw InvalidArgument("checkpoint entry \"" + name + "\" added twice");
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  if (dims.empty() || n != data.size())
    throw InvalidArgument("checkpoint entry \"" + name + "\" dims do not match payload");
  entries.push_back({name, std::move(dims), std::move(data)});
}

const Checkpoint::Entry* Checkpoint::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

const Checkpoint::Entry& Checkpoint::require(const std::string& name) const {
  const Entry* e = find(name);
  if (!e) throw IncompatibleCheckpoint("checkpoint is missing entry \"" + name + "\"");
  return *e;
}

void Checkpoint::add_string(const std::string& name, const std::string& text) {
  std::vector<float> data(text.size());
  for (std::size_t i = 0; i < text.size(); ++i)
    data[i] = static_cast<float>(static_cast<unsigned char>(text[i]));
  add(name, {static_cast<std::uint32_t>(text.size())}, std::move(data));
}

std::string Checkpoint::get_string(const std::string& name) const {
  const Entry& e = require(name);
  std::string text(e.data.size(), '\0');
  for (std::size_t i = 0; i < e.data.size(); ++i)
    text[i] = static_cast<char>(static_cast<unsigned char>(e.data[i]));
  return text;
}

void Checkpoint::save(const std::string& path) const {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp + " for writing");
    out.write("TKPZ", 4);
    write_le<std::uint32_t>(out, version);
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
    for (const auto& e : entries) {
      if (e.name.size() > 0xffff) throw InvalidArgument("checkpoint entry name too long");
      write_le<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
      out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
      out.put(static_cast<char>(e.dims.size()));
      for (auto d : e.dims) write_le<std::uint32_t>(out, d);
      write_f32_le(out, e.data.data(), e.data.size());
    }
    if (!out) throw IoError("short write to " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp + " to " + path + ": " + ec.message());
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "TKPZ", 4) != 0)
    throw IncompatibleCheckpoint(path + ": not a TKPZ checkpoint");
  std::uint32_t ver = read_le<std::uint32_t>(in);
  if (ver != version)
    throw IncompatibleCheckpoint(path + ": unsupported version " + std::to_string(ver));
  std::uint32_t count = read_le<std::uint32_t>(in);
  Checkpoint ckpt;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint16_t name_len = read_le<std::uint16_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    int rank = in.get();
    if (rank <= 0 || rank > 8) throw IncompatibleCheckpoint(path + ": bad rank in entry " + name);
    std::vector<std::uint32_t> dims(static_cast<std::size_t>(rank));
    std::size_t n = 1;
    for (auto& d : dims) {
      d = read_le<std::uint32_t>(in);
      n *= d;
    }
    std::vector<float> data(n);
    read_f32_le(in, data.data(), n);
    if (!in) throw IncompatibleCheckpoint(path + ": truncated entry " + name);
    if (ckpt.find(name))
      throw IncompatibleCheckpoint(path + ": duplicate entry \"" + name + "\"");
    ckpt.entries.push_back({std::move(name), std::move(dims), std::move(data)});
  }
  return ckpt;
}

}  // namespace tokenpose
