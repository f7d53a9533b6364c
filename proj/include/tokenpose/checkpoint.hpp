#ifndef TOKENPOSE_CHECKPOINT_HPP
#define TOKENPOSE_CHECKPOINT_HPP

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace tokenpose {

// TKPZ container: magic "TKPZ", version u32, entry count u32; per entry:
// name length u16, UTF-8 name, rank u8, dims as u32 little-endian, then a
// 32-bit little-endian float payload. Everything the run needs lives in
// entries: parameters, optimizer moments (opt/m/..., opt/v/...), the step
// counter (opt/step) and the config snapshot (meta/config_json, one byte per
// float).
struct Checkpoint {
  struct Entry {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<float> data;
  };

  std::vector<Entry> entries;

  void add(const std::string& name, std::vector<std::uint32_t> dims, std::vector<float> data);
  const Entry* find(const std::string& name) const;
  const Entry& require(const std::string& name) const;  // IncompatibleCheckpoint when absent

  void add_string(const std::string& name, const std::string& text);
  std::string get_string(const std::string& name) const;

  // write-temp-then-rename
  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

  static constexpr std::uint32_t version = 1;
};

}  // namespace tokenpose

#endif
