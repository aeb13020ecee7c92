#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "prefrl/diffcore/tensor.hpp"

namespace prefrl::diffcore {

/// Named tensors plus free-form metadata. The binary form stores the raw
/// IEEE-754 bytes, so save/load is bit-exact.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::vector<std::pair<std::string, Tensor>> tensors;
  nlohmann::json meta = nlohmann::json::object();

  const Tensor& at(const std::string& name) const;
  void add(std::string name, const Tensor& t) { tensors.emplace_back(std::move(name), t); }
};

void write_binary(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_binary(std::istream& in);
void save_binary(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_binary(const std::filesystem::path& path);

nlohmann::json to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const nlohmann::json& j);

}  // namespace prefrl::diffcore
