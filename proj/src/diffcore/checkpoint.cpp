#include "prefrl/diffcore/checkpoint.hpp"

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace prefrl::diffcore {

namespace {

constexpr std::array<char, 8> kMagic{'P', 'R', 'F', 'L', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint truncated");
  return v;
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in) {
  const auto n = get<std::uint64_t>(in);
  if (n > (1ull << 32)) throw std::runtime_error("checkpoint string length is implausible");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw std::runtime_error("checkpoint truncated");
  return s;
}

}  // namespace

const Tensor& Checkpoint::at(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw std::out_of_range("checkpoint has no tensor '" + name + "'");
}

void write_binary(std::ostream& out, const Checkpoint& ckpt) {
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, Checkpoint::kVersion);
  put_string(out, ckpt.meta.dump());
  put<std::uint64_t>(out, ckpt.tensors.size());
  for (const auto& [name, t] : ckpt.tensors) {
    put_string(out, name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("failed writing checkpoint");
}

Checkpoint read_binary(std::istream& in) {
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw std::runtime_error("not a checkpoint file (bad magic)");
  const auto version = get<std::uint32_t>(in);
  if (version != Checkpoint::kVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.meta = nlohmann::json::parse(get_string(in));
  const auto count = get<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = get_string(in);
    const auto rank = get<std::uint32_t>(in);
    std::vector<std::size_t> shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = static_cast<std::size_t>(get<std::uint64_t>(in));
      n *= d;
    }
    std::vector<double> values(n);
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw std::runtime_error("checkpoint truncated in tensor '" + name + "'");
    ckpt.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  return ckpt;
}

void save_binary(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_binary(out, ckpt);
}

Checkpoint load_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_binary(in);
}

nlohmann::json to_json(const Checkpoint& ckpt) {
  nlohmann::json j;
  j["version"] = Checkpoint::kVersion;
  j["meta"] = ckpt.meta;
  auto& arr = j["tensors"] = nlohmann::json::array();
  for (const auto& [name, t] : ckpt.tensors) {
    arr.push_back({{"name", name},
                   {"shape", t.shape()},
                   {"values", std::vector<double>(t.values().begin(), t.values().end())}});
  }
  return j;
}

Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  if (j.at("version").get<std::uint32_t>() != Checkpoint::kVersion) {
    throw std::runtime_error("unsupported checkpoint version");
  }
  Checkpoint ckpt;
  ckpt.meta = j.at("meta");
  for (const auto& e : j.at("tensors")) {
    ckpt.tensors.emplace_back(e.at("name").get<std::string>(),
                              Tensor(e.at("shape").get<std::vector<std::size_t>>(),
                                     e.at("values").get<std::vector<double>>()));
  }
  return ckpt;
}

}  // namespace prefrl::diffcore
