#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mcfbc/errors.hpp"

namespace mcfbc {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian; big-endian hosts are "
              "not supported");

/// Container format: magic "FBC1", a 4-byte little-endian header length,
/// a UTF-8 JSON header (names, shapes, dtype, config, epoch), then the raw
/// IEEE-754 tensor payloads in header order.
template <class T>
struct Checkpoint {
  struct NamedTensor {
    std::string name;
    std::vector<int> shape;
    std::vector<T> data;
  };

  int version = 1;
  int epoch = 0;
  nlohmann::json config;
  nlohmann::json rng;
  nlohmann::json extra;
  std::vector<NamedTensor> tensors;

  static constexpr const char* dtype_name() {
    if constexpr (sizeof(T) == 4) return "f32";
    else return "f64";
  }

  NamedTensor* find(const std::string& name) {
    for (auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }

  void add(const std::string& name, std::vector<int> shape, const T* data,
           std::size_t size) {
    NamedTensor t;
    t.name = name;
    t.shape = std::move(shape);
    t.data.assign(data, data + size);
    tensors.push_back(std::move(t));
  }

  void save(const std::filesystem::path& path) const {
    nlohmann::json header = {{"version", version},
                             {"dtype", dtype_name()},
                             {"epoch", epoch},
                             {"config", config},
                             {"rng", rng},
                             {"extra", extra}};
    nlohmann::json tlist = nlohmann::json::array();
    for (const auto& t : tensors)
      tlist.push_back({{"name", t.name}, {"shape", t.shape}});
    header["tensors"] = std::move(tlist);
    const std::string header_str = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out.write("FBC1", 4);
    const std::uint32_t len = static_cast<std::uint32_t>(header_str.size());
    out.write(reinterpret_cast<const char*>(&len), 4);
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for (const auto& t : tensors)
      out.write(reinterpret_cast<const char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(T)));
    if (!out) throw IoError("failed to write " + path.string());
  }

  static Checkpoint load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, "FBC1", 4) != 0)
      throw IoError(path.string() + ": not an FBC1 checkpoint");
    std::uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), 4);
    std::string header_str(len, '\0');
    in.read(header_str.data(), len);
    if (in.gcount() != static_cast<std::streamsize>(len))
      throw IoError(path.string() + ": truncated header");

    nlohmann::json header;
    try {
      header = nlohmann::json::parse(header_str);
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path.string() + ": bad header: " + e.what());
    }
    if (header.at("dtype").get<std::string>() != dtype_name())
      throw IoError(path.string() + ": dtype is " +
                    header.at("dtype").get<std::string>() + ", expected " +
                    dtype_name());

    Checkpoint ckpt;
    ckpt.version = header.at("version").get<int>();
    ckpt.epoch = header.at("epoch").get<int>();
    ckpt.config = header.value("config", nlohmann::json::object());
    ckpt.rng = header.value("rng", nlohmann::json::object());
    ckpt.extra = header.value("extra", nlohmann::json::object());
    for (const auto& tj : header.at("tensors")) {
      NamedTensor t;
      t.name = tj.at("name").get<std::string>();
      t.shape = tj.at("shape").get<std::vector<int>>();
      std::size_t count = 1;
      for (const int d : t.shape) count *= static_cast<std::size_t>(d);
      t.data.resize(count);
      in.read(reinterpret_cast<char*>(t.data.data()),
              static_cast<std::streamsize>(count * sizeof(T)));
      if (in.gcount() != static_cast<std::streamsize>(count * sizeof(T)))
        throw IoError(path.string() + ": truncated payload for " + t.name);
      ckpt.tensors.push_back(std::move(t));
    }
    return ckpt;
  }
};

}  // namespace mcfbc
