// Copyright 2026 The moelab Authors
// SPDX-License-Identifier: Apache-2.0

#include "moelab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "moelab/errors.hpp"

namespace moelab {

namespace fs = std::filesystem;

namespace {

constexpr const char* kFormat = "moelab-checkpoint-v1";

std::uint64_t to_le(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xffULL) << (8 * (7 - i));
    return r;
  }
  return v;
}

}  // namespace

void write_f64_le(const fs::path& file, std::span<const double> values) {
  std::vector<char> buf(values.size() * 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint64_t bits = to_le(std::bit_cast<std::uint64_t>(values[i]));
    std::memcpy(buf.data() + 8 * i, &bits, 8);
  }
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + file.string() + " for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("write failed for " + file.string());
}

std::vector<double> read_f64_le(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open " + file.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() % 8 != 0) throw ParseError(file.string() + ": size is not a multiple of 8 bytes", buf.size());
  std::vector<double> out(buf.size() / 8);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, buf.data() + 8 * i, 8);
    out[i] = std::bit_cast<double>(to_le(bits));
  }
  return out;
}

void save_checkpoint(const fs::path& dir, const ModelConfig& config, std::uint64_t step,
                     const ParamStore& params) {
  fs::path tmp = dir;
  tmp += ".tmp";
  std::error_code ec;
  fs::remove_all(tmp, ec);
  fs::create_directories(tmp, ec);
  if (ec) throw IoError("cannot create " + tmp.string() + ": " + ec.message());

  nlohmann::json manifest;
  manifest["format"] = kFormat;
  manifest["step"] = step;
  manifest["config"] = to_json(config);
  nlohmann::json entries = nlohmann::json::array();
  std::size_t offset = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string& name = params.names()[i];
    const Tensor& t = params.tensors()[i];
    const std::string file = name + ".f64";
    write_f64_le(tmp / file, t.data());
    entries.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}, {"file", file}});
    offset += t.numel();
  }
  manifest["params"] = std::move(entries);
  {
    std::ofstream out(tmp / "manifest.json", std::ios::trunc);
    if (!out) throw IoError("cannot write manifest in " + tmp.string());
    out << manifest.dump(2) << '\n';
    if (!out) throw IoError("cannot write manifest in " + tmp.string());
  }
  fs::remove_all(dir, ec);
  fs::rename(tmp, dir, ec);
  if (ec) throw IoError("cannot move checkpoint into " + dir.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("no manifest.json in " + dir.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(dir.string() + "/manifest.json: " + e.what(), e.byte);
  }
  if (manifest.value("format", "") != kFormat) {
    throw ParseError(dir.string() + "/manifest.json: unsupported format", 0);
  }
  Checkpoint ck;
  ck.config = model_config_from_json(manifest.at("config"));
  ck.step = manifest.at("step").get<std::uint64_t>();
  const auto layout = parameter_layout(ck.config);
  const auto& entries = manifest.at("params");
  if (entries.size() != layout.size()) {
    throw ParseError(dir.string() + ": parameter count does not match config", 0);
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    const std::string name = e.at("name").get<std::string>();
    const Shape shape = e.at("shape").get<Shape>();
    if (name != layout[i].first || shape != layout[i].second) {
      throw ParseError(dir.string() + ": parameter '" + name + "' does not match config layout", i);
    }
    std::vector<double> data = read_f64_le(dir / e.at("file").get<std::string>());
    if (data.size() != shape_numel(shape)) {
      throw ParseError(dir.string() + ": '" + name + "' has " + std::to_string(data.size()) +
                           " values, expected " + std::to_string(shape_numel(shape)),
                       i);
    }
    ck.params.add(name, Tensor::from_data(shape, std::move(data), true));
  }
  return ck;
}

}  // namespace moelab
