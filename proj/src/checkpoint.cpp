#include "facedet/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include "facedet/data.hpp"  // DataError

using nlohmann::json;

namespace facedet {

namespace {

void put_le64(uint64_t v, unsigned char* out) {
  for (int i = 0; i < 8; ++i) out[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
}

uint64_t get_le64(const unsigned char* in) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(in[i]) << (8 * i);
  return v;
}

uint64_t double_bits(double d) {
  uint64_t v;
  std::memcpy(&v, &d, 8);
  return v;
}

double bits_double(uint64_t v) {
  double d;
  std::memcpy(&d, &v, 8);
  return d;
}

}  // namespace

void Checkpoint::save(const std::string& path) const {
  json manifest;
  manifest["format_version"] = format_version;
  manifest["dtype"] = "float64";
  manifest["configs"] = configs;
  manifest["step"] = step;
  json rng = json::array();
  for (uint64_t s : rng_state) rng.push_back(std::to_string(s));
  manifest["rng_state"] = rng;

  json jtensors = json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : tensors) {
    json jt;
    jt["name"] = name;
    jt["shape"] = t.shape();
    jt["dtype"] = "float64";
    jt["offset"] = offset;
    jt["nbytes"] = t.numel() * 8;
    jtensors.push_back(jt);
    offset += t.numel() * 8;
  }
  manifest["tensors"] = jtensors;

  const std::string header = manifest.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(path + ": cannot open checkpoint for writing");
  out << header.size() << "\n" << header;
  std::vector<unsigned char> buf;
  for (const auto& [name, t] : tensors) {
    buf.resize(t.numel() * 8);
    for (std::size_t i = 0; i < t.numel(); ++i) put_le64(double_bits(t.data()[i]), buf.data() + i * 8);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  }
  if (!out) throw DataError(path + ": checkpoint write failed");
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path + ": cannot open checkpoint");
  std::string len_line;
  if (!std::getline(in, len_line)) throw DataError(path + ": missing manifest length line");
  std::size_t header_len = 0;
  try {
    header_len = std::stoull(len_line);
  } catch (const std::exception&) {
    throw DataError(path + ": malformed manifest length '" + len_line + "'");
  }
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (static_cast<std::size_t>(in.gcount()) != header_len)
    throw DataError(path + ": truncated manifest");

  json manifest;
  try {
    manifest = json::parse(header);
  } catch (const json::exception& e) {
    throw DataError(path + ": malformed manifest JSON: " + e.what());
  }

  Checkpoint ckpt;
  ckpt.format_version = manifest.at("format_version").get<int>();
  if (ckpt.format_version != 1)
    throw DataError(path + ": unsupported format_version " + std::to_string(ckpt.format_version));
  if (manifest.at("dtype").get<std::string>() != "float64")
    throw DataError(path + ": unsupported dtype " + manifest.at("dtype").get<std::string>());
  ckpt.configs = manifest.at("configs");
  ckpt.step = manifest.at("step").get<int64_t>();
  const auto& rng = manifest.at("rng_state");
  for (std::size_t i = 0; i < 4 && i < rng.size(); ++i)
    ckpt.rng_state[i] = std::stoull(rng[i].get<std::string>());

  std::vector<unsigned char> buf;
  for (const auto& jt : manifest.at("tensors")) {
    const std::string name = jt.at("name").get<std::string>();
    const Shape shape = jt.at("shape").get<Shape>();
    const std::size_t nbytes = jt.at("nbytes").get<std::size_t>();
    if (nbytes != shape_numel(shape) * 8)
      throw DataError(path + ": tensor " + name + " byte count does not match shape");
    buf.resize(nbytes);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(nbytes));
    if (static_cast<std::size_t>(in.gcount()) != nbytes)
      throw DataError(path + ": truncated payload for tensor " + name);
    std::vector<Scalar> values(nbytes / 8);
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = bits_double(get_le64(buf.data() + i * 8));
    ckpt.tensors.emplace_back(name, Tensor::from_data(shape, std::move(values)));
  }
  return ckpt;
}

const Tensor& Checkpoint::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw DataError("checkpoint has no tensor named '" + name + "'");
}

}  // namespace facedet
