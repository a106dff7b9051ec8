// SPDX-License-Identifier: Apache-2.0
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "gazenet/errors.hpp"
#include "gazenet/network.hpp"

namespace gazenet {

namespace {

constexpr char kMagic[8] = {'G', 'A', 'Z', 'E', 'N', 'E', 'T', 'P'};
constexpr std::uint32_t kVersion = 1;

template <typename U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <typename U>
U get_le(const unsigned char* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open parameter file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

void save_parameters(const ModelParameters& params, const std::filesystem::path& path) {
  GazeNetwork<float> net(params.config);
  net.check_parameters(params.values);

  std::string payload;
  payload.reserve(params.values.total_values() * 4);
  nlohmann::json table = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : params.values) {
    for (float v : t.values) put_le(payload, std::bit_cast<std::uint32_t>(v));
    table.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset},
                     {"count", t.values.size()}});
    offset += t.values.size();
  }
  nn::Fnv1a checksum;
  checksum.update(payload);
  const nlohmann::json header = {{"fingerprint", params.fingerprint()},
                                 {"config", params.config.to_json()},
                                 {"tensors", table},
                                 {"payload_bytes", payload.size()},
                                 {"checksum", hex64(checksum.value())}};
  const std::string header_text = header.dump();

  std::string out(kMagic, sizeof(kMagic));
  put_le(out, kVersion);
  put_le(out, static_cast<std::uint64_t>(header_text.size()));
  out += header_text;
  out += payload;

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write parameter file " + tmp.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

ModelParameters read_parameters(const std::filesystem::path& path) {
  const std::string data = read_all(path);
  const auto where = path.string() + ": ";
  if (data.size() < 20 || std::memcmp(data.data(), kMagic, sizeof(kMagic)) != 0) {
    throw ParseError(where + "not a parameter file");
  }
  const auto* bytes = reinterpret_cast<const unsigned char*>(data.data());
  const auto version = get_le<std::uint32_t>(bytes + 8);
  if (version != kVersion) throw ParseError(where + "unsupported version " + std::to_string(version));
  const auto header_len = get_le<std::uint64_t>(bytes + 12);
  if (header_len > data.size() - 20) throw ParseError(where + "truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(data.substr(20, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(where + "corrupt header: " + e.what());
  }
  const std::string_view payload(data.data() + 20 + header_len, data.size() - 20 - header_len);

  ModelParameters out;
  try {
    out.config = ModelConfig::from_json(header.at("config"));
    if (payload.size() != header.at("payload_bytes").get<std::size_t>()) {
      throw ParseError(where + "payload size mismatch (truncated file?)");
    }
    nn::Fnv1a checksum;
    checksum.update(payload);
    if (hex64(checksum.value()) != header.at("checksum").get<std::string>()) {
      throw ParseError(where + "payload checksum mismatch");
    }
    if (header.at("fingerprint").get<std::string>() != out.config.fingerprint()) {
      throw ParseError(where + "stored fingerprint does not match stored config");
    }
    const auto* p = reinterpret_cast<const unsigned char*>(payload.data());
    for (const auto& entry : header.at("tensors")) {
      const auto name = entry.at("name").get<std::string>();
      const auto shape = entry.at("shape").get<std::vector<int>>();
      const auto offset = entry.at("offset").get<std::uint64_t>();
      const auto count = entry.at("count").get<std::uint64_t>();
      if (count != nn::shape_size(shape) || (offset + count) * 4 > payload.size()) {
        throw ParseError(where + "bad tensor table entry for " + name);
      }
      const std::size_t i = out.values.add(name, shape);
      for (std::uint64_t k = 0; k < count; ++k) {
        out.values[i].values[k] = std::bit_cast<float>(get_le<std::uint32_t>(p + 4 * (offset + k)));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(where + "corrupt header: " + e.what());
  } catch (const std::invalid_argument& e) {
    throw ParseError(where + e.what());
  }
  GazeNetwork<float> net(out.config);
  try {
    net.check_parameters(out.values);
  } catch (const ShapeError& e) {
    throw ParseError(where + e.what());
  }
  if (!out.values.all_finite()) throw ParseError(where + "non-finite weights");
  return out;
}

ModelParameters load_parameters(const std::filesystem::path& path, const ModelConfig& expected) {
  ModelParameters p = read_parameters(path);
  if (p.fingerprint() != expected.fingerprint()) {
    throw FingerprintError("architecture fingerprint mismatch for " + path.string() + ": file " +
                           p.fingerprint() + ", expected " + expected.fingerprint());
  }
  // Non-architectural settings (dropout, sequence length) come from the caller.
  p.config = expected;
  return p;
}

int load_pretrained_convolutions(nn::ParameterSet<float>& params,
                                 const std::filesystem::path& path) {
  const ModelParameters src = read_parameters(path);
  int copied = 0;
  for (auto& t : params) {
    if (t.name.find(".conv") == std::string::npos) continue;
    const auto i = src.values.find(t.name);
    if (!i || src.values[*i].shape != t.shape) continue;
    t.values = src.values[*i].values;
    ++copied;
  }
  return copied;
}

}  // namespace gazenet
