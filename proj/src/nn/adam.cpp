// SPDX-License-Identifier: Apache-2.0
#include "gazenet/nn/adam.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "gazenet/errors.hpp"

namespace gazenet::nn {

Adam::Adam(const ParameterSet<float>& layout, AdamConfig config)
    : config_(config), m_(layout.zeros_like()), v_(layout.zeros_like()),
      trainable_(layout.size(), true) {
  if (!(config_.learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
}

void Adam::set_trainable(const std::function<bool(const std::string&)>& predicate) {
  for (std::size_t i = 0; i < m_.size(); ++i) trainable_[i] = predicate(m_[i].name);
}

void Adam::step(ParameterSet<float>& params, const ParameterSet<float>& grads) {
  if (!params.same_layout(m_) || !grads.same_layout(m_)) {
    throw ShapeError("optimizer layout mismatch");
  }
  ++step_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  const double step_size = config_.learning_rate / c1;
  const double sqrt_c2 = std::sqrt(c2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!trainable_[i]) continue;
    float* p = params.data(i);
    const float* g = grads.data(i);
    float* m = m_.data(i);
    float* v = v_.data(i);
    const std::size_t n = params[i].size();
    for (std::size_t k = 0; k < n; ++k) {
      const double gk = g[k];
      const double mk = b1 * m[k] + (1.0 - b1) * gk;
      const double vk = b2 * v[k] + (1.0 - b2) * gk * gk;
      m[k] = static_cast<float>(mk);
      v[k] = static_cast<float>(vk);
      p[k] -= static_cast<float>(step_size * mk / (std::sqrt(vk) / sqrt_c2 + config_.epsilon));
    }
  }
}

namespace {
constexpr char kMagic[8] = {'G', 'A', 'Z', 'E', 'A', 'D', 'A', 'M'};

void write_floats(std::ostream& os, const ParameterSet<float>& s) {
  for (const auto& t : s) {
    for (float v : t.values) {
      const auto u = std::bit_cast<std::uint32_t>(v);
      const char b[4] = {static_cast<char>(u & 0xFF), static_cast<char>((u >> 8) & 0xFF),
                         static_cast<char>((u >> 16) & 0xFF), static_cast<char>((u >> 24) & 0xFF)};
      os.write(b, 4);
    }
  }
}

void read_floats(std::istream& is, ParameterSet<float>& s) {
  for (auto& t : s) {
    for (float& v : t.values) {
      unsigned char b[4];
      if (!is.read(reinterpret_cast<char*>(b), 4)) throw ParseError("truncated optimizer state");
      v = std::bit_cast<float>(static_cast<std::uint32_t>(b[0]) |
                               static_cast<std::uint32_t>(b[1]) << 8 |
                               static_cast<std::uint32_t>(b[2]) << 16 |
                               static_cast<std::uint32_t>(b[3]) << 24);
    }
  }
}
}  // namespace

void Adam::save(const std::filesystem::path& path) const {
  nlohmann::json names = nlohmann::json::array();
  for (const auto& t : m_) names.push_back({{"name", t.name}, {"shape", t.shape}});
  const std::string header = nlohmann::json{{"step", step_}, {"tensors", names}}.dump();
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write optimizer state " + tmp.string());
    f.write(kMagic, sizeof(kMagic));
    f << header << '\n';
    write_floats(f, m_);
    write_floats(f, v_);
    if (!f) throw IoError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void Adam::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open optimizer state " + path.string());
  char magic[8];
  if (!f.read(magic, 8) || std::string(magic, 8) != std::string(kMagic, 8)) {
    throw ParseError(path.string() + ": not an optimizer state file");
  }
  std::string line;
  std::getline(f, line);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
    const auto& tensors = header.at("tensors");
    if (tensors.size() != m_.size()) throw ParseError(path.string() + ": tensor count mismatch");
    for (std::size_t i = 0; i < m_.size(); ++i) {
      if (tensors[i].at("name").get<std::string>() != m_[i].name ||
          tensors[i].at("shape").get<std::vector<int>>() != m_[i].shape) {
        throw ParseError(path.string() + ": layout mismatch at " + m_[i].name);
      }
    }
    step_ = header.at("step").get<std::int64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  read_floats(f, m_);
  read_floats(f, v_);
}

}  // namespace gazenet::nn
