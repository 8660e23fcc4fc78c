#include "critspec/network_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "critspec/errors.hpp"

namespace critspec {

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <class T>
T byteswap_if_big(T value) {
  if constexpr (std::endian::native == std::endian::big) {
    std::array<unsigned char, sizeof(T)> bytes;
    std::memcpy(bytes.data(), &value, sizeof(T));
    std::reverse(bytes.begin(), bytes.end());
    std::memcpy(&value, bytes.data(), sizeof(T));
  }
  return value;
}

void put_u32(std::ostream& out, std::uint32_t v) {
  v = byteswap_if_big(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_f64(std::ostream& out, double v) {
  v = byteswap_if_big(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t get_u32(std::istream& in) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw ConfigError("network file truncated");
  return byteswap_if_big(v);
}

double get_f64(std::istream& in) {
  double v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw ConfigError("network file truncated");
  return byteswap_if_big(v);
}

}  // namespace

void write_network(std::ostream& out, const NetworkState& net) {
  net.validate();
  out.write("CRSP", 4);
  put_u32(out, kNetworkFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(net.widths.size()));
  for (int w : net.widths) put_u32(out, static_cast<std::uint32_t>(w));
  put_u32(out, net.activation == Activation::tanh ? 0u : 1u);
  put_u32(out, net.head == HeadKind::gaussian_identity ? 0u : 1u);
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    const Matrix& w = net.weights[l];
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) put_f64(out, w(i, j));
    for (Eigen::Index i = 0; i < net.biases[l].size(); ++i) put_f64(out, net.biases[l](i));
  }
  if (!out) throw ConfigError("failed writing network");
}

NetworkState read_network(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "CRSP", 4) != 0) throw ConfigError("not a CRSP network file");
  const std::uint32_t version = get_u32(in);
  if (version != kNetworkFormatVersion) throw ConfigError("unsupported CRSP version " + std::to_string(version));
  const std::uint32_t n = get_u32(in);
  if (n < 3 || n > 100000) throw ConfigError("CRSP: implausible width count");
  std::vector<int> widths(n);
  for (auto& w : widths) {
    const std::uint32_t v = get_u32(in);
    if (v == 0 || v > (1u << 24)) throw ConfigError("CRSP: implausible width");
    w = static_cast<int>(v);
  }
  const std::uint32_t act = get_u32(in);
  const std::uint32_t head = get_u32(in);
  if (act > 1 || head > 1) throw ConfigError("CRSP: bad activation/head code");
  NetworkState net = NetworkState::zeros(std::move(widths), act == 0 ? Activation::tanh : Activation::identity,
                                         head == 0 ? HeadKind::gaussian_identity : HeadKind::softmax);
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    Matrix& w = net.weights[l];
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = get_f64(in);
    for (Eigen::Index i = 0; i < net.biases[l].size(); ++i) net.biases[l](i) = get_f64(in);
  }
  net.validate();
  return net;
}

void save_network(const std::string& path, const NetworkState& net) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open '" + path + "' for writing");
  write_network(out, net);
}

NetworkState load_network(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open network file '" + path + "'");
  return read_network(in);
}

}  // namespace critspec
