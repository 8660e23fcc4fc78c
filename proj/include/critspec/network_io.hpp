#pragma once

#include <iosfwd>
#include <string>

#include "critspec/network.hpp"

namespace critspec {

/// Binary network container, all integers and floats little-endian:
///
///   char[4]  magic "CRSP"
///   u32      version (1)
///   u32      number of widths n, then n x u32 widths (N^0..N^L, N^g)
///   u32      activation (0 = tanh, 1 = identity)
///   u32      head (0 = gaussian_identity, 1 = softmax)
///   for each layer 1..L, then the readout:
///     f64[rows*cols] W, row-major
///     f64[rows]      b
inline constexpr std::uint32_t kNetworkFormatVersion = 1;

void write_network(std::ostream& out, const NetworkState& net);
NetworkState read_network(std::istream& in);

void save_network(const std::string& path, const NetworkState& net);
NetworkState load_network(const std::string& path);

}  // namespace critspec
