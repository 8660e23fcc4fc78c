#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace critspec {

/// Identifies an independent random stream. Two streams with equal
/// (seed, stream_id) produce identical draws on every host.
struct RngStream {
  std::uint64_t seed = 0;
  std::uint64_t stream_id = 0;

  /// Derives a child stream; children of distinct ids do not overlap in
  /// practice since the engine is reseeded through seed_seq.
  RngStream substream(std::uint64_t id) const {
    return RngStream{seed, stream_id * 0x9E3779B97F4A7C15ULL + id + 1};
  }
};

/// Owning generator for one RngStream. Not shared between threads.
class Rng {
 public:
  explicit Rng(RngStream stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(stream.seed), static_cast<std::uint32_t>(stream.seed >> 32),
                      static_cast<std::uint32_t>(stream.stream_id),
                      static_cast<std::uint32_t>(stream.stream_id >> 32)};
    engine_.seed(seq);
  }

  double normal() { return normal_(engine_); }

  double uniform() { return uniform_(engine_); }

  std::uint64_t below(std::uint64_t n) { return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_); }

  Eigen::MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    // Fill column-major so the draw order is fixed.
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal();
    return m;
  }

  Eigen::VectorXd normal_vector(Eigen::Index n) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = normal();
    return v;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace critspec
