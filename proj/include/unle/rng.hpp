#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace unle {

/// Splittable random stream.
///
/// Every stream carries a 64-bit key. `child(id)` derives a new stream from
/// the key and `id` only, so the children of a stream do not depend on how
/// many draws the parent has consumed. Runs build a tree of streams
/// (seed -> round -> purpose -> chain) so that changing the number of chains
/// in one place does not perturb any other stream.
class RandomStream {
 public:
  using result_type = std::mt19937_64::result_type;

  explicit RandomStream(std::uint64_t seed = 0);

  RandomStream child(std::uint64_t id) const;

  std::uint64_t key() const { return key_; }

  result_type operator()() { return engine_(); }
  static constexpr result_type min() { return std::mt19937_64::min(); }
  static constexpr result_type max() { return std::mt19937_64::max(); }

  double normal();
  /// Uniform on [0, 1).
  double uniform();
  Eigen::VectorXd normal_vector(Eigen::Index n);

 private:
  struct FromKey {};
  RandomStream(FromKey, std::uint64_t key);

  std::uint64_t key_;
  std::mt19937_64 engine_;
};

/// SplitMix64 finalizer; used to derive stream keys.
std::uint64_t mix64(std::uint64_t x);

}  // namespace unle
