#include "unle/rng.hpp"

namespace unle {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

RandomStream::RandomStream(std::uint64_t seed)
    : RandomStream(FromKey{}, mix64(seed ^ 0x5eed5eed5eed5eedULL)) {}

RandomStream::RandomStream(FromKey, std::uint64_t key)
    : key_(key), engine_(key) {}

RandomStream RandomStream::child(std::uint64_t id) const {
  return RandomStream(FromKey{}, mix64(key_ ^ mix64(id + 0x632be59bd9b4e019ULL)));
}

double RandomStream::normal() {
  std::normal_distribution<double> dist(0.0, 1.0);
  return dist(engine_);
}

double RandomStream::uniform() {
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  return dist(engine_);
}

Eigen::VectorXd RandomStream::normal_vector(Eigen::Index n) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Eigen::VectorXd out(n);
  for (Eigen::Index i = 0; i < n; ++i) out[i] = dist(engine_);
  return out;
}

}  // namespace unle
