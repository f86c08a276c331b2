#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "zobil/errors.hpp"

namespace zobil {

namespace detail {

inline constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ull;

// Stafford variant-13 finalizer: full-avalanche 64-bit mix.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ull;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBull;
  z ^= z >> 31;
  return z;
}

constexpr std::uint64_t fold(std::uint64_t key, std::uint64_t word) {
  return mix64(key ^ (word + kGamma + (key << 6) + (key >> 2)));
}

inline std::uint64_t fold_label(std::uint64_t key, std::string_view label) {
  std::uint64_t h = 14695981039346656037ull;  // FNV-1a over the label bytes
  for (unsigned char c : label) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return fold(key, h);
}

struct PathNode {
  std::string label;
  std::uint64_t index;
  std::shared_ptr<const PathNode> parent;
};

}  // namespace detail

/// Splittable counter-based random stream.
///
/// A stream is identified by a root seed plus a path of (label, index) pairs.
/// Children are derived by hashing, never by advancing the parent, so
/// substreams can be handed to independent work units and replayed exactly:
/// the full draw sequence of any stream is a pure function of
/// (root_seed, path, number of draws so far).
class RngStream {
 public:
  using PathEntry = std::pair<std::string, std::uint64_t>;

  explicit RngStream(std::uint64_t root_seed)
      : root_seed_(root_seed), key_(detail::mix64(root_seed ^ detail::kGamma)) {}

  /// The substream at path `path() + [(label, index)]`, with a fresh counter.
  RngStream child(std::string_view label, std::uint64_t index) const {
    RngStream s = *this;
    s.key_ = detail::fold(detail::fold_label(key_, label), index);
    s.counter_ = 0;
    s.path_ = std::make_shared<const detail::PathNode>(
        detail::PathNode{std::string(label), index, path_});
    return s;
  }

  std::uint64_t next_u64() { return detail::mix64(key_ + ++counter_ * detail::kGamma); }

  /// Uniform in [0, 1).
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, bound). bound must be >= 1.
  std::uint64_t next_below(std::uint64_t bound) {
    if (bound == 0) throw InvalidParameterError("RngStream::next_below: bound must be >= 1");
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * bound) >> 64);
  }

  /// Standard normal via Box-Muller. Consumes exactly two words per call so
  /// the word stream advances independently of the surrounding call pattern.
  double next_gaussian() {
    const double u = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
    const double theta = 2.0 * std::numbers::pi * next_double();
    return std::sqrt(-2.0 * std::log(u)) * std::cos(theta);
  }

  std::uint64_t root_seed() const { return root_seed_; }

  std::vector<PathEntry> path() const {
    std::vector<PathEntry> out;
    for (const detail::PathNode* node = path_.get(); node != nullptr; node = node->parent.get())
      out.emplace_back(node->label, node->index);
    std::reverse(out.begin(), out.end());
    return out;
  }

  /// "trial[2]/sample[17]" -- used by instrumented oracles and error messages.
  std::string path_string() const {
    std::string out;
    for (const auto& [label, index] : path()) {
      if (!out.empty()) out += '/';
      out += label;
      out += '[';
      out += std::to_string(index);
      out += ']';
    }
    return out;
  }

 private:
  std::uint64_t root_seed_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  std::shared_ptr<const detail::PathNode> path_;
};

inline RngStream derive_stream(const RngStream& root, std::string_view label,
                               std::uint64_t index) {
  return root.child(label, index);
}

/// dim i.i.d. standard normal entries drawn from `stream`.
inline Eigen::VectorXd sample_gaussian(RngStream& stream, Eigen::Index dim) {
  if (dim < 1) throw InvalidParameterError("sample_gaussian: dim must be >= 1");
  Eigen::VectorXd v(dim);
  for (Eigen::Index i = 0; i < dim; ++i) v[i] = stream.next_gaussian();
  return v;
}

}  // namespace zobil
