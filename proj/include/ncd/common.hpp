#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace ncd {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Index = Eigen::Index;

/// Raised when an operation is called in a state that forbids it
/// (e.g. reshaping heads after training started).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Malformed on-disk data. `offset` is the byte position where parsing failed.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Named random streams derived from the single run seed.
enum class Stream : std::uint64_t {
  kData = 1,
  kAugment = 2,
  kInit = 3,
  kKMeans = 4,
  kShuffle = 5,
  kParts = 6,
  kPretrain = 7,
};

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Seed of `stream` under run seed `seed`, optionally specialised by up to two
/// counters (epoch, item index, ...). Each level is a splitmix64 round, so
/// streams are decorrelated even for adjacent seeds.
constexpr std::uint64_t stream_seed(std::uint64_t seed, Stream stream, std::uint64_t a = 0,
                                    std::uint64_t b = 0) {
  std::uint64_t s = mix64(seed ^ mix64(static_cast<std::uint64_t>(stream)));
  s = mix64(s ^ a);
  return mix64(s ^ (b * 0xD6E8FEB86659FD93ULL));
}

}  // namespace ncd
