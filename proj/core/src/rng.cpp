#include "flowfilter/rng.hpp"

#include <cmath>
#include <numbers>
#include <vector>

namespace flowfilter {

namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi,
                    std::uint32_t& lo) noexcept {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

// 53-bit uniform in the open interval (0, 1).
inline double to_unit(std::uint32_t hi, std::uint32_t lo) noexcept {
  const std::uint64_t bits =
      ((static_cast<std::uint64_t>(hi) << 32) | lo) >> 11;
  return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

}  // namespace

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> c,
                                        std::array<std::uint32_t, 2> k) noexcept {
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kMul0, c[0], hi0, lo0);
    mulhilo(kMul1, c[2], hi1, lo1);
    c = {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
    k[0] += kWeyl0;
    k[1] += kWeyl1;
  }
  return c;
}

void standard_normals(std::uint64_t seed, Stream stream, std::uint64_t index,
                      std::uint64_t step, std::span<double> out) noexcept {
  const std::array<std::uint32_t, 2> key = {
      static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  // counter word 0: block (low 16 bits) | stream (high 16 bits)
  // counter word 1: index, words 2-3: step
  const std::uint32_t stream_bits = static_cast<std::uint32_t>(stream) << 16;
  std::size_t filled = 0;
  for (std::uint32_t block = 0; filled < out.size(); ++block) {
    const auto r = philox4x32(
        {stream_bits | block, static_cast<std::uint32_t>(index),
         static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32)},
        key);
    const double u1 = to_unit(r[0], r[1]);
    const double u2 = to_unit(r[2], r[3]);
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    out[filled++] = radius * std::cos(angle);
    if (filled < out.size()) out[filled++] = radius * std::sin(angle);
  }
}

void GaussianIncrements::draw(std::uint64_t step, std::uint64_t index,
                              double dt, std::span<double> out) const {
  standard_normals(seed_, stream_, index, step, out);
  const double scale = std::sqrt(dt);
  for (double& v : out) v *= scale;
}

void ZeroIncrements::draw(std::uint64_t, std::uint64_t, double,
                          std::span<double> out) const {
  for (double& v : out) v = 0.0;
}

void BridgeRefinedIncrements::draw(std::uint64_t step, std::uint64_t index,
                                   double dt, std::span<double> out) const {
  const std::uint64_t coarse_step = step / 2;
  std::vector<double> coarse(out.size());
  coarse_.draw(coarse_step, index, 2.0 * dt, coarse);
  std::vector<double> xi(out.size());
  standard_normals(seed_, Stream::bridge, index, coarse_step, xi);
  const double sd = std::sqrt(0.5 * dt);
  for (std::size_t j = 0; j < out.size(); ++j) {
    const double first = 0.5 * coarse[j] + sd * xi[j];
    out[j] = (step % 2 == 0) ? first : coarse[j] - first;
  }
}

}  // namespace flowfilter
