// Counter-based random numbers. Every draw is a pure function of
// (seed, stream, index, step), so particle noise never depends on how work
// is split across threads.
#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace flowfilter {

/// Philox4x32-10 block function (Salmon et al., SC'11).
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key) noexcept;

/// Logical stream identifiers. Distinct streams never share counters.
enum class Stream : std::uint32_t {
  signal = 0,
  observation = 1,
  particles = 2,
  initial = 3,
  test = 4,
  bridge = 5,
};

/// Fills `out` with iid N(0,1) values for the given coordinates.
void standard_normals(std::uint64_t seed, Stream stream, std::uint64_t index,
                      std::uint64_t step, std::span<double> out) noexcept;

/// Source of Brownian increments dW with covariance dt * I, addressed by
/// (time step, particle/component index). Implementations must be pure:
/// identical arguments give identical output.
class IncrementSource {
 public:
  virtual ~IncrementSource() = default;
  virtual void draw(std::uint64_t step, std::uint64_t index, double dt,
                    std::span<double> out) const = 0;
};

class GaussianIncrements final : public IncrementSource {
 public:
  GaussianIncrements(std::uint64_t seed, Stream stream)
      : seed_(seed), stream_(stream) {}
  void draw(std::uint64_t step, std::uint64_t index, double dt,
            std::span<double> out) const override;
  std::uint64_t seed() const noexcept { return seed_; }

 private:
  std::uint64_t seed_;
  Stream stream_;
};

class ZeroIncrements final : public IncrementSource {
 public:
  void draw(std::uint64_t, std::uint64_t, double,
            std::span<double> out) const override;
};

/// Injected increments for deterministic tests.
class ScriptedIncrements final : public IncrementSource {
 public:
  using Fn = std::function<void(std::uint64_t step, std::uint64_t index,
                                double dt, std::span<double> out)>;
  explicit ScriptedIncrements(Fn fn) : fn_(std::move(fn)) {}
  void draw(std::uint64_t step, std::uint64_t index, double dt,
            std::span<double> out) const override {
    fn_(step, index, dt, out);
  }

 private:
  Fn fn_;
};

/// Halves the step of a coarse source by Brownian-bridge refinement: fine
/// steps 2k and 2k+1 sum exactly to coarse step k.
class BridgeRefinedIncrements final : public IncrementSource {
 public:
  BridgeRefinedIncrements(const IncrementSource& coarse, std::uint64_t seed)
      : coarse_(coarse), seed_(seed) {}
  void draw(std::uint64_t step, std::uint64_t index, double dt,
            std::span<double> out) const override;

 private:
  const IncrementSource& coarse_;
  std::uint64_t seed_;
};

}  // namespace flowfilter
