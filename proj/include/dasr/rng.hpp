#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace dasr {

// splitmix64 finalizer; derives independent stream seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) noexcept;
// 64-bit FNV-1a; stable across platforms, used to turn names into streams.
std::uint64_t name_hash(std::string_view name) noexcept;

/// Seeded generator with portable integer/uniform/normal draws. The
/// standard distributions are implementation-defined, so draws here are
/// built directly on mt19937_64 output to keep streams identical across
/// standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }
    // Uniform in [0, 1) with 53 random bits.
    double uniform();
    // Uniform integer in [0, n); n > 0.
    int uniform_int(int n);
    // Standard normal (Box-Muller, one spare cached).
    double normal();

    std::string state() const;
    void set_state(const std::string& state);

    bool operator==(const Rng& other) const;

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace dasr
