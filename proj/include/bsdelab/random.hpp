#pragma once

#include <cstdint>

namespace bsdelab {

/// Deterministic source of randomness addressed by (seed, stream).
///
/// Every path, replication or experiment owns a substream obtained with
/// `child(id)`. Draws depend only on (seed, stream, draw index), never on
/// thread count or scheduling order.
struct RandomSource {
    std::uint64_t seed = 0;
    std::uint64_t stream = 0;

    RandomSource child(std::uint64_t id) const;
};

/// Sequential generator for one substream.
///
/// Uniforms come from a SplitMix64 sequence keyed by (seed, stream); normals
/// are obtained by inverse-CDF transform of one uniform each, so the i-th
/// normal of a stream is a fixed function of (seed, stream, i).
class NormalStream {
public:
    explicit NormalStream(const RandomSource& source);

    std::uint64_t next_u64();
    /// Uniform on the open interval (0, 1).
    double next_uniform();
    double next_normal();

private:
    std::uint64_t state_;
};

/// SplitMix64 finalizer; exposed for hashing ids into stream keys.
std::uint64_t mix64(std::uint64_t x);

}  // namespace bsdelab
