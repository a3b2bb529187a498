#include "bsdelab/random.hpp"

#include <boost/math/special_functions/erf.hpp>

#include <cmath>

namespace bsdelab {

namespace {
constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;
}

std::uint64_t mix64(std::uint64_t x) {
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

RandomSource RandomSource::child(std::uint64_t id) const {
    return RandomSource{seed, mix64(stream + kGolden * (id + 1))};
}

NormalStream::NormalStream(const RandomSource& source)
    : state_(mix64(source.seed ^ mix64(source.stream + kGolden))) {}

std::uint64_t NormalStream::next_u64() {
    state_ += kGolden;
    return mix64(state_);
}

double NormalStream::next_uniform() {
    // 53 random bits, shifted by half an ulp to stay away from 0 and 1.
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double NormalStream::next_normal() {
    const double u = next_uniform();
    return -M_SQRT2 * boost::math::erfc_inv(2.0 * u);
}

}  // namespace bsdelab
