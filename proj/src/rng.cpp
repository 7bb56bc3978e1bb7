#include "fedl2t/rng.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "fedl2t/error.hpp"

namespace fedl2t {

namespace {

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::uint32_t lo32(std::uint64_t v) { return static_cast<std::uint32_t>(v & 0xffffffffu); }
std::uint32_t hi32(std::uint64_t v) { return static_cast<std::uint32_t>(v >> 32); }

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::string_view purpose, std::uint64_t index) {
    const std::uint64_t tag = fnv1a(purpose);
    std::seed_seq seq{lo32(seed), hi32(seed), lo32(tag), hi32(tag), lo32(index), hi32(index)};
    engine_.seed(seq);
}

// Hand-rolled conversions keep streams identical across standard libraries;
// the std distributions are implementation-defined.
double RngStream::uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double RngStream::normal() {
    // Box-Muller, one variate per call so no hidden state survives a checkpoint.
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t RngStream::below(std::size_t n) {
    if (n == 0) throw ContractViolation("RngStream::below: empty range");
    // Rejection sampling for an unbiased draw.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t v = engine_();
    while (v >= limit) v = engine_();
    return static_cast<std::size_t>(v % n);
}

std::string RngStream::serialize() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
}

RngStream RngStream::deserialize(const std::string& text) {
    RngStream r;
    std::istringstream is(text);
    is >> r.engine_;
    if (!is) throw IoError("corrupt RNG state");
    return r;
}

}  // namespace fedl2t
