#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace fedl2t {

/// Independent, serializable random stream. Streams are derived from a
/// (seed, purpose, index) triple so every client owns its own sequence and
/// results do not depend on the order in which clients run.
class RngStream {
public:
    RngStream() = default;
    RngStream(std::uint64_t seed, std::string_view purpose, std::uint64_t index = 0);

    std::uint64_t next_u64() { return engine_(); }
    /// Uniform in [0, 1).
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal();
    /// Uniform integer in [0, n).
    std::size_t below(std::size_t n);

    std::mt19937_64& engine() { return engine_; }

    std::string serialize() const;
    static RngStream deserialize(const std::string& text);

    friend bool operator==(const RngStream& a, const RngStream& b) { return a.engine_ == b.engine_; }

private:
    std::mt19937_64 engine_;
};

}  // namespace fedl2t
