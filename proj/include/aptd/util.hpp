#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace aptd {

std::string trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);
bool parse_double(std::string_view s, double& out);
// shortest text that parses back to the same double
std::string fmt_double(double v);
// fixed six decimals, used for microsecond-quantized timestamps
std::string fmt_time(double seconds);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

// Seeded random source. The standard engine is portable; the transforms below are
// spelled out so outputs do not depend on the standard library's distributions.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }
    // [0, 1)
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // [lo, hi]
    std::int64_t integer(std::int64_t lo, std::int64_t hi) {
        const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<std::int64_t>(engine_() % span);
    }
    double exponential(double mean) { return -mean * std::log1p(-uniform()); }
    double normal(double mean, double sd);
    bool chance(double p) { return uniform() < p; }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[static_cast<std::size_t>(integer(0, i - 1))]);
    }

    // independent child stream
    Rng fork(std::uint64_t salt) { return Rng(mix(engine_() ^ mix(salt))); }

    static std::uint64_t mix(std::uint64_t x);

private:
    std::mt19937_64 engine_;
};

}  // namespace aptd
