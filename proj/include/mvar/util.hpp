#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvar {

// Error taxonomy. The CLI maps these onto exit codes; library code throws.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ParseError : std::runtime_error {
    ParseError(const std::string& msg, long line_no)
        : std::runtime_error(msg + " (line " + std::to_string(line_no) + ")"), line(line_no) {}
    long line;
};
struct EmptyResultError : std::runtime_error {
    explicit EmptyResultError(const std::string& msg) : std::runtime_error(msg) {}
};
struct MissingArtifactError : std::runtime_error {
    explicit MissingArtifactError(const std::string& msg) : std::runtime_error(msg) {}
};
struct DegenerateGeometryError : std::runtime_error {
    explicit DegenerateGeometryError(const std::string& msg) : std::runtime_error(msg) {}
};
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Deterministic RNG used everywhere randomness is needed. The uniform mapping
/// is spelled out (not std::uniform_real_distribution) so streams are
/// bit-stable across standard libraries.
class Rng {
public:
    explicit Rng(uint64_t seed, uint64_t stream = 0)
        : engine_(seed ^ (0x9e3779b97f4a7c15ULL * (stream + 1))) {}

    uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    /// Standard normal via Box-Muller (one value per two uniform draws).
    double normal() {
        double u1 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        const double u2 = uniform01();
        const double two_pi = 6.283185307179586476925286766559;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Bernoulli draw.
    bool chance(double p) { return uniform01() < p; }

    /// Integer in [0, n).
    uint64_t below(uint64_t n) { return n == 0 ? 0 : engine_() % n; }

private:
    std::mt19937_64 engine_;
};

/// Fisher-Yates shuffle driven by Rng (std::shuffle's draw pattern is
/// implementation-defined).
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
    for (size_t i = v.size(); i > 1; --i) {
        const size_t j = static_cast<size_t>(rng.below(i));
        std::swap(v[i - 1], v[j]);
    }
}

// ---- time ----------------------------------------------------------------
// Timestamps are hours since the Unix epoch, UTC. Local-time policy (the
// +8 init-time offset) is applied only where a caller asks for it.

int64_t days_from_civil(int y, int m, int d);
void civil_from_days(int64_t z, int& y, int& m, int& d);

/// Parse "YYYY-MM-DDTHH[:MM[:SS]][Z]" (space separator also accepted) to
/// epoch hours. Minutes/seconds must be zero: the toolkit is hourly.
int64_t parse_iso_hour(const std::string& s);
std::string format_iso_hour(int64_t epoch_hours);

int hour_of_day(int64_t epoch_hours);
/// 1-based: January 1st is day 1.
int day_of_year(int64_t epoch_hours);

// ---- strings / files -----------------------------------------------------

std::vector<std::string> split(const std::string& s, char sep);
std::string trim(const std::string& s);
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);
bool file_exists(const std::string& path);

/// Shortest decimal form that round-trips a double exactly.
std::string format_full(double v);
/// Fixed 6-decimal form used for concentration CSVs.
std::string format_fixed6(double v);

}  // namespace mvar
