#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "aptd/features.hpp"
#include "aptd/ml.hpp"
#include "aptd/model.hpp"
#include "aptd/util.hpp"

namespace aptd::test {

inline PacketRecord tcp_packet(double t, Ipv4 src, std::uint16_t sport, Ipv4 dst, std::uint16_t dport,
                               std::uint8_t flags, std::uint32_t payload = 0) {
    PacketRecord p;
    p.timestamp = t;
    p.src_ip = src;
    p.dst_ip = dst;
    p.src_port = sport;
    p.dst_port = dport;
    p.protocol = Protocol::TCP;
    p.tcp_flags = flags;
    p.payload_len = payload;
    p.total_len = 40 + payload;
    return p;
}

inline PacketRecord udp_packet(double t, Ipv4 src, std::uint16_t sport, Ipv4 dst, std::uint16_t dport,
                               std::uint32_t payload = 32) {
    PacketRecord p;
    p.timestamp = t;
    p.src_ip = src;
    p.dst_ip = dst;
    p.src_port = sport;
    p.dst_port = dport;
    p.protocol = Protocol::UDP;
    p.payload_len = payload;
    p.total_len = 28 + payload;
    return p;
}

inline TraceWindow window_of(Ipv4 host, double start, double duration, std::vector<PacketRecord> packets) {
    TraceWindow w;
    w.host_ip = host;
    w.start_time = start;
    w.duration_s = duration;
    w.packets = std::move(packets);
    return w;
}

// Scratch directory under the build tree, emptied on construction.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("aptd-test-" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

// --- oracles, written from the textbook definitions without touching library code ---

// Mean-removed biased autocorrelation by direct double loop, normalised to r(0) = 1.
inline std::vector<double> brute_acf(const std::vector<double>& x) {
    const std::size_t n = x.size();
    double mean = 0;
    for (double v : x) mean += v;
    mean /= double(n);
    std::vector<double> r(n, 0.0);
    for (std::size_t k = 0; k < n; ++k)
        for (std::size_t i = 0; i + k < n; ++i) r[k] += (x[i] - mean) * (x[i + k] - mean);
    const double r0 = r[0];
    for (auto& v : r) v /= r0;
    return r;
}

// Contingency form: observed[c][j] = sum of feature j over class c,
// expected[c][j] = (class count / rows) * column total.
inline std::vector<double> brute_chi2(const std::vector<std::vector<double>>& X, const std::vector<int>& y) {
    const std::size_t d = X.front().size();
    double observed[2][64] = {};
    double class_count[2] = {0, 0};
    for (std::size_t i = 0; i < X.size(); ++i) {
        class_count[y[i]] += 1;
        for (std::size_t j = 0; j < d; ++j) observed[y[i]][j] += X[i][j];
    }
    std::vector<double> out(d, 0.0);
    for (std::size_t j = 0; j < d; ++j) {
        const double col = observed[0][j] + observed[1][j];
        for (int c = 0; c < 2; ++c) {
            const double expected = class_count[c] / double(X.size()) * col;
            if (expected > 0) out[j] += std::pow(observed[c][j] - expected, 2) / expected;
        }
    }
    return out;
}

struct Counts {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

inline Counts brute_counts(const std::vector<int>& t, const std::vector<int>& p) {
    Counts c;
    for (std::size_t i = 0; i < t.size(); ++i) {
        c.tp += t[i] == 1 && p[i] == 1;
        c.fp += t[i] == 0 && p[i] == 1;
        c.fn += t[i] == 1 && p[i] == 0;
        c.tn += t[i] == 0 && p[i] == 0;
    }
    return c;
}

inline double rel_err(double a, double b) {
    const double scale = std::max({std::abs(a), std::abs(b), 1e-300});
    return std::abs(a - b) / scale;
}

// Weighted mean written out case by case.
inline double hand_score(double w_opt, int d_opt, const std::vector<std::pair<double, int>>& secondary) {
    double num = w_opt * d_opt, den = w_opt;
    for (const auto& [w, d] : secondary) {
        num += w * d;
        den += w;
    }
    return num / den;
}

}  // namespace aptd::test
