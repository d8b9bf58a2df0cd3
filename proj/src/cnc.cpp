#include "aptd/cnc.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numeric>

#include "aptd/stages.hpp"
#include "aptd/util.hpp"

namespace aptd {

void PeriodicityConfig::validate() const {
    if (!(sampling_frequency > 0.0)) throw Error(ErrorCode::BadConfig, "sampling_frequency must be positive");
    if (!(min_peak_fraction > 0.0 && min_peak_fraction <= 1.0))
        throw Error(ErrorCode::BadConfig, "min_peak_fraction must lie in (0,1]");
    if (!(gap_variance_threshold > 0.0)) throw Error(ErrorCode::BadConfig, "gap_variance_threshold must be positive");
    if (peak_tolerance_s < 0.0 || peak_separation_s < 0.0)
        throw Error(ErrorCode::BadConfig, "peak tolerance and separation must be non-negative");
    if (!(max_lag_fraction > 0.0 && max_lag_fraction <= 1.0))
        throw Error(ErrorCode::BadConfig, "max_lag_fraction must lie in (0,1]");
    if (min_coverage < 0.0 || min_coverage > 1.0) throw Error(ErrorCode::BadConfig, "min_coverage must lie in [0,1]");
}

std::map<Ipv4, std::vector<double>> filter_cnc_candidates(const TraceWindow& window, Ipv4 host_ip,
                                                          const HostInventory& inv) {
    std::map<Ipv4, std::vector<double>> out;
    for (const auto& p : window.packets) {
        Ipv4 peer;
        if (p.src_ip == host_ip)
            peer = p.dst_ip;
        else if (p.dst_ip == host_ip)
            peer = p.src_ip;
        else
            continue;
        if (!inv.is_public(peer)) continue;
        const bool keep = p.protocol == Protocol::UDP ||
                          (p.protocol == Protocol::TCP &&
                           (p.flags_are(tcp::ACK) || p.flags_are(tcp::ACK | tcp::PSH)));
        if (keep) out[peer].push_back(p.timestamp);
    }
    for (auto& [_, ts] : out) std::sort(ts.begin(), ts.end());
    return out;
}

std::vector<std::uint8_t> encode_signal(const std::vector<double>& timestamps, const PeriodicityConfig& cfg,
                                        double span) {
    if (timestamps.empty()) throw Error(ErrorCode::EmptyTimestamps, "no timestamps to encode");
    const auto n = static_cast<std::size_t>(std::ceil(span * cfg.sampling_frequency - 1e-9));
    std::vector<std::uint8_t> signal(n, 0);
    for (double t : timestamps) {
        const double b = std::floor(t * cfg.sampling_frequency + 1e-9);
        if (b >= 0 && b < double(n)) signal[static_cast<std::size_t>(b)] = 1;
    }
    return signal;
}

namespace {
std::mutex fftw_plan_mutex;
}

std::vector<double> autocorrelate(const std::vector<double>& signal) {
    const std::size_t n = signal.size();
    if (n < 2) throw Error(ErrorCode::InvalidArgument, "autocorrelation needs at least 2 samples");
    const double mean = std::accumulate(signal.begin(), signal.end(), 0.0) / double(n);
    double energy = 0.0;
    for (double v : signal) energy += (v - mean) * (v - mean);
    if (energy <= 1e-12 * double(n)) throw Error(ErrorCode::ZeroVariance, "constant signal");

    // Wiener-Khinchin on a zero-padded buffer so the circular correlation equals the linear one.
    std::size_t m = 1;
    while (m < 2 * n) m <<= 1;
    const std::size_t bins = m / 2 + 1;
    double* buf = fftw_alloc_real(m);
    fftw_complex* spec = fftw_alloc_complex(bins);
    fftw_plan fwd, inv;
    {
        std::lock_guard lock(fftw_plan_mutex);
        fwd = fftw_plan_dft_r2c_1d(static_cast<int>(m), buf, spec, FFTW_ESTIMATE);
        inv = fftw_plan_dft_c2r_1d(static_cast<int>(m), spec, buf, FFTW_ESTIMATE);
    }
    for (std::size_t i = 0; i < m; ++i) buf[i] = i < n ? signal[i] - mean : 0.0;
    fftw_execute(fwd);
    for (std::size_t i = 0; i < bins; ++i) {
        spec[i][0] = spec[i][0] * spec[i][0] + spec[i][1] * spec[i][1];
        spec[i][1] = 0.0;
    }
    fftw_execute(inv);

    std::vector<double> acf(n);
    const double scale = buf[0];
    for (std::size_t k = 0; k < n; ++k) acf[k] = std::clamp(buf[k] / scale, -1.0, 1.0);
    acf[0] = 1.0;
    {
        std::lock_guard lock(fftw_plan_mutex);
        fftw_destroy_plan(fwd);
        fftw_destroy_plan(inv);
    }
    fftw_free(buf);
    fftw_free(spec);
    return acf;
}

std::vector<double> autocorrelate(const std::vector<std::uint8_t>& signal) {
    return autocorrelate(std::vector<double>(signal.begin(), signal.end()));
}

PeriodicityResult detect_periodicity(const std::vector<double>& acf, const PeriodicityConfig& cfg) {
    PeriodicityResult res;
    const std::size_t n = acf.size();
    if (n < 3) return res;
    const auto tol = static_cast<std::size_t>(std::llround(cfg.peak_tolerance_s * cfg.sampling_frequency));
    const auto sep = std::max<std::size_t>(1, static_cast<std::size_t>(
                                                  std::llround(cfg.peak_separation_s * cfg.sampling_frequency)));

    // box sum over +-tol lags, clipped at both ends
    std::vector<double> prefix(n + 1, 0.0);
    for (std::size_t k = 0; k < n; ++k) prefix[k + 1] = prefix[k] + acf[k];
    std::vector<double> h(n);
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t lo = k >= tol ? k - tol : 0;
        const std::size_t hi = std::min(n, k + tol + 1);
        h[k] = prefix[hi] - prefix[lo];
    }
    const double zero = h[0];
    if (!(zero > 1e-12)) return res;
    for (std::size_t k = 0; k < n; ++k) {
        h[k] /= zero;
        if (cfg.decay_compensation) h[k] *= double(n) / double(n - k);
    }
    // peaks are searched up to the lag limit; neighbours past it still count
    const auto limit = std::min(n - 2, static_cast<std::size_t>(std::floor(double(n) * cfg.max_lag_fraction)));

    std::vector<int> peaks;
    std::size_t k = 1;
    while (k <= limit) {
        if (h[k] > h[k - 1]) {
            std::size_t j = k;
            while (j + 1 < h.size() && h[j + 1] == h[k]) ++j;
            if (j + 1 < h.size() && h[j + 1] < h[k]) {
                const std::size_t lo = std::max<std::size_t>(1, k > sep ? k - sep : 1);
                const std::size_t hi = std::min(h.size() - 1, k + sep);
                bool dominant = true;
                for (std::size_t i = lo; i < k && dominant; ++i) dominant = h[i] < h[k];
                for (std::size_t i = k + 1; i <= hi && dominant; ++i) dominant = h[i] <= h[k];
                if (dominant) peaks.push_back(static_cast<int>(k));
            }
            k = j + 1;
        } else {
            ++k;
        }
    }

    // the lag-0 maximum (1 after normalisation) is the reference height
    for (int p : peaks)
        if (h[static_cast<std::size_t>(p)] >= cfg.min_peak_fraction * h[0]) res.peak_lags.push_back(p);
    if (res.peak_lags.size() < 2) return res;

    std::vector<double> gaps;
    int prev = 0;
    for (int p : res.peak_lags) {
        gaps.push_back(double(p - prev));
        prev = p;
    }
    const double mean = std::accumulate(gaps.begin(), gaps.end(), 0.0) / double(gaps.size());
    double var = 0.0;
    for (double g : gaps) var += (g - mean) * (g - mean);
    var /= double(gaps.size());
    res.normalized_gap_variance = var / (mean * mean);
    res.periodic = res.normalized_gap_variance <= cfg.gap_variance_threshold;
    res.period_bins = static_cast<int>(std::llround(mean));
    return res;
}

PeriodicityResult analyse_timestamps(const std::vector<double>& timestamps, double window_start, double span,
                                     const PeriodicityConfig& cfg) {
    std::vector<double> rebased;
    rebased.reserve(timestamps.size());
    for (double t : timestamps) rebased.push_back(t - window_start);
    const auto signal = encode_signal(rebased, cfg, span);
    if (signal.size() < 2) return {};
    const bool constant = std::all_of(signal.begin(), signal.end(), [&](auto v) { return v == signal.front(); });
    if (constant) return {};
    return detect_periodicity(autocorrelate(signal), cfg);
}

StageDetection check_cnc_stage(Ipv4 host_ip, const std::vector<TraceWindow>& windows, const HostInventory& inv,
                               const PeriodicityConfig& cfg, const ScoreConfig& score) {
    StageDetection det;
    det.kind = StageKind::CNC;
    det.src_ip = host_ip;

    std::map<Ipv4, double> first_seen;
    for (const auto& w : windows)
        for (const auto& [server, ts] : filter_cnc_candidates(w, host_ip, inv))
            if (!first_seen.count(server)) first_seen[server] = ts.front();

    for (const auto& w : windows) {
        for (const auto& [server, ts] : filter_cnc_candidates(w, host_ip, inv)) {
            if (ts.size() < cfg.min_packets) continue;
            if (ts.back() - ts.front() < cfg.min_coverage * w.duration_s) continue;
            const auto res = analyse_timestamps(ts, w.start_time, w.duration_s, cfg);
            if (!res.periodic) continue;
            const auto agg = aggregate_score({{DataSource::TRAFFIC, true, 1, score.w_opt}}, score);
            det.detected = agg.detected;
            det.score = agg.d_a;
            det.time_det = first_seen[server];
            det.dst_ips = {server};
            det.extras["cnc_server_ip"] = server.str();
            det.extras["period_s"] = fmt_double(double(*res.period_bins) / cfg.sampling_frequency);
            det.evidence.push_back({"first candidate packet to " + server.str(), first_seen[server]});
            det.evidence.push_back({"periodic window starting " + fmt_time(w.start_time) + " with " +
                                        std::to_string(ts.size()) + " packets, period " +
                                        std::to_string(*res.period_bins) + " bins",
                                    ts.front()});
            return det;
        }
    }
    return det;
}

}  // namespace aptd
