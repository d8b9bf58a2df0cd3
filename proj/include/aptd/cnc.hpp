#pragma once

#include <map>
#include <optional>
#include <vector>

#include "aptd/model.hpp"

namespace aptd {

struct PeriodicityConfig {
    // 0.1 s bins
    double sampling_frequency = 10.0;
    double min_peak_fraction = 0.7;
    double gap_variance_threshold = 0.01;
    std::size_t min_packets = 4;
    // first-to-last packet span, as a fraction of the window, needed before a server is tested
    double min_coverage = 0.5;
    // Jitter tolerance: the ACF is box-summed over +-tolerance before peak picking.
    double peak_tolerance_s = 0.4;
    // A peak must dominate every lag within this distance.
    double peak_separation_s = 1.0;
    // Only lags up to this fraction of the signal length are searched.
    double max_lag_fraction = 0.5;
    // Undo the (N-k)/N shrinkage of the biased estimator before comparing peaks.
    bool decay_compensation = true;

    void validate() const;
};

struct PeriodicityResult {
    bool periodic = false;
    std::optional<int> period_bins;
    std::vector<int> peak_lags;
    double normalized_gap_variance = 0.0;
};

std::map<Ipv4, std::vector<double>> filter_cnc_candidates(const TraceWindow& window, Ipv4 host_ip,
                                                          const HostInventory& inv);

std::vector<std::uint8_t> encode_signal(const std::vector<double>& timestamps, const PeriodicityConfig& cfg,
                                        double span);

std::vector<double> autocorrelate(const std::vector<std::uint8_t>& signal);
std::vector<double> autocorrelate(const std::vector<double>& signal);

PeriodicityResult detect_periodicity(const std::vector<double>& acf, const PeriodicityConfig& cfg);

// Full encode -> ACF -> peak test for one server's timestamps, rebased to the window start.
PeriodicityResult analyse_timestamps(const std::vector<double>& timestamps, double window_start, double span,
                                     const PeriodicityConfig& cfg);

StageDetection check_cnc_stage(Ipv4 host_ip, const std::vector<TraceWindow>& windows, const HostInventory& inv,
                               const PeriodicityConfig& cfg, const ScoreConfig& score = {});

}  // namespace aptd
