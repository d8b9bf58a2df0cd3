#pragma once

#include <optional>
#include <string>
#include <vector>

#include "aptd/config.hpp"
#include "aptd/ml.hpp"
#include "aptd/model.hpp"

namespace aptd {

struct SourceVerdict {
    DataSource source = DataSource::TRAFFIC;
    bool is_optimal = false;
    int d = 0;
    double weight = 0.0;
};

struct AggregateScore {
    double d_a = 0.0;
    double tau = 0.5;
    bool detected = false;
};

AggregateScore aggregate_score(const std::vector<SourceVerdict>& verdicts, const ScoreConfig& cfg);

// Per-window classification after mode voting; empty windows are NORMAL.
std::vector<WindowLabel> vote_windows(const std::vector<TraceWindow>& windows, const TrainedModel& model, int vote_n);

StageDetection check_discovery_stage(Ipv4 host_ip, const std::vector<TraceWindow>& windows, const TrainedModel& model,
                                     const std::vector<IdsAlert>& alerts, const EngineConfig& cfg,
                                     double after = -1.0);

StageDetection check_lateral_movement_stage(Ipv4 src_ip, Ipv4 dst_ip, const std::vector<AuthLoginEvent>& auth_events,
                                            const std::vector<StageDetection>& prior,
                                            const std::vector<TraceWindow>& windows, const EngineConfig& cfg,
                                            double after = -1.0);

StageDetection check_fieldbus_scan_stage(const std::vector<TraceWindow>& gateway_windows, const TrainedModel& model,
                                         const std::vector<IdsAlert>& alerts, const EngineConfig& cfg,
                                         double after = -1.0);

StageDetection check_ce_comm_stage(const std::vector<TraceWindow>& gateway_windows, const HostInventory& inv,
                                   double after = -1.0);

std::string stage_to_json_line(const StageDetection& d);
StageDetection stage_from_json_line(const std::string& line);

}  // namespace aptd
