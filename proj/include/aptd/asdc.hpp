#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "aptd/config.hpp"
#include "aptd/ml.hpp"
#include "aptd/model.hpp"

namespace aptd {

enum class DetStatus { APT_DET_START, APT_DET_STOP };

enum class NodeRole { ENTRY_HOST, CNC_SERVER, INTERMEDIATE, TARGET_HOST, EDGE_GATEWAY, CONTROL_ELEMENT };

struct CampaignGraph {
    std::map<Ipv4, NodeRole> nodes;
    // (from, to) -> stage -> earliest detection time on that edge
    std::map<std::pair<Ipv4, Ipv4>, std::map<StageKind, double>> edges;
    DetStatus status = DetStatus::APT_DET_START;

    bool empty() const { return nodes.empty(); }
    bool operator==(const CampaignGraph&) const = default;
};

// Human-readable list of broken graph invariants; empty when the graph is sound.
std::vector<std::string> graph_violations(const CampaignGraph& g);

bool correlate_pair(const StageDetection& a, const StageDetection& b);

// throws InconsistentChain when a stage has no correlated predecessor or the
// resulting graph is not temporally consistent
CampaignGraph build_graph(const std::vector<StageDetection>& stages, const HostInventory& inv);

enum class GraphFormat { DOT, STRUCTURED };
std::string export_graph(const CampaignGraph& g, GraphFormat format);
CampaignGraph parse_graph_json(const std::string& text);

struct AsdcInputs {
    std::map<Ipv4, std::vector<TraceWindow>> windows;  // per observed host
    std::vector<AuthLoginEvent> auth;
    std::vector<IdsAlert> alerts;
    TrainedModel discovery_model;
    TrainedModel fieldbus_model;
    EngineConfig cfg;
};

struct RejectedCandidate {
    StageKind kind = StageKind::CNC;
    Ipv4 src_ip;
    std::optional<Ipv4> dst_ip;
    std::string reason;
};

struct AsdcResult {
    DetStatus status = DetStatus::APT_DET_START;
    CampaignGraph graph;
    std::vector<StageDetection> stages;  // accepted, in acceptance order
    std::vector<RejectedCandidate> rejected;
};

AsdcResult run_asdc(const AsdcInputs& in);

// One window list per host, each from that host's own capture.
std::map<Ipv4, std::vector<TraceWindow>> windows_by_host(const std::map<Ipv4, std::vector<PacketRecord>>& captures,
                                                         double window_s);

std::string_view to_string(DetStatus s);
std::string_view to_string(NodeRole r);
std::optional<DetStatus> parse_det_status(std::string_view s);
std::optional<NodeRole> parse_node_role(std::string_view s);

}  // namespace aptd
