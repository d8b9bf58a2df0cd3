#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "aptd/model.hpp"

namespace aptd {

enum class ConnState { SYN_SENT, SYN_RECEIVED, ESTABLISHED };

struct ConnKey {
    Ipv4 client;
    std::uint16_t client_port = 0;
    Ipv4 server;
    std::uint16_t server_port = 0;
    auto operator<=>(const ConnKey&) const = default;
};

struct ConnectionSummary {
    std::map<ConnKey, ConnState> connections;
    std::size_t syn_count = 0;
    std::size_t half_open = 0;
    std::map<Ipv4, std::size_t> handshakes_per_dst;
    std::size_t rst_count = 0;
    std::size_t fin_count = 0;
    std::map<Ipv4, std::set<std::uint16_t>> probe_ports_per_dst;
};

ConnectionSummary track_connections(const TraceWindow& window);

enum class FeatureStage { DISCOVERY, FIELDBUS };
enum class WindowLabel { NORMAL, SCANNING };

struct FeatureVector {
    FeatureStage stage = FeatureStage::DISCOVERY;
    std::vector<double> values;
    std::optional<WindowLabel> label;
};

const std::vector<std::string>& feature_names(FeatureStage stage);
std::size_t feature_count(FeatureStage stage);

FeatureVector discovery_features(const TraceWindow& window);
FeatureVector fieldbus_features(const TraceWindow& window);
FeatureVector extract_features(FeatureStage stage, const TraceWindow& window);

std::string_view to_string(FeatureStage s);
std::string_view to_string(WindowLabel l);
std::optional<FeatureStage> parse_feature_stage(std::string_view s);

// "label,<feature names...>" header, one row per vector
std::string render_feature_csv(FeatureStage stage, const std::vector<FeatureVector>& rows);
// throws SchemaError when the column count or header does not match the stage
std::vector<FeatureVector> parse_feature_csv(FeatureStage stage, const std::string& text);

}  // namespace aptd
