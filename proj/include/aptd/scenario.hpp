#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "aptd/asdc.hpp"
#include "aptd/config.hpp"
#include "aptd/features.hpp"
#include "aptd/ingest.hpp"
#include "aptd/model.hpp"
#include "aptd/util.hpp"

namespace aptd {

enum class FieldbusMode { AGGRESSIVE, NON_AGGRESSIVE };

struct TrafficProfile {
    // benign
    double https_mean_gap_s = 20.0;          // outbound sessions per workstation
    double inbound_https_mean_gap_s = 15.0;  // public clients reaching the API host
    double mqtt_period_s = 5.0;
    double poll_period_s = 1.0;  // Modbus polling by the gateway
    double s7_poll_period_s = 2.0;
    double poll_jitter_s = 0.05;
    double failed_connect_per_min = 0.1;
    // attack
    double beacon_period_s = 5.0;
    double beacon_jitter_s = 0.2;
    ScanType scan_speed = ScanType::NORMAL;
    double normal_probe_gap_s = 0.01;
    double slow_probe_gap_s = 15.0;
    FieldbusMode fieldbus_mode = FieldbusMode::AGGRESSIVE;
    FieldbusProtocol fieldbus_protocol = FieldbusProtocol::MODBUS;
    double modbus_timeout_s = 1.0;

    // throws InvalidArgument for non-positive rates, JitterTooLarge for jitter >= period/2
    void validate() const;
};

struct Layout {
    Ipv4 maintenance{10, 0, 1, 10};
    Ipv4 api{10, 0, 1, 20};
    Ipv4 firewall{10, 0, 1, 1};  // also the internal resolver
    Ipv4 mqtt{10, 0, 1, 30};
    Ipv4 hmi{10, 0, 1, 40};
    Ipv4 gateway{10, 0, 2, 1};
    Ipv4 vpn{203, 0, 113, 10};
    Ipv4 vpn_client{10, 0, 1, 200};
    Ipv4 cnc{198, 51, 100, 23};
    std::vector<CeEndpoint> ces{{Ipv4(10, 0, 3, 50), 502, FieldbusProtocol::MODBUS},
                                {Ipv4(10, 0, 3, 60), 502, FieldbusProtocol::MODBUS},
                                {Ipv4(10, 0, 3, 70), 102, FieldbusProtocol::S7}};
    std::vector<Ipv4> public_servers{
        Ipv4(93, 184, 216, 34), Ipv4(151, 101, 1, 69), Ipv4(142, 250, 74, 46), Ipv4(104, 16, 132, 229),
        Ipv4(13, 107, 42, 14),  Ipv4(52, 84, 150, 11),  Ipv4(185, 199, 108, 153), Ipv4(140, 82, 121, 4),
        Ipv4(23, 215, 0, 136),  Ipv4(172, 217, 16, 142)};
    std::vector<Ipv4> public_clients{Ipv4(81, 2, 69, 160), Ipv4(62, 210, 18, 40), Ipv4(91, 198, 174, 192),
                                     Ipv4(195, 8, 215, 68), Ipv4(46, 101, 12, 5)};
    double epoch = 1700000000.0;

    HostInventory inventory() const;
    EngineConfig engine_config() const;
    std::vector<Ipv4> capture_hosts() const { return {maintenance, api, gateway}; }
};

// Flat packet stream plus the log sources, all in absolute seconds.
struct Traffic {
    std::vector<PacketRecord> packets;
    std::vector<AuthLoginEvent> auth;
    std::vector<IdsAlert> alerts;

    void append(const Traffic& other);
    void sort();  // stable by timestamp
};

// [start, start + span_s)
Traffic gen_benign(const TrafficProfile& profile, const Layout& layout, double start, double span_s,
                   std::uint64_t seed);
// Benign traffic of one host only: WORKSTATION, API or GATEWAY behaviour.
enum class HostRole { WORKSTATION, API_SERVER, GATEWAY };
std::vector<PacketRecord> gen_host_benign(HostRole role, Ipv4 host, const TrafficProfile& profile,
                                          const Layout& layout, double start, double span_s, Rng& rng);

// Host-to-server beacons only, one packet per period; UDP to port 53 or TCP {PSH,ACK} to 443.
std::vector<PacketRecord> gen_cnc(double period_s, double jitter_s, Ipv4 server_ip, Ipv4 host_ip, double span_s,
                                  std::uint64_t seed, Protocol proto = Protocol::UDP, double start = 0.0);

struct ScanOptions {
    double start = 0.0;
    std::vector<std::uint16_t> open_ports{22, 80, 443};
    double gap_s = 0.0;  // 0 = profile default for the mode
};
std::vector<PacketRecord> gen_scan(ScanType mode, Ipv4 src, const std::vector<Ipv4>& targets,
                                   std::size_t ports_per_target, std::uint64_t seed, const ScanOptions& opt = {});
// The first n ports a scanner tries: common services first, then ascending.
std::vector<std::uint16_t> scan_port_order(std::size_t n);

std::vector<PacketRecord> gen_fieldbus_scan(FieldbusProtocol protocol, FieldbusMode mode, Ipv4 gw_ip, Ipv4 ce_ip,
                                            std::uint64_t seed, double start = 0.0, const PortTable& ports = {},
                                            double timeout_s = 1.0);

struct ScenarioBundle {
    std::string name;
    std::uint64_t seed = 0;
    double span_s = 0.0;
    Layout layout;
    EngineConfig config;
    Traffic traffic;
    std::vector<StageDetection> expected_stages;
    CampaignGraph expected_graph;
    std::vector<std::string> narrative;

    std::map<Ipv4, std::vector<PacketRecord>> captures() const;
};

struct CampaignOptions {
    // stop the campaign after this stage (the truncated fixture stops after DISCOVERY)
    std::optional<StageKind> last_stage;
};

// throws UnknownCampaign for ids outside 1..3
ScenarioBundle gen_campaign(int id, const Layout& layout, std::uint64_t seed, const CampaignOptions& opt = {});
ScenarioBundle gen_benign_bundle(const Layout& layout, double span_s, std::uint64_t seed);

struct LoadedBundle {
    EngineConfig config;
    std::map<Ipv4, std::vector<PacketRecord>> captures;
    std::vector<AuthLoginEvent> auth;
    std::vector<IdsAlert> alerts;
    std::vector<Reject> rejects;  // malformed log lines
    std::optional<CampaignGraph> expected_graph;
    std::vector<StageDetection> expected_stages;
};

// bundle.json, engine.conf, capture_<ip>.pcap per host, auth.log, alerts.csv,
// ground_truth_graph.json, ground_truth_stages.json
void write_bundle(const std::filesystem::path& dir, const ScenarioBundle& b);
LoadedBundle load_bundle(const std::filesystem::path& dir);

AsdcInputs make_asdc_inputs(const EngineConfig& cfg, const std::map<Ipv4, std::vector<PacketRecord>>& captures,
                            const std::vector<AuthLoginEvent>& auth, const std::vector<IdsAlert>& alerts,
                            const TrainedModel& discovery_model, const TrainedModel& fieldbus_model);

enum class DatasetKind { DISCOVERY_NORMAL, DISCOVERY_SLOW, FIELDBUS_AGGRESSIVE, FIELDBUS_NON_AGGRESSIVE, FIELDBUS_S7 };

struct LabeledWindow {
    TraceWindow window;
    WindowLabel label = WindowLabel::NORMAL;
};

// One independent 60 s window per call; attack windows overlay scan traffic on benign traffic.
LabeledWindow gen_labeled_window(DatasetKind kind, WindowLabel label, std::uint64_t seed, const Layout& layout = {},
                                 const TrafficProfile& profile = {}, double window_s = 60.0);
// n windows per class, features extracted as the windows are generated
std::vector<FeatureVector> gen_feature_dataset(DatasetKind kind, std::size_t per_class, std::uint64_t seed,
                                               const Layout& layout = {}, const TrafficProfile& profile = {});

FeatureStage stage_of(DatasetKind kind);
std::string_view to_string(DatasetKind k);
std::optional<DatasetKind> parse_dataset_kind(std::string_view s);
std::string_view to_string(FieldbusMode m);

}  // namespace aptd
