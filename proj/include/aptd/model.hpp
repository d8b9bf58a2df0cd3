#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "aptd/error.hpp"

namespace aptd {

struct Ipv4 {
    std::uint32_t value = 0;

    constexpr Ipv4() = default;
    constexpr explicit Ipv4(std::uint32_t v) : value(v) {}
    constexpr Ipv4(std::uint8_t a, std::uint8_t b, std::uint8_t c, std::uint8_t d)
        : value((std::uint32_t(a) << 24) | (std::uint32_t(b) << 16) | (std::uint32_t(c) << 8) | d) {}

    auto operator<=>(const Ipv4&) const = default;

    std::string str() const;
    static std::optional<Ipv4> parse(std::string_view text);
    // throws BadAddress
    static Ipv4 from(std::string_view text);
};

struct Cidr {
    Ipv4 base;
    int prefix = 32;

    bool contains(Ipv4 ip) const;
    std::string str() const;
    // throws BadCidr
    static Cidr parse(std::string_view text);
    bool operator==(const Cidr&) const = default;
};

// Timestamps travel as double seconds; generators quantize to whole microseconds
// so that every file format round-trips exactly.
std::int64_t to_micros(double seconds);
double from_micros(std::int64_t micros);
inline double quantize(double seconds) { return from_micros(to_micros(seconds)); }

enum class Protocol { TCP, UDP, OTHER };

namespace tcp {
inline constexpr std::uint8_t FIN = 0x01;
inline constexpr std::uint8_t SYN = 0x02;
inline constexpr std::uint8_t RST = 0x04;
inline constexpr std::uint8_t PSH = 0x08;
inline constexpr std::uint8_t ACK = 0x10;
}  // namespace tcp

struct PacketRecord {
    double timestamp = 0.0;
    Ipv4 src_ip;
    Ipv4 dst_ip;
    std::uint16_t src_port = 0;
    std::uint16_t dst_port = 0;
    Protocol protocol = Protocol::OTHER;
    std::uint8_t tcp_flags = 0;
    std::uint32_t payload_len = 0;
    std::uint32_t total_len = 0;

    bool has(std::uint8_t flag) const { return (tcp_flags & flag) == flag; }
    bool flags_are(std::uint8_t set) const { return tcp_flags == set; }
    bool involves(Ipv4 ip) const { return src_ip == ip || dst_ip == ip; }
    bool operator==(const PacketRecord&) const = default;
};

std::string flags_string(std::uint8_t flags);

struct TraceWindow {
    Ipv4 host_ip;
    double start_time = 0.0;
    double duration_s = 60.0;
    std::vector<PacketRecord> packets;

    double end_time() const { return start_time + duration_s; }
};

enum class AuthMethod { SSH, RDP, OTHER };

struct AuthLoginEvent {
    double timestamp = 0.0;
    Ipv4 src_ip;
    Ipv4 dst_ip;
    std::string username;
    bool success = false;
    AuthMethod method = AuthMethod::OTHER;
    bool operator==(const AuthLoginEvent&) const = default;
};

enum class StageHint { DISCOVERY, FIELDBUS_SCAN, NONE };

struct IdsAlert {
    double timestamp = 0.0;
    std::int64_t signature_id = 0;
    Ipv4 src_ip;
    Ipv4 dst_ip;
    StageHint stage_hint = StageHint::NONE;
    bool operator==(const IdsAlert&) const = default;
};

using SignatureMap = std::map<std::int64_t, StageHint>;

enum class StageKind { CNC, DISCOVERY, LATERAL_MOVEMENT, FIELDBUS_SCAN, CE_SPOOF };
inline constexpr StageKind kAllStages[] = {StageKind::CNC, StageKind::DISCOVERY,
                                           StageKind::LATERAL_MOVEMENT, StageKind::FIELDBUS_SCAN,
                                           StageKind::CE_SPOOF};

enum class DataSource { TRAFFIC, IDS_ALERTS, AUTH_LOGS };

enum class ScanType { NORMAL, SLOW };

struct Evidence {
    std::string what;
    double timestamp = 0.0;
    bool operator==(const Evidence&) const = default;
};

struct StageDetection {
    StageKind kind = StageKind::CNC;
    bool detected = false;
    double time_det = 0.0;
    Ipv4 src_ip;
    std::vector<Ipv4> dst_ips;
    // CNC: cnc_server_ip; DISCOVERY: scan_type, list_target_host_IPs
    std::map<std::string, std::string> extras;
    double score = 0.0;
    std::vector<Evidence> evidence;
};

struct ScoreConfig {
    double w_opt = 0.5;
    std::map<std::pair<StageKind, DataSource>, double> secondary_weights{
        {{StageKind::DISCOVERY, DataSource::IDS_ALERTS}, 0.25},
        {{StageKind::LATERAL_MOVEMENT, DataSource::TRAFFIC}, 0.25},
        {{StageKind::FIELDBUS_SCAN, DataSource::IDS_ALERTS}, 0.25},
    };
    double tau = 0.5;

    double weight(StageKind stage, DataSource source) const;
};

// throws WeightOrderViolation or BadConfig
void validate_score_config(const ScoreConfig& cfg);

enum class FieldbusProtocol { MODBUS, S7, DNP3, OTHER };

struct CeEndpoint {
    Ipv4 ip;
    std::uint32_t port = 0;
    FieldbusProtocol protocol = FieldbusProtocol::MODBUS;
    bool operator==(const CeEndpoint&) const = default;
};

struct HostInventory {
    std::vector<Ipv4> internet_facing_hosts;
    Ipv4 edge_gateway_ip;
    std::vector<CeEndpoint> ce_endpoints;
    std::optional<Ipv4> vpn_server_ip;
    std::vector<Cidr> private_ranges = default_private_ranges();

    bool is_private(Ipv4 ip) const;
    // outside private_ranges and not the VPN server
    bool is_public(Ipv4 ip) const;
    bool is_ce(Ipv4 ip) const;

    static std::vector<Cidr> default_private_ranges();
    bool operator==(const HostInventory&) const = default;
};

struct InventoryIssue {
    ErrorCode code;
    std::string detail;
};

std::vector<InventoryIssue> validate_inventory(const HostInventory& inv);
// throws the first violation
const HostInventory& require_valid(const HostInventory& inv);

enum class IasmState {
    READY_FOR_ATTACK,
    INFECTED_ENTRY_HOST,
    ESTABLISH_FOOTHOLD,
    INFECTED_NEW_HOST,
    INFECTED_EDGE_GATEWAY,
    COLLECT_ICS_INTELLIGENCE,
    EXECUTE_CE_COMMANDS,
    GOALS_ACHIEVED_OR_DETECTED,
};

// Initial access is not an invariant stage, so entering the machine has its own edge.
IasmState iasm_initial_access(IasmState state);
IasmState iasm_next(IasmState state, StageKind stage, bool target_is_gateway);
IasmState iasm_finish(IasmState state);

std::string_view to_string(Protocol p);
std::string_view to_string(AuthMethod m);
std::string_view to_string(StageHint h);
std::string_view to_string(StageKind k);
std::string_view to_string(DataSource s);
std::string_view to_string(ScanType s);
std::string_view to_string(FieldbusProtocol p);
std::string_view to_string(IasmState s);

std::optional<StageKind> parse_stage_kind(std::string_view text);
std::optional<StageHint> parse_stage_hint(std::string_view text);
std::optional<FieldbusProtocol> parse_fieldbus_protocol(std::string_view text);
std::optional<DataSource> parse_data_source(std::string_view text);

}  // namespace aptd

template <>
struct std::hash<aptd::Ipv4> {
    std::size_t operator()(const aptd::Ipv4& ip) const noexcept { return std::hash<std::uint32_t>{}(ip.value); }
};
