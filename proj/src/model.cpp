#include "aptd/model.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <sstream>

namespace aptd {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::EdgeInFacingSet: return "EDGE_IN_FACING_SET";
        case ErrorCode::EmptyFacingSet: return "EMPTY_FACING_SET";
        case ErrorCode::BadCidr: return "BAD_CIDR";
        case ErrorCode::BadAddress: return "BAD_ADDRESS";
        case ErrorCode::BadCePort: return "BAD_CE_PORT";
        case ErrorCode::IllegalTransition: return "ILLEGAL_TRANSITION";
        case ErrorCode::BadMagic: return "BAD_MAGIC";
        case ErrorCode::TruncatedRecord: return "TRUNCATED_RECORD";
        case ErrorCode::UnsupportedLinkType: return "UNSUPPORTED_LINK_TYPE";
        case ErrorCode::NonpositiveDuration: return "NONPOSITIVE_DURATION";
        case ErrorCode::IoError: return "IO_ERROR";
        case ErrorCode::ParseError: return "PARSE_ERROR";
        case ErrorCode::EmptyTimestamps: return "EMPTY_TIMESTAMPS";
        case ErrorCode::ZeroVariance: return "ZERO_VARIANCE";
        case ErrorCode::EmptyDataset: return "EMPTY_DATASET";
        case ErrorCode::NegativeFeature: return "NEGATIVE_FEATURE";
        case ErrorCode::SingleClass: return "SINGLE_CLASS";
        case ErrorCode::TooFewRows: return "TOO_FEW_ROWS";
        case ErrorCode::EmptyInput: return "EMPTY_INPUT";
        case ErrorCode::NoOptimalSource: return "NO_OPTIMAL_SOURCE";
        case ErrorCode::WeightOrderViolation: return "WEIGHT_ORDER_VIOLATION";
        case ErrorCode::NoCeEndpoints: return "NO_CE_ENDPOINTS";
        case ErrorCode::InconsistentChain: return "INCONSISTENT_CHAIN";
        case ErrorCode::JitterTooLarge: return "JITTER_TOO_LARGE";
        case ErrorCode::UnknownCampaign: return "UNKNOWN_CAMPAIGN_ID";
        case ErrorCode::BadConfig: return "BAD_CONFIG";
        case ErrorCode::SchemaError: return "SCHEMA_ERROR";
        case ErrorCode::ModelFormat: return "MODEL_FORMAT";
        case ErrorCode::InvalidArgument: return "INVALID_ARGUMENT";
    }
    return "UNKNOWN";
}

std::string Ipv4::str() const {
    std::ostringstream os;
    os << ((value >> 24) & 0xff) << '.' << ((value >> 16) & 0xff) << '.' << ((value >> 8) & 0xff) << '.'
       << (value & 0xff);
    return os.str();
}

std::optional<Ipv4> Ipv4::parse(std::string_view text) {
    std::uint32_t out = 0;
    const char* p = text.data();
    const char* end = text.data() + text.size();
    for (int octet = 0; octet < 4; ++octet) {
        if (octet > 0) {
            if (p == end || *p != '.') return std::nullopt;
            ++p;
        }
        unsigned v = 0;
        auto [next, ec] = std::from_chars(p, end, v);
        if (ec != std::errc{} || next == p || next - p > 3 || v > 255) return std::nullopt;
        out = (out << 8) | v;
        p = next;
    }
    if (p != end) return std::nullopt;
    return Ipv4(out);
}

Ipv4 Ipv4::from(std::string_view text) {
    auto ip = parse(text);
    if (!ip) throw Error(ErrorCode::BadAddress, "not an IPv4 address: '" + std::string(text) + "'");
    return *ip;
}

static std::uint32_t prefix_mask(int prefix) {
    return prefix == 0 ? 0u : ~std::uint32_t(0) << (32 - prefix);
}

bool Cidr::contains(Ipv4 ip) const {
    const auto mask = prefix_mask(prefix);
    return (ip.value & mask) == (base.value & mask);
}

std::string Cidr::str() const { return base.str() + "/" + std::to_string(prefix); }

Cidr Cidr::parse(std::string_view text) {
    const auto slash = text.find('/');
    if (slash == std::string_view::npos) throw Error(ErrorCode::BadCidr, "missing prefix in '" + std::string(text) + "'");
    auto ip = Ipv4::parse(text.substr(0, slash));
    int prefix = -1;
    auto rest = text.substr(slash + 1);
    auto [next, ec] = std::from_chars(rest.data(), rest.data() + rest.size(), prefix);
    if (!ip || ec != std::errc{} || next != rest.data() + rest.size() || prefix < 0 || prefix > 32)
        throw Error(ErrorCode::BadCidr, "malformed CIDR '" + std::string(text) + "'");
    if ((ip->value & ~prefix_mask(prefix)) != 0)
        throw Error(ErrorCode::BadCidr, "host bits set in '" + std::string(text) + "'");
    return Cidr{*ip, prefix};
}

std::int64_t to_micros(double seconds) { return std::llround(seconds * 1e6); }
double from_micros(std::int64_t micros) { return static_cast<double>(micros) / 1e6; }

std::string flags_string(std::uint8_t flags) {
    std::string out;
    auto add = [&](std::uint8_t f, const char* name) {
        if (flags & f) {
            if (!out.empty()) out += ',';
            out += name;
        }
    };
    add(tcp::SYN, "SYN");
    add(tcp::ACK, "ACK");
    add(tcp::PSH, "PSH");
    add(tcp::FIN, "FIN");
    add(tcp::RST, "RST");
    return out;
}

double ScoreConfig::weight(StageKind stage, DataSource source) const {
    auto it = secondary_weights.find({stage, source});
    return it == secondary_weights.end() ? 0.0 : it->second;
}

void validate_score_config(const ScoreConfig& cfg) {
    if (!(cfg.w_opt > 0.0 && cfg.w_opt <= 1.0)) throw Error(ErrorCode::BadConfig, "w_opt must lie in (0,1]");
    if (!(cfg.tau > 0.0 && cfg.tau <= 1.0)) throw Error(ErrorCode::BadConfig, "tau must lie in (0,1]");
    for (const auto& [key, w] : cfg.secondary_weights) {
        if (!(w > 0.0)) throw Error(ErrorCode::BadConfig, "secondary weights must be positive");
        if (!(cfg.w_opt > w))
            throw Error(ErrorCode::WeightOrderViolation, std::string(to_string(key.first)) + "/" +
                                                             std::string(to_string(key.second)) +
                                                             " weight is not below w_opt");
    }
}

std::vector<Cidr> HostInventory::default_private_ranges() {
    return {Cidr{Ipv4(10, 0, 0, 0), 8}, Cidr{Ipv4(172, 16, 0, 0), 12}, Cidr{Ipv4(192, 168, 0, 0), 16}};
}

bool HostInventory::is_private(Ipv4 ip) const {
    for (const auto& r : private_ranges)
        if (r.contains(ip)) return true;
    return false;
}

bool HostInventory::is_public(Ipv4 ip) const {
    if (vpn_server_ip && *vpn_server_ip == ip) return false;
    return !is_private(ip);
}

bool HostInventory::is_ce(Ipv4 ip) const {
    for (const auto& ce : ce_endpoints)
        if (ce.ip == ip) return true;
    return false;
}

std::vector<InventoryIssue> validate_inventory(const HostInventory& inv) {
    std::vector<InventoryIssue> issues;
    if (inv.internet_facing_hosts.empty())
        issues.push_back({ErrorCode::EmptyFacingSet, "no internet-facing hosts listed"});
    for (auto h : inv.internet_facing_hosts)
        if (h == inv.edge_gateway_ip)
            issues.push_back({ErrorCode::EdgeInFacingSet, "edge gateway " + h.str() + " listed as internet-facing"});
    for (const auto& ce : inv.ce_endpoints)
        if (ce.port < 1 || ce.port > 65535)
            issues.push_back({ErrorCode::BadCePort, "CE " + ce.ip.str() + " has port " + std::to_string(ce.port)});
    for (const auto& r : inv.private_ranges)
        if (r.prefix < 0 || r.prefix > 32 || (r.base.value & ~prefix_mask(r.prefix)) != 0)
            issues.push_back({ErrorCode::BadCidr, "bad private range " + r.str()});
    return issues;
}

const HostInventory& require_valid(const HostInventory& inv) {
    auto issues = validate_inventory(inv);
    if (!issues.empty()) throw Error(issues.front().code, issues.front().detail);
    return inv;
}

IasmState iasm_initial_access(IasmState state) {
    if (state != IasmState::READY_FOR_ATTACK)
        throw Error(ErrorCode::IllegalTransition, "initial access from " + std::string(to_string(state)));
    return IasmState::INFECTED_ENTRY_HOST;
}

IasmState iasm_finish(IasmState state) {
    if (state != IasmState::EXECUTE_CE_COMMANDS)
        throw Error(ErrorCode::IllegalTransition, "goals reached from " + std::string(to_string(state)));
    return IasmState::GOALS_ACHIEVED_OR_DETECTED;
}

IasmState iasm_next(IasmState state, StageKind stage, bool target_is_gateway) {
    using S = IasmState;
    using K = StageKind;
    switch (state) {
        case S::INFECTED_ENTRY_HOST:
            if (stage == K::CNC) return S::ESTABLISH_FOOTHOLD;
            break;
        case S::ESTABLISH_FOOTHOLD:
            if (stage == K::DISCOVERY) return S::ESTABLISH_FOOTHOLD;
            if (stage == K::LATERAL_MOVEMENT) return target_is_gateway ? S::INFECTED_EDGE_GATEWAY : S::INFECTED_NEW_HOST;
            break;
        case S::INFECTED_NEW_HOST:
            if (stage == K::DISCOVERY) return S::INFECTED_NEW_HOST;
            if (stage == K::LATERAL_MOVEMENT) return target_is_gateway ? S::INFECTED_EDGE_GATEWAY : S::INFECTED_NEW_HOST;
            break;
        case S::INFECTED_EDGE_GATEWAY:
            if (stage == K::FIELDBUS_SCAN) return S::INFECTED_EDGE_GATEWAY;
            if (stage == K::CE_SPOOF) return S::COLLECT_ICS_INTELLIGENCE;
            break;
        case S::COLLECT_ICS_INTELLIGENCE:
            if (stage == K::FIELDBUS_SCAN) return S::COLLECT_ICS_INTELLIGENCE;
            if (stage == K::CE_SPOOF) return S::EXECUTE_CE_COMMANDS;
            break;
        case S::EXECUTE_CE_COMMANDS:
            if (stage == K::CE_SPOOF) return S::EXECUTE_CE_COMMANDS;
            break;
        case S::READY_FOR_ATTACK:
        case S::GOALS_ACHIEVED_OR_DETECTED:
            break;
    }
    throw Error(ErrorCode::IllegalTransition,
                std::string(to_string(state)) + " + " + std::string(to_string(stage)));
}

std::string_view to_string(Protocol p) {
    switch (p) {
        case Protocol::TCP: return "TCP";
        case Protocol::UDP: return "UDP";
        case Protocol::OTHER: return "OTHER";
    }
    return "OTHER";
}

std::string_view to_string(AuthMethod m) {
    switch (m) {
        case AuthMethod::SSH: return "ssh";
        case AuthMethod::RDP: return "rdp";
        case AuthMethod::OTHER: return "other";
    }
    return "other";
}

std::string_view to_string(StageHint h) {
    switch (h) {
        case StageHint::DISCOVERY: return "DISCOVERY";
        case StageHint::FIELDBUS_SCAN: return "FIELDBUS_SCAN";
        case StageHint::NONE: return "NONE";
    }
    return "NONE";
}

std::string_view to_string(StageKind k) {
    switch (k) {
        case StageKind::CNC: return "CNC";
        case StageKind::DISCOVERY: return "DISCOVERY";
        case StageKind::LATERAL_MOVEMENT: return "LATERAL_MOVEMENT";
        case StageKind::FIELDBUS_SCAN: return "FIELDBUS_SCAN";
        case StageKind::CE_SPOOF: return "CE_SPOOF";
    }
    return "CNC";
}

std::string_view to_string(DataSource s) {
    switch (s) {
        case DataSource::TRAFFIC: return "TRAFFIC";
        case DataSource::IDS_ALERTS: return "IDS_ALERTS";
        case DataSource::AUTH_LOGS: return "AUTH_LOGS";
    }
    return "TRAFFIC";
}

std::string_view to_string(ScanType s) { return s == ScanType::NORMAL ? "NORMAL" : "SLOW"; }

std::string_view to_string(FieldbusProtocol p) {
    switch (p) {
        case FieldbusProtocol::MODBUS: return "MODBUS";
        case FieldbusProtocol::S7: return "S7";
        case FieldbusProtocol::DNP3: return "DNP3";
        case FieldbusProtocol::OTHER: return "OTHER";
    }
    return "OTHER";
}

std::string_view to_string(IasmState s) {
    switch (s) {
        case IasmState::READY_FOR_ATTACK: return "READY_FOR_ATTACK";
        case IasmState::INFECTED_ENTRY_HOST: return "INFECTED_ENTRY_HOST";
        case IasmState::ESTABLISH_FOOTHOLD: return "ESTABLISH_FOOTHOLD";
        case IasmState::INFECTED_NEW_HOST: return "INFECTED_NEW_HOST";
        case IasmState::INFECTED_EDGE_GATEWAY: return "INFECTED_EDGE_GATEWAY";
        case IasmState::COLLECT_ICS_INTELLIGENCE: return "COLLECT_ICS_INTELLIGENCE";
        case IasmState::EXECUTE_CE_COMMANDS: return "EXECUTE_CE_COMMANDS";
        case IasmState::GOALS_ACHIEVED_OR_DETECTED: return "GOALS_ACHIEVED_OR_DETECTED";
    }
    return "READY_FOR_ATTACK";
}

static std::string upper(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
}

std::optional<StageKind> parse_stage_kind(std::string_view text) {
    const auto u = upper(text);
    for (auto k : kAllStages)
        if (u == to_string(k)) return k;
    return std::nullopt;
}

std::optional<StageHint> parse_stage_hint(std::string_view text) {
    const auto u = upper(text);
    if (u == "DISCOVERY") return StageHint::DISCOVERY;
    if (u == "FIELDBUS_SCAN" || u == "FIELDBUS") return StageHint::FIELDBUS_SCAN;
    if (u == "NONE") return StageHint::NONE;
    return std::nullopt;
}

std::optional<FieldbusProtocol> parse_fieldbus_protocol(std::string_view text) {
    const auto u = upper(text);
    if (u == "MODBUS") return FieldbusProtocol::MODBUS;
    if (u == "S7") return FieldbusProtocol::S7;
    if (u == "DNP3") return FieldbusProtocol::DNP3;
    if (u == "OTHER") return FieldbusProtocol::OTHER;
    return std::nullopt;
}

std::optional<DataSource> parse_data_source(std::string_view text) {
    const auto u = upper(text);
    if (u == "TRAFFIC") return DataSource::TRAFFIC;
    if (u == "IDS_ALERTS" || u == "IDS") return DataSource::IDS_ALERTS;
    if (u == "AUTH_LOGS" || u == "AUTH") return DataSource::AUTH_LOGS;
    return std::nullopt;
}

}  // namespace aptd
