#include "aptd/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "aptd/util.hpp"

namespace aptd {

std::uint16_t PortTable::port_for(FieldbusProtocol p) const {
    switch (p) {
        case FieldbusProtocol::MODBUS: return modbus;
        case FieldbusProtocol::S7: return s7;
        case FieldbusProtocol::DNP3: return dnp3;
        case FieldbusProtocol::OTHER: return 0;
    }
    return 0;
}

bool PortTable::is_industrial(std::uint16_t port) const {
    return port != 0 && (port == modbus || port == s7 || port == dnp3);
}

void EngineConfig::validate() const {
    require_valid(inventory);
    validate_score_config(score);
    periodicity.validate();
    if (!(window_s > 0.0)) throw Error(ErrorCode::NonpositiveDuration, "window_s must be positive");
    if (vote_n < 1 || vote_n % 2 == 0) throw Error(ErrorCode::BadConfig, "vote_n must be a positive odd number");
    if (max_hops < 1) throw Error(ErrorCode::BadConfig, "asdc.max_hops must be >= 1");
    if (!(normal_scan_rate > 0.0)) throw Error(ErrorCode::BadConfig, "scan.normal_rate must be positive");
}

namespace {

[[noreturn]] void fail(int line, const std::string& what) {
    throw Error(ErrorCode::BadConfig, "line " + std::to_string(line) + ": " + what);
}

double num(const std::string& v, int line) {
    double out = 0;
    if (!parse_double(v, out)) fail(line, "expected a number, got '" + v + "'");
    return out;
}

long long integer(const std::string& v, int line) {
    long long out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size()) fail(line, "expected an integer, got '" + v + "'");
    return out;
}

std::uint16_t port(const std::string& v, int line) {
    auto p = integer(v, line);
    if (p < 1 || p > 65535) fail(line, "port out of range: " + v);
    return static_cast<std::uint16_t>(p);
}

bool boolean(const std::string& v, int line) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    fail(line, "expected a boolean, got '" + v + "'");
}

Ipv4 address(const std::string& v, int line) {
    auto ip = Ipv4::parse(v);
    if (!ip) fail(line, "expected an IPv4 address, got '" + v + "'");
    return *ip;
}

}  // namespace

EngineConfig parse_config(const std::string& text) {
    EngineConfig cfg;
    bool ranges_seen = false;
    bool weights_seen = false;
    std::istringstream in(text);
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        auto hash = raw.find('#');
        if (hash != std::string::npos) raw.resize(hash);
        auto line = trim(raw);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) fail(line_no, "expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));

        if (key == "facing_host") {
            cfg.inventory.internet_facing_hosts.push_back(address(value, line_no));
        } else if (key == "edge_gateway") {
            cfg.inventory.edge_gateway_ip = address(value, line_no);
        } else if (key == "vpn_server") {
            cfg.inventory.vpn_server_ip = address(value, line_no);
        } else if (key == "private_range") {
            if (!ranges_seen) cfg.inventory.private_ranges.clear();
            ranges_seen = true;
            cfg.inventory.private_ranges.push_back(Cidr::parse(value));
        } else if (key == "ce_endpoint") {
            // ip:port:protocol, or ip:protocol with the port taken from the port table later
            auto parts = split(value, ':');
            if (parts.size() != 2 && parts.size() != 3) fail(line_no, "ce_endpoint wants ip:port:protocol");
            CeEndpoint ce;
            ce.ip = address(parts[0], line_no);
            auto proto = parse_fieldbus_protocol(parts.back());
            if (!proto) fail(line_no, "unknown fieldbus protocol '" + parts.back() + "'");
            ce.protocol = *proto;
            ce.port = parts.size() == 3 ? static_cast<std::uint32_t>(integer(parts[1], line_no)) : 0;
            cfg.inventory.ce_endpoints.push_back(ce);
        } else if (key == "score.w_opt") {
            cfg.score.w_opt = num(value, line_no);
        } else if (key == "score.tau") {
            cfg.score.tau = num(value, line_no);
        } else if (key.rfind("score.weight.", 0) == 0) {
            auto parts = split(key.substr(13), '.');
            if (parts.size() != 2) fail(line_no, "score.weight.<STAGE>.<SOURCE> expected");
            auto stage = parse_stage_kind(parts[0]);
            auto source = parse_data_source(parts[1]);
            if (!stage || !source) fail(line_no, "unknown stage or source in '" + key + "'");
            if (!weights_seen) cfg.score.secondary_weights.clear();
            weights_seen = true;
            cfg.score.secondary_weights[{*stage, *source}] = num(value, line_no);
        } else if (key == "window_s") {
            cfg.window_s = num(value, line_no);
        } else if (key == "vote_n") {
            cfg.vote_n = static_cast<int>(integer(value, line_no));
        } else if (key == "scan.normal_rate") {
            cfg.normal_scan_rate = num(value, line_no);
        } else if (key == "scan.min_target_ports") {
            cfg.min_target_ports = static_cast<std::size_t>(integer(value, line_no));
        } else if (key == "lateral.remote_ports") {
            cfg.remote_access_ports.clear();
            for (const auto& p : split(value, ',')) cfg.remote_access_ports.push_back(port(trim(p), line_no));
        } else if (key == "asdc.max_hops") {
            cfg.max_hops = static_cast<int>(integer(value, line_no));
        } else if (key == "cnc.sampling_frequency") {
            cfg.periodicity.sampling_frequency = num(value, line_no);
        } else if (key == "cnc.min_peak_fraction") {
            cfg.periodicity.min_peak_fraction = num(value, line_no);
        } else if (key == "cnc.gap_variance_threshold") {
            cfg.periodicity.gap_variance_threshold = num(value, line_no);
        } else if (key == "cnc.min_packets") {
            cfg.periodicity.min_packets = static_cast<std::size_t>(integer(value, line_no));
        } else if (key == "cnc.peak_tolerance_s") {
            cfg.periodicity.peak_tolerance_s = num(value, line_no);
        } else if (key == "cnc.min_coverage") {
            cfg.periodicity.min_coverage = num(value, line_no);
        } else if (key == "cnc.peak_separation_s") {
            cfg.periodicity.peak_separation_s = num(value, line_no);
        } else if (key == "cnc.max_lag_fraction") {
            cfg.periodicity.max_lag_fraction = num(value, line_no);
        } else if (key == "cnc.decay_compensation") {
            cfg.periodicity.decay_compensation = boolean(value, line_no);
        } else if (key == "port.modbus") {
            cfg.ports.modbus = port(value, line_no);
        } else if (key == "port.s7") {
            cfg.ports.s7 = port(value, line_no);
        } else if (key == "port.dnp3") {
            cfg.ports.dnp3 = port(value, line_no);
        } else if (key.rfind("ids.signature.", 0) == 0) {
            auto id = integer(key.substr(14), line_no);
            auto hint = parse_stage_hint(value);
            if (!hint) fail(line_no, "unknown stage hint '" + value + "'");
            cfg.signatures[id] = *hint;
        } else {
            fail(line_no, "unknown key '" + key + "'");
        }
    }
    for (auto& ce : cfg.inventory.ce_endpoints)
        if (ce.port == 0) ce.port = cfg.ports.port_for(ce.protocol);
    cfg.validate();
    return cfg;
}

EngineConfig load_config(const std::filesystem::path& path) {
    return parse_config(read_text_file(path));
}

std::string render_config(const EngineConfig& cfg) {
    std::ostringstream os;
    const auto& inv = cfg.inventory;
    os << "# inventory\n";
    for (auto h : inv.internet_facing_hosts) os << "facing_host = " << h.str() << "\n";
    os << "edge_gateway = " << inv.edge_gateway_ip.str() << "\n";
    for (const auto& ce : inv.ce_endpoints)
        os << "ce_endpoint = " << ce.ip.str() << ":" << ce.port << ":" << to_string(ce.protocol) << "\n";
    if (inv.vpn_server_ip) os << "vpn_server = " << inv.vpn_server_ip->str() << "\n";
    for (const auto& r : inv.private_ranges) os << "private_range = " << r.str() << "\n";

    os << "\n# scoring\n";
    os << "score.w_opt = " << fmt_double(cfg.score.w_opt) << "\n";
    os << "score.tau = " << fmt_double(cfg.score.tau) << "\n";
    for (const auto& [key, w] : cfg.score.secondary_weights)
        os << "score.weight." << to_string(key.first) << "." << to_string(key.second) << " = " << fmt_double(w) << "\n";

    os << "\n# windows and correlation\n";
    os << "window_s = " << fmt_double(cfg.window_s) << "\n";
    os << "vote_n = " << cfg.vote_n << "\n";
    os << "scan.normal_rate = " << fmt_double(cfg.normal_scan_rate) << "\n";
    os << "scan.min_target_ports = " << cfg.min_target_ports << "\n";
    os << "lateral.remote_ports = ";
    for (std::size_t i = 0; i < cfg.remote_access_ports.size(); ++i)
        os << (i ? "," : "") << cfg.remote_access_ports[i];
    os << "\n";
    os << "asdc.max_hops = " << cfg.max_hops << "\n";

    const auto& p = cfg.periodicity;
    os << "\n# periodicity\n";
    os << "cnc.sampling_frequency = " << fmt_double(p.sampling_frequency) << "\n";
    os << "cnc.min_peak_fraction = " << fmt_double(p.min_peak_fraction) << "\n";
    os << "cnc.gap_variance_threshold = " << fmt_double(p.gap_variance_threshold) << "\n";
    os << "cnc.min_packets = " << p.min_packets << "\n";
    os << "cnc.peak_tolerance_s = " << fmt_double(p.peak_tolerance_s) << "\n";
    os << "cnc.min_coverage = " << fmt_double(p.min_coverage) << "\n";
    os << "cnc.peak_separation_s = " << fmt_double(p.peak_separation_s) << "\n";
    os << "cnc.max_lag_fraction = " << fmt_double(p.max_lag_fraction) << "\n";
    os << "cnc.decay_compensation = " << (p.decay_compensation ? "true" : "false") << "\n";

    os << "\n# industrial ports\n";
    os << "port.modbus = " << cfg.ports.modbus << "\n";
    os << "port.s7 = " << cfg.ports.s7 << "\n";
    os << "port.dnp3 = " << cfg.ports.dnp3 << "\n";

    if (!cfg.signatures.empty()) {
        os << "\n# IDS signature -> stage\n";
        for (const auto& [id, hint] : cfg.signatures) os << "ids.signature." << id << " = " << to_string(hint) << "\n";
    }
    return os.str();
}

}  // namespace aptd
