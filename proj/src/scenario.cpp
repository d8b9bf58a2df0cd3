#include "aptd/scenario.hpp"

#include <algorithm>
#include <set>

#include <json.hpp>

#include "aptd/stages.hpp"

namespace aptd {

namespace {

constexpr std::uint32_t kIpHeader = 20;
constexpr std::uint32_t kTcpHeader = 20;
constexpr std::uint32_t kUdpHeader = 8;

constexpr std::int64_t kSigScan = 2001219;
constexpr std::int64_t kSigFieldbus = 2025100;
constexpr std::int64_t kSigPing = 2100366;

PacketRecord tcp_pkt(double t, Ipv4 src, std::uint16_t sport, Ipv4 dst, std::uint16_t dport, std::uint8_t flags,
                 std::uint32_t payload = 0) {
    PacketRecord p;
    p.timestamp = t;
    p.src_ip = src;
    p.dst_ip = dst;
    p.src_port = sport;
    p.dst_port = dport;
    p.protocol = Protocol::TCP;
    p.tcp_flags = flags;
    p.payload_len = payload;
    p.total_len = kIpHeader + kTcpHeader + payload;
    return p;
}

PacketRecord udp_pkt(double t, Ipv4 src, std::uint16_t sport, Ipv4 dst, std::uint16_t dport, std::uint32_t payload) {
    PacketRecord p;
    p.timestamp = t;
    p.src_ip = src;
    p.dst_ip = dst;
    p.src_port = sport;
    p.dst_port = dport;
    p.protocol = Protocol::UDP;
    p.payload_len = payload;
    p.total_len = kIpHeader + kUdpHeader + payload;
    return p;
}

PacketRecord icmp_pkt(double t, Ipv4 src, Ipv4 dst, std::uint32_t payload = 40) {
    PacketRecord p;
    p.timestamp = t;
    p.src_ip = src;
    p.dst_ip = dst;
    p.protocol = Protocol::OTHER;
    p.payload_len = payload;
    p.total_len = kIpHeader + payload;
    return p;
}

std::uint16_t ephemeral(Rng& rng) { return static_cast<std::uint16_t>(rng.integer(32768, 60999)); }

std::uint32_t size(Rng& rng, int lo, int hi) { return static_cast<std::uint32_t>(rng.integer(lo, hi)); }

constexpr std::uint8_t SYN = tcp::SYN;
constexpr std::uint8_t ACK = tcp::ACK;
constexpr std::uint8_t SYNACK = tcp::SYN | tcp::ACK;
constexpr std::uint8_t PSHACK = tcp::PSH | tcp::ACK;
constexpr std::uint8_t FINACK = tcp::FIN | tcp::ACK;
constexpr std::uint8_t RSTACK = tcp::RST | tcp::ACK;

// three-way handshake; returns the time of the final ACK
double handshake(std::vector<PacketRecord>& out, double t, Ipv4 c, std::uint16_t cp, Ipv4 s, std::uint16_t sp,
                 double rtt) {
    out.push_back(tcp_pkt(t, c, cp, s, sp, SYN));
    out.push_back(tcp_pkt(t + rtt, s, sp, c, cp, SYNACK));
    out.push_back(tcp_pkt(t + rtt + 0.0002, c, cp, s, sp, ACK));
    return t + rtt + 0.0002;
}

double fin_close(std::vector<PacketRecord>& out, double t, Ipv4 c, std::uint16_t cp, Ipv4 s, std::uint16_t sp,
                 double rtt) {
    out.push_back(tcp_pkt(t, c, cp, s, sp, FINACK));
    out.push_back(tcp_pkt(t + rtt, s, sp, c, cp, FINACK));
    out.push_back(tcp_pkt(t + rtt + 0.0002, c, cp, s, sp, ACK));
    return t + rtt + 0.0002;
}

// request/response TCP session with a normal close
double tcp_session(std::vector<PacketRecord>& out, Rng& rng, double t, Ipv4 c, Ipv4 s, std::uint16_t sp,
                   int exchanges, double think_s, std::pair<int, int> req, std::pair<int, int> resp) {
    const auto cp = ephemeral(rng);
    const double rtt = rng.uniform(0.015, 0.08);
    t = handshake(out, t, c, cp, s, sp, rtt);
    for (int i = 0; i < exchanges; ++i) {
        t += i == 0 ? 0.001 : rng.exponential(think_s);
        out.push_back(tcp_pkt(t, c, cp, s, sp, PSHACK, size(rng, req.first, req.second)));
        t += rtt;
        out.push_back(tcp_pkt(t, s, sp, c, cp, PSHACK, size(rng, resp.first, resp.second)));
        if (rng.chance(0.5)) {
            t += 0.0003;
            out.push_back(tcp_pkt(t, c, cp, s, sp, ACK));
        }
    }
    return fin_close(out, t + rng.exponential(0.5), c, cp, s, sp, rtt);
}

void dns_lookup(std::vector<PacketRecord>& out, Rng& rng, double t, Ipv4 host, Ipv4 resolver) {
    const auto port = ephemeral(rng);
    out.push_back(udp_pkt(t, host, port, resolver, 53, size(rng, 30, 60)));
    out.push_back(udp_pkt(t + rng.uniform(0.002, 0.02), resolver, 53, host, port, size(rng, 60, 200)));
}

void outbound_web(std::vector<PacketRecord>& out, Rng& rng, const Layout& L, Ipv4 host, double start, double end,
                  double mean_gap) {
    for (double t = start + rng.exponential(mean_gap); t < end; t += rng.exponential(mean_gap)) {
        const auto server = L.public_servers[static_cast<std::size_t>(rng.integer(0, L.public_servers.size() - 1))];
        dns_lookup(out, rng, t, host, L.firewall);
        tcp_session(out, rng, t + 0.03, host, server, 443, static_cast<int>(rng.integer(2, 12)), 0.4, {100, 700},
                    {300, 1460});
    }
}

void failed_connects(std::vector<PacketRecord>& out, Rng& rng, const Layout& L, Ipv4 host, double start, double end,
                     double per_min) {
    if (per_min <= 0) return;
    const std::vector<Ipv4> peers{L.api, L.mqtt, L.hmi, L.maintenance};
    const std::uint16_t ports[] = {8080, 5000, 9000};
    for (double t = start + rng.exponential(60.0 / per_min); t < end; t += rng.exponential(60.0 / per_min)) {
        auto peer = peers[static_cast<std::size_t>(rng.integer(0, peers.size() - 1))];
        if (peer == host) continue;
        const auto cp = ephemeral(rng);
        const auto port = ports[rng.integer(0, 2)];
        out.push_back(tcp_pkt(t, host, cp, peer, port, SYN));
        out.push_back(tcp_pkt(t + rng.uniform(0.0003, 0.002), peer, port, host, cp, RSTACK));
    }
}

// Long-lived client connection already open before `start`; polled every period.
void poller(std::vector<PacketRecord>& out, Rng& rng, Ipv4 client, Ipv4 server, std::uint16_t sport, double period,
            double jitter, double start, double end, std::pair<int, int> req, std::pair<int, int> resp,
            std::optional<double> stop_at = std::nullopt) {
    const auto cp = ephemeral(rng);
    const double last = stop_at ? std::min(end, *stop_at) : end;
    for (double t = start + rng.uniform(0, period); t < last; t += period) {
        const double at = std::max(start, t + rng.uniform(-jitter, jitter));
        if (at >= last) break;
        out.push_back(tcp_pkt(at, client, cp, server, sport, PSHACK, size(rng, req.first, req.second)));
        out.push_back(tcp_pkt(at + rng.uniform(0.003, 0.012), server, sport, client, cp, PSHACK,
                          size(rng, resp.first, resp.second)));
    }
    if (stop_at && *stop_at >= start && *stop_at < end) fin_close(out, *stop_at, client, cp, server, sport, 0.004);
}

void clip_sort(std::vector<PacketRecord>& v, double start, double end) {
    std::erase_if(v, [&](const PacketRecord& p) { return p.timestamp < start || p.timestamp >= end; });
    for (auto& p : v) p.timestamp = quantize(p.timestamp);
    std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });
}

std::vector<PacketRecord> host_benign(HostRole role, Ipv4 host, const TrafficProfile& P, const Layout& L,
                                      double start, double span, Rng& rng, const std::map<Ipv4, double>& poll_until) {
    std::vector<PacketRecord> out;
    const double end = start + span;
    switch (role) {
        case HostRole::WORKSTATION:
            outbound_web(out, rng, L, host, start, end, P.https_mean_gap_s);
            failed_connects(out, rng, L, host, start, end, P.failed_connect_per_min);
            break;
        case HostRole::API_SERVER: {
            outbound_web(out, rng, L, host, start, end, 3 * P.https_mean_gap_s);
            for (double t = start + rng.exponential(P.inbound_https_mean_gap_s); t < end;
                 t += rng.exponential(P.inbound_https_mean_gap_s)) {
                const auto client =
                    L.public_clients[static_cast<std::size_t>(rng.integer(0, L.public_clients.size() - 1))];
                tcp_session(out, rng, t, client, host, 443, static_cast<int>(rng.integer(1, 6)), 0.3, {150, 600},
                            {400, 1460});
            }
            // subscription pushed by the broker
            poller(out, rng, L.mqtt, host, ephemeral(rng), P.mqtt_period_s, 0.2, start, end, {40, 120}, {0, 0});
            failed_connects(out, rng, L, host, start, end, P.failed_connect_per_min);
            break;
        }
        case HostRole::GATEWAY: {
            for (const auto& ce : L.ces) {
                std::optional<double> stop;
                if (auto it = poll_until.find(ce.ip); it != poll_until.end()) stop = it->second;
                if (ce.protocol == FieldbusProtocol::S7)
                    poller(out, rng, host, ce.ip, static_cast<std::uint16_t>(ce.port), P.s7_poll_period_s,
                           P.poll_jitter_s, start, end, {31, 37}, {39, 53}, stop);
                else
                    poller(out, rng, host, ce.ip, static_cast<std::uint16_t>(ce.port), P.poll_period_s,
                           P.poll_jitter_s, start, end, {12, 12}, {19, 29}, stop);
            }
            poller(out, rng, host, L.mqtt, 1883, P.mqtt_period_s, 0.2, start, end, {40, 120}, {0, 0});
            outbound_web(out, rng, L, host, start, end, 3 * P.https_mean_gap_s);
            break;
        }
    }
    clip_sort(out, start, end);
    return out;
}

}  // namespace

void TrafficProfile::validate() const {
    for (double v : {https_mean_gap_s, inbound_https_mean_gap_s, mqtt_period_s, poll_period_s, s7_poll_period_s,
                     beacon_period_s, normal_probe_gap_s, slow_probe_gap_s, modbus_timeout_s})
        if (!(v > 0)) throw Error(ErrorCode::InvalidArgument, "traffic profile rates and periods must be positive");
    if (poll_jitter_s < 0 || failed_connect_per_min < 0 || beacon_jitter_s < 0)
        throw Error(ErrorCode::InvalidArgument, "negative jitter or rate");
    if (!(beacon_jitter_s < beacon_period_s / 2))
        throw Error(ErrorCode::JitterTooLarge, "beacon jitter must stay below half the period");
}

HostInventory Layout::inventory() const {
    HostInventory inv;
    inv.internet_facing_hosts = {maintenance, api};
    inv.edge_gateway_ip = gateway;
    inv.ce_endpoints = ces;
    inv.vpn_server_ip = vpn;
    return inv;
}

EngineConfig Layout::engine_config() const {
    EngineConfig cfg;
    cfg.inventory = inventory();
    cfg.signatures = {{kSigScan, StageHint::DISCOVERY}, {kSigFieldbus, StageHint::FIELDBUS_SCAN},
                      {kSigPing, StageHint::NONE}};
    return cfg;
}

void Traffic::append(const Traffic& other) {
    packets.insert(packets.end(), other.packets.begin(), other.packets.end());
    auth.insert(auth.end(), other.auth.begin(), other.auth.end());
    alerts.insert(alerts.end(), other.alerts.begin(), other.alerts.end());
}

void Traffic::sort() {
    for (auto& p : packets) p.timestamp = quantize(p.timestamp);
    for (auto& a : auth) a.timestamp = quantize(a.timestamp);
    for (auto& a : alerts) a.timestamp = quantize(a.timestamp);
    const auto by_time = [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; };
    std::stable_sort(packets.begin(), packets.end(), by_time);
    std::stable_sort(auth.begin(), auth.end(), by_time);
    std::stable_sort(alerts.begin(), alerts.end(), by_time);
}

std::vector<PacketRecord> gen_host_benign(HostRole role, Ipv4 host, const TrafficProfile& profile,
                                          const Layout& layout, double start, double span_s, Rng& rng) {
    return host_benign(role, host, profile, layout, start, span_s, rng, {});
}

namespace {

Traffic benign_traffic(const TrafficProfile& P, const Layout& L, double start, double span, std::uint64_t seed,
                       const std::map<Ipv4, double>& poll_until) {
    if (!(span > 0)) throw Error(ErrorCode::InvalidArgument, "benign span must be positive");
    P.validate();
    Rng rng(seed);
    Traffic tr;
    const double end = start + span;
    auto m = rng.fork(1), a = rng.fork(2), g = rng.fork(3), logs = rng.fork(4);
    auto pm = host_benign(HostRole::WORKSTATION, L.maintenance, P, L, start, span, m, poll_until);
    auto pa = host_benign(HostRole::API_SERVER, L.api, P, L, start, span, a, poll_until);
    auto pg = host_benign(HostRole::GATEWAY, L.gateway, P, L, start, span, g, poll_until);
    for (auto* v : {&pm, &pa, &pg}) tr.packets.insert(tr.packets.end(), v->begin(), v->end());

    // operator sessions from the HMI to the gateway
    for (double t = start + logs.uniform(60, 400); t < end; t += logs.uniform(400, 800)) {
        tr.auth.push_back({t, L.hmi, L.gateway, "operator", true, AuthMethod::SSH});
        std::vector<PacketRecord> s;
        tcp_session(s, logs, t - 0.5, L.hmi, L.gateway, 22, static_cast<int>(logs.integer(5, 20)), 1.0, {40, 200},
                    {40, 600});
        clip_sort(s, start, end);
        tr.packets.insert(tr.packets.end(), s.begin(), s.end());
    }
    // remote staff reaching the maintenance machine over the VPN pool
    for (double t = start + logs.uniform(100, 900); t < end; t += logs.uniform(900, 1800))
        tr.auth.push_back({t, L.vpn_client, L.maintenance, "staff", true, AuthMethod::RDP});
    for (double t = start + logs.uniform(0, 600); t < end; t += logs.uniform(300, 900))
        tr.alerts.push_back({t, kSigPing, L.hmi, L.gateway, StageHint::NONE});
    tr.sort();
    return tr;
}

}  // namespace

Traffic gen_benign(const TrafficProfile& profile, const Layout& layout, double start, double span_s,
                   std::uint64_t seed) {
    return benign_traffic(profile, layout, start, span_s, seed, {});
}

std::vector<PacketRecord> gen_cnc(double period_s, double jitter_s, Ipv4 server_ip, Ipv4 host_ip, double span_s,
                                  std::uint64_t seed, Protocol proto, double start) {
    if (!(period_s > 0) || !(span_s > 0)) throw Error(ErrorCode::InvalidArgument, "period and span must be positive");
    if (jitter_s < 0 || !(jitter_s < period_s / 2))
        throw Error(ErrorCode::JitterTooLarge, "jitter " + fmt_double(jitter_s) + " s for period " +
                                                   fmt_double(period_s) + " s");
    Rng rng(seed);
    const auto sport = ephemeral(rng);
    std::vector<PacketRecord> out;
    for (std::int64_t k = 0; double(k) * period_s < span_s; ++k) {
        const double j = jitter_s > 0 ? rng.uniform(-jitter_s, jitter_s) : 0.0;
        const auto len = size(rng, 60, 120);
        const double t = quantize(start + std::max(0.0, double(k) * period_s + j));
        if (t >= start + span_s) continue;
        if (proto == Protocol::TCP)
            out.push_back(tcp_pkt(t, host_ip, sport, server_ip, 443, PSHACK, len));
        else
            out.push_back(udp_pkt(t, host_ip, sport, server_ip, 53, len));
    }
    return out;
}

std::vector<std::uint16_t> scan_port_order(std::size_t n) {
    static const std::uint16_t common[] = {80,  23,   443,  21,   22,  25,   3389, 110,  445,  139,
                                           143, 53,   135,  3306, 8080, 1723, 111,  995,  993,  5900,
                                           1025, 587, 8888, 199,  1720, 465,  548,  113,  81,   6001,
                                           10000, 514, 5060, 179, 1026, 2000, 8443, 8000, 32768, 554};
    n = std::min<std::size_t>(n, 65535);
    std::vector<std::uint16_t> out;
    std::set<std::uint16_t> seen;
    for (auto p : common) {
        if (out.size() == n) return out;
        out.push_back(p);
        seen.insert(p);
    }
    for (std::uint32_t p = 1; out.size() < n && p <= 65535; ++p)
        if (!seen.count(static_cast<std::uint16_t>(p))) out.push_back(static_cast<std::uint16_t>(p));
    return out;
}

std::vector<PacketRecord> gen_scan(ScanType mode, Ipv4 src, const std::vector<Ipv4>& targets,
                                   std::size_t ports_per_target, std::uint64_t seed, const ScanOptions& opt) {
    Rng rng(seed);
    std::vector<std::pair<Ipv4, std::uint16_t>> probes;
    const auto ports = scan_port_order(ports_per_target);
    for (const auto& t : targets)
        for (auto p : ports) probes.emplace_back(t, p);
    rng.shuffle(probes);
    const double gap = opt.gap_s > 0 ? opt.gap_s : (mode == ScanType::NORMAL ? 0.01 : 15.0);
    const std::set<std::uint16_t> open(opt.open_ports.begin(), opt.open_ports.end());
    const auto sport = ephemeral(rng);
    std::vector<PacketRecord> out;
    double t = opt.start;
    for (const auto& [dst, port] : probes) {
        out.push_back(tcp_pkt(t, src, sport, dst, port, SYN));
        if (open.count(port)) {
            const double rtt = rng.uniform(0.0002, 0.002);
            out.push_back(tcp_pkt(t + rtt, dst, port, src, sport, SYNACK));
            out.push_back(tcp_pkt(t + rtt + 0.0001, src, sport, dst, port, tcp::RST));
        }
        t += mode == ScanType::NORMAL ? gap * rng.uniform(0.9, 1.1) : gap + rng.uniform(-0.05, 0.05);
    }
    clip_sort(out, -1e300, 1e300);
    return out;
}

std::vector<PacketRecord> gen_fieldbus_scan(FieldbusProtocol protocol, FieldbusMode mode, Ipv4 gw, Ipv4 ce,
                                            std::uint64_t seed, double start, const PortTable& ports,
                                            double timeout_s) {
    Rng rng(seed);
    std::vector<PacketRecord> out;
    const std::uint16_t port = ports.port_for(protocol == FieldbusProtocol::S7 ? FieldbusProtocol::S7
                                                                                : FieldbusProtocol::MODBUS);
    std::uint16_t cp = ephemeral(rng);
    const auto next_port = [&] { return cp = static_cast<std::uint16_t>(cp == 60999 ? 32768 : cp + 1); };
    const auto rtt = [&] { return rng.uniform(0.001, 0.005); };
    double t = start;

    if (protocol == FieldbusProtocol::S7) {
        // rack/slot probes; the CPU answers on one TSAP only
        const int attempts = mode == FieldbusMode::AGGRESSIVE ? 16 : 2;
        for (int i = 0; i < attempts; ++i) {
            const auto p = next_port();
            const double r = rtt();
            t = handshake(out, t, gw, p, ce, port, r);
            t += 0.001;
            out.push_back(tcp_pkt(t, gw, p, ce, port, PSHACK, 22));  // COTP connect request
            t += r;
            const bool accepted = mode == FieldbusMode::NON_AGGRESSIVE || i == 2;
            if (!accepted) {
                out.push_back(tcp_pkt(t, ce, port, gw, p, RSTACK));
                t += rng.uniform(0.05, 0.2);
                continue;
            }
            out.push_back(tcp_pkt(t, ce, port, gw, p, PSHACK, 22));
            for (std::uint32_t req : {25u, 33u, 33u}) {
                t += 0.001;
                out.push_back(tcp_pkt(t, gw, p, ce, port, PSHACK, req));
                t += r;
                out.push_back(tcp_pkt(t, ce, port, gw, p, PSHACK, req == 25 ? 27 : size(rng, 120, 220)));
            }
            t += 0.002;
            if (i == 0 && mode == FieldbusMode::NON_AGGRESSIVE)
                t = fin_close(out, t, gw, p, ce, port, r);
            else
                out.push_back(tcp_pkt(t, gw, p, ce, port, RSTACK));
            t += rng.uniform(0.05, 0.2);
        }
        clip_sort(out, -1e300, 1e300);
        return out;
    }

    // Modbus: the device first refuses while its connection slots are busy
    const int refused = mode == FieldbusMode::AGGRESSIVE ? 2 : 1;
    for (int i = 0; i < refused; ++i) {
        const auto p = next_port();
        out.push_back(tcp_pkt(t, gw, p, ce, port, SYN));
        out.push_back(tcp_pkt(t + rtt(), ce, port, gw, p, RSTACK));
        t += 0.5;
    }
    // device identification
    {
        const auto p = next_port();
        const double r = rtt();
        t = handshake(out, t, gw, p, ce, port, r) + 0.001;
        out.push_back(tcp_pkt(t, gw, p, ce, port, PSHACK, 11));
        t += r;
        out.push_back(tcp_pkt(t, ce, port, gw, p, PSHACK, size(rng, 30, 60)));
        t = fin_close(out, t + 0.002, gw, p, ce, port, r) + 0.05;
    }
    const int last_sid = mode == FieldbusMode::AGGRESSIVE ? 247 : 1;
    std::set<int> responders{1, static_cast<int>(rng.integer(2, 247))};
    bool open = false;
    std::uint16_t p = 0;
    double r = 0;
    for (int sid = 1; sid <= last_sid; ++sid) {
        if (!open) {
            p = next_port();
            r = rtt();
            t = handshake(out, t, gw, p, ce, port, r) + 0.001;
            open = true;
        }
        out.push_back(tcp_pkt(t, gw, p, ce, port, PSHACK, 8));  // report slave id
        if (responders.count(sid)) {
            t += r;
            out.push_back(tcp_pkt(t, ce, port, gw, p, PSHACK, size(rng, 12, 30)));
            t += rng.uniform(0.005, 0.02);
        } else {
            t += timeout_s;
            out.push_back(tcp_pkt(t, gw, p, ce, port, RSTACK));
            open = false;
            t += rng.uniform(0.005, 0.02);
        }
    }
    if (open) {
        if (mode == FieldbusMode::AGGRESSIVE)
            fin_close(out, t, gw, p, ce, port, r);
        else
            out.push_back(tcp_pkt(t, gw, p, ce, port, RSTACK));
    }
    clip_sort(out, -1e300, 1e300);
    return out;
}

std::map<Ipv4, std::vector<PacketRecord>> ScenarioBundle::captures() const {
    std::map<Ipv4, std::vector<PacketRecord>> out;
    for (const auto& h : layout.capture_hosts()) {
        auto& v = out[h];
        for (const auto& p : traffic.packets)
            if (p.involves(h)) v.push_back(p);
    }
    return out;
}

namespace {

StageDetection truth(StageKind kind, double t, Ipv4 src, std::vector<Ipv4> dsts, std::string what) {
    StageDetection d;
    d.kind = kind;
    d.detected = true;
    d.time_det = quantize(t);
    d.src_ip = src;
    std::sort(dsts.begin(), dsts.end());
    d.dst_ips = std::move(dsts);
    d.score = 1.0;
    d.evidence.push_back({std::move(what), d.time_det});
    return d;
}

double first_time(const std::vector<PacketRecord>& v) { return v.empty() ? 0.0 : v.front().timestamp; }

void add(Traffic& tr, const std::vector<PacketRecord>& v) { tr.packets.insert(tr.packets.end(), v.begin(), v.end()); }

// SSH attempt; successful sessions keep exchanging for `duration`
void remote_login(Traffic& tr, Rng& rng, double t, Ipv4 src, Ipv4 dst, const std::string& user, bool ok,
                 double duration, AuthMethod method = AuthMethod::SSH) {
    const std::uint16_t port = method == AuthMethod::RDP ? 3389 : 22;
    std::vector<PacketRecord> s;
    const auto cp = ephemeral(rng);
    const double rtt = rng.uniform(0.001, 0.004);
    double at = handshake(s, t - 0.4, src, cp, dst, port, rtt);
    const double end = t + (ok ? duration : 0.2);
    while (at < end) {
        at += ok ? rng.exponential(0.8) : 0.05;
        s.push_back(tcp_pkt(at, src, cp, dst, port, PSHACK, size(rng, 40, 300)));
        s.push_back(tcp_pkt(at + rtt, dst, port, src, cp, PSHACK, size(rng, 40, method == AuthMethod::RDP ? 1400 : 900)));
    }
    fin_close(s, at + 0.01, src, cp, dst, port, rtt);
    add(tr, s);
    tr.auth.push_back({t, src, dst, user, ok, method});
}

void icmp_sweep(Traffic& tr, Rng& rng, double t, Ipv4 src, const std::vector<Ipv4>& alive) {
    for (std::uint32_t h = 1; h <= 254; ++h) {
        const Ipv4 dst((src.value & 0xFFFFFF00u) | h);
        if (dst == src) continue;
        tr.packets.push_back(icmp_pkt(t, src, dst));
        if (std::find(alive.begin(), alive.end(), dst) != alive.end())
            tr.packets.push_back(icmp_pkt(t + rng.uniform(0.0002, 0.002), dst, src));
        t += 0.001;
    }
}

// fresh client connection to a CE with a few request/response pairs
double ce_session(Traffic& tr, Rng& rng, double t, Ipv4 gw, const CeEndpoint& ce, int requests) {
    std::vector<PacketRecord> s;
    const auto cp = ephemeral(rng);
    const double rtt = rng.uniform(0.001, 0.005);
    const auto port = static_cast<std::uint16_t>(ce.port);
    t = handshake(s, t, gw, cp, ce.ip, port, rtt);
    for (int i = 0; i < requests; ++i) {
        t += rng.uniform(0.01, 0.05);
        s.push_back(tcp_pkt(t, gw, cp, ce.ip, port, PSHACK, size(rng, 12, 60)));
        t += rtt;
        s.push_back(tcp_pkt(t, ce.ip, port, gw, cp, PSHACK, size(rng, 12, 40)));
    }
    t = fin_close(s, t + 0.01, gw, cp, ce.ip, port, rtt);
    add(tr, s);
    return t;
}

ScenarioBundle finish_bundle(std::string name, std::uint64_t seed, double span, const Layout& L, Traffic tr,
                             std::vector<StageDetection> stages, std::vector<std::string> narrative) {
    ScenarioBundle b;
    b.name = std::move(name);
    b.seed = seed;
    b.span_s = span;
    b.layout = L;
    b.config = L.engine_config();
    const double end = L.epoch + span;
    std::erase_if(tr.packets, [&](const PacketRecord& p) { return p.timestamp >= end; });
    tr.sort();
    b.traffic = std::move(tr);
    b.expected_stages = std::move(stages);
    b.expected_graph = build_graph(b.expected_stages, b.config.inventory);
    b.narrative = std::move(narrative);
    return b;
}

bool stop_after(const CampaignOptions& opt, StageKind k) { return opt.last_stage && *opt.last_stage == k; }

}  // namespace

ScenarioBundle gen_benign_bundle(const Layout& layout, double span_s, std::uint64_t seed) {
    auto tr = gen_benign(TrafficProfile{}, layout, layout.epoch, span_s, seed);
    return finish_bundle("benign", seed, span_s, layout, std::move(tr), {}, {"normal operation only"});
}

ScenarioBundle gen_campaign(int id, const Layout& L, std::uint64_t seed, const CampaignOptions& opt) {
    if (id < 1 || id > 3) throw Error(ErrorCode::UnknownCampaign, "campaign " + std::to_string(id));
    require_valid(L.inventory());
    const TrafficProfile P;
    Rng rng(Rng::mix(seed) ^ static_cast<std::uint64_t>(id));
    const double E = L.epoch;
    const double span = id == 1 ? 2200.0 : id == 2 ? 2400.0 : 2100.0;
    std::map<Ipv4, double> poll_until;
    if (id == 3) poll_until[L.ces[1].ip] = E + 1500.0;
    Traffic tr = benign_traffic(P, L, E, span, rng.next(), poll_until);
    std::vector<StageDetection> gt;
    std::vector<std::string> story;
    const std::string name = "campaign-" + std::to_string(id);
    const std::vector<Ipv4> scan_targets{L.firewall, L.mqtt, L.api};
    const auto& victim_ce = id == 3 ? L.ces[1] : L.ces[0];

    if (id == 2) {
        story.push_back("insider installs malware on the maintenance machine from a USB stick (no network footprint)");
    } else {
        story.push_back("spear phishing email harvests VPN credentials (no network footprint)");
        story.push_back("attacker logs in to the maintenance machine through the VPN");
        tr.auth.push_back({E + 200.0, L.vpn_client, L.maintenance, "employee", true, AuthMethod::RDP});
        story.push_back("VPN password changed for persistence (no network footprint)");
    }

    // command and control over DNS
    const double period = id == 2 ? 10.0 : 5.0;
    const auto beacons = gen_cnc(period, 0.2, L.cnc, L.maintenance, span - 300.0, rng.next(), Protocol::UDP, E + 300.0);
    add(tr, beacons);
    gt.push_back(truth(StageKind::CNC, first_time(beacons), L.maintenance, {L.cnc}, "DNS tunnel beacon"));
    story.push_back("maintenance machine beacons to the C&C server over DNS");

    // discovery
    const bool slow = id == 2;
    std::vector<PacketRecord> scan;
    if (slow) {
        scan = gen_scan(ScanType::SLOW, L.maintenance, scan_targets, 20, rng.next(), {E + 600.0});
    } else {
        icmp_sweep(tr, rng, E + 600.0, L.maintenance, {L.firewall, L.api, L.mqtt, L.hmi});
        scan = gen_scan(ScanType::NORMAL, L.maintenance, scan_targets, 8000, rng.next(), {E + 601.0});
        tr.alerts.push_back({E + 602.0, kSigScan, L.maintenance, L.firewall, StageHint::DISCOVERY});
    }
    add(tr, scan);
    gt.push_back(truth(StageKind::DISCOVERY, first_time(scan), L.maintenance, scan_targets,
                       slow ? "slow SYN scan of the local network" : "SYN scan of the local network"));
    story.push_back(slow ? "slow SYN scan finds the firewall, MQTT server and external API machine"
                         : "SYN scan finds the firewall, MQTT server and external API machine");

    if (stop_after(opt, StageKind::DISCOVERY))
        return finish_bundle(name + "-truncated", seed, span, L, std::move(tr), std::move(gt), std::move(story));

    if (id == 2) {
        remote_login(tr, rng, E + 1800.0, L.maintenance, L.api, "svc_maint", true, 120.0, AuthMethod::RDP);
        gt.push_back(truth(StageKind::LATERAL_MOVEMENT, E + 1800.0, L.maintenance, {L.api}, "RDP session"));
        story.push_back("RDP session from the maintenance machine to the external API machine with a cracked hash");
        std::vector<PacketRecord> web;
        tcp_session(web, rng, E + 1900.0, L.api, L.gateway, 1880, 4, 2.0, {200, 400}, {100, 300});
        add(tr, web);
        story.push_back("HMI web interface on the API machine switches off the furnace relays at the gateway");
        return finish_bundle(name, seed, span, L, std::move(tr), std::move(gt), std::move(story));
    }

    // lateral movement to the edge gateway
    if (id == 1) {
        remote_login(tr, rng, E + 1180.0, L.maintenance, L.gateway, "maint", false, 0);
        remote_login(tr, rng, E + 1190.0, L.maintenance, L.gateway, "maint", false, 0);
        remote_login(tr, rng, E + 1200.0, L.maintenance, L.gateway, "maint", true, 90.0);
        story.push_back("cracked SSH password gives access to the edge gateway");
        std::vector<PacketRecord> coap;
        for (int i = 0; i < 6; ++i) {
            const double t = E + 1320.0 + i * 0.5;
            coap.push_back(udp_pkt(t, L.maintenance, 40000, L.gateway, 5683, size(rng, 10, 30)));
            coap.push_back(udp_pkt(t + 0.003, L.gateway, 5683, L.maintenance, 40000, size(rng, 40, 200)));
        }
        add(tr, coap);
        story.push_back("CoAP resources dumped from the maintenance machine");
    } else {
        remote_login(tr, rng, E + 1200.0, L.maintenance, L.gateway, "engineer", true, 120.0);
        story.push_back("employee maintenance SSH session to the edge gateway is hijacked");
    }
    gt.push_back(truth(StageKind::LATERAL_MOVEMENT, E + 1200.0, L.maintenance, {L.gateway}, "SSH login"));

    if (stop_after(opt, StageKind::LATERAL_MOVEMENT))
        return finish_bundle(name + "-truncated", seed, span, L, std::move(tr), std::move(gt), std::move(story));

    // fieldbus scanning from the gateway
    const double scan_at = id == 1 ? E + 1500.0 : E + 1560.0;
    if (id == 3) story.push_back("process polling the PLC is terminated");
    const auto fb = gen_fieldbus_scan(FieldbusProtocol::MODBUS, FieldbusMode::AGGRESSIVE, L.gateway, victim_ce.ip,
                                      rng.next(), scan_at, L.engine_config().ports, P.modbus_timeout_s);
    add(tr, fb);
    tr.alerts.push_back({scan_at + 1.0, kSigFieldbus, L.gateway, victim_ce.ip, StageHint::FIELDBUS_SCAN});
    gt.push_back(truth(StageKind::FIELDBUS_SCAN, first_time(fb), L.gateway, {victim_ce.ip}, "Modbus slave-ID sweep"));
    story.push_back("Modbus enumeration of all slave IDs from the gateway");
    const double scan_end = fb.back().timestamp;

    if (stop_after(opt, StageKind::FIELDBUS_SCAN))
        return finish_bundle(name + "-truncated", seed, span, L, std::move(tr), std::move(gt), std::move(story));

    // control element spoofing
    const double spoof_at = std::max(scan_end + 20.0, id == 1 ? E + 1900.0 : E + 1830.0);
    ce_session(tr, rng, spoof_at, L.gateway, victim_ce, id == 1 ? 6 : 2);
    if (id == 3) {
        ce_session(tr, rng, spoof_at + 30.0, L.gateway, victim_ce, 40);
        story.push_back("slave state read, then a new program uploaded while the PLC runs");
    } else {
        story.push_back("PLC configuration extracted by a script run on the gateway");
        story.push_back("collected data exfiltrated over the C&C channel");
    }
    gt.push_back(truth(StageKind::CE_SPOOF, spoof_at, L.gateway, {victim_ce.ip}, "rogue connection to the CE"));
    return finish_bundle(name, seed, span, L, std::move(tr), std::move(gt), std::move(story));
}

void write_bundle(const std::filesystem::path& dir, const ScenarioBundle& b) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error(ErrorCode::IoError, dir.string() + ": " + ec.message());
    nlohmann::json man;
    man["format"] = "aptd-bundle";
    man["version"] = 1;
    man["name"] = b.name;
    man["seed"] = b.seed;
    man["epoch"] = b.layout.epoch;
    man["span_s"] = b.span_s;
    auto& caps = man["captures"] = nlohmann::json::array();
    for (const auto& [host, packets] : b.captures()) {
        const std::string file = "capture_" + host.str() + ".pcap";
        write_capture(dir / file, packets);
        caps.push_back({{"host", host.str()}, {"file", file}, {"packets", packets.size()}});
    }
    write_text_file(dir / "auth.log", render_auth_log(b.traffic.auth));
    write_text_file(dir / "alerts.csv", render_ids_alerts(b.traffic.alerts));
    write_text_file(dir / "engine.conf", render_config(b.config));
    nlohmann::json stages = nlohmann::json::array();
    for (const auto& s : b.expected_stages) stages.push_back(nlohmann::json::parse(stage_to_json_line(s)));
    write_text_file(dir / "ground_truth_stages.json", stages.dump(2) + "\n");
    write_text_file(dir / "ground_truth_graph.json", export_graph(b.expected_graph, GraphFormat::STRUCTURED));
    man["auth_log"] = "auth.log";
    man["alerts"] = "alerts.csv";
    man["config"] = "engine.conf";
    man["ground_truth_graph"] = "ground_truth_graph.json";
    man["ground_truth_stages"] = "ground_truth_stages.json";
    man["narrative"] = b.narrative;
    write_text_file(dir / "bundle.json", man.dump(2) + "\n");
}

LoadedBundle load_bundle(const std::filesystem::path& dir) {
    nlohmann::json man;
    try {
        man = nlohmann::json::parse(read_text_file(dir / "bundle.json"));
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::SchemaError, (dir / "bundle.json").string() + ": " + e.what());
    }
    try {
        if (man.value("format", "") != "aptd-bundle")
            throw Error(ErrorCode::SchemaError, (dir / "bundle.json").string() + ": not a bundle manifest");
        LoadedBundle lb;
        lb.config = load_config(dir / man.at("config").get<std::string>());
        for (const auto& c : man.at("captures"))
            lb.captures[Ipv4::from(c.at("host").get<std::string>())] =
                read_capture(dir / c.at("file").get<std::string>()).packets;
        auto auth = parse_auth_log(dir / man.at("auth_log").get<std::string>());
        auto alerts = parse_ids_alerts(dir / man.at("alerts").get<std::string>(), lb.config.signatures);
        lb.auth = std::move(auth.items);
        lb.alerts = std::move(alerts.items);
        lb.rejects = std::move(auth.rejects);
        lb.rejects.insert(lb.rejects.end(), alerts.rejects.begin(), alerts.rejects.end());
        if (man.contains("ground_truth_graph"))
            lb.expected_graph = parse_graph_json(read_text_file(dir / man["ground_truth_graph"].get<std::string>()));
        if (man.contains("ground_truth_stages"))
            for (const auto& s : nlohmann::json::parse(read_text_file(dir / man["ground_truth_stages"].get<std::string>())))
                lb.expected_stages.push_back(stage_from_json_line(s.dump()));
        return lb;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::SchemaError, (dir / "bundle.json").string() + ": " + e.what());
    }
}

AsdcInputs make_asdc_inputs(const EngineConfig& cfg, const std::map<Ipv4, std::vector<PacketRecord>>& captures,
                            const std::vector<AuthLoginEvent>& auth, const std::vector<IdsAlert>& alerts,
                            const TrainedModel& discovery_model, const TrainedModel& fieldbus_model) {
    AsdcInputs in;
    in.windows = windows_by_host(captures, cfg.window_s);
    in.auth = auth;
    in.alerts = alerts;
    in.discovery_model = discovery_model;
    in.fieldbus_model = fieldbus_model;
    in.cfg = cfg;
    return in;
}

FeatureStage stage_of(DatasetKind kind) {
    return kind == DatasetKind::DISCOVERY_NORMAL || kind == DatasetKind::DISCOVERY_SLOW ? FeatureStage::DISCOVERY
                                                                                        : FeatureStage::FIELDBUS;
}

namespace {

std::vector<PacketRecord> shift_into(std::vector<PacketRecord> v, double offset) {
    for (auto& p : v) p.timestamp += offset;
    return v;
}

Ipv4 random_private(Rng& rng, std::uint32_t net, const std::vector<Ipv4>& avoid) {
    for (;;) {
        const Ipv4 ip(net | static_cast<std::uint32_t>(rng.integer(2, 250)));
        if (std::find(avoid.begin(), avoid.end(), ip) == avoid.end()) return ip;
    }
}

}  // namespace

LabeledWindow gen_labeled_window(DatasetKind kind, WindowLabel label, std::uint64_t seed, const Layout& L,
                                 const TrafficProfile& P, double w) {
    Rng rng(seed);
    LabeledWindow lw;
    lw.label = label;
    const double t0 = L.epoch;
    auto& win = lw.window;
    win.start_time = t0;
    win.duration_s = w;
    std::vector<PacketRecord> attack;

    if (stage_of(kind) == FeatureStage::DISCOVERY) {
        const bool api = rng.chance(0.5);
        win.host_ip = api ? L.api : L.maintenance;
        auto bg = rng.fork(1);
        win.packets = host_benign(api ? HostRole::API_SERVER : HostRole::WORKSTATION, win.host_ip, P, L, t0, w, bg, {});
        if (label == WindowLabel::SCANNING) {
            std::vector<Ipv4> targets;
            const auto n = rng.integer(1, 10);
            for (std::int64_t i = 0; i < n; ++i) {
                auto avoid = targets;
                avoid.push_back(win.host_ip);
                targets.push_back(random_private(rng, 0x0A000100u, avoid));
            }
            ScanOptions opt;
            opt.open_ports = {};
            for (auto p : {22, 80, 443})
                if (rng.chance(0.5)) opt.open_ports.push_back(static_cast<std::uint16_t>(p));
            if (kind == DatasetKind::DISCOVERY_NORMAL) {
                const auto ports = static_cast<std::size_t>(rng.integer(20, 2000));
                opt.gap_s = P.normal_probe_gap_s;
                const double dur = double(n) * double(ports) * opt.gap_s;
                opt.start = t0 + rng.uniform(-std::max(0.0, dur - 3.0), w - 3.0);
                attack = gen_scan(ScanType::NORMAL, win.host_ip, targets, ports, rng.next(), opt);
            } else {
                const auto ports = static_cast<std::size_t>(rng.integer(10, 50));
                opt.gap_s = P.slow_probe_gap_s;
                const double dur = double(n) * double(ports) * opt.gap_s;
                opt.start = t0 - rng.uniform(0.0, dur - w);
                attack = gen_scan(ScanType::SLOW, win.host_ip, targets, ports, rng.next(), opt);
            }
        }
    } else {
        win.host_ip = L.gateway;
        auto bg = rng.fork(1);
        win.packets = host_benign(HostRole::GATEWAY, L.gateway, P, L, t0, w, bg, {});
        if (label == WindowLabel::SCANNING) {
            std::vector<Ipv4> avoid;
            for (const auto& ce : L.ces) avoid.push_back(ce.ip);
            const Ipv4 ce = random_private(rng, 0x0A000300u, avoid);
            const bool s7 = kind == DatasetKind::FIELDBUS_S7;
            const auto mode = kind == DatasetKind::FIELDBUS_AGGRESSIVE       ? FieldbusMode::AGGRESSIVE
                              : kind == DatasetKind::FIELDBUS_NON_AGGRESSIVE ? FieldbusMode::NON_AGGRESSIVE
                              : rng.chance(0.5)                              ? FieldbusMode::AGGRESSIVE
                                                                             : FieldbusMode::NON_AGGRESSIVE;
            auto scan = gen_fieldbus_scan(s7 ? FieldbusProtocol::S7 : FieldbusProtocol::MODBUS, mode, L.gateway, ce,
                                          rng.next(), 0.0, {}, P.modbus_timeout_s);
            const double dur = scan.back().timestamp;
            const double offset = dur > w - 5.0 ? rng.uniform(-(dur - 20.0), w - 20.0) : rng.uniform(0.0, w - dur - 1.0);
            attack = shift_into(std::move(scan), t0 + offset);
        }
    }
    std::erase_if(attack, [&](const PacketRecord& p) { return p.timestamp < t0 || p.timestamp >= t0 + w; });
    win.packets.insert(win.packets.end(), attack.begin(), attack.end());
    clip_sort(win.packets, t0, t0 + w);
    return lw;
}

std::vector<FeatureVector> gen_feature_dataset(DatasetKind kind, std::size_t per_class, std::uint64_t seed,
                                               const Layout& layout, const TrafficProfile& profile) {
    std::vector<FeatureVector> rows;
    rows.reserve(2 * per_class);
    const auto salt = Rng::mix(static_cast<std::uint64_t>(kind) + 0x9e37ULL);
    for (std::size_t i = 0; i < 2 * per_class; ++i) {
        const auto label = i < per_class ? WindowLabel::NORMAL : WindowLabel::SCANNING;
        const auto lw = gen_labeled_window(kind, label, Rng::mix(seed ^ salt ^ Rng::mix(i + 1)), layout, profile);
        auto fv = extract_features(stage_of(kind), lw.window);
        fv.label = label;
        rows.push_back(std::move(fv));
    }
    return rows;
}

std::string_view to_string(DatasetKind k) {
    switch (k) {
        case DatasetKind::DISCOVERY_NORMAL: return "discovery-normal";
        case DatasetKind::DISCOVERY_SLOW: return "discovery-slow";
        case DatasetKind::FIELDBUS_AGGRESSIVE: return "fieldbus-aggressive";
        case DatasetKind::FIELDBUS_NON_AGGRESSIVE: return "fieldbus-nonaggressive";
        case DatasetKind::FIELDBUS_S7: return "fieldbus-s7";
    }
    return "discovery-normal";
}

std::optional<DatasetKind> parse_dataset_kind(std::string_view s) {
    for (auto k : {DatasetKind::DISCOVERY_NORMAL, DatasetKind::DISCOVERY_SLOW, DatasetKind::FIELDBUS_AGGRESSIVE,
                   DatasetKind::FIELDBUS_NON_AGGRESSIVE, DatasetKind::FIELDBUS_S7})
        if (to_string(k) == s) return k;
    return std::nullopt;
}

std::string_view to_string(FieldbusMode m) { return m == FieldbusMode::AGGRESSIVE ? "AGGRESSIVE" : "NON_AGGRESSIVE"; }

}  // namespace aptd
