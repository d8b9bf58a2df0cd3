#include "aptd/stages.hpp"

#include <algorithm>
#include <map>
#include <set>

#include <json.hpp>

#include "aptd/features.hpp"
#include "aptd/util.hpp"

namespace aptd {

AggregateScore aggregate_score(const std::vector<SourceVerdict>& verdicts, const ScoreConfig& cfg) {
    const SourceVerdict* opt = nullptr;
    for (const auto& v : verdicts) {
        if (!v.is_optimal) continue;
        if (opt) throw Error(ErrorCode::NoOptimalSource, "more than one optimal source");
        opt = &v;
    }
    if (!opt) throw Error(ErrorCode::NoOptimalSource, "no optimal source among verdicts");
    double num = 0.0, den = 0.0;
    for (const auto& v : verdicts) {
        if (!(v.weight > 0.0)) throw Error(ErrorCode::InvalidArgument, "verdict weights must be positive");
        if (!v.is_optimal && !(opt->weight > v.weight))
            throw Error(ErrorCode::WeightOrderViolation, std::string(to_string(v.source)) + " weight is not below w_opt");
        num += v.weight * (v.d ? 1.0 : 0.0);
        den += v.weight;
    }
    AggregateScore s;
    s.d_a = num / den;
    s.tau = cfg.tau;
    s.detected = s.d_a >= cfg.tau;
    return s;
}

std::vector<WindowLabel> vote_windows(const std::vector<TraceWindow>& windows, const TrainedModel& model, int vote_n) {
    std::vector<WindowLabel> raw;
    raw.reserve(windows.size());
    for (const auto& w : windows)
        raw.push_back(w.packets.empty() ? WindowLabel::NORMAL : model.classify(extract_features(model.stage, w)));
    return smooth_labels(raw, vote_n);
}

namespace {

std::string join_ips(const std::vector<Ipv4>& ips) {
    std::string out;
    for (const auto& ip : ips) {
        if (!out.empty()) out += ',';
        out += ip.str();
    }
    return out;
}

void finish(StageDetection& det, const std::vector<SourceVerdict>& verdicts, const ScoreConfig& cfg) {
    const auto agg = aggregate_score(verdicts, cfg);
    det.score = agg.d_a;
    det.detected = agg.detected;
}

}  // namespace

StageDetection check_discovery_stage(Ipv4 host_ip, const std::vector<TraceWindow>& windows, const TrainedModel& model,
                                     const std::vector<IdsAlert>& alerts, const EngineConfig& cfg, double after) {
    StageDetection det;
    det.kind = StageKind::DISCOVERY;
    det.src_ip = host_ip;

    const auto labels = vote_windows(windows, model, cfg.vote_n);
    std::vector<const TraceWindow*> positive;
    for (std::size_t i = 0; i < windows.size(); ++i)
        if (labels[i] == WindowLabel::SCANNING && windows[i].start_time > after) positive.push_back(&windows[i]);

    const IdsAlert* alert = nullptr;
    for (const auto& a : alerts)
        if (a.stage_hint == StageHint::DISCOVERY && a.src_ip == host_ip && a.timestamp > after) {
            alert = &a;
            break;
        }

    std::vector<SourceVerdict> verdicts{{DataSource::TRAFFIC, true, positive.empty() ? 0 : 1, cfg.score.w_opt}};
    if (const double w = cfg.score.weight(StageKind::DISCOVERY, DataSource::IDS_ALERTS); w > 0)
        verdicts.push_back({DataSource::IDS_ALERTS, false, alert ? 1 : 0, w});
    finish(det, verdicts, cfg.score);

    if (!positive.empty()) {
        det.time_det = positive.front()->start_time;
        for (const auto* w : positive)
            det.evidence.push_back({"window classified SCANNING after voting", w->start_time});
    } else if (alert) {
        det.time_det = alert->timestamp;
    }
    if (alert)
        det.evidence.push_back({"IDS signature " + std::to_string(alert->signature_id) + " " + alert->src_ip.str() +
                                    " -> " + alert->dst_ip.str(),
                                alert->timestamp});

    std::map<Ipv4, std::set<std::uint16_t>> probed;
    for (const auto* w : positive)
        for (const auto& p : w->packets) {
            if (p.src_ip != host_ip || p.dst_ip == host_ip || !cfg.inventory.is_private(p.dst_ip)) continue;
            const bool probe = p.protocol == Protocol::UDP ||
                               (p.protocol == Protocol::TCP && p.has(tcp::SYN) && !p.has(tcp::ACK));
            if (probe) probed[p.dst_ip].insert(p.dst_port);
        }
    std::size_t pairs = 0;
    for (const auto& [ip, ports] : probed) {
        pairs += ports.size();
        if (ports.size() >= cfg.min_target_ports) det.dst_ips.push_back(ip);
    }
    if (!positive.empty()) {
        const double minutes = double(positive.size()) * positive.front()->duration_s / 60.0;
        const auto type = double(pairs) / minutes >= cfg.normal_scan_rate ? ScanType::NORMAL : ScanType::SLOW;
        det.extras["scan_type"] = std::string(to_string(type));
        det.extras["list_target_host_IPs"] = join_ips(det.dst_ips);
        det.extras["scanning_windows"] = std::to_string(positive.size());
    }
    return det;
}

StageDetection check_lateral_movement_stage(Ipv4 src_ip, Ipv4 dst_ip, const std::vector<AuthLoginEvent>& auth_events,
                                            const std::vector<StageDetection>& prior,
                                            const std::vector<TraceWindow>& windows, const EngineConfig& cfg,
                                            double after) {
    StageDetection det;
    det.kind = StageKind::LATERAL_MOVEMENT;
    det.src_ip = src_ip;
    det.dst_ips = {dst_ip};

    // earliest detected stage that places src_ip inside the campaign
    std::optional<double> compromised;
    for (const auto& p : prior) {
        if (!p.detected) continue;
        const bool at_src = p.src_ip == src_ip && p.kind != StageKind::LATERAL_MOVEMENT;
        const bool moved_in = p.kind == StageKind::LATERAL_MOVEMENT &&
                              std::find(p.dst_ips.begin(), p.dst_ips.end(), src_ip) != p.dst_ips.end();
        if (at_src || moved_in) compromised = compromised ? std::min(*compromised, p.time_det) : p.time_det;
    }

    const AuthLoginEvent* login = nullptr;
    if (compromised) {
        const double floor = std::max(after, *compromised);
        for (const auto& e : auth_events)
            if (e.success && e.src_ip == src_ip && e.dst_ip == dst_ip && e.src_ip != e.dst_ip && e.timestamp > floor) {
                login = &e;
                break;
            }
    }

    bool traffic = false;
    double traffic_ts = 0.0;
    if (login) {
        const double lo = login->timestamp - cfg.window_s, hi = login->timestamp + cfg.window_s;
        const std::set<std::uint16_t> remote(cfg.remote_access_ports.begin(), cfg.remote_access_ports.end());
        for (const auto& w : windows) {
            if (w.end_time() < lo || w.start_time > hi) continue;
            for (const auto& p : w.packets) {
                if (p.protocol != Protocol::TCP || p.timestamp < lo || p.timestamp > hi) continue;
                const bool fwd = p.src_ip == src_ip && p.dst_ip == dst_ip && remote.count(p.dst_port);
                const bool back = p.src_ip == dst_ip && p.dst_ip == src_ip && remote.count(p.src_port);
                if (fwd || back) {
                    traffic = true;
                    traffic_ts = p.timestamp;
                    break;
                }
            }
            if (traffic) break;
        }
    }

    std::vector<SourceVerdict> verdicts{{DataSource::AUTH_LOGS, true, login ? 1 : 0, cfg.score.w_opt}};
    if (const double w = cfg.score.weight(StageKind::LATERAL_MOVEMENT, DataSource::TRAFFIC); w > 0)
        verdicts.push_back({DataSource::TRAFFIC, false, traffic ? 1 : 0, w});
    finish(det, verdicts, cfg.score);

    if (login) {
        det.time_det = login->timestamp;
        det.extras["username"] = login->username;
        det.extras["method"] = std::string(to_string(login->method));
        det.evidence.push_back({"successful " + std::string(to_string(login->method)) + " login by " + login->username,
                                login->timestamp});
    }
    if (traffic) det.evidence.push_back({"remote-access TCP exchange near the login", traffic_ts});
    return det;
}

StageDetection check_fieldbus_scan_stage(const std::vector<TraceWindow>& gateway_windows, const TrainedModel& model,
                                         const std::vector<IdsAlert>& alerts, const EngineConfig& cfg, double after) {
    StageDetection det;
    det.kind = StageKind::FIELDBUS_SCAN;
    det.src_ip = cfg.inventory.edge_gateway_ip;
    const auto gw = cfg.inventory.edge_gateway_ip;

    const auto labels = vote_windows(gateway_windows, model, cfg.vote_n);
    std::vector<const TraceWindow*> positive;
    for (std::size_t i = 0; i < gateway_windows.size(); ++i)
        if (labels[i] == WindowLabel::SCANNING && gateway_windows[i].start_time > after)
            positive.push_back(&gateway_windows[i]);

    const IdsAlert* alert = nullptr;
    for (const auto& a : alerts)
        if (a.stage_hint == StageHint::FIELDBUS_SCAN && a.src_ip == gw && a.timestamp > after) {
            alert = &a;
            break;
        }

    std::vector<SourceVerdict> verdicts{{DataSource::TRAFFIC, true, positive.empty() ? 0 : 1, cfg.score.w_opt}};
    if (const double w = cfg.score.weight(StageKind::FIELDBUS_SCAN, DataSource::IDS_ALERTS); w > 0)
        verdicts.push_back({DataSource::IDS_ALERTS, false, alert ? 1 : 0, w});
    finish(det, verdicts, cfg.score);

    if (!positive.empty()) {
        det.time_det = positive.front()->start_time;
        for (const auto* w : positive)
            det.evidence.push_back({"gateway window classified SCANNING after voting", w->start_time});
    } else if (alert) {
        det.time_det = alert->timestamp;
    }
    if (alert)
        det.evidence.push_back({"IDS signature " + std::to_string(alert->signature_id) + " " + alert->src_ip.str() +
                                    " -> " + alert->dst_ip.str(),
                                alert->timestamp});

    std::set<Ipv4> targets;
    for (const auto* w : positive)
        for (const auto& p : w->packets)
            if (p.src_ip == gw && p.protocol == Protocol::TCP && p.has(tcp::SYN) && !p.has(tcp::ACK) &&
                cfg.ports.is_industrial(p.dst_port))
                targets.insert(p.dst_ip);
    det.dst_ips.assign(targets.begin(), targets.end());
    if (!det.dst_ips.empty()) det.extras["list_target_ce_IPs"] = join_ips(det.dst_ips);
    return det;
}

StageDetection check_ce_comm_stage(const std::vector<TraceWindow>& gateway_windows, const HostInventory& inv,
                                   double after) {
    if (inv.ce_endpoints.empty()) throw Error(ErrorCode::NoCeEndpoints, "inventory lists no control elements");
    StageDetection det;
    det.kind = StageKind::CE_SPOOF;
    det.src_ip = inv.edge_gateway_ip;
    const auto gw = inv.edge_gateway_ip;

    enum class St { PENDING, SYNACK, LIVE, CLOSED };
    struct Best {
        double time = 0;
        std::string trigger;
        CeEndpoint ce;
        bool found = false;
    } best;

    for (const auto& ce : inv.ce_endpoints) {
        std::map<std::uint16_t, St> conns;  // keyed by gateway source port
        bool terminated = false;
        bool hit = false;
        for (const auto& w : gateway_windows) {
            for (const auto& p : w.packets) {
                if (p.protocol != Protocol::TCP) continue;
                std::uint16_t gport;
                if (p.src_ip == gw && p.dst_ip == ce.ip && p.dst_port == ce.port)
                    gport = p.src_port;
                else if (p.src_ip == ce.ip && p.dst_ip == gw && p.src_port == ce.port)
                    gport = p.dst_port;
                else
                    continue;
                const bool from_gw = p.src_ip == gw;
                auto it = conns.find(gport);
                bool became_live = false;
                bool via_handshake = false;

                if (p.has(tcp::SYN) && !p.has(tcp::ACK) && from_gw) {
                    conns[gport] = St::PENDING;
                } else if (p.has(tcp::SYN | tcp::ACK) && !from_gw) {
                    if (it != conns.end() && it->second == St::PENDING) it->second = St::SYNACK;
                } else if (p.has(tcp::RST) || p.has(tcp::FIN)) {
                    if (it != conns.end() && it->second == St::LIVE) terminated = true;
                    if (it == conns.end()) terminated = true;  // mid-stream connection torn down
                    conns[gport] = St::CLOSED;
                } else if (it == conns.end()) {
                    conns[gport] = St::LIVE;  // picked up mid-stream
                    became_live = true;
                } else if (it->second == St::SYNACK && from_gw && p.has(tcp::ACK)) {
                    it->second = St::LIVE;
                    became_live = true;
                    via_handshake = true;
                }
                if (!became_live || p.timestamp <= after) continue;

                const auto live = std::count_if(conns.begin(), conns.end(), [](const auto& kv) { return kv.second == St::LIVE; });
                std::string trigger;
                if (live >= 2)
                    trigger = "concurrent";
                else if (via_handshake && terminated)
                    trigger = "reconnect";
                if (trigger.empty()) continue;
                if (!best.found || p.timestamp < best.time) best = {p.timestamp, trigger, ce, true};
                hit = true;
                break;
            }
            if (hit) break;
        }
    }

    std::vector<SourceVerdict> verdicts{{DataSource::TRAFFIC, true, best.found ? 1 : 0, 0.5}};
    ScoreConfig plain;
    finish(det, verdicts, plain);
    if (best.found) {
        det.time_det = best.time;
        det.dst_ips = {best.ce.ip};
        det.extras["trigger"] = best.trigger;
        det.extras["ce_port"] = std::to_string(best.ce.port);
        det.evidence.push_back({(best.trigger == "concurrent" ? "second live connection to " : "new connection after teardown to ") +
                                    best.ce.ip.str() + ":" + std::to_string(best.ce.port),
                                best.time});
    }
    return det;
}

std::string stage_to_json_line(const StageDetection& d) {
    nlohmann::json j;
    j["kind"] = to_string(d.kind);
    j["detected"] = d.detected;
    j["time_det"] = d.time_det;
    j["src_ip"] = d.src_ip.str();
    auto& dsts = j["dst_ips"] = nlohmann::json::array();
    for (const auto& ip : d.dst_ips) dsts.push_back(ip.str());
    j["extras"] = d.extras;
    j["score"] = d.score;
    auto& ev = j["evidence"] = nlohmann::json::array();
    for (const auto& e : d.evidence) ev.push_back({{"what", e.what}, {"timestamp", e.timestamp}});
    return j.dump();
}

StageDetection stage_from_json_line(const std::string& line) {
    try {
        const auto j = nlohmann::json::parse(line);
        StageDetection d;
        auto kind = parse_stage_kind(j.at("kind").get<std::string>());
        if (!kind) throw Error(ErrorCode::ParseError, "unknown stage kind");
        d.kind = *kind;
        d.detected = j.at("detected").get<bool>();
        d.time_det = j.at("time_det").get<double>();
        d.src_ip = Ipv4::from(j.at("src_ip").get<std::string>());
        for (const auto& ip : j.at("dst_ips")) d.dst_ips.push_back(Ipv4::from(ip.get<std::string>()));
        d.extras = j.value("extras", std::map<std::string, std::string>{});
        d.score = j.value("score", 0.0);
        for (const auto& e : j.value("evidence", nlohmann::json::array()))
            d.evidence.push_back({e.at("what").get<std::string>(), e.at("timestamp").get<double>()});
        return d;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ParseError, std::string("stage record: ") + e.what());
    }
}

}  // namespace aptd
