#include "aptd/asdc.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include <json.hpp>

#include "aptd/cnc.hpp"
#include "aptd/ingest.hpp"
#include "aptd/stages.hpp"
#include "aptd/util.hpp"

namespace aptd {

bool correlate_pair(const StageDetection& a, const StageDetection& b) {
    if (!a.detected || !b.detected) return false;
    const bool same_host = a.src_ip == b.src_ip;
    const bool moved = a.kind == StageKind::LATERAL_MOVEMENT &&
                       std::find(a.dst_ips.begin(), a.dst_ips.end(), b.src_ip) != a.dst_ips.end();
    return (same_host || moved) && a.time_det < b.time_det;
}

std::vector<std::string> graph_violations(const CampaignGraph& g) {
    std::vector<std::string> out;
    std::set<Ipv4> touched;
    std::map<Ipv4, std::vector<double>> incoming_min;
    for (const auto& [key, stages] : g.edges) {
        const auto& [from, to] = key;
        if (stages.empty()) out.push_back("edge " + from.str() + "->" + to.str() + " has no stages");
        if (!g.nodes.count(from) || !g.nodes.count(to))
            out.push_back("edge " + from.str() + "->" + to.str() + " references a missing node");
        touched.insert(from);
        touched.insert(to);
        if (!stages.empty()) {
            double lo = stages.begin()->second;
            for (const auto& [_, t] : stages) lo = std::min(lo, t);
            incoming_min[to].push_back(lo);
        }
    }
    for (const auto& [ip, _] : g.nodes)
        if (!touched.count(ip) && g.edges.size() > 0) out.push_back("node " + ip.str() + " is not on any edge");
    for (const auto& [key, stages] : g.edges) {
        auto it = incoming_min.find(key.first);
        if (it == incoming_min.end()) continue;
        for (const auto& [kind, t] : stages)
            for (double in : it->second)
                if (t < in)
                    out.push_back("edge " + key.first.str() + "->" + key.second.str() + " stage " +
                                  std::string(to_string(kind)) + " precedes an incoming edge of its source");
    }
    return out;
}

CampaignGraph build_graph(const std::vector<StageDetection>& stages, const HostInventory& inv) {
    CampaignGraph g;
    std::set<Ipv4> entry, servers, moved_to;
    for (std::size_t i = 0; i < stages.size(); ++i) {
        const auto& s = stages[i];
        if (!s.detected)
            throw Error(ErrorCode::InconsistentChain, "stage " + std::to_string(i) + " was not detected");
        if (s.kind != StageKind::CNC) {
            bool linked = false;
            for (std::size_t j = 0; j < i && !linked; ++j) linked = correlate_pair(stages[j], s);
            if (!linked)
                throw Error(ErrorCode::InconsistentChain, std::string(to_string(s.kind)) + " at " + s.src_ip.str() +
                                                              " has no correlated predecessor");
        }
        g.nodes.emplace(s.src_ip, NodeRole::TARGET_HOST);
        for (const auto& dst : s.dst_ips) {
            g.nodes.emplace(dst, NodeRole::TARGET_HOST);
            auto& slot = g.edges[{s.src_ip, dst}];
            auto [it, fresh] = slot.emplace(s.kind, s.time_det);
            if (!fresh) it->second = std::min(it->second, s.time_det);
        }
        if (s.kind == StageKind::CNC) {
            entry.insert(s.src_ip);
            servers.insert(s.dst_ips.begin(), s.dst_ips.end());
        }
        if (s.kind == StageKind::LATERAL_MOVEMENT) moved_to.insert(s.dst_ips.begin(), s.dst_ips.end());
        if (s.kind == StageKind::CE_SPOOF) g.status = DetStatus::APT_DET_STOP;
    }
    for (auto& [ip, role] : g.nodes) {
        if (inv.is_ce(ip))
            role = NodeRole::CONTROL_ELEMENT;
        else if (ip == inv.edge_gateway_ip)
            role = NodeRole::EDGE_GATEWAY;
        else if (entry.count(ip))
            role = NodeRole::ENTRY_HOST;
        else if (servers.count(ip))
            role = NodeRole::CNC_SERVER;
        else if (moved_to.count(ip))
            role = NodeRole::INTERMEDIATE;
    }
    if (const auto bad = graph_violations(g); !bad.empty()) throw Error(ErrorCode::InconsistentChain, bad.front());
    return g;
}

namespace {

std::string stage_list(const std::map<StageKind, double>& stages) {
    std::string out;
    for (const auto& [kind, _] : stages) {
        if (!out.empty()) out += ',';
        out += to_string(kind);
    }
    return out;
}

}  // namespace

std::string export_graph(const CampaignGraph& g, GraphFormat format) {
    if (format == GraphFormat::DOT) {
        std::ostringstream os;
        os << "digraph campaign {\n";
        os << "  label=\"" << to_string(g.status) << "\";\n";
        for (const auto& [ip, role] : g.nodes)
            os << "  \"" << ip.str() << "\" [label=\"" << ip.str() << "\\n" << to_string(role) << "\"];\n";
        for (const auto& [key, stages] : g.edges)
            os << "  \"" << key.first.str() << "\" -> \"" << key.second.str() << "\" [label=\"" << stage_list(stages)
               << "\"];\n";
        os << "}\n";
        return os.str();
    }
    nlohmann::json j;
    j["schema"] = "aptd-campaign-graph";
    j["version"] = 1;
    j["det_status"] = to_string(g.status);
    auto& nodes = j["nodes"] = nlohmann::json::array();
    for (const auto& [ip, role] : g.nodes) nodes.push_back({{"ip", ip.str()}, {"role", to_string(role)}});
    auto& edges = j["edges"] = nlohmann::json::array();
    for (const auto& [key, stages] : g.edges) {
        nlohmann::json st = nlohmann::json::array();
        for (const auto& [kind, t] : stages) st.push_back({{"stage", to_string(kind)}, {"time", t}});
        edges.push_back({{"from", key.first.str()}, {"to", key.second.str()}, {"stages", st}});
    }
    return j.dump(2) + "\n";
}

CampaignGraph parse_graph_json(const std::string& text) {
    try {
        const auto j = nlohmann::json::parse(text);
        if (j.value("schema", "") != "aptd-campaign-graph" || j.value("version", 0) != 1)
            throw Error(ErrorCode::SchemaError, "not a version 1 campaign graph document");
        CampaignGraph g;
        const auto status = parse_det_status(j.at("det_status").get<std::string>());
        if (!status) throw Error(ErrorCode::SchemaError, "unknown det_status");
        g.status = *status;
        for (const auto& n : j.at("nodes")) {
            const auto role = parse_node_role(n.at("role").get<std::string>());
            if (!role) throw Error(ErrorCode::SchemaError, "unknown node role");
            g.nodes[Ipv4::from(n.at("ip").get<std::string>())] = *role;
        }
        for (const auto& e : j.at("edges")) {
            auto& slot = g.edges[{Ipv4::from(e.at("from").get<std::string>()), Ipv4::from(e.at("to").get<std::string>())}];
            for (const auto& s : e.at("stages")) {
                const auto kind = parse_stage_kind(s.at("stage").get<std::string>());
                if (!kind) throw Error(ErrorCode::SchemaError, "unknown stage kind");
                slot[*kind] = s.at("time").get<double>();
            }
        }
        return g;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::SchemaError, std::string("campaign graph: ") + e.what());
    }
}

namespace {

class Engine {
public:
    explicit Engine(const AsdcInputs& in) : in_(in), cfg_(in.cfg), inv_(in.cfg.inventory) {}

    AsdcResult run() {
        require_valid(inv_);
        for (const auto& host : inv_.internet_facing_hosts) {
            const auto* win = windows(host);
            if (!win) {
                reject(StageKind::CNC, host, std::nullopt, "no capture for internet-facing host");
                continue;
            }
            auto cnc = check_cnc_stage(host, *win, inv_, cfg_.periodicity, cfg_.score);
            if (!cnc.detected) {
                reject(StageKind::CNC, host, std::nullopt, "no periodic public peer");
                continue;
            }
            accept(cnc);
            visited_.insert(host);
            host_chain(host, cnc, 1, true);
        }
        AsdcResult r;
        r.stages = accepted_;
        r.rejected = rejected_;
        r.graph = build_graph(accepted_, inv_);
        r.status = r.graph.status;
        return r;
    }

private:
    const std::vector<TraceWindow>* windows(Ipv4 ip) const {
        auto it = in_.windows.find(ip);
        return it == in_.windows.end() ? nullptr : &it->second;
    }

    void accept(const StageDetection& s) { accepted_.push_back(s); }

    void reject(StageKind kind, Ipv4 src, std::optional<Ipv4> dst, std::string reason) {
        rejected_.push_back({kind, src, dst, std::move(reason)});
    }

    // Discovery then lateral movement from a compromised host. The entry host
    // must show discovery; hosts reached by lateral movement may move on directly.
    void host_chain(Ipv4 host, const StageDetection& pred, int hop, bool entry) {
        const auto* win = windows(host);
        if (!win) {
            reject(StageKind::DISCOVERY, host, std::nullopt, "no capture for host");
            return;
        }
        const StageDetection* last = &pred;
        auto disc = check_discovery_stage(host, *win, in_.discovery_model, in_.alerts, cfg_, pred.time_det);
        std::set<Ipv4> candidates;
        if (disc.detected && correlate_pair(pred, disc)) {
            accept(disc);
            last = &accepted_.back();
            candidates.insert(disc.dst_ips.begin(), disc.dst_ips.end());
        } else {
            reject(StageKind::DISCOVERY, host, std::nullopt,
                   disc.detected ? "not after " + std::string(to_string(pred.kind))
                                 : "no scanning windows after " + fmt_time(pred.time_det));
            if (entry) return;
        }
        const StageDetection anchor = *last;
        for (const auto& e : in_.auth)
            if (e.success && e.src_ip == host && e.timestamp > anchor.time_det) candidates.insert(e.dst_ip);
        candidates.erase(host);

        for (const auto& dst : candidates) {
            if (dst == inv_.edge_gateway_ip ? gateway_done_ : visited_.count(dst) > 0) continue;
            auto lm = check_lateral_movement_stage(host, dst, in_.auth, accepted_, *win, cfg_, anchor.time_det);
            if (!lm.detected || !correlate_pair(anchor, lm)) {
                reject(StageKind::LATERAL_MOVEMENT, host, dst,
                       lm.detected ? "login precedes " + std::string(to_string(anchor.kind))
                                   : "no successful login after " + fmt_time(anchor.time_det));
                continue;
            }
            accept(lm);
            const StageDetection moved = lm;
            if (dst == inv_.edge_gateway_ip) {
                gateway_done_ = true;
                gateway_chain(moved);
            } else if (hop < cfg_.max_hops) {
                visited_.insert(dst);
                host_chain(dst, moved, hop + 1, false);
            }
        }
    }

    void gateway_chain(const StageDetection& lm) {
        const auto gw = inv_.edge_gateway_ip;
        const auto* win = windows(gw);
        if (!win) {
            reject(StageKind::FIELDBUS_SCAN, gw, std::nullopt, "no capture at the edge gateway");
            return;
        }
        auto fb = check_fieldbus_scan_stage(*win, in_.fieldbus_model, in_.alerts, cfg_, lm.time_det);
        if (!fb.detected || !correlate_pair(lm, fb)) {
            reject(StageKind::FIELDBUS_SCAN, gw, std::nullopt,
                   fb.detected ? "not after lateral movement" : "no fieldbus scanning after " + fmt_time(lm.time_det));
            return;
        }
        accept(fb);
        const StageDetection scan = fb;
        auto ce = check_ce_comm_stage(*win, inv_, scan.time_det);
        if (!ce.detected || !correlate_pair(scan, ce)) {
            reject(StageKind::CE_SPOOF, gw, std::nullopt,
                   ce.detected ? "not after fieldbus scan" : "no rogue CE connection after " + fmt_time(scan.time_det));
            return;
        }
        accept(ce);
    }

    const AsdcInputs& in_;
    const EngineConfig& cfg_;
    const HostInventory& inv_;
    std::vector<StageDetection> accepted_;
    std::vector<RejectedCandidate> rejected_;
    std::set<Ipv4> visited_;
    bool gateway_done_ = false;
};

}  // namespace

AsdcResult run_asdc(const AsdcInputs& in) { return Engine(in).run(); }

std::map<Ipv4, std::vector<TraceWindow>> windows_by_host(const std::map<Ipv4, std::vector<PacketRecord>>& captures,
                                                         double window_s) {
    std::map<Ipv4, std::vector<TraceWindow>> out;
    for (const auto& [host, packets] : captures) out[host] = split_windows(packets, host, window_s);
    return out;
}

std::string_view to_string(DetStatus s) { return s == DetStatus::APT_DET_STOP ? "APT_DET_STOP" : "APT_DET_START"; }

std::string_view to_string(NodeRole r) {
    switch (r) {
        case NodeRole::ENTRY_HOST: return "ENTRY_HOST";
        case NodeRole::CNC_SERVER: return "CNC_SERVER";
        case NodeRole::INTERMEDIATE: return "INTERMEDIATE";
        case NodeRole::TARGET_HOST: return "TARGET_HOST";
        case NodeRole::EDGE_GATEWAY: return "EDGE_GATEWAY";
        case NodeRole::CONTROL_ELEMENT: return "CONTROL_ELEMENT";
    }
    return "TARGET_HOST";
}

std::optional<DetStatus> parse_det_status(std::string_view s) {
    if (s == "APT_DET_START") return DetStatus::APT_DET_START;
    if (s == "APT_DET_STOP") return DetStatus::APT_DET_STOP;
    return std::nullopt;
}

std::optional<NodeRole> parse_node_role(std::string_view s) {
    for (auto r : {NodeRole::ENTRY_HOST, NodeRole::CNC_SERVER, NodeRole::INTERMEDIATE, NodeRole::TARGET_HOST,
                   NodeRole::EDGE_GATEWAY, NodeRole::CONTROL_ELEMENT})
        if (to_string(r) == s) return r;
    return std::nullopt;
}

}  // namespace aptd
