#include "aptd/features.hpp"

#include <algorithm>
#include <sstream>

#include "aptd/util.hpp"

namespace aptd {

ConnectionSummary track_connections(const TraceWindow& window) {
    ConnectionSummary s;
    std::size_t attempts = 0;
    std::size_t completed = 0;
    for (const auto& p : window.packets) {
        if (p.protocol == Protocol::UDP) {
            s.probe_ports_per_dst[p.dst_ip].insert(p.dst_port);
            continue;
        }
        if (p.protocol != Protocol::TCP) continue;
        if (p.has(tcp::RST)) ++s.rst_count;
        if (p.has(tcp::FIN)) ++s.fin_count;

        if (p.has(tcp::SYN) && !p.has(tcp::ACK)) {
            ++s.syn_count;
            s.probe_ports_per_dst[p.dst_ip].insert(p.dst_port);
            s.handshakes_per_dst.try_emplace(p.dst_ip, 0);
            const ConnKey key{p.src_ip, p.src_port, p.dst_ip, p.dst_port};
            auto it = s.connections.find(key);
            if (it != s.connections.end() && it->second != ConnState::ESTABLISHED) continue;  // retransmission
            s.connections[key] = ConnState::SYN_SENT;
            ++attempts;
        } else if (p.has(tcp::SYN | tcp::ACK)) {
            auto it = s.connections.find(ConnKey{p.dst_ip, p.dst_port, p.src_ip, p.src_port});
            if (it != s.connections.end() && it->second == ConnState::SYN_SENT) it->second = ConnState::SYN_RECEIVED;
        } else if (p.has(tcp::ACK) && !p.has(tcp::RST)) {
            auto it = s.connections.find(ConnKey{p.src_ip, p.src_port, p.dst_ip, p.dst_port});
            if (it != s.connections.end() && it->second == ConnState::SYN_RECEIVED) {
                it->second = ConnState::ESTABLISHED;
                ++s.handshakes_per_dst[p.dst_ip];
                ++completed;
            }
        }
    }
    s.half_open = attempts - completed;
    return s;
}

namespace {

struct Triple {
    double max = 0, min = 0, mean = 0;
};

template <class Range>
Triple stats(const Range& values) {
    Triple t;
    bool first = true;
    double sum = 0;
    std::size_t n = 0;
    for (double v : values) {
        if (first) {
            t.max = t.min = v;
            first = false;
        }
        t.max = std::max(t.max, v);
        t.min = std::min(t.min, v);
        sum += v;
        ++n;
    }
    if (n) t.mean = sum / double(n);
    return t;
}

void append(std::vector<double>& out, const Triple& t) {
    out.push_back(t.max);
    out.push_back(t.min);
    out.push_back(t.mean);
}

void append_lengths_and_gaps(std::vector<double>& out, const TraceWindow& w) {
    std::vector<double> lengths, gaps;
    lengths.reserve(w.packets.size());
    for (const auto& p : w.packets) lengths.push_back(double(p.total_len));
    for (std::size_t i = 1; i < w.packets.size(); ++i)
        gaps.push_back(w.packets[i].timestamp - w.packets[i - 1].timestamp);
    append(out, stats(lengths));
    append(out, stats(gaps));
}

}  // namespace

const std::vector<std::string>& feature_names(FeatureStage stage) {
    static const std::vector<std::string> discovery{
        "unique_syn_udp_dst_ips", "dst_ports_per_ip_max", "dst_ports_per_ip_min", "dst_ports_per_ip_mean",
        "half_open_connections", "rst_packets",           "pkt_len_max",          "pkt_len_min",
        "pkt_len_mean",          "iat_max",               "iat_min",              "iat_mean"};
    static const std::vector<std::string> fieldbus{
        "handshakes_per_dst_max", "handshakes_per_dst_min", "handshakes_per_dst_mean", "rst_packets",
        "fin_packets",            "pkt_len_max",            "pkt_len_min",             "pkt_len_mean",
        "iat_max",                "iat_min",                "iat_mean"};
    return stage == FeatureStage::DISCOVERY ? discovery : fieldbus;
}

std::size_t feature_count(FeatureStage stage) { return feature_names(stage).size(); }

FeatureVector discovery_features(const TraceWindow& window) {
    const auto s = track_connections(window);
    FeatureVector fv;
    fv.stage = FeatureStage::DISCOVERY;
    fv.values.push_back(double(s.probe_ports_per_dst.size()));
    std::vector<double> ports;
    for (const auto& [_, set] : s.probe_ports_per_dst) ports.push_back(double(set.size()));
    append(fv.values, stats(ports));
    fv.values.push_back(double(s.half_open));
    fv.values.push_back(double(s.rst_count));
    append_lengths_and_gaps(fv.values, window);
    return fv;
}

FeatureVector fieldbus_features(const TraceWindow& window) {
    const auto s = track_connections(window);
    FeatureVector fv;
    fv.stage = FeatureStage::FIELDBUS;
    std::vector<double> shakes;
    for (const auto& [_, n] : s.handshakes_per_dst) shakes.push_back(double(n));
    append(fv.values, stats(shakes));
    fv.values.push_back(double(s.rst_count));
    fv.values.push_back(double(s.fin_count));
    append_lengths_and_gaps(fv.values, window);
    return fv;
}

FeatureVector extract_features(FeatureStage stage, const TraceWindow& window) {
    return stage == FeatureStage::DISCOVERY ? discovery_features(window) : fieldbus_features(window);
}

std::string_view to_string(FeatureStage s) { return s == FeatureStage::DISCOVERY ? "discovery" : "fieldbus"; }
std::string_view to_string(WindowLabel l) { return l == WindowLabel::NORMAL ? "normal" : "scanning"; }

std::optional<FeatureStage> parse_feature_stage(std::string_view s) {
    if (s == "discovery") return FeatureStage::DISCOVERY;
    if (s == "fieldbus") return FeatureStage::FIELDBUS;
    return std::nullopt;
}

std::string render_feature_csv(FeatureStage stage, const std::vector<FeatureVector>& rows) {
    std::ostringstream os;
    os << "label";
    for (const auto& n : feature_names(stage)) os << ',' << n;
    os << '\n';
    for (const auto& r : rows) {
        os << (r.label ? to_string(*r.label) : "");
        for (double v : r.values) os << ',' << fmt_double(v);
        os << '\n';
    }
    return os.str();
}

std::vector<FeatureVector> parse_feature_csv(FeatureStage stage, const std::string& text) {
    const auto& names = feature_names(stage);
    const std::size_t width = names.size() + 1;
    std::istringstream in(text);
    std::string line;
    std::vector<FeatureVector> rows;
    int n = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++n;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        const auto cols = split(line, ',');
        if (cols.size() != width)
            throw Error(ErrorCode::SchemaError, "line " + std::to_string(n) + " has " + std::to_string(cols.size()) +
                                                    " columns, " + std::string(to_string(stage)) + " expects " +
                                                    std::to_string(width));
        if (!header_seen) {
            header_seen = true;
            for (std::size_t i = 0; i < names.size(); ++i)
                if (trim(cols[i + 1]) != names[i])
                    throw Error(ErrorCode::SchemaError, "column " + std::to_string(i + 2) + " is '" + cols[i + 1] +
                                                            "', expected '" + names[i] + "'");
            continue;
        }
        FeatureVector fv;
        fv.stage = stage;
        const auto label = trim(cols[0]);
        if (label == "normal" || label == "0")
            fv.label = WindowLabel::NORMAL;
        else if (label == "scanning" || label == "1")
            fv.label = WindowLabel::SCANNING;
        else if (!label.empty())
            throw Error(ErrorCode::SchemaError, "line " + std::to_string(n) + ": unknown label '" + label + "'");
        for (std::size_t i = 1; i < cols.size(); ++i) {
            double v = 0;
            if (!parse_double(trim(cols[i]), v))
                throw Error(ErrorCode::SchemaError, "line " + std::to_string(n) + ", column " + std::to_string(i + 1) +
                                                        ": not a number");
            fv.values.push_back(v);
        }
        rows.push_back(std::move(fv));
    }
    if (!header_seen) throw Error(ErrorCode::SchemaError, "empty feature file");
    return rows;
}

}  // namespace aptd
