#include "doctest.h"

#include <algorithm>

#include "aptd/asdc.hpp"
#include "aptd/ingest.hpp"
#include "aptd/scenario.hpp"
#include "aptd/stages.hpp"
#include "models.hpp"
#include "support.hpp"

using namespace aptd;
using namespace aptd::test;

namespace {

SourceVerdict opt(int d, double w = 0.5) { return {DataSource::TRAFFIC, true, d, w}; }
SourceVerdict sec(int d, double w = 0.25) { return {DataSource::IDS_ALERTS, false, d, w}; }

struct Fixture {
    ScenarioBundle bundle;
    std::map<Ipv4, std::vector<TraceWindow>> windows;
};

const Fixture& campaign(int id) {
    static std::map<int, Fixture> cache;
    auto it = cache.find(id);
    if (it == cache.end()) {
        Fixture f;
        f.bundle = gen_campaign(id, Layout{}, 42);
        f.windows = windows_by_host(f.bundle.captures(), 60.0);
        it = cache.emplace(id, std::move(f)).first;
    }
    return it->second;
}

bool time_in_evidence(const StageDetection& d) {
    return std::any_of(d.evidence.begin(), d.evidence.end(), [&](const Evidence& e) { return e.timestamp == d.time_det; });
}

std::vector<TraceWindow> gateway_with(const std::vector<PacketRecord>& extra, std::uint64_t seed, double span = 600) {
    Layout layout;
    TrafficProfile profile;
    Rng rng(seed);
    auto pk = gen_host_benign(HostRole::GATEWAY, layout.gateway, profile, layout, 0, span, rng);
    pk.insert(pk.end(), extra.begin(), extra.end());
    return split_windows(pk, layout.gateway, 60);
}

}  // namespace

TEST_CASE("aggregate score examples") {
    ScoreConfig cfg;
    auto s = aggregate_score({opt(1)}, cfg);
    CHECK(s.d_a == 1.0);
    CHECK(s.detected);
    s = aggregate_score({opt(0), sec(1)}, cfg);
    CHECK(s.d_a == doctest::Approx(1.0 / 3.0));
    CHECK_FALSE(s.detected);
    s = aggregate_score({opt(1), sec(0)}, cfg);
    CHECK(s.d_a == doctest::Approx(2.0 / 3.0));
    CHECK(s.detected);
    // boundary is inclusive
    cfg.tau = 2.0 / 3.0;
    CHECK(aggregate_score({opt(1), sec(0)}, cfg).detected == (s.d_a >= cfg.tau));
}

TEST_CASE("aggregate score preconditions") {
    ScoreConfig cfg;
    auto code = [&](const std::vector<SourceVerdict>& v) {
        try {
            aggregate_score(v, cfg);
        } catch (const Error& e) {
            return e.code();
        }
        return ErrorCode::InvalidArgument;
    };
    CHECK(code({sec(1)}) == ErrorCode::NoOptimalSource);
    CHECK(code({opt(1), opt(0)}) == ErrorCode::NoOptimalSource);
    CHECK(code({opt(1), sec(1, 0.5)}) == ErrorCode::WeightOrderViolation);
    CHECK_THROWS_AS(aggregate_score({opt(1, 0.0)}, cfg), Error);
}

TEST_CASE("property: aggregate score is scale invariant and bounded") {
    ScoreConfig cfg;
    for (std::uint64_t seed = 1; seed <= 300; ++seed) {
        Rng rng(seed);
        const double w_opt = rng.uniform(0.2, 1.0);
        std::vector<SourceVerdict> v{opt(int(rng.integer(0, 1)), w_opt)};
        const auto n = rng.integer(0, 4);
        std::vector<std::pair<double, int>> hand;
        for (int i = 0; i < n; ++i) {
            v.push_back(sec(int(rng.integer(0, 1)), rng.uniform(0.01, w_opt * 0.99)));
            hand.emplace_back(v.back().weight, v.back().d);
        }
        const auto base = aggregate_score(v, cfg);
        CHECK(base.d_a == doctest::Approx(hand_score(v[0].weight, v[0].d, hand)).epsilon(1e-12));
        CHECK(base.d_a >= 0.0);
        CHECK(base.d_a <= 1.0);
        const bool all1 = std::all_of(v.begin(), v.end(), [](auto& x) { return x.d == 1; });
        const bool all0 = std::all_of(v.begin(), v.end(), [](auto& x) { return x.d == 0; });
        CHECK((base.d_a == 1.0) == all1);
        CHECK((base.d_a == 0.0) == all0);
        CHECK(base.detected == (base.d_a >= cfg.tau));

        const double c = rng.uniform(0.01, 100.0);
        auto scaled = v;
        for (auto& x : scaled) x.weight *= c;
        CHECK(aggregate_score(scaled, cfg).d_a == doctest::Approx(base.d_a).epsilon(1e-12));
    }
}

TEST_CASE("discovery at the entry host of campaign 1") {
    const auto& f = campaign(1);
    const auto& L = f.bundle.layout;
    const auto cfg = f.bundle.config;
    const auto det = check_discovery_stage(L.maintenance, f.windows.at(L.maintenance), discovery_model(),
                                           f.bundle.traffic.alerts, cfg);
    REQUIRE(det.detected);
    CHECK(det.score == 1.0);
    for (auto ip : {L.firewall, L.mqtt, L.api})
        CHECK(std::find(det.dst_ips.begin(), det.dst_ips.end(), ip) != det.dst_ips.end());
    CHECK(det.extras.at("scan_type") == "NORMAL");
    CHECK(time_in_evidence(det));

    // nothing qualifies once the cutoff passes the scan
    const auto late = check_discovery_stage(L.maintenance, f.windows.at(L.maintenance), discovery_model(),
                                            f.bundle.traffic.alerts, cfg, L.epoch + 2100);
    CHECK_FALSE(late.detected);
}

TEST_CASE("slow scan of campaign 2") {
    const auto& f = campaign(2);
    const auto& L = f.bundle.layout;
    const auto det = check_discovery_stage(L.maintenance, f.windows.at(L.maintenance), discovery_model(),
                                           f.bundle.traffic.alerts, f.bundle.config);
    REQUIRE(det.detected);
    CHECK(det.extras.at("scan_type") == "SLOW");
}

TEST_CASE("an IDS alert alone does not make a discovery") {
    Layout layout;
    const auto cfg = layout.engine_config();
    TrafficProfile profile;
    Rng rng(8);
    auto pk = gen_host_benign(HostRole::WORKSTATION, layout.maintenance, profile, layout, 0, 600, rng);
    std::vector<IdsAlert> alerts{{100.0, 2001219, layout.maintenance, layout.firewall, StageHint::DISCOVERY}};
    const auto det = check_discovery_stage(layout.maintenance, split_windows(pk, layout.maintenance, 60),
                                           discovery_model(), alerts, cfg);
    CHECK_FALSE(det.detected);
    CHECK(det.score == doctest::Approx(0.25 / 0.75));
}

TEST_CASE("lateral movement") {
    const auto& f = campaign(1);
    const auto& L = f.bundle.layout;
    const auto cfg = f.bundle.config;
    const auto disc = check_discovery_stage(L.maintenance, f.windows.at(L.maintenance), discovery_model(),
                                            f.bundle.traffic.alerts, cfg);
    REQUIRE(disc.detected);
    const auto& auth = f.bundle.traffic.auth;
    const auto lm = check_lateral_movement_stage(L.maintenance, L.gateway, auth, {disc}, f.windows.at(L.maintenance),
                                                 cfg, disc.time_det);
    REQUIRE(lm.detected);
    CHECK(lm.score == 1.0);
    CHECK(lm.dst_ips == std::vector<Ipv4>{L.gateway});
    CHECK(lm.extras.at("method") == "ssh");
    CHECK(time_in_evidence(lm));

    CHECK_FALSE(
        check_lateral_movement_stage(L.maintenance, L.gateway, auth, {}, f.windows.at(L.maintenance), cfg).detected);

    std::vector<AuthLoginEvent> failed;
    for (auto e : auth)
        if (e.src_ip == L.maintenance && e.dst_ip == L.gateway) {
            e.success = false;
            failed.push_back(e);
        }
    REQUIRE_FALSE(failed.empty());
    CHECK_FALSE(
        check_lateral_movement_stage(L.maintenance, L.gateway, failed, {disc}, f.windows.at(L.maintenance), cfg).detected);

    // a login before the compromise does not count
    auto early = disc;
    early.time_det = lm.time_det + 1;
    CHECK_FALSE(check_lateral_movement_stage(L.maintenance, L.gateway, auth, {early}, f.windows.at(L.maintenance), cfg)
                    .detected);
}

TEST_CASE("fieldbus scan detection") {
    Layout layout;
    const auto cfg = layout.engine_config();
    const auto& f = campaign(1);
    const auto agg = check_fieldbus_scan_stage(f.windows.at(layout.gateway), fieldbus_model(), f.bundle.traffic.alerts,
                                               f.bundle.config);
    REQUIRE(agg.detected);
    CHECK(time_in_evidence(agg));
    CHECK(std::find(agg.dst_ips.begin(), agg.dst_ips.end(), layout.ces[0].ip) != agg.dst_ips.end());

    // a single short scan fills one window, so vote smoothing is turned off for it
    auto single = cfg;
    single.vote_n = 1;
    const auto s7 = gen_fieldbus_scan(FieldbusProtocol::S7, FieldbusMode::AGGRESSIVE, layout.gateway, layout.ces[2].ip,
                                      5, 300);
    CHECK(std::all_of(s7.begin(), s7.end(), [](auto& p) { return p.src_port == 102 || p.dst_port == 102; }));
    CHECK(check_fieldbus_scan_stage(gateway_with(s7, 5), fieldbus_model(), {}, single).detected);
    CHECK_FALSE(check_fieldbus_scan_stage(gateway_with(s7, 5), fieldbus_model(), {}, cfg).detected);

    const auto na = gen_fieldbus_scan(FieldbusProtocol::MODBUS, FieldbusMode::NON_AGGRESSIVE, layout.gateway,
                                      layout.ces[1].ip, 6, 300);
    CHECK(check_fieldbus_scan_stage(gateway_with(na, 6), fieldbus_model(), {}, single).detected);

    for (std::uint64_t seed = 7; seed < 12; ++seed)
        CHECK_FALSE(check_fieldbus_scan_stage(gateway_with({}, seed), fieldbus_model(), {}, single).detected);
}

TEST_CASE("CE communication spoofing") {
    Layout layout;
    const auto inv = layout.inventory();
    const auto G = layout.gateway;
    const auto ce = layout.ces[0];
    auto handshake = [&](double t, std::uint16_t sport, Ipv4 ip, std::uint16_t port) {
        return std::vector<PacketRecord>{tcp_packet(t, G, sport, ip, port, tcp::SYN),
                                         tcp_packet(t + 0.001, ip, port, G, sport, tcp::SYN | tcp::ACK),
                                         tcp_packet(t + 0.002, G, sport, ip, port, tcp::ACK)};
    };
    auto cat = [](std::vector<PacketRecord> a, const std::vector<PacketRecord>& b) {
        a.insert(a.end(), b.begin(), b.end());
        std::stable_sort(a.begin(), a.end(), [](auto& x, auto& y) { return x.timestamp < y.timestamp; });
        return a;
    };

    auto two = cat(handshake(1.0, 40001, ce.ip, ce.port), handshake(5.0, 40002, ce.ip, ce.port));
    auto det = check_ce_comm_stage({window_of(G, 0, 60, two)}, inv);
    REQUIRE(det.detected);
    CHECK(det.extras.at("trigger") == "concurrent");
    CHECK(det.time_det == 5.002);
    CHECK(det.dst_ips == std::vector<Ipv4>{ce.ip});

    std::vector<PacketRecord> one = handshake(1.0, 40001, ce.ip, ce.port);
    for (int i = 0; i < 50; ++i) {
        one.push_back(tcp_packet(2.0 + i, G, 40001, ce.ip, ce.port, tcp::PSH | tcp::ACK, 12));
        one.push_back(tcp_packet(2.01 + i, ce.ip, ce.port, G, 40001, tcp::PSH | tcp::ACK, 11));
    }
    CHECK_FALSE(check_ce_comm_stage({window_of(G, 0, 60, one)}, inv).detected);

    const auto s7 = layout.ces[2];
    auto re = handshake(1.0, 40010, s7.ip, s7.port);
    re.push_back(tcp_packet(3.0, s7.ip, s7.port, G, 40010, tcp::RST));
    re = cat(re, handshake(10.0, 40011, s7.ip, s7.port));
    det = check_ce_comm_stage({window_of(G, 0, 60, re)}, inv);
    REQUIRE(det.detected);
    CHECK(det.extras.at("trigger") == "reconnect");
    CHECK(det.extras.at("ce_port") == "102");
    CHECK(det.time_det == 10.002);
    CHECK(time_in_evidence(det));

    auto empty = inv;
    empty.ce_endpoints.clear();
    try {
        check_ce_comm_stage({}, empty);
        FAIL("no CEs accepted");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::NoCeEndpoints);
    }
}

TEST_CASE("property: benign gateway traffic never looks like CE spoofing") {
    Layout layout;
    TrafficProfile profile;
    const auto inv = layout.inventory();
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        Rng rng(seed);
        auto pk = gen_host_benign(HostRole::GATEWAY, layout.gateway, profile, layout, layout.epoch, 900, rng);
        CHECK_FALSE(check_ce_comm_stage(split_windows(pk, layout.gateway, 60), inv).detected);
    }
}

TEST_CASE("property: detected stages take their time from their evidence") {
    Layout layout;
    TrafficProfile profile;
    const auto cfg = layout.engine_config();
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        Rng rng(seed);
        std::vector<IdsAlert> alerts;
        auto m = gen_host_benign(HostRole::WORKSTATION, layout.maintenance, profile, layout, 0, 600, rng);
        const double at = rng.uniform(0, 400);
        if (seed % 2) {
            auto scan = gen_scan(seed % 4 == 1 ? ScanType::NORMAL : ScanType::SLOW, layout.maintenance,
                                 {layout.firewall, layout.mqtt, layout.api}, seed % 4 == 1 ? 200 : 20, seed, {at});
            m.insert(m.end(), scan.begin(), scan.end());
        }
        if (seed % 3 == 0)
            alerts.push_back({at + 1, 2001219, layout.maintenance, layout.firewall, StageHint::DISCOVERY});
        if (seed % 5 == 0)
            alerts.push_back({at + 2, 2025100, layout.gateway, layout.ces[0].ip, StageHint::FIELDBUS_SCAN});
        const auto mw = split_windows(m, layout.maintenance, 60);

        std::vector<StageDetection> found;
        found.push_back(check_cnc_stage(layout.maintenance, mw, cfg.inventory, cfg.periodicity));
        found.push_back(check_discovery_stage(layout.maintenance, mw, discovery_model(), alerts, cfg));
        std::vector<AuthLoginEvent> auth{{at + 30, layout.maintenance, layout.gateway, "op", true, AuthMethod::SSH}};
        found.push_back(check_lateral_movement_stage(layout.maintenance, layout.gateway, auth, {found[1]}, mw, cfg));

        std::vector<PacketRecord> fb;
        if (seed % 2 == 0)
            fb = gen_fieldbus_scan(seed % 3 ? FieldbusProtocol::MODBUS : FieldbusProtocol::S7,
                                   seed % 4 ? FieldbusMode::AGGRESSIVE : FieldbusMode::NON_AGGRESSIVE, layout.gateway,
                                   layout.ces[seed % 3 == 0 ? 2 : 0].ip, seed, at);
        const auto gw = gateway_with(fb, seed);
        found.push_back(check_fieldbus_scan_stage(gw, fieldbus_model(), alerts, cfg));
        found.push_back(check_ce_comm_stage(gw, cfg.inventory));

        for (const auto& d : found) {
            CHECK(d.detected == (d.score >= cfg.score.tau));
            if (!d.detected) continue;
            INFO("seed " << seed << " stage " << to_string(d.kind));
            CHECK(d.time_det >= 0);
            CHECK(time_in_evidence(d));
        }
    }
}

TEST_CASE("stage records round trip through JSON lines") {
    const auto& f = campaign(3);
    const auto& L = f.bundle.layout;
    auto det = check_discovery_stage(L.maintenance, f.windows.at(L.maintenance), discovery_model(),
                                     f.bundle.traffic.alerts, f.bundle.config);
    const auto line = stage_to_json_line(det);
    CHECK(line.find('\n') == std::string::npos);
    const auto back = stage_from_json_line(line);
    CHECK(back.kind == det.kind);
    CHECK(back.detected == det.detected);
    CHECK(back.time_det == det.time_det);
    CHECK(back.src_ip == det.src_ip);
    CHECK(back.dst_ips == det.dst_ips);
    CHECK(back.extras == det.extras);
    CHECK(back.score == det.score);
    CHECK(back.evidence == det.evidence);
    CHECK(stage_to_json_line(back) == line);
    try {
        stage_from_json_line("{not json");
        FAIL("bad line accepted");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::ParseError);
    }
}
