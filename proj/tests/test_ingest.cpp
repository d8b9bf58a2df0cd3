#include "doctest.h"

#include <algorithm>

#include "aptd/ingest.hpp"
#include "aptd/scenario.hpp"
#include "support.hpp"

using namespace aptd;
using namespace aptd::test;

namespace {

void le32(std::vector<std::uint8_t>& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(std::uint8_t(v >> (8 * i)));
}
void be16(std::vector<std::uint8_t>& b, std::uint16_t v) {
    b.push_back(std::uint8_t(v >> 8));
    b.push_back(std::uint8_t(v));
}
void be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
    for (int i = 3; i >= 0; --i) b.push_back(std::uint8_t(v >> (8 * i)));
}

std::vector<std::uint8_t> global_header(std::uint32_t link = 1) {
    std::vector<std::uint8_t> b;
    le32(b, 0xa1b2c3d4);
    b.push_back(2), b.push_back(0), b.push_back(4), b.push_back(0);
    le32(b, 0);
    le32(b, 0);
    le32(b, 65535);
    le32(b, link);
    return b;
}

// Ethernet + IPv4 + 20-byte TCP header, no payload.
void tcp_record(std::vector<std::uint8_t>& b, std::uint32_t sec, std::uint32_t usec, std::uint32_t src,
                std::uint32_t dst, std::uint16_t sport, std::uint16_t dport, std::uint8_t flags) {
    le32(b, sec);
    le32(b, usec);
    le32(b, 54);
    le32(b, 54);
    for (int i = 0; i < 12; ++i) b.push_back(0);
    be16(b, 0x0800);
    b.push_back(0x45), b.push_back(0);
    be16(b, 40);
    be16(b, 0), be16(b, 0x4000);
    b.push_back(64), b.push_back(6);
    be16(b, 0);
    be32(b, src), be32(b, dst);
    be16(b, sport), be16(b, dport);
    be32(b, 1), be32(b, 0);
    b.push_back(0x50), b.push_back(flags);
    be16(b, 1024), be16(b, 0), be16(b, 0);
}

}  // namespace

TEST_CASE("hand-assembled three-way handshake capture") {
    const std::uint32_t a = Ipv4(10, 0, 1, 10).value, g = Ipv4(10, 0, 2, 1).value;
    auto bytes = global_header();
    tcp_record(bytes, 100, 0, a, g, 40000, 22, tcp::SYN);
    tcp_record(bytes, 100, 250, g, a, 22, 40000, tcp::SYN | tcp::ACK);
    tcp_record(bytes, 100, 500, a, g, 40000, 22, tcp::ACK);
    const auto cap = parse_capture(bytes);
    REQUIRE(cap.packets.size() == 3);
    CHECK(cap.packets[0].tcp_flags == tcp::SYN);
    CHECK(cap.packets[1].tcp_flags == (tcp::SYN | tcp::ACK));
    CHECK(cap.packets[2].tcp_flags == tcp::ACK);
    CHECK(cap.packets[1].src_ip == Ipv4(10, 0, 2, 1));
    CHECK(cap.packets[0].dst_port == 22);
    CHECK(cap.packets[0].total_len == 40);
    CHECK(cap.packets[0].payload_len == 0);
    CHECK(cap.packets[2].timestamp == doctest::Approx(100.0005));
    CHECK(cap.meta.packet_count == 3);
    CHECK(cap.meta.link_type == kLinkEthernet);
    CHECK(cap.meta.time_span.second >= cap.meta.time_span.first);
}

TEST_CASE("header-only capture is empty") {
    const auto cap = parse_capture(global_header());
    CHECK(cap.packets.empty());
    CHECK(cap.meta.packet_count == 0);
}

TEST_CASE("capture error paths") {
    auto bytes = global_header();
    tcp_record(bytes, 1, 0, 1, 2, 3, 4, tcp::SYN);
    tcp_record(bytes, 2, 0, 1, 2, 3, 4, tcp::SYN);

    // second record's incl_len sits 24 + 16 + 54 + 8 bytes in
    auto corrupt = bytes;
    const std::size_t offset = 24 + 16 + 54;
    corrupt[offset + 8] = 0xff;
    corrupt[offset + 9] = 0xff;
    try {
        parse_capture(corrupt);
        FAIL("corrupt length accepted");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::TruncatedRecord);
        CHECK(std::string(e.what()).find(std::to_string(offset)) != std::string::npos);
    }

    auto cut = bytes;
    cut.resize(bytes.size() - 10);
    CHECK_THROWS_AS(parse_capture(cut), Error);

    auto magic = bytes;
    magic[0] = 0;
    try {
        parse_capture(magic);
        FAIL("bad magic accepted");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::BadMagic);
    }

    try {
        parse_capture(global_header(147));
        FAIL("link type accepted");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::UnsupportedLinkType);
    }
}

TEST_CASE("non-IPv4 frames are counted and skipped") {
    auto bytes = global_header();
    tcp_record(bytes, 1, 0, 1, 2, 3, 4, tcp::SYN);
    auto arp = global_header();
    tcp_record(arp, 2, 0, 1, 2, 3, 4, tcp::SYN);
    arp[24 + 16 + 12] = 0x08;
    arp[24 + 16 + 13] = 0x06;
    bytes.insert(bytes.end(), arp.begin() + 24, arp.end());
    const auto cap = parse_capture(bytes);
    CHECK(cap.packets.size() == 1);
    CHECK(cap.meta.skipped == 1);
}

TEST_CASE("property: written captures read back field for field") {
    Layout layout;
    TrafficProfile profile;
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        Rng rng(seed);
        auto packets = gen_host_benign(HostRole(seed % 3), layout.capture_hosts()[seed % 3], profile, layout,
                                       layout.epoch, 30.0, rng);
        auto udp = gen_cnc(5.0, 0.2, layout.cnc, layout.maintenance, 30.0, seed, Protocol::UDP, layout.epoch);
        packets.insert(packets.end(), udp.begin(), udp.end());
        for (auto& p : packets) p.timestamp = quantize(p.timestamp);
        std::stable_sort(packets.begin(), packets.end(),
                         [](const auto& x, const auto& y) { return x.timestamp < y.timestamp; });
        const auto cap = parse_capture(encode_capture(packets));
        REQUIRE(cap.packets.size() == packets.size());
        CHECK(cap.packets == packets);
    }
}

TEST_CASE("capture files on disk") {
    const auto dir = scratch_dir("ingest");
    std::vector<PacketRecord> pk{tcp_packet(5.0, Ipv4(10, 0, 0, 1), 1000, Ipv4(10, 0, 0, 2), 80, tcp::SYN),
                                 udp_packet(6.5, Ipv4(10, 0, 0, 2), 53, Ipv4(10, 0, 0, 1), 1000)};
    write_capture(dir / "a.pcap", pk);
    const auto cap = read_capture(dir / "a.pcap");
    CHECK(cap.packets == pk);
    CHECK(cap.meta.path.find("a.pcap") != std::string::npos);
    try {
        read_capture(dir / "missing.pcap");
        FAIL("missing file accepted");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::IoError);
    }
}

TEST_CASE("split_windows boundaries") {
    const Ipv4 h(10, 0, 0, 1), o(10, 0, 0, 2);
    std::vector<PacketRecord> pk{udp_packet(0.0, h, 1, o, 2), udp_packet(59.9, h, 1, o, 2),
                                 udp_packet(60.1, o, 2, h, 1)};
    const auto w = split_windows(pk, h, 60.0);
    REQUIRE(w.size() == 2);
    CHECK(w[0].packets.size() == 2);
    CHECK(w[1].packets.size() == 1);
    CHECK(w[1].start_time == 60.0);
    CHECK(split_windows({}, h, 60.0).empty());
    try {
        split_windows(pk, h, 0.0);
        FAIL("zero duration accepted");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::NonpositiveDuration);
    }
}

TEST_CASE("split_windows emits empty interior windows and drops foreign packets") {
    const Ipv4 h(10, 0, 0, 1), o(10, 0, 0, 2), x(10, 0, 0, 3);
    std::vector<PacketRecord> pk{udp_packet(0.0, h, 1, o, 2), udp_packet(30.0, o, 1, x, 2),
                                 udp_packet(200.0, h, 1, o, 2)};
    const auto w = split_windows(pk, h, 60.0);
    REQUIRE(w.size() == 4);
    CHECK(w[1].packets.empty());
    CHECK(w[2].packets.empty());
}

TEST_CASE("campaign capture windows conserve packets") {
    Layout layout;
    const auto b = gen_campaign(1, layout, 42);
    const auto caps = b.captures();
    const auto& m = caps.at(layout.maintenance);
    const auto w = split_windows(m, layout.maintenance, 60.0);
    const double span = m.back().timestamp - m.front().timestamp;
    CHECK(w.size() == std::size_t(std::floor(span / 60.0)) + 1);
    std::size_t total = 0;
    for (const auto& x : w) total += x.packets.size();
    CHECK(total == m.size());
}

TEST_CASE("property: split_windows conserves packets and respects window bounds") {
    for (std::uint64_t seed = 1; seed <= 120; ++seed) {
        Rng rng(seed);
        const Ipv4 h(10, 0, 0, 1), o(10, 0, 0, 2), x(10, 0, 0, 3);
        std::vector<PacketRecord> pk;
        const int n = int(rng.integer(1, 300));
        std::size_t mine = 0;
        for (int i = 0; i < n; ++i) {
            const bool own = rng.chance(0.8);
            mine += own;
            pk.push_back(udp_packet(quantize(rng.uniform(0, 900)), own ? h : o, 1, own ? o : x, 2));
        }
        const double d = rng.uniform(5, 120);
        const auto w = split_windows(pk, h, d);
        std::size_t total = 0;
        for (const auto& win : w) {
            total += win.packets.size();
            CHECK(std::is_sorted(win.packets.begin(), win.packets.end(),
                                 [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; }));
            for (const auto& p : win.packets) {
                CHECK(p.involves(h));
                CHECK(p.timestamp >= win.start_time);
                CHECK(p.timestamp < win.end_time() + 1e-9);
            }
        }
        CHECK(total == mine);

        // idempotent once the input is already sorted
        std::vector<PacketRecord> sorted;
        for (const auto& win : w) sorted.insert(sorted.end(), win.packets.begin(), win.packets.end());
        const auto again = split_windows(sorted, h, d);
        REQUIRE(again.size() == w.size());
        for (std::size_t i = 0; i < w.size(); ++i) CHECK(again[i].packets == w[i].packets);
    }
}

TEST_CASE("auth log lines") {
    const auto r = parse_auth_log_text(
        "1700000000.5,10.0.1.5,10.0.2.9,operator,ok,ssh\n"
        "1700000001,10.0.1.5,10.0.2.9,operator,fail,rdp\n"
        "1700000002,10.0.1.5,10.0.2.9,operator,ok\n"
        "garbage\n");
    REQUIRE(r.items.size() == 2);
    CHECK(r.items[0].success);
    CHECK(r.items[0].method == AuthMethod::SSH);
    CHECK(r.items[0].username == "operator");
    CHECK(r.items[0].timestamp == 1700000000.5);
    CHECK_FALSE(r.items[1].success);
    CHECK(r.items[1].method == AuthMethod::RDP);
    REQUIRE(r.rejects.size() == 2);
    CHECK(r.rejects[0].line == 3);
    CHECK(r.rejects[1].line == 4);
}

TEST_CASE("auth log events come out in time order and round trip") {
    const auto r = parse_auth_log_text(
        "20,10.0.0.1,10.0.0.2,b,ok,ssh\n"
        "10,10.0.0.1,10.0.0.3,a,fail,other\n");
    REQUIRE(r.items.size() == 2);
    CHECK(r.items[0].timestamp == 10);
    CHECK(parse_auth_log_text(render_auth_log(r.items)).items == r.items);
    CHECK_THROWS_AS(parse_auth_log("/nonexistent/auth.log"), Error);
}

TEST_CASE("IDS alerts map signatures to stage hints") {
    const SignatureMap sigs{{2001219, StageHint::DISCOVERY}};
    const auto r = parse_ids_alerts_text(
        "100,2001219,10.0.1.10,10.0.1.1\n"
        "101,999,10.0.1.10,10.0.1.1\n"
        "102,abc,10.0.1.10,10.0.1.1\n",
        sigs);
    REQUIRE(r.items.size() == 2);
    CHECK(r.items[0].stage_hint == StageHint::DISCOVERY);
    CHECK(r.items[1].stage_hint == StageHint::NONE);
    CHECK(r.rejects.size() == 1);
    CHECK(parse_ids_alerts_text(render_ids_alerts(r.items), sigs).items == r.items);
}

TEST_CASE("campaign alert file holds every generated alert") {
    Layout layout;
    const auto b = gen_campaign(1, layout, 42);
    const auto dir = scratch_dir("alerts");
    write_bundle(dir, b);
    const auto r = parse_ids_alerts(dir / "alerts.csv", layout.engine_config().signatures);
    CHECK(r.rejects.empty());
    CHECK(r.items.size() == b.traffic.alerts.size());
}
