#include "aptd/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "aptd/util.hpp"

namespace aptd {

namespace {

constexpr std::uint32_t kMagic = 0xa1b2c3d4;
constexpr std::uint32_t kMagicSwapped = 0xd4c3b2a1;
constexpr std::uint32_t kMaxRecord = 262144;

class ByteReader {
public:
    ByteReader(const std::vector<std::uint8_t>& b, bool swapped) : b_(b), swapped_(swapped) {}

    std::uint32_t u32(std::size_t off) const {
        std::uint32_t v = std::uint32_t(b_[off]) | std::uint32_t(b_[off + 1]) << 8 | std::uint32_t(b_[off + 2]) << 16 |
                          std::uint32_t(b_[off + 3]) << 24;
        return swapped_ ? __builtin_bswap32(v) : v;
    }

private:
    const std::vector<std::uint8_t>& b_;
    bool swapped_;
};

std::uint16_t be16(const std::uint8_t* p) { return static_cast<std::uint16_t>(p[0] << 8 | p[1]); }
std::uint32_t be32(const std::uint8_t* p) {
    return std::uint32_t(p[0]) << 24 | std::uint32_t(p[1]) << 16 | std::uint32_t(p[2]) << 8 | p[3];
}

// Returns false when the frame carries no decodable IPv4 header.
bool decode_frame(const std::uint8_t* data, std::size_t len, std::uint32_t link, PacketRecord& rec) {
    std::size_t off = 0;
    if (link == kLinkEthernet) {
        if (len < 14) return false;
        std::uint16_t type = be16(data + 12);
        off = 14;
        while (type == 0x8100 || type == 0x88a8) {
            if (len < off + 4) return false;
            type = be16(data + off + 2);
            off += 4;
        }
        if (type != 0x0800) return false;
    }
    if (len < off + 20) return false;
    const std::uint8_t* ip = data + off;
    if ((ip[0] >> 4) != 4) return false;
    const std::size_t ihl = std::size_t(ip[0] & 0x0f) * 4;
    if (ihl < 20 || len < off + ihl) return false;
    const std::uint32_t total = be16(ip + 2);
    if (total < ihl) return false;
    rec.total_len = total;
    rec.src_ip = Ipv4(be32(ip + 12));
    rec.dst_ip = Ipv4(be32(ip + 16));
    const bool later_fragment = (be16(ip + 6) & 0x1fff) != 0;
    const std::uint8_t proto = ip[9];
    const std::uint8_t* l4 = ip + ihl;
    const std::size_t avail = len - off - ihl;

    if (proto == 6 && !later_fragment) {
        if (avail < 20) return false;
        const std::size_t thl = std::size_t(l4[12] >> 4) * 4;
        if (thl < 20) return false;
        rec.protocol = Protocol::TCP;
        rec.src_port = be16(l4);
        rec.dst_port = be16(l4 + 2);
        rec.tcp_flags = l4[13] & 0x1f;
        rec.payload_len = total >= ihl + thl ? static_cast<std::uint32_t>(total - ihl - thl) : 0;
    } else if (proto == 17 && !later_fragment) {
        if (avail < 8) return false;
        rec.protocol = Protocol::UDP;
        rec.src_port = be16(l4);
        rec.dst_port = be16(l4 + 2);
        rec.payload_len = total >= ihl + 8 ? static_cast<std::uint32_t>(total - ihl - 8) : 0;
    } else {
        rec.protocol = Protocol::OTHER;
        rec.payload_len = static_cast<std::uint32_t>(total - ihl);
    }
    return true;
}

void put_le32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_le16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}
void put_be16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}
void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 3; i >= 0; --i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint16_t ip_checksum(const std::uint8_t* h, std::size_t n) {
    std::uint32_t sum = 0;
    for (std::size_t i = 0; i + 1 < n; i += 2) sum += be16(h + i);
    while (sum >> 16) sum = (sum & 0xffff) + (sum >> 16);
    return static_cast<std::uint16_t>(~sum);
}

}  // namespace

Capture parse_capture(const std::vector<std::uint8_t>& bytes, const std::string& name) {
    if (bytes.size() < 24) throw Error(ErrorCode::BadMagic, name + ": file shorter than a capture header");
    const std::uint32_t raw_magic =
        std::uint32_t(bytes[0]) | std::uint32_t(bytes[1]) << 8 | std::uint32_t(bytes[2]) << 16 | std::uint32_t(bytes[3]) << 24;
    bool swapped = false;
    if (raw_magic == kMagicSwapped) {
        swapped = true;
    } else if (raw_magic != kMagic) {
        std::ostringstream os;
        os << name << ": unrecognised magic 0x" << std::hex << raw_magic;
        throw Error(ErrorCode::BadMagic, os.str());
    }
    ByteReader r(bytes, swapped);
    Capture cap;
    cap.meta.path = name;
    cap.meta.link_type = r.u32(20) & 0x0fffffff;
    if (cap.meta.link_type != kLinkEthernet && cap.meta.link_type != kLinkRaw && cap.meta.link_type != kLinkIpv4)
        throw Error(ErrorCode::UnsupportedLinkType, name + ": link type " + std::to_string(cap.meta.link_type));

    std::size_t pos = 24;
    while (pos < bytes.size()) {
        if (bytes.size() - pos < 16)
            throw Error(ErrorCode::TruncatedRecord, name + ": record header cut short at offset " + std::to_string(pos));
        const std::uint32_t sec = r.u32(pos);
        const std::uint32_t usec = r.u32(pos + 4);
        const std::uint32_t incl = r.u32(pos + 8);
        if (incl > kMaxRecord || incl > bytes.size() - pos - 16 || usec >= 1000000)
            throw Error(ErrorCode::TruncatedRecord, name + ": bad record at offset " + std::to_string(pos) +
                                                        " (captured length " + std::to_string(incl) + ")");
        PacketRecord rec;
        rec.timestamp = from_micros(std::int64_t(sec) * 1000000 + usec);
        ++cap.meta.packet_count;
        if (decode_frame(bytes.data() + pos + 16, incl, cap.meta.link_type, rec))
            cap.packets.push_back(rec);
        else
            ++cap.meta.skipped;
        pos += 16 + incl;
    }
    if (!cap.packets.empty()) {
        auto [lo, hi] = std::minmax_element(cap.packets.begin(), cap.packets.end(),
                                            [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });
        cap.meta.time_span = {lo->timestamp, hi->timestamp};
    }
    return cap;
}

Capture read_capture(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot open capture " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_capture(bytes, path.string());
}

std::vector<std::uint8_t> encode_capture(const std::vector<PacketRecord>& packets, std::uint32_t snaplen) {
    std::vector<std::uint8_t> out;
    out.reserve(24 + packets.size() * (16 + std::min<std::uint32_t>(snaplen, 128)));
    put_le32(out, kMagic);
    put_le16(out, 2);
    put_le16(out, 4);
    put_le32(out, 0);
    put_le32(out, 0);
    put_le32(out, snaplen);
    put_le32(out, kLinkEthernet);

    std::vector<std::uint8_t> frame;
    std::uint16_t ip_id = 1;
    for (const auto& p : packets) {
        frame.clear();
        for (int i = 0; i < 6; ++i) frame.push_back(i == 0 ? 0x02 : (i == 5 ? 0x02 : 0x00));
        for (int i = 0; i < 6; ++i) frame.push_back(i == 0 ? 0x02 : (i == 5 ? 0x01 : 0x00));
        put_be16(frame, 0x0800);

        const std::size_t ip_at = frame.size();
        frame.push_back(0x45);
        frame.push_back(0);
        put_be16(frame, static_cast<std::uint16_t>(p.total_len));
        put_be16(frame, ip_id++);
        put_be16(frame, 0x4000);
        frame.push_back(64);
        frame.push_back(p.protocol == Protocol::TCP ? 6 : p.protocol == Protocol::UDP ? 17 : 1);
        put_be16(frame, 0);
        put_be32(frame, p.src_ip.value);
        put_be32(frame, p.dst_ip.value);
        const auto csum = ip_checksum(frame.data() + ip_at, 20);
        frame[ip_at + 10] = static_cast<std::uint8_t>(csum >> 8);
        frame[ip_at + 11] = static_cast<std::uint8_t>(csum);

        if (p.protocol == Protocol::TCP) {
            put_be16(frame, p.src_port);
            put_be16(frame, p.dst_port);
            put_be32(frame, 0);
            put_be32(frame, 0);
            frame.push_back(5 << 4);
            frame.push_back(p.tcp_flags);
            put_be16(frame, 64240);
            put_be16(frame, 0);
            put_be16(frame, 0);
        } else if (p.protocol == Protocol::UDP) {
            put_be16(frame, p.src_port);
            put_be16(frame, p.dst_port);
            put_be16(frame, static_cast<std::uint16_t>(8 + p.payload_len));
            put_be16(frame, 0);
        }
        const std::size_t wire = 14 + std::size_t(p.total_len);
        if (frame.size() < wire) frame.resize(wire, 0);
        const auto incl = static_cast<std::uint32_t>(std::min<std::size_t>(wire, snaplen));

        const auto us = to_micros(p.timestamp);
        put_le32(out, static_cast<std::uint32_t>(us / 1000000));
        put_le32(out, static_cast<std::uint32_t>(us % 1000000));
        put_le32(out, incl);
        put_le32(out, static_cast<std::uint32_t>(wire));
        out.insert(out.end(), frame.begin(), frame.begin() + incl);
    }
    return out;
}

void write_capture(const std::filesystem::path& path, const std::vector<PacketRecord>& packets, std::uint32_t snaplen) {
    const auto bytes = encode_capture(packets, snaplen);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write capture " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::IoError, "short write to " + path.string());
}

std::vector<TraceWindow> split_windows(const std::vector<PacketRecord>& packets, Ipv4 host_ip, double duration_s) {
    if (!(duration_s > 0.0))
        throw Error(ErrorCode::NonpositiveDuration, "window duration must be positive, got " + fmt_double(duration_s));
    std::vector<PacketRecord> mine;
    for (const auto& p : packets)
        if (p.involves(host_ip)) mine.push_back(p);
    if (mine.empty()) return {};
    std::stable_sort(mine.begin(), mine.end(), [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });

    const double first = mine.front().timestamp;
    const auto count = static_cast<std::size_t>(std::floor((mine.back().timestamp - first) / duration_s)) + 1;
    std::vector<TraceWindow> windows(count);
    for (std::size_t i = 0; i < count; ++i) {
        windows[i].host_ip = host_ip;
        windows[i].start_time = first + double(i) * duration_s;
        windows[i].duration_s = duration_s;
    }
    for (auto& p : mine) {
        auto idx = static_cast<std::size_t>(std::floor((p.timestamp - first) / duration_s));
        idx = std::min(idx, count - 1);
        windows[idx].packets.push_back(p);
    }
    return windows;
}

namespace {

template <class T, class LineFn>
Parsed<T> parse_lines(const std::string& text, LineFn fn) {
    Parsed<T> out;
    std::istringstream in(text);
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto t = trim(line);
        if (t.empty() || t.front() == '#') continue;
        T item;
        std::string why = fn(split(t, ','), item);
        if (why.empty())
            out.items.push_back(std::move(item));
        else
            out.rejects.push_back({n, line, why});
    }
    std::stable_sort(out.items.begin(), out.items.end(),
                     [](const T& a, const T& b) { return a.timestamp < b.timestamp; });
    return out;
}

std::string lower(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

}  // namespace

Parsed<AuthLoginEvent> parse_auth_log_text(const std::string& text) {
    return parse_lines<AuthLoginEvent>(text, [](const std::vector<std::string>& f, AuthLoginEvent& ev) -> std::string {
        if (f.size() != 6) return "expected 6 fields, got " + std::to_string(f.size());
        if (!parse_double(trim(f[0]), ev.timestamp) || ev.timestamp < 0) return "bad timestamp";
        auto src = Ipv4::parse(trim(f[1]));
        auto dst = Ipv4::parse(trim(f[2]));
        if (!src || !dst) return "bad address";
        ev.src_ip = *src;
        ev.dst_ip = *dst;
        ev.username = trim(f[3]);
        if (ev.username.empty()) return "empty username";
        const auto status = lower(trim(f[4]));
        if (status == "ok")
            ev.success = true;
        else if (status == "fail")
            ev.success = false;
        else
            return "status must be ok or fail";
        const auto method = lower(trim(f[5]));
        if (method == "ssh")
            ev.method = AuthMethod::SSH;
        else if (method == "rdp")
            ev.method = AuthMethod::RDP;
        else if (method == "other")
            ev.method = AuthMethod::OTHER;
        else
            return "method must be ssh, rdp or other";
        return {};
    });
}

Parsed<AuthLoginEvent> parse_auth_log(const std::filesystem::path& path) {
    return parse_auth_log_text(read_text_file(path));
}

std::string render_auth_log(const std::vector<AuthLoginEvent>& events) {
    std::string out;
    for (const auto& e : events) {
        out += fmt_time(e.timestamp) + "," + e.src_ip.str() + "," + e.dst_ip.str() + "," + e.username + "," +
               (e.success ? "ok" : "fail") + "," + std::string(to_string(e.method)) + "\n";
    }
    return out;
}

Parsed<IdsAlert> parse_ids_alerts_text(const std::string& text, const SignatureMap& sig_map) {
    return parse_lines<IdsAlert>(text, [&](const std::vector<std::string>& f, IdsAlert& a) -> std::string {
        if (f.size() != 4) return "expected 4 fields, got " + std::to_string(f.size());
        if (!parse_double(trim(f[0]), a.timestamp) || a.timestamp < 0) return "bad timestamp";
        const auto sig = trim(f[1]);
        auto [p, ec] = std::from_chars(sig.data(), sig.data() + sig.size(), a.signature_id);
        if (ec != std::errc{} || p != sig.data() + sig.size()) return "bad signature id";
        auto src = Ipv4::parse(trim(f[2]));
        auto dst = Ipv4::parse(trim(f[3]));
        if (!src || !dst) return "bad address";
        a.src_ip = *src;
        a.dst_ip = *dst;
        auto it = sig_map.find(a.signature_id);
        a.stage_hint = it == sig_map.end() ? StageHint::NONE : it->second;
        return {};
    });
}

Parsed<IdsAlert> parse_ids_alerts(const std::filesystem::path& path, const SignatureMap& sig_map) {
    return parse_ids_alerts_text(read_text_file(path), sig_map);
}

std::string render_ids_alerts(const std::vector<IdsAlert>& alerts) {
    std::string out;
    for (const auto& a : alerts)
        out += fmt_time(a.timestamp) + "," + std::to_string(a.signature_id) + "," + a.src_ip.str() + "," +
               a.dst_ip.str() + "\n";
    return out;
}

}  // namespace aptd
