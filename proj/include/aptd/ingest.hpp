#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "aptd/model.hpp"

namespace aptd {

struct CaptureMeta {
    std::string path;
    std::uint32_t link_type = 0;
    std::size_t packet_count = 0;  // records in the file
    std::size_t skipped = 0;       // records that were not IPv4
    std::pair<double, double> time_span{0.0, 0.0};
};

struct Capture {
    std::vector<PacketRecord> packets;
    CaptureMeta meta;
};

inline constexpr std::uint32_t kLinkEthernet = 1;
inline constexpr std::uint32_t kLinkRaw = 101;
inline constexpr std::uint32_t kLinkIpv4 = 228;

Capture parse_capture(const std::vector<std::uint8_t>& bytes, const std::string& name = "<memory>");
Capture read_capture(const std::filesystem::path& path);

// Ethernet frames; payload bytes are zero and frames are cut at `snaplen`.
std::vector<std::uint8_t> encode_capture(const std::vector<PacketRecord>& packets, std::uint32_t snaplen = 128);
void write_capture(const std::filesystem::path& path, const std::vector<PacketRecord>& packets,
                   std::uint32_t snaplen = 128);

// Keeps packets with src or dst = host_ip and tiles [first, last] with fixed-width windows.
std::vector<TraceWindow> split_windows(const std::vector<PacketRecord>& packets, Ipv4 host_ip, double duration_s);

struct Reject {
    int line = 0;
    std::string text;
    std::string reason;
};

template <class T>
struct Parsed {
    std::vector<T> items;
    std::vector<Reject> rejects;
};

Parsed<AuthLoginEvent> parse_auth_log_text(const std::string& text);
Parsed<AuthLoginEvent> parse_auth_log(const std::filesystem::path& path);
std::string render_auth_log(const std::vector<AuthLoginEvent>& events);

Parsed<IdsAlert> parse_ids_alerts_text(const std::string& text, const SignatureMap& sig_map);
Parsed<IdsAlert> parse_ids_alerts(const std::filesystem::path& path, const SignatureMap& sig_map);
std::string render_ids_alerts(const std::vector<IdsAlert>& alerts);

}  // namespace aptd
