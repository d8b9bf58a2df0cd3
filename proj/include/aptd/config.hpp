#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "aptd/cnc.hpp"
#include "aptd/model.hpp"

namespace aptd {

struct PortTable {
    std::uint16_t modbus = 502;
    std::uint16_t s7 = 102;
    std::uint16_t dnp3 = 20000;

    std::uint16_t port_for(FieldbusProtocol p) const;
    bool is_industrial(std::uint16_t port) const;
};

struct EngineConfig {
    HostInventory inventory;
    ScoreConfig score;
    PeriodicityConfig periodicity;
    PortTable ports;
    SignatureMap signatures;
    double window_s = 60.0;
    int vote_n = 5;
    // probes per minute at or above which a scan counts as NORMAL
    double normal_scan_rate = 30.0;
    // a destination becomes a discovery target once probed on this many ports
    std::size_t min_target_ports = 3;
    std::vector<std::uint16_t> remote_access_ports{22, 3389, 23, 5900};
    int max_hops = 3;

    void validate() const;
};

// Plain "key = value" lines; '#' starts a comment; list keys may repeat.
// The parsed configuration is validated before it is returned.
EngineConfig parse_config(const std::string& text);
EngineConfig load_config(const std::filesystem::path& path);
std::string render_config(const EngineConfig& cfg);

}  // namespace aptd
