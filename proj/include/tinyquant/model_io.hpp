#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tinyquant/netgraph.hpp"
#include "tinyquant/quantizer.hpp"

namespace tinyquant {

// .tqm container: 20-byte header (magic "TQM1", u16 version, u8 flavor,
// u8 reserved, u64 payload length, u32 CRC-32 of the payload), then the
// payload. All fields little-endian; full layout in docs/model-container.md.
inline constexpr std::uint16_t kContainerVersion = 1;
inline constexpr std::int64_t kModelBudgetBytes = 230 * 1024;

enum class ModelFlavor : std::uint8_t { Float32 = 0, Int8 = 1 };

struct FloatModel {
    NetworkConfig cfg;
    ModelParams params;
};

std::vector<std::uint8_t> serialize(const NetworkConfig& cfg, const ModelParams& params);
std::vector<std::uint8_t> serialize(const QuantizedModel& qm);

// Magic/version/flavor/length checks only; cheap dispatch before a full load.
ModelFlavor peek_flavor(const std::vector<std::uint8_t>& bytes);

FloatModel deserialize_float(const std::vector<std::uint8_t>& bytes);
QuantizedModel deserialize_int8(const std::vector<std::uint8_t>& bytes);

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> read_file(const std::string& path);

struct SizeReport {
    std::int64_t float_bytes = 0;
    std::int64_t int8_bytes = 0;
    double reduction_pct = 0.0;  // 100 * (1 - int8/float)
};
SizeReport size_report(std::int64_t float_bytes, std::int64_t int8_bytes);

struct BudgetCheck {
    bool pass = false;
    std::int64_t model_bytes = 0;
    std::int64_t budget_bytes = 0;
    std::int64_t margin = 0;  // budget - model (negative when over)
};
BudgetCheck budget_check(std::int64_t model_bytes, std::int64_t budget_bytes = kModelBudgetBytes);

// Header + summary fields for the `info` command.
struct ContainerInfo {
    std::uint16_t version = 0;
    ModelFlavor flavor = ModelFlavor::Float32;
    std::uint64_t payload_bytes = 0;
    std::uint32_t crc32 = 0;
    std::string network_name;
    int param_layers = 0;
    std::int64_t param_count = 0;
    std::int64_t container_bytes = 0;
};
ContainerInfo inspect(const std::vector<std::uint8_t>& bytes);

}  // namespace tinyquant
