#pragma once

#include "dlnlab/core.hpp"
#include "dlnlab/costs.hpp"
#include "dlnlab/escape.hpp"
#include "dlnlab/flow.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>

namespace dln {

using Json = nlohmann::json;

/// Fixed 17-significant-digit formatting so emitted CSV files are
/// byte-identical across runs.
std::string format_g17(double x);

Json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const Json& j);

/// {"widths": [...], "layers": [row-major 2D arrays, ascending]}
Json params_to_json(const Params& theta);
Params params_from_json(const Json& j);

/// {"type": "mse"|"mc"|"trace"|"localized", ...}
Json cost_to_json(const CostSpec& cost);
CostSpec cost_from_json(const Json& j);

/// Columns: step,time,loss_train,loss_test,grad_norm,param_norm,rank,
/// nuclear_norm,balance_defect. Missing test loss is written as nan.
std::string trajectory_csv(const Trajectory& traj);

/// Columns: t, then the flattened parameter entries in ascending layer
/// order (each layer row-major).
std::string path_grid_csv(const PathGrid& grid);

void write_text_file(const std::filesystem::path& path, const std::string& content);
std::string read_text_file(const std::filesystem::path& path);

/// Hex SHA-256 of a string (content hashes in the run manifest).
std::string sha256_hex(const std::string& data);

} // namespace dln
