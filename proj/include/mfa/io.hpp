#pragma once

#include <string>

#include "mfa/core.hpp"
#include "mfa/ot_hjb.hpp"

namespace mfa {

// 17-significant-digit formatting; doubles survive the round trip exactly.
std::string format_double(double v);

// Trajectory table with header t,path_id,weight,x0..x{d-1},v0..v{d-1}; one
// row per (time node, path), velocities by forward difference with the last
// node reusing the final interval. Import rebuilds the ensemble from the
// position columns and checks the time grid is uniform and complete.
std::string ensemble_to_csv(const PathEnsemble& ensemble);
PathEnsemble ensemble_from_csv(const std::string& text);

// Eulerian field table with header t,x,rho,V; one row per (time node, cell).
std::string field_to_csv(const EulerianField1D& field);
EulerianField1D field_from_csv(const std::string& text);

std::string read_file(const std::string& path);

// Write-then-rename in the target directory, so readers never observe a
// partially written artifact.
void write_file_atomic(const std::string& path, const std::string& content);

}  // namespace mfa
