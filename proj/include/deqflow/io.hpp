#pragma once

#include <string>

#include "deqflow/datagen.hpp"
#include "deqflow/dynamics.hpp"
#include "deqflow/trust_region.hpp"

namespace deqflow::io {

// All writers are deterministic: fixed float formatting (%.17g, value
// round-trips exactly), no timestamps, sorted JSON keys. Re-running a
// command with the same inputs must reproduce files byte for byte.

std::string format_double(double x);

/// Dataset CSV: 8 typed header lines
///   kind,<name> / n,... / m,... / m_y,... / noise_std,... /
///   gamma_teacher,... / seed,... / format_version,1
/// then one row per sample: m feature values followed by m_y targets.
void write_dataset_csv(const std::string& path, const Dataset& data, const GenSpec& spec);

struct DatasetFile {
    Dataset data;
    GenSpec spec;
};
DatasetFile read_dataset_csv(const std::string& path);

/// Model parameters as a JSON matrix file.
void write_params_json(const std::string& path, const ModelParams& params);
ModelParams read_params_json(const std::string& path);

/// Trajectory CSV, one row per record point:
///   step,time,loss,loss_gap,lambda_min,bound_indep,bound_dep,
///   grad_norm_A,grad_norm_B,norm_B_1
/// Sequences absent from the trajectory (shallow baselines) print as nan.
void write_trajectory_csv(const std::string& path, const Trajectory& traj);

/// JSON variant embedding the flow configuration for provenance.
void write_trajectory_json(const std::string& path, const Trajectory& traj,
                           const FlowConfig& cfg);

/// One JSON object per line, one line per certified step.
void write_certificates_jsonl(const std::string& path,
                              const std::vector<TrustRegionCertificate>& certs,
                              const std::vector<long>& step_indices);

} // namespace deqflow::io
