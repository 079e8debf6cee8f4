#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "deqflow/datagen.hpp"
#include "deqflow/dynamics.hpp"
#include "deqflow/types.hpp"

namespace deqflow {

// JSON run configuration shared by the CLI subcommands. Parsing is strict:
// a versioned top level and no unknown keys anywhere.

struct ModelConfig {
    long m = 10;
    long m_y = 10;
    double gamma = 0.8;
    std::string init_scheme = "scaled_normal"; // scaled_normal | identity | custom
    std::uint64_t seed = 0;
    std::optional<Matrix> custom_A;
    std::optional<Matrix> custom_B;
};

struct OutputConfig {
    std::string directory = ".";
    std::string format = "csv"; // csv | json (trajectory main artifact)
};

struct TrustRegionRunConfig {
    long sample_steps = 20;   // number of flow steps to certify (evenly spaced)
    long n_probes = 500;
    double delta_fraction = 0.5; // certify at delta = fraction * delta_bar
    double floor = 1e-10;
    double delta_override = 0.0; // absolute delta; 0 keeps the fraction rule
};

struct BaselineConfig {
    std::string kind = "none"; // none | linear | resnet
    int depth = 8;             // resnet only
    bool experimental = false; // must be set to run the resnet baseline
};

struct RunConfig {
    int version = 1;
    std::optional<ModelConfig> model;
    std::optional<GenSpec> data_gen;
    std::optional<std::string> data_file;
    LossSpec loss;
    double radius_R = std::numeric_limits<double>::infinity();
    std::optional<FlowConfig> flow; // loss_spec/radius_R already folded in
    OutputConfig output;
    TrustRegionRunConfig trust;
    std::vector<double> gamma_list;
    BaselineConfig baseline;
};

/// Parse and validate a config file. Throws ConfigError on syntax errors,
/// unknown keys, or missing required values.
RunConfig load_run_config(const std::string& path);

/// Materialise initial model parameters per the configured scheme.
ModelParams build_init_params(const ModelConfig& cfg);

struct LoadedData {
    Dataset data;
    GenSpec spec;                       // echo of the generator (or file header)
    std::optional<ModelParams> teacher; // teacher_delm only
    int redraws = 0;
};

/// Generate from the data section or read the referenced CSV.
LoadedData load_or_generate_data(const RunConfig& cfg);

} // namespace deqflow
