#include "deqflow/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "deqflow/errors.hpp"

namespace deqflow::io {

using nlohmann::json;

std::string format_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

namespace {

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot open for writing: " + path);
    return out;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open for reading: " + path);
    return in;
}

json matrix_to_json(const Matrix& M) {
    json rows = json::array();
    for (Index r = 0; r < M.rows(); ++r) {
        json row = json::array();
        for (Index c = 0; c < M.cols(); ++c) row.push_back(M(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

Matrix matrix_from_json(const json& j) {
    if (!j.is_array() || j.empty()) throw ConfigError("matrix JSON must be a non-empty array");
    const Index rows = static_cast<Index>(j.size());
    const Index cols = static_cast<Index>(j.at(0).size());
    Matrix M(rows, cols);
    for (Index r = 0; r < rows; ++r) {
        const auto& row = j.at(static_cast<size_t>(r));
        if (static_cast<Index>(row.size()) != cols) throw ConfigError("ragged matrix JSON");
        for (Index c = 0; c < cols; ++c) M(r, c) = row.at(static_cast<size_t>(c)).get<double>();
    }
    return M;
}

} // namespace

void write_dataset_csv(const std::string& path, const Dataset& data, const GenSpec& spec) {
    auto out = open_out(path);
    out << "kind," << to_string(spec.kind) << "\n";
    out << "n," << data.n() << "\n";
    out << "m," << data.feature_dim() << "\n";
    out << "m_y," << data.target_dim() << "\n";
    out << "noise_std," << format_double(spec.noise_std) << "\n";
    out << "gamma_teacher," << format_double(spec.gamma_teacher) << "\n";
    out << "seed," << spec.seed << "\n";
    out << "format_version,1\n";
    for (Index i = 0; i < data.n(); ++i) {
        for (Index r = 0; r < data.feature_dim(); ++r) {
            if (r) out << ",";
            out << format_double(data.Phi(r, i));
        }
        for (Index r = 0; r < data.target_dim(); ++r) out << "," << format_double(data.Y(r, i));
        out << "\n";
    }
}

DatasetFile read_dataset_csv(const std::string& path) {
    auto in = open_in(path);
    DatasetFile file;
    std::string line;
    long n = -1, m = -1, m_y = -1, version = -1;
    const auto next_field = [&](const std::string& key) {
        if (!std::getline(in, line)) throw ConfigError("dataset CSV: truncated header");
        const auto comma = line.find(',');
        if (comma == std::string::npos || line.substr(0, comma) != key)
            throw ConfigError("dataset CSV: expected header line '" + key + "'");
        return line.substr(comma + 1);
    };
    file.spec.kind = gen_kind_from_string(next_field("kind"));
    n = std::stol(next_field("n"));
    m = std::stol(next_field("m"));
    m_y = std::stol(next_field("m_y"));
    file.spec.noise_std = std::stod(next_field("noise_std"));
    file.spec.gamma_teacher = std::stod(next_field("gamma_teacher"));
    file.spec.seed = std::stoull(next_field("seed"));
    version = std::stol(next_field("format_version"));
    if (version != 1) throw ConfigError("dataset CSV: unsupported format version");
    file.spec.n = n;
    file.spec.m = m;
    file.spec.m_y = m_y;

    file.data.Phi.resize(m, n);
    file.data.Y.resize(m_y, n);
    for (long i = 0; i < n; ++i) {
        if (!std::getline(in, line)) throw ConfigError("dataset CSV: missing data rows");
        std::stringstream ss(line);
        std::string cell;
        for (long r = 0; r < m + m_y; ++r) {
            if (!std::getline(ss, cell, ',')) throw ConfigError("dataset CSV: short row");
            const double value = std::stod(cell);
            if (r < m)
                file.data.Phi(r, i) = value;
            else
                file.data.Y(r - m, i) = value;
        }
    }
    file.data.kind = DataKind::regression;
    return file;
}

void write_params_json(const std::string& path, const ModelParams& params) {
    json j;
    j["m"] = params.m();
    j["m_y"] = params.output_dim();
    j["gamma"] = params.gamma;
    j["A"] = matrix_to_json(params.A);
    j["B"] = matrix_to_json(params.B);
    auto out = open_out(path);
    out << j.dump(2) << "\n";
}

ModelParams read_params_json(const std::string& path) {
    auto in = open_in(path);
    json j;
    in >> j;
    ModelParams params;
    params.gamma = j.at("gamma").get<double>();
    params.A = matrix_from_json(j.at("A"));
    params.B = matrix_from_json(j.at("B"));
    params.validate();
    return params;
}

namespace {

double seq_at(const std::vector<double>& seq, size_t i) {
    return i < seq.size() ? seq[i] : std::numeric_limits<double>::quiet_NaN();
}

} // namespace

void write_trajectory_csv(const std::string& path, const Trajectory& traj) {
    auto out = open_out(path);
    out << "step,time,loss,loss_gap,lambda_min,bound_indep,bound_dep,"
           "grad_norm_A,grad_norm_B,norm_B_1\n";
    for (size_t i = 0; i < traj.times.size(); ++i) {
        out << traj.steps[i] << "," << format_double(traj.times[i]) << ","
            << format_double(traj.losses[i]) << ","
            << format_double(traj.losses[i] - traj.loss_floor) << ","
            << format_double(seq_at(traj.lambda_min_seq, i)) << ","
            << format_double(seq_at(traj.bound_indep, i)) << ","
            << format_double(seq_at(traj.bound_dep, i)) << ","
            << format_double(seq_at(traj.grad_norm_A, i)) << ","
            << format_double(seq_at(traj.grad_norm_B, i)) << ","
            << format_double(seq_at(traj.norm_B_1, i)) << "\n";
    }
}

namespace {

json flow_config_to_json(const FlowConfig& cfg) {
    json j;
    j["step_size"] = cfg.step_size;
    j["steps"] = cfg.steps;
    j["record_every"] = cfg.record_every;
    j["integrator"] = cfg.integrator == Integrator::euler ? "euler" : "rk4";
    j["loss"] = cfg.loss_spec.kind == LossKind::square ? "square" : "logistic";
    j["tau"] = cfg.loss_spec.tau;
    j["radius_R"] = std::isfinite(cfg.radius_R) ? json(cfg.radius_R) : json("inf");
    j["stop_gap"] = cfg.stop_gap;
    return j;
}

} // namespace

void write_trajectory_json(const std::string& path, const Trajectory& traj,
                           const FlowConfig& cfg) {
    json j;
    j["flow_config"] = flow_config_to_json(cfg);
    j["loss_floor"] = traj.loss_floor;
    j["kappa"] = traj.kappa;
    j["lambda_lower"] = traj.lambda_lower;
    j["b_norm_violated"] = traj.b_norm_violated;
    j["b_norm_violation_step"] = traj.b_norm_violation_step;
    j["loss_monotone"] = traj.loss_monotone;
    j["final_loss_gap"] = traj.final_loss_gap();
    j["lambda_running_min"] =
        traj.lambda_min_seq.empty()
            ? json()
            : json(*std::min_element(traj.lambda_min_seq.begin(), traj.lambda_min_seq.end()));
    j["records"] = {
        {"step", traj.steps},          {"time", traj.times},
        {"loss", traj.losses},         {"lambda_min", traj.lambda_min_seq},
        {"bound_indep", traj.bound_indep}, {"bound_dep", traj.bound_dep},
        {"grad_norm_A", traj.grad_norm_A}, {"grad_norm_B", traj.grad_norm_B},
        {"norm_B_1", traj.norm_B_1},
    };
    auto out = open_out(path);
    out << j.dump(2) << "\n";
}

void write_certificates_jsonl(const std::string& path,
                              const std::vector<TrustRegionCertificate>& certs,
                              const std::vector<long>& step_indices) {
    if (certs.size() != step_indices.size())
        throw InvalidInput("write_certificates_jsonl: size mismatch");
    auto out = open_out(path);
    for (size_t i = 0; i < certs.size(); ++i) {
        const auto& c = certs[i];
        json j;
        j["step"] = step_indices[i];
        j["delta_bar"] = c.delta_bar;
        j["delta_used"] = c.delta_used;
        j["kkt_residual"] = c.kkt_residual;
        j["kkt_scale"] = c.kkt_scale;
        j["constraint_gap"] = c.constraint_gap;
        j["constraint_scale"] = c.constraint_scale;
        j["g_lambda_min"] = c.g_lambda_min;
        j["quad_model_gap"] = c.quad_model_gap;
        j["n_probes"] = c.n_probes;
        out << j.dump() << "\n";
    }
}

} // namespace deqflow::io
