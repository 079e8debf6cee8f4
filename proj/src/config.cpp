#include "deqflow/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

#include "deqflow/errors.hpp"
#include "deqflow/io.hpp"
#include "deqflow/rng.hpp"

namespace deqflow {

using nlohmann::json;

namespace {

void reject_unknown_keys(const json& obj, const std::set<std::string>& allowed,
                         const std::string& context) {
    for (const auto& item : obj.items())
        if (!allowed.count(item.key()))
            throw ConfigError("unknown key '" + item.key() + "' in " + context);
}

double parse_radius(const json& j, const std::string& context) {
    if (j.is_string()) {
        if (j.get<std::string>() == "inf") return std::numeric_limits<double>::infinity();
        throw ConfigError(context + ": radius_R must be a positive number or \"inf\"");
    }
    const double r = j.get<double>();
    if (!(r > 0.0)) throw ConfigError(context + ": radius_R must be positive");
    return r;
}

Matrix parse_matrix(const json& j, const std::string& context) {
    if (!j.is_array() || j.empty()) throw ConfigError(context + ": expected a matrix (array of rows)");
    const Index rows = static_cast<Index>(j.size());
    const Index cols = static_cast<Index>(j.at(0).size());
    Matrix M(rows, cols);
    for (Index r = 0; r < rows; ++r) {
        const auto& row = j.at(static_cast<size_t>(r));
        if (static_cast<Index>(row.size()) != cols) throw ConfigError(context + ": ragged matrix");
        for (Index c = 0; c < cols; ++c) M(r, c) = row.at(static_cast<size_t>(c)).get<double>();
    }
    return M;
}

ModelConfig parse_model(const json& j) {
    reject_unknown_keys(j, {"m", "m_y", "gamma", "init_scheme", "seed", "A", "B"}, "model");
    ModelConfig cfg;
    cfg.m = j.at("m").get<long>();
    cfg.m_y = j.at("m_y").get<long>();
    cfg.gamma = j.at("gamma").get<double>();
    if (!(cfg.gamma > 0.0 && cfg.gamma < 1.0)) throw ConfigError("model: gamma must lie in (0, 1)");
    if (j.contains("init_scheme")) cfg.init_scheme = j.at("init_scheme").get<std::string>();
    if (cfg.init_scheme != "scaled_normal" && cfg.init_scheme != "identity" &&
        cfg.init_scheme != "custom")
        throw ConfigError("model: init_scheme must be scaled_normal, identity or custom");
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("A")) cfg.custom_A = parse_matrix(j.at("A"), "model.A");
    if (j.contains("B")) cfg.custom_B = parse_matrix(j.at("B"), "model.B");
    if (cfg.init_scheme == "custom" && (!cfg.custom_A || !cfg.custom_B))
        throw ConfigError("model: custom init requires A and B matrices");
    return cfg;
}

GenSpec parse_gen_spec(const json& j) {
    reject_unknown_keys(j, {"kind", "n", "m", "m_y", "noise_std", "gamma_teacher", "seed"},
                        "data");
    GenSpec spec;
    spec.kind = gen_kind_from_string(j.at("kind").get<std::string>());
    spec.n = j.at("n").get<long>();
    spec.m = j.at("m").get<long>();
    spec.m_y = j.contains("m_y") ? j.at("m_y").get<long>() : spec.m;
    if (j.contains("noise_std")) spec.noise_std = j.at("noise_std").get<double>();
    if (j.contains("gamma_teacher")) spec.gamma_teacher = j.at("gamma_teacher").get<double>();
    if (j.contains("seed")) spec.seed = j.at("seed").get<std::uint64_t>();
    spec.validate();
    return spec;
}

LossSpec parse_loss(const json& j, double& radius_R) {
    reject_unknown_keys(j, {"kind", "tau", "radius_R"}, "loss");
    LossSpec spec;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "square")
        spec.kind = LossKind::square;
    else if (kind == "logistic")
        spec.kind = LossKind::logistic;
    else
        throw ConfigError("loss: kind must be square or logistic");
    if (j.contains("tau")) spec.tau = j.at("tau").get<double>();
    if (j.contains("radius_R")) radius_R = parse_radius(j.at("radius_R"), "loss");
    spec.validate();
    return spec;
}

FlowConfig parse_flow(const json& j) {
    reject_unknown_keys(j, {"step_size", "steps", "record_every", "integrator", "stop_gap"},
                        "flow");
    FlowConfig cfg;
    cfg.step_size = j.at("step_size").get<double>();
    cfg.steps = j.at("steps").get<long>();
    if (j.contains("record_every")) cfg.record_every = j.at("record_every").get<long>();
    if (j.contains("integrator")) {
        const std::string name = j.at("integrator").get<std::string>();
        if (name == "euler")
            cfg.integrator = Integrator::euler;
        else if (name == "rk4")
            cfg.integrator = Integrator::rk4;
        else
            throw ConfigError("flow: integrator must be euler or rk4");
    }
    if (j.contains("stop_gap")) cfg.stop_gap = j.at("stop_gap").get<double>();
    return cfg;
}

} // namespace

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    reject_unknown_keys(j,
                        {"version", "model", "data", "loss", "flow", "output", "trust_region",
                         "gamma_list", "baseline"},
                        "config");
    RunConfig cfg;
    if (!j.contains("version")) throw ConfigError("config: missing version");
    cfg.version = j.at("version").get<int>();
    if (cfg.version != 1) throw ConfigError("config: unsupported version");

    if (j.contains("model")) cfg.model = parse_model(j.at("model"));
    if (j.contains("data")) {
        const json& d = j.at("data");
        if (d.contains("file")) {
            reject_unknown_keys(d, {"file"}, "data");
            cfg.data_file = d.at("file").get<std::string>();
        } else {
            cfg.data_gen = parse_gen_spec(d);
        }
    }
    if (j.contains("loss")) cfg.loss = parse_loss(j.at("loss"), cfg.radius_R);
    if (j.contains("flow")) {
        cfg.flow = parse_flow(j.at("flow"));
        cfg.flow->loss_spec = cfg.loss;
        cfg.flow->radius_R = cfg.radius_R;
    }
    if (j.contains("output")) {
        const json& o = j.at("output");
        reject_unknown_keys(o, {"directory", "format"}, "output");
        if (o.contains("directory")) cfg.output.directory = o.at("directory").get<std::string>();
        if (o.contains("format")) cfg.output.format = o.at("format").get<std::string>();
        if (cfg.output.format != "csv" && cfg.output.format != "json")
            throw ConfigError("output: format must be csv or json");
    }
    if (j.contains("trust_region")) {
        const json& t = j.at("trust_region");
        reject_unknown_keys(t, {"sample_steps", "n_probes", "delta_fraction", "floor", "delta"},
                            "trust_region");
        if (t.contains("sample_steps")) cfg.trust.sample_steps = t.at("sample_steps").get<long>();
        if (t.contains("n_probes")) cfg.trust.n_probes = t.at("n_probes").get<long>();
        if (t.contains("delta_fraction"))
            cfg.trust.delta_fraction = t.at("delta_fraction").get<double>();
        if (t.contains("floor")) cfg.trust.floor = t.at("floor").get<double>();
        if (t.contains("delta")) cfg.trust.delta_override = t.at("delta").get<double>();
        if (!(cfg.trust.delta_fraction > 0.0 && cfg.trust.delta_fraction <= 1.0))
            throw ConfigError("trust_region: delta_fraction must lie in (0, 1]");
    }
    if (j.contains("gamma_list")) {
        for (const auto& g : j.at("gamma_list")) {
            const double value = g.get<double>();
            if (!(value > 0.0 && value < 1.0))
                throw ConfigError("gamma_list entries must lie in (0, 1)");
            cfg.gamma_list.push_back(value);
        }
    }
    if (j.contains("baseline")) {
        const json& b = j.at("baseline");
        reject_unknown_keys(b, {"kind", "depth", "experimental"}, "baseline");
        if (b.contains("kind")) cfg.baseline.kind = b.at("kind").get<std::string>();
        if (b.contains("depth")) cfg.baseline.depth = b.at("depth").get<int>();
        if (b.contains("experimental")) cfg.baseline.experimental = b.at("experimental").get<bool>();
        if (cfg.baseline.kind != "none" && cfg.baseline.kind != "linear" &&
            cfg.baseline.kind != "resnet")
            throw ConfigError("baseline: kind must be none, linear or resnet");
        if (cfg.baseline.kind == "resnet" && !cfg.baseline.experimental)
            throw ConfigError("baseline: the resnet baseline is experimental; set experimental=true");
    }
    return cfg;
}

ModelParams build_init_params(const ModelConfig& cfg) {
    ModelParams params;
    params.gamma = cfg.gamma;
    if (cfg.init_scheme == "custom") {
        params.A = *cfg.custom_A;
        params.B = *cfg.custom_B;
    } else if (cfg.init_scheme == "identity") {
        params.A = Matrix::Identity(cfg.m, cfg.m);
        params.B = Matrix::Zero(cfg.m_y, cfg.m);
        params.B.diagonal().setOnes();
    } else { // scaled_normal: entries N(0, 1) / sqrt(m)
        const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.m));
        CounterRng rng_a(cfg.seed, rng_stream::init_a);
        params.A.resize(cfg.m, cfg.m);
        for (Index c = 0; c < cfg.m; ++c)
            for (Index r = 0; r < cfg.m; ++r) params.A(r, c) = scale * rng_a.next_gaussian();
        CounterRng rng_b(cfg.seed, rng_stream::init_b);
        params.B.resize(cfg.m_y, cfg.m);
        for (Index c = 0; c < cfg.m; ++c)
            for (Index r = 0; r < cfg.m_y; ++r) params.B(r, c) = scale * rng_b.next_gaussian();
    }
    params.validate();
    return params;
}

LoadedData load_or_generate_data(const RunConfig& cfg) {
    LoadedData out;
    if (cfg.data_file) {
        io::DatasetFile file = io::read_dataset_csv(*cfg.data_file);
        out.data = std::move(file.data);
        out.spec = file.spec;
    } else if (cfg.data_gen) {
        GeneratedData gen = generate(*cfg.data_gen);
        out.data = std::move(gen.data);
        out.spec = *cfg.data_gen;
        out.teacher = std::move(gen.teacher);
        out.redraws = gen.redraws;
    } else {
        throw ConfigError("config: missing data section");
    }
    if (cfg.loss.kind == LossKind::logistic) {
        out.data.kind = DataKind::binary_labels;
        out.data.validate(); // rejects non-binary targets early
    }
    return out;
}

} // namespace deqflow
