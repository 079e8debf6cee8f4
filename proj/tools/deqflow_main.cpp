// deqflow: drive equilibrium-model experiments from JSON configs and write
// CSV/JSON artifacts. Exit codes: 0 success, 1 check failure, 2 configuration
// error, 3 numerical divergence.

#include <CLI11.hpp>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>
#include <vector>

#include <json.hpp>

#include "deqflow/config.hpp"
#include "deqflow/datagen.hpp"
#include "deqflow/dynamics.hpp"
#include "deqflow/equilibrium.hpp"
#include "deqflow/gradients.hpp"
#include "deqflow/io.hpp"
#include "deqflow/linalg.hpp"
#include "deqflow/losses.hpp"
#include "deqflow/rng.hpp"
#include "deqflow/trust_region.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace deqflow;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;

struct CommonOpts {
    std::string config_path;
    std::string out_dir; // overrides output.directory when set
    long trials = 1;
    bool seed_set = false;
    std::uint64_t seed = 0;
};

std::string effective_out_dir(const RunConfig& cfg, const CommonOpts& opts) {
    return opts.out_dir.empty() ? cfg.output.directory : opts.out_dir;
}

unsigned max_parallel_trials() {
    if (const char* env = std::getenv("DEQFLOW_THREADS")) {
        const long v = std::atol(env);
        if (v >= 1) return static_cast<unsigned>(v);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

void require(bool ok, const std::string& message) {
    if (!ok) throw ConfigError(message);
}

// ---------------------------------------------------------------- gen-data

int cmd_gen_data(const CommonOpts& opts) {
    RunConfig cfg = load_run_config(opts.config_path);
    require(cfg.data_gen.has_value(), "gen-data: config needs a generator data section");
    GenSpec spec = *cfg.data_gen;
    if (opts.seed_set) spec.seed = opts.seed;

    const GeneratedData gen = generate(spec);
    const fs::path dir = effective_out_dir(cfg, opts);
    fs::create_directories(dir);
    io::write_dataset_csv((dir / "dataset.csv").string(), gen.data, spec);
    if (gen.teacher) io::write_params_json((dir / "teacher.json").string(), *gen.teacher);

    std::cout << "gen-data kind=" << to_string(spec.kind) << " n=" << gen.data.n()
              << " m=" << gen.data.feature_dim() << " rank=" << numerical_rank(gen.data.Phi)
              << " sigma_min=" << io::format_double(smallest_singular_value(gen.data.Phi))
              << "\n";
    return kExitOk;
}

// -------------------------------------------------------------------- flow

json data_summary(const LoadedData& loaded) {
    json j;
    j["kind"] = to_string(loaded.spec.kind);
    j["n"] = loaded.data.n();
    j["m"] = loaded.data.feature_dim();
    j["m_y"] = loaded.data.target_dim();
    j["rank"] = numerical_rank(loaded.data.Phi);
    j["sigma_min"] = smallest_singular_value(loaded.data.Phi);
    return j;
}

int run_one_flow(const RunConfig& cfg, const LoadedData& loaded, std::uint64_t model_seed,
                 const fs::path& dir) {
    ModelConfig model_cfg = *cfg.model;
    model_cfg.seed = model_seed;
    const ModelParams init = build_init_params(model_cfg);
    require(init.m() == loaded.data.feature_dim(), "flow: model m does not match the data");
    require(init.output_dim() == loaded.data.target_dim(),
            "flow: model m_y does not match the data");

    fs::create_directories(dir);
    json summary;
    summary["data"] = data_summary(loaded);
    summary["model"] = {{"m", model_cfg.m},
                        {"m_y", model_cfg.m_y},
                        {"gamma", model_cfg.gamma},
                        {"init_scheme", model_cfg.init_scheme},
                        {"seed", model_seed}};
    int status = kExitOk;
    try {
        const Trajectory traj = flow_integrate(init, loaded.data, *cfg.flow);
        io::write_trajectory_csv((dir / "trajectory.csv").string(), traj);
        if (cfg.output.format == "json")
            io::write_trajectory_json((dir / "trajectory.json").string(), traj, *cfg.flow);
        summary["final_loss_gap"] = traj.final_loss_gap();
        summary["final_loss"] = traj.losses.back();
        summary["loss_floor"] = traj.loss_floor;
        summary["kappa"] = traj.kappa;
        summary["kappa_zero"] = traj.kappa == 0.0;
        summary["lambda_lower"] = traj.lambda_lower;
        summary["lambda_running_min"] =
            *std::min_element(traj.lambda_min_seq.begin(), traj.lambda_min_seq.end());
        summary["steps_run"] = traj.steps.back();
        summary["b_norm_violated"] = traj.b_norm_violated;
        summary["b_norm_violation_step"] = traj.b_norm_violation_step;
        summary["loss_monotone"] = traj.loss_monotone;
        summary["diverged"] = false;
    } catch (const Divergence& e) {
        summary["diverged"] = true;
        summary["divergence_step"] = e.step;
        status = kExitDivergence;
    }

    if (cfg.baseline.kind == "linear") {
        // shallow flow started at the function represented by the deep init
        const Matrix W0 = init.B * resolvent(init);
        const Trajectory base = baseline_linear_flow(W0, loaded.data, *cfg.flow);
        io::write_trajectory_csv((dir / "baseline_linear.csv").string(), base);
    } else if (cfg.baseline.kind == "resnet") {
        const Trajectory base =
            resnet_linear_flow(cfg.baseline.depth, loaded.data, *cfg.flow,
                               model_cfg.init_scheme == "identity", model_seed);
        io::write_trajectory_csv((dir / "baseline_resnet.csv").string(), base);
    }

    std::ofstream out(dir / "summary.json", std::ios::binary);
    out << summary.dump(2) << "\n";
    return status;
}

int cmd_flow(const CommonOpts& opts) {
    const RunConfig cfg = load_run_config(opts.config_path);
    require(cfg.model.has_value(), "flow: config needs a model section");
    require(cfg.flow.has_value(), "flow: config needs a flow section");
    const LoadedData loaded = load_or_generate_data(cfg);
    const fs::path dir = effective_out_dir(cfg, opts);
    const std::uint64_t base_seed = opts.seed_set ? opts.seed : cfg.model->seed;

    if (opts.trials <= 1) return run_one_flow(cfg, loaded, base_seed, dir);

    std::vector<int> statuses(static_cast<size_t>(opts.trials), kExitOk);
    std::vector<std::string> errors(static_cast<size_t>(opts.trials));
    std::atomic<long> next{0};
    const unsigned workers =
        std::min<unsigned>(max_parallel_trials(), static_cast<unsigned>(opts.trials));
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (long t = next.fetch_add(1); t < opts.trials; t = next.fetch_add(1)) {
                char name[32];
                std::snprintf(name, sizeof(name), "trial_%03ld", t);
                try {
                    statuses[static_cast<size_t>(t)] = run_one_flow(
                        cfg, loaded, base_seed + static_cast<std::uint64_t>(t), dir / name);
                } catch (const std::exception& e) {
                    statuses[static_cast<size_t>(t)] = kExitConfig;
                    errors[static_cast<size_t>(t)] = e.what();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    int status = kExitOk;
    for (size_t t = 0; t < statuses.size(); ++t) {
        if (!errors[t].empty()) std::cerr << "trial " << t << ": " << errors[t] << "\n";
        status = std::max(status, statuses[t]);
    }
    return status;
}

// --------------------------------------------------------------- gradcheck

int cmd_gradcheck(std::uint64_t seed, const std::vector<long>& sizes,
                  const std::vector<long>& outputs, bool inject_fault) {
    bool all_passed = true;
    std::printf("%4s %4s %-8s %12s %12s %6s\n", "m", "m_y", "loss", "max_rel_A", "max_rel_B",
                "pass");
    for (long m : sizes) {
        for (long m_y : outputs) {
            for (const bool logistic : {false, true}) {
                const long rows = logistic ? 1 : m_y;
                const LossSpec spec{logistic ? LossKind::logistic : LossKind::square,
                                    logistic ? 0.1 : 0.0};
                ModelParams params;
                params.gamma = 0.8;
                CounterRng rng_a(seed, rng_stream::init_a);
                CounterRng rng_b(seed, rng_stream::init_b);
                params.A.resize(m, m);
                for (Index c = 0; c < m; ++c)
                    for (Index r = 0; r < m; ++r) params.A(r, c) = rng_a.next_gaussian();
                params.B.resize(rows, m);
                for (Index c = 0; c < m; ++c)
                    for (Index r = 0; r < rows; ++r) params.B(r, c) = rng_b.next_gaussian();

                Dataset data;
                CounterRng rng_phi(seed, rng_stream::features);
                data.Phi.resize(m, 12);
                for (Index c = 0; c < 12; ++c)
                    for (Index r = 0; r < m; ++r) data.Phi(r, c) = rng_phi.next_gaussian();
                CounterRng rng_y(seed, rng_stream::noise);
                if (logistic) {
                    data.kind = DataKind::binary_labels;
                    data.Y.resize(1, 12);
                    for (Index c = 0; c < 12; ++c)
                        data.Y(0, c) = rng_y.next_uniform() < 0.5 ? 0.0 : 1.0;
                } else {
                    data.Y.resize(rows, 12);
                    for (Index c = 0; c < 12; ++c)
                        for (Index r = 0; r < rows; ++r) data.Y(r, c) = rng_y.next_gaussian();
                }

                GradCheckReport report;
                if (inject_fault) {
                    // test hook: compare a corrupted analytic gradient
                    const auto fd = grad_finite_diff(params, data, spec, kGradCheckStep);
                    auto analytic = grad_closed_form(params, data, spec);
                    analytic.grad_A(0, 0) += 1e-2;
                    report.fd_step = kGradCheckStep;
                    for (Index r = 0; r < m; ++r)
                        for (Index c = 0; c < m; ++c) {
                            const double denom = std::max({std::abs(analytic.grad_A(r, c)),
                                                           std::abs(fd.grad_A(r, c)), 1e-8});
                            report.max_rel_error_A =
                                std::max(report.max_rel_error_A,
                                         std::abs(analytic.grad_A(r, c) - fd.grad_A(r, c)) / denom);
                        }
                    report.passed = report.max_rel_error_A <= kGradCheckTol;
                } else {
                    report = gradcheck(params, data, spec);
                }
                all_passed = all_passed && report.passed;
                std::printf("%4ld %4ld %-8s %12.3e %12.3e %6s\n", m, rows,
                            logistic ? "logistic" : "square", report.max_rel_error_A,
                            report.max_rel_error_B, report.passed ? "yes" : "NO");
            }
        }
    }
    return all_passed ? kExitOk : kExitCheckFailed;
}

// ------------------------------------------------------------ trust-region

int cmd_trust_region(const CommonOpts& opts) {
    const RunConfig cfg = load_run_config(opts.config_path);
    require(cfg.model.has_value(), "trust-region: config needs a model section");
    require(cfg.flow.has_value(), "trust-region: config needs a flow section");
    if (cfg.model->m_y != 1)
        throw UnsupportedConfig("trust-region: requires a single output row (m_y = 1)");
    const LoadedData loaded = load_or_generate_data(cfg);
    ModelConfig model_cfg = *cfg.model;
    if (opts.seed_set) model_cfg.seed = opts.seed;
    ModelParams params = build_init_params(model_cfg);

    const long segments = std::max<long>(1, cfg.trust.sample_steps);
    const long steps_per_segment = std::max<long>(1, cfg.flow->steps / segments);
    FlowConfig segment_cfg = *cfg.flow;
    segment_cfg.steps = steps_per_segment;
    segment_cfg.record_every = steps_per_segment;

    std::vector<TrustRegionCertificate> certs;
    std::vector<long> cert_steps;
    bool all_ok = true;
    for (long s = 0; s < segments; ++s) {
        const Trajectory segment = flow_integrate(params, loaded.data, segment_cfg);
        params = segment.final_params;
        const double bar = delta_bar_search(params, loaded.data, cfg.loss, cfg.trust.floor);
        const double delta = cfg.trust.delta_override > 0.0 ? cfg.trust.delta_override
                                                            : cfg.trust.delta_fraction * bar;
        const TrustRegionCertificate cert = certify_theorem2(
            params, loaded.data, cfg.loss, delta, cfg.trust.n_probes, model_cfg.seed + s);
        certs.push_back(cert);
        cert_steps.push_back((s + 1) * steps_per_segment);
        const bool ok = cert.kkt_residual <= 1e-8 * cert.kkt_scale &&
                        cert.constraint_gap <= 1e-10 * cert.constraint_scale &&
                        cert.g_lambda_min > 0.0 && cert.quad_model_gap >= -1e-9;
        all_ok = all_ok && ok;
        std::cout << "step " << cert_steps.back() << " delta_bar=" << cert.delta_bar
                  << " kkt=" << cert.kkt_residual << " gap=" << cert.quad_model_gap
                  << (ok ? " ok" : " FAIL") << "\n";
    }
    const fs::path dir = effective_out_dir(cfg, opts);
    fs::create_directories(dir);
    io::write_certificates_jsonl((dir / "certificates.jsonl").string(), certs, cert_steps);
    return all_ok ? kExitOk : kExitCheckFailed;
}

// ----------------------------------------------------------- implicit-bias

int cmd_implicit_bias(const CommonOpts& opts, const std::string& synthetic_r) {
    const RunConfig cfg = load_run_config(opts.config_path);
    require(cfg.model.has_value(), "implicit-bias: config needs a model section");
    require(!cfg.gamma_list.empty(), "implicit-bias: config needs a gamma_list");
    if (cfg.model->m_y != 1)
        throw UnsupportedConfig("implicit-bias: requires a single output row (m_y = 1)");
    const LoadedData loaded = load_or_generate_data(cfg);
    ModelConfig model_cfg = *cfg.model;
    if (opts.seed_set) model_cfg.seed = opts.seed;
    const ModelParams params = build_init_params(model_cfg);

    // The error vector is computed once at the reference gamma; the sweep
    // then measures how the resolvent splits the same vector as gamma grows.
    Vector r;
    if (synthetic_r == "aligned") {
        r = Vector::Ones(params.m());
    } else if (synthetic_r == "perp") {
        CounterRng rng(model_cfg.seed, rng_stream::probes);
        r.resize(params.m());
        for (Index i = 0; i < r.size(); ++i) r(i) = rng.next_gaussian();
        r.array() -= r.mean();
    } else {
        const double bar = delta_bar_search(params, loaded.data, cfg.loss, cfg.trust.floor);
        r = implicit_bias_error_vector(params, loaded.data, cfg.loss,
                                       cfg.trust.delta_fraction * bar);
    }

    const fs::path dir = effective_out_dir(cfg, opts);
    fs::create_directories(dir);
    std::ofstream out(dir / "bias_sweep.csv", std::ios::binary);
    out << "gamma,aligned_norm,residual_norm\n";
    for (double gamma : cfg.gamma_list) {
        ModelParams swept = params;
        swept.gamma = gamma;
        const BiasDecomposition decomp = decompose_error_vector(swept, r);
        out << io::format_double(gamma) << "," << io::format_double(decomp.aligned_norm) << ","
            << io::format_double(decomp.residual_norm) << "\n";
    }
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"equilibrium-model training dynamics toolkit"};
    app.require_subcommand(1);

    CommonOpts opts;
    std::vector<long> sizes{3, 5, 10};
    std::vector<long> outputs{1, 3};
    bool inject_fault = false;
    std::string synthetic_r;

    auto add_common = [&](CLI::App* cmd, bool needs_config) {
        auto* copt = cmd->add_option("--config", opts.config_path, "JSON run configuration");
        if (needs_config) copt->required();
        cmd->add_option("--out", opts.out_dir, "output directory (overrides config)");
        cmd->add_option("--seed", opts.seed, "seed override")->each([&](const std::string&) {
            opts.seed_set = true;
        });
    };

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    add_common(gen, true);

    auto* flow = app.add_subcommand("flow", "integrate the gradient flow");
    add_common(flow, true);
    flow->add_option("--trials", opts.trials, "independent seeded runs");

    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient validation");
    gc->add_option("--seed", opts.seed, "base seed")->each([&](const std::string&) {
        opts.seed_set = true;
    });
    gc->add_option("--sizes", sizes, "hidden sizes to check")->delimiter(',');
    gc->add_option("--outputs", outputs, "output dimensions to check")->delimiter(',');
    gc->add_flag("--inject-fault", inject_fault, "corrupt one gradient entry (test hook)");

    auto* tr = app.add_subcommand("trust-region", "certify the trust-region equivalence");
    add_common(tr, true);

    auto* bias = app.add_subcommand("implicit-bias", "Perron-direction decomposition sweep");
    add_common(bias, true);
    bias->add_option("--synthetic-r", synthetic_r,
                     "replace the error vector (test hook): aligned | perp");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(opts);
        if (flow->parsed()) return cmd_flow(opts);
        if (gc->parsed())
            return cmd_gradcheck(opts.seed_set ? opts.seed : 0, sizes, outputs, inject_fault);
        if (tr->parsed()) return cmd_trust_region(opts);
        if (bias->parsed()) return cmd_implicit_bias(opts, synthetic_r);
    } catch (const Divergence& e) {
        std::cerr << "divergence: " << e.what() << " at step " << e.step << "\n";
        return kExitDivergence;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::invalid_argument& e) { // unsupported / precondition / invalid input
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitCheckFailed;
    }
    return kExitConfig;
}
