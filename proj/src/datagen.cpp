#include "deqflow/datagen.hpp"

#include <iostream>

#include "deqflow/equilibrium.hpp"
#include "deqflow/errors.hpp"
#include "deqflow/linalg.hpp"
#include "deqflow/rng.hpp"

namespace deqflow {

void GenSpec::validate() const {
    if (n < 0 || m <= 0 || m_y <= 0) throw InvalidInput("GenSpec: bad dimensions");
    if (noise_std < 0.0) throw InvalidInput("GenSpec: noise_std must be >= 0");
    if (kind == GenKind::teacher_delm && !(gamma_teacher > 0.0 && gamma_teacher < 1.0))
        throw InvalidInput("GenSpec: gamma_teacher must lie in (0, 1)");
    if (kind != GenKind::teacher_delm && m_y != m)
        throw InvalidInput("GenSpec: negation kinds require m_y = m");
}

namespace {

// Column-major fill order is part of the byte-level reproducibility contract.
Matrix draw_gaussian(Index rows, Index cols, CounterRng& rng) {
    Matrix M(rows, cols);
    for (Index c = 0; c < cols; ++c)
        for (Index r = 0; r < rows; ++r) M(r, c) = rng.next_gaussian();
    return M;
}

Matrix draw_uniform(Index rows, Index cols, double lo, double hi, CounterRng& rng) {
    Matrix M(rows, cols);
    for (Index c = 0; c < cols; ++c)
        for (Index r = 0; r < rows; ++r) M(r, c) = rng.next_uniform(lo, hi);
    return M;
}

/// Draw features, re-drawing from shifted streams while rank(Phi) < min(n, m).
Matrix draw_features_full_rank(const GenSpec& spec, bool gaussian, int& redraws) {
    for (int attempt = 0;; ++attempt) {
        const std::uint64_t stream =
            attempt == 0 ? rng_stream::features
                         : rng_stream::redraw_base + static_cast<std::uint64_t>(attempt);
        CounterRng rng(spec.seed, stream);
        Matrix Phi = gaussian ? draw_gaussian(spec.m, spec.n, rng)
                              : draw_uniform(spec.m, spec.n, -1.0, 1.0, rng);
        if (numerical_rank(Phi) == std::min<Index>(spec.m, spec.n)) {
            redraws = attempt;
            return Phi;
        }
        std::cerr << "datagen: rank-deficient feature draw (attempt " << attempt
                  << "), re-drawing\n";
        if (attempt > 32) throw NonConvergence("datagen: could not draw full-rank features", 0.0, attempt);
    }
}

GeneratedData gen_negation(const GenSpec& spec, bool gaussian) {
    spec.validate();
    GeneratedData out;
    out.data.Phi = draw_features_full_rank(spec, gaussian, out.redraws);
    CounterRng noise(spec.seed, rng_stream::noise);
    out.data.Y = -out.data.Phi + spec.noise_std * draw_gaussian(spec.m_y, spec.n, noise);
    out.data.kind = DataKind::regression;
    return out;
}

} // namespace

GeneratedData gen_gaussian_negation(const GenSpec& spec) {
    if (spec.kind != GenKind::gaussian_negation) throw InvalidInput("gen_gaussian_negation: kind mismatch");
    return gen_negation(spec, true);
}

GeneratedData gen_uniform_negation(const GenSpec& spec) {
    if (spec.kind != GenKind::uniform_negation) throw InvalidInput("gen_uniform_negation: kind mismatch");
    return gen_negation(spec, false);
}

GeneratedData gen_teacher_delm(const GenSpec& spec) {
    if (spec.kind != GenKind::teacher_delm) throw InvalidInput("gen_teacher_delm: kind mismatch");
    spec.validate();
    GeneratedData out;
    out.data.Phi = draw_features_full_rank(spec, true, out.redraws);

    ModelParams teacher;
    {
        CounterRng rng_a(spec.seed, rng_stream::teacher_a);
        teacher.A = draw_gaussian(spec.m, spec.m, rng_a);
        CounterRng rng_b(spec.seed, rng_stream::teacher_b);
        teacher.B = draw_gaussian(spec.m_y, spec.m, rng_b);
        teacher.gamma = spec.gamma_teacher;
    }
    CounterRng noise(spec.seed, rng_stream::noise);
    out.data.Y = forward(teacher, out.data.Phi) + spec.noise_std * draw_gaussian(spec.m_y, spec.n, noise);
    out.data.kind = DataKind::regression;
    out.teacher = std::move(teacher);
    return out;
}

GeneratedData generate(const GenSpec& spec) {
    switch (spec.kind) {
        case GenKind::gaussian_negation: return gen_gaussian_negation(spec);
        case GenKind::uniform_negation: return gen_uniform_negation(spec);
        case GenKind::teacher_delm: return gen_teacher_delm(spec);
    }
    throw InvalidInput("generate: unknown kind");
}

const char* to_string(GenKind kind) {
    switch (kind) {
        case GenKind::gaussian_negation: return "gaussian_negation";
        case GenKind::uniform_negation: return "uniform_negation";
        case GenKind::teacher_delm: return "teacher_delm";
    }
    return "?";
}

GenKind gen_kind_from_string(const std::string& s) {
    if (s == "gaussian_negation") return GenKind::gaussian_negation;
    if (s == "uniform_negation") return GenKind::uniform_negation;
    if (s == "teacher_delm") return GenKind::teacher_delm;
    throw InvalidInput("unknown generator kind: " + s);
}

} // namespace deqflow
