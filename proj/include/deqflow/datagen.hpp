#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "deqflow/types.hpp"

namespace deqflow {

// Deterministic synthetic dataset generators. All draws come from per-matrix
// counter-RNG streams, so the same spec always produces the same bytes and
// changing n leaves teacher matrices untouched.

enum class GenKind { gaussian_negation, uniform_negation, teacher_delm };

struct GenSpec {
    GenKind kind = GenKind::gaussian_negation;
    long n = 1000;
    long m = 10;
    long m_y = 10;
    double noise_std = 0.1;
    double gamma_teacher = 0.8;
    std::uint64_t seed = 0;

    void validate() const;
};

struct GeneratedData {
    Dataset data;
    std::optional<ModelParams> teacher; // teacher_delm only
    int redraws = 0;                    // feature redraws forced by rank deficiency
};

/// x_i ~ N(0, I_m), y_i = -x_i + noise_std * noise. Forces m_y = m.
GeneratedData gen_gaussian_negation(const GenSpec& spec);

/// Entries of x_i uniform on [-1, 1]; otherwise as gaussian_negation.
GeneratedData gen_uniform_negation(const GenSpec& spec);

/// Teacher equilibrium model with standard-normal A*, B*;
/// y_i = B* U*^{-1} x_i + noise_std * noise, x_i ~ N(0, I_m).
GeneratedData gen_teacher_delm(const GenSpec& spec);

/// Dispatch on spec.kind. Asserts rank(Phi) = min(n, m) and redraws the
/// features from a shifted stream on failure (logged to stderr).
GeneratedData generate(const GenSpec& spec);

const char* to_string(GenKind kind);
GenKind gen_kind_from_string(const std::string& s);

} // namespace deqflow
