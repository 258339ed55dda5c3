#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "crhmm/data.hpp"
#include "crhmm/model.hpp"

namespace crhmm {

/// Data reorganized for fast repeated likelihood evaluation. Covariate
/// profiles are resolved once per person-year, and the distinct
/// (profile, category) pairs appearing in the data are indexed so emission
/// probabilities can be tabulated once per parameter vector instead of once
/// per person-year.
struct PreparedData {
    int T = 0;
    int S = 0;
    int K = 0;
    int P = 0; // covariate profile count
    int G = 1;
    int year_start = 0;

    std::vector<int> t0;            // [n] entry index, 0-based
    std::vector<std::size_t> offset; // [n+1] into the person-year arrays
    std::vector<std::uint16_t> profile; // per person-year
    std::vector<std::uint32_t> code;    // per person-year, encoded category
    std::vector<std::uint32_t> cell;    // per person-year, index into cells

    struct EmissionCell {
        std::uint16_t profile;
        std::uint32_t code;
    };
    std::vector<EmissionCell> cells;

    std::size_t size() const { return t0.size(); }
    std::size_t person_years() const { return profile.size(); }
};

/// Validates a dataset against the model and resolves it into PreparedData.
/// Throws data_error with the record id for malformed histories.
PreparedData prepare_data(const Dataset& data, const ModelSpec& model);

/// Everything derived from one parameter vector that the likelihood needs:
/// per-profile transition matrices (stored transposed for the forward
/// matvec), per-cell emission vectors per group, and mixing proportions.
struct ParamTables {
    std::vector<TransitionMatrix> gamma_t;      // [profile], transposed
    std::vector<double> emission;               // [(g * cells + c) * S + s]
    std::vector<double> pi;                     // [G]
    std::vector<double> log_pi;                 // [G]
    std::vector<std::vector<double>> patterns;  // [g * P + p] softmax over 2^K
    std::vector<double> q;                      // [profile]
    std::vector<LifeEventProbabilities> life;   // [profile]
    int S = 0;
    int cell_count = 0;
    int present_index = 0; // initial point mass at entry

    const double* emission_row(int group, std::uint32_t cell) const {
        return emission.data() + (static_cast<std::size_t>(group) * cell_count + cell) * S;
    }
};

ParamTables build_tables(const ModelSpec& model, const Parameters& params,
                         const PreparedData& prep);

/// Scaled forward pass for one record and one mixture group; returns the
/// log likelihood contribution, -inf if the history is impossible.
double record_group_loglik(const PreparedData& prep, const ParamTables& tables,
                           std::size_t record, int group);

/// Mixture log likelihood of one record: logsumexp over groups of
/// log pi_g + loglik_g.
double record_loglik(const PreparedData& prep, const ParamTables& tables, std::size_t record);

/// Posterior group membership probabilities for one record given the data.
std::vector<double> posterior_group_weights(const PreparedData& prep,
                                           const ParamTables& tables, std::size_t record);

/// Weighted total log likelihood. Zero-weight records are skipped entirely.
/// The summation is chunked with a fixed tree reduction, so the result is
/// bit-identical for any worker count.
double total_loglik(const PreparedData& prep, const ParamTables& tables,
                    std::span<const double> weights, int workers);

inline double total_loglik(const PreparedData& prep, const ParamTables& tables,
                           int workers = 0) {
    return total_loglik(prep, tables, {}, workers);
}

/// Weighted total log likelihood together with its gradient in the flat
/// parameter space of `schema`. The gradient is the exact adjoint of the
/// scaled forward recursion (a backward sweep per record and group), chained
/// through the transition, softmax, false positive and mixing maps.
/// Accumulation is per-chunk with the same pairwise tree as total_loglik, so
/// results are worker-count independent. Records with impossible histories
/// contribute -inf to the value and nothing to the gradient.
double total_loglik_gradient(const ModelSpec& model, const Parameters& params,
                             const ParameterSchema& schema, const PreparedData& prep,
                             const ParamTables& tables, std::span<const double> weights,
                             int workers, std::vector<double>& grad);

} // namespace crhmm
