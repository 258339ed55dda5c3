#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace crhmm {

/// Raised for malformed model configuration (unknown categories, bad
/// dimensions, inconsistent sizes). Mapped to exit code 2 by the CLI.
struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Raised for malformed or inconsistent input data. Exit code 3 in the CLI.
struct data_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// One categorical covariate dimension. `record` dimensions are read from
/// the individual's covariate map; `tis_band` and `age_band` are derived per
/// year from entry year / birth year using ascending integer breaks, with
/// band i covering values in [breaks[i-1], breaks[i]).
struct CovariateDimension {
    enum class Source { record, tis_band, age_band };

    std::string name;
    std::vector<std::string> categories;
    int baseline = 0;
    Source source = Source::record;
    std::vector<int> breaks; // derived dims only; categories.size() == breaks.size() + 1
};

/// Ordered set of covariate dimensions. A profile is one category choice per
/// dimension, identified by a mixed-radix integer (first dimension varies
/// fastest).
class CovariateScheme {
public:
    CovariateScheme() = default;
    explicit CovariateScheme(std::vector<CovariateDimension> dims);

    const std::vector<CovariateDimension>& dims() const { return dims_; }
    int dim_count() const { return static_cast<int>(dims_.size()); }
    int profile_count() const { return profile_count_; }

    int profile_id(const std::vector<int>& cats) const;
    std::vector<int> profile_cats(int profile) const;
    int category_of(int profile, int dim) const;

    /// Index of a named dimension; throws config_error if absent.
    int dim_index(const std::string& name) const;

    /// Category index within a dimension; throws config_error naming the
    /// offending category if it is not declared.
    int category_index(int dim, const std::string& category) const;

    /// Band for a derived dimension given the underlying integer value
    /// (time in system or age).
    int band_for_value(int dim, int value) const;

    /// Baseline profile: every dimension at its baseline category.
    int baseline_profile() const;

    std::string profile_label(int profile) const;

private:
    std::vector<CovariateDimension> dims_;
    int profile_count_ = 1;
};

inline CovariateScheme::CovariateScheme(std::vector<CovariateDimension> dims)
    : dims_(std::move(dims)) {
    profile_count_ = 1;
    for (const auto& d : dims_) {
        if (d.categories.size() < 2)
            throw config_error("covariate dimension '" + d.name +
                               "' needs at least two categories");
        if (d.baseline < 0 || d.baseline >= static_cast<int>(d.categories.size()))
            throw config_error("covariate dimension '" + d.name +
                               "' has an out-of-range baseline index");
        if (d.source != CovariateDimension::Source::record) {
            if (d.breaks.size() + 1 != d.categories.size())
                throw config_error("derived dimension '" + d.name +
                                   "' needs one fewer break than categories");
            for (std::size_t i = 1; i < d.breaks.size(); ++i)
                if (d.breaks[i] <= d.breaks[i - 1])
                    throw config_error("derived dimension '" + d.name +
                                       "' has non-ascending breaks");
        }
        profile_count_ *= static_cast<int>(d.categories.size());
    }
}

inline int CovariateScheme::profile_id(const std::vector<int>& cats) const {
    if (cats.size() != dims_.size())
        throw config_error("profile has wrong number of categories");
    int id = 0, radix = 1;
    for (std::size_t d = 0; d < dims_.size(); ++d) {
        if (cats[d] < 0 || cats[d] >= static_cast<int>(dims_[d].categories.size()))
            throw config_error("category index out of range for dimension '" +
                               dims_[d].name + "'");
        id += cats[d] * radix;
        radix *= static_cast<int>(dims_[d].categories.size());
    }
    return id;
}

inline std::vector<int> CovariateScheme::profile_cats(int profile) const {
    std::vector<int> cats(dims_.size());
    for (std::size_t d = 0; d < dims_.size(); ++d) {
        int n = static_cast<int>(dims_[d].categories.size());
        cats[d] = profile % n;
        profile /= n;
    }
    return cats;
}

inline int CovariateScheme::category_of(int profile, int dim) const {
    for (int d = 0; d < dim; ++d)
        profile /= static_cast<int>(dims_[d].categories.size());
    return profile % static_cast<int>(dims_[dim].categories.size());
}

inline int CovariateScheme::dim_index(const std::string& name) const {
    for (std::size_t d = 0; d < dims_.size(); ++d)
        if (dims_[d].name == name) return static_cast<int>(d);
    throw config_error("unknown covariate dimension '" + name + "'");
}

inline int CovariateScheme::category_index(int dim, const std::string& category) const {
    const auto& d = dims_[dim];
    for (std::size_t c = 0; c < d.categories.size(); ++c)
        if (d.categories[c] == category) return static_cast<int>(c);
    throw config_error("unknown category '" + category + "' for covariate dimension '" +
                       d.name + "'");
}

inline int CovariateScheme::band_for_value(int dim, int value) const {
    const auto& d = dims_[dim];
    int band = 0;
    for (int b : d.breaks) {
        if (value < b) break;
        ++band;
    }
    return band;
}

inline int CovariateScheme::baseline_profile() const {
    std::vector<int> cats(dims_.size());
    for (std::size_t d = 0; d < dims_.size(); ++d) cats[d] = dims_[d].baseline;
    return dims_.empty() ? 0 : profile_id(cats);
}

inline std::string CovariateScheme::profile_label(int profile) const {
    std::string out;
    auto cats = profile_cats(profile);
    for (std::size_t d = 0; d < dims_.size(); ++d) {
        if (d) out += ",";
        out += dims_[d].name + "=" + dims_[d].categories[cats[d]];
    }
    return out.empty() ? "(none)" : out;
}

} // namespace crhmm
