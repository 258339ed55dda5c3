#include "crhmm/blb.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <utility>

#include "crhmm/likelihood.hpp"
#include "crhmm/parallel.hpp"
#include "crhmm/rng.hpp"
#include "json.hpp"

namespace crhmm {

namespace {

using nlohmann::json;

constexpr std::uint64_t kShuffleStream = 0xB0;
constexpr std::uint64_t kDrawStream = 0xB1;
constexpr std::uint64_t kWeightStream = 0xB2;
constexpr std::uint64_t kCellFitStream = 0xB3;
constexpr std::uint64_t kBaseFitStream = 0xB4;

constexpr int kResultsSchemaVersion = 1;

json plan_to_json(const BlbPlan& plan) {
    return json{{"n", plan.n},         {"s", plan.s},       {"b", plan.b},
                {"r", plan.r},         {"gamma", plan.gamma}, {"mode", to_string(plan.mode)},
                {"seed", plan.seed}};
}

bool plan_matches(const json& j, const BlbPlan& plan) {
    return j.value("n", std::size_t{0}) == plan.n && j.value("s", -1) == plan.s &&
           j.value("b", std::size_t{1} << 62) == plan.b && j.value("r", -1) == plan.r &&
           j.value("gamma", -1.0) == plan.gamma &&
           j.value("mode", std::string{}) == to_string(plan.mode) &&
           j.value("seed", std::uint64_t{0}) == plan.seed;
}

json cell_to_json(const BlbCell& cell) {
    return json{{"subset", cell.subset},   {"resample", cell.resample},
                {"ok", cell.ok},           {"error", cell.error},
                {"estimate", cell.estimate}, {"loglik", cell.loglik},
                {"converged", cell.converged}, {"mixing", cell.mixing},
                {"derived", cell.derived}};
}

BlbCell cell_from_json(const json& j) {
    BlbCell cell;
    cell.subset = j.at("subset").get<int>();
    cell.resample = j.at("resample").get<int>();
    cell.ok = j.at("ok").get<bool>();
    cell.error = j.value("error", std::string{});
    cell.estimate = j.value("estimate", std::vector<double>{});
    cell.loglik = j.value("loglik", 0.0);
    cell.converged = j.value("converged", false);
    cell.mixing = j.value("mixing", std::vector<double>{});
    cell.derived = j.value("derived", std::vector<std::vector<double>>{});
    return cell;
}

/// Parses an existing results file, checking the header against the plan
/// and every cell against the expected shapes.
std::map<std::pair<int, int>, BlbCell> read_cells(const std::string& path, const BlbPlan& plan,
                                                  int n_params, int groups,
                                                  const std::vector<DerivedQuantity>& derived) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open results file '" + path + "'");
    std::map<std::pair<int, int>, BlbCell> cells;
    std::string line;
    std::size_t line_no = 0;
    bool saw_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const json j = json::parse(line, nullptr, false);
        if (j.is_discarded())
            throw config_error("results file '" + path + "' line " + std::to_string(line_no) +
                               " is not valid JSON");
        if (!saw_header) {
            if (j.value("kind", std::string{}) != "blb-cells")
                throw config_error("'" + path + "' is not a resample results file");
            if (j.value("schema_version", 0) != kResultsSchemaVersion)
                throw config_error("results file '" + path +
                                   "' has an unsupported schema version");
            if (!j.contains("plan") || !plan_matches(j.at("plan"), plan))
                throw config_error("results file '" + path +
                                   "' was produced by a different plan");
            saw_header = true;
            continue;
        }
        BlbCell cell;
        try {
            cell = cell_from_json(j);
        } catch (const json::exception& e) {
            throw config_error("results file '" + path + "' line " + std::to_string(line_no) +
                               ": " + e.what());
        }
        const bool in_range = cell.subset >= 0 && cell.subset < plan.s && cell.resample >= 0 &&
                              cell.resample < plan.r;
        bool shaped = true;
        if (cell.ok) {
            shaped = static_cast<int>(cell.estimate.size()) == n_params &&
                     static_cast<int>(cell.mixing.size()) == (groups > 1 ? groups : 0) &&
                     cell.derived.size() == derived.size();
            for (std::size_t q = 0; shaped && q < derived.size(); ++q)
                shaped = cell.derived[q].size() == derived[q].labels.size();
        }
        if (!in_range || !shaped)
            throw config_error("results file '" + path + "' line " + std::to_string(line_no) +
                               " does not match the current plan and model");
        cells[{cell.subset, cell.resample}] = cell; // duplicates: last one wins
    }
    return cells;
}

double subset_mean(const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double subset_sd(const std::vector<double>& v, double mean) {
    if (v.size() < 2) return 0.0;
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

/// Mean of the entries summed in ascending order, so the result does not
/// depend on how the entries were ordered to begin with.
double order_free_mean(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

} // namespace

std::string to_string(SubsetMode mode) {
    return mode == SubsetMode::disjoint_partition ? "disjoint-partition" : "without-replacement";
}

SubsetMode subset_mode_from_string(const std::string& text) {
    if (text == "disjoint-partition") return SubsetMode::disjoint_partition;
    if (text == "without-replacement") return SubsetMode::without_replacement;
    throw config_error("unknown subset mode '" + text +
                       "' (expected 'disjoint-partition' or 'without-replacement')");
}

std::size_t BlbPlan::resolved_b(std::size_t population) const {
    if (b > 0) return b;
    if (gamma > 0.0) {
        const double raw = std::ceil(std::pow(static_cast<double>(population), gamma));
        return std::min(population, static_cast<std::size_t>(raw));
    }
    return (population + static_cast<std::size_t>(s) - 1) / static_cast<std::size_t>(s);
}

void BlbPlan::validate(std::size_t population) const {
    if (population == 0) throw config_error("bootstrap plan: the population is empty");
    if (n != 0 && n != population)
        throw config_error("bootstrap plan: n = " + std::to_string(n) +
                           " does not match the data size " + std::to_string(population));
    if (s < 1) throw config_error("bootstrap plan: subset count must be at least 1");
    if (r < 1) throw config_error("bootstrap plan: resample count must be at least 1");
    if (gamma != 0.0 && (gamma < 0.5 || gamma > 1.0))
        throw config_error("bootstrap plan: gamma must lie in [0.5, 1]");
    if (gamma != 0.0 && b != 0)
        throw config_error("bootstrap plan: give either b or gamma, not both");
    const std::size_t bb = resolved_b(population);
    if (bb > population)
        throw config_error("bootstrap plan: subset size " + std::to_string(bb) +
                           " exceeds the population size");
    if (mode == SubsetMode::disjoint_partition &&
        static_cast<std::size_t>(s) * bb > population && b != 0)
        throw config_error("bootstrap plan: " + std::to_string(s) + " disjoint subsets of " +
                           std::to_string(bb) + " need more than " + std::to_string(population) +
                           " individuals");
    if (static_cast<std::size_t>(s) > population)
        throw config_error("bootstrap plan: more subsets than individuals");
}

std::vector<std::vector<std::size_t>> make_subsets(const BlbPlan& plan, std::size_t n) {
    plan.validate(n);
    std::vector<std::vector<std::size_t>> subsets(static_cast<std::size_t>(plan.s));
    if (plan.mode == SubsetMode::disjoint_partition) {
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::mt19937_64 eng(derive_seed(plan.seed, kShuffleStream, 0));
        deterministic_shuffle(idx, eng);
        const std::size_t base = n / static_cast<std::size_t>(plan.s);
        const std::size_t rem = n % static_cast<std::size_t>(plan.s);
        std::size_t at = 0;
        for (int j = 0; j < plan.s; ++j) {
            const std::size_t len = base + (static_cast<std::size_t>(j) < rem ? 1 : 0);
            subsets[static_cast<std::size_t>(j)].assign(idx.begin() + static_cast<long>(at),
                                                        idx.begin() + static_cast<long>(at + len));
            at += len;
        }
    } else {
        const std::size_t b = plan.resolved_b(n);
        for (int j = 0; j < plan.s; ++j) {
            std::mt19937_64 eng(derive_seed(plan.seed, kDrawStream,
                                            static_cast<std::uint64_t>(j)));
            std::vector<std::size_t> idx(n);
            std::iota(idx.begin(), idx.end(), std::size_t{0});
            for (std::size_t i = 0; i < b; ++i) {
                const std::size_t k =
                    i + static_cast<std::size_t>(uniform_below(eng, n - i));
                std::swap(idx[i], idx[k]);
            }
            idx.resize(b);
            subsets[static_cast<std::size_t>(j)] = std::move(idx);
        }
    }
    for (auto& sub : subsets) std::sort(sub.begin(), sub.end());
    return subsets;
}

std::vector<long> resample_weights(std::size_t b, std::size_t n, std::uint64_t seed) {
    if (b == 0) throw config_error("resample weights need at least one cell");
    if (b > n) throw config_error("subset size exceeds the resample size");
    std::vector<long> w(b, 0);
    std::mt19937_64 eng(splitmix64(seed));
    long remaining = static_cast<long>(n);
    // Sequential conditional binomials give an exact multinomial draw.
    for (std::size_t i = 0; i + 1 < b && remaining > 0; ++i) {
        std::binomial_distribution<long> cell(remaining, 1.0 / static_cast<double>(b - i));
        w[i] = cell(eng);
        remaining -= w[i];
    }
    w[b - 1] = remaining;
    return w;
}

double percentile(std::span<const double> sorted_values, double pct) {
    if (sorted_values.empty()) throw config_error("percentile of an empty sample");
    if (!(pct >= 0.0 && pct <= 100.0))
        throw config_error("percentile must lie in [0, 100]");
    const double h = pct / 100.0 * static_cast<double>(sorted_values.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(h);
    if (lo + 1 >= sorted_values.size()) return sorted_values.back();
    const double frac = h - static_cast<double>(lo);
    return sorted_values[lo] + frac * (sorted_values[lo + 1] - sorted_values[lo]);
}

std::vector<AggregatedQuantity> aggregate_cells(const std::vector<BlbCell>& cells,
                                                const std::vector<std::string>& parameter_names,
                                                const std::vector<std::string>& mixing_labels,
                                                const std::vector<DerivedQuantity>& derived) {
    struct Spec {
        std::string name;
        const std::vector<std::string>* labels;
        std::function<const std::vector<double>&(const BlbCell&)> values;
    };
    std::vector<Spec> specs;
    specs.push_back({"parameters", &parameter_names,
                     [](const BlbCell& c) -> const std::vector<double>& { return c.estimate; }});
    if (!mixing_labels.empty())
        specs.push_back({"mixing_proportions", &mixing_labels,
                         [](const BlbCell& c) -> const std::vector<double>& { return c.mixing; }});
    for (std::size_t q = 0; q < derived.size(); ++q)
        specs.push_back({derived[q].name, &derived[q].labels,
                         [q](const BlbCell& c) -> const std::vector<double>& {
                             return c.derived[q];
                         }});

    // Group ok cells by subset, keeping the subset's resample order.
    std::map<int, std::vector<const BlbCell*>> by_subset;
    for (const auto& cell : cells)
        if (cell.ok) by_subset[cell.subset].push_back(&cell);
    if (by_subset.empty()) throw config_error("no successful resample fits to aggregate");

    std::vector<AggregatedQuantity> out;
    for (const auto& spec : specs) {
        const std::size_t D = spec.labels->size();
        for (const auto& [subset, group] : by_subset)
            for (const BlbCell* cell : group)
                if (spec.values(*cell).size() != D)
                    throw config_error("resample results for '" + spec.name +
                                       "' do not match its labels");
        AggregatedQuantity agg;
        agg.name = spec.name;
        agg.labels = *spec.labels;
        agg.point.resize(D);
        agg.se.resize(D);
        agg.lower.resize(D);
        agg.upper.resize(D);
        std::vector<double> values, means, sds, los, his;
        for (std::size_t j = 0; j < D; ++j) {
            means.clear(), sds.clear(), los.clear(), his.clear();
            for (const auto& [subset, group] : by_subset) {
                values.clear();
                for (const BlbCell* cell : group) values.push_back(spec.values(*cell)[j]);
                const double mean = subset_mean(values);
                means.push_back(mean);
                sds.push_back(subset_sd(values, mean));
                std::sort(values.begin(), values.end());
                los.push_back(percentile(values, 2.5));
                his.push_back(percentile(values, 97.5));
            }
            agg.point[j] = order_free_mean(means);
            agg.se[j] = order_free_mean(sds);
            agg.lower[j] = order_free_mean(los);
            agg.upper[j] = order_free_mean(his);
        }
        out.push_back(std::move(agg));
    }
    return out;
}

BlbResult run_blb(const BlbPlan& plan_in, const Dataset& data, const ModelSpec& model,
                  const BlbOptions& options, const std::vector<DerivedQuantity>& derived) {
    const std::size_t n = data.size();
    BlbPlan plan = plan_in;
    if (plan.n == 0) plan.n = n;
    plan.validate(n);
    if (options.resume && options.results_path.empty())
        throw config_error("resuming needs a results path to read from");
    if (!(options.max_failure_share >= 0.0 && options.max_failure_share <= 1.0))
        throw config_error("max_failure_share must lie in [0, 1]");

    const auto subsets = make_subsets(plan, n);
    const int G = model.groups();
    const ParameterSchema schema(model);
    const int workers = resolve_worker_count(options.workers);
    const std::size_t S = subsets.size();
    const std::size_t R = static_cast<std::size_t>(plan.r);

    // Per-subset data and, when warm-starting, the unweighted subset fit.
    struct SubsetCtx {
        Dataset data;
        PreparedData prep;
        Parameters init;
        bool ok = false;
        std::string error;
    };
    std::vector<SubsetCtx> ctx(S);
    {
        std::mutex m;
        std::exception_ptr first;
        std::size_t first_idx = S;
        parallel_for(S, workers, [&](std::size_t j) {
            try {
                SubsetCtx& c = ctx[j];
                c.data.year_start = data.year_start;
                c.data.year_end = data.year_end;
                c.data.K = data.K;
                c.data.records.reserve(subsets[j].size());
                for (std::size_t idx : subsets[j]) c.data.records.push_back(data.records[idx]);
                c.prep = prepare_data(c.data, model);
                c.init = default_initialization(model, c.prep);
                if (options.warm_start) {
                    FitOptions fo = options.fit;
                    fo.workers = 1;
                    fo.compute_standard_errors = false;
                    fo.seed = derive_seed(plan.seed, kBaseFitStream,
                                          static_cast<std::uint64_t>(j));
                    const FitResult base = fit_mle(c.prep, {}, model, c.init, fo);
                    schema.unpack(base.estimate, c.init);
                }
                c.ok = true;
            } catch (const numeric_error& e) {
                ctx[j].error = e.what();
            } catch (...) {
                std::lock_guard<std::mutex> lock(m);
                if (j < first_idx) {
                    first_idx = j;
                    first = std::current_exception();
                }
            }
        });
        if (first) std::rethrow_exception(first);
    }

    // Previously finished cells, when resuming.
    std::map<std::pair<int, int>, BlbCell> cells;
    const bool streaming = !options.results_path.empty();
    bool append = false;
    if (streaming && options.resume && std::filesystem::exists(options.results_path)) {
        cells = read_cells(options.results_path, plan, schema.size(), G, derived);
        append = true;
    }
    std::ofstream out;
    std::mutex out_mutex;
    if (streaming) {
        out.open(options.results_path, append ? std::ios::app : std::ios::trunc);
        if (!out)
            throw config_error("cannot write results file '" + options.results_path + "'");
        if (!append) {
            const json header{{"kind", "blb-cells"},
                              {"schema_version", kResultsSchemaVersion},
                              {"plan", plan_to_json(plan)}};
            out << header.dump() << '\n';
            out.flush();
        }
    }

    struct Job {
        int subset;
        int resample;
    };
    std::vector<Job> jobs;
    for (std::size_t j = 0; j < S; ++j)
        for (std::size_t rr = 0; rr < R; ++rr)
            if (!cells.count({static_cast<int>(j), static_cast<int>(rr)}))
                jobs.push_back({static_cast<int>(j), static_cast<int>(rr)});

    std::vector<BlbCell> fresh(jobs.size());
    {
        std::mutex m;
        std::exception_ptr first;
        std::size_t first_idx = jobs.size();
        parallel_for(jobs.size(), workers, [&](std::size_t i) {
            const Job job = jobs[i];
            const std::size_t j = static_cast<std::size_t>(job.subset);
            const std::uint64_t counter =
                static_cast<std::uint64_t>(job.subset) * R + static_cast<std::uint64_t>(job.resample);
            BlbCell cell;
            cell.subset = job.subset;
            cell.resample = job.resample;
            try {
                if (!ctx[j].ok) throw numeric_error("subset fit failed: " + ctx[j].error);
                const std::size_t bj = subsets[j].size();
                std::vector<double> weights(bj, 1.0);
                if (!options.unit_weights) {
                    const auto counts = resample_weights(
                        bj, n, derive_seed(plan.seed, kWeightStream, counter));
                    for (std::size_t k = 0; k < bj; ++k)
                        weights[k] = static_cast<double>(counts[k]);
                }
                FitOptions fo = options.fit;
                fo.workers = 1;
                fo.compute_standard_errors = false;
                fo.warm_start = options.warm_start;
                fo.seed = derive_seed(plan.seed, kCellFitStream, counter);
                const FitResult fr = fit_mle(ctx[j].prep, weights, model, ctx[j].init, fo);
                cell.estimate = fr.estimate;
                cell.loglik = fr.loglik;
                cell.converged = fr.converged;
                if (G > 1) cell.mixing = fr.mixing_proportions;
                const Parameters params = schema.unpack(fr.estimate);
                for (const auto& dq : derived) {
                    cell.derived.push_back(dq.eval(params, fr));
                    if (cell.derived.back().size() != dq.labels.size())
                        throw config_error("derived quantity '" + dq.name +
                                           "' returned the wrong number of values");
                }
                cell.ok = true;
            } catch (const numeric_error& e) {
                cell = BlbCell{job.subset, job.resample};
                cell.error = e.what();
            } catch (const data_error& e) {
                cell = BlbCell{job.subset, job.resample};
                cell.error = e.what();
            } catch (...) {
                std::lock_guard<std::mutex> lock(m);
                if (i < first_idx) {
                    first_idx = i;
                    first = std::current_exception();
                }
                return;
            }
            if (streaming) {
                std::lock_guard<std::mutex> lock(out_mutex);
                out << cell_to_json(cell).dump() << '\n';
                out.flush();
            }
            fresh[i] = std::move(cell);
        });
        if (first) std::rethrow_exception(first);
    }
    for (auto& cell : fresh) cells[{cell.subset, cell.resample}] = std::move(cell);

    BlbResult result;
    result.plan = plan;
    result.cells.reserve(S * R);
    for (std::size_t j = 0; j < S; ++j) {
        int failed = 0;
        std::string first_error;
        for (std::size_t rr = 0; rr < R; ++rr) {
            auto& cell = cells.at({static_cast<int>(j), static_cast<int>(rr)});
            if (!cell.ok) {
                ++failed;
                if (first_error.empty()) first_error = cell.error;
            }
            result.cells.push_back(std::move(cell));
        }
        result.failed += failed;
        if (static_cast<double>(failed) > options.max_failure_share * static_cast<double>(R))
            throw numeric_error("bootstrap subset " + std::to_string(j) + ": " +
                                std::to_string(failed) + " of " + std::to_string(R) +
                                " resample fits failed (first error: " + first_error + ")");
    }

    std::vector<std::string> mixing_labels;
    for (int g = 1; G > 1 && g <= G; ++g) mixing_labels.push_back("pi_" + std::to_string(g));
    result.aggregated = aggregate_cells(result.cells, schema.names(), mixing_labels, derived);
    return result;
}

} // namespace crhmm
