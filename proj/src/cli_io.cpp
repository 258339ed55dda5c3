#include "crhmm/cli_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"

namespace crhmm {

namespace {

using nlohmann::json;

constexpr int kSchemaVersion = 1;

[[noreturn]] void fail_config(const std::string& path, const std::string& what) {
    throw config_error("'" + path + "': " + what);
}

json parse_json_text(const std::string& text, const std::string& path,
                     const std::string& where) {
    const json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) fail_config(path, where + " is not valid JSON");
    return j;
}

json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail_config(path, "cannot open file");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_json_text(buf.str(), path, "file");
}

void require_schema(const json& j, const std::string& kind, const std::string& path) {
    if (!j.is_object()) fail_config(path, "expected a JSON object");
    if (!kind.empty() && j.value("kind", std::string{}) != kind)
        fail_config(path, "not a '" + kind + "' file");
    if (!j.contains("schema_version") || !j.at("schema_version").is_number_integer())
        fail_config(path, "missing schema_version");
    if (j.at("schema_version").get<int>() != kSchemaVersion)
        fail_config(path, "unsupported schema version " + j.at("schema_version").dump());
}

/// JSON has no NaN or infinity, so non-finite entries are stored as null.
json number_array(const std::vector<double>& v) {
    json out = json::array();
    for (double x : v) {
        if (std::isfinite(x))
            out.push_back(x);
        else
            out.push_back(nullptr);
    }
    return out;
}

std::vector<double> read_number_array(const json& j) {
    std::vector<double> out;
    for (const auto& x : j)
        out.push_back(x.is_null() ? std::numeric_limits<double>::quiet_NaN()
                                  : x.get<double>());
    return out;
}

std::string number_str(double x) { return json(x).dump(); }

StateSpaceKind kind_from_string(const std::string& text, const std::string& path) {
    if (text == "general3") return StateSpaceKind::general3;
    if (text == "sweden8") return StateSpaceKind::sweden8;
    fail_config(path, "unknown state-space kind '" + text + "'");
}

StateSpaceConfig parse_states(const json& js, const std::string& path) {
    if (js.is_string()) return StateSpaceConfig::preset(js.get<std::string>());
    if (!js.is_object() || !js.contains("states"))
        fail_config(path, "model.states must be a preset name or an object with a states list");
    StateSpaceConfig config;
    config.kind = kind_from_string(js.value("kind", std::string{"general3"}), path);
    for (const auto& st : js.at("states")) {
        StateSpaceConfig::State state;
        state.id = st.at("id").get<int>();
        state.label = st.value("label", std::string{});
        state.role = role_from_string(st.at("role").get<std::string>());
        config.states.push_back(state);
        switch (state.role) {
            case StateRole::dead:
                config.absorbing_states.push_back(state.id);
                break;
            case StateRole::present_death_recorded:
            case StateRole::abroad_emigration_recorded:
            case StateRole::abroad_death_recorded:
            case StateRole::returned_reregistered:
                config.intermediate_states.push_back(state.id);
                break;
            default:
                break;
        }
    }
    return config;
}

CovariateScheme parse_covariates(const json& jm, const std::string& path) {
    std::vector<CovariateDimension> dims;
    for (const auto& jd : jm.value("covariates", json::array())) {
        CovariateDimension dim;
        dim.name = jd.at("name").get<std::string>();
        dim.categories = jd.at("categories").get<std::vector<std::string>>();
        const std::string source = jd.value("source", std::string{"record"});
        if (source == "record")
            dim.source = CovariateDimension::Source::record;
        else if (source == "age_band")
            dim.source = CovariateDimension::Source::age_band;
        else if (source == "tis_band")
            dim.source = CovariateDimension::Source::tis_band;
        else
            fail_config(path, "covariate '" + dim.name + "': unknown source '" + source + "'");
        dim.breaks = jd.value("breaks", std::vector<int>{});
        if (jd.contains("baseline")) {
            const auto& jb = jd.at("baseline");
            if (jb.is_string()) {
                const auto it = std::find(dim.categories.begin(), dim.categories.end(),
                                          jb.get<std::string>());
                if (it == dim.categories.end())
                    fail_config(path, "covariate '" + dim.name + "': baseline '" +
                                          jb.get<std::string>() + "' is not a category");
                dim.baseline = static_cast<int>(it - dim.categories.begin());
            } else {
                dim.baseline = jb.get<int>();
            }
        }
        dims.push_back(std::move(dim));
    }
    return CovariateScheme(std::move(dims));
}

std::vector<int> effect_dims(const json& je, const char* key, const CovariateScheme& scheme,
                             const std::string& path) {
    std::vector<int> out;
    for (const auto& jn : je.value(key, json::array())) {
        const std::string name = jn.get<std::string>();
        int found = -1;
        for (int d = 0; d < scheme.dim_count(); ++d)
            if (scheme.dims()[static_cast<std::size_t>(d)].name == name) found = d;
        if (found < 0)
            fail_config(path, std::string{"effects."} + key + ": unknown covariate '" + name + "'");
        out.push_back(found);
    }
    return out;
}

std::uint32_t parse_fp_pattern(const json& jp, const EmissionDesign& design,
                               const std::string& path) {
    if (jp.is_number_unsigned() || jp.is_number_integer())
        return jp.get<std::uint32_t>();
    std::uint32_t pattern = 0;
    for (const auto& jn : jp) {
        const int k = design.register_index(jn.get<std::string>());
        if (k < 0)
            fail_config(path, "false_positive.pattern: unknown register '" +
                                  jn.get<std::string>() + "'");
        pattern |= 1u << k;
    }
    return pattern;
}

ModelSpec parse_model(const json& jm, const std::string& path) {
    ModelSpec model;
    if (!jm.contains("states")) fail_config(path, "model.states is required");
    model.states = parse_states(jm.at("states"), path);
    model.scheme = parse_covariates(jm, path);

    if (!jm.contains("registers")) fail_config(path, "model.registers is required");
    model.design.registers = jm.at("registers").get<std::vector<std::string>>();
    model.design.groups = jm.value("groups", 1);
    model.design.register_covariate_interactions =
        jm.value("register_covariate_interactions", true);
    model.design.register_register_interactions =
        jm.value("register_register_interactions", true);
    const int K = model.design.K();
    model.design.group_specific.assign(static_cast<std::size_t>(K),
                                       model.design.groups > 1 ? 1 : 0);
    if (jm.contains("group_specific_registers")) {
        model.design.group_specific.assign(static_cast<std::size_t>(K), 0);
        for (const auto& jn : jm.at("group_specific_registers")) {
            const int k = model.design.register_index(jn.get<std::string>());
            if (k < 0)
                fail_config(path, "group_specific_registers: unknown register '" +
                                      jn.get<std::string>() + "'");
            model.design.group_specific[static_cast<std::size_t>(k)] = 1;
        }
    }

    if (jm.contains("false_positive")) {
        const json& jf = jm.at("false_positive");
        model.fp.enabled = jf.value("enabled", true);
        if (jf.contains("pattern"))
            model.fp.pattern = parse_fp_pattern(jf.at("pattern"), model.design, path);
    }

    const json je = jm.value("effects", json::object());
    model.effects.survival_dims = effect_dims(je, "survival", model.scheme, path);
    model.effects.emigration_dims = effect_dims(je, "emigration", model.scheme, path);
    model.effects.return_dims = effect_dims(je, "return", model.scheme, path);
    model.effects.lambda_dims = effect_dims(je, "lambda", model.scheme, path);
    model.effects.false_positive_dims = effect_dims(je, "false_positive", model.scheme, path);

    const json jev = jm.value("events", json::object());
    model.events.psi_emigration = jev.value("psi_emigration", model.events.psi_emigration);
    model.events.psi_reimmigration =
        jev.value("psi_reimmigration", model.events.psi_reimmigration);
    model.events.phi_present_death =
        jev.value("phi_present_death", model.events.phi_present_death);
    model.events.phi_abroad_death =
        jev.value("phi_abroad_death", model.events.phi_abroad_death);
    return model;
}

FitOptions parse_fit(const json& jf, std::uint64_t seed) {
    FitOptions fit;
    fit.max_iterations = jf.value("max_iterations", fit.max_iterations);
    fit.gradient_tolerance = jf.value("gradient_tolerance", fit.gradient_tolerance);
    fit.relative_f_tolerance = jf.value("relative_f_tolerance", fit.relative_f_tolerance);
    fit.lbfgs_memory = jf.value("lbfgs_memory", fit.lbfgs_memory);
    fit.multi_start = jf.value("multi_start", fit.multi_start);
    fit.pilot_iterations = jf.value("pilot_iterations", fit.pilot_iterations);
    fit.jitter_sd = jf.value("jitter_sd", fit.jitter_sd);
    fit.compute_standard_errors = jf.value("standard_errors", fit.compute_standard_errors);
    fit.seed = seed;
    return fit;
}

json plan_to_json(const BlbPlan& plan) {
    return json{{"n", plan.n},         {"s", plan.s},       {"b", plan.b},
                {"r", plan.r},         {"gamma", plan.gamma}, {"mode", to_string(plan.mode)},
                {"seed", plan.seed}};
}

BlbPlan plan_from_json(const json& jb, std::uint64_t default_seed, const std::string& path) {
    BlbPlan plan;
    plan.n = jb.value("n", std::size_t{0});
    plan.s = jb.value("s", plan.s);
    plan.b = jb.value("b", plan.b);
    plan.r = jb.value("r", plan.r);
    plan.gamma = jb.value("gamma", plan.gamma);
    if (jb.contains("mode")) {
        try {
            plan.mode = subset_mode_from_string(jb.at("mode").get<std::string>());
        } catch (const config_error& e) {
            fail_config(path, e.what());
        }
    }
    plan.seed = jb.value("seed", default_seed);
    return plan;
}

SimulateSection parse_simulate(const json& js, const CovariateScheme& scheme,
                               const std::string& path) {
    SimulateSection sim;
    sim.present = true;
    if (!js.contains("year_start") || !js.contains("year_end") ||
        !js.contains("entries_per_year"))
        fail_config(path, "simulate needs year_start, year_end and entries_per_year");
    sim.year_start = js.at("year_start").get<int>();
    sim.year_end = js.at("year_end").get<int>();
    sim.entries_per_year = js.at("entries_per_year").get<std::vector<int>>();

    const json jfreq = js.value("covariate_frequencies", json::object());
    for (const auto& dim : scheme.dims()) {
        if (dim.source == CovariateDimension::Source::tis_band) {
            sim.covariate_frequencies.emplace_back();
            continue;
        }
        if (!jfreq.contains(dim.name))
            fail_config(path, "simulate.covariate_frequencies is missing '" + dim.name + "'");
        sim.covariate_frequencies.push_back(jfreq.at(dim.name).get<std::vector<double>>());
    }
    // Bind before iterating: items() keeps a reference to its container, which
    // would dangle on the temporary value() returns.
    const json jtruth = js.value("truth", json::object());
    for (const auto& [name, value] : jtruth.items())
        sim.truth[name] = value.get<double>();
    return sim;
}

/// Shared scan for the two data readers: validates the assembled records
/// and throws one data_error naming the first 20 offenders.
void validate_records(const Dataset& data, std::vector<std::string> problems,
                      const std::string& path) {
    for (const auto& rec : data.records) {
        std::string why;
        if (rec.id.empty()) {
            why = "empty id";
        } else if (rec.entry_year < data.year_start || rec.entry_year > data.year_end) {
            why = "entry year " + std::to_string(rec.entry_year) + " outside the window";
        } else if (rec.observations.size() !=
                   static_cast<std::size_t>(data.year_end - rec.entry_year + 1)) {
            why = "observation years do not run from the entry year to " +
                  std::to_string(data.year_end);
        } else {
            for (std::size_t i = 0; i < rec.observations.size() && why.empty(); ++i) {
                const std::uint32_t code = rec.observations[i];
                // decode_category masks high bits away, so reject them first.
                if ((code >> (data.K + 2)) != 0 ||
                    !category_valid(decode_category(code, data.K), data.K))
                    why = "invalid category code " + std::to_string(code) + " in year " +
                          std::to_string(rec.entry_year + static_cast<int>(i));
            }
        }
        if (!why.empty()) problems.push_back(rec.id + " (" + why + ")");
    }
    if (problems.empty()) return;
    std::string msg = "'" + path + "': " + std::to_string(problems.size()) +
                      " invalid records: ";
    const std::size_t shown = std::min<std::size_t>(problems.size(), 20);
    for (std::size_t i = 0; i < shown; ++i) {
        if (i) msg += ", ";
        msg += problems[i];
    }
    if (problems.size() > shown)
        msg += ", and " + std::to_string(problems.size() - shown) + " more";
    throw data_error(msg);
}

} // namespace

RunConfig load_run_config(const std::string& path) {
    const json j = load_json_file(path);
    require_schema(j, "", path);
    RunConfig config;
    config.seed = j.value("seed", config.seed);
    config.workers = j.value("workers", config.workers);
    if (!j.contains("model")) fail_config(path, "model section is required");
    config.model = parse_model(j.at("model"), path);
    try {
        config.model.validate();
    } catch (const config_error& e) {
        fail_config(path, std::string{"invalid model: "} + e.what());
    }
    config.fit = parse_fit(j.value("fit", json::object()), config.seed);
    const json jb = j.value("blb", json::object());
    config.blb = plan_from_json(jb, config.seed, path);
    config.blb_population_series = jb.value("population_series", false);
    config.blb_group_assignments = jb.value("group_assignments", false);
    if (j.contains("simulate"))
        config.simulate = parse_simulate(j.at("simulate"), config.model.scheme, path);
    if (j.contains("decode")) {
        const json& jd = j.at("decode");
        if (jd.contains("present_roles")) {
            config.rule.present_roles.clear();
            for (const auto& jr : jd.at("present_roles")) {
                try {
                    config.rule.present_roles.push_back(
                        role_from_string(jr.get<std::string>()));
                } catch (const config_error& e) {
                    fail_config(path, e.what());
                }
            }
        }
    }
    if (j.contains("report"))
        config.register_counts =
            j.at("report").value("register_counts", std::vector<long>{});
    return config;
}

Parameters parameters_from_names(const ModelSpec& model,
                                 const std::map<std::string, double>& named) {
    const ParameterSchema schema(model);
    std::vector<double> x(static_cast<std::size_t>(schema.size()), 0.0);
    for (const auto& [name, value] : named) {
        const int idx = schema.index_of(name);
        if (idx < 0) throw config_error("unknown parameter name '" + name + "'");
        x[static_cast<std::size_t>(idx)] = value;
    }
    return schema.unpack(x);
}

void write_dataset(const std::string& path, const Dataset& data) {
    std::ofstream out(path);
    if (!out) throw config_error("cannot write '" + path + "'");
    const json header{{"kind", "records"},
                      {"schema_version", kSchemaVersion},
                      {"year_start", data.year_start},
                      {"year_end", data.year_end},
                      {"K", data.K}};
    out << header.dump() << '\n';
    for (const auto& rec : data.records) {
        json jr{{"id", rec.id}, {"entry_year", rec.entry_year}};
        if (!rec.covariates.empty()) jr["covariates"] = rec.covariates;
        if (!rec.attributes.empty()) jr["attributes"] = rec.attributes;
        json obs = json::array();
        for (std::size_t i = 0; i < rec.observations.size(); ++i)
            obs.push_back(json::array(
                {rec.entry_year + static_cast<int>(i), rec.observations[i]}));
        jr["observations"] = std::move(obs);
        out << jr.dump() << '\n';
    }
}

Dataset read_dataset_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) fail_config(path, "empty data file");
    const json header = parse_json_text(line, path, "header line");
    require_schema(header, "records", path);
    Dataset data;
    data.year_start = header.at("year_start").get<int>();
    data.year_end = header.at("year_end").get<int>();
    data.K = header.at("K").get<int>();
    if (data.year_end < data.year_start) fail_config(path, "year_end precedes year_start");
    if (data.K < 1 || data.K > kMaxRegisters) fail_config(path, "K out of range");

    std::vector<std::string> problems;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const json jr = json::parse(line, nullptr, false);
        if (jr.is_discarded() || !jr.is_object()) {
            problems.push_back("line " + std::to_string(line_no) + " (invalid JSON)");
            continue;
        }
        IndividualRecord rec;
        try {
            rec.id = jr.at("id").get<std::string>();
            rec.entry_year = jr.at("entry_year").get<int>();
            if (jr.contains("covariates"))
                rec.covariates = jr.at("covariates").get<std::map<std::string, std::string>>();
            if (jr.contains("attributes"))
                rec.attributes = jr.at("attributes").get<std::map<std::string, int>>();
            int expected = rec.entry_year;
            bool ordered = true;
            for (const auto& jo : jr.at("observations")) {
                if (jo.at(0).get<int>() != expected++) ordered = false;
                rec.observations.push_back(jo.at(1).get<std::uint32_t>());
            }
            if (!ordered) {
                problems.push_back(rec.id + " (observation years are not consecutive from " +
                                   std::to_string(rec.entry_year) + ")");
                continue;
            }
        } catch (const json::exception&) {
            problems.push_back("line " + std::to_string(line_no) + " (malformed record)");
            continue;
        }
        data.records.push_back(std::move(rec));
    }
    validate_records(data, std::move(problems), path);
    return data;
}

Dataset read_dataset_csv(const std::string& path, int K) {
    if (K < 1 || K > kMaxRegisters) throw config_error("register count out of range");
    std::ifstream in(path);
    if (!in) throw config_error("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) fail_config(path, "empty data file");
    // Tolerate surrounding whitespace and a trailing carriage return.
    const auto strip = [](std::string s) {
        const auto from = s.find_first_not_of(" \t\r");
        const auto to = s.find_last_not_of(" \t\r");
        return from == std::string::npos ? std::string{} : s.substr(from, to - from + 1);
    };
    {
        std::stringstream hs(line);
        std::string a, b, c;
        std::getline(hs, a, ',');
        std::getline(hs, b, ',');
        std::getline(hs, c);
        if (strip(a) != "id" || strip(b) != "year" || strip(c) != "category")
            fail_config(path, "expected an 'id,year,category' header");
    }

    struct Rows {
        std::vector<std::pair<int, std::uint32_t>> obs;
    };
    std::vector<std::string> order;
    std::map<std::string, Rows> by_id;
    std::vector<std::string> problems;
    int min_year = std::numeric_limits<int>::max();
    int max_year = std::numeric_limits<int>::min();
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (strip(line).empty()) continue;
        std::stringstream ls(line);
        std::string id, year_s, cat_s;
        std::getline(ls, id, ',');
        std::getline(ls, year_s, ',');
        std::getline(ls, cat_s);
        id = strip(id);
        int year = 0;
        long cat = -1;
        try {
            year = std::stoi(strip(year_s));
            cat = std::stol(strip(cat_s));
        } catch (const std::exception&) {
            problems.push_back("line " + std::to_string(line_no) + " (malformed row)");
            continue;
        }
        if (id.empty() || cat < 0) {
            problems.push_back("line " + std::to_string(line_no) + " (malformed row)");
            continue;
        }
        if (!by_id.count(id)) order.push_back(id);
        by_id[id].obs.emplace_back(year, static_cast<std::uint32_t>(cat));
        min_year = std::min(min_year, year);
        max_year = std::max(max_year, year);
    }
    if (order.empty() && problems.empty()) fail_config(path, "no data rows");

    Dataset data;
    data.year_start = min_year;
    data.year_end = max_year;
    data.K = K;
    for (const auto& id : order) {
        auto& rows = by_id[id].obs;
        std::sort(rows.begin(), rows.end());
        IndividualRecord rec;
        rec.id = id;
        rec.entry_year = rows.front().first;
        bool ordered = true;
        int expected = rec.entry_year;
        for (const auto& [year, cat] : rows) {
            if (year != expected++) ordered = false;
            rec.observations.push_back(cat);
        }
        if (!ordered) {
            problems.push_back(id + " (years are not consecutive from " +
                               std::to_string(rec.entry_year) + ")");
            continue;
        }
        data.records.push_back(std::move(rec));
    }
    validate_records(data, std::move(problems), path);
    return data;
}

Dataset read_dataset(const std::string& path, int K) {
    if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".csv") == 0)
        return read_dataset_csv(path, K);
    Dataset data = read_dataset_jsonl(path);
    if (data.K != K)
        throw config_error("'" + path + "': data has " + std::to_string(data.K) +
                           " registers but the model expects " + std::to_string(K));
    return data;
}

void write_ground_truth(const std::string& path, const Dataset& data,
                        const GroundTruth& truth) {
    if (truth.individuals.size() != data.records.size())
        throw config_error("ground truth does not align with the dataset");
    std::ofstream out(path);
    if (!out) throw config_error("cannot write '" + path + "'");
    const json header{{"kind", "truth"},
                      {"schema_version", kSchemaVersion},
                      {"count", truth.individuals.size()}};
    out << header.dump() << '\n';
    for (std::size_t i = 0; i < truth.individuals.size(); ++i) {
        const auto& ind = truth.individuals[i];
        out << json{{"id", data.records[i].id},
                    {"group", ind.group},
                    {"states", ind.state_ids}}
                   .dump()
            << '\n';
    }
}

GroundTruth read_ground_truth(const std::string& path, const Dataset& data) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) fail_config(path, "empty file");
    const json header = parse_json_text(line, path, "header line");
    require_schema(header, "truth", path);
    if (header.value("count", std::size_t{0}) != data.records.size())
        throw data_error("'" + path + "': holds " + header.at("count").dump() +
                         " individuals but the dataset has " +
                         std::to_string(data.records.size()));
    GroundTruth truth;
    std::size_t i = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const json j = parse_json_text(line, path, "line " + std::to_string(i + 2));
        if (i >= data.records.size()) throw data_error("'" + path + "': too many lines");
        if (j.value("id", std::string{}) != data.records[i].id)
            throw data_error("'" + path + "': line for '" + j.value("id", std::string{}) +
                             "' does not match record '" + data.records[i].id + "'");
        GroundTruth::Individual ind;
        ind.group = j.at("group").get<int>();
        ind.state_ids = j.at("states").get<std::vector<int>>();
        if (ind.state_ids.size() != data.records[i].observations.size())
            throw data_error("'" + path + "': state path for '" + data.records[i].id +
                             "' has the wrong length");
        truth.individuals.push_back(std::move(ind));
        ++i;
    }
    if (i != data.records.size()) throw data_error("'" + path + "': too few lines");
    return truth;
}

void write_fit_result(const std::string& path, const ModelSpec& model, const FitResult& fit) {
    std::ofstream out(path);
    if (!out) throw config_error("cannot write '" + path + "'");
    json j{{"kind", "fit"},
           {"schema_version", kSchemaVersion},
           {"groups", model.groups()},
           {"names", fit.parameter_names},
           {"estimate", number_array(fit.estimate)},
           {"standard_errors", number_array(fit.standard_errors)},
           {"loglik", fit.loglik},
           {"converged", fit.converged},
           {"iterations", fit.iterations},
           {"evaluations", fit.evaluations},
           {"gradient_norm", fit.gradient_norm},
           {"mixing_proportions", number_array(fit.mixing_proportions)},
           {"mixing_proportion_ses", number_array(fit.mixing_proportion_ses)}};
    out << j.dump(2) << '\n';
}

FitResult read_fit_result(const std::string& path) {
    const json j = load_json_file(path);
    require_schema(j, "fit", path);
    FitResult fit;
    try {
        fit.parameter_names = j.at("names").get<std::vector<std::string>>();
        fit.estimate = read_number_array(j.at("estimate"));
        fit.standard_errors = read_number_array(j.at("standard_errors"));
        fit.loglik = j.at("loglik").get<double>();
        fit.converged = j.at("converged").get<bool>();
        fit.iterations = j.at("iterations").get<int>();
        fit.evaluations = j.value("evaluations", 0);
        fit.gradient_norm = j.value("gradient_norm", 0.0);
        fit.mixing_proportions = read_number_array(j.value("mixing_proportions", json::array()));
        fit.mixing_proportion_ses =
            read_number_array(j.value("mixing_proportion_ses", json::array()));
    } catch (const json::exception& e) {
        fail_config(path, e.what());
    }
    if (fit.estimate.size() != fit.parameter_names.size())
        fail_config(path, "estimate and names disagree in length");
    return fit;
}

Parameters parameters_from_fit(const ModelSpec& model, const FitResult& fit) {
    std::map<std::string, double> named;
    for (std::size_t i = 0; i < fit.parameter_names.size(); ++i)
        named[fit.parameter_names[i]] = fit.estimate[i];
    const ParameterSchema schema(model);
    for (const auto& name : schema.names())
        if (!named.count(name))
            throw config_error("fit result is missing parameter '" + name + "'");
    if (named.size() != static_cast<std::size_t>(schema.size()))
        throw config_error("fit result has parameters this model does not");
    return parameters_from_names(model, named);
}

void write_blb_aggregate(const std::string& path, const BlbResult& result,
                         const AssignmentStability* stability, double stability_threshold) {
    std::ofstream out(path);
    if (!out) throw config_error("cannot write '" + path + "'");
    json quantities = json::array();
    for (const auto& q : result.aggregated)
        quantities.push_back(json{{"name", q.name},
                                  {"labels", q.labels},
                                  {"point", number_array(q.point)},
                                  {"se", number_array(q.se)},
                                  {"lower", number_array(q.lower)},
                                  {"upper", number_array(q.upper)}});
    json j{{"kind", "blb-aggregate"},
           {"schema_version", kSchemaVersion},
           {"plan", plan_to_json(result.plan)},
           {"failed", result.failed},
           {"cells", result.cells.size()},
           {"quantities", std::move(quantities)}};
    if (stability)
        j["assignment_stability"] = json{{"threshold", stability_threshold},
                                         {"consistent_share", stability->consistent_share}};
    out << j.dump(2) << '\n';
}

BlbAggregate read_blb_aggregate(const std::string& path) {
    const json j = load_json_file(path);
    require_schema(j, "blb-aggregate", path);
    BlbAggregate agg;
    try {
        const json& jp = j.at("plan");
        agg.plan.n = jp.value("n", std::size_t{0});
        agg.plan.s = jp.value("s", 1);
        agg.plan.b = jp.value("b", std::size_t{0});
        agg.plan.r = jp.value("r", 1);
        agg.plan.gamma = jp.value("gamma", 0.0);
        agg.plan.mode = subset_mode_from_string(
            jp.value("mode", std::string{"disjoint-partition"}));
        agg.plan.seed = jp.value("seed", std::uint64_t{1});
        agg.failed = j.value("failed", 0);
        for (const auto& jq : j.at("quantities")) {
            AggregatedQuantity q;
            q.name = jq.at("name").get<std::string>();
            q.labels = jq.at("labels").get<std::vector<std::string>>();
            q.point = read_number_array(jq.at("point"));
            q.se = read_number_array(jq.at("se"));
            q.lower = read_number_array(jq.at("lower"));
            q.upper = read_number_array(jq.at("upper"));
            agg.quantities.push_back(std::move(q));
        }
        if (j.contains("assignment_stability")) {
            agg.has_stability = true;
            agg.stability_threshold = j.at("assignment_stability").value("threshold", 0.9);
            agg.consistent_share =
                j.at("assignment_stability").value("consistent_share", 0.0);
        }
    } catch (const json::exception& e) {
        fail_config(path, e.what());
    }
    return agg;
}

const AggregatedQuantity* find_quantity(const BlbAggregate& aggregate,
                                        const std::string& name) {
    for (const auto& q : aggregate.quantities)
        if (q.name == name) return &q;
    return nullptr;
}

void write_trajectories(const std::string& path, const Dataset& data,
                        const std::vector<DecodedTrajectory>& trajectories) {
    std::ofstream out(path);
    if (!out) throw config_error("cannot write '" + path + "'");
    const json header{{"kind", "trajectories"},
                      {"schema_version", kSchemaVersion},
                      {"count", trajectories.size()}};
    out << header.dump() << '\n';
    for (const auto& tr : trajectories) {
        out << json{{"id", data.records[tr.record].id},
                    {"entry_year", tr.entry_year},
                    {"group", tr.group},
                    {"log_probability", tr.log_probability},
                    {"states", tr.state_ids}}
                   .dump()
            << '\n';
    }
}

void write_population_series(const std::string& path, const PopulationSeries& series) {
    std::ofstream out(path);
    if (!out) throw config_error("cannot write '" + path + "'");
    json years = json::array();
    for (int t = 0; t < series.years(); ++t) {
        json jy{{"year", series.year_start + t},
                {"present", series.present[static_cast<std::size_t>(t)]},
                {"abroad_known", series.abroad_known[static_cast<std::size_t>(t)]},
                {"abroad_unknown", series.abroad_unknown[static_cast<std::size_t>(t)]},
                {"dead", series.dead[static_cast<std::size_t>(t)]}};
        if (!series.overcoverage_pct.empty())
            jy["overcoverage_pct"] = series.overcoverage_pct[static_cast<std::size_t>(t)];
        years.push_back(std::move(jy));
    }
    const json j{{"kind", "population"},
                 {"schema_version", kSchemaVersion},
                 {"year_start", series.year_start},
                 {"years", std::move(years)}};
    out << j.dump(2) << '\n';
}

void write_uncertain_sightings(const std::string& path,
                               const UncertainSightingsReport& report) {
    std::ofstream out(path);
    if (!out) throw config_error("cannot write '" + path + "'");
    out << "section,key,person_years,decoded_present,present_share\n";
    const auto rows = [&](const char* section,
                          const std::vector<UncertainSightingsReport::Row>& list) {
        for (const auto& row : list)
            out << section << ',' << row.key << ',' << row.person_years << ','
                << row.decoded_present << ',' << number_str(row.present_share) << '\n';
    };
    rows("category", report.by_category);
    rows("run_length", report.by_run_length);
}

void write_interval_csv(const std::string& path, const std::string& label_header,
                        const AggregatedQuantity& quantity, bool include_se) {
    std::ofstream out(path);
    if (!out) throw config_error("cannot write '" + path + "'");
    out << label_header << ",Estimate" << (include_se ? ",SE" : "") << ",Lower,Upper\n";
    for (std::size_t i = 0; i < quantity.labels.size(); ++i) {
        out << quantity.labels[i] << ',' << number_str(quantity.point[i]);
        if (include_se) out << ',' << number_str(quantity.se[i]);
        out << ',' << number_str(quantity.lower[i]) << ',' << number_str(quantity.upper[i])
            << '\n';
    }
}

void write_plot_data(const std::string& path, const AggregatedQuantity& quantity) {
    std::ofstream out(path);
    if (!out) throw config_error("cannot write '" + path + "'");
    const json j{{"kind", "plot-data"},
                 {"schema_version", kSchemaVersion},
                 {"name", quantity.name},
                 {"labels", quantity.labels},
                 {"estimate", number_array(quantity.point)},
                 {"lower", number_array(quantity.lower)},
                 {"upper", number_array(quantity.upper)}};
    out << j.dump(2) << '\n';
}

} // namespace crhmm
