// End-to-end checks of the command line tool: every command is run as a real
// subprocess against config and data files on disk, and the exit codes and
// result files are inspected from the outside.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>

#include "doctest.h"
#include "json.hpp"

#include "crhmm/cli_io.hpp"

using namespace crhmm;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string kCli = CRHMM_CLI_PATH;

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() /
               ("crhmm_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void spit(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    out << text;
}

int run_cli(const TempDir& dir, const std::string& args, std::string* output = nullptr) {
    const std::string out_file = dir.file("cli_output.txt");
    const std::string cmd = "cd '" + dir.path.string() + "' && '" + kCli + "' " + args +
                            " > '" + out_file + "' 2>&1";
    const int rc = std::system(cmd.c_str());
    if (output) *output = slurp(out_file);
    REQUIRE(WIFEXITED(rc));
    return WEXITSTATUS(rc);
}

const char* kPipelineConfig = R"({
  "schema_version": 1,
  "seed": 7,
  "workers": 1,
  "model": {
    "states": "general3",
    "registers": ["income"]
  },
  "fit": {"max_iterations": 300},
  "blb": {"s": 2, "r": 3, "population_series": true},
  "simulate": {
    "year_start": 2000,
    "year_end": 2003,
    "entries_per_year": [120, 60, 0, 40],
    "truth": {"s.intercept": 2.0, "e.intercept": -1.5, "r.intercept": -0.5,
              "emission.income.main": 1.2}
  }
})";

} // namespace

TEST_SUITE("cli") {

TEST_CASE("help is exit zero and parse problems are exit two") {
    TempDir dir;
    std::string output;
    CHECK(run_cli(dir, "--help", &output) == 0);
    CHECK(output.find("simulate") != std::string::npos);
    CHECK(output.find("report") != std::string::npos);
    CHECK(run_cli(dir, "fit --help") == 0);
    CHECK(run_cli(dir, "") == 2);
    CHECK(run_cli(dir, "conquer") == 2);
    CHECK(run_cli(dir, "fit") == 2);                       // missing required flags
    CHECK(run_cli(dir, "simulate -c x.json -o out --styles loud") == 2);
}

TEST_CASE("five command pipeline produces a consistent workspace") {
    TempDir dir;
    spit(dir.file("config.json"), kPipelineConfig);
    std::string output;

    REQUIRE(run_cli(dir, "simulate -c config.json -o run", &output) == 0);
    CHECK(output.find("220 individuals") != std::string::npos);
    const Dataset data = read_dataset_jsonl(dir.file("run/data.jsonl"));
    CHECK(data.records.size() == 220);
    CHECK(data.year_start == 2000);
    CHECK(data.year_end == 2003);
    const GroundTruth truth = read_ground_truth(dir.file("run/truth.jsonl"), data);
    CHECK(truth.individuals.size() == data.records.size());

    REQUIRE(run_cli(dir, "fit -c config.json -d run/data.jsonl -o run", &output) == 0);
    const FitResult fit = read_fit_result(dir.file("run/fit.json"));
    CHECK(fit.converged);
    CHECK(fit.parameter_names.size() == 4);
    CHECK(fit.loglik < 0.0);

    REQUIRE(run_cli(dir, "blb -c config.json -d run/data.jsonl -o run", &output) == 0);
    CHECK(output.find("6 cells, 0 failed") != std::string::npos);
    const BlbAggregate aggregate = read_blb_aggregate(dir.file("run/blb_aggregate.json"));
    CHECK(aggregate.failed == 0);
    const AggregatedQuantity* params = find_quantity(aggregate, "parameters");
    REQUIRE(params != nullptr);
    CHECK(params->labels == fit.parameter_names);
    const AggregatedQuantity* population = find_quantity(aggregate, "population");
    REQUIRE(population != nullptr);
    CHECK(population->labels == std::vector<std::string>{"2000", "2001", "2002", "2003"});
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(population->lower[i] <= population->point[i]);
        CHECK(population->point[i] <= population->upper[i]);
        CHECK(population->point[i] <= 220.0);
    }
    CHECK(find_quantity(aggregate, "overcoverage") != nullptr);

    REQUIRE(run_cli(dir, "decode -c config.json -d run/data.jsonl -o run", &output) == 0);
    CHECK(output.find("decoded 220 records") != std::string::npos);
    CHECK(fs::exists(dir.file("run/trajectories.jsonl")));
    const json pop = json::parse(slurp(dir.file("run/population.json")));
    REQUIRE(pop.at("years").size() == 4);
    long entered = 0;
    const std::vector<int> entries{120, 60, 0, 40};
    for (std::size_t t = 0; t < 4; ++t) {
        entered += entries[t];
        const auto& jy = pop.at("years")[t];
        const long sum = jy.at("present").get<long>() + jy.at("abroad_known").get<long>() +
                         jy.at("abroad_unknown").get<long>() + jy.at("dead").get<long>();
        CHECK(sum == entered);
        CHECK(jy.contains("overcoverage_pct"));
    }
    // No false positive component in this model, so no sightings report.
    CHECK_FALSE(fs::exists(dir.file("run/uncertain_sightings.csv")));

    REQUIRE(run_cli(dir, "report -o run", &output) == 0);
    CHECK(output.find("report_parameters.csv") != std::string::npos);
    const std::string table = slurp(dir.file("run/report_parameters.csv"));
    CHECK(table.rfind("Parameter,Estimate,SE,Lower,Upper\n", 0) == 0);
    CHECK(table.find("s.intercept,") != std::string::npos);
    CHECK(fs::exists(dir.file("run/report_population.csv")));
    CHECK(fs::exists(dir.file("run/report_population_plot.json")));
    CHECK(fs::exists(dir.file("run/report_overcoverage.csv")));
    CHECK_FALSE(fs::exists(dir.file("run/report_mixing.csv"))); // single group
}

TEST_CASE("repeated runs yield byte-identical results") {
    TempDir dir;
    spit(dir.file("config.json"), kPipelineConfig);
    REQUIRE(run_cli(dir, "simulate -c config.json -o a") == 0);
    REQUIRE(run_cli(dir, "simulate -c config.json -o b") == 0);
    CHECK(slurp(dir.file("a/data.jsonl")) == slurp(dir.file("b/data.jsonl")));
    CHECK(slurp(dir.file("a/truth.jsonl")) == slurp(dir.file("b/truth.jsonl")));

    REQUIRE(run_cli(dir, "fit -c config.json -d a/data.jsonl -o a") == 0);
    REQUIRE(run_cli(dir, "fit -c config.json -d b/data.jsonl -o b") == 0);
    CHECK(slurp(dir.file("a/fit.json")) == slurp(dir.file("b/fit.json")));

    REQUIRE(run_cli(dir, "blb -c config.json -d a/data.jsonl -o a") == 0);
    REQUIRE(run_cli(dir, "blb -c config.json -d b/data.jsonl -o b") == 0);
    CHECK(slurp(dir.file("a/blb_cells.jsonl")) == slurp(dir.file("b/blb_cells.jsonl")));
    CHECK(slurp(dir.file("a/blb_aggregate.json")) == slurp(dir.file("b/blb_aggregate.json")));

    // Worker count must not change decoded output.
    REQUIRE(run_cli(dir, "decode -c config.json -d a/data.jsonl -o a -w 1") == 0);
    REQUIRE(run_cli(dir, "decode -c config.json -d b/data.jsonl -o b -w 4") == 0);
    CHECK(slurp(dir.file("a/trajectories.jsonl")) == slurp(dir.file("b/trajectories.jsonl")));
    CHECK(slurp(dir.file("a/population.json")) == slurp(dir.file("b/population.json")));

    // A different seed changes the simulated data.
    REQUIRE(run_cli(dir, "simulate -c config.json -o c -s 99") == 0);
    CHECK(slurp(dir.file("a/data.jsonl")) != slurp(dir.file("c/data.jsonl")));
}

TEST_CASE("bootstrap resume rebuilds the aggregate from kept cells") {
    TempDir dir;
    spit(dir.file("config.json"), kPipelineConfig);
    REQUIRE(run_cli(dir, "simulate -c config.json -o run") == 0);
    REQUIRE(run_cli(dir, "blb -c config.json -d run/data.jsonl -o run") == 0);
    const std::string aggregate = slurp(dir.file("run/blb_aggregate.json"));
    const std::string cells = slurp(dir.file("run/blb_cells.jsonl"));

    fs::remove(dir.file("run/blb_aggregate.json"));
    std::string output;
    REQUIRE(run_cli(dir, "blb -c config.json -d run/data.jsonl -o run --resume", &output) == 0);
    CHECK(slurp(dir.file("run/blb_aggregate.json")) == aggregate);
    CHECK(slurp(dir.file("run/blb_cells.jsonl")) == cells);

    // Changing the plan invalidates the stream instead of silently mixing runs.
    CHECK(run_cli(dir, "blb -c config.json -d run/data.jsonl -o run --resume -s 4", &output) ==
          2);
    CHECK(output.find("config error") != std::string::npos);
}

TEST_CASE("single resample intervals collapse to the point") {
    TempDir dir;
    std::string config = kPipelineConfig;
    const std::string r3 = "\"r\": 3";
    config.replace(config.find(r3), r3.size(), "\"r\": 1");
    spit(dir.file("config.json"), config);
    REQUIRE(run_cli(dir, "simulate -c config.json -o run") == 0);
    REQUIRE(run_cli(dir, "blb -c config.json -d run/data.jsonl -o run") == 0);
    const BlbAggregate aggregate = read_blb_aggregate(dir.file("run/blb_aggregate.json"));
    const AggregatedQuantity* params = find_quantity(aggregate, "parameters");
    REQUIRE(params != nullptr);
    for (std::size_t i = 0; i < params->point.size(); ++i) {
        CHECK(params->lower[i] == params->point[i]);
        CHECK(params->upper[i] == params->point[i]);
        CHECK(params->se[i] == 0.0);
    }
}

TEST_CASE("error classes map to distinct exit codes") {
    TempDir dir;
    spit(dir.file("config.json"), kPipelineConfig);
    std::string output;

    SUBCASE("missing config file is exit two") {
        CHECK(run_cli(dir, "simulate -c nowhere.json -o run", &output) == 2);
        CHECK(output.find("config error") != std::string::npos);
    }
    SUBCASE("config without simulate section is exit two") {
        spit(dir.file("bare.json"),
             R"({"schema_version": 1, "model": {"states": "general3", "registers": ["a"]}})");
        CHECK(run_cli(dir, "simulate -c bare.json -o run", &output) == 2);
        CHECK(output.find("no simulate section") != std::string::npos);
    }
    SUBCASE("missing data file is exit three") {
        CHECK(run_cli(dir, "fit -c config.json -d nowhere.jsonl -o run", &output) == 3);
        CHECK(output.find("data error") != std::string::npos);
    }
    SUBCASE("corrupt category code is exit three and names the record") {
        spit(dir.file("bad.jsonl"),
             R"({"kind":"records","schema_version":1,"year_start":2000,"year_end":2001,"K":1})"
             "\n"
             R"({"id":"alpha","entry_year":2000,"observations":[[2000,1],[2001,77]]})" "\n");
        CHECK(run_cli(dir, "fit -c config.json -d bad.jsonl -o run", &output) == 3);
        CHECK(output.find("alpha") != std::string::npos);
    }
    SUBCASE("register count mismatch is exit two") {
        spit(dir.file("wide.json"),
             R"({"schema_version": 1,
                 "model": {"states": "general3", "registers": ["a", "b"]}})");
        REQUIRE(run_cli(dir, "simulate -c config.json -o run") == 0);
        CHECK(run_cli(dir, "fit -c wide.json -d run/data.jsonl -o run", &output) == 2);
        CHECK(output.find("registers") != std::string::npos);
    }
    SUBCASE("decode before fit is exit three") {
        REQUIRE(run_cli(dir, "simulate -c config.json -o run") == 0);
        CHECK(run_cli(dir, "decode -c config.json -d run/data.jsonl -o run", &output) == 3);
        CHECK(output.find("fit") != std::string::npos);
    }
    SUBCASE("report before bootstrap is exit three") {
        CHECK(run_cli(dir, "report -o run", &output) == 3);
        CHECK(output.find("blb") != std::string::npos);
    }
    SUBCASE("impossible data under the model is exit four") {
        // A recorded death forces the dead state, which can produce no
        // register pattern the following year; the likelihood is zero
        // everywhere and optimization cannot start.
        spit(dir.file("sweden.json"),
             R"({"schema_version": 1,
                 "model": {"states": "sweden8", "registers": ["income"]}})");
        spit(dir.file("impossible.jsonl"),
             R"({"kind":"records","schema_version":1,"year_start":2000,"year_end":2001,"K":1})"
             "\n"
             R"({"id":"ghost","entry_year":2000,"observations":[[2000,4],[2001,1]]})" "\n");
        CHECK(run_cli(dir, "fit -c sweden.json -d impossible.jsonl -o run", &output) == 4);
        CHECK(output.find("numeric error") != std::string::npos);
    }
}

} // TEST_SUITE
