#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "crhmm/covariates.hpp"

namespace crhmm {

/// One individual's register history. Observations are encoded categories,
/// one per year from the entry year through the final study year.
struct IndividualRecord {
    std::string id;
    int entry_year = 0;
    std::map<std::string, std::string> covariates; // record-sourced dimensions
    std::map<std::string, int> attributes;         // numeric, e.g. birth_year
    std::vector<std::uint32_t> observations;
};

struct Dataset {
    int year_start = 0; // inclusive
    int year_end = 0;   // inclusive
    int K = 0;          // registers used by the observation encoding
    std::vector<IndividualRecord> records;

    int years() const { return year_end - year_start + 1; }
    std::size_t size() const { return records.size(); }
};

} // namespace crhmm
