#pragma once

#include "biasmeter/dataset.hpp"
#include "biasmeter/gp_sampler.hpp"
#include "biasmeter/loss_model.hpp"

#include "json.hpp"

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace biasmeter {

using Json = nlohmann::ordered_json;

/// Shortest decimal text that parses back to the same double.
std::string format_double(double value);
/// Throws DataError naming `where` when the text is not a complete number.
double parse_double(std::string_view text, const std::string& where);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& content);
Json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const Json& value);

// Dataset directory: inputs.csv (split,row,col,value), targets.csv
// (split,row,channel,value) and dataset.json (the generation manifest).
inline constexpr const char* kInputsFile = "inputs.csv";
inline constexpr const char* kTargetsFile = "targets.csv";
inline constexpr const char* kDatasetManifestFile = "dataset.json";

void write_dataset(const Dataset& data, const std::filesystem::path& dir, const Json& manifest);

struct LoadedDataset {
    Dataset data;
    Json manifest;
};

LoadedDataset read_dataset(const std::filesystem::path& dir);

// Samples directory: samples.csv (sample,point,channel,value) and samples.json.
inline constexpr const char* kSamplesFile = "samples.csv";
inline constexpr const char* kSamplesMetaFile = "samples.json";

void write_samples(const HypothesisSamples& samples, const std::filesystem::path& dir, const Json& meta);

struct LoadedSamples {
    HypothesisSamples samples;
    Json meta;
};

LoadedSamples read_samples(const std::filesystem::path& dir);

/// bin_left,bin_right,count,fitted_pdf
void write_histogram(const std::vector<HistogramBin>& bins, const std::filesystem::path& path);

Json fit_to_json(const ChiSquaredFit& fit);
Json bias_to_json(const ChiSquaredFit& fit, const BiasEstimate& bias, std::size_t sample_count);

} // namespace biasmeter
