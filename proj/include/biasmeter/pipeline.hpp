#pragma once

#include "biasmeter/dataset.hpp"
#include "biasmeter/gp_sampler.hpp"
#include "biasmeter/io.hpp"
#include "biasmeter/loss_model.hpp"
#include "biasmeter/nn_sampler.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace biasmeter {

inline constexpr const char* kToolVersion = "0.1.0";

/// Environment variable naming the default output root.
inline constexpr const char* kDataDirEnv = "BIAS_METER_DATA_DIR";

/// Output root: the value of BIAS_METER_DATA_DIR, else "biasmeter-out".
std::filesystem::path default_output_root();

struct TaskConfig {
    std::string task = "pendulum"; // pendulum | synthetic-gp | mnist-subset
    std::size_t n_train = 2000;
    std::size_t n_test = 100;
    std::uint64_t seed = 0;

    // synthetic-gp
    int num_features = 4096;
    int input_dim = 2;
    int output_dim = 1;
    double feature_bandwidth = 1.0;

    // mnist-subset; test paths optional (a disjoint test split is carved from
    // the training pool when absent)
    std::string images_path;
    std::string labels_path;
    std::string test_images_path;
    std::string test_labels_path;
    bool standardize = false;

    void validate() const;
    Json to_json() const;
    static TaskConfig from_json(const Json& j);
};

Dataset build_task(const TaskConfig& cfg);

enum class HypothesisSpace { kernel, nn };

std::string to_string(HypothesisSpace space);
HypothesisSpace parse_space(const std::string& name);

struct SamplerConfig {
    HypothesisSpace space = HypothesisSpace::kernel;
    std::string preset = "desk";
    std::size_t samples = 1000;
    std::uint64_t seed = 0;

    // kernel space; a learning rate of 0 means "derive from the data" via
    // suggest_learning_rate with lr_fraction
    double bandwidth = 1.0;
    SgdConfig sgd;
    double lr_fraction = 0.5;
    bool exact = false; // Cholesky oracle instead of SGD

    // neural-net space
    int width = 64;
    int depth = 3;
    TrainConfig train;
    unsigned threads = 1;

    void validate() const;
    Json to_json() const;
    static SamplerConfig from_json(const Json& j);
};

/// Resets every hyperparameter named by the preset (space, seed and thread
/// count are kept). Unknown names raise UsageError.
void apply_preset(SamplerConfig& cfg, const std::string& preset);
const std::vector<std::string>& preset_names();

struct SampleRun {
    HypothesisSamples samples;
    Json meta;               // written next to samples.csv
    double fit_seconds = 0.0;  // SGD / Cholesky / network training
    double draw_seconds = 0.0; // pathwise draws (kernel space only)
};

SampleRun run_sampler(const Dataset& data, const SamplerConfig& cfg);

struct EstimateConfig {
    std::optional<double> epsilon;
    std::optional<double> accuracy;
    FitMethod fit = FitMethod::mle;
    TailRequest tail = TailRequest::automatic;
    std::size_t bins = 40;

    /// Exactly one of epsilon / accuracy must be set.
    void validate() const;
    Json to_json() const;
    static EstimateConfig from_json(const Json& j);
};

struct EstimateRun {
    LossSamples losses;
    ChiSquaredFit mom;
    ChiSquaredFit fit; // the fit used for the bias (mom or mle)
    BiasEstimate bias;
    std::vector<HistogramBin> histogram;
    Json bias_json;
    double seconds = 0.0;
};

EstimateRun run_estimate(const Dataset& data, const HypothesisSamples& samples, const EstimateConfig& cfg);

struct PipelineConfig {
    TaskConfig task;
    SamplerConfig sampler;
    EstimateConfig estimate;
    std::uint64_t seed = 0; // copied into task and sampler seeds

    void validate() const;
    Json to_json() const;
    static PipelineConfig from_json(const Json& j);
};

struct PipelineRun {
    Dataset data;
    SampleRun sample;
    EstimateRun estimate;
    Json manifest;
};

/// Runs generate, sample and estimate in sequence. When `out_dir` is non-empty
/// the dataset, samples, bias.json, histogram.csv and manifest.json are
/// written below it. Failures are rethrown with the phase name prefixed.
PipelineRun run_pipeline(const PipelineConfig& cfg, const std::string& command,
                         const std::filesystem::path& out_dir = {});

/// The configuration recorded in a manifest written by run_pipeline.
PipelineConfig config_from_manifest(const Json& manifest);

} // namespace biasmeter
