#include "biasmeter/pipeline.hpp"

#include "biasmeter/error.hpp"
#include "biasmeter/tasks.hpp"

#include <chrono>
#include <cstdlib>
#include <exception>
#include <functional>

namespace biasmeter {

namespace fs = std::filesystem;

fs::path default_output_root() {
    const char* env = std::getenv(kDataDirEnv);
    return (env != nullptr && *env != '\0') ? fs::path(env) : fs::path("biasmeter-out");
}

namespace {

template <typename T>
T get_or(const Json& j, const char* key, T fallback) {
    if (!j.contains(key) || j[key].is_null()) return fallback;
    try {
        return j[key].get<T>();
    } catch (const Json::exception& e) {
        throw DataError(std::string("manifest field '") + key + "': " + e.what());
    }
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// Rethrows the active exception with `phase` prefixed, keeping its category.
[[noreturn]] void rethrow_in_phase(const std::string& phase) {
    try {
        throw;
    } catch (const UsageError& e) {
        throw UsageError(phase + ": " + e.what());
    } catch (const DataError& e) {
        throw DataError(phase + ": " + e.what());
    } catch (const NumericalError& e) {
        throw NumericalError(phase + ": " + e.what());
    } catch (const std::exception& e) {
        throw std::runtime_error(phase + ": " + e.what());
    }
}

} // namespace

// ---------------------------------------------------------------------------
// Tasks

void TaskConfig::validate() const {
    if (task != "pendulum" && task != "synthetic-gp" && task != "mnist-subset")
        throw UsageError("unknown task '" + task + "' (expected pendulum, synthetic-gp or mnist-subset)");
    if (n_train == 0 || n_test == 0) throw UsageError("--n-train and --n-test must be >= 1");
    if (task == "mnist-subset") {
        if (images_path.empty() || labels_path.empty())
            throw UsageError("mnist-subset needs --images and --labels IDX paths");
        if (test_images_path.empty() != test_labels_path.empty())
            throw UsageError("give both --test-images and --test-labels, or neither");
    }
    if (task == "synthetic-gp" && (num_features < 1 || input_dim < 1 || output_dim < 1 || !(feature_bandwidth > 0.0)))
        throw UsageError("synthetic-gp needs positive --features, --input-dim, --output-dim and bandwidth");
}

Json TaskConfig::to_json() const {
    Json j;
    j["task"] = task;
    j["n_train"] = n_train;
    j["n_test"] = n_test;
    j["seed"] = seed;
    if (task == "synthetic-gp") {
        j["num_features"] = num_features;
        j["input_dim"] = input_dim;
        j["output_dim"] = output_dim;
        j["feature_bandwidth"] = feature_bandwidth;
    }
    if (task == "mnist-subset") {
        j["images_path"] = images_path;
        j["labels_path"] = labels_path;
        j["test_images_path"] = test_images_path;
        j["test_labels_path"] = test_labels_path;
        j["standardize"] = standardize;
    }
    return j;
}

TaskConfig TaskConfig::from_json(const Json& j) {
    TaskConfig c;
    c.task = get_or(j, "task", c.task);
    c.n_train = get_or(j, "n_train", c.n_train);
    c.n_test = get_or(j, "n_test", c.n_test);
    c.seed = get_or(j, "seed", c.seed);
    c.num_features = get_or(j, "num_features", c.num_features);
    c.input_dim = get_or(j, "input_dim", c.input_dim);
    c.output_dim = get_or(j, "output_dim", c.output_dim);
    c.feature_bandwidth = get_or(j, "feature_bandwidth", c.feature_bandwidth);
    c.images_path = get_or(j, "images_path", c.images_path);
    c.labels_path = get_or(j, "labels_path", c.labels_path);
    c.test_images_path = get_or(j, "test_images_path", c.test_images_path);
    c.test_labels_path = get_or(j, "test_labels_path", c.test_labels_path);
    c.standardize = get_or(j, "standardize", c.standardize);
    return c;
}

Dataset build_task(const TaskConfig& cfg) {
    cfg.validate();
    if (cfg.task == "pendulum") return generate_pendulum_dataset(cfg.n_train, cfg.n_test, cfg.seed);
    if (cfg.task == "synthetic-gp") {
        const SyntheticGpSpec spec =
            make_synthetic_gp_spec(cfg.num_features, cfg.input_dim, cfg.output_dim, cfg.feature_bandwidth, cfg.seed);
        return generate_synthetic_gp_task(spec, cfg.n_train, cfg.n_test);
    }

    constexpr int kClasses = 10;
    const LoadedImages pool = load_idx(cfg.images_path, cfg.labels_path);
    Dataset data;
    if (cfg.test_images_path.empty()) {
        data = carve_classification_task("mnist-subset", pool.images, pool.labels, kClasses, cfg.n_train,
                                         cfg.n_test, cfg.seed);
    } else {
        const LoadedImages test = load_idx(cfg.test_images_path, cfg.test_labels_path);
        Dataset full;
        full.name = "mnist-subset";
        full.train_x = pool.images;
        full.train_y = one_hot(pool.labels, kClasses);
        full.test_x = test.images;
        full.test_y = one_hot(test.labels, kClasses);
        data = subsample(full, cfg.n_train, cfg.n_test, cfg.seed);
    }
    if (cfg.standardize) standardize_inputs(data);
    return data;
}

// ---------------------------------------------------------------------------
// Sampling

std::string to_string(HypothesisSpace space) { return space == HypothesisSpace::kernel ? "kernel" : "nn"; }

HypothesisSpace parse_space(const std::string& name) {
    if (name == "kernel") return HypothesisSpace::kernel;
    if (name == "nn") return HypothesisSpace::nn;
    throw UsageError("unknown hypothesis space '" + name + "' (expected kernel or nn)");
}

const std::vector<std::string>& preset_names() {
    static const std::vector<std::string> names{"desk", "paper-mnist", "paper-pendulum"};
    return names;
}

void apply_preset(SamplerConfig& cfg, const std::string& preset) {
    const bool kernel = cfg.space == HypothesisSpace::kernel;
    SgdConfig& sgd = cfg.sgd;
    if (preset == "desk") {
        sgd.lr_alpha = 0.0;
        sgd.lr_a = 0.0;
        sgd.batch_size = 64;
        sgd.group_size = 1024;
        sgd.epochs = 20;
        cfg.lr_fraction = 0.5;
        cfg.width = 64;
        cfg.depth = 3;
        cfg.train.adam = AdamConfig{};
        cfg.train.epochs = 10;
        cfg.train.batch_size = 128;
        cfg.samples = 1000;
    } else if (preset == "paper-mnist" || preset == "paper-pendulum") {
        const bool mnist = preset == "paper-mnist";
        sgd.lr_alpha = mnist ? 1e-4 : 1e-3;
        sgd.lr_a = mnist ? 1e-5 : 1e-4;
        sgd.batch_size = mnist ? 128 : 64;
        sgd.group_size = mnist ? 2048 : 1024;
        sgd.epochs = mnist ? 20 : 500;
        cfg.width = 512;
        cfg.depth = 10;
        cfg.train.adam = AdamConfig{};
        cfg.train.epochs = 10;
        cfg.train.batch_size = 128;
        cfg.samples = kernel ? 100000 : 100;
    } else {
        throw UsageError("unknown preset '" + preset + "' (expected desk, paper-mnist or paper-pendulum)");
    }
    cfg.bandwidth = 1.0;
    cfg.preset = preset;
}

void SamplerConfig::validate() const {
    if (samples == 0) throw UsageError("--samples must be >= 1");
    if (space == HypothesisSpace::kernel) {
        KernelSpec{KernelFamily::gaussian_rbf, bandwidth, 1}.validate();
        if (sgd.lr_alpha < 0.0 || sgd.lr_a < 0.0) throw UsageError("SGD learning rates must be >= 0 (0 = derived)");
        if (sgd.batch_size == 0 || sgd.epochs == 0 || sgd.group_size == 0)
            throw UsageError("--batch, --epochs and --group must be >= 1");
        if (!(lr_fraction > 0.0)) throw UsageError("lr_fraction must be > 0");
    } else {
        MlpArch{1, width, depth, 1}.validate();
        train.validate();
    }
    if (threads == 0) throw UsageError("--threads must be >= 1");
}

Json SamplerConfig::to_json() const {
    Json j;
    j["space"] = to_string(space);
    j["preset"] = preset;
    j["samples"] = samples;
    j["seed"] = seed;
    j["threads"] = threads;
    if (space == HypothesisSpace::kernel) {
        j["bandwidth"] = bandwidth;
        j["exact"] = exact;
        j["lr_alpha"] = sgd.lr_alpha;
        j["lr_a"] = sgd.lr_a;
        j["lr_fraction"] = lr_fraction;
        j["batch"] = sgd.batch_size;
        j["epochs"] = sgd.epochs;
        j["group"] = sgd.group_size;
    } else {
        j["width"] = width;
        j["depth"] = depth;
        j["adam_lr"] = train.adam.lr;
        j["adam_beta1"] = train.adam.beta1;
        j["adam_beta2"] = train.adam.beta2;
        j["adam_eps"] = train.adam.eps;
        j["epochs"] = train.epochs;
        j["batch"] = train.batch_size;
    }
    return j;
}

SamplerConfig SamplerConfig::from_json(const Json& j) {
    SamplerConfig c;
    c.space = parse_space(get_or(j, "space", std::string("kernel")));
    apply_preset(c, get_or(j, "preset", std::string("desk")));
    c.samples = get_or(j, "samples", c.samples);
    c.seed = get_or(j, "seed", c.seed);
    c.threads = get_or(j, "threads", c.threads);
    if (c.space == HypothesisSpace::kernel) {
        c.bandwidth = get_or(j, "bandwidth", c.bandwidth);
        c.exact = get_or(j, "exact", c.exact);
        c.sgd.lr_alpha = get_or(j, "lr_alpha", c.sgd.lr_alpha);
        c.sgd.lr_a = get_or(j, "lr_a", c.sgd.lr_a);
        c.lr_fraction = get_or(j, "lr_fraction", c.lr_fraction);
        c.sgd.batch_size = get_or(j, "batch", c.sgd.batch_size);
        c.sgd.epochs = get_or(j, "epochs", c.sgd.epochs);
        c.sgd.group_size = get_or(j, "group", c.sgd.group_size);
    } else {
        c.width = get_or(j, "width", c.width);
        c.depth = get_or(j, "depth", c.depth);
        c.train.adam.lr = get_or(j, "adam_lr", c.train.adam.lr);
        c.train.adam.beta1 = get_or(j, "adam_beta1", c.train.adam.beta1);
        c.train.adam.beta2 = get_or(j, "adam_beta2", c.train.adam.beta2);
        c.train.adam.eps = get_or(j, "adam_eps", c.train.adam.eps);
        c.train.epochs = get_or(j, "epochs", c.train.epochs);
        c.train.batch_size = get_or(j, "batch", c.train.batch_size);
    }
    return c;
}

SampleRun run_sampler(const Dataset& data, const SamplerConfig& cfg) {
    cfg.validate();
    data.validate();
    SampleRun run;
    Json& meta = run.meta;
    const auto start = std::chrono::steady_clock::now();

    if (cfg.space == HypothesisSpace::kernel) {
        const KernelSpec spec{KernelFamily::gaussian_rbf, cfg.bandwidth, static_cast<int>(data.output_dim())};
        PosteriorSolve solve;
        SgdConfig sgd = cfg.sgd;
        sgd.seed = cfg.seed;
        if (cfg.exact) {
            solve = exact_posterior(data, spec);
        } else {
            if (sgd.lr_alpha == 0.0 || sgd.lr_a == 0.0) {
                const double derived = suggest_learning_rate(data, spec, sgd.batch_size, cfg.lr_fraction);
                if (sgd.lr_alpha == 0.0) sgd.lr_alpha = derived;
                if (sgd.lr_a == 0.0) sgd.lr_a = derived;
            }
            solve = kernel_posterior(data, spec, sgd);
        }
        run.fit_seconds = seconds_since(start);

        const std::uint64_t draw_seed = cfg.seed + 1;
        const auto draw_start = std::chrono::steady_clock::now();
        const SampleSource source = cfg.exact ? SampleSource::exact_oracle : SampleSource::kernel;
        run.samples = draw_samples(solve, cfg.samples, draw_seed, source);
        run.draw_seconds = seconds_since(draw_start);

        meta["source"] = to_string(source);
        meta["seed"] = draw_seed;
        meta["sgd_seed"] = cfg.exact ? Json() : Json(sgd.seed);
        if (!cfg.exact) {
            meta["lr_alpha"] = sgd.lr_alpha;
            meta["lr_a"] = sgd.lr_a;
        }
        meta["residual_alpha"] = solve.residual_alpha;
        meta["residual_A"] = solve.residual_a;
        meta["clamped_mass"] = solve.clamped_mass;
        meta["clamped_mass_excessive"] = solve.clamped_mass_excessive();
    } else {
        const MlpArch arch{static_cast<int>(data.input_dim()), cfg.width, cfg.depth, static_cast<int>(data.output_dim())};
        TrainConfig train = cfg.train;
        train.seed = cfg.seed;
        NnSamples nn = sample_nn_hypotheses(arch, data, cfg.samples, train, cfg.threads);
        run.fit_seconds = seconds_since(start);
        run.samples = std::move(nn.samples);

        meta["source"] = to_string(SampleSource::neural_net);
        meta["seed"] = train.seed;
        meta["arch"] = Json{{"input_dim", arch.input_dim},
                            {"hidden_width", arch.hidden_width},
                            {"hidden_layers", arch.hidden_layers},
                            {"output_dim", arch.output_dim}};
        meta["optimizer"] = Json{{"name", "adam"},
                                 {"lr", train.adam.lr},
                                 {"beta1", train.adam.beta1},
                                 {"beta2", train.adam.beta2},
                                 {"eps", train.adam.eps},
                                 {"epochs", train.epochs},
                                 {"batch", train.batch_size}};
        meta["final_train_losses"] = nn.final_train_losses;
    }
    meta["S"] = run.samples.count();
    meta["n"] = run.samples.points();
    meta["k"] = run.samples.channels();
    return run;
}

// ---------------------------------------------------------------------------
// Estimation

void EstimateConfig::validate() const {
    if (epsilon.has_value() == accuracy.has_value())
        throw UsageError("give exactly one of --epsilon or --accuracy");
    if (epsilon && !(*epsilon > 0.0)) throw UsageError("--epsilon must be > 0");
    if (accuracy && !(*accuracy >= 0.0 && *accuracy <= 1.0)) throw UsageError("--accuracy must lie in [0, 1]");
    if (bins == 0) throw UsageError("--bins must be >= 1");
}

Json EstimateConfig::to_json() const {
    Json j;
    j["epsilon"] = epsilon ? Json(*epsilon) : Json();
    j["accuracy"] = accuracy ? Json(*accuracy) : Json();
    j["fit"] = to_string(fit);
    j["tail"] = to_string(tail);
    j["bins"] = bins;
    return j;
}

EstimateConfig EstimateConfig::from_json(const Json& j) {
    EstimateConfig c;
    if (j.contains("epsilon") && !j["epsilon"].is_null()) c.epsilon = j["epsilon"].get<double>();
    if (j.contains("accuracy") && !j["accuracy"].is_null()) c.accuracy = j["accuracy"].get<double>();
    c.fit = parse_fit_method(get_or(j, "fit", std::string("mle")));
    c.tail = parse_tail_request(get_or(j, "tail", std::string("auto")));
    c.bins = get_or(j, "bins", c.bins);
    return c;
}

EstimateRun run_estimate(const Dataset& data, const HypothesisSamples& samples, const EstimateConfig& cfg) {
    cfg.validate();
    const auto start = std::chrono::steady_clock::now();
    EstimateRun run;
    run.losses = test_losses(samples, data);
    run.losses.validate(3);
    run.mom = fit_mom(run.losses);
    run.fit = cfg.fit == FitMethod::mle ? fit_mle(run.losses, run.mom) : run.mom;
    run.bias = cfg.accuracy ? bias_of_model(*cfg.accuracy, run.fit, cfg.tail)
                            : inductive_bias(run.fit, *cfg.epsilon, cfg.tail);
    run.histogram = loss_histogram(run.losses, run.fit, cfg.bins);
    run.bias_json = bias_to_json(run.fit, run.bias, run.losses.losses.size());
    if (cfg.accuracy) run.bias_json["accuracy"] = *cfg.accuracy;
    run.bias_json["loss_normalization"] = run.losses.normalization;
    run.bias_json["mom"] = fit_to_json(run.mom);
    run.seconds = seconds_since(start);
    return run;
}

// ---------------------------------------------------------------------------
// Pipeline

void PipelineConfig::validate() const {
    estimate.validate();
    task.validate();
    sampler.validate();
}

Json PipelineConfig::to_json() const {
    Json j;
    j["seed"] = seed;
    j["task"] = task.to_json();
    j["sampler"] = sampler.to_json();
    j["estimate"] = estimate.to_json();
    return j;
}

PipelineConfig PipelineConfig::from_json(const Json& j) {
    PipelineConfig c;
    c.seed = get_or(j, "seed", c.seed);
    if (j.contains("task")) c.task = TaskConfig::from_json(j["task"]);
    if (j.contains("sampler")) c.sampler = SamplerConfig::from_json(j["sampler"]);
    if (j.contains("estimate")) c.estimate = EstimateConfig::from_json(j["estimate"]);
    c.task.seed = c.seed;
    c.sampler.seed = c.seed;
    return c;
}

PipelineConfig config_from_manifest(const Json& manifest) {
    if (!manifest.contains("config")) throw DataError("manifest has no 'config' section");
    return PipelineConfig::from_json(manifest["config"]);
}

PipelineRun run_pipeline(const PipelineConfig& input, const std::string& command, const fs::path& out_dir) {
    PipelineConfig cfg = input;
    cfg.task.seed = cfg.seed;
    cfg.sampler.seed = cfg.seed;
    cfg.validate();

    PipelineRun run;
    Json& m = run.manifest;
    m["tool_version"] = kToolVersion;
    m["command"] = command;
    m["config"] = cfg.to_json();

    auto phase = [](const std::string& name, const std::function<void()>& body) {
        try {
            body();
        } catch (...) {
            rethrow_in_phase(name);
        }
    };

    const auto t0 = std::chrono::steady_clock::now();
    phase("generate-task", [&] { run.data = build_task(cfg.task); });
    const double generate_seconds = seconds_since(t0);
    phase("sample", [&] { run.sample = run_sampler(run.data, cfg.sampler); });
    phase("estimate", [&] { run.estimate = run_estimate(run.data, run.sample.samples, cfg.estimate); });

    m["sampling"] = run.sample.meta;
    if (m["sampling"].contains("final_train_losses")) m["sampling"].erase("final_train_losses");
    m["fit"] = fit_to_json(run.estimate.fit);
    m["epsilon"] = run.estimate.bias.epsilon;
    m["bias"] = run.estimate.bias_json;
    m["wall_seconds"] = Json{{"generate", generate_seconds},
                             {"fit", run.sample.fit_seconds},
                             {"draw", run.sample.draw_seconds},
                             {"estimate", run.estimate.seconds}};

    if (!out_dir.empty()) {
        phase("write", [&] {
            Json dataset_manifest = cfg.task.to_json();
            write_dataset(run.data, out_dir / "dataset", dataset_manifest);
            write_samples(run.sample.samples, out_dir / "samples", run.sample.meta);
            write_json_file(out_dir / "bias.json", run.estimate.bias_json);
            write_histogram(run.estimate.histogram, out_dir / "histogram.csv");
            write_json_file(out_dir / "manifest.json", m);
        });
    }
    return run;
}

} // namespace biasmeter
