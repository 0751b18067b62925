// Command-line driver: generate-task, sample, estimate and pipeline.

#include "biasmeter/error.hpp"
#include "biasmeter/io.hpp"
#include "biasmeter/pipeline.hpp"

#include "CLI11.hpp"

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace biasmeter;

namespace {

struct TaskFlags {
    TaskConfig cfg;
    void add(CLI::App* app) {
        app->add_option("--task", cfg.task, "pendulum | synthetic-gp | mnist-subset");
        app->add_option("--n-train,--train", cfg.n_train, "training set size");
        app->add_option("--n-test,--test", cfg.n_test, "test set size");
        app->add_option("--images", cfg.images_path, "IDX image file (mnist-subset)");
        app->add_option("--labels", cfg.labels_path, "IDX label file (mnist-subset)");
        app->add_option("--test-images", cfg.test_images_path, "separate IDX test images");
        app->add_option("--test-labels", cfg.test_labels_path, "separate IDX test labels");
        app->add_flag("--standardize", cfg.standardize, "z-score pixel features with training statistics");
        app->add_option("--features", cfg.num_features, "random Fourier features (synthetic-gp)");
        app->add_option("--input-dim", cfg.input_dim, "input dimension (synthetic-gp)");
        app->add_option("--output-dim", cfg.output_dim, "output channels (synthetic-gp)");
        app->add_option("--feature-bandwidth", cfg.feature_bandwidth, "RBF bandwidth of the features (synthetic-gp)");
    }
};

struct SamplerFlags {
    std::string space = "kernel";
    std::string preset = "desk";
    std::optional<std::size_t> samples;
    std::optional<double> lr_alpha, lr_a, bandwidth, adam_lr, lr_fraction;
    std::optional<std::size_t> batch, epochs, group;
    std::optional<int> width, depth;
    bool exact = false;
    unsigned threads = 1;

    void add(CLI::App* app) {
        app->add_option("--space", space, "kernel | nn");
        app->add_option("--preset", preset, "desk | paper-mnist | paper-pendulum");
        app->add_option("--samples", samples, "number of hypotheses S");
        app->add_option("--lr-alpha", lr_alpha, "SGD step for alpha (0 = derived from the data)");
        app->add_option("--lr-a", lr_a, "SGD step for A (0 = derived from the data)");
        app->add_option("--lr-fraction", lr_fraction, "fraction of the stable step used when derived");
        app->add_option("--batch", batch, "mini-batch size");
        app->add_option("--epochs", epochs, "training epochs");
        app->add_option("--group", group, "kernel columns materialized per group");
        app->add_option("--bandwidth", bandwidth, "RBF bandwidth");
        app->add_flag("--exact", exact, "Cholesky posterior instead of SGD (N <= 4096)");
        app->add_option("--width", width, "MLP hidden width");
        app->add_option("--depth", depth, "MLP hidden layers");
        app->add_option("--adam-lr", adam_lr, "Adam learning rate");
        app->add_option("--threads", threads, "worker threads for network training");
    }

    SamplerConfig build() const {
        SamplerConfig cfg;
        cfg.space = parse_space(space);
        apply_preset(cfg, preset);
        if (samples) cfg.samples = *samples;
        if (bandwidth) cfg.bandwidth = *bandwidth;
        if (lr_alpha) cfg.sgd.lr_alpha = *lr_alpha;
        if (lr_a) cfg.sgd.lr_a = *lr_a;
        if (lr_fraction) cfg.lr_fraction = *lr_fraction;
        if (width) cfg.width = *width;
        if (depth) cfg.depth = *depth;
        if (adam_lr) cfg.train.adam.lr = *adam_lr;
        if (cfg.space == HypothesisSpace::kernel) {
            if (batch) cfg.sgd.batch_size = *batch;
            if (epochs) cfg.sgd.epochs = *epochs;
        } else {
            if (batch) cfg.train.batch_size = *batch;
            if (epochs) cfg.train.epochs = *epochs;
        }
        if (group) cfg.sgd.group_size = *group;
        cfg.exact = exact;
        cfg.threads = threads;
        return cfg;
    }
};

struct EstimateFlags {
    std::optional<double> epsilon;
    std::optional<double> accuracy;
    std::string fit = "mle";
    std::string tail = "auto";
    std::size_t bins = 40;

    void add(CLI::App* app) {
        app->add_option("--epsilon", epsilon, "test-loss threshold");
        app->add_option("--accuracy", accuracy, "model accuracy; epsilon = 1 - accuracy");
        app->add_option("--fit", fit, "mom | mle");
        app->add_option("--tail", tail, "auto | exact | sankaran | chernoff");
        app->add_option("--bins", bins, "histogram bins");
    }

    EstimateConfig build() const {
        EstimateConfig cfg;
        cfg.epsilon = epsilon;
        cfg.accuracy = accuracy;
        cfg.fit = parse_fit_method(fit);
        cfg.tail = parse_tail_request(tail);
        cfg.bins = bins;
        cfg.validate();
        return cfg;
    }
};

std::string joined_command(int argc, char** argv) {
    std::string out;
    for (int i = 0; i < argc; ++i) {
        if (i > 0) out += ' ';
        out += argv[i];
    }
    return out;
}

void print_bias(const Json& bias) {
    std::cout << "bias: " << bias["bias_bits"].get<double>() << " bits (" << bias["bias_nats"].get<double>()
              << " nats) at epsilon " << bias["epsilon"].get<double>() << ", tail " << bias["tail_mode"].get<std::string>()
              << "\n";
}

int run(int argc, char** argv) {
    CLI::App app{"Measure the inductive bias a task requires within a hypothesis space"};
    app.require_subcommand(1);

    std::uint64_t seed = 0;
    std::string out;

    TaskFlags gen_task;
    auto* gen = app.add_subcommand("generate-task", "write a task's dataset CSVs and manifest");
    gen_task.add(gen);
    gen->add_option("--seed", seed, "generator seed");
    gen->add_option("--out", out, "output directory");

    SamplerFlags sample_flags;
    std::string data_dir;
    auto* sample = app.add_subcommand("sample", "draw hypotheses and record their test-set predictions");
    sample_flags.add(sample);
    sample->add_option("--data", data_dir, "dataset directory")->required();
    sample->add_option("--seed", seed, "sampling seed");
    sample->add_option("--out", out, "output directory");

    EstimateFlags est_flags;
    std::string samples_dir;
    auto* estimate = app.add_subcommand("estimate", "fit the loss distribution and report the bias");
    est_flags.add(estimate);
    estimate->add_option("--data", data_dir, "dataset directory")->required();
    estimate->add_option("--samples-dir", samples_dir, "samples directory")->required();
    estimate->add_option("--out", out, "output directory");

    TaskFlags pipe_task;
    SamplerFlags pipe_sampler;
    EstimateFlags pipe_est;
    std::string manifest_path;
    auto* pipeline = app.add_subcommand("pipeline", "generate, sample and estimate with one seed");
    pipe_task.add(pipeline);
    pipe_sampler.add(pipeline);
    pipe_est.add(pipeline);
    pipeline->add_option("--seed", seed, "seed for every phase");
    pipeline->add_option("--out", out, "output directory");
    pipeline->add_option("--manifest", manifest_path, "re-run the configuration stored in a manifest");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    const std::string command = joined_command(argc, argv);
    const fs::path root = default_output_root();

    if (gen->parsed()) {
        TaskConfig cfg = gen_task.cfg;
        cfg.seed = seed;
        const fs::path dir = out.empty() ? root / cfg.task : fs::path(out);
        const Dataset data = build_task(cfg);
        Json manifest = cfg.to_json();
        manifest["input_dim"] = data.input_dim();
        manifest["output_dim"] = data.output_dim();
        manifest["command"] = command;
        manifest["tool_version"] = kToolVersion;
        write_dataset(data, dir, manifest);
        std::cout << "wrote " << data.train_size() << " train / " << data.test_size() << " test rows to " << dir.string()
                  << "\n";
    } else if (sample->parsed()) {
        SamplerConfig cfg = sample_flags.build();
        cfg.seed = seed;
        cfg.validate();
        const LoadedDataset loaded = read_dataset(data_dir);
        SampleRun result = run_sampler(loaded.data, cfg);
        result.meta["config"] = cfg.to_json();
        result.meta["dataset"] = fs::absolute(data_dir).lexically_normal().string();
        result.meta["wall_seconds"] = Json{{"fit", result.fit_seconds}, {"draw", result.draw_seconds}};
        result.meta["command"] = command;
        result.meta["tool_version"] = kToolVersion;
        const fs::path dir = out.empty() ? root / "samples" : fs::path(out);
        write_samples(result.samples, dir, result.meta);
        std::cout << "wrote " << result.samples.count() << " hypotheses to " << dir.string() << " (fit "
                  << result.fit_seconds << " s, draw " << result.draw_seconds << " s)\n";
    } else if (estimate->parsed()) {
        const EstimateConfig cfg = est_flags.build();
        const LoadedDataset loaded = read_dataset(data_dir);
        const LoadedSamples samples = read_samples(samples_dir);
        const EstimateRun result = run_estimate(loaded.data, samples.samples, cfg);
        const fs::path dir = out.empty() ? fs::path(samples_dir) : fs::path(out);
        write_json_file(dir / "bias.json", result.bias_json);
        write_histogram(result.histogram, dir / "histogram.csv");
        print_bias(result.bias_json);
    } else if (pipeline->parsed()) {
        PipelineConfig cfg;
        if (!manifest_path.empty()) {
            cfg = config_from_manifest(read_json_file(manifest_path));
        } else {
            cfg.estimate = pipe_est.build();
            cfg.task = pipe_task.cfg;
            cfg.sampler = pipe_sampler.build();
            cfg.seed = seed;
        }
        const fs::path dir = out.empty() ? root / "pipeline" : fs::path(out);
        const PipelineRun result = run_pipeline(cfg, command, dir);
        print_bias(result.estimate.bias_json);
        std::cout << "outputs in " << dir.string() << "\n";
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return exit_code::usage;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return exit_code::data;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return exit_code::numerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
