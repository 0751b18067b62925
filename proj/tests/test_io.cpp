#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "biasmeter/error.hpp"
#include "biasmeter/io.hpp"
#include "biasmeter/tasks.hpp"

#include <cmath>
#include <filesystem>
#include <limits>
#include <random>
#include <string>

using namespace biasmeter;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("biasmeter-test-io-" + tag);
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

HypothesisSamples random_samples(std::size_t count, Eigen::Index n, Eigen::Index k, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1e3);
    HypothesisSamples s;
    s.seed = seed;
    s.source = SampleSource::neural_net;
    for (std::size_t i = 0; i < count; ++i) {
        Eigen::MatrixXd m(n, k);
        for (Eigen::Index j = 0; j < m.size(); ++j) m.data()[j] = normal(rng);
        s.predictions.push_back(m);
    }
    return s;
}

Json samples_meta(const HypothesisSamples& s) {
    return Json{{"S", s.count()}, {"n", s.points()}, {"k", s.channels()}, {"seed", s.seed},
                {"source", to_string(s.source)}};
}

} // namespace

TEST_CASE("format_double round-trips exactly") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    for (int i = 0; i < 2000; ++i) {
        const double v = unif(rng) * std::pow(10.0, (i % 40) - 20);
        CHECK(parse_double(format_double(v), "test") == v);
    }
    for (double v : {0.0, -0.0, 1.0, 0.1, 1e-310, std::numeric_limits<double>::max()})
        CHECK(parse_double(format_double(v), "test") == v);
    CHECK(format_double(0.5) == "0.5");
    CHECK(format_double(3.0) == "3");
}

TEST_CASE("parse_double rejects partial and empty text") {
    CHECK_THROWS_AS(parse_double("", "x"), DataError);
    CHECK_THROWS_AS(parse_double("1.5abc", "x"), DataError);
    CHECK_THROWS_AS(parse_double("abc", "x"), DataError);
    CHECK(parse_double("-2.5e3", "x") == -2500.0);
}

TEST_CASE("dataset directory round-trip") {
    TempDir tmp("dataset");
    const Dataset d = generate_pendulum_dataset(50, 7, 2);
    write_dataset(d, tmp.path, Json{{"task", "pendulum"}, {"seed", 2}});
    CHECK(fs::exists(tmp.path / kInputsFile));
    CHECK(read_text_file(tmp.path / kInputsFile).rfind("split,row,col,value\n", 0) == 0);
    CHECK(read_text_file(tmp.path / kTargetsFile).rfind("split,row,channel,value\n", 0) == 0);

    const LoadedDataset back = read_dataset(tmp.path);
    CHECK(back.data.name == "pendulum");
    CHECK(back.data.train_x == d.train_x);
    CHECK(back.data.train_y == d.train_y);
    CHECK(back.data.test_x == d.test_x);
    CHECK(back.data.test_y == d.test_y);
    CHECK(back.manifest["seed"] == 2);
}

TEST_CASE("dataset reader errors") {
    TempDir tmp("dataset-bad");
    CHECK_THROWS_AS(read_dataset(tmp.path / "missing"), DataError);

    const Dataset d = generate_pendulum_dataset(4, 2, 1);
    write_dataset(d, tmp.path, Json{{"task", "pendulum"}});
    const std::string good = read_text_file(tmp.path / kInputsFile);

    write_text_file(tmp.path / kInputsFile, "a,b,c,d\n");
    CHECK_THROWS_AS(read_dataset(tmp.path), DataError);

    // Drop one entry.
    write_text_file(tmp.path / kInputsFile, good.substr(0, good.rfind('\n', good.size() - 2) + 1));
    CHECK_THROWS_AS(read_dataset(tmp.path), DataError);

    write_text_file(tmp.path / kInputsFile, good + "valid,0,0,1\n");
    CHECK_THROWS_AS(read_dataset(tmp.path), DataError);

    write_text_file(tmp.path / kInputsFile, good + "train,0,0,1\n");
    CHECK_THROWS_AS(read_dataset(tmp.path), DataError);

    write_text_file(tmp.path / kInputsFile, good + "train,x,0,1\n");
    CHECK_THROWS_AS(read_dataset(tmp.path), DataError);

    write_text_file(tmp.path / kInputsFile, good);
    write_text_file(tmp.path / kDatasetManifestFile, "{not json");
    CHECK_THROWS_AS(read_dataset(tmp.path), DataError);
}

TEST_CASE("samples directory round-trip is bit-exact") {
    TempDir tmp("samples");
    const HypothesisSamples s = random_samples(12, 5, 3, 8);
    write_samples(s, tmp.path, samples_meta(s));
    CHECK(read_text_file(tmp.path / kSamplesFile).rfind("sample,point,channel,value\n", 0) == 0);
    const LoadedSamples back = read_samples(tmp.path);
    REQUIRE(back.samples.count() == 12);
    CHECK(back.samples.seed == 8);
    CHECK(back.samples.source == SampleSource::neural_net);
    for (std::size_t i = 0; i < 12; ++i) CHECK(back.samples.predictions[i] == s.predictions[i]);
}

TEST_CASE("samples reader errors") {
    TempDir tmp("samples-bad");
    const HypothesisSamples s = random_samples(3, 2, 1, 1);
    write_samples(s, tmp.path, samples_meta(s));
    const std::string good = read_text_file(tmp.path / kSamplesFile);

    Json meta = samples_meta(s);
    meta.erase("n");
    write_json_file(tmp.path / kSamplesMetaFile, meta);
    CHECK_THROWS_AS(read_samples(tmp.path), DataError);

    meta = samples_meta(s);
    meta["S"] = "three";
    write_json_file(tmp.path / kSamplesMetaFile, meta);
    CHECK_THROWS_AS(read_samples(tmp.path), DataError);

    meta = samples_meta(s);
    meta["source"] = "oracle";
    write_json_file(tmp.path / kSamplesMetaFile, meta);
    CHECK_THROWS_AS(read_samples(tmp.path), DataError);

    write_json_file(tmp.path / kSamplesMetaFile, samples_meta(s));
    write_text_file(tmp.path / kSamplesFile, good + "3,0,0,1\n");
    CHECK_THROWS_AS(read_samples(tmp.path), DataError);
    write_text_file(tmp.path / kSamplesFile, good + "0.5,0,0,1\n");
    CHECK_THROWS_AS(read_samples(tmp.path), DataError);
    write_text_file(tmp.path / kSamplesFile, good.substr(0, good.rfind('\n', good.size() - 2) + 1));
    CHECK_THROWS_AS(read_samples(tmp.path), DataError);

    CHECK_THROWS_AS(write_samples(HypothesisSamples{}, tmp.path, Json::object()), UsageError);
}

TEST_CASE("histogram CSV layout") {
    TempDir tmp("hist");
    std::vector<HistogramBin> bins{{0.0, 0.5, 3, 0.25}, {0.5, 1.0, 7, 1.5}};
    write_histogram(bins, tmp.path / "h.csv");
    CHECK(read_text_file(tmp.path / "h.csv") == "bin_left,bin_right,count,fitted_pdf\n0,0.5,3,0.25\n0.5,1,7,1.5\n");
}

TEST_CASE("fit and bias JSON fields") {
    ChiSquaredFit fit;
    fit.scale = 2.0;
    fit.dof = 5.0;
    fit.noncentrality = 3.0;
    fit.method = FitMethod::mle;
    fit.log_likelihood = -12.5;
    const Json f = fit_to_json(fit);
    CHECK(f["s"] == 2.0);
    CHECK(f["k_dof"] == 5.0);
    CHECK(f["lambda"] == 3.0);
    CHECK(f["fit_method"] == "mle");
    CHECK(f["log_likelihood"] == -12.5);

    BiasEstimate b;
    b.epsilon = 0.1;
    b.log_cdf = -std::log(2.0);
    b.bias_nats = std::log(2.0);
    b.bias_bits = 1.0;
    b.tail_mode = TailMode::sankaran;
    const Json j = bias_to_json(fit, b, 100);
    CHECK(j["S"] == 100);
    CHECK(j["epsilon"] == 0.1);
    CHECK(j["bias_bits"] == 1.0);
    CHECK(j["tail_mode"] == "sankaran");
    CHECK(j.contains("bias_nats"));
    CHECK(j.contains("log_cdf"));
}

TEST_CASE("JSON files") {
    TempDir tmp("json");
    const Json j{{"b", 1}, {"a", {1.5, 2.5}}};
    write_json_file(tmp.path / "x.json", j);
    CHECK(read_json_file(tmp.path / "x.json") == j);
    // Insertion order is preserved on disk.
    const std::string text = read_text_file(tmp.path / "x.json");
    CHECK(text.find("\"b\"") < text.find("\"a\""));
    CHECK_THROWS_AS(read_json_file(tmp.path / "nope.json"), DataError);
}
