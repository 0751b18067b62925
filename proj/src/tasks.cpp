#include "biasmeter/tasks.hpp"

#include "biasmeter/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>
#include <random>

namespace biasmeter {

PendulumRates pendulum_dynamics(const PendulumState& s, double u) {
    return {s.omega, std::sin(s.theta) + u};
}

double pendulum_cost(double u, double theta, double omega) {
    return 0.5 * u * u + 24.0 * theta * theta + (8.0 * theta + 4.0 * omega) * (theta - std::sin(theta));
}

double pendulum_value(double theta, double omega) {
    return 14.0 * theta * theta + 8.0 * theta * omega + 2.0 * omega * omega;
}

double pendulum_optimal_control(double theta, double omega) { return -8.0 * theta - 4.0 * omega; }

double bellman_residual(double theta, double omega) {
    const double u = pendulum_optimal_control(theta, omega);
    const PendulumRates rates = pendulum_dynamics({theta, omega}, u);
    const double dv_dtheta = 28.0 * theta + 8.0 * omega;
    const double dv_domega = 8.0 * theta + 4.0 * omega;
    return dv_dtheta * rates.theta_dot + dv_domega * rates.omega_dot + pendulum_cost(u, theta, omega);
}

namespace {

void require_sizes(std::size_t n_train, std::size_t n_test) {
    if (n_train == 0 || n_test == 0) throw UsageError("train and test sizes must be >= 1");
}

} // namespace

Dataset generate_pendulum_dataset(std::size_t n_train, std::size_t n_test, std::uint64_t seed) {
    require_sizes(n_train, n_test);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> theta_dist(-std::numbers::pi, std::numbers::pi);
    std::uniform_real_distribution<double> omega_dist(-1.0, 1.0);
    auto fill = [&](std::size_t n, PointSet& x, Eigen::MatrixXd& y) {
        x.resize(static_cast<Eigen::Index>(n), 2);
        y.resize(static_cast<Eigen::Index>(n), 1);
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            x(i, 0) = theta_dist(rng);
            x(i, 1) = omega_dist(rng);
            y(i, 0) = pendulum_optimal_control(x(i, 0), x(i, 1));
        }
    };
    Dataset data;
    data.name = "pendulum";
    fill(n_train, data.train_x, data.train_y);
    fill(n_test, data.test_x, data.test_y);
    return data;
}

void SyntheticGpSpec::validate() const {
    if (num_features < 1 || input_dim < 1 || output_dim < 1)
        throw UsageError("synthetic task needs num_features, input_dim and output_dim >= 1");
    if (!(bandwidth > 0.0) || !(theta_variance >= 0.0))
        throw UsageError("synthetic task needs bandwidth > 0 and theta_variance >= 0");
    if (frequencies.rows() != num_features || frequencies.cols() != input_dim ||
        phases.size() != num_features || theta_star.rows() != num_features ||
        theta_star.cols() != output_dim)
        throw UsageError("synthetic task features are not initialised; use make_synthetic_gp_spec");
}

double SyntheticGpSpec::effective_theta_variance() const {
    return theta_variance > 0.0 ? theta_variance : 1.0 / static_cast<double>(num_features);
}

SyntheticGpSpec make_synthetic_gp_spec(int num_features, int input_dim, int output_dim, double bandwidth,
                                       std::uint64_t seed) {
    SyntheticGpSpec spec;
    spec.num_features = num_features;
    spec.input_dim = input_dim;
    spec.output_dim = output_dim;
    spec.bandwidth = bandwidth;
    spec.seed = seed;
    if (num_features < 1 || input_dim < 1 || output_dim < 1 || !(bandwidth > 0.0))
        throw UsageError("synthetic task needs positive sizes and bandwidth");

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    const double freq_scale = std::sqrt(bandwidth);
    spec.frequencies.resize(num_features, input_dim);
    spec.phases.resize(num_features);
    for (int p = 0; p < num_features; ++p) {
        for (int d = 0; d < input_dim; ++d) spec.frequencies(p, d) = freq_scale * normal(rng);
        spec.phases(p) = phase(rng);
    }
    const double theta_sd = std::sqrt(spec.effective_theta_variance());
    spec.theta_star.resize(num_features, output_dim);
    for (int c = 0; c < output_dim; ++c)
        for (int p = 0; p < num_features; ++p) spec.theta_star(p, c) = theta_sd * normal(rng);
    return spec;
}

Eigen::MatrixXd rff_features(const SyntheticGpSpec& spec, const PointSet& x) {
    spec.validate();
    if (x.cols() != spec.input_dim)
        throw UsageError("rff_features: input width " + std::to_string(x.cols()) + " does not match " +
                         std::to_string(spec.input_dim));
    Eigen::MatrixXd arg = x * spec.frequencies.transpose();
    arg.rowwise() += spec.phases.transpose();
    return std::sqrt(2.0 / spec.num_features) * arg.array().cos().matrix();
}

Dataset generate_synthetic_gp_task(const SyntheticGpSpec& spec, std::size_t n_train, std::size_t n_test) {
    spec.validate();
    require_sizes(n_train, n_test);
    std::seed_seq inputs_seed{spec.seed, std::uint64_t{0x5eed1}};
    std::mt19937_64 rng(inputs_seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto draw = [&](std::size_t n) {
        PointSet x(static_cast<Eigen::Index>(n), spec.input_dim);
        for (Eigen::Index i = 0; i < x.rows(); ++i)
            for (Eigen::Index d = 0; d < x.cols(); ++d) x(i, d) = unit(rng);
        return x;
    };
    Dataset data;
    data.name = "synthetic-gp";
    data.train_x = draw(n_train);
    data.test_x = draw(n_test);
    data.train_y = rff_features(spec, data.train_x) * spec.theta_star;
    data.test_y = rff_features(spec, data.test_x) * spec.theta_star;
    return data;
}

namespace {

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset, const std::string& path) {
    if (bytes.size() < offset + 4) throw DataError("'" + path + "' is truncated in its header");
    return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
           (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void put_be32(std::ofstream& out, std::uint32_t v) {
    const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                       static_cast<char>(v)};
    out.write(b, 4);
}

std::string hex(std::uint32_t v) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "0x%08x", v);
    return buf;
}

} // namespace

IdxData read_idx(const std::string& images_path, const std::string& labels_path) {
    const std::vector<std::uint8_t> img = read_file(images_path);
    const std::vector<std::uint8_t> lab = read_file(labels_path);

    const std::uint32_t img_magic = read_be32(img, 0, images_path);
    if (img_magic != kIdxImagesMagic)
        throw DataError("'" + images_path + "' has magic " + hex(img_magic) + ", expected " + hex(kIdxImagesMagic));
    const std::uint32_t lab_magic = read_be32(lab, 0, labels_path);
    if (lab_magic != kIdxLabelsMagic)
        throw DataError("'" + labels_path + "' has magic " + hex(lab_magic) + ", expected " + hex(kIdxLabelsMagic));

    IdxData data;
    data.count = read_be32(img, 4, images_path);
    data.rows = read_be32(img, 8, images_path);
    data.cols = read_be32(img, 12, images_path);
    const std::size_t label_count = read_be32(lab, 4, labels_path);
    if (label_count != data.count)
        throw DataError("image count " + std::to_string(data.count) + " does not match label count " +
                        std::to_string(label_count));

    const std::size_t pixel_bytes = data.count * data.rows * data.cols;
    if (img.size() < 16 + pixel_bytes)
        throw DataError("'" + images_path + "' is truncated: expected " + std::to_string(16 + pixel_bytes) +
                        " bytes, found " + std::to_string(img.size()));
    if (lab.size() < 8 + data.count)
        throw DataError("'" + labels_path + "' is truncated: expected " + std::to_string(8 + data.count) +
                        " bytes, found " + std::to_string(lab.size()));
    data.pixels.assign(img.begin() + 16, img.begin() + 16 + static_cast<std::ptrdiff_t>(pixel_bytes));
    data.labels.assign(lab.begin() + 8, lab.begin() + 8 + static_cast<std::ptrdiff_t>(data.count));
    return data;
}

void write_idx(const IdxData& data, const std::string& images_path, const std::string& labels_path) {
    if (data.pixels.size() != data.count * data.pixels_per_image() || data.labels.size() != data.count)
        throw UsageError("write_idx: payload sizes do not match count/rows/cols");
    std::ofstream img(images_path, std::ios::binary);
    std::ofstream lab(labels_path, std::ios::binary);
    if (!img || !lab) throw DataError("cannot write IDX files '" + images_path + "', '" + labels_path + "'");
    put_be32(img, kIdxImagesMagic);
    put_be32(img, static_cast<std::uint32_t>(data.count));
    put_be32(img, static_cast<std::uint32_t>(data.rows));
    put_be32(img, static_cast<std::uint32_t>(data.cols));
    img.write(reinterpret_cast<const char*>(data.pixels.data()), static_cast<std::streamsize>(data.pixels.size()));
    put_be32(lab, kIdxLabelsMagic);
    put_be32(lab, static_cast<std::uint32_t>(data.count));
    lab.write(reinterpret_cast<const char*>(data.labels.data()), static_cast<std::streamsize>(data.labels.size()));
    if (!img || !lab) throw DataError("failed writing IDX files");
}

LoadedImages load_idx(const std::string& images_path, const std::string& labels_path) {
    const IdxData raw = read_idx(images_path, labels_path);
    const auto count = static_cast<Eigen::Index>(raw.count);
    const auto width = static_cast<Eigen::Index>(raw.pixels_per_image());
    LoadedImages out;
    out.images.resize(count, width);
    for (Eigen::Index i = 0; i < count; ++i)
        for (Eigen::Index p = 0; p < width; ++p)
            out.images(i, p) = raw.pixels[static_cast<std::size_t>(i * width + p)] / 255.0;
    out.labels.assign(raw.labels.begin(), raw.labels.end());
    return out;
}

Eigen::MatrixXd one_hot(const std::vector<int>& labels, int num_classes) {
    if (num_classes < 1) throw UsageError("one_hot: num_classes must be >= 1");
    Eigen::MatrixXd y = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(labels.size()), num_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= num_classes)
            throw DataError("label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                            " is outside [0, " + std::to_string(num_classes) + ")");
        y(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
    }
    return y;
}

std::vector<int> argmax_rows(const Eigen::MatrixXd& y) {
    std::vector<int> out(static_cast<std::size_t>(y.rows()));
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
        Eigen::Index best = 0;
        y.row(i).maxCoeff(&best);
        out[static_cast<std::size_t>(i)] = static_cast<int>(best);
    }
    return out;
}

bool is_one_hot(const Eigen::MatrixXd& y) {
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
        int ones = 0;
        for (Eigen::Index c = 0; c < y.cols(); ++c) {
            if (y(i, c) == 1.0) ++ones;
            else if (y(i, c) != 0.0) return false;
        }
        if (ones != 1) return false;
    }
    return y.rows() > 0;
}

namespace {

// Picks `count` of `candidates` (ascending row indices), stratified by `groups`
// when given; the result is sorted ascending.
std::vector<Eigen::Index> pick_rows(const std::vector<Eigen::Index>& candidates, const std::vector<int>* groups,
                                    std::size_t count, std::mt19937_64& rng) {
    if (count > candidates.size())
        throw UsageError("requested " + std::to_string(count) + " rows but only " +
                         std::to_string(candidates.size()) + " are available");
    std::vector<Eigen::Index> chosen;
    if (groups == nullptr) {
        std::vector<Eigen::Index> pool = candidates;
        std::shuffle(pool.begin(), pool.end(), rng);
        chosen.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(count));
    } else {
        const int num_groups = *std::max_element(groups->begin(), groups->end()) + 1;
        std::vector<std::vector<Eigen::Index>> members(static_cast<std::size_t>(num_groups));
        for (Eigen::Index r : candidates) members[static_cast<std::size_t>((*groups)[static_cast<std::size_t>(r)])].push_back(r);

        // Largest-remainder allocation of `count` across groups.
        const double total = static_cast<double>(candidates.size());
        std::vector<std::size_t> quota(members.size());
        std::vector<std::pair<double, std::size_t>> remainders;
        std::size_t assigned = 0;
        for (std::size_t g = 0; g < members.size(); ++g) {
            const double exact = static_cast<double>(count) * static_cast<double>(members[g].size()) / total;
            quota[g] = static_cast<std::size_t>(std::floor(exact));
            assigned += quota[g];
            if (quota[g] < members[g].size()) remainders.emplace_back(exact - std::floor(exact), g);
        }
        std::stable_sort(remainders.begin(), remainders.end(),
                         [](const auto& a, const auto& b) { return a.first > b.first; });
        for (std::size_t i = 0; assigned < count && i < remainders.size(); ++i, ++assigned) ++quota[remainders[i].second];

        for (std::size_t g = 0; g < members.size(); ++g) {
            std::shuffle(members[g].begin(), members[g].end(), rng);
            chosen.insert(chosen.end(), members[g].begin(), members[g].begin() + static_cast<std::ptrdiff_t>(quota[g]));
        }
    }
    std::sort(chosen.begin(), chosen.end());
    return chosen;
}

std::vector<Eigen::Index> all_rows(Eigen::Index n) {
    std::vector<Eigen::Index> rows(static_cast<std::size_t>(n));
    std::iota(rows.begin(), rows.end(), Eigen::Index{0});
    return rows;
}

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& m, const std::vector<Eigen::Index>& rows) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
    return out;
}

} // namespace

Dataset subsample(const Dataset& data, std::size_t n_train, std::size_t n_test, std::uint64_t seed) {
    data.validate();
    require_sizes(n_train, n_test);
    if (n_train > static_cast<std::size_t>(data.train_size()) || n_test > static_cast<std::size_t>(data.test_size()))
        throw UsageError("subsample: requested " + std::to_string(n_train) + "/" + std::to_string(n_test) +
                         " rows but the dataset has " + std::to_string(data.train_size()) + "/" +
                         std::to_string(data.test_size()));
    std::mt19937_64 rng(seed);
    const bool stratify = is_one_hot(data.train_y) && is_one_hot(data.test_y);
    const std::vector<int> train_groups = stratify ? argmax_rows(data.train_y) : std::vector<int>{};
    const std::vector<int> test_groups = stratify ? argmax_rows(data.test_y) : std::vector<int>{};
    const auto train_rows = pick_rows(all_rows(data.train_size()), stratify ? &train_groups : nullptr, n_train, rng);
    const auto test_rows = pick_rows(all_rows(data.test_size()), stratify ? &test_groups : nullptr, n_test, rng);

    Dataset out;
    out.name = data.name;
    out.train_x = take_rows(data.train_x, train_rows);
    out.train_y = take_rows(data.train_y, train_rows);
    out.test_x = take_rows(data.test_x, test_rows);
    out.test_y = take_rows(data.test_y, test_rows);
    return out;
}

Dataset carve_classification_task(const std::string& name, const Eigen::MatrixXd& inputs,
                                  const std::vector<int>& labels, int num_classes, std::size_t n_train,
                                  std::size_t n_test, std::uint64_t seed) {
    require_sizes(n_train, n_test);
    if (static_cast<std::size_t>(inputs.rows()) != labels.size())
        throw DataError("carve_classification_task: " + std::to_string(inputs.rows()) + " inputs but " +
                        std::to_string(labels.size()) + " labels");
    if (n_train + n_test > labels.size())
        throw UsageError("requested " + std::to_string(n_train) + " train + " + std::to_string(n_test) +
                         " test rows from a pool of " + std::to_string(labels.size()));
    const Eigen::MatrixXd targets = one_hot(labels, num_classes);
    std::mt19937_64 rng(seed);
    const std::vector<Eigen::Index> pool = all_rows(inputs.rows());
    const auto train_rows = pick_rows(pool, &labels, n_train, rng);
    std::vector<Eigen::Index> rest;
    std::set_difference(pool.begin(), pool.end(), train_rows.begin(), train_rows.end(), std::back_inserter(rest));
    const auto test_rows = pick_rows(rest, &labels, n_test, rng);

    Dataset out;
    out.name = name;
    out.train_x = take_rows(inputs, train_rows);
    out.train_y = take_rows(targets, train_rows);
    out.test_x = take_rows(inputs, test_rows);
    out.test_y = take_rows(targets, test_rows);
    return out;
}

void standardize_inputs(Dataset& data) {
    data.validate();
    const Eigen::RowVectorXd mean = data.train_x.colwise().mean();
    Eigen::RowVectorXd sd = ((data.train_x.rowwise() - mean).array().square().colwise().mean()).sqrt();
    for (Eigen::Index c = 0; c < sd.size(); ++c)
        if (!(sd(c) > 0.0)) sd(c) = 1.0;
    data.train_x = ((data.train_x.rowwise() - mean).array().rowwise() / sd.array()).matrix();
    data.test_x = ((data.test_x.rowwise() - mean).array().rowwise() / sd.array()).matrix();
}

} // namespace biasmeter
