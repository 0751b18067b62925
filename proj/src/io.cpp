#include "biasmeter/io.hpp"

#include "biasmeter/error.hpp"

#include <charconv>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <system_error>

namespace biasmeter {

namespace fs = std::filesystem;

std::string format_double(double value) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, value);
    return std::string(buf, res.ptr);
}

double parse_double(std::string_view text, const std::string& where) {
    double value = 0.0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size())
        throw DataError(where + ": cannot parse '" + std::string(text) + "' as a number");
    return value;
}

std::string read_text_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out << content;
    if (!out) throw DataError("cannot write '" + path.string() + "'");
}

Json read_json_file(const fs::path& path) {
    const std::string text = read_text_file(path);
    try {
        return Json::parse(text);
    } catch (const Json::exception& e) {
        throw DataError("'" + path.string() + "' is not valid JSON: " + e.what());
    }
}

void write_json_file(const fs::path& path, const Json& value) { write_text_file(path, value.dump(2) + "\n"); }

namespace {

// Long-format CSV: <key>,<row>,<col>,value with one header line.
struct CsvCell {
    std::string key;
    long row = 0;
    long col = 0;
    double value = 0.0;
};

std::vector<CsvCell> read_cells(const fs::path& path, const std::string& header) {
    std::istringstream in(read_text_file(path));
    std::string line;
    if (!std::getline(in, line) || line != header)
        throw DataError("'" + path.string() + "' must start with the header '" + header + "'");
    std::vector<CsvCell> cells;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::string where = path.string() + ":" + std::to_string(line_no);
        std::string_view rest(line);
        std::string_view fields[4];
        for (int f = 0; f < 4; ++f) {
            const auto comma = rest.find(',');
            if ((comma == std::string_view::npos) != (f == 3))
                throw DataError(where + ": expected 4 comma-separated fields");
            fields[f] = rest.substr(0, comma);
            if (f < 3) rest.remove_prefix(comma + 1);
        }
        CsvCell cell;
        cell.key = std::string(fields[0]);
        const double row = parse_double(fields[1], where);
        const double col = parse_double(fields[2], where);
        if (row < 0 || col < 0 || row != static_cast<long>(row) || col != static_cast<long>(col))
            throw DataError(where + ": indices must be non-negative integers");
        cell.row = static_cast<long>(row);
        cell.col = static_cast<long>(col);
        cell.value = parse_double(fields[3], where);
        cells.push_back(std::move(cell));
    }
    return cells;
}

void append_matrix(std::string& out, const std::string& key, const Eigen::MatrixXd& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            out += key;
            out += ',';
            out += std::to_string(i);
            out += ',';
            out += std::to_string(j);
            out += ',';
            out += format_double(m(i, j));
            out += '\n';
        }
}

// Rebuilds the matrices named in `keys` from long-format cells; every cell of
// each dense matrix must appear exactly once.
std::map<std::string, Eigen::MatrixXd> assemble(const std::vector<CsvCell>& cells,
                                                const std::vector<std::string>& keys, const fs::path& path) {
    std::map<std::string, std::pair<long, long>> dims;
    for (const auto& key : keys) dims[key] = {0, 0};
    for (const auto& c : cells) {
        auto it = dims.find(c.key);
        if (it == dims.end()) throw DataError("'" + path.string() + "': unknown split '" + c.key + "'");
        it->second.first = std::max(it->second.first, c.row + 1);
        it->second.second = std::max(it->second.second, c.col + 1);
    }
    std::map<std::string, Eigen::MatrixXd> out;
    std::map<std::string, Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>> seen;
    for (const auto& [key, d] : dims) {
        out[key] = Eigen::MatrixXd::Zero(d.first, d.second);
        seen[key] = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(d.first, d.second, false);
    }
    for (const auto& c : cells) {
        if (seen[c.key](c.row, c.col))
            throw DataError("'" + path.string() + "': duplicate entry " + c.key + "," + std::to_string(c.row) +
                            "," + std::to_string(c.col));
        seen[c.key](c.row, c.col) = true;
        out[c.key](c.row, c.col) = c.value;
    }
    for (const auto& [key, s] : seen)
        if (!s.all()) throw DataError("'" + path.string() + "': split '" + key + "' has missing entries");
    return out;
}

} // namespace

void write_dataset(const Dataset& data, const fs::path& dir, const Json& manifest) {
    data.validate();
    fs::create_directories(dir);
    std::string inputs = "split,row,col,value\n";
    append_matrix(inputs, "train", data.train_x);
    append_matrix(inputs, "test", data.test_x);
    write_text_file(dir / kInputsFile, inputs);
    std::string targets = "split,row,channel,value\n";
    append_matrix(targets, "train", data.train_y);
    append_matrix(targets, "test", data.test_y);
    write_text_file(dir / kTargetsFile, targets);
    write_json_file(dir / kDatasetManifestFile, manifest);
}

LoadedDataset read_dataset(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw DataError("dataset directory '" + dir.string() + "' does not exist");
    LoadedDataset out;
    out.manifest = read_json_file(dir / kDatasetManifestFile);
    auto x = assemble(read_cells(dir / kInputsFile, "split,row,col,value"), {"train", "test"}, dir / kInputsFile);
    auto y = assemble(read_cells(dir / kTargetsFile, "split,row,channel,value"), {"train", "test"},
                      dir / kTargetsFile);
    out.data.name = out.manifest.value("task", std::string("dataset"));
    out.data.train_x = std::move(x["train"]);
    out.data.test_x = std::move(x["test"]);
    out.data.train_y = std::move(y["train"]);
    out.data.test_y = std::move(y["test"]);
    out.data.validate();
    return out;
}

void write_samples(const HypothesisSamples& samples, const fs::path& dir, const Json& meta) {
    if (samples.count() == 0) throw UsageError("write_samples: no samples");
    fs::create_directories(dir);
    std::string csv = "sample,point,channel,value\n";
    csv.reserve(csv.size() + samples.count() * static_cast<std::size_t>(samples.points() * samples.channels()) * 32);
    for (std::size_t s = 0; s < samples.count(); ++s) {
        const Eigen::MatrixXd& p = samples.predictions[s];
        const std::string prefix = std::to_string(s) + ",";
        for (Eigen::Index i = 0; i < p.rows(); ++i)
            for (Eigen::Index c = 0; c < p.cols(); ++c) {
                csv += prefix;
                csv += std::to_string(i);
                csv += ',';
                csv += std::to_string(c);
                csv += ',';
                csv += format_double(p(i, c));
                csv += '\n';
            }
    }
    write_text_file(dir / kSamplesFile, csv);
    write_json_file(dir / kSamplesMetaFile, meta);
}

LoadedSamples read_samples(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw DataError("samples directory '" + dir.string() + "' does not exist");
    LoadedSamples out;
    out.meta = read_json_file(dir / kSamplesMetaFile);
    if (!out.meta.contains("S") || !out.meta.contains("n") || !out.meta.contains("k"))
        throw DataError("'" + (dir / kSamplesMetaFile).string() + "' lacks S, n or k");
    std::size_t count = 0;
    Eigen::Index n = 0, k = 0;
    try {
        count = out.meta["S"].get<std::size_t>();
        n = out.meta["n"].get<Eigen::Index>();
        k = out.meta["k"].get<Eigen::Index>();
        out.samples.seed = out.meta.value("seed", std::uint64_t{0});
        out.samples.source = parse_sample_source(out.meta.value("source", std::string("kernel")));
    } catch (const Json::exception& e) {
        throw DataError("'" + (dir / kSamplesMetaFile).string() + "': " + e.what());
    }
    if (count == 0 || n <= 0 || k <= 0)
        throw DataError("'" + (dir / kSamplesMetaFile).string() + "': S, n and k must be positive");
    out.samples.predictions.assign(count, Eigen::MatrixXd::Constant(n, k, std::numeric_limits<double>::quiet_NaN()));

    const fs::path path = dir / kSamplesFile;
    std::size_t filled = 0;
    for (const CsvCell& c : read_cells(path, "sample,point,channel,value")) {
        const double key = parse_double(c.key, path.string());
        const auto s = static_cast<long>(key);
        if (key != static_cast<double>(s)) throw DataError("'" + path.string() + "': bad sample index " + c.key);
        if (s < 0 || static_cast<std::size_t>(s) >= count || c.row >= n || c.col >= k)
            throw DataError("'" + path.string() + "': entry " + c.key + "," + std::to_string(c.row) + "," +
                            std::to_string(c.col) + " outside S=" + std::to_string(count) + ", n=" +
                            std::to_string(n) + ", k=" + std::to_string(k));
        out.samples.predictions[static_cast<std::size_t>(s)](c.row, c.col) = c.value;
        ++filled;
    }
    if (filled != count * static_cast<std::size_t>(n * k))
        throw DataError("'" + path.string() + "' holds " + std::to_string(filled) + " entries, expected " +
                        std::to_string(count * static_cast<std::size_t>(n * k)));
    for (const auto& p : out.samples.predictions)
        if (!p.allFinite()) throw DataError("'" + path.string() + "' has missing or non-finite entries");
    return out;
}

void write_histogram(const std::vector<HistogramBin>& bins, const fs::path& path) {
    std::string csv = "bin_left,bin_right,count,fitted_pdf\n";
    for (const auto& b : bins)
        csv += format_double(b.left) + "," + format_double(b.right) + "," + std::to_string(b.count) + "," +
               format_double(b.fitted_pdf) + "\n";
    write_text_file(path, csv);
}

Json fit_to_json(const ChiSquaredFit& fit) {
    Json j;
    j["s"] = fit.scale;
    j["k_dof"] = fit.dof;
    j["lambda"] = fit.noncentrality;
    j["fit_method"] = to_string(fit.method);
    j["log_likelihood"] = fit.log_likelihood;
    return j;
}

Json bias_to_json(const ChiSquaredFit& fit, const BiasEstimate& bias, std::size_t sample_count) {
    Json j = fit_to_json(fit);
    j["S"] = sample_count;
    j["epsilon"] = bias.epsilon;
    j["log_cdf"] = bias.log_cdf;
    j["bias_nats"] = bias.bias_nats;
    j["bias_bits"] = bias.bias_bits;
    j["tail_mode"] = to_string(bias.tail_mode);
    return j;
}

} // namespace biasmeter
