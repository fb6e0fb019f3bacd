#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "fsbo/error.hpp"
#include "fsbo/rng.hpp"
#include "fsbo/search_space.hpp"

namespace fsbo {

/// Encoded-space tolerance used to match a query against a recorded row.
inline constexpr double kGridTolerance = 1e-9;

struct Record {
    Config config;
    double y = 0.0; ///< loss, lower is better
};

/// One recorded response table. Immutable after construction.
class Task {
public:
    Task() = default;

    Task(std::string id, const SearchSpace& space, std::vector<Record> records) : id_(std::move(id)), records_(std::move(records))
    {
        if (records_.size() < 2)
            throw ValidationError("task '" + id_ + "' needs at least 2 records");
        const auto n = static_cast<Eigen::Index>(records_.size());
        X_.resize(n, static_cast<Eigen::Index>(space.encoded_dim()));
        y_.resize(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto& r = records_[static_cast<std::size_t>(i)];
            auto violations = space.validate(r.config);
            if (!violations.empty())
                throw ValidationError("task '" + id_ + "' record " + std::to_string(i) + ": " + violations.front());
            if (!std::isfinite(r.y))
                throw ValidationError("task '" + id_ + "' record " + std::to_string(i) + ": objective is not finite");
            X_.row(i) = space.encode_unchecked(r.config).transpose();
            y_[i] = r.y;
        }
        f_min_ = y_.minCoeff();
        f_max_ = y_.maxCoeff();

        order_.resize(records_.size());
        for (std::size_t i = 0; i < order_.size(); ++i)
            order_[i] = i;
        std::sort(order_.begin(), order_.end(), [this](std::size_t a, std::size_t b) {
            return lex_less(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
        });
        for (std::size_t k = 1; k < order_.size(); ++k) {
            auto a = static_cast<Eigen::Index>(order_[k - 1]), b = static_cast<Eigen::Index>(order_[k]);
            if (X_.row(a) == X_.row(b))
                throw ValidationError("task '" + id_ + "': duplicate config in records " + std::to_string(a) +
                                      " and " + std::to_string(b));
        }
    }

    const std::string& id() const { return id_; }
    const std::vector<Record>& records() const { return records_; }
    std::size_t size() const { return records_.size(); }
    const Eigen::MatrixXd& X() const { return X_; }
    const Eigen::VectorXd& y() const { return y_; }
    double f_min() const { return f_min_; }
    double f_max() const { return f_max_; }

    /// Row whose encoding matches `x` within kGridTolerance in every dimension.
    std::optional<std::size_t> find(const Eigen::VectorXd& x, double tol = kGridTolerance) const
    {
        if (x.size() != X_.cols())
            return std::nullopt;
        // rows are sorted lexicographically, so candidates share the first coordinate band
        auto lo = std::lower_bound(order_.begin(), order_.end(), x[0] - tol,
                                   [this](std::size_t r, double v) { return X_(static_cast<Eigen::Index>(r), 0) < v; });
        for (auto it = lo; it != order_.end(); ++it) {
            const auto r = static_cast<Eigen::Index>(*it);
            if (X_(r, 0) > x[0] + tol)
                break;
            if (((X_.row(r).transpose() - x).array().abs() <= tol).all())
                return *it;
        }
        return std::nullopt;
    }

private:
    bool lex_less(Eigen::Index a, Eigen::Index b) const
    {
        for (Eigen::Index j = 0; j < X_.cols(); ++j) {
            if (X_(a, j) < X_(b, j))
                return true;
            if (X_(a, j) > X_(b, j))
                return false;
        }
        return false;
    }

    std::string id_;
    std::vector<Record> records_;
    Eigen::MatrixXd X_;
    Eigen::VectorXd y_;
    double f_min_ = 0.0, f_max_ = 0.0;
    std::vector<std::size_t> order_;
};

/// Replays the recorded response of `task`; only table rows may be queried.
inline double tabular_oracle(const Task& task, const SearchSpace& space, const Config& config)
{
    auto violations = space.validate(config);
    if (!violations.empty())
        throw OffGridError("off-grid query on task '" + task.id() + "': " + violations.front());
    auto row = task.find(space.encode_unchecked(config));
    if (!row)
        throw OffGridError("off-grid query on task '" + task.id() + "': config not in table");
    return task.records()[*row].y;
}

/// Scales `y` to [0,1] using the task's recorded extrema.
inline double normalize_response(double f_min, double f_max, double y)
{
    if (!(f_max > f_min))
        throw DegenerateTaskError("degenerate task: f_max == f_min");
    return (y - f_min) / (f_max - f_min);
}

inline double normalize_response(const Task& task, double y)
{
    if (!(task.f_max() > task.f_min()))
        throw DegenerateTaskError("degenerate task '" + task.id() + "': f_max == f_min");
    return normalize_response(task.f_min(), task.f_max(), y);
}

class MetaDataset {
public:
    MetaDataset() = default;

    MetaDataset(SearchSpace space, std::vector<Task> tasks, std::vector<std::string> fixed_test = {})
        : space_(std::move(space)), tasks_(std::move(tasks)), fixed_test_(std::move(fixed_test))
    {
        if (tasks_.size() < 2)
            throw ValidationError("a meta-dataset needs at least 2 tasks");
        std::sort(tasks_.begin(), tasks_.end(), [](const Task& a, const Task& b) { return a.id() < b.id(); });
        for (std::size_t i = 1; i < tasks_.size(); ++i)
            if (tasks_[i].id() == tasks_[i - 1].id())
                throw ValidationError("duplicate task id '" + tasks_[i].id() + "'");
        y_min_ = std::numeric_limits<double>::infinity();
        y_max_ = -std::numeric_limits<double>::infinity();
        for (const auto& t : tasks_) {
            y_min_ = std::min(y_min_, t.f_min());
            y_max_ = std::max(y_max_, t.f_max());
        }
        if (!(y_min_ < y_max_))
            throw ValidationError("meta-dataset labels are constant (y_min == y_max)");
        for (const auto& id : fixed_test_)
            if (!find(id))
                throw ValidationError("fixed split names unknown task '" + id + "'");
    }

    const SearchSpace& space() const { return space_; }
    const std::vector<Task>& tasks() const { return tasks_; }
    std::size_t num_tasks() const { return tasks_.size(); }
    const Task& task(std::size_t i) const { return tasks_.at(i); }
    double y_min() const { return y_min_; }
    double y_max() const { return y_max_; }
    const std::vector<std::string>& fixed_test() const { return fixed_test_; }

    std::size_t num_records() const
    {
        std::size_t n = 0;
        for (const auto& t : tasks_)
            n += t.size();
        return n;
    }

    std::optional<std::size_t> find(const std::string& id) const
    {
        for (std::size_t i = 0; i < tasks_.size(); ++i)
            if (tasks_[i].id() == id)
                return i;
        return std::nullopt;
    }

    /// Tasks at `indices`, with extrema recomputed over them only.
    MetaDataset subset(const std::vector<std::size_t>& indices) const
    {
        std::vector<Task> picked;
        for (auto i : indices)
            picked.push_back(tasks_.at(i));
        return MetaDataset(space_, std::move(picked));
    }

    /// Content hash over the space and every task table.
    std::uint64_t fingerprint() const
    {
        std::uint64_t h = mix64(space_.fingerprint());
        for (const auto& t : tasks_) {
            h = fnv1a(t.id(), h);
            for (Eigen::Index i = 0; i < t.X().rows(); ++i) {
                for (Eigen::Index j = 0; j < t.X().cols(); ++j)
                    h = fnv1a(format_real(t.X()(i, j)), h);
                h = fnv1a(format_real(t.y()[i]), h);
            }
        }
        return h;
    }

private:
    SearchSpace space_;
    std::vector<Task> tasks_;
    std::vector<std::string> fixed_test_;
    double y_min_ = 0.0, y_max_ = 0.0;
};

struct LotoSplit {
    std::vector<std::size_t> sources; ///< indices into the dataset
    std::size_t target = 0;
};

/// One split per task (leave-one-task-out), or, when the dataset declares a
/// fixed split, one split per listed test task with the complement as sources.
inline std::vector<LotoSplit> loto_splits(const MetaDataset& ds)
{
    std::vector<LotoSplit> out;
    if (!ds.fixed_test().empty()) {
        std::set<std::size_t> test;
        for (const auto& id : ds.fixed_test())
            test.insert(*ds.find(id));
        std::vector<std::size_t> sources;
        for (std::size_t i = 0; i < ds.num_tasks(); ++i)
            if (!test.count(i))
                sources.push_back(i);
        if (sources.empty())
            throw ValidationError("fixed split leaves no source tasks");
        for (auto t : test)
            out.push_back({sources, t});
        return out;
    }
    for (std::size_t t = 0; t < ds.num_tasks(); ++t) {
        LotoSplit s;
        s.target = t;
        for (std::size_t i = 0; i < ds.num_tasks(); ++i)
            if (i != t)
                s.sources.push_back(i);
        out.push_back(std::move(s));
    }
    return out;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line)
{
    std::vector<std::string> cells;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            cells.push_back(cur);
            cur.clear();
        }
        else if (c != '\r') {
            cur += c;
        }
    }
    cells.push_back(cur);
    return cells;
}

inline bool parse_real(const std::string& s, double& out)
{
    if (s.empty())
        return false;
    char* end = nullptr;
    out = std::strtod(s.c_str(), &end);
    return end == s.c_str() + s.size();
}

} // namespace detail

/// Parses one task CSV; errors carry file and line.
inline Task load_task_csv(const std::filesystem::path& file, const SearchSpace& space)
{
    std::ifstream in(file);
    if (!in)
        throw LoadError("cannot open task file " + file.string());
    const std::string where = file.string();
    std::string line;
    if (!std::getline(in, line))
        throw LoadError(where + ":1: empty file");
    auto header = detail::split_csv_line(line);
    if (header.size() != space.size() + 1 || header.back() != "objective") {
        for (const auto& h : header)
            if (h != "objective" && !space.contains(h))
                throw LoadError(where + ":1: unknown column '" + h + "'");
        throw LoadError(where + ":1: header must list the space parameters in order followed by 'objective'");
    }
    for (std::size_t i = 0; i < space.size(); ++i) {
        if (header[i] != space.params()[i].name) {
            if (!space.contains(header[i]))
                throw LoadError(where + ":1: unknown column '" + header[i] + "'");
            throw LoadError(where + ":1: column " + std::to_string(i + 1) + " must be '" +
                            space.params()[i].name + "'");
        }
    }

    std::vector<Record> records;
    std::vector<std::size_t> lines;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r")
            continue;
        auto cells = detail::split_csv_line(line);
        const std::string at = where + ":" + std::to_string(lineno);
        if (cells.size() != header.size())
            throw LoadError(at + ": expected " + std::to_string(header.size()) + " cells, got " +
                            std::to_string(cells.size()));
        Record r;
        for (std::size_t i = 0; i < space.size(); ++i) {
            const auto& p = space.params()[i];
            const auto& cell = cells[i];
            if (cell.empty())
                continue;
            if (p.kind == ParamKind::continuous) {
                double v;
                if (!detail::parse_real(cell, v))
                    throw LoadError(at + ": parameter '" + p.name + "': malformed number '" + cell + "'");
                r.config.values[p.name] = v;
            }
            else {
                r.config.values[p.name] = cell;
            }
        }
        if (!detail::parse_real(cells.back(), r.y) || !std::isfinite(r.y))
            throw LoadError(at + ": malformed objective '" + cells.back() + "'");
        auto violations = space.validate(r.config);
        if (!violations.empty())
            throw LoadError(at + ": " + violations.front());
        records.push_back(std::move(r));
        lines.push_back(lineno);
    }

    auto id = file.stem().string();
    try {
        return Task(id, space, std::move(records));
    }
    catch (const ValidationError& e) {
        throw LoadError(where + ": " + e.what());
    }
}

/// Canonical CSV text of a task; load(save(x)) reproduces it byte for byte.
inline std::string task_to_csv(const Task& task, const SearchSpace& space)
{
    std::ostringstream out;
    for (const auto& p : space.params())
        out << p.name << ',';
    out << "objective\n";
    for (const auto& r : task.records()) {
        for (const auto& p : space.params()) {
            auto it = r.config.values.find(p.name);
            if (it != r.config.values.end()) {
                if (std::holds_alternative<double>(it->second))
                    out << format_real(std::get<double>(it->second));
                else
                    out << std::get<std::string>(it->second);
            }
            out << ',';
        }
        out << format_real(r.y) << '\n';
    }
    return out.str();
}

/// Loads a dataset directory. A `dataset.json` manifest, when present, names
/// the task files and an optional fixed split; otherwise every `*.csv` is a task.
inline MetaDataset load_metadata(const std::filesystem::path& path, const SearchSpace& space)
{
    namespace fs = std::filesystem;
    if (!fs::is_directory(path))
        throw LoadError("dataset path is not a directory: " + path.string());
    std::vector<fs::path> files;
    std::vector<std::string> fixed_test;
    const auto manifest = path / "dataset.json";
    if (fs::exists(manifest)) {
        std::ifstream in(manifest);
        nlohmann::json j;
        try {
            in >> j;
            for (const auto& f : j.at("tasks"))
                files.push_back(path / f.get<std::string>());
            if (j.contains("fixed_split"))
                fixed_test = j.at("fixed_split").at("test").get<std::vector<std::string>>();
        }
        catch (const nlohmann::json::exception& e) {
            throw LoadError(manifest.string() + ": " + e.what());
        }
    }
    else {
        for (const auto& e : fs::directory_iterator(path))
            if (e.is_regular_file() && e.path().extension() == ".csv")
                files.push_back(e.path());
        std::sort(files.begin(), files.end());
    }
    std::vector<Task> tasks;
    for (const auto& f : files)
        tasks.push_back(load_task_csv(f, space));
    try {
        return MetaDataset(space, std::move(tasks), std::move(fixed_test));
    }
    catch (const ValidationError& e) {
        throw LoadError(path.string() + ": " + e.what());
    }
}

/// Loads a dataset whose manifest names its space file.
inline MetaDataset load_metadata(const std::filesystem::path& path)
{
    const auto manifest = path / "dataset.json";
    std::ifstream in(manifest);
    if (!in)
        throw LoadError("missing manifest " + manifest.string());
    nlohmann::json j;
    try {
        in >> j;
    }
    catch (const nlohmann::json::exception& e) {
        throw LoadError(manifest.string() + ": " + e.what());
    }
    if (!j.contains("space"))
        throw LoadError(manifest.string() + ": manifest has no \"space\" entry");
    auto space = SearchSpace::load((path / j.at("space").get<std::string>()).string());
    return load_metadata(path, space);
}

/// Writes the dataset as space.json + dataset.json + one canonical CSV per task.
inline void save_metadata(const MetaDataset& ds, const std::filesystem::path& dir)
{
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    {
        std::ofstream out(dir / "space.json");
        out << ds.space().to_json().dump(2) << '\n';
    }
    nlohmann::json manifest;
    manifest["space"] = "space.json";
    manifest["tasks"] = nlohmann::json::array();
    for (const auto& t : ds.tasks()) {
        manifest["tasks"].push_back(t.id() + ".csv");
        std::ofstream out(dir / (t.id() + ".csv"), std::ios::binary);
        out << task_to_csv(t, ds.space());
    }
    if (!ds.fixed_test().empty())
        manifest["fixed_split"] = {{"test", ds.fixed_test()}};
    std::ofstream out(dir / "dataset.json");
    out << manifest.dump(2) << '\n';
}

} // namespace fsbo
