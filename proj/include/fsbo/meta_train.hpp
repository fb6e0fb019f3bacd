#pragma once

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "fsbo/dkgp.hpp"
#include "fsbo/error.hpp"
#include "fsbo/metadata.hpp"
#include "fsbo/rng.hpp"

namespace fsbo {

inline constexpr const char* kCheckpointFormat = "fsbo-ckpt-v1";

struct TrainConfig {
    std::size_t outer_iterations = 10000;
    std::size_t inner_steps = 1;   ///< batches drawn per sampled task
    std::size_t batch_size = 50;
    double lr_theta = 1e-3;        ///< kernel parameters
    double lr_w = 1e-3;            ///< feature-map parameters
    std::uint64_t seed = 0;
    bool augmentation = true;
    double min_range_fraction = 0.05;
    bool limits_per_batch = false; ///< redraw (l, u) for every inner batch instead of once per task draw
    std::size_t trace_window = 50;
    SurrogateArchitecture architecture{};

    void validate() const
    {
        if (batch_size < 2)
            throw ValidationError("batch_size must be >= 2");
        if (!(lr_theta > 0.0) || !(lr_w > 0.0))
            throw ValidationError("learning rates must be positive");
        if (!(min_range_fraction > 0.0 && min_range_fraction < 1.0))
            throw ValidationError("min_range_fraction must lie in (0, 1)");
        if (inner_steps < 1)
            throw ValidationError("inner_steps must be >= 1");
        if (trace_window < 1)
            throw ValidationError("trace_window must be >= 1");
        if (architecture.widths.empty())
            throw ValidationError("architecture needs at least one layer");
    }
};

inline nlohmann::json architecture_to_json(const SurrogateArchitecture& a)
{
    return {{"widths", a.widths},
            {"kernel", to_string(a.kernel)},
            {"ard", a.ard},
            {"mixture_components", a.mixture_components}};
}

inline SurrogateArchitecture architecture_from_json(const nlohmann::json& j)
{
    SurrogateArchitecture a;
    if (j.contains("widths"))
        a.widths = j.at("widths").get<std::vector<Eigen::Index>>();
    if (j.contains("kernel"))
        a.kernel = base_kernel_from_string(j.at("kernel").get<std::string>());
    if (j.contains("ard"))
        a.ard = j.at("ard").get<bool>();
    if (j.contains("mixture_components"))
        a.mixture_components = j.at("mixture_components").get<Eigen::Index>();
    return a;
}

inline nlohmann::json to_json(const TrainConfig& c)
{
    return {{"outer_iterations", c.outer_iterations},
            {"inner_steps", c.inner_steps},
            {"batch_size", c.batch_size},
            {"lr_theta", c.lr_theta},
            {"lr_w", c.lr_w},
            {"seed", c.seed},
            {"augmentation", c.augmentation},
            {"min_range_fraction", c.min_range_fraction},
            {"limits_per_batch", c.limits_per_batch},
            {"trace_window", c.trace_window},
            {"architecture", architecture_to_json(c.architecture)}};
}

/// Fields absent from `j` keep their defaults; unknown keys are rejected.
inline TrainConfig train_config_from_json(const nlohmann::json& j)
{
    TrainConfig c;
    for (const auto& [key, v] : j.items()) {
        if (key == "outer_iterations") c.outer_iterations = v.get<std::size_t>();
        else if (key == "inner_steps") c.inner_steps = v.get<std::size_t>();
        else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
        else if (key == "lr_theta") c.lr_theta = v.get<double>();
        else if (key == "lr_w") c.lr_w = v.get<double>();
        else if (key == "seed") c.seed = v.get<std::uint64_t>();
        else if (key == "augmentation") c.augmentation = v.get<bool>();
        else if (key == "min_range_fraction") c.min_range_fraction = v.get<double>();
        else if (key == "limits_per_batch") c.limits_per_batch = v.get<bool>();
        else if (key == "trace_window") c.trace_window = v.get<std::size_t>();
        else if (key == "architecture") c.architecture = architecture_from_json(v);
        else throw ValidationError("unknown training option '" + key + "'");
    }
    c.validate();
    return c;
}

struct Checkpoint {
    DeepKernelSurrogate surrogate;
    std::uint64_t space_fingerprint = 0;
    std::uint64_t dataset_fingerprint = 0;
    TrainConfig config;
    std::vector<double> loss_trace; ///< trailing-window mean of per-point batch nll, one entry per outer iteration
    std::size_t skipped_steps = 0;
    std::string format = kCheckpointFormat;
};

/// Uniform task index in [0, num_tasks).
inline std::size_t sample_task(std::size_t num_tasks, Rng& rng)
{
    if (num_tasks == 0)
        throw ValidationError("cannot sample from zero tasks");
    return std::uniform_int_distribution<std::size_t>(0, num_tasks - 1)(rng);
}

struct Limits {
    double lower;
    double upper;
};

/// Draws l, u ~ U(y_min, y_max) independently and keeps the first pair with
/// u - l >= min_range_fraction * (y_max - y_min).
inline Limits sample_limits(double y_min, double y_max, double min_range_fraction, Rng& rng,
                            std::size_t* attempts = nullptr)
{
    if (!(y_min < y_max))
        throw ValidationError("sample_limits needs y_min < y_max");
    std::uniform_real_distribution<double> u(y_min, y_max);
    const double min_gap = min_range_fraction * (y_max - y_min);
    std::size_t tries = 0;
    for (;;) {
        ++tries;
        const double a = u(rng), b = u(rng);
        if (b - a >= min_gap && b > a) {
            if (attempts)
                *attempts = tries;
            return {a, b};
        }
    }
}

inline Eigen::VectorXd scale_labels(const Eigen::VectorXd& y, double l, double u)
{
    if (!(u > l))
        throw ValidationError("scale_labels needs u > l");
    return (y.array() - l) / (u - l);
}

inline Eigen::VectorXd unscale_labels(const Eigen::VectorXd& y, double l, double u)
{
    if (!(u > l))
        throw ValidationError("unscale_labels needs u > l");
    return (y.array() * (u - l) + l).matrix();
}

/// Row indices of one training batch: without replacement when n >= b,
/// otherwise b draws with replacement.
inline std::vector<std::size_t> sample_batch(std::size_t n, std::size_t b, Rng& rng)
{
    std::vector<std::size_t> out;
    out.reserve(b);
    if (n >= b) {
        std::vector<std::size_t> all(n);
        std::iota(all.begin(), all.end(), std::size_t{0});
        std::sample(all.begin(), all.end(), std::back_inserter(out), b, rng);
    }
    else {
        std::uniform_int_distribution<std::size_t> pick(0, n - 1);
        for (std::size_t i = 0; i < b; ++i)
            out.push_back(pick(rng));
    }
    return out;
}

/// Surrogate that meta-training starts from: fresh parameters from the
/// "init" stream of the seed.
inline DeepKernelSurrogate initial_surrogate(const SearchSpace& space, const TrainConfig& cfg)
{
    Rng rng(derive_seed(cfg.seed, "init", 0));
    return DeepKernelSurrogate::make(static_cast<Eigen::Index>(space.encoded_dim()), cfg.architecture, rng);
}

using TrainProgress = std::function<void(std::size_t iteration, double smoothed_loss)>;

/// Joint marginal-likelihood training over all tasks.
///
/// Per outer iteration: sample a task, draw (l, u) when augmentation is on,
/// then take `inner_steps` Adam steps, each on a fresh batch from that task.
/// A step whose likelihood cannot be evaluated is skipped; more than 1% of
/// skipped steps aborts with NumericalError.
///
/// `y_min`, `y_max` bound the labels of every task and define the range
/// from which (l, u) are drawn.
inline Checkpoint meta_train(const SearchSpace& space, const std::vector<const Task*>& tasks, double y_min,
                             double y_max, const TrainConfig& cfg, const TrainProgress& progress = {})
{
    cfg.validate();
    if (tasks.empty())
        throw ValidationError("meta-training needs at least one task");
    if (cfg.augmentation && !(y_min < y_max))
        throw ValidationError("augmentation needs y_min < y_max");
    Checkpoint ck;
    ck.config = cfg;
    ck.space_fingerprint = space.fingerprint();
    ck.surrogate = initial_surrogate(space, cfg);

    DeepKernelSurrogate& s = ck.surrogate;
    AdamState state = AdamState::zeros(s.num_params());
    const Eigen::VectorXd rates = learning_rates(s, cfg.lr_theta, cfg.lr_w);
    Rng rng(derive_seed(cfg.seed, "meta-train", 0));

    const std::size_t total_steps = cfg.outer_iterations * cfg.inner_steps;
    std::deque<double> window;
    double window_sum = 0.0;
    ck.loss_trace.reserve(cfg.outer_iterations);

    const Eigen::Index D = s.mlp.input_dim();
    Eigen::MatrixXd Xb(static_cast<Eigen::Index>(cfg.batch_size), D);
    Eigen::VectorXd yb(static_cast<Eigen::Index>(cfg.batch_size));

    for (std::size_t it = 0; it < cfg.outer_iterations; ++it) {
        const Task& task = *tasks[sample_task(tasks.size(), rng)];
        Limits lim{0.0, 1.0};
        if (cfg.augmentation && !cfg.limits_per_batch)
            lim = sample_limits(y_min, y_max, cfg.min_range_fraction, rng);

        double iter_loss = 0.0;
        std::size_t iter_ok = 0;
        for (std::size_t k = 0; k < cfg.inner_steps; ++k) {
            if (cfg.augmentation && cfg.limits_per_batch)
                lim = sample_limits(y_min, y_max, cfg.min_range_fraction, rng);
            const auto rows = sample_batch(task.size(), cfg.batch_size, rng);
            for (std::size_t r = 0; r < rows.size(); ++r) {
                const auto row = static_cast<Eigen::Index>(rows[r]);
                Xb.row(static_cast<Eigen::Index>(r)) = task.X().row(row);
                yb[static_cast<Eigen::Index>(r)] = task.y()[row];
            }
            const Eigen::VectorXd labels = cfg.augmentation ? scale_labels(yb, lim.lower, lim.upper) : yb;
            try {
                auto g = nll_grad(s, Xb, labels);
                const Eigen::VectorXd packed = g.packed();
                if (!std::isfinite(g.nll) || !packed.allFinite())
                    throw NumericalError("non-finite batch gradient");
                DeepKernelSurrogate next = s;
                AdamState next_state = state;
                surrogate_adam_step(next, packed, next_state, rates);
                if (!next.all_finite())
                    throw NumericalError("non-finite parameters after update");
                s = std::move(next);
                state = std::move(next_state);
                iter_loss += g.nll / static_cast<double>(cfg.batch_size);
                ++iter_ok;
            }
            catch (const NumericalError& e) {
                ++ck.skipped_steps;
                if (static_cast<double>(ck.skipped_steps) > 0.01 * static_cast<double>(total_steps))
                    throw NumericalError("meta-training aborted: " + std::to_string(ck.skipped_steps) + " of " +
                                         std::to_string(total_steps) + " steps skipped by iteration " +
                                         std::to_string(it) + " (task '" + task.id() + "'): " + e.what());
            }
        }
        if (iter_ok > 0) {
            const double v = iter_loss / static_cast<double>(iter_ok);
            window.push_back(v);
            window_sum += v;
            if (window.size() > cfg.trace_window) {
                window_sum -= window.front();
                window.pop_front();
            }
        }
        if (!window.empty())
            ck.loss_trace.push_back(window_sum / static_cast<double>(window.size()));
        if (progress && !ck.loss_trace.empty())
            progress(it, ck.loss_trace.back());
    }
    return ck;
}

inline Checkpoint meta_train(const MetaDataset& ds, const TrainConfig& cfg, const TrainProgress& progress = {})
{
    std::vector<const Task*> tasks;
    for (const auto& t : ds.tasks())
        tasks.push_back(&t);
    Checkpoint ck = meta_train(ds.space(), tasks, ds.y_min(), ds.y_max(), cfg, progress);
    ck.dataset_fingerprint = ds.fingerprint();
    return ck;
}

// ---- persistence -------------------------------------------------------------

inline std::string hex64(std::uint64_t v)
{
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
    return buf;
}

inline std::uint64_t parse_hex64(const std::string& s)
{
    if (s.size() != 16 || s.find_first_not_of("0123456789abcdef") != std::string::npos)
        throw CheckpointError("malformed fingerprint '" + s + "'");
    return std::stoull(s, nullptr, 16);
}

namespace detail {

inline nlohmann::json tensor_json(const Eigen::MatrixXd& m)
{
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            data.push_back(m(r, c));
    return {{"shape", {m.rows(), m.cols()}}, {"data", data}};
}

inline Eigen::MatrixXd tensor_from_json(const nlohmann::json& j, const std::string& name)
{
    const auto shape = j.at("shape").get<std::vector<Eigen::Index>>();
    const auto data = j.at("data").get<std::vector<double>>();
    if (shape.size() != 2 || shape[0] < 0 || shape[1] < 0 ||
        static_cast<std::size_t>(shape[0] * shape[1]) != data.size())
        throw CheckpointError("tensor '" + name + "' has inconsistent shape");
    Eigen::MatrixXd m(shape[0], shape[1]);
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            m(r, c) = data[k++];
    return m;
}

inline Eigen::MatrixXd as_column(const Eigen::VectorXd& v) { return v; }

} // namespace detail

inline nlohmann::json checkpoint_to_json(const Checkpoint& ck)
{
    nlohmann::json tensors = nlohmann::json::object();
    const auto& mlp = ck.surrogate.mlp;
    for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
        tensors["mlp." + std::to_string(l) + ".weight"] = detail::tensor_json(mlp.layers[l].weight);
        tensors["mlp." + std::to_string(l) + ".bias"] = detail::tensor_json(detail::as_column(mlp.layers[l].bias));
    }
    const auto& k = ck.surrogate.kernel;
    tensors["kernel.log_signal_variance"] = detail::tensor_json(Eigen::MatrixXd::Constant(1, 1, k.log_signal_variance));
    tensors["kernel.log_noise_variance"] = detail::tensor_json(Eigen::MatrixXd::Constant(1, 1, k.log_noise_variance));
    tensors["kernel.log_lengthscales"] = detail::tensor_json(detail::as_column(k.log_lengthscales));
    tensors["kernel.sm_log_weights"] = detail::tensor_json(detail::as_column(k.sm_log_weights));
    tensors["kernel.sm_means"] = detail::tensor_json(k.sm_means);
    tensors["kernel.sm_log_variances"] = detail::tensor_json(k.sm_log_variances);
    return {{"format", ck.format},
            {"base_kernel", to_string(k.base)},
            {"num_layers", mlp.layers.size()},
            {"space_fingerprint", hex64(ck.space_fingerprint)},
            {"dataset_fingerprint", hex64(ck.dataset_fingerprint)},
            {"config", to_json(ck.config)},
            {"skipped_steps", ck.skipped_steps},
            {"loss_trace", ck.loss_trace},
            {"tensors", tensors}};
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j)
{
    try {
        Checkpoint ck;
        ck.format = j.at("format").get<std::string>();
        if (ck.format != kCheckpointFormat)
            throw CheckpointError("unsupported checkpoint format '" + ck.format + "' (expected " + kCheckpointFormat +
                                  ")");
        ck.space_fingerprint = parse_hex64(j.at("space_fingerprint").get<std::string>());
        ck.dataset_fingerprint = parse_hex64(j.at("dataset_fingerprint").get<std::string>());
        ck.config = train_config_from_json(j.at("config"));
        ck.skipped_steps = j.at("skipped_steps").get<std::size_t>();
        ck.loss_trace = j.at("loss_trace").get<std::vector<double>>();
        const auto& t = j.at("tensors");
        const auto get = [&](const std::string& name) { return detail::tensor_from_json(t.at(name), name); };

        auto& mlp = ck.surrogate.mlp;
        const auto layers = j.at("num_layers").get<std::size_t>();
        if (layers == 0)
            throw CheckpointError("checkpoint has no feature-map layers");
        for (std::size_t l = 0; l < layers; ++l) {
            DenseLayer layer;
            layer.weight = get("mlp." + std::to_string(l) + ".weight");
            const Eigen::MatrixXd b = get("mlp." + std::to_string(l) + ".bias");
            if (b.cols() != 1 || b.rows() != layer.weight.rows())
                throw CheckpointError("layer " + std::to_string(l) + " bias does not match its weight");
            if (l > 0 && layer.weight.cols() != mlp.layers.back().weight.rows())
                throw CheckpointError("layer " + std::to_string(l) + " input width does not match");
            layer.bias = b.col(0);
            mlp.layers.push_back(std::move(layer));
        }
        auto& k = ck.surrogate.kernel;
        k.base = base_kernel_from_string(j.at("base_kernel").get<std::string>());
        k.log_signal_variance = get("kernel.log_signal_variance")(0, 0);
        k.log_noise_variance = get("kernel.log_noise_variance")(0, 0);
        k.log_lengthscales = get("kernel.log_lengthscales").col(0);
        k.sm_log_weights = get("kernel.sm_log_weights").col(0);
        k.sm_means = get("kernel.sm_means");
        k.sm_log_variances = get("kernel.sm_log_variances");

        const Eigen::Index out = mlp.output_dim();
        if (k.is_radial()) {
            if (k.log_lengthscales.size() != 1 && k.log_lengthscales.size() != out)
                throw CheckpointError("lengthscale count does not match the feature dimension");
        }
        else if (k.sm_means.rows() != k.sm_log_weights.size() || k.sm_means.cols() != out ||
                 k.sm_log_variances.rows() != k.sm_means.rows() || k.sm_log_variances.cols() != out) {
            throw CheckpointError("spectral-mixture tensors have inconsistent shapes");
        }
        if (!ck.surrogate.all_finite())
            throw CheckpointError("checkpoint contains non-finite parameters");
        for (double v : ck.loss_trace)
            if (!std::isfinite(v))
                throw CheckpointError("checkpoint loss trace is not finite");
        return ck;
    }
    catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("corrupt checkpoint: ") + e.what());
    }
    catch (const ValidationError& e) {
        throw CheckpointError(std::string("corrupt checkpoint: ") + e.what());
    }
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw CheckpointError("cannot write checkpoint '" + path.string() + "'");
    out << checkpoint_to_json(ck).dump() << '\n';
    if (!out)
        throw CheckpointError("failed writing checkpoint '" + path.string() + "'");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw CheckpointError("cannot read checkpoint '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(ss.str());
    }
    catch (const nlohmann::json::exception& e) {
        throw CheckpointError("corrupt checkpoint '" + path.string() + "': " + e.what());
    }
    return checkpoint_from_json(j);
}

/// Throws CheckpointError unless the checkpoint was trained on `space`.
inline void require_compatible(const Checkpoint& ck, const SearchSpace& space)
{
    if (ck.space_fingerprint != space.fingerprint())
        throw CheckpointError("checkpoint space fingerprint " + hex64(ck.space_fingerprint) +
                              " does not match search space '" + space.name() + "' (" + hex64(space.fingerprint()) +
                              ")");
    if (ck.surrogate.mlp.input_dim() != static_cast<Eigen::Index>(space.encoded_dim()))
        throw CheckpointError("checkpoint input dimension does not match the search space");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path, const SearchSpace& space)
{
    Checkpoint ck = load_checkpoint(path);
    require_compatible(ck, space);
    return ck;
}

} // namespace fsbo
