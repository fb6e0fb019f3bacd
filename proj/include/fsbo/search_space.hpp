#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "fsbo/error.hpp"
#include "fsbo/rng.hpp"

namespace fsbo {

enum class ParamKind { continuous, categorical };
enum class Scale { linear, log2 };

struct Condition {
    std::string parent;
    std::string value;
};

struct ParamSpec {
    std::string name;
    ParamKind kind = ParamKind::continuous;
    double low = 0.0;
    double high = 1.0;
    Scale scale = Scale::linear;
    std::vector<std::string> choices;
    std::optional<Condition> condition;

    static ParamSpec continuous(std::string name, double low, double high, Scale scale = Scale::linear)
    {
        ParamSpec p;
        p.name = std::move(name);
        p.kind = ParamKind::continuous;
        p.low = low;
        p.high = high;
        p.scale = scale;
        return p;
    }

    static ParamSpec categorical(std::string name, std::vector<std::string> choices)
    {
        ParamSpec p;
        p.name = std::move(name);
        p.kind = ParamKind::categorical;
        p.choices = std::move(choices);
        return p;
    }

    ParamSpec when(std::string parent, std::string value) &&
    {
        condition = Condition{std::move(parent), std::move(value)};
        return std::move(*this);
    }

    /// Number of encoded columns, including the activity flag of a conditional.
    std::size_t width() const
    {
        std::size_t w = kind == ParamKind::continuous ? 1 : choices.size();
        return w + (condition ? 1 : 0);
    }
};

using ParamValue = std::variant<double, std::string>;

/// One point in a search space. Only active parameters are present.
struct Config {
    std::map<std::string, ParamValue> values;

    bool has(const std::string& name) const { return values.count(name) != 0; }
    double real(const std::string& name) const { return std::get<double>(values.at(name)); }
    const std::string& choice(const std::string& name) const { return std::get<std::string>(values.at(name)); }

    bool operator==(const Config&) const = default;
};

inline nlohmann::json to_json(const Config& c)
{
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : c.values) {
        if (std::holds_alternative<double>(v))
            j[k] = std::get<double>(v);
        else
            j[k] = std::get<std::string>(v);
    }
    return j;
}

inline Config config_from_json(const nlohmann::json& j)
{
    if (!j.is_object())
        throw ValidationError("config must be a JSON object");
    Config c;
    for (const auto& [k, v] : j.items()) {
        if (v.is_number())
            c.values[k] = v.get<double>();
        else if (v.is_string())
            c.values[k] = v.get<std::string>();
        else
            throw ValidationError("config value for '" + k + "' must be a number or string");
    }
    return c;
}

inline std::string format_real(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

class SearchSpace {
public:
    SearchSpace() = default;

    explicit SearchSpace(std::vector<ParamSpec> params, std::string name = {})
        : name_(std::move(name)), params_(std::move(params))
    {
        check_and_index();
    }

    const std::string& name() const { return name_; }
    const std::vector<ParamSpec>& params() const { return params_; }
    std::size_t size() const { return params_.size(); }
    std::size_t encoded_dim() const { return encoded_dim_; }

    const ParamSpec& param(const std::string& name) const
    {
        auto it = index_.find(name);
        if (it == index_.end())
            throw ValidationError("unknown parameter '" + name + "'");
        return params_[it->second];
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    /// Offset of the first encoded column of a parameter (the flag for conditionals).
    std::size_t offset(std::size_t i) const { return offsets_[i]; }

    bool is_active(const ParamSpec& p, const Config& c) const
    {
        if (!p.condition)
            return true;
        auto it = c.values.find(p.condition->parent);
        if (it == c.values.end() || !std::holds_alternative<std::string>(it->second))
            return false;
        return std::get<std::string>(it->second) == p.condition->value;
    }

    /// Every invariant violation of `c`; empty when valid.
    std::vector<std::string> validate(const Config& c) const
    {
        std::vector<std::string> out;
        for (const auto& [k, v] : c.values) {
            if (!contains(k))
                out.push_back("unknown parameter '" + k + "'");
        }
        for (const auto& p : params_) {
            const bool active = is_active(p, c);
            auto it = c.values.find(p.name);
            if (!active) {
                if (it != c.values.end())
                    out.push_back("parameter '" + p.name + "' inactive (requires " + p.condition->parent + " = " +
                                  p.condition->value + ")");
                continue;
            }
            if (it == c.values.end()) {
                out.push_back("missing parameter '" + p.name + "'");
                continue;
            }
            if (p.kind == ParamKind::continuous) {
                if (!std::holds_alternative<double>(it->second)) {
                    out.push_back("parameter '" + p.name + "' must be real");
                    continue;
                }
                double v = std::get<double>(it->second);
                if (!std::isfinite(v) || v < p.low || v > p.high)
                    out.push_back("parameter '" + p.name + "' value " + format_real(v) + " out of [" +
                                  format_real(p.low) + ", " + format_real(p.high) + "]");
            }
            else {
                if (!std::holds_alternative<std::string>(it->second)) {
                    out.push_back("parameter '" + p.name + "' must be a choice string");
                    continue;
                }
                const auto& s = std::get<std::string>(it->second);
                if (std::find(p.choices.begin(), p.choices.end(), s) == p.choices.end())
                    out.push_back("parameter '" + p.name + "' has unknown choice '" + s + "'");
            }
        }
        return out;
    }

    bool is_valid(const Config& c) const { return validate(c).empty(); }

    /// Position of a continuous value in [0,1], in the parameter's scale.
    static double unit_position(const ParamSpec& p, double v)
    {
        if (p.scale == Scale::log2)
            return (std::log2(v) - std::log2(p.low)) / (std::log2(p.high) - std::log2(p.low));
        return (v - p.low) / (p.high - p.low);
    }

    static double from_unit_position(const ParamSpec& p, double u)
    {
        u = std::clamp(u, 0.0, 1.0);
        double v;
        if (p.scale == Scale::log2) {
            const double lo = std::log2(p.low), hi = std::log2(p.high);
            v = std::exp2(lo + u * (hi - lo));
        }
        else {
            v = p.low + u * (p.high - p.low);
        }
        return std::clamp(v, p.low, p.high);
    }

    Eigen::VectorXd encode(const Config& c) const
    {
        auto violations = validate(c);
        if (!violations.empty()) {
            std::string msg = "invalid config:";
            for (const auto& v : violations)
                msg += " " + v + ";";
            throw ValidationError(msg);
        }
        return encode_unchecked(c);
    }

    /// Encodes without validation; callers must have validated `c`.
    Eigen::VectorXd encode_unchecked(const Config& c) const
    {
        Eigen::VectorXd x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(encoded_dim_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            const auto& p = params_[i];
            std::size_t col = offsets_[i];
            if (p.condition) {
                if (!is_active(p, c))
                    continue;
                x[col++] = 1.0;
            }
            const auto& v = c.values.at(p.name);
            if (p.kind == ParamKind::continuous) {
                x[col] = unit_position(p, std::get<double>(v));
            }
            else {
                const auto& s = std::get<std::string>(v);
                auto pos = std::find(p.choices.begin(), p.choices.end(), s) - p.choices.begin();
                x[col + static_cast<std::size_t>(pos)] = 1.0;
            }
        }
        return x;
    }

    /// Inverse of encode: flags above 0.5 activate a conditional and the
    /// largest one-hot entry wins for categoricals.
    Config decode(const Eigen::VectorXd& x) const
    {
        if (static_cast<std::size_t>(x.size()) != encoded_dim_)
            throw ValidationError("encoded vector has wrong dimension");
        Config c;
        for (std::size_t i = 0; i < params_.size(); ++i) {
            const auto& p = params_[i];
            std::size_t col = offsets_[i];
            if (p.condition) {
                if (x[col] <= 0.5 || !is_active(p, c))
                    continue;
                ++col;
            }
            if (p.kind == ParamKind::continuous) {
                c.values[p.name] = from_unit_position(p, x[col]);
            }
            else {
                std::size_t best = 0;
                for (std::size_t k = 1; k < p.choices.size(); ++k)
                    if (x[col + k] > x[col + best])
                        best = k;
                c.values[p.name] = p.choices[best];
            }
        }
        return c;
    }

    Config sample_uniform(Rng& rng) const
    {
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        Config c;
        for (const auto& p : params_) {
            if (!is_active(p, c))
                continue;
            if (p.kind == ParamKind::continuous) {
                c.values[p.name] = from_unit_position(p, unit(rng));
            }
            else {
                std::uniform_int_distribution<std::size_t> pick(0, p.choices.size() - 1);
                c.values[p.name] = p.choices[pick(rng)];
            }
        }
        return c;
    }

    /// Latin hypercube design: every continuous parameter gets one value in
    /// each of `n` equal-width strata of its unit position.
    std::vector<Config> lhs_sample(std::size_t n, Rng& rng) const
    {
        if (n == 0)
            throw ValidationError("lhs_sample requires n >= 1");
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        std::vector<std::vector<double>> columns(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i) {
            if (params_[i].kind != ParamKind::continuous)
                continue;
            std::vector<std::size_t> perm(n);
            std::iota(perm.begin(), perm.end(), std::size_t{0});
            std::shuffle(perm.begin(), perm.end(), rng);
            auto& col = columns[i];
            col.resize(n);
            for (std::size_t k = 0; k < n; ++k) {
                // keep offsets off the stratum edges so round-off cannot move a point
                double offset = std::clamp(unit(rng), 1e-9, 1.0 - 1e-9);
                col[k] = (static_cast<double>(perm[k]) + offset) / static_cast<double>(n);
            }
        }
        std::vector<Config> out(n);
        for (std::size_t k = 0; k < n; ++k) {
            Config& c = out[k];
            for (std::size_t i = 0; i < params_.size(); ++i) {
                const auto& p = params_[i];
                if (!is_active(p, c))
                    continue;
                if (p.kind == ParamKind::continuous) {
                    c.values[p.name] = from_unit_position(p, columns[i][k]);
                }
                else {
                    std::uniform_int_distribution<std::size_t> pick(0, p.choices.size() - 1);
                    c.values[p.name] = p.choices[pick(rng)];
                }
            }
        }
        return out;
    }

    nlohmann::json to_json() const
    {
        nlohmann::json params = nlohmann::json::array();
        for (const auto& p : params_) {
            nlohmann::json j;
            j["name"] = p.name;
            if (p.kind == ParamKind::continuous) {
                j["kind"] = "continuous";
                j["bounds"] = {p.low, p.high};
                j["scale"] = p.scale == Scale::log2 ? "log2" : "linear";
            }
            else {
                j["kind"] = "categorical";
                j["choices"] = p.choices;
            }
            if (p.condition)
                j["condition"] = {{"parent", p.condition->parent}, {"value", p.condition->value}};
            params.push_back(std::move(j));
        }
        nlohmann::json out;
        out["format"] = 1;
        if (!name_.empty())
            out["name"] = name_;
        out["params"] = std::move(params);
        return out;
    }

    static SearchSpace from_json(const nlohmann::json& j)
    {
        try {
            if (!j.contains("format") || j.at("format").get<int>() != 1)
                throw ValidationError("space descriptor must declare \"format\": 1");
            std::vector<ParamSpec> params;
            for (const auto& pj : j.at("params")) {
                ParamSpec p;
                p.name = pj.at("name").get<std::string>();
                const auto kind = pj.at("kind").get<std::string>();
                if (kind == "continuous") {
                    p.kind = ParamKind::continuous;
                    const auto& b = pj.at("bounds");
                    if (!b.is_array() || b.size() != 2)
                        throw ValidationError("parameter '" + p.name + "': bounds must be [low, high]");
                    p.low = b[0].get<double>();
                    p.high = b[1].get<double>();
                    const auto scale = pj.value("scale", std::string("linear"));
                    if (scale == "linear")
                        p.scale = Scale::linear;
                    else if (scale == "log2")
                        p.scale = Scale::log2;
                    else
                        throw ValidationError("parameter '" + p.name + "': unknown scale '" + scale + "'");
                }
                else if (kind == "categorical") {
                    p.kind = ParamKind::categorical;
                    p.choices = pj.at("choices").get<std::vector<std::string>>();
                }
                else {
                    throw ValidationError("parameter '" + p.name + "': unknown kind '" + kind + "'");
                }
                if (pj.contains("condition") && !pj.at("condition").is_null()) {
                    const auto& cj = pj.at("condition");
                    p.condition = Condition{cj.at("parent").get<std::string>(), cj.at("value").get<std::string>()};
                }
                params.push_back(std::move(p));
            }
            return SearchSpace(std::move(params), j.value("name", std::string{}));
        }
        catch (const nlohmann::json::exception& e) {
            throw ValidationError(std::string("malformed space descriptor: ") + e.what());
        }
    }

    static SearchSpace load(const std::string& path)
    {
        std::ifstream in(path);
        if (!in)
            throw LoadError("cannot open space file " + path);
        nlohmann::json j;
        try {
            in >> j;
        }
        catch (const nlohmann::json::exception& e) {
            throw LoadError(path + ": " + e.what());
        }
        return from_json(j);
    }

    /// Hash of the canonical descriptor; two spaces with equal params match.
    std::uint64_t fingerprint() const
    {
        auto j = to_json();
        j.erase("name");
        return fnv1a(j.dump());
    }

private:
    void check_and_index()
    {
        offsets_.clear();
        index_.clear();
        encoded_dim_ = 0;
        for (std::size_t i = 0; i < params_.size(); ++i) {
            const auto& p = params_[i];
            if (p.name.empty())
                throw ValidationError("parameter name must not be empty");
            if (index_.count(p.name))
                throw ValidationError("duplicate parameter name '" + p.name + "'");
            if (p.kind == ParamKind::continuous) {
                if (!(p.low < p.high))
                    throw ValidationError("parameter '" + p.name + "': low must be < high");
                if (p.scale == Scale::log2 && !(p.low > 0.0))
                    throw ValidationError("parameter '" + p.name + "': log2 scale requires low > 0");
            }
            else {
                // a single choice is accepted as a fixed parameter
                if (p.choices.empty())
                    throw ValidationError("parameter '" + p.name + "': categorical needs choices");
                auto sorted = p.choices;
                std::sort(sorted.begin(), sorted.end());
                if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
                    throw ValidationError("parameter '" + p.name + "': duplicate choices");
            }
            if (p.condition) {
                auto it = index_.find(p.condition->parent);
                if (it == index_.end())
                    throw ValidationError("parameter '" + p.name + "': condition parent '" + p.condition->parent +
                                          "' must be declared earlier");
                const auto& parent = params_[it->second];
                if (parent.kind != ParamKind::categorical)
                    throw ValidationError("parameter '" + p.name + "': condition parent must be categorical");
                if (parent.condition)
                    throw ValidationError("parameter '" + p.name + "': nested conditions are not supported");
                if (std::find(parent.choices.begin(), parent.choices.end(), p.condition->value) ==
                    parent.choices.end())
                    throw ValidationError("parameter '" + p.name + "': condition value '" + p.condition->value +
                                          "' is not a choice of '" + parent.name + "'");
            }
            index_[p.name] = i;
            offsets_.push_back(encoded_dim_);
            encoded_dim_ += p.width();
        }
    }

    std::string name_;
    std::vector<ParamSpec> params_;
    std::vector<std::size_t> offsets_;
    std::unordered_map<std::string, std::size_t> index_;
    std::size_t encoded_dim_ = 0;
};

/// Encodes a list of configs into the rows of a matrix.
inline Eigen::MatrixXd encode_all(const SearchSpace& space, const std::vector<Config>& configs)
{
    Eigen::MatrixXd X(static_cast<Eigen::Index>(configs.size()), static_cast<Eigen::Index>(space.encoded_dim()));
    for (std::size_t i = 0; i < configs.size(); ++i)
        X.row(static_cast<Eigen::Index>(i)) = space.encode(configs[i]).transpose();
    return X;
}

namespace spaces {

inline SearchSpace glmnet()
{
    return SearchSpace({ParamSpec::continuous("alpha", 0.0, 1.0),
                        ParamSpec::continuous("lambda", std::exp2(-10.0), std::exp2(10.0), Scale::log2)},
                       "glmnet");
}

inline SearchSpace svm()
{
    return SearchSpace({ParamSpec::categorical("kernel", {"linear", "polynomial", "radial"}),
                        ParamSpec::continuous("cost", std::exp2(-10.0), std::exp2(10.0), Scale::log2),
                        ParamSpec::categorical("degree", {"2", "3", "4", "5"}).when("kernel", "polynomial"),
                        ParamSpec::continuous("gamma", std::exp2(-10.0), std::exp2(10.0), Scale::log2)
                            .when("kernel", "radial")},
                       "svm");
}

inline SearchSpace adaboost()
{
    // grid levels {2..10^4} and {2..30} are stored as log-scale reals
    return SearchSpace({ParamSpec::continuous("iterations", 2.0, 10000.0, Scale::log2),
                        ParamSpec::continuous("product_terms", 2.0, 30.0, Scale::log2)},
                       "adaboost");
}

} // namespace spaces

} // namespace fsbo
