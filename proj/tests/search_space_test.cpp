#include "fsbo/search_space.hpp"

#include <cmath>
#include <filesystem>
#include <set>

#include <gtest/gtest.h>

namespace fsbo {
namespace {

Config make(std::initializer_list<std::pair<const std::string, ParamValue>> kv)
{
    Config c;
    c.values = std::map<std::string, ParamValue>(kv);
    return c;
}

bool contains_text(const std::vector<std::string>& v, const std::string& needle)
{
    for (const auto& s : v)
        if (s.find(needle) != std::string::npos)
            return true;
    return false;
}

TEST(SearchSpace, RejectsMalformedSpecs)
{
    EXPECT_THROW(SearchSpace({ParamSpec::continuous("a", 1.0, 1.0)}), ValidationError);
    EXPECT_THROW(SearchSpace({ParamSpec::continuous("a", 0.0, 1.0, Scale::log2)}), ValidationError);
    EXPECT_THROW(SearchSpace({ParamSpec::categorical("a", {"x", "x"})}), ValidationError);
    EXPECT_THROW(SearchSpace({ParamSpec::continuous("a", 0, 1), ParamSpec::continuous("a", 0, 1)}), ValidationError);
    // condition must name an earlier categorical
    EXPECT_THROW(SearchSpace({ParamSpec::continuous("g", 1, 2).when("k", "r"), ParamSpec::categorical("k", {"r", "l"})}),
                 ValidationError);
    EXPECT_THROW(SearchSpace({ParamSpec::continuous("k", 0, 1), ParamSpec::continuous("g", 1, 2).when("k", "r")}),
                 ValidationError);
}

TEST(SearchSpace, EncodedDimCountsFlagsAndOneHots)
{
    EXPECT_EQ(spaces::glmnet().encoded_dim(), 2u);
    // kernel(3) + cost(1) + degree(flag + 4) + gamma(flag + 1)
    EXPECT_EQ(spaces::svm().encoded_dim(), 11u);
}

TEST(SearchSpace, ValidateSvmConditionals)
{
    const auto svm = spaces::svm();
    EXPECT_TRUE(svm.validate(make({{"kernel", std::string("linear")}, {"cost", 1.0}})).empty());

    auto v = svm.validate(make({{"kernel", std::string("linear")}, {"cost", 1.0}, {"degree", std::string("3")}}));
    ASSERT_EQ(v.size(), 1u);
    EXPECT_TRUE(contains_text(v, "'degree' inactive"));

    v = svm.validate(make({{"kernel", std::string("polynomial")}, {"cost", 1.0}}));
    EXPECT_TRUE(contains_text(v, "missing parameter 'degree'"));
}

TEST(SearchSpace, ValidateReportsEveryViolation)
{
    const auto glm = spaces::glmnet();
    auto v = glm.validate(make({{"alpha", 1.5}, {"lambda", 1.0}}));
    ASSERT_EQ(v.size(), 1u);
    EXPECT_TRUE(contains_text(v, "'alpha' value 1.5 out of [0, 1]"));

    v = glm.validate(make({{"alpha", -1.0}, {"bogus", 2.0}}));
    EXPECT_EQ(v.size(), 3u); // unknown, out of range, missing lambda
}

TEST(SearchSpace, EncodeGlmnet)
{
    const auto glm = spaces::glmnet();
    auto lo = glm.encode(make({{"alpha", 0.0}, {"lambda", std::exp2(-10.0)}}));
    EXPECT_DOUBLE_EQ(lo[0], 0.0);
    EXPECT_DOUBLE_EQ(lo[1], 0.0);
    auto hi = glm.encode(make({{"alpha", 1.0}, {"lambda", std::exp2(10.0)}}));
    EXPECT_DOUBLE_EQ(hi[0], 1.0);
    EXPECT_DOUBLE_EQ(hi[1], 1.0);
    // log2(1) = 0 sits in the middle of [-10, 10]
    auto mid = glm.encode(make({{"alpha", 0.5}, {"lambda", 1.0}}));
    EXPECT_DOUBLE_EQ(mid[0], 0.5);
    EXPECT_DOUBLE_EQ(mid[1], 0.5);
}

TEST(SearchSpace, EncodeInactiveBlockIsZero)
{
    const auto svm = spaces::svm();
    auto x = svm.encode(make({{"kernel", std::string("radial")}, {"cost", 1.0}, {"gamma", 4.0}}));
    // kernel one-hot
    EXPECT_EQ(x[0], 0.0);
    EXPECT_EQ(x[1], 0.0);
    EXPECT_EQ(x[2], 1.0);
    EXPECT_DOUBLE_EQ(x[3], 0.5);
    for (int i = 4; i < 9; ++i)
        EXPECT_EQ(x[i], 0.0) << i; // degree flag + one-hot
    EXPECT_EQ(x[9], 1.0);
    EXPECT_DOUBLE_EQ(x[10], 0.6);

    EXPECT_THROW(svm.encode(make({{"kernel", std::string("radial")}, {"cost", 1.0}})), ValidationError);
}

TEST(SearchSpace, SingleChoiceSpaceAlwaysSamplesIt)
{
    SearchSpace s({ParamSpec::categorical("p", {"a"})});
    Rng rng(1);
    for (int i = 0; i < 100; ++i)
        EXPECT_EQ(s.sample_uniform(rng).choice("p"), "a");
}

TEST(SearchSpace, UniformSampleMeanOfAlpha)
{
    const auto glm = spaces::glmnet();
    Rng rng(7);
    double sum = 0.0;
    const int n = 10000;
    for (int i = 0; i < n; ++i)
        sum += glm.encode(glm.sample_uniform(rng))[0];
    const double mean = sum / n;
    EXPECT_GE(mean, 0.48);
    EXPECT_LE(mean, 0.52);
}

TEST(SearchSpace, UniformSamplesHonourConditionsAndUnitCube)
{
    const auto svm = spaces::svm();
    Rng rng(11);
    for (int i = 0; i < 10000; ++i) {
        auto c = svm.sample_uniform(rng);
        ASSERT_TRUE(svm.is_valid(c));
        EXPECT_EQ(c.has("degree"), c.choice("kernel") == "polynomial");
        EXPECT_EQ(c.has("gamma"), c.choice("kernel") == "radial");
        auto x = svm.encode(c);
        EXPECT_TRUE((x.array() >= 0.0).all() && (x.array() <= 1.0).all());
    }
}

TEST(SearchSpace, DecodeRoundTripsContinuousValues)
{
    const auto svm = spaces::svm();
    Rng rng(3);
    for (int i = 0; i < 2000; ++i) {
        auto c = svm.sample_uniform(rng);
        auto back = svm.decode(svm.encode(c));
        ASSERT_EQ(back.values.size(), c.values.size());
        for (const auto& [k, v] : c.values) {
            if (std::holds_alternative<double>(v))
                EXPECT_NEAR(back.real(k), std::get<double>(v), 1e-12 * std::max(1.0, std::abs(std::get<double>(v))));
            else
                EXPECT_EQ(back.choice(k), std::get<std::string>(v));
        }
    }
}

TEST(SearchSpace, LhsSinglePoint)
{
    SearchSpace s({ParamSpec::continuous("x", -3.0, 5.0)});
    Rng rng(5);
    auto pts = s.lhs_sample(1, rng);
    ASSERT_EQ(pts.size(), 1u);
    auto u = s.encode(pts[0])[0];
    EXPECT_GE(u, 0.0);
    EXPECT_LE(u, 1.0);
    EXPECT_THROW(s.lhs_sample(0, rng), ValidationError);
}

TEST(SearchSpace, LhsStratificationExhaustive)
{
    const auto glm = spaces::glmnet();
    const auto svm = spaces::svm();
    Rng rng(99);
    for (std::size_t n = 1; n <= 64; ++n) {
        for (const auto* space : {&glm, &svm}) {
            auto pts = space->lhs_sample(n, rng);
            ASSERT_EQ(pts.size(), n);
            for (std::size_t i = 0; i < space->size(); ++i) {
                const auto& p = space->params()[i];
                if (p.kind != ParamKind::continuous || p.condition)
                    continue;
                std::set<std::size_t> strata;
                for (const auto& c : pts) {
                    ASSERT_TRUE(space->is_valid(c));
                    const double u = SearchSpace::unit_position(p, c.real(p.name));
                    strata.insert(std::min(n - 1, static_cast<std::size_t>(std::floor(u * static_cast<double>(n)))));
                }
                EXPECT_EQ(strata.size(), n) << "n=" << n << " param=" << p.name;
            }
        }
    }
}

TEST(SearchSpace, JsonRoundTripAndFingerprint)
{
    const auto svm = spaces::svm();
    auto back = SearchSpace::from_json(svm.to_json());
    EXPECT_EQ(back.to_json(), svm.to_json());
    EXPECT_EQ(back.fingerprint(), svm.fingerprint());
    EXPECT_NE(spaces::glmnet().fingerprint(), svm.fingerprint());

    auto j = svm.to_json();
    j["format"] = 2;
    EXPECT_THROW(SearchSpace::from_json(j), ValidationError);
}

TEST(SearchSpace, ShippedDescriptorsMatchBuiltins)
{
    const std::filesystem::path dir = FSBO_DATA_DIR "/spaces";
    EXPECT_EQ(SearchSpace::load((dir / "glmnet.json").string()).to_json(), spaces::glmnet().to_json());
    EXPECT_EQ(SearchSpace::load((dir / "svm.json").string()).to_json(), spaces::svm().to_json());
    EXPECT_EQ(SearchSpace::load((dir / "adaboost.json").string()).to_json(), spaces::adaboost().to_json());
}

} // namespace
} // namespace fsbo
