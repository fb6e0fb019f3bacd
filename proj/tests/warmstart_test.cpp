#include "fsbo/warmstart.hpp"

#include <cmath>
#include <map>
#include <set>

#include <gtest/gtest.h>

namespace fsbo {
namespace {

Eigen::MatrixXd random_matrix(Eigen::Index c, Eigen::Index t, Rng& rng)
{
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Eigen::MatrixXd m(c, t);
    for (Eigen::Index i = 0; i < m.size(); ++i)
        m.data()[i] = u(rng);
    return m;
}

// exhaustive minimum over all pairs
double brute_force_pairs(const Eigen::MatrixXd& v, CandidateSet* arg = nullptr)
{
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index a = 0; a < v.rows(); ++a)
        for (Eigen::Index b = a + 1; b < v.rows(); ++b) {
            double s = 0.0;
            for (Eigen::Index t = 0; t < v.cols(); ++t)
                s += std::min(v(a, t), v(b, t));
            if (s < best) {
                best = s;
                if (arg)
                    *arg = {static_cast<std::size_t>(a), static_cast<std::size_t>(b)};
            }
        }
    return best;
}

TEST(SetLoss, MatchesHandComputedToy)
{
    Eigen::MatrixXd v(3, 2);
    v << 0.2, 0.9,
         0.7, 0.1,
         0.5, 0.5;
    const auto m = response_matrix_from_values(v);
    EXPECT_DOUBLE_EQ(set_loss({0}, m), 1.1);
    EXPECT_DOUBLE_EQ(set_loss({0, 1}, m), 0.2 + 0.1);
    EXPECT_DOUBLE_EQ(set_loss({1, 2}, m), 0.5 + 0.1);
    EXPECT_DOUBLE_EQ(set_loss({0, 1, 2}, m), 0.3);
    EXPECT_THROW(set_loss({}, m), ValidationError);
    EXPECT_THROW(set_loss({3}, m), ValidationError);
}

TEST(SetLoss, SupersetNeverWorse)
{
    Rng rng(1);
    const auto m = response_matrix_from_values(random_matrix(10, 4, rng));
    for (std::size_t a = 0; a < 10; ++a)
        for (std::size_t b = a + 1; b < 10; ++b)
            EXPECT_LE(set_loss({a, b}, m), set_loss({a}, m));
}

TEST(InitWeight, SamplingFollowsTwoToOneRatio)
{
    // minima 0 and ln 2 give weights 1 and 1/2
    Eigen::MatrixXd v(2, 2);
    v << 0.0, 0.8,
         std::log(2.0), 0.9;
    const auto m = response_matrix_from_values(v);
    EXPECT_DOUBLE_EQ(init_weight(v.row(0)), 1.0);
    EXPECT_DOUBLE_EQ(init_weight(v.row(1)), 0.5);
    Rng rng(2);
    int first = 0;
    const int n = 60000;
    for (int i = 0; i < n; ++i)
        first += sample_initial_set(m, 1, rng)[0] == 0;
    EXPECT_NEAR(first / double(n), 2.0 / 3.0, 0.01);
}

TEST(InitialSet, DistinctSortedMembers)
{
    Rng rng(3);
    const auto m = response_matrix_from_values(random_matrix(12, 3, rng));
    for (int i = 0; i < 200; ++i) {
        auto s = sample_initial_set(m, 5, rng);
        ASSERT_EQ(s.size(), 5u);
        EXPECT_TRUE(std::is_sorted(s.begin(), s.end()));
        EXPECT_EQ(std::set<std::size_t>(s.begin(), s.end()).size(), 5u);
    }
    auto all = sample_initial_set(m, 12, rng);
    EXPECT_EQ(all.size(), 12u);
    EXPECT_THROW(sample_initial_set(m, 13, rng), ValidationError);
    EXPECT_THROW(sample_initial_set(m, 0, rng), ValidationError);
}

TEST(Mutate, ReplacesExactlyOneMember)
{
    Rng rng(4);
    const auto m = response_matrix_from_values(random_matrix(15, 3, rng));
    for (int i = 0; i < 500; ++i) {
        auto s = sample_initial_set(m, 4, rng);
        auto c = mutate(s, m, rng);
        ASSERT_EQ(c.size(), 4u);
        EXPECT_TRUE(std::is_sorted(c.begin(), c.end()));
        EXPECT_EQ(std::set<std::size_t>(c.begin(), c.end()).size(), 4u);
        CandidateSet common;
        std::set_intersection(s.begin(), s.end(), c.begin(), c.end(), std::back_inserter(common));
        EXPECT_EQ(common.size(), 3u);
    }
}

TEST(Mutate, SingletonExcludesRemovedMember)
{
    Rng rng(5);
    const auto m = response_matrix_from_values(random_matrix(4, 2, rng));
    for (int i = 0; i < 200; ++i) {
        CandidateSet s{static_cast<std::size_t>(i % 4)};
        auto c = mutate(s, m, rng);
        ASSERT_EQ(c.size(), 1u);
        EXPECT_NE(c[0], s[0]);
    }
}

TEST(Mutate, FullPoolReturnsSameSet)
{
    Rng rng(6);
    const auto m = response_matrix_from_values(random_matrix(3, 2, rng));
    const CandidateSet all{0, 1, 2};
    for (int i = 0; i < 50; ++i)
        EXPECT_EQ(mutate(all, m, rng), all);
}

TEST(Crossover, ChildDrawnFromParentUnion)
{
    Rng rng(7);
    std::map<CandidateSet, int> seen;
    const CandidateSet a{0, 2, 4}, b{1, 2, 5};
    for (int i = 0; i < 2000; ++i) {
        auto c = crossover(a, b, rng);
        ASSERT_EQ(c.size(), 3u);
        EXPECT_EQ(std::set<std::size_t>(c.begin(), c.end()).size(), 3u);
        for (auto x : c)
            EXPECT_TRUE(std::count(a.begin(), a.end(), x) || std::count(b.begin(), b.end(), x));
        ++seen[c];
    }
    // union has 5 members, so C(5,3) = 10 children, each about equally likely
    EXPECT_EQ(seen.size(), 10u);
    for (const auto& [set, n] : seen)
        EXPECT_NEAR(n / 2000.0, 0.1, 0.03);
    EXPECT_EQ(crossover(a, a, rng), a);
    EXPECT_THROW(crossover(a, CandidateSet{1}, rng), ValidationError);
}

TEST(Evolve, FindsExhaustiveOptimumOnSmallInstances)
{
    int hits = 0;
    for (int inst = 0; inst < 10; ++inst) {
        Rng rng(derive_seed(8, "instance", inst));
        const auto m = response_matrix_from_values(random_matrix(8, 3, rng));
        EaConfig cfg;
        cfg.set_size = 2;
        cfg.steps = 1000;
        cfg.seed = static_cast<std::uint64_t>(inst);
        auto r = evolve(m, cfg);
        hits += std::abs(r.best_loss - brute_force_pairs(m.values)) < 1e-12;
        EXPECT_DOUBLE_EQ(r.best_loss, set_loss(r.best, m));
    }
    EXPECT_EQ(hits, 10);
}

TEST(Evolve, TraceIsNonIncreasingAndDeterministic)
{
    Rng rng(9);
    const auto m = response_matrix_from_values(random_matrix(40, 6, rng));
    EaConfig cfg;
    cfg.set_size = 4;
    cfg.steps = 2000;
    cfg.seed = 3;
    auto a = evolve(m, cfg), b = evolve(m, cfg);
    ASSERT_EQ(a.loss_trace.size(), 2001u);
    for (std::size_t i = 1; i < a.loss_trace.size(); ++i)
        EXPECT_LE(a.loss_trace[i], a.loss_trace[i - 1]);
    EXPECT_EQ(a.best, b.best);
    EXPECT_EQ(a.loss_trace, b.loss_trace);
    EXPECT_DOUBLE_EQ(a.loss_trace.back(), a.best_loss);
}

TEST(Evolve, InvariantToCandidateOrder)
{
    for (int inst = 0; inst < 5; ++inst) {
        Rng rng(derive_seed(10, "perm", inst));
        const Eigen::MatrixXd v = random_matrix(9, 3, rng);
        std::vector<Eigen::Index> perm(9);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        Eigen::MatrixXd pv(9, 3);
        for (Eigen::Index i = 0; i < 9; ++i)
            pv.row(i) = v.row(perm[static_cast<std::size_t>(i)]);
        EaConfig cfg;
        cfg.set_size = 2;
        cfg.steps = 1000;
        auto a = evolve(response_matrix_from_values(v), cfg);
        cfg.seed = 77;
        auto b = evolve(response_matrix_from_values(pv), cfg);
        CandidateSet mapped;
        for (auto i : b.best)
            mapped.push_back(static_cast<std::size_t>(perm[i]));
        std::sort(mapped.begin(), mapped.end());
        EXPECT_EQ(a.best, mapped);
    }
}

TEST(Evolve, RejectsBadConfig)
{
    Rng rng(11);
    const auto m = response_matrix_from_values(random_matrix(3, 2, rng));
    EaConfig cfg;
    cfg.set_size = 4;
    EXPECT_THROW(evolve(m, cfg), ValidationError);
    cfg.set_size = 2;
    cfg.mutation_prob = 1.0;
    EXPECT_THROW(evolve(m, cfg), ValidationError);
}

// Two 1-D tasks on interleaved grids so each misses the other's points.
struct TwoGridFixture {
    SearchSpace space{{ParamSpec::continuous("x", 0.0, 1.0)}, "line"};
    std::vector<Task> tasks;

    TwoGridFixture()
    {
        for (int t = 0; t < 2; ++t) {
            std::vector<Record> rows;
            for (int i = 0; i < 8; ++i) {
                Config c;
                const double x = (2 * i + t) / 15.0;
                c.values["x"] = x;
                rows.push_back({c, std::sin(3.0 * x + t)});
            }
            tasks.emplace_back("task" + std::to_string(t), space, rows);
        }
    }
    std::vector<const Task*> ptrs() const { return {&tasks[0], &tasks[1]}; }
};

TEST(ResponseMatrix, ObservedEntriesPassThroughExactly)
{
    TwoGridFixture f;
    Rng rng(12);
    SurrogateArchitecture arch;
    arch.widths = {8, 8};
    const auto start = DeepKernelSurrogate::make(1, arch, rng);
    auto cands = union_candidates(f.space, f.ptrs());
    ASSERT_EQ(cands.size(), 16u);
    ImputationOptions opt;
    opt.fine_tune_steps = 20;
    const auto m = build_response_matrix(start, f.space, f.ptrs(), cands, opt);
    ASSERT_EQ(m.num_candidates(), 16u);
    ASSERT_EQ(m.num_tasks(), 2u);
    for (std::size_t t = 0; t < 2; ++t)
        for (std::size_t i = 0; i < 16; ++i) {
            const auto ii = static_cast<Eigen::Index>(i), tt = static_cast<Eigen::Index>(t);
            const double v = m.values(ii, tt);
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
            const auto row = f.tasks[t].find(f.space.encode(m.candidates[i]));
            EXPECT_EQ(m.imputed(ii, tt), !row.has_value());
            if (row)
                EXPECT_EQ(v, normalize_response(f.tasks[t], f.tasks[t].records()[*row].y));
        }
    EXPECT_EQ(m.imputed.count(), 16);
}

TEST(ResponseMatrix, ConstantTaskIsDropped)
{
    TwoGridFixture f;
    std::vector<Record> rows;
    for (int i = 0; i < 4; ++i) {
        Config c;
        c.values["x"] = i / 3.0;
        rows.push_back({c, 1.5});
    }
    Task flat("flat", f.space, rows);
    Rng rng(13);
    SurrogateArchitecture arch;
    arch.widths = {4};
    const auto start = DeepKernelSurrogate::make(1, arch, rng);
    std::vector<const Task*> ts{&f.tasks[0], &flat};
    auto m = build_response_matrix(start, f.space, ts, union_candidates(f.space, {&f.tasks[0]}));
    EXPECT_EQ(m.num_tasks(), 1u);
    ASSERT_EQ(m.dropped_tasks.size(), 1u);
    EXPECT_EQ(m.dropped_tasks[0], "flat");
    EXPECT_FALSE(m.imputed.any());
    EXPECT_THROW(build_response_matrix(start, f.space, {&flat}, union_candidates(f.space, {&flat})),
                 DegenerateTaskError);
}

TEST(ResponseMatrix, ToyMatchesTwoPointPosteriorOracle)
{
    const SearchSpace space({ParamSpec::continuous("x", 0.0, 1.0)}, "line");
    auto cfg = [](double x) {
        Config c;
        c.values["x"] = x;
        return c;
    };
    // task 0 misses x = 0.5, task 1 misses x = 1
    Task t0("a", space, {{cfg(0.0), 0.3}, {cfg(1.0), 1.1}});
    Task t1("b", space, {{cfg(0.0), -0.4}, {cfg(0.5), 0.6}});
    Rng rng(14);
    SurrogateArchitecture arch;
    arch.widths = {6, 3};
    const auto start = DeepKernelSurrogate::make(1, arch, rng);
    ImputationOptions opt;
    opt.fine_tune_steps = 0;
    const auto m = build_response_matrix(start, space, {&t0, &t1}, {cfg(0.0), cfg(0.5), cfg(1.0)}, opt);

    // mean = k*' (K + (noise + 1e-6 s) I)^-1 y with an explicit 2x2 inverse
    auto oracle = [&](const Task& t, double xq) {
        const Eigen::MatrixXd Z = start.features(t.X());
        Eigen::MatrixXd q(1, 1);
        q(0, 0) = xq;
        const Eigen::MatrixXd Zq = start.features(q);
        const Eigen::MatrixXd K = kernel_matrix(start.kernel, Z, Z);
        const Eigen::MatrixXd ks = kernel_matrix(start.kernel, Z, Zq);
        const double s = start.kernel.signal_variance();
        const double d = start.kernel.noise_variance() + 1e-6 * s;
        const double a = K(0, 0) + d, b = K(0, 1), c = K(1, 0), e = K(1, 1) + d;
        const double det = a * e - b * c;
        const double w0 = (e * t.y()[0] - b * t.y()[1]) / det;
        const double w1 = (-c * t.y()[0] + a * t.y()[1]) / det;
        const double mean = ks(0, 0) * w0 + ks(1, 0) * w1;
        return (std::clamp(mean, t.f_min(), t.f_max()) - t.f_min()) / (t.f_max() - t.f_min());
    };
    Eigen::MatrixXd expect(3, 2);
    expect << 0.0, 0.0,
              oracle(t0, 0.5), 1.0,
              1.0, oracle(t1, 1.0);
    EXPECT_LT((m.values - expect).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_TRUE(m.imputed(1, 0));
    EXPECT_TRUE(m.imputed(2, 1));
    EXPECT_EQ(m.imputed.count(), 2);
}

TEST(Evolve, ZeroStepsReturnsBestInitialSet)
{
    Rng rng(15);
    const auto m = response_matrix_from_values(random_matrix(20, 4, rng));
    EaConfig cfg;
    cfg.set_size = 3;
    cfg.steps = 0;
    const auto r = evolve(m, cfg);
    ASSERT_EQ(r.loss_trace.size(), 1u);
    // replay the initial population draws
    Rng replay(derive_seed(cfg.seed, "evolve", 0));
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < cfg.population_size; ++k)
        best = std::min(best, set_loss(sample_initial_set(m, 3, replay), m));
    EXPECT_EQ(r.best_loss, best);
}

TEST(ConfigsJson, RoundTrip)
{
    TwoGridFixture f;
    auto cands = union_candidates(f.space, f.ptrs());
    cands.resize(3);
    const auto j = configs_to_json(cands);
    ASSERT_TRUE(j.is_array());
    const auto back = configs_from_json(nlohmann::json::parse(j.dump()));
    ASSERT_EQ(back.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i)
        EXPECT_EQ(f.space.encode(back[i]), f.space.encode(cands[i]));
    EXPECT_THROW(configs_from_json(nlohmann::json::object()), ValidationError);
}

} // namespace
} // namespace fsbo
