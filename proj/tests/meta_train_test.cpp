#include "fsbo/meta_train.hpp"
#include "fsbo/synthetic.hpp"

#include <filesystem>
#include <fstream>
#include <numbers>

#include <gtest/gtest.h>

namespace fsbo {
namespace {

namespace fs = std::filesystem;

fs::path temp_file(const std::string& name)
{
    return fs::temp_directory_path() / ("fsbo_mt_" + std::to_string(::getpid()) + "_" + name);
}

TrainConfig small_config(std::size_t iterations, std::uint64_t seed = 1)
{
    TrainConfig c;
    c.outer_iterations = iterations;
    c.seed = seed;
    c.batch_size = 20;
    c.architecture.widths = {16, 8};
    return c;
}

TEST(SampleTask, SingleTaskAlwaysZero)
{
    Rng rng(1);
    for (int i = 0; i < 100; ++i)
        EXPECT_EQ(sample_task(1, rng), 0u);
}

TEST(SampleTask, UniformFrequencies)
{
    Rng rng(2);
    std::array<int, 4> counts{};
    const int n = 100000;
    for (int i = 0; i < n; ++i)
        ++counts[sample_task(4, rng)];
    for (int c : counts) {
        EXPECT_GE(c / double(n), 0.24);
        EXPECT_LE(c / double(n), 0.26);
    }
}

TEST(SampleTask, ReproducibleForFixedSeed)
{
    Rng a(3), b(3);
    for (int i = 0; i < 50; ++i)
        EXPECT_EQ(sample_task(7, a), sample_task(7, b));
}

TEST(SampleLimits, Postcondition)
{
    Rng rng(4);
    for (int i = 0; i < 10000; ++i) {
        auto [l, u] = sample_limits(0.0, 1.0, 0.05, rng);
        EXPECT_GE(l, 0.0);
        EXPECT_LT(l, u);
        EXPECT_LE(u, 1.0);
        EXPECT_GE(u - l, 0.05);
    }
}

TEST(SampleLimits, SymmetricAroundMidpoint)
{
    Rng rng(5);
    const double lo = -2.0, hi = 6.0;
    double sl = 0.0, su = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        auto [l, u] = sample_limits(lo, hi, 0.05, rng);
        sl += l;
        su += u;
    }
    EXPECT_NEAR((sl + su) / n, lo + hi, 0.01 * (hi - lo));
}

TEST(SampleLimits, AcceptanceRateApproachesHalf)
{
    Rng rng(6);
    std::size_t attempts = 0, total = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        sample_limits(0.0, 1.0, 1e-12, rng, &attempts);
        total += attempts;
    }
    EXPECT_NEAR(n / double(total), 0.5, 0.01);
}

TEST(ScaleLabels, AffineExamples)
{
    Eigen::VectorXd y(2);
    y << 0.3, 1.7;
    auto s = scale_labels(y, 0.3, 1.7);
    EXPECT_DOUBLE_EQ(s[0], 0.0);
    EXPECT_DOUBLE_EQ(s[1], 1.0);
    EXPECT_EQ(scale_labels(y, 0.0, 1.0), y);
    Eigen::VectorXd r(5);
    r << -3.1, 0.0, 2.5, 1e-3, 7.0;
    EXPECT_LT((unscale_labels(scale_labels(r, -1.2, 4.4), -1.2, 4.4) - r).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_THROW(scale_labels(y, 1.0, 1.0), ValidationError);
}

TEST(ScaleLabels, BatchLabelsStayInGuaranteedBand)
{
    Rng rng(7);
    const double lo = 0.5, hi = 3.0, rho = 0.05;
    std::uniform_real_distribution<double> y(lo, hi);
    for (int i = 0; i < 2000; ++i) {
        auto [l, u] = sample_limits(lo, hi, rho, rng);
        Eigen::VectorXd v(3);
        v << lo, hi, y(rng);
        auto s = scale_labels(v, l, u);
        EXPECT_TRUE((s.array() >= -1.0 / rho - 1e-12).all());
        EXPECT_TRUE((s.array() <= 1.0 + 1.0 / rho + 1e-12).all());
    }
}

TEST(SampleBatch, WithoutReplacementWhenEnoughRows)
{
    Rng rng(8);
    auto b = sample_batch(30, 10, rng);
    std::set<std::size_t> u(b.begin(), b.end());
    EXPECT_EQ(u.size(), 10u);
    auto c = sample_batch(4, 10, rng);
    EXPECT_EQ(c.size(), 10u);
    for (auto i : c)
        EXPECT_LT(i, 4u);
}

TEST(MetaTrain, ZeroIterationsReturnsInitialization)
{
    auto ds = sine_dataset(4, 1);
    auto cfg = small_config(0);
    auto ck = meta_train(ds, cfg);
    EXPECT_EQ(ck.surrogate.pack(), initial_surrogate(ds.space(), cfg).pack());
    EXPECT_TRUE(ck.loss_trace.empty());
    EXPECT_EQ(ck.space_fingerprint, ds.space().fingerprint());
    EXPECT_EQ(ck.dataset_fingerprint, ds.fingerprint());
}

TEST(MetaTrain, DeterministicForSeed)
{
    auto ds = sine_dataset(6, 2);
    auto a = meta_train(ds, small_config(60, 9));
    auto b = meta_train(ds, small_config(60, 9));
    EXPECT_EQ(checkpoint_to_json(a).dump(), checkpoint_to_json(b).dump());
    auto c = meta_train(ds, small_config(60, 10));
    EXPECT_NE(a.surrogate.pack(), c.surrogate.pack());
}

TEST(MetaTrain, SmoothedLossDecreasesOnSineFamily)
{
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        auto ds = sine_dataset(50, seed);
        TrainConfig cfg;
        cfg.outer_iterations = 2000;
        cfg.seed = seed;
        cfg.architecture.widths = {64, 64};
        auto ck = meta_train(ds, cfg);
        ASSERT_EQ(ck.loss_trace.size(), 2000u);
        EXPECT_LT(ck.loss_trace[1999], ck.loss_trace[49]) << "seed " << seed;
        EXPECT_EQ(ck.skipped_steps, 0u);
    }
}

TEST(MetaTrain, UnaugmentedSingleTaskMatchesPlainMinibatchLoop)
{
    auto ds = sine_dataset(2, 3);
    const Task& task = ds.task(0);
    auto cfg = small_config(40, 4);
    cfg.augmentation = false;
    cfg.inner_steps = 2;
    auto ck = meta_train(ds.space(), {&task}, task.f_min(), task.f_max(), cfg);

    // reference: the same RNG streams driving an ordinary minibatch GP fit
    DeepKernelSurrogate s = initial_surrogate(ds.space(), cfg);
    AdamState st = AdamState::zeros(s.num_params());
    const auto rates = learning_rates(s, cfg.lr_theta, cfg.lr_w);
    Rng rng(derive_seed(cfg.seed, "meta-train", 0));
    for (std::size_t it = 0; it < cfg.outer_iterations; ++it) {
        ASSERT_EQ(sample_task(1, rng), 0u);
        for (std::size_t k = 0; k < cfg.inner_steps; ++k) {
            auto rows = sample_batch(task.size(), cfg.batch_size, rng);
            Eigen::MatrixXd X(rows.size(), task.X().cols());
            Eigen::VectorXd y(rows.size());
            for (std::size_t r = 0; r < rows.size(); ++r) {
                X.row(r) = task.X().row(rows[r]);
                y[r] = task.y()[rows[r]];
            }
            surrogate_adam_step(s, nll_grad(s, X, y).packed(), st, rates);
        }
    }
    EXPECT_EQ(ck.surrogate.pack(), s.pack());
}

TEST(MetaTrain, RejectsBadConfig)
{
    auto ds = sine_dataset(2, 3);
    auto cfg = small_config(1);
    cfg.batch_size = 1;
    EXPECT_THROW(meta_train(ds, cfg), ValidationError);
    cfg = small_config(1);
    cfg.min_range_fraction = 1.0;
    EXPECT_THROW(meta_train(ds, cfg), ValidationError);
    EXPECT_THROW(train_config_from_json(nlohmann::json{{"bogus", 1}}), ValidationError);
}

TEST(Checkpoint, SaveLoadIsBitExact)
{
    auto ds = sine_dataset(5, 4);
    auto ck = meta_train(ds, small_config(30, 2));
    const auto path = temp_file("rt.json");
    save_checkpoint(ck, path);
    auto back = load_checkpoint(path, ds.space());
    fs::remove(path);
    EXPECT_EQ(back.surrogate.pack(), ck.surrogate.pack());
    EXPECT_EQ(back.loss_trace, ck.loss_trace);
    EXPECT_EQ(back.dataset_fingerprint, ck.dataset_fingerprint);
    const auto& t = ds.task(1);
    EXPECT_EQ(back.surrogate.nll(t.X(), t.y()), ck.surrogate.nll(t.X(), t.y()));
    EXPECT_EQ(to_json(back.config), to_json(ck.config));
}

TEST(Checkpoint, SpectralMixtureRoundTrip)
{
    auto ds = sine_dataset(3, 5);
    auto cfg = small_config(5, 2);
    cfg.architecture.kernel = BaseKernel::spectral_mixture;
    auto ck = meta_train(ds, cfg);
    auto back = checkpoint_from_json(nlohmann::json::parse(checkpoint_to_json(ck).dump()));
    EXPECT_EQ(back.surrogate.pack(), ck.surrogate.pack());
    EXPECT_EQ(back.surrogate.kernel.base, BaseKernel::spectral_mixture);
}

TEST(Checkpoint, WrongSpaceIsRejected)
{
    auto ds = sine_dataset(3, 6);
    auto ck = meta_train(ds, small_config(2));
    const auto path = temp_file("space.json");
    save_checkpoint(ck, path);
    EXPECT_THROW(load_checkpoint(path, spaces::glmnet()), CheckpointError);
    fs::remove(path);
}

TEST(Checkpoint, TruncatedOrForeignFilesAreCorrupt)
{
    auto ds = sine_dataset(3, 7);
    auto ck = meta_train(ds, small_config(2));
    const auto path = temp_file("trunc.json");
    save_checkpoint(ck, path);
    const auto size = fs::file_size(path);
    fs::resize_file(path, size / 2);
    EXPECT_THROW(load_checkpoint(path), CheckpointError);

    auto j = checkpoint_to_json(ck);
    j["format"] = "fsbo-ckpt-v0";
    std::ofstream(path) << j.dump();
    EXPECT_THROW(load_checkpoint(path), CheckpointError);

    j = checkpoint_to_json(ck);
    j["tensors"]["mlp.0.weight"]["shape"] = {3, 3};
    std::ofstream(path) << j.dump();
    EXPECT_THROW(load_checkpoint(path), CheckpointError);
    fs::remove(path);
    EXPECT_THROW(load_checkpoint(path), CheckpointError);
}

} // namespace
} // namespace fsbo
