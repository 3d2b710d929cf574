#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "dasr/checkpoint.hpp"
#include "dasr/metrics.hpp"
#include "dasr/pipeline.hpp"

using namespace dasr;

namespace {

ModelConfig small_model(int scale, std::uint64_t seed = 5) {
    ModelConfig c;
    c.n_groups = 1;
    c.n_blocks = 1;
    c.channels = 8;
    c.reduction = 4;
    c.scale = scale;
    c.seed = seed;
    return c;
}

TrainConfig small_train(int iters) {
    TrainConfig t;
    t.batch_size = 2;
    t.patch_size = 8;
    t.lr0 = 1e-3;
    t.halve_every = std::max(1, iters / 2);
    t.total_iters = iters;
    t.seed = 17;
    t.log_every = 0;
    return t;
}

// Scale-1 network that reproduces its input exactly: the head copies
// channel c into feature c, every residual path and the trunk are zero,
// and the tail copies the features back.
Model<float> exact_identity() {
    Model<float> m(small_model(1));
    for (auto& p : m.parameters())
        for (float& v : p.value.mutable_values()) v = 0.0f;
    const int k = m.config().kernel_size;
    auto* head = m.find("head.weight");
    auto* tail = m.find("tail.weight");
    for (int c = 0; c < m.config().in_channels; ++c) {
        head->mutable_values()[head->index(c, c, k / 2, k / 2)] = 1.0f;
        tail->mutable_values()[tail->index(c, c, k / 2, k / 2)] = 1.0f;
    }
    return m;
}

std::shared_ptr<const Model<float>> shared(Model<float> m) { return std::make_shared<const Model<float>>(std::move(m)); }

// Top-left size x size window of a synthetic image.
Tensor<float> small_image(int size, std::uint64_t seed = 3) {
    const Tensor<float> full = synth_corpus(1, 64, seed)[0].pixels;
    const int c = full.shape().c;
    Tensor<float> out({1, c, size, size});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) out.mutable_values()[out.index(0, ch, y, x)] = full(0, ch, y, x);
    return out;
}

DegradationSpec blur(int size) { return DegradationSpec({Blur{size, default_blur_sigma(size)}}); }

}  // namespace

TEST(Branch, NamesRoundTrip) {
    for (Branch b : all_branches()) EXPECT_EQ(parse_branch(branch_name(b)), b);
    EXPECT_EQ(sr_branches().size(), 6u);
    for (Branch b : sr_branches()) EXPECT_TRUE(is_sr(b));
}

TEST(Branch, UnknownNameListsEveryBranch) {
    try {
        parse_branch("Direct8");
        FAIL() << "expected an error";
    } catch (const Error& e) {
        const std::string msg = e.what();
        for (Branch b : all_branches()) EXPECT_NE(msg.find(branch_name(b)), std::string::npos) << branch_name(b);
    }
}

TEST(Branch, ConditionLabels) {
    const std::map<std::string, DegradationSpec> d{{"b7", blur(7)}, {"b9", blur(9)}};
    EXPECT_EQ(condition_label({Branch::Restore_Direct, "b7", "b9"}, d), "7x7");
    EXPECT_EQ(condition_label({Branch::Restore_Mapped, "b7", "b9"}, d), "7Mapped9");
    EXPECT_EQ(condition_label({Branch::Restore_MappedSpecialized, "b7", "b9"}, d), "7Mapped9*");
    EXPECT_EQ(condition_label({Branch::Direct4, "", ""}, d), "Direct4");
}

TEST(Plan, EveryBranchValidates) {
    for (Branch b : all_branches()) {
        const auto plan = plan_branch({b, "b7", "b9"});
        ASSERT_FALSE(plan.empty());
        EXPECT_NO_THROW(validate_plan(plan, task_scale(b))) << branch_name(b);
    }
}

TEST(Plan, AnyMisScaledStageIsRejected) {
    for (Branch b : all_branches()) {
        const auto plan = plan_branch({b, "b7", "b9"});
        for (std::size_t i = 0; i < plan.size(); ++i) {
            for (int wrong : {1, 2, 4, 8}) {
                if (wrong == plan[i].scale) continue;
                auto bad = plan;
                bad[i].scale = wrong;
                EXPECT_THROW(validate_plan(bad, task_scale(b)), ShapeError) << branch_name(b) << " stage " << i;
            }
        }
    }
}

TEST(Plan, BrokenDomainChainIsRejected) {
    for (Branch b : all_branches()) {
        auto plan = plan_branch({b, "b7", "b9"});
        if (plan.size() < 2) continue;
        plan[1].in_domain += "?";
        EXPECT_THROW(validate_plan(plan, task_scale(b)), ShapeError) << branch_name(b);
    }
}

TEST(Compose, RejectsWrongNetScale) {
    std::vector<Stage> stages{{"map", shared(Model<float>(small_model(2))), "lr", "mid"},
                              {"sr", shared(Model<float>(small_model(4))), "mid", "hr"}};
    EXPECT_THROW(Pipeline::compose(stages, 4), ShapeError);
}

TEST(Compose, RejectsDomainMismatch) {
    std::vector<Stage> stages{{"map", shared(Model<float>(small_model(2))), "lr", "mid"},
                              {"sr", shared(Model<float>(small_model(2))), "other", "hr"}};
    EXPECT_THROW(Pipeline::compose(stages, 4), ShapeError);
}

TEST(Compose, ExactIdentityPrefixChangesNothing) {
    const auto sr = shared(Model<float>(small_model(2)));
    const Pipeline p = Pipeline::compose({{"id", shared(exact_identity()), "a", "b"}, {"sr", sr, "b", "c"}}, 2);
    const Tensor<float> x = small_image(16);
    EXPECT_TRUE(bitwise_equal(exact_identity().infer(x), x));
    EXPECT_TRUE(bitwise_equal(p.run(x), sr->infer(x)));
}

TEST(Compose, TwoByTwoMapsSixteenToSixtyFour) {
    const Pipeline p = Pipeline::compose({{"map", shared(Model<float>(small_model(2, 1))), "lr", "mid"},
                                          {"spec", shared(Model<float>(small_model(2, 2))), "mid", "hr"}},
                                         4);
    EXPECT_EQ(p.scale(), 4);
    const Tensor<float> y = p.run(small_image(16));
    EXPECT_EQ(y.shape().h, 64);
    EXPECT_EQ(y.shape().w, 64);
    for (float v : y.values()) {
        EXPECT_GE(v, 0.0f);
        EXPECT_LE(v, 1.0f);
    }
}

TEST(Specialized, IdentityStageOneReproducesPlainPairs) {
    const auto gt = synth_corpus(3, 64, 9);
    const DegradationSpec down4({BicubicDown{4}});
    const Model<float> id = exact_identity();
    const PairedDataset spec = specialized_pairs(id, gt, down4);
    const PairedDataset plain = make_pairs(gt, down4, 4);
    ASSERT_EQ(spec.size(), plain.size());
    EXPECT_EQ(spec.scale, 4);
    for (std::size_t i = 0; i < spec.size(); ++i) {
        EXPECT_TRUE(bitwise_equal(spec.pairs[i].input.pixels, plain.pairs[i].input.pixels));
        EXPECT_TRUE(bitwise_equal(spec.pairs[i].target.pixels, plain.pairs[i].target.pixels));
    }
    // Identical data, configs and seeds: identical training.
    const Trained a = train_specialized(id, gt, down4, small_model(4), small_train(4));
    const Trained b = train_offshelf(4, gt, small_model(4), small_train(4));
    EXPECT_EQ(parameter_digest(a.result.checkpoint.parameters), parameter_digest(b.result.checkpoint.parameters));
}

TEST(Specialized, StageOneIsNotModified) {
    const auto gt = synth_corpus(3, 64, 9);
    const Model<float> stage1(small_model(2, 3));
    const std::string before = parameter_digest(stage1.parameters());
    const DegradationSpec down4({BicubicDown{4}});
    const Trained t = train_specialized(stage1, gt, down4, small_model(2), small_train(3));
    EXPECT_EQ(parameter_digest(stage1.parameters()), before);
    EXPECT_EQ(t.model.config().scale, 2);
}

TEST(Specialized, OvershootingStageOneIsRejected) {
    const auto gt = synth_corpus(2, 64, 9);
    EXPECT_THROW(specialized_pairs(Model<float>(small_model(4)), gt, DegradationSpec({BicubicDown{2}})), ShapeError);
}

TEST(Registry, CachesInMemoryAndRejectsFingerprintChange) {
    ModelRegistry reg;
    int calls = 0;
    const auto gt = synth_corpus(2, 64, 9);
    auto fn = [&] {
        ++calls;
        return train_offshelf(2, gt, small_model(2), small_train(2));
    };
    const auto a = reg.get_or_train("offshelf_x2", "fp1", fn);
    const auto b = reg.get_or_train("offshelf_x2", "fp1", fn);
    EXPECT_EQ(calls, 1);
    EXPECT_EQ(a.get(), b.get());
    EXPECT_THROW(reg.get_or_train("offshelf_x2", "fp2", fn), Error);
    EXPECT_EQ(reg.find("offshelf_x2").get(), a.get());
    EXPECT_EQ(reg.find("missing"), nullptr);
}

TEST(Registry, PersistsAndReloadsByFingerprint) {
    const auto dir = std::filesystem::temp_directory_path() / "dasr_registry_test";
    std::filesystem::remove_all(dir);
    const auto gt = synth_corpus(2, 64, 9);
    int calls = 0;
    auto fn = [&] {
        ++calls;
        return train_offshelf(2, gt, small_model(2), small_train(3));
    };
    std::string digest;
    {
        ModelRegistry reg(dir);
        digest = parameter_digest(reg.get_or_train("k", "fp1", fn)->parameters());
        EXPECT_FALSE(reg.entries().at(0).loaded);
    }
    {
        ModelRegistry reg(dir);
        const auto m = reg.get_or_train("k", "fp1", fn);
        EXPECT_EQ(calls, 1);
        EXPECT_TRUE(reg.entries().at(0).loaded);
        EXPECT_EQ(parameter_digest(m->parameters()), digest);
        EXPECT_EQ(reg.entries().at(0).digest, digest);
    }
    {
        ModelRegistry reg(dir);
        reg.get_or_train("k", "fp2", fn);
        EXPECT_EQ(calls, 2);
        EXPECT_FALSE(reg.entries().at(0).loaded);
    }
    std::filesystem::remove_all(dir);
}

TEST(Report, IdentityRendersInfinityAndCsvIsDeterministic) {
    const auto gt = synth_corpus(3, 64, 4);
    const PairedDataset same = make_pairs(gt, DegradationSpec(), 1);
    const auto id = [](const Tensor<float>& x) { return x; };
    const MetricsReport r = evaluate("Identity", "held-out", id, same);
    EXPECT_TRUE(std::isinf(r.mean_psnr()));
    EXPECT_TRUE(std::isinf(r.pooled_psnr()));
    const std::vector<MetricsReport> v{r};
    const std::string csv = reports_csv(v);
    EXPECT_NE(csv.find(",inf,"), std::string::npos);
    EXPECT_EQ(csv, reports_csv(std::vector<MetricsReport>{evaluate("Identity", "held-out", id, same)}));
    EXPECT_NE(reports_markdown(v, TableLayout::conditions_as_rows).find("inf"), std::string::npos);
}

TEST(Report, AggregatesRecomputableFromCsv) {
    const auto gt = synth_corpus(4, 64, 4);
    const PairedDataset pairs = make_pairs(gt, blur(5), 1);
    const MetricsReport r = evaluate("Blurred", "held-out", [](const Tensor<float>& x) { return x; }, pairs);
    std::istringstream in(reports_csv(std::vector<MetricsReport>{r}));
    std::string line;
    std::getline(in, line);
    double psnr_sum = 0.0, mse_sum = 0.0;
    int n = 0;
    while (std::getline(in, line)) {
        std::vector<std::string> f;
        std::stringstream ls(line);
        for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
        psnr_sum += std::stod(f.at(3));
        mse_sum += std::stod(f.at(5));
        ++n;
    }
    ASSERT_EQ(n, 4);
    EXPECT_NEAR(psnr_sum / n, r.mean_psnr(), 1e-5);
    EXPECT_NEAR(10.0 * std::log10(1.0 / (mse_sum / n)), r.pooled_psnr(), 1e-6);
    EXPECT_LE(r.pooled_psnr(), r.mean_psnr() + 1e-9);  // Jensen: pooled never exceeds the mean
}

TEST(Mapping, SameDomainLearnsNearIdentity) {
    const auto gt = synth_corpus(4, 64, 21);
    TrainConfig tc = small_train(300);
    tc.lr0 = 2e-3;
    const Trained t = train_mapping(blur(5), blur(5), gt, small_model(1), tc);
    EXPECT_EQ(t.model.config().scale, 1);
    const auto& h = t.result.loss_history;
    ASSERT_EQ(h.size(), 300u);
    double head = 0.0, tail = 0.0;
    for (int i = 0; i < 10; ++i) {
        head += h[i];
        tail += h[h.size() - 1 - i];
    }
    EXPECT_LT(tail, head / 5.0);
}
