#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "dasr/checkpoint.hpp"
#include "dasr/ops.hpp"
#include "dasr/tape.hpp"
#include "dasr/trainer.hpp"

using namespace dasr;

namespace {

ModelConfig small_model(int scale) {
    ModelConfig c;
    c.n_groups = 1;
    c.n_blocks = 1;
    c.channels = 8;
    c.reduction = 4;
    c.scale = scale;
    c.seed = 5;
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

PairedDataset tiny_dataset(int n = 3) {
    auto gt = synth_corpus(n, 64, 7);
    return make_pairs(gt, DegradationSpec({BicubicDown{2}}), 2);
}

// Sets `p`'s grad to `g` through a one-op tape: d/dp Σ p·g = g.
void set_grad(NamedParameter<float>& p, const Tensor<float>& g) {
    Tape<float> tape;
    auto scope = tape.activate();
    p.value.set_requires_grad(true);
    tape.backward(sum(mul(p.value, g)));
}

std::filesystem::path temp_path(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "dasr_trainer_tests";
    std::filesystem::create_directories(dir);
    return dir / name;
}

}  // namespace

TEST(Schedule, FullScaleValues) {
    const TrainConfig full = TrainConfig::full_scale();
    EXPECT_EQ(full.batch_size, 8);
    EXPECT_EQ(full.patch_size, 96);
    EXPECT_EQ(full.total_iters, 150000);
    EXPECT_DOUBLE_EQ(lr_at(0, full), 1e-4);
    EXPECT_DOUBLE_EQ(lr_at(49999, full), 1e-4);
    EXPECT_DOUBLE_EQ(lr_at(50000, full), 5e-5);
    EXPECT_DOUBLE_EQ(lr_at(125000, full), 1e-4 * 0.25);
    EXPECT_THROW(lr_at(150000, full), Error);
    EXPECT_THROW(lr_at(-1, full), Error);
}

TEST(Schedule, PiecewiseConstantNonIncreasing) {
    TrainConfig c = small_train(1000);
    c.halve_every = 70;
    for (int it = 1; it < 1000; ++it) {
        const double prev = lr_at(it - 1, c), cur = lr_at(it, c);
        if (it % 70 == 0) EXPECT_EQ(cur, prev / 2) << it;
        else EXPECT_EQ(cur, prev) << it;
    }
}

TEST(TrainConfig, Validation) {
    TrainConfig c = small_train(10);
    c.halve_every = 11;
    EXPECT_THROW(c.validate(), Error);
    c = small_train(10);
    c.batch_size = 0;
    EXPECT_THROW(c.validate(), Error);
    c = small_train(10);
    c.beta2 = 1.0;
    EXPECT_THROW(c.validate(), Error);
    EXPECT_NO_THROW(small_train(0).validate());
}

TEST(Adam, FirstStepMagnitudeIsLearningRate) {
    const TrainConfig c = small_train(10);
    for (float g : {1e-3f, 0.5f, -7.0f}) {
        std::vector<NamedParameter<float>> params{{"p", Tensor<float>({1, 2, 3, 3}, 0.25f)}};
        set_grad(params[0], Tensor<float>({1, 2, 3, 3}, g));
        AdamState st = AdamState::zeros_like(params);
        adam_step(params, st, 1, 1e-4, c);
        for (float v : params[0].value.values()) {
            const double step = 0.25 - v;
            EXPECT_NEAR(std::abs(step), 1e-4, 1e-6);
            EXPECT_EQ(step > 0, g > 0);
        }
    }
}

TEST(Adam, ZeroGradientLeavesParameters) {
    std::vector<NamedParameter<float>> params{{"p", Tensor<float>({1, 1, 2, 2}, 0.5f)}};
    set_grad(params[0], Tensor<float>({1, 1, 2, 2}, 0.0f));
    AdamState st = AdamState::zeros_like(params);
    for (int i = 1; i <= 3; ++i) adam_step(params, st, i, 1e-2, small_train(10));
    for (float v : params[0].value.values()) EXPECT_EQ(v, 0.5f);
}

TEST(Adam, NonFiniteGradientNamesParameter) {
    std::vector<NamedParameter<float>> params{{"ok", Tensor<float>({1, 1, 1, 2}, 1.0f)},
                                              {"body.bad", Tensor<float>({1, 1, 1, 2}, 1.0f)}};
    set_grad(params[0], Tensor<float>({1, 1, 1, 2}, 1.0f));
    set_grad(params[1], Tensor<float>({1, 1, 1, 2}, std::vector<float>{1.0f, std::numeric_limits<float>::infinity()}));
    AdamState st = AdamState::zeros_like(params);
    try {
        adam_step(params, st, 1, 1e-2, small_train(10));
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("body.bad"), std::string::npos);
    }
    EXPECT_EQ(params[0].value.values()[0], 1.0f);  // nothing written
}

TEST(PatchSampling, ScaleOneSameWindow) {
    auto img = synth_corpus(1, 64, 1)[0].pixels;
    Rng rng(3);
    for (int i = 0; i < 20; ++i) {
        auto [a, b] = sample_patch_pair(img, img, 16, 1, rng);
        EXPECT_TRUE(bitwise_equal(a, b));
    }
}

TEST(PatchSampling, AlignmentArithmetic) {
    Rng probe(9), rng(9);
    const PatchOffset o = draw_patch_offset(40, 40, 24, probe);
    Tensor<float> in({1, 3, 40, 40}), tgt({1, 3, 80, 80});
    auto [a, b] = sample_patch_pair(in, tgt, 24, 2, rng);
    EXPECT_EQ(a.shape(), (Shape{1, 3, 24, 24}));
    EXPECT_EQ(b.shape(), (Shape{1, 3, 48, 48}));
    EXPECT_GE(o.y, 0);
    EXPECT_LE(o.y, 16);
    EXPECT_THROW(sample_patch_pair(in, tgt, 41, 2, rng), ShapeError);
    EXPECT_THROW(sample_patch_pair(in, in, 8, 2, rng), ShapeError);
}

TEST(PatchSampling, CoordinateEncodedPairsStayAligned) {
    // Target pixel (Y, X) stores Y * 1000 + X; input pixel (y, x) stores
    // the code of the target pixel at its origin (y * s, x * s).
    for (int scale : {1, 2, 4}) {
        const int h = 20, w = 26;
        Tensor<float> in({1, 1, h, w}), tgt({1, 1, h * scale, w * scale});
        for (int y = 0; y < h * scale; ++y)
            for (int x = 0; x < w * scale; ++x) tgt.mutable_values()[tgt.index(0, 0, y, x)] = y * 1000.0f + x;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) in.mutable_values()[in.index(0, 0, y, x)] = (y * scale) * 1000.0f + x * scale;
        Rng rng(scale);
        for (int trial = 0; trial < 100; ++trial) {
            auto [a, b] = sample_patch_pair(in, tgt, 7, scale, rng);
            for (int y = 0; y < 7; ++y)
                for (int x = 0; x < 7; ++x) ASSERT_EQ(a(0, 0, y, x), b(0, 0, y * scale, x * scale));
            const int oy = static_cast<int>(b(0, 0, 0, 0)) / 1000, ox = static_cast<int>(b(0, 0, 0, 0)) % 1000;
            EXPECT_EQ(oy % scale, 0);
            EXPECT_EQ(ox % scale, 0);
        }
    }
}

TEST(Train, ZeroIterationsReturnsInitialization) {
    auto data = tiny_dataset();
    auto model = build_rcan(small_model(2));
    const auto fresh = initial_checkpoint(model, small_train(0));
    auto r = train(model, data, small_train(0));
    EXPECT_TRUE(r.loss_history.empty());
    EXPECT_EQ(serialize_checkpoint(r.checkpoint), serialize_checkpoint(fresh));
}

TEST(Train, RejectsScaleMismatchAndOversizedPatch) {
    auto data = tiny_dataset();
    auto model = build_rcan(small_model(1));
    EXPECT_THROW(train(model, data, small_train(2)), Error);
    auto m2 = build_rcan(small_model(2));
    TrainConfig big = small_train(2);
    big.patch_size = 33;
    EXPECT_THROW(train(m2, data, big), ShapeError);
}

TEST(Train, BitwiseReproducible) {
    auto data = tiny_dataset();
    auto a = build_rcan(small_model(2));
    auto b = build_rcan(small_model(2));
    auto ra = train(a, data, small_train(15));
    auto rb = train(b, data, small_train(15));
    EXPECT_EQ(ra.loss_history, rb.loss_history);
    EXPECT_EQ(serialize_checkpoint(ra.checkpoint), serialize_checkpoint(rb.checkpoint));
    EXPECT_EQ(parameter_digest(a.parameters()), parameter_digest(b.parameters()));
}

TEST(Train, ResumeMatchesUninterrupted) {
    auto data = tiny_dataset();
    const TrainConfig cfg = small_train(20);
    auto full_model = build_rcan(small_model(2));
    auto full = train(full_model, data, cfg);

    auto part_model = build_rcan(small_model(2));
    TrainOptions stop;
    stop.stop_after = 8;
    auto part = train(part_model, data, cfg, stop);
    EXPECT_EQ(part.checkpoint.iteration, 8);
    const auto path = temp_path("resume.ckpt");
    save_checkpoint(part.checkpoint, path);
    const Checkpoint loaded = load_checkpoint(path);

    auto resumed_model = build_rcan(small_model(2));
    TrainOptions resume;
    resume.resume = &loaded;
    auto rest = train(resumed_model, data, cfg, resume);
    EXPECT_EQ(rest.loss_history, full.loss_history);
    EXPECT_EQ(serialize_checkpoint(rest.checkpoint), serialize_checkpoint(full.checkpoint));
}

TEST(Train, LossDecreasesOnMemorizedPair) {
    auto data = tiny_dataset(1);
    auto model = build_rcan(small_model(2));
    TrainConfig cfg = small_train(300);
    cfg.batch_size = 1;
    cfg.patch_size = 32;
    auto r = train(model, data, cfg);
    ASSERT_EQ(r.loss_history.size(), 300u);
    double prev = std::numeric_limits<double>::infinity();
    for (int w = 0; w < 6; ++w) {
        double mean = 0;
        for (int i = 0; i < 50; ++i) mean += r.loss_history[static_cast<std::size_t>(w * 50 + i)];
        mean /= 50;
        EXPECT_LE(mean, prev) << "window " << w;
        prev = mean;
    }
}

TEST(Train, NonFiniteLossAbortsWithLastGoodState) {
    auto data = tiny_dataset(1);
    auto bad = data;
    bad.pairs[0].target.pixels = Tensor<float>(data.pairs[0].target.pixels.shape(), std::nanf(""));
    auto model = build_rcan(small_model(2));
    const auto before = parameter_digest(model.parameters());
    try {
        train(model, bad, small_train(4));
        FAIL() << "expected TrainingAborted";
    } catch (const TrainingAborted& e) {
        EXPECT_EQ(e.last_good().iteration, 0);
        EXPECT_EQ(parameter_digest(e.last_good().parameters), before);
    }
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
    auto data = tiny_dataset();
    auto model = build_rcan(small_model(2));
    auto r = train(model, data, small_train(5));
    const std::string bytes = serialize_checkpoint(r.checkpoint);
    const auto path = temp_path("roundtrip.ckpt");
    save_checkpoint(r.checkpoint, path);
    EXPECT_EQ(read_file(path), bytes);
    const Checkpoint back = load_checkpoint(path);
    EXPECT_EQ(serialize_checkpoint(back), bytes);
    EXPECT_EQ(back.iteration, 5);
    EXPECT_EQ(back.loss_history, r.loss_history);
    auto restored = back.model();
    EXPECT_EQ(parameter_digest(restored.parameters()), parameter_digest(model.parameters()));
}

TEST(Checkpoint, CorruptionKindsAreDistinct) {
    auto model = build_rcan(small_model(1));
    const std::string good = serialize_checkpoint(initial_checkpoint(model, small_train(10)));
    auto kind_of = [](const std::string& bytes) {
        try {
            deserialize_checkpoint(bytes);
        } catch (const CheckpointError& e) {
            return e.kind();
        }
        return CheckpointError::Kind::io;  // no error: sentinel
    };
    std::string magic = good;
    magic[0] = 'X';
    EXPECT_EQ(kind_of(magic), CheckpointError::Kind::bad_magic);
    std::string version = good;
    version[8] = 9;
    EXPECT_EQ(kind_of(version), CheckpointError::Kind::version);
    EXPECT_EQ(kind_of(good.substr(0, good.size() - 100)), CheckpointError::Kind::truncated);
    EXPECT_EQ(kind_of(good.substr(0, 4)), CheckpointError::Kind::truncated);
    std::string flipped = good;
    flipped[flipped.size() - 50] ^= 0x10;
    EXPECT_EQ(kind_of(flipped), CheckpointError::Kind::checksum);
    EXPECT_THROW(load_checkpoint(temp_path("does-not-exist.ckpt")), CheckpointError);
}
