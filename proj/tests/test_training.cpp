#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "support.hpp"
#include "vars/errors.hpp"
#include "vars/synthgen.hpp"
#include "vars/training.hpp"

using namespace vars;

namespace {

ModelConfig tiny_config(TaskMode mode = TaskMode::MultiTask, EncoderKind enc = EncoderKind::TemporalConv) {
    ModelConfig c;
    c.encoder = enc;
    c.task_mode = mode;
    c.feature_dim = 5;
    c.hidden_dim = 6;
    c.height = 3;
    c.width = 4;
    return c;
}

std::vector<Sample> random_samples(std::uint64_t seed, const ModelConfig& c, std::size_t n) {
    Rng rng(seed);
    std::vector<Sample> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(test::random_sample(rng, c, i, 2 + rng.below(3)));
    return out;
}

std::vector<const Sample*> pointers(const std::vector<Sample>& s) {
    std::vector<const Sample*> p;
    for (const Sample& x : s) p.push_back(&x);
    return p;
}

std::map<std::string, std::vector<double>> gradients_of(const MvfModel& m, std::span<const Sample* const> batch,
                                                      const TrainConfig& tc) {
    MvfModel copy(m);
    copy.zero_grad();
    Tape tape;
    tape.backward(batch_loss(copy, batch, tc));
    std::map<std::string, std::vector<double>> out;
    for (const auto& [name, t] : copy.parameters()) out[name].assign(t.grad().begin(), t.grad().end());
    return out;
}

}  // namespace

TEST_CASE("adam") {
    SUBCASE("first step from zero") {
        std::map<std::string, Tensor> p{{"w", Tensor({1}, {0.0}, true)}};
        p.at("w").mutable_grad()[0] = 1.0;
        OptimState s;
        adam_step(p, s, 0.1);
        // m_hat = 1, v_hat = 1 -> step lr * 1 / (1 + eps)
        CHECK(p.at("w")[0] == doctest::Approx(-0.1 / (1.0 + 1e-8)).epsilon(1e-15));
        CHECK(p.at("w")[0] == doctest::Approx(-0.09999999).epsilon(1e-8));
        CHECK(s.t == 1);
    }
    SUBCASE("zero gradient leaves parameters but advances t") {
        std::map<std::string, Tensor> p{{"a", Tensor({2}, {1.5, -2.0}, true)}};
        std::ranges::fill(p.at("a").mutable_grad(), 0.0);
        OptimState s;
        adam_step(p, s, 0.1);
        adam_step(p, s, 0.1);
        CHECK(p.at("a")[0] == 1.5);
        CHECK(p.at("a")[1] == -2.0);
        CHECK(s.t == 2);
    }
    SUBCASE("equal gradients give equal updates") {
        std::map<std::string, Tensor> p{{"a", Tensor({1}, {0.3}, true)}, {"b", Tensor({1}, {0.3}, true)}};
        OptimState s;
        for (int step = 0; step < 5; ++step) {
            p.at("a").mutable_grad()[0] = 0.2 * step - 0.4;
            p.at("b").mutable_grad()[0] = 0.2 * step - 0.4;
            adam_step(p, s, 0.01);
        }
        CHECK(p.at("a")[0] == p.at("b")[0]);
    }
    SUBCASE("matches a scalar reference over several steps") {
        std::map<std::string, Tensor> p{{"w", Tensor({1}, {0.5}, true)}};
        OptimState s;
        double theta = 0.5, m = 0.0, v = 0.0;
        const double grads[] = {0.3, -1.2, 0.05, 2.0};
        for (int t = 1; t <= 4; ++t) {
            const double g = grads[t - 1];
            p.at("w").mutable_grad()[0] = g;
            adam_step(p, s, 0.01);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            theta -= 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
            CHECK(p.at("w")[0] == doctest::Approx(theta).epsilon(1e-14));
        }
    }
    SUBCASE("missing grad names the parameter") {
        std::map<std::string, Tensor> p{{"enc.w", Tensor({1}, {0.0}, true)}};
        OptimState s;
        try {
            adam_step(p, s, 0.1);
            FAIL("expected ContractError");
        } catch (const ContractError& e) {
            CHECK(std::string(e.what()).find("enc.w") != std::string::npos);
        }
    }
}

TEST_CASE("learning-rate schedule") {
    TrainConfig c;
    CHECK(epoch_lr(c, 0) == 1e-4);
    CHECK(epoch_lr(c, 1) == doctest::Approx(9.5e-5).epsilon(1e-12));
    CHECK(epoch_lr(c, 9) == doctest::Approx(1e-4 * std::pow(0.95, 9)).epsilon(1e-12));
    c.lr_decay = 1.0;
    for (std::size_t e = 0; e < 10; ++e) CHECK(epoch_lr(c, e) == 1e-4);
}

TEST_CASE("train config validation") {
    TrainConfig c;
    CHECK_NOTHROW(validate(c));
    c.lr0 = 0.0;
    CHECK_THROWS_AS(validate(c), ConfigError);
    c = TrainConfig{};
    c.lr_decay = 1.1;
    CHECK_THROWS_AS(validate(c), ConfigError);
    c = TrainConfig{};
    c.batch_size = 0;
    CHECK_THROWS_AS(validate(c), ConfigError);
    c = TrainConfig{};
    c.alpha_off = -1.0;
    CHECK_THROWS_AS(validate(c), ConfigError);
    c = TrainConfig{};
    c.lr_decay = 0.9;
    c.seed = 12;
    const TrainConfig back = train_config_from_json(to_json(c));
    CHECK(back.lr_decay == 0.9);
    CHECK(back.seed == 12);
}

TEST_CASE("frame resampling") {
    // Index formula evaluated literally.
    auto oracle = [](std::size_t F, long contact, int fps) {
        std::vector<std::size_t> idx;
        for (int k = 0; k < 16; ++k) {
            const double pos = std::round(static_cast<double>(contact) + (k - 8) * 16.0 / fps);
            idx.push_back(static_cast<std::size_t>(std::clamp(pos, 0.0, static_cast<double>(F - 1))));
        }
        return idx;
    };
    SUBCASE("fps 16 around contact 26") {
        const auto idx = resample_indices(52, 26, 16);
        std::vector<std::size_t> expected;
        for (std::size_t i = 18; i <= 33; ++i) expected.push_back(i);
        CHECK(idx == expected);
    }
    SUBCASE("fps 8 strides by two") {
        const auto idx = resample_indices(52, 26, 8);
        std::vector<std::size_t> expected;
        for (std::size_t i = 10; i <= 40; i += 2) expected.push_back(i);
        CHECK(idx == expected);
        CHECK(idx == oracle(52, 26, 8));
    }
    SUBCASE("fps 5 near the clip start clamps to zero") {
        const auto idx = resample_indices(52, 4, 5);
        CHECK(idx.size() == 16);
        CHECK(idx[0] == 0);
        CHECK(idx[1] == 0);
        CHECK(idx == oracle(52, 4, 5));
    }
    SUBCASE("missing contact uses the midpoint") { CHECK(resample_indices(40, std::nullopt, 16) == oracle(40, 20, 16)); }
    SUBCASE("brute-force oracle over random cases") {
        Rng rng(31);
        const int rates[] = {5, 8, 12, 16};
        for (int i = 0; i < 1000; ++i) {
            const std::size_t F = 16 + rng.below(60);
            const auto contact = static_cast<std::uint32_t>(rng.below(F));
            const int fps = rates[rng.below(4)];
            const auto idx = resample_indices(F, contact, fps);
            CHECK(idx == oracle(F, contact, fps));
            CHECK(idx.size() == 16);
            CHECK(std::is_sorted(idx.begin(), idx.end()));
            CHECK(idx.back() < F);
        }
    }
    SUBCASE("frames follow the indices") {
        Rng rng(2);
        const Tensor clip = test::random_tensor(rng, {20, 2, 3}, 0, 1);
        const Tensor out = resample_frames(clip, 10, 12);
        const auto idx = resample_indices(20, 10, 12);
        CHECK(out.shape() == Shape{16, 2, 3});
        for (std::size_t k = 0; k < 16; ++k)
            for (std::size_t p = 0; p < 6; ++p) CHECK(out[k * 6 + p] == clip[idx[k] * 6 + p]);
    }
    CHECK_THROWS_AS(resample_indices(52, 26, 10), ConfigError);
}

TEST_CASE("batch gradients") {
    const ModelConfig c = tiny_config();
    const MvfModel m(c, 4);
    const auto samples = random_samples(5, c, 6);
    const auto all = pointers(samples);
    TrainConfig tc;

    SUBCASE("full batch equals the mean of per-action gradients") {
        const auto full = gradients_of(m, all, tc);
        std::map<std::string, std::vector<double>> mean;
        for (const Sample* s : all) {
            const Sample* one[] = {s};
            for (const auto& [name, g] : gradients_of(m, one, tc)) {
                auto& acc = mean[name];
                acc.resize(g.size(), 0.0);
                for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] / static_cast<double>(all.size());
            }
        }
        for (const auto& [name, g] : full)
            for (std::size_t i = 0; i < g.size(); ++i) CHECK(std::abs(g[i] - mean[name][i]) <= 1e-12);
    }
    SUBCASE("multi-task gradient is the weighted sum of task gradients") {
        tc.alpha_foul = 0.7;
        tc.alpha_off = 1.8;
        const auto total = gradients_of(m, all, tc);
        TrainConfig foul_only = tc, off_only = tc;
        foul_only.alpha_off = 0.0;
        foul_only.alpha_foul = 1.0;
        off_only.alpha_foul = 0.0;
        off_only.alpha_off = 1.0;
        const auto gf = gradients_of(m, all, foul_only), go = gradients_of(m, all, off_only);
        for (const auto& [name, g] : total)
            for (std::size_t i = 0; i < g.size(); ++i)
                CHECK(std::abs(g[i] - (0.7 * gf.at(name)[i] + 1.8 * go.at(name)[i])) <= 1e-12);
    }
    SUBCASE("analytic gradients agree with finite differences") {
        for (EncoderKind enc : {EncoderKind::FramePool, EncoderKind::TemporalConv}) {
            const MvfModel model(tiny_config(TaskMode::MultiTask, enc), 8);
            CHECK(model_grad_check(model, all, tc) < 1e-4);
        }
    }
    SUBCASE("missing labels are a contract error") {
        std::vector<Sample> broken = samples;
        broken[0].offence.reset();
        const Sample* one[] = {&broken[0]};
        Tape tape;
        CHECK_THROWS_AS(batch_loss(m, one, tc), ContractError);
    }
}

TEST_CASE("sample filtering and class weights") {
    auto samples = random_samples(1, tiny_config(), 10);
    samples[0].foul.reset();
    samples[1].offence.reset();
    CHECK(filter_for(samples, TaskMode::MultiTask).size() == 8);
    CHECK(filter_for(samples, TaskMode::SingleFoul).size() == 9);
    CHECK(filter_for(samples, TaskMode::SingleOffence).size() == 9);

    std::vector<Sample> labelled(4);
    for (std::size_t i = 0; i < 4; ++i) labelled[i].offence = i < 3 ? 0 : 2;
    const auto w = class_weights(labelled, false, 4);
    CHECK(w[0] == doctest::Approx(4.0 / (4 * 3)));
    CHECK(w[1] == 0.0);
    CHECK(w[2] == doctest::Approx(4.0 / 4));
}

TEST_CASE("training loop") {
    SUBCASE("zero offence weight follows the single-task foul trajectory") {
        const auto train_set = random_samples(11, tiny_config(), 20);
        TrainConfig tc;
        tc.epochs = 4;
        tc.batch_size = 3;
        tc.lr0 = 1e-2;
        tc.alpha_off = 0.0;
        std::vector<std::map<std::string, Tensor>> multi, single;
        auto snapshot = [](std::vector<std::map<std::string, Tensor>>& out) {
            return [&out](const EpochRecord&, const MvfModel& m) {
                std::map<std::string, Tensor> copy;
                for (const auto& [name, t] : m.parameters()) copy.emplace(name, t.clone());
                out.push_back(std::move(copy));
            };
        };
        train(MvfModel(tiny_config(TaskMode::MultiTask), 3), train_set, {}, tc, snapshot(multi));
        train(MvfModel(tiny_config(TaskMode::SingleFoul), 3), train_set, {}, tc, snapshot(single));
        REQUIRE(multi.size() == 4);
        REQUIRE(single.size() == 4);
        for (std::size_t e = 0; e < 4; ++e)
            for (const auto& [name, t] : single[e]) {
                const Tensor& other = multi[e].at(name);
                double diff = 0.0;
                for (std::size_t i = 0; i < t.numel(); ++i) diff = std::max(diff, std::abs(t[i] - other[i]));
                CHECK(diff <= 1e-12);
            }
    }
    SUBCASE("same seed gives bitwise identical parameters") {
        const auto train_set = random_samples(12, tiny_config(), 10);
        TrainConfig tc;
        tc.epochs = 2;
        const TrainResult a = train(MvfModel(tiny_config(), 1), train_set, {}, tc);
        const TrainResult b = train(MvfModel(tiny_config(), 1), train_set, {}, tc);
        for (const auto& [name, t] : a.model.parameters())
            CHECK(std::equal(t.data().begin(), t.data().end(), b.model.parameter(name).data().begin()));
        CHECK(a.history.size() == 2);
        CHECK(a.history[1].lr == doctest::Approx(9.5e-5));
    }
    SUBCASE("empty training split is a configuration error") {
        CHECK_THROWS_AS(train(MvfModel(tiny_config(), 1), std::vector<Sample>{}, {}, TrainConfig{}), ConfigError);
    }
    SUBCASE("best checkpoint follows the validation loss") {
        const auto train_set = random_samples(13, tiny_config(), 12);
        const auto valid_set = random_samples(14, tiny_config(), 6);
        TrainConfig tc;
        tc.epochs = 5;
        tc.lr0 = 5e-2;
        const TrainResult r = train(MvfModel(tiny_config(), 2), train_set, valid_set, tc);
        std::size_t best = 0;
        for (std::size_t e = 0; e < r.history.size(); ++e)
            if (*r.history[e].valid_loss < *r.history[best].valid_loss) best = e;
        CHECK(r.best_epoch == r.history[best].epoch);
        CHECK(to_json(r.history).size() == 5);
    }
}

TEST_CASE("loss falls by half over ten epochs on separable synthetic data") {
    test::TempDir dir("train_sep");
    GenConfig g;
    g.n_actions = 160;
    g.frames_per_clip = 16;
    g.live_informative_prob = 1.0;
    g.class_distribution = uniform_class_distribution();
    g.split_fractions = {1.0, 0.0, 0.0};
    const Manifest m = generate(g, dir.path());
    ModelConfig c;
    c.encoder = EncoderKind::TemporalConv;
    c.task_mode = TaskMode::SingleFoul;
    c.height = g.height;
    c.width = g.width;
    TrainConfig tc;
    tc.lr0 = 1e-3;
    const TrainResult r = train(init_model(c, 0), m, tc);
    REQUIRE(r.history.size() == 10);
    MESSAGE("epoch 1 loss " << r.history.front().train_loss << ", epoch 10 loss " << r.history.back().train_loss);
    CHECK(r.history.back().train_loss < r.history.front().train_loss);
    CHECK(r.history.back().train_loss < 0.5 * r.history.front().train_loss);
}
