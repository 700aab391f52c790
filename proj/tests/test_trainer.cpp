#include <doctest.h>

#include <limits>
#include <set>

#include "dimwm/io.hpp"
#include "dimwm/trainer.hpp"

using namespace dimwm;

namespace {

MappingConfig tiny(int de = 3, int dd = 3) {
    MappingConfig c;
    c.d_e = de;
    c.d_d = dd;
    c.frames = 2;
    c.height = c.width = 8;
    c.message_length = 4;
    return c;
}

TrainConfig short_run(std::size_t steps) {
    TrainConfig t;
    t.steps = steps;
    t.batch_size = 2;
    t.warmup_steps = 2;
    t.s1 = 2;
    t.s2 = 4;
    t.jnd_start_step = 5;
    t.beta_dec_decay_steps = 6;
    t.lr = 1e-3;
    return t;
}

bool same_params(const ModelBundle<float>& a, const ModelBundle<float>& b) {
    const auto pa = a.parameters(), pb = b.parameters();
    if (pa.size() != pb.size()) return false;
    for (std::size_t i = 0; i < pa.size(); ++i)
        if (!(pa[i].var.value() == pb[i].var.value())) return false;
    return true;
}

}  // namespace

TEST_CASE("decoder weight schedule") {
    const auto full = TrainConfig::full_scale();
    CHECK(beta_dec_at(full, 0) == 20.0);
    CHECK(beta_dec_at(full, 5000) == doctest::Approx(10.1).epsilon(1e-12));
    CHECK(beta_dec_at(full, 10000) == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(beta_dec_at(full, 50000) == doctest::Approx(0.2).epsilon(1e-12));
    for (std::size_t s = 0; s < 12000; s += 97) {
        const double want = s >= 10000 ? 0.2 : 20.0 + (0.2 - 20.0) * s / 10000.0;
        CHECK(beta_dec_at(full, s) == doctest::Approx(want).epsilon(1e-12));
    }
    CHECK(full.lr == 2e-4);
    CHECK(full.warmup_steps == 2000);
    CHECK(full.s1 == 1000);
    CHECK(full.s2 == 2000);
    CHECK(full.jnd_start_step == 10000);
    CHECK(full.alpha == 0.5);
    CHECK(full.beta_enc == 1.0);
}

TEST_CASE("learning rate schedule") {
    TrainConfig t;
    CHECK(learning_rate_at(t, 0) == 0.0);
    CHECK(learning_rate_at(t, t.warmup_steps) == doctest::Approx(t.lr));
    for (std::size_t s = 1; s < t.warmup_steps; ++s) CHECK(learning_rate_at(t, s) > learning_rate_at(t, s - 1));
    for (std::size_t s = t.warmup_steps + 1; s <= t.steps; ++s) CHECK(learning_rate_at(t, s) <= learning_rate_at(t, s - 1));
    CHECK(learning_rate_at(t, t.steps) == doctest::Approx(0.0));
}

TEST_CASE("curriculum phases") {
    TrainConfig t;
    const auto d0 = curriculum_mask(t, 0, 1);
    CHECK(d0.kind == MaskKind::Full);
    CHECK_FALSE(d0.distortions);
    CHECK(d0.phase == TrainPhase::FullMask);
    CHECK(curriculum_mask(t, t.s1 - 1, 3).kind == MaskKind::Full);
    std::set<MaskKind> kinds;
    for (std::uint64_t s = 0; s < 200; ++s) {
        const auto d = curriculum_mask(t, t.s1, s);
        kinds.insert(d.kind);
        CHECK_FALSE(d.distortions);
        CHECK(d.phase == TrainPhase::AllMasks);
    }
    CHECK(kinds.size() == 4);
    CHECK(curriculum_mask(t, t.s2, 0).distortions);
    CHECK(curriculum_mask(t, t.s2, 0).phase == TrainPhase::Distorted);
    t.distortions = false;
    CHECK_FALSE(curriculum_mask(t, t.s2, 0).distortions);
    t.mask_curriculum = false;
    for (std::uint64_t s = 0; s < 50; ++s) CHECK(curriculum_mask(t, t.s2 + 5, s).kind == MaskKind::Full);

    // thresholds rescaled by the step ratio keep their order
    const auto full = TrainConfig::full_scale();
    for (double ratio : {0.01, 0.05, 0.1, 0.5}) {
        auto scaled = full;
        scaled.steps = static_cast<std::size_t>(full.steps * ratio);
        scaled.s1 = static_cast<std::size_t>(full.s1 * ratio);
        scaled.s2 = static_cast<std::size_t>(full.s2 * ratio);
        CHECK_NOTHROW(scaled.validate());
    }
    CHECK(TrainConfig{}.s1 < TrainConfig{}.s2);
    CHECK(TrainConfig{}.s2 < TrainConfig{}.steps);
    for (auto n : {"full-mask", "all-masks", "distorted"}) CHECK(train_phase_name(parse_train_phase(n)) == n);
}

TEST_CASE("config validation") {
    TrainConfig t;
    CHECK_NOTHROW(t.validate());
    t.s1 = 300;
    CHECK_THROWS_AS(t.validate(), InvalidArgument);
    t = TrainConfig{};
    t.s2 = t.steps;
    CHECK_THROWS_AS(t.validate(), InvalidArgument);
    t.steps = 0;
    CHECK_NOTHROW(t.validate());
    t = TrainConfig{};
    t.alpha = -1;
    CHECK_THROWS_AS(t.validate(), InvalidArgument);
    t = TrainConfig{};
    t.preset_overrides["rotation"]["angle"] = {-10, 10};
    CHECK_NOTHROW(t.validate());
    t.preset_overrides["rotation"]["zoom"] = {1, 2};
    CHECK_THROWS_AS(t.validate(), InvalidArgument);
}

TEST_CASE("payload drawing per regime") {
    for (auto kind : {MaskKind::Full, MaskKind::Rectangular, MaskKind::Irregular, MaskKind::Segmented}) {
        auto c = tiny();
        c.frames = 4;
        c.height = c.width = 16;
        auto p = draw_payload(c, kind, 9);
        CHECK(p.message.size() == 4);
        CHECK(p.truth.frames() == 4);
        CHECK(std::get<SpatioTemporalMask>(p.mask) == p.truth);
        for (std::size_t t = 0; t < 4; ++t) CHECK(p.truth.frame(t).count() > 0);

        c.d_e = 2;
        p = draw_payload(c, kind, 9);
        const auto& m2 = std::get<SpatialMask>(p.mask);
        for (std::size_t t = 0; t < 4; ++t) CHECK(p.truth.frame(t) == m2);

        c.d_e = 1;
        p = draw_payload(c, kind, 9);
        CHECK(std::holds_alternative<std::monostate>(p.mask));
        CHECK(p.truth.count() > 0);

        c.d_e = 3;
        c.mask_channels = 3;
        p = draw_payload(c, kind, 9);
        CHECK(p.truth.channels() == 3);
        const auto cb = build_codebook(4, 3);
        const auto u = p.truth.union_channels();
        for (std::size_t t = 0; t < 4; ++t)
            for (std::size_t y = 0; y < 16; ++y)
                for (std::size_t x = 0; x < 16; ++x)
                    for (std::size_t ch = 0; ch < 3; ++ch)
                        CHECK(p.truth.at(t, y, x, ch) == u.at(t, y, x) * cb.code(t)[ch]);
    }
    CHECK(draw_payload(tiny(), MaskKind::Irregular, 4).message == draw_payload(tiny(), MaskKind::Irregular, 4).message);
}

TEST_CASE("batches cycle the data source") {
    const auto c = tiny();
    auto t = short_run(10);
    const auto data = synthetic_dataset(3, 2, 8, 8, 1);
    const auto b0 = make_batch(c, t, data, 0), b1 = make_batch(c, t, data, 1);
    CHECK(b0.host.shape() == Shape{2, 3, 2, 8, 8});
    CHECK(b0.bits.shape() == Shape{2, 4});
    CHECK(b0.clip_index == std::vector<std::size_t>{0, 1});
    CHECK(b1.clip_index == std::vector<std::size_t>{2, 0});
    t.fixed_payloads = true;
    t.mask_curriculum = false;
    const auto f0 = make_batch(c, t, data, 0), f1 = make_batch(c, t, data, 1), f3 = make_batch(c, t, data, 3);
    CHECK(f0.payloads[0].message == f3.payloads[0].message);
    CHECK(f0.payloads[0].message == f1.payloads[1].message);
}

TEST_CASE("loss ledger identity and determinism") {
    const auto c = tiny();
    const auto t = short_run(12);
    const auto data = synthetic_dataset(2, 2, 8, 8, 2);
    std::vector<LossReport> a, b;
    FitOptions oa, ob;
    oa.on_step = [&](const LossReport& r) { a.push_back(r); };
    ob.on_step = [&](const LossReport& r) { b.push_back(r); };
    const auto ca = fit(c, t, data, oa), cb = fit(c, t, data, ob);
    REQUIRE(a.size() == 12);
    CHECK(a == b);
    CHECK(same_params(ca.bundle, cb.bundle));
    bool saw_attack = false;
    for (const auto& r : a) {
        const double want = r.beta_enc * r.l_enc + r.beta_dec * (r.l_msg + r.alpha * r.l_mask);
        CHECK(r.l_total == doctest::Approx(want).epsilon(1e-6));
        CHECK(r.l_dec == doctest::Approx(r.l_msg + r.alpha * r.l_mask).epsilon(1e-6));
        CHECK(r.beta_dec == doctest::Approx(beta_dec_at(t, r.step)));
        CHECK(r.lr == doctest::Approx(learning_rate_at(t, r.step)));
        for (double v : {r.l_enc, r.l_msg, r.l_mask}) CHECK(v >= 0);
        if (r.step < t.s2) CHECK(r.attack.empty());
        saw_attack |= !r.attack.empty();
        CHECK(parse_loss_record(loss_record_json(r)) == r);
    }
    CHECK(saw_attack);
    CHECK(ca.step == 12);
    CHECK(ca.bundle.jnd_active);
}

TEST_CASE("resume continues bitwise") {
    const auto c = tiny();
    const auto t = short_run(10);
    const auto data = synthetic_dataset(2, 2, 8, 8, 3);
    std::vector<LossReport> full, tail;
    FitOptions of;
    of.on_step = [&](const LossReport& r) { full.push_back(r); };
    const auto done = fit(c, t, data, of);

    const auto dir = std::filesystem::temp_directory_path() / "dimwm_resume";
    std::filesystem::remove_all(dir);
    FitOptions oc;
    oc.out_dir = dir;
    oc.checkpoint_every = 5;
    fit(c, t, data, oc);
    const auto mid = load_checkpoint(dir / "step_5.dimc");
    REQUIRE(mid.step == 5);
    FitOptions ot;
    ot.on_step = [&](const LossReport& r) { tail.push_back(r); };
    const auto resumed = fit(c, t, data, ot, mid);
    REQUIRE(tail.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) CHECK(tail[i] == full[5 + i]);
    CHECK(same_params(done.bundle, resumed.bundle));
}

TEST_CASE("zero steps returns the initial checkpoint") {
    const auto c = tiny();
    auto t = short_run(0);
    const auto ck = fit(c, t, synthetic_dataset(1, 2, 8, 8, 0));
    const auto init = initial_checkpoint(c, t);
    CHECK(ck.step == 0);
    CHECK(same_params(ck.bundle, init.bundle));
    CHECK(ck.optimizer.t == 0);
    CHECK_THROWS_AS(fit(c, t, {}), InvalidArgument);
}

TEST_CASE("non-finite losses abort") {
    const auto c = tiny();
    auto t = short_run(10);
    auto ck = initial_checkpoint(c, t);
    auto params = ck.bundle.parameters();
    params[0].var.mutable_value()[0] = std::numeric_limits<float>::quiet_NaN();
    const auto batch = make_batch(c, t, synthetic_dataset(2, 2, 8, 8, 0), 0);
    CHECK_THROWS_AS(train_step(ck.bundle, ck.optimizer, t, batch, 0), NumericalError);
}

TEST_CASE("every regime trains a few steps") {
    for (auto [de, dd] : {std::pair{3, 3}, {1, 3}, {2, 3}, {3, 2}}) {
        auto c = tiny(de, dd);
        if (de == 3) c.mask_channels = 2;
        std::vector<LossReport> log;
        FitOptions o;
        o.on_step = [&](const LossReport& r) { log.push_back(r); };
        fit(c, short_run(6), synthetic_dataset(2, 2, 8, 8, 4), o);
        CHECK(log.size() == 6);
        for (const auto& r : log) CHECK(std::isfinite(r.l_total));
    }
}
