// Copyright 2026 The crepa-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "test_util.hpp"

#include "crepa/encoder.hpp"
#include "crepa/errors.hpp"
#include "crepa/synth.hpp"

using namespace crepa;
using namespace crepa::encoder;

namespace {

struct Fixture {
    TempDir dir;
    synth::Manifest manifest;
    std::vector<synth::LabeledVideo> train, test;
    PretrainResult trained;

    Fixture() {
        manifest = synth::generate_dataset(8, {}, 21, dir.path);
        train = synth::load_videos(manifest, synth::Split::train);
        test = synth::load_videos(manifest, synth::Split::test);
        EncoderConfig c;
        c.seed = 4;
        trained = pretrain_encoder(train, test, c);
    }
};

Fixture& fixture() {
    static Fixture f;
    return f;
}

double cosine(const torch::Tensor& a, const torch::Tensor& b) {
    auto x = a.flatten().to(torch::kFloat64), y = b.flatten().to(torch::kFloat64);
    return (x.dot(y) / (x.norm() * y.norm())).item<double>();
}

}  // namespace

TEST_CASE("pretrained encoder reaches the accuracy target on held-out frames") {
    auto& f = fixture();
    CHECK(f.trained.heldout_accuracy >= 0.8);
    CHECK(f.trained.encoder.frame_accuracy(f.test) == doctest::Approx(f.trained.heldout_accuracy));
    CHECK(f.trained.losses.back() < f.trained.losses.front());
}

TEST_CASE("untrained encoder is near chance") {
    auto& f = fixture();
    EncoderConfig c;
    c.seed = 4;
    Encoder raw(c);
    CHECK(raw.frame_accuracy(f.test) < 0.25);
}

TEST_CASE("pretraining is deterministic in the seed") {
    auto& f = fixture();
    EncoderConfig c;
    c.seed = 4;
    c.steps = 30;
    c.failure_accuracy = 0.0;
    auto a = pretrain_encoder(f.train, f.test, c);
    auto b = pretrain_encoder(f.train, f.test, c);
    CHECK(a.encoder.fingerprint() == b.encoder.fingerprint());
    CHECK(a.losses == b.losses);
    c.seed = 5;
    auto d = pretrain_encoder(f.train, f.test, c);
    CHECK(d.encoder.fingerprint() != a.encoder.fingerprint());
}

TEST_CASE("adjacent frames of a video are closer than frames of other classes") {
    auto& f = fixture();
    auto& enc = f.trained.encoder;
    int wins = 0, total = 0;
    for (std::size_t i = 0; i < f.test.size(); ++i) {
        const auto& v = f.test[i];
        const auto& other = f.test[(i + 17) % f.test.size()];
        if (other.class_id == v.class_id) continue;
        auto fv = enc.encode_video(v.video).features.mean(1);
        auto fo = enc.encode_video(other.video).features.mean(1);
        for (int t = 0; t + 1 < fv.size(0); ++t) {
            wins += cosine(fv[t], fv[t + 1]) > cosine(fv[t], fo[t]);
            ++total;
        }
    }
    CHECK(total > 0);
    CHECK(static_cast<double>(wins) / total > 0.95);
}

TEST_CASE("static scenes give identical features on every frame") {
    auto& enc = fixture().trained.encoder;
    auto v = synth::generate_video({5, 8, 32, 32, 77, false});
    auto feats = enc.encode_video(v).features;
    for (int t = 1; t < feats.size(0); ++t) CHECK(torch::equal(feats[t], feats[0]));
}

TEST_CASE("feature changes between frames are localised around the sprite") {
    auto& enc = fixture().trained.encoder;
    const int G = enc.config().grid;
    const double cell = 32.0 / G;
    int hits = 0, total = 0;
    for (int cls : {0, 7, 12}) {
        synth::VideoSpec spec{cls, 8, 32, 32, 1234u + static_cast<unsigned>(cls)};
        auto track = synth::sprite_track(spec);
        auto feats = enc.encode_video(synth::generate_video(spec)).features;
        for (int t = 0; t + 1 < 8; ++t) {
            auto delta = (feats[t + 1] - feats[t]).norm(2, {1});
            const auto arg = delta.argmax().item<std::int64_t>();
            const double cx = (static_cast<double>(arg % G) + 0.5) * cell;
            const double cy = (static_cast<double>(arg / G) + 0.5) * cell;
            bool near = false;
            for (int s : {t, t + 1}) {
                const double dx = cx - track.centers[s][0], dy = cy - track.centers[s][1];
                near = near || std::hypot(dx, dy) <= track.radius + 1.5 * cell;
            }
            hits += near;
            ++total;
        }
    }
    CHECK(static_cast<double>(hits) / total >= 0.8);
}

TEST_CASE("encoder output shapes, fingerprint and persistence") {
    auto& f = fixture();
    auto& enc = f.trained.encoder;
    auto bank = enc.encode_video(f.test[0].video, f.test[0].id);
    CHECK(bank.features.sizes() == torch::IntArrayRef{8, 64, 32});
    CHECK(bank.encoder_fingerprint == enc.fingerprint());
    CHECK(bank.video_id == f.test[0].id);
    CHECK(enc.fingerprint() == enc.fingerprint());

    auto batch = torch::stack({f.test[0].video.data, f.test[1].video.data});
    auto fb = enc.encode_batch(batch);
    CHECK(fb.sizes() == torch::IntArrayRef{2, 8, 64, 32});
    CHECK(torch::allclose(fb[0], bank.features, 1e-5, 1e-6));

    TempDir dir;
    enc.save(dir.path / "e.crpe");
    auto back = Encoder::load(dir.path / "e.crpe");
    CHECK(back.fingerprint() == enc.fingerprint());
    CHECK(torch::equal(back.encode_video(f.test[0].video).features, bank.features));
}

TEST_CASE("encoder rejects malformed input") {
    auto& enc = fixture().trained.encoder;
    CHECK_THROWS_AS(enc.encode_frame(torch::zeros({32, 32})), DimensionError);
    CHECK_THROWS_AS(enc.encode_frame(torch::zeros({16, 16, 3})), DimensionError);
    CHECK_THROWS_AS(enc.encode_batch(torch::zeros({8, 32, 32, 3})), DimensionError);
    EncoderConfig bad;
    bad.d_enc = 4;
    CHECK_THROWS_AS(Encoder{bad}, ConfigError);
    bad = EncoderConfig{};
    bad.grid = 5;
    CHECK_THROWS_AS(Encoder{bad}, ConfigError);
    CHECK_THROWS_AS(pretrain_encoder({}, fixture().test, EncoderConfig{}), DomainError);

    TempDir dir;
    {
        std::ofstream(dir.path / "junk.crpe") << "not an encoder";
    }
    CHECK_THROWS_AS(Encoder::load(dir.path / "junk.crpe"), IoError);
    CHECK_THROWS_AS(Encoder::load(dir.path / "missing.crpe"), IoError);
}
