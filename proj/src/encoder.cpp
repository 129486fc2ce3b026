// Copyright 2026 The crepa-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "crepa/encoder.hpp"

#include <mutex>

#include "crepa/errors.hpp"
#include "crepa/rng.hpp"
#include "crepa/tensor_io.hpp"

namespace crepa::encoder {

namespace {

constexpr const char* kModule = "encoder";

int downsample_steps(const EncoderConfig& c) {
    int n = 0;
    for (int side = c.height; side > c.grid; side /= 2) {
        if (side % 2 != 0) return -1;
        ++n;
    }
    return n;
}

std::mutex& init_mutex() {
    static std::mutex m;
    return m;
}

/// Flattens the frames of a set of videos into [N, H, W, 3] plus labels.
std::pair<torch::Tensor, torch::Tensor> frames_of(const std::vector<synth::LabeledVideo>& videos) {
    std::vector<torch::Tensor> frames;
    std::vector<std::int64_t> labels;
    for (const auto& v : videos) {
        frames.push_back(v.video.data);
        for (std::int64_t f = 0; f < v.video.frames(); ++f) labels.push_back(v.class_id);
    }
    return {torch::cat(frames, 0), torch::tensor(labels, torch::kLong)};
}

}  // namespace

void EncoderConfig::validate() const {
    if (d_enc < 8) throw ConfigError(kModule, "d_enc must be >= 8");
    if (grid < 1 || height != width) throw ConfigError(kModule, "encoder needs square frames and grid >= 1");
    if (channels.size() != 3) throw ConfigError(kModule, "encoder uses exactly three conv blocks");
    const int n = downsample_steps(*this);
    if (n < 0 || n > 3 || (grid << n) != height)
        throw ConfigError(kModule, "frame side " + std::to_string(height) + " cannot reach grid " +
                                       std::to_string(grid) + " with <= 3 stride-2 blocks");
}

void to_json(nlohmann::json& j, const EncoderConfig& c) {
    j = nlohmann::json{{"grid", c.grid},
                       {"d_enc", c.d_enc},
                       {"height", c.height},
                       {"width", c.width},
                       {"channels", c.channels},
                       {"post_norm", c.post_norm},
                       {"num_classes", c.num_classes},
                       {"seed", c.seed},
                       {"steps", c.steps},
                       {"batch", c.batch},
                       {"lr", c.lr},
                       {"target_accuracy", c.target_accuracy},
                       {"failure_accuracy", c.failure_accuracy}};
}

void from_json(const nlohmann::json& j, EncoderConfig& c) {
    EncoderConfig d;
    c.grid = j.value("grid", d.grid);
    c.d_enc = j.value("d_enc", d.d_enc);
    c.height = j.value("height", d.height);
    c.width = j.value("width", d.width);
    c.channels = j.value("channels", d.channels);
    c.post_norm = j.value("post_norm", d.post_norm);
    c.num_classes = j.value("num_classes", d.num_classes);
    c.seed = j.value("seed", d.seed);
    c.steps = j.value("steps", d.steps);
    c.batch = j.value("batch", d.batch);
    c.lr = j.value("lr", d.lr);
    c.target_accuracy = j.value("target_accuracy", d.target_accuracy);
    c.failure_accuracy = j.value("failure_accuracy", d.failure_accuracy);
}

FrameEncoderNetImpl::FrameEncoderNetImpl(const EncoderConfig& config) : config_(config) {
    config_.validate();
    const int n_down = downsample_steps(config_);
    trunk = register_module("trunk", torch::nn::Sequential());
    int in = synth::kChannels;
    for (int b = 0; b < 3; ++b) {
        const int stride = b >= 3 - n_down ? 2 : 1;
        const int out = config_.channels[static_cast<std::size_t>(b)];
        trunk->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1)));
        trunk->push_back(torch::nn::GELU());
        in = out;
    }
    token_head = register_module("token_head", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, config_.d_enc, 1)));
    classifier = register_module("classifier", torch::nn::Linear(config_.d_enc, config_.num_classes));
}

torch::Tensor FrameEncoderNetImpl::tokens(const torch::Tensor& frames) {
    if (frames.dim() != 4 || frames.size(1) != config_.height || frames.size(2) != config_.width ||
        frames.size(3) != synth::kChannels)
        throw DimensionError(kModule, "expected frames [N, " + std::to_string(config_.height) + ", " +
                                          std::to_string(config_.width) + ", 3]");
    auto x = frames.permute({0, 3, 1, 2}) * 2.0 - 1.0;
    auto t = token_head->forward(trunk->forward(x));          // [N, D, G, G]
    t = t.flatten(2).transpose(1, 2).contiguous();           // [N, G*G, D], raster order
    if (config_.post_norm) t = torch::layer_norm(t, {config_.d_enc}, {}, {}, 1e-6);
    return t;
}

torch::Tensor FrameEncoderNetImpl::classify_tokens(const torch::Tensor& tokens) {
    return classifier->forward(tokens.mean(1));
}

torch::Tensor FrameEncoderNetImpl::logits(const torch::Tensor& frames) { return classify_tokens(tokens(frames)); }

// --- frozen encoder ---------------------------------------------------------------

Encoder::Encoder(const EncoderConfig& config) {
    std::lock_guard lock(init_mutex());
    torch::manual_seed(config.seed);
    *this = freeze(FrameEncoderNet(config));
}

Encoder Encoder::freeze(FrameEncoderNet net) {
    Encoder e;
    for (auto& p : net->parameters()) p.set_requires_grad(false);
    net->eval();
    e.module_ = std::move(net);
    return e;
}

std::uint64_t Encoder::fingerprint() const {
    std::vector<NamedTensor> tensors;
    for (const auto& p : module_->named_parameters()) tensors.push_back({p.key(), p.value()});
    return crepa::fingerprint(tensors);
}

torch::Tensor Encoder::encode_frame(const torch::Tensor& frame) const {
    if (frame.dim() != 3) throw DimensionError(kModule, "encode_frame expects [H, W, 3]");
    torch::NoGradGuard guard;
    return module_->tokens(frame.unsqueeze(0).to(torch::kFloat32))[0];
}

FeatureBank Encoder::encode_video(const synth::VideoTensor& video, const std::string& video_id) const {
    torch::NoGradGuard guard;
    FeatureBank bank;
    bank.features = module_->tokens(video.data.to(torch::kFloat32));
    bank.video_id = video_id;
    bank.encoder_fingerprint = fingerprint();
    if (!torch::isfinite(bank.features).all().item<bool>())
        throw NumericError(kModule, "non-finite features for video " + video_id);
    return bank;
}

torch::Tensor Encoder::encode_batch(const torch::Tensor& videos) const {
    if (videos.dim() != 5) throw DimensionError(kModule, "encode_batch expects [B, F, H, W, 3]");
    torch::NoGradGuard guard;
    const auto B = videos.size(0), Fr = videos.size(1);
    auto t = module_->tokens(videos.reshape({B * Fr, videos.size(2), videos.size(3), videos.size(4)})
                                 .to(torch::kFloat32));
    return t.view({B, Fr, t.size(1), t.size(2)});
}

torch::Tensor Encoder::predict(const torch::Tensor& frames) const {
    torch::NoGradGuard guard;
    return module_->logits(frames.to(torch::kFloat32)).argmax(1);
}

double Encoder::frame_accuracy(const std::vector<synth::LabeledVideo>& videos) const {
    if (videos.empty()) return 0.0;
    auto [frames, labels] = frames_of(videos);
    std::int64_t correct = 0;
    for (std::int64_t s = 0; s < frames.size(0); s += 256) {
        const auto e = std::min<std::int64_t>(s + 256, frames.size(0));
        correct += predict(frames.slice(0, s, e)).eq(labels.slice(0, s, e)).sum().item<std::int64_t>();
    }
    return static_cast<double>(correct) / static_cast<double>(frames.size(0));
}

void Encoder::save(const std::filesystem::path& path) const {
    WeightFile file;
    file.magic = "CRPE";
    file.version = 1;
    file.config = config();
    file.config["fingerprint"] = hex64(fingerprint());
    for (const auto& p : module_->named_parameters()) file.sections.push_back({p.key(), p.value()});
    write_weight_file(path, file);
}

Encoder Encoder::load(const std::filesystem::path& path) {
    auto file = read_weight_file(path, "CRPE");
    auto cfg = file.config.get<EncoderConfig>();
    FrameEncoderNet net(cfg);
    auto params = net->named_parameters();
    {
        torch::NoGradGuard guard;
        for (const auto& s : file.sections) {
            auto* p = params.find(s.name);
            if (!p || p->sizes() != s.value.sizes())
                throw IoError(kModule, path.string() + ": section '" + s.name + "' does not match");
            p->copy_(s.value);
        }
    }
    auto enc = freeze(std::move(net));
    if (file.config.contains("fingerprint") && file.config["fingerprint"].get<std::string>() != hex64(enc.fingerprint()))
        throw IntegrityError(kModule, path.string() + ": fingerprint mismatch");
    return enc;
}

// --- pretext training -------------------------------------------------------------

PretrainResult pretrain_encoder(const synth::Manifest& manifest, const EncoderConfig& config) {
    if (manifest.entries.empty()) throw DomainError(kModule, "empty manifest");
    return pretrain_encoder(synth::load_videos(manifest, synth::Split::train),
                            synth::load_videos(manifest, synth::Split::test), config);
}

PretrainResult pretrain_encoder(const std::vector<synth::LabeledVideo>& train,
                                const std::vector<synth::LabeledVideo>& heldout, const EncoderConfig& config) {
    if (train.empty() || heldout.empty()) throw DomainError(kModule, "pretraining needs train and held-out videos");
    FrameEncoderNet net{nullptr};
    {
        std::lock_guard lock(init_mutex());
        torch::manual_seed(config.seed);
        net = FrameEncoderNet(config);
    }
    auto [frames, labels] = frames_of(train);
    auto gen = make_generator(mix_seed(config.seed, 0xe7c0));
    torch::optim::Adam opt(net->parameters(), torch::optim::AdamOptions(config.lr));

    PretrainResult result;
    net->train();
    for (int step = 0; step < config.steps; ++step) {
        auto idx = torch::randint(frames.size(0), {config.batch}, gen, torch::kLong);
        auto loss = torch::nn::functional::cross_entropy(net->logits(frames.index_select(0, idx)),
                                                          labels.index_select(0, idx));
        opt.zero_grad();
        loss.backward();
        opt.step();
        result.losses.push_back(loss.item<double>());
    }
    result.encoder = Encoder::freeze(std::move(net));
    result.heldout_accuracy = result.encoder.frame_accuracy(heldout);
    if (result.heldout_accuracy < config.failure_accuracy)
        throw TrainingFailure(kModule, "held-out frame accuracy " + std::to_string(result.heldout_accuracy) +
                                           " below " + std::to_string(config.failure_accuracy) +
                                           " after " + std::to_string(config.steps) + " steps");
    return result;
}

}  // namespace crepa::encoder
