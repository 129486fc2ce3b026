// Copyright 2026 The crepa-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "crepa/dit.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <set>

#include "crepa/errors.hpp"
#include "crepa/rng.hpp"
#include "crepa/tensor_io.hpp"

namespace crepa::dit {

namespace F = torch::nn::functional;

namespace {

constexpr const char* kModule = "video-dit";
constexpr std::uint32_t kCheckpointVersion = 1;

std::mutex& init_mutex() {
    static std::mutex m;
    return m;
}

bool is_lora_name(const std::string& name) { return name.find(".adapter.") != std::string::npos; }

const std::set<std::string>& short_targets() {
    static const std::set<std::string> s = {"q", "k", "v", "out", "fc1", "fc2"};
    return s;
}

AdaptableLinear& target_of(DiTBlockImpl& block, const std::string& name) {
    if (name == "q") return block.q;
    if (name == "k") return block.k;
    if (name == "v") return block.v;
    if (name == "out") return block.out;
    if (name == "fc1") return block.fc1;
    if (name == "fc2") return block.fc2;
    throw ConfigError(kModule, "unknown LoRA target '" + name + "'");
}

torch::Tensor modulate(const torch::Tensor& x, const torch::Tensor& shift, const torch::Tensor& scale) {
    return x * (1 + scale.unsqueeze(1)) + shift.unsqueeze(1);
}

void check_finite(const torch::Tensor& x, const std::string& where) {
    if (!torch::isfinite(x).all().item<bool>())
        throw NumericError(kModule, "non-finite activations in " + where);
}

}  // namespace

void DiTConfig::validate() const {
    if (depth < 1) throw ConfigError(kModule, "depth must be >= 1");
    if (heads < 1 || d_model % heads != 0)
        throw ConfigError(kModule, "d_model " + std::to_string(d_model) + " not divisible by heads " +
                                       std::to_string(heads));
    if (patch < 1 || height % patch != 0 || width % patch != 0)
        throw DimensionError(kModule, "frame " + std::to_string(height) + "x" + std::to_string(width) +
                                          " not divisible by patch " + std::to_string(patch));
    if (tap_layer < 1 || tap_layer > depth)
        throw ConfigError(kModule, "tap_layer must lie in [1, depth]");
    if (frames < 1 || frames > max_frames) throw ConfigError(kModule, "frames must lie in [1, max_frames]");
}

void to_json(nlohmann::json& j, const DiTConfig& c) {
    j = nlohmann::json{{"depth", c.depth},
                       {"d_model", c.d_model},
                       {"heads", c.heads},
                       {"patch", c.patch},
                       {"tap_layer", c.tap_layer},
                       {"class_cond", c.class_cond},
                       {"num_classes", c.num_classes},
                       {"frames", c.frames},
                       {"height", c.height},
                       {"width", c.width},
                       {"channels", c.channels},
                       {"max_frames", c.max_frames},
                       {"temporal_pos", c.temporal_pos},
                       {"mlp_ratio", c.mlp_ratio},
                       {"tap_point", c.tap_point == TapPoint::post_residual ? "post_residual"
                                                                            : "residual_branch"},
                       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, DiTConfig& c) {
    DiTConfig d;
    c.depth = j.value("depth", d.depth);
    c.d_model = j.value("d_model", d.d_model);
    c.heads = j.value("heads", d.heads);
    c.patch = j.value("patch", d.patch);
    c.tap_layer = j.value("tap_layer", d.tap_layer);
    c.class_cond = j.value("class_cond", d.class_cond);
    c.num_classes = j.value("num_classes", d.num_classes);
    c.frames = j.value("frames", d.frames);
    c.height = j.value("height", d.height);
    c.width = j.value("width", d.width);
    c.channels = j.value("channels", d.channels);
    c.max_frames = j.value("max_frames", d.max_frames);
    c.temporal_pos = j.value("temporal_pos", d.temporal_pos);
    c.mlp_ratio = j.value("mlp_ratio", d.mlp_ratio);
    const auto tap = j.value("tap_point", std::string("post_residual"));
    if (tap == "post_residual") c.tap_point = TapPoint::post_residual;
    else if (tap == "residual_branch") c.tap_point = TapPoint::residual_branch;
    else throw ConfigError(kModule, "unknown tap_point '" + tap + "'");
    c.seed = j.value("seed", d.seed);
}

void to_json(nlohmann::json& j, const LoraSpec& s) {
    j = nlohmann::json{{"targets", s.targets}, {"rank", s.rank}, {"alpha", s.alpha}, {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, LoraSpec& s) {
    LoraSpec d;
    s.targets = j.value("targets", d.targets);
    s.rank = j.value("rank", d.rank);
    s.alpha = j.value("alpha", d.alpha);
    s.seed = j.value("seed", d.seed);
}

torch::Tensor TokenGrid::per_frame() const {
    return tokens.view({tokens.size(0), frames, tokens_per_frame, tokens.size(2)});
}

torch::Tensor patchify(const torch::Tensor& video, int patch) {
    auto v = video.dim() == 4 ? video.unsqueeze(0) : video;
    if (v.dim() != 5) throw DimensionError(kModule, "patchify expects [B, F, H, W, C]");
    const auto B = v.size(0), Fr = v.size(1), H = v.size(2), W = v.size(3), C = v.size(4);
    if (H % patch != 0 || W % patch != 0)
        throw DimensionError(kModule, "frame " + std::to_string(H) + "x" + std::to_string(W) +
                                          " not divisible by patch " + std::to_string(patch));
    const auto gh = H / patch, gw = W / patch;
    return v.reshape({B, Fr, gh, patch, gw, patch, C})
        .permute({0, 1, 2, 4, 3, 5, 6})
        .reshape({B, Fr * gh * gw, patch * patch * C});
}

torch::Tensor unpatchify(const torch::Tensor& tokens, int frames, int height, int width, int channels,
                         int patch) {
    if (height % patch != 0 || width % patch != 0)
        throw DimensionError(kModule, "frame not divisible by patch");
    const auto B = tokens.size(0);
    const int gh = height / patch, gw = width / patch;
    if (tokens.size(1) != static_cast<std::int64_t>(frames) * gh * gw ||
        tokens.size(2) != static_cast<std::int64_t>(patch) * patch * channels)
        throw DimensionError(kModule, "token tensor does not match frame geometry");
    return tokens.reshape({B, frames, gh, gw, patch, patch, channels})
        .permute({0, 1, 2, 4, 3, 5, 6})
        .reshape({B, frames, height, width, channels});
}

// --- LoRA ------------------------------------------------------------------

LoraAdapterImpl::LoraAdapterImpl(std::int64_t d_in, std::int64_t d_out, int rank_, double alpha_,
                                 torch::Generator& gen)
    : rank(rank_), alpha(alpha_) {
    if (rank < 1) throw ConfigError(kModule, "LoRA rank must be >= 1");
    const double bound = 1.0 / std::sqrt(static_cast<double>(d_in));
    A = register_parameter("A", torch::rand({rank, d_in}, gen, torch::kFloat32) * (2 * bound) - bound);
    B = register_parameter("B", torch::zeros({d_out, rank}));
}

torch::Tensor LoraAdapterImpl::delta(const torch::Tensor& x) const {
    return F::linear(F::linear(x, A), B) * (alpha / rank);
}

AdaptableLinearImpl::AdaptableLinearImpl(std::int64_t d_in_, std::int64_t d_out_)
    : d_in(d_in_), d_out(d_out_) {
    weight = register_parameter("weight", torch::empty({d_out, d_in}));
    bias = register_parameter("bias", torch::zeros({d_out}));
    torch::nn::init::xavier_uniform_(weight);
}

torch::Tensor AdaptableLinearImpl::forward(const torch::Tensor& x) {
    auto y = F::linear(x, weight, bias);
    if (adapter) y = y + adapter->delta(x);
    return y;
}

void AdaptableLinearImpl::attach(int rank, double alpha, torch::Generator& gen) {
    if (adapter) detach_adapter();
    adapter = register_module("adapter", LoraAdapter(d_in, d_out, rank, alpha, gen));
    adapter->to(weight.scalar_type());
}

void AdaptableLinearImpl::detach_adapter() {
    if (!adapter) return;
    unregister_module("adapter");
    adapter = nullptr;
}

// --- blocks ------------------------------------------------------------------

DiTBlockImpl::DiTBlockImpl(int d_model, int heads_, double mlp_ratio) : heads(heads_) {
    const auto hidden = static_cast<std::int64_t>(std::lround(d_model * mlp_ratio));
    q = register_module("q", AdaptableLinear(d_model, d_model));
    k = register_module("k", AdaptableLinear(d_model, d_model));
    v = register_module("v", AdaptableLinear(d_model, d_model));
    out = register_module("out", AdaptableLinear(d_model, d_model));
    fc1 = register_module("fc1", AdaptableLinear(d_model, hidden));
    fc2 = register_module("fc2", AdaptableLinear(hidden, d_model));
    modulation = register_module("modulation", torch::nn::Linear(d_model, 6 * d_model));
    torch::nn::init::zeros_(modulation->weight);
    torch::nn::init::zeros_(modulation->bias);
}

DiTBlockImpl::Output DiTBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& cond) {
    const auto B = x.size(0), T = x.size(1), D = x.size(2);
    const auto dh = D / heads;
    auto mod = modulation->forward(torch::silu(cond)).chunk(6, 1);

    auto h = modulate(torch::layer_norm(x, {D}, {}, {}, 1e-6), mod[0], mod[1]);
    auto split = [&](const torch::Tensor& t) { return t.view({B, T, heads, dh}).transpose(1, 2); };
    auto a = at::scaled_dot_product_attention(split(q->forward(h)), split(k->forward(h)),
                                              split(v->forward(h)));
    auto attn = out->forward(a.transpose(1, 2).reshape({B, T, D}));
    auto attn_branch = mod[2].unsqueeze(1) * attn;
    auto x1 = x + attn_branch;

    auto h2 = modulate(torch::layer_norm(x1, {D}, {}, {}, 1e-6), mod[3], mod[4]);
    auto mlp = fc2->forward(torch::gelu(fc1->forward(h2), "tanh"));
    auto mlp_branch = mod[5].unsqueeze(1) * mlp;
    return {x1 + mlp_branch, attn_branch + mlp_branch};
}

// --- model ---------------------------------------------------------------------

VideoDiTImpl::VideoDiTImpl(const DiTConfig& config) : config_(config) {
    config_.validate();
    const int D = config_.d_model;
    patch_embed = register_module("patch_embed", torch::nn::Linear(config_.patch_dim(), D));
    torch::nn::init::xavier_uniform_(patch_embed->weight);
    torch::nn::init::zeros_(patch_embed->bias);
    pos_spatial = register_parameter("pos_spatial", torch::randn({config_.tokens_per_frame(), D}) * 0.02);
    pos_temporal = register_parameter("pos_temporal", torch::randn({config_.max_frames, D}) * 0.02);

    time_mlp = register_module("time_mlp", torch::nn::Sequential(torch::nn::Linear(D, D), torch::nn::SiLU(),
                                                                  torch::nn::Linear(D, D)));
    for (auto& p : time_mlp->named_parameters()) {
        if (p.key().find("weight") != std::string::npos) torch::nn::init::normal_(p.value(), 0.0, 0.02);
        else torch::nn::init::zeros_(p.value());
    }
    if (config_.class_cond) {
        class_embed = register_module("class_embed", torch::nn::Embedding(config_.num_classes + 1, D));
        torch::nn::init::normal_(class_embed->weight, 0.0, 0.02);
    }

    blocks = register_module("blocks", torch::nn::ModuleList());
    for (int i = 0; i < config_.depth; ++i) blocks->push_back(DiTBlock(D, config_.heads, config_.mlp_ratio));

    final_modulation = register_module("final_modulation", torch::nn::Linear(D, 2 * D));
    final_proj = register_module("final_proj", torch::nn::Linear(D, config_.patch_dim()));
    for (auto* lin : {&final_modulation, &final_proj}) {
        torch::nn::init::zeros_((*lin)->weight);
        torch::nn::init::zeros_((*lin)->bias);
    }
}

void VideoDiTImpl::set_tap_layer(int layer) {
    auto c = config_;
    c.tap_layer = layer;
    c.validate();
    config_ = c;
}

torch::Tensor VideoDiTImpl::timestep_embedding(const torch::Tensor& t) const {
    const int half = config_.d_model / 2;
    auto opts = pos_spatial.options();
    auto freqs = torch::exp(-std::log(10000.0) * torch::arange(half, opts) / half);
    auto args = t.to(opts.dtype()).unsqueeze(1) * freqs.unsqueeze(0);
    auto emb = torch::cat({torch::cos(args), torch::sin(args)}, 1);
    if (config_.d_model % 2 == 1) emb = torch::cat({emb, torch::zeros({emb.size(0), 1}, opts)}, 1);
    return emb;
}

ForwardOutput VideoDiTImpl::forward_with_tap(const torch::Tensor& xt, const torch::Tensor& t,
                                             const torch::Tensor& labels, bool all_layers) {
    if (xt.dim() != 5) throw DimensionError(kModule, "forward expects xt of shape [B, F, H, W, C]");
    const auto B = xt.size(0), Fr = xt.size(1);
    if (xt.size(2) != config_.height || xt.size(3) != config_.width || xt.size(4) != config_.channels)
        throw DimensionError(kModule, "input frame geometry does not match the model config");
    if (Fr > config_.max_frames) throw DimensionError(kModule, "too many frames for temporal table");
    if (t.dim() != 1 || t.size(0) != B) throw DimensionError(kModule, "t must be [B]");
    const auto N = static_cast<std::int64_t>(config_.tokens_per_frame());
    const auto D = static_cast<std::int64_t>(config_.d_model);

    auto x = patch_embed->forward(patchify(xt, config_.patch)).view({B, Fr, N, D});
    x = x + pos_spatial.view({1, 1, N, D});
    if (config_.temporal_pos) x = x + pos_temporal.slice(0, 0, Fr).view({1, Fr, 1, D});
    x = x.reshape({B, Fr * N, D});

    auto cond = time_mlp->forward(timestep_embedding(t));
    if (config_.class_cond) cond = cond + class_embed->forward(labels);

    ForwardOutput result;
    for (int i = 0; i < config_.depth; ++i) {
        auto o = blocks->ptr<DiTBlockImpl>(static_cast<std::size_t>(i))->forward(x, cond);
        x = o.out;
        check_finite(x, "block " + std::to_string(i + 1));
        const auto& tap_src = config_.tap_point == TapPoint::post_residual ? o.out : o.branch;
        if (i + 1 == config_.tap_layer) result.tap = {tap_src, Fr, N};
        if (all_layers) result.layers.push_back({tap_src, Fr, N});
    }

    auto fm = final_modulation->forward(torch::silu(cond)).chunk(2, 1);
    auto h = modulate(torch::layer_norm(x, {D}, {}, {}, 1e-6), fm[0], fm[1]);
    result.eps_pred = unpatchify(final_proj->forward(h), static_cast<int>(Fr), config_.height, config_.width,
                                 config_.channels, config_.patch);
    return result;
}

VideoDiT make_dit(const DiTConfig& config) {
    std::lock_guard lock(init_mutex());
    torch::manual_seed(config.seed);
    return VideoDiT(config);
}

VideoDiT clone_base(const VideoDiT& model) {
    auto copy = make_dit(model->config());
    copy->to(model->pos_spatial.scalar_type());
    auto dst = copy->named_parameters();
    torch::NoGradGuard guard;
    for (auto& [name, value] : base_parameters(*model)) {
        auto* p = dst.find(name);
        p->copy_(value.detach());
    }
    return copy;
}

// --- parameter views -------------------------------------------------------------

std::vector<std::pair<std::string, torch::Tensor>> trainable_parameters(const torch::nn::Module& model) {
    std::vector<std::pair<std::string, torch::Tensor>> out;
    for (const auto& p : model.named_parameters())
        if (p.value().requires_grad()) out.emplace_back(p.key(), p.value());
    return out;
}

std::vector<std::pair<std::string, torch::Tensor>> base_parameters(const torch::nn::Module& model) {
    std::vector<std::pair<std::string, torch::Tensor>> out;
    for (const auto& p : model.named_parameters())
        if (!is_lora_name(p.key())) out.emplace_back(p.key(), p.value());
    return out;
}

std::vector<std::pair<std::string, torch::Tensor>> lora_parameters(const torch::nn::Module& model) {
    std::vector<std::pair<std::string, torch::Tensor>> out;
    for (const auto& p : model.named_parameters())
        if (is_lora_name(p.key())) out.emplace_back(p.key(), p.value());
    return out;
}

std::uint64_t base_fingerprint(const VideoDiT& model) {
    std::vector<NamedTensor> tensors;
    for (auto& [name, value] : base_parameters(*model)) tensors.push_back({name, value});
    return fingerprint(tensors);
}

void set_requires_grad(torch::nn::Module& module, bool flag) {
    for (auto& p : module.parameters()) p.set_requires_grad(flag);
}

void inject_lora(VideoDiT& model, const LoraSpec& spec) {
    if (spec.rank < 1) throw ConfigError(kModule, "LoRA rank must be >= 1");
    const int depth = model->config().depth;
    // (block, target) pairs, validated before any mutation.
    std::vector<std::pair<int, std::string>> plan;
    for (const auto& target : spec.targets) {
        if (short_targets().count(target)) {
            for (int b = 0; b < depth; ++b) plan.emplace_back(b, target);
            continue;
        }
        const auto dot1 = target.find('.');
        const auto dot2 = target.find('.', dot1 == std::string::npos ? 0 : dot1 + 1);
        if (target.rfind("blocks.", 0) != 0 || dot2 == std::string::npos)
            throw ConfigError(kModule, "unknown LoRA target '" + target + "'");
        int b = -1;
        try {
            b = std::stoi(target.substr(dot1 + 1, dot2 - dot1 - 1));
        } catch (const std::exception&) {
            throw ConfigError(kModule, "unknown LoRA target '" + target + "'");
        }
        const auto leaf = target.substr(dot2 + 1);
        if (b < 0 || b >= depth || !short_targets().count(leaf))
            throw ConfigError(kModule, "unknown LoRA target '" + target + "'");
        plan.emplace_back(b, leaf);
    }

    set_requires_grad(*model, false);
    auto gen = make_generator(spec.seed);
    for (const auto& [b, leaf] : plan) {
        auto& lin = target_of(*model->blocks->ptr<DiTBlockImpl>(static_cast<std::size_t>(b)), leaf);
        lin->attach(spec.rank, spec.alpha, gen);
    }
}

void remove_lora(VideoDiT& model) {
    for (std::size_t b = 0; b < model->blocks->size(); ++b) {
        auto block = model->blocks->ptr<DiTBlockImpl>(b);
        for (const auto& name : short_targets()) target_of(*block, name)->detach_adapter();
    }
}

// --- checkpoints -------------------------------------------------------------------

void save_checkpoint(const std::filesystem::path& path, const VideoDiT& model, const CheckpointExtras& extras) {
    WeightFile file;
    file.magic = "CRPD";
    file.version = kCheckpointVersion;
    file.config["dit"] = model->config();
    if (extras.lora) file.config["lora"] = *extras.lora;
    for (auto& [name, value] : base_parameters(*model)) file.sections.push_back({name, value});
    for (auto& [name, value] : lora_parameters(*model)) file.sections.push_back({name, value});
    for (auto& [name, value] : extras.extra_sections) file.sections.push_back({"extra:" + name, value});
    write_weight_file(path, file);
}

namespace {

void copy_into(torch::nn::Module& model, const std::vector<NamedTensor>& sections, bool lora_only,
               const std::filesystem::path& path) {
    auto params = model.named_parameters();
    torch::NoGradGuard guard;
    for (const auto& s : sections) {
        if (s.name.rfind("extra:", 0) == 0) continue;
        if (lora_only != is_lora_name(s.name)) continue;
        auto* p = params.find(s.name);
        if (!p) throw IoError(kModule, path.string() + ": section '" + s.name + "' does not match the model");
        if (p->sizes() != s.value.sizes())
            throw DimensionError(kModule, path.string() + ": shape mismatch for '" + s.name + "'");
        p->copy_(s.value.to(p->dtype()));
    }
}

}  // namespace

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    auto file = read_weight_file(path, "CRPD");
    LoadedCheckpoint out;
    const auto cfg = file.config.at("dit").get<DiTConfig>();
    out.model = make_dit(cfg);
    copy_into(*out.model, file.sections, false, path);
    if (file.config.contains("lora")) {
        out.lora = file.config.at("lora").get<LoraSpec>();
        inject_lora(out.model, *out.lora);
        copy_into(*out.model, file.sections, true, path);
        for (auto& [name, p] : lora_parameters(*out.model)) p.set_requires_grad(true);
    }
    for (auto& s : file.sections)
        if (s.name.rfind("extra:", 0) == 0) out.extra_sections.emplace_back(s.name.substr(6), s.value);
    return out;
}

void load_lora(const std::filesystem::path& path, VideoDiT& base) {
    auto file = read_weight_file(path, "CRPD");
    if (!file.config.contains("lora")) throw IoError(kModule, path.string() + " has no LoRA sections");
    const auto cfg = file.config.at("dit").get<DiTConfig>();
    const auto& mine = base->config();
    if (cfg.depth != mine.depth || cfg.d_model != mine.d_model || cfg.patch != mine.patch ||
        cfg.heads != mine.heads)
        throw ConfigError(kModule, "LoRA checkpoint does not match the base architecture");
    const auto spec = file.config.at("lora").get<LoraSpec>();
    inject_lora(base, spec);
    copy_into(*base, file.sections, true, path);
    for (auto& [name, p] : lora_parameters(*base)) p.set_requires_grad(true);
}

}  // namespace crepa::dit
