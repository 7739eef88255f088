#include "dfkd/models/generator.hpp"

namespace dfkd::models {

ConditionedNoiseBatch sample_conditioned_noise(std::size_t n, std::size_t m,
                                               const std::vector<double>& label_distribution,
                                               std::uint64_t seed) {
    validate_distribution(label_distribution);
    if (n < 1 || m < 1) throw ConfigError("sample_conditioned_noise: n and m must be >= 1");
    ConditionedNoiseBatch batch;
    batch.noise.resize({n, m});
    RngStream noise_rng = RngStream::split(seed, "noise");
    noise_rng.fill_normal(batch.noise.data(), batch.noise.size());

    RngStream label_rng = RngStream::split(seed, "labels");
    batch.labels.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        batch.labels.labels[i] = label_rng.sample_discrete(label_distribution);
    batch.labels.source_distribution = label_distribution;
    return batch;
}

std::string to_string(Conditioning c) {
    return c == Conditioning::Multiply ? "multiply" : "concatenate";
}

Conditioning conditioning_from_string(const std::string& s) {
    if (s == "multiply") return Conditioning::Multiply;
    if (s == "concatenate") return Conditioning::Concatenate;
    throw ConfigError("unknown conditioning mode: " + s);
}

void GeneratorSpec::validate() const {
    if (noise_dim < 1 || class_count < 2 || embedding_dim < 1)
        throw ConfigError("GeneratorSpec: bad dimensions");
    if (mode == Conditioning::Multiply && embedding_dim != noise_dim)
        throw ConfigError("GeneratorSpec: multiply conditioning requires embedding_dim == noise_dim");
    if (widths.size() != 2 || upsample.size() != 2)
        throw ConfigError("GeneratorSpec: trunk expects two blocks (widths and upsample of size 2)");
    const int out = base_grid * upsample[0] * upsample[1];
    if (out != image_shape[1] || out != image_shape[2])
        throw ConfigError("GeneratorSpec: base_grid * upsample factors must equal image size");
    if (image_shape[0] < 1) throw ConfigError("GeneratorSpec: bad channel count");
}

ConditionalGenerator::ConditionalGenerator(GeneratorSpec spec)
    : spec_(std::move(spec)),
      cond_dim_(spec_.mode == Conditioning::Multiply ? spec_.noise_dim
                                                     : spec_.noise_dim + spec_.embedding_dim),
      embed_(spec_.class_count, spec_.embedding_dim),
      fc_(1, 1),
      bn0_(spec_.widths[0]),
      up1_(spec_.upsample[0]),
      up2_(spec_.upsample[1]),
      conv1_(spec_.widths[0], spec_.widths[0], 3, 1, 1),
      conv2_(spec_.widths[0], spec_.widths[1], 3, 1, 1),
      conv3_(spec_.widths[1], spec_.image_shape[0], 3, 1, 1),
      bn1_(spec_.widths[0]),
      bn2_(spec_.widths[1]) {
    spec_.validate();
    fc_ = nn::Linear<float>(cond_dim_, spec_.widths[0] * spec_.base_grid * spec_.base_grid);
}

void ConditionalGenerator::init_params(RngStream rng) {
    embed_.init(rng);
    fc_.init(rng);
    conv1_.init(rng);
    conv2_.init(rng);
    conv3_.init(rng);
}

Tensor<float> ConditionalGenerator::forward(const ConditionedNoiseBatch& batch,
                                            const GenFwdOptions& opt) {
    batch.labels.validate();
    const std::size_t n = batch.n();
    if (static_cast<int>(batch.m()) != spec_.noise_dim)
        throw DimensionError("ConditionalGenerator: noise dim mismatch");
    if (batch.labels.labels.size() != n)
        throw DimensionError("ConditionalGenerator: one label per noise row required");
    if (static_cast<int>(batch.labels.c()) != spec_.class_count)
        throw DimensionError("ConditionalGenerator: label distribution class count mismatch");

    Tensor<float> emb;
    embed_.forward(batch.labels.labels, emb);

    Tensor<float> h;
    if (spec_.mode == Conditioning::Multiply) {
        h.resize({n, static_cast<std::size_t>(cond_dim_)});
        for (std::size_t i = 0; i < h.size(); ++i) h[i] = batch.noise[i] * emb[i];
    } else {
        h.resize({n, static_cast<std::size_t>(cond_dim_)});
        const std::size_t m = spec_.noise_dim, e = spec_.embedding_dim;
        for (std::size_t i = 0; i < n; ++i) {
            std::copy(batch.noise.data() + i * m, batch.noise.data() + (i + 1) * m,
                      h.data() + i * (m + e));
            std::copy(emb.data() + i * e, emb.data() + (i + 1) * e, h.data() + i * (m + e) + m);
        }
    }
    if (opt.cache) {
        noise_cache_ = batch.noise;
        emb_cache_ = emb;
        label_cache_ = batch.labels.labels;
        cached_ = true;
    } else {
        cached_ = false;
    }

    nn::BatchNorm2d<float>::Options bnopt;
    bnopt.batch_stats = opt.bn_batch_stats;
    bnopt.update_running = opt.bn_update_running;

    Tensor<float> z0, g0, u1, c1, b1, a1, u2, c2, b2, a2, c3, out;
    fc_.forward(h, z0, opt.cache);
    z0.reshape({n, static_cast<std::size_t>(spec_.widths[0]),
                static_cast<std::size_t>(spec_.base_grid),
                static_cast<std::size_t>(spec_.base_grid)});
    bn0_.forward(z0, g0, bnopt, opt.cache);

    up1_.forward(g0, u1);
    conv1_.forward(u1, c1, opt.cache);
    bn1_.forward(c1, b1, bnopt, opt.cache);
    act1_.forward(b1, a1, opt.cache);

    up2_.forward(a1, u2);
    conv2_.forward(u2, c2, opt.cache);
    bn2_.forward(c2, b2, bnopt, opt.cache);
    act2_.forward(b2, a2, opt.cache);

    conv3_.forward(a2, c3, opt.cache);
    tanh_.forward(c3, out, opt.cache);
    return out;
}

void ConditionalGenerator::backward(const Tensor<float>& d_images) {
    if (!cached_) throw ContractError("ConditionalGenerator::backward without cached forward");
    Tensor<float> dc3, da2, db2, dc2, du2, da1, db1, dc1, du1, dg0, dz0, dh;

    tanh_.backward(d_images, &dc3);
    conv3_.backward(dc3, &da2);
    act2_.backward(da2, &db2);
    bn2_.backward(db2, &dc2);
    conv2_.backward(dc2, &du2);
    up2_.backward(du2, &da1);
    act1_.backward(da1, &db1);
    bn1_.backward(db1, &dc1);
    conv1_.backward(dc1, &du1);
    up1_.backward(du1, &dg0);
    bn0_.backward(dg0, &dz0);
    dz0.reshape({dz0.dim(0), static_cast<std::size_t>(
                                 spec_.widths[0] * spec_.base_grid * spec_.base_grid)});
    fc_.backward(dz0, &dh);

    const std::size_t n = dh.dim(0);
    Tensor<float> demb({n, static_cast<std::size_t>(spec_.embedding_dim)});
    if (spec_.mode == Conditioning::Multiply) {
        for (std::size_t i = 0; i < dh.size(); ++i) demb[i] = dh[i] * noise_cache_[i];
    } else {
        const std::size_t m = spec_.noise_dim, e = spec_.embedding_dim;
        for (std::size_t i = 0; i < n; ++i)
            std::copy(dh.data() + i * (m + e) + m, dh.data() + (i + 1) * (m + e),
                      demb.data() + i * e);
    }
    embed_.backward(label_cache_, demb);
}

std::vector<nn::ParamRef<float>> ConditionalGenerator::params() {
    std::vector<nn::ParamRef<float>> out;
    for (auto& blk : {embed_.params("embed"), fc_.params("fc"), bn0_.params("bn0"),
                      conv1_.params("conv1"), bn1_.params("bn1"), conv2_.params("conv2"),
                      bn2_.params("bn2"), conv3_.params("conv3")})
        out.insert(out.end(), blk.begin(), blk.end());
    return out;
}

std::vector<nn::BufferRef<float>> ConditionalGenerator::buffers() {
    std::vector<nn::BufferRef<float>> out;
    for (auto& blk : {bn0_.buffers("bn0"), bn1_.buffers("bn1"), bn2_.buffers("bn2")})
        out.insert(out.end(), blk.begin(), blk.end());
    return out;
}

void ConditionalGenerator::zero_grad() {
    for (auto& p : params()) p.grad->set_zero();
}

std::unique_ptr<ConditionalGenerator> ConditionalGenerator::clone() const {
    auto copy = std::make_unique<ConditionalGenerator>(spec_);
    auto& self = const_cast<ConditionalGenerator&>(*this);
    auto sp = self.params();
    auto dp = copy->params();
    for (std::size_t i = 0; i < sp.size(); ++i) *dp[i].value = *sp[i].value;
    auto sb = self.buffers();
    auto db = copy->buffers();
    for (std::size_t i = 0; i < sb.size(); ++i) *db[i].value = *sb[i].value;
    return copy;
}

Tensor<float> generate(ConditionalGenerator& gen, const ConditionedNoiseBatch& batch,
                       bool train_mode_bn) {
    GenFwdOptions opt;
    opt.bn_batch_stats = train_mode_bn;
    opt.bn_update_running = false;
    opt.cache = false;
    return gen.forward(batch, opt);
}

std::uint64_t state_checksum(ConditionalGenerator& gen) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](const float* data, std::size_t n) {
        const unsigned char* bytes = reinterpret_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n * sizeof(float); ++i) {
            h ^= bytes[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (auto& p : gen.params()) feed(p.value->data(), p.value->size());
    for (auto& b : gen.buffers()) feed(b.value->data(), b.value->size());
    return h;
}

}  // namespace dfkd::models
