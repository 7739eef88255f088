#include "dfkd/models/classifier.hpp"

#include <cstring>

namespace dfkd::models {

namespace {

nn::BatchNorm2d<float>::Options bn_options(const FwdOptions& opt) {
    nn::BatchNorm2d<float>::Options b;
    b.batch_stats = opt.bn_batch_stats;
    b.update_running = opt.bn_update_running;
    b.capture = opt.capture_bn;
    return b;
}

void add_inplace(Tensor<float>& a, const Tensor<float>& b) {
    if (!a.same_shape(b)) throw DimensionError("add_inplace: shape mismatch");
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

void check_input(const Tensor<float>& images, int in_ch, int size, const char* what) {
    if (images.rank() != 4) throw DimensionError(std::string(what) + ": expected [n,c,h,w]");
    if (static_cast<int>(images.dim(1)) != in_ch ||
        static_cast<int>(images.dim(2)) != size || static_cast<int>(images.dim(3)) != size)
        throw DimensionError(std::string(what) + ": input shape does not match architecture");
}

void copy_state(Classifier& dst, const Classifier& src) {
    auto& s = const_cast<Classifier&>(src);
    auto dp = dst.params();
    auto sp = s.params();
    for (std::size_t i = 0; i < dp.size(); ++i) *dp[i].value = *sp[i].value;
    auto db = dst.buffers();
    auto sb = s.buffers();
    for (std::size_t i = 0; i < db.size(); ++i) *db[i].value = *sb[i].value;
}

}  // namespace

// ---------------------------------------------------------------- LeNet-5

LeNet5::LeNet5(int class_count, int in_channels, int input_size, bool half)
    : classes_(class_count),
      in_ch_(in_channels),
      input_size_(input_size),
      half_(half),
      c1_(half ? 3 : 6),
      c2_(half ? 8 : 16),
      f1_(half ? 60 : 120),
      f2_(half ? 42 : 84),
      flat_(0),
      conv1_(in_channels, half ? 3 : 6, 5),
      conv2_(half ? 3 : 6, half ? 8 : 16, 5),
      bn1_(half ? 3 : 6),
      bn2_(half ? 8 : 16),
      pool1_(2),
      pool2_(2),
      fc1_(1, 1),
      fc2_(1, 1),
      fc3_(1, 1) {
    const int s1 = input_size - 4, s2 = s1 / 2, s3 = s2 - 4, s4 = s3 / 2;
    if (s3 <= 0) throw DimensionError("LeNet5: input size too small");
    flat_ = c2_ * s4 * s4;
    fc1_ = nn::Linear<float>(flat_, f1_);
    fc2_ = nn::Linear<float>(f1_, f2_);
    fc3_ = nn::Linear<float>(f2_, classes_);
}

void LeNet5::init_params(RngStream rng) {
    conv1_.init(rng);
    conv2_.init(rng);
    fc1_.init(rng);
    fc2_.init(rng);
    fc3_.init(rng);
}

ForwardRecord LeNet5::forward(const Tensor<float>& images, const FwdOptions& opt) {
    check_input(images, in_ch_, input_size_, "LeNet5");
    const auto bnopt = bn_options(opt);
    Tensor<float> a, b, t0, p1, c, d, t1, p2, h1, h2, h3, h4, logits;

    conv1_.forward(images, a, opt.cache);
    bn1_.forward(a, b, bnopt, opt.cache);
    relu1_.forward(b, t0, opt.cache);
    pool1_.forward(t0, p1, opt.cache);

    conv2_.forward(p1, c, opt.cache);
    bn2_.forward(c, d, bnopt, opt.cache);
    relu2_.forward(d, t1, opt.cache);
    t1_shape_ = t1.shape();
    pool2_.forward(t1, p2, opt.cache);

    p2.reshape({p2.dim(0), static_cast<std::size_t>(flat_)});
    fc1_.forward(p2, h1, opt.cache);
    relu3_.forward(h1, h2, opt.cache);
    fc2_.forward(h2, h3, opt.cache);
    relu4_.forward(h3, h4, opt.cache);
    fc3_.forward(h4, logits, opt.cache);

    ForwardRecord rec;
    rec.logits = LogitsBatch<float>(std::move(logits));
    rec.attention_maps.push_back(std::move(t0));
    rec.attention_maps.push_back(std::move(t1));
    if (opt.capture_bn) {
        rec.bn_captured = true;
        rec.bn_batch_stats.push_back({bn1_.captured_mean(), bn1_.captured_var()});
        rec.bn_batch_stats.push_back({bn2_.captured_mean(), bn2_.captured_var()});
    }
    return rec;
}

void LeNet5::backward(const Tensor<float>& d_logits, const BackwardOptions& opt) {
    Tensor<float> dh4, dh3, dh2, dh1, dp2, dt1, dd, dc, dp1, dt0, db, da;

    fc3_.backward(d_logits, &dh4, opt.param_grads);
    relu4_.backward(dh4, &dh3);
    fc2_.backward(dh3, &dh2, opt.param_grads);
    relu3_.backward(dh2, &dh1);
    fc1_.backward(dh1, &dp2, opt.param_grads);

    dp2.reshape({dp2.dim(0), static_cast<std::size_t>(c2_), t1_shape_[2] / 2, t1_shape_[3] / 2});
    pool2_.backward(dp2, &dt1);
    if (opt.tap_grads_out) {
        opt.tap_grads_out->resize(2);
        (*opt.tap_grads_out)[1] = dt1;
    }
    if (opt.tap_grads_in && !(*opt.tap_grads_in)[1].empty())
        add_inplace(dt1, (*opt.tap_grads_in)[1]);

    relu2_.backward(dt1, &dd);
    bn2_.backward(dd, &dc, opt.param_grads, opt.bn_penalty_weight);
    conv2_.backward(dc, &dp1, opt.param_grads);

    pool1_.backward(dp1, &dt0);
    if (opt.tap_grads_out) (*opt.tap_grads_out)[0] = dt0;
    if (opt.tap_grads_in && !(*opt.tap_grads_in)[0].empty())
        add_inplace(dt0, (*opt.tap_grads_in)[0]);

    relu1_.backward(dt0, &db);
    bn1_.backward(db, &da, opt.param_grads, opt.bn_penalty_weight);
    conv1_.backward(da, opt.input_grad, opt.param_grads);
}

std::vector<nn::ParamRef<float>> LeNet5::params() {
    std::vector<nn::ParamRef<float>> out;
    for (auto& block : {conv1_.params("conv1"), conv2_.params("conv2"), bn1_.params("bn1"),
                        bn2_.params("bn2"), fc1_.params("fc1"), fc2_.params("fc2"),
                        fc3_.params("fc3")})
        out.insert(out.end(), block.begin(), block.end());
    return out;
}

std::vector<nn::BufferRef<float>> LeNet5::buffers() {
    std::vector<nn::BufferRef<float>> out;
    for (auto& block : {bn1_.buffers("bn1"), bn2_.buffers("bn2")})
        out.insert(out.end(), block.begin(), block.end());
    return out;
}

std::vector<const nn::BatchNorm2d<float>*> LeNet5::bn_layers() const {
    return {&bn1_, &bn2_};
}

std::unique_ptr<Classifier> LeNet5::clone() const {
    auto copy = std::make_unique<LeNet5>(classes_, in_ch_, input_size_, half_);
    copy_state(*copy, *this);
    return copy;
}

// ---------------------------------------------------------------- ResNet

struct ResNetSmall::BasicBlock {
    nn::Conv2d<float> conv1, conv2;
    nn::BatchNorm2d<float> bn1, bn2;
    nn::ReLU<float> relu1, relu_out;
    bool proj;
    std::unique_ptr<nn::Conv2d<float>> conv_proj;
    std::unique_ptr<nn::BatchNorm2d<float>> bn_proj;

    BasicBlock(int cin, int cout, int stride)
        : conv1(cin, cout, 3, stride, 1),
          conv2(cout, cout, 3, 1, 1),
          bn1(cout),
          bn2(cout),
          proj(stride != 1 || cin != cout) {
        if (proj) {
            conv_proj = std::make_unique<nn::Conv2d<float>>(cin, cout, 1, stride, 0);
            bn_proj = std::make_unique<nn::BatchNorm2d<float>>(cout);
        }
    }

    void init(RngStream& rng) {
        conv1.init(rng);
        conv2.init(rng);
        if (proj) conv_proj->init(rng);
    }

    void forward(const Tensor<float>& x, Tensor<float>& out,
                 const nn::BatchNorm2d<float>::Options& bnopt, bool cache) {
        Tensor<float> a, b, h, c, d, s;
        conv1.forward(x, a, cache);
        bn1.forward(a, b, bnopt, cache);
        relu1.forward(b, h, cache);
        conv2.forward(h, c, cache);
        bn2.forward(c, d, bnopt, cache);
        if (proj) {
            Tensor<float> e;
            conv_proj->forward(x, e, cache);
            bn_proj->forward(e, s, bnopt, cache);
        } else {
            s = x;
        }
        add_inplace(d, s);
        relu_out.forward(d, out, cache);
    }

    void backward(const Tensor<float>& dy, Tensor<float>* dx, bool pg, float bnw) {
        Tensor<float> dsum, dc, dh, db, da, dx_main, dx_sc;
        relu_out.backward(dy, &dsum);
        bn2.backward(dsum, &dc, pg, bnw);
        conv2.backward(dc, &dh, pg);
        relu1.backward(dh, &db);
        bn1.backward(db, &da, pg, bnw);
        conv1.backward(da, dx ? &dx_main : nullptr, pg);
        if (proj) {
            Tensor<float> de;
            bn_proj->backward(dsum, &de, pg, bnw);
            conv_proj->backward(de, dx ? &dx_sc : nullptr, pg);
        } else if (dx) {
            dx_sc = dsum;
        }
        if (dx) {
            *dx = std::move(dx_main);
            add_inplace(*dx, dx_sc);
        }
    }

    void collect_params(std::vector<nn::ParamRef<float>>& out, const std::string& prefix) {
        for (auto& blk :
             {conv1.params(prefix + ".conv1"), conv2.params(prefix + ".conv2"),
              bn1.params(prefix + ".bn1"), bn2.params(prefix + ".bn2")})
            out.insert(out.end(), blk.begin(), blk.end());
        if (proj) {
            for (auto& blk : {conv_proj->params(prefix + ".proj"), bn_proj->params(prefix + ".proj_bn")})
                out.insert(out.end(), blk.begin(), blk.end());
        }
    }

    void collect_buffers(std::vector<nn::BufferRef<float>>& out, const std::string& prefix) {
        for (auto& blk : {bn1.buffers(prefix + ".bn1"), bn2.buffers(prefix + ".bn2")})
            out.insert(out.end(), blk.begin(), blk.end());
        if (proj) {
            auto blk = bn_proj->buffers(prefix + ".proj_bn");
            out.insert(out.end(), blk.begin(), blk.end());
        }
    }

    void collect_bn(std::vector<const nn::BatchNorm2d<float>*>& out) const {
        out.push_back(&bn1);
        out.push_back(&bn2);
        if (proj) out.push_back(bn_proj.get());
    }
};

ResNetSmall::ResNetSmall(int class_count, int in_channels, int input_size, bool deep)
    : classes_(class_count),
      in_ch_(in_channels),
      input_size_(input_size),
      deep_(deep),
      stem_conv_(in_channels, 64, 3, 1, 1),
      stem_bn_(64),
      fc_(512, class_count) {
    if (input_size % 8 != 0) throw DimensionError("ResNetSmall: input size must be divisible by 8");
    const std::vector<int> counts = deep ? std::vector<int>{3, 4, 6, 3} : std::vector<int>{2, 2, 2, 2};
    const int widths[4] = {64, 128, 256, 512};
    int cin = 64;
    for (int stage = 0; stage < 4; ++stage) {
        for (int i = 0; i < counts[stage]; ++i) {
            const int stride = (stage > 0 && i == 0) ? 2 : 1;
            blocks_.push_back(std::make_unique<BasicBlock>(cin, widths[stage], stride));
            stage_of_block_.push_back(stage);
            cin = widths[stage];
        }
    }
}

ResNetSmall::~ResNetSmall() = default;

void ResNetSmall::init_params(RngStream rng) {
    stem_conv_.init(rng);
    for (auto& b : blocks_) b->init(rng);
    fc_.init(rng);
}

ForwardRecord ResNetSmall::forward(const Tensor<float>& images, const FwdOptions& opt) {
    check_input(images, in_ch_, input_size_, "ResNetSmall");
    const auto bnopt = bn_options(opt);
    Tensor<float> a, b, x, pooled, logits;
    stem_conv_.forward(images, a, opt.cache);
    stem_bn_.forward(a, b, bnopt, opt.cache);
    stem_relu_.forward(b, x, opt.cache);

    ForwardRecord rec;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        Tensor<float> y;
        blocks_[i]->forward(x, y, bnopt, opt.cache);
        x = std::move(y);
        const bool last_of_stage =
            (i + 1 == blocks_.size()) || (stage_of_block_[i + 1] != stage_of_block_[i]);
        if (last_of_stage) rec.attention_maps.push_back(x);
    }
    gap_.forward(x, pooled);
    fc_.forward(pooled, logits, opt.cache);
    rec.logits = LogitsBatch<float>(std::move(logits));

    if (opt.capture_bn) {
        rec.bn_captured = true;
        for (const auto* bn : bn_layers())
            rec.bn_batch_stats.push_back({bn->captured_mean(), bn->captured_var()});
    }
    return rec;
}

void ResNetSmall::backward(const Tensor<float>& d_logits, const BackwardOptions& opt) {
    Tensor<float> dpool, d;
    fc_.backward(d_logits, &dpool, opt.param_grads);
    gap_.backward(dpool, &d);
    if (opt.tap_grads_out) opt.tap_grads_out->resize(4);

    for (std::size_t idx = blocks_.size(); idx-- > 0;) {
        const bool last_of_stage =
            (idx + 1 == blocks_.size()) || (stage_of_block_[idx + 1] != stage_of_block_[idx]);
        if (last_of_stage) {
            const int stage = stage_of_block_[idx];
            if (opt.tap_grads_out) (*opt.tap_grads_out)[stage] = d;
            if (opt.tap_grads_in && !(*opt.tap_grads_in)[stage].empty())
                add_inplace(d, (*opt.tap_grads_in)[stage]);
        }
        Tensor<float> dx;
        blocks_[idx]->backward(d, &dx, opt.param_grads, opt.bn_penalty_weight);
        d = std::move(dx);
    }
    Tensor<float> db, da;
    stem_relu_.backward(d, &db);
    stem_bn_.backward(db, &da, opt.param_grads, opt.bn_penalty_weight);
    stem_conv_.backward(da, opt.input_grad, opt.param_grads);
}

std::vector<nn::ParamRef<float>> ResNetSmall::params() {
    std::vector<nn::ParamRef<float>> out;
    for (auto& blk : {stem_conv_.params("stem.conv"), stem_bn_.params("stem.bn")})
        out.insert(out.end(), blk.begin(), blk.end());
    for (std::size_t i = 0; i < blocks_.size(); ++i)
        blocks_[i]->collect_params(out, "block" + std::to_string(i));
    auto fcp = fc_.params("fc");
    out.insert(out.end(), fcp.begin(), fcp.end());
    return out;
}

std::vector<nn::BufferRef<float>> ResNetSmall::buffers() {
    std::vector<nn::BufferRef<float>> out;
    auto stem = stem_bn_.buffers("stem.bn");
    out.insert(out.end(), stem.begin(), stem.end());
    for (std::size_t i = 0; i < blocks_.size(); ++i)
        blocks_[i]->collect_buffers(out, "block" + std::to_string(i));
    return out;
}

std::vector<const nn::BatchNorm2d<float>*> ResNetSmall::bn_layers() const {
    std::vector<const nn::BatchNorm2d<float>*> out{&stem_bn_};
    for (const auto& b : blocks_) b->collect_bn(out);
    return out;
}

std::unique_ptr<Classifier> ResNetSmall::clone() const {
    auto copy = std::make_unique<ResNetSmall>(classes_, in_ch_, input_size_, deep_);
    copy_state(*copy, *this);
    return copy;
}

// ---------------------------------------------------------------- factory

std::unique_ptr<Classifier> make_classifier(const std::string& arch_id, int class_count,
                                            int in_channels, int input_size) {
    if (arch_id == "lenet5") return std::make_unique<LeNet5>(class_count, in_channels, input_size, false);
    if (arch_id == "lenet5-half")
        return std::make_unique<LeNet5>(class_count, in_channels, input_size, true);
    if (arch_id == "resnet18")
        return std::make_unique<ResNetSmall>(class_count, in_channels, input_size, false);
    if (arch_id == "resnet34")
        return std::make_unique<ResNetSmall>(class_count, in_channels, input_size, true);
    throw ConfigError("unknown architecture id: " + arch_id);
}

ClassifierHandle make_teacher_handle(std::unique_ptr<Classifier> net, bool bn_capture) {
    ClassifierHandle h;
    h.net = std::move(net);
    h.trainable = false;
    h.bn_capture_enabled = bn_capture;
    return h;
}

ClassifierHandle make_student_handle(std::unique_ptr<Classifier> net) {
    ClassifierHandle h;
    h.net = std::move(net);
    h.trainable = true;
    return h;
}

BnPenalty bn_statistics_penalty(const ForwardRecord& record, const ClassifierHandle& handle) {
    return bn_statistics_penalty_for(record, *handle.net);
}

BnPenalty bn_statistics_penalty_for(const ForwardRecord& record, const Classifier& net) {
    BnPenalty p;
    auto bns = net.bn_layers();
    if (bns.empty()) {
        p.no_bn_layers = true;
        return p;
    }
    if (!record.bn_captured)
        throw ContractError("bn_statistics_penalty: forward record has no captured statistics");
    if (record.bn_batch_stats.size() != bns.size())
        throw DimensionError("bn_statistics_penalty: record does not match network BN layers");
    double total = 0.0;
    for (std::size_t i = 0; i < bns.size(); ++i) {
        const auto& stats = record.bn_batch_stats[i];
        const auto& rm = bns[i]->running_mean;
        const auto& rv = bns[i]->running_var;
        for (std::size_t c = 0; c < rm.size(); ++c) {
            const double dm = static_cast<double>(stats.mean[c]) - static_cast<double>(rm[c]);
            const double dv = static_cast<double>(stats.var[c]) - static_cast<double>(rv[c]);
            total += dm * dm + dv * dv;
        }
    }
    p.value = total;
    return p;
}

std::uint64_t state_checksum(Classifier& net) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](const float* data, std::size_t n) {
        const unsigned char* bytes = reinterpret_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n * sizeof(float); ++i) {
            h ^= bytes[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (auto& p : net.params()) feed(p.value->data(), p.value->size());
    for (auto& b : net.buffers()) feed(b.value->data(), b.value->size());
    return h;
}

}  // namespace dfkd::models
