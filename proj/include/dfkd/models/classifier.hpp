#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "dfkd/common/rng.hpp"
#include "dfkd/common/tensor.hpp"
#include "dfkd/losses/types.hpp"
#include "dfkd/nn/layers.hpp"

namespace dfkd::models {

/// Forward-pass behavior switches. Teacher inference uses the defaults
/// (running statistics, nothing mutated); training forwards opt in to batch
/// statistics, running-stat updates, and caching for backward.
struct FwdOptions {
    bool bn_batch_stats = false;
    bool bn_update_running = false;
    bool capture_bn = false;
    bool cache = false;
};

struct BnLayerStats {
    Tensor<float> mean;
    Tensor<float> var;
};

/// Everything a classifier forward produces: logits, the activation block at
/// each attention tap point, and (when capture was requested) per-BN-layer
/// batch statistics.
struct ForwardRecord {
    LogitsBatch<float> logits;
    std::vector<Tensor<float>> attention_maps;  // per tap: [n,C,H,W]
    std::vector<BnLayerStats> bn_batch_stats;
    bool bn_captured = false;
};

struct BackwardOptions {
    bool param_grads = true;
    Tensor<float>* input_grad = nullptr;
    /// Gradients w.r.t. each tap activation, added where they branched off.
    const std::vector<Tensor<float>>* tap_grads_in = nullptr;
    /// Collects d(objective)/d(tap activation) flowing down from the logits
    /// (before tap_grads_in injection); used for activation heatmaps.
    std::vector<Tensor<float>>* tap_grads_out = nullptr;
    /// Weight of the BN statistics regularizer gradient (teacher-side path).
    float bn_penalty_weight = 0.0f;
};

/// A classifier with attention tap points and hand-written backward.
/// Instances are single-writer; concurrent read-only use requires clone().
class Classifier {
public:
    virtual ~Classifier() = default;
    virtual std::string arch_id() const = 0;
    virtual int class_count() const = 0;
    virtual int in_channels() const = 0;
    virtual int input_size() const = 0;
    virtual std::vector<int> tap_points() const = 0;

    virtual ForwardRecord forward(const Tensor<float>& images, const FwdOptions& opt) = 0;
    virtual void backward(const Tensor<float>& d_logits, const BackwardOptions& opt) = 0;

    virtual std::vector<nn::ParamRef<float>> params() = 0;
    virtual std::vector<nn::BufferRef<float>> buffers() = 0;
    virtual std::vector<const nn::BatchNorm2d<float>*> bn_layers() const = 0;
    virtual void init_params(RngStream rng) = 0;
    virtual std::unique_ptr<Classifier> clone() const = 0;

    std::size_t tap_count() const { return tap_points().size(); }
    void zero_grad() {
        for (auto& p : params()) p.grad->set_zero();
    }
};

std::unique_ptr<Classifier> make_classifier(const std::string& arch_id, int class_count,
                                            int in_channels, int input_size);

/// Ties a network to its role: teachers are frozen (never updated), and may
/// capture BN batch statistics for the statistics regularizer.
struct ClassifierHandle {
    std::unique_ptr<Classifier> net;
    bool trainable = true;
    bool bn_capture_enabled = false;

    /// Inference forward: running statistics, no caching, no mutation.
    ForwardRecord classify(const Tensor<float>& images) const {
        FwdOptions opt;
        opt.capture_bn = bn_capture_enabled;
        return net->forward(images, opt);
    }
};

ClassifierHandle make_teacher_handle(std::unique_ptr<Classifier> net, bool bn_capture = false);
ClassifierHandle make_student_handle(std::unique_ptr<Classifier> net);

struct BnPenalty {
    double value = 0.0;
    bool no_bn_layers = false;  // warning flag: network has no BN layers
};

/// Sum over BN layers of ||mu_batch - mu_running||^2 + ||var_batch - var_running||^2.
BnPenalty bn_statistics_penalty(const ForwardRecord& record, const ClassifierHandle& handle);
BnPenalty bn_statistics_penalty_for(const ForwardRecord& record, const Classifier& net);

/// FNV-1a over the raw bytes of all parameters and buffers; used by the
/// isolation and teacher-immutability checks.
std::uint64_t state_checksum(Classifier& net);

// -------------------------------------------------------------------------
// Concrete architectures
// -------------------------------------------------------------------------

/// LeNet-5 with batch-normalized conv stages; `half` shrinks every width.
/// Taps: post-activation output of each conv stage (28x28 and 10x10 on
/// 32x32 inputs), one per resolution stage.
class LeNet5 : public Classifier {
public:
    LeNet5(int class_count, int in_channels, int input_size, bool half);

    std::string arch_id() const override { return half_ ? "lenet5-half" : "lenet5"; }
    int class_count() const override { return classes_; }
    int in_channels() const override { return in_ch_; }
    int input_size() const override { return input_size_; }
    std::vector<int> tap_points() const override { return {0, 1}; }

    ForwardRecord forward(const Tensor<float>& images, const FwdOptions& opt) override;
    void backward(const Tensor<float>& d_logits, const BackwardOptions& opt) override;
    std::vector<nn::ParamRef<float>> params() override;
    std::vector<nn::BufferRef<float>> buffers() override;
    std::vector<const nn::BatchNorm2d<float>*> bn_layers() const override;
    void init_params(RngStream rng) override;
    std::unique_ptr<Classifier> clone() const override;

private:
    int classes_, in_ch_, input_size_;
    bool half_;
    int c1_, c2_, f1_, f2_;  // stage widths
    int flat_;

    nn::Conv2d<float> conv1_, conv2_;
    nn::BatchNorm2d<float> bn1_, bn2_;
    nn::ReLU<float> relu1_, relu2_, relu3_, relu4_;
    nn::MaxPool2d<float> pool1_, pool2_;
    nn::Linear<float> fc1_, fc2_, fc3_;

    // forward intermediates kept for backward shape bookkeeping
    std::vector<std::size_t> t1_shape_;
};

/// CIFAR-style ResNet (3x3 stem, 4 stages, global average pool). Taps: the
/// output of each stage.
class ResNetSmall : public Classifier {
public:
    ResNetSmall(int class_count, int in_channels, int input_size, bool deep /*34 vs 18*/);
    ~ResNetSmall() override;

    std::string arch_id() const override { return deep_ ? "resnet34" : "resnet18"; }
    int class_count() const override { return classes_; }
    int in_channels() const override { return in_ch_; }
    int input_size() const override { return input_size_; }
    std::vector<int> tap_points() const override { return {0, 1, 2, 3}; }

    ForwardRecord forward(const Tensor<float>& images, const FwdOptions& opt) override;
    void backward(const Tensor<float>& d_logits, const BackwardOptions& opt) override;
    std::vector<nn::ParamRef<float>> params() override;
    std::vector<nn::BufferRef<float>> buffers() override;
    std::vector<const nn::BatchNorm2d<float>*> bn_layers() const override;
    void init_params(RngStream rng) override;
    std::unique_ptr<Classifier> clone() const override;

private:
    struct BasicBlock;

    int classes_, in_ch_, input_size_;
    bool deep_;

    nn::Conv2d<float> stem_conv_;
    nn::BatchNorm2d<float> stem_bn_;
    nn::ReLU<float> stem_relu_;
    std::vector<std::unique_ptr<BasicBlock>> blocks_;
    std::vector<int> stage_of_block_;  // stage index per block
    nn::GlobalAvgPool<float> gap_;
    nn::Linear<float> fc_;
};

}  // namespace dfkd::models
