#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "dfkd/common/rng.hpp"
#include "dfkd/common/tensor.hpp"
#include "dfkd/losses/types.hpp"
#include "dfkd/nn/layers.hpp"

namespace dfkd::models {

/// Noise rows paired with preset class labels; the generator's input.
struct ConditionedNoiseBatch {
    Tensor<float> noise;  // [n, m], standard normal
    PresetLabelBatch labels;

    std::size_t n() const { return noise.dim(0); }
    std::size_t m() const { return noise.dim(1); }
};

/// Draws n noise rows and n labels from label_distribution.
/// Deterministic in seed; noise and label draws use independent sub-streams.
ConditionedNoiseBatch sample_conditioned_noise(std::size_t n, std::size_t m,
                                               const std::vector<double>& label_distribution,
                                               std::uint64_t seed);

enum class Conditioning { Multiply, Concatenate };

std::string to_string(Conditioning c);
Conditioning conditioning_from_string(const std::string& s);

/// Trunk: linear projection of the conditioned vector, reshape to a small
/// spatial grid, two upsample+conv+BN+activation blocks, output conv + tanh.
struct GeneratorSpec {
    int noise_dim = 100;
    int class_count = 10;
    int embedding_dim = 100;
    std::array<int, 3> image_shape{1, 32, 32};  // channels, H, W
    Conditioning mode = Conditioning::Multiply;
    int base_grid = 8;
    std::vector<int> widths{64, 32};
    std::vector<int> upsample{2, 2};

    void validate() const;
};

struct GenFwdOptions {
    bool bn_batch_stats = true;
    bool bn_update_running = true;
    bool cache = false;
};

class ConditionalGenerator {
public:
    explicit ConditionalGenerator(GeneratorSpec spec);

    const GeneratorSpec& spec() const { return spec_; }

    void init_params(RngStream rng);

    /// Images in [-1, 1], shape [n, channels, H, W]. Pure in (params, batch).
    Tensor<float> forward(const ConditionedNoiseBatch& batch, const GenFwdOptions& opt);

    /// Backward from d(objective)/d(images); accumulates parameter grads.
    void backward(const Tensor<float>& d_images);

    std::vector<nn::ParamRef<float>> params();
    std::vector<nn::BufferRef<float>> buffers();
    void zero_grad();

    std::unique_ptr<ConditionalGenerator> clone() const;

private:
    GeneratorSpec spec_;
    int cond_dim_;  // fc input width (m for multiply, 2m for concatenate)

    nn::Embedding<float> embed_;
    nn::Linear<float> fc_;
    nn::BatchNorm2d<float> bn0_;
    nn::UpsampleNearest<float> up1_, up2_;
    nn::Conv2d<float> conv1_, conv2_, conv3_;
    nn::BatchNorm2d<float> bn1_, bn2_;
    nn::LeakyReLU<float> act1_, act2_;
    nn::Tanh<float> tanh_;

    // conditioning caches for backward
    Tensor<float> noise_cache_, emb_cache_;
    std::vector<int> label_cache_;
    bool cached_ = false;
};

/// Convenience wrapper implementing the generate operation: builds a forward
/// with the given options (training-mode batch statistics by default).
Tensor<float> generate(ConditionalGenerator& gen, const ConditionedNoiseBatch& batch,
                       bool train_mode_bn = true);

std::uint64_t state_checksum(ConditionalGenerator& gen);

}  // namespace dfkd::models
