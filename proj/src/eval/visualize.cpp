#include "dfkd/eval/visualize.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

namespace dfkd::eval {

namespace {

/// Bilinear resize of an [h,w] map to [H,W].
Tensor<float> resize_bilinear(const Tensor<float>& src, std::size_t H, std::size_t W) {
    const std::size_t h = src.dim(0), w = src.dim(1);
    Tensor<float> out({H, W});
    if (h == 1 && w == 1) {
        out.fill(src[0]);
        return out;
    }
    const float sy = H > 1 ? static_cast<float>(h - 1) / static_cast<float>(H - 1) : 0.0f;
    const float sx = W > 1 ? static_cast<float>(w - 1) / static_cast<float>(W - 1) : 0.0f;
    for (std::size_t y = 0; y < H; ++y) {
        const float fy = y * sy;
        const std::size_t y0 = static_cast<std::size_t>(fy);
        const std::size_t y1 = std::min(y0 + 1, h - 1);
        const float ty = fy - y0;
        for (std::size_t x = 0; x < W; ++x) {
            const float fx = x * sx;
            const std::size_t x0 = static_cast<std::size_t>(fx);
            const std::size_t x1 = std::min(x0 + 1, w - 1);
            const float tx = fx - x0;
            const float a = src(y0, x0) * (1 - tx) + src(y0, x1) * tx;
            const float b = src(y1, x0) * (1 - tx) + src(y1, x1) * tx;
            out(y, x) = a * (1 - ty) + b * ty;
        }
    }
    return out;
}

/// Min-max normalization to [0,1]; a constant map becomes all 0.5.
void minmax_normalize(Tensor<float>& m) {
    float lo = m[0], hi = m[0];
    for (std::size_t i = 0; i < m.size(); ++i) {
        lo = std::min(lo, m[i]);
        hi = std::max(hi, m[i]);
    }
    if (hi - lo < 1e-12f) {
        m.fill(0.5f);
        return;
    }
    const float inv = 1.0f / (hi - lo);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = (m[i] - lo) * inv;
}

void jet_color(float t, float& r, float& g, float& b) {
    auto clamp01 = [](float v) { return std::min(1.0f, std::max(0.0f, v)); };
    r = clamp01(1.5f - std::abs(4.0f * t - 3.0f));
    g = clamp01(1.5f - std::abs(4.0f * t - 2.0f));
    b = clamp01(1.5f - std::abs(4.0f * t - 1.0f));
}

}  // namespace

std::uint8_t pixel_from_unit(float v) {
    const long p = std::llround(127.5 * (static_cast<double>(v) + 1.0));
    return static_cast<std::uint8_t>(std::clamp(p, 0L, 255L));
}

void write_pgm(const std::string& path, const std::vector<std::uint8_t>& gray, std::size_t h,
               std::size_t w) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write image file: " + path);
    out << "P5\n" << w << " " << h << "\n255\n";
    out.write(reinterpret_cast<const char*>(gray.data()), static_cast<std::streamsize>(gray.size()));
    if (!out) throw IoError("short write on image file: " + path);
}

void write_ppm(const std::string& path, const std::vector<std::uint8_t>& rgb, std::size_t h,
               std::size_t w) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write image file: " + path);
    out << "P6\n" << w << " " << h << "\n255\n";
    out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
    if (!out) throw IoError("short write on image file: " + path);
}

void dump_image_grid(models::ConditionalGenerator& gen, int rows, const std::string& path,
                     std::uint64_t seed) {
    const auto& spec = gen.spec();
    const int c = spec.class_count;
    const std::size_t n = static_cast<std::size_t>(rows) * c;
    const std::size_t H = spec.image_shape[1], W = spec.image_shape[2];
    const int ch = spec.image_shape[0];

    models::ConditionedNoiseBatch batch = models::sample_conditioned_noise(
        n, spec.noise_dim, std::vector<double>(c, 1.0 / c), seed);
    // one column per class: image (r, j) carries label j
    for (int r = 0; r < rows; ++r)
        for (int j = 0; j < c; ++j) batch.labels.labels[static_cast<std::size_t>(r) * c + j] = j;

    Tensor<float> images = models::generate(gen, batch);

    const std::size_t grid_h = rows * H, grid_w = static_cast<std::size_t>(c) * W;
    if (ch == 1) {
        std::vector<std::uint8_t> gray(grid_h * grid_w);
        for (int r = 0; r < rows; ++r)
            for (int j = 0; j < c; ++j) {
                const float* img = images.data() + (static_cast<std::size_t>(r) * c + j) * H * W;
                for (std::size_t y = 0; y < H; ++y)
                    for (std::size_t x = 0; x < W; ++x)
                        gray[(r * H + y) * grid_w + j * W + x] = pixel_from_unit(img[y * W + x]);
            }
        write_pgm(path, gray, grid_h, grid_w);
    } else {
        std::vector<std::uint8_t> rgb(grid_h * grid_w * 3);
        for (int r = 0; r < rows; ++r)
            for (int j = 0; j < c; ++j) {
                const float* img =
                    images.data() + (static_cast<std::size_t>(r) * c + j) * ch * H * W;
                for (std::size_t y = 0; y < H; ++y)
                    for (std::size_t x = 0; x < W; ++x) {
                        const std::size_t o = ((r * H + y) * grid_w + j * W + x) * 3;
                        for (int k = 0; k < 3; ++k)
                            rgb[o + k] = pixel_from_unit(img[std::min(k, ch - 1) * H * W + y * W + x]);
                    }
            }
        write_ppm(path, rgb, grid_h, grid_w);
    }
}

namespace {

HeatmapBundle heatmaps_for(models::Classifier& net, const Tensor<float>& image,
                           const std::string& network_id) {
    const std::size_t ch = image.dim(1), H = image.dim(2), W = image.dim(3);
    models::FwdOptions fopt;
    fopt.cache = true;  // backward needed for gradient weights
    models::ForwardRecord rec = net.forward(image, fopt);

    const auto& logits = rec.logits.values();
    const std::size_t c = logits.dim(1);
    std::size_t cls = 0;
    for (std::size_t j = 1; j < c; ++j)
        if (logits(0, j) > logits(0, cls)) cls = j;

    Tensor<float> d_logits({1, c});
    d_logits(0, cls) = 1.0f;
    std::vector<Tensor<float>> tap_grads;
    models::BackwardOptions bopt;
    bopt.param_grads = false;
    bopt.tap_grads_out = &tap_grads;
    net.backward(d_logits, bopt);

    HeatmapBundle bundle;
    bundle.network_id = network_id;
    bundle.source.resize({ch, H, W});
    std::copy(image.data(), image.data() + ch * H * W, bundle.source.data());

    for (std::size_t t = 0; t < rec.attention_maps.size(); ++t) {
        const Tensor<float>& act = rec.attention_maps[t];  // [1,C,h,w]
        const Tensor<float>& grad = tap_grads[t];
        const std::size_t C = act.dim(1), h = act.dim(2), w = act.dim(3);
        Tensor<float> cam({h, w});
        for (std::size_t k = 0; k < C; ++k) {
            float alpha = 0.0f;  // spatially averaged gradient = channel weight
            for (std::size_t j = 0; j < h * w; ++j) alpha += grad.data()[k * h * w + j];
            alpha /= static_cast<float>(h * w);
            for (std::size_t j = 0; j < h * w; ++j)
                cam[j] += alpha * act.data()[k * h * w + j];
        }
        for (std::size_t j = 0; j < cam.size(); ++j) cam[j] = std::max(cam[j], 0.0f);
        Tensor<float> up = resize_bilinear(cam, H, W);
        minmax_normalize(up);
        bundle.heatmaps.push_back(std::move(up));
    }
    return bundle;
}

void write_overlay(const HeatmapBundle& bundle, const Tensor<float>& heat,
                   const data::Normalization& norm, const std::string& path) {
    const std::size_t ch = bundle.source.dim(0), H = bundle.source.dim(1),
                      W = bundle.source.dim(2);
    std::vector<std::uint8_t> rgb(H * W * 3);
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            float r, g, b;
            jet_color(heat(y, x), r, g, b);
            float src[3];
            for (int k = 0; k < 3; ++k) {
                const std::size_t c = std::min<std::size_t>(k, ch - 1);
                const float raw = bundle.source(c, y, x) * static_cast<float>(norm.std[c]) +
                                  static_cast<float>(norm.mean[c]);
                src[k] = std::clamp(raw, 0.0f, 1.0f);
            }
            const float mix[3] = {0.5f * src[0] + 0.5f * r, 0.5f * src[1] + 0.5f * g,
                                  0.5f * src[2] + 0.5f * b};
            for (int k = 0; k < 3; ++k)
                rgb[(y * W + x) * 3 + k] =
                    static_cast<std::uint8_t>(std::clamp(std::lround(mix[k] * 255.0f), 0L, 255L));
        }
    write_ppm(path, rgb, H, W);
}

}  // namespace

std::vector<HeatmapBundle> export_attention_heatmaps(models::Classifier& teacher,
                                                     models::Classifier& student,
                                                     const Tensor<float>& images,
                                                     const data::Normalization& norm,
                                                     const std::string& out_dir) {
    if (teacher.tap_count() == 0 || student.tap_count() == 0)
        throw ConfigError("export_attention_heatmaps: networks must define tap points");
    std::filesystem::create_directories(out_dir);
    const std::size_t n = images.dim(0), ch = images.dim(1), H = images.dim(2),
                      W = images.dim(3);

    std::vector<HeatmapBundle> bundles;
    Tensor<float> one({1, ch, H, W});
    for (std::size_t i = 0; i < n; ++i) {
        std::copy(images.data() + i * ch * H * W, images.data() + (i + 1) * ch * H * W,
                  one.data());
        for (auto* net : {&teacher, &student}) {
            const std::string role = net == &teacher ? "teacher" : "student";
            HeatmapBundle bundle = heatmaps_for(*net, one, role);
            for (std::size_t t = 0; t < bundle.heatmaps.size(); ++t) {
                const std::string path = out_dir + "/img" + std::to_string(i) + "_tap" +
                                         std::to_string(t) + "_" + role + ".ppm";
                write_overlay(bundle, bundle.heatmaps[t], norm, path);
            }
            bundles.push_back(std::move(bundle));
        }
    }
    return bundles;
}

}  // namespace dfkd::eval
