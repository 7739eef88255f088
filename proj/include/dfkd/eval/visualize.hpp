#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dfkd/data/dataset.hpp"
#include "dfkd/models/classifier.hpp"
#include "dfkd/models/generator.hpp"

namespace dfkd::eval {

/// Maps a value in [-1,1] to a byte, rounding half away from zero (0 -> 128).
std::uint8_t pixel_from_unit(float v);

void write_pgm(const std::string& path, const std::vector<std::uint8_t>& gray, std::size_t h,
               std::size_t w);
void write_ppm(const std::string& path, const std::vector<std::uint8_t>& rgb, std::size_t h,
               std::size_t w);

/// Renders a rows x class_count grid of generated images (one column per
/// class) into a lossless raster file (PGM for 1-channel, PPM otherwise).
/// Deterministic in (generator parameters, seed).
void dump_image_grid(models::ConditionalGenerator& gen, int rows, const std::string& path,
                     std::uint64_t seed);

/// Per-layer gradient-weighted class-activation heatmaps for one image.
struct HeatmapBundle {
    Tensor<float> source;                // [ch,H,W], normalized domain
    std::vector<Tensor<float>> heatmaps; // per tap: [H,W] in [0,1]
    std::string network_id;
};

/// Computes heatmaps for every image on both networks, overlays them on the
/// source, and writes one PPM per (image, tap, network). Returns the bundles
/// (teacher bundles first, then student).
std::vector<HeatmapBundle> export_attention_heatmaps(models::Classifier& teacher,
                                                     models::Classifier& student,
                                                     const Tensor<float>& images,
                                                     const data::Normalization& norm,
                                                     const std::string& out_dir);

}  // namespace dfkd::eval
