#pragma once

#include <memory>
#include <string>

#include "dfkd/models/classifier.hpp"
#include "dfkd/models/generator.hpp"

namespace dfkd::models {

/// Self-describing checkpoint container:
///   magic "DFKDCKPT" | u32 format version | u64 header length | JSON header |
///   concatenated little-endian f32 tensor payload.
/// The header records kind, architecture, class count, and a tensor manifest
/// (name, shape, offset). Serialization is canonical, so load + save
/// round-trips are byte-identical.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_classifier(const std::string& path, Classifier& net);
std::unique_ptr<Classifier> load_classifier(const std::string& path);

void save_generator(const std::string& path, ConditionalGenerator& gen);
std::unique_ptr<ConditionalGenerator> load_generator(const std::string& path);

/// Peeks at the header and returns the "kind" field ("classifier"/"generator").
std::string checkpoint_kind(const std::string& path);

}  // namespace dfkd::models
