#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "ddlp/core.hpp"

namespace ddlp {

// ---------------------------------------------------------------------------
// Counter-based randomness. Every consumer of randomness derives its own
// splitmix64 state from (seed, coordinates), so CPU and CSD paths produce
// bit-identical results regardless of execution order or process boundaries.
// ---------------------------------------------------------------------------

std::uint64_t splitmix64_next(std::uint64_t& state);
std::uint64_t mix_key(std::uint64_t a, std::uint64_t b, std::uint64_t c);

/// Next draw in [0, 1) with 24 bits of mantissa (float-exact).
float next_unit_float(std::uint64_t& state);
/// Next draw in [lo, hi).
float next_uniform(std::uint64_t& state, float lo, float hi);
/// Next integer draw in [0, n), n > 0.
std::uint64_t next_below(std::uint64_t& state, std::uint64_t n);

// ---------------------------------------------------------------------------
// Images: float32 in HWC layout, values start in [0, 1] (pre-normalization).
// ---------------------------------------------------------------------------

struct Image {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t channels = 3;
  std::vector<float> data;  // HWC row-major

  static Image make(std::uint32_t h, std::uint32_t w, std::uint32_t c);
  float& at(std::uint32_t y, std::uint32_t x, std::uint32_t c);
  float at(std::uint32_t y, std::uint32_t x, std::uint32_t c) const;
};

/// Deterministic source sample: pixels are splitmix64(seed, index, position)
/// mapped to [0, 1). Same (seed, index, shape) in any process -> same bytes.
Image gen_sample(std::uint64_t seed, std::uint64_t index, std::uint32_t height,
                 std::uint32_t width, std::uint32_t channels);

// ---------------------------------------------------------------------------
// Transform steps.
// ---------------------------------------------------------------------------

struct TransformStep {
  enum class Kind {
    RandomResizedCrop,   // size, area in [0.08,1], aspect in [3/4,4/3]
    RandomHorizontalFlip,// p = 0.5
    Resize,              // short side -> size, bilinear, half-pixel centers
    CentralCrop,         // size; undersized inputs upscaled to size first
    RandomCropPadded,    // size after zero-padding `pad` on every side
    ToTensor,            // layout marker; serialization emits channel-first
    Normalize,           // (v - mean[c]) / std[c]
    Cutout,              // zero a `length`-sided square at a random center
  };
  Kind kind = Kind::ToTensor;
  std::uint32_t size = 0;
  std::uint32_t pad = 0;
  std::array<float, 3> mean{};
  std::array<float, 3> stddev{};

  static TransformStep random_resized_crop(std::uint32_t size);
  static TransformStep random_horizontal_flip();
  static TransformStep resize(std::uint32_t size);
  static TransformStep central_crop(std::uint32_t size);
  static TransformStep random_crop_padded(std::uint32_t size, std::uint32_t pad);
  static TransformStep to_tensor();
  static TransformStep normalize(std::array<float, 3> mean, std::array<float, 3> stddev);
  static TransformStep cutout(std::uint32_t length);
};

/// Bilinear resize with half-pixel centers and edge clamping.
Image resize_bilinear(const Image& src, std::uint32_t out_h, std::uint32_t out_w);
Image flip_horizontal(const Image& src);

/// Applies one step; random steps draw from `rng` (advanced in place).
/// Throws std::invalid_argument on dimension errors (e.g. padded crop larger
/// than the padded image).
Image apply_transform(const TransformStep& step, Image img, std::uint64_t& rng);

// ---------------------------------------------------------------------------
// Named pipelines.
// ---------------------------------------------------------------------------

enum class PipelineId { ImageNet1, ImageNet2, ImageNet3, Cifar };

const char* to_string(PipelineId id);
PipelineId parse_pipeline_id(const std::string& s);
std::vector<TransformStep> pipeline_steps(PipelineId id);
/// Output spatial size of the pipeline (224 for the imagenet ones, 32 for cifar).
std::uint32_t pipeline_output_size(PipelineId id);

// ---------------------------------------------------------------------------
// Batch payloads: what gets staged on disk and fed to the consumer.
// ---------------------------------------------------------------------------

inline constexpr std::uint16_t kPayloadVersion = 1;

struct BatchPayload {
  std::uint64_t batch_id = 0;
  std::array<std::uint32_t, 4> dims{};  // batch, channels, height, width
  std::uint64_t checksum = 0;           // FNV-1a 64 over the LE float bytes
  std::vector<float> data;              // NCHW

  std::uint64_t compute_checksum() const;
  void write(std::ostream& out) const;
  static BatchPayload read(std::istream& in);  // validates magic/version/checksum
};

std::uint64_t fnv1a64(const void* bytes, std::size_t len);

/// Runs every sample of `batch_id` through the pipeline. Per-sample rng state
/// is mix_key(rng_seed, batch_id, sample_index); all samples must come out with
/// identical dims. Sets dims/checksum.
BatchPayload run_pipeline(PipelineId id, const std::vector<Image>& samples,
                          std::uint64_t rng_seed, std::uint64_t batch_id);

/// Generates the source images for one batch of `spec`.
std::vector<Image> gen_batch(const DatasetSpec& spec, std::uint64_t batch_id);

}  // namespace ddlp
