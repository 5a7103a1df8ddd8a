#include "ddlp/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace ddlp {

std::uint64_t splitmix64_next(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::uint64_t mix_key(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::uint64_t state = a;
  std::uint64_t x = splitmix64_next(state);
  state = x ^ b;
  x = splitmix64_next(state);
  state = x ^ c;
  return splitmix64_next(state);
}

float next_unit_float(std::uint64_t& state) {
  return static_cast<float>(splitmix64_next(state) >> 40) * (1.0f / 16777216.0f);
}

float next_uniform(std::uint64_t& state, float lo, float hi) {
  return lo + (hi - lo) * next_unit_float(state);
}

std::uint64_t next_below(std::uint64_t& state, std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("next_below: empty range");
  return splitmix64_next(state) % n;
}

Image Image::make(std::uint32_t h, std::uint32_t w, std::uint32_t c) {
  Image img;
  img.height = h;
  img.width = w;
  img.channels = c;
  img.data.assign(static_cast<std::size_t>(h) * w * c, 0.0f);
  return img;
}

float& Image::at(std::uint32_t y, std::uint32_t x, std::uint32_t c) {
  return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
}

float Image::at(std::uint32_t y, std::uint32_t x, std::uint32_t c) const {
  return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
}

Image gen_sample(std::uint64_t seed, std::uint64_t index, std::uint32_t height,
                 std::uint32_t width, std::uint32_t channels) {
  Image img = Image::make(height, width, channels);
  const std::size_t n = img.data.size();
  for (std::size_t p = 0; p < n; ++p) {
    std::uint64_t state = mix_key(seed, index, p);
    img.data[p] = next_unit_float(state);
  }
  return img;
}

TransformStep TransformStep::random_resized_crop(std::uint32_t size) {
  TransformStep s;
  s.kind = Kind::RandomResizedCrop;
  s.size = size;
  return s;
}
TransformStep TransformStep::random_horizontal_flip() {
  TransformStep s;
  s.kind = Kind::RandomHorizontalFlip;
  return s;
}
TransformStep TransformStep::resize(std::uint32_t size) {
  TransformStep s;
  s.kind = Kind::Resize;
  s.size = size;
  return s;
}
TransformStep TransformStep::central_crop(std::uint32_t size) {
  TransformStep s;
  s.kind = Kind::CentralCrop;
  s.size = size;
  return s;
}
TransformStep TransformStep::random_crop_padded(std::uint32_t size, std::uint32_t pad) {
  TransformStep s;
  s.kind = Kind::RandomCropPadded;
  s.size = size;
  s.pad = pad;
  return s;
}
TransformStep TransformStep::to_tensor() { return TransformStep{}; }
TransformStep TransformStep::normalize(std::array<float, 3> mean, std::array<float, 3> stddev) {
  TransformStep s;
  s.kind = Kind::Normalize;
  s.mean = mean;
  s.stddev = stddev;
  return s;
}
TransformStep TransformStep::cutout(std::uint32_t length) {
  TransformStep s;
  s.kind = Kind::Cutout;
  s.size = length;
  return s;
}

Image resize_bilinear(const Image& src, std::uint32_t out_h, std::uint32_t out_w) {
  if (out_h == 0 || out_w == 0) throw std::invalid_argument("resize to empty image");
  if (src.height == 0 || src.width == 0) throw std::invalid_argument("resize of empty image");
  Image dst = Image::make(out_h, out_w, src.channels);
  const double sy = static_cast<double>(src.height) / out_h;
  const double sx = static_cast<double>(src.width) / out_w;
  for (std::uint32_t y = 0; y < out_h; ++y) {
    // half-pixel centers, clamped to the source edge
    double fy = (y + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(src.height - 1));
    const auto y0 = static_cast<std::uint32_t>(fy);
    const std::uint32_t y1 = std::min(y0 + 1, src.height - 1);
    const float wy = static_cast<float>(fy - y0);
    for (std::uint32_t x = 0; x < out_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(src.width - 1));
      const auto x0 = static_cast<std::uint32_t>(fx);
      const std::uint32_t x1 = std::min(x0 + 1, src.width - 1);
      const float wx = static_cast<float>(fx - x0);
      for (std::uint32_t c = 0; c < src.channels; ++c) {
        const float top = src.at(y0, x0, c) * (1.0f - wx) + src.at(y0, x1, c) * wx;
        const float bot = src.at(y1, x0, c) * (1.0f - wx) + src.at(y1, x1, c) * wx;
        dst.at(y, x, c) = top * (1.0f - wy) + bot * wy;
      }
    }
  }
  return dst;
}

Image flip_horizontal(const Image& src) {
  Image dst = Image::make(src.height, src.width, src.channels);
  for (std::uint32_t y = 0; y < src.height; ++y)
    for (std::uint32_t x = 0; x < src.width; ++x)
      for (std::uint32_t c = 0; c < src.channels; ++c)
        dst.at(y, x, c) = src.at(y, src.width - 1 - x, c);
  return dst;
}

namespace {

Image crop(const Image& src, std::uint32_t top, std::uint32_t left, std::uint32_t h,
           std::uint32_t w) {
  if (top + h > src.height || left + w > src.width)
    throw std::invalid_argument("crop outside image bounds");
  Image dst = Image::make(h, w, src.channels);
  for (std::uint32_t y = 0; y < h; ++y)
    for (std::uint32_t x = 0; x < w; ++x)
      for (std::uint32_t c = 0; c < src.channels; ++c)
        dst.at(y, x, c) = src.at(top + y, left + x, c);
  return dst;
}

/// Short side -> target, aspect preserved (round-half-up on the long side).
Image resize_short_side(const Image& src, std::uint32_t target) {
  std::uint32_t nh, nw;
  if (src.height <= src.width) {
    nh = target;
    nw = static_cast<std::uint32_t>(
        std::llround(static_cast<double>(src.width) * target / src.height));
  } else {
    nw = target;
    nh = static_cast<std::uint32_t>(
        std::llround(static_cast<double>(src.height) * target / src.width));
  }
  return resize_bilinear(src, std::max(nh, 1u), std::max(nw, 1u));
}

Image random_resized_crop(Image img, std::uint32_t size, std::uint64_t& rng) {
  const double area = static_cast<double>(img.height) * img.width;
  const double log_lo = std::log(3.0 / 4.0), log_hi = std::log(4.0 / 3.0);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target_area = area * next_uniform(rng, 0.08f, 1.0f);
    const double aspect = std::exp(next_uniform(rng, static_cast<float>(log_lo),
                                                static_cast<float>(log_hi)));
    const auto w = static_cast<std::int64_t>(std::llround(std::sqrt(target_area * aspect)));
    const auto h = static_cast<std::int64_t>(std::llround(std::sqrt(target_area / aspect)));
    if (w < 1 || h < 1 || w > img.width || h > img.height) continue;
    const auto top = static_cast<std::uint32_t>(next_below(rng, img.height - h + 1));
    const auto left = static_cast<std::uint32_t>(next_below(rng, img.width - w + 1));
    return resize_bilinear(crop(img, top, left, static_cast<std::uint32_t>(h),
                                static_cast<std::uint32_t>(w)),
                           size, size);
  }
  // fallback: central square crop of the short side
  const std::uint32_t side = std::min(img.height, img.width);
  const std::uint32_t top = (img.height - side) / 2;
  const std::uint32_t left = (img.width - side) / 2;
  return resize_bilinear(crop(img, top, left, side, side), size, size);
}

Image central_crop(Image img, std::uint32_t size) {
  if (img.height < size || img.width < size) img = resize_short_side(img, size);
  const std::uint32_t top = (img.height - size) / 2;
  const std::uint32_t left = (img.width - size) / 2;
  return crop(img, top, left, size, size);
}

Image random_crop_padded(Image img, std::uint32_t size, std::uint32_t pad, std::uint64_t& rng) {
  Image padded = Image::make(img.height + 2 * pad, img.width + 2 * pad, img.channels);
  for (std::uint32_t y = 0; y < img.height; ++y)
    for (std::uint32_t x = 0; x < img.width; ++x)
      for (std::uint32_t c = 0; c < img.channels; ++c)
        padded.at(y + pad, x + pad, c) = img.at(y, x, c);
  if (padded.height < size || padded.width < size)
    throw std::invalid_argument("random crop larger than padded image");
  const auto top = static_cast<std::uint32_t>(next_below(rng, padded.height - size + 1));
  const auto left = static_cast<std::uint32_t>(next_below(rng, padded.width - size + 1));
  return crop(padded, top, left, size, size);
}

Image cutout(Image img, std::uint32_t length, std::uint64_t& rng) {
  const auto cy = static_cast<std::int64_t>(next_below(rng, img.height));
  const auto cx = static_cast<std::int64_t>(next_below(rng, img.width));
  const std::int64_t half = length / 2;
  const auto y0 = static_cast<std::uint32_t>(std::clamp<std::int64_t>(cy - half, 0, img.height));
  const auto y1 = static_cast<std::uint32_t>(std::clamp<std::int64_t>(cy + half, 0, img.height));
  const auto x0 = static_cast<std::uint32_t>(std::clamp<std::int64_t>(cx - half, 0, img.width));
  const auto x1 = static_cast<std::uint32_t>(std::clamp<std::int64_t>(cx + half, 0, img.width));
  for (std::uint32_t y = y0; y < y1; ++y)
    for (std::uint32_t x = x0; x < x1; ++x)
      for (std::uint32_t c = 0; c < img.channels; ++c) img.at(y, x, c) = 0.0f;
  return img;
}

}  // namespace

Image apply_transform(const TransformStep& step, Image img, std::uint64_t& rng) {
  switch (step.kind) {
    case TransformStep::Kind::RandomResizedCrop:
      return random_resized_crop(std::move(img), step.size, rng);
    case TransformStep::Kind::RandomHorizontalFlip:
      return next_unit_float(rng) < 0.5f ? flip_horizontal(img) : img;
    case TransformStep::Kind::Resize:
      return resize_short_side(img, step.size);
    case TransformStep::Kind::CentralCrop:
      return central_crop(std::move(img), step.size);
    case TransformStep::Kind::RandomCropPadded:
      return random_crop_padded(std::move(img), step.size, step.pad, rng);
    case TransformStep::Kind::ToTensor:
      return img;  // layout conversion happens at payload packing
    case TransformStep::Kind::Normalize:
      for (std::uint32_t c = 0; c < img.channels; ++c) {
        if (step.stddev[c] == 0.0f) throw std::invalid_argument("normalize: zero stddev");
        const float m = step.mean[c], inv = 1.0f / step.stddev[c];
        for (std::size_t p = c; p < img.data.size(); p += img.channels)
          img.data[p] = (img.data[p] - m) * inv;
      }
      return img;
    case TransformStep::Kind::Cutout:
      return cutout(std::move(img), step.size, rng);
  }
  throw std::logic_error("bad TransformStep kind");
}

namespace {
constexpr std::array<float, 3> kNormMean{0.485f, 0.456f, 0.406f};
constexpr std::array<float, 3> kNormStd{0.229f, 0.224f, 0.225f};
}  // namespace

const char* to_string(PipelineId id) {
  switch (id) {
    case PipelineId::ImageNet1: return "imagenet1";
    case PipelineId::ImageNet2: return "imagenet2";
    case PipelineId::ImageNet3: return "imagenet3";
    case PipelineId::Cifar: return "cifar";
  }
  throw std::logic_error("bad PipelineId");
}

PipelineId parse_pipeline_id(const std::string& s) {
  if (s == "imagenet1") return PipelineId::ImageNet1;
  if (s == "imagenet2") return PipelineId::ImageNet2;
  if (s == "imagenet3") return PipelineId::ImageNet3;
  if (s == "cifar") return PipelineId::Cifar;
  throw std::invalid_argument("unknown pipeline: " + s);
}

std::vector<TransformStep> pipeline_steps(PipelineId id) {
  using TS = TransformStep;
  switch (id) {
    case PipelineId::ImageNet1:
      return {TS::random_resized_crop(224), TS::random_horizontal_flip(), TS::to_tensor(),
              TS::normalize(kNormMean, kNormStd)};
    case PipelineId::ImageNet2:
      return {TS::resize(256), TS::central_crop(224), TS::to_tensor(),
              TS::normalize(kNormMean, kNormStd)};
    case PipelineId::ImageNet3:
      return {TS::resize(232), TS::central_crop(224), TS::to_tensor(),
              TS::normalize(kNormMean, kNormStd)};
    case PipelineId::Cifar:
      return {TS::random_crop_padded(32, 4), TS::random_horizontal_flip(), TS::to_tensor(),
              TS::normalize(kNormMean, kNormStd), TS::cutout(16)};
  }
  throw std::logic_error("bad PipelineId");
}

std::uint32_t pipeline_output_size(PipelineId id) {
  return id == PipelineId::Cifar ? 32u : 224u;
}

std::uint64_t fnv1a64(const void* bytes, std::size_t len) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  std::uint64_t h = 14695981039346656037ull;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t BatchPayload::compute_checksum() const {
  return fnv1a64(data.data(), data.size() * sizeof(float));
}

namespace {

constexpr char kMagic[4] = {'D', 'D', 'L', 'P'};

void put_u16(std::ostream& out, std::uint16_t v) {
  const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
  out.write(b, 2);
}
void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 4);
}
void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}
std::uint16_t get_u16(std::istream& in) {
  unsigned char b[2];
  in.read(reinterpret_cast<char*>(b), 2);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}
std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}
std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

}  // namespace

void BatchPayload::write(std::ostream& out) const {
  out.write(kMagic, 4);
  put_u16(out, kPayloadVersion);
  put_u64(out, batch_id);
  for (const auto d : dims) put_u32(out, d);
  put_u64(out, checksum);
  // float bytes are IEEE-754 little-endian on every supported target
  static_assert(sizeof(float) == 4);
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (!out) throw std::runtime_error("payload write failed");
}

BatchPayload BatchPayload::read(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("payload: bad magic");
  const std::uint16_t version = get_u16(in);
  if (version != kPayloadVersion)
    throw std::runtime_error("payload: unsupported version " + std::to_string(version));
  BatchPayload p;
  p.batch_id = get_u64(in);
  for (auto& d : p.dims) d = get_u32(in);
  p.checksum = get_u64(in);
  const std::uint64_t count = std::uint64_t{p.dims[0]} * p.dims[1] * p.dims[2] * p.dims[3];
  if (count > (1ull << 31)) throw std::runtime_error("payload: implausible size");
  p.data.resize(count);
  in.read(reinterpret_cast<char*>(p.data.data()),
          static_cast<std::streamsize>(count * sizeof(float)));
  if (!in) throw std::runtime_error("payload: truncated data");
  if (p.compute_checksum() != p.checksum) throw std::runtime_error("payload: checksum mismatch");
  return p;
}

BatchPayload run_pipeline(PipelineId id, const std::vector<Image>& samples,
                          std::uint64_t rng_seed, std::uint64_t batch_id) {
  if (samples.empty()) throw std::invalid_argument("run_pipeline: empty batch");
  const auto steps = pipeline_steps(id);
  BatchPayload payload;
  payload.batch_id = batch_id;
  std::uint32_t oh = 0, ow = 0, oc = 0;
  for (std::size_t s = 0; s < samples.size(); ++s) {
    std::uint64_t rng = mix_key(rng_seed, batch_id, s);
    Image img = samples[s];
    for (const auto& step : steps) img = apply_transform(step, std::move(img), rng);
    if (s == 0) {
      oh = img.height;
      ow = img.width;
      oc = img.channels;
      payload.data.reserve(samples.size() * img.data.size());
    } else if (img.height != oh || img.width != ow || img.channels != oc) {
      throw std::runtime_error("run_pipeline: samples disagree on output dims");
    }
    // HWC -> CHW
    for (std::uint32_t c = 0; c < oc; ++c)
      for (std::uint32_t y = 0; y < oh; ++y)
        for (std::uint32_t x = 0; x < ow; ++x) payload.data.push_back(img.at(y, x, c));
  }
  payload.dims = {static_cast<std::uint32_t>(samples.size()), oc, oh, ow};
  payload.checksum = payload.compute_checksum();
  return payload;
}

std::vector<Image> gen_batch(const DatasetSpec& spec, std::uint64_t batch_id) {
  const std::uint64_t count = spec.samples_in_batch(batch_id);
  const std::uint64_t first = batch_id * spec.batch_size;
  std::vector<Image> out;
  out.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i)
    out.push_back(gen_sample(spec.seed, first + i, spec.height, spec.width, spec.channels));
  return out;
}

}  // namespace ddlp
