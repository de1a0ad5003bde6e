#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "wdis/rng.hpp"

namespace wdis {

struct RGBImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major RGB

  RGBImage() = default;
  RGBImage(std::size_t w, std::size_t h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(3 * w * h, fill) {}

  std::uint8_t* at(std::size_t x, std::size_t y) { return &pixels[3 * (y * width + x)]; }
  const std::uint8_t* at(std::size_t x, std::size_t y) const {
    return &pixels[3 * (y * width + x)];
  }
  void validate() const;
  friend bool operator==(const RGBImage&, const RGBImage&) = default;
};

// Binary portable pixmap, maxval 255.
std::vector<std::uint8_t> encode_p6(const RGBImage& image);
RGBImage decode_p6(std::span<const std::uint8_t> bytes);
RGBImage read_p6(const std::filesystem::path& path);
void write_p6(const std::filesystem::path& path, const RGBImage& image);

const std::vector<std::string>& default_backgrounds();

struct PromptSpec {
  std::string fg;
  std::string definition;
  std::string bg;
};

// "a photo of a {fg}, {definition}, {bg}". The bg phrase must be one of
// `backgrounds`.
std::string build_prompt(const PromptSpec& spec,
                         const std::vector<std::string>& backgrounds = default_backgrounds());

struct Rect {
  std::size_t x = 0;
  std::size_t y = 0;
  std::size_t width = 0;
  std::size_t height = 0;
  friend bool operator==(const Rect&, const Rect&) = default;
};

inline constexpr double kMinGuideScale = 0.3;
inline constexpr double kMaxGuideScale = 0.5;

// Box-average resize to w x h (w <= source width, h <= source height). Each
// output pixel averages the source block floor(i*W/w) .. floor((i+1)*W/w),
// rounded half up.
RGBImage downsample_box(const RGBImage& src, std::size_t w, std::size_t h);

// Size of fg after fitting it, aspect preserved and never enlarged, inside
// floor(scale*bg_w) x floor(scale*bg_h).
Rect fitted_size(const RGBImage& fg, const RGBImage& bg, double scale);

struct ComposedGuide {
  RGBImage image;
  Rect rect;
};

ComposedGuide compose_guide(const RGBImage& fg, const RGBImage& bg, double scale, Rng& rng);

inline constexpr double kDefaultStrength = 0.9;

struct BackendRequest {
  std::string request_id;
  std::string prompt;
  RGBImage guide;
  double strength = kDefaultStrength;
  std::uint64_t seed = 0;
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string name() const = 0;
  // Throws Error(kBackendFailure) on any failure. Must be callable from
  // several threads at once.
  virtual RGBImage generate(const BackendRequest& request) = 0;
};

// Returns the guide unchanged.
class IdentityBackend final : public Backend {
 public:
  std::string name() const override { return "identity"; }
  RGBImage generate(const BackendRequest& request) override { return request.guide; }
};

// Wire format: POST {prompt, guide, strength, seed} with the guide as base64
// P6; the reply is {image} in the same encoding. The request id travels in
// the X-Request-Id header.
std::string encode_request_json(const BackendRequest& request);
BackendRequest decode_request_json(std::string_view body);
std::string encode_response_json(const RGBImage& image);
RGBImage decode_response_json(std::string_view body);

struct RemoteOptions {
  std::string host = "127.0.0.1";
  int port = 80;
  std::string path = "/generate";
  int timeout_ms = 60000;
};

// Parses http://host[:port][/path].
RemoteOptions parse_backend_url(std::string_view url);

class RemoteBackend final : public Backend {
 public:
  explicit RemoteBackend(RemoteOptions options) : options_(std::move(options)) {}
  std::string name() const override;
  RGBImage generate(const BackendRequest& request) override;

 private:
  RemoteOptions options_;
};

struct Provenance {
  std::string request_id;
  std::string backend;
  std::string prompt;
  double strength = 0.0;
  std::uint64_t seed = 0;
  std::string guide_sha256;
  std::string output_sha256;
  std::size_t attempts = 0;
};

std::string provenance_json(const Provenance& p);

struct Generation {
  RGBImage image;
  Provenance provenance;
};

struct RetryPolicy {
  std::size_t max_attempts = 3;
  int backoff_ms = 100;  // grows linearly with the attempt number
};

// Errors after the last attempt carry the request id.
Generation generate(const BackendRequest& request, Backend& backend,
                    const RetryPolicy& retry = {});

// Runs up to `parallelism` requests at a time. Results come back sorted by
// request id whatever the completion order; request ids must be unique. The
// first failure in that order is rethrown once every request has finished.
std::vector<Generation> generate_all(std::vector<BackendRequest> requests, Backend& backend,
                                     std::size_t parallelism, const RetryPolicy& retry = {});

}  // namespace wdis
