#include "wdis/guide_pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <thread>

#include <httplib.h>

#include "json.hpp"
#include "wdis/codec.hpp"
#include "wdis/error.hpp"
#include "wdis/io.hpp"

namespace wdis {

using nlohmann::json;

void RGBImage::validate() const {
  if (width == 0 || height == 0) fail(ErrorCode::kImageCorrupt, "image has zero area");
  if (pixels.size() != 3 * width * height) {
    fail(ErrorCode::kImageCorrupt, "image of " + std::to_string(width) + "x" +
                                       std::to_string(height) + " holds " +
                                       std::to_string(pixels.size()) + " bytes");
  }
}

std::vector<std::uint8_t> encode_p6(const RGBImage& image) {
  image.validate();
  const std::string header =
      "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), image.pixels.begin(), image.pixels.end());
  return out;
}

namespace {

bool is_space(std::uint8_t c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

class HeaderParser {
 public:
  explicit HeaderParser(std::span<const std::uint8_t> b) : b_(b) {}

  std::size_t number() {
    skip();
    std::size_t v = 0, digits = 0;
    while (pos_ < b_.size() && b_[pos_] >= '0' && b_[pos_] <= '9') {
      if (digits++ > 8) fail(ErrorCode::kImageCorrupt, "P6 header number too large");
      v = v * 10 + (b_[pos_++] - '0');
    }
    if (digits == 0) fail(ErrorCode::kImageCorrupt, "P6 header: expected a number");
    return v;
  }

  // Exactly one whitespace byte separates maxval from the raster.
  std::size_t raster_start() {
    if (pos_ >= b_.size() || !is_space(b_[pos_])) {
      fail(ErrorCode::kImageCorrupt, "P6 header: missing separator before raster");
    }
    return pos_ + 1;
  }

 private:
  void skip() {
    while (pos_ < b_.size()) {
      if (is_space(b_[pos_])) {
        ++pos_;
      } else if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 2;
};

}  // namespace

RGBImage decode_p6(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') {
    fail(ErrorCode::kImageCorrupt, "not a P6 pixmap");
  }
  HeaderParser h(bytes);
  RGBImage img;
  img.width = h.number();
  img.height = h.number();
  const std::size_t maxval = h.number();
  if (maxval != 255) fail(ErrorCode::kImageCorrupt, "P6 maxval " + std::to_string(maxval));
  if (img.width == 0 || img.height == 0) fail(ErrorCode::kImageCorrupt, "P6 image has zero area");
  const std::size_t start = h.raster_start();
  const std::size_t need = 3 * img.width * img.height;
  if (bytes.size() - std::min(start, bytes.size()) != need) {
    fail(ErrorCode::kImageCorrupt, "P6 raster holds " +
                                       std::to_string(bytes.size() - std::min(start, bytes.size())) +
                                       " bytes, expected " + std::to_string(need));
  }
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(start), bytes.end());
  return img;
}

RGBImage read_p6(const std::filesystem::path& path) {
  try {
    return decode_p6(read_file(path, ErrorCode::kIo));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kImageCorrupt) fail(e.code(), path.string() + ": " + e.what());
    throw;
  }
}

void write_p6(const std::filesystem::path& path, const RGBImage& image) {
  write_file_atomic(path, encode_p6(image));
}

const std::vector<std::string>& default_backgrounds() {
  static const std::vector<std::string> set = {
      "on grass", "on a road", "in a forest", "in water", "in a cave",
      "in sand",  "indoors",   "in snow",     "in rain",  "at night"};
  return set;
}

std::string build_prompt(const PromptSpec& spec, const std::vector<std::string>& backgrounds) {
  if (spec.fg.empty()) fail(ErrorCode::kConfigInvalid, "prompt: empty foreground label");
  if (spec.definition.empty()) fail(ErrorCode::kConfigInvalid, "prompt: empty definition");
  if (spec.bg.empty()) fail(ErrorCode::kConfigInvalid, "prompt: empty background phrase");
  if (std::find(backgrounds.begin(), backgrounds.end(), spec.bg) == backgrounds.end()) {
    fail(ErrorCode::kConfigInvalid, "prompt: background phrase not in the set: " + spec.bg);
  }
  return "a photo of a " + spec.fg + ", " + spec.definition + ", " + spec.bg;
}

RGBImage downsample_box(const RGBImage& src, std::size_t w, std::size_t h) {
  src.validate();
  if (w == 0 || h == 0 || w > src.width || h > src.height) {
    fail(ErrorCode::kContractViolation, "downsample_box: target " + std::to_string(w) + "x" +
                                            std::to_string(h) + " from " +
                                            std::to_string(src.width) + "x" +
                                            std::to_string(src.height));
  }
  RGBImage out(w, h);
  for (std::size_t oy = 0; oy < h; ++oy) {
    const std::size_t y0 = oy * src.height / h, y1 = (oy + 1) * src.height / h;
    for (std::size_t ox = 0; ox < w; ++ox) {
      const std::size_t x0 = ox * src.width / w, x1 = (ox + 1) * src.width / w;
      const std::uint64_t count = (y1 - y0) * (x1 - x0);
      for (std::size_t c = 0; c < 3; ++c) {
        std::uint64_t sum = 0;
        for (std::size_t y = y0; y < y1; ++y) {
          for (std::size_t x = x0; x < x1; ++x) sum += src.at(x, y)[c];
        }
        out.at(ox, oy)[c] = static_cast<std::uint8_t>((2 * sum + count) / (2 * count));
      }
    }
  }
  return out;
}

Rect fitted_size(const RGBImage& fg, const RGBImage& bg, double scale) {
  fg.validate();
  bg.validate();
  if (!(scale >= kMinGuideScale && scale <= kMaxGuideScale)) {
    fail(ErrorCode::kConfigInvalid, "guide scale " + std::to_string(scale) + " outside [0.3, 0.5]");
  }
  const auto bw = static_cast<std::size_t>(std::floor(scale * static_cast<double>(bg.width)));
  const auto bh = static_cast<std::size_t>(std::floor(scale * static_cast<double>(bg.height)));
  Rect r;
  if (fg.width <= bw && fg.height <= bh) {
    r.width = fg.width;
    r.height = fg.height;
  } else if (bw * fg.height <= bh * fg.width) {
    r.width = bw;
    r.height = fg.height * bw / fg.width;
  } else {
    r.height = bh;
    r.width = fg.width * bh / fg.height;
  }
  if (r.width == 0 || r.height == 0) {
    fail(ErrorCode::kContractViolation,
         "foreground " + std::to_string(fg.width) + "x" + std::to_string(fg.height) +
             " does not fit a " + std::to_string(bw) + "x" + std::to_string(bh) + " box");
  }
  return r;
}

ComposedGuide compose_guide(const RGBImage& fg, const RGBImage& bg, double scale, Rng& rng) {
  Rect r = fitted_size(fg, bg, scale);
  const RGBImage small = downsample_box(fg, r.width, r.height);
  r.x = static_cast<std::size_t>(rng.uniform_int(bg.width - r.width + 1));
  r.y = static_cast<std::size_t>(rng.uniform_int(bg.height - r.height + 1));
  ComposedGuide out{bg, r};
  for (std::size_t y = 0; y < r.height; ++y) {
    std::copy_n(small.at(0, y), 3 * r.width, out.image.at(r.x, r.y + y));
  }
  return out;
}

std::string encode_request_json(const BackendRequest& request) {
  json j;
  j["prompt"] = request.prompt;
  j["guide"] = base64_encode(encode_p6(request.guide));
  j["strength"] = request.strength;
  j["seed"] = request.seed;
  return j.dump();
}

namespace {

json parse_body(std::string_view body, std::string_view what) {
  try {
    json j = json::parse(body);
    if (!j.is_object()) fail(ErrorCode::kBackendFailure, std::string(what) + " is not an object");
    return j;
  } catch (const json::exception& e) {
    fail(ErrorCode::kBackendFailure, std::string(what) + ": " + e.what());
  }
}

RGBImage decode_wire_image(const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_string()) {
    fail(ErrorCode::kBackendFailure, std::string("wire message lacks string field ") + key);
  }
  try {
    return decode_p6(base64_decode(j[key].get<std::string>()));
  } catch (const Error& e) {
    fail(ErrorCode::kBackendFailure, std::string("wire field ") + key + ": " + e.what());
  }
}

}  // namespace

BackendRequest decode_request_json(std::string_view body) {
  const json j = parse_body(body, "request");
  BackendRequest r;
  try {
    r.prompt = j.at("prompt").get<std::string>();
    r.strength = j.at("strength").get<double>();
    r.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    fail(ErrorCode::kBackendFailure, std::string("request: ") + e.what());
  }
  r.guide = decode_wire_image(j, "guide");
  return r;
}

std::string encode_response_json(const RGBImage& image) {
  json j;
  j["image"] = base64_encode(encode_p6(image));
  return j.dump();
}

RGBImage decode_response_json(std::string_view body) {
  return decode_wire_image(parse_body(body, "response"), "image");
}

RemoteOptions parse_backend_url(std::string_view url) {
  constexpr std::string_view scheme = "http://";
  if (!url.starts_with(scheme)) {
    fail(ErrorCode::kConfigInvalid, "backend url must start with http://: " + std::string(url));
  }
  url.remove_prefix(scheme.size());
  RemoteOptions o;
  const auto slash = url.find('/');
  std::string_view authority = url.substr(0, slash);
  if (slash != std::string_view::npos) o.path = std::string(url.substr(slash));
  const auto colon = authority.rfind(':');
  if (colon != std::string_view::npos) {
    const std::string port(authority.substr(colon + 1));
    try {
      std::size_t used = 0;
      o.port = std::stoi(port, &used);
      if (used != port.size() || o.port <= 0 || o.port > 65535) throw std::out_of_range(port);
    } catch (const std::exception&) {
      fail(ErrorCode::kConfigInvalid, "backend url has a bad port: " + port);
    }
    authority = authority.substr(0, colon);
  }
  if (authority.empty()) fail(ErrorCode::kConfigInvalid, "backend url has no host");
  o.host = std::string(authority);
  return o;
}

std::string RemoteBackend::name() const {
  return "http://" + options_.host + ":" + std::to_string(options_.port) + options_.path;
}

RGBImage RemoteBackend::generate(const BackendRequest& request) {
  httplib::Client client(options_.host, options_.port);
  const auto sec = options_.timeout_ms / 1000, usec = (options_.timeout_ms % 1000) * 1000;
  client.set_connection_timeout(sec, usec);
  client.set_read_timeout(sec, usec);
  client.set_write_timeout(sec, usec);
  const httplib::Headers headers = {{"X-Request-Id", request.request_id}};
  auto res = client.Post(options_.path, headers, encode_request_json(request), "application/json");
  if (!res) fail(ErrorCode::kBackendFailure, "transport: " + httplib::to_string(res.error()));
  if (res->status != 200) {
    fail(ErrorCode::kBackendFailure, "HTTP status " + std::to_string(res->status));
  }
  return decode_response_json(res->body);
}

std::string provenance_json(const Provenance& p) {
  json j;
  j["request_id"] = p.request_id;
  j["backend"] = p.backend;
  j["prompt"] = p.prompt;
  j["strength"] = p.strength;
  j["seed"] = p.seed;
  j["guide_sha256"] = p.guide_sha256;
  j["output_sha256"] = p.output_sha256;
  j["attempts"] = p.attempts;
  return j.dump();
}

Generation generate(const BackendRequest& request, Backend& backend, const RetryPolicy& retry) {
  if (!(request.strength >= 0.0 && request.strength <= 1.0)) {
    fail(ErrorCode::kConfigInvalid, "request " + request.request_id + ": strength " +
                                        std::to_string(request.strength) + " outside [0, 1]");
  }
  request.guide.validate();
  Generation g;
  Provenance& p = g.provenance;
  p.request_id = request.request_id;
  p.backend = backend.name();
  p.prompt = request.prompt;
  p.strength = request.strength;
  p.seed = request.seed;
  p.guide_sha256 = to_hex(sha256(encode_p6(request.guide)));
  const std::size_t attempts = std::max<std::size_t>(retry.max_attempts, 1);
  std::string last;
  for (std::size_t a = 1; a <= attempts; ++a) {
    p.attempts = a;
    try {
      g.image = backend.generate(request);
      g.image.validate();
      p.output_sha256 = to_hex(sha256(encode_p6(g.image)));
      return g;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kBackendFailure && e.code() != ErrorCode::kImageCorrupt) throw;
      last = e.what();
    }
    if (a < attempts && retry.backoff_ms > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(retry.backoff_ms * a));
    }
  }
  fail(ErrorCode::kBackendFailure, "request " + request.request_id + " failed after " +
                                       std::to_string(attempts) + " attempts: " + last);
}

std::vector<Generation> generate_all(std::vector<BackendRequest> requests, Backend& backend,
                                     std::size_t parallelism, const RetryPolicy& retry) {
  std::sort(requests.begin(), requests.end(),
            [](const auto& a, const auto& b) { return a.request_id < b.request_id; });
  for (std::size_t i = 1; i < requests.size(); ++i) {
    if (requests[i].request_id == requests[i - 1].request_id) {
      fail(ErrorCode::kContractViolation, "duplicate request id " + requests[i].request_id);
    }
  }
  const std::size_t n = requests.size();
  std::vector<Generation> out(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        out[i] = generate(requests[i], backend, retry);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(parallelism, 1, std::max<std::size_t>(n, 1));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

}  // namespace wdis
