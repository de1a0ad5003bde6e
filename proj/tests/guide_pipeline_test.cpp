#include <gtest/gtest.h>

#include <algorithm>
#include <atomic>
#include <thread>

#include <httplib.h>

#include "wdis/codec.hpp"
#include "wdis/error.hpp"
#include "wdis/guide_pipeline.hpp"

namespace wdis {
namespace {

RGBImage random_image(std::size_t w, std::size_t h, Rng& rng) {
  RGBImage img(w, h);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.uniform_int(256));
  return img;
}

TEST(Prompt, ReproducesFigureCaptions) {
  EXPECT_EQ(build_prompt({"otter",
                          "freshwater carnivorous mammal having webbed and clawed feet and dark "
                          "brown fur",
                          "in a cave"}),
            "a photo of a otter, freshwater carnivorous mammal having webbed and clawed feet and "
            "dark brown fur, in a cave");
  EXPECT_EQ(build_prompt({"thatch", "a house roof made with a plant material (as straw)", "in snow"}),
            "a photo of a thatch, a house roof made with a plant material (as straw), in snow");
}

TEST(Prompt, SeparatorCommasAndValidation) {
  const std::string def = "one, two, three";
  for (const auto& bg : default_backgrounds()) {
    const std::string p = build_prompt({"dog", def, bg});
    EXPECT_EQ(std::count(p.begin(), p.end(), ','), 2 + std::count(def.begin(), def.end(), ','));
    EXPECT_NE(p.back(), ' ');
  }
  EXPECT_EQ(default_backgrounds().size(), 10u);
  EXPECT_THROW(build_prompt({"", "d", "in snow"}), Error);
  EXPECT_THROW(build_prompt({"dog", "", "in snow"}), Error);
  EXPECT_THROW(build_prompt({"dog", "d", ""}), Error);
  EXPECT_THROW(build_prompt({"dog", "d", "on the moon"}), Error);
  EXPECT_EQ(build_prompt({"dog", "d", "on the moon"}, {"on the moon"}), "a photo of a dog, d, on the moon");
}

TEST(P6, RoundTripIsByteLossless) {
  Rng rng(1);
  for (std::size_t w : {1, 2, 7}) {
    for (std::size_t h : {1, 3}) {
      const RGBImage img = random_image(w, h, rng);
      const auto bytes = encode_p6(img);
      EXPECT_EQ(decode_p6(bytes), img);
      EXPECT_EQ(encode_p6(decode_p6(bytes)), bytes);
    }
  }
}

TEST(P6, AcceptsCommentsAndRejectsDamage) {
  const std::string text = "P6 # comment\n2 1\n255\nabcdef";
  const std::vector<std::uint8_t> bytes(text.begin(), text.end());
  const RGBImage img = decode_p6(bytes);
  EXPECT_EQ(img.width, 2u);
  EXPECT_EQ(img.pixels[5], 'f');
  auto expect_corrupt = [](std::string s) {
    const std::vector<std::uint8_t> b(s.begin(), s.end());
    try {
      decode_p6(b);
      FAIL() << s;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kImageCorrupt);
    }
  };
  expect_corrupt("P5\n1 1\n255\nabc");
  expect_corrupt("P6\n1 1\n65535\nabcdef");
  expect_corrupt("P6\n2 1\n255\nabc");
  expect_corrupt("P6\n1 1\n255\nabcd");
  expect_corrupt("P6\n0 1\n255\n");
}

TEST(Downsample, IntegerFactorIsBlockMeanRoundedHalfUp) {
  Rng rng(2);
  for (std::size_t k : {2, 3, 4}) {
    const RGBImage src = random_image(3 * k, 2 * k, rng);
    const RGBImage out = downsample_box(src, 3, 2);
    for (std::size_t oy = 0; oy < 2; ++oy) {
      for (std::size_t ox = 0; ox < 3; ++ox) {
        for (std::size_t c = 0; c < 3; ++c) {
          double sum = 0;
          for (std::size_t y = oy * k; y < (oy + 1) * k; ++y) {
            for (std::size_t x = ox * k; x < (ox + 1) * k; ++x) sum += src.at(x, y)[c];
          }
          EXPECT_EQ(out.at(ox, oy)[c], static_cast<int>(std::floor(sum / (k * k) + 0.5)));
        }
      }
    }
  }
}

TEST(Downsample, HalfRoundsUp) {
  RGBImage src(2, 1);
  src.pixels = {0, 1, 2, 1, 2, 3};  // channel means 0.5, 1.5, 2.5
  const RGBImage out = downsample_box(src, 1, 1);
  EXPECT_EQ(out.pixels, (std::vector<std::uint8_t>{1, 2, 3}));
}

TEST(Compose, SinglePixelChangesExactlyOnePixel) {
  const RGBImage bg(4, 4, 10);
  const RGBImage fg(1, 1, 200);
  Rng rng(3);
  const ComposedGuide g = compose_guide(fg, bg, 0.3, rng);
  std::size_t changed = 0;
  for (std::size_t y = 0; y < 4; ++y) {
    for (std::size_t x = 0; x < 4; ++x) changed += g.image.at(x, y)[0] != 10;
  }
  EXPECT_EQ(changed, 1u);
  EXPECT_EQ(g.image.at(g.rect.x, g.rect.y)[0], 200);
}

TEST(Compose, OutsideRectangleMatchesTemplateBitExactly) {
  Rng rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    const RGBImage bg = random_image(20 + rng.uniform_int(30), 20 + rng.uniform_int(30), rng);
    const RGBImage fg = random_image(5 + rng.uniform_int(60), 5 + rng.uniform_int(60), rng);
    const double s = rng.uniform(kMinGuideScale, kMaxGuideScale);
    const ComposedGuide g = compose_guide(fg, bg, s, rng);
    const Rect& r = g.rect;
    ASSERT_LE(r.x + r.width, bg.width);
    ASSERT_LE(r.y + r.height, bg.height);
    EXPECT_LE(r.width, static_cast<std::size_t>(s * bg.width));
    EXPECT_LE(r.height, static_cast<std::size_t>(s * bg.height));
    EXPECT_LE(r.width, fg.width);
    for (std::size_t y = 0; y < bg.height; ++y) {
      for (std::size_t x = 0; x < bg.width; ++x) {
        const bool inside = x >= r.x && x < r.x + r.width && y >= r.y && y < r.y + r.height;
        if (!inside) ASSERT_TRUE(std::equal(bg.at(x, y), bg.at(x, y) + 3, g.image.at(x, y)));
      }
    }
  }
}

TEST(Compose, AspectPreservedAndNeverEnlarged) {
  const RGBImage bg(100, 100);
  EXPECT_EQ(fitted_size(RGBImage(80, 40), bg, 0.5), (Rect{0, 0, 50, 25}));
  EXPECT_EQ(fitted_size(RGBImage(40, 80), bg, 0.5), (Rect{0, 0, 25, 50}));
  EXPECT_EQ(fitted_size(RGBImage(10, 12), bg, 0.5), (Rect{0, 0, 10, 12}));
}

TEST(Compose, DeterministicAndRejectsBadInputs) {
  Rng rng(5);
  const RGBImage bg = random_image(32, 32, rng);
  const RGBImage fg = random_image(40, 40, rng);
  Rng a(9), b(9);
  const ComposedGuide x = compose_guide(fg, bg, 0.4, a);
  const ComposedGuide y = compose_guide(fg, bg, 0.4, b);
  EXPECT_EQ(x.rect, y.rect);
  EXPECT_EQ(x.image, y.image);
  EXPECT_THROW(compose_guide(fg, bg, 0.6, a), Error);
  EXPECT_THROW(compose_guide(fg, RGBImage(2, 2), 0.4, a), Error);  // empty box
  EXPECT_THROW(compose_guide(RGBImage(100, 1), RGBImage(10, 10), 0.3, a), Error);
}

BackendRequest request(std::string id, const RGBImage& guide) {
  BackendRequest r;
  r.request_id = std::move(id);
  r.prompt = "a photo of a dog, d, in snow";
  r.guide = guide;
  r.seed = 42;
  return r;
}

TEST(Backend, IdentityReturnsGuideAndRecordsProvenance) {
  Rng rng(6);
  const RGBImage guide = random_image(5, 4, rng);
  IdentityBackend identity;
  const Generation g = generate(request("r1", guide), identity);
  EXPECT_EQ(g.image, guide);
  EXPECT_EQ(g.provenance.strength, 0.9);
  EXPECT_EQ(g.provenance.guide_sha256, to_hex(sha256(encode_p6(guide))));
  EXPECT_EQ(g.provenance.attempts, 1u);

  RGBImage other = guide;
  EXPECT_EQ(generate(request("r2", other), identity).provenance.guide_sha256,
            g.provenance.guide_sha256);
  other.pixels[7] ^= 1;
  EXPECT_NE(generate(request("r3", other), identity).provenance.guide_sha256,
            g.provenance.guide_sha256);

  BackendRequest bad = request("r4", guide);
  bad.strength = 1.5;
  EXPECT_THROW(generate(bad, identity), Error);
}

TEST(Wire, RequestAndResponseRoundTrip) {
  Rng rng(7);
  const RGBImage img = random_image(2, 2, rng);
  BackendRequest r = request("x", img);
  r.strength = 0.25;
  const BackendRequest back = decode_request_json(encode_request_json(r));
  EXPECT_EQ(back.prompt, r.prompt);
  EXPECT_EQ(back.guide, img);
  EXPECT_EQ(encode_p6(back.guide), encode_p6(img));
  EXPECT_EQ(back.strength, 0.25);
  EXPECT_EQ(back.seed, 42u);
  EXPECT_EQ(decode_response_json(encode_response_json(img)), img);
  EXPECT_THROW(decode_response_json("{\"image\": 3}"), Error);
  EXPECT_THROW(decode_response_json("not json"), Error);
}

TEST(Wire, ParsesUrls) {
  const RemoteOptions o = parse_backend_url("http://gen.local:8080/v1/run");
  EXPECT_EQ(o.host, "gen.local");
  EXPECT_EQ(o.port, 8080);
  EXPECT_EQ(o.path, "/v1/run");
  EXPECT_EQ(parse_backend_url("http://h").port, 80);
  EXPECT_THROW(parse_backend_url("ftp://h"), Error);
  EXPECT_THROW(parse_backend_url("http://h:x/"), Error);
}

// In-process server echoing the guide with inverted pixels. The first
// `failures` calls answer 503.
class EchoServer {
 public:
  explicit EchoServer(int failures) : failures_(failures) {
    server_.Post("/generate", [this](const httplib::Request& req, httplib::Response& res) {
      ids_.push_back(req.get_header_value("X-Request-Id"));
      if (calls_++ < failures_) {
        res.status = 503;
        return;
      }
      RGBImage img = decode_request_json(req.body).guide;
      for (auto& p : img.pixels) p = static_cast<std::uint8_t>(255 - p);
      res.set_content(encode_response_json(img), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~EchoServer() {
    server_.stop();
    thread_.join();
  }
  RemoteOptions options() const {
    RemoteOptions o;
    o.port = port_;
    o.timeout_ms = 5000;
    return o;
  }
  std::vector<std::string> ids_;

 private:
  httplib::Server server_;
  std::thread thread_;
  std::atomic<int> calls_{0};
  int failures_;
  int port_ = 0;
};

TEST(Remote, RoundTripThroughServer) {
  EchoServer server(0);
  RemoteBackend remote(server.options());
  Rng rng(8);
  const RGBImage guide = random_image(2, 2, rng);
  const Generation g = generate(request("req-7", guide), remote);
  ASSERT_EQ(g.image.pixels.size(), guide.pixels.size());
  for (std::size_t i = 0; i < guide.pixels.size(); ++i) EXPECT_EQ(g.image.pixels[i], 255 - guide.pixels[i]);
  ASSERT_EQ(server.ids_.size(), 1u);
  EXPECT_EQ(server.ids_[0], "req-7");
}

TEST(Remote, RetriesThenSurfacesRequestId) {
  Rng rng(9);
  const RGBImage guide = random_image(3, 3, rng);
  {
    EchoServer server(2);
    RemoteBackend remote(server.options());
    const Generation g = generate(request("a", guide), remote, {3, 0});
    EXPECT_EQ(g.provenance.attempts, 3u);
  }
  {
    EchoServer server(10);
    RemoteBackend remote(server.options());
    try {
      generate(request("req-missing", guide), remote, {2, 0});
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kBackendFailure);
      EXPECT_NE(std::string(e.what()).find("req-missing"), std::string::npos);
      EXPECT_NE(std::string(e.what()).find("503"), std::string::npos);
    }
  }
}

TEST(Remote, UnreachableBackendFails) {
  RemoteOptions o;
  o.port = 1;
  o.timeout_ms = 500;
  RemoteBackend remote(o);
  EXPECT_THROW(generate(request("z", RGBImage(1, 1)), remote, {1, 0}), Error);
}

// Sleeps longer for earlier ids so completion order is reversed.
class SlowBackend final : public Backend {
 public:
  std::string name() const override { return "slow"; }
  RGBImage generate(const BackendRequest& r) override {
    std::this_thread::sleep_for(std::chrono::milliseconds(5 * (9 - (r.request_id.back() - '0'))));
    if (r.request_id == "id-4") fail(ErrorCode::kBackendFailure, "boom");
    return r.guide;
  }
};

TEST(Dispatcher, OrdersByRequestIdAndSurfacesFailures) {
  Rng rng(10);
  std::vector<BackendRequest> reqs;
  for (int i = 9; i >= 0; --i) {
    if (i == 4) continue;
    reqs.push_back(request("id-" + std::to_string(i), random_image(2, 1, rng)));
  }
  SlowBackend slow;
  const auto out = generate_all(reqs, slow, 4, {1, 0});
  ASSERT_EQ(out.size(), 9u);
  for (std::size_t i = 1; i < out.size(); ++i) {
    EXPECT_LT(out[i - 1].provenance.request_id, out[i].provenance.request_id);
  }
  reqs.push_back(request("id-4", RGBImage(1, 1)));
  try {
    generate_all(reqs, slow, 3, {1, 0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("id-4"), std::string::npos);
  }
  reqs.push_back(request("id-0", RGBImage(1, 1)));
  EXPECT_THROW(generate_all(reqs, slow, 2), Error);
}

}  // namespace
}  // namespace wdis
