#include "wdis/checkpoint.hpp"

#include <algorithm>
#include <string_view>

#include "wdis/codec.hpp"
#include "wdis/error.hpp"
#include "wdis/io.hpp"

namespace wdis {

namespace {

constexpr std::string_view kMagic = "WDISCKPT";
constexpr auto kCorrupt = ErrorCode::kCheckpointCorrupt;

void put_string(std::vector<std::uint8_t>& out, std::string_view s) {
  put_u64(out, s.size());
  put_bytes(out, s);
}

std::string get_string(ByteReader& r) {
  const auto n = r.u64();
  if (n > r.remaining()) fail(kCorrupt, "checkpoint string length past end of file");
  return r.bytes(n);
}

void put_array(std::vector<std::uint8_t>& out, const NumArray& a) {
  put_u32(out, static_cast<std::uint32_t>(a.shape().size()));
  for (auto d : a.shape()) put_u64(out, d);
  for (double v : a.data()) put_f64(out, v);
}

NumArray get_array(ByteReader& r) {
  const auto rank = r.u32();
  if (rank > 8) fail(kCorrupt, "checkpoint array rank " + std::to_string(rank));
  Shape shape(rank);
  std::size_t count = 1;
  for (auto& d : shape) {
    d = r.u64();
    if (d != 0 && count > r.remaining() / d) fail(kCorrupt, "checkpoint array larger than file");
    count *= d;
  }
  if (count > r.remaining() / 8) fail(kCorrupt, "checkpoint array larger than file");
  NumArray a(std::move(shape));
  for (auto& v : a.data()) v = r.f64();
  return a;
}

void put_optimizer(std::vector<std::uint8_t>& out, const OptimizerState& s) {
  put_u64(out, s.step);
  put_f64(out, s.beta1_power);
  put_f64(out, s.beta2_power);
  put_u32(out, static_cast<std::uint32_t>(s.names.size()));
  for (std::size_t k = 0; k < s.names.size(); ++k) {
    put_string(out, s.names[k]);
    put_array(out, s.m[k]);
    put_array(out, s.v[k]);
  }
}

OptimizerState get_optimizer(ByteReader& r) {
  OptimizerState s;
  s.step = r.u64();
  s.beta1_power = r.f64();
  s.beta2_power = r.f64();
  const auto n = r.u32();
  for (std::uint32_t k = 0; k < n; ++k) {
    s.names.push_back(get_string(r));
    s.m.push_back(get_array(r));
    s.v.push_back(get_array(r));
  }
  return s;
}

void check_optimizer(const OptimizerState& s, const ParamStore& params) {
  for (std::size_t k = 0; k < s.names.size(); ++k) {
    if (!params.contains(s.names[k]) || s.m[k].shape() != params.get(s.names[k]).shape() ||
        s.v[k].shape() != s.m[k].shape()) {
      fail(kCorrupt, "checkpoint optimizer entry " + s.names[k] + " does not match the parameters");
    }
  }
}

}  // namespace

Checkpoint Checkpoint::from_state(std::string config_json, const TrainState& state) {
  Checkpoint c;
  c.config_json = std::move(config_json);
  c.params = state.params;
  c.resume = ResumeState{state.critic_opt, state.model_opt, state.rng_state, state.iteration};
  return c;
}

TrainState Checkpoint::to_state() const {
  if (!resume) fail(ErrorCode::kContractViolation, "checkpoint carries no training state");
  TrainState s;
  s.params = params;
  s.critic_opt = resume->critic_opt;
  s.model_opt = resume->model_opt;
  s.rng_state = resume->rng_state;
  s.iteration = resume->iteration;
  return s;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> out;
  put_bytes(out, kMagic);
  put_u32(out, kCheckpointFormatVersion);
  put_string(out, ckpt.config_json);
  put_u32(out, static_cast<std::uint32_t>(ckpt.params.size()));
  for (const auto& name : ckpt.params.names()) {
    put_string(out, name);
    put_array(out, ckpt.params.get(name));
  }
  out.push_back(ckpt.resume ? 1 : 0);
  if (ckpt.resume) {
    put_optimizer(out, ckpt.resume->critic_opt);
    put_optimizer(out, ckpt.resume->model_opt);
    put_u64(out, ckpt.resume->rng_state);
    put_u64(out, ckpt.resume->iteration);
  }
  const Digest d = sha256(out);
  out.insert(out.end(), d.begin(), d.end());
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kMagic.size() + 4 + 32) fail(kCorrupt, "checkpoint file too short");
  {
    ByteReader head(bytes, kCorrupt);
    if (head.bytes(kMagic.size()) != kMagic) fail(kCorrupt, "not a checkpoint file");
    const auto version = head.u32();
    if (version != kCheckpointFormatVersion) {
      fail(ErrorCode::kCheckpointVersion,
           "checkpoint format version " + std::to_string(version) + " is not supported (expected " +
               std::to_string(kCheckpointFormatVersion) + ")");
    }
  }
  const auto body = bytes.first(bytes.size() - 32);
  const Digest want = sha256(body);
  if (!std::equal(want.begin(), want.end(), bytes.end() - 32)) {
    fail(kCorrupt, "checkpoint checksum mismatch");
  }
  ByteReader r(body, kCorrupt);
  r.bytes(kMagic.size());
  r.u32();
  Checkpoint c;
  c.config_json = get_string(r);
  const auto n = r.u32();
  for (std::uint32_t k = 0; k < n; ++k) {
    std::string name = get_string(r);
    if (c.params.contains(name)) fail(kCorrupt, "checkpoint repeats parameter " + name);
    c.params.add(std::move(name), get_array(r));
  }
  const auto flag = r.u8();
  if (flag > 1) fail(kCorrupt, "checkpoint resume flag " + std::to_string(flag));
  if (flag == 1) {
    ResumeState s;
    s.critic_opt = get_optimizer(r);
    s.model_opt = get_optimizer(r);
    s.rng_state = r.u64();
    s.iteration = r.u64();
    check_optimizer(s.critic_opt, c.params);
    check_optimizer(s.model_opt, c.params);
    c.resume = std::move(s);
  }
  if (r.remaining() != 0) fail(kCorrupt, "checkpoint has trailing bytes");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return decode_checkpoint(read_file(path, ErrorCode::kCheckpointNotFound));
  } catch (const Error& e) {
    if (e.code() == kCorrupt || e.code() == ErrorCode::kCheckpointVersion) {
      fail(e.code(), path.string() + ": " + e.what());
    }
    throw;
  }
}

}  // namespace wdis
