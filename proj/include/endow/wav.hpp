#pragma once

// Minimal RIFF/WAVE reader and writer. Writes 16-bit PCM mono; reads 16-bit
// PCM or 32-bit float, downmixing extra channels by averaging.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>

#include "endow/audio.hpp"
#include "endow/io.hpp"

namespace endow::wav {

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}
inline std::uint32_t get_u32(const std::string& s, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[at + i]);
  return v;
}
inline std::uint16_t get_u16(const std::string& s, std::size_t at) {
  return static_cast<std::uint16_t>(static_cast<unsigned char>(s[at]) |
                                    (static_cast<unsigned char>(s[at + 1]) << 8));
}

}  // namespace detail

inline std::string encode(const audio::Signal& sig) {
  const auto data_bytes = static_cast<std::uint32_t>(sig.size() * 2);
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  detail::put_u32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  detail::put_u32(out, 16);
  detail::put_u16(out, 1);  // PCM
  detail::put_u16(out, 1);  // mono
  detail::put_u32(out, static_cast<std::uint32_t>(sig.sample_rate));
  detail::put_u32(out, static_cast<std::uint32_t>(sig.sample_rate) * 2);
  detail::put_u16(out, 2);
  detail::put_u16(out, 16);
  out += "data";
  detail::put_u32(out, data_bytes);
  for (double v : sig.samples) {
    const auto q = static_cast<std::int16_t>(std::lround(std::clamp(v, -1.0, 1.0) * 32767.0));
    detail::put_u16(out, static_cast<std::uint16_t>(q));
  }
  return out;
}

inline audio::Signal decode(const std::string& bytes, const std::string& name = "<memory>") {
  auto fail = [&](const std::string& why) { return FormatError(name + ": " + why); };
  if (bytes.size() < 12 || bytes.compare(0, 4, "RIFF") != 0 || bytes.compare(8, 4, "WAVE") != 0)
    throw fail("not a RIFF/WAVE file");
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::string id = bytes.substr(pos, 4);
    const std::uint32_t len = detail::get_u32(bytes, pos + 4);
    const std::size_t body = pos + 8;
    if (body + len > bytes.size()) throw fail("truncated chunk '" + id + "'");
    if (id == "fmt ") {
      if (len < 16) throw fail("short fmt chunk");
      format = detail::get_u16(bytes, body);
      channels = detail::get_u16(bytes, body + 2);
      rate = detail::get_u32(bytes, body + 4);
      bits = detail::get_u16(bytes, body + 14);
      if (format == 0xFFFE && len >= 26) format = detail::get_u16(bytes, body + 24);  // extensible
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw fail("data chunk before fmt chunk");
      if (channels == 0) throw fail("zero channels");
      const bool pcm16 = format == 1 && bits == 16;
      const bool f32 = format == 3 && bits == 32;
      if (!pcm16 && !f32) throw fail("unsupported sample format " + std::to_string(format) + "/" + std::to_string(bits));
      const std::size_t width = bits / 8;
      const std::size_t frames = len / (width * channels);
      audio::Signal sig{std::vector<double>(frames), static_cast<int>(rate)};
      for (std::size_t f = 0; f < frames; ++f) {
        double acc = 0.0;
        for (std::size_t c = 0; c < channels; ++c) {
          const std::size_t at = body + (f * channels + c) * width;
          if (pcm16) {
            acc += static_cast<std::int16_t>(detail::get_u16(bytes, at)) / 32767.0;
          } else {
            const std::uint32_t raw = detail::get_u32(bytes, at);
            float v;
            std::memcpy(&v, &raw, sizeof v);
            acc += v;
          }
        }
        sig.samples[f] = acc / channels;
      }
      return sig;
    }
    pos = body + len + (len & 1);
  }
  throw fail("no data chunk");
}

inline audio::Signal read(const std::filesystem::path& p) { return decode(io::read_file(p), p.string()); }

inline void write(const std::filesystem::path& p, const audio::Signal& sig) { io::write_file_atomic(p, encode(sig)); }

}  // namespace endow::wav
