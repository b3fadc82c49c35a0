#pragma once

// Speech-synthesis text preparation, room impulse responses (image-source
// method), reverberation and SNR-controlled background mixing.

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <mutex>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "endow/corpus.hpp"
#include "endow/error.hpp"
#include "endow/random.hpp"

namespace endow::audio {

inline constexpr int kDefaultSampleRate = 24000;

struct Signal {
  std::vector<double> samples;
  int sample_rate = kDefaultSampleRate;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
};

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  bool operator==(const Vec3&) const = default;
};

inline double distance(const Vec3& a, const Vec3& b) {
  return std::hypot(a.x - b.x, a.y - b.y, a.z - b.z);
}

struct RoomSpec {
  double width = 0.0;   // x extent, meters
  double length = 0.0;  // y extent
  double height = 0.0;  // z extent
  Vec3 source;
  Vec3 mic;
  double rt60 = 0.0;             // seconds
  double sound_velocity = 340.0;  // m/s
  int sample_rate = kDefaultSampleRate;

  bool operator==(const RoomSpec&) const = default;
};

inline bool strictly_inside(const RoomSpec& r, const Vec3& p) {
  return p.x > 0 && p.x < r.width && p.y > 0 && p.y < r.length && p.z > 0 && p.z < r.height;
}

inline void validate(const RoomSpec& r) {
  if (!(r.width > 0 && r.length > 0 && r.height > 0)) throw Error("room dimensions must be positive");
  if (!strictly_inside(r, r.source)) throw Error("source must be strictly inside the room");
  if (!strictly_inside(r, r.mic)) throw Error("microphone must be strictly inside the room");
  if (!(r.rt60 > 0)) throw Error("rt60 must be positive");
  if (!(r.sound_velocity > 0)) throw Error("sound velocity must be positive");
  if (r.sample_rate <= 0) throw Error("sample rate must be positive");
}

struct NoiseSpec {
  double snr_db = 0.0;
  Signal background;
  double epsilon = 1e-12;
};

// ---------------------------------------------------------------------------
// Text preparation

/// Removes {...} and [...] spans (nesting allowed) and collapses whitespace.
/// An opening bracket with no matching close is kept as text.
inline std::string strip_nonverbal_markers(std::string_view text) {
  std::string kept;
  kept.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c == '{' || c == '[') {
      std::vector<char> stack{c == '{' ? '}' : ']'};
      std::size_t j = i + 1;
      for (; j < text.size() && !stack.empty(); ++j) {
        if (text[j] == '{') stack.push_back('}');
        else if (text[j] == '[') stack.push_back(']');
        else if (text[j] == stack.back()) stack.pop_back();
      }
      if (stack.empty()) {
        kept.push_back(' ');
        i = j - 1;
        continue;
      }
    }
    kept.push_back(c);
  }
  std::string out;
  bool pending_space = false;
  for (char c : kept) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c);
  }
  return out;
}

/// Sentences end at a run of '.', '!' or '?' followed by whitespace or the
/// end of the text.
inline std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c != '.' && c != '!' && c != '?') continue;
    std::size_t j = i;
    while (j + 1 < text.size() && (text[j + 1] == '.' || text[j + 1] == '!' || text[j + 1] == '?')) ++j;
    if (j + 1 == text.size() || std::isspace(static_cast<unsigned char>(text[j + 1]))) {
      auto s = std::string(text.substr(start, j + 1 - start));
      const auto b = s.find_first_not_of(' ');
      if (b != std::string::npos) out.push_back(s.substr(b));
      start = j + 1;
    }
    i = j;
  }
  if (start < text.size()) {
    auto s = std::string(text.substr(start));
    const auto b = s.find_first_not_of(' ');
    if (b != std::string::npos) out.push_back(s.substr(b));
  }
  return out;
}

/// Text segments to voice for one utterance: markers stripped, sentence
/// split, then greedy chunks of at most `max_tokens` whitespace tokens.
inline std::vector<std::string> prepare_tts_segments(const Utterance& utterance, std::size_t max_tokens = 50) {
  if (max_tokens == 0) throw Error("max_tokens must be at least 1");
  std::vector<std::string> segments;
  for (const auto& sentence : split_sentences(strip_nonverbal_markers(utterance.text))) {
    std::vector<std::string_view> words;
    std::string_view rest = sentence;
    while (!rest.empty()) {
      const auto sp = rest.find(' ');
      words.push_back(rest.substr(0, sp));
      if (sp == std::string_view::npos) break;
      rest.remove_prefix(sp + 1);
    }
    for (std::size_t i = 0; i < words.size(); i += max_tokens) {
      std::string seg;
      for (std::size_t k = i; k < std::min(words.size(), i + max_tokens); ++k) {
        if (!seg.empty()) seg.push_back(' ');
        seg += words[k];
      }
      segments.push_back(std::move(seg));
    }
  }
  return segments;
}

// ---------------------------------------------------------------------------
// Rooms and impulse responses

/// Random shoebox room: width and length in [2, 10] m, height 3 m, source at
/// least 0.5 m from each wall, microphone 2 m (else 1 m, else 0 m) from the
/// source at source height, RT60 in [0.15, 1] s.
inline RoomSpec sample_room(std::uint64_t seed, int sample_rate = kDefaultSampleRate) {
  Rng rng(seed);
  RoomSpec r;
  r.width = uniform(rng, 2.0, 10.0);
  r.length = uniform(rng, 2.0, 10.0);
  r.height = 3.0;
  r.source.x = uniform(rng, 0.5, r.width - 0.5);
  r.source.y = uniform(rng, 0.5, r.length - 0.5);
  do {
    r.source.z = uniform(rng, 0.0, r.height);
  } while (r.source.z <= 0.0);
  r.mic = r.source;
  bool placed = false;
  for (double d : {2.0, 1.0}) {
    for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
      const double theta = uniform(rng, 0.0, 2.0 * std::numbers::pi);
      const Vec3 cand{r.source.x + d * std::cos(theta), r.source.y + d * std::sin(theta), r.source.z};
      if (strictly_inside(r, cand)) {
        r.mic = cand;
        placed = true;
      }
    }
    if (placed) break;
  }
  r.rt60 = uniform(rng, 0.15, 1.0);
  r.sound_velocity = 340.0;
  r.sample_rate = sample_rate;
  return r;
}

/// Uniform wall reflection coefficient from Sabine's formula,
/// alpha = 24 ln(10) V / (c S RT60), beta = sqrt(1 - alpha). Rooms too
/// absorptive for the requested RT60 (alpha >= 1) get beta = 0.
inline double reflection_coefficient(const RoomSpec& r) {
  const double volume = r.width * r.length * r.height;
  const double surface = 2.0 * (r.width * r.length + r.width * r.height + r.length * r.height);
  const double alpha = 24.0 * std::log(10.0) * volume / (r.sound_velocity * surface * r.rt60);
  return alpha >= 1.0 ? 0.0 : std::sqrt(1.0 - alpha);
}

struct RirOptions {
  int max_order = -1;          // total wall reflections per path; -1 = bounded by length only
  double length_factor = 1.2;  // response length = ceil(length_factor * rt60 * fs)
};

/// Allen-Berkley image-source response. Each image contributes
/// beta^(reflections) / (4 pi d) at sample round(d / c * fs).
inline Signal generate_rir(const RoomSpec& room, const RirOptions& opts = {}) {
  validate(room);
  const double fs = room.sample_rate;
  const auto n = static_cast<std::size_t>(std::ceil(opts.length_factor * room.rt60 * fs));
  Signal h{std::vector<double>(std::max<std::size_t>(n, 1), 0.0), room.sample_rate};

  const double direct = distance(room.source, room.mic);
  if (direct < 1e-9) {
    h.samples[0] = 1.0;
    return h;
  }

  const double beta = reflection_coefficient(room);
  const double max_dist = room.sound_velocity * static_cast<double>(h.size()) / fs;
  const int nx = static_cast<int>(std::ceil(max_dist / (2 * room.width))) + 1;
  const int ny = static_cast<int>(std::ceil(max_dist / (2 * room.length))) + 1;
  const int nz = static_cast<int>(std::ceil(max_dist / (2 * room.height))) + 1;
  const int order_cap = opts.max_order < 0 ? 2 * (nx + ny + nz) + 6 : opts.max_order;

  std::vector<double> beta_pow(static_cast<std::size_t>(order_cap) + 1);
  beta_pow[0] = 1.0;
  for (std::size_t i = 1; i < beta_pow.size(); ++i) beta_pow[i] = beta_pow[i - 1] * beta;

  const double samples_per_meter = fs / room.sound_velocity;
  const double inv4pi = 1.0 / (4.0 * std::numbers::pi);
  for (int l = -nx; l <= nx; ++l) {
    for (int u = 0; u < 2; ++u) {
      const double dx = (1 - 2 * u) * room.source.x + 2 * l * room.width - room.mic.x;
      const int ox = std::abs(l - u) + std::abs(l);
      if (ox > order_cap) continue;
      for (int m = -ny; m <= ny; ++m) {
        for (int v = 0; v < 2; ++v) {
          const double dy = (1 - 2 * v) * room.source.y + 2 * m * room.length - room.mic.y;
          const int oy = ox + std::abs(m - v) + std::abs(m);
          if (oy > order_cap) continue;
          const double dxy2 = dx * dx + dy * dy;
          if (dxy2 > max_dist * max_dist) continue;
          for (int q = -nz; q <= nz; ++q) {
            for (int w = 0; w < 2; ++w) {
              const int order = oy + std::abs(q - w) + std::abs(q);
              if (order > order_cap) continue;
              const double dz = (1 - 2 * w) * room.source.z + 2 * q * room.height - room.mic.z;
              const double d = std::sqrt(dxy2 + dz * dz);
              const auto k = static_cast<std::size_t>(std::lround(d * samples_per_meter));
              if (k >= h.size()) continue;
              if (order > 0 && beta == 0.0) continue;
              h.samples[k] += beta_pow[static_cast<std::size_t>(order)] * inv4pi / d;
            }
          }
        }
      }
    }
  }
  return h;
}

// ---------------------------------------------------------------------------
// Convolution and mixing

namespace detail {

inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

/// Full linear convolution of x and h, first `keep` samples.
inline std::vector<double> fft_convolve(std::span<const double> x, std::span<const double> h, std::size_t keep) {
  const std::size_t full = x.size() + h.size() - 1;
  const std::size_t n = next_pow2(full);
  const std::size_t nc = n / 2 + 1;
  auto* bx = fftw_alloc_real(n);
  auto* bh = fftw_alloc_real(n);
  auto* cx = fftw_alloc_complex(nc);
  auto* ch = fftw_alloc_complex(nc);
  fftw_plan px, ph, pinv;
  {
    std::lock_guard lock(fftw_planner_mutex());
    px = fftw_plan_dft_r2c_1d(static_cast<int>(n), bx, cx, FFTW_ESTIMATE);
    ph = fftw_plan_dft_r2c_1d(static_cast<int>(n), bh, ch, FFTW_ESTIMATE);
    pinv = fftw_plan_dft_c2r_1d(static_cast<int>(n), cx, bx, FFTW_ESTIMATE);
  }
  std::fill(bx, bx + n, 0.0);
  std::fill(bh, bh + n, 0.0);
  std::copy(x.begin(), x.end(), bx);
  std::copy(h.begin(), h.end(), bh);
  fftw_execute(px);
  fftw_execute(ph);
  for (std::size_t i = 0; i < nc; ++i) {
    const double re = cx[i][0] * ch[i][0] - cx[i][1] * ch[i][1];
    const double im = cx[i][0] * ch[i][1] + cx[i][1] * ch[i][0];
    cx[i][0] = re;
    cx[i][1] = im;
  }
  fftw_execute(pinv);
  std::vector<double> y(keep);
  const double scale = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < keep; ++i) y[i] = bx[i] * scale;
  {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(px);
    fftw_destroy_plan(ph);
    fftw_destroy_plan(pinv);
  }
  fftw_free(bx);
  fftw_free(bh);
  fftw_free(cx);
  fftw_free(ch);
  return y;
}

inline double peak(std::span<const double> x) {
  double p = 0.0;
  for (double v : x) p = std::max(p, std::abs(v));
  return p;
}

inline void normalize_if_clipping(std::vector<double>& x) {
  const double p = peak(x);
  if (p > 1.0) {
    for (auto& v : x) v /= p;
  }
}

}  // namespace detail

/// Linear convolution trimmed to the input length, scaled down to peak 1.0
/// only if it would clip.
inline Signal reverberate(const Signal& signal, const Signal& rir) {
  if (signal.sample_rate != rir.sample_rate) {
    throw MismatchError("sample rate mismatch: signal " + std::to_string(signal.sample_rate) + " Hz, rir " +
                        std::to_string(rir.sample_rate) + " Hz");
  }
  if (signal.empty() || rir.empty()) return Signal{std::vector<double>(signal.size(), 0.0), signal.sample_rate};
  Signal out{detail::fft_convolve(signal.samples, rir.samples, signal.size()), signal.sample_rate};
  detail::normalize_if_clipping(out.samples);
  return out;
}

inline double population_variance(std::span<const double> x) {
  if (x.empty()) return 0.0;
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  return ss / static_cast<double>(x.size());
}

/// g = sqrt(10^(-snr/10) * var(signal) / (epsilon + var(background))),
/// population variances.
inline double noise_gain(std::span<const double> signal, std::span<const double> background, double snr_db,
                         double epsilon = 1e-12) {
  if (signal.empty()) throw Error("noise_gain: empty signal");
  return std::sqrt(std::pow(10.0, -snr_db / 10.0) * population_variance(signal) /
                   (epsilon + population_variance(background)));
}

/// Background repeated (or truncated) to the signal's length.
inline std::vector<double> tile_to_length(std::span<const double> background, std::size_t n) {
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = background[i % background.size()];
  return out;
}

/// signal + g * tiled background; rescaled to peak 1.0 if it clips. The gain
/// is computed against the background as loaded, before tiling.
inline Signal mix_background(const Signal& signal, const NoiseSpec& spec) {
  if (signal.sample_rate != spec.background.sample_rate) {
    throw MismatchError("sample rate mismatch: signal " + std::to_string(signal.sample_rate) + " Hz, background " +
                        std::to_string(spec.background.sample_rate) + " Hz");
  }
  if (spec.background.empty()) throw Error("mix_background: empty background");
  if (!(spec.epsilon > 0)) throw Error("mix_background: epsilon must be positive");
  if (signal.empty()) return signal;
  const double g = noise_gain(signal.samples, spec.background.samples, spec.snr_db, spec.epsilon);
  const auto bg = tile_to_length(spec.background.samples, signal.size());
  Signal out{std::vector<double>(signal.size()), signal.sample_rate};
  for (std::size_t i = 0; i < signal.size(); ++i) out.samples[i] = signal.samples[i] + g * bg[i];
  detail::normalize_if_clipping(out.samples);
  return out;
}

}  // namespace endow::audio
