#include "transrank/transforms/temporal.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace transrank {

namespace {

std::string format_rate(double rate) {
  std::ostringstream os;
  os << rate;
  return os.str();
}

double parse_rate(std::string_view digits, std::string_view token) {
  if (digits.empty()) throw std::invalid_argument("bad transform token '" + std::string(token) + "'");
  std::size_t used = 0;
  double rate = 0;
  try {
    rate = std::stod(std::string(digits), &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != digits.size() || !(rate > 0) || !std::isfinite(rate)) {
    throw std::invalid_argument("bad transform rate in '" + std::string(token) + "'");
  }
  return rate;
}

void validate(const ClipSpec& spec) {
  const auto& t = spec.transform;
  if (!(t.rate > 0)) throw std::invalid_argument("transform rate must be positive");
  if (t.base_interval < 1) throw std::invalid_argument("base interval must be >= 1");
  if (spec.clip_length < 2) throw std::invalid_argument("clip length must be >= 2");
  if (!(spec.jitter > 0)) throw std::invalid_argument("jitter must be positive");
}

}  // namespace

std::string TemporalTransform::label() const {
  switch (kind) {
    case TemporalKind::Speed:
      return format_rate(rate) + "x";
    case TemporalKind::Reverse:
      return rate == 1.0 ? "rev" : "rev" + format_rate(rate) + "x";
    case TemporalKind::Palindrome:
      return rate == 1.0 ? "palindrome" : "palindrome" + format_rate(rate) + "x";
    case TemporalKind::Shuffle:
      return "shuffle";
  }
  return "?";
}

TemporalTransform parse_transform(std::string_view token) {
  if (token == "rev") return TemporalTransform::reverse();
  if (token == "palindrome") return TemporalTransform::palindrome();
  if (token == "shuffle") return TemporalTransform::shuffle();
  if (token.size() < 2 || token.back() != 'x') {
    throw std::invalid_argument("unknown transform '" + std::string(token) + "'");
  }
  const auto body = token.substr(0, token.size() - 1);
  if (body.starts_with("rev")) return TemporalTransform::reverse(parse_rate(body.substr(3), token));
  if (body.starts_with("palindrome")) {
    return TemporalTransform::palindrome(parse_rate(body.substr(10), token));
  }
  return TemporalTransform::speed(parse_rate(body, token));
}

std::vector<TemporalTransform> parse_transform_list(std::string_view list) {
  std::vector<TemporalTransform> out;
  std::size_t start = 0;
  while (start <= list.size()) {
    const auto comma = list.find(',', start);
    const auto end = comma == std::string_view::npos ? list.size() : comma;
    auto token = list.substr(start, end - start);
    while (!token.empty() && token.front() == ' ') token.remove_prefix(1);
    while (!token.empty() && token.back() == ' ') token.remove_suffix(1);
    out.push_back(parse_transform(token));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t j = i + 1; j < out.size(); ++j) {
      if (out[i] == out[j]) {
        throw std::invalid_argument("duplicate transform '" + out[i].label() + "'");
      }
    }
  }
  return out;
}

std::string format_transform_list(std::span<const TemporalTransform> set) {
  std::string out;
  for (const auto& t : set) {
    if (!out.empty()) out += ",";
    out += t.label();
  }
  return out;
}

VideoTooShortError::VideoTooShortError(std::size_t required, std::size_t actual)
    : std::runtime_error("video too short: " + std::to_string(actual) +
                         " frames, the transform set needs at least " +
                         std::to_string(required)),
      required_length(required) {}

std::size_t max_index_offset(const TemporalTransform& t, std::size_t clip_length, double jitter) {
  const double step = t.base_interval * t.effective_rate() * jitter;
  return static_cast<std::size_t>(std::llround(static_cast<double>(clip_length - 1) * step));
}

std::size_t required_span(std::span<const TemporalTransform> set, std::size_t clip_length,
                          double max_jitter) {
  std::size_t widest = 0;
  for (const auto& t : set) widest = std::max(widest, max_index_offset(t, clip_length, max_jitter));
  return widest + 1;
}

std::vector<std::size_t> index_sequence(const ClipSpec& spec, Rng* rng) {
  validate(spec);
  const auto& t = spec.transform;
  const std::size_t l = spec.clip_length;
  const double step = t.base_interval * t.effective_rate() * spec.jitter;
  auto position = [&](double multiplier) {
    return spec.offset + static_cast<std::size_t>(std::llround(multiplier * step));
  };

  std::vector<std::size_t> idx(l);
  switch (t.kind) {
    case TemporalKind::Speed:
    case TemporalKind::Shuffle:
      for (std::size_t k = 0; k < l; ++k) idx[k] = position(static_cast<double>(k));
      break;
    case TemporalKind::Reverse:
      for (std::size_t k = 0; k < l; ++k) idx[l - 1 - k] = position(static_cast<double>(k));
      break;
    case TemporalKind::Palindrome: {
      // Even multipliers ascending, then odd multipliers descending:
      // [0, 2, ..., l-2, l-1, l-3, ..., 1] for even l.
      std::size_t k = 0;
      for (std::size_t m = 0; m < l; m += 2) idx[k++] = position(static_cast<double>(m));
      const std::size_t top_odd = (l - 1) % 2 == 1 ? l - 1 : l - 2;
      for (std::size_t m = top_odd + 2; m >= 3;) {
        m -= 2;
        idx[k++] = position(static_cast<double>(m));
      }
      break;
    }
  }
  if (t.kind == TemporalKind::Shuffle) {
    if (rng == nullptr) throw std::invalid_argument("shuffle needs a random generator");
    std::shuffle(idx.begin(), idx.end(), *rng);
  }

  const std::size_t highest = *std::max_element(idx.begin(), idx.end());
  if (highest >= spec.video_length) {
    throw ClipRangeError("clip " + t.label() + " at offset " + std::to_string(spec.offset) +
                         " reaches frame " + std::to_string(highest) + " of a " +
                         std::to_string(spec.video_length) + "-frame video");
  }
  return idx;
}

std::vector<std::size_t> sample_offsets(std::size_t video_length, std::size_t clip_length,
                                        std::span<const TemporalTransform> set, std::size_t count,
                                        Rng& rng, double max_jitter) {
  const std::size_t span = required_span(set, clip_length, max_jitter);
  if (span > video_length) throw VideoTooShortError(span, video_length);
  const std::size_t choices = video_length - span + 1;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::size_t> offsets(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double u = (static_cast<double>(i) + unit(rng)) / static_cast<double>(count);
    offsets[i] = std::min(choices - 1, static_cast<std::size_t>(u * static_cast<double>(choices)));
  }
  return offsets;
}

double jitter_factor(Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  return dist(rng);
}

}  // namespace transrank
