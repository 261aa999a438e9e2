#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

#include "floweval/errors.hpp"

namespace floweval {

// The closed segment-act tagset. The enum order is the declared tagset order;
// argmax ties elsewhere are broken by this order.
enum class SegmentAct : int {
  kQuestion = 0,
  kInform,
  kDirective,
  kCommissive,
  kGreeting,
  kGoodbye,
  kApology,
  kThanking,
  kBackchannelSuccess,
  kBackchannelFailure,
  kCheckUnderstanding,
};

inline constexpr int kNumActs = 11;

inline constexpr std::array<std::string_view, kNumActs> kActNames = {
    "question",
    "inform",
    "directive",
    "commissive",
    "greeting",
    "goodbye",
    "apology",
    "thanking",
    "backchannel-success",
    "backchannel-failure",
    "check-understanding",
};

inline std::string_view act_name(SegmentAct a) {
  return kActNames[static_cast<std::size_t>(a)];
}

inline std::optional<SegmentAct> try_parse_act(std::string_view s) {
  for (int i = 0; i < kNumActs; ++i) {
    if (kActNames[static_cast<std::size_t>(i)] == s) {
      return static_cast<SegmentAct>(i);
    }
  }
  return std::nullopt;
}

// Strict parse: any string outside the tagset is a validation error.
inline SegmentAct parse_act(std::string_view s) {
  if (auto a = try_parse_act(s)) return *a;
  throw ValidationError("unknown segment act label: \"" + std::string(s) + "\"");
}

}  // namespace floweval
