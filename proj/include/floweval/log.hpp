#pragma once

#include <chrono>
#include <cstdio>
#include <ctime>
#include <initializer_list>
#include <iostream>
#include <string>
#include <utility>

namespace floweval {

// Structured stderr log line: ISO timestamp, stage, key=value pairs.
// Results never go to stderr; this is progress reporting only.
inline void log_line(const std::string& stage,
                     std::initializer_list<std::pair<std::string, std::string>> fields = {}) {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  std::cerr << buf << " stage=" << stage;
  for (const auto& [k, v] : fields) std::cerr << " " << k << "=" << v;
  std::cerr << "\n";
}

}  // namespace floweval
