#pragma once

#include <functional>
#include <iostream>
#include <mutex>
#include <string>
#include <string_view>

namespace epd::log {

enum class Level { Info, Warn };

using Sink = std::function<void(Level, std::string_view)>;

namespace detail {
inline std::mutex& mutex() {
  static std::mutex m;
  return m;
}
inline Sink& sink() {
  static Sink s = [](Level level, std::string_view msg) {
    std::cerr << (level == Level::Warn ? "warning: " : "") << msg << '\n';
  };
  return s;
}
}  // namespace detail

/// Replaces the process-wide sink and returns the previous one.
inline Sink set_sink(Sink sink) {
  std::lock_guard lock(detail::mutex());
  std::swap(detail::sink(), sink);
  return sink;
}

inline void write(Level level, std::string_view msg) {
  std::lock_guard lock(detail::mutex());
  if (detail::sink()) detail::sink()(level, msg);
}

inline void info(std::string_view msg) { write(Level::Info, msg); }
inline void warn(std::string_view msg) { write(Level::Warn, msg); }

/// Installs a sink for the lifetime of the guard (tests capture warnings this way).
class ScopedSink {
 public:
  explicit ScopedSink(Sink sink) : previous_(set_sink(std::move(sink))) {}
  ~ScopedSink() { set_sink(std::move(previous_)); }
  ScopedSink(const ScopedSink&) = delete;
  ScopedSink& operator=(const ScopedSink&) = delete;

 private:
  Sink previous_;
};

}  // namespace epd::log
