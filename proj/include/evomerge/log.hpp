// Copyright (c) 2026 The evomerge authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace evomerge {

enum class LogLevel { Quiet = 0, Info = 1, Debug = 2 };

// EVOMERGE_LOG in {quiet, info, debug}; default info
inline LogLevel log_level() {
    static const LogLevel level = [] {
        const char* env = std::getenv("EVOMERGE_LOG");
        if (env == nullptr) return LogLevel::Info;
        if (std::strcmp(env, "quiet") == 0) return LogLevel::Quiet;
        if (std::strcmp(env, "debug") == 0) return LogLevel::Debug;
        return LogLevel::Info;
    }();
    return level;
}

inline void log_at(LogLevel level, const char* fmt, std::va_list args) {
    if (log_level() < level) return;
    std::fputs(level == LogLevel::Debug ? "[debug] " : "[info] ", stderr);
    std::vfprintf(stderr, fmt, args);
    std::fputc('\n', stderr);
}

inline void log_info(const char* fmt, ...) {
    std::va_list args;
    va_start(args, fmt);
    log_at(LogLevel::Info, fmt, args);
    va_end(args);
}

inline void log_debug(const char* fmt, ...) {
    std::va_list args;
    va_start(args, fmt);
    log_at(LogLevel::Debug, fmt, args);
    va_end(args);
}

}  // namespace evomerge
