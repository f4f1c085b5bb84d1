#pragma once

#include <iostream>
#include <mutex>
#include <stdexcept>
#include <string>

namespace fseg {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error { public: using Error::Error; };
class GeometryError : public Error { public: using Error::Error; };
class AutogradError : public Error { public: using Error::Error; };
class LayoutError : public Error { public: using Error::Error; };
class SymmetryError : public Error { public: using Error::Error; };
class FormatError : public Error { public: using Error::Error; };
class ConfigError : public Error { public: using Error::Error; };
class NumericError : public Error { public: using Error::Error; };

namespace log {

enum class Level { debug = 0, info = 1, warn = 2, error = 3, off = 4 };

inline Level& threshold()
{
    static Level level = Level::info;
    return level;
}

inline void write(Level level, const std::string& msg)
{
    static std::mutex mu;
    if (level < threshold()) return;
    static const char* names[] = {"debug", "info", "warn", "error"};
    std::lock_guard<std::mutex> lock(mu);
    std::clog << "[fseg:" << names[static_cast<int>(level)] << "] " << msg << '\n';
}

inline void debug(const std::string& msg) { write(Level::debug, msg); }
inline void info(const std::string& msg) { write(Level::info, msg); }
inline void warn(const std::string& msg) { write(Level::warn, msg); }

} // namespace log
} // namespace fseg
