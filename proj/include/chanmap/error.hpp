#pragma once

#include <stdexcept>
#include <string>

namespace chanmap {

// Every failure the library raises carries a short machine-readable tag so the
// CLI can print one-line "error[TAG] message" diagnostics.
class Error : public std::runtime_error {
public:
    Error(std::string tag, const std::string& message)
        : std::runtime_error(message), tag_(std::move(tag)) {}

    const std::string& tag() const { return tag_; }

private:
    std::string tag_;
};

[[noreturn]] inline void fail(const std::string& tag, const std::string& message) {
    throw Error(tag, message);
}

inline void check(bool ok, const std::string& tag, const std::string& message) {
    if (!ok) fail(tag, message);
}

} // namespace chanmap
