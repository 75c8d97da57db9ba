#pragma once

#include <stdexcept>
#include <string>

namespace mirrorseg {

// Error with a short machine-parseable category ("io", "config", "data",
// "train", "infer", "eval"). The CLI prints "error: <category>: <what>".
class Error : public std::runtime_error {
public:
    Error(std::string category, const std::string& message)
        : std::runtime_error(message), category_(std::move(category)) {}

    const std::string& category() const { return category_; }

private:
    std::string category_;
};

} // namespace mirrorseg
