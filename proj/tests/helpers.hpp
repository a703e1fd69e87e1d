#pragma once

#include <cmath>
#include <filesystem>
#include <string>

#include "masklab/error.hpp"

namespace testutil {

/// Fresh scratch directory under the build tree.
inline std::filesystem::path scratch(const std::string &name) {
    const std::filesystem::path dir = std::filesystem::path(MASKLAB_TEST_TMP) / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

template <typename F> masklab::ErrorKind error_kind(F &&f) {
    try {
        f();
    } catch (const masklab::Error &e) {
        return e.kind();
    }
    throw std::runtime_error("expected masklab::Error");
}

} // namespace testutil
