#pragma once

#include "mirrorseg/tensor.hpp"

#include <string>
#include <vector>

namespace mirrorseg {

// Named parameter snapshot. On disk: <path>.json manifest (names, shapes,
// byte offsets) plus <path>.raw little-endian f32 blob; round trips are
// bit-exact.
struct Checkpoint {
    int epoch = 0;
    std::string config_hash;
    std::vector<NamedParam> params;
};

void save_checkpoint(const std::string& path, const std::vector<NamedParam>& params,
                     int epoch, const std::string& config_hash);
Checkpoint load_checkpoint(const std::string& path);

// FNV-1a of an architecture description string.
std::string config_hash_of(const std::string& description);

} // namespace mirrorseg
