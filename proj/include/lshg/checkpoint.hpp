#pragma once

#include <string>

#include "lshg/network.hpp"

namespace lshg {

// File layout: magic "LSHG", version byte 1, u64le manifest length, JSON
// manifest (config and a name-sorted tensor directory), then raw little-endian
// IEEE-754 tensor data. Offsets are relative to the data section, which starts
// right after the manifest; every tensor offset is 64-byte aligned.
template <typename T>
void save_checkpoint(const StackedHourglass<T>& net, const std::string& path);

template <typename T>
StackedHourglass<T> load_checkpoint(const std::string& path, const NetworkConfig& config);

}  // namespace lshg
