#pragma once

#include <string>
#include <vector>

#include "fmanetpp/base.hpp"

namespace fmanet::io {

// 8-bit RGB PNG. Values are mapped [0,1] <-> [0,255] with round-half-up and
// clamping on write.
Tensor read_png(const std::string& path);                 // -> H x W x 3 in [0,1]
void write_png(const std::string& path, const Tensor& img);

// Raw little-endian float32 array + JSON sidecar ("<path>.json") recording
// shape, dtype and element order.
void write_raw_f32(const std::string& path, const Tensor& t);
Tensor read_raw_f32(const std::string& path);

void write_text(const std::string& path, const std::string& text);
std::string read_text(const std::string& path);

}  // namespace fmanet::io
