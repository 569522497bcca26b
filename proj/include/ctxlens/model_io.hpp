#pragma once

#include <iosfwd>
#include <string>

#include "ctxlens/model.hpp"

namespace ctxlens {

// Two on-disk encodings of the same self-describing container: a binary
// format (magic "CTXLENS1", named config fields, then named dense tensors as
// little-endian 64-bit floats, row-major) and a line-oriented text manifest
// with identical field and tensor names, meant for tiny hand-written models.
// load_model sniffs the magic and accepts either.

ModelWeights load_model(const std::string& path);
void save_model_binary(const ModelWeights& weights, const std::string& path);
void save_model_text(const ModelWeights& weights, const std::string& path);

ModelWeights read_model_binary(std::istream& in);
ModelWeights read_model_text(std::istream& in);

} // namespace ctxlens
