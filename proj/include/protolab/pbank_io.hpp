#pragma once

#include <filesystem>

#include "protolab/encoder.hpp"
#include "protolab/prototype_head.hpp"

namespace protolab {

// .pbank: 8-byte magic "PBANK\0\0\1", u32 LE K, u32 LE D, then K*D float32
// LE row-major raw weights. Writable from any framework for auditing.
void write_pbank(const std::filesystem::path& path, const Matrix& raw_weights);
Matrix read_pbank(const std::filesystem::path& path);

// model.bin: full f64 checkpoint (encoder + bank) so a finished run can be
// re-opened for exporting embeddings.
struct ModelCheckpoint {
    Encoder encoder;
    PrototypeBank bank;
};

void write_model(const std::filesystem::path& path, const ModelCheckpoint& model);
ModelCheckpoint read_model(const std::filesystem::path& path);

// Whole-file atomic text write (temp file + rename).
void atomic_write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace protolab
