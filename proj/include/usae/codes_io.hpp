#pragma once

#include <filesystem>
#include <string>

#include "usae/binary_io.hpp"
#include "usae/sae.hpp"

namespace usae {

// Code batch body: u64 rows | u32 m | per row: u32 count, count x (u32 index, f32 value).
void put_codes(io::ByteWriter& w, const CodeBatch<float>& codes);
CodeBatch<float> get_codes(io::ByteReader& r);

// Standalone file: "USCB" | u16 version=1 | u32 len + model_id | body.
void write_codes(const CodeBatch<float>& codes, const std::string& model_id, const std::filesystem::path& path);
CodeBatch<float> read_codes(const std::filesystem::path& path, std::string* model_id = nullptr);

}  // namespace usae
