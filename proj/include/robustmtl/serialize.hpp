#pragma once

#include <iosfwd>
#include <string>

#include "robustmtl/tensor.hpp"

namespace rmtl {

// TNSR record: one ASCII header line "TNSR <ndim> <d0> <d1> ...\n"
// followed by numel little-endian 32-bit floats. Used for checkpoints.
void write_tnsr(std::ostream& out, const Tensor& t);
Tensor read_tnsr(std::istream& in, const std::string& context = "");

void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

// Raw depth map: "DMAP <H> <W>\n" + H*W little-endian float32, row-major.
void write_dmap(std::ostream& out, int h, int w, const float* data);
void read_dmap(std::istream& in, int& h, int& w, std::vector<float>& data,
               const std::string& context = "");

// FNV-1a over a whole file; used for manifest input hashes.
std::uint64_t hash_file(const std::string& path);

}  // namespace rmtl
