#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ifa/encoder.hpp"
#include "ifa/grm.hpp"

namespace ifa {

// Flat parameter vector xi = (theta_raw, phi) with a block index map. The
// order is: loadings (J x P), raw intercepts, then for each encoder layer its
// weights followed by its bias.
struct ParamBlock {
  std::string name;
  std::size_t offset;
  std::size_t size;
};

struct ParamLayout {
  std::vector<ParamBlock> blocks;
  std::size_t size = 0;
  std::size_t encoder_offset = 0;

  const ParamBlock& block_of(std::size_t index) const;
};

ParamLayout make_layout(const ItemBank& bank, const EncoderParams& enc);

std::vector<double> pack(const ItemBank& bank, const EncoderParams& enc);
void pack_into(const ItemBank& bank, const EncoderParams& enc, std::span<double> out);
void unpack(std::span<const double> xi, ItemBank& bank, EncoderParams& enc);

}  // namespace ifa
