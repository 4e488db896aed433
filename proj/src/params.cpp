#include "ifa/params.hpp"

#include <algorithm>
#include <string>

#include "ifa/errors.hpp"

namespace ifa {

const ParamBlock& ParamLayout::block_of(std::size_t index) const {
  for (const auto& b : blocks) {
    if (index >= b.offset && index < b.offset + b.size) return b;
  }
  throw ConfigError("parameter index " + std::to_string(index) + " outside layout");
}

ParamLayout make_layout(const ItemBank& bank, const EncoderParams& enc) {
  ParamLayout layout;
  auto add = [&](std::string name, std::size_t size) {
    layout.blocks.push_back({std::move(name), layout.size, size});
    layout.size += size;
  };
  add("loadings", bank.loadings.size());
  add("intercepts", bank.raw_intercepts.size());
  layout.encoder_offset = layout.size;
  for (std::size_t l = 0; l < enc.layers.size(); ++l) {
    add("encoder.W" + std::to_string(l + 1), enc.layers[l].weights.size());
    add("encoder.b" + std::to_string(l + 1), enc.layers[l].bias.size());
  }
  return layout;
}

void pack_into(const ItemBank& bank, const EncoderParams& enc, std::span<double> out) {
  auto it = out.begin();
  it = std::copy(bank.loadings.begin(), bank.loadings.end(), it);
  it = std::copy(bank.raw_intercepts.begin(), bank.raw_intercepts.end(), it);
  for (const auto& l : enc.layers) {
    it = std::copy(l.weights.begin(), l.weights.end(), it);
    it = std::copy(l.bias.begin(), l.bias.end(), it);
  }
}

std::vector<double> pack(const ItemBank& bank, const EncoderParams& enc) {
  std::vector<double> xi(make_layout(bank, enc).size);
  pack_into(bank, enc, xi);
  return xi;
}

void unpack(std::span<const double> xi, ItemBank& bank, EncoderParams& enc) {
  auto it = xi.begin();
  auto take = [&it](std::vector<double>& dst) {
    std::copy(it, it + static_cast<std::ptrdiff_t>(dst.size()), dst.begin());
    it += static_cast<std::ptrdiff_t>(dst.size());
  };
  take(bank.loadings);
  take(bank.raw_intercepts);
  for (auto& l : enc.layers) {
    take(l.weights);
    take(l.bias);
  }
}

}  // namespace ifa
