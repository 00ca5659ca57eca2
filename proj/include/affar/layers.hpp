#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

// Primitive kernels with hand-written reverse passes. Tensors are flat
// row-major buffers; a "map" is channels x height x width. Convolutions are
// valid (no padding), stride 1, with (1, k) kernels sliding along width.
// Backward functions accumulate (+=) into parameter gradients.
namespace affar::layers {

struct MapShape {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t size() const { return channels * height * width; }
  bool operator==(const MapShape&) const = default;
};

struct ConvShape {
  MapShape input;
  std::size_t filters = 0;
  std::size_t kernel = 0;

  MapShape output() const { return {filters, input.height, input.width - kernel + 1}; }
  std::size_t weight_size() const { return filters * input.channels * kernel; }
};

// weights: filters x in_channels x kernel.
void conv_forward(const ConvShape& shape, std::span<const double> input, std::span<const double> weights,
                  std::span<const double> bias, std::span<double> output, std::string_view layer = "conv");

// d_input may be empty when the input gradient is not needed.
void conv_backward(const ConvShape& shape, std::span<const double> input, std::span<const double> weights,
                   std::span<const double> d_output, std::span<double> d_weights, std::span<double> d_bias,
                   std::span<double> d_input, std::string_view layer = "conv");

// Non-overlapping max pooling along width; trailing columns that do not fill
// a full pool are dropped. `argmax` receives the flat input index per output.
MapShape pool_output(const MapShape& input, std::size_t width);
void maxpool_forward(const MapShape& input, std::size_t width, std::span<const double> in, std::span<double> out,
                     std::span<std::size_t> argmax, std::string_view layer = "maxpool");
void maxpool_backward(std::span<const double> d_output, std::span<const std::size_t> argmax,
                      std::span<double> d_input);

// weights: out x in.
void dense_forward(std::span<const double> x, std::span<const double> weights, std::span<const double> bias,
                   std::span<double> y, std::string_view layer = "dense");
void dense_backward(std::span<const double> x, std::span<const double> weights, std::span<const double> dy,
                    std::span<double> d_weights, std::span<double> d_bias, std::span<double> dx,
                    std::string_view layer = "dense");

void relu_forward(std::span<const double> pre, std::span<double> out);
// Gradient passes where the pre-activation was strictly positive.
void relu_backward(std::span<const double> pre, std::span<const double> dy, std::span<double> dx);

// Max-subtracted softmax.
std::vector<double> softmax(std::span<const double> logits);
std::vector<double> softmax_backward(std::span<const double> probs, std::span<const double> d_probs);

}  // namespace affar::layers
