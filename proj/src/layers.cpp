#include "affar/layers.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "affar/error.hpp"

namespace affar::layers {
namespace {

void expect(bool ok, std::string_view layer, const char* what) {
  if (!ok) throw ShapeError(std::string(layer) + ": " + what);
}

}  // namespace

void conv_forward(const ConvShape& shape, std::span<const double> input, std::span<const double> weights,
                  std::span<const double> bias, std::span<double> output, std::string_view layer) {
  const auto& in = shape.input;
  expect(shape.kernel >= 1 && shape.kernel <= in.width, layer, "kernel wider than input");
  const MapShape out = shape.output();
  expect(input.size() == in.size(), layer, "input size mismatch");
  expect(weights.size() == shape.weight_size(), layer, "weight size mismatch");
  expect(bias.size() == shape.filters, layer, "bias size mismatch");
  expect(output.size() == out.size(), layer, "output size mismatch");
  const std::size_t k = shape.kernel;
  for (std::size_t f = 0; f < shape.filters; ++f) {
    for (std::size_t h = 0; h < in.height; ++h) {
      double* dst = output.data() + (f * out.height + h) * out.width;
      std::fill(dst, dst + out.width, bias[f]);
      for (std::size_t c = 0; c < in.channels; ++c) {
        const double* src = input.data() + (c * in.height + h) * in.width;
        const double* w = weights.data() + (f * in.channels + c) * k;
        for (std::size_t x = 0; x < out.width; ++x) {
          double s = 0.0;
          for (std::size_t j = 0; j < k; ++j) s += w[j] * src[x + j];
          dst[x] += s;
        }
      }
    }
  }
}

void conv_backward(const ConvShape& shape, std::span<const double> input, std::span<const double> weights,
                   std::span<const double> d_output, std::span<double> d_weights, std::span<double> d_bias,
                   std::span<double> d_input, std::string_view layer) {
  const auto& in = shape.input;
  const MapShape out = shape.output();
  expect(input.size() == in.size(), layer, "input size mismatch");
  expect(weights.size() == shape.weight_size() && d_weights.size() == weights.size(), layer,
         "weight size mismatch");
  expect(d_bias.size() == shape.filters, layer, "bias size mismatch");
  expect(d_output.size() == out.size(), layer, "output gradient size mismatch");
  const bool want_input = !d_input.empty();
  expect(!want_input || d_input.size() == in.size(), layer, "input gradient size mismatch");
  if (want_input) std::fill(d_input.begin(), d_input.end(), 0.0);
  const std::size_t k = shape.kernel;
  for (std::size_t f = 0; f < shape.filters; ++f) {
    for (std::size_t h = 0; h < in.height; ++h) {
      const double* g = d_output.data() + (f * out.height + h) * out.width;
      for (std::size_t x = 0; x < out.width; ++x) d_bias[f] += g[x];
      for (std::size_t c = 0; c < in.channels; ++c) {
        const double* src = input.data() + (c * in.height + h) * in.width;
        const double* w = weights.data() + (f * in.channels + c) * k;
        double* dw = d_weights.data() + (f * in.channels + c) * k;
        for (std::size_t j = 0; j < k; ++j) {
          double s = 0.0;
          for (std::size_t x = 0; x < out.width; ++x) s += g[x] * src[x + j];
          dw[j] += s;
        }
        if (want_input) {
          double* di = d_input.data() + (c * in.height + h) * in.width;
          for (std::size_t x = 0; x < out.width; ++x) {
            for (std::size_t j = 0; j < k; ++j) di[x + j] += g[x] * w[j];
          }
        }
      }
    }
  }
}

MapShape pool_output(const MapShape& input, std::size_t width) {
  return {input.channels, input.height, width == 0 ? 0 : input.width / width};
}

void maxpool_forward(const MapShape& input, std::size_t width, std::span<const double> in, std::span<double> out,
                     std::span<std::size_t> argmax, std::string_view layer) {
  expect(width >= 1 && width <= input.width, layer, "pool width out of range");
  const MapShape o = pool_output(input, width);
  expect(in.size() == input.size(), layer, "input size mismatch");
  expect(out.size() == o.size() && argmax.size() == o.size(), layer, "output size mismatch");
  for (std::size_t row = 0; row < input.channels * input.height; ++row) {
    for (std::size_t x = 0; x < o.width; ++x) {
      const std::size_t start = row * input.width + x * width;
      std::size_t best = start;
      for (std::size_t j = 1; j < width; ++j) {
        if (in[start + j] > in[best]) best = start + j;
      }
      out[row * o.width + x] = in[best];
      argmax[row * o.width + x] = best;
    }
  }
}

void maxpool_backward(std::span<const double> d_output, std::span<const std::size_t> argmax,
                      std::span<double> d_input) {
  if (d_output.size() != argmax.size()) throw ShapeError("maxpool: gradient size mismatch");
  std::fill(d_input.begin(), d_input.end(), 0.0);
  for (std::size_t i = 0; i < d_output.size(); ++i) d_input[argmax[i]] += d_output[i];
}

void dense_forward(std::span<const double> x, std::span<const double> weights, std::span<const double> bias,
                   std::span<double> y, std::string_view layer) {
  expect(bias.size() == y.size(), layer, "bias size mismatch");
  expect(weights.size() == y.size() * x.size(), layer, "weight size mismatch");
  const std::size_t n = x.size();
  for (std::size_t o = 0; o < y.size(); ++o) {
    const double* w = weights.data() + o * n;
    double s = bias[o];
    for (std::size_t i = 0; i < n; ++i) s += w[i] * x[i];
    y[o] = s;
  }
}

void dense_backward(std::span<const double> x, std::span<const double> weights, std::span<const double> dy,
                    std::span<double> d_weights, std::span<double> d_bias, std::span<double> dx,
                    std::string_view layer) {
  const std::size_t n = x.size();
  expect(weights.size() == dy.size() * n && d_weights.size() == weights.size(), layer, "weight size mismatch");
  expect(d_bias.size() == dy.size(), layer, "bias size mismatch");
  const bool want_input = !dx.empty();
  expect(!want_input || dx.size() == n, layer, "input gradient size mismatch");
  if (want_input) std::fill(dx.begin(), dx.end(), 0.0);
  for (std::size_t o = 0; o < dy.size(); ++o) {
    const double g = dy[o];
    if (g == 0.0) continue;
    d_bias[o] += g;
    double* dw = d_weights.data() + o * n;
    const double* w = weights.data() + o * n;
    for (std::size_t i = 0; i < n; ++i) dw[i] += g * x[i];
    if (want_input) {
      for (std::size_t i = 0; i < n; ++i) dx[i] += g * w[i];
    }
  }
}

void relu_forward(std::span<const double> pre, std::span<double> out) {
  if (pre.size() != out.size()) throw ShapeError("relu: size mismatch");
  for (std::size_t i = 0; i < pre.size(); ++i) out[i] = pre[i] > 0.0 ? pre[i] : 0.0;
}

void relu_backward(std::span<const double> pre, std::span<const double> dy, std::span<double> dx) {
  if (pre.size() != dy.size() || dy.size() != dx.size()) throw ShapeError("relu: size mismatch");
  for (std::size_t i = 0; i < pre.size(); ++i) dx[i] = pre[i] > 0.0 ? dy[i] : 0.0;
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw ShapeError("softmax: empty input");
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

std::vector<double> softmax_backward(std::span<const double> probs, std::span<const double> d_probs) {
  if (probs.size() != d_probs.size()) throw ShapeError("softmax: gradient size mismatch");
  double dot = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) dot += probs[i] * d_probs[i];
  std::vector<double> out(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) out[i] = probs[i] * (d_probs[i] - dot);
  return out;
}

}  // namespace affar::layers
