#pragma once

#include <functional>
#include <vector>

#include "srpvqa/nn.hpp"

namespace srpvqa::testing_support {

inline Tensor randn(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  return random_normal(r, c, 1.0, rng);
}

// Smooth scalar readout so that every output coordinate gets a distinct weight.
inline Var readout(Tape& t, Var y, std::uint64_t seed = 99) {
  Rng rng(seed);
  const Tensor w = random_normal(y.rows(), y.cols(), 1.0, rng);
  return ops::sum(ops::mul(y, t.constant(w.reshaped(y.shape()))));
}


// Every registered op with input shapes for grad_check.
struct OpCase {
  const char* name;
  std::function<Var(Tape&, const std::vector<Var>&)> fn;
  std::vector<Shape> shapes;
};

inline std::vector<OpCase> op_cases() {
  return {
      {"add", [](Tape& t, const auto& v) { return readout(t, ops::add(v[0], v[1])); }, {{2, 3}, {2, 3}}},
      {"sub", [](Tape& t, const auto& v) { return readout(t, ops::sub(v[0], v[1])); }, {{2, 3}, {2, 3}}},
      {"mul", [](Tape& t, const auto& v) { return readout(t, ops::mul(v[0], v[1])); }, {{2, 3}, {2, 3}}},
      {"scale", [](Tape& t, const auto& v) { return readout(t, ops::scale(v[0], -1.7)); }, {{2, 3}}},
      {"add_row", [](Tape& t, const auto& v) { return readout(t, ops::add_row(v[0], v[1])); }, {{3, 4}, {1, 4}}},
      {"matmul", [](Tape& t, const auto& v) { return readout(t, ops::matmul(v[0], v[1])); }, {{2, 3}, {3, 4}}},
      {"transpose", [](Tape& t, const auto& v) { return readout(t, ops::transpose(v[0])); }, {{2, 3}}},
      {"relu", [](Tape& t, const auto& v) { return readout(t, ops::relu(v[0])); }, {{3, 3}}},
      {"softmax_rows", [](Tape& t, const auto& v) { return readout(t, ops::softmax(v[0], 1)); }, {{3, 4}}},
      {"softmax_cols", [](Tape& t, const auto& v) { return readout(t, ops::softmax(v[0], 0)); }, {{3, 4}}},
      {"layer_norm", [](Tape& t, const auto& v) { return readout(t, ops::layer_norm(v[0], v[1], v[2])); },
       {{3, 5}, {1, 5}, {1, 5}}},
      {"concat_cols", [](Tape& t, const auto& v) { return readout(t, ops::concat_cols({v[0], v[1]})); },
       {{2, 3}, {2, 2}}},
      {"concat_rows", [](Tape& t, const auto& v) { return readout(t, ops::concat_rows({v[0], v[1]})); },
       {{2, 3}, {1, 3}}},
      {"slice_cols", [](Tape& t, const auto& v) { return readout(t, ops::slice_cols(v[0], 1, 2)); }, {{3, 4}}},
      {"mean_rows", [](Tape& t, const auto& v) { return readout(t, ops::mean_rows(v[0])); }, {{4, 3}}},
      {"repeat_rows", [](Tape& t, const auto& v) { return readout(t, ops::repeat_rows(v[0], 3)); }, {{1, 4}}},
      {"reshape", [](Tape& t, const auto& v) { return readout(t, ops::reshape(v[0], Shape{3, 2})); }, {{2, 3}}},
      {"gather_rows", [](Tape& t, const auto& v) { return readout(t, ops::gather_rows(v[0], {2, 0, 2})); }, {{3, 2}}},
      {"sum", [](Tape&, const auto& v) { return ops::sum(ops::mul(v[0], v[0])); }, {{2, 3}}},
      {"cross_entropy", [](Tape&, const auto& v) { return ops::cross_entropy(v[0], 2); }, {{1, 5}}},
  };
}

// Draws op inputs for one check point; relu inputs are kept away from the kink.
inline std::vector<Tensor> op_inputs(const OpCase& c, std::uint64_t point) {
  std::vector<Tensor> inputs;
  for (std::size_t i = 0; i < c.shapes.size(); ++i) {
    Tensor x = randn(c.shapes[i][0], c.shapes[i][1], 100 * point + i);
    for (double& v : x.data())
      if (std::abs(v) < 1e-3) v = 0.5;
    inputs.push_back(std::move(x));
  }
  return inputs;
}

}  // namespace srpvqa::testing_support
