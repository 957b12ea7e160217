#pragma once

// Serial, one-sample-at-a-time network kernels written with plain loops.
// They share no code with the batched kernels in nn.hpp and exist to check
// them (tests) and to measure them (bench).

#include <vector>

#include "unle/nn.hpp"

namespace unle::nn::reference {

std::vector<double> forward(const NetParams& p, const std::vector<double>& input);
std::vector<double> grad_params(const NetParams& p, const std::vector<double>& input);
std::vector<double> grad_input(const NetParams& p, const std::vector<double>& input);
/// d/dparams < grad_x f(input), direction >
std::vector<double> input_grad_param_grad(const NetParams& p,
                                          const std::vector<double>& input,
                                          const std::vector<double>& direction);

}  // namespace unle::nn::reference
