#pragma once

// Independent reference implementations used to derive expected values in
// tests. None of these call into the library code they check.

#include <cstddef>
#include <map>
#include <string>
#include <vector>

namespace palsyfuse::testing {

struct ConfusionOracle {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    double precision = 0.0, recall = 0.0, f1 = 0.0;
};

// Labels are 0/1 ints. Counts come from an explicit 2x2 table.
ConfusionOracle brute_force_metrics(const std::vector<int>& predicted, const std::vector<int>& truth);

// Per-class counts taken by a round-robin over `census` (class -> frames
// available, visited in key order) until `n` frames are taken or every class
// is exhausted.
std::map<int, std::size_t> simulate_round_robin(const std::map<int, std::size_t>& census, std::size_t n);

// Parameter count of a plain chain: each Linear adds in*out + out, each
// BatchNorm adds 2 * width.
struct ChainLayer {
    char kind;  // 'L' linear, 'B' batchnorm, anything else parameter-free
    std::size_t in = 0, out = 0;
};
std::size_t chain_parameter_count(const std::vector<ChainLayer>& layers);

// Expected trainable parameter counts of the built-in plans, tallied by hand
// from their layer tables.
std::size_t expected_ffn_expression_params();
std::size_t expected_ffn_coordinates_params();
std::size_t expected_ffn_handcrafted_params();
std::size_t expected_fusion_head_params(std::size_t input_width);

// Naive late fusion decision.
int late_fusion_label(double pa, double pb);

}  // namespace palsyfuse::testing
