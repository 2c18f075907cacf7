#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace vidattn {

// One verification result. pass <=> max_error <= tolerance. For counting
// checks max_error is the violation count; for bitwise checks the tolerance
// is exactly 0.
struct CheckResult {
    std::string name;
    double max_error = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

struct CheckOptions {
    // Deliberately corrupts the precomputed neighbor lists the sparse kernel
    // walks (the first-principles mask predicate is left intact), so the
    // sparse/dense cross-check must fail. Proves the self-check has teeth.
    bool corrupt_adjacency = false;
};

// Runs the full numerical verification suite:
//   - cube partition invariants over all small grid/cube combinations
//   - block-sparse vs dense-reference attention equivalence (f64 and f32)
//   - asymmetric joint-mask rules re-derived from first principles
//   - rotary embedding norm preservation, relative-position invariance, and
//     bitwise proxy/detail anchor alignment
//   - bitwise independence of the global stream from detail content
//   - end-to-end analytic gradients vs central finite differences
//   - analytic flop model vs instrumented MAC counts, and the matched-dur
//     frame-rate cost ratio
std::vector<CheckResult> run_check_suite(const CheckOptions& opt = {});

void print_check_table(std::ostream& os, const std::vector<CheckResult>& results);
bool all_pass(const std::vector<CheckResult>& results);

}  // namespace vidattn
