#pragma once

#include <vector>

namespace vemd {

// Minimum-cost one-to-one assignment on a rectangular cost matrix
// (rows x cols, row-major). Returns, per row, the assigned column or -1 when
// there are more rows than columns and the row is left out.
std::vector<int> hungarian(const std::vector<std::vector<double>>& cost);

double assignment_cost(const std::vector<std::vector<double>>& cost, const std::vector<int>& rows_to_cols);

}  // namespace vemd
