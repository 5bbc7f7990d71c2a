#pragma once

#include <cstddef>
#include <vector>

#include "cds/core.hpp"

namespace cds {

struct PeriodEstimate {
  std::size_t period = 0;                    // floor(t_train / k)
  std::size_t dominant_frequency_index = 0;  // k in {2, ..., floor(t_train / 2)}
  double aggregate_amplitude = 0.0;
};

// Per-bin amplitude |FFT(x - mean(x))|_k summed over channels, for
// k = 0 .. floor(n / 2). Bins 0 and 1 are returned but never selected.
std::vector<double> aggregate_amplitude_spectrum(const TimeSeries& train);

// Dominant period of the (training) series: the bin k >= 2 with the largest
// channel-summed amplitude, smallest k on exact ties.
PeriodEstimate dominant_period(const TimeSeries& train);

}  // namespace cds
