#include "cds/periodicity.hpp"

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <memory>
#include <mutex>

namespace cds {
namespace {

// Plan creation in FFTW is not thread-safe; execution is.
std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};

class RealFft {
 public:
  explicit RealFft(std::size_t n)
      : n_(n),
        in_(static_cast<double*>(fftw_malloc(sizeof(double) * n))),
        out_(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (n / 2 + 1)))) {
    std::lock_guard lock(fftw_planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in_.get(), out_.get(), FFTW_ESTIMATE);
  }
  ~RealFft() {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(plan_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  double* input() { return in_.get(); }
  void execute() { fftw_execute(plan_); }
  double amplitude(std::size_t k) const { return std::hypot(out_.get()[k][0], out_.get()[k][1]); }
  std::size_t size() const { return n_; }

 private:
  std::size_t n_;
  std::unique_ptr<double, FftwFree> in_;
  std::unique_ptr<fftw_complex, FftwFree> out_;
  fftw_plan plan_ = nullptr;
};

}  // namespace

std::vector<double> aggregate_amplitude_spectrum(const TimeSeries& train) {
  const std::size_t n = train.length();
  const auto& v = train.values();
  std::vector<double> total(n / 2 + 1, 0.0);
  RealFft fft(n);
  for (Eigen::Index m = 0; m < v.cols(); ++m) {
    const double mean = v.col(m).mean();
    for (std::size_t i = 0; i < n; ++i) {
      fft.input()[i] = v(static_cast<Eigen::Index>(i), m) - mean;
    }
    fft.execute();
    for (std::size_t k = 0; k < total.size(); ++k) total[k] += fft.amplitude(k);
  }
  return total;
}

PeriodEstimate dominant_period(const TimeSeries& train) {
  const std::size_t n = train.length();
  if (n < 4) {
    throw Error(ErrorCode::kSeriesTooShort, "period detection needs t_train >= 4");
  }
  const auto spectrum = aggregate_amplitude_spectrum(train);
  std::size_t best_k = 2;
  for (std::size_t k = 3; k <= n / 2; ++k) {
    if (spectrum[k] > spectrum[best_k]) best_k = k;
  }
  if (spectrum[best_k] < 1e-12) {
    throw Error(ErrorCode::kDegenerateSeries, "all channels are constant");
  }
  return {n / best_k, best_k, spectrum[best_k]};
}

}  // namespace cds
