#include "qolab/reward.hpp"

#include <cmath>

#include "qolab/errors.hpp"

namespace qolab {

void validate_calibration(const BootstrapCalibration& cal) {
  for (double v : {cal.cost_min, cal.cost_max, cal.latency_min, cal.latency_max})
    if (!std::isfinite(v) || !(v > 0.0)) throw CalibrationError("calibration extrema must be finite and positive");
  if (!(cal.cost_min < cal.cost_max)) throw CalibrationError("calibration has zero cost range");
  if (!(cal.latency_min < cal.latency_max)) throw CalibrationError("calibration has zero latency range");
}

double scale_latency_reward(const BootstrapCalibration& cal, double latency) {
  return cal.cost_min +
         (latency - cal.latency_min) / (cal.latency_max - cal.latency_min) * (cal.cost_max - cal.cost_min);
}

}  // namespace qolab
