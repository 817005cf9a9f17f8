#pragma once

namespace qolab {

// Cost and latency extrema observed at the end of cost-reward training.
struct BootstrapCalibration {
  double cost_min = 0.0;
  double cost_max = 1.0;
  double latency_min = 0.0;
  double latency_max = 1.0;

  bool operator==(const BootstrapCalibration&) const = default;
};

// Throws CalibrationError unless cost_min < cost_max, latency_min <
// latency_max, and all four are finite and positive.
void validate_calibration(const BootstrapCalibration& cal);

// Linear map of a latency onto the cost range:
//   cost_min + (l - latency_min) / (latency_max - latency_min) * (cost_max - cost_min)
// Latencies outside [latency_min, latency_max] extrapolate along the same line.
// A monotone non-linear map would slot in here.
double scale_latency_reward(const BootstrapCalibration& cal, double latency);

}  // namespace qolab
