#pragma once

#include "afape/core.hpp"

#include <json.hpp>
#include <vector>

namespace afape {

// Flat encoding of (acquisition state, pending action, conditioning values)
// shared by fitted-Q models:
//   [raw values (0 where unacquired) | costly acquired bits | action one-hot over costly + STOP | x_o]
class StateActionEncoder {
 public:
  StateActionEncoder() = default;
  StateActionEncoder(const SuperfeatureSchema& schema, std::vector<std::size_t> conditioning_columns);

  std::size_t width() const { return raw_width_ + 2 * costly_.size() + 1 + conditioning_.size(); }
  const std::vector<std::size_t>& conditioning_columns() const { return conditioning_; }

  void encode(const AcquisitionState& state, int action, std::span<const double> x_o, double* out) const;
  std::vector<double> encode(const AcquisitionState& state, int action, std::span<const double> x_o) const;

  // Conditioning values of a retrospective row. Unobserved columns read as 0.
  std::vector<double> conditioning_values(const RowView& row) const;

  nlohmann::json to_json() const;
  static StateActionEncoder from_json(const nlohmann::json& j, const SuperfeatureSchema& schema);

 private:
  std::size_t raw_width_ = 0;
  std::vector<std::size_t> costly_;
  std::vector<int> slot_;  // superfeature -> position among costly, -1 for free
  std::vector<std::size_t> conditioning_;
};

}  // namespace afape
