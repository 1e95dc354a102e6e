#include "afape/encoding.hpp"

#include <algorithm>

namespace afape {

StateActionEncoder::StateActionEncoder(const SuperfeatureSchema& schema, std::vector<std::size_t> conditioning_columns)
    : raw_width_(schema.raw_width()),
      costly_(schema.costly()),
      slot_(schema.size(), -1),
      conditioning_(std::move(conditioning_columns)) {
  for (std::size_t k = 0; k < costly_.size(); ++k) slot_[costly_[k]] = static_cast<int>(k);
  for (std::size_t c : conditioning_) {
    if (c >= raw_width_) throw Error("conditioning column out of range");
  }
}

void StateActionEncoder::encode(const AcquisitionState& state, int action, std::span<const double> x_o,
                                double* out) const {
  const auto values = state.values();
  const auto& schema = state.schema();
  for (std::size_t c = 0; c < raw_width_; ++c) out[c] = state.has(schema.owner(c)) ? values[c] : 0.0;
  double* bits = out + raw_width_;
  for (std::size_t k = 0; k < costly_.size(); ++k) bits[k] = state.has(costly_[k]) ? 1.0 : 0.0;
  double* onehot = bits + costly_.size();
  std::fill(onehot, onehot + costly_.size() + 1, 0.0);
  if (action == kStop) {
    onehot[costly_.size()] = 1.0;
  } else {
    const int s = slot_.at(static_cast<std::size_t>(action));
    if (s < 0) throw Error("free superfeature is not an action");
    onehot[s] = 1.0;
  }
  double* xo = onehot + costly_.size() + 1;
  std::copy(x_o.begin(), x_o.end(), xo);
}

std::vector<double> StateActionEncoder::encode(const AcquisitionState& state, int action,
                                               std::span<const double> x_o) const {
  std::vector<double> out(width());
  encode(state, action, x_o, out.data());
  return out;
}

std::vector<double> StateActionEncoder::conditioning_values(const RowView& row) const {
  std::vector<double> out;
  out.reserve(conditioning_.size());
  for (std::size_t c : conditioning_) out.push_back(row.values[c]);
  return out;
}

nlohmann::json StateActionEncoder::to_json() const { return {{"conditioning_columns", conditioning_}}; }

StateActionEncoder StateActionEncoder::from_json(const nlohmann::json& j, const SuperfeatureSchema& schema) {
  return StateActionEncoder(schema, j.at("conditioning_columns").get<std::vector<std::size_t>>());
}

}  // namespace afape
