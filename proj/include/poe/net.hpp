#pragma once

// Planar world model: base stations define Voronoi cells, DSRC is an
// inclusive disk of fixed radius.

#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <vector>

#include "poe/crypto.hpp"
#include "poe/error.hpp"

namespace poe {

struct Position {
  double x = 0.0;  // meters
  double y = 0.0;
  friend bool operator==(const Position&, const Position&) = default;
};

inline double distance(const Position& a, const Position& b) { return std::hypot(a.x - b.x, a.y - b.y); }

struct Velocity {
  double vx = 0.0;  // m/s
  double vy = 0.0;
};

struct CellId {
  std::uint32_t value = 0;
  friend constexpr auto operator<=>(CellId, CellId) = default;
};

struct BaseStation {
  CellId id;
  Position position;
};

struct VehicleState {
  Position position;
  Velocity velocity;
};

inline constexpr double kDefaultDsrcRange = 300.0;

struct WorldState {
  std::map<VehicleId, VehicleState> vehicles;
  std::vector<BaseStation> base_stations;
  double dsrc_range = kDefaultDsrcRange;

  const VehicleState& at(VehicleId id) const {
    auto it = vehicles.find(id);
    if (it == vehicles.end()) throw Error(ErrorKind::UnknownVehicle, "vehicle " + to_string(id) + " not in world");
    return it->second;
  }
};

/// Nearest station by Euclidean distance; ties go to the smallest CellId.
inline CellId assign_cell(const Position& p, const std::vector<BaseStation>& stations) {
  if (stations.empty()) throw Error(ErrorKind::NoBaseStations, "cannot assign a cell without base stations");
  const BaseStation* best = &stations.front();
  double best_d2 = 0.0;
  bool first = true;
  for (const auto& s : stations) {
    const double dx = p.x - s.position.x;
    const double dy = p.y - s.position.y;
    const double d2 = dx * dx + dy * dy;
    if (first || d2 < best_d2 || (d2 == best_d2 && s.id < best->id)) {
      best = &s;
      best_d2 = d2;
      first = false;
    }
  }
  return best->id;
}

/// Every vehicle sharing a cell with any accident vehicle, accident vehicles included.
inline std::set<VehicleId> vehicular_network(const std::set<VehicleId>& accident_ids, const WorldState& world) {
  std::set<CellId> cells;
  for (auto id : accident_ids) cells.insert(assign_cell(world.at(id).position, world.base_stations));
  std::set<VehicleId> out(accident_ids.begin(), accident_ids.end());
  for (const auto& [id, v] : world.vehicles) {
    if (cells.contains(assign_cell(v.position, world.base_stations))) out.insert(id);
  }
  return out;
}

/// Vehicles within dsrc_range of `from`, boundary inclusive.
inline std::set<VehicleId> dsrc_reachable(const Position& from, const WorldState& world) {
  std::set<VehicleId> out;
  for (const auto& [id, v] : world.vehicles) {
    if (distance(from, v.position) <= world.dsrc_range) out.insert(id);
  }
  return out;
}

}  // namespace poe
