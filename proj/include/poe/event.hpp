#pragma once

// EDR histories and the signed, digested event records that accident and
// witness vehicles contribute for an accident.

#include <algorithm>
#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <set>
#include <vector>

#include "poe/canonical.hpp"
#include "poe/crypto.hpp"
#include "poe/net.hpp"

namespace poe {

using Millis = std::int64_t;
using AccidentId = std::array<std::uint8_t, 16>;

/// Another vehicle's speed as estimated by this vehicle's sensors.
struct Observation {
  VehicleId subject;
  double estimated_speed = 0.0;  // m/s
  friend bool operator==(const Observation&, const Observation&) = default;
};

struct EdrSample {
  Millis t = 0;
  Position position;
  double speed = 0.0;    // m/s, >= 0
  double heading = 0.0;  // degrees, [0, 360)
  std::vector<Observation> observations;
  friend bool operator==(const EdrSample&, const EdrSample&) = default;
};

inline constexpr std::size_t kDefaultEdrCapacity = 600;
inline constexpr Millis kDefaultEdrPeriod = 100;
inline constexpr Millis kDefaultEdrHalfWidth = 5000;

/// Bounded, strictly time-ordered history. The oldest sample is dropped once
/// capacity is reached.
class EdrLog {
 public:
  explicit EdrLog(std::size_t capacity = kDefaultEdrCapacity) : capacity_(capacity) {}

  void record(EdrSample sample) {
    if (sample.speed < 0.0) throw Error(ErrorKind::InvalidConfig, "EDR speed must be non-negative");
    if (!(sample.heading >= 0.0 && sample.heading < 360.0))
      throw Error(ErrorKind::InvalidConfig, "EDR heading must be in [0, 360)");
    if (!samples_.empty() && sample.t <= samples_.back().t)
      throw Error(ErrorKind::InvalidConfig, "EDR timestamps must be strictly increasing");
    if (capacity_ == 0) return;
    if (samples_.size() == capacity_) samples_.pop_front();
    samples_.push_back(std::move(sample));
  }

  const std::deque<EdrSample>& samples() const { return samples_; }
  std::size_t size() const { return samples_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return samples_.empty(); }

 private:
  std::size_t capacity_;
  std::deque<EdrSample> samples_;
};

/// Samples with |t - t_center| <= half_width, in log order.
inline std::vector<EdrSample> edr_window(const EdrLog& log, Millis t_center, Millis half_width) {
  std::vector<EdrSample> out;
  if (half_width < 0) return out;
  for (const auto& s : log.samples()) {
    const Millis dt = s.t >= t_center ? s.t - t_center : t_center - s.t;
    if (dt <= half_width) out.push_back(s);
  }
  return out;
}

enum class EventRole : std::uint8_t { Accident = 0, Witness = 1 };

inline const char* to_string(EventRole r) { return r == EventRole::Accident ? "Accident" : "Witness"; }

struct EventData {
  AccidentId accident_id{};
  VehicleId reporter;
  EventRole role = EventRole::Accident;
  Position location;
  Millis timestamp = 0;
  std::vector<EdrSample> edr_window;
  Digest256 digest{};
  Signature signature{};
  friend bool operator==(const EventData&, const EventData&) = default;
};

inline void encode(Writer& w, const Position& p) {
  w.f64(p.x);
  w.f64(p.y);
}

inline Position decode_position(Reader& r) {
  Position p;
  p.x = r.f64();
  p.y = r.f64();
  return p;
}

inline void encode(Writer& w, const EdrSample& s) {
  w.i64(s.t);
  encode(w, s.position);
  w.f64(s.speed);
  w.f64(s.heading);
  w.count(s.observations.size());
  for (const auto& o : s.observations) {
    w.u32(o.subject.value);
    w.f64(o.estimated_speed);
  }
}

inline EdrSample decode_edr_sample(Reader& r) {
  EdrSample s;
  s.t = r.i64();
  s.position = decode_position(r);
  s.speed = r.f64();
  s.heading = r.f64();
  const auto n = r.count(12);
  s.observations.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Observation o;
    o.subject = VehicleId{r.u32()};
    o.estimated_speed = r.f64();
    s.observations.push_back(o);
  }
  return s;
}

/// The digested portion of an event: every field except digest and signature.
inline void encode_event_body(Writer& w, const EventData& e) {
  w.raw(e.accident_id);
  w.u32(e.reporter.value);
  w.u8(static_cast<std::uint8_t>(e.role));
  encode(w, e.location);
  w.i64(e.timestamp);
  w.count(e.edr_window.size());
  for (const auto& s : e.edr_window) encode(w, s);
}

inline void encode(Writer& w, const EventData& e) {
  encode_event_body(w, e);
  w.raw(e.digest);
  w.raw(e.signature);
}

inline EventData decode_event(Reader& r) {
  EventData e;
  e.accident_id = r.fixed<16>();
  e.reporter = VehicleId{r.u32()};
  const auto role = r.u8();
  if (role > 1) throw Error(ErrorKind::Decode, "unknown event role");
  e.role = static_cast<EventRole>(role);
  e.location = decode_position(r);
  e.timestamp = r.i64();
  const auto n = r.count(44);
  e.edr_window.reserve(n);
  for (std::size_t i = 0; i < n; ++i) e.edr_window.push_back(decode_edr_sample(r));
  e.digest = r.fixed<32>();
  e.signature = r.fixed<crypto_sign_BYTES>();
  return e;
}

inline Bytes serialize(const EventData& e) {
  Writer w;
  encode(w, e);
  return std::move(w).bytes();
}

inline Digest256 compute_event_digest(const EventData& e) {
  Writer w;
  encode_event_body(w, e);
  return digest(w.bytes());
}

inline bool event_digest_matches(const EventData& e) { return compute_event_digest(e) == e.digest; }

inline bool event_signature_valid(const EventData& e, const DmvRegistry& registry) {
  const auto* entry = registry.find(e.reporter);
  return entry != nullptr && verify(entry->public_key, e.digest, e.signature);
}

struct WindowParams {
  Millis t_center = 0;
  Millis half_width = kDefaultEdrHalfWidth;
};

/// What a reporting vehicle knows about itself when it produces an event.
struct Reporter {
  VehicleId id;
  const KeyPair& keys;
  Position position;
  const EdrLog& log;
};

/// Builds, digests and signs one vehicle's account of an accident.
inline EventData make_event_data(const Reporter& vehicle, EventRole role, const AccidentId& accident_id, Millis now,
                                 const WindowParams& window, const DmvRegistry& registry) {
  if (!registry.contains(vehicle.id))
    throw Error(ErrorKind::UnregisteredVehicle, "vehicle " + to_string(vehicle.id) + " is not registered with the DMV");
  EventData e;
  e.accident_id = accident_id;
  e.reporter = vehicle.id;
  e.role = role;
  e.location = vehicle.position;
  e.timestamp = now;
  e.edr_window = edr_window(vehicle.log, window.t_center, window.half_width);
  e.digest = compute_event_digest(e);
  e.signature = sign(vehicle.keys.secret_key, e.digest);
  return e;
}

/// Content-derived accident name: the first 16 bytes of
/// SHA-256(cell of first accident vehicle, accident time, sorted ids).
inline AccidentId derive_accident_id(CellId first_cell, Millis accident_time, const std::set<VehicleId>& colliding) {
  Writer w;
  w.u32(first_cell.value);
  w.i64(accident_time);
  w.count(colliding.size());
  for (auto id : colliding) w.u32(id.value);
  const auto d = digest(w.bytes());
  AccidentId out{};
  std::copy_n(d.begin(), out.size(), out.begin());
  return out;
}

}  // namespace poe
