#pragma once

// Digests, Ed25519 identities, n-of-m multi-signature checks and the DMV
// registry of legitimate vehicles. SHA-256 and Ed25519 come from libsodium.

#include <sodium.h>

#include <algorithm>
#include <array>
#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "poe/canonical.hpp"
#include "poe/error.hpp"

namespace poe {

struct VehicleId {
  std::uint32_t value = 0;
  friend constexpr auto operator<=>(VehicleId, VehicleId) = default;
};

inline std::string to_string(VehicleId id) { return std::to_string(id.value); }

using Digest256 = std::array<std::uint8_t, 32>;
using PublicKey = std::array<std::uint8_t, crypto_sign_PUBLICKEYBYTES>;
using SecretKey = std::array<std::uint8_t, crypto_sign_SECRETKEYBYTES>;
using Signature = std::array<std::uint8_t, crypto_sign_BYTES>;
using KeySeed = std::array<std::uint8_t, crypto_sign_SEEDBYTES>;

namespace detail {
inline void ensure_sodium() {
  static std::once_flag once;
  std::call_once(once, [] {
    if (sodium_init() < 0) throw std::runtime_error("libsodium failed to initialise");
  });
}
}  // namespace detail

inline Digest256 digest(std::span<const std::uint8_t> payload) {
  detail::ensure_sodium();
  Digest256 out{};
  crypto_hash_sha256(out.data(), payload.data(), payload.size());
  return out;
}

struct KeyPair {
  PublicKey public_key{};
  SecretKey secret_key{};
  friend bool operator==(const KeyPair&, const KeyPair&) = default;
};

inline KeyPair keygen(const KeySeed& seed) {
  detail::ensure_sodium();
  KeyPair kp;
  crypto_sign_seed_keypair(kp.public_key.data(), kp.secret_key.data(), seed.data());
  return kp;
}

/// Key seed for a vehicle that has no explicit seed: SHA-256 of a domain tag
/// and the big-endian id. Stable across scenarios so one registry can verify a
/// ledger built from several runs.
inline KeySeed default_key_seed(VehicleId id) {
  Writer w;
  w.str("poe/vehicle-key");
  w.u32(id.value);
  return digest(w.bytes());
}

// Signatures are always over a 32-byte digest, never over raw payloads.
inline Signature sign(const SecretKey& secret, const Digest256& message) {
  detail::ensure_sodium();
  Signature sig{};
  crypto_sign_detached(sig.data(), nullptr, message.data(), message.size(), secret.data());
  return sig;
}

inline bool verify(const PublicKey& public_key, const Digest256& message, const Signature& sig) {
  detail::ensure_sodium();
  return crypto_sign_verify_detached(sig.data(), message.data(), message.size(), public_key.data()) == 0;
}

/// Reputation bounded to [0, 100].
class ReputationScore {
 public:
  static constexpr double kMin = 0.0;
  static constexpr double kMax = 100.0;

  constexpr ReputationScore() = default;
  constexpr explicit ReputationScore(double v) : value_(std::clamp(v, kMin, kMax)) {}

  constexpr double value() const { return value_; }
  friend constexpr auto operator<=>(ReputationScore, ReputationScore) = default;

 private:
  double value_ = 0.0;
};

struct RegistryEntry {
  std::string plate;
  std::string vin;
  PublicKey public_key{};
  ReputationScore reputation;
};

class DmvRegistry {
 public:
  /// Registers a vehicle; ids are unique.
  void add(VehicleId id, RegistryEntry entry) {
    if (!entries_.emplace(id, std::move(entry)).second)
      throw Error(ErrorKind::InvalidConfig, "duplicate vehicle id " + to_string(id));
  }

  bool contains(VehicleId id) const { return entries_.contains(id); }

  const RegistryEntry* find(VehicleId id) const {
    auto it = entries_.find(id);
    return it == entries_.end() ? nullptr : &it->second;
  }

  const RegistryEntry& at(VehicleId id) const {
    if (const auto* e = find(id)) return *e;
    throw Error(ErrorKind::UnknownVehicle, "vehicle " + to_string(id) + " is not registered");
  }

  ReputationScore reputation(VehicleId id) const { return at(id).reputation; }

  void set_reputation(VehicleId id, ReputationScore score) {
    auto it = entries_.find(id);
    if (it == entries_.end()) throw Error(ErrorKind::UnknownVehicle, "vehicle " + to_string(id) + " is not registered");
    it->second.reputation = score;
  }

  const std::map<VehicleId, RegistryEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

 private:
  std::map<VehicleId, RegistryEntry> entries_;
};

/// Orders vehicles by reputation, highest first, with the smaller id winning ties.
inline bool higher_reputation(const DmvRegistry& registry, VehicleId a, VehicleId b) {
  const auto ra = registry.reputation(a);
  const auto rb = registry.reputation(b);
  if (ra != rb) return ra > rb;
  return a < b;
}

struct MultiSigSet {
  std::vector<VehicleId> federation;
  std::uint32_t threshold_n = 1;
  std::map<VehicleId, Signature> signatures;

  bool well_formed() const {
    if (threshold_n < 1 || threshold_n > federation.size()) return false;
    return std::all_of(signatures.begin(), signatures.end(), [&](const auto& kv) {
      return std::find(federation.begin(), federation.end(), kv.first) != federation.end();
    });
  }

  friend bool operator==(const MultiSigSet&, const MultiSigSet&) = default;
};

/// Counts signatures that come from federation members and verify against
/// the digest. Non-member signatures are ignored.
inline std::size_t count_valid_member_signatures(const Digest256& block_digest, const MultiSigSet& ms,
                                                 const DmvRegistry& registry) {
  for (auto member : ms.federation) registry.at(member);
  std::size_t valid = 0;
  for (const auto& [signer, sig] : ms.signatures) {
    if (std::find(ms.federation.begin(), ms.federation.end(), signer) == ms.federation.end()) continue;
    if (verify(registry.at(signer).public_key, block_digest, sig)) ++valid;
  }
  return valid;
}

inline bool check_multisig(const Digest256& block_digest, const MultiSigSet& ms, const DmvRegistry& registry) {
  const auto valid = count_valid_member_signatures(block_digest, ms, registry);
  if (ms.threshold_n < 1 || ms.threshold_n > ms.federation.size()) return false;
  return valid >= ms.threshold_n;
}

inline void encode(Writer& w, const MultiSigSet& ms) {
  w.count(ms.federation.size());
  for (auto id : ms.federation) w.u32(id.value);
  w.u32(ms.threshold_n);
  w.count(ms.signatures.size());
  for (const auto& [id, sig] : ms.signatures) {
    w.u32(id.value);
    w.raw(sig);
  }
}

inline MultiSigSet decode_multisig(Reader& r) {
  MultiSigSet ms;
  const auto m = r.count(4);
  ms.federation.reserve(m);
  for (std::size_t i = 0; i < m; ++i) ms.federation.push_back(VehicleId{r.u32()});
  ms.threshold_n = r.u32();
  const auto k = r.count(4 + crypto_sign_BYTES);
  for (std::size_t i = 0; i < k; ++i) {
    VehicleId id{r.u32()};
    if (!ms.signatures.emplace(id, r.fixed<crypto_sign_BYTES>()).second)
      throw Error(ErrorKind::Decode, "duplicate signer in multisig set");
  }
  return ms;
}

}  // namespace poe

template <>
struct std::hash<poe::VehicleId> {
  std::size_t operator()(poe::VehicleId id) const noexcept { return std::hash<std::uint32_t>{}(id.value); }
};
