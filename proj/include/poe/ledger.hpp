#pragma once

// The DMV's append-only chain of accident blocks, chain verification, the
// binary ledger file format, and forensic cross-examination of stored events.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <vector>

#include "poe/canonical.hpp"
#include "poe/crypto.hpp"
#include "poe/event.hpp"

namespace poe {

inline constexpr Digest256 kGenesisPrevHash{};

struct Block {
  std::uint64_t height = 0;
  Digest256 prev_hash{};
  AccidentId accident_id{};
  std::vector<EventData> events;
  MultiSigSet multisig;
  VehicleId leader;
  Millis created_at = 0;
  Digest256 block_hash{};
  friend bool operator==(const Block&, const Block&) = default;
};

/// What federation members sign: the accident, the included events, the
/// federation and the leader. Height and prev_hash are excluded because the
/// DMV assigns them when it serialises concurrent blocks onto its chain.
inline Digest256 block_signing_digest(const AccidentId& accident_id, const std::vector<EventData>& events,
                                      const std::vector<VehicleId>& federation, std::uint32_t threshold_n,
                                      VehicleId leader) {
  Writer w;
  w.str("poe/block-candidate");
  w.raw(accident_id);
  w.count(events.size());
  for (const auto& e : events) encode(w, e);
  w.count(federation.size());
  for (auto id : federation) w.u32(id.value);
  w.u32(threshold_n);
  w.u32(leader.value);
  return digest(w.bytes());
}

inline Digest256 block_signing_digest(const Block& b) {
  return block_signing_digest(b.accident_id, b.events, b.multisig.federation, b.multisig.threshold_n, b.leader);
}

inline void encode_block_body(Writer& w, const Block& b) {
  w.u64(b.height);
  w.raw(b.prev_hash);
  w.raw(b.accident_id);
  w.count(b.events.size());
  for (const auto& e : b.events) encode(w, e);
  encode(w, b.multisig);
  w.u32(b.leader.value);
  w.i64(b.created_at);
}

inline Digest256 compute_block_hash(const Block& b) {
  Writer w;
  encode_block_body(w, b);
  return digest(w.bytes());
}

inline Bytes serialize(const Block& b) {
  Writer w;
  encode_block_body(w, b);
  w.raw(b.block_hash);
  return std::move(w).bytes();
}

inline Block decode_block(Reader& r) {
  Block b;
  b.height = r.u64();
  b.prev_hash = r.fixed<32>();
  b.accident_id = r.fixed<16>();
  const auto n = r.count(200);
  b.events.reserve(n);
  for (std::size_t i = 0; i < n; ++i) b.events.push_back(decode_event(r));
  b.multisig = decode_multisig(r);
  b.leader = VehicleId{r.u32()};
  b.created_at = r.i64();
  b.block_hash = r.fixed<32>();
  return b;
}

inline Block deserialize_block(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  auto b = decode_block(r);
  r.expect_done();
  return b;
}

enum class UnconfirmedReason : std::uint8_t { EmptyFederation = 0, ThresholdNotMet = 1, EmptyEventSet = 2 };

inline const char* to_string(UnconfirmedReason r) {
  switch (r) {
    case UnconfirmedReason::EmptyFederation: return "EmptyFederation";
    case UnconfirmedReason::ThresholdNotMet: return "ThresholdNotMet";
    case UnconfirmedReason::EmptyEventSet: return "EmptyEventSet";
  }
  return "?";
}

/// Evidence the DMV keeps outside the chain when no block could be formed.
struct UnconfirmedEventRecord {
  AccidentId accident_id{};
  UnconfirmedReason reason = UnconfirmedReason::EmptyFederation;
  VehicleId submitted_by;
  Millis created_at = 0;
  std::vector<EventData> events;
  friend bool operator==(const UnconfirmedEventRecord&, const UnconfirmedEventRecord&) = default;
};

inline void encode(Writer& w, const UnconfirmedEventRecord& u) {
  w.raw(u.accident_id);
  w.u8(static_cast<std::uint8_t>(u.reason));
  w.u32(u.submitted_by.value);
  w.i64(u.created_at);
  w.count(u.events.size());
  for (const auto& e : u.events) encode(w, e);
}

inline UnconfirmedEventRecord decode_unconfirmed(Reader& r) {
  UnconfirmedEventRecord u;
  u.accident_id = r.fixed<16>();
  const auto reason = r.u8();
  if (reason > 2) throw Error(ErrorKind::Decode, "unknown unconfirmed-record reason");
  u.reason = static_cast<UnconfirmedReason>(reason);
  u.submitted_by = VehicleId{r.u32()};
  u.created_at = r.i64();
  const auto n = r.count(200);
  u.events.reserve(n);
  for (std::size_t i = 0; i < n; ++i) u.events.push_back(decode_event(r));
  return u;
}

enum class BlockStatus {
  Ok,
  BadHeight,
  BadPrevHash,
  BadBlockHash,
  MultisigFailed,
  BrokenAncestry,  // an earlier block failed, so this one is not anchored to verified history
  Undecodable,
};

inline const char* to_string(BlockStatus s) {
  switch (s) {
    case BlockStatus::Ok: return "Ok";
    case BlockStatus::BadHeight: return "BadHeight";
    case BlockStatus::BadPrevHash: return "BadPrevHash";
    case BlockStatus::BadBlockHash: return "BadBlockHash";
    case BlockStatus::MultisigFailed: return "MultisigFailed";
    case BlockStatus::BrokenAncestry: return "BrokenAncestry";
    case BlockStatus::Undecodable: return "Undecodable";
  }
  return "?";
}

/// Checks one block against the hash and height it must extend.
inline BlockStatus check_block(const Block& b, std::uint64_t expected_height, const Digest256& expected_prev,
                               const DmvRegistry& registry) {
  if (b.height != expected_height) return BlockStatus::BadHeight;
  if (b.prev_hash != expected_prev) return BlockStatus::BadPrevHash;
  if (compute_block_hash(b) != b.block_hash) return BlockStatus::BadBlockHash;
  try {
    if (!check_multisig(block_signing_digest(b), b.multisig, registry)) return BlockStatus::MultisigFailed;
  } catch (const Error&) {
    return BlockStatus::MultisigFailed;
  }
  return BlockStatus::Ok;
}

class Ledger {
 public:
  const std::vector<Block>& blocks() const { return blocks_; }
  const std::vector<UnconfirmedEventRecord>& unconfirmed() const { return unconfirmed_; }
  std::size_t size() const { return blocks_.size(); }
  bool empty() const { return blocks_.empty(); }

  Digest256 tip_hash() const { return blocks_.empty() ? kGenesisPrevHash : blocks_.back().block_hash; }
  std::uint64_t next_height() const { return blocks_.size(); }

  /// Appends iff the block extends the current tip and carries a valid
  /// multisig; otherwise the ledger is unchanged and the violation returned.
  BlockStatus append_block(const Block& block, const DmvRegistry& registry) {
    const auto status = check_block(block, next_height(), tip_hash(), registry);
    if (status == BlockStatus::Ok) blocks_.push_back(block);
    return status;
  }

  /// DMV acceptance: place a leader-built block on the tip (height and
  /// prev_hash are the DMV's to assign), rehash it, then append with full checks.
  BlockStatus accept(Block block, const DmvRegistry& registry) {
    block.height = next_height();
    block.prev_hash = tip_hash();
    block.block_hash = compute_block_hash(block);
    return append_block(block, registry);
  }

  void add_unconfirmed(UnconfirmedEventRecord record) { unconfirmed_.push_back(std::move(record)); }

  /// Loads already-verified content without checks; pair with verify_chain.
  static Ledger from_parts(std::vector<Block> blocks, std::vector<UnconfirmedEventRecord> unconfirmed) {
    Ledger l;
    l.blocks_ = std::move(blocks);
    l.unconfirmed_ = std::move(unconfirmed);
    return l;
  }

 private:
  std::vector<Block> blocks_;
  std::vector<UnconfirmedEventRecord> unconfirmed_;
};

struct ChainReport {
  bool valid = true;
  std::optional<std::uint64_t> first_bad_height;
  std::vector<BlockStatus> statuses;  // one per stored block
  std::optional<std::string> framing_error;
};

/// Walks the chain from genesis. Links are checked against the recomputed
/// hash of the predecessor, and every block after the first failure is
/// reported as BrokenAncestry if it is not already bad on its own.
inline ChainReport verify_chain(const std::vector<Block>& blocks, const DmvRegistry& registry) {
  ChainReport report;
  Digest256 expected_prev = kGenesisPrevHash;
  for (std::size_t h = 0; h < blocks.size(); ++h) {
    auto status = check_block(blocks[h], h, expected_prev, registry);
    if (status == BlockStatus::Ok && !report.valid) status = BlockStatus::BrokenAncestry;
    if (status != BlockStatus::Ok && report.valid) {
      report.valid = false;
      report.first_bad_height = h;
    }
    report.statuses.push_back(status);
    expected_prev = compute_block_hash(blocks[h]);
  }
  return report;
}

inline ChainReport verify_chain(const Ledger& ledger, const DmvRegistry& registry) {
  return verify_chain(ledger.blocks(), registry);
}

// ---------------------------------------------------------------------------
// Ledger files: magic + version byte + repeated [u32 BE length][record bytes].

inline constexpr std::array<std::uint8_t, 4> kLedgerMagic{'P', 'O', 'E', 'L'};
inline constexpr std::array<std::uint8_t, 4> kUnconfirmedMagic{'P', 'O', 'E', 'U'};
inline constexpr std::uint8_t kFileVersion = 1;

namespace detail {
inline void write_record(Writer& w, const Bytes& record) {
  w.u32(static_cast<std::uint32_t>(record.size()));
  w.raw(record);
}
}  // namespace detail

inline Bytes serialize_ledger_file(const std::vector<Block>& blocks) {
  Writer w;
  w.raw(kLedgerMagic);
  w.u8(kFileVersion);
  for (const auto& b : blocks) detail::write_record(w, serialize(b));
  return std::move(w).bytes();
}

inline Bytes serialize_unconfirmed_file(const std::vector<UnconfirmedEventRecord>& records) {
  Writer w;
  w.raw(kUnconfirmedMagic);
  w.u8(kFileVersion);
  for (const auto& u : records) {
    Writer rec;
    encode(rec, u);
    detail::write_record(w, rec.bytes());
  }
  return std::move(w).bytes();
}

/// Result of parsing a ledger file. Parsing stops at the first record that
/// cannot be framed or decoded; `bad_record` is its index.
struct ParsedLedgerFile {
  std::vector<Block> blocks;
  std::optional<std::size_t> bad_record;
  std::string error;
  bool bad_header = false;
};

inline ParsedLedgerFile parse_ledger_file(std::span<const std::uint8_t> bytes) {
  ParsedLedgerFile out;
  if (bytes.size() < 5 || !std::equal(kLedgerMagic.begin(), kLedgerMagic.end(), bytes.begin()) ||
      bytes[4] != kFileVersion) {
    out.bad_header = true;
    out.bad_record = 0;
    out.error = "missing POEL magic or unsupported version";
    return out;
  }
  Reader r(bytes.subspan(5));
  while (!r.done()) {
    const auto index = out.blocks.size();
    try {
      const auto len = r.u32();
      if (len > r.remaining()) throw Error(ErrorKind::Decode, "record length exceeds file size");
      const auto start = 5 + r.position();
      Reader rec(bytes.subspan(start, len));
      auto block = decode_block(rec);
      rec.expect_done();
      out.blocks.push_back(std::move(block));
      r.skip(len);
    } catch (const Error& e) {
      out.bad_record = index;
      out.error = "record " + std::to_string(index) + ": " + e.what();
      return out;
    }
  }
  return out;
}

inline std::vector<UnconfirmedEventRecord> parse_unconfirmed_file(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 5 || !std::equal(kUnconfirmedMagic.begin(), kUnconfirmedMagic.end(), bytes.begin()) ||
      bytes[4] != kFileVersion)
    throw Error(ErrorKind::Decode, "missing POEU magic or unsupported version");
  std::vector<UnconfirmedEventRecord> out;
  Reader r(bytes.subspan(5));
  while (!r.done()) {
    const auto blob_len = r.u32();
    if (blob_len > r.remaining()) throw Error(ErrorKind::Decode, "record length exceeds file size");
    const auto start = 5 + r.position();
    Reader rec(bytes.subspan(start, blob_len));
    out.push_back(decode_unconfirmed(rec));
    rec.expect_done();
    r.skip(blob_len);
  }
  return out;
}

/// Verifies a serialized ledger. A record that cannot be decoded makes the
/// chain invalid at that record's height.
inline ChainReport verify_ledger_bytes(std::span<const std::uint8_t> bytes, const DmvRegistry& registry) {
  auto parsed = parse_ledger_file(bytes);
  auto report = verify_chain(parsed.blocks, registry);
  if (parsed.bad_record) {
    report.framing_error = parsed.error;
    report.statuses.push_back(BlockStatus::Undecodable);
    if (report.valid) {
      report.valid = false;
      report.first_bad_height = *parsed.bad_record;
    }
  }
  return report;
}

inline Bytes read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// ---------------------------------------------------------------------------
// Forensic review.

inline constexpr double kDefaultSpeedTolerance = 2.0;  // m/s

struct SpeedComparison {
  VehicleId subject;
  std::optional<double> self_reported;
  std::vector<double> witness_estimates;
  std::optional<double> median;  // of witness estimates
  std::optional<double> spread;  // max - min of witness estimates
  bool flagged = false;
  friend bool operator==(const SpeedComparison&, const SpeedComparison&) = default;
};

struct DiscrepancyReport {
  AccidentId accident_id{};
  std::uint64_t block_height = 0;
  std::vector<SpeedComparison> comparisons;
  friend bool operator==(const DiscrepancyReport&, const DiscrepancyReport&) = default;
};

inline double median_of(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const auto n = values.size();
  return n % 2 == 1 ? values[n / 2] : (values[n / 2 - 1] + values[n / 2]) / 2.0;
}

namespace detail {
inline Millis abs_diff(Millis a, Millis b) { return a > b ? a - b : b - a; }
}  // namespace detail

/// Compares each accident vehicle's own speed at the accident instant with
/// what the witnesses' EDRs observed for it.
inline DiscrepancyReport forensic_review(const Ledger& ledger, const AccidentId& accident_id,
                                         double tolerance = kDefaultSpeedTolerance) {
  auto it = std::find_if(ledger.blocks().begin(), ledger.blocks().end(),
                         [&](const Block& b) { return b.accident_id == accident_id; });
  if (it == ledger.blocks().end())
    throw Error(ErrorKind::NotFound, "accident " + to_hex(accident_id) + " is not in the ledger");

  DiscrepancyReport report;
  report.accident_id = accident_id;
  report.block_height = it->height;

  for (const auto& subject_event : it->events) {
    if (subject_event.role != EventRole::Accident) continue;
    SpeedComparison cmp;
    cmp.subject = subject_event.reporter;
    const Millis t_accident = subject_event.timestamp;

    const EdrSample* nearest = nullptr;
    for (const auto& s : subject_event.edr_window) {
      if (!nearest || detail::abs_diff(s.t, t_accident) < detail::abs_diff(nearest->t, t_accident)) nearest = &s;
    }
    if (nearest) cmp.self_reported = nearest->speed;

    for (const auto& witness_event : it->events) {
      if (witness_event.role != EventRole::Witness) continue;
      std::optional<double> estimate;
      Millis best_dt = 0;
      for (const auto& s : witness_event.edr_window) {
        for (const auto& o : s.observations) {
          if (o.subject != cmp.subject) continue;
          const auto dt = detail::abs_diff(s.t, t_accident);
          if (!estimate || dt < best_dt) {
            estimate = o.estimated_speed;
            best_dt = dt;
          }
        }
      }
      if (estimate) cmp.witness_estimates.push_back(*estimate);
    }

    if (!cmp.witness_estimates.empty()) {
      cmp.median = median_of(cmp.witness_estimates);
      const auto [lo, hi] = std::minmax_element(cmp.witness_estimates.begin(), cmp.witness_estimates.end());
      cmp.spread = *hi - *lo;
      if (cmp.self_reported) cmp.flagged = std::abs(*cmp.self_reported - *cmp.median) > tolerance;
    }
    report.comparisons.push_back(std::move(cmp));
  }
  return report;
}

}  // namespace poe
