#include <catch_amalgamated.hpp>

#include <unordered_set>

#include "support.hpp"

using namespace poe;
using poe::test::openssl_sha256;

namespace {

Bytes bytes_of(std::string_view s) { return Bytes(s.begin(), s.end()); }

Digest256 digest_hex(std::string_view hex) {
  const auto b = from_hex(hex);
  Digest256 d{};
  std::copy(b.begin(), b.end(), d.begin());
  return d;
}

}  // namespace

TEST_CASE("digest matches published SHA-256 vectors") {
  CHECK(digest(Bytes{}) == digest_hex("e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"));
  CHECK(digest(bytes_of("abc")) == digest_hex("ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"));
  CHECK(digest(bytes_of("abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq")) ==
        digest_hex("248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1"));
}

TEST_CASE("digest agrees with an independent implementation and detects single bit flips") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    Bytes p(rng() % 300);
    for (auto& b : p) b = static_cast<std::uint8_t>(rng());
    CHECK(digest(p) == openssl_sha256(p));
    CHECK(digest(p) == digest(p));
    if (p.empty()) continue;
    auto q = p;
    q[rng() % q.size()] ^= static_cast<std::uint8_t>(1u << (rng() % 8));
    CHECK(digest(q) == openssl_sha256(q));
    CHECK(digest(q) != digest(p));
  }
}

TEST_CASE("no digest collisions across 100000 distinct payloads") {
  std::mt19937_64 rng(11);
  std::unordered_set<std::string> seen;
  for (std::uint32_t i = 0; i < 100'000; ++i) {
    Writer w;
    w.u32(i);  // guarantees distinctness
    w.u64(rng());
    const auto d = digest(w.bytes());
    CHECK(seen.insert(std::string(d.begin(), d.end())).second);
  }
  CHECK(seen.size() == 100'000);
}

TEST_CASE("keygen is deterministic and reproduces the RFC 8032 test key") {
  KeySeed seed{};
  const auto s = from_hex("9d61b19deffd5a60ba844af492ec2cc44449c5697b326919703bac031cae7f60");
  std::copy(s.begin(), s.end(), seed.begin());
  const auto kp = keygen(seed);
  CHECK(to_hex(kp.public_key) == "d75a980182b10ab7d54bfed3c964073a0ee172f3daa62325af021a68f707511a");
  CHECK(keygen(seed) == kp);
}

TEST_CASE("distinct seeds give distinct public keys") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 1000; ++i) {
    KeySeed a{}, b{};
    for (auto& x : a) x = static_cast<std::uint8_t>(rng());
    for (auto& x : b) x = static_cast<std::uint8_t>(rng());
    if (a == b) continue;
    CHECK(keygen(a).public_key != keygen(b).public_key);
  }
}

TEST_CASE("default key seed is SHA-256 of the domain tag and id") {
  CHECK(to_hex(default_key_seed(VehicleId{5})) == "20b200e7b9379ee01a064d71a5a503477ba5d9ee3c2435ad486f47aec2053bd0");
}

TEST_CASE("sign and verify") {
  const auto a = poe::test::key_of(VehicleId{1});
  const auto b = poe::test::key_of(VehicleId{2});
  const auto m = digest(bytes_of("block"));
  const auto sig = sign(a.secret_key, m);

  CHECK(verify(a.public_key, m, sig));
  CHECK_FALSE(verify(b.public_key, m, sig));
  CHECK_FALSE(verify(a.public_key, digest(bytes_of("other")), sig));
  CHECK(sign(a.secret_key, m) == sig);

  for (std::size_t i = 0; i < sig.size(); ++i) {
    auto bad = sig;
    bad[i] ^= 0x01;
    CHECK_FALSE(verify(a.public_key, m, bad));
  }
}

TEST_CASE("reputation is clamped to [0, 100]") {
  CHECK(ReputationScore(-3).value() == 0.0);
  CHECK(ReputationScore(140).value() == 100.0);
  CHECK(ReputationScore(42.5).value() == 42.5);
}

TEST_CASE("registry rejects duplicates and unknown lookups") {
  auto r = poe::test::registry_of(3);
  CHECK_THROWS_AS(r.add(VehicleId{2}, poe::test::entry_for(VehicleId{2}, 10)), Error);
  try {
    r.at(VehicleId{9});
    FAIL("expected UnknownVehicle");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::UnknownVehicle);
  }
  CHECK(r.find(VehicleId{9}) == nullptr);
}

TEST_CASE("reputation order breaks ties by smaller id") {
  DmvRegistry r;
  r.add(VehicleId{4}, poe::test::entry_for(VehicleId{4}, 90));
  r.add(VehicleId{9}, poe::test::entry_for(VehicleId{9}, 90));
  r.add(VehicleId{2}, poe::test::entry_for(VehicleId{2}, 80));
  CHECK(higher_reputation(r, VehicleId{4}, VehicleId{9}));
  CHECK_FALSE(higher_reputation(r, VehicleId{9}, VehicleId{4}));
  CHECK(higher_reputation(r, VehicleId{9}, VehicleId{2}));
}

namespace {

MultiSigSet multisig(const std::vector<std::uint32_t>& members, std::uint32_t n, const std::vector<std::uint32_t>& signers,
                     const Digest256& d) {
  MultiSigSet ms;
  for (auto m : members) ms.federation.push_back(VehicleId{m});
  ms.threshold_n = n;
  for (auto s : signers) ms.signatures.emplace(VehicleId{s}, sign(poe::test::key_of(VehicleId{s}).secret_key, d));
  return ms;
}

}  // namespace

TEST_CASE("check_multisig examples") {
  const auto reg = poe::test::registry_of(10);
  const auto d = digest(bytes_of("candidate"));

  CHECK(check_multisig(d, multisig({1, 2, 3, 4}, 3, {1, 2, 3}, d), reg));
  CHECK(check_multisig(d, multisig({1, 2, 3, 4, 5}, 3, {2, 4, 5}, d), reg));
  // Two members plus a non-member signature: the outsider does not count.
  CHECK_FALSE(check_multisig(d, multisig({1, 2, 3, 4}, 3, {1, 2, 9}, d), reg));
  // Signatures over another digest do not count.
  CHECK_FALSE(check_multisig(d, multisig({1, 2, 3, 4}, 3, {1, 2, 3}, digest(bytes_of("x"))), reg));

  try {
    check_multisig(d, multisig({1, 2, 42}, 2, {1, 2}, d), reg);
    FAIL("expected UnknownVehicle");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::UnknownVehicle);
  }
}

TEST_CASE("check_multisig is monotone in valid member signatures") {
  const auto reg = poe::test::registry_of(8);
  const auto d = digest(bytes_of("monotone"));
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::uint32_t m = 1 + rng() % 7;
    const std::uint32_t n = 1 + rng() % m;
    std::vector<std::uint32_t> members;
    for (std::uint32_t i = 1; i <= m; ++i) members.push_back(i);
    auto order = members;
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::uint32_t> signers;
    bool was = check_multisig(d, multisig(members, n, signers, d), reg);
    for (auto s : order) {
      signers.push_back(s);
      const bool now = check_multisig(d, multisig(members, n, signers, d), reg);
      CHECK((!was || now));
      CHECK(now == (signers.size() >= n));
      was = now;
    }
  }
}

TEST_CASE("check_multisig does not depend on signature insertion order") {
  const auto reg = poe::test::registry_of(6);
  const auto d = digest(bytes_of("order"));
  const auto a = multisig({1, 2, 3, 4, 5}, 3, {5, 1, 3}, d);
  const auto b = multisig({1, 2, 3, 4, 5}, 3, {3, 5, 1}, d);
  CHECK(a == b);
  CHECK(check_multisig(d, a, reg) == check_multisig(d, b, reg));
}

TEST_CASE("multisig set encoding round-trips and rejects duplicate signers") {
  const auto d = digest(bytes_of("rt"));
  const auto ms = multisig({1, 2, 3}, 2, {1, 3}, d);
  CHECK(ms.well_formed());
  Writer w;
  encode(w, ms);
  Reader r(w.bytes());
  CHECK(decode_multisig(r) == ms);
  CHECK(r.done());

  Writer dup;
  dup.count(1);
  dup.u32(1);
  dup.u32(1);
  dup.count(2);
  for (int i = 0; i < 2; ++i) {
    dup.u32(1);
    dup.raw(ms.signatures.begin()->second);
  }
  Reader rd(dup.bytes());
  CHECK_THROWS_AS(decode_multisig(rd), Error);

  auto bad = ms;
  bad.signatures.emplace(VehicleId{9}, Signature{});
  CHECK_FALSE(bad.well_formed());
}

TEST_CASE("canonical encoding is bit-exact") {
  Writer w;
  w.u8(0xab);
  w.u32(0x01020304);
  w.u64(0x0102030405060708ULL);
  w.i64(-1);
  w.f64(1.0);
  w.boolean(true);
  w.str("ab");
  w.count(3);
  CHECK(to_hex(w.bytes()) ==
        "ab"
        "01020304"
        "0102030405060708"
        "ffffffffffffffff"
        "3ff0000000000000"
        "01"
        "000000026162"
        "00000003");

  Reader r(w.bytes());
  CHECK(r.u8() == 0xab);
  CHECK(r.u32() == 0x01020304);
  CHECK(r.u64() == 0x0102030405060708ULL);
  CHECK(r.i64() == -1);
  CHECK(r.f64() == 1.0);
  CHECK(r.boolean());
  CHECK(r.str() == "ab");
  CHECK(r.u32() == 3);
  CHECK(r.done());
}

TEST_CASE("reader rejects truncated and malformed input") {
  const Bytes three{1, 2, 3};
  Reader r(three);
  CHECK_THROWS_AS(r.u32(), Error);
  const Bytes bad_bool{2};
  Reader rb(bad_bool);
  CHECK_THROWS_AS(rb.boolean(), Error);
  const Bytes huge_count{0xff, 0xff, 0xff, 0xff};
  Reader rc(huge_count);
  CHECK_THROWS_AS(rc.count(4), Error);
  CHECK_THROWS_AS(from_hex("abc"), Error);
  CHECK_THROWS_AS(from_hex("zz"), Error);
  CHECK(from_hex("00ff10") == Bytes{0x00, 0xff, 0x10});
}
