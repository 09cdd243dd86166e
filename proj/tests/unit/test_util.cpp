#include <doctest.h>

#include <set>

#include "vlmprobe/errors.hpp"
#include "vlmprobe/util.hpp"
#include "../support/oracles.hpp"

using namespace vlmprobe;

TEST_SUITE("util") {
  TEST_CASE("sha256 matches the FIPS 180-2 vectors") {
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  }

  TEST_CASE("base64 follows RFC 4648 test vectors") {
    const std::pair<std::string, std::string> vectors[] = {
        {"", ""}, {"f", "Zg=="}, {"fo", "Zm8="}, {"foo", "Zm9v"}, {"foob", "Zm9vYg=="}, {"fooba", "Zm9vYmE="},
        {"foobar", "Zm9vYmFy"}};
    for (const auto& [plain, encoded] : vectors) {
      const Bytes bytes(plain.begin(), plain.end());
      CHECK(base64_encode(bytes) == encoded);
      CHECK(base64_decode(encoded) == bytes);
    }
    CHECK_THROWS_AS(base64_decode("Zm9v!"), SchemaError);
    CHECK_THROWS_AS(base64_decode("Zm9"), SchemaError);
  }

  TEST_CASE("base64 round-trips arbitrary bytes") {
    CounterRng rng(7);
    for (int n = 0; n < 300; ++n) {
      Bytes b(static_cast<std::size_t>(n));
      for (auto& x : b) x = static_cast<std::uint8_t>(rng.next());
      CHECK(base64_decode(base64_encode(b)) == b);
    }
  }

  TEST_CASE("counter rng is deterministic and keyed") {
    auto a = CounterRng::keyed(1, 2, 3), b = CounterRng::keyed(1, 2, 3), c = CounterRng::keyed(1, 2, 4);
    for (int i = 0; i < 10; ++i) {
      const auto x = a.next();
      CHECK(x == b.next());
      CHECK(x != c.next());
    }
  }

  TEST_CASE("below stays in range and covers it") {
    CounterRng rng(42);
    std::set<std::uint64_t> seen;
    for (int i = 0; i < 2000; ++i) {
      const auto v = rng.below(7);
      CHECK(v < 7);
      seen.insert(v);
    }
    CHECK(seen.size() == 7);
    const double u = rng.unit();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }

  TEST_CASE("write_file_atomic replaces content") {
    TempDir dir;
    const auto path = dir / "f.txt";
    write_file_atomic(path, std::string_view("one"));
    write_file_atomic(path, std::string_view("two"));
    const auto bytes = read_file(path);
    CHECK(std::string(bytes.begin(), bytes.end()) == "two");
    CHECK_THROWS_AS(read_file(dir / "missing"), IoError);
  }
}
