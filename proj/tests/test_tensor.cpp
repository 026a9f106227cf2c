#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "cml/rng.hpp"
#include "cml/serialize.hpp"
#include "cml/tensor.hpp"

using namespace cml;

namespace {

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("cml_test_" + name);
}

std::vector<char> read_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace

TEST_CASE("elementwise_map basics", "[tensor]") {
    Tensor t = Tensor::vector({1, 2, 3});
    Tensor identity = elementwise_map(t, [](double x) { return x; });
    CHECK(identity.values() == std::vector<double>{1, 2, 3});

    Tensor zeroed = elementwise_map(t, [](double) { return 0.0; });
    CHECK(zeroed.values() == std::vector<double>{0, 0, 0});
    CHECK(zeroed.shape() == t.shape());

    Tensor exps = elementwise_map(Tensor::vector({0, 1}), [](double x) { return std::exp(x); });
    CHECK(exps[0] == Catch::Approx(1.0).epsilon(1e-15));
    CHECK(exps[1] == Catch::Approx(2.718281828459045).epsilon(1e-15));
}

TEST_CASE("matmul identity, hand case, annihilator", "[tensor]") {
    Tensor eye({2, 2}, {1, 0, 0, 1});
    Tensor b({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(matmul(eye, b).values() == b.values());

    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor ones({2, 1}, {1, 1});
    Tensor prod = matmul(a, ones);
    CHECK(prod.values() == std::vector<double>{3, 7});

    Tensor zero({3, 2});
    CHECK(matmul(zero, b).values() == std::vector<double>(9, 0.0));
}

TEST_CASE("matmul shape error names both shapes", "[tensor]") {
    Tensor a({2, 3});
    Tensor b({4, 5});
    try {
        matmul(a, b);
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
        CHECK(msg.find("[4x5]") != std::string::npos);
    }
}

TEST_CASE("matmul agrees with naive triple loop on random inputs", "[tensor]") {
    Rng rng(7);
    for (int trial = 0; trial < 5; ++trial) {
        const std::size_t m = 1 + rng.uniform_index(6), k = 1 + rng.uniform_index(6),
                          n = 1 + rng.uniform_index(6);
        Tensor a({m, k}), b({k, n});
        for (auto& v : a.values()) v = rng.normal();
        for (auto& v : b.values()) v = rng.normal();
        Tensor fast = matmul(a, b);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double acc = 0.0;
                for (std::size_t t = 0; t < k; ++t) acc += a.at({i, t}) * b.at({t, j});
                CHECK(fast.at({i, j}) == Catch::Approx(acc).margin(1e-12));
            }
    }
}

TEST_CASE("matmul associativity within 1e-10", "[tensor]") {
    Rng rng(11);
    for (int trial = 0; trial < 5; ++trial) {
        Tensor a({3, 4}), b({4, 5}), c({5, 2});
        for (auto& v : a.values()) v = rng.normal();
        for (auto& v : b.values()) v = rng.normal();
        for (auto& v : c.values()) v = rng.normal();
        Tensor left = matmul(matmul(a, b), c);
        Tensor right = matmul(a, matmul(b, c));
        for (std::size_t i = 0; i < left.numel(); ++i)
            CHECK(left[i] == Catch::Approx(right[i]).margin(1e-10));
    }
}

TEST_CASE("row-major linearization matches index arithmetic", "[tensor]") {
    Rng rng(13);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t m = 1 + rng.uniform_index(7), n = 1 + rng.uniform_index(7);
        Tensor t({m, n});
        for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<double>(i);
        const std::size_t i = rng.uniform_index(m), j = rng.uniform_index(n);
        CHECK(t.at({i, j}) == static_cast<double>(i * n + j));
    }
    // rank-3 spot check
    Tensor t({2, 3, 4});
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<double>(i);
    CHECK(t.at({1, 2, 3}) == static_cast<double>(1 * 3 * 4 + 2 * 4 + 3));
}

TEST_CASE("tensor file round-trip is bit-exact", "[tensor]") {
    const auto path_a = temp_file("roundtrip_a.cmlt");
    const auto path_b = temp_file("roundtrip_b.cmlt");

    Tensor single = Tensor::vector({1.5});
    save_tensor(path_a, single);
    Tensor back = load_tensor(path_a);
    REQUIRE(back.shape() == single.shape());
    CHECK(back[0] == 1.5);

    Rng rng(3);
    Tensor t({3, 4, 5});
    for (auto& v : t.values()) v = rng.normal();
    save_tensor(path_a, t);
    Tensor reloaded = load_tensor(path_a);
    save_tensor(path_b, reloaded);
    CHECK(read_bytes(path_a) == read_bytes(path_b));

    std::filesystem::remove(path_a);
    std::filesystem::remove(path_b);
}

TEST_CASE("tensor file parse errors are distinct", "[tensor]") {
    const auto path = temp_file("bad.cmlt");

    {
        std::ofstream out(path, std::ios::binary);
        out << "NOPE";
    }
    CHECK_THROWS_WITH(load_tensor(path), Catch::Matchers::ContainsSubstring("bad magic"));

    {
        Tensor t({2, 2}, {1, 2, 3, 4});
        save_tensor(path, t);
        auto bytes = read_bytes(path);
        bytes.resize(bytes.size() - 5);
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    CHECK_THROWS_WITH(load_tensor(path), Catch::Matchers::ContainsSubstring("truncated"));

    {
        BinaryWriter w(path);
        w.magic("CMLT");
        w.u32(1);
        w.u32(1000); // absurd rank
        w.finish();
    }
    CHECK_THROWS_WITH(load_tensor(path), Catch::Matchers::ContainsSubstring("rank overflow"));

    {
        BinaryWriter w(path);
        w.magic("CMLT");
        w.u32(1);
        w.u32(2);
        w.u64(1ULL << 33);
        w.u64(1ULL << 33);
        w.finish();
    }
    CHECK_THROWS_WITH(load_tensor(path), Catch::Matchers::ContainsSubstring("size overflow"));

    std::filesystem::remove(path);
}

TEST_CASE("rng streams are reproducible", "[tensor]") {
    Rng a(42), b(42);
    for (int i = 0; i < 10000; ++i) REQUIRE(a.next_u64() == b.next_u64());

    Rng c(42), d(43);
    bool differs = false;
    for (int i = 0; i < 10 && !differs; ++i) differs = c.next_u64() != d.next_u64();
    CHECK(differs);
}

TEST_CASE("rng substreams are independent of each other", "[tensor]") {
    Rng base(7);
    Rng s1 = base.substream(1);
    Rng s2 = base.substream(2);
    CHECK(s1.next_u64() != s2.next_u64());

    // Drawing from one stream does not shift another.
    Rng again = Rng(7).substream(2);
    Rng s2_fresh = Rng(7).substream(2);
    (void)again.next_u64();
    Rng s1_burn = Rng(7).substream(1);
    for (int i = 0; i < 100; ++i) (void)s1_burn.next_u64();
    CHECK(s2_fresh.next_u64() == Rng(7).substream(2).next_u64());
}

TEST_CASE("rng uniform and bernoulli behave", "[tensor]") {
    Rng rng(1234);
    double mn = 1.0, mx = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const double u = rng.uniform();
        mn = std::min(mn, u);
        mx = std::max(mx, u);
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
    }
    CHECK(mn < 0.01);
    CHECK(mx > 0.99);

    int heads = 0;
    for (int i = 0; i < 10000; ++i) heads += rng.bernoulli(0.5) ? 1 : 0;
    CHECK(heads > 4800);
    CHECK(heads < 5200);
}
