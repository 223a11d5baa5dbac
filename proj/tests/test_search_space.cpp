#include "padnas/search_space.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>

using namespace padnas;

namespace {

BigInt power(int base, int exp) {
    BigInt r = 1;
    for (int i = 0; i < exp; ++i) r *= base;
    return r;
}

SearchSpace toy_space(std::vector<std::size_t> counts) {
    std::vector<LayerSpec> layers;
    std::map<std::string, Operation> catalog;
    const int ks[] = {3, 5, 7};
    for (std::size_t j = 0; j < counts.size(); ++j) {
        LayerSpec l;
        l.index = j;
        l.stage_name = "toy";
        l.allows_identity = true;
        for (std::size_t i = 0; i < counts[j]; ++i) {
            const Operation op = i == 0 ? Operation::identity()
                                        : Operation::ibconv(ks[(i - 1) % 3], static_cast<int>((i - 1) / 3 + 1));
            catalog.emplace(op.id, op);
            l.candidates.push_back(op.id);
        }
        layers.push_back(std::move(l));
    }
    return SearchSpace(std::move(layers), std::move(catalog));
}

}  // namespace

TEST(SearchSpace, BasicSizeIsExactProduct) {
    const auto s = build_space("basic");
    EXPECT_EQ(s.size(), 3 * power(6, 6) * power(7, 15));
    EXPECT_EQ(s.size().str(), "664506689423701824");
    EXPECT_EQ(space_size(s), s.size());
}

TEST(SearchSpace, LargeSizeIsExactProduct) {
    const auto s = build_space("large");
    EXPECT_EQ(s.size(), 3 * power(18, 6) * power(19, 15));
    EXPECT_EQ(s.size().str(), "1549031679337668995101220928");
    EXPECT_EQ(scientific(s.size()), "1.55e27");
}

TEST(SearchSpace, BuiltinLayerStructure) {
    for (const char* prof : {"basic", "large"}) {
        const auto s = build_space(prof);
        const bool large = std::string(prof) == "large";
        ASSERT_EQ(s.layer_count(), 22u);
        std::map<std::size_t, int> histogram;
        for (const auto& l : s.layers()) {
            ++histogram[l.candidates.size()];
            if (!l.allows_identity) { EXPECT_FALSE(l.contains("Identity")); }
            if (l.fixed_expansion_one) {
                for (const auto& c : l.candidates) EXPECT_EQ(s.op(c).expansion, 1);
            }
        }
        EXPECT_EQ(histogram[3], 1);
        EXPECT_EQ(histogram[large ? 18u : 6u], 6);
        EXPECT_EQ(histogram[large ? 19u : 7u], 15);
        EXPECT_TRUE(s.layer(0).fixed_expansion_one);
        EXPECT_FALSE(s.layer(0).allows_identity);
    }
}

TEST(SearchSpace, ScientificRendering) {
    EXPECT_EQ(scientific(BigInt(1)), "1.00e0");
    EXPECT_EQ(scientific(BigInt(999)), "9.99e2");
    EXPECT_EQ(scientific(BigInt(9995)), "1.00e4");
    EXPECT_EQ(scientific(BigInt(12345)), "1.23e4");
    EXPECT_EQ(scientific(BigInt(12350)), "1.24e4");
}

TEST(SearchSpace, SingletonCustomProfile) {
    const auto path = std::filesystem::path(PADNAS_TEST_TMP) / "single.json";
    std::filesystem::create_directories(path.parent_path());
    std::ofstream(path) << R"({"layers":[{"candidates":["IBConv_K3_E1"]}]})";
    const auto s = build_space(path.string());
    EXPECT_EQ(s.size(), 1);
    Rng rng(1);
    EXPECT_EQ(sample_uniform(s, rng).choices, std::vector<std::string>{"IBConv_K3_E1"});
}

TEST(SearchSpace, ProfileErrors) {
    EXPECT_THROW(build_space("no-such-profile"), ConfigError);
    const auto dir = std::filesystem::path(PADNAS_TEST_TMP);
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "bad.json") << "{ not json";
    EXPECT_THROW(build_space((dir / "bad.json").string()), ConfigError);
    std::ofstream(dir / "empty-layer.json") << R"({"layers":[{"candidates":[]}]})";
    EXPECT_THROW(build_space((dir / "empty-layer.json").string()), ConfigError);
    std::ofstream(dir / "identity.json")
        << R"({"layers":[{"allows_identity":false,"candidates":["Identity","IBConv_K3_E1"]}]})";
    EXPECT_THROW(build_space((dir / "identity.json").string()), ConfigError);
    std::ofstream(dir / "fixed.json")
        << R"({"layers":[{"fixed_expansion_one":true,"candidates":["IBConv_K3_E3"]}]})";
    EXPECT_THROW(build_space((dir / "fixed.json").string()), ConfigError);
}

TEST(SearchSpace, JsonRoundTrip) {
    const auto s = build_space("large");
    EXPECT_EQ(space_from_json(space_to_json(s)), s);
}

TEST(SearchSpace, Validate) {
    const auto s = build_space("basic");
    Rng rng(3);
    for (int i = 0; i < 100; ++i) EXPECT_TRUE(validate(s, sample_uniform(s, rng)));
    auto a = sample_uniform(s, rng);
    const auto pruned = prune_operation(s, 0, a[0]);
    EXPECT_FALSE(validate(pruned, a));
    Architecture short_arch{std::vector<std::string>(a.choices.begin(), a.choices.end() - 1)};
    EXPECT_THROW(validate(s, short_arch), ContractError);
}

TEST(SearchSpace, PruneDividesSize) {
    const auto s = build_space("basic");
    std::size_t six = 0, seven = 0;
    for (const auto& l : s.layers()) {
        if (l.candidates.size() == 6 && !six) six = l.index;
        if (l.candidates.size() == 7 && !seven) seven = l.index;
    }
    const auto p6 = prune_operation(s, six, s.layer(six).candidates.back());
    EXPECT_EQ(p6.size() * 6, s.size() * 5);
    const auto p7 = prune_operation(s, seven, s.layer(seven).candidates.front());
    EXPECT_EQ(p7.size() * 7, s.size() * 6);
    EXPECT_EQ(s.size(), build_space("basic").size()) << "original must stay unchanged";
    EXPECT_TRUE(p7.is_subspace_of(s));
    EXPECT_FALSE(s.is_subspace_of(p7));
}

TEST(SearchSpace, PruneOrderIndependent) {
    const auto s = build_space("basic");
    const auto& a = s.layer(3).candidates[1];
    const auto& b = s.layer(9).candidates[2];
    const auto x = prune_operation(prune_operation(s, 3, a), 9, b);
    const auto y = prune_operation(prune_operation(s, 9, b), 3, a);
    EXPECT_EQ(x, y);
}

TEST(SearchSpace, PruneErrors) {
    const auto s = toy_space({1, 2});
    EXPECT_THROW(prune_operation(s, 0, s.layer(0).candidates[0]), PruningFloorError);
    EXPECT_THROW(prune_operation(s, 1, "IBConv_K7_E6"), ContractError);
    EXPECT_THROW(prune_operation(s, 5, "Identity"), ContractError);
}

TEST(SearchSpace, SamplingIsDeterministic) {
    const auto s = build_space("large");
    Rng a(42), b(42);
    for (int i = 0; i < 50; ++i) EXPECT_EQ(sample_uniform(s, a), sample_uniform(s, b));
}

TEST(SearchSpace, SamplingIsUniformChiSquare) {
    const auto s = toy_space({3, 5, 7});
    Rng rng(2024);
    const int n = 10000;
    std::vector<std::map<std::string, int>> counts(3);
    for (int i = 0; i < n; ++i) {
        const auto a = sample_uniform(s, rng);
        for (std::size_t j = 0; j < 3; ++j) ++counts[j][a[j]];
    }
    for (std::size_t j = 0; j < 3; ++j) {
        const auto k = s.layer(j).candidates.size();
        const double expected = static_cast<double>(n) / static_cast<double>(k);
        double chi2 = 0.0;
        for (const auto& c : s.layer(j).candidates) {
            const double d = counts[j][c] - expected;
            chi2 += d * d / expected;
        }
        const boost::math::chi_squared dist(static_cast<double>(k - 1));
        EXPECT_LT(chi2, boost::math::quantile(dist, 0.99)) << "layer " << j;
    }
}

TEST(SearchSpace, OperationIds) {
    const auto op = Operation::from_id("IBConv_K5_E3");
    ASSERT_TRUE(op);
    EXPECT_EQ(op->kernel, 5);
    EXPECT_EQ(op->expansion, 3);
    EXPECT_FALSE(op->is_identity);
    EXPECT_TRUE(Operation::from_id("Identity")->is_identity);
    EXPECT_FALSE(Operation::from_id("Conv3x3"));
}
