#include <doctest.h>

#include <algorithm>
#include <set>

#include "evonas/moea.hpp"
#include "support/oracles.hpp"

using namespace evonas;

namespace {

FitnessMatrix random_fitness(int n, Rng& rng) {
    FitnessMatrix F;
    F.rows.reserve(n);
    for (int i = 0; i < n; ++i)
        F.rows.push_back({rng.uniform(0.0, 1.0), rng.uniform(1.0, 10.0),
                          rng.uniform(1e5, 1e7)});
    return F;
}

Genotype dummy_genotype(int tag) {
    Genotype g;
    g.integer_segment = {tag};
    g.depth_segment = {1};
    return g;
}

} // namespace

TEST_CASE("dominance basics") {
    CHECK(dominates({1, 1, 1}, {2, 2, 2}));
    CHECK(!dominates({1, 1, 1}, {1, 1, 1})); // non-strict
    CHECK(!dominates({1, 3, 2}, {2, 1, 2}));
    CHECK(!dominates({2, 1, 2}, {1, 3, 2}));
    CHECK(dominates({1, 1, 1}, {1, 1, 2}));
    const double nan = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(dominates({nan, 1, 1}, {1, 1, 1}), InvalidObjective);
}

TEST_CASE("non-dominated sort: degenerate fronts") {
    FitnessMatrix F;
    F.rows = {{1, 1, 1}, {1, 1, 1}, {1, 1, 1}};
    const auto fronts = fast_nondominated_sort(F);
    REQUIRE(fronts.size() == 1);
    CHECK(fronts[0] == std::vector<int>{0, 1, 2});

    FitnessMatrix chain;
    chain.rows = {{1, 1, 1}, {2, 2, 2}, {3, 3, 3}};
    const auto cf = fast_nondominated_sort(chain);
    REQUIRE(cf.size() == 3);
    CHECK(cf[0] == std::vector<int>{0});
    CHECK(cf[1] == std::vector<int>{1});
    CHECK(cf[2] == std::vector<int>{2});
}

TEST_CASE("non-dominated sort matches the brute-force oracle") {
    Rng rng(2024);
    for (int trial = 0; trial < 20; ++trial) {
        const FitnessMatrix F = random_fitness(50, rng);
        auto fronts = fast_nondominated_sort(F);
        auto expected = oracle::brute_force_fronts(F);
        REQUIRE(fronts.size() == expected.size());
        for (std::size_t k = 0; k < fronts.size(); ++k) {
            std::sort(fronts[k].begin(), fronts[k].end());
            std::sort(expected[k].begin(), expected[k].end());
            CHECK(fronts[k] == expected[k]);
        }
    }
}

TEST_CASE("sorting invariant: every rank-k point has a dominator in rank k-1") {
    Rng rng(55);
    const FitnessMatrix F = random_fitness(40, rng);
    const auto fronts = fast_nondominated_sort(F);
    for (std::size_t k = 1; k < fronts.size(); ++k) {
        for (int i : fronts[k]) {
            bool found = false;
            for (int j : fronts[k - 1])
                if (dominates(F.rows[j], F.rows[i])) {
                    found = true;
                    break;
                }
            CHECK(found);
        }
    }
}

TEST_CASE("crowding distance boundary and middle values") {
    CHECK(crowding_distance({{1, 2, 3}}) == std::vector<double>{kInfinity});
    CHECK(crowding_distance({{1, 2, 3}, {2, 1, 3}}) ==
          std::vector<double>{kInfinity, kInfinity});

    // Three collinear evenly spaced points in two active objectives; the
    // third objective has zero width and must contribute nothing.
    const std::vector<ObjectiveVector> front = {
        {0.0, 2.0, 5.0}, {1.0, 1.0, 5.0}, {2.0, 0.0, 5.0}};
    const auto d = crowding_distance(front);
    CHECK(d[0] == kInfinity);
    CHECK(d[2] == kInfinity);
    CHECK(d[1] == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("crowding matches the definitional oracle bitwise") {
    Rng rng(66);
    for (int t = 0; t < 20; ++t) {
        std::vector<ObjectiveVector> front;
        for (int i = 0; i < 12; ++i)
            front.push_back({rng.uniform(), rng.uniform(), rng.uniform()});
        const auto got = crowding_distance(front);
        const auto want = oracle::crowding_by_definition(front);
        REQUIRE(got.size() == want.size());
        for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == want[i]);
    }
}

TEST_CASE("survival: identity and dominance chain") {
    Population pop;
    for (int i = 0; i < 4; ++i) pop.members.push_back(dummy_genotype(i));
    pop.fitness.rows = {{4, 4, 4}, {1, 1, 1}, {3, 3, 3}, {2, 2, 2}};

    const Population all = survival(pop, 4);
    CHECK(all.members.size() == 4);

    const Population best2 = survival(pop, 2);
    REQUIRE(best2.members.size() == 2);
    CHECK(best2.fitness.rows[0] == ObjectiveVector{1, 1, 1});
    CHECK(best2.fitness.rows[1] == ObjectiveVector{2, 2, 2});

    CHECK_THROWS_AS(survival(pop, 5), InsufficientPopulation);
}

TEST_CASE("survival matches the oracle NSGA-II selection") {
    Rng rng(77);
    for (int t = 0; t < 30; ++t) {
        const FitnessMatrix F = random_fitness(24, rng);
        auto got = survival_indices(F, 12);
        auto want = oracle::nsga2_selection(F, 12);
        std::sort(got.begin(), got.end());
        std::sort(want.begin(), want.end());
        CHECK(got == want);
    }
}

TEST_CASE("survival elitism: the whole first front survives when it fits") {
    Rng rng(88);
    const FitnessMatrix F = random_fitness(30, rng);
    const auto fronts = fast_nondominated_sort(F);
    const int n = std::max<int>(fronts[0].size(), 15);
    const auto selected = survival_indices(F, n);
    const std::set<int> sel(selected.begin(), selected.end());
    for (int i : fronts[0]) CHECK(sel.count(i) == 1);
}

TEST_CASE("selection is invariant to positive rescaling of one objective") {
    Rng rng(99);
    FitnessMatrix F = random_fitness(24, rng);
    const auto base_fronts = fast_nondominated_sort(F);
    const auto base_sel = survival_indices(F, 12);

    FitnessMatrix scaled = F;
    for (ObjectiveVector& v : scaled.rows) v.latency_ms *= 1000.0;
    CHECK(fast_nondominated_sort(scaled) == base_fronts);
    CHECK(survival_indices(scaled, 12) == base_sel);
}

TEST_CASE("pareto_front equals the brute-force filter") {
    Rng rng(111);
    Population pop;
    pop.fitness = random_fitness(50, rng);
    for (int i = 0; i < 50; ++i) pop.members.push_back(dummy_genotype(i));

    const ParetoArchive archive = pareto_front(pop);
    const auto expected = oracle::brute_force_pareto(pop.fitness);
    CHECK(archive.size() == expected.size());
    for (int idx : expected) {
        bool found = false;
        for (const auto& e : archive.entries())
            if (e.objectives == pop.fitness.rows[idx]) found = true;
        CHECK(found);
    }
}

TEST_CASE("pareto_front drops dominated duplicates; singleton kept") {
    Population single;
    single.members.push_back(dummy_genotype(0));
    single.fitness.rows = {{1, 1, 1}};
    CHECK(pareto_front(single).size() == 1);

    Population pop;
    pop.members = {dummy_genotype(0), dummy_genotype(1)};
    pop.fitness.rows = {{1, 1, 1}, {2, 2, 2}};
    const ParetoArchive archive = pareto_front(pop);
    REQUIRE(archive.size() == 1);
    CHECK(archive.entries()[0].objectives == ObjectiveVector{1, 1, 1});
}

TEST_CASE("archive insertion keeps mutual non-dominance and monotone hypervolume") {
    Rng rng(123);
    ParetoArchive archive;
    const ObjectiveVector ref{2.0, 2.0, 2.0};
    double last_hv = 0.0;
    for (int i = 0; i < 300; ++i) {
        archive.insert(dummy_genotype(i),
                       {rng.uniform(), rng.uniform(), rng.uniform()});
        for (const auto& a : archive.entries())
            for (const auto& b : archive.entries())
                if (&a != &b) CHECK(!dominates(a.objectives, b.objectives));
        std::vector<ObjectiveVector> pts;
        for (const auto& e : archive.entries()) pts.push_back(e.objectives);
        const double hv = hypervolume(pts, ref).volume;
        CHECK(hv >= last_hv - 1e-15);
        last_hv = hv;
    }
}

TEST_CASE("hypervolume analytic cases") {
    const std::vector<std::vector<double>> unit = {{1.0, 1.0, 1.0}};
    CHECK(hypervolume(unit, std::vector<double>{2.0, 2.0, 2.0}).volume ==
          doctest::Approx(1.0).epsilon(1e-12));

    const std::vector<std::vector<double>> pair = {{1.0, 2.0}, {2.0, 1.0}};
    const HypervolumeResult two = hypervolume(pair, std::vector<double>{3.0, 3.0});
    CHECK(two.volume == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(two.skipped == 0);

    // Points failing to dominate the reference are skipped and counted.
    const std::vector<std::vector<double>> mixed = {{1.0, 1.0}, {4.0, 0.5}};
    const HypervolumeResult skip = hypervolume(mixed, std::vector<double>{3.0, 3.0});
    CHECK(skip.skipped == 1);
    CHECK(skip.volume == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("3-objective hypervolume within 3 sigma of Monte-Carlo") {
    Rng rng(321);
    for (int trial = 0; trial < 3; ++trial) {
        std::vector<std::vector<double>> pts;
        for (int i = 0; i < 20; ++i)
            pts.push_back({rng.uniform(), rng.uniform(), rng.uniform()});
        const std::vector<double> ref = {1.1, 1.1, 1.1};
        const double exact = hypervolume(pts, ref).volume;
        const auto mc = oracle::mc_hypervolume(pts, ref, 200000, 1000 + trial);
        CHECK(std::abs(exact - mc.volume) <= 3.0 * mc.sigma + 1e-12);
    }
}

TEST_CASE("fitness csv carries rank and crowding columns") {
    FitnessMatrix F;
    F.rows = {{1, 1, 1}, {2, 2, 2}};
    const std::string csv = fitness_csv(F);
    CHECK(csv.find("id,err,latency_ms,macs,rank,crowding") == 0);
    CHECK(csv.find("\n0,1,1,1,0,inf") != std::string::npos);
    CHECK(csv.find("\n1,2,2,2,1,inf") != std::string::npos);
}
