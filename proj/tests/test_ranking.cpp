#include <catch_amalgamated.hpp>

#include <algorithm>
#include <numeric>

#include "msranker/ranking.hpp"
#include "msranker/rng.hpp"
#include "oracles.hpp"

using namespace msranker;

TEST_CASE("average precision closed forms") {
    RankedList l;
    REQUIRE(l.average_precision() == 0.0);  // empty list
    l.insert(0, 0.9, 1);
    REQUIRE(l.average_precision() == Catch::Approx(1.0));

    RankedList l2;
    l2.insert(0, 0.9, 1);
    l2.insert(1, 0.5, 0);
    l2.insert(2, 0.3, 1);
    // (1/2) * (1/1 + 2/3), confirmed by the brute-force oracle below
    const double expect = oracle::brute_ap({{0.9, 1}, {0.5, 0}, {0.3, 1}});
    REQUIRE(expect == Catch::Approx(5.0 / 6.0).epsilon(1e-12));
    REQUIRE(l2.average_precision() == Catch::Approx(expect).epsilon(1e-12));

    RankedList l3;
    l3.insert(0, 0.8, 0);
    l3.insert(1, 0.2, 0);
    REQUIRE(l3.average_precision() == 0.0);  // N = 0 convention
}

TEST_CASE("insert keeps score-descending order with stable ties") {
    RankedList l;
    l.insert(0, 0.9, 0);
    l.insert(1, 0.95, 1);
    REQUIRE(l.entries()[0].cand_index == 1);
    REQUIRE(l.entries()[1].cand_index == 0);

    RankedList ties;
    ties.insert(7, 0.5, 0);
    ties.insert(3, 0.5, 1);
    REQUIRE(ties.entries()[0].cand_index == 7);  // earlier arrival first
    REQUIRE(ties.entries()[1].cand_index == 3);

    REQUIRE_THROWS_AS(ties.insert(7, 0.2, 0), ValidationError);
    REQUIRE_THROWS_AS(ties.insert(9, 1.5, 0), ValidationError);
}

TEST_CASE("step rewards") {
    REQUIRE(step_reward(0.5, 0.5) == Catch::Approx(0.1));
    REQUIRE(step_reward(0.8, 0.5) == Catch::Approx(0.3));
    REQUIRE(step_reward(0.75, 1.0) == Catch::Approx(-0.25));
    REQUIRE(step_reward(0.5 + 1e-13, 0.5) == Catch::Approx(0.1));  // tolerance branch
    REQUIRE_THROWS_AS(step_reward(1.2, 0.5), ValidationError);
}

TEST_CASE("map and mrr closed forms") {
    RankedList one;
    one.insert(0, 0.9, 0);
    one.insert(1, 0.5, 1);
    one.insert(2, 0.1, 0);
    const MapMrr m = map_mrr({one});
    REQUIRE(m.mrr == Catch::Approx(0.5));

    RankedList perfect;
    perfect.insert(0, 0.9, 1);
    perfect.insert(1, 0.1, 0);
    const MapMrr p = map_mrr({perfect});
    REQUIRE(p.map == Catch::Approx(1.0));
    REQUIRE(p.mrr == Catch::Approx(1.0));

    RankedList hopeless;
    hopeless.insert(0, 0.9, 0);
    REQUIRE_THROWS_AS(map_mrr({hopeless}), ValidationError);
}

TEST_CASE("metrics match the reference implementation on random questions") {
    Rng rng = make_rng(101, 0);
    std::vector<RankedList> lists;
    std::vector<std::vector<oracle::ScoredLabel>> raw;
    for (int q = 0; q < 200; ++q) {
        const int n = 1 + static_cast<int>(rng_below(rng, 12));
        RankedList l;
        std::vector<oracle::ScoredLabel> items;
        bool any = false;
        for (int i = 0; i < n; ++i) {
            const double score = rng_uniform(rng);
            int label = rng_below(rng, 4) == 0 ? 1 : 0;
            if (i == n - 1 && !any && label == 0) label = 1;  // keep it answerable
            any = any || label == 1;
            l.insert(i, score, label);
            items.push_back({score, label});
        }
        lists.push_back(std::move(l));
        raw.push_back(std::move(items));
    }
    const MapMrr m = map_mrr(lists);
    REQUIRE(m.map == Catch::Approx(oracle::brute_map(raw)).margin(1e-12));
    REQUIRE(m.mrr == Catch::Approx(oracle::brute_mrr(raw)).margin(1e-12));
}

TEST_CASE("incremental AP equals from-scratch AP after every insert") {
    Rng rng = make_rng(102, 0);
    for (int rep = 0; rep < 300; ++rep) {
        const int n = 1 + static_cast<int>(rng_below(rng, 30));
        RankedList l;
        std::vector<oracle::ScoredLabel> raw;
        for (int i = 0; i < n; ++i) {
            // coarse scores force plenty of ties through the stable path
            const double score = static_cast<double>(rng_below(rng, 5)) / 4.0;
            const int label = rng_below(rng, 3) == 0 ? 1 : 0;
            const double ap = l.insert(i, score, label);
            raw.push_back({score, label});
            REQUIRE(ap == Catch::Approx(oracle::brute_ap(raw)).margin(1e-12));
        }
    }
}

TEST_CASE("reward telescoping over random episodes") {
    Rng rng = make_rng(103, 0);
    for (int rep = 0; rep < 200; ++rep) {
        const int n = 1 + static_cast<int>(rng_below(rng, 20));
        RankedList l;
        double ap_prev = 0.0;
        double reward_sum = 0.0;
        int equal_steps = 0;
        for (int i = 0; i < n; ++i) {
            const double ap = l.insert(i, rng_uniform(rng), rng_below(rng, 3) == 0 ? 1 : 0);
            const double r = step_reward(ap, ap_prev);
            reward_sum += r;
            if (r == 0.1 && std::fabs(ap - ap_prev) <= 1e-12) ++equal_steps;
            ap_prev = ap;
        }
        REQUIRE(reward_sum - 0.1 * equal_steps ==
                Catch::Approx(l.average_precision()).margin(1e-9));
    }
}

TEST_CASE("perfect episode gives first reward 1 and final AP 1") {
    RankedList l;
    const double ap1 = l.insert(0, 0.9, 1);
    REQUIRE(step_reward(ap1, 0.0) == Catch::Approx(1.0));
    l.insert(1, 0.8, 1);
    l.insert(2, 0.2, 0);
    l.insert(3, 0.1, 0);
    REQUIRE(l.average_precision() == Catch::Approx(1.0));
}

TEST_CASE("anti-oracle ordering yields the worst-case AP") {
    // scores = 1 - label pushes all corrects to the bottom
    for (int total = 2; total <= 8; ++total) {
        for (int correct = 1; correct < total; ++correct) {
            RankedList l;
            for (int i = 0; i < total; ++i) {
                const int label = i < correct ? 1 : 0;
                l.insert(i, label == 1 ? 0.0 : 1.0, label);
            }
            REQUIRE(l.average_precision() ==
                    Catch::Approx(oracle::worst_case_ap(total, correct)).margin(1e-12));
        }
    }
}

TEST_CASE("final order depends only on scores and arrival") {
    RankedList a, b;
    const std::vector<std::tuple<int, double, int>> inserts = {
        {0, 0.4, 1}, {1, 0.4, 0}, {2, 0.9, 0}, {3, 0.1, 1}};
    for (const auto& [idx, score, label] : inserts) a.insert(idx, score, label);
    for (const auto& [idx, score, label] : inserts) b.insert(idx, score, label);
    for (size_t i = 0; i < a.entries().size(); ++i)
        REQUIRE(a.entries()[i].cand_index == b.entries()[i].cand_index);
    // expected order: 2 (0.9), 0 (0.4, earlier), 1 (0.4), 3 (0.1)
    REQUIRE(a.entries()[0].cand_index == 2);
    REQUIRE(a.entries()[1].cand_index == 0);
    REQUIRE(a.entries()[2].cand_index == 1);
    REQUIRE(a.entries()[3].cand_index == 3);
}

TEST_CASE("metrics stay in the unit interval") {
    Rng rng = make_rng(104, 0);
    std::vector<RankedList> lists;
    for (int q = 0; q < 50; ++q) {
        RankedList l;
        const int n = 1 + static_cast<int>(rng_below(rng, 10));
        for (int i = 0; i < n; ++i)
            l.insert(i, rng_uniform(rng), i == 0 ? 1 : (rng_below(rng, 2) == 0 ? 1 : 0));
        lists.push_back(std::move(l));
    }
    const MapMrr m = map_mrr(lists);
    REQUIRE(m.map >= 0.0);
    REQUIRE(m.map <= 1.0);
    REQUIRE(m.mrr >= 0.0);
    REQUIRE(m.mrr <= 1.0);
}
