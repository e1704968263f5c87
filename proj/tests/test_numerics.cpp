#include <catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <functional>

#include "msranker/gradcheck.hpp"
#include "msranker/params.hpp"
#include "msranker/tape.hpp"

using namespace msranker;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data) v = rng_uniform(rng, -scale, scale);
    return t;
}

// Finite-difference check of a scalar graph against tape backward. The graph
// is rebuilt from scratch for every probe, so any op with internal state
// (dropout masks) must re-derive it deterministically.
void check_graph(const std::function<Var(Tape&, const std::vector<Var>&)>& build,
                 std::vector<Tensor> inputs, double tol = 1e-6, double eps = 1e-6) {
    auto eval = [&build](const std::vector<Tensor>& ins) -> double {
        Tape tape;
        std::vector<Var> leaves;
        for (const Tensor& t : ins) leaves.push_back(tape.leaf(t, true));
        return tape.scalar(build(tape, leaves));
    };

    // analytic gradients
    Tape tape;
    std::vector<Var> leaves;
    for (const Tensor& t : inputs) leaves.push_back(tape.leaf(t, true));
    Var loss = build(tape, leaves);
    tape.backward(loss);

    for (size_t k = 0; k < inputs.size(); ++k) {
        const Tensor* g = tape.grad(leaves[k]);
        for (long long i = 0; i < inputs[k].size(); ++i) {
            const double saved = inputs[k].data[static_cast<size_t>(i)];
            inputs[k].data[static_cast<size_t>(i)] = saved + eps;
            const double fp = eval(inputs);
            inputs[k].data[static_cast<size_t>(i)] = saved - eps;
            const double fm = eval(inputs);
            inputs[k].data[static_cast<size_t>(i)] = saved;
            const double numeric = (fp - fm) / (2 * eps);
            const double analytic = g ? g->data[static_cast<size_t>(i)] : 0.0;
            INFO("input " << k << " entry " << i << " analytic " << analytic << " numeric "
                          << numeric);
            REQUIRE(std::fabs(analytic - numeric) <=
                    tol * std::max({1.0, std::fabs(analytic), std::fabs(numeric)}));
        }
    }
}

// Loss that weights every output entry differently, catching transposed or
// misrouted gradients that a plain sum would miss. The weights derive from a
// fixed seed so graph rebuilds see identical values.
Var weighted_sum(Tape& t, Var x, uint64_t seed) {
    Rng rng = make_rng(seed, 77);
    Tensor w = random_tensor(t.val(x).shape, rng);
    Var wv = t.leaf(std::move(w), false);
    if (t.val(x).rank() == 1) return t.dot(x, wv);
    return t.sum(t.mul(x, wv));
}

}  // namespace

TEST_CASE("softmax closed forms") {
    Tape t;
    Var a = t.softmax_vec(t.leaf(Tensor::vec({0.0, 0.0}), false));
    REQUIRE(t.val(a).at(0) == Catch::Approx(0.5).margin(1e-12));
    REQUIRE(t.val(a).at(1) == Catch::Approx(0.5).margin(1e-12));

    Var b = t.softmax_vec(t.leaf(Tensor::vec({0.0, std::log(3.0)}), false));
    REQUIRE(t.val(b).at(0) == Catch::Approx(0.25).margin(1e-12));
    REQUIRE(t.val(b).at(1) == Catch::Approx(0.75).margin(1e-12));
}

TEST_CASE("softmax outputs are a distribution for any finite input") {
    Rng rng = make_rng(7, 0);
    for (int rep = 0; rep < 50; ++rep) {
        Tape t;
        const int n = 1 + static_cast<int>(rng_below(rng, 8));
        Tensor x = random_tensor({n}, rng, 50.0);
        const int valid = 1 + static_cast<int>(rng_below(rng, static_cast<uint64_t>(n)));
        Var s = t.softmax_vec(t.leaf(x, false), valid);
        double sum = 0.0;
        for (int i = 0; i < n; ++i) {
            REQUIRE(t.val(s).at(i) >= 0.0);
            if (i >= valid) REQUIRE(t.val(s).at(i) == 0.0);
            sum += t.val(s).at(i);
        }
        REQUIRE(sum == Catch::Approx(1.0).margin(1e-6));
    }
}

TEST_CASE("softmax is shift invariant") {
    Rng rng = make_rng(8, 0);
    Tape t;
    Tensor x = random_tensor({5}, rng, 3.0);
    Tensor shifted = x;
    for (double& v : shifted.data) v += 123.75;
    Var a = t.softmax_vec(t.leaf(x, false));
    Var b = t.softmax_vec(t.leaf(shifted, false));
    for (int i = 0; i < 5; ++i)
        REQUIRE(t.val(a).at(i) == Catch::Approx(t.val(b).at(i)).margin(1e-9));
}

TEST_CASE("maxpool over rows") {
    Tape t;
    Var m = t.leaf(Tensor::mat(2, 2, {1, 5, 3, 2}), false);
    Var p = t.maxpool_cols(m);
    REQUIRE(t.val(p).at(0) == 3.0);
    REQUIRE(t.val(p).at(1) == 5.0);
}

TEST_CASE("maxpool gradient routes only to the argmax") {
    Tape t;
    Var m = t.leaf(Tensor::mat(2, 2, {1, 5, 3, 2}), true);
    Var p = t.maxpool_cols(m);
    Var loss = t.sum(p);
    t.backward(loss);
    const Tensor* g = t.grad(m);
    REQUIRE(g != nullptr);
    REQUIRE(g->at(0, 0) == 0.0);
    REQUIRE(g->at(1, 0) == 1.0);
    REQUIRE(g->at(0, 1) == 1.0);
    REQUIRE(g->at(1, 1) == 0.0);
}

TEST_CASE("backward of sum of squares is 2x") {
    Tape t;
    Tensor x = Tensor::vec({1.0, -2.0, 3.5});
    Var v = t.leaf(x, true);
    Var loss = t.dot(v, v);
    t.backward(loss);
    const Tensor* g = t.grad(v);
    for (int i = 0; i < 3; ++i) REQUIRE(g->at(i) == Catch::Approx(2.0 * x.at(i)));
}

TEST_CASE("backward rejects non-scalar losses") {
    Tape t;
    Var v = t.leaf(Tensor::vec({1.0, 2.0}), true);
    REQUIRE_THROWS_AS(t.backward(v), ValidationError);
}

TEST_CASE("shape mismatches name both shapes") {
    Tape t;
    Var a = t.leaf(Tensor::vec({1.0, 2.0}), false);
    Var b = t.leaf(Tensor::vec({1.0, 2.0, 3.0}), false);
    REQUIRE_THROWS_WITH(t.add(a, b), Catch::Matchers::ContainsSubstring("[2]") &&
                                         Catch::Matchers::ContainsSubstring("[3]"));
}

TEST_CASE("dropout with train off is the exact identity") {
    Tape t;
    Rng rng = make_rng(3, 0);
    Var x = t.leaf(Tensor::vec({1.0, 2.0, 3.0}), true);
    Var y = t.dropout(x, 0.5, rng, false);
    REQUIRE(y.i == x.i);  // same node, bit-exact by construction
}

TEST_CASE("dropout scales retained units") {
    Rng rng = make_rng(4, 0);
    Tape t;
    Tensor x = Tensor::vec(std::vector<double>(1000, 1.0));
    Var y = t.dropout(t.leaf(x, false), 0.25, rng, true);
    int kept = 0;
    for (int i = 0; i < 1000; ++i) {
        const double v = t.val(y).at(i);
        REQUIRE((v == 0.0 || v == Catch::Approx(1.0 / 0.75)));
        if (v != 0.0) ++kept;
    }
    REQUIRE(kept > 600);
    REQUIRE(kept < 900);
}

TEST_CASE("per-op gradients match finite differences") {
    Rng rng = make_rng(42, 0);

    SECTION("add, mul, affine") {
        check_graph(
            [](Tape& t, const std::vector<Var>& v) {
                return weighted_sum(t, t.affine(t.mul(t.add(v[0], v[1]), v[2]), 1.7, -0.3), 1);
            },
            {random_tensor({4}, rng), random_tensor({4}, rng), random_tensor({4}, rng)});
    }
    SECTION("matmul all transpose combinations") {
        for (const bool ta : {false, true})
            for (const bool tb : {false, true}) {
                Shape sa = ta ? Shape{4, 3} : Shape{3, 4};
                Shape sb = tb ? Shape{2, 4} : Shape{4, 2};
                check_graph(
                    [ta, tb](Tape& t, const std::vector<Var>& v) {
                        return weighted_sum(t, t.matmul(v[0], v[1], ta, tb), 2);
                    },
                    {random_tensor(sa, rng), random_tensor(sb, rng)});
            }
    }
    SECTION("matvec both orientations") {
        for (const bool ta : {false, true}) {
            Shape sx = ta ? Shape{3} : Shape{4};
            check_graph(
                [ta](Tape& t, const std::vector<Var>& v) {
                    return weighted_sum(t, t.matvec(v[0], v[1], ta), 3);
                },
                {random_tensor({3, 4}, rng), random_tensor(sx, rng)});
        }
    }
    SECTION("dot and scale_vs") {
        check_graph(
            [](Tape& t, const std::vector<Var>& v) {
                Var s = t.dot(v[0], v[1]);
                return weighted_sum(t, t.scale_vs(v[2], s), 4);
            },
            {random_tensor({3}, rng), random_tensor({3}, rng), random_tensor({5}, rng)});
    }
    SECTION("concat and slicing") {
        check_graph(
            [](Tape& t, const std::vector<Var>& v) {
                Var c = t.concat_vec({v[0], v[1], v[0]});
                return weighted_sum(t, t.slice_vec(c, 1, 5), 5);
            },
            {random_tensor({3}, rng), random_tensor({2}, rng)});
    }
    SECTION("concat_cols, stack_rows, row_view") {
        check_graph(
            [](Tape& t, const std::vector<Var>& v) {
                Var m = t.concat_cols({v[0], v[1]});
                Var r0 = t.row_view(m, 0);
                Var r1 = t.row_view(m, 1);
                Var s = t.stack_rows({r1, r0, r1});
                return weighted_sum(t, s, 6);
            },
            {random_tensor({2, 3}, rng), random_tensor({2, 2}, rng)});
    }
    SECTION("broadcast ops") {
        check_graph(
            [](Tape& t, const std::vector<Var>& v) {
                Var a = t.row_broadcast_add(v[0], v[1]);
                Var b = t.col_broadcast_add(a, v[2]);
                Var c = t.row_broadcast_mul(b, v[1]);
                Var d = t.scalar_broadcast_add(c, t.dot(v[2], v[2]));
                return weighted_sum(t, d, 7);
            },
            {random_tensor({3, 4}, rng), random_tensor({4}, rng), random_tensor({3}, rng)});
    }
    SECTION("nonlinearities") {
        check_graph(
            [](Tape& t, const std::vector<Var>& v) {
                Var a = t.tanh_(v[0]);
                Var b = t.sigmoid(v[0]);
                Var c = t.exp_(t.affine(v[0], 0.3, 0.0));
                return t.add(t.add(weighted_sum(t, a, 8), weighted_sum(t, b, 9)),
                             weighted_sum(t, c, 10));
            },
            {random_tensor({6}, rng)});
    }
    SECTION("softmax_vec with mask") {
        check_graph(
            [](Tape& t, const std::vector<Var>& v) {
                return weighted_sum(t, t.softmax_vec(v[0], 4), 11);
            },
            {random_tensor({6}, rng)});
    }
    SECTION("softmax_cols with mask") {
        check_graph(
            [](Tape& t, const std::vector<Var>& v) {
                return weighted_sum(t, t.softmax_cols(v[0], 3), 12);
            },
            {random_tensor({4, 3}, rng)});
    }
    SECTION("log_softmax") {
        check_graph(
            [](Tape& t, const std::vector<Var>& v) {
                return weighted_sum(t, t.log_softmax_vec(v[0]), 13);
            },
            {random_tensor({2}, rng, 2.0)});
    }
    SECTION("maxpool_cols with mask") {
        check_graph(
            [](Tape& t, const std::vector<Var>& v) {
                return weighted_sum(t, t.maxpool_cols(v[0], 3), 14);
            },
            {random_tensor({4, 3}, rng)});
    }
    SECTION("dropout with a replayed mask") {
        check_graph(
            [](Tape& t, const std::vector<Var>& v) {
                Rng drop_rng = make_rng(99, 1);  // identical mask on every rebuild
                Var d = t.dropout(v[0], 0.5, drop_rng, true);
                Rng wrng = make_rng(99, 2);
                Tensor w = random_tensor({6}, wrng);
                return t.dot(d, t.leaf(std::move(w), false));
            },
            {random_tensor({6}, rng)});
    }
    SECTION("embedding gather") {
        // embed_rows is exercised through the model paths; here only the
        // values are checked.
        Tape t;
        Tensor table = random_tensor({5, 3}, rng);
        Var e = t.embed_rows(table, {2, 0, 2});
        for (int j = 0; j < 3; ++j) {
            REQUIRE(t.val(e).at(0, j) == table.at(2, j));
            REQUIRE(t.val(e).at(1, j) == table.at(0, j));
            REQUIRE(t.val(e).at(2, j) == table.at(2, j));
        }
    }
}

TEST_CASE("deterministic forward and backward") {
    auto run = [] {
        Rng rng = make_rng(5, 0);
        Tape t;
        Var a = t.leaf(random_tensor({4, 4}, rng), true);
        Var b = t.leaf(random_tensor({4}, rng), true);
        Var loss = t.sum(t.tanh_(t.matvec(a, b)));
        t.backward(loss);
        return std::make_pair(t.scalar(loss), digest(*t.grad(a)));
    };
    const auto r1 = run();
    const auto r2 = run();
    REQUIRE(r1.first == r2.first);
    REQUIRE(r1.second == r2.second);
}

TEST_CASE("param store basics") {
    ParamStore s;
    s.add("w", Tensor::vec({1.0, 2.0}));
    REQUIRE_THROWS_AS(s.add("w", Tensor::vec({1.0})), ValidationError);
    REQUIRE(s.grad("w").shape == Shape{2});
    s.grad("w").at(0) = 5.0;
    s.zero_grads();
    REQUIRE(s.grad("w").at(0) == 0.0);
    REQUIRE_THROWS_AS(s.param("nope"), ValidationError);
}

TEST_CASE("checkpoint round trip is bit exact") {
    Rng rng = make_rng(11, 0);
    ParamStore s;
    s.add("alpha", random_tensor({3, 7}, rng));
    s.add("beta", random_tensor({5}, rng));
    const std::string path =
        (std::filesystem::temp_directory_path() / "msranker_ckpt_test.bin").string();
    save_checkpoint(path, s, "{\"d_g\":4}", {"<pad>", "<unk>", "alpha", "beta"});
    const Checkpoint ck = load_checkpoint(path);
    REQUIRE(ck.config_json == "{\"d_g\":4}");
    REQUIRE(ck.vocab_tokens.size() == 4);
    for (const auto& name : s.names()) {
        const Tensor& a = s.param(name);
        const Tensor& b = ck.store.param(name);
        REQUIRE(a.shape == b.shape);
        REQUIRE(std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0);
    }
    std::filesystem::remove(path);
}

TEST_CASE("adam with zero gradients leaves fresh parameters unchanged") {
    Rng rng = make_rng(12, 0);
    ParamStore s;
    s.add("w", random_tensor({4, 4}, rng));
    const uint64_t before = s.checksum();
    Optimizer opt("adam");
    opt.step(s, 1e-3);
    REQUIRE(s.checksum() == before);
    REQUIRE(s.version() == 1);
}

TEST_CASE("grad_check on a quadratic loss") {
    Rng rng = make_rng(13, 0);
    ParamStore s;
    s.add("x", random_tensor({6}, rng));
    auto fn = [](const ParamStore& st) {
        double acc = 0.0;
        for (double v : st.param("x").data) acc += v * v;
        return acc;
    };
    // analytic gradient of sum x^2
    for (long long i = 0; i < 6; ++i)
        s.grad("x").data[static_cast<size_t>(i)] = 2.0 * s.param("x").data[static_cast<size_t>(i)];
    const GradCheckReport rep = grad_check(fn, s, 1e-5, 1e-8);
    REQUIRE(rep.ok);
    REQUIRE(rep.max_rel_err < 1e-8);
}

TEST_CASE("grad_check on a constant loss reports zeros") {
    ParamStore s;
    s.add("x", Tensor::vec({1.0, 2.0}));
    auto fn = [](const ParamStore&) { return 3.5; };
    const GradCheckReport rep = grad_check(fn, s, 1e-5, 1e-8);
    REQUIRE(rep.ok);
    REQUIRE(rep.max_rel_err == 0.0);
}
