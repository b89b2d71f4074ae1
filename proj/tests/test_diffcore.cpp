#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "doctest.h"
#include "subadapt/error.hpp"
#include "subadapt/grad_check.hpp"
#include "subadapt/rng.hpp"
#include "subadapt/tape.hpp"
#include "support.hpp"

using namespace subadapt;
using testsupport::rand_tensor;
using testsupport::rand_tensor_off_kink;
using testsupport::rand_positive;

namespace {

// Evaluates a scalar expression built from one probed leaf, returning value
// and the gradient at that leaf.
using BuildFn = std::function<int(Tape&, int)>;

GradCheckReport check_op(const Tensor& x0, const BuildFn& build, double tol = 1e-5) {
    ScalarFn fn = [&](const Tensor& x, Tensor* grad) {
        Tape tape;
        int xid = tape.leaf(x);
        int loss = build(tape, xid);
        if (grad) {
            auto g = tape.backward(loss);
            *grad = g[static_cast<std::size_t>(xid)];
        }
        return tape.value(loss).item();
    };
    return check_gradients(fn, x0, 1e-5, tol);
}

int weighted_mean(Tape& t, int y, const Tensor& w) {
    return t.mean_reduce(t.mul(y, t.leaf(w)));
}

}  // namespace

TEST_CASE("sigmoid and tanh match reference values") {
    Tape t;
    int x = t.leaf(Tensor::vec({1.0, 0.0, -1.0}));
    const Tensor& s = t.value(t.sigmoid(x));
    CHECK(std::abs(s.at(0) - 0.7310585786300049) <= 1e-15);
    CHECK(s.at(1) == 0.5);
    CHECK(std::abs(s.at(0) + s.at(2) - 1.0) <= 1e-15);  // sigma(-x) = 1 - sigma(x)
    const Tensor& h = t.value(t.tanh(x));
    CHECK(std::abs(h.at(0) - std::tanh(1.0)) <= 1e-16);
}

TEST_CASE("softmax cross entropy matches closed forms") {
    Tape t;
    int two = t.leaf(Tensor::vec({1.0, 0.0}));
    double loss2 = t.value(t.softmax_cross_entropy(two, 0)).item();
    CHECK(std::abs(loss2 - 0.31326168751822286) <= 1e-15);  // log(1 + e^-1)

    int uniform = t.leaf(Tensor::zeros({40}));
    double loss40 = t.value(t.softmax_cross_entropy(uniform, 7)).item();
    CHECK(std::abs(loss40 - 3.6888794541139363) <= 1e-14);  // log 40

    // A constant shift of every logit keeps the loss unchanged.
    Rng rng(11);
    Tensor logits = rand_tensor(rng, {6}, 2.0);
    Tensor shifted = logits;
    for (double& v : shifted.flat()) v += 123.25;
    Tape t2;
    double a = t2.value(t2.softmax_cross_entropy(t2.leaf(logits), 3)).item();
    double b = t2.value(t2.softmax_cross_entropy(t2.leaf(shifted), 3)).item();
    CHECK(std::abs(a - b) <= 1e-10);
}

TEST_CASE("cross_entropy_mean_rows averages per-row losses") {
    Rng rng(5);
    Tensor logits = rand_tensor(rng, {3, 4});
    std::vector<int> labels = {2, 0, 3};
    Tape t;
    double batched = t.value(t.cross_entropy_mean_rows(t.leaf(logits), labels)).item();
    double acc = 0.0;
    for (std::size_t r = 0; r < 3; ++r) {
        std::vector<double> row(logits.data().begin() + static_cast<std::ptrdiff_t>(r * 4),
                                logits.data().begin() + static_cast<std::ptrdiff_t>(r * 4 + 4));
        Tape tr;
        acc += tr.value(tr.softmax_cross_entropy(tr.leaf(Tensor::vec(row)),
                                                 labels[r])).item();
    }
    CHECK(std::abs(batched - acc / 3.0) <= 1e-14);
}

TEST_CASE("affine and matmul match hand-computed products") {
    Tape t;
    int x = t.leaf(Tensor::vec({1.0, 1.0}));
    int w = t.leaf(Tensor::matrix(2, 2, {1.0, 2.0, 3.0, 4.0}));
    int b = t.leaf(Tensor::zeros({2}));
    const Tensor& y = t.value(t.affine(x, w, b));
    CHECK(y.at(0) == 3.0);
    CHECK(y.at(1) == 7.0);

    int a = t.leaf(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
    int m = t.leaf(Tensor::matrix(3, 2, {7, 8, 9, 10, 11, 12}));
    const Tensor& p = t.value(t.matmul(a, m));
    CHECK(p.at(0, 0) == 58.0);
    CHECK(p.at(0, 1) == 64.0);
    CHECK(p.at(1, 0) == 139.0);
    CHECK(p.at(1, 1) == 154.0);

    // matmul_nt(a, m^T) equals matmul(a, m) for the same logical product.
    int mt = t.leaf(Tensor::matrix(2, 3, {7, 9, 11, 8, 10, 12}));
    const Tensor& pnt = t.value(t.matmul_nt(a, mt));
    for (std::size_t i = 0; i < 4; ++i) CHECK(pnt.at(i) == p.at(i));
}

TEST_CASE("elementwise op values") {
    Tape t;
    int x = t.leaf(Tensor::vec({-2.0, 0.0, 3.0}));
    const Tensor& lr = t.value(t.leaky_relu(x, 0.2));
    CHECK(lr.at(0) == -0.4);
    CHECK(lr.at(1) == 0.0);
    CHECK(lr.at(2) == 3.0);

    const Tensor& sq = t.value(t.square(x));
    CHECK(sq.at(0) == 4.0);

    int zero = t.leaf(Tensor::scalar(0.0));
    CHECK(t.value(t.sqrt_floor(zero)).item() == 1e-6);  // sqrt of the floor

    int four = t.leaf(Tensor::scalar(4.0));
    CHECK(t.value(t.sqrt_floor(four)).item() == 2.0);

    CHECK(t.value(t.mean_reduce(t.leaf(Tensor::vec({1, 2, 3, 4})))).item() == 2.5);
    CHECK(t.value(t.scale(four, -1.5)).item() == -6.0);
    CHECK(t.value(t.exp(zero)).item() == 1.0);
}

TEST_CASE("pairwise_sqdist matches hand-computed distances") {
    Tape t;
    int a = t.leaf(Tensor::matrix(2, 2, {0, 0, 1, 2}));
    int b = t.leaf(Tensor::matrix(1, 2, {3, 4}));
    const Tensor& d = t.value(t.pairwise_sqdist(a, b));
    CHECK(d.at(0, 0) == 25.0);
    CHECK(d.at(1, 0) == 8.0);
}

TEST_CASE("gather and concat select the right rows") {
    Tape t;
    int a = t.leaf(Tensor::matrix(3, 2, {1, 2, 3, 4, 5, 6}));
    const Tensor& g = t.value(t.gather_rows(a, {2, 0, 2}));
    CHECK(g.rows() == 3);
    CHECK(g.at(0, 0) == 5.0);
    CHECK(g.at(1, 1) == 2.0);
    CHECK(g.at(2, 1) == 6.0);

    int b = t.leaf(Tensor::matrix(1, 2, {7, 8}));
    const Tensor& c = t.value(t.concat_rows(a, b));
    CHECK(c.rows() == 4);
    CHECK(c.at(3, 0) == 7.0);
}

TEST_CASE("fan-out gradients accumulate") {
    Tape t;
    int x = t.leaf(Tensor::scalar(3.0));
    auto g1 = t.backward(t.add(x, x));
    CHECK(g1[static_cast<std::size_t>(x)].item() == 2.0);

    Tape t2;
    int y = t2.leaf(Tensor::scalar(3.0));
    auto g2 = t2.backward(t2.mul(y, y));
    CHECK(g2[static_cast<std::size_t>(y)].item() == 6.0);
}

TEST_CASE("gather_rows backward scatter-adds repeated indices") {
    Tape t;
    int a = t.leaf(Tensor::matrix(2, 2, {1, 1, 1, 1}));
    int g = t.gather_rows(a, {0, 0, 1});
    auto grads = t.backward(t.mean_reduce(g));
    const Tensor& ga = grads[static_cast<std::size_t>(a)];
    CHECK(ga.at(0, 0) == doctest::Approx(2.0 / 6.0).epsilon(1e-15));
    CHECK(ga.at(1, 0) == doctest::Approx(1.0 / 6.0).epsilon(1e-15));
}

TEST_CASE("backward needs a scalar seed") {
    Tape t;
    int x = t.leaf(Tensor::vec({1.0, 2.0}));
    CHECK_THROWS_AS((void)t.backward(x), ContractError);
}

TEST_CASE("shape mismatches raise DimError with both shapes") {
    Tape t;
    int a = t.leaf(Tensor::matrix(2, 3, std::vector<double>(6, 1.0)));
    int b = t.leaf(Tensor::matrix(2, 2, std::vector<double>(4, 1.0)));
    CHECK_THROWS_AS((void)t.add(a, b), DimError);
    CHECK_THROWS_AS((void)t.matmul(a, b), DimError);
    CHECK_THROWS_WITH_AS((void)t.matmul(a, b), doctest::Contains("[2x3]"), DimError);
}

TEST_CASE("gru_cell matches an independent scalar recomputation") {
    auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    const double x = 0.5, h = 0.25;
    const double wr = 0.3, ur = -0.2, br = 0.1;
    const double wu = 0.4, uu = 0.5, bu = -0.3;
    const double wc = 0.7, uc = -0.6, bc = 0.2;
    const double r = sig(x * wr + h * ur + br);
    const double u = sig(x * wu + h * uu + bu);
    const double c = std::tanh(x * wc + r * h * uc + bc);
    const double expected = (1.0 - u) * h + u * c;

    Tape t;
    int hp = t.leaf(Tensor::matrix(1, 1, {h}));
    auto mat = [&](double v) { return t.leaf(Tensor::matrix(1, 1, {v})); };
    auto vec1 = [&](double v) { return t.leaf(Tensor::vec({v})); };
    int out = t.gru_cell(hp, mat(wr), mat(ur), vec1(br), mat(wu), mat(uu), vec1(bu), mat(wc),
                         mat(uc), vec1(bc), Tensor::matrix(1, 1, {x}));
    CHECK(std::abs(t.value(out).item() - expected) <= 1e-15);
}

TEST_CASE("recording order of independent leaves does not change results") {
    Rng rng(21);
    Tensor av = rand_tensor(rng, {3, 3});
    Tensor bv = rand_tensor(rng, {3, 3});
    Tensor cv = rand_tensor(rng, {3, 3});

    Tape t1;
    int a1 = t1.leaf(av);
    int b1 = t1.leaf(bv);
    int c1 = t1.leaf(cv);
    int loss1 = t1.mean_reduce(t1.add(t1.mul(a1, b1), c1));
    auto g1 = t1.backward(loss1);

    Tape t2;
    int c2 = t2.leaf(cv);
    int b2 = t2.leaf(bv);
    int a2 = t2.leaf(av);
    int loss2 = t2.mean_reduce(t2.add(t2.mul(a2, b2), c2));
    auto g2 = t2.backward(loss2);

    CHECK(t1.value(loss1).item() == t2.value(loss2).item());
    CHECK(g1[static_cast<std::size_t>(a1)].data() == g2[static_cast<std::size_t>(a2)].data());
    CHECK(g1[static_cast<std::size_t>(c1)].data() == g2[static_cast<std::size_t>(c2)].data());
}

TEST_CASE("every primitive passes a finite-difference audit") {
    Rng rng(mix_seed(0xd1ffc0de, 1));
    const int trials = 10;

    struct NamedCase {
        std::string name;
        std::function<std::pair<Tensor, BuildFn>(Rng&)> make;
    };
    std::vector<NamedCase> cases;

    auto unary = [&](const std::string& name, auto op, bool positive = false) {
        cases.push_back({name, [op, positive](Rng& r) -> std::pair<Tensor, BuildFn> {
                             Tensor x0 = positive ? rand_positive(r, {3, 4})
                                                  : rand_tensor(r, {3, 4});
                             Tensor w = rand_tensor(r, {3, 4});
                             BuildFn build = [op, w](Tape& t, int x) {
                                 return weighted_mean(t, op(t, x), w);
                             };
                             return {x0, build};
                         }});
    };
    unary("exp", [](Tape& t, int x) { return t.exp(x); });
    unary("square", [](Tape& t, int x) { return t.square(x); });
    unary("sqrt_floor", [](Tape& t, int x) { return t.sqrt_floor(x); }, true);
    unary("sigmoid", [](Tape& t, int x) { return t.sigmoid(x); });
    unary("tanh", [](Tape& t, int x) { return t.tanh(x); });
    unary("scale", [](Tape& t, int x) { return t.scale(x, -1.7); });

    cases.push_back({"leaky_relu", [](Rng& r) -> std::pair<Tensor, BuildFn> {
                         Tensor x0 = rand_tensor_off_kink(r, {3, 4});
                         Tensor w = rand_tensor(r, {3, 4});
                         BuildFn build = [w](Tape& t, int x) {
                             return weighted_mean(t, t.leaky_relu(x, 0.2), w);
                         };
                         return {x0, build};
                     }});
    cases.push_back({"mean_reduce", [](Rng& r) -> std::pair<Tensor, BuildFn> {
                         return {rand_tensor(r, {4, 3}),
                                 [](Tape& t, int x) { return t.mean_reduce(x); }};
                     }});
    cases.push_back({"reshape", [](Rng& r) -> std::pair<Tensor, BuildFn> {
                         Tensor x0 = rand_tensor(r, {3, 4});
                         Tensor w = rand_tensor(r, {2, 6});
                         BuildFn build = [w](Tape& t, int x) {
                             return weighted_mean(t, t.reshape(x, {2, 6}), w);
                         };
                         return {x0, build};
                     }});
    cases.push_back({"gather_rows", [](Rng& r) -> std::pair<Tensor, BuildFn> {
                         Tensor x0 = rand_tensor(r, {5, 3});
                         Tensor w = rand_tensor(r, {4, 3});
                         BuildFn build = [w](Tape& t, int x) {
                             return weighted_mean(t, t.gather_rows(x, {0, 2, 2, 4}), w);
                         };
                         return {x0, build};
                     }});

    auto binary = [&](const std::string& name, auto op, std::vector<std::size_t> ls,
                      std::vector<std::size_t> rs, bool probe_left) {
        cases.push_back(
            {name, [op, ls, rs, probe_left](Rng& r) -> std::pair<Tensor, BuildFn> {
                 Tensor lv = rand_tensor(r, ls);
                 Tensor rv = rand_tensor(r, rs);
                 Tensor w;
                 {
                     Tape probe;
                     w = rand_tensor(
                         r, probe.value(op(probe, probe.leaf(lv), probe.leaf(rv))).shape());
                 }
                 Tensor x0 = probe_left ? lv : rv;
                 Tensor other = probe_left ? rv : lv;
                 BuildFn build = [op, other, w, probe_left](Tape& t, int x) {
                     int o = t.leaf(other);
                     int y = probe_left ? op(t, x, o) : op(t, o, x);
                     return weighted_mean(t, y, w);
                 };
                 return {x0, build};
             }});
    };
    auto add_op = [](Tape& t, int a, int b) { return t.add(a, b); };
    auto sub_op = [](Tape& t, int a, int b) { return t.sub(a, b); };
    auto mul_op = [](Tape& t, int a, int b) { return t.mul(a, b); };
    auto cat_op = [](Tape& t, int a, int b) { return t.concat_rows(a, b); };
    auto mm_op = [](Tape& t, int a, int b) { return t.matmul(a, b); };
    auto mmnt_op = [](Tape& t, int a, int b) { return t.matmul_nt(a, b); };
    auto arv_op = [](Tape& t, int a, int b) { return t.add_rowvec(a, b); };
    auto psd_op = [](Tape& t, int a, int b) { return t.pairwise_sqdist(a, b); };
    binary("add/left", add_op, {3, 4}, {3, 4}, true);
    binary("add/right", add_op, {3, 4}, {3, 4}, false);
    binary("sub/left", sub_op, {3, 4}, {3, 4}, true);
    binary("sub/right", sub_op, {3, 4}, {3, 4}, false);
    binary("mul/left", mul_op, {3, 4}, {3, 4}, true);
    binary("mul/right", mul_op, {3, 4}, {3, 4}, false);
    binary("concat_rows/top", cat_op, {2, 4}, {3, 4}, true);
    binary("concat_rows/bottom", cat_op, {2, 4}, {3, 4}, false);
    binary("matmul/left", mm_op, {3, 4}, {4, 2}, true);
    binary("matmul/right", mm_op, {3, 4}, {4, 2}, false);
    binary("matmul_nt/left", mmnt_op, {3, 4}, {2, 4}, true);
    binary("matmul_nt/right", mmnt_op, {3, 4}, {2, 4}, false);
    binary("add_rowvec/matrix", arv_op, {3, 4}, {4}, true);
    binary("add_rowvec/vector", arv_op, {3, 4}, {4}, false);
    binary("pairwise_sqdist/left", psd_op, {3, 4}, {2, 4}, true);
    binary("pairwise_sqdist/right", psd_op, {3, 4}, {2, 4}, false);

    for (int arg = 0; arg < 3; ++arg) {
        static const char* names[] = {"affine/x", "affine/w", "affine/b"};
        cases.push_back({names[arg], [arg](Rng& r) -> std::pair<Tensor, BuildFn> {
                             Tensor xv = rand_tensor(r, {4});
                             Tensor wv = rand_tensor(r, {3, 4});
                             Tensor bv = rand_tensor(r, {3});
                             Tensor mix = rand_tensor(r, {3});
                             Tensor probe = arg == 0 ? xv : arg == 1 ? wv : bv;
                             BuildFn build = [arg, xv, wv, bv, mix](Tape& t, int x) {
                                 int xi = arg == 0 ? x : t.leaf(xv);
                                 int wi = arg == 1 ? x : t.leaf(wv);
                                 int bi = arg == 2 ? x : t.leaf(bv);
                                 return weighted_mean(t, t.affine(xi, wi, bi), mix);
                             };
                             return {probe, build};
                         }});
    }

    cases.push_back({"softmax_cross_entropy", [](Rng& r) -> std::pair<Tensor, BuildFn> {
                         Tensor x0 = rand_tensor(r, {5});
                         int label = static_cast<int>(r.bounded(5));
                         BuildFn build = [label](Tape& t, int x) {
                             return t.softmax_cross_entropy(x, label);
                         };
                         return {x0, build};
                     }});
    cases.push_back({"cross_entropy_mean_rows", [](Rng& r) -> std::pair<Tensor, BuildFn> {
                         Tensor x0 = rand_tensor(r, {4, 5});
                         std::vector<int> labels;
                         for (int i = 0; i < 4; ++i)
                             labels.push_back(static_cast<int>(r.bounded(5)));
                         BuildFn build = [labels](Tape& t, int x) {
                             return t.cross_entropy_mean_rows(x, labels);
                         };
                         return {x0, build};
                     }});

    static const char* gru_parents[] = {"h_prev", "w_r", "u_r", "b_r", "w_u",
                                        "u_u",    "b_u", "w_c", "u_c", "b_c"};
    for (int arg = 0; arg < 10; ++arg) {
        cases.push_back(
            {std::string("gru_cell/") + gru_parents[arg],
             [arg](Rng& r) -> std::pair<Tensor, BuildFn> {
                 const std::size_t B = 2, H = 3, D = 4;
                 std::vector<Tensor> inputs = {
                     rand_tensor(r, {B, H}),
                     rand_tensor(r, {H, D}),
                     rand_tensor(r, {H, H}),
                     rand_tensor(r, {H}),
                     rand_tensor(r, {H, D}),
                     rand_tensor(r, {H, H}),
                     rand_tensor(r, {H}),
                     rand_tensor(r, {H, D}),
                     rand_tensor(r, {H, H}),
                     rand_tensor(r, {H}),
                 };
                 Tensor xt = rand_tensor(r, {B, D});
                 Tensor mix = rand_tensor(r, {B, H});
                 BuildFn build = [arg, inputs, xt, mix](Tape& t, int x) {
                     std::vector<int> ids(inputs.size());
                     for (std::size_t i = 0; i < inputs.size(); ++i)
                         ids[i] = static_cast<int>(i) == arg ? x : t.leaf(inputs[i]);
                     int h = t.gru_cell(ids[0], ids[1], ids[2], ids[3], ids[4], ids[5], ids[6],
                                        ids[7], ids[8], ids[9], xt);
                     return weighted_mean(t, h, mix);
                 };
                 return {inputs[static_cast<std::size_t>(arg)], build};
             }});
    }

    for (const auto& c : cases) {
        CAPTURE(c.name);
        double worst = 0.0;
        for (int trial = 0; trial < trials; ++trial) {
            auto [x0, build] = c.make(rng);
            auto rep = check_op(x0, build);
            worst = std::max(worst, rep.max_rel_err);
            CHECK_MESSAGE(rep.passed, c.name, " trial ", trial, " max rel err ",
                          rep.max_rel_err);
        }
        CHECK(worst <= 1e-5);
    }
}

TEST_CASE("gradient checker flags a wrong derivative") {
    // Analytic gradient deliberately reports 2x instead of the true cos(x).
    ScalarFn bad = [](const Tensor& x, Tensor* grad) {
        if (grad) {
            Tensor g = x;
            for (double& v : g.flat()) v *= 2.0;
            *grad = g;
        }
        double s = 0.0;
        for (double v : x.data()) s += std::sin(v);
        return s;
    };
    auto rep = check_gradients(bad, Tensor::vec({0.3, 1.2}));
    CHECK_FALSE(rep.passed);
    CHECK(rep.max_rel_err > 1e-2);
}

TEST_CASE("gradient checker rejects bad arguments") {
    ScalarFn fn = [](const Tensor& x, Tensor* grad) {
        if (grad) *grad = x;
        return 0.5 * x.at(0) * x.at(0);
    };
    CHECK_THROWS_AS((void)check_gradients(fn, Tensor::vec({1.0}), 0.0), ContractError);

    ScalarFn nan_fn = [](const Tensor&, Tensor*) {
        return std::numeric_limits<double>::quiet_NaN();
    };
    CHECK_THROWS_AS((void)check_gradients(nan_fn, Tensor::vec({1.0})), NumericError);
}

TEST_CASE("full pipeline loss passes the finite-difference audit at both locations") {
    for (MmdLocation loc : {MmdLocation::AfterF, MmdLocation::AfterG}) {
        CAPTURE(to_string(loc));
        auto toy = testsupport::make_toy_pipeline(loc, 7);
        auto rep = check_gradients(toy.loss_fn(), toy.at());
        CHECK_MESSAGE(rep.passed, "max rel err ", rep.max_rel_err, " at flat index ",
                      rep.worst_index);
    }
}
