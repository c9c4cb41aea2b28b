#include <catch2/catch_amalgamated.hpp>
#include <random>

#include "fluidformer/autodiff.hpp"
#include "helpers.hpp"

using namespace ff;
using fftest::fd;
using fftest::random_tensor;
using fftest::rel_err;

namespace {

// Checks d(sum of graph output)/d(each leaf entry) against central differences.
void check_grads(std::vector<Tensor> leaves,
                 const std::function<ad::Var(ad::Tape&, std::vector<ad::Var>&)>& build,
                 double tol = 1e-6) {
    auto loss_of = [&]() {
        ad::Tape tape;
        std::vector<ad::Var> vars;
        for (auto& t : leaves) vars.push_back(tape.leaf(t, true));
        ad::Var out = build(tape, vars);
        return ad::sum(tape, out)->value.data[0];
    };
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (auto& t : leaves) vars.push_back(tape.leaf(t, true));
    ad::Var loss = ad::sum(tape, build(tape, vars));
    tape.backward(loss);
    for (std::size_t li = 0; li < leaves.size(); ++li)
        for (std::size_t i = 0; i < leaves[li].numel(); ++i) {
            double numeric = fd(leaves[li].data, i, loss_of);
            INFO("leaf " << li << " entry " << i);
            CHECK(rel_err(vars[li]->grad[i], numeric) < tol);
        }
}

}  // namespace

TEST_CASE("backward requires a scalar") {
    ad::Tape tape;
    ad::Var v = tape.leaf(Tensor({2, 2}), true);
    CHECK_THROWS(tape.backward(v));
}

TEST_CASE("elementwise op gradients") {
    std::mt19937_64 rng(1);
    Tensor a = random_tensor({3, 4}, rng, 0.2, 1.5);  // positive: sqrt/pow domains
    Tensor b = random_tensor({3, 4}, rng, 0.2, 1.5);

    check_grads({a, b}, [](ad::Tape& t, std::vector<ad::Var>& v) {
        return ad::add(t, v[0], v[1]);
    });
    check_grads({a, b}, [](ad::Tape& t, std::vector<ad::Var>& v) {
        return ad::sub(t, v[0], v[1]);
    });
    check_grads({a, b}, [](ad::Tape& t, std::vector<ad::Var>& v) {
        return ad::mul(t, v[0], v[1]);
    });
    check_grads({a}, [](ad::Tape& t, std::vector<ad::Var>& v) {
        return ad::scale(t, v[0], -2.5);
    });
    check_grads({a}, [](ad::Tape& t, std::vector<ad::Var>& v) { return ad::relu(t, v[0]); });
    check_grads({a}, [](ad::Tape& t, std::vector<ad::Var>& v) { return ad::sigmoid(t, v[0]); });
    check_grads({a}, [](ad::Tape& t, std::vector<ad::Var>& v) { return ad::exp(t, v[0]); });
    check_grads({a}, [](ad::Tape& t, std::vector<ad::Var>& v) { return ad::sqrt(t, v[0]); });
    check_grads({a}, [](ad::Tape& t, std::vector<ad::Var>& v) {
        return ad::pow(t, v[0], 0.5);
    });
    check_grads({a}, [](ad::Tape& t, std::vector<ad::Var>& v) { return ad::mean(t, v[0]); });
}

TEST_CASE("matmul gradients, both orientations") {
    std::mt19937_64 rng(2);
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4, 2}, rng);
    Tensor bt = random_tensor({2, 4}, rng);
    check_grads({a, b}, [](ad::Tape& t, std::vector<ad::Var>& v) {
        return ad::matmul(t, v[0], v[1]);
    });
    check_grads({a, bt}, [](ad::Tape& t, std::vector<ad::Var>& v) {
        return ad::matmul(t, v[0], v[1], /*transpose_b=*/true);
    });
}

TEST_CASE("structural op gradients") {
    std::mt19937_64 rng(3);
    Tensor a = random_tensor({4, 3}, rng);
    Tensor b = random_tensor({4, 2}, rng);
    Tensor v3 = random_tensor({3}, rng, 0.5, 1.5);

    check_grads({a, b}, [](ad::Tape& t, std::vector<ad::Var>& v) {
        return ad::concat_cols(t, {v[0], v[1]});
    });
    check_grads({a}, [](ad::Tape& t, std::vector<ad::Var>& v) {
        return ad::slice_cols(t, v[0], 1, 3);
    });
    check_grads({a}, [](ad::Tape& t, std::vector<ad::Var>& v) {
        return ad::gather_rows(t, v[0], {2, 0, 2, 3});
    });
    check_grads({a}, [](ad::Tape& t, std::vector<ad::Var>& v) {
        return ad::scatter_add_rows(t, v[0], {1, 0, 1, 2}, 3);
    });
    check_grads({a, v3}, [](ad::Tape& t, std::vector<ad::Var>& v) {
        return ad::mul_rowvec(t, v[0], v[1]);
    });
    check_grads({a, v3}, [](ad::Tape& t, std::vector<ad::Var>& v) {
        return ad::add_rowvec(t, v[0], v[1]);
    });
}

TEST_CASE("softmax and batch-statistics normalization gradients") {
    std::mt19937_64 rng(4);
    Tensor a = random_tensor({5, 4}, rng, -2.0, 2.0);
    // weight the outputs so the gradient is not structurally zero
    Tensor w = random_tensor({5, 4}, rng, 0.5, 1.5);
    check_grads({a, w}, [](ad::Tape& t, std::vector<ad::Var>& v) {
        return ad::mul(t, ad::softmax_lastdim(t, v[0]), v[1]);
    });
    check_grads(
        {a, w},
        [](ad::Tape& t, std::vector<ad::Var>& v) {
            return ad::mul(t, ad::batch_stat_norm(t, v[0]), v[1]);
        },
        1e-5);
}

TEST_CASE("softmax rows sum to one") {
    std::mt19937_64 rng(5);
    ad::Tape tape;
    ad::Var a = tape.leaf(random_tensor({6, 7}, rng, -10, 10));
    ad::Var s = ad::softmax_lastdim(tape, a);
    for (std::size_t r = 0; r < 6; ++r) {
        double acc = 0;
        for (std::size_t c = 0; c < 7; ++c) acc += s->value.at(r, c);
        CHECK(acc == Catch::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("gather/scatter adjoint identity") {
    // <gather(A,idx), B> == <A, scatter(B,idx)>
    std::mt19937_64 rng(6);
    Tensor A = random_tensor({5, 3}, rng);
    Tensor B = random_tensor({4, 3}, rng);
    std::vector<std::size_t> idx = {3, 1, 1, 0};
    ad::Tape tape;
    ad::Var a = tape.leaf(A), b = tape.leaf(B);
    ad::Var ga = ad::gather_rows(tape, a, idx);
    ad::Var sb = ad::scatter_add_rows(tape, b, idx, 5);
    double lhs = 0, rhs = 0;
    for (std::size_t i = 0; i < B.numel(); ++i) lhs += ga->value.data[i] * B.data[i];
    for (std::size_t i = 0; i < A.numel(); ++i) rhs += A.data[i] * sb->value.data[i];
    CHECK(lhs == Catch::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("batch statistics guard degenerate variance") {
    ad::Tape tape;
    Tensor flat({4, 2});
    for (double& v : flat.data) v = 3.0;  // zero variance per column
    ad::Var y = ad::batch_stat_norm(tape, tape.leaf(flat));
    CHECK(y->value.all_finite());
    for (double v : y->value.data) CHECK(std::fabs(v) < 1e-9);
}
