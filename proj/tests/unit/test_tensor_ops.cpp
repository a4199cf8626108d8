#include <cmath>
#include <vector>

#include "doctest.h"

#include "chanmap/ops.hpp"
#include "chanmap/optim.hpp"
#include "chanmap/rng.hpp"
#include "chanmap/tensor.hpp"
#include "support/gradcheck.hpp"

using namespace chanmap;
using chanmap::testing::gradcheck;

TEST_CASE("conv over a 3x3 patch of ones sums the window") {
    Tensor x = Tensor::full({1, 1, 3, 3}, 1.0f);
    Tensor w = Tensor::full({1, 1, 3, 3}, 1.0f);
    Tensor y = conv2d(x, w, Tensor(), 1, 0);
    CHECK(y.shape() == std::vector<int>{1, 1, 1, 1});
    CHECK(y.item() == 9.0f);
}

TEST_CASE("relu clamps negatives and keeps positives") {
    Tensor x = Tensor::from_data({3}, {-1.0f, 0.0f, 2.0f});
    Tensor y = relu(x);
    CHECK(y.data()[0] == 0.0f);
    CHECK(y.data()[1] == 0.0f);
    CHECK(y.data()[2] == 2.0f);
}

TEST_CASE("cross entropy of uniform logits is ln 2") {
    Tensor logits = Tensor::from_data({1, 2}, {0.0f, 0.0f});
    Tensor loss = cross_entropy(logits, {0});
    CHECK(loss.item() == doctest::Approx(std::log(2.0)).epsilon(1e-6));
}

TEST_CASE("backward of x*x at x=3 gives 6") {
    Tensor x = Tensor::scalar(3.0f, true);
    Tensor y = mul(x, x);
    backward(y);
    CHECK(x.grad()[0] == 6.0f);
}

TEST_CASE("sgd applies lr times grad") {
    Tensor p = Tensor::from_data({1}, {1.0f}, true);
    p.grad()[0] = 2.0f;
    Sgd opt({p}, 0.1f);
    opt.step();
    CHECK(p.data()[0] == doctest::Approx(0.8f).epsilon(1e-7));
}

TEST_CASE("sgd weight decay shrinks an unused parameter") {
    Tensor p = Tensor::from_data({1}, {1.0f}, true);
    p.grad()[0] = 0.0f;
    Sgd opt({p}, 1.0f, 0.0f, 1e-4f);
    opt.step();
    CHECK(p.data()[0] == doctest::Approx(0.9999f).epsilon(1e-7));
}

TEST_CASE("optimizer step skips parameters without a gradient") {
    Tensor p = Tensor::from_data({1}, {1.0f}, true);
    Sgd sopt({p}, 0.5f);
    sopt.step();
    CHECK(p.data()[0] == 1.0f);
    Adam aopt({p}, 0.5f);
    aopt.step();
    CHECK(p.data()[0] == 1.0f);
}

TEST_CASE("identical seeds give bit-identical forward and backward") {
    auto run = [](std::uint64_t seed) {
        Rng rng(seed);
        Tensor x = Tensor::rand_normal({2, 3, 5, 5}, rng, 0.0f, 1.0f);
        Tensor w = Tensor::rand_normal({4, 3, 3, 3}, rng, 0.0f, 0.5f, true);
        Tensor y = mean(relu(conv2d(x, w, Tensor(), 1, 1)));
        backward(y);
        std::vector<float> out(y.data().begin(), y.data().end());
        out.insert(out.end(), w.grad().begin(), w.grad().end());
        return out;
    };
    CHECK(run(11) == run(11));
    CHECK(run(11) != run(12));
}

TEST_CASE("gradients match central differences on every op") {
    Rng rng(202);
    const int instances = 21;
    for (int i = 0; i < instances; ++i) {
        const int n = rng.uniform_int(1, 2);
        const int cin = rng.uniform_int(1, 3);
        const int cout = rng.uniform_int(1, 3);
        const int hw = rng.uniform_int(3, 5);
        const int k = 3;
        Tensor x = Tensor::rand_normal({n, cin, hw, hw}, rng, 0.0f, 1.0f, true);

        {
            Tensor w = Tensor::rand_normal({cout, cin, k, k}, rng, 0.0f, 0.5f, true);
            Tensor b = Tensor::rand_normal({cout}, rng, 0.0f, 0.5f, true);
            const int stride = rng.uniform_int(1, 2);
            auto f = [&] { return mean(conv2d(x, w, b, stride, 1)); };
            CHECK(gradcheck(f, {x, w, b}) < 1e-3);
        }
        {
            Tensor w = Tensor::rand_normal({cin, 1, k, k}, rng, 0.0f, 0.5f, true);
            auto f = [&] { return mean(conv2d(x, w, Tensor(), 1, 1, cin)); };
            CHECK(gradcheck(f, {x, w}) < 1e-3);
        }
        {
            Tensor xf = Tensor::rand_normal({n, 6}, rng, 0.0f, 1.0f, true);
            Tensor w = Tensor::rand_normal({4, 6}, rng, 0.0f, 0.5f, true);
            Tensor b = Tensor::rand_normal({4}, rng, 0.0f, 0.5f, true);
            auto f = [&] { return mean(linear(xf, w, b)); };
            CHECK(gradcheck(f, {xf, w, b}) < 1e-3);
        }
        {
            auto f = [&] { return mean(relu(x)); };
            CHECK(gradcheck(f, {x}) < 1e-3);
        }
        {
            auto f = [&] { return mean(global_avgpool(x)); };
            CHECK(gradcheck(f, {x}) < 1e-3);
        }
        {
            Tensor a = Tensor::rand_normal({4}, rng, 0.0f, 1.0f, true);
            Tensor b = Tensor::rand_normal({4}, rng, 0.0f, 1.0f, true);
            auto f = [&] { return mean(mul(add(a, b), b)); };
            CHECK(gradcheck(f, {a, b}) < 1e-3);
        }
        {
            Tensor a = Tensor::rand_normal({5}, rng, 0.0f, 1.0f, true);
            auto f = [&] { return mean(affine(a, 1.7f, -0.3f)); };
            CHECK(gradcheck(f, {a}) < 1e-3);
        }
        {
            Tensor logits = Tensor::rand_normal({n, 4}, rng, 0.0f, 1.0f, true);
            std::vector<int> labels;
            for (int r = 0; r < n; ++r) labels.push_back(rng.uniform_int(0, 3));
            auto f = [&] { return cross_entropy(logits, labels); };
            CHECK(gradcheck(f, {logits}) < 1e-3);
        }
        {
            Tensor v = Tensor::rand_normal({4}, rng, 0.0f, 1.0f, true);
            auto f = [&] { return mean(softmax(v)); };
            CHECK(gradcheck(f, {v}) < 1e-3);
        }
        {
            Tensor v = Tensor::rand_normal({5}, rng, 0.0f, 1.0f, true);
            auto f = [&] { return mean(suffix_sum_exclusive(v)); };
            CHECK(gradcheck(f, {v}) < 1e-3);
        }
        {
            Tensor v = Tensor::rand_uniform({4}, rng, 1.0f, 6.0f, true);
            auto f = [&] { return smooth_max(v, 0.8f); };
            CHECK(gradcheck(f, {v}) < 1e-3);
        }
        {
            Tensor m = Tensor::rand_normal({3, 4}, rng, 0.0f, 1.0f, true);
            auto f = [&] { return mean(column_sums(m)); };
            CHECK(gradcheck(f, {m}) < 1e-3);
        }
        {
            Tensor a = Tensor::rand_normal({n, 2, hw, hw}, rng, 0.0f, 1.0f, true);
            Tensor b = Tensor::rand_normal({n, 3, hw, hw}, rng, 0.0f, 1.0f, true);
            auto f = [&] {
                Tensor cat = concat_channels({a, b});
                return mean(slice_channels(cat, 1, 4));
            };
            CHECK(gradcheck(f, {a, b}) < 1e-3);
        }
        {
            Tensor v = Tensor::rand_normal({6}, rng, 0.0f, 1.0f, true);
            auto f = [&] { return mean(mul(slice_dim0(v, 1, 5), slice_dim0(v, 0, 4))); };
            CHECK(gradcheck(f, {v}) < 1e-3);
        }
        {
            Tensor v = Tensor::rand_normal({4}, rng, 0.0f, 1.0f, true);
            auto f = [&] { return pick(v, 2); };
            CHECK(gradcheck(f, {v}) < 1e-3);
        }
        {
            Tensor v = Tensor::rand_normal({4}, rng, 0.0f, 1.0f, true);
            auto f = [&] { return dot_const(v, {0.5f, -1.0f, 2.0f, 0.25f}); };
            CHECK(gradcheck(f, {v}) < 1e-3);
        }
        {
            Tensor a = Tensor::rand_normal({3}, rng, 0.0f, 1.0f, true);
            Tensor b = Tensor::rand_normal({3}, rng, 0.0f, 1.0f, true);
            auto f = [&] { return mean(stack_columns({a, b})); };
            CHECK(gradcheck(f, {a, b}) < 1e-3);
        }
        {
            Tensor a = Tensor::rand_normal({1}, rng, 0.0f, 1.0f, true);
            Tensor b = Tensor::rand_normal({1}, rng, 0.0f, 1.0f, true);
            auto f = [&] {
                return mean(stack_scalars({sum(a), sum(mul(b, b))}));
            };
            CHECK(gradcheck(f, {a, b}) < 1e-3);
        }
        {
            Tensor v = Tensor::rand_normal({2, 3}, rng, 0.0f, 1.0f, true);
            auto f = [&] { return sum(v); };
            CHECK(gradcheck(f, {v}) < 1e-3);
        }
    }
}

TEST_CASE("avgpool averages non-overlapping windows") {
    Tensor x = Tensor::from_data({1, 1, 2, 2}, {1.0f, 3.0f, 5.0f, 7.0f});
    Tensor y = avgpool2d(x, 2, 2);
    CHECK(y.numel() == 1);
    CHECK(y.item() == doctest::Approx(4.0f));
}

TEST_CASE("softmax is invariant to a constant shift") {
    Tensor a = Tensor::from_data({1, 3}, {1.0f, 2.0f, 3.0f});
    Tensor b = Tensor::from_data({1, 3}, {101.0f, 102.0f, 103.0f});
    Tensor sa = softmax(a);
    Tensor sb = softmax(b);
    for (int i = 0; i < 3; ++i)
        CHECK(sa.data()[i] == doctest::Approx(sb.data()[i]).epsilon(1e-6));
}

TEST_CASE("clone detaches storage") {
    Tensor a = Tensor::from_data({2}, {1.0f, 2.0f});
    Tensor b = a.clone();
    b.data()[0] = 9.0f;
    CHECK(a.data()[0] == 1.0f);
    CHECK_FALSE(a.same_storage(b));
}

TEST_CASE("no-grad evaluation records nothing on the tape") {
    Tensor x = Tensor::from_data({2}, {1.0f, 2.0f}, true);
    {
        NoGradGuard guard;
        Tensor y = mul(x, x);
        CHECK(Tape::current().size() == 0);
        (void)y;
    }
    Tensor y = mul(x, x);
    CHECK(Tape::current().size() > 0);
    backward(sum(y));
    CHECK(Tape::current().size() == 0);
}
