#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "rankstack/autodiff.hpp"
#include "rankstack/params.hpp"

using namespace rankstack;
using namespace rankstack::nn;

namespace {

// random values bounded away from zero, so kinked activations (relu, clamp)
// stay differentiable at the sampled points
Tensor safe_random(std::vector<int> shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (size_t i = 0; i < t.numel(); ++i) {
    double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
    t[i] = sign * rng.uniform(0.05, 1.0);
  }
  return t;
}

}  // namespace

TEST_CASE("relu, softmax, sigmoid forward values") {
  Tape t;
  Value x = t.input(Tensor::row_vector({-1, 0, 2}));
  Value y = t.relu(x);
  CHECK(t.val(y)[0] == 0.0);
  CHECK(t.val(y)[1] == 0.0);
  CHECK(t.val(y)[2] == 2.0);

  Value logits = t.input(Tensor::row_vector({0.7, 0.7}));
  Value sm = t.softmax(logits);
  CHECK(t.val(sm)[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(t.val(sm)[1] == doctest::Approx(0.5).epsilon(1e-12));

  Value s = t.sigmoid(t.input(Tensor::row_vector({0.0})));
  CHECK(t.val(s)[0] == doctest::Approx(0.5));
}

TEST_CASE("backward of sum and squared norm") {
  ParameterStore store;
  store.get_or_create("w", Tensor::row_vector({3, -1, 4}));
  Tape t;
  Value w = t.param(store, "w");
  Value loss = t.sum(w);
  t.backward(loss);
  const Tensor& g = t.grad(w);
  CHECK(g[0] == 1.0);
  CHECK(g[1] == 1.0);
  CHECK(g[2] == 1.0);

  ParameterStore store2;
  store2.get_or_create("w", Tensor::row_vector({1, 2}));
  Tape t2;
  Value w2 = t2.param(store2, "w");
  Value loss2 = t2.scale(t2.sum(t2.mul(w2, w2)), 0.5);
  t2.backward(loss2);
  CHECK(t2.grad(w2)[0] == doctest::Approx(1.0));
  CHECK(t2.grad(w2)[1] == doctest::Approx(2.0));
}

TEST_CASE("sigmoid derivative at logit zero is 0.25") {
  ParameterStore store;
  store.get_or_create("x", Tensor::row_vector({0.0}));
  auto build = [](Tape& t, ParameterStore& s) {
    return t.sum(t.sigmoid(t.param(s, "x")));
  };
  Tape t;
  Value loss = build(t, store);
  t.backward(loss);
  t.for_each_param_grad([](const std::string&, const Tensor& g) {
    CHECK(g[0] == doctest::Approx(0.25).epsilon(1e-12));
  });
  CHECK(grad_check(build, store) < 1e-6);
}

TEST_CASE("grad_check on a linear graph is near machine epsilon") {
  ParameterStore store;
  Rng rng(5);
  store.get_or_create("w", safe_random({4}, rng));
  auto build = [](Tape& t, ParameterStore& s) {
    return t.scale(t.sum(t.param(s, "w")), 3.0);
  };
  CHECK(grad_check(build, store) < 1e-9);
}

TEST_CASE("each primitive passes a finite-difference check") {
  Rng rng(11);
  auto check = [&](auto builder, ParameterStore& store) {
    double err = grad_check(builder, store, 1e-5, 0, 99);
    CHECK(err < 1e-4);
  };

  SUBCASE("matmul and bias_add") {
    ParameterStore s;
    s.get_or_create("a", safe_random({3, 4}, rng));
    s.get_or_create("b", safe_random({4, 5}, rng));
    s.get_or_create("bias", safe_random({5}, rng));
    check(
        [](Tape& t, ParameterStore& s) {
          return t.sum(t.bias_add(t.matmul(t.param(s, "a"), t.param(s, "b")),
                                  t.param(s, "bias")));
        },
        s);
  }
  SUBCASE("matmul_nt") {
    ParameterStore s;
    s.get_or_create("a", safe_random({3, 4}, rng));
    s.get_or_create("b", safe_random({6, 4}, rng));
    check(
        [](Tape& t, ParameterStore& s) {
          return t.sum(t.matmul_nt(t.param(s, "a"), t.param(s, "b")));
        },
        s);
  }
  SUBCASE("activations") {
    ParameterStore s;
    s.get_or_create("x", safe_random({2, 6}, rng));
    check(
        [](Tape& t, ParameterStore& s) {
          Value x = t.param(s, "x");
          return t.sum(t.add(t.relu(x), t.add(t.gelu(x), t.sigmoid(x))));
        },
        s);
  }
  SUBCASE("log and clamp") {
    ParameterStore s;
    Tensor pos({2, 3});
    for (size_t i = 0; i < pos.numel(); ++i) pos[i] = 0.2 + 0.1 * double(i);
    s.get_or_create("x", pos);
    check(
        [](Tape& t, ParameterStore& s) {
          return t.sum(t.log(t.clamp(t.param(s, "x"), 1e-7, 1.0 - 1e-7)));
        },
        s);
  }
  SUBCASE("layer_norm") {
    ParameterStore s;
    s.get_or_create("x", safe_random({3, 8}, rng));
    s.get_or_create("g", safe_random({8}, rng));
    s.get_or_create("b", safe_random({8}, rng));
    check(
        [](Tape& t, ParameterStore& s) {
          return t.sum(t.layer_norm(t.param(s, "x"), t.param(s, "g"),
                                    t.param(s, "b")));
        },
        s);
  }
  SUBCASE("softmax") {
    ParameterStore s;
    s.get_or_create("x", safe_random({3, 5}, rng));
    s.get_or_create("w", safe_random({3, 5}, rng));
    check(
        [](Tape& t, ParameterStore& s) {
          // weighted sum makes the softmax jacobian non-trivial
          return t.sum(t.mul(t.softmax(t.param(s, "x")), t.param(s, "w")));
        },
        s);
  }
  SUBCASE("embedding, rows, concat, mean_rows") {
    ParameterStore s;
    s.get_or_create("table", safe_random({7, 4}, rng));
    check(
        [](Tape& t, ParameterStore& s) {
          Value tab = t.param(s, "table");
          std::vector<int> ids = {1, 3, 3, 6};
          Value e = t.embedding(tab, ids);
          Value m = t.mean_rows(e);
          Value c = t.concat({m, t.row(e, 0)});
          return t.sum(c);
        },
        s);
  }
  SUBCASE("attention causal and full") {
    ParameterStore s;
    s.get_or_create("q", safe_random({5, 8}, rng));
    s.get_or_create("k", safe_random({5, 8}, rng));
    s.get_or_create("v", safe_random({5, 8}, rng));
    s.get_or_create("w", safe_random({5, 8}, rng));
    check(
        [](Tape& t, ParameterStore& s) {
          Value o = t.attention(t.param(s, "q"), t.param(s, "k"),
                                t.param(s, "v"), 2, true);
          return t.sum(t.mul(o, t.param(s, "w")));
        },
        s);
    check(
        [](Tape& t, ParameterStore& s) {
          Value o = t.attention(t.param(s, "q"), t.param(s, "k"),
                                t.param(s, "v"), 4, false);
          return t.sum(t.mul(o, t.param(s, "w")));
        },
        s);
  }
  SUBCASE("cross_entropy_with_logits") {
    ParameterStore s;
    s.get_or_create("logits", safe_random({6}, rng));
    check(
        [](Tape& t, ParameterStore& s) {
          return t.cross_entropy_with_logits(t.param(s, "logits"), 2);
        },
        s);
  }
}

TEST_CASE("two-layer mini network matches finite differences") {
  Rng rng(23);
  ParameterStore s;
  s.get_or_create("w1", safe_random({6, 8}, rng));
  s.get_or_create("b1", safe_random({8}, rng));
  s.get_or_create("w2", safe_random({8, 3}, rng));
  s.get_or_create("b2", safe_random({3}, rng));
  s.get_or_create("x", safe_random({4, 6}, rng));
  auto build = [](Tape& t, ParameterStore& s) {
    Value h = t.gelu(t.bias_add(t.matmul(t.param(s, "x"), t.param(s, "w1")),
                                t.param(s, "b1")));
    Value out = t.bias_add(t.matmul(h, t.param(s, "w2")), t.param(s, "b2"));
    return t.sum(t.sigmoid(out));
  };
  CHECK(grad_check(build, s, 1e-5) < 1e-4);
}

TEST_CASE("causal attention ignores future value rows") {
  Rng rng(31);
  Tensor q = safe_random({4, 8}, rng);
  Tensor k = safe_random({4, 8}, rng);
  Tensor v = safe_random({4, 8}, rng);
  Tape t1;
  Value o1 = t1.attention(t1.input(q), t1.input(k), t1.input(v), 2, true);
  // perturb position 3 (the last row) of all inputs
  Tensor q2 = q, k2 = k, v2 = v;
  for (int j = 0; j < 8; ++j) {
    q2.at(3, j) += 1.0;
    k2.at(3, j) -= 2.0;
    v2.at(3, j) += 3.0;
  }
  Tape t2;
  Value o2 = t2.attention(t2.input(q2), t2.input(k2), t2.input(v2), 2, true);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 8; ++j)
      CHECK(t1.val(o1).at(i, j) == t2.val(o2).at(i, j));
  // and the changed position itself does change
  bool any_diff = false;
  for (int j = 0; j < 8; ++j)
    any_diff = any_diff || t1.val(o1).at(3, j) != t2.val(o2).at(3, j);
  CHECK(any_diff);
}

TEST_CASE("forward is pure: identical inputs give bit-identical outputs") {
  Rng rng(41);
  Tensor x = safe_random({5, 6}, rng);
  Tensor w = safe_random({6, 6}, rng);
  auto run = [&]() {
    Tape t;
    Value out = t.attention(t.matmul(t.input(x), t.input(w)), t.input(x),
                            t.input(x), 2, true);
    return t.val(out);
  };
  Tensor a = run();
  Tensor b = run();
  REQUIRE(a.numel() == b.numel());
  for (size_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("shape mismatches name the offending primitive") {
  Tape t;
  Value a = t.input(Tensor({2, 3}));
  Value b = t.input(Tensor({4, 5}));
  CHECK_THROWS_WITH_AS(t.matmul(a, b),
                       doctest::Contains("matmul"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(t.add(a, b), doctest::Contains("add"),
                       std::invalid_argument);
}

TEST_CASE("adam step behavior") {
  SUBCASE("zero gradient leaves parameter unchanged") {
    ParameterStore s;
    s.get_or_create("w", Tensor::row_vector({1.5}));
    s.adam_step(0.001);
    CHECK(s.value("w")[0] == 1.5);
  }
  SUBCASE("first step with unit gradient moves by about lr") {
    ParameterStore s;
    s.get_or_create("w", Tensor::row_vector({1.0}));
    s.accumulate_grad("w", Tensor::row_vector({1.0}));
    s.adam_step(0.001);
    // mhat = 1, vhat = 1 -> step = lr / (1 + eps)
    CHECK(s.value("w")[0] == doctest::Approx(1.0 - 0.001).epsilon(1e-6));
    CHECK(s.slot("w").grad[0] == 0.0);  // gradients zeroed
  }
  SUBCASE("identical parameters receive identical updates") {
    ParameterStore s;
    s.get_or_create("a", Tensor::row_vector({0.7, -0.2}));
    s.get_or_create("b", Tensor::row_vector({0.7, -0.2}));
    s.accumulate_grad("a", Tensor::row_vector({0.3, -0.8}));
    s.accumulate_grad("b", Tensor::row_vector({0.3, -0.8}));
    s.adam_step(0.01);
    CHECK(s.value("a")[0] == s.value("b")[0]);
    CHECK(s.value("a")[1] == s.value("b")[1]);
  }
  SUBCASE("lr zero leaves values unchanged") {
    ParameterStore s;
    s.get_or_create("w", Tensor::row_vector({2.0}));
    s.accumulate_grad("w", Tensor::row_vector({5.0}));
    s.adam_step(0.0);
    CHECK(s.value("w")[0] == 2.0);
  }
  SUBCASE("non-finite gradient rejects the step and names the parameter") {
    ParameterStore s;
    s.get_or_create("bad_param", Tensor::row_vector({1.0}));
    s.accumulate_grad("bad_param",
                      Tensor::row_vector({std::nan("")}));
    CHECK_THROWS_WITH_AS(s.adam_step(0.001),
                         doctest::Contains("bad_param"), std::runtime_error);
    CHECK(s.value("bad_param")[0] == 1.0);
  }
}

TEST_CASE("checkpoint round-trips and is byte-stable") {
  namespace fs = std::filesystem;
  auto dir = fs::temp_directory_path() / "rankstack_ckpt_test";
  fs::create_directories(dir);
  Rng rng(51);
  ParameterStore s;
  s.get_or_create("enc/w", safe_random({3, 4}, rng));
  s.get_or_create("enc/b", safe_random({4}, rng));
  auto p1 = (dir / "a.rkf").string();
  auto p2 = (dir / "b.rkf").string();
  s.save_checkpoint(p1);
  auto loaded = ParameterStore::load_checkpoint(p1);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded.value("enc/w").shape() == s.value("enc/w").shape());
  // values round through f32
  for (size_t i = 0; i < loaded.value("enc/w").numel(); ++i)
    CHECK(loaded.value("enc/w")[i] ==
          static_cast<double>(static_cast<float>(s.value("enc/w")[i])));
  loaded.save_checkpoint(p2);
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::string c1((std::istreambuf_iterator<char>(f1)),
                 std::istreambuf_iterator<char>());
  std::string c2((std::istreambuf_iterator<char>(f2)),
                 std::istreambuf_iterator<char>());
  CHECK(c1 == c2);
  CHECK(c1.substr(0, 4) == "RKF1");
  fs::remove_all(dir);
}

TEST_CASE("gradients requested before backward fail") {
  Tape t;
  ParameterStore s;
  s.get_or_create("w", Tensor::row_vector({1.0}));
  Value w = t.param(s, "w");
  CHECK_THROWS_AS(t.grad(w), std::logic_error);
}
