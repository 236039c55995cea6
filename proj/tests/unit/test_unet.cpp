#include <doctest.h>

#include <cmath>
#include <vector>

#include "grad_suite.hpp"
#include "trajdiff/error.hpp"
#include "trajdiff/traj_unet.hpp"

using namespace trajdiff;
using trajdiff::testing::grad_check;
using trajdiff::testing::random_tensor;

namespace {

TrajUNetConfig tiny_config() { return trajdiff::testing::tiny_unet_config(); }

void fill(const Tensor& t, float value) {
  Tensor alias = t;
  for (float& v : alias.mutable_data()) v = value;
}

ConditionVector some_condition(int slot = 10, int origin = 3, int dest = 7) {
  ConditionVector c;
  c.numeric = {0.5f, -1.0f, 0.25f, 2.0f};
  c.departure_slot = slot;
  c.origin_cell = origin;
  c.destination_cell = dest;
  return c;
}

double max_abs_diff(std::span<const float> a, std::span<const float> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, static_cast<double>(std::abs(a[i] - b[i])));
  return m;
}

}  // namespace

TEST_SUITE("traj_unet") {
  TEST_CASE("sinusoidal embedding values and distinctness") {
    const auto zero = sinusoidal_time_embedding(0.0, 128);
    for (std::size_t i = 0; i < 64; ++i) {
      CHECK(zero[i] == 0.0f);
      CHECK(zero[64 + i] == 1.0f);
    }
    const auto one = sinusoidal_time_embedding(1.0, 4);
    CHECK(one[0] == doctest::Approx(std::sin(1.0)));
    CHECK(one[1] == doctest::Approx(std::sin(0.01)));
    CHECK(one[2] == doctest::Approx(std::cos(1.0)));
    CHECK(one[3] == doctest::Approx(std::cos(0.01)));

    std::vector<std::vector<float>> rows;
    for (int t = 1; t <= 500; ++t) rows.push_back(sinusoidal_time_embedding(t, 128));
    double closest = 1e9;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t j = i + 1; j < rows.size(); ++j) closest = std::min(closest, max_abs_diff(rows[i], rows[j]));
    }
    CHECK(closest > 1e-3);
    CHECK_THROWS_AS(sinusoidal_time_embedding(1.0, 7), ArgumentError);
  }

  TEST_CASE("time MLP with zero weights outputs zero") {
    TrajUNet model(tiny_config(), 1);
    for (const char* name : {"time_mlp.fc1.weight", "time_mlp.fc1.bias", "time_mlp.fc2.weight", "time_mlp.fc2.bias"}) {
      fill(model.params().get(name), 0.0f);
    }
    const std::vector<int> steps{1, 250, 500};
    const Tensor emb = model.time_embedding(steps);
    CHECK(emb.shape() == Shape{3, 8});
    for (float v : emb.data()) CHECK(v == 0.0f);
  }

  TEST_CASE("wide path matches an affine oracle and honours the mask") {
    auto cfg = tiny_config();
    TrajUNet model(cfg, 2);
    const std::vector<ConditionVector> conds{some_condition(), some_condition(1, 0, 0)};
    const Tensor wide = model.wide_embedding(conds);
    const auto w = model.params().get("cond.wide.weight").data();
    const auto b = model.params().get("cond.wide.bias").data();
    for (std::size_t n = 0; n < conds.size(); ++n) {
      for (std::size_t e = 0; e < 8; ++e) {
        double want = b[e];
        for (std::size_t a = 0; a < kNumericAttributes; ++a) want += w[e * kNumericAttributes + a] * conds[n].numeric[a];
        CHECK(wide.data()[n * 8 + e] == doctest::Approx(want).epsilon(1e-5));
      }
    }

    cfg.numeric_mask = 0b0101;
    TrajUNet masked(cfg, 2);
    ConditionVector c = some_condition();
    ConditionVector d = c;
    d.numeric[1] = 100.0f;
    d.numeric[3] = -100.0f;
    const std::vector<ConditionVector> pair{c, d};
    const Tensor out = masked.wide_embedding(pair);
    CHECK(max_abs_diff(out.data().subspan(0, 8), out.data().subspan(8, 8)) == 0.0);
  }

  TEST_CASE("null condition is a deterministic zero embedding") {
    TrajUNet model(tiny_config(), 3);
    const std::vector<ConditionVector> nulls{ConditionVector::null(), ConditionVector::null()};
    const Tensor emb = model.condition_embedding(nulls);
    for (float v : emb.data()) CHECK(v == 0.0f);

    RngStream rng(3, 0);
    const Tensor x = random_tensor({2, 2, 16}, rng, 1.0, false);
    const std::vector<int> steps{5, 40};
    const Tensor a = model.predict(x, steps, nulls);
    const Tensor b = model.predict(x, steps, nulls);
    const Tensor c = model.forward_with_embedding(x, steps, Tensor::zeros({2, 8}));
    CHECK(max_abs_diff(a.data(), b.data()) == 0.0);
    CHECK(max_abs_diff(a.data(), c.data()) == 0.0);

    const std::vector<ConditionVector> real{some_condition(), some_condition()};
    CHECK(max_abs_diff(a.data(), model.predict(x, steps, real).data()) > 1e-6);
  }

  TEST_CASE("categorical fields change the embedding") {
    TrajUNet model(tiny_config(), 4);
    const std::vector<ConditionVector> conds{some_condition(10), some_condition(11), some_condition(10, 4),
                                             some_condition(10, 3, 8)};
    const Tensor emb = model.condition_embedding(conds);
    const auto row = [&](std::size_t i) { return emb.data().subspan(i * 8, 8); };
    CHECK(max_abs_diff(row(0), row(1)) > 1e-6);
    CHECK(max_abs_diff(row(0), row(2)) > 1e-6);
    CHECK(max_abs_diff(row(0), row(3)) > 1e-6);

    std::vector<ConditionVector> bad{some_condition(kDepartureSlots)};
    CHECK_THROWS_AS((void)model.condition_embedding(bad), ShapeError);
    bad = {some_condition(0, 16)};
    CHECK_THROWS_AS((void)model.condition_embedding(bad), ShapeError);
    bad = {some_condition(0, 0, -1)};
    CHECK_THROWS_AS((void)model.condition_embedding(bad), ShapeError);
  }

  TEST_CASE("resnet block with zero parameters is the identity") {
    ResnetBlockParams p;
    p.norm1_gamma = Tensor::full({4}, 1.0f);
    p.norm1_beta = Tensor::zeros({4});
    p.conv1_w = Tensor::zeros({4, 4, 3});
    p.conv1_b = Tensor::zeros({4});
    p.emb_w = Tensor::zeros({4, 6});
    p.emb_b = Tensor::zeros({4});
    p.norm2_gamma = Tensor::full({4}, 1.0f);
    p.norm2_beta = Tensor::zeros({4});
    p.conv2_w = Tensor::zeros({4, 4, 3});
    p.conv2_b = Tensor::zeros({4});
    RngStream rng(5, 0);
    const Tensor x = random_tensor({2, 4, 8}, rng, 1.0, false);
    const Tensor emb = random_tensor({2, 6}, rng, 1.0, false);
    const Tensor out = resnet_block(x, emb, p, 2);
    CHECK(max_abs_diff(out.data(), x.data()) == 0.0);
    CHECK_THROWS_AS((void)resnet_block(x, Tensor::zeros({3, 6}), p, 2), ShapeError);
  }

  TEST_CASE("self-attention oracle, zero values and row sums") {
    RngStream rng(6, 0);
    AttentionParams p{random_tensor({2, 2, 1}, rng, 0.7, false), random_tensor({2, 2, 1}, rng, 0.7, false),
                      random_tensor({2, 2, 1}, rng, 0.7, false)};
    const Tensor x = random_tensor({1, 2, 4}, rng, 1.0, false);
    Tensor weights;
    const Tensor out = self_attention(x, p, &weights);
    REQUIRE(weights.shape() == Shape{1, 4, 4});

    auto X = [&](std::size_t c, std::size_t l) { return static_cast<double>(x.data()[c * 4 + l]); };
    auto W = [](const Tensor& w, std::size_t o, std::size_t i) { return static_cast<double>(w.data()[o * 2 + i]); };
    for (std::size_t i = 0; i < 4; ++i) {
      double q[2], scores[4], total = 0.0;
      for (std::size_t o = 0; o < 2; ++o) q[o] = W(p.wq, o, 0) * X(0, i) + W(p.wq, o, 1) * X(1, i);
      for (std::size_t j = 0; j < 4; ++j) {
        double s = 0.0;
        for (std::size_t o = 0; o < 2; ++o) s += q[o] * (W(p.wk, o, 0) * X(0, j) + W(p.wk, o, 1) * X(1, j));
        scores[j] = std::exp(s / std::sqrt(2.0));
        total += scores[j];
      }
      double row = 0.0;
      for (std::size_t j = 0; j < 4; ++j) {
        CHECK(weights.data()[i * 4 + j] == doctest::Approx(scores[j] / total).epsilon(1e-5));
        row += weights.data()[i * 4 + j];
      }
      CHECK(row == doctest::Approx(1.0).epsilon(1e-6));
      for (std::size_t o = 0; o < 2; ++o) {
        double want = X(o, i);
        for (std::size_t j = 0; j < 4; ++j) {
          want += scores[j] / total * (W(p.wv, o, 0) * X(0, j) + W(p.wv, o, 1) * X(1, j));
        }
        CHECK(out.data()[o * 4 + i] == doctest::Approx(want).epsilon(1e-5));
      }
    }

    AttentionParams zero_v{p.wq, p.wk, Tensor::zeros({2, 2, 1})};
    CHECK(max_abs_diff(self_attention(x, zero_v).data(), x.data()) == 0.0);
  }

  TEST_CASE("desk model output shape and batch permutation") {
    TrajUNet model(TrajUNetConfig::desk(), 7);
    RngStream rng(7, 0);
    const Tensor x = random_tensor({2, 2, 64}, rng, 1.0, false);
    const std::vector<int> steps{3, 90};
    const std::vector<ConditionVector> conds{some_condition(), some_condition(200, 100, 255)};
    const Tensor out = model.predict(x, steps, conds);
    CHECK(out.shape() == Shape{2, 2, 64});

    std::vector<float> swapped(x.numel());
    std::copy(x.data().begin() + 128, x.data().end(), swapped.begin());
    std::copy(x.data().begin(), x.data().begin() + 128, swapped.begin() + 128);
    const std::vector<int> steps_sw{90, 3};
    const std::vector<ConditionVector> conds_sw{conds[1], conds[0]};
    const Tensor out_sw = model.predict(Tensor::from({2, 2, 64}, swapped), steps_sw, conds_sw);
    CHECK(max_abs_diff(out.data().subspan(0, 128), out_sw.data().subspan(128, 128)) < 1e-5);
    CHECK(max_abs_diff(out.data().subspan(128, 128), out_sw.data().subspan(0, 128)) < 1e-5);

    CHECK_THROWS_AS((void)model.predict(Tensor::zeros({2, 2, 63}), steps, conds), ShapeError);
    CHECK_THROWS_AS((void)model.predict(x, std::vector<int>{1}, conds), ShapeError);
  }

  TEST_CASE("configuration validation and parameter loading") {
    auto c = tiny_config();
    c.length = 15;
    CHECK_THROWS_AS(c.validate(), ArgumentError);
    c = tiny_config();
    c.norm_groups = 3;
    CHECK_THROWS_AS(c.validate(), ArgumentError);
    c = tiny_config();
    c.cond_embed_dim = 16;
    CHECK_THROWS_AS(c.validate(), ArgumentError);
    CHECK_NOTHROW(TrajUNetConfig::paper().validate());

    TrajUNet a(tiny_config(), 8), b(tiny_config(), 9);
    b.load_params(a.params());
    for (std::size_t i = 0; i < a.params().size(); ++i) {
      CHECK(max_abs_diff(a.params().entries()[i].tensor.data(), b.params().entries()[i].tensor.data()) == 0.0);
    }
    auto other = tiny_config();
    other.base_channels = 8;
    TrajUNet wrong(other, 1);
    CHECK_THROWS_AS(b.load_params(wrong.params()), DataError);
  }

  TEST_CASE("tiny model gradients agree with finite differences") {
    for (const auto& e : trajdiff::testing::tiny_unet_grad_errors()) {
      INFO(e.name << " error " << e.error);
      CHECK(e.error < 5e-3);
    }
  }
}
