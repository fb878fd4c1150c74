#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "cresnet/cost.hpp"
#include "cresnet/model.hpp"
#include "support/reference_ops.hpp"

using namespace cresnet;

namespace {

// Small four-stage spec covering one block of each family in a single net.
ArchSpec tiny_mixed_spec() {
  ArchSpec spec;
  spec.name = "tiny_mixed";
  spec.input_channels = 3;
  spec.stem = {{3, 8, 1}};
  spec.stages.push_back({BlockKind::Cross3x3, 1, {8, 8, 8}, 1});
  spec.stages.push_back({BlockKind::Basic, 1, {12, 12}, 2});
  spec.stages.push_back({BlockKind::Bottleneck, 1, {4, 4, 16}, 2});
  spec.stages.push_back({BlockKind::CrossBottleneck6, 1, {8, 16, 16, 8, 16, 16}, 2});
  detail::apply_mask(spec, [](const detail::SlotInfo&) { return false; });
  validate(spec);
  return spec;
}

template <typename T>
Tensor<T> wbr(ConvBn<T>& m, const Tensor<T>& x, bool training) {
  return relu(m.forward(x, training));
}

template <typename T>
Tensor<T> jump(JumperMod<T>& j, const Tensor<T>& x, bool training) {
  return j.forward(x, training);
}

}  // namespace

TEST_CASE("live parameter count agrees with the static analyzer on every net") {
  for (const auto& name : registry_names()) {
    CAPTURE(name);
    ArchSpec spec = registry_get(name);
    Model<float> model = build_model<float>(spec, 10, 1);
    REQUIRE(model.parameter_count() == count_params(spec, 10));
  }
}

TEST_CASE("forward produces logits of the requested class count") {
  Model<float> model = build_model<float>(tiny_mixed_spec(), 7, 3);
  auto x = refops::random_tensor<float>({2, 3, 16, 16}, 5);
  auto logits = model.forward(x);
  REQUIRE(logits.shape() == Shape{2, 7});
  REQUIRE(all_finite(logits));
  REQUIRE_THROWS_AS(model.forward(Tensor<float>::zeros({2, 1, 16, 16})), ShapeError);
}

TEST_CASE("the same seed rebuilds identical weights, a different seed does not") {
  ArchSpec spec = tiny_mixed_spec();
  Model<float> a = build_model<float>(spec, 5, 42);
  Model<float> b = build_model<float>(spec, 5, 42);
  Model<float> c = build_model<float>(spec, 5, 43);
  bool same_ab = true, same_ac = true;
  a.for_each_parameter([&](const std::string& name, Tensor<float>& pa) {
    b.for_each_parameter([&](const std::string& nb, Tensor<float>& pb) {
      if (nb == name && pa.vec() != pb.vec()) same_ab = false;
    });
    c.for_each_parameter([&](const std::string& nc, Tensor<float>& pc) {
      if (nc == name && pa.vec() != pc.vec()) same_ac = false;
    });
  });
  REQUIRE(same_ab);
  REQUIRE_FALSE(same_ac);

  auto x = refops::random_tensor<float>({2, 3, 16, 16}, 9);
  a.set_training(false);
  b.set_training(false);
  REQUIRE(a.forward(x).vec() == b.forward(x).vec());
}

TEST_CASE("initialization: kaiming conv scale, unit gamma, zero beta and fc bias") {
  Model<double> model = build_model<double>(registry_get("cresnet15_a1"), 10, 7);
  model.for_each_parameter([&](const std::string& name, Tensor<double>& p) {
    if (name.find(".bn.gamma") != std::string::npos) {
      for (double v : p.vec()) REQUIRE(v == 1.0);
    } else if (name.find(".bn.beta") != std::string::npos || name == "fc.bias") {
      for (double v : p.vec()) REQUIRE(v == 0.0);
    }
  });
  // Sample std of a large conv: stem.1 is 3x3x64->64, fan_in 576.
  Tensor<double>* w = nullptr;
  model.for_each_parameter([&](const std::string& name, Tensor<double>& p) {
    if (name == "stem.1.conv.weight") w = &p;
  });
  REQUIRE(w != nullptr);
  double sum = 0, sq = 0;
  for (double v : w->vec()) {
    sum += v;
    sq += v * v;
  }
  const double n = static_cast<double>(w->size());
  const double mean = sum / n;
  const double stddev = std::sqrt(sq / n - mean * mean);
  REQUIRE(stddev == Catch::Approx(std::sqrt(2.0 / 576.0)).epsilon(0.05));
  REQUIRE(std::abs(mean) < 3 * stddev / std::sqrt(n) + 1e-4);
}

TEST_CASE("parameter names are unique and solid jumpers own no parameters") {
  Model<float> model = build_model<float>(registry_get("cresnet18_a"), 10, 1);
  std::set<std::string> names;
  model.for_each_parameter([&](const std::string& name, Tensor<float>&) {
    REQUIRE(names.insert(name).second);
  });
  // cresnet18_a: 3 dashed jumpers, each conv+bn; 7 solid ones contribute nothing.
  int jumper_tensors = 0;
  for (const auto& name : names)
    if (name.find(".j") != std::string::npos) ++jumper_tensors;
  REQUIRE(jumper_tensors == 3 * 3);
  // Walk order is stable between calls.
  std::vector<std::string> again;
  model.for_each_parameter(
      [&](const std::string& name, Tensor<float>&) { again.push_back(name); });
  REQUIRE(again.size() == names.size());
  REQUIRE(std::is_sorted(again.begin(), again.end()) == false);  // structural, not lexical
}

TEST_CASE("cross3x3 block forward equals the hand-composed wiring") {
  ArchSpec spec = tiny_mixed_spec();
  Model<float> model = build_model<float>(spec, 4, 11);
  model.set_training(false);
  auto x0 = refops::random_tensor<float>({2, 3, 16, 16}, 21);

  auto x = wbr(model.stem[0], x0, false);
  Block<float>& blk = model.stages[0][0];
  // out1 = P1(x); out2 = P2(out1) + J1(x); out3 = P3(out2) + J2(out1)
  auto out1 = wbr(blk.layers[0], x, false);
  auto out2 = add(wbr(blk.layers[1], out1, false), jump(blk.jumpers[0], x, false));
  auto out3 = add(wbr(blk.layers[2], out2, false), jump(blk.jumpers[1], out1, false));

  auto got = blk.forward(x, false);
  REQUIRE(got.vec() == out3.vec());
}

TEST_CASE("basic block adds before the final relu") {
  ArchSpec spec = tiny_mixed_spec();
  Model<float> model = build_model<float>(spec, 4, 13);
  model.set_training(false);
  auto x = refops::random_tensor<float>({2, 8, 16, 16}, 23);

  Block<float>& blk = model.stages[1][0];
  auto y1 = wbr(blk.layers[0], x, false);
  auto y2 = blk.layers[1].forward(y1, false);  // no relu yet
  auto expected = relu(add(y2, jump(blk.jumpers[0], x, false)));
  REQUIRE(blk.forward(x, false).vec() == expected.vec());
}

TEST_CASE("bottleneck block adds before the final relu") {
  ArchSpec spec = tiny_mixed_spec();
  Model<float> model = build_model<float>(spec, 4, 17);
  model.set_training(false);
  auto x = refops::random_tensor<float>({1, 12, 8, 8}, 27);

  Block<float>& blk = model.stages[2][0];
  auto y1 = wbr(blk.layers[0], x, false);
  auto y2 = wbr(blk.layers[1], y1, false);
  auto y3 = blk.layers[2].forward(y2, false);
  auto expected = relu(add(y3, jump(blk.jumpers[0], x, false)));
  REQUIRE(blk.forward(x, false).vec() == expected.vec());
}

TEST_CASE("six-layer cross bottleneck forward equals the hand-composed wiring") {
  ArchSpec spec = tiny_mixed_spec();
  Model<float> model = build_model<float>(spec, 4, 19);
  model.set_training(false);
  auto x = refops::random_tensor<float>({2, 16, 4, 4}, 29);

  Block<float>& blk = model.stages[3][0];
  REQUIRE(blk.kind == BlockKind::CrossBottleneck6);
  auto o1 = wbr(blk.layers[0], x, false);
  auto o2 = wbr(blk.layers[1], o1, false);
  auto o3 = wbr(blk.layers[2], o2, false);
  auto o4 = add(wbr(blk.layers[3], o3, false), jump(blk.jumpers[0], x, false));
  auto o5 = add(wbr(blk.layers[4], o4, false), jump(blk.jumpers[1], o2, false));
  auto o6 = add(wbr(blk.layers[5], o5, false), jump(blk.jumpers[2], o3, false));
  REQUIRE(blk.forward(x, false).vec() == o6.vec());
}

TEST_CASE("whole-model forward equals the hand-composed pipeline") {
  ArchSpec spec = tiny_mixed_spec();
  Model<float> model = build_model<float>(spec, 4, 31);
  model.set_training(false);
  auto x0 = refops::random_tensor<float>({2, 3, 16, 16}, 33);

  Tensor<float> y = wbr(model.stem[0], x0, false);
  for (auto& stage : model.stages)
    for (auto& blk : stage) y = blk.forward(y, false);
  auto expected = linear(global_avg_pool(y), model.fc_w, model.fc_b);
  REQUIRE(model.forward(x0).vec() == expected.vec());
}

TEST_CASE("eval-mode forward is pure: repeated runs match, bn state untouched") {
  Model<float> model = build_model<float>(registry_get("cresnet15_a1"), 10, 3);
  model.set_training(false);
  auto x = refops::random_tensor<float>({2, 3, 32, 32}, 35);
  std::vector<float> mean_before, var_before;
  model.for_each_bn_state([&](const std::string&, BnState<float>& s) {
    mean_before.insert(mean_before.end(), s.running_mean.begin(), s.running_mean.end());
    var_before.insert(var_before.end(), s.running_var.begin(), s.running_var.end());
  });
  auto a = model.forward(x);
  auto b = model.forward(x);
  REQUIRE(a.vec() == b.vec());
  std::vector<float> mean_after, var_after;
  model.for_each_bn_state([&](const std::string&, BnState<float>& s) {
    mean_after.insert(mean_after.end(), s.running_mean.begin(), s.running_mean.end());
    var_after.insert(var_after.end(), s.running_var.begin(), s.running_var.end());
  });
  REQUIRE(mean_before == mean_after);
  REQUIRE(var_before == var_after);
}

TEST_CASE("training-mode forward moves batchnorm running statistics") {
  Model<float> model = build_model<float>(tiny_mixed_spec(), 4, 37);
  model.set_training(true);
  auto x = refops::random_tensor<float>({4, 3, 16, 16}, 39);
  std::vector<float> before;
  model.for_each_bn_state([&](const std::string&, BnState<float>& s) {
    before.insert(before.end(), s.running_mean.begin(), s.running_mean.end());
  });
  (void)model.forward(x);
  std::vector<float> after;
  model.for_each_bn_state([&](const std::string&, BnState<float>& s) {
    after.insert(after.end(), s.running_mean.begin(), s.running_mean.end());
  });
  REQUIRE(before != after);
}

TEST_CASE("first_nonfinite names the poisoned layer") {
  Model<float> model = build_model<float>(tiny_mixed_spec(), 4, 41);
  model.set_training(false);
  auto x = refops::random_tensor<float>({1, 3, 16, 16}, 43);
  REQUIRE(model.first_nonfinite(x).empty());

  model.stages[1][0].layers[0].w.data()[0] = std::nanf("");
  REQUIRE(model.first_nonfinite(x) == "s1.b0.l1");

  auto bad = x;
  bad.data()[5] = INFINITY;
  REQUIRE(model.first_nonfinite(bad) == "input");
}

TEST_CASE("backward reaches every parameter in the graph") {
  Model<double> model = build_model<double>(tiny_mixed_spec(), 4, 47);
  model.set_training(true);
  auto x = refops::random_tensor<double>({2, 3, 16, 16}, 49);
  auto loss = softmax_cross_entropy(model.forward(x), {0, 2});
  loss.backward();
  model.for_each_parameter([&](const std::string& name, Tensor<double>& p) {
    CAPTURE(name);
    REQUIRE(p.has_grad());
    double norm = 0;
    for (double g : p.grad()) norm += g * g;
    // Every layer feeds the loss, so no gradient should be identically zero.
    REQUIRE(norm > 0);
  });
}
