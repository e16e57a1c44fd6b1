#include <vector>

#include <doctest.h>

#include "fd_check.hpp"
#include "fedadapt/adapter.hpp"
#include "fedadapt/conformer.hpp"
#include "fedadapt/optimizers.hpp"

using namespace fedadapt;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.d_in = 4;
  cfg.d = 8;
  cfg.layers = 2;
  cfg.ffn_mult = 2;
  cfg.kernel = 3;
  cfg.vocab = 5;
  return cfg;
}

Tensor random_features(std::size_t T, std::size_t d_in, std::uint64_t seed) {
  Rng rng(seed);
  Tensor x = Tensor::zeros({T, d_in});
  for (real& v : x.values()) v = real(rng.uniform(-1, 1));
  return x;
}

const AdapterVariant kAllVariants[] = {
    AdapterVariant::separate, AdapterVariant::seq_end, AdapterVariant::seq_both,
    AdapterVariant::parallel_end, AdapterVariant::parallel_both};

}  // namespace

TEST_CASE("adapter_forward closed forms") {
  Tape tape;
  ParameterTree tree;
  tree.bind_tape(&tape);
  AdapterSpec spec;
  spec.bottleneck = 1;
  Rng rng(3);
  insert_adapter(tree, "encoder/layer00/adapter_end", 2, spec, rng);
  Adapter a = adapter_at(tree, "encoder/layer00/adapter_end");

  Tensor h = Tensor::from({1, 2}, {2, -3});
  // w_up = 0, b_up = 0: residual mode returns h exactly, core mode returns 0
  CHECK(adapter_forward(a, h, Nonlinearity::relu, true).values() ==
        h.values());
  CHECK(adapter_forward(a, h, Nonlinearity::relu, false).values() ==
        std::vector<real>{0, 0});

  // hand evaluation: w_down = [[1],[0]], w_up = [[1, 1]]
  a.w_down.values() = {1, 0};
  a.w_up.values() = {1, 1};
  Tensor out = adapter_forward(a, h, Nonlinearity::relu, false);
  CHECK(out.values() == std::vector<real>{2, 2});
}

TEST_CASE("adapter spec validation") {
  AdapterSpec spec;
  spec.bottleneck = 0;
  CHECK_THROWS_AS(spec.validate(8), std::invalid_argument);
  spec.bottleneck = 8;
  CHECK_THROWS_AS(spec.validate(8), std::invalid_argument);
  spec.bottleneck = 7;
  CHECK_NOTHROW(spec.validate(8));
}

TEST_CASE("build_encoder without adapters has only baseline paths") {
  const ModelConfig cfg = tiny_config();
  ParameterTree tree = build_encoder(cfg, std::nullopt, 1);
  CHECK_FALSE(tree.has_adapter_paths());
  CHECK(count_adapter_instances(tree) == 0);
  CHECK(tree.total_count() == tree.trainable_count());
}

TEST_CASE("adapter placement counts per variant") {
  ModelConfig cfg = tiny_config();
  cfg.layers = 3;
  for (AdapterVariant v : kAllVariants) {
    AdapterSpec spec;
    spec.variant = v;
    spec.bottleneck = 4;
    ParameterTree tree = build_encoder(cfg, spec, 1);
    const std::size_t expected = cfg.layers * spec.instances_per_layer();
    CHECK(count_adapter_instances(tree) == expected);
  }
}

TEST_CASE("seq_both at d=8 b=4 layers=3 owns 456 adapter parameters") {
  ModelConfig cfg = tiny_config();
  cfg.d = 8;
  cfg.layers = 3;
  AdapterSpec spec;
  spec.variant = AdapterVariant::seq_both;
  spec.bottleneck = 4;
  ParameterTree tree = build_encoder(cfg, spec, 1);
  CHECK(count_adapter_instances(tree) == 6);
  std::uint64_t adapter_total = 0;
  for (const auto& [path, leaf] : tree.leaves())
    if (is_adapter_path(path)) adapter_total += leaf.tensor.size();
  CHECK(adapter_total == 456);
  tree.set_freeze(FreezePolicy::freeze_all_but_adapters);
  CHECK(tree.trainable_count() == 456);
}

TEST_CASE("paper-scale adapter count comes out to 4,469,504 per position") {
  ModelConfig cfg;
  cfg.d = 512;
  cfg.layers = 17;
  cfg.kernel = 32;
  AdapterSpec spec;
  spec.bottleneck = 256;
  // closed form; building the 100M-parameter tree is the accounting
  // module's full-scale territory
  const std::uint64_t per_instance = adapter_params_per_instance(512, 256);
  CHECK(per_instance == 262912);
  CHECK(17 * per_instance == 4469504);
}

TEST_CASE("set_freeze policies") {
  ModelConfig cfg = tiny_config();
  AdapterSpec spec;
  spec.variant = AdapterVariant::seq_end;
  spec.bottleneck = 4;
  ParameterTree tree = build_encoder(cfg, spec, 1);
  Rng rng(9);
  add_decoder_head(tree, cfg, rng);

  tree.set_freeze(FreezePolicy::all_trainable);
  CHECK(tree.trainable_count() == tree.total_count());
  CHECK(tree.frozen_count() == 0);

  tree.set_freeze(FreezePolicy::freeze_encoder_base);
  std::uint64_t decoder_and_adapters = 0;
  for (const auto& [path, leaf] : tree.leaves())
    if (is_adapter_path(path) || path.rfind("decoder", 0) == 0)
      decoder_and_adapters += leaf.tensor.size();
  CHECK(tree.trainable_count() == decoder_and_adapters);

  tree.set_freeze(FreezePolicy::freeze_all_but_adapters);
  const std::uint64_t adapters_expected =
      cfg.layers * adapter_params_per_instance(cfg.d, spec.bottleneck);
  CHECK(tree.trainable_count() == adapters_expected);
  CHECK(tree.trainable_count() + tree.frozen_count() == tree.total_count());

  ParameterTree bare = build_encoder(cfg, std::nullopt, 1);
  CHECK_THROWS_AS(bare.set_freeze(FreezePolicy::freeze_all_but_adapters),
                  std::invalid_argument);
}

TEST_CASE("identity at init: every variant matches the bare encoder bitwise") {
  const ModelConfig cfg = tiny_config();
  Tape tape_base;
  ParameterTree base = build_encoder(cfg, std::nullopt, 77);
  base.bind_tape(&tape_base);
  for (AdapterVariant v : kAllVariants) {
    AdapterSpec spec;
    spec.variant = v;
    spec.bottleneck = 4;
    spec.internal_residual = true;
    Tape tape;
    ParameterTree adapted = build_encoder(cfg, spec, 77);
    adapted.bind_tape(&tape);
    for (int trial = 0; trial < 100; ++trial) {
      Tensor x = random_features(1 + trial % 9, cfg.d_in, 1000 + trial);
      NoGradGuard g1(&tape_base), g2(&tape);
      Tensor base_out = encoder_forward(base, cfg, std::nullopt, x);
      Tensor adapted_out = encoder_forward(adapted, cfg, spec, x);
      REQUIRE(base_out.values() == adapted_out.values());
    }
  }
}

TEST_CASE("adapter presence does not disturb base initialization") {
  const ModelConfig cfg = tiny_config();
  ParameterTree bare = build_encoder(cfg, std::nullopt, 5);
  AdapterSpec spec;
  spec.variant = AdapterVariant::parallel_both;
  spec.bottleneck = 4;
  ParameterTree adapted = build_encoder(cfg, spec, 5);
  for (const auto& [path, leaf] : bare.leaves())
    REQUIRE(adapted.at(path).values() == leaf.tensor.values());
}

TEST_CASE("encoder output shape is [T, d] for all variants and configs") {
  for (bool attention : {false, true})
    for (bool conv : {false, true}) {
      ModelConfig cfg = tiny_config();
      cfg.use_attention = attention;
      cfg.use_conv = conv;
      for (AdapterVariant v : kAllVariants) {
        AdapterSpec spec;
        spec.variant = v;
        spec.bottleneck = 3;
        Tape tape;
        ParameterTree tree = build_encoder(cfg, spec, 2);
        tree.bind_tape(&tape);
        NoGradGuard guard(&tape);
        for (std::size_t T : {1u, 2u, 7u, 32u}) {
          Tensor out = encoder_forward(tree, cfg, spec,
                                       random_features(T, cfg.d_in, T));
          REQUIRE(out.shape() == Shape{T, cfg.d});
        }
      }
    }
}

TEST_CASE("two-layer encoder with parallel_both adapters passes the "
          "gradient oracle") {
  ModelConfig cfg = tiny_config();
  AdapterSpec spec;
  spec.variant = AdapterVariant::parallel_both;
  spec.bottleneck = 4;
  Tape tape;
  ParameterTree tree = build_encoder(cfg, spec, 21);
  Rng rng(22);
  add_decoder_head(tree, cfg, rng);
  tree.bind_tape(&tape);
  tree.set_freeze(FreezePolicy::all_trainable);
  // exercise the adapter weights away from their zero init
  for (const auto& [path, leaf] : tree.leaves())
    if (is_adapter_path(path)) {
      Tensor t = leaf.tensor;
      Rng leaf_rng(path.size());
      for (real& v : t.values()) v = real(leaf_rng.uniform(-0.3, 0.3));
    }
  Tensor x = random_features(5, cfg.d_in, 4242);
  const std::vector<int> labels{0, 1, 2, 3, 4};
  const std::vector<bool> mask(5, true);
  const auto fd = fdcheck::check_tree_grads(tree, [&] {
    return softmax_xent(model_logits(tree, cfg, spec, x), labels, mask);
  });
  CHECK(fd.max_rel_err < 1e-4);
}

TEST_CASE("frozen leaves stay bitwise fixed through optimizer steps") {
  ModelConfig cfg = tiny_config();
  AdapterSpec spec;
  spec.variant = AdapterVariant::seq_end;
  spec.bottleneck = 4;
  Tape tape;
  ParameterTree tree = build_encoder(cfg, spec, 31);
  Rng rng(32);
  add_decoder_head(tree, cfg, rng);
  tree.bind_tape(&tape);
  tree.set_freeze(FreezePolicy::freeze_all_but_adapters);

  std::map<std::string, std::vector<real>> frozen_before;
  for (const auto& [path, leaf] : tree.leaves())
    if (leaf.frozen) frozen_before[path] = leaf.tensor.values();

  Tensor x = random_features(6, cfg.d_in, 5);
  const std::vector<int> labels{0, 1, 2, 3, 4, 0};
  const std::vector<bool> mask(6, true);
  SgdState sgd{real(0.05)};
  for (int step = 0; step < 5; ++step) {
    tree.zero_grads();
    backward(softmax_xent(model_logits(tree, cfg, spec, x), labels, mask));
    sgd_step(tree, collect_grads(tree), sgd);
    tape.rewind();
  }
  for (const auto& [path, before] : frozen_before)
    REQUIRE(tree.at(path).values() == before);
}

TEST_CASE("decode_greedy collapse rules") {
  const std::size_t V = 3;  // blank id == 3
  auto frame = [&](int best) {
    std::vector<real> row(V + 1, real(0));
    row[best] = real(5);
    return row;
  };
  auto logits_of = [&](const std::vector<int>& picks) {
    Tensor t = Tensor::zeros({picks.size(), V + 1});
    for (std::size_t i = 0; i < picks.size(); ++i) {
      const auto row = frame(picks[i]);
      for (std::size_t j = 0; j <= V; ++j) t.at(i, j) = row[j];
    }
    return t;
  };
  CHECK(decode_greedy(logits_of({3, 1, 1, 3, 2})) == std::vector<int>{1, 2});
  CHECK(decode_greedy(logits_of({3, 3, 3})) == std::vector<int>{});
  CHECK(decode_greedy(logits_of({1, 3, 1})) == std::vector<int>{1, 1});
  CHECK(collapse_repeats({1, 1, 2, 2, 2, 1}) == std::vector<int>{1, 2, 1});
}
