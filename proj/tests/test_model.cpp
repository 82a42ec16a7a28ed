#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>

#include "ttalab/checkpoint.hpp"
#include "ttalab/model.hpp"

using namespace ttalab;

namespace {

Tensor rand_images(int n, int c, int h, int w, std::uint64_t seed) {
  Tensor t(Shape{n, c, h, w});
  Rng rng(seed);
  for (auto& v : t.vec()) v = static_cast<float>(rng.uniform());
  return t;
}

std::size_t conv_params(int ci, int co) {
  return static_cast<std::size_t>(co) * ci * 9 + static_cast<std::size_t>(co);
}

}  // namespace

TEST_CASE("plain model: analytic parameter count, forward shapes, ssl rejected") {
  ArchSpec arch;  // plain, {16,32,64,64}, 10 classes
  Model m(arch, 1);
  std::size_t expect = conv_params(3, 16) + conv_params(16, 32) +
                       conv_params(32, 64) + conv_params(64, 64) +
                       2 * (16 + 32 + 64 + 64) +  // norm affine
                       64 * 10 + 10;              // head
  CHECK(m.param_count() == expect);

  Tensor x = rand_images(3, 3, 32, 32, 7);
  Tensor z = m.forward_main(nullptr, x, NormMode::kEval);
  CHECK(z.shape() == Shape{3, 10});
  CHECK_THROWS_AS(m.forward_ssl(nullptr, x, NormMode::kEval), UnsupportedError);

  // adaptive pooling: other input sizes are accepted
  Tensor x48 = rand_images(2, 3, 48, 48, 8);
  CHECK(m.forward_main(nullptr, x48, NormMode::kEval).shape() == Shape{2, 10});
  Tensor x35 = rand_images(2, 3, 35, 35, 9);
  CHECK(m.forward_main(nullptr, x35, NormMode::kEval).shape() == Shape{2, 10});
}

TEST_CASE("y model: split variants, parameter copy, branch independence") {
  ArchSpec arch;
  arch.kind = "y";
  arch.split_point = 3;
  Model m(arch, 2);

  std::size_t expect = conv_params(3, 16) + conv_params(16, 32) +
                       conv_params(32, 64) +            // shared
                       conv_params(64, 64) +            // main tail block
                       conv_params(64, 64) +            // ssl tail block copy
                       2 * (16 + 32 + 64 + 64 + 64) +   // norm affine incl. ssl copy
                       64 * 10 + 10 +                   // main head
                       64 * 4 + 4;                      // rotation head
  CHECK(m.param_count() == expect);

  Tensor x = rand_images(2, 3, 32, 32, 11);
  CHECK(m.forward_main(nullptr, x, NormMode::kEval).shape() == Shape{2, 10});
  CHECK(m.forward_ssl(nullptr, x, NormMode::kEval).shape() == Shape{2, 4});

  SUBCASE("ssl branch starts as a parameter copy of the main tail") {
    auto main_tail = m.params_main_branch();
    auto ssl = m.params_ssl_branch();
    // main tail: block conv/norm then fc_main; ssl: copied block conv/norm then fc_ssl
    REQUIRE(main_tail.size() == ssl.size());
    for (std::size_t i = 0; i + 2 < main_tail.size(); ++i) {
      REQUIRE(main_tail[i].tensor->numel() == ssl[i].tensor->numel());
      CHECK(main_tail[i].tensor->vec() == ssl[i].tensor->vec());
    }
    // final layers differ in shape by construction
    CHECK(main_tail.back().tensor->numel() == 10);
    CHECK(ssl.back().tensor->numel() == 4);
  }

  SUBCASE("ssl parameters do not affect the main head and vice versa") {
    Tensor ssl0 = m.forward_ssl(nullptr, x, NormMode::kEval);
    for (auto& p : m.params_main_branch())
      for (auto& v : p.tensor->vec()) v += 0.11f;
    Tensor ssl1 = m.forward_ssl(nullptr, x, NormMode::kEval);
    CHECK(ssl1.vec() == ssl0.vec());

    Tensor main0 = m.forward_main(nullptr, x, NormMode::kEval);
    for (auto& p : m.params_ssl_branch())
      for (auto& v : p.tensor->vec()) v += 0.37f;
    Tensor main1 = m.forward_main(nullptr, x, NormMode::kEval);
    CHECK(main1.vec() == main0.vec());

    // the shared trunk feeds both heads
    for (auto& p : m.params_extractor())
      for (auto& v : p.tensor->vec()) v += 0.05f;
    CHECK(m.forward_main(nullptr, x, NormMode::kEval).vec() != main1.vec());
    CHECK(m.forward_ssl(nullptr, x, NormMode::kEval).vec() != ssl1.vec());
  }

  SUBCASE("split at the last block leaves only head layers in the branches") {
    ArchSpec a2 = arch;
    a2.split_point = 4;
    Model m2(a2, 3);
    CHECK(m2.params_main_branch().size() == 2);  // fc w+b
    CHECK(m2.params_ssl_branch().size() == 2);
  }

  SUBCASE("split out of range rejected") {
    ArchSpec bad = arch;
    bad.split_point = 5;
    CHECK_THROWS_AS(Model(bad, 1), ConfigError);
    bad.split_point = 0;
    CHECK_THROWS_AS(Model(bad, 1), ConfigError);
  }
}

TEST_CASE("partition coverage: y partitions tile the parameter set") {
  ArchSpec arch;
  arch.kind = "y";
  arch.split_point = 3;
  Model m(arch, 4);
  std::size_t n = 0;
  for (auto& p : m.params_extractor()) n += p.tensor->numel();
  for (auto& p : m.params_main_branch()) n += p.tensor->numel();
  for (auto& p : m.params_ssl_branch()) n += p.tensor->numel();
  CHECK(n == m.param_count());
}

TEST_CASE("checkpoint: bit-exact roundtrip, arch guard, version refusal") {
  ArchSpec arch;
  Model m(arch, 5);
  // put some non-default normalization state in place
  auto norms = m.norm_layers();
  norms[0]->running_mu[2] = 0.123456789;
  norms[1]->running_var[0] = 3.14159;
  norms[0]->rho = 0.07;

  Checkpoint cp = Checkpoint::capture(m);
  const std::uint64_t h0 = m.state_hash();

  // perturb everything, then restore
  for (auto& p : m.params_all())
    for (auto& v : p.tensor->vec()) v += 1.0f;
  for (auto* nl : m.norm_layers()) {
    for (auto& v : nl->running_mu) v += 1.0;
    nl->rho *= 0.5;
  }
  CHECK(m.state_hash() != h0);
  cp.restore_into(m);
  CHECK(m.state_hash() == h0);

  SUBCASE("file roundtrip is byte-identical") {
    const std::string path = "/tmp/ttalab_test_ckpt.bin";
    cp.save_file(path);
    Checkpoint cp2 = Checkpoint::load_file(path);
    CHECK(cp2.to_bytes() == cp.to_bytes());
    Model m2 = cp2.build_model();
    CHECK(m2.state_hash() == h0);
    std::remove(path.c_str());
  }

  SUBCASE("arch mismatch is refused") {
    ArchSpec other;
    other.widths = {8, 16};
    Model m3(other, 6);
    CHECK_THROWS_AS(cp.restore_into(m3), ContractError);
  }

  SUBCASE("version byte mismatch is refused outright") {
    auto bytes = cp.to_bytes();
    bytes[0] = 9;
    CHECK_THROWS_AS(Checkpoint::from_bytes(bytes), VersionError);
  }

  SUBCASE("truncated payload is an io error") {
    auto bytes = cp.to_bytes();
    bytes.resize(bytes.size() / 2);
    CHECK_THROWS_AS(Checkpoint::from_bytes(bytes), IoError);
  }
}

TEST_CASE("model init is deterministic in the seed") {
  ArchSpec arch;
  Model a(arch, 42), b(arch, 42), c(arch, 43);
  CHECK(a.state_hash() == b.state_hash());
  CHECK(a.state_hash() != c.state_hash());
}

TEST_CASE("forward counter counts invocations") {
  ArchSpec arch;
  Model m(arch, 7);
  Tensor x = rand_images(1, 3, 32, 32, 1);
  m.reset_forward_count();
  (void)m.forward_main(nullptr, x, NormMode::kEval);
  (void)m.forward_features(nullptr, x, NormMode::kEval);
  CHECK(m.forward_count() == 2);
}
