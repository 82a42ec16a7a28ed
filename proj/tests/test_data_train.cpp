#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "ttalab/data.hpp"
#include "ttalab/train.hpp"

using namespace ttalab;

TEST_CASE("synthetic pools: determinism, range, seed disjointness, shift knob") {
  SyntheticSpec spec;
  spec.size = 16;
  spec.seed = 100;
  LabeledDataset a = make_synthetic(spec, 24);
  LabeledDataset b = make_synthetic(spec, 24);
  CHECK(a.images.shape() == Shape{24, 3, 16, 16});
  CHECK(a.images.vec() == b.images.vec());
  CHECK(a.labels == b.labels);

  for (float v : a.images.vec()) {
    REQUIRE(v >= 0.0f);
    REQUIRE(v <= 1.0f);
  }

  SyntheticSpec other = spec;
  other.seed = 101;
  LabeledDataset c = make_synthetic(other, 24);
  CHECK(c.images.vec() != a.images.vec());

  // a longer draw from the same seed starts with the same samples
  LabeledDataset longer = make_synthetic(spec, 30);
  const std::size_t head = a.images.numel();
  CHECK(std::equal(a.images.data(), a.images.data() + head, longer.images.data()));

  SyntheticSpec shifted = spec;
  shifted.shift = 1.0;
  LabeledDataset s = make_synthetic(shifted, 24);
  CHECK(s.labels == a.labels);  // shift changes pixels, not the task
  double diff = 0.0;
  for (std::size_t i = 0; i < head; ++i)
    diff += std::abs(static_cast<double>(s.images.vec()[i] - a.images.vec()[i]));
  CHECK(diff / head > 0.01);

  SyntheticSpec bad = spec;
  bad.shift = 1.5;
  CHECK_THROWS_AS(make_synthetic(bad, 1), ContractError);
}

TEST_CASE("rotation batch: rotation-major layout with labels 0..3") {
  Tensor x(Shape{2, 1, 4, 4});
  Rng rng(5);
  for (auto& v : x.vec()) v = static_cast<float>(rng.uniform());
  auto [rot, labels] = rotation_batch(x);
  CHECK(rot.shape() == Shape{8, 1, 4, 4});
  CHECK(labels == std::vector<int>{0, 0, 1, 1, 2, 2, 3, 3});
  // slice k*N+n equals rot90(x_n, k)
  for (int k = 0; k < 4; ++k) {
    Tensor expect = ops::rot90(x, k);
    for (std::size_t i = 0; i < expect.numel(); ++i)
      REQUIRE(rot.vec()[static_cast<std::size_t>(k) * expect.numel() + i] ==
              expect.vec()[i]);
  }
}

TEST_CASE("augmentations preserve shape and range and are rng-deterministic") {
  Tensor x(Shape{3, 3, 16, 16});
  Rng fill(9);
  for (auto& v : x.vec()) v = static_cast<float>(fill.uniform());

  Rng r1(77), r2(77);
  Tensor a1 = augment_flip_crop(x, r1);
  Tensor a2 = augment_flip_crop(x, r2);
  CHECK(a1.shape() == x.shape());
  CHECK(a1.vec() == a2.vec());
  for (float v : a1.vec()) {
    REQUIRE(v >= 0.0f);
    REQUIRE(v <= 1.0f);
  }

  // some draw inside 64 tries must actually move pixels
  bool moved = false;
  Rng r3(123);
  for (int t = 0; t < 64 && !moved; ++t) moved = augment_adapt(x, r3).vec() != x.vec();
  CHECK(moved);
}

TEST_CASE("cifar10 reader: record layout, scaling, error paths") {
  const std::string path = "/tmp/ttalab_fake_cifar.bin";
  {
    std::ofstream f(path, std::ios::binary);
    std::vector<unsigned char> rec(3073);
    rec[0] = 3;
    for (std::size_t k = 0; k < 3072; ++k) rec[1 + k] = static_cast<unsigned char>(k % 256);
    f.write(reinterpret_cast<const char*>(rec.data()), 3073);
    rec[0] = 9;
    f.write(reinterpret_cast<const char*>(rec.data()), 3073);
  }
  LabeledDataset ds = load_cifar10({path});
  CHECK(ds.size() == 2);
  CHECK(ds.images.shape() == Shape{2, 3, 32, 32});
  CHECK(ds.labels == std::vector<int>{3, 9});
  CHECK(ds.images.vec()[0] == 0.0f);
  CHECK(ds.images.vec()[255] == doctest::Approx(1.0f));
  CHECK(ds.images.vec()[3071] == doctest::Approx(255.0f / 255.0f));

  // same file twice concatenates
  CHECK(load_cifar10({path, path}).size() == 4);

  {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    std::vector<char> junk(3072, 0);
    f.write(junk.data(), static_cast<std::streamsize>(junk.size()));
  }
  CHECK_THROWS_AS(load_cifar10({path}), IoError);

  {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    std::vector<unsigned char> rec(3073);
    rec[0] = 10;  // label byte out of range
    f.write(reinterpret_cast<const char*>(rec.data()), 3073);
  }
  CHECK_THROWS_AS(load_cifar10({path}), IoError);
  CHECK_THROWS_AS(load_cifar10({"/tmp/ttalab_no_such_file.bin"}), IoError);
  std::remove(path.c_str());
}

TEST_CASE("dataset and tensor containers roundtrip bit-exactly") {
  SyntheticSpec spec;
  spec.size = 12;
  spec.seed = 4;
  LabeledDataset ds = make_synthetic(spec, 10);
  const std::string dpath = "/tmp/ttalab_test_ds.bin";
  save_dataset(ds, dpath);
  LabeledDataset ds2 = load_dataset(dpath);
  CHECK(ds2.images.shape() == ds.images.shape());
  CHECK(ds2.images.vec() == ds.images.vec());
  CHECK(ds2.labels == ds.labels);
  std::remove(dpath.c_str());

  Tensor t(Shape{2, 3, 5});
  Rng rng(6);
  for (auto& v : t.vec()) v = static_cast<float>(rng.normal());
  const std::string tpath = "/tmp/ttalab_test_tensor.bin";
  save_tensor(t, tpath);
  Tensor t2 = load_tensor(tpath);
  CHECK(t2.shape() == t.shape());
  CHECK(t2.vec() == t.vec());
  std::remove(tpath.c_str());
}

TEST_CASE("subset keeps image/label pairing") {
  SyntheticSpec spec;
  spec.size = 8;
  spec.seed = 21;
  LabeledDataset ds = make_synthetic(spec, 6);
  LabeledDataset sub = subset(ds, {5, 0, 3});
  CHECK(sub.size() == 3);
  CHECK(sub.labels[0] == ds.labels[5]);
  CHECK(sub.labels[2] == ds.labels[3]);
  const std::size_t sz = 3 * 8 * 8;
  CHECK(std::equal(sub.images.data(), sub.images.data() + sz, ds.images.data() + 5 * sz));
  CHECK_THROWS_AS(subset(ds, {6}), ContractError);
}

TEST_CASE("supervised training learns the synthetic task") {
  SyntheticSpec spec;
  spec.size = 16;
  spec.seed = 1000;
  LabeledDataset train = make_synthetic(spec, 512);
  SyntheticSpec held = spec;
  held.seed = 2000;
  LabeledDataset test = make_synthetic(held, 256);

  ArchSpec arch;
  arch.widths = {8, 16};
  Model m(arch, 3);

  const double acc0 = eval_accuracy(m, test, NormMode::kEval);
  CHECK(acc0 < 0.35);  // untrained is near chance

  TrainConfig cfg;
  cfg.epochs = 6;
  cfg.batch_size = 32;
  cfg.seed = 7;
  const double loss = train_plain(m, train, cfg);
  CHECK(loss < 1.5);

  const double acc = eval_accuracy(m, test, NormMode::kEval);
  INFO("held-out accuracy ", acc);
  CHECK(acc > 0.55);

  // batch-stat mode on a held-out batch also beats chance for this model
  const double acc_bs = eval_accuracy(m, test, NormMode::kBatchStats);
  CHECK(acc_bs > 0.4);
}

TEST_CASE("joint training teaches both heads of a y model") {
  SyntheticSpec spec;
  spec.size = 16;
  spec.seed = 3000;
  LabeledDataset train = make_synthetic(spec, 384);
  SyntheticSpec held = spec;
  held.seed = 4000;
  LabeledDataset test = make_synthetic(held, 192);

  ArchSpec arch;
  arch.kind = "y";
  arch.widths = {8, 16};
  arch.split_point = 1;
  Model m(arch, 11);

  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.batch_size = 32;
  cfg.seed = 13;
  const double loss = train_joint(m, train, cfg);
  CHECK(loss < 2.0);

  const double acc = eval_accuracy(m, test, NormMode::kEval);
  INFO("held-out accuracy ", acc);
  CHECK(acc > 0.6);

  // rotation head: evaluate 4-way prediction on rotated held-out images
  auto [rot, labels] = rotation_batch(test.images);
  Tensor logits = m.forward_ssl(nullptr, rot, NormMode::kEval);
  auto pred = ops::argmax_rows(logits);
  int correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == labels[i]) ++correct;
  const double rot_acc = static_cast<double>(correct) / pred.size();
  INFO("rotation accuracy ", rot_acc);
  CHECK(rot_acc > 0.6);

  Model plain(ArchSpec{}, 1);
  CHECK_THROWS_AS(train_joint(plain, train, cfg), ContractError);
}
