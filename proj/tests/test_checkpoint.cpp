#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "orchard/checkpoint.hpp"
#include "orchard/nn/resnet.hpp"
#include "orchard/rng.hpp"
#include "oracles.hpp"

using namespace orchard;
using namespace orchard::nn;
namespace ckpt = orchard::checkpoint;

namespace {

ResNet<float> small_model(std::uint64_t seed, std::size_t classes = 4) {
  Rng rng(seed);
  ResNet<float> net(resnet10_config(), classes, rng);
  return net;
}

Tensor probe_input() {
  Rng rng(555);
  std::vector<float> v(2 * 3 * 32 * 32);
  for (float& x : v) x = static_cast<float>(rng.next_double());
  return Tensor::from_data({2, 3, 32, 32}, std::move(v));
}

std::vector<float> eval_forward(ResNet<float>& net, const Tensor& x) {
  net.set_mode(Mode::eval);
  autograd::NoGradGuard ng;
  const Tensor y = net.forward(x);
  return {y.data().begin(), y.data().end()};
}

std::vector<std::vector<float>> snapshot(ResNet<float>& net) {
  std::vector<std::vector<float>> out;
  for (auto& item : net.named_state()) {
    out.emplace_back(item.tensor.data().begin(), item.tensor.data().end());
  }
  return out;
}

// One train-mode forward so running statistics move off their defaults.
void perturb_running_stats(ResNet<float>& net) {
  net.set_mode(Mode::train);
  autograd::NoGradGuard ng;
  net.forward(probe_input());
}

}  // namespace

TEST_CASE("save then load restores forward outputs bit-exactly") {
  oracle::TempDir tmp;
  ResNet<float> source = small_model(1);
  perturb_running_stats(source);
  const Tensor x = probe_input();
  const std::vector<float> want = eval_forward(source, x);

  ckpt::save(source, tmp.file("model.ckpt"));

  ResNet<float> fresh = small_model(2);  // different init
  ckpt::load(fresh, tmp.file("model.ckpt"));
  CHECK(eval_forward(fresh, x) == want);
  CHECK(snapshot(fresh) == snapshot(source));
}

TEST_CASE("corrupted files never touch the model") {
  oracle::TempDir tmp;
  ResNet<float> source = small_model(3);
  ckpt::save(source, tmp.file("model.ckpt"));

  const std::string bytes = ckpt::read_file(tmp.file("model.ckpt"));

  SECTION("truncated file") {
    std::ofstream out(tmp.file("trunc.ckpt"), std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    out.close();
    ResNet<float> victim = small_model(4);
    const auto before = snapshot(victim);
    CHECK_THROWS_AS(ckpt::load(victim, tmp.file("trunc.ckpt")), corruption_error);
    CHECK(snapshot(victim) == before);
  }
  SECTION("flipped byte fails the checksum") {
    std::string mangled = bytes;
    mangled[mangled.size() / 2] ^= 0x5A;
    std::ofstream out(tmp.file("flip.ckpt"), std::ios::binary);
    out.write(mangled.data(), static_cast<std::streamsize>(mangled.size()));
    out.close();
    ResNet<float> victim = small_model(4);
    const auto before = snapshot(victim);
    CHECK_THROWS_AS(ckpt::load(victim, tmp.file("flip.ckpt")), corruption_error);
    CHECK(snapshot(victim) == before);
  }
  SECTION("not a checkpoint at all") {
    std::ofstream out(tmp.file("junk.ckpt"), std::ios::binary);
    out << "hello";
    out.close();
    ResNet<float> victim = small_model(4);
    CHECK_THROWS_AS(ckpt::load(victim, tmp.file("junk.ckpt")), corruption_error);
  }
}

TEST_CASE("head size mismatch is a shape error naming the tensor") {
  oracle::TempDir tmp;
  ResNet<float> four = small_model(5, 4);
  ckpt::save(four, tmp.file("four.ckpt"));

  ResNet<float> ten = small_model(6, 10);
  const auto before = snapshot(ten);
  CHECK_THROWS_MATCHES(ckpt::load(ten, tmp.file("four.ckpt")), shape_error,
                       Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("head.weight")));
  CHECK(snapshot(ten) == before);
}

TEST_CASE("schema mismatches list the offending names") {
  oracle::TempDir tmp;
  ResNet<float> source = small_model(7);
  auto entries = [&] {
    std::vector<ckpt::Entry> out;
    for (auto& item : source.named_state()) {
      out.push_back({item.name, item.tensor.shape(),
                     std::vector<float>(item.tensor.data().begin(), item.tensor.data().end())});
    }
    return out;
  }();

  SECTION("missing entry") {
    std::vector<ckpt::Entry> missing(entries.begin(), entries.end() - 1);
    const std::string dropped = entries.back().name;
    std::ofstream(tmp.file("m.ckpt"), std::ios::binary) << ckpt::serialize_entries(missing);
    ResNet<float> victim = small_model(8);
    CHECK_THROWS_MATCHES(ckpt::load(victim, tmp.file("m.ckpt")), schema_error,
                         Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring(dropped)));
  }
  SECTION("unknown extra entry") {
    auto extra = entries;
    extra.push_back({"stage9.block9.conv9.weight", {1}, {0.f}});
    std::ofstream(tmp.file("x.ckpt"), std::ios::binary) << ckpt::serialize_entries(extra);
    ResNet<float> victim = small_model(8);
    CHECK_THROWS_MATCHES(
        ckpt::load(victim, tmp.file("x.ckpt")), schema_error,
        Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("stage9.block9.conv9.weight")));
  }
}

TEST_CASE("self-dump import with identity map reproduces the source") {
  oracle::TempDir tmp;
  ResNet<float> source = small_model(9);
  perturb_running_stats(source);
  ckpt::save(source, tmp.file("dump.ckpt"));

  ResNet<float> target = small_model(10);
  ckpt::NameMap map = ckpt::identity_name_map(target);
  map.head_policy = ckpt::HeadPolicy::import;
  const ckpt::ImportSummary summary = ckpt::import_pretrained(tmp.file("dump.ckpt"), target, map);
  CHECK(summary.unmatched_model.empty());
  CHECK(summary.unmatched_dump.empty());
  CHECK(summary.skipped.empty());
  CHECK(summary.imported.size() == target.named_state().size());

  const Tensor x = probe_input();
  CHECK(eval_forward(target, x) == eval_forward(source, x));
}

TEST_CASE("import is idempotent") {
  oracle::TempDir tmp;
  ResNet<float> source = small_model(11);
  ckpt::save(source, tmp.file("dump.ckpt"));
  ResNet<float> target = small_model(12);
  ckpt::NameMap map = ckpt::identity_name_map(target);
  map.head_policy = ckpt::HeadPolicy::import;
  ckpt::import_pretrained(tmp.file("dump.ckpt"), target, map);
  const auto once = snapshot(target);
  ckpt::import_pretrained(tmp.file("dump.ckpt"), target, map);
  CHECK(snapshot(target) == once);
}

TEST_CASE("strict import demands full backbone coverage") {
  oracle::TempDir tmp;
  ResNet<float> source = small_model(13);

  // Dump with one batchnorm running-mean entry removed.
  std::vector<ckpt::Entry> entries;
  std::string dropped;
  for (auto& item : source.named_state()) {
    if (dropped.empty() && item.name.find("running_mean") != std::string::npos &&
        item.name.rfind("head.", 0) != 0) {
      dropped = item.name;
      continue;
    }
    entries.push_back({item.name, item.tensor.shape(),
                       std::vector<float>(item.tensor.data().begin(), item.tensor.data().end())});
  }
  REQUIRE_FALSE(dropped.empty());
  std::ofstream(tmp.file("partial.ckpt"), std::ios::binary) << ckpt::serialize_entries(entries);

  ResNet<float> target = small_model(14);
  const auto before = snapshot(target);
  ckpt::NameMap map = ckpt::identity_name_map(target);
  CHECK_THROWS_MATCHES(ckpt::import_pretrained(tmp.file("partial.ckpt"), target, map, /*strict=*/true),
                       import_error,
                       Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring(dropped)));
  CHECK(snapshot(target) == before);  // strict failure leaves the model untouched

  // Relaxed mode applies what it can and records the gap.
  const ckpt::ImportSummary summary =
      ckpt::import_pretrained(tmp.file("partial.ckpt"), target, map, /*strict=*/false);
  CHECK(summary.unmatched_model == std::vector<std::string>{dropped});
}

TEST_CASE("skip-head import leaves the fresh head initialization in place") {
  oracle::TempDir tmp;
  ResNet<float> source = small_model(15);
  ckpt::save(source, tmp.file("dump.ckpt"));

  ResNet<float> target = small_model(16);
  ResNet<float> reference = small_model(16);  // same seed -> identical fresh head

  ckpt::NameMap map = ckpt::identity_name_map(target);
  map.head_policy = ckpt::HeadPolicy::skip;
  const ckpt::ImportSummary summary = ckpt::import_pretrained(tmp.file("dump.ckpt"), target, map);
  CHECK(summary.skipped == std::vector<std::string>{"head.weight", "head.bias"});
  // Dump head entries are unused under the skip policy.
  CHECK(summary.unmatched_dump == std::vector<std::string>{"head.weight", "head.bias"});

  const auto target_head_w = std::vector<float>(target.head().weight().data().begin(),
                                                target.head().weight().data().end());
  const auto reference_head_w = std::vector<float>(reference.head().weight().data().begin(),
                                                   reference.head().weight().data().end());
  CHECK(target_head_w == reference_head_w);

  // Backbone did move to the source values.
  const auto src_stem = std::vector<float>(source.stem_conv().weight().data().begin(),
                                           source.stem_conv().weight().data().end());
  const auto dst_stem = std::vector<float>(target.stem_conv().weight().data().begin(),
                                           target.stem_conv().weight().data().end());
  CHECK(dst_stem == src_stem);
}

TEST_CASE("name map parsing") {
  std::istringstream good("a.weight stem.conv.weight\n# comment\n\nb.bias head.bias\n");
  const ckpt::NameMap map = ckpt::parse_name_map(good, "test");
  REQUIRE(map.pairs.size() == 2);
  CHECK(map.pairs[0].first == "a.weight");
  CHECK(map.pairs[0].second == "stem.conv.weight");

  std::istringstream bad("only_one_token\n");
  CHECK_THROWS_AS(ckpt::parse_name_map(bad, "test"), format_error);
}
