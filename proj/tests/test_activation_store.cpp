#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <functional>
#include <limits>
#include <map>
#include <optional>

#include "masteer/activation_store.hpp"
#include "support.hpp"

using namespace masteer;
using masteer::test::TempDir;

namespace {

struct Caught {
  std::optional<ErrorKind> kind;
  std::string message;
};

Caught catch_error(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return {e.kind(), e.what()};
  }
  return {};
}

Dataset fixed_dataset(std::size_t n, std::size_t layers, std::size_t dim) {
  SplitMix64 rng(5);
  return test::random_dataset(rng, n, layers, dim);
}

ActivationSet labelled(const std::vector<std::string>& cats, std::size_t dim = 2) {
  ActivationSet a;
  a.model_id = "m";
  a.num_layers = 1;
  a.hidden_dim = dim;
  for (std::size_t i = 0; i < cats.size(); ++i) {
    a.sample_ids.push_back("s" + std::to_string(i));
    a.categories.push_back(cats[i]);
    for (std::size_t k = 0; k < dim; ++k) {
      a.pos.push_back(static_cast<float>(10 * i + k));
      a.neg.push_back(static_cast<float>(-(10.0 * i + k)));
    }
  }
  return a;
}

}  // namespace

TEST(ActivationStore, PayloadSizeIsNTimesLTimesDTimesFour) {
  TempDir dir("store-size");
  const auto ds = fixed_dataset(2, 3, 4);
  save_dataset(ds.corpus, ds.acts, dir / "ds");
  EXPECT_EQ(std::filesystem::file_size(dir / "ds" / "pos.bin"), 96u);
  EXPECT_EQ(std::filesystem::file_size(dir / "ds" / "neg.bin"), 96u);
  const auto manifest = test::read_file(dir / "ds" / "manifest");
  EXPECT_EQ(manifest.rfind("format-version: 1\n", 0), 0u);
}

TEST(ActivationStore, SaveLoadRoundTripIsByteIdentical) {
  TempDir dir("store-rt");
  const auto ds = fixed_dataset(7, 3, 5);
  save_dataset(ds.corpus, ds.acts, dir / "a");
  const auto back = load_dataset(dir / "a");
  EXPECT_EQ(back.corpus, ds.corpus);
  EXPECT_EQ(back.acts, ds.acts);
  save_dataset(back.corpus, back.acts, dir / "b");
  for (const char* f : {"manifest", "pos.bin", "neg.bin"}) {
    EXPECT_EQ(test::read_file(dir / "a" / f), test::read_file(dir / "b" / f)) << f;
  }
}

TEST(ActivationStore, SampleCountMismatchReportsBothShapes) {
  TempDir dir("store-shape");
  auto ds = fixed_dataset(3, 2, 4);
  ds.corpus.samples.pop_back();
  const auto c = catch_error([&] { save_dataset(ds.corpus, ds.acts, dir / "x"); });
  ASSERT_EQ(c.kind, ErrorKind::shape_mismatch);
  EXPECT_NE(c.message.find("2 samples"), std::string::npos) << c.message;
  EXPECT_NE(c.message.find("N=3"), std::string::npos) << c.message;
}

TEST(ActivationStore, DeclaredDimLargerThanPayloadIsCorrupt) {
  TempDir dir("store-dim");
  const auto ds = fixed_dataset(2, 3, 4);
  save_dataset(ds.corpus, ds.acts, dir / "ds");
  auto manifest = test::read_file(dir / "ds" / "manifest");
  const auto at = manifest.find("hidden-dim: 4");
  ASSERT_NE(at, std::string::npos);
  manifest.replace(at, 13, "hidden-dim: 8");
  test::write_file(dir / "ds" / "manifest", manifest);
  const auto c = catch_error([&] { load_dataset(dir / "ds"); });
  EXPECT_EQ(c.kind, ErrorKind::corrupt_dataset) << c.message;
}

TEST(ActivationStore, FlippedPayloadByteFailsChecksum) {
  TempDir dir("store-crc");
  const auto ds = fixed_dataset(2, 3, 4);
  save_dataset(ds.corpus, ds.acts, dir / "ds");
  auto bytes = test::read_file(dir / "ds" / "neg.bin");
  bytes[17] = static_cast<char>(bytes[17] ^ 0x01);
  test::write_file(dir / "ds" / "neg.bin", bytes);
  const auto c = catch_error([&] { load_dataset(dir / "ds"); });
  EXPECT_EQ(c.kind, ErrorKind::corrupt_dataset);
  EXPECT_NE(c.message.find("neg"), std::string::npos) << c.message;
}

TEST(ActivationStore, NanCitesSampleAndLayer) {
  TempDir dir("store-nan");
  const auto ds = fixed_dataset(2, 3, 4);
  save_dataset(ds.corpus, ds.acts, dir / "ds");
  // Poison pos at (sample 1, layer 2, dim 0) and fix the checksum so only the NaN is wrong.
  auto pos = ds.acts.pos;
  pos[ds.acts.offset(1, 2)] = std::numeric_limits<float>::quiet_NaN();
  std::string bytes(reinterpret_cast<const char*>(pos.data()), pos.size() * sizeof(float));
  test::write_file(dir / "ds" / "pos.bin", bytes);
  auto manifest = test::read_file(dir / "ds" / "manifest");
  const auto line_start = manifest.find("pos-crc32: ");
  const auto line_end = manifest.find('\n', line_start);
  manifest.replace(line_start, line_end - line_start,
                   "pos-crc32: " + std::to_string(crc32_of(std::span<const float>(pos))));
  test::write_file(dir / "ds" / "manifest", manifest);

  const auto c = catch_error([&] { load_dataset(dir / "ds"); });
  ASSERT_EQ(c.kind, ErrorKind::invalid_data) << c.message;
  EXPECT_NE(c.message.find("'id-1'"), std::string::npos) << c.message;
  EXPECT_NE(c.message.find("layer 2"), std::string::npos) << c.message;
}

TEST(ActivationStore, UnwritablePathIsIoError) {
  TempDir dir("store-io");
  const auto ds = fixed_dataset(2, 1, 2);
  test::write_file(dir / "file", "x");
  const auto c = catch_error([&] { save_dataset(ds.corpus, ds.acts, dir / "file" / "sub"); });
  EXPECT_EQ(c.kind, ErrorKind::io);
}

TEST(ActivationStore, MissingManifestIsIoError) {
  TempDir dir("store-missing");
  EXPECT_TRUE(catch_error([&] { load_dataset(dir / "nothing"); }).kind.has_value());
}

TEST(SplitByCategory, TwoEvenGroups) {
  const auto parts = split_by_category(labelled({"A", "A", "B", "B"}));
  ASSERT_EQ(parts.size(), 2u);
  EXPECT_EQ(parts[0].category, "A");
  EXPECT_EQ(parts[0].acts.size(), 2u);
  EXPECT_EQ(parts[1].category, "B");
  EXPECT_EQ(parts[1].acts.size(), 2u);
}

TEST(SplitByCategory, SingleCategoryIsIdentity) {
  auto a = labelled({"A", "A", "A"});
  const auto parts = split_by_category(a);
  ASSERT_EQ(parts.size(), 1u);
  a.category_order = {"A"};
  EXPECT_EQ(parts[0].acts, a);
}

TEST(SplitByCategory, KeepsRelativeOrder) {
  const auto a = labelled({"A", "B", "A"});
  const auto parts = split_by_category(a);
  ASSERT_EQ(parts.size(), 2u);
  ASSERT_EQ(parts[0].acts.sample_ids, (std::vector<std::string>{"s0", "s2"}));
  EXPECT_EQ(parts[0].acts.pos_row(0, 0)[0], a.pos_row(0, 0)[0]);
  EXPECT_EQ(parts[0].acts.pos_row(1, 0)[0], a.pos_row(2, 0)[0]);
}

TEST(SplitByCategory, PartitionPropertyOnRandomSets) {
  SplitMix64 rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const auto ds = test::random_dataset(rng, 1 + rng.below(20), 1 + rng.below(3), 1 + rng.below(4));
    const auto& a = ds.acts;
    const auto parts = split_by_category(a);
    std::map<std::string, std::vector<float>> seen;
    std::size_t total = 0;
    for (const auto& p : parts) {
      total += p.acts.size();
      for (std::size_t i = 0; i < p.acts.size(); ++i) {
        EXPECT_EQ(p.acts.categories[i], p.category);
        const auto row = p.acts.pos_row(i, 0);
        ASSERT_TRUE(seen.emplace(p.acts.sample_ids[i], std::vector<float>(row.begin(), row.end())).second);
      }
      EXPECT_EQ(p.acts.num_layers, a.num_layers);
      EXPECT_EQ(p.acts.hidden_dim, a.hidden_dim);
    }
    ASSERT_EQ(total, a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      const auto row = a.pos_row(i, 0);
      EXPECT_EQ(seen.at(a.sample_ids[i]), std::vector<float>(row.begin(), row.end()));
    }
  }
}

TEST(Bundle, PayloadSectionSize) {
  SplitMix64 rng(8);
  const auto b = test::random_bundle(rng, 4, 32);
  const auto bytes = bundle_bytes(b);
  const auto header_end = bytes.find("\n\n");
  ASSERT_NE(header_end, std::string::npos);
  EXPECT_EQ(bytes.size() - header_end - 2, 4u * (32 + 32 + 1) * 4);
}

TEST(Bundle, RoundTripThroughFile) {
  TempDir dir("bundle-rt");
  SplitMix64 rng(9);
  const auto b = test::random_bundle(rng, 3, 16);
  save_bundle(b, dir / "b.bundle");
  const auto back = load_bundle(dir / "b.bundle");
  EXPECT_EQ(back, b);
  EXPECT_EQ(bundle_bytes(back), test::read_file(dir / "b.bundle"));
}

TEST(Bundle, TruncatedFileIsCorrupt) {
  SplitMix64 rng(10);
  const auto bytes = bundle_bytes(test::random_bundle(rng, 2, 8));
  EXPECT_EQ(catch_error([&] { parse_bundle(bytes.substr(0, bytes.size() - 3)); }).kind, ErrorKind::corrupt_bundle);
  EXPECT_EQ(catch_error([&] { parse_bundle(bytes.substr(0, 40)); }).kind, ErrorKind::corrupt_bundle);
  EXPECT_EQ(catch_error([&] { parse_bundle(""); }).kind, ErrorKind::corrupt_bundle);
}

TEST(Bundle, VersionMismatchIsUnsupported) {
  SplitMix64 rng(11);
  auto bytes = bundle_bytes(test::random_bundle(rng, 2, 8));
  ASSERT_EQ(bytes.rfind("format-version: 1\n", 0), 0u);
  bytes.replace(0, 17, "format-version: 2");
  EXPECT_EQ(catch_error([&] { parse_bundle(bytes); }).kind, ErrorKind::unsupported_version);
}

TEST(Bundle, NonUnitSteerRejectedOnSave) {
  SplitMix64 rng(12);
  auto b = test::random_bundle(rng, 2, 8);
  b.profiles[0].steer *= 2.0;
  EXPECT_TRUE(catch_error([&] { bundle_bytes(b); }).kind.has_value());
}

TEST(Bundle, OverlappingAssignmentsRejected) {
  SplitMix64 rng(13);
  auto b = test::random_bundle(rng, 2, 8);
  b.profiles[1].assigned_ids.push_back(b.profiles[0].assigned_ids.front());
  EXPECT_TRUE(catch_error([&] { bundle_bytes(b); }).kind.has_value());
}

TEST(Serialization, HundredRandomDatasetsRoundTripByteExact) {
  TempDir dir("store-prop");
  SplitMix64 rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const auto ds = test::random_dataset(rng, 1 + rng.below(12), 1 + rng.below(5), 1 + rng.below(9));
    const auto path = dir / ("d" + std::to_string(trial));
    save_dataset(ds.corpus, ds.acts, path);
    const auto back = load_dataset(path);
    ASSERT_EQ(back.corpus, ds.corpus);
    ASSERT_EQ(back.acts, ds.acts);
    ASSERT_EQ(std::memcmp(back.acts.pos.data(), ds.acts.pos.data(), ds.acts.pos.size() * sizeof(float)), 0);
    ASSERT_EQ(std::memcmp(back.acts.neg.data(), ds.acts.neg.data(), ds.acts.neg.size() * sizeof(float)), 0);
  }
}

TEST(Serialization, HundredRandomBundlesRoundTripByteExact) {
  SplitMix64 rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    const auto b = test::random_bundle(rng, 1 + rng.below(5), 1 + rng.below(40));
    const auto bytes = bundle_bytes(b);
    const auto back = parse_bundle(bytes);
    ASSERT_EQ(back, b);
    ASSERT_EQ(bundle_bytes(back), bytes);
  }
}

TEST(Corpus, SaveLoadRoundTrip) {
  TempDir dir("corpus");
  const auto ds = fixed_dataset(6, 1, 1);
  save_corpus(ds.corpus, dir / "c.txt");
  EXPECT_EQ(load_corpus(dir / "c.txt"), ds.corpus);
}

TEST(Corpus, IdenticalBehavioursRejected) {
  auto ds = fixed_dataset(2, 1, 1);
  ds.corpus.samples[0].not_matching_behavior = ds.corpus.samples[0].matching_behavior;
  EXPECT_TRUE(catch_error([&] { validate_corpus(ds.corpus); }).kind.has_value());
}

TEST(Corpus, UndeclaredCategoryRejected) {
  auto ds = fixed_dataset(2, 1, 1);
  ds.corpus.samples[0].category = "nowhere";
  EXPECT_TRUE(catch_error([&] { validate_corpus(ds.corpus); }).kind.has_value());
}
