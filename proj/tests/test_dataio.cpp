#include <catch2/catch_amalgamated.hpp>

#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ordiscore/dataio.hpp"
#include "ordiscore/dataset.hpp"
#include "ordiscore/rng.hpp"
#include "ordiscore/synthetic.hpp"

using namespace ordiscore;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  static int counter = 0;
  const fs::path dir =
      fs::temp_directory_path() / ("ordiscore_dataio_" + std::to_string(::getpid()) +
                                   "_" + std::to_string(counter++));
  fs::create_directories(dir);
  return dir;
}

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path);
  for (const auto& line : lines) out << line << '\n';
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

TEST_CASE("rater_stats mean and population variance") {
  UtteranceRecord rec;
  rec.id = "u";
  rec.scores[0] = {7, 7, 7, 7, 7};
  auto stats = rater_stats(rec, Aspect::Accuracy);
  CHECK(stats.mean == Catch::Approx(7.0).margin(1e-15));
  CHECK(stats.variance == Catch::Approx(0.0).margin(1e-15));

  rec.scores[0] = {6, 7, 7, 7, 8};
  stats = rater_stats(rec, Aspect::Accuracy);
  CHECK(stats.mean == Catch::Approx(7.0).margin(1e-12));
  CHECK(stats.variance == Catch::Approx(0.4).margin(1e-12));

  rec.scores[0] = {1, 10};
  stats = rater_stats(rec, Aspect::Accuracy);
  CHECK(stats.mean == Catch::Approx(5.5).margin(1e-12));
  CHECK(stats.variance == Catch::Approx(20.25).margin(1e-12));

  CHECK_THROWS_AS(rater_stats(rec, Aspect::Fluency), std::invalid_argument);
}

TEST_CASE("rater_stats variance is permutation invariant") {
  Xoshiro256pp rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    UtteranceRecord rec;
    rec.id = "u";
    for (int i = 0; i < 7; ++i)
      rec.scores[1].push_back(1 + static_cast<int>(rng.bounded(10)));
    const auto before = rater_stats(rec, Aspect::Fluency);
    rng.shuffle(rec.scores[1]);
    const auto after = rater_stats(rec, Aspect::Fluency);
    CHECK(after.mean == Catch::Approx(before.mean).margin(1e-12));
    CHECK(after.variance == Catch::Approx(before.variance).margin(1e-12));
  }
}

TEST_CASE("discretize maps the 1-10 scale onto the five levels") {
  CHECK(discretize(1.0) == RubricLevel::VeryPoor);
  CHECK(discretize(2.0) == RubricLevel::VeryPoor);
  CHECK(discretize(3.0) == RubricLevel::Poor);
  CHECK(discretize(4.0) == RubricLevel::Poor);
  CHECK(discretize(5.0) == RubricLevel::Fair);
  CHECK(discretize(6.0) == RubricLevel::Fair);
  CHECK(discretize(7.0) == RubricLevel::Good);
  CHECK(discretize(8.0) == RubricLevel::Good);
  CHECK(discretize(9.0) == RubricLevel::VeryGood);
  CHECK(discretize(10.0) == RubricLevel::VeryGood);
  // half-up rounding first: 6.5 -> 7 -> Good
  CHECK(discretize(6.5) == RubricLevel::Good);
  CHECK(discretize(2.5) == RubricLevel::Poor);
  CHECK_THROWS_AS(discretize(0.99), std::invalid_argument);
  CHECK_THROWS_AS(discretize(10.01), std::invalid_argument);
}

TEST_CASE("discretize is monotone non-decreasing") {
  Xoshiro256pp rng(4);
  std::vector<double> xs;
  for (int i = 0; i < 500; ++i) xs.push_back(rng.uniform(1.0, 10.0));
  std::sort(xs.begin(), xs.end());
  for (std::size_t i = 1; i < xs.size(); ++i)
    CHECK(static_cast<int>(discretize(xs[i - 1])) <=
          static_cast<int>(discretize(xs[i])));
}

TEST_CASE("annotation jsonl round trip with inline features") {
  const fs::path dir = temp_dir();
  const fs::path file = dir / "data.jsonl";
  write_lines(file,
              {R"({"id":"a","feat":[0.5,-1.25],"scores":{"accuracy":[8,8,9,8,8]}})"});
  const auto records = load_dataset(file.string(), DatasetFormat::AnnotationJsonl);
  REQUIRE(records.size() == 1);
  CHECK(records[0].id == "a");
  CHECK(records[0].features == std::vector<double>{0.5, -1.25});
  CHECK(records[0].raters(Aspect::Accuracy).size() == 5);

  save_dataset(records, (dir / "copy.jsonl").string(), DatasetFormat::AnnotationJsonl);
  const auto reloaded =
      load_dataset((dir / "copy.jsonl").string(), DatasetFormat::AnnotationJsonl);
  REQUIRE(reloaded.size() == 1);
  CHECK(reloaded[0].features == records[0].features);
  CHECK(reloaded[0].scores == records[0].scores);
}

TEST_CASE("loader names the line for malformed JSON") {
  const fs::path file = temp_dir() / "bad.jsonl";
  write_lines(file, {R"({"id":"a","feat":[1.0],"scores":{"accuracy":[8]}})",
                     "{not json"});
  try {
    load_dataset(file.string(), DatasetFormat::AnnotationJsonl);
    FAIL("expected a parse error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find(":2") != std::string::npos);
  }
}

TEST_CASE("loader names the utterance for out-of-range scores") {
  const fs::path file = temp_dir() / "range.jsonl";
  write_lines(file, {R"({"id":"ok","feat":[1.0],"scores":{"accuracy":[8]}})",
                     R"({"id":"bad-utt","feat":[1.0],"scores":{"accuracy":[11]}})"});
  try {
    load_dataset(file.string(), DatasetFormat::AnnotationJsonl);
    FAIL("expected a validation error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("bad-utt") != std::string::npos);
  }
}

TEST_CASE("loader rejects non-integer scores and inconsistent dims") {
  const fs::path dir = temp_dir();
  write_lines(dir / "frac.jsonl",
              {R"({"id":"x","feat":[1.0],"scores":{"accuracy":[7.5]}})"});
  CHECK_THROWS_AS(
      load_dataset((dir / "frac.jsonl").string(), DatasetFormat::AnnotationJsonl),
      std::runtime_error);

  write_lines(dir / "dims.jsonl",
              {R"({"id":"a","feat":[1.0,2.0],"scores":{"accuracy":[8]}})",
               R"({"id":"b","feat":[1.0],"scores":{"accuracy":[7]}})"});
  CHECK_THROWS_AS(
      load_dataset((dir / "dims.jsonl").string(), DatasetFormat::AnnotationJsonl),
      std::runtime_error);

  write_lines(dir / "raters.jsonl",
              {R"({"id":"a","feat":[1.0],"scores":{"accuracy":[8,9],"fluency":[7]}})"});
  CHECK_THROWS_AS(
      load_dataset((dir / "raters.jsonl").string(), DatasetFormat::AnnotationJsonl),
      std::runtime_error);
}

TEST_CASE("feature sidecar round trip and error paths") {
  const fs::path dir = temp_dir();
  FeatureMatrix m;
  m.dim = 3;
  m.values = {1.0f, -2.5f, 0.125f, 4.0f, 5.0f, -6.0f};
  const fs::path file = dir / "feat.fbin";
  write_feature_sidecar(file.string(), m);
  const FeatureMatrix back = read_feature_sidecar(file.string());
  CHECK(back.dim == 3);
  CHECK(back.rows() == 2);
  CHECK(back.values == m.values);

  // second write is byte-identical
  const std::string first = slurp(file);
  write_feature_sidecar(file.string(), m);
  CHECK(slurp(file) == first);

  std::ofstream bad(dir / "bad.fbin", std::ios::binary);
  bad << "nope";
  bad.close();
  CHECK_THROWS_AS(read_feature_sidecar((dir / "bad.fbin").string()),
                  std::runtime_error);

  std::ofstream trunc(dir / "trunc.fbin", std::ios::binary);
  trunc.write("OSFT", 4);
  const char dim_bytes[4] = {3, 0, 0, 0};
  trunc.write(dim_bytes, 4);
  trunc.write("xx", 2);  // not a multiple of one row
  trunc.close();
  CHECK_THROWS_AS(read_feature_sidecar((dir / "trunc.fbin").string()),
                  std::runtime_error);
}

TEST_CASE("features-binary datasets resolve feat_ref rows") {
  const fs::path dir = temp_dir();
  SyntheticSpec spec;
  spec.n_utterances = 12;
  spec.feature_dim = 4;
  spec.n_raters = 3;
  spec.seed = 5;
  const auto data = generate_synthetic(spec);

  const fs::path file = dir / "data.jsonl";
  save_dataset(data.records, file.string(), DatasetFormat::FeaturesBinary);
  REQUIRE(fs::exists(dir / "data.fbin"));
  const auto back = load_dataset(file.string(), DatasetFormat::FeaturesBinary);
  REQUIRE(back.size() == data.records.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].id == data.records[i].id);
    CHECK(back[i].features == data.records[i].features);
    CHECK(back[i].scores == data.records[i].scores);
  }

  // a feat_ref beyond the sidecar is a hard error
  write_lines(dir / "oob.jsonl",
              {R"({"id":"a","feat_ref":999,"scores":{"accuracy":[8]}})"});
  CHECK_THROWS_AS(load_dataset((dir / "oob.jsonl").string(),
                               DatasetFormat::FeaturesBinary,
                               (dir / "data.fbin").string()),
                  std::runtime_error);
}

TEST_CASE("generate_synthetic is deterministic and respects its spec") {
  SyntheticSpec spec;
  spec.n_utterances = 40;
  spec.feature_dim = 6;
  spec.n_raters = 5;
  spec.noise_low = 0.2;
  spec.noise_high = 2.0;
  spec.seed = 77;

  const auto a = generate_synthetic(spec);
  const auto b = generate_synthetic(spec);
  REQUIRE(a.records.size() == 40);
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    CHECK(a.records[i].id == b.records[i].id);
    CHECK(a.records[i].features == b.records[i].features);
    CHECK(a.records[i].scores == b.records[i].scores);
  }
  CHECK(a.truth.noise_sd == b.truth.noise_sd);
  for (int as = 0; as < kAspectCount; ++as)
    CHECK(a.truth.latent[as] == b.truth.latent[as]);

  for (const auto& rec : a.records) {
    CHECK(rec.features.size() == 6);
    CHECK(rec.rater_count() == 5);
    for (Aspect aspect : kAllAspects) {
      for (int y : rec.raters(aspect)) {
        CHECK(y >= 1);
        CHECK(y <= 10);
      }
      // the mean stays in [1,10], so discretize(mean) is always defined
      CHECK_NOTHROW(discretize(rater_stats(rec, aspect).mean));
    }
  }
  for (double sd : a.truth.noise_sd) {
    CHECK(sd >= 0.2);
    CHECK(sd <= 2.0);
  }
  validate_dataset(a.records);
}

TEST_CASE("degenerate noise range gives one SD for every utterance") {
  SyntheticSpec spec;
  spec.n_utterances = 25;
  spec.feature_dim = 4;
  spec.noise_low = 0.7;
  spec.noise_high = 0.7;
  spec.seed = 3;
  const auto data = generate_synthetic(spec);
  for (double sd : data.truth.noise_sd)
    CHECK(sd == Catch::Approx(0.7).margin(1e-12));
}

TEST_CASE("mean inter-rater variance grows with the noise range") {
  auto mean_s2 = [](double lo, double hi, std::uint64_t seed) {
    SyntheticSpec spec;
    spec.n_utterances = 2000;
    spec.feature_dim = 8;
    spec.n_raters = 5;
    spec.noise_low = lo;
    spec.noise_high = hi;
    spec.seed = seed;
    const auto data = generate_synthetic(spec);
    double acc = 0.0;
    for (const auto& rec : data.records)
      acc += rater_stats(rec, Aspect::Accuracy).variance;
    return acc / static_cast<double>(data.records.size());
  };
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const double low_noise = mean_s2(0.2, 0.6, seed);
    const double mid_noise = mean_s2(0.6, 1.2, seed);
    const double high_noise = mean_s2(1.2, 2.2, seed);
    CHECK(low_noise < mid_noise);
    CHECK(mid_noise < high_noise);
  }
}
