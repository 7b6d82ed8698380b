#include <doctest.h>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <thread>

#include "dmwm/error.hpp"
#include "dmwm/replay.hpp"

using namespace dmwm;
using replay::Episode;
using replay::ReplayBuffer;

namespace {

// Observation of step t in episode `id` is (id·1000 + t, −t); action t is t / 10.
Episode tagged_episode(std::size_t id, std::size_t length) {
  replay::EpisodeBuilder b(2, 1);
  b.start(std::vector<double>{static_cast<double>(id * 1000), 0.0});
  for (std::size_t t = 1; t < length; ++t) {
    b.add(std::vector<double>{static_cast<double>(t) / 10.0}, 0.5,
          std::vector<double>{static_cast<double>(id * 1000 + t), -static_cast<double>(t)});
  }
  return b.finish();
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("dmwm_test_replay_" + name);
}

std::vector<char> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& p, const std::vector<char>& bytes) {
  std::ofstream(p, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("episode builder stores a leading zero action and reward") {
  const Episode e = tagged_episode(3, 4);
  CHECK(e.length() == 4);
  CHECK(e.observations.size() == 8);
  CHECK(e.actions == std::vector<float>{0.0f, 0.1f, 0.2f, 0.3f});
  CHECK(e.rewards == std::vector<float>{0.0f, 0.5f, 0.5f, 0.5f});
  CHECK(e.observations[0] == 3000.0f);
  CHECK(e.observations[6] == 3003.0f);
}

TEST_CASE("adding episodes counts steps and evicts the oldest first") {
  ReplayBuffer buf(2, 1);
  CHECK(buf.capacity() == 1000000);
  buf.add_episode(tagged_episode(0, 500));
  CHECK(buf.stored_steps() == 500);
  for (std::size_t i = 1; i <= 2000; ++i) buf.add_episode(tagged_episode(i % 7, 500));
  CHECK(buf.stored_steps() == 1000000);
  CHECK(buf.episode_count() == 2000);
  buf.add_episode(tagged_episode(5, 500));
  CHECK(buf.stored_steps() <= 1000000);
  CHECK(buf.episode_count() == 2000);
  // The first episode (tag 0) left; the oldest survivor carries tag 2 % 7.
  CHECK(buf.episodes().front().observations[0] == 2000.0f);
}

TEST_CASE("malformed episodes are rejected") {
  ReplayBuffer buf(2, 1);
  Episode e = tagged_episode(1, 5);
  e.rewards[2] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(buf.add_episode(e), InputError);
  CHECK_THROWS_AS(buf.add_episode(tagged_episode(1, 1)), InputError);
  Episode wrong = tagged_episode(1, 5);
  wrong.obs_dim = 3;
  CHECK_THROWS_AS(buf.add_episode(wrong), InputError);
  CHECK(buf.episode_count() == 0);
}

TEST_CASE("sampled batches have the requested shape and never straddle episodes") {
  ReplayBuffer buf(2, 1);
  for (std::size_t i = 0; i < 4; ++i) buf.add_episode(tagged_episode(i, 100 + 10 * i));
  Rng rng(1);
  const auto batch = buf.sample(50, 64, rng);
  CHECK(batch.batch == 50);
  CHECK(batch.length == 64);
  CHECK(batch.observations.size() == 50 * 64 * 2);
  CHECK(batch.actions.size() == 50 * 64);
  CHECK(batch.rewards.size() == 50 * 64);
  CHECK(batch.is_first.size() == 50 * 64);
  CHECK(batch.observations_at(3).rows == 50);
  CHECK(batch.observations_at(3).cols == 2);
  for (std::size_t b = 0; b < 50; ++b) {
    const double tag = std::floor(batch.observations[b * 64 * 2] / 1000.0);
    for (std::size_t t = 0; t < 64; ++t) {
      const double o = batch.observations[(b * 64 + t) * 2];
      CHECK(std::floor(o / 1000.0) == tag);
      const double step = -batch.observations[(b * 64 + t) * 2 + 1];
      CHECK(o - tag * 1000.0 == step);
      CHECK(batch.is_first[b * 64 + t] == (step == 0.0 ? 1 : 0));
      CHECK(batch.actions[b * 64 + t] == doctest::Approx(step / 10.0).epsilon(1e-6));
    }
  }
}

TEST_CASE("a single exact-length episode is returned every time") {
  ReplayBuffer buf(2, 1);
  buf.add_episode(tagged_episode(9, 64));
  Rng rng(2);
  const auto batch = buf.sample(5, 64, rng);
  for (std::size_t b = 0; b < 5; ++b) {
    for (std::size_t t = 0; t < 64; ++t) CHECK(batch.observations[(b * 64 + t) * 2] == 9000.0 + t);
  }
}

TEST_CASE("sampling is uniform over episodes of equal length") {
  ReplayBuffer buf(2, 1);
  buf.add_episode(tagged_episode(0, 50));
  buf.add_episode(tagged_episode(1, 50));
  Rng rng(3);
  const std::size_t draws = 100000;
  const auto batch = buf.sample(draws, 2, rng);
  std::size_t second = 0;
  for (std::size_t b = 0; b < draws; ++b) second += batch.observations[b * 2 * 2] >= 1000.0 ? 1 : 0;
  const double freq = static_cast<double>(second) / static_cast<double>(draws);
  CHECK(std::abs(freq - 0.5) < 0.01);
}

TEST_CASE("too little data signals not-ready, distinct from input errors") {
  ReplayBuffer buf(2, 1);
  Rng rng(4);
  CHECK_THROWS_AS(buf.sample(2, 8, rng), NotReady);
  buf.add_episode(tagged_episode(0, 7));
  CHECK_THROWS_AS(buf.sample(2, 8, rng), NotReady);
  CHECK_THROWS_AS(buf.sample(0, 8, rng), InputError);
  buf.add_episode(tagged_episode(1, 8));
  CHECK_NOTHROW(buf.sample(2, 8, rng));
}

TEST_CASE("a fixed seed reproduces the batch bit for bit") {
  ReplayBuffer buf(2, 1);
  for (std::size_t i = 0; i < 3; ++i) buf.add_episode(tagged_episode(i, 80));
  Rng a(5), b(5);
  const auto x = buf.sample(16, 20, a), y = buf.sample(16, 20, b);
  CHECK(x.observations == y.observations);
  CHECK(x.actions == y.actions);
  CHECK(x.is_first == y.is_first);
}

TEST_CASE("persist and load round-trip a three-episode buffer") {
  ReplayBuffer buf(2, 1, 5000);
  for (std::size_t i = 0; i < 3; ++i) buf.add_episode(tagged_episode(i, 30 + i));
  const auto path = temp_path("roundtrip.bin");
  buf.persist(path);
  const ReplayBuffer back = ReplayBuffer::load(path);
  CHECK(back == buf);
  CHECK(back.capacity() == 5000);
  CHECK(back.episodes() == buf.episodes());
  std::filesystem::remove(path);
}

TEST_CASE("corrupted replay files raise distinct errors") {
  ReplayBuffer buf(2, 1);
  for (std::size_t i = 0; i < 3; ++i) buf.add_episode(tagged_episode(i, 10));
  const auto path = temp_path("corrupt.bin");
  buf.persist(path);
  const std::vector<char> good = read_bytes(path);
  // Layout: magic 8, version u32 @8, obs u32 @12, action u32 @16, capacity u64 @20, count u64 @28, length u64 @36.

  SUBCASE("corrupted length header") {
    std::vector<char> bad = good;
    bad[36 + 5] = 0x7f;
    write_bytes(path, bad);
    CHECK_THROWS_AS(ReplayBuffer::load(path), TruncatedError);
  }
  SUBCASE("cut short") {
    write_bytes(path, std::vector<char>(good.begin(), good.end() - 7));
    CHECK_THROWS_AS(ReplayBuffer::load(path), TruncatedError);
  }
  SUBCASE("future version names both versions") {
    std::vector<char> bad = good;
    bad[8] = 9;
    write_bytes(path, bad);
    try {
      ReplayBuffer::load(path);
      FAIL("expected VersionError");
    } catch (const VersionError& e) {
      CHECK(e.found() == 9);
      CHECK(e.supported() == ReplayBuffer::kFormatVersion);
      const std::string msg = e.what();
      CHECK(msg.find("version 9") != std::string::npos);
      CHECK(msg.find("version 1") != std::string::npos);
    }
  }
  SUBCASE("bad magic") {
    std::vector<char> bad = good;
    bad[0] = 'X';
    write_bytes(path, bad);
    CHECK_THROWS_AS(ReplayBuffer::load(path), FormatError);
  }
  SUBCASE("trailing bytes") {
    std::vector<char> bad = good;
    bad.push_back(0);
    write_bytes(path, bad);
    CHECK_THROWS_AS(ReplayBuffer::load(path), FormatError);
  }
  SUBCASE("missing file") {
    std::filesystem::remove(path);
    CHECK_THROWS_AS(ReplayBuffer::load(path), IoError);
  }
  std::filesystem::remove(path);
}

TEST_CASE("sampling tolerates a concurrent writer") {
  ReplayBuffer buf(2, 1, 4000);
  buf.add_episode(tagged_episode(0, 40));
  std::atomic<bool> done{false};
  std::thread writer([&] {
    for (std::size_t i = 1; i < 300; ++i) buf.add_episode(tagged_episode(i % 9, 40));
    done = true;
  });
  Rng rng(6);
  std::size_t bad = 0;
  while (!done) {
    const auto batch = buf.sample(8, 16, rng);
    for (std::size_t b = 0; b < 8; ++b) {
      const double first = batch.observations[b * 16 * 2];
      for (std::size_t t = 1; t < 16; ++t) bad += batch.observations[(b * 16 + t) * 2] != first + t ? 1 : 0;
    }
  }
  writer.join();
  CHECK(bad == 0);
  CHECK(buf.stored_steps() <= 4000);
}
