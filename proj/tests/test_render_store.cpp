#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <thread>

#include <unistd.h>

#include "uhi/error.hpp"
#include "uhi/io_util.hpp"
#include "uhi/render.hpp"
#include "uhi/store.hpp"
#include "uhi/synthetic.hpp"

using namespace uhi;
namespace fs = std::filesystem;

namespace {

const GeoRef kGeo{0.0, 0.0, 30.0, 30.0, "EPSG:32635"};

class StoreDir : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() / ("uhi_test_store_" + std::to_string(::getpid()) + "_" +
                                         ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(root_);
  }
  void TearDown() override { fs::remove_all(root_); }
  fs::path root_;
};

}  // namespace

TEST(Palette, EndpointsAndMiddle) {
  for (Palette p : {Palette::thermal, Palette::diverging}) {
    const auto& a = palette_anchors(p);
    EXPECT_EQ(palette_color(p, 0.0), a.front());
    EXPECT_EQ(palette_color(p, 1.0), a.back());
    EXPECT_EQ(palette_color(p, -3.0), a.front());
    EXPECT_EQ(palette_color(p, 7.0), a.back());
    EXPECT_EQ(palette_color(p, 0.5), a[a.size() / 2]);
  }
  EXPECT_EQ(palette_color(Palette::thermal, 0.5), (Rgb{187, 55, 84}));
  EXPECT_EQ(palette_color(Palette::diverging, 0.5), (Rgb{247, 247, 247}));
  // Quarter of the way between anchors 0 and 1 of the diverging ramp.
  EXPECT_EQ(palette_color(Palette::diverging, 0.125),
            (Rgb{static_cast<std::uint8_t>(std::lround(33 + 0.25 * (247 - 33))),
                 static_cast<std::uint8_t>(std::lround(102 + 0.25 * (247 - 102))),
                 static_cast<std::uint8_t>(std::lround(172 + 0.25 * (247 - 172)))}));
}

TEST(RenderMap, ConstantAtMinMiddleAndNodata) {
  const ColorMapSpec spec{Palette::thermal, 10.0, 30.0, Rgb{1, 2, 3}};
  const RgbImage low = render_map(Grid(4, 3, kGeo, Units::celsius, 10.0), spec);
  ASSERT_EQ(low.width, 4);
  ASSERT_EQ(low.height, 3);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 4; ++c) ASSERT_EQ(low.pixel(r, c), palette_anchors(Palette::thermal).front());
  }
  Grid g(2, 1, kGeo, Units::celsius, 20.0);
  g.set_nodata(1);
  const RgbImage mid = render_map(g, spec);
  EXPECT_EQ(mid.pixel(0, 0), (Rgb{187, 55, 84}));
  EXPECT_EQ(mid.pixel(0, 1), (Rgb{1, 2, 3}));
  EXPECT_EQ(ColorMapSpec{}.nodata, (Rgb{128, 128, 128}));
}

TEST(RenderMap, SpecValidationAndJson) {
  ColorMapSpec s{Palette::diverging, -2.0, 2.0, Rgb{0, 0, 0}};
  const ColorMapSpec back = colormap_from_json(to_json(s));
  EXPECT_EQ(back.palette, Palette::diverging);
  EXPECT_EQ(back.min_c, -2.0);
  s.max_c = -2.0;
  EXPECT_THROW(s.validate(), Error);
  EXPECT_THROW(palette_from_string("rainbow"), Error);
}

TEST(RenderMap, AutoColormap) {
  Grid a(2, 1, kGeo, Units::celsius, std::vector<double>{-1.0, 3.0});
  Grid b(2, 1, kGeo, Units::celsius, std::vector<double>{2.0, 99.0});
  b.set_nodata(1);
  const Grid* grids[] = {&a, &b};
  const ColorMapSpec t = auto_colormap(Palette::thermal, grids);
  EXPECT_EQ(t.min_c, -1.0);
  EXPECT_EQ(t.max_c, 3.0);
  const ColorMapSpec d = auto_colormap(Palette::diverging, grids);
  EXPECT_EQ(d.min_c, -3.0);
  EXPECT_EQ(d.max_c, 3.0);
  const Grid zero(3, 3, kGeo, Units::celsius, 0.0);
  const Grid* z[] = {&zero};
  const ColorMapSpec zz = auto_colormap(Palette::diverging, z);
  EXPECT_EQ(zz.min_c, -0.5);
  EXPECT_EQ(zz.max_c, 0.5);
}

TEST(Png, RoundTripAndDeterminism) {
  Grid g(37, 23, kGeo, Units::celsius);
  for (std::size_t i = 0; i < g.size(); ++i) g.set(i, static_cast<double>(i % 41));
  g.set_nodata(5);
  const RgbImage img = render_map(g, ColorMapSpec{});
  const auto png = encode_png(img);
  EXPECT_EQ(png, encode_png(render_map(g, ColorMapSpec{})));
  const std::uint8_t sig[] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  ASSERT_GT(png.size(), 8u);
  EXPECT_TRUE(std::equal(sig, sig + 8, png.begin()));
  const RgbImage back = decode_png(png);
  EXPECT_EQ(back.width, 37);
  EXPECT_EQ(back.height, 23);
  EXPECT_EQ(back.rgb, img.rgb);
}

TEST(Ppm, HeaderAndPayload) {
  RgbImage img;
  img.width = 2;
  img.height = 1;
  img.rgb = {1, 2, 3, 4, 5, 6};
  const auto ppm = encode_ppm(img);
  const std::string head = "P6\n2 1\n255\n";
  ASSERT_EQ(ppm.size(), head.size() + 6);
  EXPECT_EQ(std::string(ppm.begin(), ppm.begin() + static_cast<long>(head.size())), head);
  EXPECT_EQ(ppm.back(), 6);
}

TEST(Jobs, TransitionTable) {
  using S = JobStatus;
  EXPECT_TRUE(job_transition_allowed(S::queued, S::running));
  EXPECT_TRUE(job_transition_allowed(S::running, S::done));
  EXPECT_TRUE(job_transition_allowed(S::running, S::failed));
  EXPECT_FALSE(job_transition_allowed(S::queued, S::done));
  EXPECT_FALSE(job_transition_allowed(S::done, S::running));
  EXPECT_FALSE(job_transition_allowed(S::failed, S::queued));
  EXPECT_FALSE(job_transition_allowed(S::running, S::running));
}

TEST(RecordIds, Validation) {
  EXPECT_NO_THROW(check_record_id("syn-0001_r0c64.v2"));
  EXPECT_THROW(check_record_id(""), Error);
  EXPECT_THROW(check_record_id(".."), Error);
  EXPECT_THROW(check_record_id("a/b"), Error);
  EXPECT_THROW(check_record_id("a#b"), Error);
}

TEST_F(StoreDir, RecordRoundTripListAndRemove) {
  const Store s(root_);
  const nlohmann::json doc = {{"x", 1.25}, {"name", "α"}};
  s.put("scenarios", "b", doc);
  s.put("scenarios", "a", doc);
  EXPECT_EQ(*s.get("scenarios", "b"), doc);
  EXPECT_EQ(s.list("scenarios"), (std::vector<std::string>{"a", "b"}));
  EXPECT_TRUE(s.remove("scenarios", "a"));
  EXPECT_FALSE(s.remove("scenarios", "a"));
  EXPECT_FALSE(s.get("scenarios", "a").has_value());
  EXPECT_THROW(s.put("scenarios", "../escape", doc), Error);
}

TEST_F(StoreDir, InterruptedWriteIsInvisible) {
  const Store s(root_);
  s.put("scenarios", "kept", {{"v", 1}});
  // What a writer killed before its rename leaves behind.
  std::ofstream(s.record_path("scenarios", "kept").string() + ".tmp.1.2.3") << "{\"v\": 2, trunc";
  std::ofstream(s.record_path("scenarios", "fresh").string() + ".tmp.1.2.4") << "{";
  EXPECT_EQ(s.list("scenarios"), std::vector<std::string>{"kept"});
  EXPECT_EQ((*s.get("scenarios", "kept"))["v"], 1);
  EXPECT_FALSE(s.exists("scenarios", "fresh"));
}

TEST_F(StoreDir, AtomicWriteLeavesNoTemporaries) {
  const Store s(root_);
  for (int i = 0; i < 20; ++i) s.put("jobs", "j" + std::to_string(i), {{"i", i}});
  for (const auto& e : fs::directory_iterator(root_ / "jobs")) {
    EXPECT_EQ(e.path().extension(), ".json") << e.path();
  }
}

TEST_F(StoreDir, ConcurrentWritesToDifferentIds) {
  const Store s(root_);
  std::vector<std::thread> threads;
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&, t] {
      for (int k = 0; k < 25; ++k) s.put("scenarios", "t" + std::to_string(t) + "_" + std::to_string(k), {{"t", t}, {"k", k}});
    });
  }
  for (auto& th : threads) th.join();
  EXPECT_EQ(s.list("scenarios").size(), 200u);
  EXPECT_EQ((*s.get("scenarios", "t7_24"))["k"], 24);
}

TEST_F(StoreDir, ConcurrentWritesToSameIdNeverTear) {
  const Store s(root_);
  std::vector<std::thread> threads;
  std::atomic<bool> torn{false};
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&, t] {
      for (int k = 0; k < 50; ++k) {
        s.put("scenarios", "same", {{"writer", t}, {"pad", std::string(2000, static_cast<char>('a' + t))}});
        try {
          const auto d = s.get("scenarios", "same");
          if (!d || (*d)["pad"].get<std::string>().size() != 2000) torn = true;
        } catch (...) {
          torn = true;
        }
      }
    });
  }
  for (auto& th : threads) th.join();
  EXPECT_FALSE(torn);
}

TEST_F(StoreDir, SampleAndCheckpointRoundTrip) {
  const Store s(root_);
  SyntheticConfig sc;
  sc.count = 2;
  sc.size = 16;
  const auto samples = synthetic_samples(sc);
  s.put_sample(samples[1]);
  const Sample back = s.load_sample("syn-0001");
  // Payloads are float32 on disk.
  const auto same_f32 = [](const Grid& a, const Grid& b) {
    if (a.width() != b.width() || a.height() != b.height()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a.is_nodata(i) != b.is_nodata(i)) return false;
      if (!a.is_nodata(i) && a[i] != static_cast<double>(static_cast<float>(b[i]))) return false;
    }
    return true;
  };
  EXPECT_EQ(back.inputs.roles(), samples[1].inputs.roles());
  for (Role r : samples[1].inputs.roles()) EXPECT_TRUE(same_f32(back.inputs.get(r), samples[1].inputs.get(r))) << to_string(r);
  EXPECT_TRUE(same_f32(back.label, samples[1].label));
  EXPECT_TRUE(same_f32(back.lulc, samples[1].lulc));
  EXPECT_EQ(back.date, samples[1].date);
  EXPECT_EQ(s.sample_ids(), std::vector<std::string>{"syn-0001"});
  try {
    s.load_sample("nope");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownSample);
  }
  try {
    s.load_checkpoint("nope");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownCheckpoint);
  }
}

TEST_F(StoreDir, ForcingGrids) {
  const Store s(root_);
  s.put_forcing_grid(Source::cordex_rcp85, 2100, Grid(2, 2, kGeo, Units::kelvin, 301.0));
  s.put_forcing_grid(Source::cordex_rcp85, 2030, Grid(2, 2, kGeo, Units::kelvin, 299.0));
  const ForcingRecord f = s.load_forcing(Source::cordex_rcp85);
  EXPECT_EQ(f.t2m.size(), 2u);
  EXPECT_EQ(f.t2m.at(2100).at(1, 1), 301.0);
  EXPECT_EQ(f.t2m.at(2100).units(), Units::kelvin);
  EXPECT_TRUE(s.load_forcing(Source::cordex_rcp26).t2m.empty());
}

TEST_F(StoreDir, JobLifecycleIsMonotone) {
  const Store s(root_);
  const JobRecord j = s.create_job(JobKind::scenario, "scn");
  EXPECT_EQ(j.status, JobStatus::queued);
  EXPECT_FALSE(j.created_at.empty());
  EXPECT_THROW(s.transition_job(j.job_id, JobStatus::done), Error);
  s.transition_job(j.job_id, JobStatus::running);
  const JobRecord done = s.transition_job(j.job_id, JobStatus::done, "scn");
  EXPECT_EQ(done.result_ref, "scn");
  EXPECT_THROW(s.transition_job(j.job_id, JobStatus::failed), Error);
  EXPECT_EQ(s.load_job(j.job_id)->status, JobStatus::done);
  EXPECT_EQ(s.jobs_for("scn").size(), 1u);
  const JobRecord back = JobRecord::from_json(done.to_json());
  EXPECT_EQ(back.status, JobStatus::done);
  EXPECT_EQ(back.kind, JobKind::scenario);
}

TEST_F(StoreDir, ConcurrentTransitionsHaveOneWinner) {
  const Store s(root_);
  for (int round = 0; round < 10; ++round) {
    const JobRecord j = s.create_job(JobKind::scenario, "x");
    std::atomic<int> wins{0};
    std::vector<std::thread> threads;
    for (int t = 0; t < 4; ++t) {
      threads.emplace_back([&] {
        try {
          s.transition_job(j.job_id, JobStatus::running);
          ++wins;
        } catch (const Error&) {
        }
      });
    }
    for (auto& th : threads) th.join();
    EXPECT_EQ(wins, 1);
  }
}

TEST_F(StoreDir, MintedIdsAreUnique) {
  const Store s(root_);
  std::set<std::string> ids;
  for (int i = 0; i < 200; ++i) ids.insert(s.mint_id("scn"));
  EXPECT_EQ(ids.size(), 200u);
  EXPECT_NO_THROW(check_record_id(*ids.begin()));
}
