#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "rfnet/error.hpp"
#include "rfnet/metrics.hpp"
#include "oracles.hpp"

using namespace rfnet;
using namespace rfnet::testing;

namespace {

constexpr int kIgnore = kMetricIgnore;

}  // namespace

TEST_SUITE("confusion") {
  TEST_CASE("hand example") {
    LabelMap gt(2, 2);
    gt.data = {0, 0, 1, 1};
    LabelMap pred(2, 2);
    pred.data = {0, 1, 1, 1};
    ConfusionMatrix cm(2);
    cm.accumulate(pred, gt, kIgnore);
    CHECK(cm.at(0, 0) == 1);
    CHECK(cm.at(0, 1) == 1);
    CHECK(cm.at(1, 1) == 2);
    CHECK(cm.at(1, 0) == 0);
    const auto r = iou(cm);
    CHECK(*r.per_class[0] == 0.5);
    CHECK(*r.per_class[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  }

  TEST_CASE("all-ones matrix gives one third per class") {
    ConfusionMatrix cm(2);
    for (int g = 0; g < 2; ++g)
      for (int p = 0; p < 2; ++p) cm.add(g, p);
    const auto r = iou(cm);
    CHECK(*r.per_class[0] == 1.0 / 3.0);
    CHECK(*r.per_class[1] == 1.0 / 3.0);
    CHECK(r.miou == 1.0 / 3.0);
  }

  TEST_CASE("ignored pixels are never counted") {
    LabelMap gt(1, 3, kIgnore);
    LabelMap pred(1, 3, 1);
    ConfusionMatrix cm(2);
    cm.accumulate(pred, gt, kIgnore);
    CHECK(cm.total() == 0);
    const auto r = iou(cm);
    CHECK(r.defined == 0);
    CHECK(std::isnan(r.miou));
  }

  TEST_CASE("scored classes restrict the mean only") {
    ConfusionMatrix cm(3);
    cm.add(0, 0, 3);
    cm.add(1, 2, 1);
    cm.add(2, 2, 1);
    const auto r = iou(cm, 2);
    CHECK(*r.per_class[0] == 1.0);
    CHECK(*r.per_class[1] == 0.0);
    CHECK(*r.per_class[2] == 0.5);
    CHECK(r.defined == 2);
    CHECK(r.miou == 0.5);
  }

  TEST_CASE("matches counting oracle on random instances") {
    Rng rng(11);
    for (int t = 0; t < 50; ++t) {
      const auto in = random_metric_instance(rng);
      ConfusionMatrix cm(in.k);
      cm.accumulate(in.pred, in.gt, kIgnore);
      CHECK(confusion_matches_counting(cm, in));
      CHECK(report_matches_counting(iou(cm), in.pred, in.gt, in.k, std::vector<bool>(in.gt.size(), true)));
    }
  }

  TEST_CASE("pixel permutation leaves the matrix unchanged") {
    Rng rng(12);
    for (int t = 0; t < 20; ++t) {
      const auto in = random_metric_instance(rng);
      std::vector<std::size_t> order(in.gt.size());
      std::iota(order.begin(), order.end(), 0);
      std::mt19937_64 eng(rng.next());
      std::shuffle(order.begin(), order.end(), eng);
      LabelMap pg(in.gt.height, in.gt.width);
      LabelMap pp(in.gt.height, in.gt.width);
      for (std::size_t i = 0; i < order.size(); ++i) {
        pg.data[i] = in.gt.data[order[i]];
        pp.data[i] = in.pred.data[order[i]];
      }
      ConfusionMatrix a(in.k);
      ConfusionMatrix b(in.k);
      a.accumulate(in.pred, in.gt, kIgnore);
      b.accumulate(pp, pg, kIgnore);
      CHECK(a == b);
    }
  }

  TEST_CASE("errors") {
    ConfusionMatrix cm(2);
    CHECK_THROWS_AS(cm.add(2, 0), DataError);
    CHECK_THROWS_AS(cm.add(0, -1), DataError);
    CHECK_THROWS_AS(cm.accumulate(LabelMap(2, 2), LabelMap(2, 3), kIgnore), ShapeError);
    CHECK_THROWS_AS(cm.merge(ConfusionMatrix(3)), ShapeError);
  }
}

TEST_SUITE("depth") {
  TEST_CASE("disparity to depth examples") {
    Tensor d(Shape{1, 1, 4});
    auto v = d.data();
    v[0] = 0.0;
    v[1] = 1.0;
    v[2] = 0.25;
    v[3] = 5.0;
    const Tensor z = depth_from_disparity(d, 50.0);
    CHECK(z.data()[0] == 100.0);
    CHECK(z.data()[1] == 50.0);
    CHECK(z.data()[2] == 100.0);
    CHECK(z.data()[3] == 10.0);
  }

  TEST_CASE("depth errors") {
    Tensor d(Shape{1, 1, 1}, -1.0);
    CHECK_THROWS_AS(depth_from_disparity(d, 50.0), DataError);
    CHECK_THROWS_AS(depth_from_disparity(Tensor(Shape{1}, 1.0), 0.0), ConfigError);
  }

  TEST_CASE("bin configuration errors") {
    CHECK_THROWS_AS(DepthBinnedAccumulator({}, 2, kIgnore), ConfigError);
    CHECK_THROWS_AS(DepthBinnedAccumulator({20, 10, 100}, 2, kIgnore), ConfigError);
    CHECK_THROWS_AS(DepthBinnedAccumulator({20, 90}, 2, kIgnore), ConfigError);
    DepthBinnedAccumulator acc({50, 100}, 2, kIgnore);
    CHECK_THROWS_AS(acc.accumulate(LabelMap(1, 1), LabelMap(1, 1), Tensor(Shape{1, 1, 1}, 0.0)),
                    DataError);
    CHECK_THROWS_AS(acc.accumulate(LabelMap(1, 1), LabelMap(1, 1), Tensor(Shape{1, 1, 2}, 5.0)),
                    ShapeError);
  }
}

TEST_SUITE("binned") {
  const std::vector<double> kEdges{20, 40, 60, 80, 100};

  TEST_CASE("matches counting oracle per bin on random instances") {
    Rng rng(21);
    for (int t = 0; t < 50; ++t) {
      const auto in = random_metric_instance(rng);
      const int tracked = in.k - 1;
      const auto rep = binned_eval(in.pred, in.gt, in.depth, kEdges, in.k, kIgnore, tracked);
      CHECK(binned_matches_counting(rep, in, kEdges, tracked));
    }
  }

  TEST_CASE("single bin equals the unbinned evaluation") {
    Rng rng(22);
    for (int t = 0; t < 20; ++t) {
      const auto in = random_metric_instance(rng);
      const auto rep = binned_eval(in.pred, in.gt, in.depth, {100.0}, in.k, kIgnore, 0);
      ConfusionMatrix global(in.k);
      global.accumulate(in.pred, in.gt, kIgnore);
      CHECK(rep.bins[0] == global);
      const auto a = iou(global);
      CHECK(rep.reports[0].per_class == a.per_class);
    }
  }

  TEST_CASE("unmatched disparity lands in the last bin") {
    LabelMap gt(1, 3, 1);
    LabelMap pred(1, 3, 1);
    Tensor d(Shape{1, 1, 3});
    d.data()[0] = 0.0;
    d.data()[1] = 10.0;
    d.data()[2] = 0.0;
    const Tensor z = depth_from_disparity(d, 100.0);
    const auto rep = binned_eval(pred, gt, z, kEdges, 2, kIgnore, 1);
    CHECK(rep.bins.back().total() == 2);
    CHECK(rep.bins[0].total() == 1);
    for (std::size_t b = 1; b + 1 < kEdges.size(); ++b) CHECK(rep.bins[b].total() == 0);
  }

  TEST_CASE("bin edges are right-closed") {
    LabelMap gt(1, 2, 0);
    LabelMap pred(1, 2, 0);
    Tensor z(Shape{1, 1, 2});
    z.data()[0] = 20.0;
    z.data()[1] = std::nextafter(20.0, 100.0);
    const auto rep = binned_eval(pred, gt, z, kEdges, 1, kIgnore, 0);
    CHECK(rep.bins[0].total() == 1);
    CHECK(rep.bins[1].total() == 1);
  }

  TEST_CASE("accumulator total merges across calls") {
    Rng rng(23);
    DepthBinnedAccumulator acc(kEdges, 4, kIgnore);
    ConfusionMatrix global(4);
    for (int t = 0; t < 5; ++t) {
      MetricInstance in = random_metric_instance(rng);
      for (auto& v : in.gt.data) if (v != kIgnore) v %= 4;
      for (auto& v : in.pred.data) v %= 4;
      acc.accumulate(in.pred, in.gt, in.depth);
      global.accumulate(in.pred, in.gt, kIgnore);
    }
    CHECK(acc.total() == global);
  }
}

TEST_SUITE("reports") {
  TEST_CASE("class iou csv") {
    IouReport r;
    r.per_class = {0.5, std::nullopt};
    r.miou = 0.5;
    r.defined = 1;
    CHECK(class_iou_csv({"road", "sky"}, r) == "class,iou\nroad,0.5\nsky,\nmIoU,0.5\n");
  }

  TEST_CASE("binned csv") {
    LabelMap gt(1, 2, 0);
    gt.data[1] = 1;
    LabelMap pred(1, 2, 0);
    Tensor z(Shape{1, 1, 2});
    z.data()[0] = 10.0;
    z.data()[1] = 70.0;
    const auto rep = binned_eval(pred, gt, z, {50, 100}, 2, kIgnore, 1);
    CHECK(binned_iou_csv(rep, "obstacle") ==
          "bin_low,bin_high,pixels,miou,obstacle_iou\n0,50,1,1,\n50,100,1,0,0\n");
  }

  TEST_CASE("format double round trips") {
    Rng rng(5);
    for (int i = 0; i < 100; ++i) {
      const double v = rng.uniform(-1e6, 1e6);
      CHECK(std::stod(format_double(v)) == v);
    }
  }

  TEST_CASE("label map ppm") {
    LabelMap m(1, 2);
    m.data = {0, kIgnore};
    const std::string ppm = label_map_ppm(m, kIgnore);
    const std::string header = "P6\n2 1\n255\n";
    REQUIRE(ppm.size() == header.size() + 6);
    CHECK(ppm.substr(0, header.size()) == header);
    const auto c = palette_color(0, kIgnore);
    CHECK(static_cast<std::uint8_t>(ppm[header.size()]) == c[0]);
    CHECK(ppm.substr(header.size() + 3) == std::string(3, '\0'));
    CHECK(palette_color(20, kIgnore) == palette_color(0, kIgnore));
  }

  TEST_CASE("feature grid ppm") {
    Tensor f(Shape{2, 2, 2});
    for (std::size_t i = 0; i < 8; ++i) f.data()[i] = static_cast<double>(i);
    const std::string ppm = feature_grid_ppm(f);
    // 2 channels -> 2 columns, 1 row, 1 px separator
    const std::string header = "P6\n5 2\n255\n";
    REQUIRE(ppm.size() == header.size() + 5 * 2 * 3);
    CHECK(ppm.substr(0, header.size()) == header);
    const auto px = [&](int y, int x) { return static_cast<std::uint8_t>(ppm[header.size() + (y * 5 + x) * 3]); };
    CHECK(px(0, 0) == 0);
    CHECK(px(1, 1) == 255);
    CHECK(px(0, 2) == 0);
    CHECK(px(0, 3) == 0);
    CHECK(px(1, 4) == 255);
    CHECK_THROWS_AS(feature_grid_ppm(Tensor(Shape{4})), ShapeError);
  }
}
