/*
 * Copyright 2026 The HetLoc Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// End-to-end acceptance suite. Each criterion prints one [PASS]/[FAIL] line;
// the exit code is the number of failed criteria. Heavyweight fixtures
// (datasets, trained checkpoints) are built once and shared.

#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "hetloc/cli.hpp"
#include "hetloc/placerec.hpp"
#include "hetloc/tracking.hpp"

using namespace hetloc;
namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / "hetloc_acceptance";

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

std::string fmt(const char* format, ...) {
  char buf[512];
  va_list args;
  va_start(args, format);
  std::vsnprintf(buf, sizeof(buf), format, args);
  va_end(args);
  return buf;
}

// ---------------------------------------------------------------------------
// Shared fixtures
// ---------------------------------------------------------------------------

Json pr_simulate_config() {
  Json c;
  c["seed"] = 42;
  c["world"] = {{"half_extent", 100.0},
                {"obstacles_min", 350},
                {"obstacles_max", 450}};
  c["trajectory"] = {{"length", 300}, {"step", 2.0}};  // 300 places
  c["sessions"] = {{"lidar", 2},
                   {"radar", 2},
                   {"lateral_spread", 1.5},
                   {"heading_jitter_deg", 2.0}};
  c["radar_sensor"] = {{"multipath_prob", 0.4}, {"speckle_sigma", 0.08}};
  c["odometry_noise"] = {{"trans_sigma", 0.1}, {"rot_sigma_deg", 0.5}};
  return c;
}

Json pr_train_config(const fs::path& dataset) {
  Json c;
  c["dataset"] = dataset.string();
  c["repr"] = {{"bev_cells", 128},
               {"bev_resolution", 0.75},
               {"sc_rings", 16},
               {"sc_sectors", 64},
               {"submap_window", 5}};
  c["encoder"] = {{"rings", 16},    {"sectors", 64},
                  {"c1", 8},        {"c2", 16},
                  {"spec_rows", 16}, {"spec_cols", 16},
                  {"descriptor_dim", 128}};
  c["training"] = {{"epochs", 16},         {"pairs_per_epoch", 300},
                   {"lr", 0.02},           {"momentum", 0.9},
                   {"margin", 0.5},        {"neg_pool", 4},
                   {"neg_min_distance", 15.0}, {"seed", 9}};
  return c;
}

Json pt_simulate_config() {
  Json c;
  c["seed"] = 77;
  c["world"] = {{"half_extent", 100.0},
                {"obstacles_min", 350},
                {"obstacles_max", 450}};
  c["trajectory"] = {{"length", 500}, {"step", 1.5}};  // 500-step session
  c["sessions"] = {{"lidar", 1},
                   {"radar", 2},
                   {"lateral_spread", 1.5},
                   {"heading_jitter_deg", 2.0}};
  c["radar_sensor"] = {{"multipath_prob", 0.4}, {"speckle_sigma", 0.08}};
  c["odometry_noise"] = {{"trans_sigma", 0.1}, {"rot_sigma_deg", 0.5}};
  return c;
}

Json pt_train_config(const fs::path& dataset) {
  Json c;
  c["dataset"] = dataset.string();
  c["map_session"] = "lidar_00";
  c["train_session"] = "radar_00";
  c["samples"] = 320;
  c["unet"] = {{"c1", 8}, {"c2", 16}, {"c3", 32}, {"out_channels", 1}};
  // Search grid sized to the filter's steady-state error; margin 16 keeps
  // every shifted window fully inside the rotation-valid patch area.
  c["tracking"] = {{"grid", {{"xy_range", 2.0},
                             {"xy_step", 0.5},
                             {"theta_range_deg", 6.0},
                             {"theta_step_deg", 2.0}}},
                   {"patch_margin_cells", 16},
                   {"temperature", 0.15}};
  c["training"] = {{"epochs", 5},        {"lr", 0.005}, {"momentum", 0.9},
                   {"temperature", 0.15}, {"alpha", 1.0}, {"seed", 11}};
  return c;
}

struct PrFixture {
  fs::path dataset = kWork / "pr" / "dataset";
  fs::path train_dir = kWork / "pr" / "train";
  fs::path eval_dir = kWork / "pr" / "eval";
  Json report;
  double first_loss = 0.0, last_loss = 0.0;
  double build_seconds = 0.0;
  bool built = false;
  std::string error;

  void build() {
    if (built || !error.empty()) return;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      cli::cmd_simulate(pr_simulate_config(), dataset);
      cli::cmd_train_pr(pr_train_config(dataset), train_dir);
      Json eval_cfg;
      eval_cfg["dataset"] = dataset.string();
      eval_cfg["checkpoint"] = (train_dir / "checkpoint").string();
      eval_cfg["threshold"] = 3.0;
      cli::cmd_eval_pr(eval_cfg, eval_dir);
      report = Json::parse(read_text_file(eval_dir / "report.json"));
      // First and last epoch losses from the trace.
      const std::string trace = read_text_file(train_dir / "loss_trace.csv");
      std::vector<double> losses;
      std::size_t pos = trace.find('\n');
      while (pos != std::string::npos && pos + 1 < trace.size()) {
        const std::size_t comma = trace.find(',', pos);
        const std::size_t end = trace.find('\n', pos + 1);
        if (comma == std::string::npos || end == std::string::npos) break;
        losses.push_back(std::stod(trace.substr(comma + 1, end - comma - 1)));
        pos = end;
      }
      if (!losses.empty()) {
        first_loss = losses.front();
        last_loss = losses.back();
      }
      built = true;
    } catch (const std::exception& e) {
      error = e.what();
    }
    build_seconds = seconds_since(t0);
  }

  double recall(const char* method, const char* pair) const {
    return report.at(method).at(pair).at("recall_pct").get<double>();
  }
};

struct PtFixture {
  fs::path dataset = kWork / "pt" / "dataset";
  fs::path train_dir = kWork / "pt" / "train";
  fs::path eval_dir = kWork / "pt" / "eval";
  Json session;
  double train_seconds = 0.0, eval_seconds = 0.0;
  bool built = false;
  std::string error;

  void build() {
    if (built || !error.empty()) return;
    try {
      auto t0 = std::chrono::steady_clock::now();
      cli::cmd_simulate(pt_simulate_config(), dataset);
      cli::cmd_train_pt(pt_train_config(dataset), train_dir);
      train_seconds = seconds_since(t0);
      t0 = std::chrono::steady_clock::now();
      Json eval_cfg;
      eval_cfg["dataset"] = dataset.string();
      eval_cfg["checkpoint"] = (train_dir / "checkpoint").string();
      eval_cfg["map_session"] = "lidar_00";
      eval_cfg["query_sessions"] = Json::array({"radar_01"});
      cli::cmd_eval_pt(eval_cfg, eval_dir);
      eval_seconds = seconds_since(t0);
      const Json report = Json::parse(read_text_file(eval_dir / "report.json"));
      session = report.at("sessions")[0];
      built = true;
    } catch (const std::exception& e) {
      error = e.what();
    }
  }
};

PrFixture g_pr;
PtFixture g_pt;

// ---------------------------------------------------------------------------
// Criterion 1: heterogeneous gap (baseline R2L collapses, learned recovers)
// ---------------------------------------------------------------------------

Outcome criterion_1() {
  g_pr.build();
  if (!g_pr.error.empty()) return {false, "fixture failed: " + g_pr.error};
  const double base_r2l = g_pr.recall("scan_context_baseline", "R2L");
  const double learned_r2l = g_pr.recall("learned", "R2L");
  const double gap = learned_r2l - base_r2l;
  const bool pass = base_r2l <= 20.0 && learned_r2l >= 50.0 && gap >= 30.0 &&
                    g_pr.build_seconds <= 1800.0;
  return {pass,
          fmt("baseline R2L %.1f%% (<=20), learned R2L %.1f%% (>=50), gap "
              "%.1fpp (>=30), runtime %.0fs (<=1800)",
              base_r2l, learned_r2l, gap, g_pr.build_seconds)};
}

// ---------------------------------------------------------------------------
// Criterion 2: homogeneous sanity (L2L and R2R high for both methods)
// ---------------------------------------------------------------------------

Outcome criterion_2() {
  g_pr.build();
  if (!g_pr.error.empty()) return {false, "fixture failed: " + g_pr.error};
  const double bl2l = g_pr.recall("scan_context_baseline", "L2L");
  const double br2r = g_pr.recall("scan_context_baseline", "R2R");
  const double ll2l = g_pr.recall("learned", "L2L");
  const double lr2r = g_pr.recall("learned", "R2R");
  const bool pass = bl2l >= 70 && br2r >= 70 && ll2l >= 70 && lr2r >= 70;
  return {pass, fmt("L2L baseline %.1f%% / learned %.1f%%, R2R baseline "
                    "%.1f%% / learned %.1f%% (all >=70)",
                    bl2l, ll2l, br2r, lr2r)};
}

// ---------------------------------------------------------------------------
// Criterion 3: pose tracking RMSE bounds and dead-reckoning factor
// ---------------------------------------------------------------------------

Outcome criterion_3() {
  g_pt.build();
  if (!g_pt.error.empty()) return {false, "fixture failed: " + g_pt.error};
  const double trans = g_pt.session.at("trans_rmse_m").get<double>();
  const double rot = g_pt.session.at("rot_rmse_deg").get<double>();
  const double dr =
      g_pt.session.at("dead_reckoning").at("trans_rmse_m").get<double>();
  const bool lost = g_pt.session.at("tracking_lost").get<bool>();
  const bool pass = !lost && trans <= 1.0 && rot <= 2.0 && dr >= 3.0 * trans &&
                    g_pt.eval_seconds <= 1200.0;
  return {pass,
          fmt("trans RMSE %.3f m (<=1.0), rot RMSE %.3f deg (<=2.0), dead "
              "reckoning %.2f m (>=3x), eval %.0fs (<=1200; training took "
              "%.0fs)",
              trans, rot, dr, g_pt.eval_seconds, g_pt.train_seconds)};
}

// ---------------------------------------------------------------------------
// Criterion 4: loss implementations match hand-computed oracles (100 each)
// ---------------------------------------------------------------------------

Outcome criterion_4() {
  Rng rng(404);
  double worst = 0.0;

  // Triplet loss (all-combinations hinge, Eq. 1 form).
  for (int i = 0; i < 100; ++i) {
    const int n = 1 + static_cast<int>(rng.uniform_int(12));
    std::vector<placerec::TripletSample> batch;
    double expect = 0.0;
    const double m = rng.uniform(0.0, 1.0);
    for (int k = 0; k < n; ++k) {
      const double pos = rng.uniform(0.0, 2.0), neg = rng.uniform(0.0, 2.0);
      batch.push_back({pos, neg});
      const double hinge = m + pos - neg;
      expect += hinge > 0.0 ? hinge : 0.0;
    }
    expect /= n;
    worst = std::max(worst, std::abs(placerec::triplet_loss(batch, m) - expect));
  }

  // Cross entropy over per-axis one-hot targets (Eq. 2 form).
  for (int i = 0; i < 100; ++i) {
    tracking::OffsetDistribution dist;
    auto random_axis = [&](int n) {
      std::vector<double> p(n);
      double z = 0.0;
      for (auto& v : p) {
        v = rng.uniform(0.0, 1.0);
        z += v;
      }
      for (auto& v : p) v /= z;
      // Occasionally zero the target bin to exercise the floor.
      if (rng.uniform() < 0.2) p[0] = 0.0;
      return p;
    };
    dist.p_x = random_axis(13);
    dist.p_y = random_axis(13);
    dist.p_theta = random_axis(11);
    tracking::GroundTruthOffset gt;
    gt.ix = static_cast<int>(rng.uniform_int(13));
    gt.iy = static_cast<int>(rng.uniform_int(13));
    gt.itheta = static_cast<int>(rng.uniform_int(11));
    const double expect = -std::log(std::max(dist.p_x[gt.ix], 1e-12)) -
                          std::log(std::max(dist.p_y[gt.iy], 1e-12)) -
                          std::log(std::max(dist.p_theta[gt.itheta], 1e-12));
    const double rel = std::abs(tracking::loss_L1(dist, gt) - expect) /
                       std::max(1.0, std::abs(expect));
    worst = std::max(worst, rel);
  }

  // Weighted squared errors (Eq. 3 form).
  for (int i = 0; i < 100; ++i) {
    const PoseOffset est = PoseOffset::make(
        rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-0.3, 0.3));
    const PoseOffset gt = PoseOffset::make(
        rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-0.3, 0.3));
    const tracking::LossWeights w{rng.uniform(0.1, 3.0)};
    const double dt = wrap_angle(est.dtheta - gt.dtheta);
    const double expect = (est.dx - gt.dx) * (est.dx - gt.dx) +
                          (est.dy - gt.dy) * (est.dy - gt.dy) +
                          w.alpha * dt * dt;
    worst = std::max(worst, std::abs(tracking::loss_L2(est, gt, w) - expect));
  }

  return {worst < 1e-6, fmt("max |impl - oracle| = %.2e (<1e-6), 300 instances",
                            worst)};
}

// ---------------------------------------------------------------------------
// Criterion 5: gradient suite (ops < 1e-4, end-to-end losses < 1e-3)
// ---------------------------------------------------------------------------

nn::Tensor random_tensor(nn::Shape shape, Rng& rng, double lo = -1.0,
                         double hi = 1.0) {
  std::vector<float> data(nn::shape_numel(shape));
  for (auto& v : data) v = static_cast<float>(rng.uniform(lo, hi));
  return nn::Tensor::from_data(std::move(shape), std::move(data), true);
}

nn::Tensor probe(const nn::Tensor& out, Rng& rng, double scale = 1.0) {
  std::vector<float> w(out.numel());
  const double s = scale / std::sqrt(static_cast<double>(out.numel()));
  for (auto& v : w) v = static_cast<float>(rng.uniform(-s, s));
  const int n = static_cast<int>(out.numel());
  return nn::dot(nn::reshape(out, {n}),
                 nn::Tensor::from_data({n}, std::move(w)));
}

double gradcheck(const std::vector<nn::Tensor>& params,
                 const std::function<nn::Tensor()>& loss_fn, int max_entries,
                 Rng& pick, double h = 1e-3) {
  nn::Tensor loss = loss_fn();
  nn::backward(loss, params);
  std::vector<std::vector<float>> analytic;
  for (const auto& p : params) analytic.push_back(p.grad());
  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const std::int64_t n = params[pi].numel();
    for (int k = 0; k < std::min<std::int64_t>(max_entries, n); ++k) {
      const std::size_t i =
          n <= max_entries ? k : pick.uniform_int(n);
      auto& data = params[pi].node()->data;
      const float saved = data[i];
      double fp, fm;
      {
        nn::NoGradGuard no_grad;
        data[i] = static_cast<float>(saved + h);
        fp = loss_fn().item();
        data[i] = static_cast<float>(saved - h);
        fm = loss_fn().item();
        data[i] = saved;
      }
      const double fd = (fp - fm) / (2 * h);
      const double a = analytic[pi][i];
      worst = std::max(
          worst, std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)}));
    }
  }
  return worst;
}

Outcome criterion_5() {
  double worst_op = 0.0;
  // Per-op checks, 20 random instances each.
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    Rng pick(seed + 500);

    nn::Tensor a = random_tensor({10}, rng);
    nn::Tensor b = random_tensor({10}, rng);
    worst_op = std::max(worst_op, gradcheck({a, b}, [&] {
      Rng prng(seed + 1);
      return probe(nn::add(nn::mul(a, b), nn::scale(nn::sub(a, b), 0.4)), prng);
    }, 32, pick));

    nn::Tensor r = random_tensor({24}, rng);
    for (auto& v : r.node()->data)
      if (std::abs(v) < 0.05f) v = v < 0 ? -0.05f : 0.05f;
    worst_op = std::max(worst_op, gradcheck({r}, [&] {
      Rng prng(seed + 2);
      return probe(nn::relu(r), prng);
    }, 24, pick));

    worst_op = std::max(worst_op, gradcheck({a, b}, [&] {
      return nn::add(nn::mean(nn::mul(a, b)), nn::scale(nn::sum(a), 0.05));
    }, 20, pick));
    worst_op = std::max(worst_op, gradcheck({a}, [&] {
      Rng prng(seed + 3);
      return probe(nn::softmax(a), prng);
    }, 10, pick));
    worst_op = std::max(worst_op, gradcheck({a}, [&] {
      Rng prng(seed + 4);
      return probe(nn::l2_normalize(a), prng);
    }, 10, pick));
    worst_op = std::max(worst_op, gradcheck({a, b}, [&] {
      return nn::scale(nn::euclidean_distance(a, b), 0.25);
    }, 20, pick));

    nn::Tensor p = random_tensor({9}, rng, 0.1, 1.0);
    const int idx = static_cast<int>(rng.uniform_int(9));
    worst_op = std::max(worst_op, gradcheck({p}, [&] {
      return nn::cross_entropy_onehot(p, idx);
    }, 9, pick));

    nn::Tensor x = random_tensor({8}, rng);
    nn::Tensor w = random_tensor({4, 8}, rng, -0.5, 0.5);
    nn::Tensor bias = random_tensor({4}, rng);
    worst_op = std::max(worst_op, gradcheck({x, w, bias}, [&] {
      Rng prng(seed + 5);
      return probe(nn::linear(x, w, bias), prng);
    }, 12, pick));

    nn::Tensor img = random_tensor({2, 5, 6}, rng);
    nn::Tensor kern = random_tensor({2, 2, 3, 3}, rng, -0.4, 0.4);
    nn::Tensor kb = random_tensor({2}, rng);
    for (nn::Pad pad : {nn::Pad::kZero, nn::Pad::kCircularCols})
      worst_op = std::max(worst_op, gradcheck({img, kern, kb}, [&, pad] {
        Rng prng(seed + 6);
        return probe(nn::conv2d(img, kern, kb, pad), prng);
      }, 20, pick));

    nn::Tensor pool_in = nn::Tensor::zeros({2, 4, 6}, true);
    std::vector<int> perm(pool_in.numel());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int>(i);
    for (std::size_t i = perm.size(); i > 1; --i)
      std::swap(perm[i - 1], perm[rng.uniform_int(i)]);
    for (std::size_t i = 0; i < perm.size(); ++i)
      pool_in.node()->data[i] = -1.0f + 0.05f * perm[i];
    worst_op = std::max(worst_op, gradcheck({pool_in}, [&] {
      Rng prng(seed + 7);
      return probe(nn::maxpool2x2(pool_in), prng);
    }, 24, pick));
    worst_op = std::max(worst_op, gradcheck({img}, [&] {
      Rng prng(seed + 8);
      return probe(nn::upsample2x(img), prng);
    }, 20, pick));
    nn::Tensor img2 = random_tensor({3, 5, 6}, rng);
    worst_op = std::max(worst_op, gradcheck({img, img2}, [&] {
      Rng prng(seed + 9);
      return probe(nn::concat_channels(img, img2), prng);
    }, 20, pick));

    nn::Tensor spec_in = random_tensor({2, 6, 8}, rng);
    worst_op = std::max(worst_op, gradcheck({spec_in}, [&] {
      Rng prng(seed + 10);
      return probe(nn::dft2_magnitude(spec_in), prng, 0.25);
    }, 24, pick));
    worst_op = std::max(worst_op, gradcheck({spec_in}, [&] {
      Rng prng(seed + 11);
      return probe(nn::dft2_magnitude(spec_in, 4, 4), prng, 0.25);
    }, 24, pick));
  }
  if (worst_op >= 1e-4)
    return {false, fmt("op gradients: max rel err %.2e (>=1e-4)", worst_op)};

  // End-to-end (a): all-combinations triplet hinge through the descriptor
  // encoder, checked against an independent double-precision replica of the
  // whole path. The |DFT| surface is conical near zero bins, which defeats
  // float32 finite differences; the double replica allows a 1e-6 step that
  // stays off those cones (the margin keeps the hinge itself active).
  double worst_triplet = 0.0;
  const double h_triplet = 1e-6;
  for (int seed = 0; seed < 3; ++seed) {
    Rng rng(800 + seed);
    Rng pick(900 + seed);
    placerec::EncoderConfig cfg;
    cfg.rings = 8;
    cfg.sectors = 16;
    cfg.c1 = 3;
    cfg.c2 = 4;
    cfg.spec_rows = 6;
    cfg.spec_cols = 6;
    cfg.descriptor_dim = 12;
    auto weights = placerec::EncoderWeights::init(cfg, rng);
    std::vector<nn::Tensor> inputs{random_tensor({1, 8, 16}, rng, 0.0, 1.0),
                                   random_tensor({1, 8, 16}, rng, 0.0, 1.0),
                                   random_tensor({1, 8, 16}, rng, 0.0, 1.0)};

    // Double-precision replica of describe_tensor.
    const int H = cfg.rings, W = cfg.sectors;
    auto dconv = [&](const std::vector<double>& x, int ic_count,
                     const std::vector<float>& w, const std::vector<float>& b,
                     int oc_count) {
      std::vector<double> y(static_cast<std::size_t>(oc_count) * H * W, 0.0);
      for (int oc = 0; oc < oc_count; ++oc)
        for (int r = 0; r < H; ++r)
          for (int c = 0; c < W; ++c) {
            double acc = b[oc];
            for (int ic = 0; ic < ic_count; ++ic)
              for (int kh = 0; kh < 3; ++kh) {
                const int sr = r + kh - 1;
                if (sr < 0 || sr >= H) continue;
                for (int kw = 0; kw < 3; ++kw) {
                  const int sc = (c + kw - 1 + W) % W;  // circular columns
                  acc += static_cast<double>(
                             w[((static_cast<std::size_t>(oc) * ic_count + ic) *
                                    3 + kh) * 3 + kw]) *
                         x[(static_cast<std::size_t>(ic) * H + sr) * W + sc];
                }
              }
            y[(static_cast<std::size_t>(oc) * H + r) * W + c] =
                acc > 0.0 ? acc : 0.0;  // fused relu
          }
      return y;
    };
    auto ddescribe = [&](const placerec::EncoderWeights& ew,
                         const std::vector<float>& input) {
      std::vector<double> x(input.begin(), input.end());
      const auto h1 = dconv(x, 1, ew.conv1_w.data(), ew.conv1_b.data(), cfg.c1);
      const auto h2 =
          dconv(h1, cfg.c1, ew.conv2_w.data(), ew.conv2_b.data(), cfg.c2);
      // Centered band |DFT2| per channel, frequencies u = k - keep/2.
      std::vector<double> flat;
      flat.reserve(static_cast<std::size_t>(cfg.c2) * cfg.spec_rows *
                   cfg.spec_cols);
      for (int ch = 0; ch < cfg.c2; ++ch)
        for (int ku = 0; ku < cfg.spec_rows; ++ku)
          for (int kv = 0; kv < cfg.spec_cols; ++kv) {
            const int u = ku - cfg.spec_rows / 2;
            const int v = kv - cfg.spec_cols / 2;
            double re = 0.0, im = 0.0;
            for (int m = 0; m < H; ++m)
              for (int n = 0; n < W; ++n) {
                const double phase =
                    kTwoPi * (static_cast<double>(u) * m / H +
                              static_cast<double>(v) * n / W);
                const double val =
                    h2[(static_cast<std::size_t>(ch) * H + m) * W + n];
                re += val * std::cos(phase);
                im -= val * std::sin(phase);
              }
            flat.push_back(std::sqrt(re * re + im * im));
          }
      const int flat_n = static_cast<int>(flat.size());
      std::vector<double> desc(cfg.descriptor_dim);
      double norm_sq = 0.0;
      for (int d = 0; d < cfg.descriptor_dim; ++d) {
        double acc = ew.proj_b.data()[d];
        for (int n = 0; n < flat_n; ++n)
          acc += static_cast<double>(
                     ew.proj_w.data()[static_cast<std::size_t>(d) * flat_n + n]) *
                 flat[n];
        desc[d] = acc;
        norm_sq += acc * acc;
      }
      const double norm = std::max(std::sqrt(norm_sq), 1e-12);
      for (auto& v : desc) v /= norm;
      return desc;
    };
    auto ddist = [](const std::vector<double>& a, const std::vector<double>& b) {
      double sq = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i)
        sq += (a[i] - b[i]) * (a[i] - b[i]);
      return std::sqrt(sq);
    };
    auto dloss = [&](double margin) {
      const auto da = ddescribe(weights, inputs[0].data());
      const auto dp = ddescribe(weights, inputs[1].data());
      const auto dn = ddescribe(weights, inputs[2].data());
      const double arg = margin + ddist(da, dp) - ddist(da, dn);
      return arg > 0.0 ? arg : 0.0;
    };
    // Pick the margin so the hinge argument sits at +0.6, clearly active.
    double margin;
    {
      const auto da = ddescribe(weights, inputs[0].data());
      const auto dp = ddescribe(weights, inputs[1].data());
      const auto dn = ddescribe(weights, inputs[2].data());
      margin = ddist(da, dn) - ddist(da, dp) + 0.6;
    }

    // Library analytic gradients.
    auto params = weights.params();
    nn::Tensor loss = [&] {
      nn::Tensor da = placerec::describe_tensor(weights, inputs[0]);
      nn::Tensor dp = placerec::describe_tensor(weights, inputs[1]);
      nn::Tensor dn = placerec::describe_tensor(weights, inputs[2]);
      return nn::relu(nn::add_scalar(
          nn::sub(nn::euclidean_distance(da, dp),
                  nn::euclidean_distance(da, dn)),
          margin));
    }();
    nn::backward(loss, params);

    for (auto& p : params) {
      const std::int64_t n = p.numel();
      for (int k = 0; k < std::min<std::int64_t>(8, n); ++k) {
        const std::size_t i = n <= 8 ? k : pick.uniform_int(n);
        auto& data = p.node()->data;
        const float saved = data[i];
        // Use the realized float32 steps, not the nominal h.
        data[i] = static_cast<float>(static_cast<double>(saved) + h_triplet);
        const double realized_hi = static_cast<double>(data[i]);
        const double fp = dloss(margin);
        data[i] = static_cast<float>(static_cast<double>(saved) - h_triplet);
        const double realized_lo = static_cast<double>(data[i]);
        const double fm = dloss(margin);
        data[i] = saved;
        const double fd = (fp - fm) / (realized_hi - realized_lo);
        const double a = p.grad()[i];
        worst_triplet = std::max(
            worst_triplet,
            std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)}));
      }
    }
  }

  // End-to-end (b): cross entropy + squared errors through the similarity
  // volume and measurement head.
  double worst_meas = 0.0;
  for (int seed = 0; seed < 3; ++seed) {
    Rng rng(820 + seed);
    Rng pick(920 + seed);
    tracking::OffsetGrid grid;
    grid.dx = {-0.5, 0.0, 0.5};
    grid.dy = {-0.5, 0.0, 0.5};
    grid.dtheta = {-0.05, 0.0, 0.05};
    const int E = 2, win = 6, P = 10;
    nn::Tensor radar = random_tensor({E, win, win}, rng);
    std::vector<tracking::CandidateFeatures> cands(3);
    std::vector<nn::Tensor> params{radar};
    for (auto& c : cands) {
      c.features = random_tensor({E, P, P}, rng);
      c.valid.assign(P * P, 1.0f);
      params.push_back(c.features);
    }
    tracking::GroundTruthOffset gt;
    gt.ix = 1;
    gt.iy = 2;
    gt.itheta = 0;
    gt.continuous = PoseOffset::make(0.1, 0.4, -0.03);
    worst_meas = std::max(worst_meas, gradcheck(params, [&] {
      nn::Tensor scores = tracking::similarity_volume(radar, cands, grid, 0.5);
      tracking::MeasurementTensors m =
          tracking::offset_distribution_t(scores, grid, 0.5);
      nn::Tensor l1 =
          nn::add(nn::add(nn::cross_entropy_onehot(m.p_x, gt.ix),
                          nn::cross_entropy_onehot(m.p_y, gt.iy)),
                  nn::cross_entropy_onehot(m.p_theta, gt.itheta));
      auto sq = [](const nn::Tensor& e, double t) {
        nn::Tensor d = nn::add_scalar(e, -t);
        return nn::mul(d, d);
      };
      return nn::add(l1, nn::add(nn::add(sq(m.ex, gt.continuous.dx),
                                         sq(m.ey, gt.continuous.dy)),
                                 sq(m.etheta, gt.continuous.dtheta)));
    }, 15, pick));
  }

  const bool pass =
      worst_op < 1e-4 && worst_triplet < 1e-3 && worst_meas < 1e-3;
  return {pass, fmt("op max rel err %.2e (<1e-4), end-to-end triplet %.2e / "
                    "measurement %.2e (<1e-3)",
                    worst_op, worst_triplet, worst_meas)};
}

// ---------------------------------------------------------------------------
// Criterion 6: rotation invariance and orientation recovery
// ---------------------------------------------------------------------------

ScanContextMatrix random_sc(Rng& rng, int rings, int sectors, double density) {
  ScanContextMatrix sc;
  sc.rings = rings;
  sc.sectors = sectors;
  sc.max_radius = 32.0;
  sc.values.assign(static_cast<std::size_t>(rings) * sectors, 0.0f);
  for (auto& v : sc.values)
    if (rng.uniform() < density) v = static_cast<float>(rng.uniform());
  return sc;
}

Outcome criterion_6() {
  Rng rng(606);
  placerec::EncoderConfig cfg;
  cfg.rings = 32;
  cfg.sectors = 64;
  cfg.c1 = 4;
  cfg.c2 = 8;
  cfg.spec_rows = 12;
  cfg.spec_cols = 12;
  cfg.descriptor_dim = 64;
  const auto weights = placerec::EncoderWeights::init(cfg, rng);

  double worst_drift = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const auto sc = random_sc(rng, 32, 64, 0.25);
    const auto base = placerec::describe(sc, weights);
    for (int k : {1, 7, 19, 32, 50}) {
      const auto shifted = placerec::describe(shift_columns(sc, k), weights);
      worst_drift =
          std::max(worst_drift, placerec::descriptor_distance(base, shifted));
    }
  }

  // Noiseless orientation recovery must be exact for every shift.
  int exact = 0;
  const auto sc0 = random_sc(rng, 32, 64, 0.3);
  const auto spec0 = placerec::encode_spectrum(weights, sc0);
  for (int k = 0; k < 64; ++k) {
    const auto speck =
        placerec::encode_spectrum(weights, shift_columns(sc0, k));
    const double est = placerec::estimate_relative_orientation(spec0, speck);
    if (std::abs(wrap_angle(est - k * kTwoPi / 64)) < 1e-9) ++exact;
  }

  int noisy_hits = 0;
  for (int trial = 0; trial < 200; ++trial) {
    auto sc = random_sc(rng, 32, 64, 0.3);
    const int k = static_cast<int>(rng.uniform_int(64));
    auto shifted = shift_columns(sc, k);
    for (auto& v : sc.values)
      v = std::clamp(v + static_cast<float>(rng.normal(0.05)), 0.0f, 1.0f);
    for (auto& v : shifted.values)
      v = std::clamp(v + static_cast<float>(rng.normal(0.05)), 0.0f, 1.0f);
    const double est = placerec::estimate_relative_orientation(
        placerec::encode_spectrum(weights, sc),
        placerec::encode_spectrum(weights, shifted));
    if (std::abs(wrap_angle(est - k * kTwoPi / 64)) < 1e-9) ++noisy_hits;
  }

  const bool pass = worst_drift < 1e-4 && exact == 64 && noisy_hits >= 190;
  return {pass, fmt("descriptor drift %.2e (<1e-4), noiseless recovery %d/64, "
                    "noisy recovery %d/200 (>=190)",
                    worst_drift, exact, noisy_hits)};
}

// ---------------------------------------------------------------------------
// Criterion 7: filter properties
// ---------------------------------------------------------------------------

Outcome criterion_7() {
  using namespace tracking;
  // Noiseless limit: ground-truth measurements, quiet odometry.
  const World world = generate_world(700, WorldParams{});
  const auto traj = generate_trajectory(world, 701, 60, 1.5);
  Rng rng(702);
  SensorParams radar = SensorParams::default_radar();
  const Session quiet =
      make_session(world, traj, radar, OdomNoise{0, 0}, rng, "r0");
  SensorParams lidar = SensorParams::default_lidar();
  const Session map_session =
      make_session(world, traj, lidar, OdomNoise{0, 0}, rng, "l0");
  const BevImage map =
      build_global_map(map_session, GridSpec::centered(512, 512, 0.5));
  nn::UNet3Config ucfg;
  ucfg.c1 = 2;
  ucfg.c2 = 2;
  ucfg.c3 = 2;
  Rng wrng(703);
  const auto weights = nn::UNet3Weights::init(ucfg, wrng);

  TrackingConfig cfg;
  cfg.bev_cells = 32;
  cfg.patch_margin_cells = 8;
  cfg.grid = OffsetGrid::uniform(2.0, 0.5, 8.0, 4.0);
  cfg.mode = MeasurementMode::kGroundTruth;
  const TrackResult gt_run = track(quiet, map, weights, cfg);
  double worst_noiseless = 0.0;
  for (std::size_t i = 0; i < traj.size(); ++i)
    worst_noiseless = std::max(
        {worst_noiseless, euclidean_distance(gt_run.trajectory[i], traj[i]),
         std::abs(wrap_angle(gt_run.trajectory[i].theta - traj[i].theta))});

  // Uninformative limit: disabled measurements equal dead reckoning exactly.
  Rng nrng(704);
  const Session noisy = make_session(world, traj, radar,
                                     OdomNoise{0.1, deg2rad(0.5)}, nrng, "r1");
  TrackingConfig dr_cfg = cfg;
  dr_cfg.mode = MeasurementMode::kDisabled;
  const TrackResult dr = track(noisy, map, weights, dr_cfg);
  bool dr_exact = true;
  Pose2D pose = noisy.poses[0];
  for (std::size_t t = 1; t < noisy.poses.size(); ++t) {
    pose = compose(pose, offset_to_pose(noisy.odometry[t - 1]));
    dr_exact = dr_exact && dr.trajectory[t].x == pose.x &&
               dr.trajectory[t].y == pose.y &&
               dr.trajectory[t].theta == pose.theta;
  }

  // 1000 predict/update steps keep the covariance symmetric PD.
  Rng krng(705);
  TrackerState state;
  state.covariance = Eigen::Matrix3d::Identity() * 0.04;
  double min_eig = 1e300;
  double worst_asym = 0.0;
  for (int step = 0; step < 1000; ++step) {
    const PoseOffset odom = PoseOffset::make(
        krng.uniform(-0.5, 0.5), krng.uniform(-0.2, 0.2),
        krng.uniform(-0.1, 0.1));
    Eigen::Matrix3d q = Eigen::Matrix3d::Zero();
    q(0, 0) = q(1, 1) = 0.01;
    q(2, 2) = 0.003;
    state = predict(state, odom, q);
    const PoseOffset z = PoseOffset::make(
        krng.uniform(-0.3, 0.3), krng.uniform(-0.3, 0.3),
        krng.uniform(-0.05, 0.05));
    Eigen::Matrix3d r = Eigen::Matrix3d::Zero();
    r(0, 0) = r(1, 1) = krng.uniform(0.05, 0.5);
    r(2, 2) = krng.uniform(0.001, 0.1);
    state = measurement_update(state, z, r);
    worst_asym = std::max(
        worst_asym,
        (state.covariance - state.covariance.transpose()).norm());
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(state.covariance);
    min_eig = std::min(min_eig, eig.eigenvalues().minCoeff());
  }

  const bool pass = worst_noiseless < 1e-6 && dr_exact && min_eig > 0.0 &&
                    worst_asym < 1e-9;
  return {pass, fmt("noiseless err %.2e (<1e-6), dead-reckoning exact %s, "
                    "min covariance eigenvalue %.2e (>0) over 1000 steps",
                    worst_noiseless, dr_exact ? "yes" : "NO", min_eig)};
}

// ---------------------------------------------------------------------------
// Criterion 8: brute-force equivalences
// ---------------------------------------------------------------------------

Outcome criterion_8() {
  Rng rng(808);

  // Retrieval == linear scan.
  placerec::PlaceIndex index;
  const int dim = 16;
  for (int i = 0; i < 80; ++i) {
    placerec::Descriptor d;
    d.values.resize(dim);
    for (auto& v : d.values) v = static_cast<float>(rng.uniform(-1, 1));
    d.session_id = "s" + std::to_string(i % 3);
    d.place_id = i;
    index.add(std::move(d), Pose2D::make(i, 0, 0));
  }
  int query_mismatches = 0;
  for (int t = 0; t < 100; ++t) {
    placerec::Descriptor q;
    q.values.resize(dim);
    for (auto& v : q.values) v = static_cast<float>(rng.uniform(-1, 1));
    q.session_id = "s" + std::to_string(t % 4);
    const auto got = placerec::query(index, q, 1);
    int best = -1;
    double best_dist = 1e300;
    for (std::size_t i = 0; i < index.entries.size(); ++i) {
      if (index.entries[i].descriptor.session_id == q.session_id) continue;
      double sq = 0;
      for (int k = 0; k < dim; ++k) {
        const double d =
            static_cast<double>(index.entries[i].descriptor.values[k]) -
            q.values[k];
        sq += d * d;
      }
      if (std::sqrt(sq) < best_dist) {
        best_dist = std::sqrt(sq);
        best = static_cast<int>(i);
      }
    }
    if (got[0].entry_index != best ||
        std::abs(got[0].distance - best_dist) > 1e-12)
      ++query_mismatches;
  }

  // Baseline distance == exhaustive shift search.
  double worst_sc = 0.0;
  int shift_mismatches = 0;
  for (int trial = 0; trial < 25; ++trial) {
    const auto a = random_sc(rng, 12, 24, 0.4);
    const auto b = random_sc(rng, 12, 24, 0.4);
    const auto got = placerec::sc_baseline_distance(a, b);
    double best = 1e9;
    int best_shift = -1;
    for (int shift = 0; shift < 24; ++shift) {
      double acc = 0;
      int cols = 0;
      for (int s = 0; s < 24; ++s) {
        double na = 0, nb = 0, dot = 0;
        for (int r = 0; r < 12; ++r) {
          const double va = a.at(r, s), vb = b.at(r, (s + shift) % 24);
          na += va * va;
          nb += vb * vb;
          dot += va * vb;
        }
        if (na == 0 && nb == 0) continue;
        ++cols;
        acc += (na == 0 || nb == 0) ? 1.0 : 1.0 - dot / std::sqrt(na * nb);
      }
      const double d = cols ? acc / cols : 1.0;
      if (d < best) {
        best = d;
        best_shift = shift;
      }
    }
    worst_sc = std::max(worst_sc, std::abs(got.distance - best));
    if (got.shift != best_shift) ++shift_mismatches;
  }

  // Similarity volume == naive triple loop.
  tracking::OffsetGrid grid;
  grid.dx = {-1.0, -0.5, 0.0, 0.5, 1.0};
  grid.dy = {-0.5, 0.0, 0.5};
  grid.dtheta = {-0.1, 0.0, 0.1};
  const int E = 2, win = 8, P = 14;
  nn::Tensor radar = random_tensor({E, win, win}, rng);
  std::vector<tracking::CandidateFeatures> cands(3);
  for (auto& c : cands) {
    c.features = random_tensor({E, P, P}, rng);
    c.valid.assign(P * P, 1.0f);
    for (int n = 0; n < 20; ++n) c.valid[rng.uniform_int(P * P)] = 0.0f;
  }
  const nn::Tensor scores =
      tracking::similarity_volume(radar, cands, grid, 0.5);
  const int margin = (P - win) / 2;
  double worst_vol = 0.0;
  for (int k = 0; k < 3; ++k)
    for (int j = 0; j < 3; ++j)
      for (int i = 0; i < 5; ++i) {
        const int sx = static_cast<int>(std::lround(grid.dx[i] / 0.5));
        const int sy = static_cast<int>(std::lround(grid.dy[j] / 0.5));
        double ss = 0;
        int n = 0;
        for (int r = 0; r < win; ++r)
          for (int c = 0; c < win; ++c) {
            const int pr = r + margin + sy, pc = c + margin + sx;
            if (cands[k].valid[pr * P + pc] < 0.5f) continue;
            ++n;
            for (int e = 0; e < E; ++e) {
              const double d =
                  static_cast<double>(radar.data()[(e * win + r) * win + c]) -
                  cands[k].features.data()[(e * P + pr) * P + pc];
              ss += d * d;
            }
          }
        const double expect = n ? -std::sqrt(ss / n) : -1e6;
        const double got =
            scores.data()[(static_cast<std::size_t>(k) * 3 + j) * 5 + i];
        worst_vol = std::max(worst_vol, std::abs(got - expect));
      }

  const bool pass = query_mismatches == 0 && worst_sc < 1e-12 &&
                    shift_mismatches == 0 && worst_vol < 1e-5;
  return {pass, fmt("query mismatches %d/100, baseline |d - oracle| %.1e, "
                    "shift mismatches %d/25, similarity |s - oracle| %.1e "
                    "(<1e-5)",
                    query_mismatches, worst_sc, shift_mismatches, worst_vol)};
}

// ---------------------------------------------------------------------------
// Criterion 9: CLI determinism (byte-identical metric files)
// ---------------------------------------------------------------------------

Json det_sim_config() {
  Json c;
  c["seed"] = 13;
  c["world"] = {{"half_extent", 60.0},
                {"obstacles_min", 40},
                {"obstacles_max", 60}};
  c["trajectory"] = {{"length", 24}, {"step", 2.0}};
  c["sessions"] = {{"lidar", 2}, {"radar", 2}, {"lateral_spread", 1.0}};
  c["lidar_sensor"] = {{"beams", 180}};
  c["odometry_noise"] = {{"trans_sigma", 0.05}, {"rot_sigma_deg", 0.3}};
  return c;
}

Outcome criterion_9() {
  const fs::path root = kWork / "determinism";
  fs::remove_all(root);
  std::vector<std::string> mismatches;
  auto same_files = [&](const fs::path& a, const fs::path& b,
                        const std::vector<std::string>& names) {
    for (const auto& name : names)
      if (read_text_file(a / name) != read_text_file(b / name))
        mismatches.push_back(name);
  };

  // simulate
  cli::cmd_simulate(det_sim_config(), root / "sim_a");
  cli::cmd_simulate(det_sim_config(), root / "sim_b");
  std::vector<std::string> sim_files{"manifest.json"};
  for (const auto& e : fs::directory_iterator(root / "sim_a"))
    if (e.path().extension() == ".f32")
      sim_files.push_back(e.path().filename().string());
  same_files(root / "sim_a", root / "sim_b", sim_files);

  // train-pr (tiny)
  Json tp;
  tp["dataset"] = (root / "sim_a").string();
  tp["repr"] = {{"bev_cells", 64}, {"bev_resolution", 0.75},
                {"sc_rings", 8},   {"sc_sectors", 16},
                {"submap_window", 3}};
  tp["encoder"] = {{"rings", 8},      {"sectors", 16}, {"c1", 2},
                   {"c2", 3},         {"spec_rows", 6}, {"spec_cols", 6},
                   {"descriptor_dim", 16}};
  tp["training"] = {{"epochs", 2}, {"pairs_per_epoch", 6}, {"neg_pool", 2},
                    {"min_places", 8}, {"neg_min_distance", 8.0}, {"seed", 3}};
  cli::cmd_train_pr(tp, root / "pr_a");
  cli::cmd_train_pr(tp, root / "pr_b");
  same_files(root / "pr_a", root / "pr_b", {"loss_trace.csv"});
  std::vector<std::string> ckpt_files;
  for (const auto& e : fs::directory_iterator(root / "pr_a" / "checkpoint"))
    ckpt_files.push_back(e.path().filename().string());
  same_files(root / "pr_a" / "checkpoint", root / "pr_b" / "checkpoint",
             ckpt_files);

  // eval-pr
  Json ep;
  ep["dataset"] = (root / "sim_a").string();
  ep["checkpoint"] = (root / "pr_a" / "checkpoint").string();
  ep["threshold"] = 3.0;
  cli::cmd_eval_pr(ep, root / "epr_a");
  cli::cmd_eval_pr(ep, root / "epr_b");
  same_files(root / "epr_a", root / "epr_b", {"report.json", "per_query.csv"});

  // train-pt + eval-pt (tiny, network measurements)
  Json tpt;
  tpt["dataset"] = (root / "sim_a").string();
  tpt["map_session"] = "lidar_00";
  tpt["train_session"] = "radar_00";
  tpt["samples"] = 3;
  tpt["unet"] = {{"c1", 2}, {"c2", 2}, {"c3", 2}, {"out_channels", 1}};
  tpt["tracking"] = {{"bev_cells", 32},
                     {"patch_margin_cells", 8},
                     {"grid", {{"xy_range", 1.0}, {"xy_step", 0.5},
                               {"theta_range_deg", 4.0},
                               {"theta_step_deg", 4.0}}}};
  tpt["training"] = {{"epochs", 1}, {"lr", 0.005}, {"seed", 6}};
  cli::cmd_train_pt(tpt, root / "pt_a");
  cli::cmd_train_pt(tpt, root / "pt_b");
  same_files(root / "pt_a", root / "pt_b", {"loss_trace.csv"});

  Json ept;
  ept["dataset"] = (root / "sim_a").string();
  ept["checkpoint"] = (root / "pt_a" / "checkpoint").string();
  ept["map_session"] = "lidar_00";
  ept["query_sessions"] = Json::array({"radar_01"});
  cli::cmd_eval_pt(ept, root / "ept_a");
  cli::cmd_eval_pt(ept, root / "ept_b");
  same_files(root / "ept_a", root / "ept_b",
             {"report.json", "trajectory_radar_01.csv"});

  if (!mismatches.empty()) {
    std::string detail = "files differ across reruns:";
    for (const auto& m : mismatches) detail += " " + m;
    return {false, detail};
  }
  return {true, "simulate/train-pr/eval-pr/train-pt/eval-pt reruns are "
                "byte-identical"};
}

}  // namespace

// Optional arguments select a subset of criteria, e.g. `acceptance 4 5 8`.
int main(int argc, char** argv) {
  fs::create_directories(kWork);
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));
  struct Entry {
    int id;
    const char* name;
    std::function<Outcome()> fn;
  };
  const std::vector<Entry> criteria{
      {1, "heterogeneous gap (baseline R2L collapses, learned recovers)",
       criterion_1},
      {2, "homogeneous sanity (L2L and R2R high for both methods)",
       criterion_2},
      {3, "pose tracking RMSE bounds", criterion_3},
      {4, "loss oracles (triplet, cross entropy, squared errors)",
       criterion_4},
      {5, "gradient suite (ops and end-to-end losses)", criterion_5},
      {6, "rotation invariance and orientation recovery", criterion_6},
      {7, "filter properties (limits and covariance health)", criterion_7},
      {8, "brute-force equivalences", criterion_8},
      {9, "CLI determinism", criterion_9},
  };

  int failures = 0;
  int ran = 0;
  for (const auto& entry : criteria) {
    if (!selected.empty() &&
        std::find(selected.begin(), selected.end(), entry.id) == selected.end())
      continue;
    ++ran;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
      outcome = entry.fn();
    } catch (const std::exception& e) {
      outcome = {false, std::string("exception: ") + e.what()};
    }
    if (!outcome.pass) ++failures;
    std::printf("[%s] criterion %d: %s — %s (%.1fs)\n",
                outcome.pass ? "PASS" : "FAIL", entry.id, entry.name,
                outcome.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  std::printf("%d/%d criteria passed\n", ran - failures, ran);
  return failures;
}
