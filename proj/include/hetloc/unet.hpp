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

#pragma once

#include "hetloc/nn.hpp"

namespace hetloc::nn {

// Three-level U-Net: three conv+pool encoder stages, a bottom conv, and
// three upsample+skip+conv decoder stages. Fully convolutional; output
// spatial size equals input size for sides divisible by 8.
struct UNet3Config {
  int in_channels = 1;
  int c1 = 8;
  int c2 = 16;
  int c3 = 32;
  int out_channels = 1;

  nlohmann::ordered_json to_json() const {
    return {{"in_channels", in_channels},
            {"c1", c1},
            {"c2", c2},
            {"c3", c3},
            {"out_channels", out_channels}};
  }

  static UNet3Config from_json(const nlohmann::ordered_json& j) {
    UNet3Config c;
    c.in_channels = j.value("in_channels", 1);
    c.c1 = j.value("c1", 8);
    c.c2 = j.value("c2", 16);
    c.c3 = j.value("c3", 32);
    c.out_channels = j.value("out_channels", 1);
    return c;
  }
};

struct UNet3Weights {
  UNet3Config config;
  Tensor enc1_w, enc1_b;
  Tensor enc2_w, enc2_b;
  Tensor enc3_w, enc3_b;
  Tensor bottom_w, bottom_b;
  Tensor dec3_w, dec3_b;
  Tensor dec2_w, dec2_b;
  Tensor dec1_w, dec1_b;

  static UNet3Weights init(const UNet3Config& cfg, Rng& rng) {
    UNet3Weights w;
    w.config = cfg;
    auto conv = [&](int oc, int ic) {
      return make_param({oc, ic, 3, 3}, ic * 9, rng);
    };
    w.enc1_w = conv(cfg.c1, cfg.in_channels);
    w.enc1_b = make_zeros_param({cfg.c1});
    w.enc2_w = conv(cfg.c2, cfg.c1);
    w.enc2_b = make_zeros_param({cfg.c2});
    w.enc3_w = conv(cfg.c3, cfg.c2);
    w.enc3_b = make_zeros_param({cfg.c3});
    w.bottom_w = conv(cfg.c3, cfg.c3);
    w.bottom_b = make_zeros_param({cfg.c3});
    w.dec3_w = conv(cfg.c2, cfg.c3 + cfg.c3);
    w.dec3_b = make_zeros_param({cfg.c2});
    w.dec2_w = conv(cfg.c1, cfg.c2 + cfg.c2);
    w.dec2_b = make_zeros_param({cfg.c1});
    w.dec1_w = conv(cfg.out_channels, cfg.c1 + cfg.c1);
    w.dec1_b = make_zeros_param({cfg.out_channels});
    return w;
  }

  NamedParams named() const {
    return {{"enc1_w", enc1_w}, {"enc1_b", enc1_b}, {"enc2_w", enc2_w},
            {"enc2_b", enc2_b}, {"enc3_w", enc3_w}, {"enc3_b", enc3_b},
            {"bottom_w", bottom_w}, {"bottom_b", bottom_b},
            {"dec3_w", dec3_w}, {"dec3_b", dec3_b}, {"dec2_w", dec2_w},
            {"dec2_b", dec2_b}, {"dec1_w", dec1_w}, {"dec1_b", dec1_b}};
  }

  std::vector<Tensor> params() const { return param_list(named()); }

  static UNet3Weights from_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.kind != "pt-unet3")
      throw DataError("checkpoint kind '" + ckpt.kind +
                      "' is not a tracking U-Net");
    UNet3Weights w;
    w.config = UNet3Config::from_json(ckpt.config.at("unet"));
    const auto& c = w.config;
    w.enc1_w = ckpt.take("enc1_w", {c.c1, c.in_channels, 3, 3});
    w.enc1_b = ckpt.take("enc1_b", {c.c1});
    w.enc2_w = ckpt.take("enc2_w", {c.c2, c.c1, 3, 3});
    w.enc2_b = ckpt.take("enc2_b", {c.c2});
    w.enc3_w = ckpt.take("enc3_w", {c.c3, c.c2, 3, 3});
    w.enc3_b = ckpt.take("enc3_b", {c.c3});
    w.bottom_w = ckpt.take("bottom_w", {c.c3, c.c3, 3, 3});
    w.bottom_b = ckpt.take("bottom_b", {c.c3});
    w.dec3_w = ckpt.take("dec3_w", {c.c2, 2 * c.c3, 3, 3});
    w.dec3_b = ckpt.take("dec3_b", {c.c2});
    w.dec2_w = ckpt.take("dec2_w", {c.c1, 2 * c.c2, 3, 3});
    w.dec2_b = ckpt.take("dec2_b", {c.c1});
    w.dec1_w = ckpt.take("dec1_w", {c.out_channels, 2 * c.c1, 3, 3});
    w.dec1_b = ckpt.take("dec1_b", {c.out_channels});
    return w;
  }
};

inline Tensor unet3_forward(const UNet3Weights& w, const Tensor& x) {
  if (x.shape().size() != 3 || x.shape()[0] != w.config.in_channels)
    throw UsageError("unet3_forward: expected [" +
                     std::to_string(w.config.in_channels) +
                     ",H,W] input, got " + shape_str(x.shape()));
  const int H = x.shape()[1], W = x.shape()[2];
  if (H % 8 || W % 8)
    throw UsageError("unet3_forward: spatial sides must be divisible by 8, "
                     "got " + shape_str(x.shape()));
  Tensor e1 = relu(conv2d(x, w.enc1_w, w.enc1_b));
  Tensor e2 = relu(conv2d(maxpool2x2(e1), w.enc2_w, w.enc2_b));
  Tensor e3 = relu(conv2d(maxpool2x2(e2), w.enc3_w, w.enc3_b));
  Tensor bottom = relu(conv2d(maxpool2x2(e3), w.bottom_w, w.bottom_b));
  Tensor d3 = relu(conv2d(concat_channels(e3, upsample2x(bottom)), w.dec3_w, w.dec3_b));
  Tensor d2 = relu(conv2d(concat_channels(e2, upsample2x(d3)), w.dec2_w, w.dec2_b));
  // Embedding output stays linear so features can be signed.
  return conv2d(concat_channels(e1, upsample2x(d2)), w.dec1_w, w.dec1_b);
}

}  // namespace hetloc::nn
