/*
 Copyright 2026 maskkit contributors
 Licensed under the Apache License, Version 2.0 (the "License");
 you may not use this file except in compliance with the License.
 You may obtain a copy of the License at

      http://www.apache.org/licenses/LICENSE-2.0

 Unless required by applicable law or agreed to in writing, software
 distributed under the License is distributed on an "AS IS" BASIS,
 WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 See the License for the specific language governing permissions and
 limitations under the License.
*/
#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "maskkit/tensor.hpp"

namespace maskkit {

struct OptimizerConfig {
    double momentum = 0.9;
    double weight_decay = 1e-4;
    double lr_warmup_start = 1e-4;
    double lr_base = 2e-3;
    int warmup_steps = 200;
    double plateau_factor = 0.1;
    int plateau_window = 200;        // steps averaged per plateau check
    int plateau_patience = 2;        // flat windows tolerated before decay
    double plateau_min_delta = 1e-3; // relative improvement threshold
    double lr_min = 1e-4;

    void validate() const {
        if (!(momentum >= 0.0 && momentum < 1.0))
            throw std::invalid_argument("OptimizerConfig: momentum must be in [0,1)");
        if (weight_decay < 0.0) throw std::invalid_argument("OptimizerConfig: weight_decay < 0");
        if (!(lr_warmup_start > 0.0 && lr_base > 0.0 && lr_min > 0.0))
            throw std::invalid_argument("OptimizerConfig: rates must be positive");
        if (warmup_steps < 0 || plateau_window <= 0 || plateau_patience <= 0)
            throw std::invalid_argument("OptimizerConfig: bad schedule counts");
        if (!(plateau_factor > 0.0 && plateau_factor < 1.0))
            throw std::invalid_argument("OptimizerConfig: plateau_factor must be in (0,1)");
    }
};

/// Learning rate at a 0-based step after `decays` plateau reductions: linear
/// warmup to lr_base, then lr_base * factor^decays floored at lr_min.
inline double lr_at(const OptimizerConfig& cfg, int step, int decays) {
    cfg.validate();
    if (step < cfg.warmup_steps) {
        const double t = (step + 1.0) / cfg.warmup_steps;
        return cfg.lr_warmup_start + (cfg.lr_base - cfg.lr_warmup_start) * t;
    }
    return std::max(cfg.lr_min, cfg.lr_base * std::pow(cfg.plateau_factor, decays));
}

/// SGD with momentum, decoupled-from-nothing classic L2 weight decay, linear
/// warmup and plateau-triggered learning-rate decay.
class SgdOptimizer {
public:
    SgdOptimizer(OptimizerConfig cfg, const std::vector<std::pair<std::string, Tensor*>>& params)
        : cfg_(std::move(cfg)) {
        cfg_.validate();
        velocity_.reserve(params.size());
        for (const auto& [name, t] : params) velocity_.emplace_back(t->shape());
    }

    int step_count() const { return step_; }
    int decays() const { return decays_; }
    double current_lr() const { return lr_at(cfg_, step_, decays_); }

    /// One update: v <- momentum*v + (g + wd*w); w <- w - lr*v. `loss` feeds
    /// the plateau detector. Returns the learning rate used.
    double step(const std::vector<std::pair<std::string, Tensor*>>& params,
                const std::vector<const Tensor*>& grads, double loss) {
        if (params.size() != velocity_.size() || grads.size() != velocity_.size())
            throw std::invalid_argument("SgdOptimizer: parameter list changed size");
        const double lr = lr_at(cfg_, step_, decays_);
        for (std::size_t p = 0; p < params.size(); ++p) {
            Tensor& w = *params[p].second;
            const Tensor& g = *grads[p];
            Tensor& v = velocity_[p];
            if (!w.same_shape(g) || !w.same_shape(v))
                throw std::invalid_argument("SgdOptimizer: shape mismatch at " + params[p].first);
            for (std::size_t i = 0; i < w.size(); ++i) {
                v[i] = cfg_.momentum * v[i] + (g[i] + cfg_.weight_decay * w[i]);
                w[i] -= lr * v[i];
            }
        }
        ++step_;
        observe(loss);
        return lr;
    }

private:
    void observe(double loss) {
        if (step_ <= cfg_.warmup_steps) return; // plateau tracking starts after warmup
        window_acc_ += loss;
        if (++window_n_ < cfg_.plateau_window) return;
        const double mean = window_acc_ / window_n_;
        window_acc_ = 0.0;
        window_n_ = 0;
        if (mean < best_window_ * (1.0 - cfg_.plateau_min_delta)) {
            best_window_ = mean;
            flat_windows_ = 0;
        } else if (++flat_windows_ >= cfg_.plateau_patience) {
            flat_windows_ = 0;
            if (lr_at(cfg_, step_, decays_) > cfg_.lr_min) ++decays_;
        }
    }

    OptimizerConfig cfg_;
    std::vector<Tensor> velocity_;
    int step_ = 0;
    int decays_ = 0;
    double window_acc_ = 0.0;
    int window_n_ = 0;
    double best_window_ = std::numeric_limits<double>::infinity();
    int flat_windows_ = 0;
};

} // namespace maskkit
