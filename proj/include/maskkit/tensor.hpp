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

#include <array>
#include <cassert>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace maskkit {

/// Dense row-major tensor of doubles, rank 1..4.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::initializer_list<int> dims) : Tensor(std::vector<int>(dims)) {}

    explicit Tensor(const std::vector<int>& dims) {
        if (dims.empty() || dims.size() > 4) throw std::invalid_argument("Tensor: rank must be 1..4");
        rank_ = static_cast<int>(dims.size());
        std::size_t n = 1;
        for (int i = 0; i < rank_; ++i) {
            if (dims[i] <= 0) throw std::invalid_argument("Tensor: dims must be positive");
            dims_[i] = dims[i];
            n *= static_cast<std::size_t>(dims[i]);
        }
        v_.assign(n, 0.0);
    }

    int rank() const { return rank_; }
    int dim(int i) const { return dims_[i]; }
    std::size_t size() const { return v_.size(); }
    bool empty() const { return v_.empty(); }

    std::vector<int> shape() const { return std::vector<int>(dims_.begin(), dims_.begin() + rank_); }
    bool same_shape(const Tensor& o) const { return rank_ == o.rank_ && dims_ == o.dims_; }

    double* data() { return v_.data(); }
    const double* data() const { return v_.data(); }
    std::vector<double>& vec() { return v_; }
    const std::vector<double>& vec() const { return v_; }

    double& operator[](std::size_t i) { return v_[i]; }
    double operator[](std::size_t i) const { return v_[i]; }

    double& at(int a) { return v_[idx(a)]; }
    double at(int a) const { return v_[idx(a)]; }
    double& at(int a, int b) { return v_[idx(a, b)]; }
    double at(int a, int b) const { return v_[idx(a, b)]; }
    double& at(int a, int b, int c) { return v_[idx(a, b, c)]; }
    double at(int a, int b, int c) const { return v_[idx(a, b, c)]; }
    double& at(int a, int b, int c, int d) { return v_[idx(a, b, c, d)]; }
    double at(int a, int b, int c, int d) const { return v_[idx(a, b, c, d)]; }

    void fill(double x) { std::fill(v_.begin(), v_.end(), x); }
    void zero() { fill(0.0); }

private:
    std::size_t idx(int a) const {
        assert(rank_ == 1);
        return static_cast<std::size_t>(a);
    }
    std::size_t idx(int a, int b) const {
        assert(rank_ == 2);
        return static_cast<std::size_t>(a) * dims_[1] + b;
    }
    std::size_t idx(int a, int b, int c) const {
        assert(rank_ == 3);
        return (static_cast<std::size_t>(a) * dims_[1] + b) * dims_[2] + c;
    }
    std::size_t idx(int a, int b, int c, int d) const {
        assert(rank_ == 4);
        return ((static_cast<std::size_t>(a) * dims_[1] + b) * dims_[2] + c) * dims_[3] + d;
    }

    int rank_ = 0;
    std::array<int, 4> dims_{1, 1, 1, 1};
    std::vector<double> v_;
};

} // namespace maskkit
