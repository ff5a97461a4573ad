// SPDX-License-Identifier: Apache-2.0
//
// Copyright 2026 The nlos-npr Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------
#ifndef NLOS_TESTS_ORACLES_HPP
#define NLOS_TESTS_ORACLES_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace nlos::testing {

// Parameters of the two-component Gaussian posterior of the true distance.
struct MixtureDraw {
    double d_bar = 0.0;
    double p_nlos = 0.0;
    double mean_bias = 0.0;
    double sigma_los = 0.0;
    double sigma_nlos = 0.0;
};

// Posterior mean of d under (1 - p) N(d_bar, s_los^2) + p N(d_bar - bias, s_nlos^2),
// integrated numerically on a 1 mm grid spanning +-10 sigma around both components.
inline double mixture_mean_on_grid(const MixtureDraw &m, double spacing = 1e-3) {
    const double sigma = std::max(m.sigma_los, m.sigma_nlos);
    const double lo = std::min(m.d_bar, m.d_bar - m.mean_bias) - 10.0 * sigma;
    const double hi = std::max(m.d_bar, m.d_bar - m.mean_bias) + 10.0 * sigma;
    const auto steps = static_cast<std::size_t>(std::ceil((hi - lo) / spacing));
    auto normal = [](double x, double mu, double s) {
        const double z = (x - mu) / s;
        return std::exp(-0.5 * z * z) / s;
    };
    double mass = 0.0, first = 0.0;
    for (std::size_t i = 0; i <= steps; ++i) {
        const double d = lo + spacing * static_cast<double>(i);
        const double w = (1.0 - m.p_nlos) * normal(d, m.d_bar, m.sigma_los) +
                         m.p_nlos * normal(d, m.d_bar - m.mean_bias, m.sigma_nlos);
        mass += w;
        first += w * d;
    }
    return first / mass;
}

// Percentile by full sort of |x| and interpolation between neighbouring order statistics.
inline double sorted_percentile(std::vector<double> x, double q) {
    for (auto &v : x)
        v = std::abs(v);
    std::sort(x.begin(), x.end());
    const double pos = q * static_cast<double>(x.size() - 1);
    const auto i = static_cast<std::size_t>(std::floor(pos));
    if (i + 1 >= x.size())
        return x.back();
    return x[i] + (pos - static_cast<double>(i)) * (x[i + 1] - x[i]);
}

} // namespace nlos::testing

#endif // NLOS_TESTS_ORACLES_HPP
