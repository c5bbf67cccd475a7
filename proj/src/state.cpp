#include "gap/state.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gap/error.hpp"

namespace gap {

Trajectory Trajectory::select(std::span<const int> coords) const {
    Trajectory out = *this;
    out.states.resize(static_cast<Eigen::Index>(coords.size()), states.cols());
    for (std::size_t i = 0; i < coords.size(); ++i) {
        require(coords[i] >= 0 && coords[i] < dim(), "coordinate out of range");
        out.states.row(static_cast<Eigen::Index>(i)) = states.row(coords[i]);
    }
    return out;
}

Ensemble::Ensemble(Matrix m, std::vector<std::uint64_t> seeds)
    : members(std::move(m)), member_seeds(std::move(seeds)) {
    require(static_cast<Eigen::Index>(member_seeds.size()) == members.cols(),
            "ensemble: one seed per member required");
    std::vector<std::uint64_t> sorted = member_seeds;
    std::sort(sorted.begin(), sorted.end());
    require(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(), "ensemble: member seeds must be unique");
}

StateVector Ensemble::spread() const {
    const auto m = size();
    if (m < 2) return StateVector::Zero(dim());
    const StateVector mu = mean();
    return ((members.colwise() - mu).array().square().rowwise().sum() / double(m - 1)).sqrt();
}

const StateVector& Climatology::phase_mean(std::int64_t phase) const {
    if (!has_phases()) throw InvalidArgument("climatology has no per-phase table");
    const auto n = static_cast<std::int64_t>(per_phase_mean.size());
    return per_phase_mean[static_cast<std::size_t>(((phase % n) + n) % n)];
}

Climatology Climatology::select(std::span<const int> coords) const {
    Climatology out;
    const auto k = static_cast<Eigen::Index>(coords.size());
    out.mean.resize(k);
    out.std.resize(k);
    out.floored.resize(coords.size());
    out.sample_count = sample_count;
    out.per_phase_mean.assign(per_phase_mean.size(), StateVector(k));
    for (Eigen::Index i = 0; i < k; ++i) {
        const int c = coords[static_cast<std::size_t>(i)];
        require(c >= 0 && c < dim(), "coordinate out of range");
        out.mean(i) = mean(c);
        out.std(i) = std(c);
        out.floored[static_cast<std::size_t>(i)] = floored[static_cast<std::size_t>(c)];
        for (std::size_t p = 0; p < per_phase_mean.size(); ++p) out.per_phase_mean[p](i) = per_phase_mean[p](c);
    }
    return out;
}

Climatology Climatology::identity(Eigen::Index d) {
    Climatology c;
    c.mean = StateVector::Zero(d);
    c.std = StateVector::Ones(d);
    c.floored.assign(static_cast<std::size_t>(d), false);
    return c;
}

Climatology fit_climatology(const Trajectory& data, std::optional<int> cycle_len) {
    const auto n = data.size();
    if (n < 2) throw InvalidArgument("fit_climatology: need at least 2 states, got " + std::to_string(n));
    if (!all_finite(data.states)) throw NumericalError("fit_climatology: non-finite data");

    Climatology c;
    c.sample_count = n;
    // Two-pass statistics: mean first, then centred second moment.
    c.mean = data.states.rowwise().mean();
    const StateVector var = (data.states.colwise() - c.mean).array().square().rowwise().mean();
    c.std = var.array().sqrt();
    c.floored.assign(static_cast<std::size_t>(data.dim()), false);
    for (Eigen::Index i = 0; i < c.std.size(); ++i) {
        if (c.std(i) < Climatology::kStdFloor) {
            c.std(i) = Climatology::kStdFloor;
            c.floored[static_cast<std::size_t>(i)] = true;
        }
    }

    if (cycle_len) {
        const int len = *cycle_len;
        require(len >= 1, "fit_climatology: cycle_len must be positive");
        const Eigen::Index usable = (n / len) * len;
        require(usable >= len, "fit_climatology: data shorter than one cycle");
        std::vector<StateVector> sums(static_cast<std::size_t>(len), StateVector::Zero(data.dim()));
        std::vector<std::int64_t> counts(static_cast<std::size_t>(len), 0);
        for (Eigen::Index k = 0; k < usable; ++k) {
            const std::int64_t step = data.step_of(k);
            const auto p = static_cast<std::size_t>(((step % len) + len) % len);
            sums[p] += data.states.col(k);
            ++counts[p];
        }
        for (std::size_t p = 0; p < sums.size(); ++p) {
            if (counts[p] == 0) throw InvalidArgument("fit_climatology: stride leaves phase " + std::to_string(p) + " empty");
            sums[p] /= double(counts[p]);
        }
        c.per_phase_mean = std::move(sums);
    }
    return c;
}

namespace {
void check_dim(Eigen::Index got, const Climatology& c) {
    if (got != c.dim())
        throw InvalidArgument("dimension mismatch: state " + std::to_string(got) + " vs climatology " +
                              std::to_string(c.dim()));
}
}  // namespace

StateVector normalize(const StateVector& x, const Climatology& c) {
    check_dim(x.size(), c);
    return ((x - c.mean).array() / c.std.array()).matrix();
}

StateVector denormalize(const StateVector& z, const Climatology& c) {
    check_dim(z.size(), c);
    return (z.array() * c.std.array()).matrix() + c.mean;
}

Matrix normalize(const Matrix& x, const Climatology& c) {
    check_dim(x.rows(), c);
    return ((x.colwise() - c.mean).array().colwise() / c.std.array()).matrix();
}

Matrix denormalize(const Matrix& z, const Climatology& c) {
    check_dim(z.rows(), c);
    return ((z.array().colwise() * c.std.array()).matrix()).colwise() + c.mean;
}

StateVector anomaly(const StateVector& x, const Climatology& c, std::optional<std::int64_t> phase) {
    check_dim(x.size(), c);
    if (phase) return x - c.phase_mean(*phase);
    return x - c.mean;
}

bool all_finite(const Eigen::Ref<const Matrix>& m) { return m.allFinite(); }

}  // namespace gap
