#include "gap/verification.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <numeric>

#include "gap/error.hpp"

namespace gap {

namespace {
void check_same(Eigen::Index a, Eigen::Index b, const char* what) {
    if (a != b)
        throw InvalidArgument(std::string(what) + ": dimension mismatch (" + std::to_string(a) + " vs " +
                              std::to_string(b) + ")");
}
}  // namespace

Eigen::VectorXd normalize_weights(const Eigen::VectorXd& w) {
    require(w.size() > 0, "weights: empty");
    require((w.array() >= 0).all() && w.allFinite(), "weights: must be finite and non-negative");
    const double m = w.mean();
    require(m > 0, "weights: all zero");
    return w / m;
}

Eigen::VectorXd uniform_weights(Eigen::Index d) { return Eigen::VectorXd::Ones(d); }

double rmse(const StateVector& a, const StateVector& b) { return rmse(a, b, uniform_weights(a.size())); }

double rmse(const StateVector& a, const StateVector& b, const Eigen::VectorXd& w) {
    check_same(a.size(), b.size(), "rmse");
    check_same(a.size(), w.size(), "rmse weights");
    require(a.size() > 0, "rmse: empty state");
    return std::sqrt((w.array() * (a - b).array().square()).mean());
}

std::optional<double> acc(const StateVector& a, const StateVector& b) { return acc(a, b, uniform_weights(a.size())); }

std::optional<double> acc(const StateVector& a, const StateVector& b, const Eigen::VectorXd& w) {
    check_same(a.size(), b.size(), "acc");
    check_same(a.size(), w.size(), "acc weights");
    const double aa = (w.array() * a.array().square()).sum();
    const double bb = (w.array() * b.array().square()).sum();
    if (!(aa > 0) || !(bb > 0)) return std::nullopt;
    const double r = (w.array() * a.array() * b.array()).sum() / std::sqrt(aa * bb);
    return std::clamp(r, -1.0, 1.0);
}

double relative_improvement(double rmse_a, double rmse_b) {
    require(rmse_b > 0, "relative_improvement: baseline RMSE must be positive");
    return (rmse_a - rmse_b) / rmse_b * 100.0;
}

double crps(std::span<const double> members, double truth) {
    const std::size_t m = members.size();
    require(m >= 1, "crps: empty ensemble");
    double skill = 0;
    for (double x : members) skill += std::abs(x - truth);
    skill /= double(m);
    if (m == 1) return skill;
    // sum_{i,k} |x_i - x_k| = 2 sum_i (2i - m + 1) x_(i) over the sorted values.
    std::vector<double> s(members.begin(), members.end());
    std::sort(s.begin(), s.end());
    double pair = 0;
    for (std::size_t i = 0; i < m; ++i) pair += (2.0 * double(i) - double(m) + 1.0) * s[i];
    pair *= 2.0;
    return skill - pair / (2.0 * double(m) * double(m - 1));
}

double crps_field(const Matrix& members, const StateVector& truth) {
    return crps_field(members, truth, uniform_weights(truth.size()));
}

double crps_field(const Matrix& members, const StateVector& truth, const Eigen::VectorXd& w) {
    check_same(members.rows(), truth.size(), "crps_field");
    check_same(w.size(), truth.size(), "crps_field weights");
    require(members.cols() >= 1, "crps_field: empty ensemble");
    double total = 0;
    std::vector<double> row(static_cast<std::size_t>(members.cols()));
    for (Eigen::Index i = 0; i < members.rows(); ++i) {
        for (Eigen::Index j = 0; j < members.cols(); ++j) row[static_cast<std::size_t>(j)] = members(i, j);
        total += w(i) * crps(row, truth(i));
    }
    return total / double(truth.size());
}

double gaussian_crps(double mu, double sigma, double y) {
    require(sigma > 0, "gaussian_crps: sigma must be positive");
    const double z = (y - mu) / sigma;
    const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
    const double cdf = 0.5 * std::erfc(-z / std::numbers::sqrt2);
    return sigma * (z * (2.0 * cdf - 1.0) + 2.0 * pdf - 1.0 / std::sqrt(std::numbers::pi));
}

double crpss(double crps_fc, double crps_bench) {
    require(crps_bench > 0, "crpss: benchmark CRPS must be positive");
    return 1.0 - crps_fc / crps_bench;
}

std::optional<double> spread_skill_ratio(const std::vector<Matrix>& ensembles, const Matrix& truths) {
    require(!ensembles.empty(), "spread_skill_ratio: no times");
    check_same(static_cast<Eigen::Index>(ensembles.size()), truths.cols(), "spread_skill_ratio times");
    const Eigen::Index m = ensembles.front().cols();
    require(m >= 2, "spread_skill_ratio: need at least 2 members");
    double s2 = 0, e2 = 0;
    std::int64_t count = 0;
    for (std::size_t t = 0; t < ensembles.size(); ++t) {
        const Matrix& e = ensembles[t];
        require(e.cols() == m, "spread_skill_ratio: member count must be constant");
        check_same(e.rows(), truths.rows(), "spread_skill_ratio");
        const Eigen::VectorXd mu = e.rowwise().mean();
        s2 += (e.colwise() - mu).array().square().sum() / double(m - 1);
        e2 += (truths.col(static_cast<Eigen::Index>(t)) - mu).squaredNorm();
        count += e.rows();
    }
    s2 /= double(count);
    e2 /= double(count);
    const double denom = e2 - s2 / double(m);
    if (!(denom > 0)) return std::nullopt;
    return std::sqrt(s2 / denom);
}

double kolmogorov_survival(double lambda) {
    if (lambda <= 0) return 1.0;
    if (lambda < 1.18) {
        // Q = 1 - sqrt(2 pi)/lambda * sum exp(-(2k-1)^2 pi^2 / (8 lambda^2))
        const double c = -std::numbers::pi * std::numbers::pi / (8.0 * lambda * lambda);
        double s = 0;
        for (int k = 1; k <= 50; ++k) {
            const double term = std::exp(c * double((2 * k - 1) * (2 * k - 1)));
            s += term;
            if (term < 1e-17 * s) break;
        }
        return std::clamp(1.0 - std::sqrt(2.0 * std::numbers::pi) / lambda * s, 0.0, 1.0);
    }
    double s = 0, sign = 1;
    for (int k = 1; k <= 100; ++k) {
        const double term = std::exp(-2.0 * k * k * lambda * lambda);
        s += sign * term;
        sign = -sign;
        if (term < 1e-17) break;
    }
    return std::clamp(2.0 * s, 0.0, 1.0);
}

KsResult ks_two_sample(std::span<const double> x, std::span<const double> y) {
    require(!x.empty() && !y.empty(), "ks_two_sample: both samples must be non-empty");
    std::vector<double> a(x.begin(), x.end()), b(y.begin(), y.end());
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const double n = double(a.size()), m = double(b.size());
    std::size_t i = 0, j = 0;
    double d = 0;
    while (i < a.size() && j < b.size()) {
        const double v = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= v) ++i;
        while (j < b.size() && b[j] <= v) ++j;
        d = std::max(d, std::abs(double(i) / n - double(j) / m));
    }
    const double en = std::sqrt(n * m / (n + m));
    return {d, kolmogorov_survival((en + 0.12 + 0.11 / en) * d)};
}

Spectrum power_spectrum(const StateVector& field, double domain_length) {
    const Eigen::Index l = field.size();
    require(l >= 2, "power_spectrum: need at least 2 points");
    require(domain_length > 0, "power_spectrum: domain length must be positive");
    const Eigen::Index kmax = l / 2;
    Spectrum out;
    out.energy.resize(kmax + 1);
    for (Eigen::Index k = 0; k <= kmax; ++k) {
        std::complex<double> f = 0;
        for (Eigen::Index j = 0; j < l; ++j) {
            const double ph = -2.0 * std::numbers::pi * double(k * j % l) / double(l);
            f += field(j) * std::complex<double>(std::cos(ph), std::sin(ph));
        }
        f /= double(l);
        // The Nyquist bin of an even-length field has no mirror partner.
        const bool single = k == 0 || (l % 2 == 0 && k == kmax);
        out.energy(k) = (single ? 1.0 : 2.0) * domain_length * std::norm(f);
    }
    const double lhs = domain_length / double(l) * field.squaredNorm();
    const double rhs = out.energy.sum();
    out.parseval_residual = std::abs(lhs - rhs) / std::max(lhs, 1e-300);
    if (lhs == 0.0) out.parseval_residual = std::abs(rhs);
    if (out.parseval_residual > 1e-10)
        throw NumericalError("power_spectrum: Parseval residual " + std::to_string(out.parseval_residual));
    return out;
}

EofResult eof(const Trajectory& data, int n_modes) {
    require(n_modes >= 1, "eof: n_modes must be >= 1");
    require(data.size() > n_modes, "eof: need more samples than modes");
    require(n_modes <= data.dim(), "eof: more modes than coordinates");
    EofResult r;
    r.mean = data.states.rowwise().mean();
    const Matrix anom = data.states.colwise() - r.mean;
    const Matrix cov = anom * anom.transpose() / double(data.size() - 1);
    Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
    if (es.info() != Eigen::Success) throw NumericalError("eof: eigen-decomposition failed");
    const Eigen::Index d = data.dim();
    const Eigen::VectorXd ev = es.eigenvalues().reverse();
    const Matrix vecs = es.eigenvectors().rowwise().reverse();
    const double total = std::max(ev.sum(), 0.0);
    const double tol = std::max(ev(0), 0.0) * 1e-12 * double(d);
    r.rank = static_cast<int>((ev.array() > tol).count());
    r.rank_deficient = r.rank < n_modes;
    r.patterns = vecs.leftCols(n_modes);
    for (int k = 0; k < n_modes; ++k) {
        Eigen::Index imax;
        r.patterns.col(k).cwiseAbs().maxCoeff(&imax);
        if (r.patterns(imax, k) < 0) r.patterns.col(k) *= -1.0;
    }
    r.variance = ev.head(n_modes).cwiseMax(0.0);
    r.explained_variance = total > 0 ? Eigen::VectorXd(r.variance / total) : Eigen::VectorXd::Zero(n_modes);
    r.pcs = anom.transpose() * r.patterns;
    return r;
}

std::vector<double> standardized_index(std::span<const double> a, std::span<const double> b, double scale) {
    require(a.size() == b.size() && a.size() >= 2, "standardized_index: need equal-length series of length >= 2");
    const std::size_t n = a.size();
    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
    const double mean = std::accumulate(d.begin(), d.end(), 0.0) / double(n);
    double var = 0;
    for (double v : d) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / double(n));
    if (!(sd > 1e-300)) throw InvalidArgument("standardized_index: difference series has zero variance");
    for (double& v : d) v = scale * (v - mean) / sd;
    return d;
}

}  // namespace gap
