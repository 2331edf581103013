#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "qnsim/errors.hpp"
#include "qnsim/linalg.hpp"
#include "qnsim/mesh.hpp"
#include "qnsim/types.hpp"

namespace qnsim {

/// Cubic Hermite spline through (x, y, dy/dx) knots; linear extrapolation outside the knots.
class HermiteSpline {
public:
    struct Knot {
        double x, y, tangent;
    };

    HermiteSpline() = default;

    explicit HermiteSpline(std::vector<Knot> knots) : knots_(std::move(knots)) {
        if (knots_.size() < 2) throw ValidationError("spline needs at least two knots");
        for (std::size_t k = 0; k < knots_.size(); ++k) {
            const Knot& kn = knots_[k];
            if (!std::isfinite(kn.x) || !std::isfinite(kn.y) || !std::isfinite(kn.tangent))
                throw ValidationError("spline knot " + std::to_string(k) + " is not finite");
            if (k > 0 && !(kn.x > knots_[k - 1].x))
                throw ValidationError("spline knots must have strictly increasing x");
        }
    }

    /// Samples f at the given abscissae using exact tangents.
    template <typename F, typename DF>
    static HermiteSpline sample(const std::vector<double>& xs, F f, DF df) {
        std::vector<Knot> k;
        k.reserve(xs.size());
        for (double x : xs) k.push_back({x, f(x), df(x)});
        return HermiteSpline(std::move(k));
    }

    const std::vector<Knot>& knots() const { return knots_; }

    double value(double x) const { return eval(x).first; }
    double derivative(double x) const { return eval(x).second; }

    std::pair<double, double> eval(double x) const {
        const Knot& lo = knots_.front();
        const Knot& hi = knots_.back();
        if (x <= lo.x) return {lo.y + lo.tangent * (x - lo.x), lo.tangent};
        if (x >= hi.x) return {hi.y + hi.tangent * (x - hi.x), hi.tangent};
        std::size_t k = 0;
        {
            std::size_t a = 0, b = knots_.size() - 1;
            while (b - a > 1) {
                const std::size_t mid = (a + b) / 2;
                (knots_[mid].x <= x ? a : b) = mid;
            }
            k = a;
        }
        const Knot& p = knots_[k];
        const Knot& q = knots_[k + 1];
        const double h = q.x - p.x;
        const double s = (x - p.x) / h;
        const double s2 = s * s, s3 = s2 * s;
        const double v = (2 * s3 - 3 * s2 + 1) * p.y + (s3 - 2 * s2 + s) * h * p.tangent +
                         (-2 * s3 + 3 * s2) * q.y + (s3 - s2) * h * q.tangent;
        const double d = ((6 * s2 - 6 * s) * p.y + (3 * s2 - 4 * s + 1) * h * p.tangent +
                          (-6 * s2 + 6 * s) * q.y + (3 * s2 - 2 * s) * h * q.tangent) / h;
        return {v, d};
    }

private:
    std::vector<Knot> knots_;
};

/// Univariate function used for the a, b, c terms of a Valanis-Landel energy:
/// polynomial + lin*log(x) + sq*log(x)^2 + sum of splines.
/// The log part is continued below kLogExtension by its quadratic Taylor expansion, which keeps
/// the function C2 and defined for inverted elements.
class ScalarFn {
public:
    static constexpr double kLogExtension = 0.01;

    ScalarFn() = default;

    /// sum_k coeffs[k] * x^k
    static ScalarFn polynomial(std::vector<double> coeffs) {
        ScalarFn f;
        f.poly_ = std::move(coeffs);
        return f;
    }

    static ScalarFn log_terms(double lin, double sq) {
        ScalarFn f;
        f.log_lin_ = lin;
        f.log_sq_ = sq;
        return f;
    }

    static ScalarFn spline(HermiteSpline s) {
        ScalarFn f;
        f.splines_.push_back(std::move(s));
        return f;
    }

    ScalarFn& operator+=(const ScalarFn& o) {
        if (poly_.size() < o.poly_.size()) poly_.resize(o.poly_.size(), 0.0);
        for (std::size_t k = 0; k < o.poly_.size(); ++k) poly_[k] += o.poly_[k];
        log_lin_ += o.log_lin_;
        log_sq_ += o.log_sq_;
        splines_.insert(splines_.end(), o.splines_.begin(), o.splines_.end());
        return *this;
    }

    friend ScalarFn operator+(ScalarFn a, const ScalarFn& b) { return a += b; }

    double value(double x) const {
        double v = 0.0;
        for (std::size_t k = poly_.size(); k-- > 0;) v = v * x + poly_[k];
        if (has_log()) v += log_value(x);
        for (const auto& s : splines_) v += s.value(x);
        return v;
    }

    double derivative(double x) const {
        double d = 0.0;
        for (std::size_t k = poly_.size(); k-- > 1;) d = d * x + static_cast<double>(k) * poly_[k];
        if (has_log()) d += log_derivative(x);
        for (const auto& s : splines_) d += s.derivative(x);
        return d;
    }

    bool is_zero() const {
        for (double c : poly_)
            if (c != 0.0) return false;
        return !has_log() && splines_.empty();
    }

private:
    bool has_log() const { return log_lin_ != 0.0 || log_sq_ != 0.0; }

    double log_exact(double x) const {
        const double l = std::log(x);
        return log_lin_ * l + log_sq_ * l * l;
    }
    double log_d1(double x) const { return (log_lin_ + 2.0 * log_sq_ * std::log(x)) / x; }
    double log_d2(double x) const {
        return (-log_lin_ + 2.0 * log_sq_ * (1.0 - std::log(x))) / (x * x);
    }

    double log_value(double x) const {
        if (x >= kLogExtension) return log_exact(x);
        const double e = kLogExtension, dx = x - e;
        return log_exact(e) + log_d1(e) * dx + 0.5 * log_d2(e) * dx * dx;
    }

    double log_derivative(double x) const {
        if (x >= kLogExtension) return log_d1(x);
        const double e = kLogExtension;
        return log_d1(e) + log_d2(e) * (x - e);
    }

    std::vector<double> poly_;
    double log_lin_ = 0.0;
    double log_sq_ = 0.0;
    std::vector<HermiteSpline> splines_;
};

/// Expected range of principal stretches for the stiffness fit.
struct FitInterval {
    double x_start = 0.5;
    double x_end = 1.5;
};

/// Isotropic energy density psi(s) = sum a(s_i) + sum b(s_i s_j) + c(s1 s2 s3) - offset.
struct MaterialModel {
    std::string name;
    ScalarFn a, b, c;
    double offset = 0.0;   // psi(1,1,1) before shifting
    double k_fit = 0.0;    // set by fit_stiffness
};

inline double vl_energy(const MaterialModel& m, const Vec3& s) {
    if (!s.allFinite()) throw DomainError(m.name + ": non-finite principal stretches");
    const double psi = m.a.value(s(0)) + m.a.value(s(1)) + m.a.value(s(2)) + m.b.value(s(0) * s(1)) +
                       m.b.value(s(1) * s(2)) + m.b.value(s(0) * s(2)) + m.c.value(s(0) * s(1) * s(2)) -
                       m.offset;
    if (!std::isfinite(psi)) throw DomainError(m.name + ": energy undefined at given stretches");
    return psi;
}

/// dpsi/dsigma_i for each principal stretch.
inline Vec3 vl_stress(const MaterialModel& m, const Vec3& s) {
    if (!s.allFinite()) throw DomainError(m.name + ": non-finite principal stretches");
    const double j = s(0) * s(1) * s(2);
    const double cj = m.c.derivative(j);
    Vec3 p;
    p(0) = m.a.derivative(s(0)) + m.b.derivative(s(0) * s(1)) * s(1) + m.b.derivative(s(0) * s(2)) * s(2) +
           cj * s(1) * s(2);
    p(1) = m.a.derivative(s(1)) + m.b.derivative(s(0) * s(1)) * s(0) + m.b.derivative(s(1) * s(2)) * s(2) +
           cj * s(0) * s(2);
    p(2) = m.a.derivative(s(2)) + m.b.derivative(s(0) * s(2)) * s(0) + m.b.derivative(s(1) * s(2)) * s(1) +
           cj * s(0) * s(1);
    if (!p.allFinite()) throw DomainError(m.name + ": stress undefined at given stretches");
    return p;
}

/// Stress under uniaxial stretch x with the other two stretches at 1: a'(x) + 2 b'(x) + c'(x).
inline double uniaxial_stress(const MaterialModel& m, double x) {
    return m.a.derivative(x) + 2.0 * m.b.derivative(x) + m.c.derivative(x);
}

/// Slope of the least-squares line through the uniaxial stress over the interval (1001 samples).
inline double estimate_stiffness(const MaterialModel& m, const FitInterval& iv) {
    if (!(0.0 < iv.x_start && iv.x_start < 1.0 && 1.0 < iv.x_end))
        throw ValidationError("fit interval must satisfy 0 < x_start < 1 < x_end");
    constexpr int kSamples = 1001;
    double sx = 0, sy = 0;
    std::array<double, kSamples> xs{}, ys{};
    for (int i = 0; i < kSamples; ++i) {
        const double x = iv.x_start + (iv.x_end - iv.x_start) * i / (kSamples - 1);
        xs[static_cast<std::size_t>(i)] = x;
        ys[static_cast<std::size_t>(i)] = uniaxial_stress(m, x);
        sx += x;
        sy += ys[static_cast<std::size_t>(i)];
    }
    const double mx = sx / kSamples, my = sy / kSamples;
    double sxy = 0, sxx = 0;
    for (int i = 0; i < kSamples; ++i) {
        const double dx = xs[static_cast<std::size_t>(i)] - mx;
        sxy += dx * (ys[static_cast<std::size_t>(i)] - my);
        sxx += dx * dx;
    }
    const double k = sxy / sxx;
    if (!(k > 0.0))
        throw ValidationError("material '" + m.name + "' has non-positive fitted stiffness " +
                              std::to_string(k) + " over the fit interval");
    return k;
}

inline void fit_stiffness(MaterialModel& m, const FitInterval& iv = {}) { m.k_fit = estimate_stiffness(m, iv); }

/// Parameters for make_builtin. Unused fields are ignored by a given model.
struct MaterialParams {
    double mu = 0.0;
    double lambda = 0.0;
    double kappa1 = 0.0;
    double kappa2 = 0.0;
    std::optional<HermiteSpline> spline_a, spline_b, spline_c;
    std::string preset;    // "A" or "B" for the Neo-Hookean spline variants
    FitInterval fit;
};

inline const std::vector<std::string>& builtin_material_names() {
    static const std::vector<std::string> names{"corotated", "stvk",       "neohookean",
                                                "mooney_rivlin", "polynomial", "spline"};
    return names;
}

namespace detail {

inline void require(bool ok, const std::string& what) {
    if (!ok) throw ValidationError(what);
}

inline std::vector<double> spline_abscissae() {
    std::vector<double> xs;
    for (int i = 0; i <= 36; ++i) xs.push_back(0.2 + 0.05 * i);
    return xs;
}

inline MaterialModel neohookean_terms(double mu, double lambda) {
    MaterialModel m;
    m.a = ScalarFn::polynomial({0.0, 0.0, 0.5 * mu});
    m.c = ScalarFn::log_terms(-mu, 0.5 * lambda);
    return m;
}

} // namespace detail

/// Constructs one of the built-in Valanis-Landel materials, shifts psi(1,1,1) to zero and fits
/// the stiffness slope over params.fit.
inline MaterialModel make_builtin(const std::string& name, const MaterialParams& p) {
    using detail::require;
    MaterialModel m;
    if (name == "corotated") {
        require(p.mu > 0.0 && p.lambda >= 0.0, "corotated: requires mu > 0, lambda >= 0");
        const double mu = p.mu, la = p.lambda;
        // mu (x-1)^2 + la/2 x^2 - 3 la x + 3 la / 2
        m.a = ScalarFn::polynomial({mu + 1.5 * la, -2.0 * mu - 3.0 * la, mu + 0.5 * la});
        m.b = ScalarFn::polynomial({0.0, la});
    } else if (name == "stvk") {
        require(p.mu > 0.0 && p.lambda >= 0.0, "stvk: requires mu > 0, lambda >= 0");
        const double q = 0.25 * p.mu + 0.125 * p.lambda;
        // q (x^2-1)^2 - la/2 x^2 + la/4
        m.a = ScalarFn::polynomial({q + 0.25 * p.lambda, 0.0, -2.0 * q - 0.5 * p.lambda, 0.0, q});
        m.b = ScalarFn::polynomial({0.0, 0.0, 0.25 * p.lambda});
    } else if (name == "neohookean") {
        require(p.mu > 0.0 && p.lambda >= 0.0, "neohookean: requires mu > 0, lambda >= 0");
        m = detail::neohookean_terms(p.mu, p.lambda);
    } else if (name == "mooney_rivlin") {
        require(p.kappa1 > 0.0 && p.kappa2 >= 0.0 && p.lambda >= 0.0,
                "mooney_rivlin: requires kappa1 > 0, kappa2 >= 0, lambda >= 0");
        m.a = ScalarFn::polynomial({0.0, 0.0, 0.5 * p.kappa1});
        m.b = ScalarFn::polynomial({0.0, 0.0, 0.5 * p.kappa2});
        m.c = ScalarFn::log_terms(-(p.kappa1 + 2.0 * p.kappa2), 0.5 * p.lambda);
    } else if (name == "polynomial") {
        require(p.mu > 0.0, "polynomial: requires mu > 0");
        // mu (x-1)^4
        m.a = ScalarFn::polynomial({p.mu, -4.0 * p.mu, 6.0 * p.mu, -4.0 * p.mu, p.mu});
    } else if (name == "spline") {
        if (!p.preset.empty()) {
            require(p.preset == "A" || p.preset == "B", "spline: preset must be \"A\" or \"B\"");
            require(p.mu > 0.0 && p.lambda >= 0.0, "spline: preset requires mu > 0, lambda >= 0");
            m = detail::neohookean_terms(p.mu, p.lambda);
            const double mu = 2.0 * p.mu;
            // A stiffens compression, B stiffens tension.
            const bool comp = p.preset == "A";
            auto f = [mu, comp](double x) {
                const double t = comp ? 1.0 - x : x - 1.0;
                return t > 0.0 ? mu * t * t * t : 0.0;
            };
            auto df = [mu, comp](double x) {
                const double t = comp ? 1.0 - x : x - 1.0;
                return t > 0.0 ? (comp ? -3.0 : 3.0) * mu * t * t : 0.0;
            };
            m.a += ScalarFn::spline(HermiteSpline::sample(detail::spline_abscissae(), f, df));
        } else {
            require(p.spline_a || p.spline_b || p.spline_c, "spline: needs spline_a, spline_b or spline_c");
            if (p.spline_a) m.a = ScalarFn::spline(*p.spline_a);
            if (p.spline_b) m.b = ScalarFn::spline(*p.spline_b);
            if (p.spline_c) m.c = ScalarFn::spline(*p.spline_c);
        }
    } else {
        std::string valid;
        for (const auto& n : builtin_material_names()) valid += (valid.empty() ? "" : ", ") + n;
        throw ValidationError("unknown material type '" + name + "' (valid: " + valid + ")");
    }
    m.name = name;
    m.offset = 0.0;
    m.offset = vl_energy(m, Vec3::Ones());
    const Vec3 rest_stress = vl_stress(m, Vec3::Ones());
    if (rest_stress.norm() > 1e-9 * std::max(1.0, std::abs(uniaxial_stress(m, 1.5))))
        throw ValidationError(name + ": rest state is not stress-free (a'(1) + 2 b'(1) + c'(1) != 0)");
    fit_stiffness(m, p.fit);
    return m;
}

/// Projective Dynamics as-rigid-as-possible tet material: w/2 |F - R|^2 with w = V k.
struct ArapMaterial {
    double stiffness = 0.0;
};

struct ElementEval {
    double energy = 0.0;
    Eigen::Matrix<double, 4, 3> gradient = Eigen::Matrix<double, 4, 3>::Zero();  // one row per vertex
};

/// Energy V psi(sigma(F)) of one tet and its gradient with respect to the tet's vertex rows.
inline ElementEval element_energy_gradient(const MaterialModel& m, const DiffOperator& op, double volume,
                                           const Positions& x) {
    const Mat3 f = op.apply(x).transpose();
    const RotVarSVD svd = svd_rv(f);
    ElementEval out;
    out.energy = volume * vl_energy(m, svd.sigma);
    const Mat3 piola = svd.U * vl_stress(m, svd.sigma).asDiagonal() * svd.V.transpose();
    out.gradient = volume * op.block.transpose() * piola.transpose();
    return out;
}

} // namespace qnsim
