#include "tcnn/geometry.hpp"

#include <cmath>

#include "tcnn/error.hpp"

namespace tcnn {

namespace {

void require_finite(double value, const char* what) {
  if (!std::isfinite(value))
    throw DomainError(std::string(what) + " must be finite");
}

// Legendre P_n and its derivative at x via the three-term recurrence.
void legendre(std::size_t n, double x, double& p, double& dp) {
  double p0 = 1.0;
  double p1 = x;
  if (n == 0) {
    p = 1.0;
    dp = 0.0;
    return;
  }
  for (std::size_t k = 2; k <= n; ++k) {
    const double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / static_cast<double>(k);
    p0 = p1;
    p1 = pk;
  }
  p = p1;
  dp = static_cast<double>(n) * (x * p1 - p0) / (x * x - 1.0);
}

bool angle_close(double a, double b, double tolerance) {
  return std::abs(std::remainder(a - b, kTwoPi)) <= tolerance;
}

} // namespace

QuadratureRule QuadratureRule::gauss_legendre(std::size_t order) {
  if (order == 0) throw DomainError("quadrature order must be positive");
  std::vector<double> nodes(order);
  std::vector<double> weights(order);
  const std::size_t half = (order + 1) / 2;
  for (std::size_t i = 0; i < half; ++i) {
    double x = std::cos(kPi * (i + 0.75) / (order + 0.5));
    double p = 0.0;
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      legendre(order, x, p, dp);
      const double dx = p / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    legendre(order, x, p, dp);
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    nodes[i] = -x;
    nodes[order - 1 - i] = x;
    weights[i] = w;
    weights[order - 1 - i] = w;
  }
  if (order % 2 == 1) nodes[order / 2] = 0.0;
  return QuadratureRule(std::move(nodes), std::move(weights));
}

const QuadratureRule& QuadratureRule::standard() {
  static const QuadratureRule rule = gauss_legendre(8);
  return rule;
}

std::string_view to_string(Submanifold tag) {
  switch (tag) {
  case Submanifold::klein_static: return "K-static";
  case Submanifold::trans_plus: return "S-trans+";
  case Submanifold::trans_minus: return "S-trans-";
  case Submanifold::rot_plus: return "S-rot+";
  case Submanifold::rot_minus: return "S-rot-";
  }
  return "?";
}

Submanifold parse_submanifold(std::string_view tag) {
  for (Submanifold s : kAllSubmanifolds)
    if (to_string(s) == tag) return s;
  throw DomainError("unknown submanifold tag '" + std::string(tag) + "'");
}

double wrap_angle(double angle) {
  double r = std::fmod(angle, kTwoPi);
  if (r < 0.0) r += kTwoPi;
  if (r >= kTwoPi) r = 0.0;
  return r;
}

CirclePoint canonicalize_circle(double theta) {
  require_finite(theta, "theta");
  return {wrap_angle(theta)};
}

KleinPoint canonicalize_klein(double theta1, double theta2) {
  require_finite(theta1, "theta1");
  require_finite(theta2, "theta2");
  double t1 = wrap_angle(theta1);
  double t2 = theta2;
  if (t1 >= kPi) {
    t1 -= kPi;
    t2 = -t2;
  }
  return {t1, wrap_angle(t2)};
}

TransKleinPoint canonicalize(const TransKleinPoint& p) {
  require_finite(p.r, "r");
  const bool glide = wrap_angle(p.theta1) >= kPi;
  const KleinPoint k = canonicalize_klein(p.theta1, p.theta2);
  return {k.theta1, k.theta2, glide ? -p.r : p.r};
}

TangentKleinPoint canonicalize(const TangentKleinPoint& q) {
  require_finite(q.u, "u");
  require_finite(q.v, "v");
  require_finite(q.w, "w");
  const bool glide = wrap_angle(q.base.theta1) >= kPi;
  TangentKleinPoint out;
  out.base = canonicalize(q.base);
  out.u = q.u;
  out.v = glide ? -q.v : q.v;
  out.w = glide ? -q.w : q.w;
  return out;
}

bool klein_equivalent(const KleinPoint& a, const KleinPoint& b, double tolerance) {
  if (angle_close(a.theta1, b.theta1, tolerance) && angle_close(a.theta2, b.theta2, tolerance))
    return true;
  return angle_close(a.theta1, b.theta1 + kPi, tolerance) &&
         angle_close(a.theta2, -b.theta2, tolerance);
}

double eval_klein(const KleinPoint& p, double x, double y) {
  const double z = std::cos(p.theta1) * x + std::sin(p.theta1) * y;
  return std::sin(p.theta2) * z + std::cos(p.theta2) * klein_q(z);
}

double eval_circle(double theta, double x, double y) {
  return std::cos(theta) * x + std::sin(theta) * y;
}

double eval_trans_klein(const TransKleinPoint& p, double x, double y) {
  const double c = std::cos(p.theta1);
  const double s = std::sin(p.theta1);
  const double z = c * (x + p.r * c) + s * (y + p.r * s);
  return std::sin(p.theta2) * z + std::cos(p.theta2) * klein_q(z);
}

double eval_tangent_klein(const TangentKleinPoint& q, double x, double y, double t) {
  const TransKleinPoint moved{q.base.theta1 + t * q.u, q.base.theta2 + t * q.v,
                              q.base.r + t * q.w};
  return eval_trans_klein(moved, x, y);
}

double dist_circle(const CirclePoint& a, const CirclePoint& b) {
  return std::abs(std::remainder(a.theta - b.theta, kTwoPi));
}

double dist_klein(const KleinPoint& a, const KleinPoint& b, const QuadratureRule& rule) {
  double acc = 0.0;
  const auto nodes = rule.nodes();
  const auto weights = rule.weights();
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    for (std::size_t j = 0; j < nodes.size(); ++j) {
      const double d = eval_klein(a, nodes[j], nodes[i]) - eval_klein(b, nodes[j], nodes[i]);
      acc += weights[i] * weights[j] * d * d;
    }
  }
  return std::sqrt(acc);
}

double dist_tangent_klein(const TangentKleinPoint& a, const TangentKleinPoint& b,
                          const QuadratureRule& rule) {
  double acc = 0.0;
  const auto nodes = rule.nodes();
  const auto weights = rule.weights();
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      for (std::size_t j = 0; j < nodes.size(); ++j) {
        const double d = eval_tangent_klein(a, nodes[j], nodes[i], nodes[k]) -
                         eval_tangent_klein(b, nodes[j], nodes[i], nodes[k]);
        acc += weights[k] * weights[i] * weights[j] * d * d;
      }
    }
  }
  return std::sqrt(acc);
}

std::vector<CirclePoint> discretize_circle(std::size_t n) {
  if (n == 0) throw DomainError("circle discretization needs n >= 1");
  std::vector<CirclePoint> points(n);
  for (std::size_t k = 0; k < n; ++k)
    points[k].theta = kTwoPi * static_cast<double>(k) / static_cast<double>(n);
  return points;
}

std::vector<KleinPoint> discretize_klein(std::size_t n1, std::size_t n2) {
  if (n1 == 0 || n2 == 0) throw DomainError("Klein discretization needs n1, n2 >= 1");
  std::vector<KleinPoint> points;
  points.reserve(n1 * n2);
  for (std::size_t l = 0; l < n2; ++l)
    for (std::size_t k = 0; k < n1; ++k)
      points.push_back({kPi * static_cast<double>(k) / static_cast<double>(n1),
                        kTwoPi * static_cast<double>(l) / static_cast<double>(n2)});
  return points;
}

TangentKleinPoint submanifold_point(Submanifold tag, const KleinPoint& base) {
  TangentKleinPoint q;
  q.base = {base.theta1, base.theta2, 0.0};
  switch (tag) {
  case Submanifold::klein_static: break;
  case Submanifold::trans_plus: q.w = 1.0; break;
  case Submanifold::trans_minus: q.w = -1.0; break;
  case Submanifold::rot_plus: q.u = 1.0; break;
  case Submanifold::rot_minus: q.u = -1.0; break;
  default: throw DomainError("unknown submanifold tag");
  }
  return q;
}

std::vector<TangentKleinPoint> discretize_submanifold(Submanifold tag, std::size_t n1,
                                                      std::size_t n2) {
  std::vector<TangentKleinPoint> points;
  for (const KleinPoint& k : discretize_klein(n1, n2)) points.push_back(submanifold_point(tag, k));
  return points;
}

} // namespace tcnn
