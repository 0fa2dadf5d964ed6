#pragma once

// Coordinates, patch embeddings and L2 metrics for the circle S1, the Klein
// bottle K, the translational Klein bottle K^t and its tangent bundle T(K^t).
//
// Patches live on the square [-1,1]^2 (videos on [-1,1]^3, time last). All
// functions here are pure.

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tcnn {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;

/// Tolerance used when deciding whether two angles coincide modulo 2*pi.
inline constexpr double kAngleTolerance = 1e-9;

struct CirclePoint {
  double theta = 0.0;
};

struct KleinPoint {
  double theta1 = 0.0;
  double theta2 = 0.0;
};

/// Klein patch translated by `r` along the direction (cos theta1, sin theta1).
struct TransKleinPoint {
  double theta1 = 0.0;
  double theta2 = 0.0;
  double r = 0.0;
};

/// Point of T(K^t): a base point plus the velocity (u, v, w) of
/// (theta1, theta2, r). Evaluated as a video, frame t shows the base point
/// advanced by t times the velocity.
struct TangentKleinPoint {
  TransKleinPoint base;
  double u = 0.0;
  double v = 0.0;
  double w = 0.0;
};

/// Gauss-Legendre rule on [-1, 1].
class QuadratureRule {
public:
  /// Exact for polynomials up to degree 2*order-1. Throws DomainError for order 0.
  static QuadratureRule gauss_legendre(std::size_t order);

  /// Default rule for the metrics and cell averages (order 8).
  static const QuadratureRule& standard();

  std::size_t order() const noexcept { return nodes_.size(); }
  std::span<const double> nodes() const noexcept { return nodes_; }
  std::span<const double> weights() const noexcept { return weights_; }

  /// Integral of f over [a, b].
  template <typename F>
  double integrate(F&& f, double a, double b) const {
    const double half = 0.5 * (b - a);
    const double mid = 0.5 * (a + b);
    double acc = 0.0;
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      acc += weights_[i] * f(mid + half * nodes_[i]);
    return acc * half;
  }

private:
  QuadratureRule(std::vector<double> nodes, std::vector<double> weights)
      : nodes_(std::move(nodes)), weights_(std::move(weights)) {}

  std::vector<double> nodes_;
  std::vector<double> weights_;
};

/// The five 2-dimensional submanifolds of T(K^t) used for video filters.
enum class Submanifold { klein_static, trans_plus, trans_minus, rot_plus, rot_minus };

inline constexpr Submanifold kAllSubmanifolds[] = {
    Submanifold::klein_static, Submanifold::trans_plus, Submanifold::trans_minus,
    Submanifold::rot_plus, Submanifold::rot_minus};

/// "K-static", "S-trans+", "S-trans-", "S-rot+", "S-rot-".
std::string_view to_string(Submanifold tag);
/// Inverse of to_string; throws DomainError on unknown tags.
Submanifold parse_submanifold(std::string_view tag);

// --- canonical forms --------------------------------------------------------

/// Reduces an angle into [0, 2*pi).
double wrap_angle(double angle);

CirclePoint canonicalize_circle(double theta);

/// Maps (theta1, theta2) into [0, pi) x [0, 2*pi) using 2*pi periodicity and
/// the glide (theta1, theta2) ~ (theta1 + pi, -theta2).
KleinPoint canonicalize_klein(double theta1, double theta2);

/// Same fundamental domain for theta1; the glide also negates r.
TransKleinPoint canonicalize(const TransKleinPoint& p);

/// Canonicalizes the base point; a glide also negates v and w, which keeps the
/// video identical.
TangentKleinPoint canonicalize(const TangentKleinPoint& q);

/// True when the two raw coordinate pairs name the same point of K.
bool klein_equivalent(const KleinPoint& a, const KleinPoint& b,
                      double tolerance = kAngleTolerance);

// --- embeddings ---------------------------------------------------------------

inline double klein_q(double t) { return 2.0 * t * t - 1.0; }

/// sin(t2) * z + cos(t2) * Q(z), z = cos(t1) x + sin(t1) y.
double eval_klein(const KleinPoint& p, double x, double y);

/// cos(theta) x + sin(theta) y, the primary circle theta2 = pi/2.
double eval_circle(double theta, double x, double y);

double eval_trans_klein(const TransKleinPoint& p, double x, double y);

/// Frame t of the video: eval_trans_klein at (theta1 + t u, theta2 + t v, r + t w).
double eval_tangent_klein(const TangentKleinPoint& q, double x, double y, double t);

// --- metrics ------------------------------------------------------------------

/// Geodesic (arc) distance on S1, in [0, pi].
double dist_circle(const CirclePoint& a, const CirclePoint& b);

/// L2 distance between the two patches over [-1,1]^2.
double dist_klein(const KleinPoint& a, const KleinPoint& b,
                  const QuadratureRule& rule = QuadratureRule::standard());

/// L2 distance between the two videos over [-1,1]^3.
double dist_tangent_klein(const TangentKleinPoint& a, const TangentKleinPoint& b,
                          const QuadratureRule& rule = QuadratureRule::standard());

// --- discretizations ----------------------------------------------------------

/// The n-th roots of unity: angles 2*pi*k/n.
std::vector<CirclePoint> discretize_circle(std::size_t n);

/// theta1 = k*pi/n1, theta2 = 2*pi*l/n2, ordered theta2-major
/// (index = l*n1 + k) so each theta2 value forms a contiguous row.
std::vector<KleinPoint> discretize_klein(std::size_t n1, std::size_t n2);

/// The point of the tagged submanifold over `base` (r = 0, velocity fixed by the tag).
TangentKleinPoint submanifold_point(Submanifold tag, const KleinPoint& base);

/// discretize_klein grid lifted into T(K^t) with (r,u,v,w) fixed by the tag:
/// static (0,0,0,0), trans+- (0,0,0,+-1), rot+- (0,+-1,0,0).
std::vector<TangentKleinPoint> discretize_submanifold(Submanifold tag, std::size_t n1,
                                                      std::size_t n2);

} // namespace tcnn
