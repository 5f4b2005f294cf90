#pragma once

#include <charconv>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "larpg/problem.hpp"

namespace larpg {

// Raw "Bundle Adjustment in the Large" dataset: cameras as Rodrigues rotation
// + translation + (focal, k1, k2), 3D points, and pixel observations.
struct BalCamera {
  Eigen::Vector3d rodrigues = Eigen::Vector3d::Zero();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  double focal = 1.0;
  double k1 = 0.0;
  double k2 = 0.0;
};

struct BalObservation {
  int camera = 0;
  int point = 0;
  double u = 0.0;
  double v = 0.0;
};

struct BalDataset {
  std::vector<BalCamera> cameras;
  std::vector<Eigen::Vector3d> points;
  std::vector<BalObservation> observations;
};

namespace detail {

// Whitespace token reader that remembers line numbers for diagnostics.
class TokenReader {
 public:
  explicit TokenReader(std::istream& in) : in_(in) {}

  double next_double(const char* what) {
    const std::string tok = next_token(what);
    try {
      std::size_t used = 0;
      const double v = std::stod(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
      return v;
    } catch (const std::exception&) {
      fail(std::string("expected a number for ") + what + ", got '" + tok +
           "'");
    }
  }

  long long next_int(const char* what) {
    const std::string tok = next_token(what);
    long long v = 0;
    const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc() || res.ptr != tok.data() + tok.size())
      fail(std::string("expected an integer for ") + what + ", got '" + tok +
           "'");
    return v;
  }

  int line() const { return line_; }

  [[noreturn]] void fail(const std::string& message) const {
    throw std::runtime_error("BAL parse error at line " +
                             std::to_string(line_) + ": " + message);
  }

 private:
  std::string next_token(const char* what) {
    std::string tok;
    int c;
    while ((c = in_.get()) != EOF) {
      if (c == '\n') {
        if (!tok.empty()) {
          in_.unget();
          return tok;
        }
        ++line_;
      } else if (std::isspace(c)) {
        if (!tok.empty()) return tok;
      } else {
        tok.push_back(static_cast<char>(c));
      }
    }
    if (tok.empty())
      fail(std::string("unexpected end of file while reading ") + what);
    return tok;
  }

  std::istream& in_;
  int line_ = 1;
};

}  // namespace detail

inline BalDataset parse_bal(std::istream& in) {
  detail::TokenReader reader(in);
  const long long n_cam = reader.next_int("num_cameras");
  const long long n_pts = reader.next_int("num_points");
  const long long n_obs = reader.next_int("num_observations");
  if (n_cam < 1 || n_pts < 1 || n_obs < 0)
    reader.fail("header counts must be positive");

  BalDataset out;
  out.observations.reserve(n_obs);
  for (long long i = 0; i < n_obs; ++i) {
    BalObservation obs;
    obs.camera = static_cast<int>(reader.next_int("observation camera index"));
    obs.point = static_cast<int>(reader.next_int("observation point index"));
    obs.u = reader.next_double("observation u");
    obs.v = reader.next_double("observation v");
    if (obs.camera < 0 || obs.camera >= n_cam)
      reader.fail("observation " + std::to_string(i) +
                  " has camera index out of range");
    if (obs.point < 0 || obs.point >= n_pts)
      reader.fail("observation " + std::to_string(i) +
                  " has point index out of range");
    out.observations.push_back(obs);
  }
  out.cameras.reserve(n_cam);
  for (long long c = 0; c < n_cam; ++c) {
    BalCamera cam;
    for (int k = 0; k < 3; ++k)
      cam.rodrigues[k] = reader.next_double("camera rotation");
    for (int k = 0; k < 3; ++k)
      cam.translation[k] = reader.next_double("camera translation");
    cam.focal = reader.next_double("camera focal");
    cam.k1 = reader.next_double("camera k1");
    cam.k2 = reader.next_double("camera k2");
    out.cameras.push_back(cam);
  }
  out.points.reserve(n_pts);
  for (long long p = 0; p < n_pts; ++p) {
    Eigen::Vector3d pt;
    for (int k = 0; k < 3; ++k) pt[k] = reader.next_double("point coordinate");
    out.points.push_back(pt);
  }
  return out;
}

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v,
                                 std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

inline void write_bal(const BalDataset& data, std::ostream& out) {
  out << data.cameras.size() << ' ' << data.points.size() << ' '
      << data.observations.size() << '\n';
  for (const auto& obs : data.observations)
    out << obs.camera << ' ' << obs.point << ' ' << format_double(obs.u) << ' '
        << format_double(obs.v) << '\n';
  for (const auto& cam : data.cameras) {
    for (int k = 0; k < 3; ++k) out << format_double(cam.rodrigues[k]) << '\n';
    for (int k = 0; k < 3; ++k)
      out << format_double(cam.translation[k]) << '\n';
    out << format_double(cam.focal) << '\n'
        << format_double(cam.k1) << '\n'
        << format_double(cam.k2) << '\n';
  }
  for (const auto& pt : data.points)
    for (int k = 0; k < 3; ++k) out << format_double(pt[k]) << '\n';
  if (!out) throw std::runtime_error("write_bal: stream write failed");
}

// BAL cameras view down their -z axis and project p = -P/P.z. Conjugating by
// S = diag(1,-1,-1) (a 180-degree rotation about x) and negating the v pixel
// coordinate maps that model onto our +z pinhole exactly:
//   R -> S R, t -> S t, (u, v) -> (u, -v).
// Camera centers -R^T t are unchanged, so ATE is unaffected. Focal and
// distortion become fixed intrinsics (cx = cy = 0) and are not optimized.
inline FlatProblem bal_to_flat(const BalDataset& data) {
  const Eigen::Vector3d flip(1.0, -1.0, -1.0);
  FlatProblem flat;
  flat.cameras.reserve(data.cameras.size());
  flat.intrinsics.reserve(data.cameras.size());
  for (const auto& cam : data.cameras) {
    const double angle = cam.rodrigues.norm();
    const Eigen::Vector3d axis =
        angle > 0 ? (cam.rodrigues / angle).eval() : Eigen::Vector3d::UnitX();
    Eigen::Matrix3d r =
        Eigen::AngleAxisd(angle, axis).toRotationMatrix();
    Pose pose;
    pose.rotation =
        Eigen::Quaterniond(flip.asDiagonal() * r).normalized();
    pose.translation = flip.asDiagonal() * cam.translation;
    flat.cameras.push_back(pose);
    CameraIntrinsics intr;
    intr.fx = intr.fy = cam.focal;
    intr.k1 = cam.k1;
    intr.k2 = cam.k2;
    flat.intrinsics.push_back(intr);
  }
  flat.points = data.points;
  flat.observations.reserve(data.observations.size());
  for (const auto& obs : data.observations) {
    FlatProblem::Obs o;
    o.camera = obs.camera;
    o.point = obs.point;
    o.measurement << obs.u, -obs.v, 0.0;
    flat.observations.push_back(o);
  }
  return flat;
}

// Inverse of bal_to_flat for synthetic export; only valid for problems with
// cx = cy = 0 and fx = fy.
inline BalDataset flat_to_bal(const FlatProblem& flat) {
  const Eigen::Vector3d flip(1.0, -1.0, -1.0);
  BalDataset data;
  data.cameras.reserve(flat.cameras.size());
  for (std::size_t c = 0; c < flat.cameras.size(); ++c) {
    const Pose& pose = flat.cameras[c];
    const CameraIntrinsics& intr = flat.intrinsics[c];
    if (intr.cx != 0.0 || intr.cy != 0.0 || intr.fx != intr.fy)
      throw std::invalid_argument(
          "flat_to_bal: camera model not representable in BAL");
    BalCamera cam;
    const Eigen::Matrix3d r =
        flip.asDiagonal() * pose.rotation.toRotationMatrix();
    const Eigen::AngleAxisd aa(r);
    cam.rodrigues = aa.angle() * aa.axis();
    cam.translation = flip.asDiagonal() * pose.translation;
    cam.focal = intr.fx;
    cam.k1 = intr.k1;
    cam.k2 = intr.k2;
    data.cameras.push_back(cam);
  }
  data.points = flat.points;
  data.observations.reserve(flat.observations.size());
  for (const auto& o : flat.observations) {
    if (o.kind != ObsKind::kReprojection)
      throw std::invalid_argument("flat_to_bal: only reprojection factors");
    BalObservation obs;
    obs.camera = o.camera;
    obs.point = o.point;
    obs.u = o.measurement.x();
    obs.v = -o.measurement.y();
    data.observations.push_back(obs);
  }
  return data;
}

}  // namespace larpg
