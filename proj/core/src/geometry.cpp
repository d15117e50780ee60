#include "panoloc/geometry.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace panoloc {

namespace {
constexpr double kRotationTol = 1e-6;
}

double rotation_defect(const Eigen::Matrix3d& r) {
  return (r.transpose() * r - Eigen::Matrix3d::Identity()).norm();
}

std::vector<Pose> load_poses(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_poses: cannot open " + path);

  std::vector<Pose> poses;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    Pose p;
    double v[12];
    ss >> p.frame_id;
    for (int i = 0; i < 12; ++i) ss >> v[i];
    if (ss.fail()) {
      throw std::runtime_error("load_poses: malformed line " + std::to_string(line_no) + " in " +
                               path + " (expected frame_id + 12 reals)");
    }
    std::string extra;
    if (ss >> extra) {
      throw std::runtime_error("load_poses: trailing fields on line " + std::to_string(line_no) +
                               " in " + path);
    }
    p.rotation << v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10];
    p.position << v[3], v[7], v[11];
    const double defect = rotation_defect(p.rotation);
    if (defect > kRotationTol || p.rotation.determinant() < 0.0) {
      std::ostringstream msg;
      msg << "load_poses: non-orthonormal rotation on line " << line_no << " in " << path
          << " (defect " << defect << ", tolerance " << kRotationTol << ", det "
          << p.rotation.determinant() << ")";
      throw std::runtime_error(msg.str());
    }
    poses.push_back(p);
  }
  std::stable_sort(poses.begin(), poses.end(),
                   [](const Pose& a, const Pose& b) { return a.frame_id < b.frame_id; });
  return poses;
}

void save_poses(const std::string& path, const std::vector<Pose>& poses) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_poses: cannot open " + path);
  char buf[64];
  for (const Pose& p : poses) {
    out << p.frame_id;
    const Eigen::Matrix3d& r = p.rotation;
    const double vals[12] = {r(0, 0), r(0, 1), r(0, 2), p.position.x(),
                             r(1, 0), r(1, 1), r(1, 2), p.position.y(),
                             r(2, 0), r(2, 1), r(2, 2), p.position.z()};
    for (double v : vals) {
      std::snprintf(buf, sizeof(buf), " %.17g", v);
      out << buf;
    }
    out << '\n';
  }
}

}  // namespace panoloc
