#pragma once

#include <Eigen/Core>

#include <string>
#include <vector>

namespace panoloc {

// Rigid pose in the map frame. Pose files follow the KITTI odometry layout:
// one line per frame, "frame_id r00 r01 r02 tx r10 r11 r12 ty r20 r21 r22 tz"
// (row-major 3x4 transform).
struct Pose {
  long frame_id = 0;
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();

  // Heading (yaw) of the pose's forward axis, in radians.
  double heading() const { return std::atan2(rotation(1, 0), rotation(0, 0)); }
};

// Orthonormality defect ||R^T R - I||_F used for validation reports.
double rotation_defect(const Eigen::Matrix3d& r);

// Parses and validates a pose file; poses come back sorted by frame_id.
// Malformed lines and non-orthonormal rotations are rejected with the line
// number and measured defect in the message.
std::vector<Pose> load_poses(const std::string& path);

// Full-precision writer; load_poses(save_poses(x)) reproduces x bit-exactly.
void save_poses(const std::string& path, const std::vector<Pose>& poses);

}  // namespace panoloc
