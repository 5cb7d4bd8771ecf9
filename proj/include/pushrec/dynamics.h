// Copyright 2026 The pushrec Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef PUSHREC_DYNAMICS_H_
#define PUSHREC_DYNAMICS_H_

// Planar pinned chain of three point masses. Link i runs from point i-1
// (point 0 is the pivot) to point i, where mass i sits. Configuration is
// given in absolute link angles theta measured from the upward vertical,
// positive toward +x, so point i = point i-1 + l_i (sin theta_i, cos theta_i).
//
// Equations of motion:
//   M(theta) theta_dd + c(theta, theta_d) + g(theta) = Q
// with M_ij = mu_ij l_i l_j cos(theta_i - theta_j), mu_ij = sum_{k>=max(i,j)} m_k,
// c_i = sum_j mu_ij l_i l_j sin(theta_i - theta_j) theta_d_j^2 and
// g = dV/dtheta for V = sum_k m_k gravity z_k.

#include <algorithm>
#include <array>
#include <cmath>

#include <Eigen/Dense>

namespace pushrec {

template <typename Scalar>
struct ChainModel {
  using Vector3 = Eigen::Matrix<Scalar, 3, 1>;
  Vector3 length = Vector3::Constant(Scalar(1));
  Vector3 mass = Vector3::Constant(Scalar(1));
  Scalar gravity = Scalar(9.81);

  // Sum of masses at and beyond link max(i, j).
  Scalar OutboardMass(int i, int j) const {
    Scalar total(0);
    for (int k = std::max(i, j); k < 3; ++k) total += mass[k];
    return total;
  }
};

template <typename Scalar>
Eigen::Matrix<Scalar, 3, 3> MassMatrix(
    const ChainModel<Scalar>& model,
    const Eigen::Matrix<Scalar, 3, 1>& theta) {
  Eigen::Matrix<Scalar, 3, 3> m;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      using std::cos;
      m(i, j) = model.OutboardMass(i, j) * model.length[i] * model.length[j] *
                cos(theta[i] - theta[j]);
    }
  }
  return m;
}

// Velocity-product terms c(theta, theta_d).
template <typename Scalar>
Eigen::Matrix<Scalar, 3, 1> CoriolisVector(
    const ChainModel<Scalar>& model, const Eigen::Matrix<Scalar, 3, 1>& theta,
    const Eigen::Matrix<Scalar, 3, 1>& theta_dot) {
  Eigen::Matrix<Scalar, 3, 1> c = Eigen::Matrix<Scalar, 3, 1>::Zero();
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      using std::sin;
      c[i] += model.OutboardMass(i, j) * model.length[i] * model.length[j] *
              sin(theta[i] - theta[j]) * theta_dot[j] * theta_dot[j];
    }
  }
  return c;
}

// Gradient of the potential energy with respect to theta.
template <typename Scalar>
Eigen::Matrix<Scalar, 3, 1> GravityVector(
    const ChainModel<Scalar>& model,
    const Eigen::Matrix<Scalar, 3, 1>& theta) {
  Eigen::Matrix<Scalar, 3, 1> g;
  for (int i = 0; i < 3; ++i) {
    using std::sin;
    g[i] = -model.OutboardMass(i, i) * model.gravity * model.length[i] *
           sin(theta[i]);
  }
  return g;
}

// Point positions relative to the pivot.
template <typename Scalar>
std::array<Eigen::Matrix<Scalar, 2, 1>, 3> PointPositions(
    const ChainModel<Scalar>& model,
    const Eigen::Matrix<Scalar, 3, 1>& theta) {
  std::array<Eigen::Matrix<Scalar, 2, 1>, 3> p;
  Eigen::Matrix<Scalar, 2, 1> cursor = Eigen::Matrix<Scalar, 2, 1>::Zero();
  for (int i = 0; i < 3; ++i) {
    using std::cos;
    using std::sin;
    cursor += model.length[i] *
              Eigen::Matrix<Scalar, 2, 1>(sin(theta[i]), cos(theta[i]));
    p[i] = cursor;
  }
  return p;
}

// Jacobian of point k (0-based) with respect to theta: 2x3.
template <typename Scalar>
Eigen::Matrix<Scalar, 2, 3> PointJacobian(
    const ChainModel<Scalar>& model, const Eigen::Matrix<Scalar, 3, 1>& theta,
    int k) {
  Eigen::Matrix<Scalar, 2, 3> jac = Eigen::Matrix<Scalar, 2, 3>::Zero();
  for (int i = 0; i <= k; ++i) {
    using std::cos;
    using std::sin;
    jac(0, i) = model.length[i] * cos(theta[i]);
    jac(1, i) = -model.length[i] * sin(theta[i]);
  }
  return jac;
}

template <typename Scalar>
Scalar PotentialEnergy(const ChainModel<Scalar>& model,
                       const Eigen::Matrix<Scalar, 3, 1>& theta) {
  const auto p = PointPositions(model, theta);
  Scalar v(0);
  for (int k = 0; k < 3; ++k) v += model.mass[k] * model.gravity * p[k].y();
  return v;
}

template <typename Scalar>
Scalar KineticEnergy(const ChainModel<Scalar>& model,
                     const Eigen::Matrix<Scalar, 3, 1>& theta,
                     const Eigen::Matrix<Scalar, 3, 1>& theta_dot) {
  return Scalar(0.5) * theta_dot.dot(MassMatrix(model, theta) * theta_dot);
}

// Relative joint angles q = S theta, so joint torques map to Q = S^T tau.
template <typename Scalar>
Eigen::Matrix<Scalar, 3, 3> JointSelection() {
  Eigen::Matrix<Scalar, 3, 3> s;
  s << 1, 0, 0, -1, 1, 0, 0, -1, 1;
  return s;
}

template <typename Scalar>
Eigen::Matrix<Scalar, 3, 1> AbsoluteFromJoint(
    const Eigen::Matrix<Scalar, 3, 1>& q) {
  return Eigen::Matrix<Scalar, 3, 1>(q[0], q[0] + q[1], q[0] + q[1] + q[2]);
}

template <typename Scalar>
Eigen::Matrix<Scalar, 3, 1> JointFromAbsolute(
    const Eigen::Matrix<Scalar, 3, 1>& theta) {
  return Eigen::Matrix<Scalar, 3, 1>(theta[0], theta[1] - theta[0],
                                     theta[2] - theta[1]);
}

// Angular accelerations for joint torques tau and generalized external
// force q_ext (already mapped through the point Jacobians).
template <typename Scalar>
Eigen::Matrix<Scalar, 3, 1> ForwardDynamics(
    const ChainModel<Scalar>& model, const Eigen::Matrix<Scalar, 3, 1>& theta,
    const Eigen::Matrix<Scalar, 3, 1>& theta_dot,
    const Eigen::Matrix<Scalar, 3, 1>& tau,
    const Eigen::Matrix<Scalar, 3, 1>& q_ext) {
  const Eigen::Matrix<Scalar, 3, 1> rhs =
      JointSelection<Scalar>().transpose() * tau + q_ext -
      CoriolisVector(model, theta, theta_dot) - GravityVector(model, theta);
  return MassMatrix(model, theta).ldlt().solve(rhs);
}

}  // namespace pushrec

#endif  // PUSHREC_DYNAMICS_H_
