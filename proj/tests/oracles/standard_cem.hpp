#pragma once

// Standard complete electrode model assembled from scratch: contact
// impedances z_m, closed-form P1 boundary mass matrices, ground fixed by a
// Lagrange multiplier on sum(U) = 0, sparse LU with refinement in long
// double. Shares no code with the library solver beyond the mesh container.

#include "cranio/forward.hpp"

#include <Eigen/SparseLU>

#include <vector>

namespace oracle {

struct CemSolution {
  Eigen::VectorXd u, U;
};

class StandardCem {
 public:
  StandardCem(const cranio::FemMesh& mesh, const Eigen::VectorXd& sigma, const Eigen::VectorXd& z) {
    n_ = mesh.node_count();
    M_ = mesh.electrode_count();
    const int N = n_ + M_ + 1;
    std::vector<Eigen::Triplet<double>> t;
    for (const auto& T : mesh.tets) {
      Eigen::Matrix4d P;
      for (int i = 0; i < 4; ++i) P.row(i) << 1.0, mesh.nodes[T[i]].transpose();
      const double vol = std::abs(P.determinant()) / 6.0;
      // rows 1..3 of P^-1 hold the gradients of the barycentric coordinates
      const Eigen::Matrix4d C = P.inverse();
      const Eigen::Matrix<double, 3, 4> G = C.bottomRows(3);
      double s = 0;
      for (int i = 0; i < 4; ++i) s += sigma(T[i]) / 4;
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) t.emplace_back(T[i], T[j], s * vol * G.col(i).dot(G.col(j)));
    }
    for (std::size_t k = 0; k < mesh.boundary.size(); ++k) {
      const int m = mesh.region[k] - 1;
      if (m < 0) continue;
      const auto& T = mesh.boundary[k];
      const double a = 0.5 * (mesh.nodes[T[1]] - mesh.nodes[T[0]]).cross(mesh.nodes[T[2]] - mesh.nodes[T[0]]).norm();
      const double y = 1.0 / z(m);
      for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) t.emplace_back(T[i], T[j], y * a * (i == j ? 2.0 : 1.0) / 12.0);
        t.emplace_back(T[i], n_ + m, -y * a / 3.0);
        t.emplace_back(n_ + m, T[i], -y * a / 3.0);
      }
      t.emplace_back(n_ + m, n_ + m, y * a);
    }
    for (int m = 0; m < M_; ++m) {
      t.emplace_back(n_ + m, n_ + M_, 1.0);
      t.emplace_back(n_ + M_, n_ + m, 1.0);
    }
    A_.resize(N, N);
    A_.setFromTriplets(t.begin(), t.end());
    A_.makeCompressed();
    lu_.analyzePattern(A_);
    lu_.factorize(A_);
  }

  bool ok() const { return lu_.info() == Eigen::Success; }

  CemSolution solve(const Eigen::VectorXd& I) {
    Eigen::VectorXd b = Eigen::VectorXd::Zero(A_.rows());
    b.segment(n_, M_) = I;
    Eigen::VectorXd x = lu_.solve(b);
    for (int sweep = 0; sweep < 6; ++sweep) {
      std::vector<long double> r(b.size());
      for (int i = 0; i < b.size(); ++i) r[i] = b(i);
      for (int k = 0; k < A_.outerSize(); ++k)
        for (Eigen::SparseMatrix<double>::InnerIterator it(A_, k); it; ++it)
          r[it.row()] -= static_cast<long double>(it.value()) * x(k);
      Eigen::VectorXd rd(b.size());
      for (int i = 0; i < b.size(); ++i) rd(i) = static_cast<double>(r[i]);
      x += lu_.solve(rd);
    }
    return {x.head(n_), x.segment(n_, M_)};
  }

 private:
  int n_ = 0, M_ = 0;
  Eigen::SparseMatrix<double> A_;
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu_;
};

}  // namespace oracle
