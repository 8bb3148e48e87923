"""Dense small-matrix kernel: Riccati/Lyapunov solvers, rank tests, RK4, FD Jacobians.

Every function is a pure function of its inputs and safe to call from any
number of threads.  Problem sizes are desk scale (n <= 8), so full
eigendecompositions and the O(n^6) Kronecker Lyapunov solve are acceptable.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    BadWeights,
    NonFiniteDerivative,
    NotHurwitz,
    NotStabilizable,
    SingularSubspace,
)

DEFAULT_CARE_TOL = 1e-9
DEFAULT_RANK_TOL = 1e-9

# Beyond this condition number of the eigenvector block X1 the subspace
# solution is not trusted and the Newton-Kleinman fallback takes over.
_X1_COND_LIMIT = 1e10
_NK_MAX_ITER = 60


def symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def is_symmetric(m: np.ndarray, tol: float = 1e-12) -> bool:
    m = np.asarray(m, dtype=float)
    bound = tol * (1.0 + float(np.abs(m).max(initial=0.0)))
    return float(np.abs(m - m.T).max(initial=0.0)) <= bound


def _as_matrix(m, name: str) -> np.ndarray:
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.ndim != 2:
        raise ValueError(f"{name} must be a matrix, got ndim={m.ndim}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} has non-finite entries")
    return m


def check_weights(q: np.ndarray, r: np.ndarray) -> None:
    """Q must be symmetric PSD (eigs >= -1e-10), R symmetric PD (eigs >= 1e-10)."""
    if not is_symmetric(q, 1e-10):
        raise BadWeights("Q is not symmetric")
    if not is_symmetric(r, 1e-10):
        raise BadWeights("R is not symmetric")
    if float(np.linalg.eigvalsh(symmetrize(q)).min()) < -1e-10:
        raise BadWeights("Q is not positive semidefinite")
    if float(np.linalg.eigvalsh(symmetrize(r)).min()) < 1e-10:
        raise BadWeights("R is not positive definite")


@dataclass(frozen=True, eq=False)
class CareProblem:
    """Continuous algebraic Riccati problem A'P + PA - P B R^-1 B' P + Q = 0."""

    a: np.ndarray
    b: np.ndarray
    q: np.ndarray
    r: np.ndarray

    def validated(self) -> "CareProblem":
        a = _as_matrix(self.a, "A")
        b = _as_matrix(self.b, "B")
        q = _as_matrix(self.q, "Q")
        r = _as_matrix(self.r, "R")
        n = a.shape[0]
        m = b.shape[1]
        if a.shape != (n, n) or b.shape != (n, m):
            raise ValueError(f"inconsistent A/B shapes {a.shape} {b.shape}")
        if q.shape != (n, n) or r.shape != (m, m):
            raise ValueError(f"inconsistent Q/R shapes {q.shape} {r.shape}")
        check_weights(q, r)
        return CareProblem(a, b, q, r)


@dataclass(frozen=True, eq=False)
class CareSolution:
    """Symmetric PD Riccati solution with its residual norm and derived gain."""

    p: np.ndarray
    residual: float
    gain: np.ndarray


def care_residual(problem: CareProblem, p: np.ndarray) -> float:
    """Frobenius norm of A'P + PA - P B R^-1 B' P + Q at the candidate P."""
    a, b, q, r = problem.a, problem.b, problem.q, problem.r
    m = a.T @ p + p @ a - p @ b @ np.linalg.solve(r, b.T @ p) + q
    return float(np.linalg.norm(m, "fro"))


def _bass_stabilizing_gain(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Initial stabilizing gain for Newton-Kleinman via Bass' shifted Gramian."""
    lam = np.linalg.eigvals(a)
    beta = 1.0 + max(0.0, float(-lam.real.min()), float(lam.real.max()))
    m = -(a + beta * np.eye(a.shape[0]))
    z = solve_lyapunov(m.T, 2.0 * b @ b.T)
    try:
        k0 = np.linalg.solve(z, b).T
    except np.linalg.LinAlgError as exc:
        raise SingularSubspace(f"Bass Gramian singular: {exc}") from exc
    return k0


def _newton_kleinman(
    problem: CareProblem, k0: np.ndarray, tol: float
) -> np.ndarray:
    a, b, q, r = problem.a, problem.b, problem.q, problem.r
    k = k0
    p = None
    for _ in range(_NK_MAX_ITER):
        a_cl = a - b @ k
        if float(np.linalg.eigvals(a_cl).real.max()) >= 0.0:
            raise SingularSubspace("Newton-Kleinman iterate lost stabilization")
        p = solve_lyapunov(a_cl, q + k.T @ r @ k)
        k_next = np.linalg.solve(r, b.T @ p)
        step = float(np.abs(k_next - k).max(initial=0.0))
        k = k_next
        if step <= 1e-13 * (1.0 + float(np.abs(k).max(initial=0.0))):
            break
    if p is None or care_residual(problem, p) > tol:
        raise SingularSubspace("Newton-Kleinman did not reach the residual tolerance")
    return symmetrize(p)


def solve_care(problem: CareProblem, tol: float = DEFAULT_CARE_TOL) -> CareSolution:
    """Solve the CARE via the stable invariant subspace of the Hamiltonian.

    Eigenvectors of [[A, -B R^-1 B'], [-Q, -A']] belonging to the n
    eigenvalues with negative real part are stacked as [X1; X2] and
    P = Re(X2 X1^-1).  If X1 is ill-conditioned or the residual misses the
    tolerance, a Newton-Kleinman iteration (Lyapunov solve per step) takes
    over, seeded by a Bass stabilizing gain.
    """
    problem = problem.validated()
    a, b, q, r = problem.a, problem.b, problem.q, problem.r
    n = a.shape[0]

    s = b @ np.linalg.solve(r, b.T)
    ham = np.block([[a, -s], [-q, -a.T]])
    eigvals, eigvecs = np.linalg.eig(ham)
    stable = eigvals.real < 0.0
    n_stable = int(stable.sum())
    if n_stable < n:
        raise NotStabilizable(
            f"Hamiltonian has {n_stable} stable eigenvalues, need {n}"
        )
    if n_stable > n:
        # Keep the n most stable directions (can occur only through roundoff
        # on near-imaginary pairs).
        order = np.argsort(eigvals.real)
        keep = order[:n]
    else:
        keep = np.flatnonzero(stable)
    basis = eigvecs[:, keep]
    x1, x2 = basis[:n, :], basis[n:, :]

    p = None
    if np.linalg.cond(x1) <= _X1_COND_LIMIT:
        cand = symmetrize(np.real(x2 @ np.linalg.inv(x1)))
        if np.all(np.isfinite(cand)) and care_residual(problem, cand) <= tol:
            p = cand

    if p is None:
        k0 = _bass_stabilizing_gain(a, b)
        p = _newton_kleinman(problem, k0, tol)

    residual = care_residual(problem, p)
    if residual > tol:
        raise SingularSubspace(
            f"CARE residual {residual:.3e} exceeds tolerance {tol:.3e}"
        )
    if float(np.linalg.eigvalsh(p).min()) <= 0.0:
        raise SingularSubspace("CARE solution is not positive definite")
    gain = np.linalg.solve(r, b.T @ p)
    return CareSolution(p=p, residual=residual, gain=gain)


def solve_filter_care(
    a: np.ndarray,
    c: np.ndarray,
    qn: np.ndarray,
    rn: np.ndarray,
    tol: float = DEFAULT_CARE_TOL,
) -> CareSolution:
    """Filter CARE P A' + A P - P C' Rn^-1 C P + Qn = 0, solved by duality.

    The returned gain field holds Kf = P C' Rn^-1.
    """
    a = _as_matrix(a, "A")
    c = _as_matrix(c, "C")
    sol = solve_care(CareProblem(a.T, c.T, qn, rn), tol)
    return CareSolution(p=sol.p, residual=sol.residual, gain=sol.gain.T)


def solve_lyapunov(a: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Solve A'X + XA + Q = 0 for Hurwitz A by Kronecker vectorization."""
    a = _as_matrix(a, "A")
    q = _as_matrix(q, "Q")
    n = a.shape[0]
    if q.shape != (n, n):
        raise ValueError(f"Q shape {q.shape} does not match A shape {a.shape}")
    max_real = float(np.linalg.eigvals(a).real.max())
    if max_real >= -1e-12:
        raise NotHurwitz(f"A has an eigenvalue with real part {max_real:.3e}")
    lhs = np.kron(np.eye(n), a.T) + np.kron(a.T, np.eye(n))
    x = np.linalg.solve(lhs, -q.flatten(order="F")).reshape((n, n), order="F")
    return symmetrize(x) if is_symmetric(q, 1e-10) else x


def controllability_rank(
    a: np.ndarray, b: np.ndarray, tol: float = DEFAULT_RANK_TOL
) -> int:
    """Numerical rank of [B, AB, ..., A^(n-1) B] via singular-value cutoff."""
    a = _as_matrix(a, "A")
    b = _as_matrix(b, "B")
    n = a.shape[0]
    blocks = [b]
    for _ in range(n - 1):
        blocks.append(a @ blocks[-1])
    sv = np.linalg.svd(np.hstack(blocks), compute_uv=False)
    if sv.size == 0 or sv[0] <= 0.0:
        return 0
    return int(np.count_nonzero(sv > tol * sv[0]))


def observability_rank(
    a: np.ndarray, c: np.ndarray, tol: float = DEFAULT_RANK_TOL
) -> int:
    """Numerical rank of the stacked [C; CA; ...; C A^(n-1)] (dual of ctrb)."""
    return controllability_rank(np.asarray(a, dtype=float).T,
                                np.asarray(c, dtype=float).T, tol)


def rk4_step(f, x: np.ndarray, dt: float) -> np.ndarray:
    """One classical fourth-order Runge-Kutta update of x with derivative f."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    k1 = np.asarray(f(x), dtype=float)
    k2 = np.asarray(f(x + 0.5 * dt * k1), dtype=float)
    k3 = np.asarray(f(x + 0.5 * dt * k2), dtype=float)
    k4 = np.asarray(f(x + dt * k3), dtype=float)
    if not (
        np.all(np.isfinite(k1))
        and np.all(np.isfinite(k2))
        and np.all(np.isfinite(k3))
        and np.all(np.isfinite(k4))
    ):
        raise NonFiniteDerivative("derivative evaluated to NaN/inf inside RK4 step")
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def jacobian_fd(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of a vector function at x."""
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        step = np.zeros_like(x)
        step[i] = eps
        cols.append((np.asarray(f(x + step), dtype=float)
                     - np.asarray(f(x - step), dtype=float)) / (2.0 * eps))
    jac = np.column_stack(cols)
    if not np.all(np.isfinite(jac)):
        raise NonFiniteDerivative("finite-difference Jacobian has NaN/inf entries")
    return jac
