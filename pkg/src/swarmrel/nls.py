"""Damped sparse nonlinear least squares over 4-component variable blocks.

Variables are stacked [x, y, z, yaw] blocks; updates are additive on the
translation components and wrapped-additive on yaw. Residuals are grouped by
family so evaluation and Jacobian assembly stay vectorized, and the normal
equations are solved with a sparse factorization (dense fallback for small
problems, where it is faster).
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from swarmrel.geometry import wrap_angle

BLOCK = 4
_DENSE_CUTOFF = 160  # free scalar count below which dense solves win
_MU_MAX = 1e14


class ResidualFamily:
    """A vectorized residual type.

    Subclasses fix `name`, `dim` (residual components per block) and `arity`
    (number of variable blocks each residual touches), and implement
    `evaluate` and `jacobian` over batches: `slots[s]` is the (B, 4) array of
    the s-th variable block of every residual in the batch, `meas` is (B, M).
    """

    name: str = "base"
    dim: int = 1
    arity: int = 1

    def evaluate(self, slots, meas) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, slots, meas) -> list[np.ndarray]:
        """Per-slot (B, dim, 4) derivative arrays, matching `evaluate`."""
        raise NotImplementedError

    def valid_mask(self, slots, meas) -> np.ndarray:
        """Rows with a well-defined Jacobian; singular configurations are False."""
        B = slots[0].shape[0]
        return np.ones(B, dtype=bool)


class CallableFamily(ResidualFamily):
    """Wrap plain functions as a family; handy for tests and toy problems."""

    def __init__(self, name, dim, arity, fn, jac_fn, valid_fn=None):
        self.name = name
        self.dim = dim
        self.arity = arity
        self._fn = fn
        self._jac = jac_fn
        self._valid = valid_fn

    def evaluate(self, slots, meas):
        return self._fn(slots, meas)

    def jacobian(self, slots, meas):
        return self._jac(slots, meas)

    def valid_mask(self, slots, meas):
        if self._valid is None:
            return super().valid_mask(slots, meas)
        return self._valid(slots, meas)


@dataclass
class _Group:
    family: ResidualFamily
    indices: list = field(default_factory=list)   # per residual: tuple of block ids
    meas: list = field(default_factory=list)      # per residual: measurement vector
    weights: list = field(default_factory=list)   # per residual: (dim,) weights
    tags: list = field(default_factory=list)      # opaque per-residual labels

    def stacked(self):
        idx = np.asarray(self.indices, dtype=int).reshape(len(self.indices), self.family.arity)
        meas = np.asarray(self.meas, dtype=float).reshape(len(self.meas), -1)
        w = np.asarray(self.weights, dtype=float).reshape(len(self.weights), self.family.dim)
        return idx, meas, w


@dataclass
class SolverOptions:
    max_iter: int = 50
    grad_tol: float = 1e-10
    step_tol: float = 1e-12
    init_damping: float = 1e-6


@dataclass
class SolveReport:
    iterations: int
    initial_cost: float
    final_cost: float
    termination: str  # gradient | step | max_iter | diverged
    wall_time: float


class NlsProblem:
    """Sparse least-squares problem over 4-dim pose blocks.

    Blocks marked fixed contribute to residual values but get no Jacobian
    columns and are never updated by the solver.
    """

    def __init__(self):
        self._values: list[np.ndarray] = []
        self._fixed: list[bool] = []
        self._groups: dict[str, _Group] = {}
        self._stack_cache: dict[str, tuple] = {}

    # -- construction -----------------------------------------------------

    def add_block(self, value, fixed: bool = False) -> int:
        v = np.asarray(value, dtype=float).reshape(BLOCK).copy()
        self._values.append(v)
        self._fixed.append(bool(fixed))
        return len(self._values) - 1

    def fix_block(self, index: int):
        self._fixed[index] = True

    def add_residual(self, family: ResidualFamily, indices, meas, weight=1.0, tag=None):
        indices = tuple(int(i) for i in (indices if np.iterable(indices) else (indices,)))
        if len(indices) != family.arity:
            raise ValueError(f"{family.name} expects {family.arity} blocks, got {len(indices)}")
        for i in indices:
            if not 0 <= i < len(self._values):
                raise IndexError(f"residual references unknown block {i}")
        w = np.broadcast_to(np.asarray(weight, dtype=float), (family.dim,)).copy()
        group = self._groups.setdefault(family.name, _Group(family))
        group.indices.append(indices)
        group.meas.append(np.atleast_1d(np.asarray(meas, dtype=float)))
        group.weights.append(w)
        group.tags.append(tag)
        self._stack_cache.pop(family.name, None)

    # -- introspection ----------------------------------------------------

    @property
    def num_blocks(self) -> int:
        return len(self._values)

    @property
    def num_scalars(self) -> int:
        """Total state size (4 per block), counting fixed blocks."""
        return BLOCK * len(self._values)

    @property
    def num_free_scalars(self) -> int:
        return BLOCK * int(np.sum(~np.asarray(self._fixed, dtype=bool))) if self._values else 0

    @property
    def num_residual_rows(self) -> int:
        return sum(len(g.indices) * g.family.dim for g in self._groups.values())

    @property
    def num_residual_blocks(self) -> int:
        return sum(len(g.indices) for g in self._groups.values())

    def family_sizes(self) -> dict[str, int]:
        return {name: len(g.indices) for name, g in self._groups.items()}

    def values(self) -> np.ndarray:
        return np.array(self._values, dtype=float).reshape(len(self._values), BLOCK)

    def fixed_mask(self) -> np.ndarray:
        return np.asarray(self._fixed, dtype=bool)

    def set_values(self, values: np.ndarray):
        values = np.asarray(values, dtype=float).reshape(len(self._values), BLOCK)
        for i in range(len(self._values)):
            self._values[i] = values[i].copy()

    # -- evaluation --------------------------------------------------------

    def _iter_stacked(self):
        for name in sorted(self._groups):
            g = self._groups[name]
            if not g.indices:
                continue
            if name not in self._stack_cache:
                self._stack_cache[name] = g.stacked()
            yield name, g, *self._stack_cache[name]

    def residual_vector(self, values: np.ndarray | None = None) -> np.ndarray:
        X = self.values() if values is None else np.asarray(values, dtype=float)
        parts = []
        for _, g, idx, meas, w in self._iter_stacked():
            slots = [X[idx[:, s]] for s in range(g.family.arity)]
            parts.append((g.family.evaluate(slots, meas) * w).ravel())
        if not parts:
            return np.zeros(0)
        return np.concatenate(parts)

    def cost(self, values: np.ndarray | None = None) -> float:
        r = self.residual_vector(values)
        return float(r @ r)

    def residual_validity(self, values: np.ndarray | None = None) -> np.ndarray:
        """Per-row flag; False rows sit at singular configurations."""
        X = self.values() if values is None else np.asarray(values, dtype=float)
        parts = []
        for _, g, idx, meas, _ in self._iter_stacked():
            slots = [X[idx[:, s]] for s in range(g.family.arity)]
            ok = g.family.valid_mask(slots, meas)
            parts.append(np.repeat(ok, g.family.dim))
        if not parts:
            return np.zeros(0, dtype=bool)
        return np.concatenate(parts)

    def residual_tags(self) -> list:
        """Tags repeated per scalar row, in residual_vector order."""
        tags = []
        for _, g, idx, _, _ in self._iter_stacked():
            for t in g.tags:
                tags.extend([t] * g.family.dim)
        return tags

    def _free_column_map(self) -> np.ndarray:
        """(num_blocks,) -> first free scalar column of each block, -1 if fixed."""
        fixed = self.fixed_mask()
        cols = np.full(len(self._values), -1, dtype=int)
        cols[~fixed] = np.arange(int(np.sum(~fixed))) * BLOCK
        return cols

    def jacobian(self, values: np.ndarray | None = None) -> sp.csr_matrix:
        """Weighted residual Jacobian over free scalar columns."""
        X = self.values() if values is None else np.asarray(values, dtype=float)
        col_base = self._free_column_map()
        rows, cols, data = [], [], []
        offset = 0
        for _, g, idx, meas, w in self._iter_stacked():
            fam = g.family
            B = idx.shape[0]
            slots = [X[idx[:, s]] for s in range(fam.arity)]
            jacs = fam.jacobian(slots, meas)
            comp = np.arange(BLOCK)
            row_local = (offset + (np.arange(B) * fam.dim)[:, None, None]
                         + np.arange(fam.dim)[None, :, None])  # (B, dim, 1)
            for s in range(fam.arity):
                base = col_base[idx[:, s]]  # (B,)
                keep = base >= 0
                if not np.any(keep):
                    continue
                jw = jacs[s] * w[:, :, None]  # (B, dim, 4)
                col = base[:, None, None] + comp[None, None, :]  # (B, 1, 4)
                col = np.broadcast_to(col, (B, fam.dim, BLOCK))
                rmat = np.broadcast_to(row_local, (B, fam.dim, BLOCK))
                rows.append(rmat[keep].ravel())
                cols.append(col[keep].ravel())
                data.append(jw[keep].ravel())
            offset += B * fam.dim
        nfree = self.num_free_scalars
        if not rows:
            return sp.csr_matrix((offset, nfree))
        J = sp.coo_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
            shape=(offset, nfree),
        )
        return J.tocsr()


def _apply_step(X: np.ndarray, free_idx: np.ndarray, dx: np.ndarray) -> np.ndarray:
    """Boxplus over the flat state: additive, then wrap yaw components."""
    Xn = X.copy()
    upd = Xn[free_idx] + dx.reshape(-1, BLOCK)
    upd[:, 3] = wrap_angle(upd[:, 3])
    Xn[free_idx] = upd
    return Xn


def solve(problem: NlsProblem, options: SolverOptions | None = None):
    """Levenberg-Marquardt with diagonal damping on the normal equations.

    Returns (values, SolveReport). Accepted steps never increase the cost;
    rank deficiency is handled by raising the damping, not by failing.
    """
    opts = options or SolverOptions()
    t0 = time.perf_counter()
    X = problem.values()
    fixed = problem.fixed_mask()
    free_idx = np.flatnonzero(~fixed)
    if free_idx.size == 0:
        raise ValueError("problem has no free blocks")
    if problem.num_residual_rows == 0:
        raise ValueError("problem has no residuals")

    def report(it, c0, c1, why):
        problem.set_values(X)
        return X, SolveReport(it, c0, c1, why, time.perf_counter() - t0)

    r = problem.residual_vector(X)
    if not np.all(np.isfinite(r)):
        return report(0, float("nan"), float("nan"), "diverged")
    cost = float(r @ r)
    initial_cost = cost

    J = problem.jacobian(X)
    g = J.T @ r
    if np.max(np.abs(g), initial=0.0) < opts.grad_tol:
        return report(0, initial_cost, cost, "gradient")

    H = (J.T @ J).tocsc()
    D = np.maximum(H.diagonal(), 1e-12)
    mu = opts.init_damping * float(np.max(D))
    nu = 2.0
    dense = problem.num_free_scalars <= _DENSE_CUTOFF

    iterations = 0
    for iterations in range(1, opts.max_iter + 1):
        # solve (H + mu*diag(D)) dx = -g, inflating damping on failure
        while True:
            A = H + sp.diags(mu * D)
            try:
                if dense:
                    dx = np.linalg.solve(A.toarray(), -g)
                else:
                    with warnings.catch_warnings():
                        warnings.simplefilter("ignore", spla.MatrixRankWarning)
                        dx = spla.spsolve(A.tocsc(), -g)
            except (np.linalg.LinAlgError, RuntimeError):
                dx = None
            if dx is not None and np.all(np.isfinite(dx)):
                break
            mu *= nu
            nu *= 2.0
            if mu > _MU_MAX:
                return report(iterations, initial_cost, cost, "step")

        step_norm = float(np.linalg.norm(dx))
        x_norm = float(np.linalg.norm(X[free_idx]))
        if step_norm < opts.step_tol * (x_norm + opts.step_tol):
            return report(iterations, initial_cost, cost, "step")

        Xn = _apply_step(X, free_idx, dx)
        rn = problem.residual_vector(Xn)
        finite = np.all(np.isfinite(rn))
        new_cost = float(rn @ rn) if finite else np.inf
        predicted = float(dx @ (mu * D * dx) - dx @ g)
        rho = (cost - new_cost) / predicted if predicted > 0 else -1.0

        if finite and rho > 0:
            X, r, cost = Xn, rn, new_cost
            J = problem.jacobian(X)
            g = J.T @ r
            H = (J.T @ J).tocsc()
            D = np.maximum(H.diagonal(), 1e-12)
            mu *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
            nu = 2.0
            if np.max(np.abs(g), initial=0.0) < opts.grad_tol:
                return report(iterations, initial_cost, cost, "gradient")
        else:
            mu *= nu
            nu *= 2.0
            if mu > _MU_MAX:
                return report(iterations, initial_cost, cost, "step")

    return report(iterations, initial_cost, cost, "max_iter")


def check_jacobian(problem: NlsProblem, values: np.ndarray | None = None,
                   eps: float = 1e-6) -> float:
    """Max relative error between analytic and central finite-difference Jacobian.

    Rows flagged invalid by their family (singular configurations) are
    excluded from the comparison.
    """
    X = problem.values() if values is None else np.asarray(values, dtype=float).copy()
    fixed = problem.fixed_mask()
    free_idx = np.flatnonzero(~fixed)
    J = problem.jacobian(X).toarray()
    valid = problem.residual_validity(X)
    worst = 0.0
    for k, b in enumerate(free_idx):
        for c in range(BLOCK):
            Xp = X.copy()
            Xp[b, c] += eps
            Xm = X.copy()
            Xm[b, c] -= eps
            fd = (problem.residual_vector(Xp) - problem.residual_vector(Xm)) / (2 * eps)
            col = J[:, k * BLOCK + c]
            denom = np.maximum(1.0, np.maximum(np.abs(fd), np.abs(col)))
            err = np.abs(fd - col) / denom
            if valid.size:
                err = err[valid]
            if err.size:
                worst = max(worst, float(np.max(err)))
    return worst
