"""A small solver-agnostic layer for real conic programs.

Programs are built from real decision variables and affine expressions
(``A @ x + b``) and may carry linear equality / inequality, second-order,
rotated second-order and positive-semidefinite constraints. Complex
Hermitian matrix variables are handled through their real symmetric
embedding ``[[Re, -Im], [Im, Re]]``. The objective is always maximized.

Two backends are shipped. :func:`solve` hands a :class:`ConicProgram` to
Clarabel. :func:`solve_standard` takes a :class:`StandardProgram`, whose
variables are the cone members themselves, and hands it to cvxopt with a
KKT solver that exploits the few-equalities structure of the STAR-RIS step.
"""

from __future__ import annotations

import io
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as scipy_linalg
from scipy import sparse

STATUSES = ("optimal", "infeasible", "unbounded", "numerical_failure", "iteration_limit")


def _pad(A: sparse.csr_matrix, n: int) -> sparse.csr_matrix:
    if A.shape[1] == n:
        return A
    return sparse.csr_matrix((A.data, A.indices, A.indptr), shape=(A.shape[0], n))


class Affine:
    """Vector-valued affine expression ``A @ x + b``."""

    __slots__ = ("A", "b")
    __array_priority__ = 100

    def __init__(self, A, b=None):
        A = sparse.csr_matrix(A)
        self.A = A
        self.b = np.zeros(A.shape[0]) if b is None else np.asarray(b, float).reshape(A.shape[0])

    @classmethod
    def constant(cls, values, n: int = 0) -> "Affine":
        values = np.atleast_1d(np.asarray(values, float))
        return cls(sparse.csr_matrix((values.size, n)), values.ravel())

    @property
    def size(self) -> int:
        return self.A.shape[0]

    def _coerce(self, other) -> "Affine":
        if isinstance(other, Affine):
            return other
        other = np.broadcast_to(np.asarray(other, float), (self.size,)) if np.ndim(other) == 0 else np.asarray(other, float)
        return Affine.constant(other, self.A.shape[1])

    def __add__(self, other):
        other = self._coerce(other)
        if other.size == 1 and self.size > 1:
            other = other.repeat(self.size)
        if self.size == 1 and other.size > 1:
            return self.repeat(other.size) + other
        n = max(self.A.shape[1], other.A.shape[1])
        return Affine(_pad(self.A, n) + _pad(other.A, n), self.b + other.b)

    __radd__ = __add__

    def __neg__(self):
        return Affine(-self.A, -self.b)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, c):
        if isinstance(c, Affine):
            raise TypeError("product of two affine expressions is not affine")
        c = np.asarray(c, float)
        if c.ndim == 0:
            return Affine(self.A * float(c), self.b * float(c))
        return Affine(sparse.diags(c) @ self.A, c * self.b)

    __rmul__ = __mul__

    def __truediv__(self, c):
        return self * (1.0 / float(c))

    def left(self, M) -> "Affine":
        """``M @ expr`` for a numeric matrix ``M``."""
        M = sparse.csr_matrix(M) if not sparse.issparse(M) else M.tocsr()
        return Affine(M @ self.A, M @ self.b)

    __rmatmul__ = left

    def __getitem__(self, idx):
        rows = np.arange(self.size)[idx]
        rows = np.atleast_1d(rows)
        return Affine(self.A[rows], self.b[rows])

    def __len__(self):
        return self.size

    def repeat(self, m: int) -> "Affine":
        if self.size != 1:
            raise ValueError("only scalar expressions can be broadcast")
        return Affine(sparse.vstack([self.A] * m).tocsr(), np.repeat(self.b, m))

    def sum(self) -> "Affine":
        return Affine(sparse.csr_matrix(self.A.sum(axis=0)), [self.b.sum()])

    def dot(self, coeffs) -> "Affine":
        coeffs = np.asarray(coeffs, float).reshape(1, -1)
        return Affine(sparse.csr_matrix(coeffs @ self.A), coeffs @ self.b)

    def value(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, float)
        return _pad(self.A, x.shape[0]) @ x + self.b


def vstack(*exprs) -> Affine:
    exprs = [e if isinstance(e, Affine) else Affine.constant(e) for e in exprs]
    n = max(e.A.shape[1] for e in exprs)
    return Affine(sparse.vstack([_pad(e.A, n) for e in exprs]).tocsr(), np.concatenate([e.b for e in exprs]))


# ---------------------------------------------------------------------------
# Hermitian embedding


def hermitian_embed(H: np.ndarray, atol: float = 1e-12) -> np.ndarray:
    H = np.asarray(H)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError("expected a square matrix")
    scale = max(1.0, float(np.max(np.abs(H)))) if H.size else 1.0
    if np.max(np.abs(H - H.conj().T), initial=0.0) > atol * scale:
        raise ValueError("matrix is not Hermitian")
    R, I = H.real, H.imag
    return np.block([[R, -I], [I, R]])


def hermitian_unembed(S: np.ndarray) -> np.ndarray:
    m = S.shape[0] // 2
    return S[:m, :m] + 1j * S[m:, :m]


class HermitianVariable:
    """Complex Hermitian ``m x m`` matrix variable parametrized by ``m**2`` reals.

    The real part contributes its upper triangle (with diagonal), the
    imaginary part its strict upper triangle.
    """

    def __init__(self, name: str, m: int, offset: int):
        self.name = name
        self.m = m
        self.offset = offset
        iu = np.triu_indices(m)
        ius = np.triu_indices(m, 1)
        n_re = len(iu[0])
        self.n_vars = m * m

        rows, cols, vals = [], [], []
        for j, (a, b) in enumerate(zip(*iu)):
            rows += [a * m + b] if a == b else [a * m + b, b * m + a]
            cols += [offset + j] * (1 if a == b else 2)
            vals += [1.0] if a == b else [1.0, 1.0]
        self._re = sparse.csr_matrix((vals, (rows, cols)), shape=(m * m, offset + self.n_vars))

        rows, cols, vals = [], [], []
        for j, (a, b) in enumerate(zip(*ius)):
            rows += [a * m + b, b * m + a]
            cols += [offset + n_re + j] * 2
            vals += [1.0, -1.0]
        self._im = sparse.csr_matrix((vals, (rows, cols)), shape=(m * m, offset + self.n_vars))

    @property
    def real(self) -> Affine:
        return Affine(self._re)

    @property
    def imag(self) -> Affine:
        return Affine(self._im)

    def diag(self) -> Affine:
        return self.real[np.arange(self.m) * (self.m + 1)]

    def trace_with(self, A: np.ndarray) -> Affine:
        """``Tr(A U)`` for Hermitian ``A``; real by construction."""
        A = np.asarray(A)
        coeffs = np.concatenate([A.real.ravel(), A.imag.ravel()])
        return vstack(self.real, self.imag).dot(coeffs)

    def embedding(self) -> Affine:
        """Row-major flattening of the ``2m x 2m`` real embedding."""
        m = self.m
        R, I = self._re, self._im
        out = []
        for r in range(m):
            out += [R[r * m:(r + 1) * m], -I[r * m:(r + 1) * m]]
        for r in range(m):
            out += [I[r * m:(r + 1) * m], R[r * m:(r + 1) * m]]
        return Affine(sparse.vstack(out).tocsr(), np.zeros(4 * m * m))

    def value(self, x: np.ndarray) -> np.ndarray:
        m = self.m
        return (self.real.value(x) + 1j * self.imag.value(x)).reshape(m, m)


# ---------------------------------------------------------------------------
# program


@dataclass
class Constraint:
    kind: str  # zero | nonneg | soc | rsoc | psd
    expr: Affine
    name: str = ""
    dim: int = 0


@dataclass
class ConicSolution:
    status: str
    x: np.ndarray | None
    objective: float | None
    stats: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    def value(self, expr) -> np.ndarray:
        if self.x is None:
            raise ValueError(f"no primal values (status={self.status})")
        if isinstance(expr, HermitianVariable):
            return expr.value(self.x)
        return expr.value(self.x)


class ConicProgram:
    def __init__(self, name: str = ""):
        self.name = name
        self.n = 0
        self.variables: dict[str, tuple[int, int]] = {}
        self.hermitians: dict[str, HermitianVariable] = {}
        self.constraints: list[Constraint] = []
        self._objective: Affine | None = None

    # variables -------------------------------------------------------------

    def _reserve(self, name: str, size: int) -> int:
        if name in self.variables:
            raise ValueError(f"duplicate variable {name!r}")
        off = self.n
        self.variables[name] = (off, size)
        self.n += size
        return off

    def variable(self, name: str, size: int = 1) -> Affine:
        off = self._reserve(name, size)
        A = sparse.csr_matrix((np.ones(size), (np.arange(size), off + np.arange(size))), shape=(size, self.n))
        return Affine(A)

    def hermitian(self, name: str, m: int) -> HermitianVariable:
        off = self._reserve(name, m * m)
        var = HermitianVariable(name, m, off)
        self.hermitians[name] = var
        return var

    # constraints -----------------------------------------------------------

    def add_eq(self, expr: Affine, name: str = "") -> None:
        self.constraints.append(Constraint("zero", expr, name, expr.size))

    def add_nonneg(self, expr: Affine, name: str = "") -> None:
        self.constraints.append(Constraint("nonneg", expr, name, expr.size))

    def add_le(self, lhs, rhs, name: str = "") -> None:
        expr = (rhs - lhs) if isinstance(rhs, Affine) else -(lhs - rhs)
        self.add_nonneg(expr, name)

    def add_soc(self, t: Affine, x: Affine, name: str = "") -> None:
        """``||x||_2 <= t``."""
        expr = vstack(t, x)
        self.constraints.append(Constraint("soc", expr, name, expr.size))

    def add_rsoc(self, u: Affine, v: Affine, x: Affine, name: str = "") -> None:
        """``||x||_2^2 <= u * v`` with ``u, v >= 0``."""
        expr = vstack(u, v, x)
        self.constraints.append(Constraint("rsoc", expr, name, expr.size))

    def add_psd(self, expr: Affine, dim: int, name: str = "") -> None:
        """``expr`` is the row-major flattening of a symmetric ``dim x dim`` matrix."""
        if expr.size != dim * dim:
            raise ValueError(f"PSD expression has {expr.size} entries, expected {dim * dim}")
        self.constraints.append(Constraint("psd", expr, name, dim))

    def add_hermitian_psd(self, U: HermitianVariable, name: str = "") -> None:
        self.add_psd(U.embedding(), 2 * U.m, name)

    def maximize(self, expr: Affine) -> None:
        if expr.size != 1:
            raise ValueError("objective must be scalar")
        self._objective = expr

    @property
    def objective(self) -> Affine:
        return self._objective if self._objective is not None else Affine.constant([0.0], self.n)

    # introspection --------------------------------------------------------

    def residuals(self, x: np.ndarray) -> dict[str, float]:
        """Largest violation of every constraint at ``x`` (0 when satisfied)."""
        out = {}
        for i, c in enumerate(self.constraints):
            v = c.expr.value(x)
            if c.kind == "zero":
                r = float(np.max(np.abs(v)))
            elif c.kind == "nonneg":
                r = float(max(0.0, -np.min(v)))
            elif c.kind == "soc":
                r = float(max(0.0, np.linalg.norm(v[1:]) - v[0]))
            elif c.kind == "rsoc":
                u, w, z = v[0], v[1], v[2:]
                r = float(max(0.0, -u, -w, z @ z - u * w))
            else:
                S = v.reshape(c.dim, c.dim)
                r = float(max(0.0, -np.linalg.eigvalsh(0.5 * (S + S.T))[0]))
            out[c.name or f"{c.kind}[{i}]"] = r
        return out

    def dump(self, fh=None) -> str:
        """Text dump: variables, objective and cones as sparse triplets."""
        buf = io.StringIO()
        buf.write(f"# conic program {self.name!r}: {self.n} variables, {len(self.constraints)} constraints\n")
        buf.write("variables\n")
        for name, (off, size) in self.variables.items():
            kind = "hermitian" if name in self.hermitians else "real"
            buf.write(f"  {name} {kind} offset={off} size={size}\n")
        obj = self.objective
        buf.write(f"maximize constant={obj.b[0]!r}\n")
        coo = obj.A.tocoo()
        for j, v in zip(coo.col, coo.data):
            buf.write(f"  0 {j} {v!r}\n")
        for i, c in enumerate(self.constraints):
            buf.write(f"constraint {i} {c.kind} dim={c.dim} rows={c.expr.size} name={c.name}\n")
            coo = c.expr.A.tocoo()
            for r, j, v in zip(coo.row, coo.col, coo.data):
                buf.write(f"  {r} {j} {v!r}\n")
            nz = np.flatnonzero(c.expr.b)
            for r in nz:
                buf.write(f"  const {r} {c.expr.b[r]!r}\n")
        text = buf.getvalue()
        if fh is not None:
            fh.write(text)
        return text


# ---------------------------------------------------------------------------
# backend


def _svec_map(d: int) -> sparse.csr_matrix:
    """Row-major full matrix -> upper triangle stacked column-wise, off-diagonals x sqrt(2)."""
    rows, cols, vals = [], [], []
    r = 0
    h = math.sqrt(2.0) / 2.0
    for j in range(d):
        for i in range(j + 1):
            if i == j:
                rows.append(r), cols.append(i * d + j), vals.append(1.0)
            else:
                rows += [r, r]
                cols += [i * d + j, j * d + i]
                vals += [h, h]
            r += 1
    return sparse.csr_matrix((vals, (rows, cols)), shape=(d * (d + 1) // 2, d * d))


_SVEC_CACHE: dict[int, sparse.csr_matrix] = {}


def _svec(d: int) -> sparse.csr_matrix:
    if d not in _SVEC_CACHE:
        _SVEC_CACHE[d] = _svec_map(d)
    return _SVEC_CACHE[d]


def _rsoc_to_soc(expr: Affine) -> Affine:
    # ||z||^2 <= u v  <=>  ||(u - v, 2 z)|| <= u + v
    u, v, z = expr[0], expr[1], expr[np.arange(2, expr.size)]
    return vstack(u + v, u - v, z * 2.0)


def _assemble(p: ConicProgram):
    import clarabel

    blocks_A, blocks_b, cones = [], [], []
    zero_rows, nonneg_rows = [], []
    for c in p.constraints:
        if c.kind == "zero":
            zero_rows.append(c.expr)
        elif c.kind == "nonneg":
            nonneg_rows.append(c.expr)
    if zero_rows:
        e = vstack(*zero_rows)
        blocks_A.append(_pad(e.A, p.n)), blocks_b.append(e.b), cones.append(clarabel.ZeroConeT(e.size))
    if nonneg_rows:
        e = vstack(*nonneg_rows)
        blocks_A.append(_pad(e.A, p.n)), blocks_b.append(e.b), cones.append(clarabel.NonnegativeConeT(e.size))
    for c in p.constraints:
        if c.kind == "soc":
            e = c.expr
            cones.append(clarabel.SecondOrderConeT(e.size))
        elif c.kind == "rsoc":
            e = _rsoc_to_soc(c.expr)
            cones.append(clarabel.SecondOrderConeT(e.size))
        elif c.kind == "psd":
            e = c.expr.left(_svec(c.dim))
            cones.append(clarabel.PSDTriangleConeT(c.dim))
        else:
            continue
        blocks_A.append(_pad(e.A, p.n)), blocks_b.append(e.b)
    if blocks_A:
        A = sparse.vstack(blocks_A).tocsc()
        b = np.concatenate(blocks_b)
    else:
        A = sparse.csc_matrix((0, p.n))
        b = np.zeros(0)
    return A, b, cones


_STATUS_MAP = {
    "Solved": "optimal",
    "PrimalInfeasible": "infeasible",
    "AlmostPrimalInfeasible": "infeasible",
    "DualInfeasible": "unbounded",
    "AlmostDualInfeasible": "unbounded",
    "MaxIterations": "iteration_limit",
    "MaxTime": "iteration_limit",
}


def solve(p: ConicProgram, tol: float = 1e-8, max_iter: int = 200, verbose: bool = False) -> ConicSolution:
    """Solve ``p`` with Clarabel.

    ``AlmostSolved`` results are accepted only when an independent check of
    every constraint residual passes at ``10 * tol`` relative to the data
    scale; otherwise they surface as ``numerical_failure``.
    """
    import clarabel

    A, b, cones = _assemble(p)
    obj = p.objective
    q = -np.asarray(_pad(obj.A, p.n).toarray()).ravel()
    P = sparse.csc_matrix((p.n, p.n))
    settings = clarabel.DefaultSettings()
    settings.verbose = verbose
    settings.max_iter = max_iter
    settings.tol_gap_abs = tol
    settings.tol_gap_rel = tol
    settings.tol_feas = tol
    started = time.perf_counter()
    solver = clarabel.DefaultSolver(P, q, -A, b, cones, settings)
    res = solver.solve()
    elapsed = time.perf_counter() - started

    raw = str(res.status)
    status = _STATUS_MAP.get(raw, "numerical_failure")
    x = np.asarray(res.x, float)
    stats = {
        "backend": "clarabel",
        "raw_status": raw,
        "iterations": int(res.iterations),
        "solve_time": elapsed,
        "r_prim": float(res.r_prim),
        "r_dual": float(res.r_dual),
        "obj_primal": -float(res.obj_val),
        "obj_dual": -float(res.obj_val_dual),
        "n_vars": p.n,
        "n_rows": A.shape[0],
    }
    if raw == "AlmostSolved":
        scale = 1.0 + float(np.max(np.abs(b), initial=0.0))
        worst = max(p.residuals(x).values(), default=0.0)
        status = "optimal" if worst <= 10 * tol * scale else "numerical_failure"
        stats["max_residual"] = worst
    if status != "optimal":
        return ConicSolution(status=status, x=None, objective=None, stats=stats)
    return ConicSolution(status=status, x=x, objective=float(obj.value(x)[0]), stats=stats)


# ---------------------------------------------------------------------------
# standard (cone-variable) form


class HermitianBlock:
    """Hermitian ``m x m`` PSD matrix carried by a real symmetric PSD block of size ``2m``.

    ``U = ((S11 + S22) + j (S21 - S12)) / 2`` maps the real PSD cone onto the
    Hermitian PSD cone, so no block-structure constraints are needed.
    ``Tr(A U) = <embed(A) / 2, S>`` for Hermitian ``A``.
    """

    def __init__(self, name: str, m: int, offset: int, n: int):
        self.name = name
        self.m = m
        self.offset = offset  # first entry of the column-major 2m x 2m block

    def inner(self, B: np.ndarray, n: int) -> Affine:
        """``<B, S>`` for a real symmetric ``2m x 2m`` matrix ``B``."""
        d = 2 * self.m
        coeffs = np.asarray(B, float).reshape(d, d).ravel(order="F")
        A = sparse.csr_matrix((coeffs, (np.zeros(d * d, int), self.offset + np.arange(d * d))), shape=(1, n))
        A.eliminate_zeros()
        return Affine(A)

    def trace_with(self, A: np.ndarray, n: int) -> Affine:
        return self.inner(0.5 * hermitian_embed(A), n)

    def diag(self, n: int) -> Affine:
        m, d = self.m, 2 * self.m
        idx = np.arange(m)
        rows = np.repeat(idx, 2)
        cols = np.empty(2 * m, int)
        cols[0::2] = self.offset + idx * d + idx
        cols[1::2] = self.offset + (idx + m) * d + (idx + m)
        return Affine(sparse.csr_matrix((np.full(2 * m, 0.5), (rows, cols)), shape=(m, n)))

    def real_block(self, x: np.ndarray) -> np.ndarray:
        d = 2 * self.m
        S = np.asarray(x[self.offset:self.offset + d * d]).reshape(d, d, order="F")
        return 0.5 * (S + S.T)

    def value(self, x: np.ndarray) -> np.ndarray:
        S = self.real_block(x)
        m = self.m
        return 0.5 * ((S[:m, :m] + S[m:, m:]) + 1j * (S[m:, :m] - S[:m, m:]))


class StandardProgram:
    """``max f(x)`` subject to linear equalities, where every entry of ``x``
    either lies in a cone block (nonnegative orthant, second-order cone,
    PSD block) or is free.

    This is the natural form for semidefinite programs whose matrix
    variables enter few linear functionals: the backend works on the Lagrange
    dual, whose size is the number of equalities rather than the number of
    matrix entries.
    """

    def __init__(self, name: str = ""):
        self.name = name
        self.blocks: list[tuple[str, str, int, int]] = []  # (name, kind, offset, dim)
        self.n = 0
        self.hermitians: dict[str, HermitianBlock] = {}
        self.equalities: list[tuple[str, Affine]] = []
        self._objective: Affine | None = None

    def _block(self, name: str, kind: str, dim: int, size: int) -> int:
        if any(b[0] == name for b in self.blocks):
            raise ValueError(f"duplicate block {name!r}")
        off = self.n
        self.blocks.append((name, kind, off, dim))
        self.n += size
        return off

    def _rows(self, off: int, size: int) -> Affine:
        return Affine(sparse.csr_matrix((np.ones(size), (np.arange(size), off + np.arange(size))), shape=(size, self.n)))

    def free(self, name: str, size: int = 1) -> Affine:
        return self._rows(self._block(name, "free", size, size), size)

    def nonneg(self, name: str, size: int = 1) -> Affine:
        return self._rows(self._block(name, "nonneg", size, size), size)

    def soc(self, name: str, dim: int) -> Affine:
        """``(t, x)`` with ``||x|| <= t``."""
        return self._rows(self._block(name, "soc", dim, dim), dim)

    def rsoc(self, name: str, size: int = 1):
        """``(u, v, z)`` with ``||z||^2 <= u v``, ``u, v >= 0``."""
        s = self.soc(name, size + 2)
        return (s[0] + s[1]) * 0.5, (s[0] - s[1]) * 0.5, s[np.arange(2, size + 2)] * 0.5

    def hermitian_psd(self, name: str, m: int) -> HermitianBlock:
        d = 2 * m
        off = self._block(name, "psd", d, d * d)
        blk = HermitianBlock(name, m, off, self.n)
        self.hermitians[name] = blk
        return blk

    def add_eq(self, expr: Affine, name: str = "") -> None:
        self.equalities.append((name, expr))

    def add_eq_pair(self, lhs, rhs, name: str = "") -> None:
        self.add_eq(lhs - rhs if isinstance(lhs, Affine) else -(rhs - lhs), name)

    def maximize(self, expr: Affine) -> None:
        if expr.size != 1:
            raise ValueError("objective must be scalar")
        self._objective = expr

    @property
    def objective(self) -> Affine:
        return self._objective if self._objective is not None else Affine.constant([0.0], self.n)

    def residuals(self, x: np.ndarray) -> dict[str, float]:
        out = {}
        for i, (name, e) in enumerate(self.equalities):
            out[name or f"eq[{i}]"] = float(np.max(np.abs(e.value(x)), initial=0.0))
        for name, kind, off, dim in self.blocks:
            if kind == "nonneg":
                r = max(0.0, -float(np.min(x[off:off + dim])))
            elif kind == "soc":
                v = x[off:off + dim]
                r = max(0.0, float(np.linalg.norm(v[1:]) - v[0]))
            elif kind == "psd":
                S = x[off:off + dim * dim].reshape(dim, dim, order="F")
                r = max(0.0, -float(np.linalg.eigvalsh(0.5 * (S + S.T))[0]))
            else:
                r = 0.0
            out[name] = r
        return out


def _cvx_matrix(M):
    from cvxopt import matrix, spmatrix

    if sparse.issparse(M):
        M = M.tocoo()
        return spmatrix(M.data.astype(float), M.row.astype(int), M.col.astype(int), size=M.shape)
    return matrix(np.asarray(M, float))


def _sparse_operator(G: sparse.csr_matrix, dims: dict):
    """``G`` as the callable cvxopt accepts: ``y := alpha * op(G) x + beta * y``.

    As in cvxopt's own dense product, only the lower triangle of each PSD
    block of ``x`` is read when multiplying by ``G^T``.
    """
    from cvxopt import matrix

    GT = G.T.tocsr()
    off = dims["l"] + sum(dims["q"])
    psd = []
    for d in dims["s"]:
        psd.append((slice(off, off + d * d), d))
        off += d * d

    def apply(x, y, alpha=1.0, beta=0.0, trans="N"):
        v = np.asarray(x).ravel()
        if trans == "N":
            out = alpha * (G @ v)
        else:
            v = v.copy()
            for rows, d in psd:
                X = v[rows].reshape(d, d, order="F")
                v[rows] = (np.tril(X) + np.tril(X, -1).T).ravel(order="F")
            out = alpha * (GT @ v)
        if beta != 0.0:
            out += beta * np.asarray(y).ravel()
        y[:] = matrix(out)

    return apply


class _BlockKKT:
    """KKT solver for cvxopt's cone solver.

    The reduced system ``G^T W^{-1} W^{-T} G`` is formed block by block.
    PSD columns that only touch the block diagonal are handled through the
    Hadamard identity ``<R^T D_i R, R^T D_j R> = d_i^T (P o P) d_j`` with
    ``P = R R^T``; the remaining (few) columns are scaled explicitly.
    """

    def __init__(self, G: np.ndarray, dims: dict, A: np.ndarray | None):
        self.G = G
        self.A = A
        self.n = G.shape[1]
        off = dims["l"]
        self.l = slice(0, off)
        self.Gl = G[self.l]
        self.q = []
        for d in dims["q"]:
            self.q.append((slice(off, off + d), G[off:off + d]))
            off += d
        self.s = []
        for d in dims["s"]:
            rows = slice(off, off + d * d)
            Gs = G[rows]
            cols = np.flatnonzero(np.any(Gs != 0, axis=0))
            blk = Gs[:, cols].T.reshape(len(cols), d, d)  # symmetric, so storage order is irrelevant
            offdiag = np.any(blk * (1.0 - np.eye(d)) != 0, axis=(1, 2))
            dcols, gcols = cols[~offdiag], cols[offdiag]
            diags = np.ascontiguousarray(blk[~offdiag].diagonal(axis1=1, axis2=2).T)  # d x n_diag
            self.s.append((rows, d, dcols, diags, gcols, np.ascontiguousarray(blk[offdiag])))
            off += d * d

    def __call__(self, W):
        from cvxopt import matrix

        n = self.n
        d_l = np.asarray(W["d"]).ravel()
        Gl = self.Gl / d_l[:, None]
        H = Gl.T @ Gl
        q_scaled = []
        for (sl, Gq), v, beta in zip(self.q, W["v"], W["beta"]):
            v = np.asarray(v).ravel()
            J = np.ones(len(v))
            J[1:] = -1.0
            Jv = J * v
            Winv = (2.0 * np.outer(Jv, Jv) - np.diag(J)) / beta
            Sq = Winv @ Gq
            H += Sq.T @ Sq
            q_scaled.append((sl, Winv, Sq))
        s_scaled = []
        for (rows, d, dcols, diags, gcols, gblk), rti in zip(self.s, W["rti"]):
            R = np.asarray(rti).reshape(d, d, order="F")
            P = R @ R.T
            H[np.ix_(dcols, dcols)] += diags.T @ (P * P) @ diags
            Sg = np.matmul(np.matmul(R.T, gblk), R)  # rti^T G_j rti
            Sf = Sg.reshape(len(gcols), d * d)
            H[np.ix_(gcols, gcols)] += Sf @ Sf.T
            if len(gcols) and len(dcols):
                # diag(R Sg_j R^T) for every general column
                cross = np.sum(np.matmul(R, Sg) * R, axis=2) @ diags
                H[np.ix_(gcols, dcols)] += cross
                H[np.ix_(dcols, gcols)] += cross.T
            s_scaled.append((R, Sf))
        p = 0 if self.A is None else self.A.shape[0]
        if p:
            K = np.block([[H, self.A.T], [self.A, np.zeros((p, p))]])
            lu = scipy_linalg.lu_factor(K)
        else:
            try:
                chol = scipy_linalg.cho_factor(H)
            except np.linalg.LinAlgError:
                # rounding can cost definiteness late in the solve
                chol = None
                lu = scipy_linalg.lu_factor(H)

        def solve(x, y, z):
            bz = np.asarray(z).ravel()
            wbz = np.empty_like(bz)
            wbz[self.l] = bz[self.l] / d_l
            for sl, Winv, _ in q_scaled:
                wbz[sl] = Winv @ bz[sl]
            rhs = np.asarray(x).ravel() + Gl.T @ wbz[self.l]
            for sl, _, Sq in q_scaled:
                rhs += Sq.T @ wbz[sl]
            for (rows, d, dcols, diags, gcols, _), (R, Sf) in zip(self.s, s_scaled):
                Z = bz[rows].reshape(d, d, order="F")
                Z = np.tril(Z) + np.tril(Z, -1).T
                WZ = R.T @ Z @ R
                wbz[rows] = WZ.ravel(order="F")
                rhs[gcols] += Sf @ wbz[rows]
                rhs[dcols] += diags.T @ np.sum((R @ WZ) * R, axis=1)
            if p:
                sol = scipy_linalg.lu_solve(lu, np.concatenate([rhs, np.asarray(y).ravel()]))
                ux, uy = sol[:n], sol[n:]
                y[:] = matrix(uy)
            elif chol is not None:
                ux = scipy_linalg.cho_solve(chol, rhs)
            else:
                ux = scipy_linalg.lu_solve(lu, rhs)
            x[:] = matrix(ux)
            out = np.empty_like(bz)
            out[self.l] = Gl @ ux
            for sl, _, Sq in q_scaled:
                out[sl] = Sq @ ux
            for (rows, d, dcols, diags, gcols, _), (R, Sf) in zip(self.s, s_scaled):
                # column-major storage of a symmetric matrix equals row-major
                out[rows] = Sf.T @ ux[gcols] + ((R.T * (diags @ ux[dcols])) @ R).ravel()
            z[:] = matrix(out - wbz)

        return solve


def solve_standard(p: StandardProgram, tol: float = 1e-8, max_iter: int = 200, verbose: bool = False,
                   kkt: str = "block") -> ConicSolution:
    """Solve a :class:`StandardProgram` through the cvxopt cone solver.

    The program is passed as cvxopt's dual problem; the solver's primal
    variables are the equality multipliers.
    """
    from cvxopt import matrix, solvers

    n = p.n
    order = {"nonneg": 0, "soc": 1, "psd": 2}
    cone_blocks = sorted((b for b in p.blocks if b[1] != "free"), key=lambda b: order[b[1]])
    free_blocks = [b for b in p.blocks if b[1] == "free"]
    perm_cone = np.concatenate([np.arange(off, off + (dim * dim if kind == "psd" else dim)) for _, kind, off, dim in cone_blocks]) if cone_blocks else np.zeros(0, int)
    perm_free = np.concatenate([np.arange(off, off + dim) for _, _, off, dim in free_blocks]) if free_blocks else np.zeros(0, int)

    E = sparse.vstack([_pad(e.A, n) for _, e in p.equalities]).tocsc()
    e0 = np.concatenate([e.b for _, e in p.equalities])
    f = np.asarray(_pad(p.objective.A, n).toarray()).ravel()
    f0 = float(p.objective.b[0])

    # symmetrize the coefficients seen by each PSD block: row i pairs with its transpose entry
    Ez = E[:, perm_cone].T.tocsr()  # rows follow cone storage
    fz = f[perm_cone]
    tperm = np.arange(len(perm_cone))
    pos = 0
    for _, kind, _, dim in cone_blocks:
        size = dim * dim if kind == "psd" else dim
        if kind == "psd":
            tperm[pos:pos + size] = pos + np.arange(size).reshape(dim, dim).T.ravel()
        pos += size
    Ez = (0.5 * (Ez + Ez[tperm])).toarray()
    fz = 0.5 * (fz + fz[tperm])

    dims = {
        "l": int(sum(d for _, k, _, d in cone_blocks if k == "nonneg")),
        "q": [int(d) for _, k, _, d in cone_blocks if k == "soc"],
        "s": [int(d) for _, k, _, d in cone_blocks if k == "psd"],
    }
    kw = {}
    if len(perm_free):
        kw["A"] = _cvx_matrix(E[:, perm_free].T.tocsr())
        kw["b"] = matrix(-f[perm_free])
    # feasibility below 1e-7 is unreachable in double precision on badly scaled instances
    options = {"show_progress": verbose, "maxiters": max_iter, "abstol": tol, "reltol": tol, "feastol": max(tol, 1e-7)}
    started = time.perf_counter()
    if kkt == "block":
        A_free = E[:, perm_free].T.toarray() if len(perm_free) else None
        kktsolver = _BlockKKT(Ez, dims, A_free)
    else:
        kktsolver = kkt
    Gop = _sparse_operator(sparse.csr_matrix(Ez), dims) if kkt == "block" else matrix(Ez)
    try:
        res = solvers.conelp(matrix(e0), Gop, matrix(-fz), dims, options=options, kktsolver=kktsolver, **kw)
    except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        stats = {"backend": "cvxopt", "raw_status": f"{type(exc).__name__}: {exc}",
                 "solve_time": time.perf_counter() - started, "n_vars": n, "n_rows": len(e0)}
        return ConicSolution(status="numerical_failure", x=None, objective=None, stats=stats)
    elapsed = time.perf_counter() - started

    raw = res["status"]
    x = np.zeros(n)
    if res["z"] is not None:
        x[perm_cone] = np.asarray(res["z"]).ravel()
        if len(perm_free):
            x[perm_free] = np.asarray(res["y"]).ravel()
        for name, kind, off, dim in cone_blocks:
            if kind == "psd":
                S = x[off:off + dim * dim].reshape(dim, dim, order="F")
                L = np.tril(S)
                x[off:off + dim * dim] = (L + np.tril(S, -1).T).ravel(order="F")
    stats = {
        "backend": "cvxopt",
        "raw_status": raw,
        "iterations": int(res["iterations"]),
        "solve_time": elapsed,
        "gap": float(res["gap"]) if res["gap"] is not None else float("nan"),
        "r_prim": float(res["dual infeasibility"] or 0.0),
        "r_dual": float(res["primal infeasibility"] or 0.0),
        "n_vars": n,
        "n_rows": len(e0),
    }
    status = {"optimal": "optimal", "primal infeasible": "unbounded", "dual infeasible": "infeasible"}.get(raw, "numerical_failure")
    if raw == "unknown" and res["z"] is not None:
        scale = 1.0 + float(np.max(np.abs(e0), initial=0.0))
        worst = max(p.residuals(x).values(), default=0.0)
        stats["max_residual"] = worst
        if worst <= 10 * max(tol, 1e-7) * scale and res["gap"] is not None and abs(res["gap"]) <= 1e-5 * (1 + abs(res["dual objective"] or 0.0)):
            status = "optimal"
        else:
            status = "iteration_limit" if stats["iterations"] >= max_iter else "numerical_failure"
    if status != "optimal":
        return ConicSolution(status=status, x=None, objective=None, stats=stats)
    return ConicSolution(status=status, x=x, objective=float(p.objective.value(x)[0]), stats=stats)
