"""Uniform box-grid discretization and residual/Jacobian assembly.

The grid is a tensor product of ``res`` equally spaced nodes per axis,
boundary layers included, so every interior stencil reads only grid nodes
and one-sided differences never appear.  Interior nodes are the ones with
all indices in [1, res-2]; they are enumerated row-major (C order), and
that ordering is the row ordering of the assembled sparse systems.

Second derivatives use the 3-point second difference on the diagonal and
the 4-point cross for mixed terms, both exact on quadratics; gradients
use central differences.  Assembly is vectorized over interior nodes:
node-level work shares no state, and the final gather into the sparse
structure is the only synchronization point.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from . import expr as expr_mod
from . import symfun
from .errors import NotAdmissibleError
from .spectral import _jacobi, eta_transform


@dataclass(frozen=True)
class Grid:
    """Axis-aligned box [lo, hi] sampled with ``res`` nodes per axis."""

    n: int
    lo: tuple
    hi: tuple
    res: int

    def __post_init__(self):
        if self.n not in (2, 3):
            raise ValueError(f"grid dimension must be 2 or 3, got {self.n}")
        if len(self.lo) != self.n or len(self.hi) != self.n:
            raise ValueError("lo/hi length must match the dimension")
        if self.res < 5:
            raise ValueError(f"resolution must be >= 5, got {self.res}")
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))
        if not all(b > a for a, b in zip(self.lo, self.hi)):
            raise ValueError("need hi > lo on every axis")

    @property
    def shape(self):
        return (self.res,) * self.n

    @property
    def h(self):
        """Node spacing per axis."""
        return (np.array(self.hi) - np.array(self.lo)) / (self.res - 1)

    @property
    def interior_shape(self):
        return (self.res - 2,) * self.n

    @property
    def num_interior(self):
        return (self.res - 2) ** self.n

    def axis_coords(self, i):
        return np.linspace(self.lo[i], self.hi[i], self.res)

    def coords(self):
        """Coordinates of every node, shape grid.shape + (n,)."""
        axes = [self.axis_coords(i) for i in range(self.n)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def interior_coords(self):
        """Coordinates of interior nodes, row-major, shape (N_int, n)."""
        core = (slice(1, -1),) * self.n
        return self.coords()[core].reshape(-1, self.n)

    def boundary_mask(self):
        mask = np.zeros(self.shape, dtype=bool)
        for axis in range(self.n):
            idx = [slice(None)] * self.n
            idx[axis] = 0
            mask[tuple(idx)] = True
            idx[axis] = self.res - 1
            mask[tuple(idx)] = True
        return mask

    def is_interior(self, node):
        return all(1 <= i <= self.res - 2 for i in node)

    def node_coord(self, node):
        return np.array(
            [self.lo[a] + self.h[a] * node[a] for a in range(self.n)]
        )


@dataclass
class GridFunction:
    """Real values on every node of a grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(
                f"values shape {self.values.shape} != grid shape {self.grid.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid function contains NaN or Inf")

    def copy(self):
        return GridFunction(self.grid, self.values.copy())

    def interior(self):
        core = (slice(1, -1),) * self.grid.n
        return self.values[core].reshape(-1)


@dataclass
class SparseSystem:
    """Row-compressed Jacobian over interior nodes plus right-hand side."""

    matrix: sparse.csr_matrix
    rhs: np.ndarray


def sample_expression(e, grid, u=None, p=None):
    """Evaluate an expression of x (and optionally u, p) at every node."""
    coords = grid.coords().reshape(-1, grid.n)
    env = expr_mod.EvalEnv(x=coords, u=u, p=p)
    values = np.broadcast_to(expr_mod.evaluate(e, env), (coords.shape[0],))
    return GridFunction(grid, values.reshape(grid.shape).copy())


def _require_interior(grid, node):
    node = tuple(int(i) for i in node)
    if len(node) != grid.n or not grid.is_interior(node):
        raise ValueError(f"node {node} is not an interior node")
    return node


def fd_gradient(u, node):
    """Central-difference gradient at one interior node; second order,
    exact on quadratics."""
    grid = u.grid
    node = _require_interior(grid, node)
    h = grid.h
    out = np.empty(grid.n)
    for a in range(grid.n):
        up = list(node)
        dn = list(node)
        up[a] += 1
        dn[a] -= 1
        out[a] = (u.values[tuple(up)] - u.values[tuple(dn)]) / (2.0 * h[a])
    return out


def fd_hessian(u, node):
    """Finite-difference Hessian at one interior node.

    3-point second differences on the diagonal, the 4-point cross for
    mixed entries; exact on quadratics.
    """
    grid = u.grid
    node = _require_interior(grid, node)
    h = grid.h
    n = grid.n
    H = np.empty((n, n))
    c = u.values[node]
    for a in range(n):
        up = list(node)
        dn = list(node)
        up[a] += 1
        dn[a] -= 1
        H[a, a] = (u.values[tuple(up)] - 2.0 * c + u.values[tuple(dn)]) / h[a] ** 2
    for a in range(n):
        for b in range(a + 1, n):
            acc = 0.0
            for sa in (1, -1):
                for sb in (1, -1):
                    q = list(node)
                    q[a] += sa
                    q[b] += sb
                    acc += sa * sb * u.values[tuple(q)]
            H[a, b] = H[b, a] = acc / (4.0 * h[a] * h[b])
    return H


def _shifted(values, n, offset):
    # View of the interior block displaced by ``offset`` (entries in {-1,0,1}).
    res = values.shape[0]
    idx = tuple(slice(1 + o, res - 1 + o) for o in offset)
    return values[idx]


def interior_gradients(values, grid):
    """Central-difference gradients at all interior nodes, shape (N_int, n)."""
    n = grid.n
    h = grid.h
    cols = []
    for a in range(n):
        o = [0] * n
        o[a] = 1
        up = _shifted(values, n, o)
        o[a] = -1
        dn = _shifted(values, n, o)
        cols.append((up - dn) / (2.0 * h[a]))
    return np.stack([c.reshape(-1) for c in cols], axis=-1)


def interior_hessians(values, grid):
    """Stencil Hessians at all interior nodes, shape (N_int, n, n)."""
    n = grid.n
    h = grid.h
    core = _shifted(values, n, [0] * n)
    H = np.empty(core.shape + (n, n))
    for a in range(n):
        o = [0] * n
        o[a] = 1
        up = _shifted(values, n, o)
        o[a] = -1
        dn = _shifted(values, n, o)
        H[..., a, a] = (up - 2.0 * core + dn) / h[a] ** 2
    for a in range(n):
        for b in range(a + 1, n):
            acc = np.zeros_like(core)
            for sa in (1, -1):
                for sb in (1, -1):
                    o = [0] * n
                    o[a] = sa
                    o[b] = sb
                    acc = acc + sa * sb * _shifted(values, n, o)
            H[..., a, b] = H[..., b, a] = acc / (4.0 * h[a] * h[b])
    return H.reshape(-1, n, n)


def admissibility_margin(tables, k, n):
    """Smallest normalized sigma_j / C(n, j) over nodes and 1 <= j <= k."""
    norm = np.array([math.comb(n, j) for j in range(1, k + 1)], dtype=float)
    return float(np.min(tables[..., 1 : k + 1] / norm))


class _OperatorFields:
    """Per-node spectral data shared by residual and Jacobian assembly."""

    __slots__ = ("values", "margin", "lam", "vectors", "tables")

    def __init__(self, values, margin, lam, vectors, tables):
        self.values = values
        self.margin = margin
        self.lam = lam
        self.vectors = vectors
        self.tables = tables


def _operator_fields(values, grid, spec):
    H = interior_hessians(values, grid)
    U = eta_transform(H, spec.tau)
    lam, vec = _jacobi(U)
    tables = symfun._sigma_table(lam)
    ok = np.all(tables[..., 1 : spec.k + 1] > 0.0, axis=-1)
    if not np.all(ok):
        row = int(np.flatnonzero(~ok)[0])
        j = int(np.argmax(tables[row, 1 : spec.k + 1] <= 0.0)) + 1
        node = tuple(
            int(i) + 1 for i in np.unravel_index(row, grid.interior_shape)
        )
        raise NotAdmissibleError(lam[row], j, node=node)
    fvals = (tables[..., spec.k] / tables[..., spec.l]) ** (1.0 / spec.degree_gap)
    margin = admissibility_margin(tables, spec.k, spec.n)
    return _OperatorFields(fvals, margin, lam, vec, tables)


def _forcing(u_values, grid, prob, t, psi0):
    if t == 0.0:
        return np.asarray(psi0, dtype=float)
    x = grid.interior_coords()
    core = (slice(1, -1),) * grid.n
    uvals = u_values[core].reshape(-1)
    p = interior_gradients(u_values, grid)
    psi, _, _ = prob.psi_terms(x, uvals, p)
    return t * psi + (1.0 - t) * np.asarray(psi0, dtype=float)


def assemble_residual(u, prob, t, psi0):
    """Residual of the continuation stage at parameter t on interior nodes.

    R_p = operator(transformed stencil Hessian at p)
          - [ t * psi(x_p, u_p, grad u_p) + (1 - t) * psi0_p ],

    returned as a flat row-major vector.  Fails with NotAdmissibleError
    naming the first node whose transformed Hessian leaves the cone;
    boundary values of u are taken as given (the caller pins them to the
    boundary data).
    """
    fields = _operator_fields(u.values, prob.grid, prob.quotient)
    return fields.values - _forcing(u.values, prob.grid, prob, t, psi0)


def assemble_jacobian(u, prob, t, psi0=None, fields=None):
    """Sparse Jacobian of the stage residual with respect to interior values.

    Row p holds  sum_ij Q_ij(p) * (Hessian stencil weight of u_q in H_ij(p))
    minus t * psi_z(p) on the diagonal and t * psi_p(p) times the gradient
    stencil weights.  Stencil neighbors on the boundary carry no unknowns;
    their pinned values already live in the residual, which is returned
    negated as the right-hand side when psi0 is provided.
    """
    grid = prob.grid
    spec = prob.quotient
    n = grid.n
    h = grid.h
    if fields is None:
        fields = _operator_fields(u.values, grid, spec)
    f = symfun._quotient_gradient_core(
        fields.lam, fields.tables, symfun._deleted_tables(fields.lam), spec.k, spec.l
    )
    G = np.einsum("...ip,...p,...jp->...ij", fields.vectors, f, fields.vectors)
    G = 0.5 * (G + np.swapaxes(G, -1, -2))
    trG = np.trace(G, axis1=-2, axis2=-1)
    Q = spec.tau * trG[..., None, None] * np.eye(n) - G

    nint = grid.num_interior
    ids = np.arange(nint)
    multi = np.stack(
        np.unravel_index(ids, grid.interior_shape), axis=-1
    ) + 1  # grid indices of interior nodes

    rows, cols, data = [], [], []

    def add(offset, weights):
        nb = multi + np.asarray(offset)
        ok = np.all((nb >= 1) & (nb <= grid.res - 2), axis=-1)
        if not np.any(ok):
            return
        flat = np.ravel_multi_index((nb[ok] - 1).T, grid.interior_shape)
        rows.append(ids[ok])
        cols.append(flat)
        data.append(np.asarray(weights)[ok])

    # second-difference diagonal blocks
    center = np.zeros(nint)
    for a in range(n):
        qaa = Q[:, a, a]
        w = qaa / h[a] ** 2
        center -= 2.0 * w
        for s in (1, -1):
            o = [0] * n
            o[a] = s
            add(o, w)
    # 4-point crosses; H_ab appears twice in the trace pairing
    for a in range(n):
        for b in range(a + 1, n):
            qab = 2.0 * Q[:, a, b]
            for sa in (1, -1):
                for sb in (1, -1):
                    o = [0] * n
                    o[a] = sa
                    o[b] = sb
                    add(o, qab * sa * sb / (4.0 * h[a] * h[b]))
    # first-order terms from psi(x, u, grad u)
    if t != 0.0:
        x = grid.interior_coords()
        core = (slice(1, -1),) * n
        uvals = u.values[core].reshape(-1)
        p = interior_gradients(u.values, grid)
        _, psi_z, psi_p = prob.psi_terms(x, uvals, p)
        center -= t * np.broadcast_to(psi_z, (nint,))
        if np.any(np.asarray(psi_p) != 0.0):
            psi_p = np.broadcast_to(psi_p, (nint, n))
            for a in range(n):
                for s in (1, -1):
                    o = [0] * n
                    o[a] = s
                    add(o, -t * psi_p[:, a] * s / (2.0 * h[a]))

    rows.append(ids)
    cols.append(ids)
    data.append(center)

    matrix = sparse.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(nint, nint),
    ).tocsr()

    if psi0 is None:
        rhs = np.zeros(nint)
    else:
        rhs = -(fields.values - _forcing(u.values, grid, prob, t, psi0))
    return SparseSystem(matrix=matrix, rhs=rhs)


def exact_interior_gradients(e, grid):
    """Symbolic gradient of an expression of x, sampled at interior nodes."""
    x = grid.interior_coords()
    env = expr_mod.EvalEnv(x=x)
    cols = []
    for a in range(grid.n):
        d = expr_mod.differentiate(e, f"x{a + 1}")
        cols.append(np.broadcast_to(expr_mod.evaluate(d, env), (x.shape[0],)))
    return np.stack(cols, axis=-1)


def exact_interior_hessians(e, grid):
    """Symbolic Hessian of an expression of x, sampled at interior nodes."""
    x = grid.interior_coords()
    env = expr_mod.EvalEnv(x=x)
    n = grid.n
    H = np.empty((x.shape[0], n, n))
    for a in range(n):
        da = expr_mod.differentiate(e, f"x{a + 1}")
        for b in range(a, n):
            dab = expr_mod.differentiate(da, f"x{b + 1}")
            vals = np.broadcast_to(expr_mod.evaluate(dab, env), (x.shape[0],))
            H[:, a, b] = H[:, b, a] = vals
    return H


def csv_lines(u):
    """Rows of the grid CSV: indices, coordinates, value; row-major order."""
    grid = u.grid
    if grid.n == 2:
        yield "i,j,x1,x2,u"
    else:
        yield "i,j,k,x1,x2,x3,u"
    coords = grid.coords().reshape(-1, grid.n)
    flat = u.values.reshape(-1)
    for row, idx in enumerate(np.ndindex(grid.shape)):
        parts = [str(i) for i in idx]
        parts += [repr(float(c)) for c in coords[row]]
        parts.append(repr(float(flat[row])))
        yield ",".join(parts)
