"""Trilinear (Q1) finite element assembly and linear solvers.

Assembly is fully vectorized over elements. A precomputed AssemblyPlan
maps element-local 8x8 blocks straight into CSR data, so matrices that
change every time step (reaction mass) can be rebuilt cheaply on a fixed
sparsity pattern.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.linalg import splu

from . import _hex
from .errors import AssemblyError, InvalidArgumentError, NonConvergenceError
from .geometry import Mesh


@dataclass(frozen=True)
class QuadratureRule:
    """Quadrature points and weights on the reference cube [-1,1]^3."""

    points: np.ndarray
    weights: np.ndarray

    @property
    def n_points(self) -> int:
        return len(self.weights)


def gauss2() -> QuadratureRule:
    """Tensor-product 2x2x2 Gauss rule, exact through degree 3 per axis."""
    g = 1.0 / np.sqrt(3.0)
    return QuadratureRule(points=_hex.CORNERS * g, weights=np.ones(8))


@dataclass
class ElementGeometry:
    """Per-element quadrature data on a fixed mesh.

    Attributes
    ----------
    wdet : (n_elems, nq) quadrature weights times Jacobian determinants.
    grads : (n_elems, nq, 8, 3) physical shape-function gradients.
    shapes : (nq, 8) reference shape values.
    """

    wdet: np.ndarray
    grads: np.ndarray
    shapes: np.ndarray


def precompute_geometry(mesh: Mesh, rule: QuadratureRule | None = None) -> ElementGeometry:
    """Evaluate Jacobians and physical gradients at the quadrature points.

    Raises AssemblyError naming the first inverted element, if any.
    """
    rule = rule or gauss2()
    corner_coords = mesh.nodes[mesh.elems]
    jac = _hex.jacobians(corner_coords, rule.points)
    det = np.linalg.det(jac)
    if np.any(det <= 0.0):
        bad = int(np.nonzero(np.any(det <= 0.0, axis=1))[0][0])
        raise AssemblyError(f"element {bad} has non-positive Jacobian")
    inv_t = np.linalg.inv(jac).transpose(0, 1, 3, 2)
    dN = _hex.shape_gradients(rule.points)
    grads = np.einsum("epab,pkb->epka", inv_t, dN)
    wdet = det * rule.weights[None, :]
    return ElementGeometry(wdet=wdet, grads=grads, shapes=_hex.shape_values(rule.points))


class AssemblyPlan:
    """CSR scatter plan for repeated assembly on one mesh.

    The plan fixes the union sparsity pattern of all node-pair couplings
    and exposes `assemble`, which turns (n_elems, 8, 8) element blocks
    into a CSR matrix on that pattern via a single bincount pass.
    """

    def __init__(self, mesh: Mesh):
        elems = mesh.elems
        rows = np.repeat(elems, 8, axis=1).ravel()
        cols = np.tile(elems, (1, 8)).ravel()
        order = np.lexsort((cols, rows))
        rs, cs = rows[order], cols[order]
        new_pair = np.empty(len(rs), dtype=bool)
        new_pair[0] = True
        new_pair[1:] = (rs[1:] != rs[:-1]) | (cs[1:] != cs[:-1])
        slot_of_sorted = np.cumsum(new_pair) - 1
        self.entry_slots = np.empty(len(rs), dtype=np.int64)
        self.entry_slots[order] = slot_of_sorted
        self.nnz = int(slot_of_sorted[-1]) + 1
        n = mesh.n_nodes
        unique_rows = rs[new_pair]
        self.indices = cs[new_pair].astype(np.int32)
        self.indptr = np.zeros(n + 1, dtype=np.int32)
        np.add.at(self.indptr, unique_rows + 1, 1)
        self.indptr = np.cumsum(self.indptr, dtype=np.int32)
        self.shape = (n, n)
        self.diag_slots = None

    def assemble(self, element_blocks: np.ndarray) -> csr_matrix:
        data = np.bincount(self.entry_slots, weights=element_blocks.ravel(),
                           minlength=self.nnz)
        return csr_matrix((data, self.indices, self.indptr), shape=self.shape)

    def assemble_data(self, element_blocks: np.ndarray) -> np.ndarray:
        """Just the CSR data vector, for callers that patch a template."""
        return np.bincount(self.entry_slots, weights=element_blocks.ravel(),
                           minlength=self.nnz)


def mass_blocks(geo: ElementGeometry, nodal_weight: np.ndarray | None = None,
                elems: np.ndarray | None = None) -> np.ndarray:
    """Element mass blocks, optionally weighted by an interpolated nodal field.

    With nodal_weight given (shape (n_nodes,)), computes the blocks of
    int w_h phi_i phi_j using the same interpolation for w_h as for the
    solution, which is the nodal-interpolation treatment of reaction terms.
    """
    N = geo.shapes
    if nodal_weight is None:
        return np.einsum("eq,qi,qj->eij", geo.wdet, N, N, optimize=True)
    wq = nodal_weight[elems] @ N.T
    return np.einsum("eq,qi,qj->eij", geo.wdet * wq, N, N, optimize=True)


def assemble_mass(mesh: Mesh, lumped: bool = False,
                  geo: ElementGeometry | None = None) -> csr_matrix:
    """Mass matrix; row-sum lumped to a diagonal when lumped=True."""
    geo = geo or precompute_geometry(mesh)
    blocks = mass_blocks(geo)
    plan = AssemblyPlan(mesh)
    M = plan.assemble(blocks)
    if not lumped:
        return M
    diag = np.asarray(M.sum(axis=1)).ravel()
    n = mesh.n_nodes
    return csr_matrix((diag, np.arange(n, dtype=np.int32),
                       np.arange(n + 1, dtype=np.int32)), shape=(n, n))


def lumped_mass_vector(mesh: Mesh, geo: ElementGeometry | None = None) -> np.ndarray:
    """Row sums of the mass matrix as a vector (integrals of each basis fn)."""
    geo = geo or precompute_geometry(mesh)
    contrib = np.einsum("eq,qi->ei", geo.wdet, geo.shapes)
    return np.bincount(mesh.elems.ravel(), weights=contrib.ravel(),
                       minlength=mesh.n_nodes)


def stiffness_blocks(geo: ElementGeometry, tensors: np.ndarray) -> np.ndarray:
    """Element stiffness blocks for per-element symmetric tensors (nel,3,3)."""
    asym = np.abs(tensors - tensors.transpose(0, 2, 1)).max(axis=(1, 2))
    scale = np.abs(tensors).max(axis=(1, 2)) + 1e-300
    bad = np.nonzero(asym > 1e-10 * scale)[0]
    if bad.size:
        raise InvalidArgumentError(
            f"conductivity tensor of element {int(bad[0])} is not symmetric")
    return np.einsum("eq,eqid,edc,eqjc->eij", geo.wdet, geo.grads, tensors,
                     geo.grads, optimize=True)


def assemble_stiffness(mesh: Mesh, tensors: np.ndarray,
                       geo: ElementGeometry | None = None) -> csr_matrix:
    """Stiffness matrix int (D grad phi_j) . grad phi_i with D per element."""
    geo = geo or precompute_geometry(mesh)
    tensors = np.asarray(tensors, dtype=float)
    if tensors.shape == (3, 3):
        tensors = np.broadcast_to(tensors, (len(mesh.elems), 3, 3))
    if tensors.shape != (len(mesh.elems), 3, 3):
        raise InvalidArgumentError(
            f"tensors must have shape (n_elems, 3, 3), got {tensors.shape}")
    plan = AssemblyPlan(mesh)
    return plan.assemble(stiffness_blocks(geo, tensors))


@dataclass
class SolveReport:
    """Outcome of an iterative solve."""

    x: np.ndarray
    iterations: int
    residual: float
    converged: bool


def gmres_solve(A, b: np.ndarray, x0: np.ndarray | None = None,
                rel_tol: float = 1e-10, abs_tol: float = 0.0,
                restart: int = 200, max_iter: int = 2000,
                preconditioner: str | np.ndarray | None = "jacobi") -> SolveReport:
    """Restarted GMRES with optional Jacobi (diagonal) preconditioning.

    Right preconditioning is used, so the convergence test applies to the
    true residual: ||b - A x|| <= max(rel_tol * ||b||, abs_tol). Raises
    NonConvergenceError carrying the best iterate when the budget of
    max_iter inner iterations is exhausted.
    """
    n = len(b)
    if isinstance(preconditioner, str):
        if preconditioner != "jacobi":
            raise InvalidArgumentError(f"unknown preconditioner {preconditioner!r}")
        diag = A.diagonal()
        if np.any(diag == 0.0):
            raise InvalidArgumentError("Jacobi preconditioner needs a nonzero diagonal")
        minv = 1.0 / diag
    elif preconditioner is None:
        minv = None
    else:
        minv = np.asarray(preconditioner, dtype=float)

    def precond(v):
        return v if minv is None else minv * v

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    norm_b = np.linalg.norm(b)
    tol = max(rel_tol * norm_b, abs_tol)
    if norm_b == 0.0:
        return SolveReport(x=np.zeros(n), iterations=0, residual=0.0, converged=True)

    iterations = 0
    m = max(1, restart)
    V = np.empty((m + 1, n))
    H = np.zeros((m + 1, m))
    while True:
        r = b - A @ x
        beta = np.linalg.norm(r)
        if beta <= tol:
            return SolveReport(x=x, iterations=iterations, residual=float(beta),
                               converged=True)
        if iterations >= max_iter:
            raise NonConvergenceError(
                f"GMRES did not reach {tol:.3e} in {max_iter} iterations "
                f"(residual {beta:.3e})", best=x, residual=float(beta),
                iterations=iterations)
        V[0] = r / beta
        g = np.zeros(m + 1)
        g[0] = beta
        cs = np.zeros(m)
        sn = np.zeros(m)
        j_used = 0
        for j in range(m):
            w = A @ precond(V[j])
            # modified Gram-Schmidt
            for i in range(j + 1):
                H[i, j] = w @ V[i]
                w -= H[i, j] * V[i]
            H[j + 1, j] = np.linalg.norm(w)
            iterations += 1
            j_used = j + 1
            if H[j + 1, j] > 1e-300:
                V[j + 1] = w / H[j + 1, j]
            # Givens rotations keep the least-squares problem triangular
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            denom = np.hypot(H[j, j], H[j + 1, j])
            cs[j], sn[j] = H[j, j] / denom, H[j + 1, j] / denom
            H[j, j] = denom
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            if abs(g[j + 1]) <= tol or iterations >= max_iter:
                break
        y = np.zeros(j_used)
        for i in range(j_used - 1, -1, -1):
            y[i] = (g[i] - H[i, i + 1:j_used] @ y[i + 1:j_used]) / H[i, i]
        x = x + precond(V[:j_used].T @ y)


def solve_dirichlet(A: csr_matrix, b: np.ndarray, fixed_ids: np.ndarray,
                    fixed_values: np.ndarray, method: str = "direct") -> np.ndarray:
    """Solve A x = b with prescribed values on a set of nodes.

    The constrained rows and columns are eliminated; the reduced system is
    solved directly (sparse LU) or with gmres_solve when method="gmres".
    """
    n = A.shape[0]
    fixed_ids = np.asarray(fixed_ids, dtype=int)
    fixed_values = np.asarray(fixed_values, dtype=float)
    if fixed_ids.size != fixed_values.size:
        raise InvalidArgumentError("fixed ids and values must align")
    if fixed_ids.size == 0:
        raise InvalidArgumentError("Dirichlet solve needs at least one fixed node")
    mask = np.zeros(n, dtype=bool)
    mask[fixed_ids] = True
    free = np.nonzero(~mask)[0]

    x = np.zeros(n)
    x[fixed_ids] = fixed_values
    rhs = b[free] - A[free][:, fixed_ids] @ fixed_values
    A_ff = A[free][:, free].tocsc()
    if method == "direct":
        x[free] = splu(A_ff).solve(rhs)
    elif method == "gmres":
        x[free] = gmres_solve(A_ff.tocsr(), rhs).x
    else:
        raise InvalidArgumentError(f"unknown method {method!r}")
    return x
