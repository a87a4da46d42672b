"""Rule-based myocardial fiber architecture from harmonic coordinates.

Two Laplace solves provide a transmural coordinate (1 on the endocardium,
0 on the epicardium) and an apicobasal coordinate (0 at the apex, 1 on the
base). Their gradients span a local wall frame; fibers are laid at an
angle interpolated linearly across the wall, sheets tilted about the
fiber axis.

Frame convention: with e_t the unit transmural gradient, e_l the unit
apicobasal direction orthogonalized against e_t, and e_c = e_l x e_t the
circumferential axis, the fiber is

    f = cos(alpha) e_c + sin(alpha) e_l,

i.e. alpha = 0 lays fibers circumferentially and positive alpha rotates
toward the base. The sheet normal pair starts at (s0, e_t) with
s0 = -sin(alpha) e_c + cos(alpha) e_l and is rotated by beta about f.
On slabs without a BASE surface the apicobasal coordinate falls back to
x/Lx along the first axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import _hex, fem
from .errors import InvalidArgumentError
from .geometry import Mesh, SurfaceTag


@dataclass(frozen=True)
class FiberAngles:
    """Fiber and sheet angles (degrees) on the two wall surfaces."""

    alpha_endo: float = 60.0
    alpha_epi: float = -60.0
    beta_endo: float = -20.0
    beta_epi: float = 20.0

    def __post_init__(self):
        for name in ("alpha_endo", "alpha_epi"):
            a = getattr(self, name)
            if not -90.0 < a < 90.0:
                raise InvalidArgumentError(f"{name}={a} must lie in (-90, 90) degrees")

    def alpha(self, phi):
        """Fiber angle (radians) at transmural coordinate phi (1 = endo)."""
        return np.deg2rad(self.alpha_endo * phi + self.alpha_epi * (1.0 - phi))

    def beta(self, phi):
        return np.deg2rad(self.beta_endo * phi + self.beta_epi * (1.0 - phi))


@dataclass
class FiberField:
    """Orthonormal (fiber, sheet, normal) triple at every node."""

    f: np.ndarray
    s: np.ndarray
    n: np.ndarray
    singular: np.ndarray

    def validate(self, tol: float = 1e-8) -> None:
        for name, v in (("f", self.f), ("s", self.s), ("n", self.n)):
            if np.abs(np.linalg.norm(v, axis=1) - 1.0).max() > tol:
                raise InvalidArgumentError(f"{name} axis is not unit length")
        if np.abs(np.sum(self.f * self.s, axis=1)).max() > tol \
                or np.abs(np.sum(self.f * self.n, axis=1)).max() > tol \
                or np.abs(np.sum(self.s * self.n, axis=1)).max() > tol:
            raise InvalidArgumentError("fiber frame is not orthogonal")

    @classmethod
    def uniform(cls, n_nodes: int, f=(1.0, 0.0, 0.0), s=(0.0, 1.0, 0.0),
                n=(0.0, 0.0, 1.0)) -> "FiberField":
        """Constant frame everywhere (slab studies with axis-aligned fibers)."""
        frame = np.array([f, s, n], dtype=float)
        if np.abs(frame @ frame.T - np.eye(3)).max() > 1e-8:
            raise InvalidArgumentError("uniform frame must be orthonormal")
        ones = np.ones((n_nodes, 1))
        return cls(f=ones * frame[0], s=ones * frame[1], n=ones * frame[2],
                   singular=np.zeros(n_nodes, dtype=bool))


def solve_laplace(mesh: Mesh, fixed_ids: np.ndarray, fixed_values: np.ndarray,
                  geo: fem.ElementGeometry | None = None) -> np.ndarray:
    """Harmonic interpolation of boundary data over the mesh."""
    K = fem.assemble_stiffness(mesh, np.eye(3), geo=geo)
    return fem.solve_dirichlet(K, np.zeros(mesh.n_nodes), fixed_ids, fixed_values)


def solve_transmural(mesh: Mesh, geo: fem.ElementGeometry | None = None) -> np.ndarray:
    """Wall-depth coordinate: 1 on the endocardium, 0 on the epicardium."""
    endo = mesh.boundary_node_ids(SurfaceTag.ENDO)
    epi = mesh.boundary_node_ids(SurfaceTag.EPI)
    if endo.size == 0 or epi.size == 0:
        raise InvalidArgumentError("mesh lacks tagged ENDO/EPI surfaces")
    ids = np.concatenate([endo, epi])
    vals = np.concatenate([np.ones(endo.size), np.zeros(epi.size)])
    return solve_laplace(mesh, ids, vals, geo=geo)


def apex_node_set(mesh: Mesh) -> np.ndarray:
    """Boundary nodes within 1.5 h of the lowest boundary point."""
    surf = mesh.boundary_node_ids()
    z = mesh.nodes[surf, 2]
    lowest = mesh.nodes[surf[np.argmin(z)]]
    d = np.linalg.norm(mesh.nodes[surf] - lowest, axis=1)
    return surf[d <= 1.5 * mesh.characteristic_size]


def solve_apicobasal(mesh: Mesh, geo: fem.ElementGeometry | None = None) -> np.ndarray:
    """Apex-to-base coordinate: 0 at the apex set, 1 on the base.

    Slabs carry no BASE tag; the coordinate then falls back to the
    normalized first axis x/Lx (documented slab convention).
    """
    base = mesh.boundary_node_ids(SurfaceTag.BASE)
    if base.size == 0:
        x = mesh.nodes[:, 0]
        span = x.max() - x.min()
        if span <= 0.0:
            raise InvalidArgumentError("degenerate mesh: zero extent along x")
        return (x - x.min()) / span
    apex = np.setdiff1d(apex_node_set(mesh), base)
    ids = np.concatenate([apex, base])
    vals = np.concatenate([np.zeros(apex.size), np.ones(base.size)])
    return solve_laplace(mesh, ids, vals, geo=geo)


def nodal_gradient(mesh: Mesh, field: np.ndarray) -> np.ndarray:
    """Gradient of a node field, averaged element-corner-wise with
    Jacobian-determinant weights."""
    if field.shape != (mesh.n_nodes,):
        raise InvalidArgumentError("field length does not match node count")
    corner_coords = mesh.nodes[mesh.elems]
    jac = _hex.jacobians(corner_coords, _hex.CORNERS)
    det = np.linalg.det(jac)
    inv_t = np.linalg.inv(jac).transpose(0, 1, 3, 2)
    dN = _hex.shape_gradients(_hex.CORNERS)
    ref_grad = np.einsum("ek,pkd->epd", field[mesh.elems], dN)
    grad = np.einsum("epab,epb->epa", inv_t, ref_grad)

    out = np.zeros((mesh.n_nodes, 3))
    wsum = np.bincount(mesh.elems.ravel(), weights=det.ravel(),
                       minlength=mesh.n_nodes)
    for d in range(3):
        out[:, d] = np.bincount(mesh.elems.ravel(),
                                weights=(det * grad[:, :, d]).ravel(),
                                minlength=mesh.n_nodes)
    return out / wsum[:, None]


def generate_fibers(mesh: Mesh, angles: FiberAngles | None = None,
                    phi: np.ndarray | None = None,
                    psi: np.ndarray | None = None) -> FiberField:
    """Build the orthonormal fiber frame at every node.

    Nodes where the frame degenerates (vanishing transmural gradient, or
    apicobasal gradient parallel to it, as happens near the apex) are
    flagged singular and inherit the frame of the nearest regular node.
    """
    angles = angles or FiberAngles()
    geo = fem.precompute_geometry(mesh)
    if phi is None:
        phi = solve_transmural(mesh, geo=geo)
    if psi is None:
        psi = solve_apicobasal(mesh, geo=geo)

    g_t = nodal_gradient(mesh, phi)
    g_l = nodal_gradient(mesh, psi)
    nt = np.linalg.norm(g_t, axis=1)
    singular = nt < 1e-10
    e_t = g_t / np.where(singular, 1.0, nt)[:, None]

    raw = g_l - np.sum(g_l * e_t, axis=1)[:, None] * e_t
    nl = np.linalg.norm(raw, axis=1)
    singular |= nl < 1e-8 * np.maximum(np.linalg.norm(g_l, axis=1), 1e-300)
    e_l = raw / np.where(nl < 1e-300, 1.0, nl)[:, None]
    e_c = np.cross(e_l, e_t)

    phi_clip = np.clip(phi, 0.0, 1.0)
    a = angles.alpha(phi_clip)[:, None]
    b = angles.beta(phi_clip)[:, None]
    f = np.cos(a) * e_c + np.sin(a) * e_l
    s0 = -np.sin(a) * e_c + np.cos(a) * e_l
    s = np.cos(b) * s0 + np.sin(b) * e_t
    n = -np.sin(b) * s0 + np.cos(b) * e_t

    if singular.any():
        if singular.all():
            raise InvalidArgumentError("fiber frame is singular everywhere")
        regular = np.nonzero(~singular)[0]
        tree = cKDTree(mesh.nodes[regular])
        _, nearest = tree.query(mesh.nodes[singular])
        donor = regular[nearest]
        f[singular] = f[donor]
        s[singular] = s[donor]
        n[singular] = n[donor]

    field = FiberField(f=f, s=s, n=n, singular=singular)
    field.validate()
    return field
