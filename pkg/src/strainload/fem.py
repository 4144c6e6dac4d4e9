"""Linear (P1) tetrahedral elasticity: stiffness, pressure loads, strain
observation and the parameter-to-observable Jacobian."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import AFT, EXTERIOR, Mesh


class AssemblyError(ValueError):
    pass


class FactorizationError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class Material:
    young_modulus: float = 71.7e9
    shear_modulus: float = 71.7e9 / (2 * 1.33)

    def __post_init__(self):
        E, S = self.young_modulus, self.shear_modulus
        if not (E > 0 and S > 0):
            raise ValueError("moduli must be positive")
        if 3 * S - E == 0:
            raise ValueError("3S - E must be nonzero")
        if not 0 < self.poisson_ratio < 0.5:
            raise ValueError(f"derived Poisson ratio {self.poisson_ratio} outside (0, 0.5)")

    @classmethod
    def from_poisson(cls, young_modulus, poisson_ratio):
        return cls(young_modulus, young_modulus / (2 * (1 + poisson_ratio)))

    @property
    def poisson_ratio(self) -> float:
        return self.young_modulus / (2 * self.shear_modulus) - 1

    @property
    def lame_lambda(self) -> float:
        E, S = self.young_modulus, self.shear_modulus
        return S * (E - 2 * S) / (3 * S - E)

    def elasticity_matrix(self):
        """6x6 Voigt matrix for (xx, yy, zz, yz, xz, xy) with engineering shear."""
        lam, mu = self.lame_lambda, self.shear_modulus
        D = np.zeros((6, 6))
        D[:3, :3] = lam
        D[np.arange(3), np.arange(3)] += 2 * mu
        D[np.arange(3, 6), np.arange(3, 6)] = mu
        return D


def shape_gradients(nodes, tets):
    """Constant P1 shape-function gradients, shape (m, 4, 3), and volumes."""
    p = nodes[tets]
    M = np.concatenate([np.ones((len(tets), 4, 1)), p], axis=2)
    vol = np.linalg.det(M) / 6.0
    if np.any(vol == 0):
        bad = int(np.argmin(np.abs(vol)))
        raise AssemblyError(f"singular element {bad} (volume {vol[bad]:.3e})")
    grads = np.linalg.inv(M)[:, 1:, :].transpose(0, 2, 1)
    return grads, vol


def _voigt_b(grads):
    """Strain-displacement matrices, shape (m, 6, 12)."""
    m = len(grads)
    B = np.zeros((m, 6, 12))
    for a in range(4):
        gx, gy, gz = grads[:, a, 0], grads[:, a, 1], grads[:, a, 2]
        c = 3 * a
        B[:, 0, c] = gx
        B[:, 1, c + 1] = gy
        B[:, 2, c + 2] = gz
        B[:, 3, c + 1], B[:, 3, c + 2] = gz, gy
        B[:, 4, c], B[:, 4, c + 2] = gz, gx
        B[:, 5, c], B[:, 5, c + 1] = gy, gx
    return B


def _element_dofs(tets):
    return (3 * tets[:, :, None] + np.arange(3)).reshape(len(tets), 12)


def stiffness_matrix(nodes, tets, mat: Material) -> sp.csr_matrix:
    """Global stiffness without boundary conditions (symmetric to the bit)."""
    grads, vol = shape_gradients(nodes, tets)
    if np.any(vol < 0):
        raise AssemblyError("negatively oriented element")
    B = _voigt_b(grads)
    Ke = vol[:, None, None] * np.einsum("eki,kl,elj->eij", B, mat.elasticity_matrix(), B)
    dofs = _element_dofs(tets)
    rows = np.repeat(dofs, 12, axis=1).ravel()
    cols = np.tile(dofs, (1, 12)).ravel()
    vals = 0.5 * (Ke + Ke.transpose(0, 2, 1)).ravel()
    # Sum the upper triangle once and mirror it so that A == A.T bit for bit.
    upper = rows <= cols
    n = 3 * len(nodes)
    U = sp.coo_matrix((vals[upper], (rows[upper], cols[upper])), shape=(n, n)).tocsr()
    U.sum_duplicates()
    return (sp.triu(U, 1) + sp.triu(U, 1).T + sp.diags(U.diagonal())).tocsr()


def apply_dirichlet(K, fixed_dofs) -> sp.csr_matrix:
    """Symmetric elimination: zero constrained rows/columns, unit diagonal."""
    n = K.shape[0]
    free = np.ones(n)
    free[fixed_dofs] = 0.0
    D = sp.diags(free)
    A = (D @ K @ D + sp.diags(1.0 - free)).tocsr()
    A.eliminate_zeros()
    return A


def assemble_stiffness(mesh: Mesh, mat: Material):
    """Stiffness with all displacement components clamped on the aft face."""
    K = stiffness_matrix(mesh.nodes, mesh.tets, mat)
    fixed = fixed_dofs_for(mesh)
    return apply_dirichlet(K, fixed), fixed


def fixed_dofs_for(mesh: Mesh):
    aft = mesh.tagged_nodes(AFT)
    if len(aft) == 0:
        raise AssemblyError("mesh has no aft nodes to clamp")
    return np.sort((3 * aft[:, None] + np.arange(3)).ravel())


def surface_load_matrix(nodes, tris, columns, n_cols) -> sp.csr_matrix:
    """Consistent nodal forces for inward-acting, linearly interpolated pressure.

    ``columns[v]`` gives the pressure column of node ``v`` (only the vertices of
    ``tris`` are used). Each triangle contributes ``-n A (1 + delta_ij) / 12``
    from pressure node j to the force on vertex i.
    """
    p = nodes[tris]
    nA = 0.5 * np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    w = np.full((3, 3), 1.0 / 12.0) + np.eye(3) / 12.0
    rows, cols, vals = [], [], []
    for i in range(3):
        for j in range(3):
            for c in range(3):
                rows.append(3 * tris[:, i] + c)
                cols.append(columns[tris[:, j]])
                vals.append(-w[i, j] * nA[:, c])
    rows, cols, vals = (np.concatenate(a) for a in (rows, cols, vals))
    return sp.coo_matrix((vals, (rows, cols)), shape=(3 * len(nodes), n_cols)).tocsr()


def assemble_pressure_to_force(mesh: Mesh, tags=(EXTERIOR,)) -> sp.csr_matrix:
    """Pressure-to-force map C_map (n_s x n_p) over the exterior surface.

    With the default tags the columns follow ``mesh.exterior_nodes``; other tag
    sets get one column per node of the selected surface (sorted).
    """
    tris = mesh.tris_with_tag(*tags)
    surface_nodes = mesh.exterior_nodes if tuple(tags) == (EXTERIOR,) else np.unique(tris)
    columns = np.full(mesh.n_nodes, -1, dtype=np.int64)
    columns[surface_nodes] = np.arange(len(surface_nodes))
    return surface_load_matrix(mesh.nodes, tris, columns, len(surface_nodes))


def assemble_strain_observer(mesh: Mesh, sensors) -> sp.csr_matrix:
    """Rows read the directional strain t^T eps(u) t in each sensor's element."""
    n_el = len(mesh.tets)
    elements = np.array([s.element for s in sensors], dtype=np.int64)
    if np.any(elements < 0) or np.any(elements >= n_el):
        raise AssemblyError("sensor element index out of range")
    grads, _ = shape_gradients(mesh.nodes, mesh.tets[elements])
    t = np.array([s.direction for s in sensors], dtype=float)
    # d(t.eps.t)/du_{a,c} = (t . grad N_a) t_c
    coef = np.einsum("sac,sc->sa", grads, t)[:, :, None] * t[:, None, :]
    dofs = _element_dofs(mesh.tets[elements])
    rows = np.repeat(np.arange(len(sensors)), 12)
    return sp.coo_matrix((coef.reshape(-1), (rows, dofs.ravel())),
                         shape=(len(sensors), mesh.n_dofs)).tocsr()


class SPDFactor:
    """Sparse LU with symmetric pivoting, checked to be positive definite.

    With no off-diagonal pivoting the U diagonal holds the LDL^T pivots, so by
    Sylvester's law of inertia the matrix is SPD iff they are all positive.
    """

    def __init__(self, A):
        self.A = sp.csc_matrix(A)
        try:
            self.lu = spla.splu(self.A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                                options=dict(SymmetricMode=True))
        except RuntimeError as exc:
            raise FactorizationError(f"stiffness factorization failed: {exc}") from exc
        pivots = self.lu.U.diagonal()
        if not np.array_equal(self.lu.perm_r, self.lu.perm_c) or np.any(pivots <= 0):
            raise FactorizationError(
                "stiffness matrix is indefinite (non-positive pivot in symmetric factorization)")

    def solve(self, rhs, refine=2):
        rhs = np.asarray(rhs, dtype=float)
        x = self.lu.solve(rhs)
        for _ in range(refine):
            x = x + self.lu.solve(rhs - self.A @ x)
        return x


@dataclass
class StructuralOperators:
    A: sp.csr_matrix
    B: sp.csr_matrix
    C_map: sp.csr_matrix
    fixed_dofs: np.ndarray

    @property
    def n_s(self) -> int:
        return self.A.shape[0]

    @property
    def n_d(self) -> int:
        return self.B.shape[0]

    @property
    def n_p(self) -> int:
        return self.C_map.shape[1]

    @cached_property
    def free_mask(self):
        m = np.ones(self.n_s)
        m[self.fixed_dofs] = 0.0
        return m

    @cached_property
    def factor(self) -> SPDFactor:
        return SPDFactor(self.A)

    def loads(self, C):
        """Restrict a force map or vector to the free DOFs."""
        if sp.issparse(C):
            return sp.diags(self.free_mask) @ C
        C = np.asarray(C, dtype=float)
        return C * (self.free_mask[:, None] if C.ndim == 2 else self.free_mask)

    def pressure_load(self, p):
        return self.loads(self.C_map @ np.asarray(p, dtype=float))


def build_operators(mesh: Mesh, mat: Material, sensors) -> StructuralOperators:
    A, fixed = assemble_stiffness(mesh, mat)
    return StructuralOperators(A=A, B=assemble_strain_observer(mesh, sensors),
                               C_map=assemble_pressure_to_force(mesh), fixed_dofs=fixed)


def solve_forward(ops, f):
    """Displacement u with A u = f; ``f`` must vanish on clamped DOFs."""
    f = np.asarray(f, dtype=float)
    if isinstance(ops, StructuralOperators):
        if f.shape[0] != ops.n_s:
            raise ValueError(f"force length {f.shape[0]} != n_s {ops.n_s}")
        if np.any(f[ops.fixed_dofs] != 0):
            raise ValueError("force vector is nonzero on Dirichlet DOFs")
        return ops.factor.solve(f)
    return SPDFactor(ops).solve(f)


def compute_strain_response(ops: StructuralOperators, u):
    u = np.asarray(u, dtype=float)
    if u.shape[0] != ops.n_s:
        raise ValueError(f"displacement length {u.shape[0]} != n_s {ops.n_s}")
    return ops.B @ u


def assemble_p2o(ops: StructuralOperators, C, route: str | None = None):
    """Jacobian Z = B A^{-1} C of the parameter-to-observable map.

    ``route`` is "forward" (one solve per column of C) or "adjoint" (one solve
    per sensor); by default the cheaper one is used.
    """
    n_q = C.shape[1]
    if C.shape[0] != ops.n_s:
        raise ValueError(f"C has {C.shape[0]} rows, expected n_s = {ops.n_s}")
    if route is None:
        route = "adjoint" if ops.n_d < n_q else "forward"
    Cf = ops.loads(C)
    if route == "forward":
        rhs = Cf.toarray() if sp.issparse(Cf) else Cf
        W = ops.factor.solve(rhs)
        Z = np.asarray(ops.B @ W)
    elif route == "adjoint":
        V = ops.factor.solve(ops.B.T.toarray())
        Z = np.asarray((Cf.T @ V).T)
    else:
        raise ValueError(f"unknown route {route!r}")
    if not np.all(np.isfinite(Z)):
        raise FactorizationError("non-finite entries in parameter-to-observable map")
    return Z
