"""Assembly of the boundary and sphere operators.

Everything here acts on nodal values.  A BoundaryOperator with matrix M maps
values on its domain nodes to values on its codomain nodes; quadrature
weights live in the Space tags and define all adjoints:

    adjoint(M) = W_dom^{-1} M^H W_cod.

The single-layer operators use the spectrally accurate product quadrature
for the periodic log singularity; the perturbed-medium operator is built
column by column from a volume Lippmann-Schwinger solve, with only the
free-space singular part needing special treatment (the medium correction
kernel is smooth across the diagonal).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve
from scipy.linalg.lapack import zgecon
from scipy.special import hankel1, j0, j1, jv, spherical_jn, spherical_yn

from .errors import PreconditionError
from .geometry import (
    BoundaryMesh,
    DirectionGrid,
    Potential,
    VolumeGrid,
    kress_log_weights,
    make_directions,
)
from .specfun import (
    EULER_GAMMA,
    bessel_jy,
    green_free,
    green_free_log_constant,
    log_cell_integral,
)

COND_LIMIT = 1e12


# ---------------------------------------------------------------------------
# operator plumbing
# ---------------------------------------------------------------------------
@dataclass(eq=False)
class Space:
    """Weighted L2 space attached to a node set."""

    kind: str  # "boundary" | "sphere"
    weights: np.ndarray

    @property
    def size(self):
        return len(self.weights)

    def compatible(self, other):
        return (
            self.kind == other.kind
            and self.size == other.size
            and np.allclose(self.weights, other.weights)
        )

    def inner(self, u, v):
        return complex(np.sum(self.weights * u * np.conj(v)))

    def norm(self, u):
        return float(np.sqrt(np.sum(self.weights * np.abs(u) ** 2)))


def boundary_space(mesh: BoundaryMesh) -> Space:
    return Space("boundary", mesh.weights)


def sphere_space(directions: DirectionGrid) -> Space:
    return Space("sphere", directions.weights)


@dataclass
class BoundaryOperator:
    matrix: np.ndarray
    domain: Space = field(repr=False)
    codomain: Space = field(repr=False)

    def hat(self):
        """Matrix of the operator in orthonormalized coordinates."""
        wr = np.sqrt(self.codomain.weights)
        wd = np.sqrt(self.domain.weights)
        return (wr[:, None] * self.matrix) / wd[None, :]

    def norm(self):
        return float(np.linalg.norm(self.hat(), 2))

    def fro_norm(self):
        return float(np.linalg.norm(self.hat(), "fro"))

    def adjoint(self):
        m = (self.codomain.weights[None, :] * self.matrix.conj().T) / self.domain.weights[:, None]
        return BoundaryOperator(m, domain=self.codomain, codomain=self.domain)

    def compose(self, other):
        if not self.domain.compatible(other.codomain):
            raise ValueError("operator spaces do not match in composition")
        return BoundaryOperator(self.matrix @ other.matrix, domain=other.domain, codomain=self.codomain)

    def __matmul__(self, other):
        return self.compose(other)

    def __add__(self, other):
        self._require_same(other)
        return BoundaryOperator(self.matrix + other.matrix, self.domain, self.codomain)

    def __sub__(self, other):
        self._require_same(other)
        return BoundaryOperator(self.matrix - other.matrix, self.domain, self.codomain)

    def __mul__(self, scalar):
        return BoundaryOperator(self.matrix * scalar, self.domain, self.codomain)

    __rmul__ = __mul__

    def _require_same(self, other):
        if not (self.domain.compatible(other.domain) and self.codomain.compatible(other.codomain)):
            raise ValueError("operator spaces do not match")

    def _require_square(self):
        if not self.domain.compatible(self.codomain):
            raise ValueError("operation requires a square operator on one space")

    # entrywise real/imag parts: the operator with Re/Im of the kernel.
    # Correct wherever the kernel is complex-symmetric (reciprocity), e.g.
    # single-layer operators on the boundary.
    def kernel_real(self):
        return BoundaryOperator(self.matrix.real.astype(complex), self.domain, self.codomain)

    def kernel_imag(self):
        return BoundaryOperator(self.matrix.imag.astype(complex), self.domain, self.codomain)

    # Hermitian/skew parts in the weighted inner product: the right notion of
    # real/imaginary part for the sphere-conjugated operators.
    def herm_part(self):
        self._require_square()
        return BoundaryOperator(0.5 * (self.matrix + self.adjoint().matrix), self.domain, self.codomain)

    def skew_part(self):
        self._require_square()
        return BoundaryOperator((self.matrix - self.adjoint().matrix) / 2j, self.domain, self.codomain)

    def transpose_weighted(self):
        """Operator with the transposed kernel (same node set)."""
        self._require_square()
        w = self.domain.weights
        m = (self.matrix.T * w[:, None]) / w[None, :]
        return BoundaryOperator(m, self.domain, self.codomain)

    def symmetry_defect(self):
        """Relative deviation from kernel symmetry (reciprocity residual)."""
        t = self.transpose_weighted()
        denom = self.norm()
        return (self - t).norm() / denom if denom > 0 else 0.0

    def symmetrize(self):
        t = self.transpose_weighted()
        return BoundaryOperator(0.5 * (self.matrix + t.matrix), self.domain, self.codomain)

    def hermiticity_defect(self):
        denom = self.norm()
        return (self - self.herm_part()).norm() / denom if denom > 0 else 0.0


def identity_operator(space: Space) -> BoundaryOperator:
    return BoundaryOperator(np.eye(space.size, dtype=complex), space, space)


# ---------------------------------------------------------------------------
# named constants of the factorizations
# ---------------------------------------------------------------------------
def stone_constant(d, k):
    """c1(d, k) = (1/8 pi)(k/2 pi)^(d-2), plane-wave Gram normalization."""
    return (1.0 / (8.0 * np.pi)) * (k / (2.0 * np.pi)) ** (d - 2)


def mixed_reciprocity_constant(d, k):
    """c2(d, k) = (1/4 pi) exp(-i pi (d-3)/4) (k/2 pi)^((d-3)/2).

    For d = 2 this equals the far-field amplitude of a point source,
    exp(i pi/4)/sqrt(8 pi k).
    """
    return (
        (1.0 / (4.0 * np.pi))
        * np.exp(-1j * np.pi * (d - 3) / 4.0)
        * (k / (2.0 * np.pi)) ** ((d - 3) / 2.0)
    )


# ---------------------------------------------------------------------------
# boundary Nystrom assembly (d = 2)
# ---------------------------------------------------------------------------
def _pairwise(mesh):
    dx = mesh.nodes[:, None, :] - mesh.nodes[None, :, :]
    r = np.sqrt(np.sum(dx * dx, axis=-1))
    dt = mesh.params[:, None] - mesh.params[None, :]
    sin2 = 4.0 * np.sin(dt / 2.0) ** 2
    return dx, r, sin2


def single_layer(mesh, k) -> BoundaryOperator:
    """Free Helmholtz single-layer operator on the boundary nodes."""
    if k <= 0.0:
        raise ValueError("single_layer requires k > 0")
    n = mesh.n
    jac = mesh.param_derivative_norms
    _, r, sin2 = _pairwise(mesh)
    off = ~np.eye(n, dtype=bool)
    log_part = np.zeros((n, n))
    smooth_part = np.zeros((n, n), dtype=complex)

    log_part[off] = -(1.0 / (4.0 * np.pi)) * j0(k * r[off])
    log_part *= jac[None, :]
    np.fill_diagonal(log_part, -(1.0 / (4.0 * np.pi)) * jac)

    full = np.zeros((n, n), dtype=complex)
    full[off] = 0.25j * hankel1(0, k * r[off])
    full *= jac[None, :]
    smooth_part[off] = full[off] - log_part[off] * np.log(sin2[off])
    diag = (0.25j - (np.log(0.5 * k * jac) + EULER_GAMMA) / (2.0 * np.pi)) * jac
    smooth_part[np.diag_indices(n)] = diag

    rule = kress_log_weights(n)
    m = rule * log_part + (2.0 * np.pi / n) * smooth_part
    sp = boundary_space(mesh)
    return BoundaryOperator(m, sp, sp)


def laplace_single_layer(mesh) -> BoundaryOperator:
    """Single-layer operator of the Laplacian (log kernel)."""
    n = mesh.n
    jac = mesh.param_derivative_norms
    _, r, sin2 = _pairwise(mesh)
    off = ~np.eye(n, dtype=bool)
    log_part = np.tile(-(1.0 / (4.0 * np.pi)) * jac, (n, 1))
    smooth = np.zeros((n, n))
    smooth[off] = -(1.0 / (2.0 * np.pi)) * np.log(r[off] / np.sqrt(sin2[off]))
    smooth *= jac[None, :]
    smooth[np.diag_indices(n)] = -(1.0 / (2.0 * np.pi)) * np.log(jac) * jac
    rule = kress_log_weights(n)
    m = (rule * log_part + (2.0 * np.pi / n) * smooth).astype(complex)
    sp = boundary_space(mesh)
    return BoundaryOperator(m, sp, sp)


def _double_layer_matrix(mesh, k):
    """Nystrom matrix of the Helmholtz double-layer operator (pv part)."""
    n = mesh.n
    jac = mesh.param_derivative_norms
    dx, r, sin2 = _pairwise(mesh)
    nu_jac = mesh.normals * jac[:, None]  # (n, 2), = (x2', -x1')
    dot = np.einsum("ijk,jk->ij", dx, nu_jac)
    off = ~np.eye(n, dtype=bool)

    log_part = np.zeros((n, n))
    log_part[off] = -(k / (4.0 * np.pi)) * j1(k * r[off]) * dot[off] / r[off]

    full = np.zeros((n, n), dtype=complex)
    full[off] = 0.25j * k * hankel1(1, k * r[off]) * dot[off] / r[off]
    smooth = np.zeros((n, n), dtype=complex)
    smooth[off] = full[off] - log_part[off] * np.log(sin2[off])
    curv = np.einsum("ij,ij->i", mesh.second_derivatives, mesh.normals)
    smooth[np.diag_indices(n)] = (1.0 / (4.0 * np.pi)) * curv / jac

    rule = kress_log_weights(n)
    return rule * log_part + (2.0 * np.pi / n) * smooth


def farfield_of_sources(points, directions, k):
    """Far-field pattern kernel of point sources at the given points.

    Row l, column j: far field in direction l of a unit source at point j,
    c2(2,k) exp(-i k x_hat_l . y_j).
    """
    phase = np.exp(-1j * k * directions.vectors @ points.T)
    return mixed_reciprocity_constant(2, k) * phase


def far_field_map(mesh, k, directions=None, coupling=None) -> BoundaryOperator:
    """Dirichlet-data -> sqrt(k)-scaled far-field map of the exterior problem.

    Uses a combined single/double-layer representation with coupling
    parameter eta = k, which is uniquely solvable at every wavenumber; the
    Dirichlet-eigenvalue restriction belongs to Q, not to this map.
    """
    if k <= 0.0:
        raise ValueError("far_field_map requires k > 0")
    if directions is None:
        directions = make_directions(mesh.n)
    eta = k if coupling is None else coupling
    msingle = single_layer(mesh, k).matrix
    mdouble = _double_layer_matrix(mesh, k)
    combined = 0.5 * np.eye(mesh.n) + mdouble - 1j * eta * msingle

    xhat = directions.vectors
    phase = np.exp(-1j * k * xhat @ mesh.nodes.T)  # (m, n)
    nu_jac = mesh.normals * mesh.param_derivative_norms[:, None]
    dldir = -1j * k * (xhat @ nu_jac.T)  # (m, n)
    ffar = (
        mixed_reciprocity_constant(2, k)
        * (dldir - 1j * eta)
        * phase
        * (2.0 * np.pi / mesh.n)
    )
    tmat = np.sqrt(k) * np.linalg.solve(combined.T, ffar.T).T
    return BoundaryOperator(tmat, boundary_space(mesh), sphere_space(directions))


def _rcond_or_raise(mat, message):
    lu, piv = lu_factor(mat)
    anorm = np.linalg.norm(mat, 1)
    rcond, info = zgecon(lu, anorm, norm="1")
    if info != 0 or rcond < 1.0 / COND_LIMIT:
        raise PreconditionError(message, stage="conditioning")
    return lu, piv


def imag_inv_single_layer(mesh, k) -> BoundaryOperator:
    """Imaginary part of the inverse free single-layer operator."""
    g0 = single_layer(mesh, k)
    lu_piv = _rcond_or_raise(
        g0.matrix, "Dirichlet eigenvalue - use factorized form -T*T"
    )
    inv = lu_solve(lu_piv, np.eye(mesh.n, dtype=complex))
    sp = boundary_space(mesh)
    return BoundaryOperator(inv.imag.astype(complex), sp, sp)


# ---------------------------------------------------------------------------
# volume machinery (Lippmann-Schwinger)
# ---------------------------------------------------------------------------
def volume_green_matrix(grid, k):
    """Cellwise volume integrals of the free Green function, midpoint rule.

    The singular self-cell integral uses the exact square-cell integral of
    the Laplace fundamental solution plus the regular remainder at 0.
    """
    z = grid.centers
    dz = z[:, None, :] - z[None, :, :]
    r = np.sqrt(np.sum(dz * dz, axis=-1))
    p = grid.p
    off = ~np.eye(p, dtype=bool)
    m = np.zeros((p, p), dtype=complex)
    m[off] = green_free(2, k, r[off]) * grid.cell_area
    self_cell = -log_cell_integral(grid.h) / (2.0 * np.pi) + grid.cell_area * (
        green_free_log_constant(2, k) + 0.25j
    )
    m[np.diag_indices(p)] = self_cell
    return m


def cross_green_matrix(points, grid, k, scaled=True):
    """Green kernel between external points and grid centers.

    scaled=True multiplies by the cell area (quadrature included).
    """
    dz = points[:, None, :] - grid.centers[None, :, :]
    r = np.sqrt(np.sum(dz * dz, axis=-1))
    g = green_free(2, k, r)
    return g * grid.cell_area if scaled else g


@dataclass
class FieldSolution:
    """Solution of a volume scattering solve."""

    volume_values: np.ndarray
    boundary_trace: np.ndarray = None
    farfield: np.ndarray = None


class MediumSolver:
    """LU-backed Lippmann-Schwinger solver for one (grid, v, k)."""

    def __init__(self, grid, v: Potential, k):
        if k <= 0.0:
            raise ValueError("wavenumber must be positive")
        self.grid = grid
        self.v = np.asarray(v.values if isinstance(v, Potential) else v, dtype=float)
        if len(self.v) != grid.p:
            raise ValueError("potential does not match grid")
        self.k = k
        mvol = volume_green_matrix(grid, k)
        system = np.eye(grid.p, dtype=complex) + mvol * self.v[None, :]
        self._lu = _rcond_or_raise(
            system, "interior resonance or too-strong potential"
        )
        self._mvol = mvol

    def solve(self, rhs):
        """Solve u + G0[(v u)] = rhs for volume values (columns allowed)."""
        return lu_solve(self._lu, rhs)

    def scattered_at(self, points, u):
        """-G0[v u] evaluated at external points."""
        b2v = cross_green_matrix(points, self.grid, self.k)
        return -b2v @ (self.v[:, None] * u if u.ndim == 2 else self.v * u)


def solve_lippmann_schwinger(grid, v, k, rhs_volume, rhs_boundary=None, mesh=None):
    """Volume Lippmann-Schwinger solve u = rhs - G0(v u).

    Returns a FieldSolution; the boundary trace is filled when mesh and the
    boundary samples of rhs are supplied.
    """
    solver = MediumSolver(grid, v, k)
    u = solver.solve(np.asarray(rhs_volume, dtype=complex))
    bt = None
    if mesh is not None and rhs_boundary is not None:
        bt = np.asarray(rhs_boundary, dtype=complex) + solver.scattered_at(mesh.nodes, u)
    return FieldSolution(volume_values=u, boundary_trace=bt)


class MediumOperatorWorkspace:
    """Perturbed-medium single layer plus the volume data reused downstream.

    total_columns[p, j] holds the medium Green function between volume
    center p and boundary node j; the Gauss-Newton Jacobian is assembled
    from these columns through the resolvent identity.
    """

    def __init__(self, mesh, grid, v: Potential, k):
        self.mesh = mesh
        self.grid = grid
        self.k = k
        self.v = np.asarray(v.values if isinstance(v, Potential) else v, dtype=float)
        g0 = single_layer(mesh, k)
        if np.all(self.v == 0.0):
            self.operator = g0
            self.total_columns = cross_green_matrix(mesh.nodes, grid, k, scaled=False).T
            return
        solver = MediumSolver(grid, Potential(self.v, grid), k)
        gvol_b = cross_green_matrix(mesh.nodes, grid, k, scaled=False).T  # (p, n)
        remainder = solver.solve(-solver._mvol @ (self.v[:, None] * gvol_b))
        total = gvol_b + remainder
        b2v = cross_green_matrix(mesh.nodes, grid, k)  # (n, p), area included
        correction_kernel = -b2v @ (self.v[:, None] * total)  # (n, n), smooth
        m = g0.matrix + correction_kernel * mesh.weights[None, :]
        sp = boundary_space(mesh)
        self.operator = BoundaryOperator(m, sp, sp)
        self.total_columns = total


def medium_single_layer(mesh, grid, v, k) -> BoundaryOperator:
    """Boundary single-layer operator of the perturbed medium.

    Columns are point-source solves regularized by splitting off the free
    singular part; the remaining correction kernel is smooth, so plain
    trapezoid quadrature applies to it.
    """
    return MediumOperatorWorkspace(mesh, grid, v, k).operator


def plane_wave_boundary_fields(mesh, grid, v, k, directions):
    """Boundary traces of total fields for incident plane waves.

    Returns (n, m) complex array, column l the total field for incidence
    direction omega_l.
    """
    vv = np.asarray(v.values if isinstance(v, Potential) else v, dtype=float)
    inc_bd = np.exp(1j * k * mesh.nodes @ directions.vectors.T)  # (n, m)
    if np.all(vv == 0.0):
        return inc_bd
    solver = MediumSolver(grid, Potential(vv, grid), k)
    inc_vol = np.exp(1j * k * grid.centers @ directions.vectors.T)  # (p, m)
    psi = solver.solve(inc_vol)
    return inc_bd + solver.scattered_at(mesh.nodes, psi)


def imag_from_plane_waves(mesh, grid, v, k, directions) -> BoundaryOperator:
    """Im of the medium single layer through the plane-wave Gram identity.

    Assembles c1(d,k) H H* from total plane-wave fields; Hermitian positive
    semi-definite by construction.
    """
    psi = plane_wave_boundary_fields(mesh, grid, v, k, directions)
    kernel = stone_constant(2, k) * (psi * directions.weights[None, :]) @ psi.conj().T
    m = kernel * mesh.weights[None, :]
    sp = boundary_space(mesh)
    return BoundaryOperator(m, sp, sp)


def herglotz_map(mesh, grid, v, k, directions) -> BoundaryOperator:
    """Superposition-of-plane-waves map from the direction sphere."""
    psi = plane_wave_boundary_fields(mesh, grid, v, k, directions)
    return BoundaryOperator(
        psi * directions.weights[None, :], sphere_space(directions), boundary_space(mesh)
    )


def conjugate_with_farfield(tmap: BoundaryOperator, op: BoundaryOperator) -> BoundaryOperator:
    """T op T*, moving a boundary operator to the direction sphere."""
    return tmap @ op @ tmap.adjoint()


def real_single_layer_remainder(mesh, k) -> BoundaryOperator:
    """Re single layer minus its static part (plus the d=2 log-mean term).

    A smooth-kernel operator whose norm vanishes as k -> 0 like k^2 |ln k|.
    """
    g0 = single_layer(mesh, k)
    el = laplace_single_layer(mesh)
    coeff = (np.log(k / 2.0) + EULER_GAMMA) / (2.0 * np.pi)
    mean_term = coeff * np.outer(np.ones(mesh.n), mesh.weights)
    m = g0.matrix.real - el.matrix.real + mean_term
    sp = boundary_space(mesh)
    return BoundaryOperator(m.astype(complex), sp, sp)


def scattering_matrix(gt0: BoundaryOperator) -> BoundaryOperator:
    """Unitary scattering matrix Id - 2i (adjoint of the sphere operator)."""
    gt0._require_square()
    s = np.eye(gt0.domain.size, dtype=complex) - 2j * gt0.adjoint().matrix
    return BoundaryOperator(s, gt0.domain, gt0.codomain)


# ---------------------------------------------------------------------------
# closed-form circle tables (separation-of-variables oracle)
# ---------------------------------------------------------------------------
@dataclass
class DiskModeTable:
    """Fourier-mode values of the disk operators, from Bessel closed forms."""

    modes: np.ndarray
    single_layer: np.ndarray       # (i pi R / 2) J_n H_n
    farfield: np.ndarray           # sqrt(2/pi) e^{-i(n pi/2 + pi/4)} / H_n
    imag_inv: np.ndarray           # -(2/pi) / (R |H_n|^2)
    sphere_operator: np.ndarray    # i J_n H_n / |H_n|^2
    scattering: np.ndarray         # -conj(H_n)/H_n
    laplace_layer: np.ndarray      # R/(2|n|), -R ln R at n = 0


def disk_mode_table(k, radius, max_mode):
    n = np.arange(max_mode + 1)
    z = k * radius
    jn, yn = bessel_jy(n, z * np.ones_like(n, dtype=float))
    hn = jn + 1j * yn
    habs2 = jn * jn + yn * yn
    lam_single = 0.5j * np.pi * radius * jn * hn
    t = np.sqrt(2.0 / np.pi) * np.exp(-1j * (n * np.pi / 2.0 + np.pi / 4.0)) / hn
    q = -(2.0 / np.pi) / (radius * habs2)
    mu = 1j * jn * hn / habs2
    s = -np.conj(hn) / hn
    lap = np.where(n == 0, -radius * np.log(radius), radius / (2.0 * np.maximum(n, 1)))
    return DiskModeTable(
        modes=n,
        single_layer=lam_single,
        farfield=t,
        imag_inv=q,
        sphere_operator=mu,
        scattering=s,
        laplace_layer=lap,
    )


def disk_remainder_constant_mode(k, radius):
    """Constant-mode value of the smooth remainder operator on the circle."""
    jn, yn = bessel_jy(0, k * radius)
    return (
        -0.5 * np.pi * radius * jn * yn
        + radius * np.log(radius)
        + radius * (np.log(k / 2.0) + EULER_GAMMA)
    )


def fourier_mode_values(op: BoundaryOperator, mesh_or_params, max_mode):
    """Fourier-diagonal coefficients of a square operator on equispaced nodes.

    Applies the operator to e^{i n t} and extracts the n-th coefficient of
    the result; off-diagonal leakage is reported as the residual column.
    """
    t = mesh_or_params.params if hasattr(mesh_or_params, "params") else mesh_or_params.angles
    n = len(t)
    modes = np.arange(max_mode + 1)
    vals = np.zeros(len(modes), dtype=complex)
    leak = np.zeros(len(modes))
    for i, mode in enumerate(modes):
        e = np.exp(1j * mode * t)
        out = op.matrix @ e
        coef = np.vdot(e, out) / n  # plain Fourier coefficient
        vals[i] = coef
        leak[i] = float(np.linalg.norm(out - coef * e) / np.sqrt(n))
    return vals, leak


def dirichlet_disk_eigen_screen(k, radius, max_mode=None):
    """Modes n with J_n(kR) ~ 0 (interior Dirichlet eigenvalue detector)."""
    if max_mode is None:
        max_mode = int(np.ceil(k * radius)) + 8
    n = np.arange(max_mode + 1)
    return n[np.abs(jv(n, k * radius)) < 1e-8]


def spherical_bessel_jy(order, z):
    return spherical_jn(order, z), spherical_yn(order, z)
