"""Coefficient recovery: potentials from boundary data, acoustic parameters.

recover_potential is a damped Gauss-Newton iteration on the forward map
v -> boundary Green operator, with the Jacobian assembled exactly from the
second resolvent identity (one volume factorization per iterate gives every
Jacobian column).  recover_potential_from_imag chains the spectral pipeline
in front of it: imaginary part -> sphere operator -> sign-resolved real part
-> regularized lift -> Gauss-Newton.

The acoustic routines implement the Liouville change of variables, the
pointwise two-frequency separation, and the Dirichlet solve that turns the
recovered Schrodinger-side quotient back into a density.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import brentq
from scipy.sparse.linalg import splu

from .errors import PipelineError, PreconditionError
from .forward import (
    BoundaryOperator,
    MediumOperatorWorkspace,
    far_field_map,
    conjugate_with_farfield,
)
from .geometry import Potential, VolumeGrid, make_directions
from .spectral import (
    lift_to_boundary,
    negative_inertia,
    reconstruct_real_part,
    reference_inertia,
    sphere_parts,
)


# ---------------------------------------------------------------------------
# coarse recovery basis
# ---------------------------------------------------------------------------
class CoarseBasis:
    """Piecewise-constant basis on a coarse sub-grid of the volume grid."""

    def __init__(self, grid: VolumeGrid, shape=(12, 12)):
        self.grid = grid
        self.shape = tuple(shape)
        lo = grid.centers.min(axis=0)
        hi = grid.centers.max(axis=0)
        span = np.maximum(hi - lo, 1e-12)
        ix = np.minimum(
            ((grid.centers[:, 0] - lo[0]) / span[0] * self.shape[0]).astype(int),
            self.shape[0] - 1,
        )
        iy = np.minimum(
            ((grid.centers[:, 1] - lo[1]) / span[1] * self.shape[1]).astype(int),
            self.shape[1] - 1,
        )
        raw = iy * self.shape[0] + ix
        used = np.unique(raw)
        remap = {int(c): i for i, c in enumerate(used)}
        self.cell_of_center = np.array([remap[int(c)] for c in raw])
        self.n_cells = len(used)
        self.cell_members = [np.nonzero(self.cell_of_center == c)[0] for c in range(self.n_cells)]
        self.cell_areas = np.array([len(m) * grid.cell_area for m in self.cell_members])

    def expand(self, coef):
        return np.asarray(coef)[self.cell_of_center]

    def restrict(self, values):
        """Cell averages of a fine-grid field."""
        out = np.zeros(self.n_cells)
        for c, members in enumerate(self.cell_members):
            out[c] = float(np.mean(values[members]))
        return out


class LiftFilter:
    """Mode filter the regularized lift applies to a boundary operator.

    apply(M) equals lift(T M T*, alpha) for the stored far-field map, so a
    misfit between filtered forward operators and a lifted data operator is
    free of damping bias.
    """

    def __init__(self, tmap: BoundaryOperator, alpha):
        that = tmap.hat()
        _, s, vh = np.linalg.svd(that, full_matrices=False)
        ss = np.outer(s * s, s * s)
        self.weight = ss / (ss + alpha)
        self.v = vh.conj().T
        self.sqrtw = np.sqrt(tmap.domain.weights)
        self.alpha = alpha

    def apply_matrix(self, matrix):
        mhat = (self.sqrtw[:, None] * matrix) / self.sqrtw[None, :]
        filt = self.v @ (self.weight * (self.v.conj().T @ mhat @ self.v)) @ self.v.conj().T
        return (filt / self.sqrtw[:, None]) * self.sqrtw[None, :]

    def apply(self, op: BoundaryOperator):
        return BoundaryOperator(self.apply_matrix(op.matrix), op.domain, op.codomain)


@dataclass
class InversionResult:
    recovered: object
    data_residual: float
    iterations: int
    regularization: float
    converged: bool
    info: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Gauss-Newton on the boundary-operator misfit
# ---------------------------------------------------------------------------
def recover_potential(
    g_data: BoundaryOperator,
    v_init: Potential,
    k,
    alpha,
    max_iter=15,
    mesh=None,
    grid=None,
    basis=None,
    data_filter: LiftFilter = None,
    tol=1e-10,
) -> InversionResult:
    """Damped Gauss-Newton recovery of the potential from operator data.

    The misfit is the weighted Frobenius norm of the (optionally filtered)
    operator mismatch; the Tikhonov term alpha ||v - v_init||_L2 anchors the
    iteration at its starting model.  Jacobian columns come from the
    resolvent identity using the volume Green columns of the current
    iterate, so each iteration costs one volume factorization.
    """
    if mesh is None or grid is None:
        raise ValueError("recover_potential needs the working mesh and grid")
    if basis is None:
        basis = CoarseBasis(grid)
    n = mesh.n
    sw = np.sqrt(mesh.weights)

    data_mat = g_data.matrix
    coef = basis.restrict(np.asarray(v_init.values, dtype=float))
    coef0 = coef.copy()
    areas = basis.cell_areas

    def misfit_parts(c):
        vfield = Potential(basis.expand(c), grid)
        work = MediumOperatorWorkspace(mesh, grid, vfield, k)
        fmat = work.operator.matrix
        if data_filter is not None:
            fmat = data_filter.apply_matrix(fmat)
        rhat = (sw[:, None] * (fmat - data_mat)) / sw[None, :]
        return work, rhat

    def objective(c, rhat):
        pen = float(np.sum(areas * (c - coef0) ** 2))
        return float(np.sum(np.abs(rhat) ** 2)) + alpha * pen

    work, rhat = misfit_parts(coef)
    phi = objective(coef, rhat)
    residual = float(np.linalg.norm(rhat, "fro"))
    converged = False
    strikes = 0
    iterations = 0
    residual_history = [residual]

    for iterations in range(1, max_iter + 1):
        # scaled volume Green columns: S[p, i] = sqrt(w_i) G_v(z_p, x_i)
        s_cols = work.total_columns * sw[None, :]
        h2 = grid.cell_area
        jac = np.zeros((n * n, basis.n_cells), dtype=complex)
        for c, members in enumerate(basis.cell_members):
            sc = s_cols[members, :]
            block = -h2 * (sc.T @ sc)
            if data_filter is not None:
                # filter acts on value matrices; move hat block back and forth
                block_val = (block / sw[:, None]) * sw[None, :]
                block_val = data_filter.apply_matrix(block_val)
                block = (sw[:, None] * block_val) / sw[None, :]
            jac[:, c] = block.ravel()
        jr = np.concatenate([jac.real, jac.imag], axis=0)
        rr = np.concatenate([rhat.real.ravel(), rhat.imag.ravel()])
        lhs = jr.T @ jr + alpha * np.diag(areas)
        rhs = -(jr.T @ rr) - alpha * areas * (coef - coef0)
        step = np.linalg.solve(lhs, rhs)

        accepted = False
        scale = 1.0
        for _ in range(20):
            cand = coef + scale * step
            work_c, rhat_c = misfit_parts(cand)
            phi_c = objective(cand, rhat_c)
            if phi_c < phi:
                coef, work, rhat, phi = cand, work_c, rhat_c, phi_c
                accepted = True
                break
            scale *= 0.5
        if not accepted:
            strikes += 1
            if strikes >= 2:
                break
            continue
        new_residual = float(np.linalg.norm(rhat, "fro"))
        residual_history.append(new_residual)
        rel_drop = abs(residual - new_residual) / max(residual, 1e-300)
        step_size = float(np.linalg.norm(step) * scale / (np.linalg.norm(coef) + 1.0))
        residual = new_residual
        if rel_drop < tol or step_size < tol:
            converged = True
            break
    else:
        converged = True  # exhausted max_iter with monotone progress

    recovered = Potential(basis.expand(coef), grid)
    return InversionResult(
        recovered=recovered,
        data_residual=residual,
        iterations=iterations,
        regularization=alpha,
        converged=converged and strikes < 2,
        info={
            "coarse_values": coef,
            "coarse_basis": basis,
            "residual_history": residual_history,
        },
    )


# ---------------------------------------------------------------------------
# imaginary-part-only pipeline
# ---------------------------------------------------------------------------
def recover_potential_from_imag(
    im_data: BoundaryOperator,
    v0: Potential,
    k,
    alpha,
    mesh=None,
    grid=None,
    alpha_lift=1e-6,
    max_iter=15,
    basis=None,
    margin_min=0.05,
) -> InversionResult:
    """Potential recovery from the imaginary part of the boundary operator.

    Pipeline: conjugate the data to the sphere, reconstruct the real part by
    the circle relation with reference-anchored signs, lift back to the
    boundary with Tikhonov damping, and run Gauss-Newton in the matching
    damped misfit, seeded at the reference.
    """
    if mesh is None or grid is None:
        raise ValueError("recover_potential_from_imag needs mesh and grid")

    def stage(tag, fn):
        try:
            return fn()
        except PreconditionError:
            raise
        except Exception as exc:  # noqa: BLE001 - re-tag for the caller
            raise PipelineError(tag, exc) from exc

    tmap = stage("farfield", lambda: far_field_map(mesh, k, make_directions(mesh.n)))
    bt = stage("sphere_data", lambda: conjugate_with_farfield(tmap, im_data))
    ref = stage(
        "reference",
        lambda: reference_inertia(v0, mesh, grid, k, tmap=tmap, label="pipeline reference"),
    )
    at_rec, recon = stage(
        "reconstruct", lambda: reconstruct_real_part(bt, ref, margin_min=margin_min)
    )
    gt_rec = BoundaryOperator(
        at_rec.matrix + 1j * bt.herm_part().matrix, bt.domain, bt.codomain
    )
    g_lift = stage("lift", lambda: lift_to_boundary(gt_rec, tmap, alpha_lift))
    filt = LiftFilter(tmap, alpha_lift)
    result = stage(
        "gauss_newton",
        lambda: recover_potential(
            g_lift,
            v0,
            k,
            alpha,
            max_iter=max_iter,
            mesh=mesh,
            grid=grid,
            basis=basis,
            data_filter=filt,
        ),
    )
    result.info["reconstruction"] = recon
    result.info["reference_rank"] = ref.rank
    result.info["lifted_operator"] = g_lift
    result.info["sphere_real_part"] = at_rec
    result.info["sphere_imag_part"] = bt
    return result


# ---------------------------------------------------------------------------
# acoustic model and the Liouville change of variables
# ---------------------------------------------------------------------------
@dataclass
class AcousticModel:
    """Density/compressibility fields on a volume grid, constant outside."""

    rho: np.ndarray
    kappa: np.ndarray
    rho_c: float
    kappa_c: float
    grid: VolumeGrid = field(repr=False, default=None)

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=float)
        self.kappa = np.asarray(self.kappa, dtype=float)
        if np.any(self.rho <= 0.0):
            raise ValueError("density must be positive")
        if self.rho_c <= 0.0 or self.kappa_c <= 0.0:
            raise ValueError("background constants must be positive")


def _lattice_neighbors(grid: VolumeGrid):
    """Index pairs (p, neighbor or -1) in the four axis directions."""
    ny, nx = grid.inside_mask.shape
    imap = grid.index_map
    iy, ix = np.nonzero(grid.inside_mask)
    out = {}
    for tag, (dy, dx) in {"E": (0, 1), "W": (0, -1), "N": (1, 0), "S": (-1, 0)}.items():
        jy, jx = iy + dy, ix + dx
        ok = (jy >= 0) & (jy < ny) & (jx >= 0) & (jx < nx)
        nb = -np.ones(len(iy), dtype=int)
        nb[ok] = imap[jy[ok], jx[ok]]
        out[tag] = nb
    return out


def discrete_laplacian(grid: VolumeGrid, values, outside_value):
    """Plain five-point Laplacian, with the constant extension outside."""
    nb = _lattice_neighbors(grid)
    total = -4.0 * values
    for tag in ("E", "W", "N", "S"):
        idx = nb[tag]
        contrib = np.where(idx >= 0, values[np.maximum(idx, 0)], outside_value)
        total = total + contrib
    return total / grid.cell_area


def acoustic_to_schrodinger(model: AcousticModel, omega):
    """Liouville transform: (rho, kappa; omega) -> (potential, wavenumber).

    v = rho^(1/2) Lap(rho^(-1/2)) + omega^2 (rho_c kappa_c - kappa rho),
    k = omega sqrt(rho_c kappa_c).
    """
    grid = model.grid
    if grid is None:
        raise ValueError("acoustic model must carry its grid")
    u = model.rho ** -0.5
    lap = discrete_laplacian(grid, u, model.rho_c ** -0.5)
    if not np.all(np.isfinite(lap)):
        raise PreconditionError("density second differences unbounded", stage="liouville")
    v = np.sqrt(model.rho) * lap + omega * omega * (
        model.rho_c * model.kappa_c - model.kappa * model.rho
    )
    k = omega * np.sqrt(model.rho_c * model.kappa_c)
    return Potential(v, grid), k


def two_frequency_disentangle(v1: Potential, v2: Potential, omega1, omega2, rho_c=1.0, kappa_c=1.0):
    """Split v_j = q + omega_j^2 (rho_c kappa_c - m) into (q, m) pointwise."""
    if abs(omega1 * omega1 - omega2 * omega2) < 1e-8:
        raise ValueError("frequencies too close")
    grid = v1.grid
    m = rho_c * kappa_c - (v1.values - v2.values) / (omega1 * omega1 - omega2 * omega2)
    q = v1.values - omega1 * omega1 * (rho_c * kappa_c - m)
    return Potential(q, grid), Potential(m, grid)


def _boundary_crossing(grid: VolumeGrid, point, direction):
    """Fraction s in (0, 1] where point + s h direction meets the curve."""
    shape = grid.shape
    h = grid.h

    def gap(s):
        x = point + s * h * direction
        r = np.hypot(x[0], x[1])
        th = np.arctan2(x[1], x[0])
        return r - float(shape.radius(np.array([th]))[0])

    g1 = gap(1.0)
    if g1 <= 0.0:
        return 1.0  # neighbor cell center is outside only by masking; clamp
    return float(brentq(gap, 0.0, 1.0, xtol=1e-13))


def recover_density(q: Potential, rho_c, mesh, grid: VolumeGrid) -> Potential:
    """Solve Lap u - q u = 0 in the volume, u = rho_c^(-1/2) on the curve.

    Shortley-Weller finite differences: stencil arms shortened to the exact
    boundary crossing, so the Dirichlet value enters at the curve itself.
    Returns rho = u^(-2).
    """
    if rho_c <= 0.0:
        raise ValueError("rho_c must be positive")
    u_b = rho_c ** -0.5
    p = grid.p
    h2 = grid.cell_area
    nb = _lattice_neighbors(grid)
    dirs = {"E": np.array([1.0, 0.0]), "W": np.array([-1.0, 0.0]),
            "N": np.array([0.0, 1.0]), "S": np.array([0.0, -1.0])}
    frac = {}
    for tag in dirs:
        s = np.ones(p)
        missing = np.nonzero(nb[tag] < 0)[0]
        for i in missing:
            s[i] = max(_boundary_crossing(grid, grid.centers[i], dirs[tag]), 1e-6)
        frac[tag] = s

    rows, cols, vals = [], [], []
    rhs = np.zeros(p)
    diag = np.zeros(p)
    for a, b in (("E", "W"), ("N", "S")):
        sa, sb = frac[a], frac[b]
        ca = 2.0 / (sa * (sa + sb)) / h2
        cb = 2.0 / (sb * (sa + sb)) / h2
        diag -= 2.0 / (sa * sb) / h2
        for tag, coef in ((a, ca), (b, cb)):
            idx = nb[tag]
            inside = idx >= 0
            rows.extend(np.nonzero(inside)[0])
            cols.extend(idx[inside])
            vals.extend(coef[inside])
            rhs[~inside] -= coef[~inside] * u_b
    diag -= np.asarray(q.values, dtype=float)
    rows.extend(range(p))
    cols.extend(range(p))
    vals.extend(diag)
    system = sp.csr_matrix((vals, (rows, cols)), shape=(p, p))
    try:
        lu = splu(system.tocsc())
        u = lu.solve(rhs)
    except RuntimeError as exc:
        raise PreconditionError(
            f"discrete Schrodinger operator singular or indefinite: {exc}",
            stage="density",
        ) from exc
    if not np.all(np.isfinite(u)):
        raise PreconditionError("density solve produced non-finite values", stage="density")
    if np.any(u <= 0.0):
        raise PreconditionError("out of theorem's local regime: u <= 0", stage="density")
    return Potential(u ** -2.0, grid)


def recover_compressibility_small_freq(
    imp_data: BoundaryOperator,
    omega,
    bound_m,
    mesh=None,
    grid=None,
    alpha=1e-8,
    alpha_lift=1e-6,
    max_iter=15,
    basis=None,
) -> InversionResult:
    """Compressibility recovery in the small-frequency positivity regime.

    With unit density the acoustic Green operator is the Schrodinger one for
    v = omega^2 (1 - kappa) at k = omega.  Below the positivity threshold
    the reference negative eigenspace is empty, so every sign is positive
    and the generic pipeline applies unchanged.
    """
    if mesh is None or grid is None:
        raise ValueError("recover_compressibility_small_freq needs mesh and grid")
    v0 = Potential(np.zeros(grid.p), grid)
    ref = reference_inertia(v0, mesh, grid, omega, label="kappa = kappa_c")
    if ref.rank > 0:
        raise PreconditionError(
            f"omega = {omega} not in the small-frequency regime "
            f"(reference negative inertia {ref.rank})",
            stage="regime",
        )
    result = recover_potential_from_imag(
        imp_data,
        v0,
        omega,
        alpha,
        mesh=mesh,
        grid=grid,
        alpha_lift=alpha_lift,
        max_iter=max_iter,
        basis=basis,
    )
    v = result.recovered
    kappa = 1.0 - v.values / (omega * omega)
    if float(np.max(np.abs(kappa))) > bound_m:
        result.info["bound_exceeded"] = True
    result.recovered = Potential(kappa, grid)
    result.info["potential"] = v
    return result


def positivity_threshold(
    mesh, grid, bound_m, omega_max=2.0, omega_min=1e-2, bisections=20, probes=None
):
    """Empirical largest omega with positive-definite reference real part.

    Probes a family of extremal media with sup norm <= bound_m and bisects
    on the negative-inertia count of the sphere real part.
    """
    from .geometry import make_potential

    if probes is None:
        probes = [
            {"kind": "zero"},
            {"kind": "constant", "amplitude": bound_m},
            {"kind": "constant", "amplitude": -bound_m},
            {"kind": "gaussian", "amplitude": bound_m, "sigma": 0.3, "center": [0.0, 0.0]},
        ]

    def rank_at(omega):
        worst = 0
        for spec in probes:
            kap = make_potential(spec, grid).values
            v = Potential(-omega * omega * kap, grid)
            work = MediumOperatorWorkspace(mesh, grid, v, omega)
            tmap = far_field_map(mesh, omega, make_directions(mesh.n))
            at = conjugate_with_farfield(tmap, work.operator).herm_part()
            worst = max(worst, negative_inertia(at))
        return worst

    if rank_at(omega_min) > 0:
        raise PreconditionError("no positivity regime found above omega_min", stage="regime")
    lo, hi = omega_min, omega_max
    if rank_at(omega_max) == 0:
        return omega_max, {"bracket": (omega_min, omega_max), "saturated": True}
    for _ in range(bisections):
        mid = 0.5 * (lo + hi)
        if rank_at(mid) == 0:
            lo = mid
        else:
            hi = mid
    return lo, {"bracket": (lo, hi), "saturated": False}
