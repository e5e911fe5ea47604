"""Joint spectral analysis of the sphere operators and real-part recovery.

The conjugated operator on the direction sphere splits into commuting
self-adjoint real and imaginary parts whose eigenvalues lie on the circle
|z - i/2| = 1/2.  That pins the magnitude of every real-part eigenvalue in
terms of the imaginary part; the remaining sign ambiguity is finite and is
resolved by distance to the negative eigenspace of a reference medium
(closer than 1/2 means negative).  Lifting back to the boundary inverts the
compact far-field conjugation and therefore needs regularization.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import PreconditionError
from .forward import (
    BoundaryOperator,
    MediumOperatorWorkspace,
    conjugate_with_farfield,
    far_field_map,
)
from .geometry import Potential, make_directions

SPECTRAL_FLOOR = 1e-10  # relative cutoff separating the compact tail from signal


def weighted_eigh(op: BoundaryOperator, herm_tol=1e-6):
    """Eigendecomposition of a (numerically) self-adjoint operator.

    Returns eigenvalues ascending and columns orthonormal in the weighted
    inner product.  Raises if the operator is too far from self-adjoint.
    """
    defect = op.hermiticity_defect()
    if defect > herm_tol:
        raise PreconditionError(
            f"operator is not self-adjoint at this resolution (defect {defect:.2e})",
            stage="spectral",
        )
    hh = op.hat()
    hh = 0.5 * (hh + hh.conj().T)
    vals, q = np.linalg.eigh(hh)
    vectors = q / np.sqrt(op.domain.weights)[:, None]
    return vals, vectors


def _fix_phases(vectors, weights):
    """Deterministic eigenvector phases: first significant entry positive."""
    out = vectors.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        idx = np.nonzero(np.abs(col) > 1e-8 * np.abs(col).max())[0]
        lead = col[idx[0]] if len(idx) else 1.0
        out[:, j] = col * (np.conj(lead) / abs(lead))
    return out


@dataclass
class SpectralDecomposition:
    """Joint eigenpairs of the sphere operator, deterministically ordered."""

    eigenvalues_imag: np.ndarray     # descending
    eigenvalues_real: np.ndarray     # aligned
    vectors: np.ndarray              # (m, p), weighted-orthonormal columns
    cluster_ids: np.ndarray          # (p,) int, clusters of equal imag parts
    space: object = field(repr=False, default=None)

    @property
    def size(self):
        return len(self.eigenvalues_imag)


def _cluster_by_gaps(values_desc, tol_abs):
    ids = np.zeros(len(values_desc), dtype=int)
    for i in range(1, len(values_desc)):
        ids[i] = ids[i - 1] + (1 if values_desc[i - 1] - values_desc[i] > tol_abs else 0)
    return ids


def joint_diagonalize(at, bt, tol_cluster=None, commutator_tol=1e-6) -> SpectralDecomposition:
    """Common eigenbasis of the commuting self-adjoint pair (at, bt).

    Diagonalizes bt, then re-diagonalizes at inside every cluster of equal
    bt-eigenvalues.  Ordering: imag part descending, then real part
    descending; eigenvector phases fixed for reproducibility.
    """
    at._require_same(bt)
    na, nb = at.norm(), bt.norm()
    comm = (at @ bt - bt @ at).norm()
    if na > 0 and nb > 0 and comm > commutator_tol * na * nb:
        raise PreconditionError(
            f"operators not simultaneously diagonalizable at this resolution "
            f"(commutator {comm / (na * nb):.2e})",
            stage="spectral",
        )
    vals_b, vec = weighted_eigh(bt)
    order = np.argsort(-vals_b, kind="stable")
    vals_b = vals_b[order]
    vec = vec[:, order]

    tol_abs = (1e-8 * nb) if tol_cluster is None else tol_cluster
    ids = _cluster_by_gaps(vals_b, tol_abs)

    w = bt.domain.weights
    ahat = at.hat()
    ahat = 0.5 * (ahat + ahat.conj().T)
    sw = np.sqrt(w)
    vals_a = np.zeros_like(vals_b)
    for cid in np.unique(ids):
        sel = np.nonzero(ids == cid)[0]
        q = vec[:, sel] * sw[:, None]  # orthonormal columns in hat space
        block = q.conj().T @ ahat @ q
        block = 0.5 * (block + block.conj().T)
        if len(sel) == 1:
            vals_a[sel] = block.real.ravel()
            continue
        sub_vals, sub_q = np.linalg.eigh(block)
        sub_order = np.argsort(-sub_vals, kind="stable")
        vals_a[sel] = sub_vals[sub_order]
        rotated = q @ sub_q[:, sub_order]
        vec[:, sel] = rotated / sw[:, None]

    vec = _fix_phases(vec, w)
    return SpectralDecomposition(
        eigenvalues_imag=vals_b,
        eigenvalues_real=vals_a,
        vectors=vec,
        cluster_ids=ids,
        space=bt.domain,
    )


def magnitude_from_imag(lam_imag, eps_band=1e-6):
    """|real eigenvalue| forced by the circle relation a^2 = b - b^2.

    lam_imag may be scalar or array; values outside [-eps, 1+eps] mean the
    input violates the one-frequency relation and raise.
    """
    b = np.asarray(lam_imag, dtype=float)
    if np.any(b < -eps_band) or np.any(b > 1.0 + eps_band):
        bad = b[(b < -eps_band) | (b > 1.0 + eps_band)][0]
        raise PreconditionError(
            f"imaginary-part eigenvalue {bad:.3e} outside [0, 1] beyond tolerance",
            stage="spectral",
        )
    b = np.clip(b, 0.0, 1.0)
    out = np.sqrt(np.maximum(b - b * b, 0.0))
    return float(out) if np.isscalar(lam_imag) else out


def negative_inertia(op: BoundaryOperator, eps_rel=SPECTRAL_FLOOR):
    """Number of eigenvalues below -eps_rel * ||op|| (negative inertia index)."""
    vals, _ = weighted_eigh(op)
    return int(np.sum(vals < -eps_rel * max(np.abs(vals).max(), 1e-300)))


@dataclass
class ReferenceInertia:
    """Orthonormal basis of the negative eigenspace of a reference medium."""

    basis: np.ndarray          # (m, rank), weighted-orthonormal
    rank: int
    source_k: float
    source_label: str
    space: object = field(repr=False, default=None)
    negative_eigenvalues: np.ndarray = None
    sphere_real_part: BoundaryOperator = field(repr=False, default=None)


def reference_inertia(
    v0, mesh, grid, k, tmap=None, eps_rel=SPECTRAL_FLOOR, label="v0"
) -> ReferenceInertia:
    """Negative eigenspace of the real part of the reference sphere operator.

    Also enforces the standing injectivity assumption on the boundary-level
    real part: a reference whose real part has a near-zero eigenvalue cannot
    anchor the sign resolution.
    """
    work = MediumOperatorWorkspace(mesh, grid, v0, k)
    a_bnd = work.operator.kernel_real()
    vals_bnd, _ = weighted_eigh(a_bnd)
    scale = np.abs(vals_bnd).max()
    if np.abs(vals_bnd).min() <= eps_rel * scale:
        raise PreconditionError(
            "reference violates injectivity assumption: "
            f"real part has eigenvalue {vals_bnd[np.abs(vals_bnd).argmin()]:.3e}",
            stage="reference",
        )
    if tmap is None:
        tmap = far_field_map(mesh, k, make_directions(mesh.n))
    gt = conjugate_with_farfield(tmap, work.operator)
    at0 = gt.herm_part()
    vals, vec = weighted_eigh(at0)
    neg = vals < -eps_rel * max(np.abs(vals).max(), 1e-300)
    basis = _fix_phases(vec[:, neg], at0.domain.weights) if neg.any() else vec[:, :0]
    return ReferenceInertia(
        basis=basis,
        rank=int(neg.sum()),
        source_k=k,
        source_label=label,
        space=at0.domain,
        negative_eigenvalues=vals[neg],
        sphere_real_part=at0,
    )


def subspace_distances(vectors, ref: ReferenceInertia):
    """Weighted distance of each (unit) column to the reference subspace."""
    w = ref.space.weights if ref.space is not None else None
    if ref.rank == 0:
        return np.ones(vectors.shape[1])
    coef = ref.basis.conj().T @ (w[:, None] * vectors)  # (rank, p)
    nrm2 = np.einsum("i,ij->j", w, np.abs(vectors) ** 2)
    d2 = np.maximum(nrm2 - np.sum(np.abs(coef) ** 2, axis=0), 0.0)
    return np.sqrt(d2)


@dataclass
class SignAssignment:
    signs: np.ndarray       # +1 / -1 per eigenpair
    distances: np.ndarray   # d(f, reference negative eigenspace)
    margins: np.ndarray     # |d - 1/2|
    fragile: np.ndarray     # margin below the safety threshold


def assign_signs(dec: SpectralDecomposition, ref: ReferenceInertia, margin_min=0.05) -> SignAssignment:
    """Sign of each real-part eigenvalue: negative iff d(f, ref) < 1/2."""
    d = subspace_distances(dec.vectors, ref)
    signs = np.where(d < 0.5, -1.0, 1.0)
    margins = np.abs(d - 0.5)
    fragile = margins < margin_min
    if fragile.any():
        warnings.warn(
            f"sign assignment fragile for {int(fragile.sum())} eigenpair(s) "
            "- medium too far from reference",
            stacklevel=2,
        )
    return SignAssignment(signs=signs, distances=d, margins=margins, fragile=fragile)


@dataclass
class ReconstructionInfo:
    eigenvalues_imag: np.ndarray
    eigenvalues_real: np.ndarray  # signed, reconstructed
    distances: np.ndarray
    margins: np.ndarray
    cluster_ids: np.ndarray
    vectors: np.ndarray = field(repr=False, default=None)


def reconstruct_real_part(
    bt: BoundaryOperator,
    ref: ReferenceInertia,
    tol_cluster=None,
    eps_band=1e-6,
    margin_min=0.05,
):
    """Real part of the sphere operator from its imaginary part alone.

    Magnitudes come from the circle relation, signs from reference-subspace
    distances.  A cluster of equal imaginary eigenvalues carrying different
    signs would make the reconstruction basis-dependent; that breaks the
    standing eigenvalue-separation assumption and is reported as an error.
    """
    vals_b, vec = weighted_eigh(bt)
    order = np.argsort(-vals_b, kind="stable")
    vals_b = vals_b[order]
    vec = _fix_phases(vec[:, order], bt.domain.weights)
    nb = bt.norm()
    tol_abs = (1e-8 * nb) if tol_cluster is None else tol_cluster
    ids = _cluster_by_gaps(vals_b, tol_abs)

    mags = magnitude_from_imag(vals_b, eps_band=eps_band)
    dec = SpectralDecomposition(vals_b, np.zeros_like(vals_b), vec, ids, space=bt.domain)
    assignment = assign_signs(dec, ref, margin_min=margin_min)
    lam_re = assignment.signs * mags

    # eigenvalue-separation check: a cluster of equal imaginary parts must
    # carry one sign; mixed signs below the cluster-noise magnitude scale
    # are tail noise and ignored
    mag_floor = np.sqrt(10.0 * tol_abs)
    for cid in np.unique(ids):
        sel = ids == cid
        if sel.sum() > 1 and mags[sel].max() > mag_floor:
            if np.ptp(assignment.signs[sel]) > 0:
                raise PreconditionError(
                    f"cluster {cid} (imag ~ {vals_b[sel][0]:.3e}) carries "
                    "inconsistent signs - eigenvalue separation assumption fails",
                    stage="reconstruct",
                )

    w = bt.domain.weights
    sw = np.sqrt(w)
    q = vec * sw[:, None]
    ahat = (q * lam_re[None, :]) @ q.conj().T
    matrix = (ahat / sw[:, None]) * sw[None, :]
    at_rec = BoundaryOperator(matrix, bt.domain, bt.codomain)
    info = ReconstructionInfo(
        eigenvalues_imag=vals_b,
        eigenvalues_real=lam_re,
        distances=assignment.distances,
        margins=assignment.margins,
        cluster_ids=ids,
        vectors=vec,
    )
    return at_rec, info


def lift_to_boundary(gt_rec: BoundaryOperator, tmap: BoundaryOperator, alpha):
    """Solve T X T* = gt_rec for the boundary operator X, Tikhonov-damped.

    The far-field map is compact with dense range, so alpha = 0 is only
    legal when the discrete map is numerically full rank.
    """
    that = tmap.hat()
    u, s, vh = np.linalg.svd(that, full_matrices=False)
    if alpha == 0.0 and s.min() < 1e-13 * s.max():
        raise PreconditionError(
            "unregularized lift with rank-deficient far-field map", stage="lift"
        )
    dhat = u.conj().T @ gt_rec.hat() @ u
    damp = np.outer(s, s) / (np.outer(s, s) ** 2 + alpha)
    xhat = vh.conj().T @ (damp * dhat) @ vh
    wd = tmap.domain.weights
    matrix = (xhat / np.sqrt(wd)[:, None]) * np.sqrt(wd)[None, :]
    out = BoundaryOperator(matrix, tmap.domain, tmap.domain)
    return out.symmetrize()


def sphere_parts(gt: BoundaryOperator):
    """Self-adjoint real/imaginary parts of the conjugated sphere operator."""
    return gt.herm_part(), gt.skew_part()
