"""Discretizations of the boundary curve and the enclosed volume.

Boundaries are smooth closed curves in polar form r(theta) > 0, sampled at an
even number of equispaced parameter values (the natural setting for the
spectrally accurate log-singularity quadrature).  Volumes are uniform square
cells clipped to the interior by a winding-number test.  All inner products
downstream are defined by the quadrature weights stored here.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class RadialShape:
    """Closed curve r(theta) given by a finite Fourier cosine/sine series.

    coeffs is the complex spectrum c_m, m = -M..M (hermitian for real r),
    stored as a plain array c[m] for m >= 0 plus conjugate symmetry.
    """

    fourier: np.ndarray  # complex coefficients c_0..c_M (c_{-m} = conj(c_m))

    @staticmethod
    def circle(radius):
        return RadialShape(fourier=np.array([radius], dtype=complex))

    @staticmethod
    def star(coeffs):
        """r(theta) = 1 + sum_j a_j cos(j theta) from [(j, a_j), ...]."""
        if len(coeffs) == 0:
            return RadialShape.circle(1.0)
        top = max(int(j) for j, _ in coeffs)
        c = np.zeros(top + 1, dtype=complex)
        c[0] = 1.0
        for j, a in coeffs:
            c[int(j)] += a / 2.0
        return RadialShape(fourier=c)

    def _eval(self, theta, derivative=0):
        theta = np.asarray(theta, dtype=float)
        m = np.arange(len(self.fourier))
        phase = np.exp(1j * np.outer(theta, m))  # (T, M+1)
        fac = (1j * m) ** derivative
        vals = phase @ (fac * self.fourier)
        if derivative == 0:
            vals += np.conj(phase[:, 1:]) @ np.conj(self.fourier[1:])
        else:
            vals += np.conj(phase[:, 1:]) @ ((-1j * m[1:]) ** derivative * np.conj(self.fourier[1:]))
        return vals.real.reshape(theta.shape)

    def radius(self, theta):
        return self._eval(theta, 0)

    def radius_d1(self, theta):
        return self._eval(theta, 1)

    def radius_d2(self, theta):
        return self._eval(theta, 2)


@dataclass
class BoundaryMesh:
    """Equispaced-parameter discretization of a closed polar curve.

    weights are the arclength quadrature weights (2 pi / n) |x'(t_j)|; the
    L2(boundary) inner product is <u, v> = sum_j weights_j u_j conj(v_j).
    """

    nodes: np.ndarray                  # (n, 2)
    weights: np.ndarray                # (n,)
    normals: np.ndarray                # (n, 2) unit outward
    param_derivative_norms: np.ndarray  # (n,) |x'(t_j)|
    params: np.ndarray                 # (n,) parameter values t_j = 2 pi j / n
    second_derivatives: np.ndarray     # (n, 2) x''(t_j)
    shape: RadialShape
    kind: str                          # "circle" or "star"

    @property
    def n(self):
        return len(self.params)

    def perimeter(self):
        return float(np.sum(self.weights))

    def starlike_products(self):
        """x . nu_x at every node (positive on strictly starlike curves)."""
        return np.einsum("ij,ij->i", self.nodes, self.normals)


def _mesh_from_shape(shape, n, kind):
    if n < 8 or n % 2 != 0:
        raise ValueError("mesh size must be even and >= 8")
    t = 2.0 * np.pi * np.arange(n) / n
    r = shape.radius(t)
    bad = np.nonzero(r <= 0.0)[0]
    if bad.size:
        raise ValueError(
            f"radial function not positive: r(t) = {r[bad[0]]:.3e} at node {bad[0]}"
        )
    r1 = shape.radius_d1(t)
    r2 = shape.radius_d2(t)
    ct, st = np.cos(t), np.sin(t)
    nodes = np.column_stack([r * ct, r * st])
    dx = np.column_stack([r1 * ct - r * st, r1 * st + r * ct])
    speed = np.hypot(dx[:, 0], dx[:, 1])
    # outward normal for counterclockwise parameterization
    normals = np.column_stack([dx[:, 1], -dx[:, 0]]) / speed[:, None]
    d2 = np.column_stack(
        [(r2 - r) * ct - 2.0 * r1 * st, (r2 - r) * st + 2.0 * r1 * ct]
    )
    mesh = BoundaryMesh(
        nodes=nodes,
        weights=(2.0 * np.pi / n) * speed,
        normals=normals,
        param_derivative_norms=speed,
        params=t,
        second_derivatives=d2,
        shape=shape,
        kind=kind,
    )
    prods = mesh.starlike_products()
    worst = int(np.argmin(prods))
    if prods[worst] <= 0.0:
        raise ValueError(
            f"curve is not strictly starlike: x . nu = {prods[worst]:.3e} at node {worst}"
        )
    return mesh


def make_circle(radius, n):
    """Circle of the given radius, n equispaced nodes (n even, >= 8)."""
    if radius <= 0.0:
        raise ValueError("radius must be positive")
    return _mesh_from_shape(RadialShape.circle(radius), n, "circle")


def make_star(coeffs, n):
    """Starlike curve r(theta) = 1 + sum a_j cos(j theta).

    Rejects shapes that fail r > 0 or the strict starlike condition
    x . nu_x > 0, naming the violating node.
    """
    return _mesh_from_shape(RadialShape.star(coeffs), n, "star")


@dataclass
class VolumeGrid:
    """Uniform cell discretization of the interior, clipped to the curve.

    centers holds only interior cell centers; the full lattice bookkeeping
    (origin, shape, index_map) is kept for finite-difference stencils.
    """

    centers: np.ndarray    # (p, 2)
    h: float
    origin: np.ndarray     # lattice lower-left center
    nx: int
    ny: int
    inside_mask: np.ndarray  # (ny, nx) bool
    index_map: np.ndarray    # (ny, nx) int, -1 outside
    shape: RadialShape

    @property
    def cell_area(self):
        return self.h * self.h

    @property
    def p(self):
        return len(self.centers)

    def area(self):
        return self.p * self.cell_area


def winding_inside(points, curve_nodes):
    """Even-odd ray-crossing interiority test against a closed polygon."""
    x, y = points[:, 0][:, None], points[:, 1][:, None]
    ax, ay = curve_nodes[:, 0][None, :], curve_nodes[:, 1][None, :]
    bx = np.roll(curve_nodes[:, 0], -1)[None, :]
    by = np.roll(curve_nodes[:, 1], -1)[None, :]
    cond = (ay > y) != (by > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = ax + (y - ay) * (bx - ax) / (by - ay)
    crossings = np.sum(cond & (x < xint), axis=1)
    return crossings % 2 == 1


def make_grid(mesh, h):
    """Uniform interior grid with cell size h (requires h < diam/4)."""
    nodes = mesh.nodes
    lo = nodes.min(axis=0)
    hi = nodes.max(axis=0)
    diam = float(np.max(hi - lo))
    if h >= diam / 4.0:
        raise ValueError(f"cell size h = {h} too coarse for diameter {diam:.3g}")
    nx = int(np.ceil((hi[0] - lo[0]) / h)) + 2
    ny = int(np.ceil((hi[1] - lo[1]) / h)) + 2
    nx += nx % 2
    ny += ny % 2
    # cell centers staggered half a cell off the bounding-box center
    cx, cy = (lo + hi) / 2.0
    origin = np.array([cx - (nx / 2.0 - 0.5) * h, cy - (ny / 2.0 - 0.5) * h])
    xs = origin[0] + h * np.arange(nx)
    ys = origin[1] + h * np.arange(ny)
    xx, yy = np.meshgrid(xs, ys)
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    # polygonize the curve finely enough that clipping error is pure O(h)
    nfine = max(512, 4 * mesh.n)
    tf = 2.0 * np.pi * np.arange(nfine) / nfine
    rf = mesh.shape.radius(tf)
    poly = np.column_stack([rf * np.cos(tf), rf * np.sin(tf)])
    inside = winding_inside(pts, poly).reshape(ny, nx)
    if not inside.any():
        raise ValueError("empty volume grid")
    index_map = -np.ones((ny, nx), dtype=int)
    index_map[inside] = np.arange(int(inside.sum()))
    return VolumeGrid(
        centers=pts[inside.ravel()],
        h=float(h),
        origin=origin,
        nx=nx,
        ny=ny,
        inside_mask=inside,
        index_map=index_map,
        shape=mesh.shape,
    )


@dataclass
class DirectionGrid:
    """Equispaced unit directions on the circle with uniform weights."""

    angles: np.ndarray   # (m,)
    weights: np.ndarray  # (m,), each 2 pi / m

    @property
    def m(self):
        return len(self.angles)

    @property
    def vectors(self):
        return np.column_stack([np.cos(self.angles), np.sin(self.angles)])

    def antipodal_permutation(self):
        """Index permutation realizing omega -> -omega (m must be even)."""
        if self.m % 2 != 0:
            raise ValueError("antipodal map needs an even direction count")
        return (np.arange(self.m) + self.m // 2) % self.m


def make_directions(m):
    if m < 4 or m % 2 != 0:
        raise ValueError("direction count must be even and >= 4")
    ang = 2.0 * np.pi * np.arange(m) / m
    return DirectionGrid(angles=ang, weights=np.full(m, 2.0 * np.pi / m))


@dataclass
class Potential:
    """Real-valued potential sampled at volume-grid centers."""

    values: np.ndarray
    grid: VolumeGrid = field(repr=False, default=None)

    @property
    def sup_norm(self):
        return float(np.max(np.abs(self.values))) if len(self.values) else 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.grid is not None and len(self.values) != self.grid.p:
            raise ValueError("potential values do not match grid size")


def _smoothstep(s):
    # quintic smoothstep, C^2 at both ends
    s = np.clip(s, 0.0, 1.0)
    return s * s * s * (10.0 + s * (-15.0 + 6.0 * s))


def potential_values(spec, grid):
    """Sample a named analytic potential family on the grid.

    Families: zero; constant {amplitude}; gaussian {center, sigma, amplitude};
    two_bump {centers, sigmas, amplitudes}; disk {center, radius, amplitude,
    edge} (constant on a subdisk with a C^2 edge of the given width).
    """
    x = grid.centers
    kind = spec["kind"]
    if kind == "zero":
        return np.zeros(grid.p)
    if kind == "constant":
        return np.full(grid.p, float(spec["amplitude"]))
    if kind == "gaussian":
        c = np.asarray(spec.get("center", [0.25, 0.1]), dtype=float)
        sig = float(spec.get("sigma", 0.2))
        a = float(spec["amplitude"])
        d2 = np.sum((x - c) ** 2, axis=1)
        return a * np.exp(-d2 / (2.0 * sig * sig))
    if kind == "two_bump":
        centers = spec.get("centers", [[0.3, 0.15], [-0.25, -0.2]])
        sigmas = spec.get("sigmas", [0.18, 0.22])
        amp = spec["amplitude"]
        amps = spec.get("amplitudes", [amp, -0.6 * amp])
        v = np.zeros(grid.p)
        for c, s, a in zip(centers, sigmas, amps):
            d2 = np.sum((x - np.asarray(c, dtype=float)) ** 2, axis=1)
            v += float(a) * np.exp(-d2 / (2.0 * float(s) ** 2))
        return v
    if kind == "disk":
        c = np.asarray(spec.get("center", [-0.1, 0.05]), dtype=float)
        rad = float(spec.get("radius", 0.35))
        a = float(spec["amplitude"])
        edge = float(spec.get("edge", 0.08))
        d = np.sqrt(np.sum((x - c) ** 2, axis=1))
        if edge <= 0.0:
            return a * (d <= rad).astype(float)
        return a * (1.0 - _smoothstep((d - (rad - edge)) / edge))
    raise ValueError(f"unknown potential family {kind!r}")


def make_potential(spec, grid):
    return Potential(values=potential_values(spec, grid), grid=grid)


def test_potential_corpus(scale=1.0):
    """The fixed verification corpus: named families at three amplitudes."""
    families = [
        ("gaussian", {"kind": "gaussian"}),
        ("two_bump", {"kind": "two_bump"}),
        ("disk", {"kind": "disk"}),
    ]
    corpus = [("zero", {"kind": "zero"})]
    for amp in (0.5, 0.1, 0.01):
        for name, spec in families:
            s = dict(spec)
            s["amplitude"] = amp * scale
            corpus.append((f"{name}[{amp:g}]", s))
    return corpus


def kress_log_weights(n):
    """Quadrature matrix R for the 2 pi-periodic log kernel.

    R[i, j] approximates the weight with which f(t_j) enters
    int_0^{2pi} f(s) ln(4 sin^2((t_i - s)/2)) ds on n = 2 m equispaced
    nodes; exact for trigonometric polynomials of degree < m.
    """
    if n % 2 != 0:
        raise ValueError("log-quadrature rule needs an even node count")
    m = n // 2
    d = np.arange(n)
    tau = np.pi * d / m
    vec = np.zeros(n)
    for p in range(1, m):
        vec -= (2.0 * np.pi / m) * np.cos(p * tau) / p
    vec -= (np.pi / (m * m)) * np.cos(m * tau)
    idx = (np.arange(n)[:, None] - np.arange(n)[None, :]) % n
    return vec[idx]
