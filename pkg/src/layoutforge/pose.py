"""Object pose from template matching plus box-guided corrections.

Rotation is estimated in three passes over an asset's rendered template
views: a coarse pass ranks views by patch-correspondence strength, a
fine pass scores the surviving views by how close the template-to-query
homography is to a pure in-image rotation, and an optional geometric
pass overrides the visual winner with an upright box orientation when
one lies close enough.  Translation starts at the fitted box center and
anisotropic scale is fit by maximizing overlap with the fitted box.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable

import numpy as np

from .errors import BundleError, EmptyInputError, FineSelectionError, NotUprightError
from .geometry import Obb, geodesic_angle, obb_vertical_orientations, overlap_objective

if TYPE_CHECKING:
    from .ingest.features import FeatureStore
    from .ingest.types import Asset

UP = np.array([0.0, 0.0, 1.0])
DEFAULT_MIN_COS = 0.5
GEOMETRIC_THRESHOLD = math.pi / 5
SCALE_BOUNDS = (0.2, 5.0)


@dataclass
class PatchFeatureMap:
    """A dense patch-descriptor grid with its pixel pitch.

    ``grid`` is (rows, cols, dim); an all-zero descriptor marks an
    invalid patch.  Patch (r, c) sits at pixel center
    ((c + 0.5) * patch_px, (r + 0.5) * patch_px).
    """

    grid: np.ndarray
    patch_px: float = 14.0

    def __post_init__(self):
        self.grid = np.asarray(self.grid)
        if self.grid.ndim != 3:
            raise EmptyInputError(f"patch grid must be 3-d, got {self.grid.shape}")

    @property
    def valid(self) -> np.ndarray:
        return np.linalg.norm(self.grid, axis=2) > 0


@dataclass
class Correspondences:
    """Matched patch centers, template side first."""

    src_px: np.ndarray  # (N, 2) template pixels
    dst_px: np.ndarray  # (N, 2) query pixels
    cos: np.ndarray  # (N,)

    def __len__(self) -> int:
        return int(self.cos.shape[0])


@dataclass
class RotationCandidate:
    """A template view in a ranked list; score semantics depend on the
    pass (coarse: correspondence strength, higher wins; fine: rotation
    deviation, lower wins)."""

    view_index: int
    rotation: np.ndarray
    score: float


@dataclass
class RotationEstimate:
    """Final rotation with its provenance.

    ``theta`` is the smallest geodesic angle between any upright box
    orientation and any fine candidate (None when the box gave no
    upright orientation to compare against).
    """

    rotation: np.ndarray
    source: str  # "geometric" | "visual"
    theta: float | None
    candidates: list[RotationCandidate] = field(default_factory=list)


@dataclass
class HomographyConfig:
    """RANSAC settings for the fine pass.

    A model is accepted only when at least ``min_support``
    correspondences outside the 4-point fitting sample reproject within
    ``inlier_px`` (any 4 points fit a homography exactly, so the sample
    itself carries no evidence).
    """

    iterations: int = 500
    inlier_px: float = 3.0
    seed: int = 42
    min_support: int = 4


def _unit_rows(mat: np.ndarray) -> np.ndarray:
    mat = mat.astype(np.float64)
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return mat / norms


def match_patches(
    template: PatchFeatureMap,
    query: PatchFeatureMap,
    min_cos: float = DEFAULT_MIN_COS,
) -> Correspondences:
    """Mutual nearest-neighbor patch matches above a cosine floor."""
    tr, tc = np.nonzero(template.valid)
    qr, qc = np.nonzero(query.valid)
    if tr.size == 0 or qr.size == 0:
        empty = np.zeros((0, 2))
        return Correspondences(empty, empty.copy(), np.zeros(0))
    tdesc = _unit_rows(template.grid[tr, tc])
    qdesc = _unit_rows(query.grid[qr, qc])
    sim = tdesc @ qdesc.T
    fwd = sim.argmax(axis=1)
    back = sim.argmax(axis=0)
    rows = np.arange(tr.size)
    cos = sim[rows, fwd]
    keep = (back[fwd] == rows) & (cos >= min_cos)
    src = np.stack([(tc[keep] + 0.5) * template.patch_px,
                    (tr[keep] + 0.5) * template.patch_px], axis=1)
    dst = np.stack([(qc[fwd[keep]] + 0.5) * query.patch_px,
                    (qr[fwd[keep]] + 0.5) * query.patch_px], axis=1)
    return Correspondences(src, dst, cos[keep])


def match_score(corr: Correspondences) -> float:
    """Total correspondence strength: the plain sum of match cosines."""
    return float(corr.cos.sum())


def coarse_select(
    asset: "Asset",
    query: PatchFeatureMap,
    store: "FeatureStore",
    k: int = 10,
) -> list[RotationCandidate]:
    """Rank all template views by match score, return the top k.

    Ties break toward the lower view index, so a query with no valid
    patches yields views 0..k-1 in order rather than an error.
    """
    if not asset.template_views:
        raise BundleError(f"asset {asset.asset_id} has no template views")
    scores = []
    for index, view in enumerate(asset.template_views):
        grid = store.load(view.feature)
        corr = match_patches(PatchFeatureMap(grid, query.patch_px), query)
        scores.append(match_score(corr))
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    return [
        RotationCandidate(i, np.asarray(asset.template_views[i].rotation, float),
                          scores[i])
        for i in order[:k]
    ]


# --- homography fitting for the fine pass ---------------------------------


def _hartley_normalize(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    center = pts.mean(axis=0)
    spread = np.linalg.norm(pts - center, axis=1).mean()
    scale = math.sqrt(2) / spread if spread > 0 else 1.0
    T = np.array([
        [scale, 0.0, -scale * center[0]],
        [0.0, scale, -scale * center[1]],
        [0.0, 0.0, 1.0],
    ])
    return (pts - center) * scale, T


def fit_homography(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Direct linear transform with Hartley normalization; needs >= 4 points."""
    src = np.asarray(src, float)
    dst = np.asarray(dst, float)
    if src.shape[0] < 4:
        raise EmptyInputError(f"homography needs 4+ points, got {src.shape[0]}")
    ns, Ts = _hartley_normalize(src)
    nd, Td = _hartley_normalize(dst)
    n = ns.shape[0]
    A = np.zeros((2 * n, 9))
    x, y = ns[:, 0], ns[:, 1]
    u, v = nd[:, 0], nd[:, 1]
    A[0::2, 0] = -x
    A[0::2, 1] = -y
    A[0::2, 2] = -1.0
    A[0::2, 6] = x * u
    A[0::2, 7] = y * u
    A[0::2, 8] = u
    A[1::2, 3] = -x
    A[1::2, 4] = -y
    A[1::2, 5] = -1.0
    A[1::2, 6] = x * v
    A[1::2, 7] = y * v
    A[1::2, 8] = v
    _, _, vt = np.linalg.svd(A)
    H = vt[-1].reshape(3, 3)
    return np.linalg.inv(Td) @ H @ Ts


def _reprojection_errors(H: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    ones = np.ones((src.shape[0], 1))
    proj = np.hstack([src, ones]) @ H.T
    w = proj[:, 2]
    errs = np.full(src.shape[0], np.inf)
    ok = np.abs(w) > 1e-12
    diff = proj[ok, :2] / w[ok, None] - dst[ok]
    errs[ok] = np.linalg.norm(diff, axis=1)
    return errs


def rotation_deviation(H: np.ndarray) -> float | None:
    """How far a homography sits from the identity rotation.

    Flips the sign so det >= 0, rescales to Frobenius norm sqrt(3),
    takes the nearest rotation via SVD, and returns its squared
    Frobenius distance to the identity.  None for a singular input.
    """
    if not np.all(np.isfinite(H)):
        return None
    det = np.linalg.det(H)
    if abs(det) < 1e-15:
        return None
    if det < 0:
        H = -H
    H = H * (math.sqrt(3) / np.linalg.norm(H))
    u, _, vt = np.linalg.svd(H)
    nearest = u @ vt
    return float(np.sum((nearest - np.eye(3)) ** 2))


def score_correspondences(
    corr: Correspondences,
    config: HomographyConfig | None = None,
) -> tuple[float, int] | None:
    """RANSAC a homography over matches and score its rotation deviation.

    Returns (score, inlier_count), or None when no model gathers
    ``min_support`` correspondences beyond its own sample.
    """
    config = config or HomographyConfig()
    n = len(corr)
    if n < 4 + config.min_support:
        return None
    rng = np.random.default_rng(config.seed)
    best_mask = None
    best_support = -1
    for _ in range(config.iterations):
        sample = rng.choice(n, size=4, replace=False)
        try:
            H = fit_homography(corr.src_px[sample], corr.dst_px[sample])
        except np.linalg.LinAlgError:
            continue
        errs = _reprojection_errors(H, corr.src_px, corr.dst_px)
        inliers = errs <= config.inlier_px
        support = int(inliers.sum()) - int(inliers[sample].sum())
        if support > best_support:
            best_support = support
            best_mask = inliers.copy()
            best_mask[sample] = True
    if best_mask is None or best_support < config.min_support:
        return None
    refit = fit_homography(corr.src_px[best_mask], corr.dst_px[best_mask])
    score = rotation_deviation(refit)
    if score is None:
        return None
    final = int((_reprojection_errors(refit, corr.src_px, corr.dst_px)
                 <= config.inlier_px).sum())
    return score, final


def fine_select(
    asset: "Asset",
    query: PatchFeatureMap,
    store: "FeatureStore",
    candidates: list[RotationCandidate],
    k: int = 4,
    config: HomographyConfig | None = None,
) -> list[RotationCandidate]:
    """Re-score coarse candidates by homography rotation deviation.

    Candidates whose matches support no homography are dropped; the
    survivors come back sorted by deviation ascending (ties toward the
    lower view index), at most k of them.

    Raises:
        FineSelectionError: every candidate was dropped.
    """
    config = config or HomographyConfig()
    kept = []
    for cand in candidates:
        grid = store.load(asset.template_views[cand.view_index].feature)
        corr = match_patches(PatchFeatureMap(grid, query.patch_px), query)
        scored = score_correspondences(corr, config)
        if scored is None:
            continue
        kept.append(RotationCandidate(cand.view_index, cand.rotation, scored[0]))
    if not kept:
        raise FineSelectionError(
            f"asset {asset.asset_id}: no coarse candidate supports a homography"
        )
    kept.sort(key=lambda c: (c.score, c.view_index))
    return kept[:k]


def geometric_enhance(
    candidates: list[RotationCandidate],
    obb: Obb,
    up: np.ndarray = UP,
    threshold: float = GEOMETRIC_THRESHOLD,
) -> RotationEstimate:
    """Pick between the visual winner and an upright box orientation.

    Compares the four upright orientations of the fitted box against
    every candidate rotation.  If the smallest geodesic angle is within
    ``threshold`` the matching box orientation wins (the box carries
    exact yaw where the visual pass only has 162 discrete views); else
    the best visual candidate stands.  A tilted or degenerate box
    always falls back to visual.
    """
    if not candidates:
        raise EmptyInputError("geometric enhancement needs at least one candidate")
    fallback = RotationEstimate(
        rotation=np.array(candidates[0].rotation, float),
        source="visual",
        theta=None,
        candidates=list(candidates),
    )
    if obb.degenerate:
        return fallback
    try:
        variants = obb_vertical_orientations(obb, np.asarray(up, float))
    except NotUprightError:
        return fallback
    best_theta = None
    best_rotation = None
    for variant in variants:
        for cand in candidates:
            theta = geodesic_angle(variant, cand.rotation)
            if best_theta is None or theta < best_theta:
                best_theta = theta
                best_rotation = variant
    if best_theta <= threshold:
        return RotationEstimate(
            rotation=np.array(best_rotation, float),
            source="geometric",
            theta=float(best_theta),
            candidates=list(candidates),
        )
    fallback.theta = float(best_theta)
    return fallback


def init_translation(obb: Obb) -> np.ndarray:
    """Starting translation for a placed object: the fitted box center."""
    return np.array(obb.center, dtype=float)


# --- anisotropic scale fitting ---------------------------------------------


@dataclass
class ScaleResult:
    """Optimized per-axis scale and the overlap objective it achieves."""

    scale: np.ndarray
    objective: float


def _mode_basis(mode: str, extents: np.ndarray) -> np.ndarray:
    """Map free scale variables to the per-axis scale vector.

    fully_free: three independent factors.  height_free: one shared
    horizontal factor plus a free height.  two_long_axes: the two axes
    with the largest extents are free (extent ties break toward the
    lower axis index) and the third follows their mean.
    """
    if mode == "fully_free":
        return np.eye(3)
    if mode == "height_free":
        return np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    if mode == "two_long_axes":
        order = np.lexsort((np.arange(3), -extents))
        basis = np.zeros((3, 2))
        basis[order[0], 0] = 1.0
        basis[order[1], 1] = 1.0
        basis[order[2], :] = 0.5
        return basis
    raise ValueError(f"unknown scale mode {mode!r}")


def _alignment_permutation(
    rotation: np.ndarray, target_axes: np.ndarray, tol: float = 1e-9
) -> np.ndarray | None:
    """Asset axis index aligned with each target axis, if axis-aligned."""
    cosines = np.abs(target_axes.T @ rotation)
    perm = cosines.argmax(axis=1)
    if sorted(perm.tolist()) != [0, 1, 2]:
        return None
    for i in range(3):
        if abs(cosines[i, perm[i]] - 1.0) > tol:
            return None
        if cosines[i].sum() - cosines[i, perm[i]] > tol:
            return None
    return perm


def _golden_max(f: Callable[[float], float], lo: float, hi: float,
                tol: float) -> tuple[float, float]:
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    mid = (a + b) / 2.0
    return mid, f(mid)


def _coordinate_descent(
    f: Callable[[np.ndarray], float],
    start: np.ndarray,
    lo: float,
    hi: float,
    tol: float,
    scan: int = 17,
    sweeps: int = 6,
) -> tuple[np.ndarray, float]:
    x = np.array(start, float)
    best = f(x)
    for _ in range(sweeps):
        improved = False
        for axis in range(x.size):
            def slice_f(w, axis=axis):
                y = x.copy()
                y[axis] = w
                return f(y)

            grid = np.linspace(lo, hi, scan)
            vals = [slice_f(w) for w in grid]
            k = int(np.argmax(vals))
            left = grid[max(k - 1, 0)]
            right = grid[min(k + 1, scan - 1)]
            w, fw = _golden_max(slice_f, left, right, tol)
            if vals[k] > fw:
                w, fw = float(grid[k]), vals[k]
            if fw > best + 1e-15:
                x[axis] = w
                best = fw
                improved = True
        if not improved:
            break
    return x, best


def _aligned_line_best(
    slopes: np.ndarray,
    consts: np.ndarray,
    target_extents: np.ndarray,
    target_volume: float,
    lo: float,
    hi: float,
) -> tuple[float, float]:
    """Exact 1-d maximizer of the aligned overlap objective.

    Along one free variable each extent is linear, so the objective is
    piecewise polynomial (degree <= 3) with breakpoints where an extent
    crosses its target.  The maximum is found by evaluating bounds,
    breakpoints, and per-piece stationary points.
    """
    def value(w: float) -> float:
        q = slopes * w + consts
        return float(2.0 * np.minimum(q, target_extents).prod()
                     - q.prod() - target_volume)

    knots = {lo, hi}
    for slope, const, ext in zip(slopes, consts, target_extents):
        if slope != 0.0:
            w = (ext - const) / slope
            if lo < w < hi:
                knots.add(float(w))
    knots = sorted(knots)
    candidates = list(knots)
    poly = np.polynomial.polynomial
    for a, b in zip(knots[:-1], knots[1:]):
        mid = (a + b) / 2.0
        overlap = np.array([1.0])
        volume = np.array([1.0])
        for slope, const, ext in zip(slopes, consts, target_extents):
            linear = np.array([const, slope])
            volume = poly.polymul(volume, linear)
            if const + slope * mid < ext:
                overlap = poly.polymul(overlap, linear)
            else:
                overlap = poly.polymul(overlap, np.array([ext]))
        coeffs = np.zeros(4)
        coeffs[: overlap.size] += 2.0 * overlap
        coeffs[: volume.size] -= volume
        for root in poly.polyroots(poly.polyder(coeffs)):
            if abs(root.imag) < 1e-12 and a < root.real < b:
                candidates.append(float(root.real))
    candidates.sort()
    best_w = candidates[0]
    best_v = value(best_w)
    for w in candidates[1:]:
        v = value(w)
        if v > best_v:
            best_w, best_v = w, v
    return best_w, best_v


def optimize_scale(
    asset: "Asset",
    rotation: np.ndarray,
    target: Obb,
    mode: str | None = None,
    bounds: tuple[float, float] = SCALE_BOUNDS,
    tol: float = 1e-3,
) -> ScaleResult:
    """Fit per-axis scale so the rotated asset box best overlaps the target.

    Both boxes share the target's center; the objective is twice the
    intersection volume minus both box volumes, so a perfect fit scores
    zero and anything else is negative.  Axis-aligned placements use
    exact piecewise-polynomial solves; general rotations fall back to a
    coarse scan plus coordinate descent.  Free variables stay inside
    ``bounds``.
    """
    extents = np.asarray(asset.extents, float)
    mode = mode or asset.scale_mode
    basis = _mode_basis(mode, extents)
    lo, hi = bounds
    target_extents = 2.0 * target.half_extents
    target_volume = float(target_extents.prod())

    perm = _alignment_permutation(np.asarray(rotation, float), target.axes)
    if perm is not None:
        mapped_extents = extents[perm]

        def aligned_eval(free_vars: np.ndarray) -> float:
            scale = basis @ free_vars
            q = scale[perm] * mapped_extents
            return float(2.0 * np.minimum(q, target_extents).prod()
                         - q.prod() - target_volume)

        if mode == "fully_free":
            scale = np.empty(3)
            for i in range(3):
                scale[perm[i]] = np.clip(target_extents[i] / extents[perm[i]],
                                         lo, hi)
            return ScaleResult(scale, aligned_eval(scale))

        nfree = basis.shape[1]
        axes_grid = np.linspace(lo, hi, 41)
        mesh = np.meshgrid(*([axes_grid] * nfree), indexing="ij")
        free_grid = np.stack([m.ravel() for m in mesh], axis=1)
        scales = free_grid @ basis.T
        q = scales[:, perm] * mapped_extents
        vals = (2.0 * np.minimum(q, target_extents).prod(axis=1)
                - q.prod(axis=1) - target_volume)
        x = free_grid[int(np.argmax(vals))].copy()
        best = aligned_eval(x)
        for _ in range(30):
            improved = False
            for axis in range(nfree):
                rest = x.copy()
                rest[axis] = 0.0
                base_scale = basis @ rest
                slopes = basis[perm, axis] * mapped_extents
                consts = base_scale[perm] * mapped_extents
                w, fw = _aligned_line_best(slopes, consts, target_extents,
                                           target_volume, lo, hi)
                if fw > best + 1e-15:
                    x[axis] = w
                    best = fw
                    improved = True
            if not improved:
                break
        return ScaleResult(basis @ x, best)

    def general_eval(free_vars: np.ndarray) -> float:
        scale = basis @ free_vars
        box = Obb(center=target.center, axes=np.asarray(rotation, float),
                  half_extents=scale * extents / 2.0)
        return overlap_objective(box, target)

    nfree = basis.shape[1]
    per_axis = 17 if nfree == 2 else 9
    axes_grid = np.linspace(lo, hi, per_axis)
    mesh = np.meshgrid(*([axes_grid] * nfree), indexing="ij")
    free_grid = np.stack([m.ravel() for m in mesh], axis=1)
    vals = np.array([general_eval(v) for v in free_grid])
    order = np.argsort(-vals, kind="stable")
    best_x, best_v = None, -np.inf
    for start_idx in order[:2]:
        x, v = _coordinate_descent(general_eval, free_grid[start_idx],
                                   lo, hi, tol)
        if v > best_v:
            best_x, best_v = x, v
    return ScaleResult(basis @ best_x, best_v)


# --- template view directions ----------------------------------------------


def icosphere_directions(level: int = 2) -> np.ndarray:
    """Unit view directions from a subdivided icosahedron (level 2: 162)."""
    phi = (1.0 + math.sqrt(5.0)) / 2.0
    verts = [
        (-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
        (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
        (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [np.array(v, float) / np.linalg.norm(v) for v in verts]
    for _ in range(level):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(i: int, j: int) -> int:
            key = (min(i, j), max(i, j))
            if key not in cache:
                mid = verts[i] + verts[j]
                verts.append(mid / np.linalg.norm(mid))
                cache[key] = len(verts) - 1
            return cache[key]

        next_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            next_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = next_faces
    return np.array(verts)


def icosphere_view_rotations(
    level: int = 2, up: np.ndarray = UP
) -> list[np.ndarray]:
    """One orthonormal frame per icosphere direction.

    Column 2 is the view direction; column 1 leans toward ``up`` so the
    in-image roll is consistent across views (views parallel to ``up``
    use the x axis as the tiebreaker).
    """
    up = np.asarray(up, float)
    frames = []
    for direction in icosphere_directions(level):
        tilt = up - (up @ direction) * direction
        if np.linalg.norm(tilt) < 1e-9:
            seed = np.array([1.0, 0.0, 0.0])
            tilt = seed - (seed @ direction) * direction
        e1 = tilt / np.linalg.norm(tilt)
        e0 = np.cross(e1, direction)
        frames.append(np.stack([e0, e1, direction], axis=1))
    return frames


def template_view_rotations(
    level: int = 2, up: np.ndarray = UP
) -> list[np.ndarray]:
    """Object-to-camera rotation shown by each template viewpoint.

    Entry k is how an upright object appears to a roll-free camera
    watching it from icosphere direction k.  Template banks store these
    in their manifests; composing a matched entry with the consumer's
    own camera rotation yields the object's world rotation, so the bank
    never has to know the scene.
    """
    # The frame's columns are (right-of-view, toward-up, direction);
    # the camera convention is (right, down, forward) with forward
    # pointing back at the object.
    flip = np.diag([1.0, -1.0, -1.0])
    return [(frame @ flip).T for frame in icosphere_view_rotations(level, up)]
