import numpy as np
import pytest

from layoutforge.geometry import Obb


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation matrix via quaternion sampling."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def random_obb(
    rng: np.random.Generator,
    center_spread: float = 2.0,
    max_half_extent: float = 1.0,
) -> Obb:
    return Obb(
        center=rng.uniform(-center_spread, center_spread, size=3),
        axes=random_rotation(rng),
        half_extents=rng.uniform(0.1, max_half_extent, size=3),
    )


def sample_obb_surface(obb: Obb, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform points on the box surface, area-weighted over faces."""
    h = obb.half_extents
    areas = np.array([h[1] * h[2], h[0] * h[2], h[0] * h[1]], dtype=float)
    areas = np.repeat(areas, 2)
    probs = areas / areas.sum()
    faces = rng.choice(6, size=n, p=probs)
    local = rng.uniform(-1.0, 1.0, size=(n, 3)) * h
    for f in range(6):
        axis, sign = f // 2, 1.0 if f % 2 == 0 else -1.0
        sel = faces == f
        local[sel, axis] = sign * h[axis]
    return obb.center + local @ obb.axes.T


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20260815)
