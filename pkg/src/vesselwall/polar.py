"""4x upsampling, the polar resampling used for segmentation, and the
angular sliding windows around the segmenter.

Polar images are ``(180, 256)``: row ``k`` is the angle ``2k`` degrees and
column ``r`` the radius in upsampled pixels, measured from index ``(256, 256)``
of the 512x512 patch.  Row index = image y, angle 0 points along +x.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import _kernels

PATCH = 128
SCALE = 4
SIZE = PATCH * SCALE  # 512
CENTER = 256.0
N_THETA = 180
N_RHO = 256
DEG_PER_ROW = 360.0 / N_THETA


@dataclass
class CartesianPatchStack:
    """Neighbouring-slice crops around one centerline point.

    ``planes`` is ``(n_slices, s, s)``; ``s = 128`` straight from the volume
    and ``512`` after :func:`upsample_stack`.  ``crop_origin`` is the integer
    ``(x0, y0, z)`` of the crop in original-volume pixels.
    """

    planes: np.ndarray
    crop_origin: tuple[int, int, int]
    scale: int = 1

    @property
    def n_slices(self) -> int:
        return int(self.planes.shape[0])

    @property
    def center_plane(self) -> np.ndarray:
        return self.planes[self.n_slices // 2]


@dataclass
class WindowSet:
    windows: np.ndarray  # (n_windows, n_planes, height, 256)
    offsets: np.ndarray  # starting theta row of each window
    stride: int
    height: int

    def __len__(self):
        return len(self.offsets)


def _interp_axis(n_in: int, n_out: int):
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def upsample4x(patch: np.ndarray) -> np.ndarray:
    """Bilinear 128 -> 512 upsampling with pixel-center alignment.

    Output pixel ``u`` samples input coordinate ``(u + 0.5) / 4 - 0.5``,
    clamped at the borders.
    """
    patch = np.asarray(patch, dtype=np.float64)
    if patch.shape != (PATCH, PATCH):
        raise ValueError(f"upsample4x expects a {PATCH}x{PATCH} patch, got {patch.shape}")
    i0, i1, f = _interp_axis(PATCH, SIZE)
    a = patch[i0, :]
    rows = a + (patch[i1, :] - a) * f[:, None]
    b = rows[:, i0]
    return b + (rows[:, i1] - b) * f[None, :]


def upsample_stack(stack: CartesianPatchStack) -> CartesianPatchStack:
    planes = np.stack([upsample4x(p) for p in stack.planes])
    return CartesianPatchStack(planes, stack.crop_origin, SCALE)


@lru_cache(maxsize=1)
def polar_grid() -> tuple[np.ndarray, np.ndarray]:
    """Sampling coordinates ``(y, x)``, each ``(180, 256)``, of the polar map."""
    theta = np.deg2rad(np.arange(N_THETA) * DEG_PER_ROW)[:, None]
    rho = np.arange(N_RHO, dtype=np.float64)[None, :]
    y = CENTER + rho * np.sin(theta)
    x = CENTER + rho * np.cos(theta)
    y.setflags(write=False)
    x.setflags(write=False)
    return y, x


def to_polar(img: np.ndarray) -> np.ndarray:
    """Resample a 512x512 image (or a stack of them) onto the polar grid."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        return np.stack([to_polar(p) for p in img])
    if img.shape != (SIZE, SIZE):
        raise ValueError(f"to_polar expects {SIZE}x{SIZE}, got {img.shape}")
    y, x = polar_grid()
    return _kernels.bilinear_sample(img, y, x)


@lru_cache(maxsize=1)
def _inverse_grid():
    idx = np.arange(SIZE, dtype=np.float64) - CENTER
    dy, dx = np.meshgrid(idx, idx, indexing="ij")
    rho = np.hypot(dx, dy)
    theta = np.mod(np.degrees(np.arctan2(dy, dx)), 360.0) / DEG_PER_ROW
    inside = rho < N_RHO
    return theta[inside], rho[inside], inside


def from_polar(polar: np.ndarray, binary: bool = False) -> np.ndarray:
    """Map a 180x256 polar image back onto the 512x512 Cartesian patch.

    Pixels at radius >= 256 from the center are 0.  Angles wrap; radii are
    clamped to the last column.  With ``binary`` the result is thresholded at
    0.5 and returned as bool.
    """
    polar = np.asarray(polar, dtype=np.float64)
    if polar.shape != (N_THETA, N_RHO):
        raise ValueError(f"from_polar expects {N_THETA}x{N_RHO}, got {polar.shape}")
    theta, rho, inside = _inverse_grid()
    out = np.zeros((SIZE, SIZE), dtype=np.float64)
    out[inside] = _kernels.bilinear_sample(polar, theta, rho, wrap_rows=True)
    if binary:
        return out >= 0.5
    return out


def downsample_mask(mask: np.ndarray, factor: int = SCALE) -> np.ndarray:
    """Area-average ``factor x factor`` blocks and threshold at 0.5."""
    m = np.asarray(mask, dtype=np.float64)
    h, w = m.shape
    blocks = m.reshape(h // factor, factor, w // factor, factor).mean(axis=(1, 3))
    return blocks >= 0.5


def window_split(p: np.ndarray, height: int = 40, stride: int = 20) -> WindowSet:
    """Cut a polar patch into angular windows that wrap around 180 rows.

    ``p`` is ``(180, 256)`` or ``(n_planes, 180, 256)``.  Windows start at
    ``0, stride, 2*stride, ...`` until every row is covered.
    """
    p = np.asarray(p)
    if p.ndim == 2:
        p = p[None]
    n_theta = p.shape[1]
    if not 1 <= height <= n_theta:
        raise ValueError(f"window height must lie in [1, {n_theta}], got {height}")
    if not 1 <= stride <= height:
        raise ValueError(f"stride must lie in [1, {height}], got {stride}")
    n_win = -(-n_theta // stride)
    offsets = np.arange(n_win) * stride
    rows = (offsets[:, None] + np.arange(height)[None, :]) % n_theta
    windows = np.moveaxis(p[:, rows, :], 0, 1)
    return WindowSet(windows, offsets, stride, height)


def window_merge(preds, offsets, stride: int, n_theta: int = N_THETA) -> np.ndarray:
    """Average overlapping window predictions back into one polar map.

    Values are accumulated as differences from the first window covering each
    pixel, so identical covers reproduce their value bit-for-bit.
    """
    preds = np.asarray(preds, dtype=np.float64)
    offsets = np.asarray(offsets)
    if preds.ndim != 3 or len(preds) != len(offsets):
        raise ValueError(
            f"got {len(preds)} predictions for {len(offsets)} windows")
    if not np.array_equal(offsets, np.arange(len(offsets)) * stride):
        raise ValueError("window offsets do not match the stride")
    height = preds.shape[1]
    if height > n_theta:
        raise ValueError(f"window height {height} exceeds {n_theta} rows")
    ref = np.zeros((n_theta, preds.shape[2]))
    acc = np.zeros_like(ref)
    count = np.zeros(n_theta, dtype=np.int64)
    for pred, off in zip(preds, offsets):
        rows = (off + np.arange(height)) % n_theta
        first = rows[count[rows] == 0]
        # wrapped windows never revisit a row, so fancy-index writes are safe
        ref[first] = pred[(first - off) % n_theta]
        acc[rows] += pred - ref[rows]
        count[rows] += 1
    if np.any(count == 0):
        raise ValueError("windows do not cover every theta row")
    return ref + acc / count[:, None]
