"""Graph-based visual saliency with gaze injection (plain, GA and DGA variants).

Pipeline per image:

1. ``extract_features``: intensity and two colour-opponency maps, area-resampled
   so the longer edge equals ``cap`` and affinely mapped into [1e-4, 1].
2. Activation: a Markov chain over the map cells with transition weights
   ``|log M(i)/M(j)| * F(i, j)`` where ``F`` is a Gaussian of the cell
   distance. The initial state is uniform (plain) or built from the gaze
   points (GA/DGA) and is pushed through the chain ``k`` times.
3. Normalisation: a second chain with weights ``A(j) * F(i, j)``, started from
   a uniform state (plain/GA) or from the gaze state again (DGA).

Channel activations are summed, min-max scaled and bilinearly upsampled.

Weights below a threshold ``l`` are provably confined to a disc of radius
``sqrt(-2 sigma^2 ln l)`` cells, so with ``l > 0`` the chain is assembled
sparsely from that disc alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from PIL import Image

from .core import as_array
from .errors import EmptyImage, NoGazeInDomain, NonPositiveFeature, NotConverged

FEATURE_EPS = 1e-4
ZERO_ROW_MASS = 1e-12
CONVERGE_TOL = 1e-8
VARIANTS = ("plain", "ga", "dga")


@dataclass(frozen=True)
class GbvsParams:
    """Saliency parameters.

    ``sigma`` is in map cells; ``None`` means 0.15 x mean(m, n). ``k=None``
    iterates the activation chain to convergence. ``l=0`` builds dense
    transition matrices, ``l>0`` sparse ones. ``legacy_sigma`` divides the
    squared distance by 2*sigma instead of 2*sigma^2.
    """

    sigma: float | None = None
    k: int | None = 1
    l: float = 0.0
    q: float = 0.0
    cap: int = 32
    variant: str = "ga"
    normalize_k: int | None = 1
    legacy_sigma: bool = False
    sigma_fraction: float = 0.15

    def __post_init__(self):
        if self.sigma is not None and not self.sigma > 0:
            raise ValueError("sigma must be > 0")
        if self.k is not None and self.k < 0:
            raise ValueError("k must be >= 0")
        if self.normalize_k is not None and self.normalize_k < 0:
            raise ValueError("normalize_k must be >= 0")
        if not 0 <= self.l < 1:
            raise ValueError("l must satisfy 0 <= l < 1")
        if not 0 <= self.q <= 1:
            raise ValueError("q must satisfy 0 <= q <= 1")
        if self.cap < 1:
            raise ValueError("cap must be >= 1")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")

    def sigma_for(self, shape: Sequence[int]) -> float:
        if self.sigma is not None:
            return float(self.sigma)
        return self.sigma_fraction * (shape[0] + shape[1]) / 2

    def denominator(self, sigma: float) -> float:
        return 2 * sigma if self.legacy_sigma else 2 * sigma * sigma


@dataclass(frozen=True, eq=False)
class FeatureMap:
    values: np.ndarray  # (m, n), in (0, 1]
    channel: str

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    """Row-stochastic (mn x mn) matrix, dense ndarray or CSR."""

    matrix: np.ndarray | sp.csr_matrix
    shape2d: tuple[int, int]
    entries: int  # weights evaluated while building

    @property
    def sparse(self) -> bool:
        return sp.issparse(self.matrix)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray() if self.sparse else np.asarray(self.matrix)

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).ravel()

    def step(self, nu: np.ndarray) -> np.ndarray:
        """One left multiplication ``nu @ T``."""
        if self.sparse:
            return self._transposed() @ nu
        return nu @ self.matrix

    def _transposed(self):
        cached = self.__dict__.get("_tt")
        if cached is None:
            cached = self.matrix.T.tocsr()
            object.__setattr__(self, "_tt", cached)
        return cached


@dataclass(frozen=True, eq=False)
class SaliencyField:
    values: np.ndarray  # (H, W) in [0, 1]
    lowres: np.ndarray  # (m, n) in [0, 1]
    activation: np.ndarray  # (m, n), sums to 1; feeds the next frame's temporal blend


# -- resampling --------------------------------------------------------------


def round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def internal_shape(height: int, width: int, cap: int) -> tuple[int, int]:
    scale = cap / max(height, width)
    return (max(1, round_half_up(height * scale)), max(1, round_half_up(width * scale)))


def area_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) box-filter weights: output cell = mean of the input span it covers."""
    edges = np.arange(n_out + 1) * (n_in / n_out)
    lo, hi = edges[:-1, None], edges[1:, None]
    px = np.arange(n_in)[None, :]
    overlap = np.clip(np.minimum(hi, px + 1) - np.maximum(lo, px), 0.0, None)
    return overlap / overlap.sum(axis=1, keepdims=True)


def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) linear-interpolation weights with pixel-centre alignment, clamped edges."""
    x = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    x = np.clip(x, 0.0, n_in - 1)
    i0 = np.floor(x).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = x - i0
    W = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(W, (rows, i0), 1 - frac)
    np.add.at(W, (rows, i1), frac)
    return W


def resample_area(arr: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    return area_matrix(arr.shape[0], shape[0]) @ arr @ area_matrix(arr.shape[1], shape[1]).T


def resample_bilinear(arr: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    return bilinear_matrix(arr.shape[0], shape[0]) @ arr @ bilinear_matrix(arr.shape[1], shape[1]).T


# -- step 1: features ------------------------------------------------------


def _to_unit_float(image) -> np.ndarray:
    arr = as_array(image)
    if arr.size == 0:
        raise EmptyImage("image has no pixels")
    if arr.dtype.kind in "ui":
        return arr.astype(float) / np.iinfo(arr.dtype).max
    return arr.astype(float)


def affine_unit(values: np.ndarray, eps: float = FEATURE_EPS) -> np.ndarray:
    """Map min..max onto eps..1; a constant map becomes all ones."""
    lo, hi = values.min(), values.max()
    if hi - lo <= 0:
        return np.ones_like(values)
    return eps + (1 - eps) * (values - lo) / (hi - lo)


def extract_features(image, cap: int = 32) -> list[FeatureMap]:
    """Intensity, |R-G| and |B-Y| maps (intensity only for grey input)."""
    img = _to_unit_float(image)
    if img.ndim == 2:
        raw = {"intensity": img}
    elif img.ndim == 3 and img.shape[2] >= 3:
        r, g, b = img[:, :, 0], img[:, :, 1], img[:, :, 2]
        raw = {
            "intensity": (r + g + b) / 3,
            "rg": np.abs(r - g),
            "by": np.abs(b - (r + g) / 2),
        }
    else:
        raise EmptyImage(f"unsupported image shape {img.shape}")
    shape = internal_shape(img.shape[0], img.shape[1], cap)
    return [FeatureMap(affine_unit(resample_area(v, shape)), name) for name, v in raw.items()]


# -- step 2: Markov chain ----------------------------------------------------


def dissimilarity(M, i, j) -> float:
    """``|log(M(i) / M(j))|``; ``i``/``j`` index the flattened map or are (row, col) pairs."""
    vals = np.asarray(M.values if isinstance(M, FeatureMap) else M, dtype=float)
    a = vals[tuple(i)] if isinstance(i, tuple) else vals.ravel()[i]
    b = vals[tuple(j)] if isinstance(j, tuple) else vals.ravel()[j]
    if a <= 0 or b <= 0:
        raise NonPositiveFeature(f"feature values must be > 0, got {a}, {b}")
    return abs(math.log(a / b))


def distance_weight(i, j, sigma: float, legacy_sigma: bool = False) -> float:
    """Gaussian weight of the Euclidean distance between cells ``i`` and ``j`` (row, col)."""
    d2 = (i[0] - j[0]) ** 2 + (i[1] - j[1]) ** 2
    den = 2 * sigma if legacy_sigma else 2 * sigma * sigma
    return math.exp(-d2 / den)


def sparse_radius2(sigma: float, l: float, legacy_sigma: bool = False) -> float:
    """Squared cell distance beyond which the distance weight drops below ``l``."""
    den = 2 * sigma if legacy_sigma else 2 * sigma * sigma
    return -den * math.log(l)


def _cell_coords(shape):
    m, n = shape
    rr, cc = np.divmod(np.arange(m * n), n)
    return rr.astype(float), cc.astype(float)


def _offsets(shape, radius2: float, include_self: bool):
    m, n = shape
    rmax = int(math.floor(math.sqrt(radius2)))
    out = []
    for dy in range(-min(rmax, m - 1), min(rmax, m - 1) + 1):
        for dx in range(-min(rmax, n - 1), min(rmax, n - 1) + 1):
            if dy * dy + dx * dx > radius2:
                continue
            if dy == 0 and dx == 0 and not include_self:
                continue
            out.append((dy, dx))
    return out


def _normalize_rows_dense(W: np.ndarray) -> np.ndarray:
    sums = W.sum(axis=1)
    dead = sums < ZERO_ROW_MASS
    W = W / np.where(dead, 1.0, sums)[:, None]
    W[dead] = 1.0 / W.shape[1]
    return W


def _assemble_sparse(rows, cols, vals, n: int) -> sp.csr_matrix:
    sums = np.bincount(rows, weights=vals, minlength=n)
    dead = np.flatnonzero(sums < ZERO_ROW_MASS)
    keep = ~np.isin(rows, dead)
    rows, cols, vals = rows[keep], cols[keep], vals[keep] / sums[rows[keep]]
    if len(dead):
        rows = np.concatenate([rows, np.repeat(dead, n)])
        cols = np.concatenate([cols, np.tile(np.arange(n), len(dead))])
        vals = np.concatenate([vals, np.full(len(dead) * n, 1.0 / n)])
    T = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    T.sum_duplicates()
    T.sort_indices()
    return T


def _pair_weights_dense(shape, sigma, params, pair_fn) -> tuple[np.ndarray, int]:
    rr, cc = _cell_coords(shape)
    d2 = (rr[:, None] - rr[None, :]) ** 2 + (cc[:, None] - cc[None, :]) ** 2
    F = np.exp(-d2 / params.denominator(sigma))
    return pair_fn(None, None, F), F.size


def _pair_weights_sparse(shape, sigma, params, pair_fn, include_self):
    m, n = shape
    den = params.denominator(sigma)
    r2 = sparse_radius2(sigma, params.l, params.legacy_sigma)
    rows, cols, vals = [], [], []
    rr, cc = np.divmod(np.arange(m * n), n)
    for dy, dx in _offsets(shape, r2, include_self):
        ok = (rr + dy >= 0) & (rr + dy < m) & (cc + dx >= 0) & (cc + dx < n)
        src = np.flatnonzero(ok)
        dst = src + dy * n + dx
        F = math.exp(-(dy * dy + dx * dx) / den)
        rows.append(src)
        cols.append(dst)
        vals.append(pair_fn(src, dst, F))
    if not rows:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, np.zeros(0)
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


def build_transition(M, params: GbvsParams, sigma: float | None = None) -> TransitionMatrix:
    """Row-stochastic chain with weights ``|log M(i)/M(j)| * F(i, j)``.

    Dense when ``params.l == 0``; otherwise only pairs with ``F >= l`` are
    evaluated. The diagonal is zero by construction (d(i, i) = 0). Rows without
    mass fall back to uniform over all cells.
    """
    vals = np.asarray(M.values if isinstance(M, FeatureMap) else M, dtype=float)
    if np.any(vals <= 0):
        raise NonPositiveFeature("feature map must be strictly positive")
    shape = vals.shape
    sigma = params.sigma_for(shape) if sigma is None else sigma
    logm = np.log(vals.ravel())
    N = logm.size

    if params.l == 0:
        def pair_fn(_src, _dst, F):
            return np.abs(logm[:, None] - logm[None, :]) * F

        W, entries = _pair_weights_dense(shape, sigma, params, pair_fn)
        return TransitionMatrix(_normalize_rows_dense(W), shape, entries)

    def pair_fn(src, dst, F):
        return np.abs(logm[src] - logm[dst]) * F

    rows, cols, w = _pair_weights_sparse(shape, sigma, params, pair_fn, include_self=False)
    return TransitionMatrix(_assemble_sparse(rows, cols, w, N), shape, len(w))


def image_to_map(points_xy, image_shape: Sequence[int], map_shape: Sequence[int]) -> np.ndarray:
    """Pixel (x, y) -> continuous map (x=col, y=row) coordinates, pixel-centre aligned."""
    p = np.asarray(points_xy, dtype=float).reshape(-1, 2)
    H, W = image_shape[:2]
    m, n = map_shape
    return np.column_stack([(p[:, 0] + 0.5) * n / W - 0.5, (p[:, 1] + 0.5) * m / H - 0.5])


def gaze_init(
    gaze_map_xy,
    shape: Sequence[int],
    sigma: float,
    legacy_sigma: bool = False,
    weights: Sequence[float] | None = None,
    previous: np.ndarray | None = None,
    q: float = 0.0,
) -> np.ndarray:
    """Initial activation from gaze points given in map coordinates (x=col, y=row).

    Every point contributes an L1-normalised Gaussian bump (optionally weighted,
    e.g. by fixation time). Points outside the map are ignored. With a
    ``previous`` activation the result is ``q * previous + (1 - q) * gaze``.
    Returns an (m, n) array summing to 1.
    """
    m, n = shape
    if previous is not None and q == 1:
        return np.array(previous, dtype=float).reshape(m, n)
    g = np.asarray(gaze_map_xy, dtype=float).reshape(-1, 2)
    inside = (g[:, 0] >= -0.5) & (g[:, 0] < n - 0.5) & (g[:, 1] >= -0.5) & (g[:, 1] < m - 0.5)
    if not np.any(inside):
        raise NoGazeInDomain("no gaze point falls inside the map")
    b = np.ones(len(g)) if weights is None else np.asarray(weights, dtype=float)
    g, b = g[inside], b[inside]
    den = 2 * sigma if legacy_sigma else 2 * sigma * sigma
    rows = np.arange(m, dtype=float)
    cols = np.arange(n, dtype=float)
    nu = np.zeros((m, n))
    for (x, y), bt in zip(g, b):
        bump = np.outer(np.exp(-((rows - y) ** 2) / den), np.exp(-((cols - x) ** 2) / den))
        nu += bt * bump / bump.sum()
    nu /= nu.sum()
    if previous is not None and q > 0:
        nu = q * np.asarray(previous, dtype=float).reshape(m, n) + (1 - q) * nu
    return nu


def iterate(T: TransitionMatrix, nu, k: int) -> np.ndarray:
    """``nu @ T^k``, renormalised after every step. ``k = 0`` returns ``nu`` unchanged."""
    shape = np.shape(nu)
    v = np.array(nu, dtype=float).ravel()
    for _ in range(k):
        v = T.step(v)
        v /= v.sum()
    return v.reshape(shape)


def converge(T: TransitionMatrix, nu, tol: float = CONVERGE_TOL, max_steps: int | None = None):
    """Power-iterate until ``||nu T - nu||_1 < tol``.

    Returns ``(activation, steps)``. Raises :class:`NotConverged` carrying the
    last iterate when ``max_steps`` (default 10 * mn) runs out.
    """
    shape = np.shape(nu)
    v = np.array(nu, dtype=float).ravel()
    max_steps = 10 * v.size if max_steps is None else max_steps
    residual = math.inf
    for step in range(1, max_steps + 1):
        nxt = T.step(v)
        nxt /= nxt.sum()
        residual = float(np.abs(nxt - v).sum())
        v = nxt
        if residual < tol:
            return v.reshape(shape), step
    raise NotConverged(v.reshape(shape), max_steps, residual)


def stationary(T: TransitionMatrix) -> np.ndarray:
    """Equilibrium distribution by a direct linear solve (reference for :func:`converge`)."""
    N = T.n
    A = (T.matrix.T - (sp.identity(N) if T.sparse else np.eye(N)))
    if T.sparse:
        A = sp.vstack([A.tocsr()[:-1], sp.csr_matrix(np.ones((1, N)))]).tocsc()
        rhs = np.zeros(N)
        rhs[-1] = 1.0
        pi = spla.spsolve(A, rhs)
    else:
        A = np.vstack([A[:-1], np.ones((1, N))])
        rhs = np.zeros(N)
        rhs[-1] = 1.0
        pi = np.linalg.solve(A, rhs)
    pi = np.clip(pi, 0.0, None)
    return (pi / pi.sum()).reshape(T.shape2d)


def _activate(T: TransitionMatrix, nu: np.ndarray, k: int | None) -> np.ndarray:
    if k is None:
        try:
            return converge(T, nu)[0]
        except NotConverged as exc:
            return exc.last
    return iterate(T, nu, k)


# -- step 3: normalisation ---------------------------------------------------


def build_normalization(A, params: GbvsParams, sigma: float | None = None) -> TransitionMatrix:
    """Chain with weights ``A(j) * F(i, j)`` (diagonal included)."""
    a = np.asarray(A, dtype=float)
    shape = a.shape
    sigma = params.sigma_for(shape) if sigma is None else sigma
    flat = a.ravel()
    if params.l == 0:
        W, entries = _pair_weights_dense(shape, sigma, params, lambda _s, _d, F: flat[None, :] * F)
        return TransitionMatrix(_normalize_rows_dense(W), shape, entries)
    rows, cols, w = _pair_weights_sparse(
        shape, sigma, params, lambda _s, dst, F: flat[dst] * F, include_self=True
    )
    return TransitionMatrix(_assemble_sparse(rows, cols, w, flat.size), shape, len(w))


def normalize_activation(A, params: GbvsParams, gaze_map_xy=None, sigma: float | None = None) -> np.ndarray:
    """Accentuate peaks of an activation map with a second Markov pass.

    Starts from a uniform state, or (DGA) from the gaze initialisation when
    ``gaze_map_xy`` is given. A map without contrast is returned as uniform.
    """
    a = np.asarray(A, dtype=float)
    shape = a.shape
    sigma = params.sigma_for(shape) if sigma is None else sigma
    if np.ptp(a) == 0:
        return np.full(shape, 1.0 / a.size)
    if gaze_map_xy is not None:
        nu = gaze_init(gaze_map_xy, shape, sigma, params.legacy_sigma)
    else:
        nu = np.full(shape, 1.0 / a.size)
    T = build_normalization(a, params, sigma)
    return _activate(T, nu, params.normalize_k)


# -- full pipeline -----------------------------------------------------------


def minmax(values: np.ndarray) -> np.ndarray:
    """Scale into [0, 1]; a constant map becomes all ones."""
    lo, hi = values.min(), values.max()
    if hi - lo <= 0:
        return np.ones_like(values, dtype=float)
    return (values - lo) / (hi - lo)


def _finalize(activation: np.ndarray, image_shape) -> SaliencyField:
    low = minmax(activation)
    full = np.clip(resample_bilinear(low, tuple(image_shape[:2])), 0.0, 1.0)
    return SaliencyField(full, low, activation / activation.sum())


def _gaze_state(gaze, image_shape, map_shape, sigma, params, gaze_weights, previous):
    g_map = image_to_map(gaze, image_shape, map_shape)
    nu = gaze_init(g_map, map_shape, sigma, params.legacy_sigma, gaze_weights, previous, params.q)
    return g_map, nu


def gaze_heatmap(gaze, image_shape, params: GbvsParams = GbvsParams(), gaze_weights=None, previous=None) -> SaliencyField:
    """Plain Gaussian gaze heatmap on the internal grid, upsampled like a saliency field."""
    map_shape = internal_shape(image_shape[0], image_shape[1], params.cap)
    sigma = params.sigma_for(map_shape)
    _, nu = _gaze_state(gaze, image_shape, map_shape, sigma, params, gaze_weights, previous)
    return _finalize(nu, image_shape)


def saliency(
    image,
    gaze=None,
    params: GbvsParams = GbvsParams(),
    gaze_weights=None,
    previous: np.ndarray | None = None,
) -> SaliencyField:
    """Full saliency pipeline.

    Args:
        image: (H, W, 3) RGB or (H, W) grey array / :class:`~gazepercept.core.Raster`.
        gaze: (N, 2) pixel coordinates; required for the GA and DGA variants.
        params: see :class:`GbvsParams`.
        gaze_weights: optional per-point weights (e.g. fixation durations).
        previous: the previous frame's ``SaliencyField.activation`` for temporal blending.
    """
    img = _to_unit_float(image)
    image_shape = img.shape[:2]
    maps = extract_features(img, params.cap)
    map_shape = maps[0].shape
    sigma = params.sigma_for(map_shape)

    g_map = None
    if params.variant == "plain":
        nu = np.full(map_shape, 1.0 / (map_shape[0] * map_shape[1]))
    else:
        if gaze is None or len(np.asarray(gaze).reshape(-1, 2)) == 0:
            raise NoGazeInDomain(f"variant {params.variant!r} needs gaze points")
        g_map, nu = _gaze_state(gaze, image_shape, map_shape, sigma, params, gaze_weights, previous)
        if params.k == 0:
            # no Markov step at all: the plain gaze heatmap
            return _finalize(nu, image_shape)

    total = np.zeros(map_shape)
    for fmap in maps:
        T = build_transition(fmap, params, sigma)
        act = _activate(T, nu, params.k)
        norm_gaze = g_map if params.variant == "dga" else None
        total += normalize_activation(act, params, norm_gaze, sigma)
    return _finalize(total, image_shape)


# -- export ------------------------------------------------------------------


def quantize(values: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(np.asarray(values, dtype=float) * 255 + 0.5), 0, 255).astype(np.uint8)


def save_saliency_png(field: SaliencyField, path) -> None:
    Image.fromarray(quantize(field.values)).save(path, format="PNG")


def save_saliency_bin(field: SaliencyField, path) -> None:
    Path(path).write_bytes(np.ascontiguousarray(field.values, dtype="<f8").tobytes())


def overlay(image, field: SaliencyField, alpha: float = 0.6) -> np.ndarray:
    """Blend the saliency field (red) over the image; returns uint8 RGB."""
    img = _to_unit_float(image)
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    a = alpha * field.values[:, :, None]
    red = np.array([1.0, 0.0, 0.0])
    return quantize((1 - a) * img[:, :, :3] + a * red)


def save_overlay_png(image, field: SaliencyField, path, alpha: float = 0.6) -> None:
    Image.fromarray(overlay(image, field, alpha)).save(path, format="PNG")


def with_variant(params: GbvsParams, variant: str, **changes) -> GbvsParams:
    return replace(params, variant=variant, **changes)
