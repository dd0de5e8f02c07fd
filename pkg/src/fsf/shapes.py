"""Closed 2D contours as complex Fourier series.

A shape boundary is the curve F(t) = sum_k c_k * exp(i*k*t) for t in
[0, 2*pi], defined by the complex coefficients c_k, k = -K..K. The c_0
term is the centroid, c_1/c_-1 span the fundamental ellipse, and the
higher harmonics add detail. All coordinates live in the normalized
shape-space square [-0.5, 0.5]^2 that the rasterization grid spans.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


class InvalidInputError(ValueError):
    """Raised when an operation receives out-of-contract input."""


@dataclass(frozen=True)
class FourierCoefficients:
    """Coefficients c_k, k = -K..K, of a closed Fourier contour."""

    K: int
    coeffs: np.ndarray  # complex128, shape (2K+1,), index 0 holds c_{-K}

    def __post_init__(self):
        if self.K < 1:
            raise InvalidInputError(f"K must be >= 1, got {self.K}")
        c = np.asarray(self.coeffs, dtype=np.complex128)
        if c.shape != (2 * self.K + 1,):
            raise InvalidInputError(
                f"expected {2 * self.K + 1} coefficients for K={self.K}, got {c.shape}"
            )
        if not np.all(np.isfinite(c.view(np.float64))):
            raise InvalidInputError("coefficients must be finite")
        c = c.copy()
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)

    def c(self, k: int) -> complex:
        """Coefficient c_k."""
        if abs(k) > self.K:
            raise InvalidInputError(f"harmonic {k} out of range for K={self.K}")
        return complex(self.coeffs[k + self.K])

    @property
    def k_values(self) -> np.ndarray:
        return np.arange(-self.K, self.K + 1)

    @staticmethod
    def zeros(K: int) -> "FourierCoefficients":
        return FourierCoefficients(K, np.zeros(2 * K + 1, dtype=np.complex128))

    @staticmethod
    def from_dict(entries: dict[int, complex], K: int) -> "FourierCoefficients":
        """Build from a sparse {k: c_k} mapping; unspecified harmonics are 0."""
        c = np.zeros(2 * K + 1, dtype=np.complex128)
        for k, v in entries.items():
            if abs(k) > K:
                raise InvalidInputError(f"harmonic {k} out of range for K={K}")
            c[k + K] = v
        return FourierCoefficients(K, c)


@dataclass(frozen=True)
class CurveSampling:
    """Uniform parameter grid t_j = 2*pi*j/(N_s - 1), inclusive of both ends."""

    n_samples: int

    def __post_init__(self):
        if self.n_samples < 8:
            raise InvalidInputError(f"n_samples must be >= 8, got {self.n_samples}")

    @property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, 2.0 * np.pi, self.n_samples)

    @property
    def dt(self) -> float:
        return 2.0 * np.pi / (self.n_samples - 1)

    @property
    def trapezoid_weights(self) -> np.ndarray:
        """Quadrature weights for the trapezoid rule over [0, 2*pi]."""
        w = np.full(self.n_samples, self.dt)
        w[0] = w[-1] = 0.5 * self.dt
        return w


@dataclass(frozen=True)
class CurvePoints:
    """Sampled boundary coordinates and their analytic t-derivatives."""

    x: np.ndarray
    y: np.ndarray
    dx: np.ndarray
    dy: np.ndarray

    @property
    def n_samples(self) -> int:
        return self.x.shape[0]


def _basis(theta: FourierCoefficients, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """cos(k*t) and sin(k*t) tables, shape (len(t), 2K+1)."""
    kt = np.outer(t, theta.k_values)
    return np.cos(kt), np.sin(kt)


def eval_curve(theta: FourierCoefficients, sampling: CurveSampling) -> CurvePoints:
    """Evaluate F(t_j) and F'(t_j) = sum_k i*k*c_k*exp(i*k*t_j) analytically."""
    cos_kt, sin_kt = _basis(theta, sampling.t)
    a = theta.coeffs.real
    b = theta.coeffs.imag
    k = theta.k_values.astype(np.float64)
    # F = sum (a + ib)(cos + i sin); F' swaps in the factor i*k.
    x = cos_kt @ a - sin_kt @ b
    y = sin_kt @ a + cos_kt @ b
    dx = -(sin_kt * k) @ a - (cos_kt * k) @ b
    dy = (cos_kt * k) @ a - (sin_kt * k) @ b
    return CurvePoints(x=x, y=y, dx=dx, dy=dy)


def curve_coefficient_gradient(
    theta: FourierCoefficients,
    sampling: CurveSampling,
    gx: np.ndarray,
    gy: np.ndarray,
    gdx: np.ndarray,
    gdy: np.ndarray,
) -> np.ndarray:
    """Adjoint of eval_curve: per-sample gradients -> flat coefficient gradient.

    Returns the gradient in the flat real layout
    [d/dRe(c_-K), d/dIm(c_-K), ..., d/dRe(c_K), d/dIm(c_K)].
    """
    cos_kt, sin_kt = _basis(theta, sampling.t)
    k = theta.k_values.astype(np.float64)
    # Transposes of the linear maps in eval_curve; plain ufunc reductions keep
    # the accumulation order fixed (no BLAS dispatch).
    ga = (
        (cos_kt * gx[:, None]).sum(axis=0)
        + (sin_kt * gy[:, None]).sum(axis=0)
        - k * (sin_kt * gdx[:, None]).sum(axis=0)
        + k * (cos_kt * gdy[:, None]).sum(axis=0)
    )
    gb = (
        -(sin_kt * gx[:, None]).sum(axis=0)
        + (cos_kt * gy[:, None]).sum(axis=0)
        - k * (cos_kt * gdx[:, None]).sum(axis=0)
        - k * (sin_kt * gdy[:, None]).sum(axis=0)
    )
    out = np.empty(2 * (2 * theta.K + 1))
    out[0::2] = ga
    out[1::2] = gb
    return out


def fundamental_amplitude(theta: FourierCoefficients) -> float:
    """S_fund = |c_1| + |c_-1|, the scale of the base ellipse."""
    return float(abs(theta.c(1)) + abs(theta.c(-1)))


def reg_loss(theta: FourierCoefficients, gamma: float) -> tuple[float, np.ndarray]:
    """High-harmonic penalty sum_{|k|>=2} relu(|c_k| - gamma*S_fund).

    Returns (loss, gradient) with the gradient in the flat real layout.
    Subgradient conventions: 0 at the relu kink, and d|c|/dc = c/|c| with
    value 0 when |c| = 0.
    """
    if gamma <= 0:
        raise InvalidInputError(f"gamma must be > 0, got {gamma}")
    K = theta.K
    c = theta.coeffs
    k_vals = theta.k_values
    mags = np.abs(c)
    s_fund = mags[K + 1] + mags[K - 1]
    high = np.abs(k_vals) >= 2
    excess = mags[high] - gamma * s_fund
    active = excess > 0.0
    loss = float(excess[active].sum()) if active.any() else 0.0

    grad = np.zeros(2 * (2 * K + 1))
    if active.any():
        idx_high = np.nonzero(high)[0][active]
        for i in idx_high:
            m = mags[i]
            if m > 0.0:
                grad[2 * i] = c[i].real / m
                grad[2 * i + 1] = c[i].imag / m
        # each active term subtracts gamma * d(|c_1| + |c_-1|)
        n_active = int(active.sum())
        for i in (K + 1, K - 1):
            m = mags[i]
            if m > 0.0:
                grad[2 * i] = -gamma * n_active * c[i].real / m
                grad[2 * i + 1] = -gamma * n_active * c[i].imag / m
    return loss, grad


def init_coefficients(
    placement: tuple[float, float, float, float],
    K: int,
    seed: int,
    gamma: float = 0.1,
    ellipse_fraction: float = 0.8,
    harmonic_margin: float = 0.5,
) -> FourierCoefficients:
    """Deterministic starting shape for optimization.

    ``placement`` is (cx, cy, w, h) in shape-space and must lie inside
    [-0.5, 0.5]^2. c_0 is the placement center; c_1/c_-1 are chosen so the
    fundamental ellipse is axis-aligned with semi-axes covering
    ``ellipse_fraction`` of the half-extents (counter-clockwise); the
    harmonics |k| >= 2 get i.i.d. random phases and amplitudes below
    ``harmonic_margin * gamma * S_fund``, so the regularization loss starts
    at exactly zero.
    """
    cx, cy, w, h = placement
    if w <= 0 or h <= 0:
        raise InvalidInputError("placement box must have positive size")
    if (
        cx - w / 2 < -0.5 - 1e-12
        or cx + w / 2 > 0.5 + 1e-12
        or cy - h / 2 < -0.5 - 1e-12
        or cy + h / 2 > 0.5 + 1e-12
    ):
        raise InvalidInputError("placement box must lie inside [-0.5, 0.5]^2")
    if K < 1:
        raise InvalidInputError(f"K must be >= 1, got {K}")

    a = ellipse_fraction * w / 2.0  # x semi-axis
    b = ellipse_fraction * h / 2.0  # y semi-axis
    # c_1 = p, c_-1 = q real gives x = (p+q)cos t, y = (p-q)sin t; p > |q|
    # keeps the traversal counter-clockwise.
    p = (a + b) / 2.0
    q = (a - b) / 2.0

    c = np.zeros(2 * K + 1, dtype=np.complex128)
    c[K] = complex(cx, cy)
    c[K + 1] = p
    c[K - 1] = q

    rng = np.random.default_rng(seed)
    s_fund = p + abs(q)
    cap = harmonic_margin * gamma * s_fund
    for k in range(2, K + 1):
        for idx in (K + k, K - k):
            amp = rng.uniform(0.0, cap)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            c[idx] = amp * np.exp(1j * phase)
    return FourierCoefficients(K, c)


def _orient(ax, ay, bx, by, cx, cy):
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


def self_intersection_check(theta: FourierCoefficients, sampling: CurveSampling) -> bool:
    """True iff two non-adjacent segments of the sampled polyline cross.

    The closed polyline runs through the curve samples (the duplicated
    endpoint is dropped). Shared endpoints between neighbouring segments are
    not counted as crossings, and a degenerate all-coincident polyline
    reports False.
    """
    pts = eval_curve(theta, sampling)
    x = pts.x[:-1]
    y = pts.y[:-1]
    n = x.shape[0]
    x2 = np.roll(x, -1)
    y2 = np.roll(y, -1)

    # Pair every segment i with every segment j > i + 1 (mod-n adjacency
    # excluded), vectorized over j per row i.
    for i in range(n - 2):
        j0 = i + 2
        j1 = n if i > 0 else n - 1  # segment 0 is adjacent to segment n-1
        if j0 >= j1:
            continue
        jj = slice(j0, j1)
        d1 = _orient(x[i], y[i], x2[i], y2[i], x[jj], y[jj])
        d2 = _orient(x[i], y[i], x2[i], y2[i], x2[jj], y2[jj])
        d3 = _orient(x[jj], y[jj], x2[jj], y2[jj], x[i], y[i])
        d4 = _orient(x[jj], y[jj], x2[jj], y2[jj], x2[i], y2[i])
        proper = (d1 * d2 < 0) & (d3 * d4 < 0)
        if proper.any():
            return True
    return False


# --- flat real parameter vector (optimizer / FFI layout) ---------------------


def theta_to_vector(theta: FourierCoefficients) -> np.ndarray:
    """Flatten to [re c_-K, im c_-K, ..., re c_K, im c_K]."""
    out = np.empty(2 * (2 * theta.K + 1))
    out[0::2] = theta.coeffs.real
    out[1::2] = theta.coeffs.imag
    return out


def vector_to_theta(vec: np.ndarray, K: int) -> FourierCoefficients:
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (2 * (2 * K + 1),):
        raise InvalidInputError(
            f"expected flat vector of length {2 * (2 * K + 1)} for K={K}, got {vec.shape}"
        )
    return FourierCoefficients(K, vec[0::2] + 1j * vec[1::2])


# --- JSON serialization -------------------------------------------------------


def _fmt(v: float) -> str:
    # 17 significant digits round-trips any float64 exactly.
    return format(float(v), ".17g")


def theta_to_json(theta: FourierCoefficients) -> str:
    """Serialize to the canonical coefficient JSON (sorted by k ascending)."""
    rows = ",\n".join(
        '    {"k": %d, "re": %s, "im": %s}' % (k, _fmt(c.real), _fmt(c.imag))
        for k, c in zip(theta.k_values, theta.coeffs)
    )
    return '{\n  "K": %d,\n  "coefficients": [\n%s\n  ]\n}\n' % (theta.K, rows)


def theta_from_json(text: str) -> FourierCoefficients:
    try:
        obj = json.loads(text)
        K = int(obj["K"])
        entries = obj["coefficients"]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise InvalidInputError(f"malformed coefficient JSON: {exc}") from exc
    c = np.zeros(2 * K + 1, dtype=np.complex128)
    seen = set()
    for row in entries:
        k = int(row["k"])
        if abs(k) > K or k in seen:
            raise InvalidInputError(f"bad harmonic index {k} in coefficient JSON")
        seen.add(k)
        c[k + K] = complex(float(row["re"]), float(row["im"]))
    return FourierCoefficients(K, c)


def save_theta(path, theta: FourierCoefficients) -> None:
    with open(path, "w") as f:
        f.write(theta_to_json(theta))


def load_theta(path) -> FourierCoefficients:
    with open(path) as f:
        return theta_from_json(f.read())
