"""Unstable linear plant, uniform quantizer and hypercuboidal (interval) observer.

The observer keeps an axis-aligned box that is guaranteed to contain the
state as long as every decoded measurement is correct and the noises respect
their bounds. Boxes are propagated with interval arithmetic and intersected
with the slabs implied by each dequantized measurement.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

OVERFLOW = 1e15

PAPER_A = np.array(
    [
        [1.285, 0.127, 0.0],
        [4.0, 1.285, 0.002],
        [-3.94, -0.280, 0.979],
    ]
)


class PlantError(ValueError):
    pass


class NoConvergence(RuntimeError):
    pass


class EmptyIntersection(ValueError):
    pass


def spectral_radius_abs(A, tol: float = 1e-13, max_iter: int = 100_000) -> float:
    """Perron root of the elementwise absolute value of ``A`` by power iteration.

    Iterates on ``|A| + I`` (same Perron vector, root shifted by one), which
    keeps the iteration from cycling on periodic nonnegative matrices.
    """
    A = np.abs(np.atleast_2d(np.asarray(A, dtype=float)))
    if A.shape[0] != A.shape[1]:
        raise PlantError("matrix must be square")
    n = A.shape[0]
    M = A + np.eye(n)
    v = np.full(n, 1.0 / math.sqrt(n))
    lam = 0.0
    for _ in range(max_iter):
        w = M @ v
        new = float(np.linalg.norm(w))
        if new == 0.0:
            return 0.0
        v = w / new
        if abs(new - lam) <= tol * new:
            return new - 1.0
        lam = new
    raise NoConvergence(f"power iteration did not settle in {max_iter} iterations")


def spectral_radius(A) -> float:
    return float(np.abs(np.linalg.eigvals(np.atleast_2d(A))).max())


@dataclass(frozen=True)
class Quantizer:
    """Per-component uniform mid-rise quantizer on ``[-L, L]`` with ``2**bits`` cells."""

    bits: int
    L: float

    @property
    def levels(self) -> int:
        return 1 << self.bits

    @property
    def step(self) -> float:
        return 2.0 * self.L / self.levels

    def index(self, y):
        """Cell indices and a per-component saturation mask."""
        y = np.asarray(y, dtype=float)
        idx = np.floor((y + self.L) / self.step).astype(np.int64)
        sat = (idx < 0) | (idx >= self.levels) | (y >= self.L) | (y < -self.L)
        return np.clip(idx, 0, self.levels - 1), sat

    def center(self, idx):
        return -self.L + (np.asarray(idx) + 0.5) * self.step

    def to_bits(self, idx) -> np.ndarray:
        """Most significant bit first, components concatenated."""
        idx = np.asarray(idx, dtype=np.int64).ravel()
        shifts = np.arange(self.bits - 1, -1, -1)
        return ((idx[:, None] >> shifts) & 1).astype(np.uint8).ravel()

    def from_bits(self, bits) -> np.ndarray:
        b = np.asarray(bits, dtype=np.int64).reshape(-1, self.bits)
        return b @ (1 << np.arange(self.bits - 1, -1, -1))

    def interval(self, idx, delta=0.0):
        """Measurement-consistent interval of each component; edge cells are open-ended."""
        idx = np.asarray(idx)
        c = self.center(idx)
        h = self.step / 2.0 + delta
        lo = np.where(idx == 0, -np.inf, c - h)
        hi = np.where(idx == self.levels - 1, np.inf, c + h)
        return lo, hi


@dataclass
class PlantConfig:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    K: np.ndarray
    omega: float = 0.05
    delta: float = 0.05
    x0_bound: float = 1.0
    bits: int = 12
    L: float = 16.0
    fusion: str = "intersection"
    fail_threshold: float = 1e3

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.asarray(self.B, dtype=float).reshape(self.A.shape[0], -1)
        self.C = np.asarray(self.C, dtype=float).reshape(-1, self.A.shape[0])
        self.K = np.asarray(self.K, dtype=float).reshape(self.B.shape[1], self.A.shape[0])
        if self.A.shape[0] != self.A.shape[1]:
            raise PlantError("A must be square")
        if self.bits % self.n_y:
            raise PlantError(f"{self.bits} bits cannot be split evenly over {self.n_y} outputs")
        if self.fusion not in ("intersection", "average"):
            raise PlantError(f"unknown fusion rule {self.fusion!r}")
        if spectral_radius(self.A + self.B @ self.K) >= 1.0:
            raise PlantError("K does not stabilize A + B K")

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_y(self) -> int:
        return self.C.shape[0]

    @property
    def quantizer(self) -> Quantizer:
        return Quantizer(self.bits // self.n_y, self.L)

    @property
    def rho_abar(self) -> float:
        return spectral_radius_abs(self.A)

    def to_dict(self) -> dict:
        return {
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "C": self.C.tolist(),
            "K": self.K.tolist(),
            "omega": self.omega,
            "delta": self.delta,
            "x0_bound": self.x0_bound,
            "bits": self.bits,
            "L": self.L,
            "fusion": self.fusion,
            "fail_threshold": self.fail_threshold,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PlantConfig":
        return cls(**d)

    @classmethod
    def load(cls, path) -> "PlantConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def default_gain(A, B, poles=(0.5, 0.45, 0.4)) -> np.ndarray:
    from scipy.signal import place_poles

    return -place_poles(np.asarray(A, float), np.asarray(B, float), list(poles)).gain_matrix


def default_config(**kw) -> PlantConfig:
    """Example plant with single-input ``B = e2``, full-state ``C = I`` and pole-placed ``K``."""
    B = np.array([[0.0], [1.0], [0.0]])
    kw.setdefault("K", default_gain(PAPER_A, B))
    return PlantConfig(A=PAPER_A.copy(), B=B, C=np.eye(3), **kw)


@dataclass(frozen=True)
class Hypercuboid:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        if (np.asarray(self.lo) > np.asarray(self.hi)).any():
            raise EmptyIntersection("lower bound above upper bound")

    @classmethod
    def centered(cls, center, radius):
        center = np.asarray(center, dtype=float)
        return cls(center - radius, center + radius)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def radius(self) -> np.ndarray:
        return 0.5 * (self.hi - self.lo)

    @property
    def width(self) -> np.ndarray:
        return self.hi - self.lo

    def contains(self, x, tol: float = 1e-9) -> bool:
        x = np.asarray(x)
        return bool(((x >= self.lo - tol) & (x <= self.hi + tol)).all())

    def predict(self, A, bu, omega) -> "Hypercuboid":
        c = A @ self.center + bu
        r = np.abs(A) @ self.radius + omega
        return Hypercuboid(c - r, c + r)

    def intersect(self, lo, hi) -> "Hypercuboid":
        new_lo = np.maximum(self.lo, lo)
        new_hi = np.minimum(self.hi, hi)
        if (new_lo > new_hi).any():
            raise EmptyIntersection("measurement slab misses the predicted box")
        return Hypercuboid(new_lo, new_hi)


@dataclass
class PlantState:
    x: np.ndarray
    t: int = 1
    u_history: list = field(default_factory=list)
    x_hat: np.ndarray | None = None
    diverged: bool = False


def initial_state(cfg: PlantConfig, rng: np.random.Generator) -> PlantState:
    return PlantState(x=rng.uniform(-cfg.x0_bound, cfg.x0_bound, cfg.n_x))


def step_plant(cfg: PlantConfig, state: PlantState, u, w) -> np.ndarray:
    """Advance ``x <- A x + B u + w`` in place and return the new state."""
    u = np.asarray(u, dtype=float).reshape(cfg.B.shape[1])
    x = cfg.A @ state.x + cfg.B @ u + np.asarray(w, dtype=float)
    if not np.isfinite(x).all() or np.abs(x).max() > OVERFLOW:
        state.diverged = True
        x = np.clip(np.nan_to_num(x, nan=OVERFLOW, posinf=OVERFLOW, neginf=-OVERFLOW), -OVERFLOW, OVERFLOW)
    state.x = x
    state.u_history.append(u)
    state.t += 1
    return x


def measure(cfg: PlantConfig, x, v) -> np.ndarray:
    return cfg.C @ np.asarray(x, dtype=float) + np.asarray(v, dtype=float)


def quantize(cfg: PlantConfig, y):
    """``(k bits, number of saturated components)``."""
    q = cfg.quantizer
    idx, sat = q.index(y)
    return q.to_bits(idx), int(sat.sum())


def dequantize(cfg: PlantConfig, bits) -> np.ndarray:
    q = cfg.quantizer
    return q.center(q.from_bits(bits))


def control_command(x_hat, K) -> np.ndarray:
    return np.asarray(K, dtype=float) @ np.asarray(x_hat, dtype=float)


def _slab(cfg: PlantConfig, y_hat):
    """Interval of ``C x`` per output consistent with a dequantized measurement."""
    q = cfg.quantizer
    idx, _ = q.index(y_hat)
    return q.interval(idx, cfg.delta)


def correct(cfg: PlantConfig, box: Hypercuboid, y_hat) -> Hypercuboid:
    """Intersect ``box`` with the set of states consistent with ``y_hat``.

    Rows of ``C`` with one nonzero entry are back-projected exactly; other
    rows tighten each coordinate once against the remaining box.
    Raises :class:`EmptyIntersection` when nothing is consistent.
    """
    return correct_interval(cfg, box, *_slab(cfg, y_hat))


def correct_interval(cfg: PlantConfig, box: Hypercuboid, lo_y, hi_y) -> Hypercuboid:
    """As :func:`correct`, given the interval ``[lo_y, hi_y]`` of ``C x`` directly."""
    lo, hi = box.lo.copy(), box.hi.copy()
    for r, row in enumerate(cfg.C):
        nz = np.nonzero(row)[0]
        for j in nz:
            # C_rj x_j = y_r - sum_{k != j} C_rk x_k
            others = [k for k in nz if k != j]
            rest_lo = sum(min(row[k] * lo[k], row[k] * hi[k]) for k in others)
            rest_hi = sum(max(row[k] * lo[k], row[k] * hi[k]) for k in others)
            with np.errstate(invalid="ignore"):
                a = (lo_y[r] - rest_hi) / row[j]
                b = (hi_y[r] - rest_lo) / row[j]
            a, b = min(a, b), max(a, b)
            if math.isnan(a) or math.isnan(b):
                continue
            lo[j] = max(lo[j], a)
            hi[j] = min(hi[j], b)
            if lo[j] > hi[j]:
                raise EmptyIntersection("measurement slab misses the predicted box")
    return Hypercuboid(lo, hi)


def fuse_sensors(cfg: PlantConfig, box: Hypercuboid, y_hats):
    """Fold every sensor's measurement into ``box``; returns ``(box, skipped)``.

    With ``fusion == "average"`` the per-sensor measurement intervals are
    averaged endpoint by endpoint and applied once; the mean interval still
    contains ``C x`` when each sensor's does.
    """
    y_hats = np.atleast_2d(np.asarray(y_hats, dtype=float))
    slabs = [_slab(cfg, y) for y in y_hats]
    if cfg.fusion == "average":
        slabs = [(np.mean([s[0] for s in slabs], axis=0), np.mean([s[1] for s in slabs], axis=0))]
    skipped = 0
    for lo_y, hi_y in slabs:
        try:
            box = correct_interval(cfg, box, lo_y, hi_y)
        except EmptyIntersection:
            skipped += 1
    return box, skipped


def _initial_box(cfg: PlantConfig) -> Hypercuboid:
    return Hypercuboid.centered(np.zeros(cfg.n_x), cfg.x0_bound)


def filter_chain(cfg: PlantConfig, y_hats, u_history):
    """Run the interval observer over steps ``1..t`` from scratch.

    ``y_hats`` has shape ``(t, n_y)`` or ``(n_sensors, t, n_y)``; ``u_history``
    holds ``u_1 .. u_{t-1}``. Returns ``(x_hat_t, box_t, skipped)``.
    """
    obs = IntervalObserver(cfg)
    return obs.update(y_hats, u_history)


class IntervalObserver:
    """Filter chain that re-runs only from the first measurement that changed.

    The result is identical to :func:`filter_chain` on the same inputs; the
    chain up to an unchanged prefix is simply reused.
    """

    def __init__(self, cfg: PlantConfig):
        self.cfg = cfg
        self._y = None
        self._u = []
        self._boxes = []
        self._skips = []

    def update(self, y_hats, u_history):
        cfg = self.cfg
        y = np.asarray(y_hats, dtype=float)
        if y.ndim == 2:
            y = y[None]
        t = y.shape[1]
        u = [np.asarray(v, dtype=float).reshape(cfg.B.shape[1]) for v in u_history]
        if len(u) < t - 1:
            raise PlantError(f"need {t - 1} past commands, got {len(u)}")
        start = 0
        if self._y is not None and self._y.shape[0] == y.shape[0]:
            common = min(self._y.shape[1], t, len(self._boxes))
            diff = np.nonzero((self._y[:, :common] != y[:, :common]).any(axis=(0, 2)))[0]
            start = int(diff[0]) if diff.size else common
            n_u = min(len(self._u), start)
            for tau in range(1, n_u + 1):
                if not np.array_equal(self._u[tau - 1], u[tau - 1]):
                    start = tau
                    break
        boxes = self._boxes[:start]
        skips = self._skips[:start]
        for tau in range(start, t):
            if tau == 0:
                box = _initial_box(cfg)
            else:
                box = boxes[-1].predict(cfg.A, cfg.B @ u[tau - 1], cfg.omega)
            box, sk = fuse_sensors(cfg, box, y[:, tau])
            boxes.append(box)
            skips.append(sk)
        self._y = y.copy()
        self._u = u[: t - 1]
        self._boxes = boxes
        self._skips = skips
        return boxes[-1].center, boxes[-1], int(sum(skips))

    @property
    def boxes(self) -> list:
        return list(self._boxes)
