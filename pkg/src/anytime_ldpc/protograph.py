"""Protograph LDPC convolutional codes: specification, time expansion, lifting.

A code is described by integer base blocks ``P_0, P_1, ...`` of shape
``(n0 - k0, n0)``. The first ``k0`` columns of every block are systematic;
``P_0`` ends in an identity block and every later block ends in zeros, so the
parity bits of step ``t`` are determined causally by everything sent so far.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import gf2

TAIL_RULES = ("repeat", "zero")


class ProtographError(ValueError):
    pass


class DimensionMismatch(ProtographError):
    pass


class NotSystematicForm(ProtographError):
    pass


class RankDeficient(ProtographError):
    pass


class HorizonZero(ProtographError):
    pass


@dataclass(frozen=True, eq=False)
class ProtographSpec:
    """Base matrices of a protograph convolutional code.

    ``blocks`` lists ``P_0 .. P_m`` explicitly. Beyond ``m`` the ``tail`` rule
    applies: ``"repeat"`` reuses the last listed block forever (unbounded
    memory), ``"zero"`` ends the memory.
    """

    n0: int
    k0: int
    blocks: tuple
    tail: str = "repeat"

    def __post_init__(self):
        blocks = tuple(np.array(b, dtype=np.int64, ndmin=2) for b in self.blocks)
        for b in blocks:
            b.setflags(write=False)
        object.__setattr__(self, "blocks", blocks)
        if self.tail not in TAIL_RULES:
            raise ValueError(f"unknown tail rule {self.tail!r}; expected one of {TAIL_RULES}")

    def __eq__(self, other):
        if not isinstance(other, ProtographSpec):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash(json.dumps(self.to_dict()))

    @property
    def kbar0(self) -> int:
        return self.n0 - self.k0

    @property
    def rate(self) -> float:
        return self.k0 / self.n0

    def block(self, tau: int) -> np.ndarray:
        if tau < 0:
            raise ValueError("negative delay")
        if tau < len(self.blocks):
            return self.blocks[tau]
        if self.tail == "repeat":
            return self.blocks[-1]
        return np.zeros((self.kbar0, self.n0), dtype=np.int64)

    def coupling_blocks(self):
        """Distinct systematic parts ``P_{tau,p}`` for tau >= 1, including the tail."""
        return [b[:, : self.k0] for b in self.blocks[1:]]

    @classmethod
    def paper_code(cls) -> "ProtographSpec":
        """Rate-1/2 code with ``P_0 = [1 1]`` and ``P_tau = [1 0]`` for every tau >= 1."""
        return cls(n0=2, k0=1, blocks=([[1, 1]], [[1, 0]]), tail="repeat")

    def to_dict(self) -> dict:
        return {
            "n0": self.n0,
            "k0": self.k0,
            "blocks": [b.tolist() for b in self.blocks],
            "tail": self.tail,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProtographSpec":
        return cls(n0=int(d["n0"]), k0=int(d["k0"]), blocks=tuple(d["blocks"]), tail=d.get("tail", "repeat"))


@dataclass(frozen=True)
class ValidationReport:
    kbar0: int
    rate: float
    p0_rank: int
    coupled: bool
    warnings: tuple = ()


def validate_protograph(spec: ProtographSpec) -> ValidationReport:
    """Check block shapes, the ``[P_p | I]`` / ``[P_p | 0]`` layout and the GF(2) rank of ``P_0``."""
    if not spec.blocks:
        raise DimensionMismatch("at least one block (P_0) is required")
    if not 0 < spec.k0 < spec.n0:
        raise DimensionMismatch(f"need 0 < k0 < n0, got k0={spec.k0}, n0={spec.n0}")
    kbar0 = spec.kbar0
    for tau, b in enumerate(spec.blocks):
        if b.shape != (kbar0, spec.n0):
            raise DimensionMismatch(f"P_{tau} has shape {b.shape}, expected {(kbar0, spec.n0)}")
        if (b < 0).any():
            raise DimensionMismatch(f"P_{tau} has negative entries")
    if spec.tail == "repeat" and len(spec.blocks) == 1:
        raise NotSystematicForm("a repeating tail needs an explicit P_1; P_0 cannot repeat")
    tail0 = spec.blocks[0][:, spec.k0 :]
    if not np.array_equal(tail0, np.eye(kbar0, dtype=np.int64)):
        raise NotSystematicForm("rightmost kbar0 x kbar0 block of P_0 must be the identity")
    for tau, b in enumerate(spec.blocks[1:], start=1):
        if b[:, spec.k0 :].any():
            raise NotSystematicForm(f"rightmost kbar0 x kbar0 block of P_{tau} must be zero")
    p0_rank = gf2.rank(spec.blocks[0] % 2)
    if p0_rank < kbar0:
        raise RankDeficient(f"P_0 has GF(2) rank {p0_rank} < {kbar0}")

    coupled = any(p.any() for p in spec.coupling_blocks())
    warnings = []
    if not coupled:
        warnings.append("no coupling: systematic degrees do not grow with delay")
    if not spec.blocks[0][:, : spec.k0].any() and not coupled:
        warnings.append("systematic columns are never checked")
    return ValidationReport(kbar0=kbar0, rate=spec.rate, p0_rank=p0_rank, coupled=coupled, warnings=tuple(warnings))


@dataclass(frozen=True)
class TimeExpandedProtograph:
    """Block-Toeplitz lower-triangular protograph ``P_[1:t]``.

    Indices are 0-based: VN ``j`` belongs to step ``j // n0``; CN ``i`` to step
    ``i // kbar0``. Neighbor lists hold ``(index, multiplicity)`` pairs.
    """

    spec: ProtographSpec
    t: int
    adjacency: np.ndarray
    cn_neighbors: tuple = field(repr=False)
    vn_neighbors: tuple = field(repr=False)

    @property
    def n_cn(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_vn(self) -> int:
        return self.adjacency.shape[1]

    def vn_degree(self, j: int) -> int:
        return int(self.adjacency[:, j].sum())

    def systematic_vns(self, step: int) -> np.ndarray:
        """VN indices of the systematic bits sent at 0-based ``step``."""
        return step * self.spec.n0 + np.arange(self.spec.k0)

    def edges(self):
        """Edge list with parallel edges repeated, as arrays ``(cn, vn)``."""
        rows, cols = np.nonzero(self.adjacency)
        mult = self.adjacency[rows, cols]
        return np.repeat(rows, mult), np.repeat(cols, mult)


def expand(spec: ProtographSpec, t: int) -> TimeExpandedProtograph:
    if t < 1:
        raise HorizonZero("horizon must be at least 1")
    kb, n0 = spec.kbar0, spec.n0
    adj = np.zeros((kb * t, n0 * t), dtype=np.int64)
    for i in range(t):
        for j in range(i + 1):
            adj[i * kb : (i + 1) * kb, j * n0 : (j + 1) * n0] = spec.block(i - j)
    adj.setflags(write=False)
    cn = tuple(tuple((int(j), int(adj[i, j])) for j in np.nonzero(adj[i])[0]) for i in range(adj.shape[0]))
    vn = tuple(tuple((int(i), int(adj[i, j])) for i in np.nonzero(adj[:, j])[0]) for j in range(adj.shape[1]))
    return TimeExpandedProtograph(spec=spec, t=t, adjacency=adj, cn_neighbors=cn, vn_neighbors=vn)


@dataclass(frozen=True)
class DegreeProfile:
    delays: np.ndarray
    min_degree: np.ndarray
    gamma: float
    r_squared: float

    @property
    def linear(self) -> bool:
        return self.gamma > 0 and self.r_squared >= 0.99


def _tail_fit(x, y):
    """Least-squares slope and R^2 of y against x."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 if ss_tot == 0 else 1.0 - float((resid**2).sum()) / ss_tot
    return float(slope), r2


def systematic_degree_profile(proto: TimeExpandedProtograph) -> DegreeProfile:
    """Minimum systematic VN degree per delay and its linear growth rate gamma.

    Delay ``d`` (1-based) refers to the bits sent at step ``t - d``; gamma is the
    least-squares slope over delays in ``[t/2, t-1]``.
    """
    t = proto.t
    if t < 2:
        raise ValueError("degree profile needs horizon t >= 2")
    col_deg = proto.adjacency.sum(axis=0)
    delays = np.arange(1, t + 1)
    min_deg = np.array([col_deg[proto.systematic_vns(t - d)].min() for d in delays])
    lo = max(1, t // 2)
    sel = (delays >= lo) & (delays <= t - 1)
    if sel.sum() < 2:
        sel = delays >= 1
    gamma, r2 = _tail_fit(delays[sel], min_deg[sel])
    if abs(gamma) < 1e-12:
        gamma = 0.0
    return DegreeProfile(delays=delays, min_degree=min_deg, gamma=gamma, r_squared=r2)


@dataclass(frozen=True)
class LiftedCode:
    """Binary parity-check matrix ``Z_[1:t]`` lifted from a protograph.

    ``blocks[tau]`` is the ``(n-k) x n`` lift of ``P_tau``; the full matrix is
    the block-Toeplitz arrangement of those blocks.
    """

    spec: ProtographSpec
    r: int
    t: int
    seed: int
    blocks: tuple = field(repr=False)
    matrix: sp.csr_matrix = field(repr=False)

    @property
    def n(self) -> int:
        return self.r * self.spec.n0

    @property
    def k(self) -> int:
        return self.r * self.spec.k0

    @property
    def m(self) -> int:
        return self.n - self.k

    @property
    def rate(self) -> float:
        return self.spec.rate

    @property
    def systematic_mask(self) -> np.ndarray:
        """Per-column flag over all ``n*t`` columns: True where the bit is systematic."""
        step = np.zeros(self.n, dtype=bool)
        step[: self.k] = True
        return np.tile(step, self.t)

    def truncate(self, t: int) -> sp.csr_matrix:
        return self.matrix[: t * self.m, : t * self.n]


def _lift_entry(b, r, rng):
    out = np.zeros((r, r), dtype=np.uint8)
    for _ in range(int(b)):
        perm = rng.permutation(r)
        out[np.arange(r), perm] ^= 1
    return out


def lift_block(block, r, rng):
    rows, cols = block.shape
    out = np.zeros((rows * r, cols * r), dtype=np.uint8)
    for i in range(rows):
        for j in range(cols):
            if block[i, j]:
                out[i * r : (i + 1) * r, j * r : (j + 1) * r] = _lift_entry(block[i, j], r, rng)
    return out


def lift(proto: TimeExpandedProtograph, r: int, seed: int) -> LiftedCode:
    """Lift every ``P_tau`` with independent random permutations.

    Each block draws from its own stream keyed by ``(seed, tau)``, so the lift
    at horizon ``t`` is a prefix of the lift at any longer horizon.
    """
    if r < 1:
        raise ValueError("lifting order must be >= 1")
    spec, t = proto.spec, proto.t
    blocks = []
    for tau in range(t):
        rng = np.random.default_rng([seed, tau])
        z = lift_block(spec.block(tau), r, rng)
        z.setflags(write=False)
        blocks.append(z)
    m, n = spec.kbar0 * r, spec.n0 * r
    grid = [[sp.csr_matrix(blocks[i - j]) if j <= i else None for j in range(t)] for i in range(t)]
    if t == 1:
        mat = sp.csr_matrix(blocks[0])
    else:
        mat = sp.bmat(grid, format="csr", dtype=np.uint8)
    mat.resize((m * t, n * t))
    mat.eliminate_zeros()
    mat.sort_indices()
    return LiftedCode(spec=spec, r=r, t=t, seed=seed, blocks=tuple(blocks), matrix=mat)


def build_code(spec: ProtographSpec, r: int, t: int, seed: int) -> LiftedCode:
    validate_protograph(spec)
    return lift(expand(spec, t), r, seed)


def load_spec(path) -> tuple[ProtographSpec, dict]:
    """Read a protograph spec file (JSON); returns the spec and any extra keys (r, seed, ...)."""
    d = json.loads(Path(path).read_text())
    extra = {k: v for k, v in d.items() if k not in ("n0", "k0", "blocks", "tail")}
    return ProtographSpec.from_dict(d), extra


def save_spec(spec: ProtographSpec, path, **extra) -> None:
    Path(path).write_text(json.dumps({**spec.to_dict(), **extra}, indent=2) + "\n")


def export_triplets(code: LiftedCode, path) -> None:
    """Write ``Z`` as text: header ``rows cols nnz`` then one ``row col`` pair per line."""
    coo = code.matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        fh.write(f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for i in order:
            fh.write(f"{coo.row[i]} {coo.col[i]}\n")


def read_triplets(path) -> sp.csr_matrix:
    with open(path) as fh:
        rows, cols, nnz = map(int, fh.readline().split())
        data = np.loadtxt(fh, dtype=np.int64, ndmin=2) if nnz else np.zeros((0, 2), dtype=np.int64)
    if data.shape[0] != nnz:
        raise ValueError(f"expected {nnz} entries, found {data.shape[0]}")
    return sp.csr_matrix((np.ones(nnz, dtype=np.uint8), (data[:, 0], data[:, 1])), shape=(rows, cols))
