"""Causal systematic encoding and streaming belief-propagation decoding."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from . import gf2
from .protograph import LiftedCode

LLR_MAX = 30.0


class CodecError(ValueError):
    pass


class TailNotInvertible(CodecError):
    pass


class LengthMismatch(CodecError):
    pass


class HorizonExceeded(CodecError):
    pass


class Encoder:
    """Systematic encoder for ``Z_[1:t] c = 0``.

    Each step emits ``[q_t | p_t]`` where the parity ``p_t`` cancels the
    syndrome of block row ``t`` left by ``q_t`` and all earlier codeword blocks.
    """

    def __init__(self, code: LiftedCode):
        self.code = code
        k = code.k
        z0 = code.blocks[0]
        self._z0_sys = z0[:, :k].astype(np.int64)
        try:
            self._tail_inv = gf2.inverse(z0[:, k:]).astype(np.int64)
        except np.linalg.LinAlgError as exc:
            raise TailNotInvertible("parity part of Z_0 is singular over GF(2)") from exc
        self._blocks = [b.astype(np.int64) for b in code.blocks]
        self._history = []

    @property
    def t(self) -> int:
        return len(self._history)

    def step(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=np.int64).ravel()
        if q.size != self.code.k:
            raise LengthMismatch(f"expected {self.code.k} bits, got {q.size}")
        t = self.t
        if t >= self.code.t:
            raise HorizonExceeded(f"code was lifted for {self.code.t} steps")
        s = self._z0_sys @ q
        for tau in range(1, t + 1):
            s += self._blocks[tau] @ self._history[t - tau]
        p = (self._tail_inv @ (s & 1)) & 1
        c = np.concatenate([q & 1, p]).astype(np.uint8)
        self._history.append(c.astype(np.int64))
        return c

    def codeword(self) -> np.ndarray:
        if not self._history:
            return np.zeros(0, dtype=np.uint8)
        return np.concatenate(self._history).astype(np.uint8)


def syndrome(code: LiftedCode, codeword) -> np.ndarray:
    """``Z_[1:t] c`` over GF(2) for a codeword of ``t`` whole blocks."""
    c = np.asarray(codeword, dtype=np.int64)
    t = c.size // code.n
    return (code.truncate(t).astype(np.int64) @ c) & 1


_T_SAT = (1.0 - math.exp(-LLR_MAX)) / (1.0 + math.exp(-LLR_MAX))


@numba.njit(cache=True, inline="always")
def _tanh_half(x, llr_max, t_sat):
    # tanh(x/2) = (1 - e^-|x|) / (1 + e^-|x|), saturated values share one constant
    a = abs(x)
    if a >= llr_max:
        return t_sat if x >= 0.0 else -t_sat
    e = math.exp(-a)
    v = (1.0 - e) / (1.0 + e)
    return v if x >= 0.0 else -v


@numba.njit(cache=True, inline="always")
def _atanh2(mag, llr_max, t_sat):
    # 2 atanh(mag) for mag >= 0, clamped to llr_max
    if mag >= t_sat:
        return llr_max
    return min(math.log((1.0 + mag) / (1.0 - mag)), llr_max)


@numba.njit(cache=True)
def _satisfied(row_ptr, cols, n_rows, total):
    for i in range(n_rows):
        parity = 0
        for e in range(row_ptr[i], row_ptr[i + 1]):
            if total[cols[e]] < 0.0:
                parity ^= 1
        if parity:
            return False
    return True


@numba.njit(cache=True)
def _flood(row_ptr, cols, n_rows, n_cols, llr, c2v, total, th, n_iter, llr_max, t_sat, early_stop):
    """Run up to ``n_iter`` flooding iterations on the leading ``n_rows`` checks.

    ``total`` receives the posterior LLRs of the first ``n_cols`` VNs. With
    ``early_stop`` the loop ends as soon as the hard decisions satisfy every
    check. Returns the number of iterations run.
    """
    n_edges = row_ptr[n_rows]
    done = 0
    for _ in range(n_iter):
        for v in range(n_cols):
            total[v] = llr[v]
        for e in range(n_edges):
            total[cols[e]] += c2v[e]
        if early_stop and _satisfied(row_ptr, cols, n_rows, total):
            return done
        done += 1
        for i in range(n_rows):
            a = row_ptr[i]
            b = row_ptr[i + 1]
            prod = 1.0
            neg = False
            nzero = 0
            zero_at = -1
            for e in range(a, b):
                x = total[cols[e]] - c2v[e]
                if x > llr_max:
                    x = llr_max
                elif x < -llr_max:
                    x = -llr_max
                v = _tanh_half(x, llr_max, t_sat)
                th[e] = v
                if v == 0.0:
                    nzero += 1
                    zero_at = e
                else:
                    if v < 0.0:
                        neg = not neg
                        prod *= -v
                    else:
                        prod *= v
            if nzero >= 2:
                for e in range(a, b):
                    c2v[e] = 0.0
                continue
            if nzero == 1:
                for e in range(a, b):
                    c2v[e] = 0.0
                out = _atanh2(prod, llr_max, t_sat)
                c2v[zero_at] = -out if neg else out
                continue
            sat_out = -1.0
            for e in range(a, b):
                v = th[e]
                s = neg
                if v < 0.0:
                    s = not s
                    v = -v
                if v == t_sat:
                    if sat_out < 0.0:
                        sat_out = _atanh2(prod / t_sat, llr_max, t_sat)
                    out = sat_out
                else:
                    out = _atanh2(prod / v, llr_max, t_sat)
                c2v[e] = -out if s else out
    for v in range(n_cols):
        total[v] = llr[v]
    for e in range(n_edges):
        total[cols[e]] += c2v[e]
    return done


@dataclass
class DecodeOutput:
    """Hard estimates ``q_hat_{tau|t}`` for tau = 1..t, one row per step."""

    blocks: np.ndarray
    correct: np.ndarray | None = None
    oldest_error: int = 0

    @property
    def t(self) -> int:
        return self.blocks.shape[0]


def oldest_error_delay(blocks, truth) -> int:
    """Largest delay ``d`` whose block ``t-d+1`` is wrong while all older blocks are right.

    Returns 0 when every block is correct.
    """
    if isinstance(blocks, DecodeOutput):
        blocks = blocks.blocks
    blocks = np.asarray(blocks)
    truth = np.asarray(truth)
    if blocks.shape[0] != truth.shape[0]:
        raise LengthMismatch(f"{blocks.shape[0]} estimated blocks vs {truth.shape[0]} true blocks")
    wrong = np.nonzero((blocks != truth).reshape(blocks.shape[0], -1).any(axis=1))[0]
    if wrong.size == 0:
        return 0
    return int(blocks.shape[0] - wrong[0])


class Decoder:
    """Streaming sum-product decoder over the growing graph of ``Z_[1:t]``.

    Messages persist across steps, so each call to :meth:`iterate` continues
    from the previous fixed point (warm start).
    """

    def __init__(self, code: LiftedCode, iterations: int = 50, llr_max: float = LLR_MAX, early_stop: bool = False):
        self.code = code
        self.iterations = iterations
        self.early_stop = bool(early_stop)
        self.last_iterations = 0
        self.llr_max = float(llr_max)
        self.t_sat = (1.0 - math.exp(-self.llr_max)) / (1.0 + math.exp(-self.llr_max))
        mat = code.matrix
        self._row_ptr = mat.indptr.astype(np.int64)
        self._cols = mat.indices.astype(np.int64)
        n_edges = self._cols.size
        self._c2v = np.zeros(n_edges, dtype=np.float64)
        self._th = np.zeros(n_edges, dtype=np.float64)
        self._llr = np.zeros(code.n * code.t, dtype=np.float64)
        self._total = np.zeros(code.n * code.t, dtype=np.float64)
        self.t = 0

    @property
    def n_checks(self) -> int:
        return self.t * self.code.m

    @property
    def n_vars(self) -> int:
        return self.t * self.code.n

    @property
    def n_edges(self) -> int:
        return int(self._row_ptr[self.n_checks])

    @property
    def channel_llr(self) -> np.ndarray:
        return self._llr[: self.n_vars]

    @property
    def posterior(self) -> np.ndarray:
        return self._total[: self.n_vars]

    @property
    def messages(self) -> np.ndarray:
        """Check-to-variable LLRs of the current graph, in CSR edge order."""
        return self._c2v[: self.n_edges]

    def push(self, llr_t) -> "Decoder":
        llr_t = np.asarray(llr_t, dtype=np.float64).ravel()
        n = self.code.n
        if llr_t.size != n:
            raise LengthMismatch(f"expected {n} LLRs, got {llr_t.size}")
        if self.t >= self.code.t:
            raise HorizonExceeded(f"code was lifted for {self.code.t} steps")
        lo = self.t * n
        self._llr[lo : lo + n] = np.clip(llr_t, -self.llr_max, self.llr_max)
        self._total[lo : lo + n] = self._llr[lo : lo + n]
        e0 = self.n_edges
        self.t += 1
        self._c2v[e0 : self.n_edges] = 0.0
        return self

    def iterate(self, iterations: int | None = None, truth=None) -> DecodeOutput:
        if self.t == 0:
            raise CodecError("push at least one block before iterating")
        n_iter = self.iterations if iterations is None else int(iterations)
        self.last_iterations = _flood(
            self._row_ptr,
            self._cols,
            self.n_checks,
            self.n_vars,
            self._llr,
            self._c2v,
            self._total,
            self._th,
            n_iter,
            self.llr_max,
            self.t_sat,
            self.early_stop,
        )
        return self.output(truth)

    def hard_decisions(self) -> np.ndarray:
        # LLR == 0 decides 0
        return (self.posterior < 0).astype(np.uint8)

    def output(self, truth=None) -> DecodeOutput:
        bits = self.hard_decisions().reshape(self.t, self.code.n)[:, : self.code.k]
        if truth is None:
            return DecodeOutput(blocks=bits)
        truth = np.asarray(truth).reshape(self.t, self.code.k)
        correct = (bits == truth).all(axis=1)
        return DecodeOutput(blocks=bits, correct=correct, oldest_error=oldest_error_delay(bits, truth))
