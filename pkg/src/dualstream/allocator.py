"""Stream-level time-domain bitrate allocation.

When a keyframe activates the second stream, the allocator models the rate of
three hypothetical streams over the dual-stream unit of duration ``T``: the
original single stream (keyframe plus deltas), the slowed-down reference
stream 1, and the playback stream 2 whose keyframe is replaced by a delta.
It then traverses the discrete grid of (reference fps ``f'``, duration ``T``,
delta quantizer ``q'``) for the feasible triple minimizing the clarity gap
versus the single stream at the same budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .encoder import RQModel, SadCubicModel, q_to_index, rq_invert, rq_required_bits, satd_from_sad
from .errors import DomainError
from .media import gap_sad_estimate


@dataclass
class AllocatorInputs:
    """Everything a single allocation decision needs, as plain values."""

    b: float                    # overall target bitrate, bps
    f: float                    # capture fps
    f_k: float                  # average keyframe rate, Hz
    R1: float                   # keyframe size (or bits encoded so far), bits
    q1: float                   # keyframe quantizer (stream-2 first frame matches it)
    c_bar: float                # predicted delta complexity at native fps
    c1_dprime: float            # predicted complexity of the replacement delta
    sad_base: float             # recent gap-1 SAD level
    sad_ceiling: float          # scene-change saturation level
    gap_rho: float              # SAD growth exponent over the reference gap
    rq: RQModel
    sad_cubic: SadCubicModel
    quant_table: np.ndarray
    eta: float = 5.0


@dataclass
class Allocation:
    b_prime: float
    b_dprime: float
    f_prime: int
    T: float
    q_bar_prime: float
    q_index: int
    delta_q: float              # continuous quantizer units
    delta_q_index: float        # ladder-index (QP-like) units
    feasible: bool
    scaled: bool
    q_single: float             # the Eq.-4 style single-stream quantizer at T
    violation: float = 0.0      # bps over budget when infeasible


def model_single_stream_rate(f: float, T: float, q_bar: float, c_bar: float,
                             R1: float, rq: RQModel) -> float:
    """Rate of the original stream over a unit: keyframe amortized over T plus
    the remaining ``T*f - 1`` delta frames."""
    if T * f < 1.0 - 1e-9:
        raise DomainError("unit must contain the keyframe: T*f >= 1")
    if R1 <= 0:
        raise DomainError("R1 must be positive")
    deltas = max(0.0, T * f - 1.0)
    return R1 / T + (deltas / T) * rq_required_bits(q_bar, c_bar, rq)


def inflated_complexity(inputs: AllocatorInputs, f_prime: float) -> float:
    """Delta complexity on the slowed stream: the wider reference gap raises
    the inter-frame difference, mapped through the fitted cubic."""
    gap = inputs.f / f_prime
    sad = gap_sad_estimate(inputs.sad_base, gap, inputs.gap_rho, inputs.sad_ceiling)
    return satd_from_sad(sad, inputs.sad_cubic)


def model_stream1_rate(f_prime: float, T: float, q_bar_prime: float,
                       inputs: AllocatorInputs) -> float:
    """Reference stream: keyframe plus sparse, complexity-inflated deltas."""
    if T * f_prime < 1.0 - 1e-9:
        raise DomainError("unit must contain the keyframe: T*f' >= 1")
    deltas = max(0.0, T * f_prime - 1.0)
    c_prime = inflated_complexity(inputs, f_prime)
    return inputs.R1 / T + (deltas / T) * rq_required_bits(q_bar_prime, c_prime, inputs.rq)


def model_stream2_rate(f: float, T: float, q_bar_prime: float, q1: float,
                       c1_dprime: float, c_bar: float, rq: RQModel) -> float:
    """Playback stream: the keyframe slot is a delta at the keyframe's
    clarity, followed by full-rate deltas."""
    if T * f < 1.0 - 1e-9:
        raise DomainError("unit must contain the first frame: T*f >= 1")
    deltas = max(0.0, T * f - 1.0)
    first = rq_required_bits(q1, c1_dprime, rq)
    return first / T + (deltas / T) * rq_required_bits(q_bar_prime, c_bar, rq)


def single_stream_quantizer(b: float, f: float, T: float, R1: float,
                            c_bar: float, rq: RQModel, table: np.ndarray) -> float:
    """Quantizer the single stream would need over the unit, clamped to the
    ladder range. A unit that cannot even carry the keyframe pins to the
    coarsest step; a unit with no delta slots pins to the finest."""
    deltas = T * f - 1.0
    if deltas <= 1e-12:
        return float(table[0])
    bits_per_delta = (b - R1 / T) * T / deltas
    if bits_per_delta <= 0.0:
        return float(table[-1])
    q = rq_invert(bits_per_delta, c_bar, rq)
    return float(min(max(q, table[0]), table[-1]))


def _better(candidate: tuple, incumbent: tuple | None) -> bool:
    # lexicographic: delta_q, then finer q', then larger f', then smaller T
    return incumbent is None or candidate < incumbent


def allocate(inputs: AllocatorInputs, elapsed_s: float = 0.0) -> Allocation:
    """Exhaustive traversal of the (f', T, q') grid.

    ``elapsed_s`` restricts the duration domain to points beyond the time
    already spent in the unit (used by re-allocation). Ties resolve toward
    the finer quantizer, then the larger f', then the smaller T; the result
    is independent of traversal order.
    """
    if inputs.b <= 0 or inputs.R1 <= 0 or inputs.f_k <= 0:
        raise DomainError("b, R1 and f_k must be positive")
    table = inputs.quant_table
    f_int = int(round(inputs.f))
    t_max = 1.0 / (inputs.eta * inputs.f_k)

    best_key: tuple | None = None
    best: dict | None = None
    fallback_key: tuple | None = None
    fallback: dict | None = None

    q_index = np.arange(len(table))
    rate_delta_full = np.array([rq_required_bits(q, inputs.c_bar, inputs.rq) for q in table])
    first2 = rq_required_bits(inputs.q1, inputs.c1_dprime, inputs.rq)

    for f_prime in range(1, f_int + 1):
        m_max = int(math.floor(t_max * f_prime + 1e-9))
        m_min = int(math.floor(elapsed_s * f_prime + 1e-9)) + 1
        if m_max < m_min:
            continue
        c_prime = inflated_complexity(inputs, f_prime)
        rate_delta_s1 = np.array([rq_required_bits(q, c_prime, inputs.rq) for q in table])
        for m in range(m_min, m_max + 1):
            T = m / f_prime
            if T * inputs.f < 1.0 - 1e-9:
                continue
            q_single = single_stream_quantizer(inputs.b, inputs.f, T, inputs.R1,
                                               inputs.c_bar, inputs.rq, table)
            n1 = max(0.0, T * f_prime - 1.0)
            n2 = max(0.0, T * inputs.f - 1.0)
            b1 = inputs.R1 / T + (n1 / T) * rate_delta_s1
            b2 = first2 / T + (n2 / T) * rate_delta_full
            total = b1 + b2
            feasible = total <= inputs.b
            delta_q = table - q_single
            if np.any(feasible):
                idx = np.flatnonzero(feasible)
                # within this (f', T) block the tie-break reduces to the
                # smallest q', which is the first feasible ladder entry
                j = idx[0]
                key = (float(delta_q[j]), float(table[j]), -f_prime, T)
                if _better(key, best_key):
                    best_key = key
                    best = {"f_prime": f_prime, "T": T, "j": int(j),
                            "b1": float(b1[j]), "b2": float(b2[j]),
                            "q_single": q_single}
            else:
                j = int(np.argmin(total))
                key = (float(total[j] - inputs.b), float(delta_q[j]), float(table[j]), -f_prime, T)
                if _better(key, fallback_key):
                    fallback_key = key
                    fallback = {"f_prime": f_prime, "T": T, "j": int(j),
                                "b1": float(b1[j]), "b2": float(b2[j]),
                                "q_single": q_single,
                                "violation": float(total[j] - inputs.b)}

    chosen = best if best is not None else fallback
    if chosen is None:
        raise DomainError("empty duration grid: elapsed beyond 1/(eta*f_k)")
    j = chosen["j"]
    q_prime = float(table[j])
    q_single = chosen["q_single"]
    b1, b2 = chosen["b1"], chosen["b2"]
    feasible = best is not None
    scaled = False
    if feasible and (b1 + b2) < inputs.b:
        scale = inputs.b / (b1 + b2)
        b1 *= scale
        b2 *= scale
        scaled = True
    return Allocation(
        b_prime=b1, b_dprime=b2, f_prime=chosen["f_prime"], T=chosen["T"],
        q_bar_prime=q_prime, q_index=j,
        delta_q=q_prime - q_single,
        delta_q_index=float(j) - q_to_index(q_single, table),
        feasible=feasible, scaled=scaled, q_single=q_single,
        violation=0.0 if feasible else chosen["violation"])


def reallocate(inputs: AllocatorInputs, new_b: float, encoded_bits_so_far: float,
               elapsed_s: float) -> Allocation:
    """Re-run the traversal mid-unit: the keyframe term becomes the bits
    already committed to stream 1 and the duration grid shrinks to what is
    still reachable."""
    if encoded_bits_so_far <= 0:
        raise DomainError("encoded_bits_so_far must be positive")
    updated = AllocatorInputs(
        b=new_b, f=inputs.f, f_k=inputs.f_k, R1=encoded_bits_so_far,
        q1=inputs.q1, c_bar=inputs.c_bar, c1_dprime=inputs.c1_dprime,
        sad_base=inputs.sad_base, sad_ceiling=inputs.sad_ceiling,
        gap_rho=inputs.gap_rho, rq=inputs.rq, sad_cubic=inputs.sad_cubic,
        quant_table=inputs.quant_table, eta=inputs.eta)
    return allocate(updated, elapsed_s=elapsed_s)


def candidate_count(f: float, f_k: float, eta: float = 5.0, q_steps: int = 52) -> int:
    """Size of the traversal grid; stays within q_steps * f * (f / (eta*f_k))."""
    t_max = 1.0 / (eta * f_k)
    total = 0
    for f_prime in range(1, int(round(f)) + 1):
        total += int(math.floor(t_max * f_prime + 1e-9))
    return q_steps * total
