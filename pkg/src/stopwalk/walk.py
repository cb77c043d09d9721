"""Random walks stopped at a linear boundary, and their ladder structure.

The walk is S_n = (X_n, W_n) with iid increments from an IncrementModel;
the stopping time is the first n with X_n > a. Everything here is exact
simulation: blocks of increments are drawn at once, cumulative sums are
scanned for the first crossing, and unfinished walks carry their partial
sums into the next block. Within a fixed rng stream the draw sequence
depends only on (model, boundary, row count), which keeps results
reproducible across callers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidCount, MaxStepsExceeded, NoLadderEpoch
from .models import IncrementModel, as_rng

_ROW_CHUNK = 8192  # rows simulated at once; bounds block memory


@dataclass
class StoppedWalk:
    """A single walk run to its boundary crossing."""

    tau: int
    a: float
    x_tau: float
    w_tau: np.ndarray
    overshoot: float
    x_increments: np.ndarray | None = None
    w_increments: np.ndarray | None = None

    def __post_init__(self):
        if self.x_increments is not None:
            cums = np.cumsum(self.x_increments)
            # first-crossing property: the running maximum before tau stays at or below a
            if self.tau != self.x_increments.shape[0]:
                raise ValueError("tau does not match retained increments")
            if self.tau > 1 and cums[:-1].max() > self.a:
                raise ValueError("walk crossed the boundary before tau")
            if not cums[-1] > self.a:
                raise ValueError("walk did not cross the boundary at tau")


@dataclass
class LadderEpochs:
    """Strict ascending ladder epochs of one increment path."""

    times: np.ndarray  # 1-based epoch indices T_1 < T_2 < ...
    x_heights: np.ndarray  # X at each epoch, strictly increasing
    w_heights: np.ndarray | None  # W at each epoch, when w increments were given

    @property
    def gaps(self) -> np.ndarray:
        return np.diff(self.times, prepend=0)

    @property
    def x_steps(self) -> np.ndarray:
        return np.diff(self.x_heights, prepend=0.0)

    @property
    def w_steps(self) -> np.ndarray | None:
        if self.w_heights is None:
            return None
        return np.diff(self.w_heights, axis=0, prepend=np.zeros((1, self.w_heights.shape[1])))


@dataclass
class LadderSample:
    """Independent draws of the first ladder triple (T, X-tilde, W-tilde)."""

    t: np.ndarray
    x: np.ndarray
    w: np.ndarray
    fingerprint: str = ""

    @property
    def n(self) -> int:
        return self.t.size


def default_max_steps(model: IncrementModel, a: float) -> int:
    """Step budget heuristic: 50x the expected crossing time (plus slack)."""
    nu = model.drift()
    if nu is None or nu <= 0:
        return 100_000
    return int(math.ceil(50.0 * (a + 1.0) / nu))


def _block_len(model: IncrementModel, a: float) -> int:
    nu = model.drift()
    if nu is None or nu <= 0:
        return 64
    return int(min(8192, max(16, 1.3 * a / nu + 24)))


def batch_stopped_sums(
    model: IncrementModel,
    a: float,
    n: int,
    rng: np.random.Generator | int | None = None,
    *,
    max_steps: int | None = None,
    want_w_tau: bool = False,
    want_e_sums: bool = False,
) -> dict:
    """Simulate n stopped walks, returning per-walk summaries.

    Always returns tau (int64), x_tau, overshoot and a boolean `failed`
    mask for walks that exhausted max_steps (their other entries are
    meaningless). Optional extras:

    - want_w_tau: stopped covariate vectors, shape (n, m)
    - want_e_sums: running e = W[0]-increment reductions up to tau:
      sum_e, sum_e2, sum_e3 and sum_xe (sum of x-increment * e).

    Walks never fail silently; callers decide whether failures are fatal.
    """
    if a < 0:
        raise ValueError("boundary a must be nonnegative")
    if not (isinstance(n, (int, np.integer)) and n > 0):
        raise InvalidCount(f"need a positive integer count, got {n!r}")
    rng = as_rng(rng)
    if max_steps is None:
        max_steps = default_max_steps(model, a)
    m = model.dim_w
    out = {
        "tau": np.zeros(n, dtype=np.int64),
        "x_tau": np.zeros(n),
        "failed": np.zeros(n, dtype=bool),
    }
    if want_w_tau:
        out["w_tau"] = np.zeros((n, m))
    if want_e_sums:
        for key in ("sum_e", "sum_e2", "sum_e3", "sum_xe"):
            out[key] = np.zeros(n)
    L = _block_len(model, a)
    for lo in range(0, n, _ROW_CHUNK):
        hi = min(lo + _ROW_CHUNK, n)
        _run_rows(model, a, lo, hi, rng, max_steps, L, out, want_w_tau, want_e_sums)
    out["overshoot"] = out["x_tau"] - a
    return out


def _run_rows(model, a, lo, hi, rng, max_steps, L, out, want_w, want_sums):
    rows = hi - lo
    carry_x = np.zeros(rows)
    if want_w:
        carry_w = np.zeros((rows, model.dim_w))
    if want_sums:
        carry_s = np.zeros((4, rows))  # e, e^2, e^3, x*e
    active = np.arange(rows)
    steps = 0
    while active.size:
        take = min(L, max_steps - steps)
        if take <= 0:
            out["failed"][lo + active] = True
            break
        x, w = model.sample_block(rng, active.size, take)
        cumx = np.cumsum(x, axis=1)
        cumx += carry_x[active][:, None]
        crossed = cumx > a
        hit = crossed.any(axis=1)
        j = crossed.argmax(axis=1)
        done = active[hit]
        jj = j[hit]
        rows_hit = np.flatnonzero(hit)
        out["tau"][lo + done] = steps + jj + 1
        out["x_tau"][lo + done] = cumx[rows_hit, jj]
        if want_sums:
            e = w[..., 0]
            parts = np.stack([e, e * e, e**3, x * e])
            cums = np.cumsum(parts, axis=2)
            cums += carry_s[:, active][:, :, None]
            for k, key in enumerate(("sum_e", "sum_e2", "sum_e3", "sum_xe")):
                out[key][lo + done] = cums[k, rows_hit, jj]
            carry_s[:, active[~hit]] = cums[:, ~hit, -1]
        if want_w:
            cumw = np.cumsum(w, axis=1)
            cumw += carry_w[active][:, None, :]
            out["w_tau"][lo + done] = cumw[rows_hit, jj, :]
            carry_w[active[~hit]] = cumw[~hit, -1, :]
        carry_x[active[~hit]] = cumx[~hit, -1]
        steps += take
        active = active[~hit]


def run_to_boundary(
    model: IncrementModel,
    a: float,
    rng: np.random.Generator | int | None = None,
    max_steps: int | None = None,
    keep_increments: bool = True,
) -> StoppedWalk:
    """Run one walk until X exceeds a; raises MaxStepsExceeded on budget exhaustion."""
    if a < 0:
        raise ValueError("boundary a must be nonnegative")
    rng = as_rng(rng)
    if max_steps is None:
        max_steps = default_max_steps(model, a)
    L = _block_len(model, a)
    x_blocks, w_blocks = [], []
    carry = 0.0
    steps = 0
    while True:
        take = min(L, max_steps - steps)
        if take <= 0:
            raise MaxStepsExceeded(
                f"no crossing of a={a} within {max_steps} steps", 1, max_steps
            )
        x, w = model.sample_block(rng, 1, take)
        x, w = x[0], w[0]
        cums = carry + np.cumsum(x)
        hit = np.flatnonzero(cums > a)
        if hit.size:
            j = int(hit[0])
            x_blocks.append(x[: j + 1])
            w_blocks.append(w[: j + 1])
            tau = steps + j + 1
            x_inc = np.concatenate(x_blocks)
            w_inc = np.concatenate(w_blocks)
            x_tau = float(cums[j])
            return StoppedWalk(
                tau=tau,
                a=float(a),
                x_tau=x_tau,
                w_tau=w_inc.sum(axis=0),
                overshoot=x_tau - a,
                x_increments=x_inc if keep_increments else None,
                w_increments=w_inc if keep_increments else None,
            )
        x_blocks.append(x)
        w_blocks.append(w)
        carry = float(cums[-1])
        steps += take


def ladder_epochs(
    x_increments: np.ndarray, w_increments: np.ndarray | None = None
) -> LadderEpochs:
    """Strict ascending ladder epochs of the path with the given increments.

    Epoch k is the first index where the running sum strictly exceeds the
    height at epoch k-1 (with the walk started at 0), so the recorded
    x heights are strictly increasing; ties are not epochs.
    """
    x_increments = np.asarray(x_increments, dtype=float)
    if x_increments.ndim != 1 or x_increments.size == 0:
        raise ValueError("x_increments must be a nonempty 1-d array")
    cums = np.cumsum(x_increments)
    prev_max = np.maximum.accumulate(np.concatenate(([0.0], cums)))[:-1]
    is_epoch = cums > prev_max
    idx = np.flatnonzero(is_epoch)
    if idx.size == 0:
        raise NoLadderEpoch("path never rises above its starting level")
    times = idx + 1
    x_heights = cums[idx]
    w_heights = None
    if w_increments is not None:
        w_increments = np.asarray(w_increments, dtype=float)
        if w_increments.ndim == 1:
            w_increments = w_increments[:, None]
        if w_increments.shape[0] != x_increments.shape[0]:
            raise ValueError("w_increments length must match x_increments")
        w_heights = np.cumsum(w_increments, axis=0)[idx]
    return LadderEpochs(times=times, x_heights=x_heights, w_heights=w_heights)


def sample_ladder_variables(
    model: IncrementModel,
    n: int,
    rng: np.random.Generator | int | None = None,
    max_steps: int | None = None,
) -> LadderSample:
    """Draw n independent copies of (T, X_T, W_T), the first ladder triple.

    T is the first time the X walk goes strictly positive. Draws whose T
    exceeds max_steps raise MaxStepsExceeded carrying the failure count.
    """
    if not (isinstance(n, (int, np.integer)) and n > 0):
        raise InvalidCount(f"need a positive integer count, got {n!r}")
    if max_steps is None:
        nu = model.drift()
        max_steps = 1000 if nu is None else max(1000, int(math.ceil(50.0 / nu)))
    res = batch_stopped_sums(
        model, 0.0, int(n), rng, max_steps=max_steps, want_w_tau=True
    )
    n_failed = int(res["failed"].sum())
    if n_failed:
        raise MaxStepsExceeded(
            f"{n_failed} of {n} ladder draws exceeded {max_steps} steps",
            n_failed,
            max_steps,
        )
    return LadderSample(
        t=res["tau"], x=res["x_tau"], w=res["w_tau"], fingerprint=model.fingerprint()
    )
