"""Grain fields on Z^2, the toppling operator and the stabilization engine."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

from .distributions import DistributionError, GammaSpec, build_sampler, draw
from .prf import MASK64, SALT, mix64, pack_xy, word_at

SNAPSHOT_MAGIC = "stochpile-config v1"
MAX_TOPPLINGS = 2**63 - 1
WINDOW_CONSTANT = 1.0
GROWTH_FACTOR = 1.5


class StabilizationError(RuntimeError):
    pass


class ToppingLimitExceeded(StabilizationError):
    """The configured toppling ceiling was reached before the pile settled."""


class StabilizationOverflow(StabilizationError, OverflowError):
    """A 64-bit counter would have overflowed."""


class UnstableSiteError(StabilizationError):
    pass


class OrderPolicy(enum.IntEnum):
    FIFO = 0
    LIFO = 1
    SITE_EXHAUST = 2


NEIGHBOR_OFFSETS = ((1, 0), (-1, 0), (0, 1), (0, -1))


def neighbors(x: int, y: int) -> list[tuple[int, int]]:
    return [(x + dx, y + dy) for dx, dy in NEIGHBOR_OFFSETS]


@dataclass
class Configuration:
    """Finite grain field on a rectangular window of Z^2.

    ``grains[r, c]`` holds the count at lattice site ``(x0 + c, y0 + r)``; every
    site outside the window holds zero.
    """

    grains: np.ndarray
    M: int
    x0: int = 0
    y0: int = 0

    def __post_init__(self):
        self.grains = np.asarray(self.grains, dtype=np.int64)
        if self.grains.ndim != 2:
            raise ValueError("grains must be a 2-D array")
        if self.M < 1:
            raise ValueError("M must be positive")
        if (self.grains < 0).any():
            raise ValueError("grain counts must be non-negative")

    @property
    def shape(self):
        return self.grains.shape

    def __getitem__(self, site: tuple[int, int]) -> int:
        x, y = site
        r, c = y - self.y0, x - self.x0
        if 0 <= r < self.grains.shape[0] and 0 <= c < self.grains.shape[1]:
            return int(self.grains[r, c])
        return 0

    @property
    def total_mass(self) -> int:
        total = int(self.grains.sum(dtype=np.int64))
        if total > MASK64:
            raise StabilizationOverflow("total mass exceeds 64 bits")
        return total

    @property
    def threshold(self) -> int:
        return 4 * self.M

    def bbox(self) -> tuple[int, int, int, int] | None:
        """Tight (xmin, ymin, xmax, ymax) of the positive support, or None."""
        rows, cols = np.nonzero(self.grains)
        if rows.size == 0:
            return None
        return (
            self.x0 + int(cols.min()),
            self.y0 + int(rows.min()),
            self.x0 + int(cols.max()),
            self.y0 + int(rows.max()),
        )

    def window(self, xmin: int, ymin: int, xmax: int, ymax: int) -> Configuration:
        """Copy of the field restricted (or zero-extended) to the given box."""
        out = np.zeros((ymax - ymin + 1, xmax - xmin + 1), dtype=np.int64)
        H, W = self.grains.shape
        sx0, sy0 = max(xmin, self.x0), max(ymin, self.y0)
        sx1, sy1 = min(xmax, self.x0 + W - 1), min(ymax, self.y0 + H - 1)
        if sx0 <= sx1 and sy0 <= sy1:
            out[sy0 - ymin:sy1 - ymin + 1, sx0 - xmin:sx1 - xmin + 1] = self.grains[
                sy0 - self.y0:sy1 - self.y0 + 1, sx0 - self.x0:sx1 - self.x0 + 1
            ]
        return Configuration(out, self.M, xmin, ymin)

    def cropped(self) -> Configuration:
        box = self.bbox()
        if box is None:
            return Configuration(np.zeros((1, 1), dtype=np.int64), self.M, 0, 0)
        return self.window(*box)

    def sites(self):
        """Iterate over ((x, y), count) for positive sites."""
        rows, cols = np.nonzero(self.grains)
        for r, c in zip(rows.tolist(), cols.tolist()):
            yield (self.x0 + c, self.y0 + r), int(self.grains[r, c])

    def same_field(self, other: Configuration) -> bool:
        """Equality of the grain fields, ignoring window placement and M."""
        a, b = self.cropped(), other.cropped()
        return (a.x0, a.y0) == (b.x0, b.y0) and np.array_equal(a.grains, b.grains)

    def copy(self) -> Configuration:
        return Configuration(self.grains.copy(), self.M, self.x0, self.y0)

    # snapshot text format -------------------------------------------------

    def to_snapshot(self) -> str:
        c = self.cropped()
        H, W = c.grains.shape
        lines = [
            SNAPSHOT_MAGIC,
            f"M {self.M}",
            f"bbox {c.x0} {c.y0} {c.x0 + W - 1} {c.y0 + H - 1}",
        ]
        lines.extend(" ".join(str(v) for v in row) for row in c.grains.tolist())
        return "\n".join(lines) + "\n"

    @classmethod
    def from_snapshot(cls, text: str) -> Configuration:
        lines = [ln.strip() for ln in text.strip().splitlines()]
        if not lines or lines[0] != SNAPSHOT_MAGIC:
            raise ValueError(f"not a snapshot: expected header {SNAPSHOT_MAGIC!r}")
        try:
            key, m = lines[1].split()
            if key != "M":
                raise ValueError
            parts = lines[2].split()
            if parts[0] != "bbox" or len(parts) != 5:
                raise ValueError
            xmin, ymin, xmax, ymax = map(int, parts[1:])
            rows = [list(map(int, ln.split())) for ln in lines[3:]]
        except (ValueError, IndexError):
            raise ValueError("malformed snapshot header or body") from None
        W, H = xmax - xmin + 1, ymax - ymin + 1
        if len(rows) != H or any(len(r) != W for r in rows):
            raise ValueError(f"snapshot body does not match bbox {W}x{H}")
        return cls(np.array(rows, dtype=np.int64).reshape(H, W), int(m), xmin, ymin)

    def write_snapshot(self, path) -> None:
        Path(path).write_text(self.to_snapshot())

    @classmethod
    def read_snapshot(cls, path) -> Configuration:
        return cls.from_snapshot(Path(path).read_text())


def single_source(N: int, M: int) -> Configuration:
    """N grains on the origin, nothing elsewhere."""
    if N < 1 or M < 1:
        raise ValueError(f"N and M must be positive, got N={N}, M={M}")
    if N > MASK64:
        raise StabilizationOverflow("N exceeds 64 bits")
    return Configuration(np.array([[N]], dtype=np.int64), M, 0, 0)


def is_stable(config: Configuration) -> bool:
    return bool((config.grains < config.threshold).all())


def topple_once(config: Configuration, v: tuple[int, int], k: int) -> Configuration:
    """Apply one toppling of multiplicity k at site v, returning a new field."""
    if not 1 <= k <= config.M:
        raise DistributionError(f"multiplicity {k} outside 1..{config.M}")
    x, y = v
    if config[v] < config.threshold:
        raise UnstableSiteError(f"site {v} holds {config[v]} < {config.threshold}; cannot topple")
    H, W = config.shape
    out = config.window(
        min(config.x0, x - 1), min(config.y0, y - 1),
        max(config.x0 + W - 1, x + 1), max(config.y0 + H - 1, y + 1),
    )
    g = out.grains
    r, c = y - out.y0, x - out.x0
    g[r, c] -= 4 * k
    g[r + 1, c] += k
    g[r - 1, c] += k
    g[r, c + 1] += k
    g[r, c - 1] += k
    return out


# --------------------------------------------------------------------------
# engine
# --------------------------------------------------------------------------

_DONE, _GROW, _LIMIT = 0, 1, 2


@njit(cache=True)
def _relax(grains, odo, emitted, x0, y0, M, const_k, threshold, alias,
           seed, policy, limit, counters):
    H, W = grains.shape
    cap = H * W
    thr = 4 * M
    gf = grains.reshape(cap)
    of = odo.reshape(cap)
    ef = emitted.reshape(cap)
    work = np.empty(cap, dtype=np.int64)
    # 0 idle, 1 queued, 2 window edge (toppling there needs a larger window)
    mark = np.zeros(cap, dtype=np.uint8)
    mark[:W] = 2
    mark[cap - W:] = 2
    mark[::W] = 2
    mark[W - 1::W] = 2
    seed_mix = mix64(seed ^ SALT)
    # SITE_EXHAUST drains a queue: sites wait longer and accumulate more grains
    fifo = policy != 1
    exhaust = policy == 2
    head = 0
    size = 0
    tail = 0
    for idx in range(cap):
        if gf[idx] >= thr:
            if mark[idx] == 2:
                return _GROW
            work[size] = idx
            mark[idx] = 1
            size += 1
    tail = size % cap
    start = counters[0]
    full = 0
    status = _DONE
    while size > 0:
        if fifo:
            idx = work[head]
            head += 1
            if head == cap:
                head = 0
        else:
            idx = work[size - 1]
        size -= 1
        mark[idx] = 0
        g = gf[idx]
        n = of[idx]
        done = counters[0]
        if const_k > 0:
            t = 1
            if exhaust and g - thr >= 4 * const_k:
                t = (g - thr) // (4 * const_k) + 1
            if done > limit - t:
                status = _LIMIT
                break
            sent = t * const_k
            g -= 4 * sent
            n += t
            if const_k == M:
                full += t
        else:
            r = idx // W
            key = mix64(seed_mix ^ pack_xy(idx - r * W + x0, r + y0))
            sent = 0
            t = 0
            while True:
                if done + t >= limit:
                    status = _LIMIT
                    break
                n += 1
                t += 1
                k = draw(word_at(key, n), M, threshold, alias)
                g -= 4 * k
                sent += k
                full += k == M
                if not exhaust or g < thr:
                    break
        gf[idx] = g
        of[idx] = n
        ef[idx] += sent
        counters[0] = done + t
        for nb in (idx - 1, idx + 1, idx - W, idx + W):
            v = gf[nb] + sent
            gf[nb] = v
            if v >= thr and mark[nb] != 1:
                if mark[nb] == 2:
                    status = _GROW
                    continue
                mark[nb] = 1
                if fifo:
                    work[tail] = nb
                    tail += 1
                    if tail == cap:
                        tail = 0
                else:
                    work[size] = nb
                size += 1
        if status != _DONE:
            break
        if g >= thr:
            mark[idx] = 1
            if fifo:
                work[tail] = idx
                tail += 1
                if tail == cap:
                    tail = 0
            else:
                work[size] = idx
            size += 1
    counters[1] += full
    counters[2] += counters[0] - start - full
    return status


@dataclass
class StabilizationResult:
    N: int
    spec: GammaSpec
    seed: int
    initial: Configuration
    final: Configuration
    odometer: np.ndarray
    emitted: np.ndarray
    radius: float
    avalanche: int
    full_topplings: int
    nonfull_topplings: int
    reach_radius: float

    @property
    def M(self) -> int:
        return self.final.M

    def odometer_at(self, x: int, y: int) -> int:
        r, c = y - self.final.y0, x - self.final.x0
        H, W = self.odometer.shape
        return int(self.odometer[r, c]) if 0 <= r < H and 0 <= c < W else 0

    @property
    def toppled_sites(self) -> int:
        return int(np.count_nonzero(self.odometer))

    def odometer_field(self) -> Configuration:
        return Configuration(self.odometer, self.M, self.final.x0, self.final.y0)

    def emitted_field(self) -> Configuration:
        return Configuration(self.emitted, self.M, self.final.x0, self.final.y0)

    def summary(self) -> dict:
        return {
            "N": self.N,
            "M": self.M,
            "distribution": self.spec.text,
            "seed": f"{self.seed:016x}",
            "radius": self.radius,
            "avalanche": self.avalanche,
            "full_topplings": self.full_topplings,
            "nonfull_topplings": self.nonfull_topplings,
            "total_mass": self.final.total_mass,
            "reach_radius": self.reach_radius,
        }


def _initial_side(N: int, M: int) -> int:
    return 2 * math.ceil(WINDOW_CONSTANT * math.sqrt(N / M)) + 3


def _grow(arrays, x0, y0):
    H, W = arrays[0].shape
    newH = max(math.ceil(H * GROWTH_FACTOR), H + 2)
    newW = max(math.ceil(W * GROWTH_FACTOR), W + 2)
    pr, pc = (newH - H) // 2, (newW - W) // 2
    grown = []
    for a in arrays:
        b = np.zeros((newH, newW), dtype=a.dtype)
        b[pr:pr + H, pc:pc + W] = a
        grown.append(b)
    return grown, x0 - pc, y0 - pr


def reach_radius(odometer: np.ndarray, x0: int, y0: int) -> float:
    """Largest distance from the origin of any site that received a grain."""
    toppled = odometer > 0
    if not toppled.any():
        return 0.0
    reached = toppled.copy()
    reached[1:, :] |= toppled[:-1, :]
    reached[:-1, :] |= toppled[1:, :]
    reached[:, 1:] |= toppled[:, :-1]
    reached[:, :-1] |= toppled[:, 1:]
    rows, cols = np.nonzero(reached)
    xs = cols.astype(np.float64) + x0
    ys = rows.astype(np.float64) + y0
    return float(np.sqrt(xs * xs + ys * ys).max())


def stabilize(
    N: int,
    M: int,
    spec: GammaSpec,
    seed: int = 0,
    policy: OrderPolicy = OrderPolicy.SITE_EXHAUST,
    max_topplings: int = MAX_TOPPLINGS,
    sampler=None,
) -> StabilizationResult:
    """Stabilize N grains at the origin with threshold 4M and multiplicity law ``spec``.

    The i-th toppling at site v always consumes ``indexed_word(seed, v, i)``, so
    the outcome does not depend on ``policy``.
    """
    from .observables import radius_number

    if spec.M != M:
        raise DistributionError(f"distribution built for M={spec.M}, engine asked for M={M}")
    initial = single_source(N, M)
    policy = OrderPolicy(policy)
    table = sampler if sampler is not None else build_sampler(spec)
    const_k = spec.constant_value or 0

    # emitted(v) <= M * avalanche and counters are signed 64-bit
    safe_limit = (2**63 - 1) // M - N
    limit = min(max_topplings, safe_limit)

    side = _initial_side(N, M)
    half = side // 2
    grains = np.zeros((side, side), dtype=np.int64)
    odo = np.zeros_like(grains)
    emitted = np.zeros_like(grains)
    x0 = y0 = -half
    grains[half, half] = N
    counters = np.zeros(3, dtype=np.int64)
    useed = np.uint64(seed & MASK64)

    while True:
        status = _relax(grains, odo, emitted, x0, y0, M, const_k,
                        table.threshold, table.alias, useed, int(policy), limit, counters)
        if status == _DONE:
            break
        if status == _LIMIT:
            if limit < max_topplings:
                raise StabilizationOverflow(f"toppling counters would exceed 64 bits (N={N}, M={M})")
            raise ToppingLimitExceeded(f"more than {max_topplings} topplings")
        (grains, odo, emitted), x0, y0 = _grow((grains, odo, emitted), x0, y0)

    final = Configuration(grains, M, x0, y0)
    avalanche = int(counters[0])
    return StabilizationResult(
        N=N,
        spec=spec,
        seed=seed & MASK64,
        initial=initial,
        final=final,
        odometer=odo,
        emitted=emitted,
        radius=radius_number(final),
        avalanche=avalanche,
        full_topplings=int(counters[1]),
        nonfull_topplings=int(counters[2]),
        reach_radius=reach_radius(odo, x0, y0),
    )
