"""Parameter sweeps over (distribution, M, N, replicate) with CSV persistence.

Replicate ``r`` of cell ``c`` is seeded with ``indexed_word(base_seed, c, 0, r + 1)``
so a sweep is reproducible regardless of how cells are scheduled.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import statistics
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field
from pathlib import Path

from scipy import stats

from .core import stabilize
from .distributions import DistributionError, GammaSpec, expected_value
from .observables import quotient_values
from .prf import MASK64, indexed_word

log = logging.getLogger(__name__)

CSV_HEADER = (
    "distribution", "M", "N", "p", "s", "seed", "radius", "avalanche",
    "radius_quotient", "avalanche_quotient", "expected_gamma", "nft_total", "runtime_ms",
)

# template names that depend on M
TEMPLATE_ALIASES = {"deterministic": "constant:M", "always-1": "constant:1", "always1": "constant:1"}

# regime targets: (radius constant, avalanche constant)
DETERMINISTIC_TARGET = (0.38, 0.018)
STANDARD_BINOMIAL_TARGET = (0.35, 0.015)
# a quarter of the gap between the two targets, so the bands leave room for
# the intermediate regime around (0.37, 0.017)
RADIUS_TOL = 0.0075
AVALANCHE_TOL = 0.00075

DEFAULT_REPLICATES = 10
DEFAULT_BASE_SEED = 0x5EED5A4D


class SweepSpecError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class CsvSchemaError(ValueError):
    pass


@dataclass(frozen=True)
class PRule:
    """How a binomial template's p is chosen for each N."""

    kind: str = "none"
    value: float | None = None

    KINDS = ("none", "fixed", "power", "scaled")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise SweepSpecError("p_rule", f"unknown rule {self.kind!r}; expected one of {self.KINDS}")
        if self.kind == "none":
            return
        if self.value is None or not math.isfinite(self.value):
            raise SweepSpecError("p_rule", f"{self.kind} needs a numeric parameter")
        if self.kind == "fixed" and not 0.0 < self.value <= 1.0:
            raise SweepSpecError("p_rule", f"fixed p must lie in (0, 1], got {self.value}")
        if self.kind in ("power", "scaled") and self.value <= 0:
            raise SweepSpecError("p_rule", f"{self.kind} parameter must be > 0, got {self.value}")

    @classmethod
    def parse(cls, obj) -> PRule:
        """Accept ``None``, ``"power:2"`` or ``{"kind": "power", "value": 2}``.

        The mapping form also takes the parameter under ``p``, ``alpha`` or ``a``.
        """
        if obj is None:
            return cls()
        if isinstance(obj, str):
            kind, _, arg = obj.strip().lower().partition(":")
            try:
                return cls(kind, float(arg) if arg else None)
            except ValueError:
                raise SweepSpecError("p_rule", f"cannot parse {obj!r}") from None
        if isinstance(obj, dict):
            kind = obj.get("kind", "none")
            value = next((obj[k] for k in ("value", "p", "alpha", "a") if k in obj), None)
            try:
                return cls(kind, None if value is None else float(value))
            except (TypeError, ValueError):
                raise SweepSpecError("p_rule", f"bad parameter in {obj!r}") from None
        raise SweepSpecError("p_rule", f"unsupported value {obj!r}")

    def p_for(self, N: int) -> float:
        if self.kind == "fixed":
            return self.value
        if self.kind == "power":
            return 1.0 - float(N) ** (-self.value)
        if self.kind == "scaled":
            return 1.0 - self.value / N
        raise ValueError("rule 'none' does not define p")

    @property
    def text(self) -> str:
        return self.kind if self.kind == "none" else f"{self.kind}:{self.value!r}"


@dataclass
class SweepSpec:
    distributions: list[str]
    M_values: list[int]
    N_values: list[int]
    p_rule: PRule = field(default_factory=PRule)
    replicates: int = DEFAULT_REPLICATES
    base_seed: int = DEFAULT_BASE_SEED
    output_path: str | None = None
    # runtime_ms is wall-clock; switching it off makes whole files byte-reproducible
    timing: bool = True

    def __post_init__(self):
        if isinstance(self.p_rule, (str, dict)) or self.p_rule is None:
            self.p_rule = PRule.parse(self.p_rule)
        for name in ("distributions", "M_values", "N_values"):
            if not isinstance(getattr(self, name), (list, tuple)) or not getattr(self, name):
                raise SweepSpecError(name, "must be a non-empty list")
        for name in ("M_values", "N_values"):
            for v in getattr(self, name):
                if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                    raise SweepSpecError(name, f"entries must be positive integers, got {v!r}")
        if isinstance(self.replicates, bool) or not isinstance(self.replicates, int) or self.replicates < 1:
            raise SweepSpecError("replicates", f"must be a positive integer, got {self.replicates!r}")
        if isinstance(self.base_seed, str):
            try:
                self.base_seed = int(self.base_seed, 0)
            except ValueError:
                raise SweepSpecError("base_seed", f"cannot parse {self.base_seed!r}") from None
        if not isinstance(self.base_seed, int) or not 0 <= self.base_seed <= MASK64:
            raise SweepSpecError("base_seed", "must be a 64-bit unsigned integer")
        for template in self.distributions:
            if not isinstance(template, str):
                raise SweepSpecError("distributions", f"entries must be strings, got {template!r}")
            for M in self.M_values:
                try:
                    _resolve_template(template, M, self.p_rule, self.N_values[0], check_only=True)
                except DistributionError as exc:
                    raise SweepSpecError("distributions", str(exc)) from None

    @classmethod
    def from_dict(cls, doc: dict) -> SweepSpec:
        if not isinstance(doc, dict):
            raise SweepSpecError("<root>", "sweep spec must be a JSON object")
        known = {"distributions", "M_values", "N_values", "p_rule", "replicates",
                 "base_seed", "output_path", "timing"}
        unknown = set(doc) - known
        if unknown:
            raise SweepSpecError(sorted(unknown)[0], "unknown field")
        for required in ("distributions", "M_values", "N_values"):
            if required not in doc:
                raise SweepSpecError(required, "missing required field")
        return cls(**doc)

    @classmethod
    def load(cls, path) -> SweepSpec:
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise SweepSpecError("<root>", f"invalid JSON: {exc}") from None
        return cls.from_dict(doc)


@dataclass
class SweepRow:
    distribution: str
    M: int
    N: int
    p: float | None
    s: float | None
    seed: int
    radius: float
    avalanche: int
    radius_quotient: float
    avalanche_quotient: float
    expected_gamma: float
    nft_total: int
    runtime_ms: int

    def recompute_ok(self, tol: float = 1e-12) -> bool:
        q = quotient_values(self.radius, self.avalanche, self.N, self.M, self.expected_gamma)
        return (math.isclose(q.radius_quotient, self.radius_quotient, rel_tol=tol, abs_tol=tol)
                and math.isclose(q.avalanche_quotient, self.avalanche_quotient, rel_tol=tol, abs_tol=tol))

    def to_record(self) -> list[str]:
        return [
            self.distribution,
            str(self.M),
            str(self.N),
            "" if self.p is None else repr(self.p),
            "" if self.s is None else repr(self.s),
            f"{self.seed:016x}",
            repr(self.radius),
            str(self.avalanche),
            repr(self.radius_quotient),
            repr(self.avalanche_quotient),
            repr(self.expected_gamma),
            str(self.nft_total),
            str(self.runtime_ms),
        ]

    @classmethod
    def from_record(cls, rec: dict) -> SweepRow:
        def opt(v):
            return None if v == "" else float(v)

        return cls(
            distribution=rec["distribution"],
            M=int(rec["M"]),
            N=int(rec["N"]),
            p=opt(rec["p"]),
            s=opt(rec["s"]),
            seed=int(rec["seed"], 16),
            radius=float(rec["radius"]),
            avalanche=int(rec["avalanche"]),
            radius_quotient=float(rec["radius_quotient"]),
            avalanche_quotient=float(rec["avalanche_quotient"]),
            expected_gamma=float(rec["expected_gamma"]),
            nft_total=int(rec["nft_total"]),
            runtime_ms=int(rec["runtime_ms"]),
        )


@dataclass(frozen=True)
class Cell:
    index: int
    template: str
    M: int
    N: int
    spec: GammaSpec
    label: str


@dataclass(frozen=True)
class SkippedCell:
    index: int
    template: str
    M: int
    N: int
    reason: str


def _resolve_template(template: str, M: int, rule: PRule, N: int, check_only=False):
    """Return (GammaSpec, row label) for one grid point."""
    text = template.strip().lower()
    text = TEMPLATE_ALIASES.get(text, text).lower().replace("constant:m", f"constant:{M}")
    if text == "binomial":
        if rule.kind == "none":
            raise DistributionError("bare 'binomial' template needs a p_rule")
        if check_only:
            return None, text
        p = rule.p_for(N)
        label = f"binomial:{p!r}" if rule.kind == "fixed" else "binomial"
        return GammaSpec("binomial", M, p=p), label
    if text.startswith("binomial:") and rule.kind != "none":
        raise DistributionError(f"{template!r} fixes p itself; use a bare 'binomial' template with p_rule")
    spec = GammaSpec.parse(text, M)
    return spec, spec.text


def plan_cells(spec: SweepSpec) -> tuple[list[Cell], list[SkippedCell]]:
    """Enumerate the grid in canonical order: distribution, then M, then N."""
    cells, skipped = [], []
    index = 0
    for template in spec.distributions:
        for M in spec.M_values:
            for N in spec.N_values:
                try:
                    gamma, label = _resolve_template(template, M, spec.p_rule, N)
                except DistributionError as exc:
                    skipped.append(SkippedCell(index, template, M, N, str(exc)))
                else:
                    if spec.p_rule.kind == "scaled" and gamma.variant == "binomial" and spec.p_rule.value >= N:
                        skipped.append(SkippedCell(index, template, M, N,
                                                   f"scaled a={spec.p_rule.value} >= N={N}"))
                    else:
                        cells.append(Cell(index, template, M, N, gamma, label))
                index += 1
    return cells, skipped


def skipped_cells(spec: SweepSpec) -> list[SkippedCell]:
    return plan_cells(spec)[1]


def replicate_seed(base_seed: int, cell_index: int, replicate: int) -> int:
    return indexed_word(base_seed, cell_index, 0, replicate + 1)


def _run_task(cell: Cell, replicates: list[int], base_seed: int, timing: bool):
    """Run some replicates of one cell; degenerate laws are simulated once."""
    out = []
    cached = None
    egamma = expected_value(cell.spec)
    for r in replicates:
        seed = replicate_seed(base_seed, cell.index, r)
        start = time.perf_counter()
        if cached is None or cell.spec.constant_value is None:
            res = stabilize(cell.N, cell.M, cell.spec, seed)
            cached = (res.radius, res.avalanche, res.nonfull_topplings)
        radius, avalanche, nft = cached
        elapsed = int(round((time.perf_counter() - start) * 1000)) if timing else 0
        q = quotient_values(radius, avalanche, cell.N, cell.M, egamma)
        row = SweepRow(
            distribution=cell.label,
            M=cell.M,
            N=cell.N,
            p=cell.spec.p if cell.spec.variant == "binomial" else None,
            s=cell.spec.s if cell.spec.variant == "powerlaw" else None,
            seed=seed,
            radius=radius,
            avalanche=avalanche,
            radius_quotient=q.radius_quotient,
            avalanche_quotient=q.avalanche_quotient,
            expected_gamma=egamma,
            nft_total=nft,
            runtime_ms=elapsed,
        )
        out.append((cell.index, r, row))
    return out


def _tasks(cells: list[Cell], replicates: int):
    for cell in cells:
        if cell.spec.constant_value is not None:
            yield cell, list(range(replicates))
        else:
            for r in range(replicates):
                yield cell, [r]


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow(row.to_record())
    return buf.getvalue()


def write_csv(rows, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(rows_to_csv(rows), encoding="utf-8")
    os.replace(tmp, path)


def read_csv(path) -> list[SweepRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in CSV_HEADER if c not in (reader.fieldnames or [])]
        if missing:
            raise CsvSchemaError(f"{path}: missing columns {', '.join(missing)}")
        try:
            return [SweepRow.from_record(rec) for rec in reader]
        except (TypeError, ValueError) as exc:
            raise CsvSchemaError(f"{path}: malformed row ({exc})") from None


def run_sweep(spec: SweepSpec, workers: int | None = None, output_path=None) -> list[SweepRow]:
    """Run every (cell, replicate) of the grid and return rows in canonical order.

    Rows are appended to the output file as they complete; when the sweep
    finishes the file is rewritten in canonical order.
    """
    cells, skipped = plan_cells(spec)
    for sk in skipped:
        log.warning("skipping cell %d (%s, M=%d, N=%d): %s", sk.index, sk.template, sk.M, sk.N, sk.reason)
    output_path = output_path or spec.output_path
    workers = workers or os.cpu_count() or 1
    sink = None
    if output_path:
        sink = open(output_path, "w", newline="", encoding="utf-8")
        writer = csv.writer(sink, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        sink.flush()
    collected = []

    def accept(batch):
        for cell_index, r, row in batch:
            collected.append((cell_index, r, row))
            if sink is not None:
                writer.writerow(row.to_record())
        if sink is not None:
            sink.flush()
        cell_index, _, row = batch[0]
        log.info("cell %d %s M=%d N=%d: %d replicate(s) done", cell_index, row.distribution,
                 row.M, row.N, len(batch))

    try:
        tasks = list(_tasks(cells, spec.replicates))
        if workers == 1 or len(tasks) <= 1:
            for cell, reps in tasks:
                accept(_run_task(cell, reps, spec.base_seed, spec.timing))
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = [pool.submit(_run_task, cell, reps, spec.base_seed, spec.timing)
                           for cell, reps in tasks]
                for fut in as_completed(futures):
                    accept(fut.result())
    finally:
        if sink is not None:
            sink.close()
    collected.sort(key=lambda item: (item[0], item[1]))
    rows = [row for _, _, row in collected]
    if output_path:
        write_csv(rows, output_path)
    return rows


# --------------------------------------------------------------------------
# estimation
# --------------------------------------------------------------------------

@dataclass
class ConstantEstimate:
    distribution: str
    M: int
    N_max: int
    radius_constant_mean: float
    radius_constant_halfwidth: float
    avalanche_constant_mean: float
    avalanche_constant_halfwidth: float
    replicate_count: int

    def to_json_dict(self) -> dict:
        d = asdict(self)
        if self.replicate_count < 2:
            d["radius_constant_halfwidth"] = None
            d["avalanche_constant_halfwidth"] = None
            d["warning"] = "fewer than 2 replicates at N_max; halfwidth is infinite"
        return d


def _halfwidth(values: list[float]) -> float:
    n = len(values)
    if n < 2:
        return math.inf
    sd = statistics.stdev(values)
    return float(stats.t.ppf(0.975, n - 1) * sd / math.sqrt(n))


def estimate_constants(rows: list[SweepRow]) -> list[ConstantEstimate]:
    """Mean and Student-t 95% half-interval of both quotients at the largest N."""
    groups: dict[tuple[str, int], list[SweepRow]] = {}
    for row in rows:
        groups.setdefault((row.distribution, row.M), []).append(row)
    out = []
    for (dist, M), members in groups.items():
        n_max = max(r.N for r in members)
        top = [r for r in members if r.N == n_max]
        rq = [r.radius_quotient for r in top]
        aq = [r.avalanche_quotient for r in top]
        out.append(ConstantEstimate(
            distribution=dist,
            M=M,
            N_max=n_max,
            radius_constant_mean=statistics.fmean(rq),
            radius_constant_halfwidth=_halfwidth(rq),
            avalanche_constant_mean=statistics.fmean(aq),
            avalanche_constant_halfwidth=_halfwidth(aq),
            replicate_count=len(top),
        ))
    return out


def cell_means(rows: list[SweepRow]) -> list[dict]:
    """Replicate means of both quotients for every (distribution, M, N)."""
    groups: dict[tuple[str, int, int], list[SweepRow]] = {}
    for row in rows:
        groups.setdefault((row.distribution, row.M, row.N), []).append(row)
    return [
        {
            "distribution": d, "M": M, "N": N, "replicates": len(g),
            "radius_quotient": statistics.fmean(r.radius_quotient for r in g),
            "avalanche_quotient": statistics.fmean(r.avalanche_quotient for r in g),
        }
        for (d, M, N), g in groups.items()
    ]


DETERMINISTIC_LIKE = "DETERMINISTIC_LIKE"
STANDARD_BINOMIAL_LIKE = "STANDARD_BINOMIAL_LIKE"
INTERMEDIATE = "INTERMEDIATE"


def regime_classifier(radius_c: float, avalanche_c: float,
                      radius_tol: float = RADIUS_TOL, avalanche_tol: float = AVALANCHE_TOL) -> str:
    def near(target):
        return abs(radius_c - target[0]) <= radius_tol and abs(avalanche_c - target[1]) <= avalanche_tol

    if near(DETERMINISTIC_TARGET):
        return DETERMINISTIC_LIKE
    if near(STANDARD_BINOMIAL_TARGET):
        return STANDARD_BINOMIAL_LIKE
    return INTERMEDIATE
