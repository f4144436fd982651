"""Desk-scale studies shared by the command line and the scripts in ``scripts/``.

Locality radii ``d`` are measured in hops of the state interaction graph. On the
swing-equation plants every bus carries two states, so one physical hop is two
state hops.
"""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from . import jsonio
from .fir import SystemResponse, lqr_h2_cost, of_residual, sf_residual
from .of_synth import (AdmmConfig, OfProblem, RegularizationReport, TradeoffPoint, h2_cost,
                       l1_cost, l1_tradeoff, llqg_solve, of_locality, sensor_regularization)
from .plant import PlantModel
from .sf_synth import LocalizabilityReport, SfProblem, SfResult, is_localizable, llqr_solve
from .sparsity import (INF, ConstraintSpace, build_dT_localized, comm_delay_space, membership,
                       pattern_mul, support)

# State hops per physical hop on the swing plants.
STATE_HOPS_PER_BUS_HOP = 2


def centralized_cost(plant: PlantModel) -> float:
    """Infinite-horizon state-feedback H2 cost from the Riccati solution."""
    return lqr_h2_cost(plant.A, plant.B1, plant.B2, plant.Q, plant.Rw)


def sf_spaces(plant: PlantModel, d: int, T: int, h=INF, tau: Optional[int] = None
              ) -> tuple[ConstraintSpace, ConstraintSpace]:
    """``(d,T)`` pattern pair, optionally intersected with a per-hop communication delay ``tau``.

    A control entry ``M[k][a, j]`` inherits the delay of the state its actuator drives.
    """
    S_R, S_M = build_dT_localized(plant.A, plant.B2, d, T, h)
    if tau is None:
        return S_R, S_M
    C = comm_delay_space(support(plant.A), tau, T)
    B2t = support(plant.B2).T
    S_R = S_R.intersect(C)
    S_M = ConstraintSpace(tuple(S_M[k] & pattern_mul(B2t, C[k]) for k in range(T + 1)))
    return S_R, S_M


def synthesize_sf(plant: PlantModel, d: int, T: int, h=INF, workers: int = 1,
                  diagnostics: bool = False, tau: Optional[int] = None) -> SfResult:
    S_R, S_M = sf_spaces(plant, d, T, h, tau)
    return llqr_solve(SfProblem.from_plant(plant, S_R, S_M), workers=workers,
                      diagnostics=diagnostics)


def feasibility(plant: PlantModel, d: int, T: int, h=INF, tau: Optional[int] = None
                ) -> LocalizabilityReport:
    return is_localizable(plant, *sf_spaces(plant, d, T, h, tau))


@dataclass(frozen=True)
class SweepRow:
    d: int
    T: int
    localized: float
    centralized: float

    @property
    def ratio(self) -> float:
        return self.localized / self.centralized


def sweep_T(plant: PlantModel, ds: Sequence[int], Ts: Sequence[int], h=INF,
            workers: int = 1, tau: Optional[int] = None) -> list[SweepRow]:
    """Localized versus centralized cost over radii ``ds`` and horizons ``Ts``.

    Infeasible pairs are reported with an infinite localized cost.
    """
    cen = centralized_cost(plant)
    rows = []
    for d in ds:
        for T in Ts:
            res = synthesize_sf(plant, d, T, h, workers, tau=tau)
            rows.append(SweepRow(int(d), int(T), res.objective if res.feasible else INF, cen))
    return rows


def sweep_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["d", "T", "localized", "centralized", "ratio"])
    for r in rows:
        w.writerow([r.d, r.T, format(r.localized, ".17g"), format(r.centralized, ".17g"),
                    format(r.ratio, ".17g")])
    return buf.getvalue()


@dataclass(frozen=True)
class Comparison:
    centralized: float
    distributed: Optional[float]
    localized: Optional[float]
    d: int
    T: int
    h: object

    def to_json(self) -> dict:
        out = asdict(self)
        out["h"] = str(self.h)
        for name in ("distributed", "localized"):
            v = getattr(self, name)
            out[f"{name}_ratio"] = None if v is None else v / self.centralized
        return out


def compare_centralized(plant: PlantModel, d: int, T: int, h=INF, workers: int = 1,
                        tau: Optional[int] = None) -> Comparison:
    """Centralized, delay-only (no locality) and localized costs on one plant."""
    cen = centralized_cost(plant)
    dist = synthesize_sf(plant, plant.n_x, T, h, workers, tau=tau)
    loc = synthesize_sf(plant, d, T, h, workers, tau=tau)
    return Comparison(cen, dist.objective if dist.feasible else None,
                      loc.objective if loc.feasible else None, d, T, h)


def run_regularization(plant: PlantModel, d: int, T: int, h=2, mu0: float = 0.0,
                       lambda0: float = 3.0, rounds: int = 8,
                       cfg: AdmmConfig = AdmmConfig()) -> RegularizationReport:
    """Sensor pruning with equal sensor prices; actuators are never priced by default."""
    return sensor_regularization(plant, d, T, h=h, mu0=mu0, lambda0=lambda0, rounds=rounds,
                                 cfg=cfg)


@dataclass
class TradeoffSweep:
    baseline_l1: float
    points: list[TradeoffPoint] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"baseline_l1": self.baseline_l1,
                "points": [asdict(p) for p in self.points]}


def tradeoff_gammas(baseline_l1: float, n: int = 5, step: float = 0.02) -> list[float]:
    """``n`` bounds below the unconstrained L1 norm, shrinking by ``step`` of it each."""
    return [baseline_l1 * (1.0 - step * i) for i in range(1, n + 1)]


def run_tradeoff(plant: PlantModel, d: int, T: int, h=2, gammas: Optional[Sequence[float]] = None,
                 n: int = 6, step: float = 0.02, cfg: AdmmConfig = AdmmConfig()) -> TradeoffSweep:
    """Mixed H2/L1 sweep of ``n`` points; the first point is unconstrained.

    Unless ``gammas`` is given, the remaining bounds shrink from the unconstrained
    L1 norm in steps of ``step`` times that norm.
    """
    S = of_locality(plant, d, T, h)
    base_resp, base_state = llqg_solve(plant, S, cfg)
    prob = OfProblem(plant, S)
    base = l1_cost(prob, base_resp)
    first = TradeoffPoint(None, h2_cost(prob, base_resp), base, base_state.status)
    if gammas is None:
        gammas = tradeoff_gammas(base, n - 1, step)
    return TradeoffSweep(base, [first] + l1_tradeoff(plant, S, gammas, cfg, base_state))


def tradeoff_csv(sweep: TradeoffSweep) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["gamma", "h2", "l1", "status"])
    for p in sweep.points:
        g = "inf" if p.gamma is None else format(p.gamma, ".17g")
        w.writerow([g, format(p.h2, ".17g"), format(p.l1, ".17g"), p.status])
    return buf.getvalue()


PLOT_KINDS = {
    "sweep-T": (("T", "ratio"), "normalized H2"),
    "tradeoff": (("l1", "h2"), "H2 versus L1"),
    "residuals": (("iter", "primal", "dual"), "ADMM residuals"),
}


def emit_plot(csv_path: str | Path, kind: str, out_dir: str | Path) -> tuple[Path, Path]:
    """Write a whitespace-separated data file and a gnuplot stub for ``kind``."""
    if kind not in PLOT_KINDS:
        raise ValueError(f"unknown plot kind {kind!r}; expected one of {sorted(PLOT_KINDS)}")
    cols, title = PLOT_KINDS[kind]
    text = Path(csv_path).read_text()
    rows = list(csv.DictReader(io.StringIO(text))) if text.strip() else []
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = kind.replace("-", "_")
    data = out_dir / f"{stem}.dat"
    with open(data, "w") as fh:
        fh.write("# " + " ".join(cols) + "\n")
        for r in rows:
            try:
                fh.write(" ".join(r[c] for c in cols) + "\n")
            except KeyError as exc:
                raise ValueError(f"{csv_path} has no column {exc.args[0]!r}") from None
    stub = out_dir / f"{stem}.gp"
    using = "1:2" if len(cols) == 2 else "1:2 title 'primal', '' using 1:3 title 'dual'"
    log = "set logscale y\n" if kind == "residuals" else ""
    stub.write_text(f"set title '{title}'\nset xlabel '{cols[0]}'\n{log}"
                    f"plot '{data.name}' using {using} with linespoints\n")
    return data, stub


def response_record(kind: str, plant: PlantModel, resp: SystemResponse, d: Optional[int], T: int,
                    h=INF, tau: Optional[int] = None, **extra) -> dict:
    """Self-contained JSON record of a synthesized response and the pattern it came from."""
    if kind not in ("sf", "of"):
        raise ValueError("kind must be 'sf' or 'of'")
    rec = {"kind": kind, "d": d, "T": T, "h": str(h), "tau": tau}
    rec.update(extra)
    rec["plant"] = plant.to_json()
    rec["response"] = resp.to_json()
    return rec


def _h_from_text(h: str):
    return INF if h in ("inf", "None") else h


def validate_record(rec: dict, tol: float = 1e-8) -> tuple[PlantModel, SystemResponse]:
    """Rebuild plant and response from a record, re-checking achievability and pattern membership."""
    for key in ("kind", "T", "plant", "response"):
        if key not in rec:
            raise ValueError(f"response record is missing field '{key}'")
    plant = PlantModel.from_json(rec["plant"])
    resp = SystemResponse.from_json(rec["response"])
    d, T, h = rec.get("d"), int(rec["T"]), _h_from_text(str(rec.get("h", "inf")))
    if rec["kind"] == "sf":
        res = sf_residual(plant.A, plant.B2, resp.R, resp.M)
        S_R, S_M = sf_spaces(plant, d, T, h, rec.get("tau"))
        member = membership(resp.R, S_R) and membership(resp.M, S_M)
    elif rec["kind"] == "of":
        res = max(of_residual(plant.A, plant.B2, plant.C2, resp))
        member = membership(resp.phi(), of_locality(plant, d, T, None if h is INF else h))
    else:
        raise ValueError(f"unknown response kind {rec['kind']!r}")
    if not res <= tol:
        raise ValueError(f"stored response violates the achievability equations (residual {res:.3e})")
    if not member:
        raise ValueError("stored response leaves its sparsity pattern")
    return plant, resp


def load_record(path: str | Path, tol: float = 1e-8) -> tuple[dict, PlantModel, SystemResponse]:
    rec = jsonio.load(path)
    plant, resp = validate_record(rec, tol)
    return rec, plant, resp
