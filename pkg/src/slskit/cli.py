"""``slskit`` command line.

Settings come from three layers: a JSON or TOML file given with ``--config``,
then ``SLSKIT_*`` environment variables, then flags. Exit codes: 0 on success,
2 when the requested synthesis is infeasible, 1 on any other error.
"""

from __future__ import annotations

import sys
from pathlib import Path
from typing import Optional

import click
import numpy as np

from . import experiments as ex
from . import jsonio
from .of_synth import (AdmmConfig, OfProblem, SubproblemInfeasible, admm_solve, check_response,
                       h2_cost, l1_cost, of_locality, write_trace_csv)
from .plant import (PlantModel, build_chain, load, load_fixture, save, swing_chain, swing_mesh)
from .runtime import OfController, SfController, simulate
from .sparsity import INF

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

MAX_STATES = 2000
EXIT_INFEASIBLE = 2
EXIT_ERROR = 1


class IntList(click.ParamType):
    """``5``, ``3..20`` (inclusive) or ``1,2,4``."""

    name = "ints"

    def convert(self, value, param, ctx):
        if isinstance(value, (list, tuple)):
            return [int(v) for v in value]
        if isinstance(value, int):
            return [value]
        text = str(value).strip()
        try:
            if ".." in text:
                lo, hi = text.split("..", 1)
                lo, hi = int(lo), int(hi)
                if hi < lo:
                    self.fail(f"empty range {text!r}", param, ctx)
                return list(range(lo, hi + 1))
            return [int(v) for v in text.split(",") if v.strip()]
        except ValueError:
            self.fail(f"{text!r} is not an integer, list or range", param, ctx)


INTS = IntList()


def _env(name: str) -> str:
    return "SLSKIT_" + name.upper().replace("-", "_")


def opt(flag: str, *decls: str, **kw):
    return click.option(flag, *decls, envvar=_env(flag.lstrip("-")), **kw)


plant_opt = opt("--plant", required=True,
                help="Plant JSON file, or a generator spec such as swing-mesh:3, chain:4, "
                     "swing-chain:3 or fixture:chain3_swing (seed from --seed).")
d_opt = opt("--d", type=INTS, required=True, help="Locality radius in state-graph hops.")
T_opt = opt("--T", "T", type=INTS, required=True, help="FIR horizon.")
h_opt = opt("--h", type=str, default="inf", show_default=True,
            help="Communication to propagation speed ratio (inf, 2, 3/2, ...).")
tau_opt = opt("--tau", type=click.IntRange(min=1), default=None,
              help="Per-hop communication delay in steps.")
seed_opt = opt("--seed", type=int, default=None, help="Seed for randomized plants and noise.")
workers_opt = opt("--workers", type=click.IntRange(min=1), default=1, show_default=True)
out_opt = opt("--out", type=click.Path(dir_okay=False, writable=True), default=None,
              help="Output file (stdout when omitted).")
fmt_opt = opt("--format", "fmt", type=click.Choice(["json", "csv"]), default="json",
              show_default=True)
large_opt = click.option("--allow-large", is_flag=True, default=False,
                         help=f"Allow plants with more than {MAX_STATES} states.")


def admm_opts(f):
    for o in reversed([
        opt("--rho", type=float, default=1.0, show_default=True),
        opt("--eps-pri", type=float, default=1e-6, show_default=True),
        opt("--eps-dual", type=float, default=1e-6, show_default=True),
        opt("--max-iter", type=click.IntRange(min=1), default=5000, show_default=True),
    ]):
        f = o(f)
    return f


def _admm_cfg(rho, eps_pri, eps_dual, max_iter, workers) -> AdmmConfig:
    try:
        return AdmmConfig(rho=rho, eps_pri=eps_pri, eps_dual=eps_dual, max_iter=max_iter,
                          workers=workers)
    except ValueError as exc:
        raise click.BadParameter(str(exc)) from None


def _single(values, name):
    if len(values) != 1:
        raise click.BadParameter(f"expects a single value, got {len(values)}",
                                 param_hint=f"'--{name}'")
    return values[0]


def _h(text: str):
    return INF if str(text).lower() in ("inf", "none") else str(text)


def resolve_plant(spec: str, seed: Optional[int], allow_large: bool = False) -> PlantModel:
    """Load a plant file or build one from ``kind:size``; enforces the desk-scale guard."""
    path = Path(spec)
    if path.exists():
        plant = load(path)
    else:
        kind, _, arg = spec.partition(":")
        if kind == "fixture":
            plant = load_fixture(arg or "chain3_swing")
        else:
            try:
                size = int(arg)
            except ValueError:
                raise click.BadParameter(f"{spec!r} is neither a file nor a kind:size spec",
                                         param_hint="'--plant'") from None
            if kind in ("swing-mesh", "swing-chain") and seed is None:
                raise click.BadParameter("randomized plants need an explicit --seed",
                                         param_hint="'--seed'")
            if kind == "swing-mesh":
                plant = swing_mesh(size, seed=seed)
            elif kind == "swing-chain":
                plant = swing_chain(size, seed=seed)
            elif kind == "chain":
                plant = build_chain(size)
            else:
                raise click.BadParameter(f"unknown plant kind {kind!r}", param_hint="'--plant'")
    if plant.n_x > MAX_STATES and not allow_large:
        raise click.UsageError(
            f"plant has {plant.n_x} states, above the desk-scale limit of {MAX_STATES}; pass "
            "--allow-large to proceed (per-cell parallelism via --workers is the scaling path)")
    return plant


def _emit(text: str, out: Optional[str]) -> None:
    if out is None:
        click.echo(text, nl=not text.endswith("\n"))
    else:
        Path(out).write_text(text if text.endswith("\n") else text + "\n")


def _emit_json(obj, out: Optional[str]) -> None:
    _emit(jsonio.dumps(obj), out)


def _load_config(path: str) -> dict:
    p = Path(path)
    try:
        if p.suffix.lower() == ".toml":
            with open(p, "rb") as fh:
                return tomllib.load(fh)
        return jsonio.load(p)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise click.BadParameter(f"cannot read config {path}: {exc}",
                                 param_hint="'--config'") from None


def _default_map(group: click.Group, cfg: dict) -> dict:
    """Spread flat keys over every command; tables named after a command apply to it alone."""
    if not isinstance(cfg, dict):
        raise click.BadParameter("config must be a mapping", param_hint="'--config'")
    names = {name: {p.name for p in cmd.params} for name, cmd in group.commands.items()}
    known = set().union(*names.values())
    aliases = {"format": "fmt"}
    flat, per_cmd = {}, {}
    for key, val in cfg.items():
        if key in names and isinstance(val, dict):
            per_cmd[key] = val
            continue
        k = aliases.get(key, key.replace("-", "_"))
        if k not in known:
            raise click.BadParameter(f"unknown config key {key!r}", param_hint="'--config'")
        flat[k] = val
    out = {}
    for name, params in names.items():
        entry = {k: v for k, v in flat.items() if k in params}
        for key, val in per_cmd.get(name, {}).items():
            k = aliases.get(key, key.replace("-", "_"))
            if k not in params:
                raise click.BadParameter(f"unknown config key {name}.{key}",
                                         param_hint="'--config'")
            entry[k] = val
        out[name] = entry
    return out


class SlsGroup(click.Group):
    """Maps usage and runtime errors to exit code 1 so that 2 always means infeasible."""

    def main(self, args=None, prog_name=None, complete_var=None, standalone_mode=True, **extra):
        try:
            rv = super().main(args, prog_name, complete_var, standalone_mode=False, **extra)
            code = rv if isinstance(rv, int) else 0
        except click.exceptions.Exit as e:
            code = e.exit_code
        except click.ClickException as e:
            e.show()
            code = EXIT_ERROR
        except click.Abort:
            click.echo("Aborted!", err=True)
            code = EXIT_ERROR
        except (ValueError, OSError, np.linalg.LinAlgError) as e:
            click.echo(f"error: {e}", err=True)
            code = EXIT_ERROR
        if standalone_mode:
            sys.exit(code)
        return code


@click.group(cls=SlsGroup)
@click.option("--config", "config", type=click.Path(exists=True, dir_okay=False), default=None,
              envvar="SLSKIT_CONFIG", help="JSON or TOML file with default settings.")
@click.pass_context
def cli(ctx: click.Context, config):
    """Localized system level synthesis experiments."""
    if config:
        ctx.default_map = _default_map(cli, _load_config(config))


@cli.command("gen-plant")
@opt("--kind", type=click.Choice(["chain", "swing-chain", "swing-mesh"]), default="swing-mesh",
     show_default=True)
@opt("--size", type=click.IntRange(min=1), default=3, show_default=True,
     help="Chain length, or mesh side length.")
@opt("--actuated", type=str, default=None, help="Comma list of actuated nodes (chain only).")
@opt("--mode", type=click.Choice(["tree", "drop"]), default="tree", show_default=True)
@seed_opt
@out_opt
def gen_plant(kind, size, actuated, mode, seed, out):
    """Generate a plant JSON file."""
    if kind == "chain":
        act = None if actuated is None else INTS.convert(actuated, None, None)
        plant = build_chain(size, actuated=act)
    else:
        if seed is None:
            raise click.BadParameter("randomized plants need an explicit --seed",
                                     param_hint="'--seed'")
        plant = swing_chain(size, seed=seed) if kind == "swing-chain" else \
            swing_mesh(size, seed=seed, mode=mode)
    if out is None:
        _emit_json(plant.to_json(), None)
    else:
        save(plant, out)


@cli.command("synth-sf")
@plant_opt
@d_opt
@T_opt
@h_opt
@tau_opt
@seed_opt
@workers_opt
@out_opt
@large_opt
def synth_sf(plant, d, T, h, tau, seed, workers, out, allow_large):
    """Localized LQR (state feedback) synthesis."""
    pl = resolve_plant(plant, seed, allow_large)
    d, T = _single(d, "d"), _single(T, "T")
    res = ex.synthesize_sf(pl, d, T, _h(h), workers, diagnostics=True, tau=tau)
    if not res.feasible:
        _emit_json({"status": res.status, "failing_column": res.failing_column,
                    "cell_residuals": list(res.cell_residuals)}, out)
        click.echo(f"infeasible: column {res.failing_column} cannot be localized", err=True)
        raise click.exceptions.Exit(EXIT_INFEASIBLE)
    rec = ex.response_record("sf", pl, res.response(), d, T, _h(h), tau, status=res.status,
                             objective=res.objective, residual=res.residual)
    _emit_json(rec, out)


@cli.command("synth-of")
@plant_opt
@d_opt
@T_opt
@h_opt
@seed_opt
@admm_opts
@opt("--mu0", type=float, default=0.0, show_default=True, help="Actuator norm weight.")
@opt("--lambda0", type=float, default=0.0, show_default=True, help="Sensor norm weight.")
@opt("--gamma", type=float, default=None, help="Row-wise L1 bound (none when omitted).")
@workers_opt
@out_opt
@opt("--trace", type=click.Path(dir_okay=False), default=None,
     help="Write the ADMM residual trace CSV here.")
@large_opt
def synth_of(plant, d, T, h, seed, rho, eps_pri, eps_dual, max_iter, mu0, lambda0, gamma,
             workers, out, trace, allow_large):
    """Localized output-feedback synthesis by ADMM."""
    pl = resolve_plant(plant, seed, allow_large)
    d, T = _single(d, "d"), _single(T, "T")
    cfg = _admm_cfg(rho, eps_pri, eps_dual, max_iter, workers)
    S = of_locality(pl, d, T, None if _h(h) is INF else h)
    prob = OfProblem(pl, S, np.full(pl.n_u, mu0), np.full(pl.n_y, lambda0), gamma)
    try:
        resp, st = admm_solve(prob, cfg)
    except SubproblemInfeasible as exc:
        _emit_json({"status": "infeasible", "side": exc.side, "cell": list(exc.cell),
                    "residual": exc.residual}, out)
        click.echo(f"infeasible: {exc}", err=True)
        raise click.exceptions.Exit(EXIT_INFEASIBLE)
    if trace:
        write_trace_csv(st, trace)
    left, right, member = check_response(prob, resp)
    info = {"status": st.status, "iterations": st.iteration, "h2": h2_cost(prob, resp),
            "l1": l1_cost(prob, resp), "residual_col": left, "residual_row": right,
            "in_pattern": member}
    if st.status != "converged":
        _emit_json(info, out)
        click.echo(f"ADMM {st.status} after {st.iteration} iterations", err=True)
        raise click.exceptions.Exit(EXIT_INFEASIBLE if st.status == "diverged" else EXIT_ERROR)
    _emit_json(ex.response_record("of", pl, resp, d, T, _h(h), None, **info), out)


@cli.command("feas")
@plant_opt
@d_opt
@T_opt
@h_opt
@tau_opt
@seed_opt
@out_opt
@large_opt
def feas(plant, d, T, h, tau, seed, out, allow_large):
    """Check (d,T) localizability column by column."""
    pl = resolve_plant(plant, seed, allow_large)
    d, T = _single(d, "d"), _single(T, "T")
    rep = ex.feasibility(pl, d, T, _h(h), tau)
    _emit_json({"localizable": rep.localizable, "failing_column": rep.failing_column,
                "residuals": list(rep.residuals)}, out)
    if not rep.localizable:
        click.echo(f"infeasible: column {rep.failing_column} is not ({d},{T}) localizable",
                   err=True)
        raise click.exceptions.Exit(EXIT_INFEASIBLE)


@cli.command("simulate")
@opt("--response", type=click.Path(exists=True, dir_okay=False), required=True,
     help="Response JSON written by synth-sf or synth-of.")
@opt("--horizon", type=click.IntRange(min=1), default=50, show_default=True)
@opt("--impulse", type=int, default=None, help="Unit state disturbance at this index, k=0.")
@opt("--awgn", is_flag=True, default=False, help="Add seeded white process and sensor noise.")
@seed_opt
@out_opt
def simulate_cmd(response, horizon, impulse, awgn, seed, out):
    """Closed-loop simulation of a stored response; writes a trace CSV."""
    rec, pl, resp = ex.load_record(response)
    ctrl = (SfController(resp.R, resp.M) if rec["kind"] == "sf"
            else OfController(resp.R, resp.M, resp.N, resp.L))
    inj = {}
    if impulse is not None:
        if not 0 <= impulse < pl.n_x:
            raise click.BadParameter(f"state index out of range 0..{pl.n_x - 1}",
                                     param_hint="'--impulse'")
        w = np.zeros((1, pl.n_x))
        w[0, impulse] = 1.0
        inj["w"] = w
    if awgn and seed is None:
        raise click.BadParameter("stochastic simulation needs an explicit --seed",
                                 param_hint="'--seed'")
    trace = simulate(pl, ctrl, inj, horizon, seed=seed, awgn=awgn)
    _emit(trace.to_csv(), out)


@cli.command("sweep-T")
@plant_opt
@d_opt
@T_opt
@h_opt
@tau_opt
@seed_opt
@workers_opt
@out_opt
@fmt_opt
@large_opt
def sweep_T_cmd(plant, d, T, h, tau, seed, workers, out, fmt, allow_large):
    """Localized versus centralized H2 over ranges of d and T."""
    pl = resolve_plant(plant, seed, allow_large)
    rows = ex.sweep_T(pl, d, T, _h(h), workers, tau)
    if fmt == "csv":
        _emit(ex.sweep_csv(rows), out)
    else:
        _emit_json([{"d": r.d, "T": r.T, "localized": r.localized, "centralized": r.centralized,
                     "ratio": r.ratio} for r in rows], out)


@cli.command("compare-centralized")
@plant_opt
@d_opt
@T_opt
@h_opt
@tau_opt
@seed_opt
@workers_opt
@out_opt
@large_opt
def compare_cmd(plant, d, T, h, tau, seed, workers, out, allow_large):
    """Centralized, delay-only and localized H2 costs."""
    pl = resolve_plant(plant, seed, allow_large)
    cmp_ = ex.compare_centralized(pl, _single(d, "d"), _single(T, "T"), _h(h), workers, tau)
    _emit_json(cmp_.to_json(), out)
    if cmp_.localized is None:
        click.echo("infeasible: localized problem has no solution", err=True)
        raise click.exceptions.Exit(EXIT_INFEASIBLE)


@cli.command("regularize")
@plant_opt
@d_opt
@T_opt
@opt("--h", type=str, default="2", show_default=True)
@seed_opt
@admm_opts
@opt("--mu0", type=float, default=0.0, show_default=True)
@opt("--lambda0", type=float, default=3.0, show_default=True)
@opt("--reweight-rounds", type=click.IntRange(min=0), default=8, show_default=True)
@workers_opt
@out_opt
@large_opt
def regularize(plant, d, T, h, seed, rho, eps_pri, eps_dual, max_iter, mu0, lambda0,
               reweight_rounds, workers, out, allow_large):
    """Reweighted sensor regularization, pruning and resynthesis."""
    pl = resolve_plant(plant, seed, allow_large)
    cfg = _admm_cfg(rho, eps_pri, eps_dual, max_iter, workers)
    hh = _h(h)
    rep = ex.run_regularization(pl, _single(d, "d"), _single(T, "T"),
                                None if hh is INF else hh, mu0, lambda0, reweight_rounds, cfg)
    body = rep.to_json()
    body["degradation"] = rep.degradation
    _emit_json(body, out)
    if not rep.feasible:
        click.echo("infeasible: resynthesis without the removed sensors failed", err=True)
        raise click.exceptions.Exit(EXIT_INFEASIBLE)


@cli.command("tradeoff-l1")
@plant_opt
@d_opt
@T_opt
@opt("--h", type=str, default="2", show_default=True)
@seed_opt
@admm_opts
@opt("--gamma", type=str, default=None,
     help="Comma list of L1 bounds; default shrinks from the unconstrained norm in 2% steps.")
@opt("--points", type=click.IntRange(min=1), default=6, show_default=True)
@workers_opt
@out_opt
@fmt_opt
@large_opt
def tradeoff(plant, d, T, h, seed, rho, eps_pri, eps_dual, max_iter, gamma, points, workers,
             out, fmt, allow_large):
    """H2 versus L1 tradeoff sweep."""
    pl = resolve_plant(plant, seed, allow_large)
    cfg = _admm_cfg(rho, eps_pri, eps_dual, max_iter, workers)
    gammas = None
    if gamma is not None:
        try:
            gammas = [float(g) for g in str(gamma).split(",") if g.strip()]
        except ValueError:
            raise click.BadParameter(f"{gamma!r} is not a list of numbers",
                                     param_hint="'--gamma'") from None
    hh = _h(h)
    try:
        sweep = ex.run_tradeoff(pl, _single(d, "d"), _single(T, "T"),
                                None if hh is INF else hh, gammas, points, cfg=cfg)
    except SubproblemInfeasible as exc:
        click.echo(f"infeasible: {exc}", err=True)
        raise click.exceptions.Exit(EXIT_INFEASIBLE)
    if fmt == "csv":
        _emit(ex.tradeoff_csv(sweep), out)
    else:
        _emit_json(sweep.to_json(), out)


@cli.command("emit-plot")
@click.argument("data", type=click.Path(exists=True, dir_okay=False))
@opt("--kind", type=click.Choice(sorted(ex.PLOT_KINDS)), required=True)
@opt("--out", type=click.Path(file_okay=False), default=".", show_default=True,
     help="Directory for the data file and gnuplot stub.")
def emit_plot_cmd(data, kind, out):
    """Turn a sweep, tradeoff or residual CSV into gnuplot-ready columns."""
    dat, stub = ex.emit_plot(data, kind, out)
    click.echo(f"{dat}\n{stub}")


def main() -> None:  # pragma: no cover
    cli()


if __name__ == "__main__":  # pragma: no cover
    main()
