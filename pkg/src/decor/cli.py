"""Command line interface: ``account``, ``calibrate``, ``train`` and ``sweep``.

Accounting commands print one JSON object.  Experiments write CSV to
``--output`` (or stdout).  Failures print ``{"error": code, "message": ...}``
to stdout and exit with status 2.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

from .accountant import (
    AdversaryModel,
    NoiseConfig,
    calibrate_binary_search,
    calibrate_closed_form,
    cdp_sigma,
    compose_and_convert,
    ldp_sigma,
    per_step_budget,
    step_epsilon_bound,
    step_epsilon_exact,
)
from .engine import ALGORITHMS, TrainConfig, canonical_algorithm, run
from .errors import DecorError, GraphNotSufficientlyConnected, InvalidConfig, InvalidProblem
from .graph import parse_topology
from .problems import AssumptionConstants, load_libsvm, logistic_problem, synthetic_least_squares
from .sweep import SweepSpec, noise_couples, rows_to_csv, run_sweep

DEFAULT_DELTA = 1e-5
DEFAULT_N = 16
DEFAULT_STEPS = 1000
DEFAULT_SEEDS = (0, 1, 2, 3)
TRACE_COLUMNS = ("round", "loss", "grad_norm_sq", "consensus", "stepsize")
NAMED_TOPOLOGIES = ("ring", "grid", "complete", "star", "torus", "grid2d_torus", "full")


class UsageError(DecorError):
    code = "usage-error"


class IOFailure(DecorError):
    code = "io-error"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --------------------------------------------------------------------------- config


@dataclass
class RunConfig:
    """Resolved settings for ``train`` / ``sweep`` after merging file and flags."""

    topology: str
    n: int | None
    problem: dict
    algorithm: str
    steps: int
    delta: float
    epsilon: float | None
    noise: NoiseConfig | None
    clip: float
    stepsize: float | str
    seed: int
    adversary: AdversaryModel
    calibration: str
    constants: dict | None
    output: str | None
    raw: dict

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        known = {
            "topology", "topologies", "n", "problem", "algorithm", "algorithms", "steps", "delta",
            "epsilon", "epsilons", "noise", "clip", "clips", "stepsize", "etas", "seed", "seeds",
            "adversary", "calibration", "constants", "output", "couple_grid", "x0",
        }
        unknown = sorted(set(raw) - known)
        if unknown:
            raise InvalidConfig(f"unknown config keys: {', '.join(unknown)}")
        has_eps = raw.get("epsilon") is not None or raw.get("epsilons") is not None
        has_noise = raw.get("noise") is not None
        if has_eps == has_noise:
            raise InvalidConfig("supply exactly one of an epsilon target or an explicit noise config")
        noise = None
        if has_noise:
            nz = raw["noise"]
            if not isinstance(nz, dict):
                raise InvalidConfig("noise must be an object with sigma_cdp, sigma_cor and clip")
            try:
                noise = NoiseConfig(float(nz["sigma_cdp"]), float(nz.get("sigma_cor", 0.0)), float(nz["clip"]))
            except KeyError as exc:
                raise InvalidConfig(f"noise config is missing {exc.args[0]!r}") from None
        stepsize = raw.get("stepsize", 0.01)
        if not isinstance(stepsize, str):
            stepsize = float(stepsize)
        try:
            return cls(
                topology=str(raw.get("topology", "ring")),
                n=None if raw.get("n") is None else int(raw["n"]),
                problem=dict(raw.get("problem", {"kind": "least_squares"})),
                algorithm=canonical_algorithm(str(raw.get("algorithm", "decor"))),
                steps=int(raw.get("steps", DEFAULT_STEPS)),
                delta=float(raw.get("delta", DEFAULT_DELTA)),
                epsilon=None if raw.get("epsilon") is None else float(raw["epsilon"]),
                noise=noise,
                clip=float(raw.get("clip", 1.0)),
                stepsize=stepsize,
                seed=int(raw.get("seed", 0)),
                adversary=AdversaryModel.parse(str(raw.get("adversary", "eaves"))),
                calibration=str(raw.get("calibration", "search")),
                constants=raw.get("constants"),
                output=raw.get("output"),
                raw=raw,
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, DecorError):
                raise
            raise InvalidConfig(str(exc)) from None


def _resolve_n(topology: str, n: int | None) -> int:
    if ":" in topology:
        kind, _, size = topology.partition(":")
        if kind not in ("file", "edges"):
            try:
                return int(size)
            except ValueError:
                pass
    if n is not None:
        return n
    if Path(topology).exists() or topology.startswith(("file:", "edges:")):
        return parse_topology(topology).n
    return DEFAULT_N


def build_problem(spec: dict, n: int):
    kind = spec.get("kind", "least_squares")
    extra = sorted(set(spec) - {"kind", "d", "seed", "path", "lambda", "batch_size"})
    if extra:
        raise InvalidConfig(f"unknown problem keys: {', '.join(extra)}")
    seed = int(spec.get("seed", 0))
    if kind == "least_squares":
        return synthetic_least_squares(n, int(spec.get("d", 10)), seed)
    if kind == "logistic":
        if "path" not in spec:
            raise InvalidConfig("logistic problem needs a LibSVM 'path'")
        try:
            data = load_libsvm(spec["path"], spec.get("d"))
        except OSError as exc:
            raise IOFailure(f"cannot read {spec['path']}: {exc.strerror}") from None
        return logistic_problem(data, float(spec.get("lambda", 1e-3)), n, seed, int(spec.get("batch_size", 1)))
    raise InvalidProblem(f"unknown problem kind {kind!r}; expected least_squares or logistic")


def _noise_for(cfg: RunConfig, g, algorithm: str) -> NoiseConfig:
    if cfg.noise is not None:
        return cfg.noise
    eps_iter = per_step_budget(cfg.epsilon, cfg.steps, cfg.delta)
    if algorithm == "cdp_baseline":
        return NoiseConfig(cdp_sigma(g.n, cfg.clip, eps_iter), 0.0, cfg.clip)
    if algorithm == "ldp_baseline":
        return NoiseConfig(ldp_sigma(cfg.clip, eps_iter), 0.0, cfg.clip)
    if cfg.calibration == "closed-form":
        return calibrate_closed_form(g.n, cfg.clip, cfg.steps, cfg.epsilon, cfg.delta, g, cfg.adversary).noise
    if cfg.calibration != "search":
        raise InvalidConfig(f"unknown calibration {cfg.calibration!r}; use search or closed-form")
    couples = noise_couples(g, cfg.clip, eps_iter, cfg.adversary, int(cfg.raw.get("couple_grid", 16)))
    if not couples:
        raise GraphNotSufficientlyConnected("no noise couple meets the budget on this graph")
    s_cdp, s_cor = couples[len(couples) // 2]
    return NoiseConfig(s_cdp, s_cor, cfg.clip)


# --------------------------------------------------------------------------- commands


def _graph_from_args(args):
    if args.n_given:
        return parse_topology(args.topology, args.n)
    return parse_topology(args.topology, _resolve_n(args.topology, None) if _is_named(args.topology) else None)


def _is_named(topology: str) -> bool:
    return topology.partition(":")[0] in NAMED_TOPOLOGIES


def cmd_account(args) -> dict:
    g = _graph_from_args(args)
    adv = AdversaryModel.parse(args.adversary)
    if adv.q >= g.n - 1:
        raise GraphNotSufficientlyConnected(
            f"removing {adv.q} of {g.n} users leaves no connected pair of honest users"
        )
    noise = NoiseConfig(args.sigma_cdp, args.sigma_cor, args.clip)
    step = step_epsilon_exact(g, noise, adv)
    return {
        "step_rdp": step,
        "epsilon_dp": compose_and_convert(step, args.steps, args.delta),
        "bound_rdp": step_epsilon_bound(g, noise, adv),
        "adversary": adv.label(),
        "steps": args.steps,
        "delta": args.delta,
    }


def cmd_calibrate(args) -> dict:
    g = _graph_from_args(args)
    adv = AdversaryModel.parse(args.adversary)
    if args.mode == "closed-form":
        cal = calibrate_closed_form(g.n, args.clip, args.steps, args.epsilon, args.delta, g, adv)
        out = cal.noise.as_dict()
        out.update(epsilon_target=cal.epsilon_target, epsilon_achieved=cal.epsilon_achieved, step_rdp=cal.step_rdp)
        return out
    if args.sigma_cdp is None:
        raise UsageError("--mode search needs --sigma-cdp")
    target = per_step_budget(args.epsilon, args.steps, args.delta)
    s_cor = calibrate_binary_search(g, args.sigma_cdp, args.clip, target, adv)
    noise = NoiseConfig(args.sigma_cdp, s_cor, args.clip)
    step = step_epsilon_exact(g, noise, adv)
    out = noise.as_dict()
    out.update(
        epsilon_target=args.epsilon,
        epsilon_achieved=compose_and_convert(step, args.steps, args.delta),
        step_rdp=step,
    )
    return out


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IOFailure(f"cannot read config {path}: {exc.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"config is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise InvalidConfig("config must be a JSON object")
    return raw


def _apply_overrides(raw: dict, args, names) -> dict:
    raw = dict(raw)
    for name in names:
        value = getattr(args, name, None)
        if value is not None:
            raw[name] = value
            if name == "epsilon":
                raw.pop("noise", None)
                raw.pop("epsilons", None)
            if name == "epsilons":
                raw.pop("noise", None)
                raw.pop("epsilon", None)
    return raw


def _parse_stepsize(text):
    if text is None or text in ("pl", "nonconvex"):
        return text
    try:
        return float(text)
    except ValueError:
        raise UsageError(f"--stepsize must be a number, 'pl' or 'nonconvex', got {text!r}") from None


def _write_output(text: str, path: str | None) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise IOFailure(f"cannot write {path}: {exc.strerror}") from None


def cmd_train(args) -> str:
    raw = _apply_overrides(
        _load_config(args.config), args,
        ["topology", "n", "algorithm", "steps", "delta", "epsilon", "clip", "seed", "adversary", "output"],
    )
    if args.stepsize is not None:
        raw["stepsize"] = _parse_stepsize(args.stepsize)
    cfg = RunConfig.from_dict(raw)
    n = _resolve_n(cfg.topology, cfg.n)
    g = parse_topology(cfg.topology, n)
    problem = build_problem(cfg.problem, g.n)
    consts = AssumptionConstants(**cfg.constants) if cfg.constants else None
    train = TrainConfig(
        algorithm=cfg.algorithm,
        steps=cfg.steps,
        noise=_noise_for(cfg, g, cfg.algorithm),
        graph=g,
        problem=problem,
        seed=cfg.seed,
        stepsize=cfg.stepsize,
        constants=consts,
        x0=cfg.raw.get("x0"),
    )
    trace = run(train)
    lines = [",".join(TRACE_COLUMNS)]
    lines += [",".join([str(r[0])] + [repr(v) for v in r[1:]]) for r in trace.rows()]
    text = "\n".join(lines) + "\n"
    _write_output(text, cfg.output)
    return text


def cmd_sweep(args) -> str:
    raw = _apply_overrides(
        _load_config(args.config), args, ["n", "steps", "delta", "adversary", "output"]
    )
    for flag, key, conv in (
        ("topologies", "topologies", str),
        ("epsilons", "epsilons", float),
        ("seeds", "seeds", int),
        ("etas", "etas", float),
        ("clips", "clips", float),
        ("algorithms", "algorithms", str),
    ):
        value = getattr(args, flag)
        if value is not None:
            try:
                raw[key] = [conv(v) for v in value.split(",") if v]
            except ValueError:
                raise UsageError(f"--{flag} must be a comma separated list") from None
            if key == "epsilons":
                raw.pop("noise", None)
    raw.setdefault("topologies", [raw.pop("topology")] if "topology" in raw else ["ring", "grid", "complete"])
    if raw.get("noise") is None:
        raw.setdefault("epsilons", [3.0, 10.0, 30.0])
    cfg = RunConfig.from_dict({k: v for k, v in raw.items() if k != "topologies"} | {"topology": raw["topologies"][0]})
    n = _resolve_n(cfg.topology, cfg.n)
    topologies = [f"{t}:{n}" if t in NAMED_TOPOLOGIES else t for t in raw["topologies"]]
    spec = SweepSpec(
        topologies=topologies,
        problem=build_problem(cfg.problem, n),
        epsilons=raw.get("epsilons", [math.nan]) if cfg.noise is None else [math.nan],
        seeds=raw.get("seeds", list(DEFAULT_SEEDS)),
        steps=cfg.steps,
        delta=cfg.delta,
        etas=raw.get("etas", SweepSpec.etas),
        clips=raw.get("clips", SweepSpec.clips),
        algorithms=raw.get("algorithms", ALGORITHMS),
        adversary=cfg.adversary,
        couple_grid=int(raw.get("couple_grid", 16)),
        noise=cfg.noise,
        x0=raw.get("x0"),
    )
    text = rows_to_csv(run_sweep(spec))
    _write_output(text, cfg.output)
    return text


# --------------------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="decor", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def graph_flags(p):
        p.add_argument("--topology", default="ring", help="ring:16, grid:16, complete:16, star:16 or an edge-list file")
        p.add_argument("--n", type=int, default=None, help=f"number of users (default {DEFAULT_N})")
        p.add_argument("--clip", type=float, default=1.0)
        p.add_argument("--adversary", default="eaves", help="eaves, curious or collude:q")
        p.add_argument("--steps", type=int, default=DEFAULT_STEPS)
        p.add_argument("--delta", type=float, default=DEFAULT_DELTA)

    p = sub.add_parser("account", help="per-step and composed privacy of a noise configuration")
    graph_flags(p)
    p.add_argument("--sigma-cdp", type=float, required=True)
    p.add_argument("--sigma-cor", type=float, default=0.0)
    p.set_defaults(func=cmd_account)

    p = sub.add_parser("calibrate", help="noise levels for a target (epsilon, delta)")
    graph_flags(p)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--mode", choices=("closed-form", "search"), default="closed-form")
    p.add_argument("--sigma-cdp", type=float, default=None, help="fixed uncorrelated noise for --mode search")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("train", help="run one configuration and emit its metrics trace as CSV")
    p.add_argument("--config", default=None)
    p.add_argument("--topology")
    p.add_argument("--n", type=int)
    p.add_argument("--algorithm", choices=ALGORITHMS + ("cdp", "ldp"))
    p.add_argument("--steps", type=int)
    p.add_argument("--delta", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--clip", type=float)
    p.add_argument("--stepsize")
    p.add_argument("--seed", type=int)
    p.add_argument("--adversary")
    p.add_argument("--output")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="calibrate, tune and compare all algorithms")
    p.add_argument("--config", default=None)
    p.add_argument("--topologies", help="comma separated, e.g. ring,grid,complete")
    p.add_argument("--n", type=int)
    p.add_argument("--epsilons")
    p.add_argument("--seeds")
    p.add_argument("--etas")
    p.add_argument("--clips")
    p.add_argument("--algorithms")
    p.add_argument("--steps", type=int)
    p.add_argument("--delta", type=float)
    p.add_argument("--adversary")
    p.add_argument("--output")
    p.set_defaults(func=cmd_sweep)
    return parser


def _emit_error(exc: DecorError) -> int:
    payload = {"error": exc.code, "message": str(exc)}
    if hasattr(exc, "round"):
        payload["round"] = exc.round
    if getattr(exc, "line", None) is not None:
        payload["line"] = exc.line
    sys.stdout.write(json.dumps(payload) + "\n")
    return 2


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.n_given = getattr(args, "n", None) is not None
        result = args.func(args)
    except DecorError as exc:
        return _emit_error(exc)
    except OSError as exc:
        return _emit_error(IOFailure(str(exc)))
    if isinstance(result, dict):
        sys.stdout.write(json.dumps(result) + "\n")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
