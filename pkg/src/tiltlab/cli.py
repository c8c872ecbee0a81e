"""Command-line interface: ``tiltlab {sample,oracle,verify,report}``.

Configs are JSON objects. Ensemble fields::

    {"n": 2, "interval": [0, 8], "tilt_normalizer": 8, "a": 1, "b": 2,
     "u": [3, 1], "v": [2, 0], "floor": 0, "ceiling": null, "model": "lazy-srw"}

``tilt_normalizer`` defaults to the interval length, ``floor`` to 0 (``null``
removes it) and ``model`` to ``"lazy-srw"``. Run fields may sit in the same
object: ``seed``, ``sweeps``, ``burnin``, ``thin``, ``chains`` and ``cap``.
A ``down`` object (ensemble fields only) supplies the lower config of a
monotone pair. Command-line flags override the file.

Exit codes: 0 pass, 1 verification failure, 2 invalid input, 3 numerical
failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import experiments as E
from . import oracle, sampler
from .ensemble import EnsembleConfig, config_hash, config_to_json, make_config
from .report import FORMATS, emit_report, write_atomic
from .sampler import HypothesisError

__all__ = ["RunSpec", "ConfigError", "parse_config", "config_from_json", "run_suite", "main", "SUITES"]

EXIT_PASS, EXIT_FAIL, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2, 3

COMMANDS = ("sample", "oracle", "verify", "report")
SUITES = ("ballot", "tail", "monotone", "gibbs", "balance", "shift", "tilt", "drop", "envelope", "scaling")

_ENSEMBLE_FIELDS = {"n", "interval", "tilt_normalizer", "a", "b", "u", "v", "floor", "ceiling", "model"}
_REQUIRED = ("n", "interval", "a", "b", "u", "v")
_RUN_FIELDS = {"seed", "sweeps", "burnin", "thin", "chains", "cap", "down"}


class ConfigError(ValueError):
    """An invalid config file or run specification (exit code 2)."""


@dataclass
class RunSpec:
    command: str
    config_path: Path | None = None
    seed: int | None = None
    sweeps: int | None = None
    burnin: int | None = None
    thin: int = 1
    chains: int = 4
    suite: str | None = None
    out: Path = Path("tiltlab-out")
    formats: tuple = FORMATS
    cap: int | None = None
    down: EnsembleConfig | None = None
    inputs: list = field(default_factory=list)

    def fill_defaults(self):
        if self.sweeps is not None and self.burnin is None:
            self.burnin = self.sweeps // 5
        return self


def _check_int(value, path: str, minimum: int = 0) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ConfigError(f"{path}: expected an integer >= {minimum}, got {value!r}")
    return value


def config_from_json(obj, path: str = "$") -> EnsembleConfig:
    """Build an :class:`EnsembleConfig` from its JSON form, naming bad fields by path."""
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: expected an object")
    for k in obj:
        if k not in _ENSEMBLE_FIELDS:
            raise ConfigError(f"{path}.{k}: unknown field")
    missing = [k for k in _REQUIRED if k not in obj]
    if missing:
        raise ConfigError(f"{path}: missing required field(s) {', '.join(missing)}")
    a = obj["a"]
    if isinstance(a, bool) or not isinstance(a, (int, float)) or not a > 0:
        raise ConfigError(f"{path}.a: area tilt must be a number > 0, got {a!r}")
    interval = obj["interval"]
    if not (isinstance(interval, list) and len(interval) == 2
            and all(isinstance(x, int) and not isinstance(x, bool) for x in interval)):
        raise ConfigError(f"{path}.interval: expected [l, r] with integer l < r")
    try:
        return make_config(
            _check_int(obj["n"], f"{path}.n", 1), tuple(interval),
            obj.get("tilt_normalizer", interval[1] - interval[0]),
            a, obj["b"], obj["u"], obj["v"],
            floor=obj.get("floor", 0.0), ceiling=obj.get("ceiling"),
            model=obj.get("model", "lazy-srw"),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as err:
        raise ConfigError(f"{path}: {err}") from err


def parse_config(path) -> tuple[RunSpec, EnsembleConfig]:
    """Read a JSON config file into a run spec and an ensemble config."""
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except FileNotFoundError as err:
        raise ConfigError(f"{path}: no such file") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON: {err}") from err
    if not isinstance(obj, dict):
        raise ConfigError("$: expected an object")
    for k in obj:
        if k not in _ENSEMBLE_FIELDS | _RUN_FIELDS:
            raise ConfigError(f"$.{k}: unknown field")
    config = config_from_json({k: v for k, v in obj.items() if k in _ENSEMBLE_FIELDS})
    spec = RunSpec(command="", config_path=path)
    for k in ("seed", "sweeps", "burnin"):
        if k in obj:
            setattr(spec, k, _check_int(obj[k], f"$.{k}"))
    for k in ("thin", "chains"):
        if k in obj:
            setattr(spec, k, _check_int(obj[k], f"$.{k}", 1))
    if "cap" in obj:
        spec.cap = _check_int(obj["cap"], "$.cap")
    if "down" in obj:
        spec.down = config_from_json(obj["down"], "$.down")
    return spec.fill_defaults(), config


# -- suites -------------------------------------------------------------------------

def _seed(spec: RunSpec) -> int:
    return 0 if spec.seed is None else spec.seed


def _long(spec: RunSpec, config, default_config, default_sweeps: int, thin: int):
    # long suites keep their own thinning unless a larger one is requested
    cfg = config or default_config
    sweeps = spec.sweeps or default_sweeps
    return E.long_run(cfg, _seed(spec), sweeps, spec.burnin,
                      spec.thin if spec.thin > 1 else thin)


def _suite_monotone(spec, config):
    if config is not None:
        if spec.down is None:
            raise ConfigError("suite monotone needs a 'down' config alongside the main one")
        pairs = [(config, spec.down)]
        steps = spec.sweeps * config.n * (config.length - 1) if spec.sweeps else 100_000
        return [E.monotone_experiment(_seed(spec), steps=steps, pair_list=pairs),
                E.fosd_experiment(_seed(spec), pair_list=pairs)]
    return [E.monotone_experiment(_seed(spec)), E.fosd_experiment(_seed(spec))]


def _suite_balance(spec, config):
    kw = {"seed": _seed(spec)}
    if spec.sweeps:
        kw.update(sweeps=spec.sweeps, burnin=spec.burnin)
    if config is None:
        return [E.balance_experiment(), E.sampler_oracle_experiment(**kw)]
    return [E.balance_experiment(config, spec.cap),
            E.sampler_oracle_experiment(config, **kw)]


def _suite_tail(spec, config):
    run = _long(spec, config, E.tail_instance(), E.TAIL_SWEEPS, 50)
    return [E.tail_experiment(run, with_oracle=config is None),
            E.concentration_experiment(_seed(spec))]


def _suite_drop(spec, config):
    return [E.drop_experiment(_long(spec, config, E.tail_instance(), E.TAIL_SWEEPS, 50))]


def _suite_scaling(spec, config):
    run = _long(spec, config, E.scaling_instance(), E.SCALING_SWEEPS, 100)
    return [E.scaling_experiment(run), E.stationarity_experiment(run)]


def _suite_envelope(spec, config):
    return [E.envelope_experiment(_long(spec, config, E.scaling_instance(), E.SCALING_SWEEPS, 100))]


_SUITE_FUNCS = {
    "gibbs": lambda spec, cfg: [E.gibbs_experiment(cfg, spec.cap or 6)],
    "balance": _suite_balance,
    "ballot": lambda spec, cfg: [E.ballot_experiment(cfg.model if cfg else "lazy-srw")],
    "tilt": lambda spec, cfg: [E.tilt_experiment(cfg.model if cfg else "srw")],
    "monotone": _suite_monotone,
    "shift": lambda spec, cfg: [E.shift_experiment(_seed(spec), config=cfg)],
    "tail": _suite_tail,
    "drop": _suite_drop,
    "scaling": _suite_scaling,
    "envelope": _suite_envelope,
}


def run_suite(name: str, spec: RunSpec, config: EnsembleConfig | None = None):
    """Run a named suite and return ``(results, exit_code)``.

    Without a config each suite uses its reference instance.
    """
    if name not in _SUITE_FUNCS:
        raise ConfigError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")
    results = _SUITE_FUNCS[name](spec, config)
    return results, EXIT_PASS if all(r.passed for r in results) else EXIT_FAIL


# -- commands -----------------------------------------------------------------------

def _tag(config: EnsembleConfig, seed) -> str:
    return f"{config_hash(config)[:12]}-s{seed}"


def _cmd_sample(spec: RunSpec, config: EnsembleConfig) -> int:
    sweeps = spec.sweeps if spec.sweeps is not None else 1000
    burnin = spec.burnin if spec.burnin is not None else sweeps // 5
    samples = sampler.run_chains(config, spec.seed, spec.chains, sweeps, burnin, spec.thin)
    spec.out.mkdir(parents=True, exist_ok=True)
    tag = _tag(config, spec.seed)
    samples.to_csv(spec.out / f"samples-{tag}.csv")
    manifest = samples.manifest() | {"config": config_to_json(config), "sweeps": sweeps,
                                     "burnin": burnin, "thin": spec.thin, "chains": spec.chains}
    if len(samples) >= 2:
        d = sampler.diagnostics(samples)
        manifest["diagnostics"] = {k: (v if v == v and abs(v) != float("inf") else None)
                                   if isinstance(v, float) else v for k, v in d._asdict().items()}
    write_atomic(spec.out / f"manifest-{tag}.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"{len(samples)} samples written to {spec.out}")
    return EXIT_PASS


def _cmd_oracle(spec: RunSpec, config: EnsembleConfig) -> int:
    mid = (config.interval[0] + config.interval[1]) // 2
    body = oracle.oracle_json(config, spec.cap, sites=[mid])
    body["config"] = config_to_json(config)
    spec.out.mkdir(parents=True, exist_ok=True)
    tag = _tag(config, "x")
    write_atomic(spec.out / f"oracle-{tag}.json", json.dumps(body, indent=2, sort_keys=True) + "\n")
    rows = ["curve,site,height,prob"] + [
        f"{m['curve']},{m['site']},{h!r},{p!r}"
        for m in body["marginals"] for h, p in zip(m["heights"], m["probs"])]
    write_atomic(spec.out / f"oracle-{tag}.csv", "\n".join(rows) + "\n")
    print(f"Z = {body['Z']!r}, truncation bound = {body['truncation_bound']:.3g}")
    if body["truncation_bound"] > 1e-6:
        print("truncation bound too large; raise --cap", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_PASS


def _cmd_verify(spec: RunSpec, config: EnsembleConfig | None) -> int:
    if spec.suite is None:
        raise ConfigError("verify needs --suite")
    results, code = run_suite(spec.suite, spec, config)
    for r in results:
        print(r.line())
    h = config_hash(config) if config is not None else "reference"
    emit_report(results, spec.out, h, _seed(spec), spec.formats, stem=spec.suite)
    return code


def _cmd_report(spec: RunSpec, config: EnsembleConfig | None) -> int:
    if not spec.inputs:
        raise ConfigError("report needs at least one samples CSV")
    grid = config.grid_step if config is not None else 1.0
    parts = []
    for p in spec.inputs:
        if not Path(p).is_file():
            raise ConfigError(f"{p}: no such file")
        parts.append(sampler.SampleSet.from_csv(p, grid))
    samples = sampler.SampleSet.concat(parts)
    results = [_summarize(samples, config)]
    for r in results:
        print(r.line())
    h = config_hash(config) if config is not None else "samples"
    emit_report(results, spec.out, h, _seed(spec), spec.formats, stem="summary")
    return EXIT_PASS


def _summarize(samples: sampler.SampleSet, config: EnsembleConfig | None):
    from .stats import grid_median
    n = samples.heights.shape[1]
    mid = samples.midpoint
    rows, series = [], {}
    for j in range(1, n + 1):
        prof = grid_median(samples.values(j), samples.grid_step)
        series[f"X{j}"] = (samples.sites.tolist(), prof.tolist())
        rows += [{"curve": j, "site": int(s), "median": float(m)} for s, m in zip(samples.sites, prof)]
    metrics = {"samples": len(samples), "chains": int(len(set(samples.chain.tolist())))}
    for j in range(1, n + 1):
        metrics[f"median_X{j}_mid"] = float(grid_median(samples.values(j, mid), samples.grid_step))
    if len(samples) >= 2:
        d = sampler.diagnostics(samples)
        metrics.update(tau=d.integrated_autocorrelation_time, ess=d.effective_sample_size)
    return E.ExperimentResult("sample summary", True, metrics, {"profile": rows}, {"profile": series})


# -- entry point --------------------------------------------------------------------

def _formats(values) -> tuple:
    out = []
    for v in values or []:
        for f in v.split(","):
            f = f.strip()
            if f not in FORMATS:
                raise ConfigError(f"unknown format {f!r}; choose from {', '.join(FORMATS)}")
            if f not in out:
                out.append(f)
    return tuple(out) if out else FORMATS


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tiltlab", description=__doc__.split("\n")[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("inputs", nargs="*", help="samples CSV files (report only)")
    p.add_argument("--config", type=Path, help="JSON config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--sweeps", type=int)
    p.add_argument("--burnin", type=int, help="default: 20%% of --sweeps")
    p.add_argument("--thin", type=int)
    p.add_argument("--chains", type=int)
    p.add_argument("--suite", help=f"verify suite: {', '.join(SUITES)}")
    p.add_argument("--out", type=Path, default=Path("tiltlab-out"))
    p.add_argument("--format", action="append", dest="formats",
                   help="csv, json or svg; repeat or comma-separate (default: all)")
    return p


def resolve_spec(args: argparse.Namespace) -> tuple[RunSpec, EnsembleConfig | None]:
    if args.config is not None:
        spec, config = parse_config(args.config)
    else:
        spec, config = RunSpec(command=args.command), None
    spec.command = args.command
    for k in ("seed", "sweeps", "burnin", "thin", "chains"):
        v = getattr(args, k)
        if v is not None:
            if v < (1 if k in ("thin", "chains") else 0):
                raise ConfigError(f"--{k}: out of range: {v}")
            setattr(spec, k, v)
    if args.sweeps is not None and args.burnin is None:
        spec.burnin = args.sweeps // 5
    if spec.sweeps is not None and spec.burnin is not None and spec.burnin > spec.sweeps:
        raise ConfigError("--burnin exceeds --sweeps")
    spec.suite, spec.out, spec.inputs = args.suite, args.out, list(args.inputs)
    spec.formats = _formats(args.formats)
    if spec.command in ("sample", "oracle") and config is None:
        raise ConfigError(f"{spec.command} needs --config")
    if spec.command in ("sample", "verify") and spec.seed is None:
        raise ConfigError(f"{spec.command} needs a seed (--seed or 'seed' in the config)")
    if spec.inputs and spec.command != "report":
        raise ConfigError("positional inputs are only accepted by report")
    return spec, config


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse usage errors exit with 2 already
        return int(exc.code or 0)
    try:
        spec, config = resolve_spec(args)
        handler = {"sample": _cmd_sample, "oracle": _cmd_oracle,
                   "verify": _cmd_verify, "report": _cmd_report}[spec.command]
        return handler(spec, config)
    except (ConfigError, HypothesisError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID
    except (E.NumericalError, FloatingPointError, OverflowError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as err:
        # remaining ValueErrors come from config validation inside the library
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
