"""Command-line interface: ``intervmed estimate | highdim | simulate``.

Settings come from built-in defaults, then an optional ``--config`` JSON
file, then explicit flags.  Every output records the library version and a
hash of the resolved settings; identical settings give byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .data import load_csv
from .effects import MediationEstimator
from .errors import IntervMedError, SchemaError
from .highdim import HighDimConfig, run_all
from .inference import bootstrap
from .sim import DgpSpec, generate, oracle, replicate_study

log = logging.getLogger("intervmed")

# settings that cannot change results
_NOT_HASHED = {"output", "manifest", "scatter", "threads", "config", "command", "verbose"}


@dataclass
class RunConfig:
    input: str | None = None
    schema: str | None = None
    mode: str = "randomized"
    link: str | None = None
    terms: str | None = None
    K: int = 100
    K_replicate: int | None = None
    B: int = 500
    interval: str = "bca"
    level: float = 0.95
    alpha: float = 0.5
    folds: int = 10
    rule: str = "min"
    reference: int = 0
    seed: int | None = None
    threads: int = 1
    output: str | None = None

    def validate(self):
        if self.seed is None:
            raise ValueError("a seed is required (--seed)")
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if self.B != 0 and self.B < 100:
            raise ValueError("B must be at least 100 (or 0 to skip intervals)")
        if self.folds < 2:
            raise ValueError("folds must be at least 2")
        if not 0 <= self.alpha <= 1:
            raise ValueError("alpha must lie in [0, 1]")
        if not 0 < self.level < 1:
            raise ValueError("level must lie in (0, 1)")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")


def config_hash(settings: dict) -> str:
    kept = {k: v for k, v in sorted(settings.items()) if k not in _NOT_HASHED}
    return hashlib.sha256(json.dumps(kept, sort_keys=True).encode()).hexdigest()[:16]


def _provenance(settings):
    return {"version": __version__, "config_hash": config_hash(settings)}


def _write_json(path, obj):
    text = json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _load(settings):
    if not settings.get("input"):
        raise ValueError("--input is required")
    if not settings.get("schema"):
        raise ValueError("--schema is required")
    if not Path(settings["schema"]).exists():
        raise SchemaError(f"schema file not found: {settings['schema']}")
    return load_csv(settings["input"], settings["schema"])


def _run_config(settings):
    fields = RunConfig.__dataclass_fields__
    cfg = RunConfig(**{k: v for k, v in settings.items() if k in fields})
    cfg.validate()
    return cfg


# -- estimate -----------------------------------------------------------------

def cmd_estimate(settings: dict) -> int:
    cfg = _run_config(settings)
    ds = _load(settings)
    log.info("estimate: n=%d, p=%d, K=%d, B=%d", ds.n, ds.p, cfg.K, cfg.B)
    est = MediationEstimator(terms=cfg.terms, mode=cfg.mode, link=cfg.link, K=cfg.K,
                             seed=cfg.seed, reference=cfg.reference,
                             K_replicate=cfg.K_replicate)
    eff = est(ds)
    report = {"provenance": _provenance(settings), "settings": _public(settings),
              "n": ds.n, "p": ds.p, "link": eff.link, "K": cfg.K, "B": cfg.B, "seed": cfg.seed,
              "reference": cfg.reference}
    effects = {nm: {"estimate": v} for nm, v in eff.as_dict().items()}
    if cfg.B:
        res = bootstrap(ds, est, B=cfg.B, seed=cfg.seed, interval=cfg.interval, level=cfg.level,
                        n_jobs=cfg.threads, estimate=eff)
        for rec in res.as_records():
            effects[rec["effect"]].update(ci_low=rec["ci_low"], ci_high=rec["ci_high"])
        report["bootstrap"] = {"interval": cfg.interval, "level": cfg.level,
                               "n_failed": res.n_failed, "percentile_fallback": list(res.fallback),
                               "failures": list(res.failures)}
    if eff.link == "logit":
        for nm, v in effects.items():
            v["odds_ratio"] = float(np.exp(v["estimate"]))
            if "ci_low" in v:
                v["odds_ratio_ci"] = [float(np.exp(v["ci_low"])), float(np.exp(v["ci_high"]))]
    report["effects"] = effects
    r1, r2 = eff.identity_residuals()
    report["identities"] = {"TE-DE-JIE": r1, "JIE-sumIE-mutual-remainder": r2}
    report["estimands"] = eff.table.as_records()
    _write_json(cfg.output, report)
    return 0


# -- highdim ------------------------------------------------------------------

def cmd_highdim(settings: dict) -> int:
    cfg = _run_config(settings)
    ds = _load(settings)
    hd = HighDimConfig(alpha=cfg.alpha, folds=cfg.folds, rule=cfg.rule, mode=cfg.mode,
                       link=cfg.link, K=cfg.K, K_replicate=cfg.K_replicate, B=cfg.B,
                       interval=cfg.interval, level=cfg.level, seed=cfg.seed,
                       reference=cfg.reference, n_jobs=cfg.threads)
    mediators = settings.get("mediators")
    log.info("highdim: n=%d, p=%d, B=%d", ds.n, ds.p, cfg.B)
    results = run_all(ds, hd, mediators)
    for name, msg in results.failures.items():
        log.warning("mediator %s failed: %s", name, msg)
    prov = _provenance(settings)
    out = cfg.output
    header = ["mediator", "estimate", "ci_low", "ci_high", "selected", "refit_columns"]
    fh = sys.stdout if out in (None, "-") else open(out, "w", newline="", encoding="utf-8")
    try:
        fh.write(f"# intervmed {prov['version']} config_hash={prov['config_hash']}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in results:
            rec = r.record()
            w.writerow([rec["mediator"]] + [repr(float(rec[k])) for k in header[1:4]]
                       + [rec["selected"], rec["refit_columns"]])
    finally:
        if fh is not sys.stdout:
            fh.close()
    manifest = settings.get("manifest") or (None if out in (None, "-") else f"{out}.manifest.json")
    if manifest:
        _write_json(manifest, {
            "provenance": prov, "settings": _public(settings), "n": ds.n, "p": ds.p,
            "completed": [r.mediator for r in results], "failures": results.failures,
            "selection": {r.mediator: {"outcome_screen": sorted(r.sets.outcome_selected),
                                       "mediator_screen": sorted(r.sets.mediator_selected),
                                       "bootstrap_failures": r.n_failed} for r in results}})
    if settings.get("scatter"):
        with open(settings["scatter"], "w", newline="", encoding="utf-8") as sf:
            sf.write(f"# intervmed {prov['version']} config_hash={prov['config_hash']}\n")
            w = csv.writer(sf, lineterminator="\n")
            w.writerow(["mediator", "a_to_m", "m_to_y", "abs_ie"])
            for r in sorted(results, key=lambda r: r.mediator):
                w.writerow([r.mediator, repr(float(r.sets.a_to_m)), repr(float(r.sets.m_to_y)),
                            repr(abs(float(r.estimate)))])
    return 0


# -- simulate -----------------------------------------------------------------

def cmd_simulate(settings: dict) -> int:
    if settings.get("seed") is None:
        raise ValueError("a seed is required (--seed)")
    spec = DgpSpec.load(settings.get("dgp") or "study1")
    n = settings.get("n") or spec.n
    seed = int(settings["seed"])
    prefix = Path(settings.get("output") or spec.name)
    prov = _provenance(settings)
    ds = generate(spec, n=n, seed=seed)
    ds.to_csv(f"{prefix}.csv")
    _write_json(f"{prefix}.schema.json", ds.schema())
    truth = oracle(spec, n_oracle=int(settings.get("n_oracle") or 10 ** 6), seed=seed + 1)
    _write_json(f"{prefix}.oracle.json", {"provenance": prov, "dgp": spec.to_dict(),
                                          **truth.to_json()})
    R = settings.get("replicates")
    if R:
        B = int(settings.get("B") or 0)
        est = MediationEstimator(terms=spec.outcome_terms(), mode="observational"
                                 if spec.observational else "randomized",
                                 K=int(settings.get("K") or 100), seed=seed,
                                 K_replicate=settings.get("K_replicate"))
        summary = replicate_study(spec, est, int(R), truth, n=n, seed=seed,
                                  interval=(settings.get("interval") or "percentile") if B else None,
                                  B=B or 200, level=float(settings.get("level") or 0.95),
                                  n_jobs=int(settings.get("threads") or 1))
        _write_json(f"{prefix}.summary.json", {"provenance": prov, "replicates": int(R), "n": n,
                                               "B": B, "effects": summary.rows()})
    return 0


# -- argument handling --------------------------------------------------------

def _common(p):
    S = argparse.SUPPRESS
    p.add_argument("--config", help="JSON file of settings; flags override it", default=S)
    p.add_argument("--input", help="CSV data file", default=S)
    p.add_argument("--schema", help="JSON column-role schema", default=S)
    p.add_argument("--mode", choices=["randomized", "observational"], default=S)
    p.add_argument("--link", choices=["identity", "log", "logit"], default=S)
    p.add_argument("--K", type=int, help="Monte Carlo draws per individual and row", default=S)
    p.add_argument("--K-replicate", dest="K_replicate", type=int,
                   help="draws inside bootstrap replicates", default=S)
    p.add_argument("--B", type=int, help="bootstrap samples (0 skips intervals)", default=S)
    p.add_argument("--interval", choices=["percentile", "bca"], default=S)
    p.add_argument("--level", type=float, default=S)
    p.add_argument("--reference", type=int, choices=[0, 1],
                   help="arm held fixed in indirect contrasts", default=S)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--threads", type=int, default=S)
    p.add_argument("--output", "-o", default=S)
    p.add_argument("--verbose", "-v", action="store_true", default=S)


def build_parser():
    parser = argparse.ArgumentParser(prog="intervmed", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"intervmed {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    p = sub.add_parser("estimate", help="all effects for a few mediators")
    _common(p)
    p.add_argument("--terms", help='outcome model, e.g. "A + M1 + M2 + M1:M2 + L1"', default=S)

    p = sub.add_parser("highdim", help="per-mediator indirect effects with double selection")
    _common(p)
    p.add_argument("--alpha", type=float, help="elastic-net mixing", default=S)
    p.add_argument("--folds", type=int, help="cross-validation folds", default=S)
    p.add_argument("--rule", choices=["min", "1se"], default=S)
    p.add_argument("--mediators", nargs="+", help="analyze only these mediators", default=S)
    p.add_argument("--manifest", help="run manifest JSON path", default=S)
    p.add_argument("--scatter", help="write per-mediator path coefficients here", default=S)

    p = sub.add_parser("simulate", help="generate a dataset with known effects")
    p.add_argument("--config", default=S)
    p.add_argument("--dgp", help="built-in design name or JSON path", default=S)
    p.add_argument("--n", type=int, default=S)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--n-oracle", dest="n_oracle", type=int, default=S)
    p.add_argument("--replicates", type=int, help="run a bias/coverage study", default=S)
    p.add_argument("--K", type=int, default=S)
    p.add_argument("--K-replicate", dest="K_replicate", type=int, default=S)
    p.add_argument("--B", type=int, help="bootstrap samples per replicate (0: none)", default=S)
    p.add_argument("--interval", choices=["percentile", "bca"], default=S)
    p.add_argument("--level", type=float, default=S)
    p.add_argument("--threads", type=int, default=S)
    p.add_argument("--output", "-o", help="output prefix", default=S)
    p.add_argument("--verbose", "-v", action="store_true", default=S)
    return parser


def _public(settings):
    """Settings that affect results (output paths and worker counts excluded)."""
    return {k: v for k, v in sorted(settings.items()) if k not in _NOT_HASHED}


def resolve_settings(args) -> dict:
    flags = vars(args)
    settings = {k: v for k, v in asdict(RunConfig()).items()} if flags["command"] != "simulate" else {}
    if "config" in flags:
        path = Path(flags["config"])
        if not path.exists():
            raise SchemaError(f"config file not found: {path}")
        settings.update(json.loads(path.read_text()))
    settings.update(flags)
    return settings


COMMANDS = {"estimate": cmd_estimate, "highdim": cmd_highdim, "simulate": cmd_simulate}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        settings = resolve_settings(args)
        logging.basicConfig(level=logging.INFO if settings.get("verbose") else logging.WARNING,
                            format="%(levelname)s: %(message)s")
        return COMMANDS[settings["command"]](settings)
    except (SchemaError, FileNotFoundError) as exc:
        print(f"intervmed: error: {exc}", file=sys.stderr)
        return 2
    except (IntervMedError, ValueError, KeyError) as exc:
        print(f"intervmed: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
