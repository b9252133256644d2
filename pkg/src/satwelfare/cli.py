"""Command-line entry point.

Exit codes: 0 success, 1 hard error, 2 validation threshold exceeded.
"""

from __future__ import annotations

import argparse
import sys
import warnings
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from .config import RunConfig, _convert, _TYPES, load_config
from .econ.engel import EngelError
from .econ.ols import RankDeficiencyError
from .geo import ConfigurationError, GeometryError
from .ingest import IngestError, ValidationThresholdError
from .match import EmptySampleError
from .roof import RoofModelError
from .synth import SynthConfig, SynthConfigError, corrupt_engel, generate_world

EXIT_OK, EXIT_ERROR, EXIT_THRESHOLD = 0, 1, 2
HARD_ERRORS = (IngestError, ConfigurationError, GeometryError, RankDeficiencyError, EngelError,
               EmptySampleError, RoofModelError, SynthConfigError, FileNotFoundError,
               ZeroDivisionError)


def resolve_config(args) -> RunConfig:
    """Config file (key = value, or a previous run's manifest.json) plus overrides."""
    from .pipeline import config_from_manifest
    if args.config is None:
        cfg = RunConfig()
    elif str(args.config).endswith(".json"):
        if not Path(args.config).is_file():
            raise ConfigurationError(f"manifest not found: {args.config}")
        cfg = config_from_manifest(args.config)
    else:
        cfg = load_config(args.config)
    kw = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep or key not in _TYPES or key == "source":
            raise ConfigurationError(f"bad override {item!r}; expected key=value with a known key")
        kw[key] = _convert(key, value)
    if args.out is not None:
        kw["out_dir"] = Path(args.out)
    if args.threads is not None:
        kw["threads"] = args.threads
    return replace(cfg, **kw) if kw else cfg


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", "-c", help="key = value config file or a run manifest.json")
    p.add_argument("--out", help="run directory (overrides out_dir)")
    p.add_argument("--threads", type=int, help="cap on worker threads (placebo draws)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config key; repeatable")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="satwelfare",
        description="Estimate transfer effects on wealth from building footprints, roofs and "
                    "night lights.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "ingest": "validate inputs, classify roofs, write canonical tables",
        "rasterize": "aggregate households and buildings to grid cells",
        "match": "link buildings and survey records to census households",
        "estimate": "pooled and binned cell regressions with Conley errors",
        "engel": "Engel curves, LOESS, linearity tests, arm comparison",
        "scale": "scale proxy effects into welfare effects",
        "placebo": "placebo re-randomization of the two-tier design",
        "report": "SVG maps and figures",
        "run": "ingest through report in one go",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text)
        _add_common(p)
        if name in ("estimate", "run"):
            p.add_argument("--placebo", action="store_true", help="also run placebo draws")
        if name == "placebo":
            p.add_argument("--pooled-only", action="store_true",
                           help="skip the binned regression in each draw")
    s = sub.add_parser("synth", help="generate a synthetic trial world",
                       description="generate a synthetic trial world with known ground truth")
    s.add_argument("--out", required=True, help="world directory")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--tau-w", type=float, help="planted wealth effect per transfer")
    s.add_argument("--groups", type=int, help="number of saturation groups")
    s.add_argument("--households-per-village", type=float)
    s.add_argument("--shift", type=float, default=0.0,
                   help="direct offset for treated households in one proxy (Engel violation)")
    s.add_argument("--shift-proxy", default="tin_area", choices=("tin_area", "footprint"))
    s.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a numeric SynthConfig field; repeatable")
    return parser


def _synth(args) -> int:
    cfg = SynthConfig(seed=args.seed)
    kw = {}
    if args.tau_w is not None:
        kw["tau_w"] = args.tau_w
    if args.groups is not None:
        kw["n_village_groups"] = args.groups
    if args.households_per_village is not None:
        kw["households_per_village"] = args.households_per_village
    fields = SynthConfig.__dataclass_fields__
    for item in args.set or []:
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep or key not in fields:
            raise SynthConfigError(f"bad override {item!r}")
        cur = getattr(cfg, key)
        if isinstance(cur, tuple):
            kw[key] = tuple(type(cur[0])(v) for v in value.split(","))
        elif isinstance(cur, bool):
            kw[key] = value.strip().lower() in ("1", "true", "yes")
        else:
            kw[key] = type(cur)(value)
    cfg = replace(cfg, **kw)
    truth = corrupt_engel(cfg, args.shift, args.out, args.shift_proxy) if args.shift else \
        generate_world(cfg, args.out)
    c = truth.counts
    print(f"world written to {args.out}: {c['households']} households, {c['villages']} villages, "
          f"{c['groups']} groups, {c['surveys']} surveys")
    print(f"run config: {Path(args.out) / 'run.cfg'}; ground truth: "
          f"{Path(args.out) / 'truth' / 'ground_truth.json'}")
    return EXIT_OK


def _dispatch(args) -> int:
    from . import pipeline as pl
    if args.command == "synth":
        return _synth(args)
    cfg = resolve_config(args)
    if args.command == "run":
        seq = list(pl.DEFAULT_SEQUENCE)
        if args.placebo:
            seq.insert(seq.index("scale"), "placebo")
        res = pl.run_all(cfg, seq)
        for p, s in sorted(res["scale"]["scaled"].items()):
            print(f"{p}: tau_W = {s.tau_w:.1f} (95% CI {s.ci95[0]:.1f} to {s.ci95[1]:.1f})")
    elif args.command == "placebo":
        pl.stage_placebo(cfg, binned=not args.pooled_only)
    else:
        res = pl.STAGES[args.command](cfg)
        if args.command == "estimate":
            for p, e in sorted(res["pooled"].items()):
                print(f"{p}: tau = {e.coefficient:.4g} (se {e.se:.4g}, t {e.t_stat:.2f})")
            if args.placebo:
                pl.stage_placebo(cfg)
        elif args.command == "scale":
            for p, s in sorted(res["scaled"].items()):
                print(f"{p}: tau_W = {s.tau_w:.1f} (95% CI {s.ci95[0]:.1f} to {s.ci95[1]:.1f})")
    print(f"outputs in {cfg.run_dir}")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return _dispatch(args)
    except ValidationThresholdError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_THRESHOLD
    except HARD_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
