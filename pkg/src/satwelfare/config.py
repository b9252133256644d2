"""Run configuration: a plain ``key = value`` file with every method constant named.

Relative paths are resolved against the directory of the config file.
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from .geo import ConfigurationError

PROXY_OUTCOME = {"footprint": "y_footprint", "tin_area": "y_tin", "night": "y_night"}
SUPPORTED_BINS = ("0", "1", "2", "2+")


def _split(text: str) -> tuple[str, ...]:
    return tuple(t.strip() for t in text.split(",") if t.strip())


@dataclass(frozen=True)
class RunConfig:
    # inputs
    census_path: Optional[Path] = None
    villages_path: Optional[Path] = None
    survey_path: Optional[Path] = None
    buildings_path: Optional[Path] = None
    night_path: Optional[Path] = None
    out_dir: Path = Path("run")
    # ingest
    outlier_distance_m: float = 2000.0
    census_skip_threshold: float = 0.001
    survey_total_tolerance: float = 1.0
    default_zoom: float = 19.0
    night_nodata: Optional[float] = None
    # buildings
    simplify_tolerance_px: float = 3.0
    roof_clusters: int = 8
    roof_seed: int = 0
    # raster regressions
    grid_res: float = 0.001
    bins: tuple[str, ...] = SUPPORTED_BINS
    conley_cutoff_m: float = 3000.0
    conley_kernel: str = "uniform"
    conley_method: str = "fast"
    outcome_winsor_upper: float = 99.0
    outcomes: tuple[str, ...] = ("footprint", "tin_area", "night")
    # placebo
    placebo_n_sims: int = 100
    placebo_seed: int = 0
    placebo_outcomes: tuple[str, ...] = ("footprint", "tin_area", "night")
    # matching and Engel curves
    match_radius_m: float = 250.0
    proxies: tuple[str, ...] = ("footprint", "tin_area", "night")
    welfare_measures: tuple[str, ...] = ("total_assets", "housing_assets",
                                         "non_housing_assets", "expenditure")
    engel_arms: tuple[str, ...] = ("control",)
    exclude_renters: bool = True
    welfare_winsor_lower: float = 1.0
    welfare_winsor_upper: float = 99.0
    proxy_winsor_upper: float = 99.0
    loess_span: float = 0.75
    loess_degree: int = 2
    loess_grid_points: int = 100
    spline_knots: int = 5
    linearity_alpha: float = 0.05
    # scaling
    scale_welfare: str = "total_assets"
    survey_benchmark: Optional[tuple[float, float, float]] = None
    # reports
    report_res: float = 0.005
    # execution
    threads: int = 1
    source: Optional[Path] = field(default=None, compare=False)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.conley_cutoff_m < 0:
            raise ConfigurationError(f"conley_cutoff_m must be >= 0, got {self.conley_cutoff_m}")
        if self.conley_kernel != "uniform":
            raise ConfigurationError(f"unsupported conley_kernel {self.conley_kernel!r}")
        if self.conley_method not in ("fast", "brute"):
            raise ConfigurationError(f"conley_method must be fast or brute, got {self.conley_method!r}")
        if tuple(self.bins) != SUPPORTED_BINS:
            raise ConfigurationError(f"bins must be {','.join(SUPPORTED_BINS)}; got {self.bins}")
        for name in ("outcomes", "placebo_outcomes", "proxies"):
            bad = [p for p in getattr(self, name) if p not in PROXY_OUTCOME]
            if bad:
                raise ConfigurationError(f"{name}: unknown outcome(s) {bad}; "
                                         f"choose from {sorted(PROXY_OUTCOME)}")
        from .match import WELFARE
        bad = [w for w in self.welfare_measures if w not in WELFARE]
        if bad or self.scale_welfare not in WELFARE:
            raise ConfigurationError(f"unknown welfare measure(s) {bad or [self.scale_welfare]}")
        if not 0.0 < self.loess_span <= 1.0:
            raise ConfigurationError(f"loess_span must lie in (0, 1], got {self.loess_span}")
        for name in ("grid_res", "report_res", "match_radius_m", "simplify_tolerance_px"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.threads < 1 or self.placebo_n_sims < 1:
            raise ConfigurationError("threads and placebo_n_sims must be at least 1")
        for name in ("welfare_winsor_lower", "welfare_winsor_upper", "proxy_winsor_upper",
                     "outcome_winsor_upper"):
            if not 0.0 <= getattr(self, name) <= 100.0:
                raise ConfigurationError(f"{name} must lie in [0, 100]")

    @property
    def run_dir(self) -> Path:
        return Path(self.out_dir)

    def input_path(self, name: str) -> Path:
        p = getattr(self, f"{name}_path")
        if p is None:
            raise ConfigurationError(f"{name}_path is not configured")
        return Path(p)

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **kw)

    def as_dict(self) -> dict:
        out = {}
        for k, v in asdict(self).items():
            if k == "source":
                continue
            if isinstance(v, Path):
                v = str(v)
            elif isinstance(v, tuple):
                v = list(v)
            out[k] = v
        return out


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key: str, text: str):
    t = _TYPES[key]
    text = text.strip()
    if "Path" in t:
        return Path(text) if text else None
    if t.startswith("tuple[str"):
        return _split(text)
    if key == "survey_benchmark":
        if not text:
            return None
        vals = tuple(float(v) for v in _split(text))
        if len(vals) != 3:
            raise ConfigurationError("survey_benchmark needs 'estimate, ci_lo, ci_hi'")
        return vals
    if t == "bool":
        low = text.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ConfigurationError(f"{key}: expected a boolean, got {text!r}")
        return low in ("true", "1", "yes")
    if t == "int":
        return int(text)
    if "float" in t:
        if "Optional" in t and not text:
            return None
        return float(text)
    return text


def parse_config_text(text: str, base_dir: Path = Path(".")) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str
    cp.read_string("[run]\n" + text)
    kw = {}
    for key, value in cp.items("run"):
        if key not in _TYPES or key == "source":
            raise ConfigurationError(f"unknown config key {key!r}")
        try:
            kw[key] = _convert(key, value)
        except ValueError as exc:
            raise ConfigurationError(f"{key}: {exc}") from None
    # the default run directory sits next to the config file, like explicit relative paths
    kw.setdefault("out_dir", RunConfig.out_dir)
    for key, value in kw.items():
        if isinstance(value, Path) and not value.is_absolute():
            kw[key] = base_dir / value
    return RunConfig(**kw)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    cfg = parse_config_text(path.read_text(), path.parent)
    return replace(cfg, source=path)


def format_config(cfg: RunConfig) -> str:
    """Serialize to the key = value format (round-trips through parse_config_text)."""
    lines = []
    for k, v in cfg.as_dict().items():
        if v is None:
            v = ""
        elif isinstance(v, list):
            v = ", ".join(str(x) for x in v)
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"
