"""Flat key=value configuration covering every solver and renderer knob.

The file format is one ``key = value`` per line, ``#`` comments, blank
lines ignored. Keys are dotted (flow.*, l0.*, pipeline.*, rain.*), every
key is optional, and unknown keys are rejected. ``parse_config`` and
``serialize_config`` are exact inverses for any valid Config.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .decompose import L0Params
from .flow import FlowSolveParams, PenaltyFn
from .pipeline import SolverParams
from .rainsim import RainParams

__all__ = [
    "Config",
    "ConfigError",
    "parse_config",
    "serialize_config",
    "apply_settings",
    "config_keys",
]


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class Config:
    solver: SolverParams = field(default_factory=SolverParams)
    rain: RainParams = field(default_factory=RainParams)


# key -> (kind, short description); kinds: float, int, bool, str, float_or_auto
_KEYS: dict[str, tuple[str, str]] = {
    "flow.lambda_d": ("float", "flow data-term weight"),
    "flow.lambda_s": ("float", "flow smoothness weight"),
    "flow.penalty_kind": ("str", "quadratic or charbonnier"),
    "flow.penalty_exponent": ("float", "robust penalty exponent"),
    "flow.penalty_epsilon": ("float", "robust penalty epsilon"),
    "flow.penalty_gnc_mix": ("float", "final quadratic blend of the annealing"),
    "flow.scale_factor": ("float", "pyramid downscale per level"),
    "flow.warp_iters_per_level": ("int", "linearize/solve rounds per level"),
    "flow.gnc_levels": ("int", "annealing passes"),
    "flow.cg_tol": ("float", "linear-solver relative tolerance"),
    "flow.cg_maxiter": ("int", "linear-solver iteration cap"),
    "flow.median_filter_radius": ("int", "flow median-filter radius, 0 disables"),
    "l0.beta": ("float", "gradient-count weight of the layer prior"),
    "l0.alpha": ("float", "own-frame fidelity weight"),
    "l0.lambda_d": ("float", "cross-frame layer coupling weight"),
    "l0.aux_init": ("float_or_auto", "initial splitting penalty; auto = 2*beta"),
    "l0.aux_growth": ("float", "splitting penalty growth factor"),
    "l0.aux_max": ("float", "splitting penalty cap"),
    "pipeline.gamma": ("float", "chroma weight-map scale"),
    "pipeline.max_iters": ("int", "outer iteration budget"),
    "pipeline.energy_tolerance": ("float", "relative early-stop threshold"),
    "pipeline.use_residue": ("bool", "enable the residue data term"),
    "pipeline.use_decomposition": ("bool", "enable layer separation"),
    "pipeline.sequential_layer_update": ("bool", "frame-2 update sees the fresh frame-1 layer"),
    "rain.tau_min": ("float", "streak opacity lower bound"),
    "rain.tau_max": ("float", "streak opacity upper bound"),
    "rain.angle_min_deg": ("float", "streak angle lower bound"),
    "rain.angle_max_deg": ("float", "streak angle upper bound"),
    "rain.streak_count": ("float", "streaks per megapixel"),
    "rain.streak_length_mean": ("float", "mean streak length in px"),
    "rain.streak_length_jitter": ("float", "relative streak length jitter"),
    "rain.streak_width": ("float", "streak width in px"),
    "rain.rain_radiance": ("float", "streak brightness"),
    "rain.accumulation_A": ("float", "veil strength in [0, 1), 0 disables"),
    "rain.airlight": ("float", "veil radiance"),
    "rain.seed": ("int", "render RNG seed"),
}


def _to_values(c: Config) -> dict[str, object]:
    f = c.solver.flow
    p = f.penalty
    l0 = c.solver.l0
    r = c.rain
    return {
        "flow.lambda_d": f.lambda_d,
        "flow.lambda_s": f.lambda_s,
        "flow.penalty_kind": p.kind,
        "flow.penalty_exponent": p.exponent,
        "flow.penalty_epsilon": p.epsilon,
        "flow.penalty_gnc_mix": p.gnc_mix,
        "flow.scale_factor": f.scale_factor,
        "flow.warp_iters_per_level": f.warp_iters_per_level,
        "flow.gnc_levels": f.gnc_levels,
        "flow.cg_tol": f.cg_tol,
        "flow.cg_maxiter": f.cg_maxiter,
        "flow.median_filter_radius": f.median_filter_radius,
        "l0.beta": l0.beta,
        "l0.alpha": l0.alpha,
        "l0.lambda_d": l0.lambda_d,
        "l0.aux_init": l0.aux_init,
        "l0.aux_growth": l0.aux_growth,
        "l0.aux_max": l0.aux_max,
        "pipeline.gamma": c.solver.gamma,
        "pipeline.max_iters": c.solver.max_iters,
        "pipeline.energy_tolerance": c.solver.energy_tolerance,
        "pipeline.use_residue": c.solver.use_residue,
        "pipeline.use_decomposition": c.solver.use_decomposition,
        "pipeline.sequential_layer_update": c.solver.sequential_layer_update,
        "rain.tau_min": r.tau_range[0],
        "rain.tau_max": r.tau_range[1],
        "rain.angle_min_deg": r.angle_range_deg[0],
        "rain.angle_max_deg": r.angle_range_deg[1],
        "rain.streak_count": r.streak_count,
        "rain.streak_length_mean": r.streak_length[0],
        "rain.streak_length_jitter": r.streak_length[1],
        "rain.streak_width": r.streak_width,
        "rain.rain_radiance": r.rain_radiance,
        "rain.accumulation_A": r.accumulation_A,
        "rain.airlight": r.airlight,
        "rain.seed": r.seed,
    }


def _from_values(v: dict[str, object]) -> Config:
    try:
        penalty = PenaltyFn(
            kind=v["flow.penalty_kind"],
            exponent=v["flow.penalty_exponent"],
            epsilon=v["flow.penalty_epsilon"],
            gnc_mix=v["flow.penalty_gnc_mix"],
        )
        flow = FlowSolveParams(
            lambda_d=v["flow.lambda_d"],
            lambda_s=v["flow.lambda_s"],
            penalty=penalty,
            scale_factor=v["flow.scale_factor"],
            warp_iters_per_level=v["flow.warp_iters_per_level"],
            gnc_levels=v["flow.gnc_levels"],
            cg_tol=v["flow.cg_tol"],
            cg_maxiter=v["flow.cg_maxiter"],
            median_filter_radius=v["flow.median_filter_radius"],
        )
        l0 = L0Params(
            beta=v["l0.beta"],
            alpha=v["l0.alpha"],
            lambda_d=v["l0.lambda_d"],
            aux_init=v["l0.aux_init"],
            aux_growth=v["l0.aux_growth"],
            aux_max=v["l0.aux_max"],
        )
        solver = SolverParams(
            flow=flow,
            l0=l0,
            gamma=v["pipeline.gamma"],
            max_iters=v["pipeline.max_iters"],
            energy_tolerance=v["pipeline.energy_tolerance"],
            use_residue=v["pipeline.use_residue"],
            use_decomposition=v["pipeline.use_decomposition"],
            sequential_layer_update=v["pipeline.sequential_layer_update"],
        )
        rain = RainParams(
            tau_range=(v["rain.tau_min"], v["rain.tau_max"]),
            angle_range_deg=(v["rain.angle_min_deg"], v["rain.angle_max_deg"]),
            streak_count=v["rain.streak_count"],
            streak_length=(v["rain.streak_length_mean"], v["rain.streak_length_jitter"]),
            streak_width=v["rain.streak_width"],
            rain_radiance=v["rain.rain_radiance"],
            accumulation_A=v["rain.accumulation_A"],
            airlight=v["rain.airlight"],
            seed=v["rain.seed"],
        )
    except ValueError as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
    return Config(solver=solver, rain=rain)


def _parse_value(key: str, text: str):
    kind = _KEYS[key][0]
    try:
        if kind == "float":
            return float(text)
        if kind == "int":
            return int(text)
        if kind == "bool":
            if text == "true":
                return True
            if text == "false":
                return False
            raise ValueError("expected true or false")
        if kind == "float_or_auto":
            return None if text == "auto" else float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {text!r} ({exc})") from exc


def _format_value(value) -> str:
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(c: Config) -> str:
    values = _to_values(c)
    return "".join(f"{key} = {_format_value(values[key])}\n" for key in _KEYS)


def parse_config(text: str) -> Config:
    values = _to_values(Config())
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in _KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _parse_value(key, val.strip())
    return _from_values(values)


def apply_settings(c: Config, settings: dict[str, str]) -> Config:
    """Overlay raw key/value strings (command-line overrides) on a Config."""
    values = _to_values(c)
    for key, text in settings.items():
        if key not in _KEYS:
            raise ConfigError(f"unknown key {key!r}")
        values[key] = _parse_value(key, text)
    return _from_values(values)


def config_keys() -> list[tuple[str, str, str]]:
    """(key, default, description) for every configuration key."""
    defaults = _to_values(Config())
    return [(k, _format_value(defaults[k]), desc) for k, (_, desc) in _KEYS.items()]


def replace_solver(c: Config, **kwargs) -> Config:
    return replace(c, solver=replace(c.solver, **kwargs))
