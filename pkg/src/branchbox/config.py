"""Run configuration: a flat key-value document, strictly validated.

Silent typos in physics parameters corrupt experiments, so parsing is
strict: unknown keys, duplicate keys, malformed lines and invariant
violations are all errors that name the offending key.  An empty
document yields the full default configuration (unit parameters, box
L = 20, seed 42, fanout 8, branch cap 1e5, 20 histogram bins).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .branching import MODES, _MAX_EXACT_COUNT
from .model import PhysicalParams

__all__ = [
    "ConfigError",
    "RunConfig",
    "SCENARIOS",
    "parse_config",
    "default_config",
    "config_lines",
]

SCENARIOS = (
    "midbox",
    "freespread",
    "born_test",
    "peres_test",
    "collapse_compare",
    "liouville_check",
)

TIMINGS = ("deterministic", "poisson")

_PARAM_KEYS = ("m", "w", "tau", "hbar", "L")
_INT_KEYS = ("steps", "fanout", "max_branches", "bins", "seed")
_STR_KEYS = ("scenario", "mode", "timing", "output_dir")


class ConfigError(ValueError):
    """A configuration document or value is invalid; message names the key."""


@dataclass(frozen=True)
class RunConfig:
    scenario: str = "midbox"
    params: PhysicalParams = field(default_factory=PhysicalParams)
    mode: str = "weighted"
    steps: int = 200
    fanout: int = 8
    max_branches: int = 100_000
    bins: int = 20
    seed: int = 42
    timing: str = "deterministic"
    output_dir: str = "runs"

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(
                f"scenario: unknown scenario '{self.scenario}' (choose from {', '.join(SCENARIOS)})"
            )
        if self.mode not in MODES:
            raise ConfigError(f"mode: unknown mode '{self.mode}' (choose from {', '.join(MODES)})")
        if self.timing not in TIMINGS:
            raise ConfigError(f"timing: unknown timing '{self.timing}'")
        for name, minimum in (("steps", 1), ("fanout", 1), ("max_branches", 1), ("bins", 2)):
            v = getattr(self, name)
            if not isinstance(v, int) or v < minimum:
                raise ConfigError(f"{name}: must be an integer >= {minimum}, got {v!r}")
        if not isinstance(self.seed, int) or not (0 <= self.seed < 2**64):
            raise ConfigError(f"seed: must be an integer in [0, 2^64), got {self.seed!r}")
        if self.params.tau <= 0:
            raise ConfigError("tau: runs require a positive decoherence period")
        if self.params.L / self.bins < self.params.w:
            raise ConfigError(
                f"bins: bin width L/bins = {self.params.L / self.bins} is finer than "
                f"w = {self.params.w}; coarse-graining requires L/bins >= w"
            )
        self._check_scenario()

    def _check_scenario(self):
        p = self.params
        if self.scenario == "freespread":
            # the ladder and diffusion fit assume the walk never feels the
            # walls: demand 6 sigma of final spread inside the half-box
            final_sigma = math.sqrt(p.w**2 + self.steps * p.delta2())
            if 6.0 * final_sigma > p.L / 2.0:
                raise ConfigError(
                    f"L: freespread needs a wall-free regime; {self.steps} steps spread "
                    f"to sigma = {final_sigma:.3g}, so L must exceed {12 * final_sigma:.3g}"
                )
        if self.scenario == "peres_test":
            if p.L < 28.0 * p.w:
                raise ConfigError(
                    f"L: peres_test places packets at L/2 +- 10w and needs wall margins; "
                    f"L must be >= 28 w = {28 * p.w}, got {p.L}"
                )
            # the interference oracle runs on a fixed 256-point grid, which
            # must resolve w (dx = L/257 <= w/4)
            if p.L > 64.0 * p.w:
                raise ConfigError(
                    f"L: peres_test's 256-point grid cannot resolve w = {p.w} "
                    f"beyond L = 64 w = {64 * p.w}, got {p.L}"
                )
        if self.scenario == "born_test":
            if self.mode != "count":
                raise ConfigError("mode: born_test counts branches and requires mode = count")
            if self.timing != "deterministic":
                raise ConfigError(
                    "timing: born_test runs its own deterministic and stochastic-timing "
                    "variants; leave timing = deterministic"
                )
            if 10_000 % self.fanout != 0:
                raise ConfigError(
                    f"fanout: born_test apportions a total count of 10000, "
                    f"which fanout = {self.fanout} does not divide"
                )
        if self.scenario == "collapse_compare":
            if self.mode != "collapse":
                raise ConfigError("mode: collapse_compare requires mode = collapse")
            if self.timing != "deterministic":
                raise ConfigError(
                    "timing: collapse_compare batches trajectories over a shared "
                    "event schedule and requires timing = deterministic"
                )
        if self.scenario == "freespread" and self.mode == "collapse":
            raise ConfigError(
                "mode: freespread checks the branch-variance ladder, which a "
                "single collapsed branch cannot carry; use weighted or count"
            )
        if self.scenario in ("peres_test", "liouville_check") and self.mode != "weighted":
            raise ConfigError(f"mode: {self.scenario} does not use mode = {self.mode}")
        if self.mode == "count" and self.scenario != "born_test":
            # total multiplicity grows by fanout every step regardless of
            # capping; refuse runs that would leave exact-integer range.
            # born_test is exempt: it performs one event on a fixed total.
            if self.steps * math.log(self.fanout) > math.log(_MAX_EXACT_COUNT):
                raise ConfigError(
                    f"steps: count-mode totals grow as fanout^steps and "
                    f"{self.fanout}^{self.steps} exceeds the exact integer range; "
                    "use weighted mode for long runs"
                )


def default_config() -> RunConfig:
    return RunConfig()


def _parse_value(key: str, raw: str):
    if key in _STR_KEYS:
        return raw
    if key in _INT_KEYS:
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None
    try:
        v = float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {raw!r}") from None
    if not math.isfinite(v):
        raise ConfigError(f"{key}: must be finite, got {raw!r}")
    return v


def parse_config(text: str, overrides: dict | None = None) -> RunConfig:
    """Parse a flat ``key = value`` document into a validated RunConfig.

    Lines are ``key = value``; blank lines and ``#`` comments are
    ignored.  ``overrides`` (e.g. from command-line flags) are applied on
    top of the document before validation and follow the same key rules.
    """
    values: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line.strip()!r}")
        key, _, raw = body.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in _STR_KEYS + _INT_KEYS + _PARAM_KEYS:
            raise ConfigError(f"line {lineno}: unknown key '{key}'")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key '{key}'")
        if not raw:
            raise ConfigError(f"{key}: empty value")
        values[key] = _parse_value(key, raw)

    for key, value in (overrides or {}).items():
        if key not in _STR_KEYS + _INT_KEYS + _PARAM_KEYS:
            raise ConfigError(f"override: unknown key '{key}'")
        values[key] = _parse_value(key, str(value)) if isinstance(value, str) else value

    param_kwargs = {k: float(values.pop(k)) for k in _PARAM_KEYS if k in values}
    try:
        params = PhysicalParams(**param_kwargs)
    except ValueError as err:
        raise ConfigError(str(err)) from None
    return RunConfig(params=params, **values)


def config_lines(c: RunConfig) -> list[str]:
    """Deterministic ``key = value`` echo of a config (summary/file format)."""
    p = c.params
    out = [f"scenario = {c.scenario}"]
    for k in _PARAM_KEYS:
        out.append(f"{k} = {getattr(p, k):.17g}")
    out.append(f"mode = {c.mode}")
    for k in ("steps", "fanout", "max_branches", "bins", "seed"):
        out.append(f"{k} = {getattr(c, k)}")
    out.append(f"timing = {c.timing}")
    out.append(f"output_dir = {c.output_dir}")
    return out
