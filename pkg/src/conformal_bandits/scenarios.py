"""Simulation scenario files.

A scenario is an INI file with a ``[scenario]`` section describing the reward
process and Monte-Carlo size, an optional ``[conformal]`` section, and one
``[policy.<label>]`` section per policy in the grid::

    [scenario]
    name = small_gap_gaussian
    family = gaussian          ; gaussian | student_t | skew_t
    means = 0.05, 0, 0
    scale = 0.1
    dof = 3                    ; t families only
    skew_shapes = 0.3, -0.5, 0.6   ; skew_t only
    standardize = false        ; rescale Student-t noise to unit variance
    horizon = 2000
    replicates = 1000
    seed = 2025
    feedback = partial         ; partial | full

    [conformal]
    alpha = 0.2
    aci = true
    aci_step = 0.005
    split_rule = alternating   ; alternating | halves
    predictor = constant       ; constant | linear
    ridge = 0
    tie_rule = random          ; random | first

    [policy.cp_half]
    kind = cp_bandit
    lambda = 0.5
    epsilon = decay            ; none | constant | decay
    gamma = 0.1                ; decay exponent
    ; eps = 0.03               ; constant level

Built-in scenarios ship with the package and are addressed by name.
Validation errors name the file and line of the offending key.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

from .environments import RewardModel
from .errors import ConfigurationError
from .harness import CPConfig, Feedback
from .policies import EpsilonSchedule, PolicyKind, PolicySpec

__all__ = ["Scenario", "builtin_scenarios", "load_scenario", "parse_policy_name", "scenario_from_text"]

_SCENARIO_DIR = "scenarios"


@dataclass(frozen=True)
class Scenario:
    name: str
    model: RewardModel
    horizon: int
    replicates: int
    seed: int
    feedback: Feedback
    cp: CPConfig
    policies: tuple[PolicySpec, ...]
    source: str = "<memory>"
    labels: tuple[str, ...] = field(default=())

    def resolved(self) -> dict:
        """Plain-data echo of every setting, defaults included."""
        m = self.model
        return {
            "name": self.name,
            "family": m.kind.value,
            "means": list(m.means),
            "scale": m.scale,
            "dof": m.dof,
            "skew_shapes": list(m.skew_shapes) if m.skew_shapes else None,
            "standardize": m.standardize,
            "horizon": self.horizon,
            "replicates": self.replicates,
            "seed": self.seed,
            "feedback": self.feedback.value,
            "conformal": {
                "alpha": self.cp.alpha,
                "aci": self.cp.aci,
                "aci_step": self.cp.aci_step,
                "split_rule": self.cp.split_rule.value,
                "predictor": self.cp.predictor.value,
                "ridge": self.cp.ridge,
                "tie_rule": self.cp.tie_rule,
            },
            "policies": [
                {
                    "label": self.labels[i] if i < len(self.labels) else p.describe(),
                    "kind": p.kind.value,
                    "beta": p.beta,
                    "rho": p.rho,
                    "lambda": p.lam,
                    "epsilon": {"mode": p.epsilon.mode, "value": p.epsilon.value},
                }
                for i, p in enumerate(self.policies)
            ],
        }

    def with_overrides(self, **kw) -> "Scenario":
        return replace(self, **kw)


class _Lines:
    """Maps (section, key) to the 1-based line it was written on."""

    _sec = re.compile(r"^\s*\[([^\]]+)\]")
    _key = re.compile(r"^\s*([^=:;#\s][^=:]*?)\s*[=:]")

    def __init__(self, text: str):
        self.sections: dict[str, int] = {}
        self.keys: dict[tuple[str, str], int] = {}
        current = None
        for n, line in enumerate(text.splitlines(), start=1):
            m = self._sec.match(line)
            if m:
                current = m.group(1).strip()
                self.sections.setdefault(current, n)
                continue
            m = self._key.match(line)
            if m and current is not None:
                self.keys.setdefault((current, m.group(1).strip().lower()), n)

    def of(self, section: str, key: str | None = None) -> int | None:
        if key is not None and (section, key) in self.keys:
            return self.keys[(section, key)]
        return self.sections.get(section)


class _Located(ConfigurationError):
    """Error already carrying its file:line prefix."""


# words in a validation message that identify the key at fault
_KEY_HINTS = {
    "scale": "scale",
    "dof": "dof",
    "skew": "skew_shapes",
    "mean": "means",
    "arm": "means",
    "alpha": "alpha",
    "aci step": "aci_step",
    "split": "split_rule",
    "predictor": "predictor",
    "beta": "beta",
    "rho": "rho",
    "lambda": "lambda",
}


class _Reader:
    def __init__(self, text: str, source: str):
        self.source = source
        self.lines = _Lines(text)
        self.cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
        try:
            self.cp.read_string(text, source=source)
        except configparser.Error as exc:
            line = getattr(exc, "lineno", None)
            where = f"{source}:{line}" if line else source
            first = str(exc).splitlines()[0]
            raise ConfigurationError(f"{where}: {first}") from None

    def fail(self, section: str, key: str | None, msg: str):
        line = self.lines.of(section, key)
        where = f"{self.source}:{line}" if line else self.source
        what = f"[{section}] {key}" if key else f"[{section}]"
        raise _Located(f"{where}: {what}: {msg}")

    def has(self, section, key):
        return self.cp.has_section(section) and self.cp.has_option(section, key)

    def get(self, section, key, default=None, required=False):
        if not self.has(section, key):
            if required:
                self.fail(section, None, f"missing required key {key!r}")
            return default
        return self.cp.get(section, key).strip()

    def num(self, section, key, default=None, required=False, cast=float):
        raw = self.get(section, key, None, required)
        if raw is None:
            return default
        try:
            return cast(raw)
        except ValueError:
            self.fail(section, key, f"expected a {'number' if cast is float else 'whole number'}, got {raw!r}")

    def vec(self, section, key, required=False):
        raw = self.get(section, key, None, required)
        if raw is None:
            return None
        try:
            return tuple(float(v) for v in raw.replace(",", " ").split())
        except ValueError:
            self.fail(section, key, f"expected a comma-separated list of numbers, got {raw!r}")

    def flag(self, section, key, default):
        if not self.has(section, key):
            return default
        try:
            return self.cp.getboolean(section, key)
        except ValueError:
            self.fail(section, key, f"expected true/false, got {self.get(section, key)!r}")

    def guard(self, section, key, fn):
        try:
            return fn()
        except _Located:
            raise
        except ConfigurationError as exc:
            msg = str(exc)
            if key is None:
                low = msg.lower()
                key = next((k for hint, k in _KEY_HINTS.items() if hint in low and self.has(section, k)), None)
            self.fail(section, key, msg)


def _policy_from_section(r: _Reader, sec: str) -> PolicySpec:
    kind = r.guard(sec, "kind", lambda: PolicyKind.parse(r.get(sec, "kind", required=True)))
    mode = (r.get(sec, "epsilon", "none") or "none").lower()
    if mode == "decay":
        eps = r.guard(sec, "gamma", lambda: EpsilonSchedule.decay(r.num(sec, "gamma", required=True)))
    elif mode == "constant":
        eps = r.guard(sec, "eps", lambda: EpsilonSchedule.constant(r.num(sec, "eps", required=True)))
    elif mode == "none":
        eps = EpsilonSchedule.none()
    else:
        r.fail(sec, "epsilon", f"unknown schedule {mode!r}; valid: none, constant, decay")
    return r.guard(
        sec,
        None,
        lambda: PolicySpec(
            kind,
            beta=r.num(sec, "beta", 2.0),
            rho=r.num(sec, "rho", 0.5),
            lam=r.num(sec, "lambda", 0.0),
            epsilon=eps,
        ),
    )


def scenario_from_text(text: str, source: str = "<memory>") -> Scenario:
    r = _Reader(text, source)
    S = "scenario"
    if not r.cp.has_section(S):
        raise ConfigurationError(f"{source}: missing [scenario] section")
    family = r.get(S, "family", required=True)
    model = r.guard(
        S,
        None,
        lambda: RewardModel(
            family,
            r.vec(S, "means", required=True),
            r.num(S, "scale", required=True),
            dof=r.num(S, "dof"),
            skew_shapes=r.vec(S, "skew_shapes"),
            standardize=r.flag(S, "standardize", False),
        ),
    )
    horizon = r.num(S, "horizon", 2000, cast=int)
    replicates = r.num(S, "replicates", 1000, cast=int)
    seed = r.num(S, "seed", 0, cast=int)
    if horizon < 2:
        r.fail(S, "horizon", f"must be at least 2, got {horizon}")
    if replicates < 1:
        r.fail(S, "replicates", f"must be at least 1, got {replicates}")
    if seed < 0:
        r.fail(S, "seed", f"must be non-negative, got {seed}")
    feedback = r.guard(S, "feedback", lambda: Feedback.parse(r.get(S, "feedback", "partial")))

    C = "conformal"
    tie = r.get(C, "tie_rule", "random")
    if tie not in ("random", "first"):
        r.fail(C, "tie_rule", f"unknown tie rule {tie!r}; valid: random, first")
    cp = r.guard(
        C,
        None,
        lambda: CPConfig(
            alpha=r.num(C, "alpha", 0.2),
            aci=r.flag(C, "aci", True),
            aci_step=r.num(C, "aci_step", 0.005),
            split_rule=r.get(C, "split_rule", "alternating"),
            predictor=r.get(C, "predictor", "constant"),
            ridge=r.num(C, "ridge", 0.0),
            tie_rule=tie,
        ),
    )
    if cp.predictor.value == "linear":
        r.fail(C, "predictor", "the simulations carry no contexts; use the constant predictor")

    known = {S, C}
    labels, policies = [], []
    for sec in r.cp.sections():
        if sec.startswith("policy."):
            labels.append(sec.split(".", 1)[1])
            policies.append(_policy_from_section(r, sec))
        elif sec not in known:
            r.fail(sec, None, "unknown section; expected [scenario], [conformal] or [policy.<label>]")
    if not policies:
        raise ConfigurationError(f"{source}: no [policy.<label>] sections")
    return Scenario(
        name=r.get(S, "name", Path(source).stem),
        model=model,
        horizon=horizon,
        replicates=replicates,
        seed=seed,
        feedback=feedback,
        cp=cp,
        policies=tuple(policies),
        source=source,
        labels=tuple(labels),
    )


def builtin_scenarios() -> list[str]:
    root = resources.files(__package__) / _SCENARIO_DIR
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".ini"))


def load_scenario(name_or_path) -> Scenario:
    """Load a scenario by built-in name or file path."""
    p = Path(str(name_or_path))
    if p.suffix == ".ini" or p.exists():
        if not p.is_file():
            raise ConfigurationError(f"scenario file not found: {p}")
        return scenario_from_text(p.read_text(), str(p))
    res = resources.files(__package__) / _SCENARIO_DIR / f"{name_or_path}.ini"
    if not res.is_file():
        valid = ", ".join(builtin_scenarios())
        raise ConfigurationError(f"unknown scenario {name_or_path!r}; built-in scenarios: {valid}")
    return scenario_from_text(res.read_text(), f"{name_or_path}.ini")


def parse_policy_name(text: str) -> tuple[PolicyKind, float | None]:
    """``"cp_bandit"`` or ``"cp_bandit:0.5"`` (the number sets lambda)."""
    head, _, tail = str(text).partition(":")
    kind = PolicyKind.parse(head)
    if not tail:
        return kind, None
    try:
        return kind, float(tail)
    except ValueError:
        raise ConfigurationError(f"bad policy parameter in {text!r}; expected e.g. cp_bandit:0.5") from None
