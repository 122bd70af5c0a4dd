"""Scenario configuration: flat key-value files with validated defaults.

The file format is one `key = value` pair per line, `#` comments, blank lines
ignored, lists comma-separated. Every key is optional; omitted keys take the
defaults below (32-element IRS, 33 dBm transmit power over 1 MHz against
-169 dBm/Hz noise, -20 dB reference path loss, users on a 5 m disc whose
center sits 10 m from the IRS and 105 m from the BS).
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

from .errors import ConfigError

SCHEMES = (
    "proposed-noiseless",
    "proposed-lmmse",
    "benchmark",
    "phase2-onoff",
    "phase2-random",
)

EXTRA_POLICIES = ("phaseI", "phaseII", "even")

PHASE3_G1_MODES = ("estimated", "perfect")


@dataclass(frozen=True)
class ScenarioConfig:
    """Fully validated Monte-Carlo scenario."""

    K: int = 8
    N: int = 32
    M: int = 32
    tau1: int | None = None          # None = phase minimum
    tau2: int | None = None
    tau3: int | None = None
    extra_slots: int = 0
    extra_policy: str = "phaseII"
    power_dbm: float = 33.0
    bandwidth_hz: float = 1e6
    noise_psd_dbm_hz: float = -169.0
    beta0_db: float = -20.0
    d0_m: float = 1.0
    d_bs_irs_m: float = 100.0
    user_center_d_irs_m: float = 10.0
    user_center_d_bs_m: float = 105.0
    user_radius_m: float = 5.0
    alpha_direct: float = 4.2
    alpha_irs_user: float = 2.1
    alpha_bs_irs: float = 2.2
    corr_bs_direct: float = 0.5
    corr_bs_reflect: float = 0.5
    corr_irs_reflect: float = 0.5
    corr_irs_user: float = 0.5
    schemes: tuple[str, ...] = ("proposed-lmmse",)
    trials: int = 100
    seed: int = 1
    threads: int = 1
    repetitions: int = 1
    r_var_n_factor: bool = True
    prior_draws: int = 10_000
    prior_cap_scale: float = 10.0
    phase3_g1: str = "estimated"

    def validate(self) -> "ScenarioConfig":
        def require(cond: bool, field: str, msg: str):
            if not cond:
                raise ConfigError(field, msg)

        for name in ("K", "N", "M"):
            require(getattr(self, name) >= 1, name, "must be a positive integer")
        for name in ("tau1", "tau2", "tau3"):
            v = getattr(self, name)
            require(v is None or v >= 1, name, "must be a positive integer or omitted")
        require(self.extra_slots >= 0, "extra_slots", "must be nonnegative")
        require(self.extra_policy in EXTRA_POLICIES, "extra_policy", f"must be one of {EXTRA_POLICIES}")
        for name in ("bandwidth_hz", "d0_m", "d_bs_irs_m", "user_center_d_irs_m",
                     "user_center_d_bs_m", "alpha_direct", "alpha_irs_user", "alpha_bs_irs"):
            require(getattr(self, name) > 0, name, "must be positive")
        require(self.user_radius_m >= 0, "user_radius_m", "must be nonnegative")
        for name in ("corr_bs_direct", "corr_bs_reflect", "corr_irs_reflect", "corr_irs_user"):
            require(abs(getattr(self, name)) < 1, name, "must have modulus below 1")
        for s in self.schemes:
            require(s in SCHEMES, "scheme", f"unknown scheme {s!r}; known: {SCHEMES}")
        require(len(self.schemes) >= 1, "scheme", "at least one scheme is required")
        require(self.trials >= 1, "trials", "must be at least 1")
        require(self.threads >= 1, "threads", "must be at least 1")
        require(self.repetitions >= 1, "repetitions", "must be at least 1")
        require(self.prior_draws >= 1000, "prior_draws", "must be at least 1000")
        require(self.prior_cap_scale > 0, "prior_cap_scale", "must be positive")
        require(self.phase3_g1 in PHASE3_G1_MODES, "phase3_g1", f"must be one of {PHASE3_G1_MODES}")
        return self


def _parse_bool(field: str, raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "on", "yes"):
        return True
    if low in ("0", "false", "off", "no"):
        return False
    raise ConfigError(field, f"cannot parse boolean from {raw!r}")


def _parse_int(field: str, raw: str) -> int:
    try:
        return int(float(raw)) if float(raw) == int(float(raw)) else int(raw)
    except ValueError as exc:
        raise ConfigError(field, f"cannot parse integer from {raw!r}") from exc


def _parse_optional_int(field: str, raw: str) -> int | None:
    if raw.strip().lower() in ("minimum", "min", "none"):
        return None
    return _parse_int(field, raw)


def _parse_float(field: str, raw: str) -> float:
    try:
        return float(raw)
    except ValueError as exc:
        raise ConfigError(field, f"cannot parse number from {raw!r}") from exc


def _parse_schemes(field: str, raw: str) -> tuple[str, ...]:
    return tuple(s.strip() for s in raw.split(",") if s.strip())


_PARSERS = {
    "K": _parse_int, "N": _parse_int, "M": _parse_int,
    "tau1": _parse_optional_int, "tau2": _parse_optional_int, "tau3": _parse_optional_int,
    "extra_slots": _parse_int,
    "extra_policy": lambda f, r: r.strip(),
    "power_dbm": _parse_float, "bandwidth_hz": _parse_float, "noise_psd_dbm_hz": _parse_float,
    "beta0_db": _parse_float, "d0_m": _parse_float, "d_bs_irs_m": _parse_float,
    "user_center_d_irs_m": _parse_float, "user_center_d_bs_m": _parse_float,
    "user_radius_m": _parse_float,
    "alpha_direct": _parse_float, "alpha_irs_user": _parse_float, "alpha_bs_irs": _parse_float,
    "corr_bs_direct": _parse_float, "corr_bs_reflect": _parse_float,
    "corr_irs_reflect": _parse_float, "corr_irs_user": _parse_float,
    "scheme": _parse_schemes,
    "trials": _parse_int, "seed": _parse_int, "threads": _parse_int,
    "repetitions": _parse_int,
    "r_var_n_factor": _parse_bool,
    "prior_draws": _parse_int, "prior_cap_scale": _parse_float,
    "phase3_g1": lambda f, r: r.strip(),
}

_FIELD_BY_KEY = {k: ("schemes" if k == "scheme" else k) for k in _PARSERS}

_VALID_FIELDS = {f.name for f in fields(ScenarioConfig)}
assert set(_FIELD_BY_KEY.values()) <= _VALID_FIELDS


def parse_config_text(text: str) -> ScenarioConfig:
    """Parse config text; unknown keys and malformed lines raise ConfigError."""
    overrides = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {stripped!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _PARSERS:
            raise ConfigError(key, "unknown configuration key")
        overrides[_FIELD_BY_KEY[key]] = _PARSERS[key](key, raw)
    return replace(ScenarioConfig(), **overrides).validate()


def load_config(path) -> ScenarioConfig:
    """Load and validate a scenario file; an empty file yields all defaults."""
    with open(path, "r", encoding="utf-8") as f:
        return parse_config_text(f.read())
