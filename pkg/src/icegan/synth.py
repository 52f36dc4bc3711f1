"""Synthetic SCADA generator.

Produces labeled raw records in the canonical column layout with a normal
operating regime and an icing regime: power output cut by a constant factor,
sub-zero ambient temperature, slightly depressed generator speed. Icing rows
are placed at low wind so their power stays in the same band as the
strong-rule normal candidates; nothing separates the classes on power alone.

Everything is a pure function of the config, so equal configs give byte
identical output files.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import ScadaRecord, manifest, raw_column_names, validate_values

# icing rows are drawn from winds below this cap so that iced power output
# stays mostly under the strong-rule threshold of 2
ICING_WIND_CAP = 7.5

# stand-in second turbine: different encryption scales on the electrical and
# thermal channels, strong enough to break a source-only classifier while
# remaining a plain per-column change of units
TARGET_SHIFT = {
    "generator_speed": (1.2, 0.0),
    "power": (1.7, 0.0),
    "environment_tmp": (1.0, 10.0),
    "int_tmp": (1.0, 10.0),
    "pitch1_ng5_tmp": (1.0, 2.5),
    "pitch2_ng5_tmp": (1.0, 2.5),
    "pitch3_ng5_tmp": (1.0, 2.5),
    "pitch1_ng5_DC": (1.0, 0.2),
    "pitch2_ng5_DC": (1.0, 0.2),
    "pitch3_ng5_DC": (1.0, 0.2),
}

WIND_MEAN = 5.0
WIND_PHI = 0.98      # AR(1) persistence of the wind series
WIND_SHOCK = 0.35    # innovation scale, fixed so low-wind rows always exist
RATED_POWER = 10.0   # encrypted-unit saturation level
CURVE_KNEE = 12.0    # wind speed scale of the power curve
GEAR_RATIO = 1.2     # generator speed per unit wind speed
ICING_GEAR_FACTOR = 0.85
MEAN_WINDOW = 25.0   # seconds of trailing window for wind_direction_mean


@dataclass
class SynthConfig:
    n_records: int = 50000
    icing_fraction: float = 0.06
    invalid_fraction: float = 0.05
    noise_scale: float = 1.0
    icing_power_factor: float = 0.55
    domain_shift: dict = field(default_factory=dict)  # column -> (gain, offset)
    seed: int = 0
    start_time: float = 1546300800.0  # epoch seconds, an arbitrary winter day
    cadence: float = 5.0              # seconds between consecutive records


def _validate(cfg: SynthConfig) -> None:
    if cfg.n_records < 1:
        raise ValueError(f"n_records must be positive, got {cfg.n_records}")
    for name in ("icing_fraction", "invalid_fraction"):
        v = getattr(cfg, name)
        if not (0.0 <= v <= 1.0):
            raise ValueError(f"{name} must lie in [0, 1], got {v}")
    if cfg.icing_fraction + cfg.invalid_fraction > 1.0:
        raise ValueError("icing_fraction + invalid_fraction exceeds 1")
    if not (0.0 < cfg.icing_power_factor < 1.0):
        raise ValueError(
            f"icing_power_factor must lie in (0, 1), got {cfg.icing_power_factor}")
    if cfg.noise_scale < 0.0:
        raise ValueError(f"noise_scale must be non-negative, got {cfg.noise_scale}")
    if cfg.cadence <= 0.0:
        raise ValueError(f"cadence must be positive, got {cfg.cadence}")
    known = set(raw_column_names())
    for name in cfg.domain_shift:
        if name not in known:
            raise ValueError(f"domain_shift references unknown column {name!r}")


def _wind_series(rng: np.random.Generator, n: int) -> np.ndarray:
    shock = rng.normal(0.0, WIND_SHOCK, size=n)
    v = np.empty(n)
    stat = np.sqrt(1.0 - WIND_PHI * WIND_PHI)
    v[0] = WIND_MEAN + shock[0] / stat
    for i in range(1, n):
        v[i] = WIND_MEAN + WIND_PHI * (v[i - 1] - WIND_MEAN) + shock[i]
    return np.clip(v, 0.3, 25.0)


def _pick_icing_rows(rng: np.random.Generator, v: np.ndarray, n_icing: int) -> np.ndarray:
    low = np.flatnonzero(v < ICING_WIND_CAP)
    if low.size >= n_icing:
        return rng.choice(low, size=n_icing, replace=False)
    # tiny configs: take the lowest winds outright
    return np.argsort(v, kind="stable")[:n_icing]


def _trailing_direction_mean(t: np.ndarray, wd: np.ndarray) -> np.ndarray:
    cs = np.concatenate([[0.0], np.cumsum(wd)])
    start = np.searchsorted(t, t - MEAN_WINDOW, side="left")
    idx = np.arange(t.size)
    return (cs[idx + 1] - cs[start]) / (idx + 1 - start)


def generate(config: SynthConfig | None = None) -> list[ScadaRecord]:
    """All records in timestamp order, icing and invalid counts exact."""
    cfg = config or SynthConfig()
    _validate(cfg)
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_records
    ns = cfg.noise_scale
    t = cfg.start_time + cfg.cadence * np.arange(n)

    n_icing = int(round(cfg.icing_fraction * n))
    n_invalid = int(round(cfg.invalid_fraction * n))

    v = _wind_series(rng, n)
    icing = np.zeros(n, dtype=bool)
    if n_icing:
        icing[_pick_icing_rows(rng, v, n_icing)] = True

    p_clean = RATED_POWER * v ** 3 / (v ** 3 + CURVE_KNEE ** 3)
    p = p_clean * (1.0 + rng.normal(0.0, 0.05 * ns, n))
    p[icing] *= cfg.icing_power_factor

    g = GEAR_RATIO * v * (1.0 + rng.normal(0.0, 0.03 * ns, n))
    g[icing] *= ICING_GEAR_FACTOR

    t_env = rng.normal(6.0, 8.0, n)
    t_env[icing] = -0.5 - np.abs(rng.normal(0.0, 3.5, n))[icing]
    t_int = t_env + 12.0 + rng.normal(0.0, 2.0 * ns, n)

    wd = ((rng.uniform(-180.0, 180.0) + np.cumsum(rng.normal(0.0, 2.0, n))
           + 180.0) % 360.0) - 180.0
    wd_mean = _trailing_direction_mean(t, wd)
    yaw = wd + rng.normal(0.0, 5.0, n)
    yaw_speed = rng.normal(0.0, 0.5, n)

    # engagement sits near the top of the wind band: pitch stays flat for
    # nearly every record, as below-rated operation would have it
    pitch_base = 2.0 * np.maximum(v - 12.0, 0.0)
    speed_base = rng.normal(0.0, 0.4 * ns, n)
    moto_base = 42.0 + 1.5 * np.abs(speed_base) + rng.normal(0.0, 3.0 * ns, n)

    cols: dict = {
        "wind_speed": v,
        "generator_speed": g,
        "power": p,
        "wind_direction": wd,
        "wind_direction_mean": wd_mean,
        "yaw_position": yaw,
        "yaw_speed": yaw_speed,
        "acc_x": rng.normal(0.0, 1.0, n) * 0.02 * (1.0 + v / 10.0),
        "acc_y": rng.normal(0.0, 1.0, n) * 0.02 * (1.0 + v / 10.0),
        "environment_tmp": t_env,
        "int_tmp": t_int,
    }
    for b in (1, 2, 3):
        cols[f"pitch{b}_angle"] = (pitch_base * (1.0 + rng.normal(0.0, 0.02 * ns, n))
                                   + np.abs(rng.normal(0.0, 0.3 * ns, n)))
        cols[f"pitch{b}_speed"] = speed_base + rng.normal(0.0, 0.05 * ns, n)
        cols[f"pitch{b}_moto_tmp"] = moto_base + rng.normal(0.0, 0.8 * ns, n)
        cols[f"pitch{b}_ng5_tmp"] = 35.0 + 0.25 * t_env + rng.normal(0.0, 2.0 * ns, n)
        cols[f"pitch{b}_ng5_DC"] = 5.0 + 0.15 * p + rng.normal(0.0, 0.6 * ns, n)

    for name, (gain, offset) in sorted(cfg.domain_shift.items()):
        cols[name] = cols[name] * gain + offset

    # all regime values must sit inside the manifest bounds: injected blanks
    # below have to remain the only source of invalid rows
    for col in manifest():
        cols[col.name] = np.clip(cols[col.name], col.lower, col.upper)

    if n_invalid:
        names = raw_column_names()
        rows = rng.choice(n, size=n_invalid, replace=False)
        counts = rng.integers(1, 4, size=n_invalid)
        for row, k in zip(rows, counts):
            for j in rng.choice(len(names), size=k, replace=False):
                cols[names[j]][row] = np.nan

    order = raw_column_names()
    series = [cols[name] for name in order]
    records = []
    for i in range(n):
        values = {name: float(s[i]) for name, s in zip(order, series)}
        records.append(ScadaRecord(
            timestamp=float(t[i]),
            values=values,
            label=int(icing[i]),
            invalid=not validate_values(values),
        ))
    return records
