"""Deterministic synthetic campaign portfolios, hourly metric streams and incidents."""
from __future__ import annotations

import configparser
import enum
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional

import numpy as np

from .aggregation import ALL_CLUSTERS, ClusterKey, clusters_of
from .core import DAY, HOUR, CampaignRecord, CampaignStatus, HourlySeries, MediaChannel, TargetingCriterion

# 2015-06-22 00:00 UTC, a Monday
DEFAULT_ORIGIN = 1434931200
# Monday 00:00 UTC relative to the epoch (which fell on a Thursday)
_WEEK_OFFSET_HOURS = 72

CHANNEL_WEIGHTS = {
    MediaChannel.DISPLAY: 0.45,
    MediaChannel.VIDEO: 0.2,
    MediaChannel.MOBILE: 0.25,
    MediaChannel.SOCIAL: 0.1,
}
TARGETING_PROB = 0.4
UNSTABLE_KINDS = ("noisy", "eur", "paused", "noisy", "new", "stopped")


class IncidentKind(str, enum.Enum):
    TRANSIENT = "transient"
    PERSISTENT = "persistent"


@dataclass(frozen=True)
class Behavior:
    """Shape of one campaign's hourly metric.

    ``level * diurnal * weekly * lognormal noise``, rounded to whole counts.
    """

    kind: str  # "seasonal" or "noisy"
    level: float
    noise: float
    diurnal_amp: float = 0.5
    weekly_amp: float = 0.15
    phase_hours: float = 0.0
    serving_until: Optional[int] = None


@dataclass(frozen=True)
class Portfolio:
    campaigns: tuple
    behaviors: Mapping
    # ids built to pass both the setup rules and the correlation gate
    stable_ids: frozenset
    origin: int

    def __iter__(self):
        return iter(self.campaigns)

    def __len__(self):
        return len(self.campaigns)

    def by_id(self, cid: str) -> CampaignRecord:
        for c in self.campaigns:
            if c.id == cid:
                return c
        raise KeyError(cid)


def _rng(seed: int, *salt) -> np.random.Generator:
    words = [int(seed) & 0xFFFFFFFF]
    for s in salt:
        words.append(zlib.crc32(str(s).encode()) if not isinstance(s, int) else s & 0xFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(words))


def _targeting(rng) -> frozenset:
    picked = [t for t in TargetingCriterion if rng.random() < TARGETING_PROB]
    if not picked:
        picked = [list(TargetingCriterion)[rng.integers(len(TargetingCriterion))]]
    return frozenset(picked)


def generate_portfolio(
    n: int, stable_fraction: float, seed: int, origin: int = DEFAULT_ORIGIN, noise: float = 0.05
) -> Portfolio:
    """Build ``n`` campaigns; ``round(n * stable_fraction)`` of them are engineered stable.

    The others break a setup rule or carry uncorrelated noise.  Labels hold
    for stability checks between eight and sixteen days after ``origin``: the
    weekly correlation windows need eight days of history, and the late-starting
    ``new`` campaigns pass the duration rule from day sixteen on.
    """
    if n <= 0:
        raise ValueError("portfolio size must be > 0")
    if not 0 <= stable_fraction <= 1:
        raise ValueError("stable_fraction must lie in [0, 1]")
    if noise < 0:
        raise ValueError("noise must be >= 0")
    rng = _rng(seed, "portfolio")
    n_stable = int(round(n * stable_fraction))
    is_stable = np.zeros(n, dtype=bool)
    is_stable[rng.permutation(n)[:n_stable]] = True
    channels = list(CHANNEL_WEIGHTS)
    weights = np.array(list(CHANNEL_WEIGHTS.values()))

    campaigns, behaviors, stable_ids = [], {}, set()
    k_unstable = 0
    for i in range(n):
        cid = f"c{i:05d}"
        channel = channels[rng.choice(len(channels), p=weights)]
        targeting = _targeting(rng)
        level = float(np.exp(rng.normal(6.5, 0.6)))
        start = origin - int(rng.integers(30, 365)) * DAY - int(rng.integers(0, 24)) * HOUR
        seasonal = Behavior(
            "seasonal",
            level,
            noise=noise,
            diurnal_amp=float(rng.uniform(0.35, 0.55)),
            weekly_amp=float(rng.uniform(0.08, 0.2)),
            phase_hours=float(rng.uniform(0, 3)),
        )
        currency, status, end, behavior = "USD", CampaignStatus.ACTIVE, None, seasonal
        if is_stable[i]:
            stable_ids.add(cid)
        else:
            kind = UNSTABLE_KINDS[k_unstable % len(UNSTABLE_KINDS)]
            k_unstable += 1
            if kind == "noisy":
                behavior = Behavior("noisy", level, noise=1.0, diurnal_amp=0.0, weekly_amp=0.0)
            elif kind == "eur":
                currency = "EUR"
                behavior = Behavior("seasonal", level, noise, seasonal.diurnal_amp, seasonal.weekly_amp, -7.0)
            elif kind == "paused":
                status = CampaignStatus.PAUSED
                until = origin + int(rng.integers(21, 70)) * DAY
                behavior = Behavior("seasonal", level, noise, seasonal.diurnal_amp, seasonal.weekly_amp, seasonal.phase_hours, until)
            elif kind == "stopped":
                status = CampaignStatus.STOPPED
                end = origin + int(rng.integers(21, 70)) * DAY + int(rng.integers(0, 24)) * HOUR
            elif kind == "new":
                start = origin + int(rng.integers(9 * 24, 13 * 24)) * HOUR
        campaigns.append(CampaignRecord(cid, currency, status, start, end, targeting, channel))
        behaviors[cid] = behavior
    return Portfolio(tuple(campaigns), behaviors, frozenset(stable_ids), origin)


def diurnal_profile(hours: np.ndarray, amp: float, phase_hours: float = 0.0) -> np.ndarray:
    """Daily cycle peaking at 20:00 UTC plus ``phase_hours``."""
    hod = (hours // HOUR) % 24
    return 1.0 + amp * np.cos(2 * np.pi * (hod - 20.0 - phase_hours) / 24.0)


def weekly_profile(hours: np.ndarray, amp: float) -> np.ndarray:
    """Weekly cycle peaking mid-Wednesday, lowest over the weekend."""
    how = (hours // HOUR + _WEEK_OFFSET_HOURS) % 168
    return 1.0 + amp * np.cos(2 * np.pi * (how - 60.0) / 168.0)


def simulate_metric(
    c: CampaignRecord,
    start_hour: int,
    n_hours: int,
    seed: int,
    behavior: Optional[Behavior] = None,
) -> HourlySeries:
    """Hourly counts for one campaign; gaps outside its serving period."""
    if start_hour % HOUR:
        raise ValueError("start_hour must be hour-aligned")
    b = behavior or Behavior("seasonal", 500.0, 0.05)
    hours = start_hour + HOUR * np.arange(n_hours, dtype=np.int64)
    rng = _rng(seed, c.id, "metric", start_hour)
    z = rng.standard_normal(n_hours)
    noise = np.exp(b.noise * z - 0.5 * b.noise**2)
    v = b.level * diurnal_profile(hours, b.diurnal_amp, b.phase_hours) * weekly_profile(hours, b.weekly_amp) * noise
    v = np.rint(v)
    live = hours >= c.start - c.start % HOUR
    if c.end is not None:
        live &= hours < c.end
    if b.serving_until is not None:
        live &= hours < b.serving_until
    v[~live] = np.nan
    return HourlySeries(start_hour, v)


def simulate_portfolio(portfolio: Portfolio, start_hour: int, n_hours: int, seed: int) -> dict:
    return {
        c.id: simulate_metric(c, start_hour, n_hours, seed, portfolio.behaviors.get(c.id))
        for c in portfolio
    }


@dataclass(frozen=True)
class IncidentSpec:
    start: int
    duration: int
    severity: float
    scope: frozenset = frozenset(ALL_CLUSTERS)
    kind: IncidentKind = IncidentKind.TRANSIENT
    name: str = ""

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("incident duration must be > 0")
        if not 0 < self.severity <= 1:
            raise ValueError("incident severity must lie in (0, 1]")
        if self.start % HOUR:
            raise ValueError("incident start must be hour-aligned")
        if not self.scope:
            raise ValueError("incident scope must be non-empty")
        object.__setattr__(self, "scope", frozenset(self.scope))
        object.__setattr__(self, "kind", IncidentKind(self.kind))

    @property
    def end(self) -> int:
        return self.start + self.duration * HOUR

    def hours(self) -> range:
        return range(self.start, self.end, HOUR)


@dataclass(frozen=True)
class GroundTruth:
    anomalous: Mapping = field(default_factory=dict)  # (ClusterKey, p) -> frozenset of hours

    def hours(self, cluster: ClusterKey, p: int) -> frozenset:
        return self.anomalous.get((cluster, p), frozenset())

    def to_csv(self) -> str:
        rows = ["cluster,p,hour"]
        for (key, p), hours in sorted(self.anomalous.items()):
            rows.extend(f"{key},{p},{h}" for h in sorted(hours))
        return "\n".join(rows) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "GroundTruth":
        lines = text.splitlines()
        if not lines or lines[0] != "cluster,p,hour":
            raise ValueError("truth file must start with 'cluster,p,hour'")
        acc = {}
        for line in lines[1:]:
            if not line:
                continue
            key, p, h = line.split(",")
            acc.setdefault((ClusterKey.parse(key), int(p)), set()).add(int(h))
        return cls({k: frozenset(v) for k, v in acc.items()})


def truth_for(specs: Iterable[IncidentSpec], p_values=(1, 7)) -> GroundTruth:
    acc = {}
    for spec in specs:
        for key in spec.scope:
            for p in p_values:
                acc.setdefault((key, p), set()).update(spec.hours())
    return GroundTruth({k: frozenset(v) for k, v in acc.items()})


def inject_incidents(streams: Mapping[str, HourlySeries], portfolio, specs, p_values=(1, 7)):
    """Suppress affected campaigns by ``1 - severity`` during each incident.

    A campaign is affected when any of its clusters is in the incident scope.
    Returns ``(new_streams, truth)``; the inputs are left untouched.
    """
    specs = list(specs)
    if not specs:
        return dict(streams), GroundTruth({})
    spans = [s for s in streams.values() if len(s)]
    lo = min(s.start_hour for s in spans)
    hi = max(s.end_hour for s in spans)
    for spec in specs:
        if spec.start < lo or spec.end > hi:
            raise ValueError(f"incident {spec.name or spec.start} lies outside the simulated range")
    records = {c.id: c for c in portfolio}
    out = {}
    for cid, s in streams.items():
        keys = clusters_of(records[cid])
        factor = np.ones(len(s))
        for spec in specs:
            if keys & spec.scope:
                i0 = max((spec.start - s.start_hour) // HOUR, 0)
                i1 = min((spec.end - s.start_hour) // HOUR, len(s))
                if i0 < i1:
                    factor[i0:i1] *= 1.0 - spec.severity
        out[cid] = HourlySeries(s.start_hour, s.values * factor) if (factor != 1).any() else s
    return out, truth_for(specs, p_values)


# -- scenario files ---------------------------------------------------------------

DEFAULT_SCENARIO_TEXT = """\
# 14 weeks + 1 hour of raw data: one week of lag history, then a
# 2185-point week-over-week change metric (168 training + 2017 scored).
[scenario]
campaigns = 200
stable_fraction = 0.5
origin = 1434931200
horizon_hours = 2353
seed = 20150622
eval_cluster = channel:display
metric = campaign.impressions
noise = 0.05

[incident.transient-1]
start_hour = 500
duration = 5
severity = 0.5
scope = all
kind = transient

[incident.program-error-1]
start_hour = 900
duration = 12
severity = 0.4
scope = all
kind = persistent

[incident.program-error-2]
start_hour = 1300
duration = 168
severity = 0.35
scope = all
kind = persistent

[incident.transient-2]
start_hour = 1950
duration = 9
severity = 0.6
scope = all
kind = transient
"""


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Scenario:
    campaigns: int = 200
    stable_fraction: float = 0.5
    origin: int = DEFAULT_ORIGIN
    horizon_hours: int = 2353
    seed: int = 0
    eval_cluster: ClusterKey = ClusterKey.channel("display")
    metric: str = "campaign.impressions"
    incidents: tuple = ()
    noise: float = 0.05  # log-scale noise of the seasonal campaigns

    def portfolio(self) -> Portfolio:
        return generate_portfolio(self.campaigns, self.stable_fraction, self.seed, self.origin, self.noise)

    def simulate(self):
        """(portfolio, streams with incidents injected, truth)."""
        portfolio = self.portfolio()
        streams = simulate_portfolio(portfolio, self.origin, self.horizon_hours, self.seed)
        streams, truth = inject_incidents(streams, portfolio, self.incidents)
        return portfolio, streams, truth


def _scope(text: str) -> frozenset:
    text = text.strip()
    if text == "all":
        return frozenset(ALL_CLUSTERS)
    return frozenset(ClusterKey.parse(t) for t in text.split(",") if t.strip())


def parse_scenario(text: str) -> Scenario:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ScenarioError(str(e)) from e
    if "scenario" not in cp:
        raise ScenarioError("missing [scenario] section")
    sec = cp["scenario"]
    known = {"campaigns", "stable_fraction", "origin", "horizon_hours", "seed", "eval_cluster", "metric", "noise"}
    unknown = set(sec) - known
    if unknown:
        raise ScenarioError(f"unknown scenario keys: {sorted(unknown)}")
    incidents = []
    try:
        origin = sec.getint("origin", DEFAULT_ORIGIN)
        if origin % HOUR:
            raise ScenarioError("origin must be hour-aligned")
        for name in cp.sections():
            if name == "scenario":
                continue
            if not name.startswith("incident."):
                raise ScenarioError(f"unknown section [{name}]")
            s = cp[name]
            extra = set(s) - {"start_hour", "duration", "severity", "scope", "kind"}
            if extra:
                raise ScenarioError(f"[{name}]: unknown keys {sorted(extra)}")
            incidents.append(
                IncidentSpec(
                    start=origin + s.getint("start_hour") * HOUR,
                    duration=s.getint("duration"),
                    severity=s.getfloat("severity"),
                    scope=_scope(s.get("scope", "all")),
                    kind=s.get("kind", "transient"),
                    name=name.split(".", 1)[1],
                )
            )
        scenario = Scenario(
            campaigns=sec.getint("campaigns", 200),
            stable_fraction=sec.getfloat("stable_fraction", 0.5),
            origin=origin,
            horizon_hours=sec.getint("horizon_hours", 2353),
            seed=sec.getint("seed", 0),
            eval_cluster=ClusterKey.parse(sec.get("eval_cluster", "channel:display")),
            metric=sec.get("metric", "campaign.impressions"),
            incidents=tuple(incidents),
            noise=sec.getfloat("noise", 0.05),
        )
    except ScenarioError:
        raise
    except (ValueError, TypeError) as e:
        raise ScenarioError(str(e)) from e
    if scenario.campaigns <= 0 or scenario.horizon_hours <= 0:
        raise ScenarioError("campaigns and horizon_hours must be > 0")
    if not 0 <= scenario.stable_fraction <= 1 or scenario.noise < 0:
        raise ScenarioError("stable_fraction must lie in [0, 1] and noise must be >= 0")
    for inc in scenario.incidents:
        if inc.start < origin or inc.end > origin + scenario.horizon_hours * HOUR:
            raise ScenarioError(f"incident {inc.name} lies outside the horizon")
    return scenario


def load_scenario(path) -> Scenario:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ScenarioError(f"cannot read scenario {path}: {e}") from e
    return parse_scenario(text)


def default_scenario() -> Scenario:
    return parse_scenario(DEFAULT_SCENARIO_TEXT)


def format_scenario(sc: Scenario) -> str:
    """Canonical text form; parses back to an equal Scenario."""
    lines = [
        "[scenario]",
        f"campaigns = {sc.campaigns}",
        f"stable_fraction = {sc.stable_fraction!r}",
        f"origin = {sc.origin}",
        f"horizon_hours = {sc.horizon_hours}",
        f"seed = {sc.seed}",
        f"eval_cluster = {sc.eval_cluster}",
        f"metric = {sc.metric}",
        f"noise = {sc.noise!r}",
    ]
    for i, inc in enumerate(sc.incidents):
        scope = "all" if inc.scope == frozenset(ALL_CLUSTERS) else ",".join(str(k) for k in sorted(inc.scope))
        lines += [
            "",
            f"[incident.{inc.name or i}]",
            f"start_hour = {(inc.start - sc.origin) // HOUR}",
            f"duration = {inc.duration}",
            f"severity = {inc.severity!r}",
            f"scope = {scope}",
            f"kind = {inc.kind.value}",
        ]
    return "\n".join(lines) + "\n"
