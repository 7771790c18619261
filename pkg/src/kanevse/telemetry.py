"""Synthetic 1 Hz charger telemetry with additive attack injection.

Normal operation follows the battery terminal model ``V = V_oc - I*R - K(T)*I``
with ``P = V*I``; a two-state (idle/charging) session process drives the current.
Attacks add a kind-specific current signature ``A(t)`` and re-derive the other
three measurements from it, so every row stays physically consistent.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import ATTACK, NORMAL, TelemetryDataset, concat

ATTACK_KINDS = ("backdoor", "cryptojacking", "syn-flood", "syn-stealth", "tcp-flood", "dos", "stealthy-mimic")

DEFAULT_MIX = {
    "backdoor": 0.10,
    "cryptojacking": 0.20,
    "syn-flood": 0.15,
    "syn-stealth": 0.10,
    "tcp-flood": 0.15,
    "dos": 0.20,
    "stealthy-mimic": 0.10,
}

SEGMENT_SECONDS = 600
MEAN_IDLE_SECONDS = 120
MEAN_CHARGING_SECONDS = 600


class SimulationError(ValueError):
    pass


@dataclass
class ChargerProfile:
    v_oc: float = 5.2
    r_internal: float = 0.12
    k_temp: float = 0.03
    r_shunt: float = 0.1
    i_idle: float = 0.35
    i_session: float = 0.75
    noise_shunt: float = 0.002
    noise_bus: float = 0.02
    noise_current: float = 0.01
    # None -> derived from the current and bus noise
    noise_power: float = None

    def __post_init__(self):
        if min(self.r_internal, self.k_temp, self.r_shunt) <= 0:
            raise SimulationError("resistances must be positive")
        if not self.i_idle < self.i_session:
            raise SimulationError("idle current must be below session current")
        if min(self.noise_shunt, self.noise_bus, self.noise_current) < 0:
            raise SimulationError("noise scales must be non-negative")
        if self.noise_power is None:
            self.noise_power = math.hypot(self.v_oc * self.noise_current, self.i_session * self.noise_bus)

    @classmethod
    def noiseless(cls, **kw) -> "ChargerProfile":
        return cls(noise_shunt=0.0, noise_bus=0.0, noise_current=0.0, noise_power=0.0, **kw)

    def bus_voltage(self, current):
        return self.v_oc - current * (self.r_internal + self.k_temp)


@dataclass
class AttackSpec:
    kind: str
    magnitude: float = 1.0
    start: int = 0
    duration: int = 1

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise SimulationError(f"unknown attack kind {self.kind!r}")
        if self.duration < 1:
            raise SimulationError("attack duration must be >= 1 s")
        if self.magnitude < 0:
            raise SimulationError("attack magnitude must be >= 0")
        if self.start < 0:
            raise SimulationError("attack start must be >= 0")


@dataclass
class SimConfig:
    seed: int = 42
    n_normal_seconds: int = 1436
    n_attack_seconds: int = 10094
    mix: dict = field(default_factory=lambda: dict(DEFAULT_MIX))
    profile: ChargerProfile = field(default_factory=ChargerProfile)

    def validate(self) -> None:
        if self.n_normal_seconds < 100 or self.n_attack_seconds < 100:
            raise SimulationError("need at least 100 normal and 100 attack seconds")
        unknown = set(self.mix) - set(ATTACK_KINDS)
        if unknown:
            raise SimulationError(f"unknown attack kinds in mix: {sorted(unknown)}")
        if any(v < 0 for v in self.mix.values()) or not math.isclose(sum(self.mix.values()), 1.0, abs_tol=1e-9):
            raise SimulationError(f"mix fractions must be non-negative and sum to 1, got {self.mix}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mix"] = {k: self.mix[k] for k in sorted(self.mix)}
        return d

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def _measure(profile: ChargerProfile, current: np.ndarray, rng: np.random.Generator):
    n = len(current)
    bus = profile.bus_voltage(current) + rng.normal(0.0, 1.0, n) * profile.noise_bus
    shunt = current * profile.r_shunt + rng.normal(0.0, 1.0, n) * profile.noise_shunt
    power = bus * current + rng.normal(0.0, 1.0, n) * profile.noise_power
    return np.column_stack([shunt, bus, current, power])


def session_states(seconds: int, rng: np.random.Generator) -> np.ndarray:
    """Boolean per second, True while charging; epoch lengths are geometric."""
    charging = rng.random() < MEAN_CHARGING_SECONDS / (MEAN_IDLE_SECONDS + MEAN_CHARGING_SECONDS)
    out = np.empty(seconds, dtype=bool)
    t = 0
    while t < seconds:
        mean = MEAN_CHARGING_SECONDS if charging else MEAN_IDLE_SECONDS
        length = int(rng.geometric(1.0 / mean))
        out[t : t + length] = charging
        t += length
        charging = not charging
    return out


def gen_normal(profile: ChargerProfile, seconds: int, seed) -> TelemetryDataset:
    if int(seconds) != seconds or seconds < 1:
        raise SimulationError(f"invalid duration {seconds!r}")
    rng = np.random.default_rng(seed)
    states = session_states(int(seconds), rng)
    current = np.where(states, profile.i_session, profile.i_idle)
    current = current + rng.normal(0.0, 1.0, len(current)) * profile.noise_current
    features = _measure(profile, current, rng)
    return TelemetryDataset(features, np.full(len(current), NORMAL), kinds=np.full(len(current), "normal", dtype=object))


def attack_vector(kind: str, current: np.ndarray, profile: ChargerProfile, rng: np.random.Generator) -> np.ndarray:
    """Unit-magnitude current perturbation for ``kind`` over a window starting at t = 0."""
    t = np.arange(len(current))
    if kind == "cryptojacking":
        return np.full(len(t), 0.30)
    if kind == "syn-flood":
        return np.where((t // 2) % 2 == 0, 0.15, -0.15)
    if kind == "tcp-flood":
        # same square wave, half a period out of phase
        return np.where(((t + 2) // 2) % 2 == 0, 0.15, -0.15)
    if kind == "dos":
        jitter = rng.choice([-0.08, 0.08], size=len(t))
        return -0.9 * (current - profile.i_idle) + jitter
    if kind == "backdoor":
        return np.where(t % 17 == 0, 0.5, 0.0)
    if kind in ("syn-stealth", "stealthy-mimic"):
        return np.full(len(t), 0.05)
    raise SimulationError(f"unknown attack kind {kind!r}")


def inject_attack(samples: TelemetryDataset, spec: AttackSpec, seed, profile: ChargerProfile = None) -> TelemetryDataset:
    """Apply ``X_a = X + A(t)`` inside ``[start, start + duration)``.

    The current gets ``magnitude * A(t)``; bus voltage, shunt voltage and power
    move by exactly the amounts their defining relations imply, which leaves
    each row's measurement noise untouched.
    """
    profile = profile or ChargerProfile()
    stop = spec.start + spec.duration
    if stop > len(samples):
        raise SimulationError(f"attack window [{spec.start}, {stop}) exceeds stream of {len(samples)} s")
    rng = np.random.default_rng(seed)
    feats = samples.features.copy()
    window = slice(spec.start, stop)
    current = feats[window, 2]
    delta = spec.magnitude * attack_vector(spec.kind, current, profile, rng)
    new_current = current + delta
    new_bus = feats[window, 1] - delta * (profile.r_internal + profile.k_temp)
    feats[window, 0] += delta * profile.r_shunt
    feats[window, 3] += new_bus * new_current - feats[window, 1] * current
    feats[window, 1] = new_bus
    feats[window, 2] = new_current
    labels = samples.labels.copy()
    labels[window] = ATTACK
    kinds = samples.kinds.copy()
    kinds[window] = spec.kind
    return TelemetryDataset(feats, labels, samples.timestamps.copy(), kinds, samples.provenance)


def _apportion(total: int, mix: dict) -> dict:
    """Largest-remainder split of ``total`` seconds across the mix."""
    kinds = [k for k in ATTACK_KINDS if mix.get(k, 0) > 0]
    raw = {k: total * mix[k] for k in kinds}
    out = {k: int(math.floor(v)) for k, v in raw.items()}
    short = total - sum(out.values())
    for k in sorted(kinds, key=lambda k: (-(raw[k] - out[k]), ATTACK_KINDS.index(k)))[:short]:
        out[k] += 1
    return out


def _chunks(seconds: int) -> list:
    n = seconds // SEGMENT_SECONDS
    sizes = [SEGMENT_SECONDS] * n
    if seconds % SEGMENT_SECONDS:
        sizes.append(seconds % SEGMENT_SECONDS)
    return sizes


def plan_segments(cfg: SimConfig) -> list:
    """Ordered ``(kind, seconds)`` pairs, before shuffling; kind is "normal" for benign."""
    plan = [("normal", s) for s in _chunks(cfg.n_normal_seconds)]
    for kind, seconds in _apportion(cfg.n_attack_seconds, cfg.mix).items():
        plan += [(kind, s) for s in _chunks(seconds)]
    return plan


def gen_segment(cfg: SimConfig, position: int, kind: str, seconds: int) -> TelemetryDataset:
    """One segment; its seeds depend only on the config seed and the plan position."""
    base = gen_normal(cfg.profile, seconds, [cfg.seed, position, 0])
    if kind == "normal":
        return base
    return inject_attack(base, AttackSpec(kind, 1.0, 0, seconds), [cfg.seed, position, 1], cfg.profile)


def gen_dataset(cfg: SimConfig = None) -> TelemetryDataset:
    cfg = cfg or SimConfig()
    cfg.validate()
    plan = plan_segments(cfg)
    segments = [gen_segment(cfg, pos, kind, seconds) for pos, (kind, seconds) in enumerate(plan)]
    order = np.random.default_rng([cfg.seed, 2**31]).permutation(len(plan))
    ds = concat([segments[i] for i in order], provenance=f"telemetry-sim sha256:{cfg.digest()}")
    ds.timestamps = np.arange(len(ds), dtype=np.int64)
    start = 0
    layout = []
    for i in order:
        kind, seconds = plan[i]
        layout.append({"kind": kind, "start": start, "seconds": seconds})
        start += seconds
    ds.extra["segments"] = layout
    return ds


def provenance_document(cfg: SimConfig, ds: TelemetryDataset) -> dict:
    n_normal, n_attack = ds.class_counts()
    return {
        "generator": "kanevse.telemetry",
        "config": cfg.to_dict(),
        "config_sha256": cfg.digest(),
        "counts": {"normal": n_normal, "attack": n_attack},
        "segments": ds.extra.get("segments", []),
    }
