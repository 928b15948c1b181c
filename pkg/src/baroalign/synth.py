"""
Synthetic multi-device sessions with known clock ground truth.

One shared "world" is simulated per session: an ambient pressure signal
(weather baseline and drift, altitude changes) and a stream of short motion
bursts. Each device samples the world through its own clock

    device_time = offset + (1 + skew) * world_time

and its own sensor imperfections (absolute pressure offset, relative noise,
accelerometer noise and quantization, a free-running accelerometer clock
logged through FIFO readouts).

The reference device (index 0) is switched on first and off last, so every
other device's recording lies inside it.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .model import ClockModel, FifoReadout, Recording, SensorTrace, TraceKind

ATM_PA = 101325.0
#: Inter-day standard deviation of ambient pressure at one location.
INTERDAY_SIGMA_PA = 928.0
#: Quartz frequency error per kelvin away from 25 °C.
TEMPERATURE_PPM_PER_K = 0.036


@dataclass(frozen=True)
class PressureWorldConfig:
    baseline_sd_pa: float = INTERDAY_SIGMA_PA
    weather_drift_pa_per_h: float = 60.0
    altitude_event_rate_per_h: float = 12.0
    altitude_step_pa: tuple[float, float] = (30.0, 300.0)
    ramp_duration_s: tuple[float, float] = (10.0, 90.0)
    #: Shared small fluctuations (doors, ventilation, body height).
    ambient_fluct_sd_pa: float = 3.0


@dataclass(frozen=True)
class PressureSensorConfig:
    absolute_offset_sd_pa: float = 33.0
    #: Offsets are truncated here, modelling a hard accuracy bound.
    absolute_offset_bound_pa: float = 45.0
    relative_noise_sd_pa: float = 4.0
    rate_hz: float = 10.0


@dataclass(frozen=True)
class AccelSensorConfig:
    name: str
    rate_hz: float
    lsb_g: float
    noise_sd_g: float
    externally_triggered: bool = True
    #: Free-running sensors only: relative error of the internal oscillator.
    clock_error_range: float = 0.0
    fifo_readout_interval_s: float = 0.1
    startup_latency_s: float = 0.0


HIGH_RES = AccelSensorConfig("adxl355", 128.0, 4e-6, 2e-4, True, startup_latency_s=0.002)
STANDARD_RES = AccelSensorConfig(
    "lis2dh", 200.0, 4e-3, 2e-3, False, clock_error_range=0.02, startup_latency_s=0.004
)


@dataclass(frozen=True)
class MotionConfig:
    event_rate_per_min: float = 30.0
    duration_s: tuple[float, float] = (0.3, 1.5)
    freq_hz: tuple[float, float] = (2.0, 20.0)
    amplitude_g: float = 0.3
    attenuation: tuple[float, float] = (0.4, 1.0)
    #: Per-device timing jitter of each burst is uniform in +-jitter_s.
    jitter_s: float = 0.01


@dataclass(frozen=True)
class ClockConfig:
    offset_range_s: float = 60.0
    skew_range_ppm: float = 20.0
    #: Fixed per-device skews in ppm; overrides skew_range_ppm when given.
    skews_ppm: tuple[float, ...] | None = None
    temperature_skew: bool = False
    temperature_range_c: tuple[float, float] = (20.0, 34.0)


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str = "active"
    duration_s: float = 3600.0
    n_devices: int = 2
    pressure_world: PressureWorldConfig = PressureWorldConfig()
    pressure_sensor: PressureSensorConfig = PressureSensorConfig()
    accel_sensors: tuple[AccelSensorConfig, ...] = (HIGH_RES, STANDARD_RES)
    motion: MotionConfig = MotionConfig()
    clock: ClockConfig = ClockConfig()
    #: Non-reference devices start and stop this much inside the reference.
    switch_margin_s: tuple[float, float] = (5.0, 60.0)
    rng_seed: int = 0

    def __post_init__(self):
        if self.scenario not in ("active", "passive"):
            raise ValueError(f"scenario must be 'active' or 'passive', not {self.scenario!r}")
        if not self.duration_s > 2 * self.switch_margin_s[1] + 60:
            raise ValueError("duration_s too short for the switch-on margins")
        if self.n_devices < 1:
            raise ValueError("n_devices must be positive")
        if not self.pressure_sensor.rate_hz > 0 or any(a.rate_hz <= 0 for a in self.accel_sensors):
            raise ValueError("sample rates must be positive")

    @classmethod
    def passive(cls, **kw) -> ScenarioConfig:
        world = PressureWorldConfig(altitude_event_rate_per_h=0.0, ambient_fluct_sd_pa=1.0)
        return cls(scenario="passive", pressure_world=world, **kw)

    def with_seed(self, seed: int) -> ScenarioConfig:
        return replace(self, rng_seed=int(seed))


@dataclass(frozen=True)
class DeviceClock:
    offset_s: float
    skew: float
    on_world_s: float
    off_world_s: float
    #: Optional piecewise-linear temperature-driven skew (world time grid, skew values).
    skew_grid: tuple[tuple[float, ...], tuple[float, ...]] | None = None

    def device_time(self, w):
        w = np.asarray(w, dtype=np.float64)
        if self.skew_grid is None:
            return self.offset_s + (1.0 + self.skew) * w
        grid, skew = (np.asarray(a) for a in self.skew_grid)
        integral = np.concatenate([[0.0], np.cumsum(0.5 * (skew[1:] + skew[:-1]) * np.diff(grid))])
        extra = np.interp(w, grid, integral) + (w - np.clip(w, grid[0], grid[-1])) * skew[-1]
        return self.offset_s + w + self.skew * w + extra

    def world_time(self, tau):
        tau = np.asarray(tau, dtype=np.float64)
        w = (tau - self.offset_s) / (1.0 + self.skew)
        if self.skew_grid is not None:
            for _ in range(3):
                w = w - (self.device_time(w) - tau) / (1.0 + self.skew)
        return w


@dataclass(frozen=True)
class GroundTruth:
    scenario: str
    simultaneous: bool
    device_ids: tuple[str, ...]
    clocks: dict[str, DeviceClock]
    seed: int = 0
    notes: tuple[str, ...] = ()

    def lag(self, a: str, b: str, t_a):
        """True ``t_b - t_a`` at device-``a`` time ``t_a``."""
        if not self.simultaneous:
            raise ValueError("recordings were not made simultaneously; no lag exists")
        ca, cb = self.clocks[a], self.clocks[b]
        return cb.device_time(ca.world_time(t_a)) - np.asarray(t_a, dtype=np.float64)

    def clock_model(self, a: str, b: str, reference_time_s: float = 0.0) -> ClockModel:
        """Exact linear model when clocks are linear; otherwise the secant over the session."""
        ca, cb = self.clocks[a], self.clocks[b]
        if ca.skew_grid is None and cb.skew_grid is None:
            skew = (1.0 + cb.skew) / (1.0 + ca.skew) - 1.0
        else:
            t0 = float(ca.device_time(ca.on_world_s))
            t1 = float(ca.device_time(ca.off_world_s))
            skew = float((self.lag(a, b, t1) - self.lag(a, b, t0)) / (t1 - t0))
        return ClockModel(float(self.lag(a, b, reference_time_s)), skew, reference_time_s)

    def to_json(self) -> dict:
        pairs = []
        if self.simultaneous:
            for i, a in enumerate(self.device_ids):
                for b in self.device_ids[i + 1:]:
                    m = self.clock_model(a, b)
                    pairs.append({"a": a, "b": b, "offset_s": m.offset_s, "skew_ppm": m.skew_ppm,
                                  "reference_time_s": m.reference_time_s})
        return {
            "scenario": self.scenario,
            "simultaneous": self.simultaneous,
            "seed": self.seed,
            "device_ids": list(self.device_ids),
            "devices": {
                k: {
                    "offset_s": c.offset_s,
                    "skew_ppm": c.skew * 1e6,
                    "skew": c.skew,
                    "on_world_s": c.on_world_s,
                    "off_world_s": c.off_world_s,
                    "skew_grid": [list(c.skew_grid[0]), list(c.skew_grid[1])] if c.skew_grid else None,
                }
                for k, c in self.clocks.items()
            },
            "pairs": pairs,
            "notes": list(self.notes),
        }

    @classmethod
    def from_json(cls, obj: dict) -> GroundTruth:
        clocks = {}
        for k, c in obj["devices"].items():
            grid = c.get("skew_grid")
            clocks[k] = DeviceClock(
                offset_s=c["offset_s"],
                skew=c["skew"] if "skew" in c else c["skew_ppm"] * 1e-6,
                on_world_s=c["on_world_s"],
                off_world_s=c["off_world_s"],
                skew_grid=(tuple(grid[0]), tuple(grid[1])) if grid else None,
            )
        return cls(
            scenario=obj["scenario"],
            simultaneous=obj["simultaneous"],
            device_ids=tuple(obj["device_ids"]),
            clocks=clocks,
            seed=obj.get("seed", 0),
            notes=tuple(obj.get("notes", ())),
        )


# --- world signals -----------------------------------------------------------


@dataclass
class _PressureWorld:
    grid_hz: float
    values: np.ndarray
    events: list = field(default_factory=list)

    def __call__(self, w):
        x = np.asarray(w) * self.grid_hz
        return np.interp(x, np.arange(self.values.shape[0]), self.values)


def _smooth_noise(rng, n, sd, width):
    x = rng.normal(0.0, 1.0, n + 2 * width)
    kernel = np.hanning(2 * width + 1)
    y = np.convolve(x, kernel / np.sqrt(np.sum(kernel ** 2)), mode="same")[width:width + n]
    return sd * y


def _pressure_world(rng, cfg: ScenarioConfig, baseline: float) -> _PressureWorld:
    pw = cfg.pressure_world
    grid_hz = 20.0
    n = int(math.ceil(cfg.duration_s * grid_hz)) + 2
    w = np.arange(n) / grid_hz
    hours = w / 3600.0
    slope = rng.normal(0.0, pw.weather_drift_pa_per_h)
    curve = rng.normal(0.0, 0.5 * pw.weather_drift_pa_per_h)
    values = baseline + slope * hours + curve * np.sin(2 * np.pi * hours / 6.0 + rng.uniform(0, 2 * np.pi))
    events = []
    n_events = rng.poisson(pw.altitude_event_rate_per_h * cfg.duration_s / 3600.0)
    for t0 in np.sort(rng.uniform(0.0, cfg.duration_s, n_events)):
        step = rng.uniform(*pw.altitude_step_pa) * rng.choice([-1.0, 1.0])
        ramp = rng.uniform(*pw.ramp_duration_s)
        u = np.clip((w - t0) / ramp, 0.0, 1.0)
        values = values + step * 0.5 * (1.0 - np.cos(np.pi * u))
        events.append({"t_s": float(t0), "step_pa": float(step), "ramp_s": float(ramp)})
    if pw.ambient_fluct_sd_pa > 0:
        values = values + _smooth_noise(rng, n, pw.ambient_fluct_sd_pa, int(grid_hz * 5))
    return _PressureWorld(grid_hz, values, events)


@dataclass
class _Bursts:
    t0: np.ndarray
    dur: np.ndarray
    freqs: np.ndarray  # (n, 3)
    phases: np.ndarray  # (n, 3)
    amps: np.ndarray  # (n,)
    dirs: np.ndarray  # (n, 3) unit vectors


def _motion_bursts(rng, cfg: ScenarioConfig) -> _Bursts:
    mc = cfg.motion
    n = rng.poisson(mc.event_rate_per_min * cfg.duration_s / 60.0) if cfg.scenario == "active" else 0
    dirs = rng.normal(0.0, 0.3, size=(n, 3))
    dirs[:, 2] = 1.0
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return _Bursts(
        t0=np.sort(rng.uniform(0.0, cfg.duration_s, n)),
        dur=rng.uniform(*mc.duration_s, n),
        freqs=rng.uniform(*mc.freq_hz, (n, 3)),
        phases=rng.uniform(0, 2 * np.pi, (n, 3)),
        amps=mc.amplitude_g * rng.lognormal(0.0, 0.5, n),
        dirs=dirs,
    )


@dataclass
class _Mounting:
    """How one device body experiences the shared bursts."""

    rotation: np.ndarray  # world frame -> sensor frame
    attenuation: float
    jitter: np.ndarray
    tilt: np.ndarray


def _mounting(rng, bursts: _Bursts, mc: MotionConfig) -> _Mounting:
    n = bursts.t0.shape[0]
    return _Mounting(
        rotation=_random_rotation(rng),
        attenuation=rng.uniform(*mc.attenuation),
        jitter=rng.uniform(-mc.jitter_s, mc.jitter_s, n),
        tilt=rng.normal(0.0, 0.3, (n, 3)),
    )


def _render_accel(world_t, bursts: _Bursts, mount: _Mounting):
    """Acceleration in g at (sorted) world times, in one device's sensor frame.

    Bursts act mostly along the vertical, as steps and impacts do, so the
    acceleration magnitude moves coherently on every body location.
    """
    out = np.zeros((world_t.shape[0], 3))
    out[:, 2] = 1.0
    for i in range(bursts.t0.shape[0]):
        start = bursts.t0[i] + mount.jitter[i]
        lo = np.searchsorted(world_t, start)
        hi = np.searchsorted(world_t, start + bursts.dur[i])
        if hi <= lo:
            continue
        tt = world_t[lo:hi] - start
        env = np.sin(np.pi * tt / bursts.dur[i]) ** 2
        wave = np.sin(2 * np.pi * bursts.freqs[i][None, :] * tt[:, None] + bursts.phases[i][None, :])
        d = bursts.dirs[i] + mount.tilt[i]
        d = d / (np.linalg.norm(d) + 1e-300)
        sig = (mount.attenuation * bursts.amps[i]) * env * wave.mean(axis=1)
        out[lo:hi] += sig[:, None] * d[None, :]
    return out @ mount.rotation.T


def _random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def _quantize(x, lsb, full_scale=2.0):
    return np.clip(np.round(x / lsb) * lsb, -full_scale, full_scale)


# --- devices -----------------------------------------------------------------


def _device_clock(rng, cfg: ScenarioConfig, index: int) -> DeviceClock:
    cc = cfg.clock
    if index == 0:
        on, off = 0.0, cfg.duration_s
    else:
        on = rng.uniform(*cfg.switch_margin_s)
        off = cfg.duration_s - rng.uniform(*cfg.switch_margin_s)
    offset = rng.uniform(-cc.offset_range_s, cc.offset_range_s)
    if cc.skews_ppm is not None:
        skew = cc.skews_ppm[index % len(cc.skews_ppm)] * 1e-6
    else:
        skew = rng.uniform(-cc.skew_range_ppm, cc.skew_range_ppm) * 1e-6
    grid = None
    if cc.temperature_skew:
        g = np.linspace(0.0, cfg.duration_s, 65)
        temp = _smooth_noise(rng, g.shape[0], 1.0, 4)
        temp = np.interp(temp, (temp.min(), temp.max() + 1e-12), cc.temperature_range_c)
        grid = (tuple(g.tolist()), tuple((TEMPERATURE_PPM_PER_K * 1e-6 * (temp - 25.0)).tolist()))
    return DeviceClock(offset, skew, on, off, grid)


def _sample_pressure(rng, world: _PressureWorld, clock: DeviceClock, ps: PressureSensorConfig):
    tau_on = float(clock.device_time(clock.on_world_s))
    tau_off = float(clock.device_time(clock.off_world_s))
    n = int(math.floor((tau_off - tau_on) * ps.rate_hz))
    tau = tau_on + np.arange(n) / ps.rate_hz
    offset = ps.absolute_offset_sd_pa * rng.normal()
    while abs(offset) > ps.absolute_offset_bound_pa:
        offset = ps.absolute_offset_sd_pa * rng.normal()
    values = world(clock.world_time(tau)) + offset + rng.normal(0.0, ps.relative_noise_sd_pa, n)
    return SensorTrace(TraceKind.PRESSURE, ps.rate_hz, tau_on, values, name="pressure", unit="Pa")


def _sample_accel(rng, bursts, mount, clock: DeviceClock, sc: AccelSensorConfig):
    tau_on = float(clock.device_time(clock.on_world_s)) + sc.startup_latency_s
    tau_off = float(clock.device_time(clock.off_world_s))
    fifo = None
    if sc.externally_triggered:
        n = int(math.floor((tau_off - tau_on) * sc.rate_hz))
        tau = tau_on + np.arange(n) / sc.rate_hz
    else:
        actual_rate = sc.rate_hz * (1.0 + rng.uniform(-sc.clock_error_range, sc.clock_error_range))
        # FIFO readouts at slightly irregular RTC instants
        n_read = int((tau_off - tau_on) / sc.fifo_readout_interval_s)
        steps = sc.fifo_readout_interval_s * (1.0 + rng.uniform(-0.1, 0.1, n_read))
        t_read = tau_on + np.cumsum(steps)
        t_read = t_read[t_read <= tau_off]
        counts = np.floor((t_read - tau_on) * actual_rate).astype(np.int64)
        n = int(counts[-1])
        tau = tau_on + np.arange(n) / actual_rate
        fifo = tuple(FifoReadout(float(t), int(c)) for t, c in zip(t_read, counts))
    acc = _render_accel(clock.world_time(tau), bursts, mount)
    acc = acc + rng.normal(0.0, sc.noise_sd_g, acc.shape)
    acc = _quantize(acc, sc.lsb_g)
    trace = SensorTrace(
        TraceKind.ACCEL3, sc.rate_hz, tau_on, acc, name=sc.name, unit="g",
        externally_triggered=sc.externally_triggered,
    )
    return trace, fifo


def _device_ids(cfg: ScenarioConfig, prefix: str):
    return [f"{prefix}dev{i}" for i in range(cfg.n_devices)]


def _build_session(cfg: ScenarioConfig, seed_seq: np.random.SeedSequence, prefix: str = ""):
    world_rng = np.random.default_rng(seed_seq.spawn(1)[0])
    baseline = ATM_PA + world_rng.normal(0.0, cfg.pressure_world.baseline_sd_pa)
    world = _pressure_world(world_rng, cfg, baseline)
    bursts = _motion_bursts(world_rng, cfg)
    recs, clocks = [], {}
    ids = _device_ids(cfg, prefix)
    for i, dev_seq in enumerate(seed_seq.spawn(cfg.n_devices + 1)[1:]):
        rng = np.random.default_rng(dev_seq)
        clock = _device_clock(rng, cfg, i)
        clocks[ids[i]] = clock
        pressure = _sample_pressure(rng, world, clock, cfg.pressure_sensor)
        mount = _mounting(rng, bursts, cfg.motion)
        accel, logs = [], {}
        for sc in cfg.accel_sensors:
            tr, fifo = _sample_accel(rng, bursts, mount, clock, sc)
            accel.append(tr)
            if fifo is not None:
                logs[sc.name] = fifo
        meta = {
            "synthetic": True,
            "scenario": cfg.scenario,
            "sensors": {sc.name: {"resolution_g": sc.lsb_g} for sc in cfg.accel_sensors},
        }
        recs.append(Recording(ids[i], pressure, tuple(accel), logs, meta))
    return recs, clocks, world


def generate_session(cfg: ScenarioConfig) -> tuple[list[Recording], GroundTruth]:
    """Recordings of ``cfg.n_devices`` devices worn together, plus their true clocks."""
    recs, clocks, world = _build_session(cfg, np.random.SeedSequence(cfg.rng_seed))
    truth = GroundTruth(
        scenario=cfg.scenario,
        simultaneous=True,
        device_ids=tuple(r.device_id for r in recs),
        clocks=clocks,
        seed=cfg.rng_seed,
        notes=tuple(describe_events(world.events)),
    )
    return recs, truth


def describe_events(events) -> list[str]:
    return [
        f"altitude change at {e['t_s']:8.1f} s: {e['step_pa']:+7.1f} Pa over {e['ramp_s']:5.1f} s"
        for e in events
    ]


def generate_nonsimultaneous_pair(cfg: ScenarioConfig) -> tuple[Recording, Recording, GroundTruth]:
    """Reference device of one session and a contained device of an unrelated session.

    The two sessions draw independent weather baselines, so single-sample
    pressure differences follow N(0, 2 sigma^2) with sigma = 928 Pa.
    """
    root = np.random.SeedSequence([cfg.rng_seed, 0x5EED])
    seq_a, seq_b = root.spawn(2)
    two = replace(cfg, n_devices=max(2, cfg.n_devices))
    recs_a, clocks_a, _ = _build_session(two, seq_a, prefix="a_")
    recs_b, clocks_b, _ = _build_session(two, seq_b, prefix="b_")
    rec1, rec2 = recs_a[0], recs_b[1]
    truth = GroundTruth(
        scenario=cfg.scenario,
        simultaneous=False,
        device_ids=(rec1.device_id, rec2.device_id),
        clocks={rec1.device_id: clocks_a[rec1.device_id], rec2.device_id: clocks_b[rec2.device_id]},
        seed=cfg.rng_seed,
    )
    return rec1, rec2, truth


def write_session(recs, truth: GroundTruth, out_dir) -> Path:
    from .ingest import write_recording

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for r in recs:
        write_recording(r, out / r.device_id)
    with open(out / "ground_truth.json", "w", encoding="utf-8") as fh:
        json.dump(truth.to_json(), fh, indent=2)
        fh.write("\n")
    return out


def read_ground_truth(path) -> GroundTruth:
    with open(path, encoding="utf-8") as fh:
        return GroundTruth.from_json(json.load(fh))


def config_to_dict(cfg: ScenarioConfig) -> dict:
    return asdict(cfg)
