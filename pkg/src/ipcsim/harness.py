"""Campaign runner: load-case configuration, deterministic execution,
persistence, and cross-controller comparison.

A load case fully specifies one run (plant, disturbance, fault, controller,
tuning, seed); a campaign is a list of load cases. Outputs per run: the
sample series as headered CSV (full float precision, so metrics recompute
bit-for-bit from the file), the per-rotation controller log, and a metrics
summary as JSON.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .baselines import MbcIpcState, cpc_baseline, mbc_ipc_step
from .control import (
    ControllerTuning,
    RepetitiveController,
    UnrestrictedExcitation,
    build_basis,
)
from .metrics import (
    DEFAULT_RATE_LIMIT_DEG_S,
    WindowSpec,
    adc,
    band_energy_ratio,
    windowed_sd,
)
from .numerics import welch_psd
from .plant import (
    DisturbanceModel,
    FaultScenario,
    SurrogatePlant,
    _maybe_switch_blade_fault,
    apply_actuator_fault,
    build_plant,
)

__all__ = [
    "ConfigError",
    "LoadCaseConfig",
    "RunResult",
    "run_load_case",
    "run_campaign",
    "CampaignReport",
    "compare",
    "ComparisonTable",
    "default_campaign",
    "load_config_file",
    "recompute_metrics",
]

CONTROLLERS = ("cpc", "mbc_ipc", "ftipc", "uftipc")

ONE_P_HZ = 1.0
BANDS_1P_2P = [[0.9 * ONE_P_HZ, 1.1 * ONE_P_HZ], [1.8 * ONE_P_HZ, 2.2 * ONE_P_HZ]]


class ConfigError(ValueError):
    """Invalid load-case or campaign configuration."""


@dataclass
class LoadCaseConfig:
    """Everything one run depends on; runs are a pure function of this."""

    id: str
    controller: str
    seed: int
    group: str = ""
    duration_s: float = 2000.0
    fault_onset_s: float = 1000.0
    fault_kind: str = "healthy"
    fault_blade: int = 3
    fault_parameter: float = 0.0
    amp_1p: float = 500.0
    amp_2p: float = 150.0
    phase_1p: float = 0.0
    phase_2p: float = 0.0
    sigma_e: float = 0.0
    period_jitter: float = 0.0
    predictor_window: int = 21
    plant: dict = field(default_factory=dict)
    tuning: dict = field(default_factory=dict)
    uftipc_amplitude_deg: float = 0.25
    uftipc_cutoff_hz: float = 1.0
    uftipc_bit_time_s: float = 1.0
    identification_log: bool = False  # test mode: per-rotation error vs oracle

    def __post_init__(self):
        if not self.id:
            raise ConfigError("load case id must be non-empty")
        if self.controller not in CONTROLLERS:
            raise ConfigError(
                f"unknown controller {self.controller!r}; choose from {CONTROLLERS}"
            )
        if self.seed is None:
            raise ConfigError("seed is mandatory (no ambient randomness)")
        if not (0.0 < self.fault_onset_s < self.duration_s):
            raise ConfigError("fault onset must lie strictly inside the run duration")
        if not self.group:
            self.group = self.id
        # Validate the nested sub-configurations eagerly so campaign setup fails fast.
        try:
            plant = build_plant(**self.plant)
            self.make_fault(plant.period_samples, plant.dt)
            ControllerTuning(**self.tuning)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        n = round(self.duration_s / plant.dt)
        if abs(n * plant.dt - self.duration_s) > 1e-9 or n % plant.period_samples != 0:
            raise ConfigError("duration must be a whole number of rotor periods")

    def make_plant(self) -> SurrogatePlant:
        return build_plant(**self.plant)

    def make_disturbance(self, seed) -> DisturbanceModel:
        return DisturbanceModel(
            amp_1p=np.full(3, self.amp_1p),
            amp_2p=np.full(3, self.amp_2p),
            phase_1p=np.full(3, self.phase_1p),
            phase_2p=np.full(3, self.phase_2p),
            sigma_e=self.sigma_e,
            seed=seed,
            period_jitter=self.period_jitter,
        )

    def make_fault(self, period: int, dt: float = 0.01) -> FaultScenario:
        return FaultScenario(
            kind=self.fault_kind,
            blade_index=self.fault_blade,
            onset_sample=int(round(self.fault_onset_s / dt)),
            parameter=self.fault_parameter,
        )

    def make_tuning(self) -> ControllerTuning:
        return ControllerTuning(**self.tuning)

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(data: dict) -> "LoadCaseConfig":
        try:
            return LoadCaseConfig(**data)
        except TypeError as exc:
            raise ConfigError(f"bad load case fields: {exc}") from exc


def load_config_file(path) -> list[LoadCaseConfig]:
    """Read a campaign (or single case) JSON file."""
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    cases = data["cases"] if isinstance(data, dict) and "cases" in data else [data]
    configs = [LoadCaseConfig.from_dict(c) for c in cases]
    ids = [c.id for c in configs]
    if len(set(ids)) != len(ids):
        raise ConfigError("load case ids must be unique within a campaign")
    return configs


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    config: LoadCaseConfig
    t: np.ndarray
    u_cmd: np.ndarray
    y: np.ndarray
    psi: np.ndarray
    rotation_log: list
    metrics: dict
    wall_time_s: float = 0.0
    identification_log: list = field(default_factory=list)

    def save(self, out_dir) -> None:
        from pathlib import Path

        d = Path(out_dir) / self.config.id
        d.mkdir(parents=True, exist_ok=True)
        data = np.column_stack([self.t, self.u_cmd, self.y, self.psi])
        header = "t,u1,u2,u3,y1,y2,y3,psi"
        with open(d / "series.csv", "w") as fh:
            fh.write(header + "\n")
            np.savetxt(fh, data, fmt="%.17g", delimiter=",")
        with open(d / "controller_log.csv", "w") as fh:
            writer = csv.writer(fh)
            writer.writerow(["rotation", "theta_norm", "delta_theta_norm",
                             "dare_residual", "dare_failures", "clamp_events"]
                            + [f"y_bar_{i}" for i in range(12)])
            for row in self.rotation_log:
                writer.writerow(row)
        with open(d / "metrics.json", "w") as fh:
            json.dump(self.metrics, fh, indent=1, sort_keys=True)
        with open(d / "config.json", "w") as fh:
            json.dump(self.config.to_dict(), fh, indent=1, sort_keys=True)
        if self.identification_log:
            with open(d / "identification_log.csv", "w") as fh:
                writer = csv.writer(fh)
                writer.writerow(["rotation", "err_blade1", "err_blade2", "err_blade3"])
                writer.writerows(self.identification_log)


def _advance_rotation(plant, fault, dist, u_cmd_rows, k0):
    """Advance one command block through fault map and plant, splitting at a
    scheduled blade-fault onset so the switch lands on the exact sample."""
    n = u_cmd_rows.shape[0]
    onset = fault.onset_sample
    if fault.kind == "blade_stiffness" and k0 < onset < k0 + n:
        cut = onset - k0
        top = _advance_rotation(plant, fault, dist, u_cmd_rows[:cut], k0)
        bottom = _advance_rotation(plant, fault, dist, u_cmd_rows[cut:], k0 + cut)
        return np.vstack([top, bottom])
    _maybe_switch_blade_fault(plant, fault, k0)
    u_eff = apply_actuator_fault(u_cmd_rows, fault, k0)
    d = dist.periodic_block(k0, n, plant.period_samples)
    e = dist.innovation_block(k0, n)
    return plant.advance_block(u_eff, d, e)


def run_load_case(cfg: LoadCaseConfig) -> RunResult:
    """Execute one load case: plant loop, identification, control, metrics.

    Deterministic per config: the disturbance, excitation, and broadband
    noise streams are independent children of the config seed.
    """
    start = time.perf_counter()
    plant = cfg.make_plant()
    period = plant.period_samples
    dt = plant.dt
    n = int(round(cfg.duration_s / dt))
    n_rot = n // period

    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    dist = cfg.make_disturbance(seeds[0])
    fault = cfg.make_fault(period, dt)
    tuning = cfg.make_tuning()

    u_cmd = np.empty((n, 3))
    y = np.empty((n, 3))

    controller = None
    mbc_state = None
    if cfg.controller in ("ftipc", "uftipc"):
        unrestricted = None
        if cfg.controller == "uftipc":
            unrestricted = UnrestrictedExcitation(
                cfg.uftipc_amplitude_deg, cfg.uftipc_cutoff_hz, seeds[2], dt,
                bit_time_s=cfg.uftipc_bit_time_s,
            )
        controller = RepetitiveController(
            cfg.predictor_window, period, tuning, seeds[1], unrestricted=unrestricted,
        )
    elif cfg.controller == "mbc_ipc":
        mbc_state = MbcIpcState(authority_deg=tuning.theta_cap_deg)

    id_log = []
    oracle_rows = None
    if cfg.identification_log and controller is not None:
        from .plant import markov_oracle_siso

        def oracle_for(pl):
            return np.vstack([markov_oracle_siso(pl, cfg.predictor_window, b)
                              for b in (1, 2, 3)])

        oracle_rows = oracle_for(plant)

    try:
        for j in range(n_rot):
            k0 = j * period
            if controller is not None:
                rows = controller.rotation_commands(j)
                u_cmd[k0:k0 + period] = rows
                y[k0:k0 + period] = _advance_rotation(plant, fault, dist, rows, k0)
                controller.finish_rotation(j, u_cmd, y)
                if oracle_rows is not None:
                    if fault.kind == "blade_stiffness" and k0 <= fault.onset_sample < k0 + period:
                        oracle_rows = oracle_for(plant)
                    errs = controller.engine.relative_errors(oracle_rows)
                    id_log.append([j] + [float(e) for e in errs])
            elif mbc_state is not None:
                y_prev = y[k0 - 1] if k0 else np.zeros(3)
                for s in range(period):
                    k = k0 + s
                    psi_k = 2.0 * np.pi * (s + 1) / period
                    mbc_state, u_k = mbc_ipc_step(mbc_state, y_prev, psi_k, dt)
                    u_cmd[k] = u_k
                    y[k] = _advance_rotation(plant, fault, dist, u_k[None, :], k)[0]
                    y_prev = y[k]
            else:  # cpc
                rows = np.tile(cpc_baseline(k0), (period, 1))
                u_cmd[k0:k0 + period] = rows
                y[k0:k0 + period] = _advance_rotation(plant, fault, dist, rows, k0)
    except FloatingPointError as exc:
        raise RuntimeError(f"run {cfg.id} diverged: {exc}") from exc

    t = np.arange(n) * dt
    psi = 2.0 * np.pi * ((np.arange(n) % period) + 1) / period
    metrics = compute_metrics(cfg, u_cmd, y, dt, period)
    if controller is not None:
        metrics["dare_failures"] = controller.dare_failures
        metrics["clamp_events"] = controller.state.clamp_events
    rotation_log = []
    if controller is not None:
        for row in controller.logs:
            rotation_log.append(
                [row.rotation, row.theta_norm, row.delta_theta_norm,
                 row.dare_residual, row.dare_failures, row.clamp_events]
                + [float(v) for v in row.y_bar]
            )
    return RunResult(
        config=cfg, t=t, u_cmd=u_cmd, y=y, psi=psi,
        rotation_log=rotation_log, metrics=metrics,
        wall_time_s=time.perf_counter() - start,
        identification_log=id_log,
    )


def compute_metrics(cfg: LoadCaseConfig, u_cmd: np.ndarray, y: np.ndarray,
                    dt: float, period: int) -> dict:
    """Windowed summary: per-blade SD, ADC, and pitch band-energy ratios.

    Pure function of the series and the config scalars; persisting the
    series at full precision makes this reproducible bit-for-bit.
    """
    window = WindowSpec.for_run(cfg.duration_s, cfg.fault_onset_s)
    fs = 1.0 / dt
    out = {
        "id": cfg.id,
        "group": cfg.group,
        "controller": cfg.controller,
        "faulty_blade": None if cfg.fault_kind == "healthy" else cfg.fault_blade,
        "fault_kind": cfg.fault_kind,
        "windows": {
            "healthy": list(window.bounds("healthy")),
            "faulty": list(window.bounds("faulty")),
        },
    }
    for which in ("healthy", "faulty"):
        t0, t1 = window.bounds(which)
        i0, i1 = int(round(t0 / dt)), int(round(t1 / dt))
        blades = {}
        seg_len = min(2048, 2 * ((i1 - i0) // 2))
        for b in range(3):
            seg_u = u_cmd[i0:i1, b]
            psd = (welch_psd(seg_u, fs, segment_length=seg_len)
                   if np.any(seg_u != seg_u[0]) else None)
            blades[f"blade{b + 1}"] = {
                "sd_y": windowed_sd(y[:, b], window, which, dt),
                "adc": adc(seg_u, dt, DEFAULT_RATE_LIMIT_DEG_S),
                "band_ratio_u": None if psd is None else band_energy_ratio(psd, BANDS_1P_2P),
            }
        out[which] = blades
    return out


def recompute_metrics(run_dir) -> dict:
    """Round-trip check helper: metrics from the persisted CSV + config."""
    from pathlib import Path

    d = Path(run_dir)
    cfg = LoadCaseConfig.from_dict(json.loads((d / "config.json").read_text()))
    data = np.loadtxt(d / "series.csv", delimiter=",", skiprows=1)
    u_cmd, y = data[:, 1:4], data[:, 4:7]
    plant = cfg.make_plant()
    metrics = compute_metrics(cfg, u_cmd, y, plant.dt, plant.period_samples)
    saved = json.loads((d / "metrics.json").read_text())
    for key in ("dare_failures", "clamp_events"):
        if key in saved:
            metrics[key] = saved[key]
    return metrics


# ---------------------------------------------------------------------------
# Campaign
# ---------------------------------------------------------------------------

@dataclass
class RunStatus:
    id: str
    ok: bool
    error: str = ""
    metrics: dict | None = None
    wall_time_s: float = 0.0


@dataclass
class CampaignReport:
    statuses: list
    out_dir: str | None = None

    @property
    def failed(self) -> list:
        return [s for s in self.statuses if not s.ok]

    def metrics_by_id(self) -> dict:
        return {s.id: s.metrics for s in self.statuses if s.ok}


def _run_one(cfg_dict: dict, out_dir: str | None) -> RunStatus:
    cfg = LoadCaseConfig.from_dict(cfg_dict)
    try:
        result = run_load_case(cfg)
        if out_dir is not None:
            result.save(out_dir)
        return RunStatus(id=cfg.id, ok=True, metrics=result.metrics,
                         wall_time_s=result.wall_time_s)
    except ConfigError:
        raise
    except Exception as exc:  # failure isolation: siblings keep running
        return RunStatus(id=cfg.id, ok=False, error=f"{type(exc).__name__}: {exc}")


def run_campaign(configs, parallelism: int = 1, out_dir=None) -> CampaignReport:
    """Run every load case (independently; failures are isolated)."""
    configs = list(configs)
    ids = [c.id for c in configs]
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate load case ids in campaign")
    out = str(out_dir) if out_dir is not None else None
    if parallelism <= 1 or len(configs) <= 1:
        statuses = [_run_one(c.to_dict(), out) for c in configs]
    else:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            statuses = list(pool.map(_run_one, [c.to_dict() for c in configs],
                                     [out] * len(configs)))
    return CampaignReport(statuses=statuses, out_dir=out)


# ---------------------------------------------------------------------------
# Comparison
# ---------------------------------------------------------------------------

@dataclass
class ComparisonRow:
    group: str
    controller: str
    faulty_blade: int | None
    rsd_faulty_window: dict
    adc_faulty_window: dict
    negative_blades: list


@dataclass
class ComparisonTable:
    baseline: str
    rows: list

    def to_text(self) -> str:
        lines = [f"rSD (faulty window) and ADC vs baseline '{self.baseline}'"]
        for row in sorted(self.rows, key=lambda r: (r.group, r.controller)):
            shown = {b: v for b, v in row.rsd_faulty_window.items()
                     if row.faulty_blade is None or b != f"blade{row.faulty_blade}"}
            cells = "  ".join(f"{b} rSD={v * 100:6.2f}% adc={row.adc_faulty_window[b] * 100:5.2f}%"
                              for b, v in sorted(shown.items()))
            note = ""
            if row.faulty_blade is not None:
                note = f"  [blade {row.faulty_blade} not shown: faulty blade]"
            if row.negative_blades:
                note += f"  [load increased on: {', '.join(row.negative_blades)}]"
            lines.append(f"{row.group:8s} {row.controller:8s} {cells}{note}")
        return "\n".join(lines)

    def to_json(self) -> str:
        return json.dumps(
            {"baseline": self.baseline,
             "rows": [asdict(r) for r in self.rows]},
            indent=1, sort_keys=True)


def compare(metrics_by_id: dict, baseline: str = "cpc") -> ComparisonTable:
    """Per-group, per-blade rSD (faulty window) and ADC against the baseline.

    Requires every group to contain a run of the baseline controller with
    matching seeds (guaranteed by the campaign builder). Negative rSD
    entries (load increased) are flagged.
    """
    groups: dict[str, dict[str, dict]] = {}
    for m in metrics_by_id.values():
        groups.setdefault(m["group"], {})[m["controller"]] = m
    rows = []
    for group, by_ctl in sorted(groups.items()):
        if baseline not in by_ctl:
            raise ValueError(f"group {group} is missing the baseline controller {baseline!r}")
        base = by_ctl[baseline]
        for ctl, m in sorted(by_ctl.items()):
            rsd_vals, adc_vals, neg = {}, {}, []
            for b in ("blade1", "blade2", "blade3"):
                sd_b = base["faulty"][b]["sd_y"]
                sd_c = m["faulty"][b]["sd_y"]
                val = (sd_b - sd_c) / sd_b
                rsd_vals[b] = val
                adc_vals[b] = m["faulty"][b]["adc"]
                if val < 0.0:
                    neg.append(b)
            rows.append(ComparisonRow(
                group=group, controller=ctl, faulty_blade=m["faulty_blade"],
                rsd_faulty_window=rsd_vals, adc_faulty_window=adc_vals,
                negative_blades=neg,
            ))
    return ComparisonTable(baseline=baseline, rows=rows)


# ---------------------------------------------------------------------------
# Shipped campaign
# ---------------------------------------------------------------------------

TI_ANALOGS = {"ti00": 0.0, "ti375": 0.0375, "tiiec": 0.15}
DISTURBANCE_LEVELS = {"lvlA": (500.0, 150.0), "lvlB": (700.0, 210.0)}
FAULTS = {
    "pad": ("pad", 0.5),
    "pas": ("pas", 0.0),
    "bld": ("blade_stiffness", 0.2),
}


def default_campaign(base_seed: int = 2024, controllers=("cpc", "mbc_ipc", "ftipc"),
                     duration_s: float = 2000.0) -> list[LoadCaseConfig]:
    """{2 disturbance levels} x {3 TI analogs} x {3 fault kinds} x controllers.

    Load cases within a group share the seed, so every controller sees the
    same disturbance realization.
    """
    configs = []
    lc_index = 0
    for lvl_name, (a1, a2) in DISTURBANCE_LEVELS.items():
        for fault_name, (kind, param) in FAULTS.items():
            for ti_name, ti in TI_ANALOGS.items():
                lc_index += 1
                group = f"LC{lc_index:02d}-{lvl_name}-{fault_name}-{ti_name}"
                for ctl in controllers:
                    configs.append(LoadCaseConfig(
                        id=f"{group}-{ctl}",
                        group=group,
                        controller=ctl,
                        seed=base_seed + lc_index,
                        duration_s=duration_s,
                        fault_onset_s=duration_s / 2.0,
                        fault_kind=kind,
                        fault_blade=3,
                        fault_parameter=param,
                        amp_1p=a1,
                        amp_2p=a2,
                        sigma_e=ti * a1,
                    ))
    return configs
