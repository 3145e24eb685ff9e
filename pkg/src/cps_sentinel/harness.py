"""Scenario ingestion, presets, and Monte Carlo orchestration.

Scenarios are JSON with explicit row-major matrices and string-tagged
policy kinds; statistical parameters carry no defaults, so a file either
states its covariances or fails validation. Batch runs derive one stream
per run index, write one detection CSV per seed plus a deterministic
summary, and refuse attack scenarios that violate the honest-influence
requirement unless explicitly overridden.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .detection import Decision, classify, rn_series, write_series_csv
from .mdp import FiniteMdp, StochasticPolicy, analytic_drift, induced_kernel, path_log_ratio, simulate_path
from .model import (
    AttackConfig,
    CpsModel,
    Violation,
    honest_influence_check,
    validate_attack,
    validate_model,
)
from .numerics import DiagonalPsd, Dirac, GaussianLaw, split_seed
from .policies import (
    Affine,
    CorruptPolicy,
    DoS,
    Fdi,
    HistoryWindow,
    HonestPolicy,
    LinearFeedback,
    Mimic,
    Replacement,
    Zero,
)
from .simulator import simulate


class ParseError(Exception):
    """The scenario file is not readable JSON of the expected shape."""


class ValidationError(Exception):
    """The scenario parsed but its contents are invalid."""

    def __init__(self, issues: list[Violation]):
        self.issues = issues
        super().__init__("; ".join(str(v) for v in issues))


class AssumptionViolation(Exception):
    """Attack scenario whose influence graph leaves agents unreachable."""


@dataclass(frozen=True)
class Scenario:
    """A fully validated experiment description."""

    name: str
    model: CpsModel
    honest: HonestPolicy
    attack: tuple[AttackConfig, CorruptPolicy] | None
    horizon: int
    seed_base: int
    seed_count: int
    threshold: float
    outputs: str | None


@dataclass
class RunSummary:
    """Aggregate of one Monte Carlo batch plus the per-seed rows."""

    scenario: str
    n_runs: int
    horizon: int
    threshold: float
    detection_fraction: float
    mean_drift: float | None
    drift_stderr: float | None
    runtime_seconds: float
    rows: list[dict] = field(repr=False, default_factory=list)

    def summary_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "n_runs": self.n_runs,
            "horizon": self.horizon,
            "threshold": self.threshold,
            "detection_fraction": self.detection_fraction,
            "mean_drift": self.mean_drift,
            "drift_stderr": self.drift_stderr,
            "runtime_seconds": self.runtime_seconds,
        }


def load_scenario(path) -> Scenario:
    """Parse and validate a scenario file, reporting all defects together."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ParseError(f"{path} must hold a JSON object")
    return scenario_from_dict(data)


def scenario_from_dict(data: dict) -> Scenario:
    issues: list[Violation] = []

    def bad(path, code, message):
        issues.append(Violation(path, code, message))

    name = data.get("name", "unnamed")
    model = None
    md = data.get("model")
    if not isinstance(md, dict):
        bad("model", "Missing", "scenario needs a 'model' object")
    else:
        model, model_issues = _parse_model(md)
        issues.extend(model_issues)

    honest = None
    hd = data.get("honest")
    if not isinstance(hd, dict):
        bad("honest", "Missing", "scenario needs an 'honest' policy object")
    else:
        try:
            honest = _parse_honest(hd)
        except (ValueError, TypeError, KeyError) as exc:
            bad("honest", "BadPolicy", str(exc))

    attack = None
    ad = data.get("attack")
    if ad is not None:
        if not isinstance(ad, dict):
            bad("attack", "BadType", "'attack' must be an object or null")
        else:
            try:
                attack = _parse_attack(ad)
            except (ValueError, TypeError, KeyError) as exc:
                bad("attack", "BadAttack", str(exc))

    horizon = data.get("horizon")
    if not isinstance(horizon, int) or horizon < 1:
        bad("horizon", "BadHorizon", f"horizon must be a positive integer, got {horizon!r}")
    seeds = data.get("seeds")
    seed_base, seed_count = 0, 0
    if not isinstance(seeds, dict) or "base" not in seeds or "count" not in seeds:
        bad("seeds", "Missing", "scenario needs seeds: {base, count}")
    else:
        seed_base, seed_count = seeds["base"], seeds["count"]
        if not isinstance(seed_base, int):
            bad("seeds.base", "BadSeed", "seed base must be an integer")
        if not isinstance(seed_count, int) or seed_count < 1:
            bad("seeds.count", "BadCount", "seed count must be a positive integer")
    threshold = data.get("threshold")
    if not isinstance(threshold, (int, float)):
        bad("threshold", "Missing", "scenario needs a log-domain threshold")

    if model is not None and not issues:
        issues.extend(validate_model(model))
        issues.extend(_check_honest_sizes(model, honest))
        if attack is not None:
            issues.extend(validate_attack(model, attack[0]))
            issues.extend(_check_attack_sizes(model, attack, horizon))
    if issues:
        raise ValidationError(issues)
    return Scenario(name=name, model=model, honest=honest, attack=attack,
                    horizon=horizon, seed_base=seed_base, seed_count=seed_count,
                    threshold=float(threshold), outputs=data.get("outputs"))


def _parse_model(md: dict) -> tuple[CpsModel | None, list[Violation]]:
    issues: list[Violation] = []
    for key in ("n_agents", "dynamics", "actuator_gains", "process_noise",
                "excitation", "initial"):
        if key not in md:
            issues.append(Violation(f"model.{key}", "Missing", f"model needs '{key}'"))
    if issues:
        return None, issues
    init = md["initial"]
    try:
        if init.get("kind") == "dirac":
            initial = Dirac(init["point"])
        elif init.get("kind") == "gaussian":
            cov = np.asarray(init["cov"], dtype=float)
            if cov.ndim == 1:
                initial = GaussianLaw(init["mean"], DiagonalPsd(cov))
            else:
                from .numerics import make_spd
                initial = GaussianLaw(init["mean"], make_spd(cov))
        else:
            raise ValueError(f"initial.kind must be 'dirac' or 'gaussian', got {init.get('kind')!r}")
    except (ValueError, TypeError, KeyError) as exc:
        return None, [Violation("model.initial", "BadInitial", str(exc))]
    try:
        model = CpsModel(n_agents=md["n_agents"], dynamics=md["dynamics"],
                         actuator_gains=md["actuator_gains"],
                         process_noise=md["process_noise"],
                         excitation=md["excitation"], initial_law=initial)
    except (ValueError, TypeError) as exc:
        return None, [Violation("model", "BadModel", str(exc))]
    return model, issues


def _parse_honest(hd: dict) -> HonestPolicy:
    kind = hd.get("kind")
    if kind == "zero":
        return Zero()
    if kind == "linear":
        return LinearFeedback(np.asarray(hd["gain"], dtype=float))
    if kind == "affine":
        return Affine(np.asarray(hd["gain"], dtype=float),
                      np.asarray(hd["offset"], dtype=float))
    if kind == "window":
        return HistoryWindow(tuple(np.asarray(g, dtype=float) for g in hd["lag_gains"]))
    raise ValueError(f"unknown honest policy kind {kind!r}")


def _parse_attack(ad: dict) -> tuple[AttackConfig, CorruptPolicy]:
    cfg = AttackConfig(tuple(ad["malicious_set"]))
    kind = ad.get("kind")
    if kind == "replacement":
        mode = ad.get("mode", "constant")
        if mode in ("constant", "scaled_state"):
            pol = Replacement(mode, values=np.asarray(ad["values"], dtype=float))
        elif mode == "sign_flip":
            pol = Replacement.sign_flip()
        else:
            raise ValueError(f"unknown replacement mode {mode!r}")
    elif kind == "fdi":
        pol = Fdi(np.asarray(ad["offsets"], dtype=float))
    elif kind == "dos":
        pol = DoS()
    elif kind == "mimic":
        pol = Mimic(DiagonalPsd(np.asarray(ad["self_excitation"], dtype=float)))
    else:
        raise ValueError(f"unknown attack kind {kind!r}")
    return cfg, pol


def _check_honest_sizes(model: CpsModel, honest) -> list[Violation]:
    n = model.n_agents
    square = (n, n)
    if isinstance(honest, LinearFeedback) and honest.stationary \
            and np.shape(honest.gain) != square:
        return [Violation("honest.gain", "DimMismatch",
                          f"expected shape {square}, got {np.shape(honest.gain)}")]
    if isinstance(honest, Affine):
        issues = []
        if np.shape(honest.gain) != square:
            issues.append(Violation("honest.gain", "DimMismatch",
                                    f"expected shape {square}, got {np.shape(honest.gain)}"))
        if np.shape(honest.offset) != (n,):
            issues.append(Violation("honest.offset", "DimMismatch",
                                    f"expected length {n}, got {np.shape(honest.offset)}"))
        return issues
    if isinstance(honest, HistoryWindow):
        return [Violation(f"honest.lag_gains[{k}]", "DimMismatch",
                          f"expected shape {square}, got {g.shape}")
                for k, g in enumerate(honest.lag_gains) if g.shape != square]
    return []


def _check_attack_sizes(model: CpsModel, attack, horizon) -> list[Violation]:
    cfg, pol = attack
    m_count = cfg.malicious_count
    issues = []
    if isinstance(pol, Replacement) and pol.mode in ("constant", "scaled_state") \
            and pol.values.shape != (m_count,):
        issues.append(Violation("attack.values", "DimMismatch",
                                f"expected {m_count} entries, got {pol.values.shape}"))
    if isinstance(pol, Fdi):
        if pol.offsets.shape[-1] != m_count:
            issues.append(Violation("attack.offsets", "DimMismatch",
                                    f"expected {m_count} offsets per step, "
                                    f"got {pol.offsets.shape}"))
        elif pol.offsets.ndim == 2 and isinstance(horizon, int) \
                and pol.offsets.shape[0] < horizon:
            issues.append(Violation("attack.offsets", "ScheduleTooShort",
                                    f"offset schedule covers {pol.offsets.shape[0]} "
                                    f"steps but the horizon is {horizon}"))
    if isinstance(pol, Mimic) and pol.self_excitation.dim != m_count:
        issues.append(Violation("attack.self_excitation", "DimMismatch",
                                f"expected {m_count} variances, got {pol.self_excitation.dim}"))
    return issues


def _run_one(s: Scenario, index: int) -> dict:
    seed = split_seed(s.seed_base, index)
    row = {"run_index": index, "seed": seed, "log_l": None, "r_n": None,
           "decision": None, "error": None, "series": None}
    try:
        traj = simulate(s.model, s.honest, s.attack, s.horizon, seed)
        corrupt = s.attack[1] if s.attack else None
        cfg = s.attack[0] if s.attack else None
        series = rn_series(traj, s.model, s.honest, corrupt, cfg)
        row["log_l"] = series.log_l_at(s.horizon)
        row["r_n"] = float(series.r_n[-1]) if series.r_defined[-1] else None
        row["decision"] = classify(series, s.horizon, s.threshold).value
        row["series"] = series
    except Exception as exc:  # recorded per seed, batch continues
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def run_montecarlo(s: Scenario, *, max_workers: int = 1,
                   override_assumption2: bool = False,
                   out_dir=None) -> RunSummary:
    """Simulate, detect, and classify one batch of independent seeds.

    Refuses attack scenarios whose network leaves some agent untouched by
    honest excitation (``override_assumption2`` runs them anyway, for
    studying exactly that failure mode). Results are merged in run-index
    order, so serial and parallel execution agree bit for bit.
    """
    if s.attack is not None:
        holds, unreachable = honest_influence_check(s.model, s.attack[0])
        if not holds and not override_assumption2:
            raise AssumptionViolation(
                f"agents {sorted(unreachable)} are not reachable from any honest "
                "actuated agent; detection guarantees do not apply "
                "(pass override_assumption2 to run anyway)")
    start = time.perf_counter()
    indices = range(s.seed_count)
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            rows = list(pool.map(lambda i: _run_one(s, i), indices))
    else:
        rows = [_run_one(s, i) for i in indices]
    rows.sort(key=lambda r: r["run_index"])

    out_path = Path(out_dir) if out_dir is not None else (
        Path(s.outputs) if s.outputs else None)
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        for row in rows:
            if row["series"] is not None:
                with open(out_path / f"run_{row['run_index']:05d}.csv", "w") as fp:
                    write_series_csv(row["series"], fp)
        _write_runs_table(out_path / "runs.csv", rows)

    ok = [r for r in rows if r["error"] is None]
    n_detect = sum(1 for r in ok if r["decision"] == Decision.ATTACK.value)
    drifts = [r["log_l"] / s.horizon for r in ok]
    mean_drift = float(np.mean(drifts)) if drifts else None
    drift_stderr = (float(np.std(drifts, ddof=1) / math.sqrt(len(drifts)))
                    if len(drifts) > 1 else None)
    summary = RunSummary(
        scenario=s.name, n_runs=s.seed_count, horizon=s.horizon,
        threshold=s.threshold,
        detection_fraction=(n_detect / len(ok)) if ok else 0.0,
        mean_drift=mean_drift, drift_stderr=drift_stderr,
        runtime_seconds=time.perf_counter() - start,
        rows=[{k: v for k, v in r.items() if k != "series"} for r in rows],
    )
    if out_path is not None:
        (out_path / "summary.json").write_text(
            json.dumps(summary.summary_dict(), sort_keys=True, indent=2) + "\n")
    return summary


def _write_runs_table(path: Path, rows: list[dict]) -> None:
    with open(path, "w") as fp:
        fp.write("run_index,seed,logL,r_n,decision,error\n")
        for r in rows:
            fp.write(",".join([
                str(r["run_index"]), str(r["seed"]),
                "" if r["log_l"] is None else repr(float(r["log_l"])),
                "" if r["r_n"] is None else repr(float(r["r_n"])),
                r["decision"] or "",
                (r["error"] or "").replace(",", ";"),
            ]) + "\n")


@dataclass(frozen=True)
class MdpScenario:
    name: str
    mdp: FiniteMdp
    honest_policy: StochasticPolicy
    corrupt_policy: StochasticPolicy
    horizon: int
    seed_base: int
    seed_count: int
    outputs: str | None


def load_mdp_scenario(path) -> MdpScenario:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path} is not valid JSON: {exc}") from exc
    return mdp_scenario_from_dict(data)


def mdp_scenario_from_dict(data: dict) -> MdpScenario:
    issues: list[Violation] = []
    try:
        mdp = FiniteMdp(np.asarray(data["mdp"]["kernel"], dtype=float),
                        np.asarray(data["mdp"]["initial"], dtype=float))
    except (ValueError, KeyError, TypeError) as exc:
        issues.append(Violation("mdp", "BadMdp", str(exc)))
        mdp = None
    honest = corrupt = None
    for key in ("honest_policy", "corrupt_policy"):
        try:
            pol = StochasticPolicy(np.asarray(data[key], dtype=float))
            if key == "honest_policy":
                honest = pol
            else:
                corrupt = pol
        except (ValueError, KeyError, TypeError) as exc:
            issues.append(Violation(key, "BadPolicy", str(exc)))
    horizon = data.get("horizon")
    if not isinstance(horizon, int) or horizon < 1:
        issues.append(Violation("horizon", "BadHorizon",
                                f"horizon must be a positive integer, got {horizon!r}"))
    seeds = data.get("seeds", {})
    if not isinstance(seeds, dict) or not isinstance(seeds.get("base"), int) \
            or not isinstance(seeds.get("count"), int) or seeds.get("count", 0) < 1:
        issues.append(Violation("seeds", "Missing", "scenario needs seeds: {base, count}"))
    if issues:
        raise ValidationError(issues)
    return MdpScenario(name=data.get("name", "unnamed"), mdp=mdp,
                       honest_policy=honest, corrupt_policy=corrupt,
                       horizon=horizon, seed_base=seeds["base"],
                       seed_count=seeds["count"], outputs=data.get("outputs"))


def run_mdp_batch(s: MdpScenario, out_dir=None) -> dict:
    """Simulate corrupt-policy paths and track the kernel log ratio series."""
    start = time.perf_counter()
    k_h = induced_kernel(s.mdp, s.honest_policy)
    k_c = induced_kernel(s.mdp, s.corrupt_policy)
    drift = analytic_drift(k_h, k_c)
    finals = []
    out_path = Path(out_dir) if out_dir is not None else (
        Path(s.outputs) if s.outputs else None)
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
    for i in range(s.seed_count):
        seed = split_seed(s.seed_base, i)
        path = simulate_path(s.mdp, s.corrupt_policy, s.horizon, seed)
        series = path_log_ratio(path, k_h, k_c, s.mdp.initial, s.mdp.initial)
        finals.append(series[-1])
        if out_path is not None:
            with open(out_path / f"run_{i:05d}.csv", "w") as fp:
                fp.write("t,log_ratio\n")
                for t, v in enumerate(series):
                    fp.write(f"{t},{repr(float(v))}\n")
    finals = np.asarray(finals)
    per_step = finals / s.horizon
    summary = {
        "scenario": s.name,
        "n_runs": s.seed_count,
        "horizon": s.horizon,
        "analytic_drift": drift,
        "mean_drift": float(np.mean(per_step)),
        "drift_stderr": float(np.std(per_step, ddof=1) / math.sqrt(len(per_step)))
        if len(per_step) > 1 else None,
        "runtime_seconds": time.perf_counter() - start,
    }
    if out_path is not None:
        (out_path / "summary.json").write_text(
            json.dumps(summary, sort_keys=True, indent=2) + "\n")
    return summary


# ---------------------------------------------------------------------------
# Presets: one runnable scenario per regime of interest.

_BASE_MODEL = {
    "n_agents": 2,
    "dynamics": [[0.5, 0.3], [0.0, 0.5]],
    "actuator_gains": [1.0, 1.0],
    "process_noise": [[0.04, 0.0], [0.0, 2.0]],
    "excitation": [0.16, 1.0],
    "initial": {"kind": "dirac", "point": [0.0, 0.0]},
}

_FEEDBACK = {"kind": "linear", "gain": [[-0.2, 0.0], [0.0, -0.2]]}


def _preset_identity() -> dict:
    return {
        "name": "identity",
        "model": dict(_BASE_MODEL),
        "honest": dict(_FEEDBACK),
        "attack": None,
        "horizon": 200,
        "seeds": {"base": 2025, "count": 20},
        "threshold": -10.0,
    }


def _preset_replacement() -> dict:
    return {
        "name": "replacement",
        "model": dict(_BASE_MODEL),
        "honest": dict(_FEEDBACK),
        "attack": {"malicious_set": [1], "kind": "replacement",
                   "mode": "scaled_state", "values": [-0.2]},
        "horizon": 2000,
        "seeds": {"base": 2025, "count": 200},
        "threshold": -10.0,
    }


def _preset_fdi() -> dict:
    return {
        "name": "fdi",
        "model": dict(_BASE_MODEL),
        "honest": dict(_FEEDBACK),
        "attack": {"malicious_set": [1], "kind": "fdi", "offsets": [0.2]},
        "horizon": 400,
        "seeds": {"base": 2025, "count": 100},
        "threshold": -10.0,
    }


def _preset_dos() -> dict:
    return {
        "name": "dos",
        "model": dict(_BASE_MODEL),
        "honest": dict(_FEEDBACK),
        "attack": {"malicious_set": [1], "kind": "dos"},
        "horizon": 200,
        "seeds": {"base": 2025, "count": 100},
        "threshold": -10.0,
    }


def _preset_mimic() -> dict:
    return {
        "name": "mimic",
        "model": dict(_BASE_MODEL),
        "honest": dict(_FEEDBACK),
        "attack": {"malicious_set": [1], "kind": "mimic", "self_excitation": [0.16]},
        "horizon": 2000,
        "seeds": {"base": 2025, "count": 50},
        "threshold": -10.0,
    }


def _preset_example1() -> dict:
    return {
        "name": "example1",
        "model": {
            "n_agents": 2,
            "dynamics": [[0.5, 0.0], [0.0, 0.6]],
            "actuator_gains": [1.0, 1.0],
            "process_noise": [[1.0, 0.0], [0.0, 1.0]],
            "excitation": [1.0, 1.0],
            "initial": {"kind": "dirac", "point": [0.0, 0.0]},
        },
        "honest": dict(_FEEDBACK),
        "attack": {"malicious_set": [1], "kind": "replacement",
                   "mode": "constant", "values": [0.0]},
        "horizon": 100,
        "seeds": {"base": 2025, "count": 10},
        "threshold": -10.0,
    }


def _preset_example2() -> dict:
    preset = _preset_example1()
    preset["name"] = "example2"
    preset["model"]["dynamics"] = [[0.5, 0.3], [0.0, 0.6]]
    return preset


def _preset_mdp_detect() -> dict:
    return {
        "name": "mdp-detect",
        "mdp": {
            "kernel": [
                [[0.94, 0.06], [0.06, 0.94]],
                [[1.0, 0.0], [0.0, 1.0]],
            ],
            "initial": [1.0, 0.0],
        },
        "honest_policy": [[0.5, 0.5], [0.5, 0.5]],
        "corrupt_policy": [[1.0 / 30.0, 29.0 / 30.0], [1.0 / 30.0, 29.0 / 30.0]],
        "horizon": 1000,
        "seeds": {"base": 2025, "count": 100},
    }


def _preset_mdp_mimic() -> dict:
    return {
        "name": "mdp-mimic",
        "mdp": {
            "kernel": [
                [[0.94, 0.06], [0.06, 0.94]],
                [[1.0, 0.0], [0.0, 1.0]],
                [[0.97, 0.03], [0.03, 0.97]],
            ],
            "initial": [1.0, 0.0],
        },
        "honest_policy": [[0.5, 0.5, 0.0], [0.5, 0.5, 0.0]],
        "corrupt_policy": [[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]],
        "horizon": 1000,
        "seeds": {"base": 2025, "count": 100},
    }


PRESETS = {
    "identity": _preset_identity,
    "replacement": _preset_replacement,
    "fdi": _preset_fdi,
    "dos": _preset_dos,
    "mimic": _preset_mimic,
    "example1": _preset_example1,
    "example2": _preset_example2,
    "mdp-detect": _preset_mdp_detect,
    "mdp-mimic": _preset_mdp_mimic,
}


def preset(name: str) -> dict:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}")
    return PRESETS[name]()


def is_mdp_scenario(data: dict) -> bool:
    return "mdp" in data
