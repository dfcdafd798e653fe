"""Monte-Carlo robustness campaign over randomly perturbed cart-pendulum truth models.

Seeding scheme (all streams derive from one master seed ``s``):

* truth model ``(bin b, model m)``: ``SeedSequence(s, spawn_key=(0, b, m))``
* noise of trial ``l`` on that model: ``SeedSequence(s, spawn_key=(1, b, m, l))``

Noise streams do not depend on the law, so every law sees the same truth
models and the same noise realizations (paired design), and results do not
depend on scheduling.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .ilc import ILILC, NILC, GradientILC, LearningLaw, SimulationResult, run_simulation
from .model import CartPendulumModel, CartPendulumParams, ReferenceProfile, make_reference
from .stable_inversion import synthesize

__all__ = [
    "TruthModelSpec",
    "CampaignConfig",
    "SimulationOutcome",
    "CampaignResult",
    "generate_truth_models",
    "perturb_parameters",
    "noise_seed",
    "detect_convergence",
    "transient_convergence_rate",
    "run_campaign",
    "export_results",
    "CSV_HEADER",
    "SCHEMA_VERSION",
]

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
CSV_HEADER = ["sim_id", "law", "bin", "model", "trial", "nrmse", "max_abs_u", "cond", "flag"]
KNOWN_LAWS = ("ililc", "gradient", "nilc")


@dataclass(frozen=True)
class TruthModelSpec:
    theta: np.ndarray
    e_theta: np.ndarray
    bin: int
    model: int
    seed: tuple

    @property
    def error_norm(self) -> float:
        return float(np.linalg.norm(self.e_theta))


@dataclass
class CampaignConfig:
    """Campaign settings; defaults are the desk-scale preset."""

    n_bins: int = 10
    error_max: float = 0.1
    models_per_bin: int = 5
    n_trials: int = 50
    tolerance: float = 5e-4
    laws: tuple = ("ililc", "gradient", "nilc")
    seed: int = 0
    N: int = 250
    Ts: float = 0.016
    lead: int = 40
    tail: int = 40
    amplitude: float = 0.2
    hold_fraction: float = 0.4
    gamma: float = 1.1
    m_final: int = 1
    nilc_trials: int | None = 2
    threads: int = 1

    @classmethod
    def full(cls, **kw) -> "CampaignConfig":
        return cls(**{"n_bins": 20, "models_per_bin": 50, **kw})

    @classmethod
    def desk(cls, **kw) -> "CampaignConfig":
        return cls(**kw)

    def __post_init__(self):
        self.laws = tuple(self.laws)
        self.validate()

    def validate(self):
        if self.n_bins < 1 or self.models_per_bin < 0 or self.n_trials < 1:
            raise ValueError("bins and trials must be >= 1, models per bin >= 0")
        if not (self.error_max > 0 and self.tolerance > 0 and self.gamma > 0):
            raise ValueError("error range, tolerance and gamma must be positive")
        if self.m_final < 1:
            raise ValueError("m_final must be >= 1")
        unknown = set(self.laws) - set(KNOWN_LAWS)
        if unknown or not self.laws:
            raise ValueError(f"unknown laws {sorted(unknown)}; choose from {KNOWN_LAWS}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    def bin_edges(self) -> np.ndarray:
        return np.linspace(0.0, self.error_max, self.n_bins + 1)

    def reference(self) -> ReferenceProfile:
        return make_reference(
            N=self.N, Ts=self.Ts, lead=self.lead, tail=self.tail,
            amplitude=self.amplitude, hold_fraction=self.hold_fraction,
        )

    def trials_for(self, law: str) -> int:
        if law == "nilc" and self.nilc_trials is not None:
            return min(self.nilc_trials, self.n_trials)
        return self.n_trials


def perturb_parameters(theta_hat, e_theta) -> np.ndarray:
    """``theta = (1 + e_theta) * theta_hat`` elementwise."""
    return (1.0 + np.asarray(e_theta, dtype=float)) * np.asarray(theta_hat, dtype=float)


def noise_seed(config: CampaignConfig, bin_index: int, model_index: int) -> np.random.SeedSequence:
    """Noise stream of truth model ``(bin, model)``; shared by every law."""
    return np.random.SeedSequence(config.seed, spawn_key=(1, bin_index, model_index))


def generate_truth_models(config: CampaignConfig, theta_hat: Sequence[float]) -> list:
    """Perturbed parameter vectors ``theta = (1 + e_theta) * theta_hat``, binned by ``||e_theta||_2``.

    Directions are uniform on the unit sphere; magnitudes uniform inside each
    half-open bin ``[lo, hi)``.
    """
    theta_hat = np.asarray(theta_hat, dtype=float)
    edges = config.bin_edges()
    specs = []
    for b in range(config.n_bins):
        for m in range(config.models_per_bin):
            key = (0, b, m)
            rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=key))
            d = rng.normal(size=theta_hat.size)
            d /= np.linalg.norm(d)
            mag = rng.uniform(edges[b], edges[b + 1])
            e = mag * d
            specs.append(TruthModelSpec(theta=perturb_parameters(theta_hat, e), e_theta=e, bin=b, model=m, seed=key))
    return specs


def detect_convergence(nrmse: Sequence[float], tolerance: float) -> int | None:
    """Smallest ``l*`` with ``nrmse[l] < tolerance`` for every ``l >= l*``."""
    h = np.asarray(nrmse, dtype=float)
    if h.size == 0:
        raise ValueError("empty NRMSE trajectory")
    below = h < tolerance
    if not below[-1]:
        return None
    idx = np.flatnonzero(~below)
    return 0 if idx.size == 0 else int(idx[-1] + 1)


def _ratios(nrmse: np.ndarray, l_star: int) -> np.ndarray:
    return nrmse[1 : l_star + 1] / nrmse[:l_star]


def transient_convergence_rate(outcomes: dict, laws: Iterable[str], converged_set: Iterable) -> dict:
    """Mean and std of ``NRMSE_l / NRMSE_(l-1)``, ``l = 1..l*``, pooled over ``converged_set``.

    ``outcomes`` maps ``(law, bin, model)`` to :class:`SimulationOutcome`.
    """
    cset = list(converged_set)
    if not cset:
        raise ValueError("no simulation converged under every compared law")
    out = {}
    for law in laws:
        parts = []
        for b, m in cset:
            o = outcomes[(law, b, m)]
            parts.append(_ratios(o.nrmse, o.l_star))
        ratios = np.concatenate(parts) if parts else np.zeros(0)
        if ratios.size == 0:
            out[law] = (math.nan, math.nan)
        else:
            out[law] = (float(ratios.mean()), float(ratios.std()))
    return out


@dataclass
class SimulationOutcome:
    law: str
    bin: int
    model: int
    error_norm: float
    nrmse: np.ndarray
    max_abs_u: np.ndarray
    cond: list
    flags: list
    divergent: bool
    l_star: int | None

    @property
    def converged(self) -> bool:
        return self.l_star is not None


@dataclass
class CampaignResult:
    config: CampaignConfig
    outcomes: dict = field(default_factory=dict)

    def sims(self, law: str) -> list:
        return [o for (lw, _, _), o in sorted(self.outcomes.items()) if lw == law]

    def convergence_counts(self) -> dict:
        return {law: sum(o.converged for o in self.sims(law)) for law in self.config.laws}

    def bin_percentages(self) -> dict:
        out = {}
        for law in self.config.laws:
            pct = []
            for b in range(self.config.n_bins):
                sims = [o for o in self.sims(law) if o.bin == b]
                pct.append(100.0 * sum(o.converged for o in sims) / len(sims) if sims else math.nan)
            out[law] = pct
        return out

    def compared_laws(self) -> list:
        return [law for law in self.config.laws if law != "nilc"] or list(self.config.laws)

    def converged_set(self) -> list:
        laws = self.compared_laws()
        keys = sorted({(b, m) for (_, b, m) in self.outcomes})
        return [(b, m) for b, m in keys if all(self.outcomes[(law, b, m)].converged for law in laws)]

    def rates(self) -> dict:
        cset = self.converged_set()
        if not cset:
            return {law: (math.nan, math.nan) for law in self.compared_laws()}
        return transient_convergence_rate(self.outcomes, self.compared_laws(), cset)

    def mean_nrmse_curves(self) -> dict:
        cset = self.converged_set()
        out = {}
        for law in self.compared_laws():
            if not cset:
                out[law] = []
                continue
            curves = np.array([self.outcomes[(law, b, m)].nrmse for b, m in cset])
            out[law] = curves.mean(axis=0).tolist()
        return out

    def summary(self) -> dict:
        """JSON-ready aggregates; undefined statistics (NaN) become ``None``."""
        rates = self.rates()
        return _json_safe({
            "schema_version": SCHEMA_VERSION,
            "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self.config).items()},
            "bin_edges": self.config.bin_edges().tolist(),
            "n_simulations": {law: len(self.sims(law)) for law in self.config.laws},
            "convergence_counts": self.convergence_counts(),
            "bin_convergence_percent": self.bin_percentages(),
            "converged_set_size": len(self.converged_set()),
            "transient_convergence_rate": {
                law: {"mean": m, "std": s} for law, (m, s) in rates.items()
            },
            "mean_l_star": {
                law: _mean_or_nan([self.outcomes[(law, b, m)].l_star for b, m in self.converged_set()])
                for law in self.compared_laws()
            },
            "mean_nrmse_per_trial": self.mean_nrmse_curves(),
        })


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _mean_or_nan(xs):
    return float(np.mean(xs)) if len(xs) else math.nan


# ---------------------------------------------------------------------------
# execution
# ---------------------------------------------------------------------------
_WORKER: dict = {}


def _build_laws(config: CampaignConfig) -> tuple:
    control = CartPendulumModel(CartPendulumParams().noiseless(), config.reference())
    laws: dict[str, LearningLaw] = {}
    if "ililc" in config.laws:
        laws["ililc"] = ILILC(synthesize(control, m_final=config.m_final).ginv)
    if "gradient" in config.laws:
        laws["gradient"] = GradientILC(control, gamma=config.gamma)
    if "nilc" in config.laws:
        laws["nilc"] = NILC(control)
    return control, laws


def _init_worker(config: CampaignConfig):
    _WORKER["config"] = config
    _WORKER["control"], _WORKER["laws"] = _build_laws(config)


def _run_one(task) -> SimulationOutcome:
    law_name, spec = task
    config: CampaignConfig = _WORKER["config"]
    control = _WORKER["control"]
    defaults = CartPendulumParams()
    params = CartPendulumParams.from_vector(spec.theta, sigma_c=defaults.sigma_c, sigma_y=defaults.sigma_y)
    truth = control.with_params(params)
    seed = noise_seed(config, spec.bin, spec.model)
    res: SimulationResult = run_simulation(_WORKER["laws"][law_name], truth, config.trials_for(law_name), seed)
    h = res.nrmse
    l_star = None
    if not res.divergent and len(h) == config.n_trials:
        l_star = detect_convergence(h, config.tolerance)
    return SimulationOutcome(
        law=law_name,
        bin=spec.bin,
        model=spec.model,
        error_norm=spec.error_norm,
        nrmse=h,
        max_abs_u=np.array([r.max_abs_u for r in res.records]),
        cond=[r.cond for r in res.records],
        flags=[r.flag for r in res.records],
        divergent=res.divergent,
        l_star=l_star,
    )


def run_campaign(config: CampaignConfig, progress=None) -> CampaignResult:
    """Run every configured law on every truth model.

    A simulation counts as converged only if it completed all ``n_trials``
    trials without divergence and ends below the tolerance.
    """
    specs = generate_truth_models(config, CartPendulumParams().as_vector())
    tasks = [(law, s) for s in specs for law in config.laws]
    result = CampaignResult(config)
    if config.threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(config.threads, initializer=_init_worker, initargs=(config,)) as pool:
            for i, out in enumerate(pool.map(_run_one, tasks)):
                result.outcomes[(out.law, out.bin, out.model)] = out
                if progress:
                    progress(i + 1, len(tasks), out)
    else:
        _init_worker(config)
        for i, task in enumerate(tasks):
            out = _run_one(task)
            result.outcomes[(out.law, out.bin, out.model)] = out
            if progress:
                progress(i + 1, len(tasks), out)
    return result


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------
def _fmt(x) -> str:
    if x is None:
        return ""
    return repr(float(x))


def _sim_id(law: str, b: int, m: int) -> str:
    return f"{law}-b{b:02d}-m{m:03d}"


def export_results(result: CampaignResult, out_dir) -> dict:
    """Write ``trials.csv``, ``summary.json``, ``histogram.csv`` and ``mean_nrmse.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "trials": out / "trials.csv",
        "summary": out / "summary.json",
        "histogram": out / "histogram.csv",
        "mean_nrmse": out / "mean_nrmse.csv",
    }
    with open(paths["trials"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for (law, b, m), o in sorted(result.outcomes.items()):
            for t, h in enumerate(o.nrmse):
                w.writerow([_sim_id(law, b, m), law, b, m, t, _fmt(h), _fmt(o.max_abs_u[t]), _fmt(o.cond[t]), o.flags[t]])
    summary = result.summary()
    with open(paths["summary"], "w") as fh:
        json.dump(summary, fh, indent=2, allow_nan=False)
    edges = result.config.bin_edges()
    pct = summary["bin_convergence_percent"]
    with open(paths["histogram"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin", "error_lo", "error_hi", *[f"{law}_percent" for law in result.config.laws]])
        for b in range(result.config.n_bins):
            w.writerow([b, _fmt(edges[b]), _fmt(edges[b + 1]), *[_fmt(pct[law][b]) for law in result.config.laws]])
    curves = summary["mean_nrmse_per_trial"]
    with open(paths["mean_nrmse"], "w", newline="") as fh:
        w = csv.writer(fh)
        laws = list(curves)
        w.writerow(["trial", *laws])
        n = max((len(c) for c in curves.values()), default=0)
        for t in range(n):
            w.writerow([t, *[_fmt(curves[law][t]) if t < len(curves[law]) else "" for law in laws]])
    return paths


def load_summary(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
