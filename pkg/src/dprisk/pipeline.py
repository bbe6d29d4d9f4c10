"""Run configuration and the fit -> copula -> portfolio -> risk orchestration."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from . import _rng
from .copula import CopulaModel, fit_copula, matrix_json, pca_projection, simulate_joint
from .diagnostics import hpd_interval, kde, mean_square_deviation, normal_density_grid, rpm_density_grid
from .dp_mixture import DpConfig, posterior_moments, run_blocked_gibbs
from .errors import DpRiskError, InputError, NumericalError
from .ingest import aligned_returns, ingest_csv
from .market import compute_log_returns
from .portfolio import PORTFOLIO_COLUMN, Portfolio, mean_variance_weights, portfolio_risk

log = logging.getLogger(__name__)

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL, EXIT_NOT_CONVERGED = 0, 2, 3, 4
STAGES = ("fit", "copula", "portfolio", "risk", "all")
_DP_FIELDS = {f.name for f in fields(DpConfig)}


@dataclass
class InputSpec:
    path: str
    date_column: str = "date"
    columns: list | dict | None = None

    @classmethod
    def coerce(cls, value):
        if isinstance(value, InputSpec):
            return value
        if isinstance(value, (str, os.PathLike)):
            return cls(str(value))
        return cls(**value)


@dataclass
class RunConfig:
    """Everything a pipeline run needs.

    ``dp`` holds :class:`DpConfig` fields shared by every asset and
    ``dp_per_asset`` per-asset overrides.  ``weights`` may be a list in
    asset order or an ``{asset: weight}`` mapping; when absent,
    ``mean_variance`` settings are used if given, else equal weights.
    """

    inputs: list
    output_dir: str = "out"
    dp: dict = field(default_factory=dict)
    dp_per_asset: dict = field(default_factory=dict)
    copula_df: float = 10.0
    weights: list | dict | None = None
    mean_variance: dict | None = None
    gammas: list = field(default_factory=lambda: [0.01, 0.05])
    wang_r: float = 0.5
    n_sims: int = 100_000
    seed: int = 0
    hpd_alpha: float = 0.1

    def __post_init__(self):
        if isinstance(self.inputs, (str, dict, InputSpec)):
            self.inputs = [self.inputs]
        self.inputs = [InputSpec.coerce(v) for v in self.inputs]
        if not self.inputs:
            raise InputError("at least one input file is required")
        self.gammas = [float(g) for g in self.gammas]
        self.n_sims = int(self.n_sims)
        self.seed = int(self.seed)

    def validate(self):
        for spec in self.inputs:
            if not Path(spec.path).is_file():
                raise InputError(f"input file not found: {spec.path}")
        if not self.gammas or any(not 0 < g < 1 for g in self.gammas):
            raise InputError(f"gamma levels must lie in (0, 1), got {self.gammas}")
        if self.n_sims < 1000:
            raise InputError(f"n_sims must be at least 1000, got {self.n_sims}")
        if not self.copula_df > 2:
            raise InputError(f"copula_df must exceed 2, got {self.copula_df}")
        if not 0 < self.hpd_alpha < 1:
            raise InputError(f"hpd_alpha must lie in (0, 1), got {self.hpd_alpha}")
        unknown = set(self.dp) - _DP_FIELDS
        for over in self.dp_per_asset.values():
            unknown |= set(over) - _DP_FIELDS
        if unknown:
            raise InputError(f"unknown DP settings: {sorted(unknown)}")
        if self.mean_variance is not None:
            extra = set(self.mean_variance) - {"risk_aversion", "target_return", "long_only"}
            if extra:
                raise InputError(f"unknown mean_variance settings: {sorted(extra)}")
        return self

    def dp_config(self, asset, seed):
        settings = {**self.dp, **self.dp_per_asset.get(asset, {}), "seed": seed}
        return DpConfig(**settings)

    def to_dict(self):
        d = asdict(self)
        d["inputs"] = [asdict(s) for s in self.inputs]
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise InputError(f"unknown configuration keys: {sorted(extra)}")
        if "inputs" not in d:
            raise InputError("configuration needs 'inputs'")
        return cls(**d)

    @classmethod
    def from_file(cls, path, overrides=None):
        """Load a YAML (or JSON) file; ``overrides`` win over file values."""
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise InputError(f"cannot read configuration {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise InputError(f"configuration {path} must be a mapping")
        base = Path(path).parent
        for spec in data.get("inputs", []) if isinstance(data.get("inputs"), list) else []:
            if isinstance(spec, dict) and "path" in spec and not Path(spec["path"]).is_absolute():
                spec["path"] = str(base / spec["path"])
        data.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_dict(data)


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _dump_json(obj, path):
    with open(path, "w") as fh:
        fh.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


class _Artifacts:
    def __init__(self, out_dir):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.entries = []

    def path(self, name):
        return self.dir / name

    def add(self, name, flagged=False, note=None):
        self.entries.append({"name": name, "sha256": _sha256(self.dir / name), "flagged": bool(flagged),
                             **({"note": note} if note else {})})

    def write_json(self, name, obj, **kw):
        _dump_json(obj, self.dir / name)
        self.add(name, **kw)

    def write_text(self, name, text, **kw):
        with open(self.dir / name, "w") as fh:
            fh.write(text)
        self.add(name, **kw)


@dataclass
class PipelineResult:
    exit_code: int
    output_dir: str
    manifest: dict
    report: object = None
    error: str | None = None


def _resolve_weights(config, asset_ids, returns):
    if config.weights is not None:
        w = config.weights
        if isinstance(w, dict):
            missing = set(asset_ids) - set(w)
            if missing:
                raise InputError(f"weights missing for assets {sorted(missing)}")
            w = [w[a] for a in asset_ids]
        if len(w) != len(asset_ids):
            raise InputError(f"{len(w)} weights for {len(asset_ids)} assets")
        return Portfolio.normalized(asset_ids, np.asarray(w, dtype=float))
    if config.mean_variance is not None and len(asset_ids) > 1:
        mv = config.mean_variance
        return mean_variance_weights(returns.mean(axis=0), np.cov(returns, rowvar=False),
                                     risk_aversion=mv.get("risk_aversion"),
                                     target_return=mv.get("target_return"),
                                     long_only=bool(mv.get("long_only", False)), asset_ids=asset_ids)
    return Portfolio.equal(asset_ids)


def _density_grids(returns, rpm):
    k = kde(returns)
    return [k, rpm_density_grid(rpm, k.x), normal_density_grid(returns, k.x)]


def run_pipeline(config: RunConfig, until="all") -> PipelineResult:
    """Run the stages up to ``until`` and write artifacts plus a manifest.

    Module errors end the run with a nonzero exit code; whatever was written
    before the failure is listed in the manifest, which records the failure.
    A sampler that stops at ``max_iter`` without meeting its alpha criterion
    still has its artifacts written, flagged, and the run exits with 4.
    """
    if until not in STAGES:
        raise InputError(f"unknown stage {until!r}; choose from {STAGES}")
    art = _Artifacts(config.output_dir)
    manifest = {"config": None, "stage": until, "status": "ok", "exit_code": EXIT_OK,
                "artifacts": art.entries, "ingest": [], "warnings": []}
    result = PipelineResult(EXIT_OK, str(art.dir), manifest)
    try:
        config.validate()
        # the output location is left out so reruns elsewhere give the same manifest
        manifest["config"] = {k: v for k, v in config.to_dict().items() if k != "output_dir"}
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            result.report = _run_stages(config, until, art, manifest)
        manifest["warnings"] = sorted({str(w.message) for w in caught})
        if any(a["flagged"] for a in art.entries):
            manifest["status"] = "not_converged"
            result.exit_code = EXIT_NOT_CONVERGED
    except InputError as exc:
        result.exit_code, result.error = EXIT_INPUT, str(exc)
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        result.exit_code, result.error = EXIT_NUMERICAL, str(exc)
    except DpRiskError as exc:
        result.exit_code, result.error = EXIT_INPUT, str(exc)
    if result.error is not None:
        manifest["status"] = "failed"
        manifest["error"] = result.error
        for entry in art.entries:
            entry["flagged"] = True
    manifest["exit_code"] = result.exit_code
    _dump_json(manifest, art.path("manifest.json"))
    return result


def _run_stages(config, until, art, manifest):
    series = []
    for spec in config.inputs:
        s, report = ingest_csv(spec.path, spec.date_column, spec.columns)
        series.extend(s)
        manifest["ingest"].append(report.to_dict())
    asset_ids = [s.asset_id for s in series]
    if len(set(asset_ids)) != len(asset_ids):
        raise InputError(f"duplicate asset ids across inputs: {asset_ids}")
    p = len(series)
    seeds = _rng.spawn_seeds(config.seed, p + 1)

    # per-asset fits are independent chains, one substream each
    marginals, hpd = [], {}
    for j, s in enumerate(series):
        r = compute_log_returns(s).returns
        res = run_blocked_gibbs(r, config.dp_config(s.asset_id, seeds[j]))
        rpm = res.rpm
        flagged = rpm.meta["stop_rule"] == "alpha_running_mean" and not rpm.meta["converged"]
        note = "sampler reached max_iter before the alpha criterion was met" if flagged else None
        art.write_json(f"rpm_{s.asset_id}.json", rpm.to_dict(), flagged=flagged, note=note)
        res.traces.to_csv(art.path(f"traces_{s.asset_id}.csv"))
        art.add(f"traces_{s.asset_id}.csv", flagged=flagged)
        marginals.append(rpm)
        if until == "all":
            grids = _density_grids(r, rpm)
            with open(art.path(f"density_{s.asset_id}.csv"), "w") as fh:
                fh.write("x,density,source\n")
                for g in grids:
                    for a, b in zip(g.x, g.density):
                        fh.write(f"{a:.17g},{b:.17g},{g.source}\n")
            art.add(f"density_{s.asset_id}.csv")
            post_mean, post_sd = posterior_moments(res.traces)
            hpd[s.asset_id] = {
                "msd_rpm_vs_kde": mean_square_deviation(grids[1], grids[0]),
                "msd_bs_vs_kde": mean_square_deviation(grids[2], grids[0]),
                "hpd_mean": list(hpd_interval(post_mean, config.hpd_alpha)),
                "hpd_sd": list(hpd_interval(post_sd, config.hpd_alpha)),
            }
    if until == "fit":
        return None

    _, observed = aligned_returns(series)
    if p >= 2:
        model, conc = fit_copula(observed, marginals, config.copula_df, asset_ids)
        tau = conc.tau
    else:
        model = CopulaModel(np.eye(1), config.copula_df, tuple(marginals), tuple(asset_ids))
        tau = np.eye(1)
    art.write_text("tau.json", matrix_json(tau, asset_ids, "tau") + "\n")
    art.write_text("sigma.json", matrix_json(model.correlation, asset_ids, "correlation") + "\n")
    joint = simulate_joint(model, config.n_sims, seeds[p])
    joint.to_csv(art.path("joint_sample.csv"))
    art.add("joint_sample.csv")
    if until == "all" and p >= 2:
        pca_projection(observed, joint.values).to_csv(art.path("pca.csv"))
        art.add("pca.csv")
    if until == "copula":
        return None

    portfolio = _resolve_weights(config, asset_ids, observed)
    art.write_text("weights.json", portfolio.to_json())
    if until == "portfolio":
        return None

    report = portfolio_risk(portfolio, model, config.gammas, config.wang_r, joint=joint, observed=observed)
    if p == 1:
        for source in report.values.values():
            source.pop(PORTFOLIO_COLUMN, None)
        report.columns = [c for c in report.columns if c != PORTFOLIO_COLUMN]
    art.write_text("risk_report.json", report.to_json())
    art.write_text("risk_report.txt", report.to_text())
    if until == "all" and hpd:
        art.write_json("diagnostics.json", hpd)
    return report
