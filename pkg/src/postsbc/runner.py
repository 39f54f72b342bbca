"""Configuration-driven SBC campaigns with resumable on-disk results.

A run directory holds::

    manifest.json      config hash, seed, resolved config, package version
    iterations.jsonl   one record per iteration (append-only while running)
    ranks.csv          iter,quantity,rank,S,status
    envelope.json      simultaneous band for the realized N
    <quantity>.svg     PIT-ECDF-difference plots
    recovery.csv       iter,quantity,true,posterior_mean
    report.json / report.txt
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass
from functools import partial
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .backends import Backend, build_backend
from .models import build_model
from .models.base import Dataset, ModelError, ModelSpec
from .models.io import DataFormatError, read_dataset
from .plotting import render_plot
from .sbc import (
    FAILED,
    FLAGGED,
    OK,
    IterationResult,
    RankEnsemble,
    SbcConfig,
    SbcError,
    base_posterior,
    posterior_task,
    prior_sbc_iteration,
    run_iterations,
)
from .uniformity import Envelope, band_check, chi2_pit, cook_chi2, pit_ecdf_diff, simultaneous_band

log = logging.getLogger("postsbc")

EXIT_PASS, EXIT_FAIL, EXIT_INVALID = 0, 1, 2

# keys that do not influence any computed value
NON_HASHED = ("output_dir", "workers", "plots", "name", "description", "chain_dump")


class ConfigError(ValueError):
    """Invalid experiment configuration (exit code 2)."""


class RunDirError(ValueError):
    """Missing or unreadable run directory (exit code 2)."""


def load_schema() -> dict:
    return json.loads((resources.files("postsbc") / "schema" / "experiment.schema.json").read_text())


@dataclass
class ExperimentConfig:
    raw: dict
    base_dir: Path

    @classmethod
    def from_file(cls, path: str | Path, **overrides) -> "ExperimentConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        return cls.from_dict(raw, path.parent, **overrides)

    @classmethod
    def from_dict(cls, raw: dict, base_dir: str | Path = ".", **overrides) -> "ExperimentConfig":
        raw = json.loads(json.dumps(raw))
        for key, value in overrides.items():
            if value is not None:
                raw[key] = value
        validator = jsonschema.Draft202012Validator(load_schema())
        errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
        if errors:
            err = errors[0]
            where = "/".join(str(p) for p in err.absolute_path) or "<root>"
            raise ConfigError(f"invalid config at {where}: {err.message}")
        if raw["mode"] == "posterior" and "data" not in raw:
            raise ConfigError("posterior mode requires 'data' (a path, or {\"empty\": true})")
        return cls(raw, Path(base_dir))

    # -- accessors ---------------------------------------------------------

    @property
    def mode(self) -> str:
        return self.raw["mode"]

    @property
    def seed(self) -> int:
        return int(self.raw.get("seed", 0))

    @property
    def workers(self) -> int:
        return int(self.raw.get("workers", 1))

    @property
    def coverage(self) -> float:
        return float(self.raw.get("coverage", 0.95))

    @property
    def output_dir(self) -> Path:
        return Path(self.raw.get("output_dir", "run"))

    def hashed(self) -> dict:
        return {k: v for k, v in self.raw.items() if k not in NON_HASHED}

    def config_hash(self) -> str:
        canon = json.dumps(self.hashed(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def model(self) -> ModelSpec:
        spec = self.raw["model"]
        try:
            return build_model(spec["id"], **spec.get("params", {}))
        except (ModelError, TypeError) as exc:
            raise ConfigError(f"invalid model: {exc}") from None

    def _backend(self, spec: dict) -> Backend:
        try:
            return build_backend(spec)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid backend {spec}: {exc}") from None

    def sbc_config(self) -> SbcConfig:
        s = dict(self.raw.get("sbc", {}))
        base = self.raw.get("base", {})
        base_model = None
        if "model" in base:
            spec = base["model"]
            try:
                base_model = build_model(spec["id"], **spec.get("params", {}))
            except (ModelError, TypeError) as exc:
                raise ConfigError(f"invalid base model: {exc}") from None
        backend_spec = dict(self.raw.get("backend", {"kind": "hmc"}))
        backend_spec.setdefault("seed", self.seed)
        try:
            return SbcConfig(
                iterations=int(s.get("iterations", 100)),
                ranks_S=int(s.get("ranks_S", 100)),
                posterior_draws_per_iteration=s.get("posterior_draws_per_iteration"),
                test_quantities=tuple(s.get("test_quantities", ())),
                base_data_fraction=float(s.get("base_data_fraction", 1.0)),
                loglik_conditioning=s.get("loglik_conditioning", "augmented"),
                seed=self.seed,
                backend=self._backend(backend_spec),
                base_backend=self._backend(base["backend"]) if "backend" in base else None,
                base_model=base_model,
            )
        except ValueError as exc:
            raise ConfigError(f"invalid sbc settings: {exc}") from None

    def data(self, model: ModelSpec) -> Dataset:
        spec = self.raw["data"]
        if spec.get("empty"):
            return model.empty_data()
        path = Path(spec["path"])
        if not path.is_absolute():
            path = self.base_dir / path
        meta = {"n_groups": getattr(model, "J")} if model.data_kind == "grouped" else {}
        try:
            data = read_dataset(path, model.data_kind, **meta)
        except FileNotFoundError:
            raise ConfigError(f"data file {path} not found") from None
        except DataFormatError as exc:
            raise ConfigError(f"data file {path}: {exc}") from None
        if len(data) == 0:
            raise ConfigError(f"data file {path} has no observations; use {{\"empty\": true}} for empty data")
        return data


# -- persistence ---------------------------------------------------------------


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_records(run_dir: Path, config_hash: str | None = None) -> dict[int, dict]:
    """Latest record per iteration; records from another config hash are ignored."""
    path = run_dir / "iterations.jsonl"
    out: dict[int, dict] = {}
    if not path.exists():
        return out
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError:
            continue  # a torn final line from an interrupted write
        if config_hash is not None and rec.get("config_hash") != config_hash:
            continue
        out[int(rec["iter"])] = rec
    return out


def _record(result: IterationResult, config_hash: str) -> dict:
    rec = result.to_record()
    rec["config_hash"] = config_hash
    return rec


def write_ranks_csv(path: Path, ensemble: RankEnsemble) -> None:
    lines = ["iter,quantity,rank,S,status"]
    for r in ensemble.results:
        if r.status == FAILED:
            continue
        for q in ensemble.quantities:
            lines.append(f"{r.iteration},{q},{r.ranks[q]},{ensemble.S},{r.status}")
    path.write_text("\n".join(lines) + "\n")


def write_recovery_csv(path: Path, ensemble: RankEnsemble) -> None:
    lines = ["iter,quantity,true,posterior_mean"]
    for r in ensemble.usable():
        for q in ensemble.quantities:
            if q in r.posterior_mean and q in r.theta_prime:
                lines.append(f"{r.iteration},{q},{r.theta_prime[q]!r},{r.posterior_mean[q]!r}")
    path.write_text("\n".join(lines) + "\n")


def write_chain_dump(path: Path, chains, names) -> None:
    """CSV ``chain,draw,<param names...>,accept,divergent`` of unconstrained draws."""
    lines = [",".join(["chain", "draw", *names, "accept", "divergent"])]
    for c, ch in enumerate(chains):
        for d in range(len(ch.draws)):
            vals = ",".join(repr(float(v)) for v in ch.draws[d])
            lines.append(f"{c},{d},{vals},{ch.accept_rates[d]!r},{int(ch.divergent[d])}")
    path.write_text("\n".join(lines) + "\n")


# -- reporting -----------------------------------------------------------------


def _fmt(v) -> str:
    return "n/a" if v is None or (isinstance(v, float) and not math.isfinite(v)) else f"{v:.4g}"


def build_report(ensemble: RankEnsemble, envelope: Envelope | None, manifest: dict) -> dict:
    counts = ensemble.status_counts()
    complete = not ensemble.missing
    quantities = {}
    for q in ensemble.quantities:
        ranks = ensemble.ranks(q)
        entry: dict = {"N": int(len(ranks))}
        if envelope is not None and len(ranks):
            verdict = band_check(pit_ecdf_diff(ranks, ensemble.S), envelope)
            entry.update(verdict.to_dict(q))
            stat, p = cook_chi2(chi2_pit(ranks, ensemble.S))
            entry["chi2"] = {"statistic": stat, "p_value": p}
            strict = ensemble.ranks(q, include_flagged=False)
            if counts[FLAGGED] and len(strict):
                env2 = simultaneous_band(len(strict), ensemble.S, envelope.coverage, seed=envelope.seed)
                entry["excluding_flagged"] = {
                    "N": int(len(strict)),
                    "verdict": band_check(pit_ecdf_diff(strict, ensemble.S), env2).label,
                }
        else:
            entry["verdict"] = "NO-DATA"
        quantities[q] = entry
    n_pass = sum(1 for e in quantities.values() if e.get("verdict") == "PASS")
    n_q = len(quantities)
    overall = "PASS" if n_pass == n_q else "FAIL"
    walls = [r.wall_time for r in ensemble.results]
    return {
        "status": "complete" if complete else "incomplete",
        "summary": f"{overall} ({n_pass}/{n_q} quantities)",
        "overall": overall,
        "mode": manifest.get("mode"),
        "model": manifest.get("model"),
        "config_hash": manifest.get("config_hash"),
        "seed": manifest.get("seed"),
        "N_expected": ensemble.expected,
        "N_used": ensemble.N,
        "S": ensemble.S,
        "coverage": envelope.coverage if envelope is not None else None,
        "iterations": {**counts, "missing": len(ensemble.missing)},
        "missing_iterations": ensemble.missing,
        "divergent_iterations": sum(1 for r in ensemble.results if r.divergence_count > 0),
        "wall_clock": {
            "total_seconds": round(float(sum(walls)), 3),
            "mean_seconds_per_iteration": round(float(np.mean(walls)), 3) if walls else None,
            "base_posterior_seconds": manifest.get("base_posterior_seconds"),
        },
        "base_posterior": manifest.get("base_posterior"),
        "quantities": quantities,
    }


def report_text(report: dict) -> str:
    lines = [f"{report['summary']}  [{report['status']}]"]
    it = report["iterations"]
    lines.append(
        f"mode={report['mode']} model={report['model']} seed={report['seed']} "
        f"N={report['N_used']}/{report['N_expected']} S={report['S']}"
    )
    lines.append(
        f"iterations: ok={it[OK]} flagged={it[FLAGGED]} failed={it[FAILED]} missing={it['missing']}; "
        f"with divergences={report['divergent_iterations']}"
    )
    wc = report["wall_clock"]
    lines.append(f"wall clock: {wc['total_seconds']} s total, {wc['mean_seconds_per_iteration']} s per iteration")
    for q, e in report["quantities"].items():
        chi = e.get("chi2")
        extra = f"  chi2 p={_fmt(chi['p_value'])}" if chi else ""
        lines.append(f"  {q}: {e['verdict']}{extra}")
        for x in e.get("excursions", []):
            lines.append(f"    {x['interpretation']} (u {x['start']:.3f}-{x['end']:.3f}, max {x['magnitude']:.4f})")
        if "excluding_flagged" in e:
            ef = e["excluding_flagged"]
            lines.append(f"    excluding flagged iterations (N={ef['N']}): {ef['verdict']}")
    if report["status"] == "incomplete":
        missing = report["missing_iterations"]
        shown = ", ".join(map(str, missing[:20])) + (" ..." if len(missing) > 20 else "")
        lines.append(f"missing iterations: {shown}")
    return "\n".join(lines) + "\n"


def _exit_code(report: dict) -> int:
    if report["status"] == "incomplete":
        return EXIT_PASS
    return EXIT_PASS if report["overall"] == "PASS" else EXIT_FAIL


def ensemble_from_dir(run_dir: Path) -> tuple[RankEnsemble, dict]:
    run_dir = Path(run_dir)
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        raise RunDirError(f"{run_dir} holds no manifest.json")
    manifest = json.loads(manifest_path.read_text())
    records = read_records(run_dir, manifest["config_hash"])
    if not records:
        raise RunDirError(f"{run_dir} holds no iteration records")
    results = [IterationResult.from_record(records[i]) for i in sorted(records)]
    return RankEnsemble(manifest["S"], tuple(manifest["quantities"]), results, manifest["iterations"]), manifest


def assemble(run_dir: Path, plots: bool = True) -> dict:
    """Write ranks, envelope, plots and report from the records in ``run_dir``."""
    ensemble, manifest = ensemble_from_dir(run_dir)
    # rewrite the sink in iteration order so its layout does not depend on scheduling
    records = read_records(run_dir, manifest["config_hash"])
    (run_dir / "iterations.jsonl").write_text("".join(json.dumps(records[i], sort_keys=True) + "\n" for i in sorted(records)))
    write_ranks_csv(run_dir / "ranks.csv", ensemble)
    write_recovery_csv(run_dir / "recovery.csv", ensemble)
    envelope = None
    if ensemble.N:
        envelope = simultaneous_band(ensemble.N, ensemble.S, manifest.get("coverage", 0.95), seed=manifest.get("band_seed", 0))
        (run_dir / "envelope.json").write_text(envelope.to_json())
        if plots:
            for q in ensemble.quantities:
                (run_dir / f"{q}.svg").write_text(render_plot(ensemble, envelope, q))
    report = build_report(ensemble, envelope, manifest)
    _write_json(run_dir / "report.json", report)
    (run_dir / "report.txt").write_text(report_text(report))
    return report


# -- running -------------------------------------------------------------------


@dataclass
class RunOutcome:
    exit_code: int
    report: dict
    run_dir: Path


def run_experiment(
    config: ExperimentConfig, resume: bool = False, stop_after: int | None = None, output_dir: str | Path | None = None
) -> RunOutcome:
    """Execute a campaign and write every artifact into the output directory.

    ``stop_after`` computes at most that many new iterations, leaving an
    incomplete run that a later ``resume=True`` call finishes.
    """
    run_dir = Path(output_dir) if output_dir is not None else config.output_dir
    model = config.model()
    sbc = config.sbc_config()
    data = config.data(model) if config.mode == "posterior" else None
    try:
        run_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {run_dir}: {exc}") from None
    chash = config.config_hash()
    manifest_path = run_dir / "manifest.json"
    sink = run_dir / "iterations.jsonl"

    done: dict[int, dict] = {}
    if resume:
        done = read_records(run_dir, chash)
        if manifest_path.exists() and json.loads(manifest_path.read_text()).get("config_hash") != chash:
            log.warning("existing run in %s has a different config hash; its records are ignored", run_dir)
            done = {}
    if not done and sink.exists():
        sink.unlink()

    quantities = sbc.quantities(model)
    for q in quantities:
        if q != "loglik" and q not in model.param_names:
            raise ConfigError(f"unknown test quantity {q!r} for model {model.name}")
    manifest = {
        "config_hash": chash,
        "seed": config.seed,
        "mode": config.mode,
        "model": model.name,
        "model_params": model.describe(),
        "backend": sbc.backend.describe(),
        "iterations": sbc.iterations,
        "S": sbc.ranks_S,
        "quantities": list(quantities),
        "coverage": config.coverage,
        "band_seed": int(config.raw.get("band_seed", 0)),
        "version": __version__,
        "config": config.raw,
    }

    if config.mode == "prior":
        task = partial(prior_sbc_iteration, model, sbc)
    else:
        t0 = time.perf_counter()
        try:
            base = base_posterior(model, data, sbc)
        except SbcError as exc:
            raise ConfigError(str(exc)) from None
        manifest["base_posterior_seconds"] = round(time.perf_counter() - t0, 3)
        manifest["base_posterior"] = {
            "n_obs": len(base.data),
            "rhat_max": base.rhat_max,
            "ess_min": base.ess_min,
            "warnings": base.warnings,
        }
        for w in base.warnings:
            log.warning(w)
        if config.raw.get("chain_dump") and base.fit is not None and "chains" in base.fit.extra:
            source = sbc.base_model or model
            write_chain_dump(run_dir / "base_chains.csv", base.fit.extra["chains"], source.param_names)
        task = posterior_task(model, base, sbc)
    _write_json(manifest_path, manifest)

    pending = [i for i in range(sbc.iterations) if i not in done]
    if stop_after is not None:
        pending = pending[: max(0, stop_after)]
    with sink.open("a") as fh:
        for res in run_iterations(task, pending, config.workers):
            fh.write(json.dumps(_record(res, chash), sort_keys=True) + "\n")
            fh.flush()
            log.info(
                "iter %d %s ranks=%s rhat=%s ess=%s div=%d %.2fs%s",
                res.iteration, res.status, res.ranks, _fmt(res.rhat_max), _fmt(res.ess_min),
                res.divergence_count, res.wall_time, f" cause={res.cause}" if res.cause else "",
            )
    report = assemble(run_dir, plots=config.raw.get("plots", True))
    return RunOutcome(_exit_code(report), report, run_dir)


def report_run(run_dir: str | Path) -> RunOutcome:
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise RunDirError(f"{run_dir} is not a directory")
    report = assemble(run_dir, plots=False)
    return RunOutcome(_exit_code(report), report, run_dir)


def plot_run(run_dir: str | Path) -> list[Path]:
    run_dir = Path(run_dir)
    ensemble, manifest = ensemble_from_dir(run_dir)
    if ensemble.N == 0:
        raise RunDirError(f"{run_dir} has no usable iterations to plot")
    envelope = simultaneous_band(ensemble.N, ensemble.S, manifest.get("coverage", 0.95), seed=manifest.get("band_seed", 0))
    out = []
    for q in ensemble.quantities:
        path = run_dir / f"{q}.svg"
        path.write_text(render_plot(ensemble, envelope, q))
        out.append(path)
    return out
