"""Manifest-driven verification runs and machine-readable reports.

A manifest is a JSON document declaring named structures (catalog
references or inline chart definitions with expression strings) and an
ordered task list.  Running it produces a report: one record per check,
each carrying the name of the identity it certifies, the measured
residual, the tolerance, rank data, and a pass flag.  Reports serialize
to JSON losslessly and are written atomically; repeated runs with the
same seed produce identical reports apart from timestamps.
"""

from __future__ import annotations

import json
import os
import platform
import tempfile
import time
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import resources

import numpy as np
import scipy

from . import cohomology, embed, forms, models, reduction
from . import symexpr as sx

REPORT_FORMAT = "lcskit-report-v1"
PACKAGE_VERSION = "0.1.0"

_VOLATILE_KEYS = ("started_utc", "wall_time_s")


class ManifestError(Exception):
    """Unusable manifest: parse failure, missing field, unresolvable name."""


# ---------------------------------------------------------------------------
# report model


@dataclass(frozen=True)
class CheckRecord:
    """One certified check: the identity it traces to, the measured
    residual against its tolerance, and any rank bookkeeping."""

    name: str
    anchor: str
    max_residual: float | None
    tolerance: float | None
    rank_data: dict
    passed: bool
    detail: str = ""

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "anchor": self.anchor,
            "max_residual": self.max_residual,
            "tolerance": self.tolerance,
            "rank_data": dict(self.rank_data),
            "passed": self.passed,
            "detail": self.detail,
        }

    @staticmethod
    def from_dict(d: Mapping) -> "CheckRecord":
        return CheckRecord(
            name=d["name"],
            anchor=d["anchor"],
            max_residual=d["max_residual"],
            tolerance=d["tolerance"],
            rank_data=dict(d["rank_data"]),
            passed=d["passed"],
            detail=d.get("detail", ""),
        )


def environment_stamp() -> dict:
    return {
        "package": PACKAGE_VERSION,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "platform": platform.platform(),
    }


@dataclass
class RunReport:
    """Full outcome of one manifest run."""

    seed: int
    manifest: str
    threads: int
    environment: dict
    started_utc: str
    wall_time_s: float
    records: list[CheckRecord] = field(default_factory=list)

    @property
    def green(self) -> bool:
        return all(r.passed for r in self.records)

    def to_dict(self) -> dict:
        return {
            "format": REPORT_FORMAT,
            "seed": self.seed,
            "manifest": self.manifest,
            "threads": self.threads,
            "environment": dict(self.environment),
            "started_utc": self.started_utc,
            "wall_time_s": self.wall_time_s,
            "green": self.green,
            "records": [r.to_dict() for r in self.records],
        }

    @staticmethod
    def from_dict(d: Mapping) -> "RunReport":
        if d.get("format") != REPORT_FORMAT:
            raise ManifestError(f"not a {REPORT_FORMAT} document")
        return RunReport(
            seed=d["seed"],
            manifest=d["manifest"],
            threads=d["threads"],
            environment=dict(d["environment"]),
            started_utc=d["started_utc"],
            wall_time_s=d["wall_time_s"],
            records=[CheckRecord.from_dict(r) for r in d["records"]],
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @staticmethod
    def from_json(text: str) -> "RunReport":
        return RunReport.from_dict(json.loads(text))

    def stable_dict(self) -> dict:
        """The report content with run-time-varying fields removed."""
        d = self.to_dict()
        for key in _VOLATILE_KEYS:
            d.pop(key, None)
        return d

    def write(self, path: str) -> None:
        """Atomic write: the file appears complete or not at all."""
        directory = os.path.dirname(os.path.abspath(path)) or "."
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".report-", suffix=".json")
        try:
            with os.fdopen(fd, "w") as handle:
                handle.write(self.to_json())
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


def load_report(path: str) -> RunReport:
    try:
        with open(path) as handle:
            return RunReport.from_json(handle.read())
    except OSError as exc:
        raise ManifestError(f"cannot read report {path!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}:{exc.lineno}: {exc.msg}") from exc


# ---------------------------------------------------------------------------
# manifest model


@dataclass
class Manifest:
    """Parsed manifest: declarations plus an ordered task list."""

    path: str
    seed: int
    samples: int | None
    structures: dict[str, dict]
    tasks: list[dict]

    def __post_init__(self):
        self._cache: dict[str, models.LcsStructure] = {}

    def structure(self, name: str) -> models.LcsStructure:
        if name not in self.structures:
            known = ", ".join(sorted(self.structures)) or "none"
            raise ManifestError(f"unknown structure {name!r} (declared: {known})")
        if name not in self._cache:
            self._cache[name] = _build_structure(name, self.structures[name])
        return self._cache[name]


def load_manifest(path: str) -> Manifest:
    if path == "selftest":
        text = bundled_selftest_text()
        label = "selftest"
    else:
        try:
            with open(path) as handle:
                text = handle.read()
        except OSError as exc:
            raise ManifestError(f"cannot read manifest {path!r}: {exc}") from exc
        label = path
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{label}:{exc.lineno}: {exc.msg}") from exc
    return parse_manifest(data, label)


def parse_manifest(data, path: str = "<memory>") -> Manifest:
    if not isinstance(data, dict):
        raise ManifestError("manifest must be a JSON object")
    if "seed" not in data:
        raise ManifestError("manifest must declare a seed (reproducibility)")
    seed = data["seed"]
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ManifestError("seed must be an integer")
    samples = data.get("samples")
    if samples is not None and (not isinstance(samples, int) or samples <= 0):
        raise ManifestError("samples must be a positive integer")
    structures = data.get("structures", {})
    if not isinstance(structures, dict):
        raise ManifestError("structures must be an object of named declarations")
    tasks = data.get("tasks", [])
    if not isinstance(tasks, list) or not all(isinstance(t, dict) for t in tasks):
        raise ManifestError("tasks must be a list of objects")
    for i, task in enumerate(tasks):
        if task.get("kind") not in _TASK_RUNNERS:
            raise ManifestError(
                f"task {i}: unknown kind {task.get('kind')!r} "
                f"(expected one of {', '.join(sorted(_TASK_RUNNERS))})"
            )
    return Manifest(path, seed, samples, dict(structures), list(tasks))


def bundled_selftest_text() -> str:
    return resources.files("lcskit").joinpath("manifests/selftest.json").read_text()


# ---------------------------------------------------------------------------
# structure declarations


def _build_structure(name: str, decl) -> models.LcsStructure:
    if not isinstance(decl, dict):
        raise ManifestError(f"structure {name!r}: declaration must be an object")
    if "catalog" in decl:
        return _catalog_structure(name, decl)
    if "chart" in decl:
        return _inline_structure(name, decl["chart"])
    raise ManifestError(f"structure {name!r}: expected a 'catalog' reference or an inline 'chart'")


def _catalog_structure(name: str, decl: dict) -> models.LcsStructure:
    entry = decl["catalog"]
    args = decl.get("args", {})
    if not isinstance(args, dict):
        raise ManifestError(f"structure {name!r}: args must be an object")
    factories: dict[str, Callable] = {
        "liouville": lambda: models.model_liouville(int(args["n"])),
        "sphere_circle": lambda: models.model_sphere_circle(
            int(args["N"]), float(args.get("q", 1.0))
        ),
        "reduction_universal": lambda: models.model_reduction_universal(
            int(args["k"]), int(args["N"]), [float(v) for v in args["mu"]]
        ),
    }
    if entry not in factories:
        raise ManifestError(
            f"structure {name!r}: unknown catalog entry {entry!r} "
            f"(expected one of {', '.join(sorted(factories))})"
        )
    try:
        return factories[entry]()
    except KeyError as exc:
        raise ManifestError(f"structure {name!r}: missing argument {exc.args[0]!r}") from exc
    except (models.ModelError, ValueError, TypeError) as exc:
        raise ManifestError(f"structure {name!r}: {exc}") from exc


def _parse_expr(text, where: str) -> sx.Expr:
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        return sx.const(text)
    if not isinstance(text, str):
        raise ManifestError(f"{where}: expected an expression string")
    try:
        return sx.parse(text)
    except sx.ParseError as exc:
        raise ManifestError(f"{where}: {exc}") from exc


def _inline_structure(name: str, chart_decl) -> models.LcsStructure:
    where = f"structure {name!r}"
    if not isinstance(chart_decl, dict):
        raise ManifestError(f"{where}: chart must be an object")
    coords = chart_decl.get("coordinates")
    if not isinstance(coords, list) or not coords:
        raise ManifestError(f"{where}: chart needs a non-empty coordinates list")
    coord_tuples = []
    for c in coords:
        try:
            coord_tuples.append(
                (c["name"], c.get("kind", "linear"), c.get("lower", -1.0), c.get("upper", 1.0))
            )
        except (TypeError, KeyError) as exc:
            raise ManifestError(f"{where}: malformed coordinate entry {c!r}") from exc
    try:
        dom = forms.make_domain(name, coord_tuples)
    except forms.FormError as exc:
        raise ManifestError(f"{where}: {exc}") from exc

    def one_form(key: str, required: bool) -> forms.DifferentialForm | None:
        mapping = chart_decl.get(key)
        if mapping is None:
            if required:
                raise ManifestError(f"{where}: chart needs a {key!r} one-form")
            return None
        if not isinstance(mapping, dict):
            raise ManifestError(f"{where}: {key} must map coordinate names to expressions")
        coeffs = {}
        for cname, text in mapping.items():
            coeffs[(dom.index(cname),)] = _parse_expr(text, f"{where}: {key}[{cname}]")
        return forms.DifferentialForm(dom, 1, coeffs)

    def vector_field(key: str) -> forms.VectorField | None:
        mapping = chart_decl.get(key)
        if mapping is None:
            return None
        if not isinstance(mapping, dict):
            raise ManifestError(f"{where}: {key} must map coordinate names to expressions")
        comps = [sx.ZERO] * dom.dim
        for cname, text in mapping.items():
            comps[dom.index(cname)] = _parse_expr(text, f"{where}: {key}[{cname}]")
        return forms.VectorField(dom, tuple(comps))

    try:
        alpha = one_form("alpha", required=True)
        lee = one_form("lee", required=True)
        phi_decl = chart_decl.get("phi", "twisted")
        if phi_decl == "twisted":
            phi = reduction.d_twisted(lee, alpha)
        elif isinstance(phi_decl, dict):
            coeffs = {}
            for key, text in phi_decl.items():
                parts = key.split("^")
                if len(parts) != 2:
                    raise ManifestError(f"{where}: phi key {key!r} must look like 'x^y'")
                idx = (dom.index(parts[0]), dom.index(parts[1]))
                coeffs[idx] = _parse_expr(text, f"{where}: phi[{key}]")
            phi = forms.DifferentialForm(dom, 2, coeffs)
        else:
            raise ManifestError(f"{where}: phi must be 'twisted' or a coefficient object")
        chart = models.StructureChart(
            dom,
            phi,
            lee,
            alpha,
            vector_field("b_field"),
            vector_field("anti_lee"),
            name=name,
        )
    except (forms.FormError, sx.UnknownCoordinateError) as exc:
        raise ManifestError(f"{where}: {exc}") from exc
    return models.LcsStructure(name, "inline", (chart,))


# ---------------------------------------------------------------------------
# task execution


@dataclass(frozen=True)
class RunOptions:
    """Command-line overrides applied on top of manifest values."""

    seed: int | None = None
    tol: float | None = None
    samples: int | None = None
    fail_fast: bool = False
    threads: int = 1


def _opt(override, task_value, default):
    if override is not None:
        return override
    if task_value is not None:
        return task_value
    return default


def _failure_record(task: dict, label: str, exc: Exception) -> CheckRecord:
    return CheckRecord(
        name=label,
        anchor="task execution",
        max_residual=None,
        tolerance=None,
        rank_data={},
        passed=False,
        detail=f"{type(exc).__name__}: {exc}",
    )


def _run_verify(manifest: Manifest, task: dict, opts: RunOptions, seed: int) -> list[CheckRecord]:
    sname = task.get("structure")
    if not isinstance(sname, str):
        raise ManifestError("verify task needs a 'structure' name")
    S = manifest.structure(sname)
    samples = _opt(opts.samples, task.get("samples"), manifest.samples or 200)
    tol = _opt(opts.tol, task.get("tol"), 1e-9)
    rep = models.validate_first_kind(S, samples=samples, tol=tol, seed=seed)
    failing = [f"{chart}:{label}" for chart, label, c in rep.checks if not c.passed]
    return [
        CheckRecord(
            name=f"verify:{sname}",
            anchor="first-kind structure identities",
            max_residual=rep.worst(),
            tolerance=tol,
            rank_data={
                "dimension": S.dim,
                "charts": len(S.charts),
                "min_two_form_rank": rep.min_rank,
            },
            passed=rep.passed,
            detail="; ".join(failing) if failing else f"{len(rep.checks)} identities certified",
        )
    ]


_CORPUS = {
    "circle": embed.problem_circle,
    "torus": embed.problem_torus,
    "sphere3": embed.problem_sphere3,
    "zero_form": embed.problem_zero_form,
}


def _run_embed(manifest: Manifest, task: dict, opts: RunOptions, seed: int) -> list[CheckRecord]:
    tol = _opt(opts.tol, task.get("tol"), 1e-9)
    records: list[CheckRecord] = []
    if "corpus" in task:
        entry = task["corpus"]
        if entry not in _CORPUS:
            raise ManifestError(
                f"unknown corpus entry {entry!r} (expected one of {', '.join(sorted(_CORPUS))})"
            )
        prob = _CORPUS[entry](rho=float(task.get("rho", 1.2)))
        sol = embed.build_sphere_pipeline(prob, N=task.get("pairs"), tol=tol, seed=seed)
        worst = max((c.max_residual for _, c in sol.certifications), default=0.0)
        records.append(
            CheckRecord(
                name=f"embed:corpus:{entry}",
                anchor="contact pullback identity on the sphere target",
                max_residual=worst,
                tolerance=tol,
                rank_data={"pairs": sol.pairs, "ambient_dim": sol.ambient.dim},
                passed=sol.passed,
            )
        )
        if task.get("literal_defect"):
            lit = embed.build_psi2(prob, tol=tol, seed=seed, doubled_pair=False)
            worst = max((c.max_residual for _, c in lit.defects), default=0.0)
            records.append(
                CheckRecord(
                    name=f"embed:corpus:{entry}:literal-defect",
                    anchor="uncorrected-pair defect equals half the potential differential",
                    max_residual=worst,
                    tolerance=tol,
                    rank_data={"pairs": lit.pairs},
                    passed=all(c.passed for _, c in lit.defects),
                )
            )
        return records
    sname = task.get("structure")
    if not isinstance(sname, str):
        raise ManifestError("embed task needs either a 'corpus' entry or a 'structure' name")
    S = manifest.structure(sname)
    samples = _opt(opts.samples, task.get("samples"), manifest.samples or 200)
    prob, tau = embed.problem_from_sphere_circle(
        S, rho=float(task.get("rho", 1.2)), samples=max(samples, 200)
    )
    res = embed.build_lcs_embedding(
        S, prob, tau, N=int(task.get("pairs", 10)), tol=tol, seed=seed, samples=samples
    )
    worst = max((c.max_residual for _, _, c in res.certifications), default=0.0)
    records.append(
        CheckRecord(
            name=f"embed:product:{sname}",
            anchor="product embedding pullback identities (potential, Lee form, two-form)",
            max_residual=worst,
            tolerance=tol,
            rank_data={
                "immersion_rank": res.immersion_rank,
                "expected_rank": res.expected_rank,
                "target_dim": res.target.dim,
            },
            passed=res.passed,
            detail=f"morphism strict={res.morphism.strict} full={res.morphism.full}",
        )
    )
    return records


_STAGE_ANCHORS = {
    "cotangent_torus_extension": "strong reducibility of the torus-extension graph",
    "jet_space_extension": "strong reducibility of the flow graph in the jet extension",
    "shear_normalization": "shear normalization preserves the structure",
    "universal_transplant": "strong reducibility of the transplanted graph in the universal model",
}


def _chain_kwargs(task: dict, opts: RunOptions, manifest: Manifest) -> dict:
    kwargs = {}
    for key in (
        "samples",
        "tol",
        "flow_tol",
        "window",
        "margin",
        "flow_samples",
        "verify_samples",
        "concat_samples",
        "concat_tol",
    ):
        if key in task:
            kwargs[key] = task[key]
    if opts.samples is not None:
        kwargs["samples"] = opts.samples
    elif "samples" not in kwargs and manifest.samples is not None:
        kwargs["samples"] = manifest.samples
    if opts.tol is not None:
        kwargs["tol"] = opts.tol
    return kwargs


def _run_chain(manifest: Manifest, task: dict, opts: RunOptions, seed: int) -> list[CheckRecord]:
    source = task.get("input", "sphere_circle")
    if source == "plane":
        chart, decomp, factory = reduction.plane_chain_input()
        label = "plane"
    elif source == "sphere_circle":
        sname = task.get("structure")
        if not isinstance(sname, str):
            raise ManifestError("reduce-chain task on a sphere model needs a 'structure' name")
        S = manifest.structure(sname)
        chart, decomp, factory = reduction.sphere_circle_chain_input(
            S, chart_index=int(task.get("chart_index", 0))
        )
        label = sname
    else:
        raise ManifestError(f"unknown chain input {source!r} (expected 'plane' or 'sphere_circle')")
    chain = reduction.run_reduction_chain(
        chart, decomp, factory, seed=seed, **_chain_kwargs(task, opts, manifest)
    )
    records = []
    for step in chain.steps:
        rank_data: dict = {"dimension": step.chart.domain.dim}
        detail = ""
        if step.report is not None:
            rep = step.report
            residual = rep.worst_pullback()
            tolerance = rep.pullback_tol
            detail = (
                f"tangency=({rep.b_tangency:.2e},{rep.e_tangency:.2e})<={rep.tol:.0e} "
                f"gap={rep.quotient_kernel_gap:.2e}<={rep.gap_tol:.0e}"
            )
            rank_data.update(
                distribution_rank=rep.distribution_rank,
                two_form_kernel_rank=rep.two_form_kernel_rank,
                kernel_ranks_agree=rep.kernel_ranks_agree,
                samples_used=rep.samples_used,
                samples_skipped=rep.samples_skipped,
            )
        else:
            residual = max((v for _, v in step.extras), default=0.0)
            tolerance = None
        records.append(
            CheckRecord(
                name=f"chain:{label}:{step.name}",
                anchor=_STAGE_ANCHORS.get(step.name, "reduction stage certification"),
                max_residual=residual,
                tolerance=tolerance,
                rank_data=rank_data,
                passed=step.passed,
                detail=detail,
            )
        )
    records.append(
        CheckRecord(
            name=f"chain:{label}:concatenation",
            anchor="two-stage against one-stage quotient agreement",
            max_residual=chain.concatenation,
            tolerance=chain.concatenation_tol,
            rank_data={},
            passed=chain.concatenation <= chain.concatenation_tol,
        )
    )
    return records


def _mu_label(mu) -> str:
    return "(" + ",".join(format(float(v), "g") for v in mu) + ")"


def _run_cohomology(manifest: Manifest, task: dict, opts: RunOptions, seed: int) -> list[CheckRecord]:
    try:
        n = int(task["n"])
        m = int(task["m"])
    except KeyError as exc:
        raise ManifestError(f"cohomology task needs {exc.args[0]!r}") from exc
    if task.get("obstruction"):
        threshold = float(task.get("threshold", 0.1))
        rep = cohomology.ot_obstruction_check(n, m, threshold=threshold)
        return [
            CheckRecord(
                name=f"cohomology:obstruction:T{n}:m{m}",
                anchor="area cochain obstruction distance and invariant closedness",
                max_residual=rep.invariant_residual,
                tolerance=0.0,
                rank_data={},
                passed=rep.passed,
                detail=f"distance={rep.distance!r} threshold={threshold!r}",
            )
        ]
    mu = [float(v) for v in task.get("mu", [0.0] * n)]
    cuts = task.get("cuts")
    C = cohomology.build_torus_complex(n, m, mu, cuts)
    betti = cohomology.twisted_betti(C)
    base = f"cohomology:T{n}:m{m}:mu{_mu_label(mu)}"
    records = []
    expected = task.get("expect_betti")
    matched = expected is None or [int(b) for b in expected] == betti
    records.append(
        CheckRecord(
            name=f"{base}:betti",
            anchor="twisted Betti numbers of the grid torus",
            max_residual=None,
            tolerance=None,
            rank_data={"betti": betti, "cells": list(C.cells)},
            passed=matched,
            detail="" if matched else f"expected {expected}, computed {betti}",
        )
    )
    if task.get("euler", True):
        ok = cohomology.euler_characteristic_check(C)
        alternating = sum((-1) ** k * b for k, b in enumerate(betti))
        records.append(
            CheckRecord(
                name=f"{base}:euler",
                anchor="euler characteristic vanishes on the torus",
                max_residual=None,
                tolerance=None,
                rank_data={"alternating_sum": alternating},
                passed=ok and alternating == 0,
            )
        )
    if task.get("refine"):
        fine = cohomology.twisted_betti(cohomology.build_torus_complex(n, 2 * m, mu))
        records.append(
            CheckRecord(
                name=f"{base}:refine",
                anchor="grid refinement stability of Betti numbers",
                max_residual=None,
                tolerance=None,
                rank_data={"coarse": betti, "fine": fine},
                passed=betti == fine,
            )
        )
    return records


_TASK_RUNNERS: dict[str, Callable] = {
    "verify": _run_verify,
    "embed": _run_embed,
    "reduce-chain": _run_chain,
    "cohomology": _run_cohomology,
}


def _task_label(task: dict, index: int) -> str:
    kind = task.get("kind", "?")
    target = task.get("structure") or task.get("corpus") or task.get("input") or ""
    return f"task[{index}]:{kind}:{target}" if target else f"task[{index}]:{kind}"


def run_manifest(manifest: Manifest, opts: RunOptions | None = None) -> RunReport:
    """Execute every task in declaration order and assemble the report.

    Manifest-level problems (unknown names, missing fields) raise
    ``ManifestError``; computational failures inside a task become failing
    records and the run continues unless ``opts.fail_fast``.
    """
    opts = opts or RunOptions()
    seed = opts.seed if opts.seed is not None else manifest.seed
    started = datetime.now(timezone.utc).isoformat(timespec="seconds")
    clock = time.perf_counter()
    records: list[CheckRecord] = []
    for i, task in enumerate(manifest.tasks):
        runner = _TASK_RUNNERS[task["kind"]]
        try:
            batch = runner(manifest, task, opts, seed)
        except ManifestError:
            raise
        except Exception as exc:  # recorded, not fatal: the run must finish
            batch = [_failure_record(task, _task_label(task, i), exc)]
        records.extend(batch)
        if opts.fail_fast and any(not r.passed for r in batch):
            break
    return RunReport(
        seed=seed,
        manifest=manifest.path,
        threads=opts.threads,
        environment=environment_stamp(),
        started_utc=started,
        wall_time_s=round(time.perf_counter() - clock, 3),
        records=records,
    )
