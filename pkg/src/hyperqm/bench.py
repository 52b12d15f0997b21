"""Benchmark scenarios: full model, linear and manifold ROMs, hyper-reduction.

A scenario is described by a YAML file (see ``configs/`` in the repository);
:func:`run_scenario` produces a :class:`BenchReport` with one row per
technique, and :func:`scaling_probe` measures how per-step cost grows with
the number of elements.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import platform
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy
import yaml
from threadpoolctl import threadpool_limits

from . import io
from .fe_core import HighFidelityModel, LoadCase, SinSquaredPulse, Sinusoidal, Structure, VonKarmanBeam, strip_mesh, uniform_transverse_load
from .hyper_trainer import ReducedMesh, train
from .reduction_basis import QuadraticManifold, pod_basis, quadratic_manifold
from .rom_engine import INTERNAL_ONLY, ReducedModel, TermSelection
from .time_integrator import NewmarkParams, Trajectory, integrate

logger = logging.getLogger(__name__)

TECHNIQUES = ("hfm", "pod", "ecsw-pod", "qm", "eecsw-qm")


class StageError(RuntimeError):
    def __init__(self, stage: str, exc: Exception):
        super().__init__(f"[{stage}] {type(exc).__name__}: {exc}")
        self.stage = stage


@dataclass
class Scenario:
    name: str = "desk-plate"
    length: float = 0.04
    thickness: float = 0.8e-3
    width: float = 0.02
    n_elements: int = 100
    left: str = "pinned"
    right: str = "pinned"
    E: float = 70e9
    nu: float = 0.33
    rho: float = 2700.0
    alpha: float = 0.0
    beta: float = 0.0
    load: str = "sinusoidal"
    amplitude: float = 2e5
    periods: float = 10.0
    steps_per_period: int = 100
    modes: int = 2
    pod_sizes: tuple = (2, 5)
    tau: float = 0.01
    n_t: int = 200
    terms: str = "all"
    repetitions: int = 3
    threads: int = 1
    seed: int = 0
    techniques: tuple = TECHNIQUES
    probe_sizes: tuple = (1000, 2000, 4000)
    probe_steps: int = 200

    def __post_init__(self):
        for name, f in self.__dataclass_fields__.items():
            value = getattr(self, name)
            if f.type == "float":
                setattr(self, name, float(value))
            elif f.type == "int":
                setattr(self, name, int(value))
        self.pod_sizes = tuple(int(m) for m in self.pod_sizes)
        self.probe_sizes = tuple(int(m) for m in self.probe_sizes)
        self.techniques = tuple(self.techniques)
        unknown = set(self.techniques) - set(TECHNIQUES)
        if unknown:
            raise ValueError(f"unknown technique(s) {sorted(unknown)}")
        if self.load not in ("sinusoidal", "pulse"):
            raise ValueError(f"load must be 'sinusoidal' or 'pulse', got {self.load!r}")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")

    @classmethod
    def from_yaml(cls, path) -> Scenario:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
        flat = {}
        for key, value in data.items():
            # sections are optional; their keys are merged into one namespace
            if isinstance(value, dict):
                flat.update(value)
            else:
                flat[key] = value
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(flat) - names
        if unknown:
            raise ValueError(f"{path}: unknown key(s) {sorted(unknown)}")
        return cls(**flat)

    def replace(self, **changes) -> Scenario:
        return dataclasses.replace(self, **changes)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(dataclasses.asdict(self), sort_keys=True, default=str).encode()).hexdigest()[:16]


def gre_m(full, reduced, M) -> float:
    """Mass-normalised global relative error in percent.

    ``full`` and ``reduced`` are ``(n_samples, n)`` arrays of displacements
    at the same sample times.
    """
    U = np.asarray(full, dtype=float)
    D = U - np.asarray(reduced, dtype=float)
    den = np.einsum("ij,ij->", U, (M @ U.T).T)
    if den <= 0.0:
        raise ValueError("reference trajectory is identically zero; GRE is undefined")
    num = np.einsum("ij,ij->", D, (M @ D.T).T)
    return 100.0 * float(np.sqrt(num / den))


def lift_trajectory(mapping, trajectory: Trajectory) -> np.ndarray:
    if not trajectory.reduced:
        return trajectory.x
    return np.array([mapping.eval(q) for q in trajectory.x])


def timed(fn, repetitions: int):
    """Run ``fn`` ``repetitions`` times; return the median wall time and last result."""
    times = []
    result = None
    for _ in range(repetitions):
        t0 = time.perf_counter()
        result = fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times), result


class Pipeline:
    """Lazily built and cached artifacts of one scenario."""

    def __init__(self, scenario: Scenario, cache_dir=None):
        self.scenario = scenario
        self.cache_dir = None if cache_dir is None else Path(cache_dir)
        self._cache = {}

    def _get(self, key, stage, build):
        if key not in self._cache:
            try:
                self._cache[key] = build()
            except StageError:
                raise
            except Exception as exc:
                raise StageError(stage, exc) from exc
        return self._cache[key]

    @property
    def structure(self) -> Structure:
        s = self.scenario

        def build():
            mesh = strip_mesh(s.length, s.n_elements, s.left, s.right)
            return Structure(mesh, VonKarmanBeam(s.E, s.nu, s.rho, s.thickness, s.width, s.alpha, s.beta))

        return self._get("structure", "mesh", build)

    def _manifold(self):
        return quadratic_manifold(self.structure, max(self.scenario.modes, 2))

    @property
    def frequencies(self) -> np.ndarray:
        return self._get("qm-full", "basis", self._manifold)[0]

    @property
    def manifold(self):
        def build():
            _, qm = self._get("qm-full", "basis", self._manifold)
            m = self.scenario.modes
            if qm.size == m:
                return qm
            return QuadraticManifold(qm.Phi[:, :m], qm.Omega[:, :m, :m])

        return self._get("qm", "basis", build)

    @property
    def omega(self) -> float:
        w = self.frequencies
        return float(w[0]) if self.scenario.load == "sinusoidal" else float(0.5 * (w[0] + w[1]))

    @property
    def loadcase(self) -> LoadCase:
        s = self.scenario

        def build():
            l = uniform_transverse_load(self.structure, 1.0)
            p = Sinusoidal(s.amplitude, self.omega) if s.load == "sinusoidal" else SinSquaredPulse(s.amplitude, self.omega)
            return LoadCase(l, p)

        return self._get("load", "mesh", build)

    @property
    def period(self) -> float:
        return 2.0 * np.pi / float(self.frequencies[0])

    @property
    def params(self) -> NewmarkParams:
        return NewmarkParams(self.period / self.scenario.steps_per_period)

    @property
    def n_steps(self) -> int:
        return int(round(self.scenario.periods * self.scenario.steps_per_period))

    @property
    def t_end(self) -> float:
        return self.n_steps * self.params.dt

    def simulate(self, system, repetitions=1):
        x0 = np.zeros(system.dim)
        return timed(lambda: integrate(system, self.params, self.t_end, x0, x0.copy()), repetitions)

    def hfm(self, repetitions=1):
        """Full trajectory and the median integration time."""

        def build():
            path = None
            if self.cache_dir is not None:
                path = self.cache_dir / f"hfm-{self.scenario.digest()}.npz"
                meta = path.with_suffix(".json")
                if path.exists() and meta.exists():
                    logger.info("reusing cached full trajectory %s", path)
                    return json.loads(meta.read_text())["time"], Trajectory.load(path)
            t, tr = self.simulate(HighFidelityModel(self.structure, self.loadcase), repetitions)
            if path is not None:
                self.cache_dir.mkdir(parents=True, exist_ok=True)
                tr.save(path)
                path.with_suffix(".json").write_text(json.dumps({"time": t}))
            return t, tr

        return self._get("hfm", "simulate", build)

    def pod(self, m: int):
        return self._get(("pod", m), "basis", lambda: pod_basis(self.hfm()[1].x.T, m))

    def mapping(self, technique: str, m: int | None = None):
        if technique in ("pod", "ecsw-pod"):
            return self.pod(m)
        return self.manifold

    def rom(self, technique: str, m: int | None = None, terms: str | None = None) -> ReducedModel:
        sel = TermSelection.parse(terms or self.scenario.terms)
        return ReducedModel(self.structure, self.mapping(technique, m), self.loadcase, terms=sel)

    def reduced_mesh(self, technique: str, m: int | None = None, terms: str | None = None) -> ReducedMesh:
        s = self.scenario
        terms = terms or s.terms
        return self._get(
            ("mesh", technique, m, terms), "train", lambda: train(self.rom(technique, m, terms), self.hfm()[1], s.n_t, s.tau)
        )

    def model(self, technique: str, m: int | None = None, terms: str | None = None) -> ReducedModel:
        rom = self.rom(technique, m, terms)
        if technique.startswith(("ecsw", "eecsw")):
            return rom.with_sampling(self.reduced_mesh(technique, m, terms))
        return rom


@dataclass
class BenchRow:
    technique: str
    m: int
    elements: int
    gre: float
    time: float
    speedup: float
    rho: float = float("nan")
    terms: str = "all"


@dataclass
class BenchReport:
    scenario: str
    n_elements: int
    rows: list
    environment: dict = field(default_factory=dict)

    COLUMNS = ("technique", "m", "elements", "gre_m_percent", "time_s", "speedup", "sampled_terms")

    def row(self, technique: str, m: int | None = None, terms: str | None = None) -> BenchRow:
        for r in self.rows:
            if r.technique == technique and (m is None or r.m == m) and (terms is None or r.terms == terms):
                return r
        raise KeyError(f"no row for {technique} (m={m}, terms={terms})")

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.COLUMNS)
            for r in self.rows:
                w.writerow([r.technique, r.m, r.elements, f"{r.gre:.6g}", f"{r.time:.6g}", f"{r.speedup:.6g}", r.terms])

    def to_text(self) -> str:
        lines = [f"scenario {self.scenario} (n_e = {self.n_elements})", ""]
        lines.append(f"{'technique':<10} {'m':>4} {'#elements':>10} {'GRE_M (%)':>10} {'T_sim (s)':>10} {'S*':>8}  sampled")
        for r in self.rows:
            lines.append(f"{r.technique:<10} {r.m:>4} {r.elements:>10} {r.gre:>10.3f} {r.time:>10.4f} {r.speedup:>8.2f}  {r.terms}")
        lines.append("")
        lines += [f"{k}: {v}" for k, v in sorted(self.environment.items())]
        return "\n".join(lines) + "\n"


def environment(threads: int) -> dict:
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "machine": platform.machine(),
        "threads": threads,
    }


def _midspan_dof(structure) -> int:
    mesh = structure.mesh
    return int(mesh.dof_map[mesh.n_nodes // 2, 1])


def _jobs(s: Scenario):
    """``(technique, m, sampled terms)`` for every reduced row of the report.

    Hyper-reduced techniques are run with the configured term selection and,
    for comparison, with internal forces only.
    """
    for tech in s.techniques:
        if tech == "hfm":
            continue
        sizes = s.pod_sizes if tech in ("pod", "ecsw-pod") else (s.modes,)
        for m in sizes:
            if tech in ("pod", "qm"):
                yield tech, m, ""
                continue
            yield tech, m, s.terms
            if TermSelection.parse(s.terms) != INTERNAL_ONLY:
                yield tech, m, "internal"


def run_scenario(scenario: Scenario, out=None, pipeline: Pipeline | None = None) -> BenchReport:
    """Run every technique of ``scenario`` and write the report to ``out``.

    Only the online time integration is timed (median over
    ``scenario.repetitions``).  Hyper-reduced models are trained on
    ``n_t`` snapshots of the full run.
    """
    s = scenario
    out = None if out is None else Path(out)
    pipe = pipeline or Pipeline(s, None if out is None else out / "cache")
    with threadpool_limits(s.threads):
        t_full, hfm = pipe.hfm(s.repetitions)
        structure = pipe.structure
        M = structure.mass()
        ne = structure.n_elements
        lifted = {}
        rows = [BenchRow("hfm", structure.n, ne, 0.0, t_full, 1.0, terms="")]
        lifted["hfm"] = hfm.x
        for tech, m, terms in _jobs(s):
            label = tech if tech in ("qm", "eecsw-qm") else f"{tech}-{m}"
            if terms and terms != s.terms:
                label += f"-{terms}"
            if not np.any(hfm.x) and tech != "qm":
                # zero load and zero initial state: POD has no snapshots to span and
                # training gives b = 0, while the exact answer is the zero state
                lifted[label] = np.zeros_like(hfm.x)
                rows.append(BenchRow(tech, m, 0, 0.0, 0.0, float("nan"), 0.0, terms))
                continue
            model = pipe.model(tech, m, terms or None)
            try:
                t, tr = pipe.simulate(model, s.repetitions)
            except Exception as exc:
                raise StageError(f"reduce:{label}", exc) from exc
            U = lift_trajectory(model.mapping, tr)
            lifted[label] = U
            err = gre_m(hfm.x, U, M) if np.any(hfm.x) else 0.0
            rm = model.sampling
            elements = len(rm) if rm is not None else ne
            rho = rm.rho if rm is not None else float("nan")
            rows.append(BenchRow(tech, m, elements, err, t, t_full / t, rho, terms))
    report = BenchReport(s.name, ne, rows, environment(s.threads))
    if out is not None:
        _write_outputs(out, pipe, report, lifted)
    return report


def _write_outputs(out: Path, pipe: Pipeline, report: BenchReport, lifted: dict):
    out.mkdir(parents=True, exist_ok=True)
    (out / "trajectories").mkdir(exist_ok=True)
    report.write_csv(out / "report.csv")
    (out / "report.txt").write_text(report.to_text())
    s = pipe.scenario
    io.save_mesh(out / "mesh.npz", pipe.structure.mesh)
    io.write_basis(out / "qm.hqmb", pipe.manifold)
    mid = _midspan_dof(pipe.structure)
    t = pipe.hfm()[1].t
    for label, U in lifted.items():
        with open(out / "trajectories" / f"{label}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "w_mid"])
            for ti, ui in zip(t, U[:, mid]):
                w.writerow([repr(float(ti)), repr(float(ui))])
    for key, value in list(pipe._cache.items()):
        if isinstance(key, tuple) and key[0] == "mesh":
            suffix = "" if key[3] == s.terms else f"-{key[3]}"
            value.save(out / f"reduced-mesh-{key[1]}-{key[2]}{suffix}.txt")
        elif isinstance(key, tuple) and key[0] == "pod":
            io.write_basis(out / f"pod-{key[1]}.hqmb", value)
    logger.info("wrote report for %s to %s", s.name, out)


@dataclass
class ProbeRow:
    n_elements: int
    reduced_elements: int
    force_time: float
    full_step_time: float
    hyper_step_time: float
    speedup: float
    gathers: int


@dataclass
class ProbeTable:
    rows: list

    def ratios(self, attr: str) -> list:
        v = [getattr(r, attr) for r in self.rows]
        return [b / a for a, b in zip(v[:-1], v[1:])]

    def to_text(self) -> str:
        lines = [f"{'n_e':>6} {'|E|':>5} {'force (s)':>11} {'ROM step (s)':>13} {'hyper step (s)':>15} {'speedup':>8} {'gathers':>8}"]
        for r in self.rows:
            lines.append(
                f"{r.n_elements:>6} {r.reduced_elements:>5} {r.force_time:>11.3e} {r.full_step_time:>13.3e} {r.hyper_step_time:>15.3e} {r.speedup:>8.1f} {r.gathers:>8}"
            )
        lines.append("force-time ratios on refinement: " + ", ".join(f"{x:.2f}" for x in self.ratios("force_time")))
        lines.append("hyper step-time ratios on refinement: " + ", ".join(f"{x:.2f}" for x in self.ratios("hyper_step_time")))
        return "\n".join(lines) + "\n"

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f.name for f in dataclasses.fields(ProbeRow)])
            for r in self.rows:
                w.writerow(dataclasses.astuple(r))


def _per_call(fn, number: int) -> float:
    t0 = time.perf_counter()
    for _ in range(number):
        fn()
    return (time.perf_counter() - t0) / number


def scaling_probe(scenario: Scenario, mesh_sizes=None, steps: int | None = None, repetitions: int = 5) -> ProbeTable:
    """Per-step online cost of the full manifold ROM and its hyper-reduction.

    For every mesh size the manifold ROM is integrated for ``steps`` steps;
    its trajectory trains the reduced mesh (no recovery needed) at the
    scenario's ``tau``.  Timings are taken in rounds that visit every mesh
    size in turn, so drifts in machine speed affect all sizes alike, and the
    fastest round is kept.  The full ROM is integrated in ``repetitions``
    rounds, the force kernel is timed in three times as many and the
    hyper-reduced model in ten times as many.
    """
    sizes = tuple(mesh_sizes or scenario.probe_sizes)
    if len(sizes) < 3:
        raise ValueError("the scaling probe needs at least three mesh sizes")
    steps = steps or scenario.probe_steps
    cases = []
    with threadpool_limits(scenario.threads):
        for ne in sizes:
            s = scenario.replace(n_elements=ne, periods=steps / scenario.steps_per_period)
            pipe = Pipeline(s)
            rom = pipe.rom("qm")
            _, tr = pipe.simulate(rom, 1)
            mesh = train(rom, tr, s.n_t, s.tau)
            hyper = rom.with_sampling(mesh)
            k = len(tr.t) // 2
            state = (tr.x[k], tr.v[k], tr.a[k], tr.t[k])
            cases.append((pipe, rom, hyper, mesh, state))

        # calls per force timing block, sized on the smallest mesh
        _, rom0, _, _, st0 = cases[0]
        number = max(5, int(0.2 / max(_per_call(lambda: rom0.residual_and_jacobians(*st0), 3), 1e-6)))
        force = np.full(len(cases), np.inf)
        t_rom = np.full(len(cases), np.inf)
        t_hyp = np.full(len(cases), np.inf)
        # short runs are noisier, so the cheaper timings get more rounds
        for r in range(10 * repetitions):
            for i, (pipe, rom, hyper, _, st) in enumerate(cases):
                t_hyp[i] = min(t_hyp[i], pipe.simulate(hyper, 1)[0])
                if r < 3 * repetitions:
                    force[i] = min(force[i], _per_call(lambda: rom.residual_and_jacobians(*st), number))
                if r < repetitions:
                    t_rom[i] = min(t_rom[i], pipe.simulate(rom, 1)[0])

    rows = []
    for i, (pipe, _, hyper, mesh, st) in enumerate(cases):
        hyper.gather_count = 0
        hyper.residual_and_jacobians(*st)
        n = pipe.n_steps
        rows.append(ProbeRow(sizes[i], len(mesh), force[i], t_rom[i] / n, t_hyp[i] / n, t_rom[i] / t_hyp[i], hyper.gather_count))
    return ProbeTable(rows)
