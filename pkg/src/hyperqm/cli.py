"""Command-line front end: ``hyperqm <stage> --config scenario.yaml --out DIR``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import io
from .bench import Pipeline, Scenario, gre_m, lift_trajectory, run_scenario, scaling_probe
from .hyper_trainer import assemble_G_b, training_set

logger = logging.getLogger("hyperqm")

HYPER = ("ecsw-pod", "eecsw-qm")


def _scenario(args) -> Scenario:
    s = Scenario.from_yaml(args.config) if args.config else Scenario()
    changes = {}
    if args.tau is not None:
        changes["tau"] = args.tau
    if args.nt is not None:
        changes["n_t"] = args.nt
    if args.threads is not None:
        changes["threads"] = args.threads
    if args.seed is not None:
        changes["seed"] = args.seed
    return s.replace(**changes) if changes else s


def _pod_size(s: Scenario, args) -> int:
    return args.m if args.m is not None else max(s.pod_sizes)


def cmd_mesh(pipe: Pipeline, out: Path, args):
    st = pipe.structure
    io.save_mesh(out / "mesh.npz", st.mesh)
    io.export_matrix(out / "mass.mtx", st.mass(), "consistent mass")
    io.export_matrix(out / "stiffness0.mtx", st.stiffness0(), "tangent stiffness at rest")
    print(f"{st.mesh.n_elements} elements, {st.n} free DOFs -> {out}")


def cmd_simulate(pipe: Pipeline, out: Path, args):
    t, tr = pipe.hfm()
    tr.save(out / "hfm.npz")
    mid = int(pipe.structure.mesh.dof_map[pipe.structure.mesh.n_nodes // 2, 1])
    (out / "trajectories").mkdir(exist_ok=True)
    tr.to_csv(out / "trajectories" / "hfm.csv", columns=[mid], header=["w_mid"])
    print(f"{len(tr.t) - 1} steps in {t:.3f} s; max |w_mid| = {np.abs(tr.x[:, mid]).max():.4e}")


def cmd_basis(pipe: Pipeline, out: Path, args):
    qm = pipe.manifold
    io.write_basis(out / "qm.hqmb", qm)
    io.export_matrix(out / "phi.mtx", qm.Phi, "vibration modes")
    for m in pipe.scenario.pod_sizes:
        pod = pipe.pod(m)
        io.write_basis(out / f"pod-{m}.hqmb", pod)
        io.export_matrix(out / f"pod-{m}.mtx", pod.V, "POD modes")
    w = pipe.frequencies
    print("natural frequencies (rad/s): " + ", ".join(f"{x:.6g}" for x in w))


def cmd_train(pipe: Pipeline, out: Path, args):
    tech = args.technique or "eecsw-qm"
    if tech not in HYPER:
        raise SystemExit(f"train needs a hyper-reduced technique {HYPER}, got {tech!r}")
    m = _pod_size(pipe.scenario, args) if tech == "ecsw-pod" else None
    mesh = pipe.reduced_mesh(tech, m)
    path = out / f"reduced-mesh-{tech}.txt"
    mesh.save(path)
    if args.dump_gb:
        rom = pipe.rom(tech, m)
        G, b = assemble_G_b(rom, training_set(rom.mapping, pipe.hfm()[1], pipe.scenario.n_t))
        io.export_matrix(out / f"G-{tech}.mtx", G)
        io.export_matrix(out / f"b-{tech}.mtx", b[:, None])
    print(f"{tech}: {len(mesh)} of {mesh.n_elements} elements, rho = {mesh.rho:.3e} -> {path}")


def cmd_reduce(pipe: Pipeline, out: Path, args):
    tech = args.technique or "qm"
    m = _pod_size(pipe.scenario, args) if tech in ("pod", "ecsw-pod") else None
    model = pipe.model(tech, m)
    t, tr = pipe.simulate(model)
    U = lift_trajectory(model.mapping, tr)
    hfm = pipe.hfm()[1]
    err = gre_m(hfm.x, U, pipe.structure.mass()) if np.any(hfm.x) else 0.0
    mid = int(pipe.structure.mesh.dof_map[pipe.structure.mesh.n_nodes // 2, 1])
    (out / "trajectories").mkdir(exist_ok=True)
    tr.to_csv(out / "trajectories" / f"{tech}.csv", columns=[0], values=U[:, [mid]], header=["w_mid"])
    print(f"{tech}: GRE_M = {err:.4f} %, integration {t:.3f} s")


def cmd_bench(pipe: Pipeline, out: Path, args):
    s = pipe.scenario
    if args.technique:
        s = s.replace(techniques=("hfm", args.technique))
        pipe = Pipeline(s, out / "cache")
    report = run_scenario(s, out, pipe)
    print(report.to_text(), end="")


def cmd_probe(pipe: Pipeline, out: Path, args):
    s = pipe.scenario
    sizes = args.sizes or s.probe_sizes
    table = scaling_probe(s, sizes)
    table.write_csv(out / "probe.csv")
    (out / "probe.txt").write_text(table.to_text())
    print(table.to_text(), end="")


COMMANDS = {
    "mesh": (cmd_mesh, "generate the mesh and export M, K(0)"),
    "simulate": (cmd_simulate, "run the full model"),
    "basis": (cmd_basis, "build the quadratic manifold and POD bases"),
    "train": (cmd_train, "train a reduced mesh"),
    "reduce": (cmd_reduce, "simulate one reduced model"),
    "bench": (cmd_bench, "run all techniques and write the report"),
    "probe": (cmd_probe, "measure cost scaling with mesh size"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hyperqm", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="scenario YAML file")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("--threads", type=int, help="BLAS thread count")
    common.add_argument("--seed", type=int, help="recorded in the report; all solvers are deterministic")
    common.add_argument("--tau", type=float, help="training tolerance")
    common.add_argument("--nt", type=int, help="number of training snapshots")
    common.add_argument("--technique", choices=("pod", "ecsw-pod", "qm", "eecsw-qm"))
    common.add_argument("--m", type=int, help="POD basis size")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_)
        if name == "train":
            p.add_argument("--dump-gb", action="store_true", help="also write G and b in Matrix Market format")
        if name == "probe":
            p.add_argument("--sizes", type=int, nargs="+", help="element counts")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        scenario = _scenario(args)
        args.out.mkdir(parents=True, exist_ok=True)
        pipe = Pipeline(scenario, args.out / "cache")
        fn = COMMANDS[args.command][0]
        with threadpool_limits(scenario.threads):
            fn(pipe, args.out, args)
    except (OSError, ValueError, RuntimeError) as exc:
        logger.error("%s", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
