"""Command-line surface for reproducible trajectory-QUBO experiments.

Subcommands mirror the experiment stages: gen (instances), compile (QUBO
artifacts), solve (one problem), benchmark (a manifest grid), report
(tables and figures from benchmark cells). Every artifact embeds the hash
of its input, and a fixed seed reproduces every output byte; timestamps
exist only in the benchmark sidecar log.
"""

from __future__ import annotations

import argparse
import itertools
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from trajq import hardware
from trajq._io import file_hash, read_json, sha256_of, write_json
from trajq.encoding import build_encoding
from trajq.errors import EmbeddingError, GuardLimitError, SpecError
from trajq.metrics import (
    ExperimentRow,
    ProblemFamily,
    build_report,
    render_figures,
    success_rate,
)
from trajq.model import GenParams, ProblemSpec, is_feasible, objective, random_instance
from trajq.qubo import (
    artifact_dict,
    artifact_from_dict,
    compile_qubo,
    decode_solution,
    density,
)
from trajq.solvers import (
    PipelineConfig,
    SampleRecord,
    SampleSet,
    annealer_pipeline,
    exhaustive_qubo,
    simulated_annealing,
    write_sample_set,
)

ENCODING_KINDS = ("binary", "unary", "sequential", "modified", "partition")
SOLVER_NAMES = ("exhaustive", "sa", "pipeline")


@dataclass(frozen=True)
class ExperimentManifest:
    """Declarative description of one benchmark run.

    The grid is the cross product of n_assets x n_steps x budgets x
    encodings. The seed must be explicit: no wall-clock seeding anywhere.
    """

    n_assets: tuple[int, ...]
    n_steps: tuple[int, ...]
    budgets: tuple[int, ...]
    encodings: tuple[str, ...]
    generator: dict
    solver: dict
    hardware: dict
    alphas: tuple[float, ...]
    n_instances: int
    n_perturbations: int
    seed: int

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentManifest":
        if "seed" not in data:
            raise SpecError("manifest must set an explicit seed")
        grid = data.get("grid", {})
        manifest = cls(
            n_assets=tuple(int(v) for v in grid.get("n_assets", ())),
            n_steps=tuple(int(v) for v in grid.get("n_steps", ())),
            budgets=tuple(int(v) for v in grid.get("budget", ())),
            encodings=tuple(grid.get("encodings", ())),
            generator=dict(data.get("generator", {})),
            solver=dict(data.get("solver", {})),
            hardware=dict(data.get("hardware", {})),
            alphas=tuple(float(a) for a in data.get("alphas", (0.0, 1.0, 2.0))),
            n_instances=int(data.get("n_instances", 200)),
            n_perturbations=int(data.get("n_perturbations", 100)),
            seed=int(data["seed"]),
        )
        if not (manifest.n_assets and manifest.n_steps and manifest.budgets
                and manifest.encodings):
            raise SpecError("manifest grid must be non-empty")
        for kind in manifest.encodings:
            if kind not in ENCODING_KINDS:
                raise SpecError(f"unknown encoding kind {kind!r}")
        if manifest.solver.get("name", "pipeline") not in SOLVER_NAMES:
            raise SpecError(f"solver name must be one of {SOLVER_NAMES}")
        if manifest.n_instances < 1 or manifest.n_perturbations < 1:
            raise SpecError("n_instances and n_perturbations must be >= 1")
        if any(a < 0 for a in manifest.alphas):
            raise SpecError("alphas must be non-negative")
        return manifest

    def to_dict(self) -> dict:
        return {
            "grid": {
                "n_assets": list(self.n_assets),
                "n_steps": list(self.n_steps),
                "budget": list(self.budgets),
                "encodings": list(self.encodings),
            },
            "generator": self.generator,
            "solver": self.solver,
            "hardware": self.hardware,
            "alphas": list(self.alphas),
            "n_instances": self.n_instances,
            "n_perturbations": self.n_perturbations,
            "seed": self.seed,
        }

    def spec_cells(self) -> list[tuple[int, int, int]]:
        return list(itertools.product(self.n_assets, self.n_steps, self.budgets))

    def cells(self) -> list[tuple[int, int, int, str]]:
        return list(
            itertools.product(self.n_assets, self.n_steps, self.budgets,
                              self.encodings)
        )


def _load_manifest(path) -> ExperimentManifest:
    return ExperimentManifest.from_dict(read_json(path))


def _gen_params(manifest: ExperimentManifest, n: int, t: int, k: int) -> GenParams:
    extra = dict(manifest.generator)
    mh = extra.pop("max_holding", None)
    mh = k if mh is None else int(mh)
    for key in ("mu_range", "temp_cost_range", "perm_cost_range"):
        if key in extra:
            extra[key] = tuple(extra[key])
    try:
        return GenParams(n_assets=n, n_steps=t, budget=k, max_holding=mh, **extra)
    except TypeError as exc:
        raise SpecError(f"bad generator fields in manifest: {exc}") from None


def _hardware_graph(hw: dict, override: str | None) -> hardware.ChimeraGraph:
    if override:
        return hardware.load_hardware_fixture(override)
    if hw.get("fixture"):
        return hardware.load_hardware_fixture(hw["fixture"])
    return hardware.chimera(int(hw.get("side", 8)))


def _pipeline_config(cfg: dict, default_seed: int) -> PipelineConfig:
    return PipelineConfig(
        reads=int(cfg.get("reads", 1000)),
        gauges=int(cfg.get("gauges", 5)),
        sweeps=int(cfg.get("sweeps", 1000)),
        epsilon=float(cfg.get("epsilon", 0.03)),
        seed=int(cfg.get("seed", default_seed)),
        chain_strength=cfg.get("chain_strength"),
    )


def _cell_solver(cfg: dict, graph, default_seed: int):
    name = cfg.get("name", "pipeline")
    if name == "exhaustive":
        def run(qp):
            _, e = exhaustive_qubo(qp)
            return e
        return run
    if name == "sa":
        reads = int(cfg.get("reads", 1000))
        sweeps = int(cfg.get("sweeps", 1000))
        seed = int(cfg.get("seed", default_seed))

        def run(qp):
            return simulated_annealing(qp, reads=reads, sweeps=sweeps,
                                       seed=seed).best().energy
        return run
    pipe_cfg = _pipeline_config(cfg, default_seed)

    def run(qp):
        _, _, samples, diag = annealer_pipeline(qp, graph, pipe_cfg)
        return samples.best().energy, diag
    return run


def _row_to_dict(row: ExperimentRow) -> dict:
    return {
        "n_assets": row.n_assets,
        "n_steps": row.n_steps,
        "budget": row.budget,
        "encoding": row.encoding,
        "variables": row.variables,
        "density": row.density,
        "qubits": row.qubits,
        "max_chain": row.max_chain,
        "s_values": {f"{a:g}": v for a, v in sorted(row.s_values.items())},
    }


def _row_from_dict(data: dict) -> ExperimentRow:
    return ExperimentRow(
        n_assets=int(data["n_assets"]),
        n_steps=int(data["n_steps"]),
        budget=int(data["budget"]),
        encoding=data["encoding"],
        variables=int(data["variables"]),
        density=float(data["density"]),
        qubits=int(data["qubits"]),
        max_chain=int(data["max_chain"]),
        s_values={float(a): float(v) for a, v in data["s_values"].items()},
    )


def _run_cell(manifest_data: dict, cell, hw_override, alphas, cell_index: int):
    manifest = ExperimentManifest.from_dict(manifest_data)
    n, t, k, encoding = cell
    graph = None
    if manifest.solver.get("name", "pipeline") == "pipeline":
        graph = _hardware_graph(manifest.hardware, hw_override)
    family = ProblemFamily(_gen_params(manifest, n, t, k), encoding)
    solver = _cell_solver(manifest.solver, graph, manifest.seed)
    row = success_rate(
        family,
        solver,
        alphas=alphas,
        n_instances=manifest.n_instances,
        seed=manifest.seed + 7919 * cell_index,
        n_perturbations=manifest.n_perturbations,
    )
    return _row_to_dict(row)


def cmd_gen(args) -> int:
    manifest = _load_manifest(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    mhash = sha256_of(manifest.to_dict())
    count = 0
    for ci, (n, t, k) in enumerate(manifest.spec_cells()):
        params = _gen_params(manifest, n, t, k)
        for i in range(manifest.n_instances):
            seed = manifest.seed + ci * manifest.n_instances + i
            spec = random_instance(params, seed)
            doc = {
                "kind": "problem_spec",
                "provenance": {"manifest_sha256": mhash, "seed": seed},
                "spec": spec.to_dict(),
            }
            write_json(out / f"spec_N{n}_T{t}_K{k}_i{i:03d}.json", doc)
            count += 1
    print(f"wrote {count} problem files to {out}")
    return 0


def _load_spec(path) -> ProblemSpec:
    data = read_json(path)
    return ProblemSpec.from_dict(data.get("spec", data))


def cmd_compile(args) -> int:
    spec = _load_spec(args.spec)
    scheme = build_encoding(
        args.encoding, spec.max_holding, spec.budget, spec.n_assets
    )
    provenance = {"encoding": args.encoding, "input_sha256": file_hash(args.spec)}
    qp = compile_qubo(spec, scheme, provenance=provenance)
    write_json(args.out, artifact_dict(qp))
    print(f"vars={qp.dimension} density={density(qp):.2f}")
    return 0


def cmd_solve(args) -> int:
    qp = artifact_from_dict(read_json(args.qubo))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    diagnostics: dict = {}
    if args.solver == "exhaustive":
        bits, energy = exhaustive_qubo(qp)
        trajectory = decode_solution(qp, bits)
        record = SampleRecord(
            tuple(int(b) for b in bits), energy, 1, 0,
            is_feasible(qp.problem, trajectory),
        )
        samples = SampleSet((record,), "bits", 1, 0, args.seed)
    elif args.solver == "sa":
        samples = simulated_annealing(
            qp, reads=args.reads, sweeps=args.sweeps, seed=args.seed
        )
    else:
        graph = _hardware_graph({}, args.hardware)
        config = PipelineConfig(
            reads=args.reads,
            gauges=args.gauges,
            sweeps=args.sweeps,
            epsilon=args.epsilon,
            seed=args.seed,
            chain_strength=args.chain_strength,
        )
        _, _, samples, diagnostics = annealer_pipeline(qp, graph, config)

    best = next((r for r in samples.records if r.feasible), samples.records[0])
    trajectory = decode_solution(qp, np.array(best.state))
    value = objective(qp.problem, trajectory)
    write_sample_set(samples, out / "samples.jsonl")
    solution = {
        "kind": "solution",
        "provenance": {"input_sha256": file_hash(args.qubo)},
        "solver": args.solver,
        "trajectory": trajectory.holdings.tolist(),
        "value": value,
        "energy": best.energy,
        "feasible": bool(best.feasible),
        "diagnostics": diagnostics,
        "samples": "samples.jsonl",
    }
    write_json(out / "solution.json", solution)
    print(
        f"solver={args.solver} energy={best.energy:.6f} value={value:.6f} "
        f"feasible={bool(best.feasible)} -> {out / 'solution.json'}"
    )
    return 0


def cmd_benchmark(args) -> int:
    manifest = _load_manifest(args.manifest)
    out = Path(args.out)
    cells_dir = out / "cells"
    cells_dir.mkdir(parents=True, exist_ok=True)
    mhash = sha256_of(manifest.to_dict())
    alphas = tuple(args.alpha) if args.alpha else manifest.alphas
    cells = manifest.cells()

    keyed = []
    for index, cell in enumerate(cells):
        key = sha256_of(
            {
                "manifest": mhash,
                "cell": list(cell),
                "alphas": list(alphas),
                "hardware_override": args.hardware,
            }
        )[:16]
        keyed.append((index, cell, key, cells_dir / f"{key}.json"))

    pending = []
    for index, cell, key, path in keyed:
        if path.exists() and read_json(path).get("status") == "ok":
            continue
        pending.append((index, cell, key, path))

    results: dict[str, dict] = {}
    with open(out / "run.log", "a", encoding="utf-8") as log:
        def note(line: str) -> None:
            log.write(f"{time.strftime('%Y-%m-%dT%H:%M:%S')} {line}\n")

        note(f"benchmark start manifest={mhash} cells={len(cells)} "
             f"pending={len(pending)}")
        if args.jobs > 1 and pending:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                futures = {
                    pool.submit(_run_cell, manifest.to_dict(), cell,
                                args.hardware, alphas, index): (cell, key)
                    for index, cell, key, _ in pending
                }
                for future, (cell, key) in futures.items():
                    exc = future.exception()
                    if exc is None:
                        results[key] = {"status": "ok", "row": future.result()}
                    else:
                        results[key] = {"status": "failed", "error": str(exc)}
        else:
            for index, cell, key, _ in pending:
                try:
                    row = _run_cell(manifest.to_dict(), cell, args.hardware,
                                    alphas, index)
                    results[key] = {"status": "ok", "row": row}
                except Exception as exc:
                    results[key] = {"status": "failed", "error": str(exc)}

        rows = []
        ok = 0
        for index, cell, key, path in keyed:
            if key in results:
                doc = dict(results[key])
                doc.update({"cell": list(cell), "manifest_sha256": mhash})
                write_json(path, doc)
            else:
                doc = read_json(path)
            note(f"cell {key} {list(cell)} {doc['status']}")
            if doc["status"] == "ok":
                rows.append(_row_from_dict(doc["row"]))
                ok += 1
            else:
                print(f"cell {cell} failed: {doc.get('error')}", file=sys.stderr)
        report = build_report(rows, alphas)
        (out / "results.csv").write_text(report.csv, encoding="utf-8")
        (out / "results.txt").write_text(report.text, encoding="utf-8")
        (out / "results.dat").write_text(report.dat, encoding="utf-8")
        write_json(out / "manifest.lock.json",
                   {"manifest_sha256": mhash, "alphas": list(alphas)})
        note(f"benchmark done ok={ok}/{len(cells)}")
    print(f"{ok}/{len(cells)} cells ok -> {out / 'results.csv'}")
    return 0


def cmd_report(args) -> int:
    results_dir = Path(args.results)
    cells_dir = results_dir / "cells"
    if not cells_dir.is_dir():
        raise SpecError(f"no benchmark cells under {results_dir}")
    out = Path(args.out) if args.out else results_dir
    out.mkdir(parents=True, exist_ok=True)
    alphas = None
    lock = results_dir / "manifest.lock.json"
    if lock.exists():
        alphas = tuple(read_json(lock).get("alphas", ())) or None
    rows = []
    for path in sorted(cells_dir.glob("*.json")):
        doc = read_json(path)
        if doc.get("status") == "ok":
            rows.append(_row_from_dict(doc["row"]))
    report = build_report(rows, alphas)
    (out / "results.csv").write_text(report.csv, encoding="utf-8")
    (out / "results.txt").write_text(report.text, encoding="utf-8")
    (out / "results.dat").write_text(report.dat, encoding="utf-8")
    figures = render_figures(rows, out, alphas)
    for name in ("results.csv", "results.txt", "results.dat"):
        print(out / name)
    for fig in figures:
        print(fig)
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trajq",
        description=(
            "Discrete portfolio-trajectory problems compiled to QUBO and "
            "solved with a classical simulated-annealing stand-in for "
            "annealing hardware."
        ),
        epilog=(
            "Environment: TRAJQ_GUARD_OVERRIDE=1 lifts the exhaustive-solver "
            "guards (dangerous: exponential blowup). Exit codes: 0 ok, "
            "2 validation error, 3 guard or embedding limit, 4 I/O failure."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate seeded problem instances")
    p.add_argument("manifest", help="experiment manifest JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("compile", help="compile one problem to a QUBO artifact")
    p.add_argument("spec", help="problem JSON (bare spec or gen output)")
    p.add_argument("--encoding", required=True, choices=ENCODING_KINDS)
    p.add_argument("--out", required=True, help="output artifact path")
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("solve", help="solve one compiled QUBO artifact")
    p.add_argument("qubo", help="QUBO artifact JSON")
    p.add_argument("--solver", default="pipeline", choices=SOLVER_NAMES)
    p.add_argument("--reads", type=int, default=1000)
    p.add_argument("--sweeps", type=int, default=1000)
    p.add_argument("--gauges", type=int, default=5)
    p.add_argument("--epsilon", type=float, default=0.03)
    p.add_argument("--chain-strength", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hardware", default=None, help="hardware fixture JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("benchmark", help="run a manifest grid to results.csv")
    p.add_argument("manifest", help="experiment manifest JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--jobs", type=int, default=1, help="parallel cell workers")
    p.add_argument("--alpha", type=float, action="append",
                   help="override manifest alphas (repeatable)")
    p.add_argument("--hardware", default=None, help="hardware fixture JSON")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("report", help="render tables and figures from cells")
    p.add_argument("results", help="benchmark output directory")
    p.add_argument("--out", default=None, help="directory for report files")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except GuardLimitError as exc:
        print(f"guard limit: {exc}", file=sys.stderr)
        return 3
    except EmbeddingError as exc:
        print(f"embedding failure: {exc}", file=sys.stderr)
        return 3
    except SpecError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as exc:
        print(f"malformed JSON: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
