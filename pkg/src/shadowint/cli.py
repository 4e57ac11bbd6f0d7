"""Command-line driver for the shadow-integration experiments.

Every command takes an experiment configuration (``--preset NAME`` for a
shipped preset or ``--config PATH``) and writes its outputs under ``--out``
with file names prefixed by the configuration name. Exit status is 0 on
success, 2 for configuration or input errors and 3 for numerical failures.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np

from . import bea
from .errors import ContractViolation, ConvergenceError, DomainError, FactorizationError, ParseError
from .gp_model import (
    IntegratorTag,
    Normalization,
    as_field,
    default_flowmap_grid,
    fit_flowmap_baseline,
    gp_mean,
    iterate_flowmap,
    predict_flowmap,
    train,
)
from .integrators import TrajectoryRecord, integrate
from .kernels import KernelParams
from .phase_systems import HamiltonianField, HenonHeilesSystem, PendulumSystem
from .sampling_io import (
    DomainBox,
    EnergySeries,
    MeshSpec,
    generate_flow_dataset,
    halton_sequence,
    read_dataset,
    read_energy,
    read_json,
    read_model,
    read_trajectory,
    uniform_mesh,
    write_dataset,
    write_energy,
    write_json,
    write_model,
    write_table,
    write_trajectory,
)

log = logging.getLogger("shadowint")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


@dataclass
class ExperimentConfig:
    name: str
    system: dict
    domain: DomainBox
    N: int
    h: float
    n_substeps: int
    kernel: KernelParams
    sigma: float
    integrator: str
    z0: list
    steps: int
    mesh: MeshSpec
    normalization: dict = field(default_factory=lambda: {"index": 0, "H0": 0.0})
    halton_start: int = 1
    direct_h_divisor: int = 1
    direct_steps: int | None = None
    flowmap_steps: int | None = None
    escape_threshold: float = 10.0
    potential_mesh: int = 41

    def __post_init__(self):
        if not isinstance(self.name, str) or not self.name:
            raise ContractViolation("config name must be a nonempty string")
        if self.system.get("name") not in ("pendulum", "henon_heiles"):
            raise ContractViolation(f"unknown system {self.system!r}")
        if self.N < 1 or self.n_substeps < 1 or self.steps < 0 or self.direct_h_divisor < 1:
            raise DomainError("N, n_substeps, direct_h_divisor must be positive and steps nonnegative")
        if not self.h > 0:
            raise DomainError("h must be positive")
        self.integrator = IntegratorTag(self.integrator).value
        self.z0 = [float(v) for v in self.z0]
        dim = 2 * self.field().n
        if self.domain.dim != dim or len(self.z0) != dim or self.mesh.box.dim != dim:
            raise ContractViolation(f"domain, mesh and z0 must have dimension {dim}")
        norm = self.normalization
        if ("index" in norm) == ("point" in norm):
            raise ContractViolation("normalization needs exactly one of 'index' or 'point'")

    def field(self) -> HamiltonianField:
        if self.system["name"] == "pendulum":
            return PendulumSystem()
        return HenonHeilesSystem(self.system.get("mu", 0.8))

    def normalization_for(self, Y) -> Normalization:
        norm = self.normalization
        y0 = Y[int(norm["index"])] if "index" in norm else norm["point"]
        return Normalization(y0, float(norm.get("H0", 0.0)))

    def to_dict(self) -> dict:
        d = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (DomainBox, MeshSpec)):
                v = v.to_dict()
            elif isinstance(v, KernelParams):
                v = asdict(v)
            d[f.name] = v
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ContractViolation("configuration must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ContractViolation(f"unknown configuration keys: {sorted(unknown)}")
        try:
            args = dict(d)
            args["domain"] = DomainBox.from_dict(d["domain"])
            args["mesh"] = MeshSpec.from_dict(d["mesh"])
            args["kernel"] = KernelParams(**d["kernel"])
            return cls(**args)
        except (KeyError, TypeError) as exc:
            raise ContractViolation(f"malformed configuration: {exc!r}") from exc


def preset_names() -> list:
    return sorted(p.name[:-5] for p in resources.files("shadowint.presets").iterdir() if p.name.endswith(".json"))


def load_preset(name: str) -> ExperimentConfig:
    res = resources.files("shadowint.presets") / f"{name}.json"
    if not res.is_file():
        raise ContractViolation(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    with resources.as_file(res) as path:
        return ExperimentConfig.from_dict(read_json(path))


def load_config(path) -> ExperimentConfig:
    return ExperimentConfig.from_dict(read_json(path))


# -- commands -----------------------------------------------------------------

def _paths(cfg: ExperimentConfig, out) -> dict:
    out = Path(out)
    stem = cfg.name
    return {k: out / f"{stem}_{k}{ext}" for k, ext in (
        ("data", ".csv"), ("model", ".json"), ("train_report", ".json"),
        ("ssi_trajectory", ".csv"), ("ssi_energy", ".csv"),
        ("direct_trajectory", ".csv"), ("direct_energy", ".csv"), ("direct_report", ".json"),
        ("flowmap_trajectory", ".csv"), ("flowmap_energy", ".csv"), ("flowmap_report", ".json"),
        ("identify_mesh", ".csv"), ("identify_trajectory", ".csv"), ("identify_report", ".json"),
        ("potential", ".csv"),
    )}


def _training_points(cfg: ExperimentConfig):
    return halton_sequence(cfg.domain.dim, cfg.N, cfg.domain, start=cfg.halton_start)


def cmd_gen_data(cfg: ExperimentConfig, out) -> dict:
    Y = _training_points(cfg)
    data = generate_flow_dataset(cfg.field(), Y, cfg.h, cfg.n_substeps)
    path = _paths(cfg, out)["data"]
    write_dataset(path, data)
    return {"dataset": str(path), "rows": len(data)}


def _dataset(cfg, out, data_path=None):
    if data_path:
        return read_dataset(data_path)
    path = _paths(cfg, out)["data"]
    if not path.exists():
        cmd_gen_data(cfg, out)
    return read_dataset(path)


def cmd_train(cfg: ExperimentConfig, out, data_path=None) -> dict:
    data = _dataset(cfg, out, data_path)
    t0 = time.perf_counter()
    model = train(data, data.Y, cfg.kernel, cfg.sigma, cfg.integrator, cfg.normalization_for(data.Y))
    paths = _paths(cfg, out)
    write_model(paths["model"], model)
    report = {
        "model": str(paths["model"]),
        "rows": model.rows,
        "columns": model.nodes.shape[0],
        "residual": model.residual,
        "rank": model.rank,
        "rank_deficient": model.rank_deficient,
        "sigma": model.sigma,
        "seconds": time.perf_counter() - t0,
    }
    write_json(paths["train_report"], report)
    return report


def _model(cfg, out, model_path=None):
    if model_path:
        return read_model(model_path)
    path = _paths(cfg, out)["model"]
    if not path.exists():
        cmd_train(cfg, out)
    return read_model(path)


def _escape(cfg):
    return lambda z: bool(np.max(np.abs(z)) > cfg.escape_threshold)


def _write_run(cfg, traj: TrajectoryRecord, traj_path, energy_path, extra=None):
    exact = cfg.field()
    with np.errstate(over="ignore", invalid="ignore"):
        H = exact.value(traj.states)
    write_trajectory(traj_path, traj, energy=H)
    cols = {"H": H}
    cols.update(extra or {})
    write_energy(energy_path, EnergySeries(traj.times, cols))
    return H


def cmd_predict(cfg: ExperimentConfig, out, model_path=None, z0=None, steps=None) -> dict:
    """Integrate the learned inverse modified Hamiltonian with its training integrator."""
    model = _model(cfg, out, model_path)
    z0 = cfg.z0 if z0 is None else z0
    steps = cfg.steps if steps is None else steps
    t0 = time.perf_counter()
    traj = integrate(as_field(model), z0, model.h, steps, model.integrator.value,
                     field_tag=f"gp:{cfg.name}", stop=_escape(cfg))
    elapsed = time.perf_counter() - t0
    paths = _paths(cfg, out)
    H = _write_run(cfg, traj, paths["ssi_trajectory"], paths["ssi_energy"], {"H_gp": gp_mean(model, traj.states)})
    return {"trajectory": str(paths["ssi_trajectory"]), "steps": len(traj) - 1,
            "escaped_at": _escaped_time(traj), "seconds": elapsed, **energy_stats(traj.times, H)}


def _escaped_time(traj):
    k = traj.meta.get("stopped_at")
    return None if k is None else float(traj.times[k])


def cmd_baseline_direct(cfg: ExperimentConfig, out, z0=None, steps=None, h_divisor=None) -> dict:
    """Apply the configured integrator to the exact Hamiltonian."""
    div = cfg.direct_h_divisor if h_divisor is None else h_divisor
    h = cfg.h / div
    if steps is None:
        steps = cfg.direct_steps if cfg.direct_steps is not None else cfg.steps
    z0 = cfg.z0 if z0 is None else z0
    traj = integrate(cfg.field(), z0, h, steps, cfg.integrator, field_tag=cfg.system["name"], stop=_escape(cfg))
    paths = _paths(cfg, out)
    H = _write_run(cfg, traj, paths["direct_trajectory"], paths["direct_energy"])
    finite = np.isfinite(H)
    report = {"trajectory": str(paths["direct_trajectory"]), "h": h, "steps": len(traj) - 1,
              "escaped_at": _escaped_time(traj), **energy_stats(traj.times[finite], H[finite])}
    write_json(paths["direct_report"], report)
    return report


def cmd_baseline_flowmap(cfg: ExperimentConfig, out, data_path=None, z0=None, steps=None) -> dict:
    """Fit a GP to the flow map itself and iterate it."""
    data = _dataset(cfg, out, data_path)
    grid, noise = default_flowmap_grid(cfg.domain.diameter)
    model = fit_flowmap_baseline(data, grid, noise)
    if steps is None:
        steps = cfg.flowmap_steps if cfg.flowmap_steps is not None else cfg.steps
    states = iterate_flowmap(model, cfg.z0 if z0 is None else z0, steps)
    traj = TrajectoryRecord(states, h=cfg.h, method_tag="flowmap-gp", field_tag=cfg.system["name"])
    paths = _paths(cfg, out)
    H = _write_run(cfg, traj, paths["flowmap_trajectory"], paths["flowmap_energy"])
    repro = float(np.max(np.abs(predict_flowmap(model, data.Y) - data.Ybar)))
    report = {
        "trajectory": str(paths["flowmap_trajectory"]),
        "k_c": model.params.k_c, "e": model.params.e, "noise": model.noise,
        "log_marginal_likelihood": model.log_marginal_likelihood,
        "training_reproduction_max_error": repro,
        "training_reproduction_bound": 3 * model.noise_level,
        "steps": steps,
        **energy_stats(traj.times, H),
    }
    write_json(paths["flowmap_report"], report)
    return report


def cmd_identify(cfg: ExperimentConfig, out, model_path=None, order=None, trajectory_path=None) -> dict:
    """Evaluate truncations of the identified Hamiltonian on the mesh and along a trajectory."""
    model = _model(cfg, out, model_path)
    orders = bea.supported_orders(model.integrator)
    if order is not None:
        if order not in orders:
            raise bea.UnsupportedOrder(f"order {order} not available for {model.integrator.value}")
        orders = tuple(k for k in orders if k <= order)
    exact = cfg.field()
    paths = _paths(cfg, out)

    M = uniform_mesh(cfg.mesh)
    H = exact.value(M)
    ident = {k: bea.identify_hamiltonian(model, M, k) for k in orders}
    sig = {str(k): float(np.std(H - ident[k])) for k in orders}
    names = [f"x{i + 1}" for i in range(M.shape[1])]
    write_table(paths["identify_mesh"], names + ["H"] + [f"H_{k}" for k in orders],
                np.column_stack([M, H] + [ident[k] for k in orders]))

    tpath = Path(trajectory_path) if trajectory_path else paths["ssi_trajectory"]
    traj_var = None
    if tpath.exists():
        traj = read_trajectory(tpath)
        along = {k: bea.identify_hamiltonian(model, traj.states, k) for k in orders}
        write_table(paths["identify_trajectory"], ["t"] + [f"H_{k}" for k in orders],
                    np.column_stack([traj.times] + [along[k] for k in orders]))
        traj_var = {str(k): float(np.var(along[k])) for k in orders}

    if model.n == 2:
        k = max(orders)
        g = np.linspace(cfg.domain.lower[0], cfg.domain.upper[0], cfg.potential_mesh)
        g2 = np.linspace(cfg.domain.lower[1], cfg.domain.upper[1], cfg.potential_mesh)
        Q = np.stack(np.meshgrid(g, g2, indexing="ij"), -1).reshape(-1, 2)
        write_table(paths["potential"], ["q1", "q2", "V", f"V_{k}"],
                    np.column_stack([Q, exact.potential(Q), bea.recover_potential(model, Q, k)]))

    report = {"sigma_hdiff": sig, "trajectory_variance": traj_var, "mesh_points": int(M.shape[0])}
    write_json(paths["identify_report"], report)
    return report


def energy_stats(times, values) -> dict:
    """Band width, mean and least-squares trend of an energy series."""
    values = np.asarray(values, dtype=float).ravel()
    times = np.asarray(times, dtype=float).ravel()
    if values.size == 0:
        raise DomainError("energy series is empty")
    centered = values - values.mean()
    fit = values.size > 1 and np.ptp(times) > 0 and np.ptp(values) > 0
    slope = float(np.polyfit(times, values, 1)[0]) if fit else 0.0
    return {"band": float(centered.max() - centered.min()), "mean": float(values.mean()), "slope": slope}


def cmd_stats(path, column=None) -> dict:
    series = read_energy(path)
    if column is None:
        column = next(iter(series.columns))
    if column not in series.columns:
        raise ContractViolation(f"no column {column!r} in {path}; have {list(series.columns)}")
    return {"column": column, **energy_stats(series.times, series.columns[column])}


# -- entry point --------------------------------------------------------------

def _z0(text):
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--z0 expects a comma-separated list of numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shadowint", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def experiment(name, help_):
        p = sub.add_parser(name, help=help_)
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--preset", help=f"one of: {', '.join(preset_names())}")
        src.add_argument("--config", type=Path)
        p.add_argument("--out", type=Path, default=Path("out"))
        return p

    experiment("gen-data", "generate the training dataset")
    p = experiment("train", "fit the inverse modified Hamiltonian")
    p.add_argument("--data", type=Path)
    p = experiment("predict", "integrate the learned Hamiltonian")
    p.add_argument("--model", type=Path)
    p.add_argument("--z0", type=_z0)
    p.add_argument("--steps", type=int)
    p = experiment("identify", "recover the exact Hamiltonian by backward error analysis")
    p.add_argument("--model", type=Path)
    p.add_argument("--order", type=int)
    p.add_argument("--trajectory", type=Path)
    p = experiment("baseline-direct", "apply the integrator to the exact Hamiltonian")
    p.add_argument("--z0", type=_z0)
    p.add_argument("--steps", type=int)
    p.add_argument("--h-divisor", type=int)
    p = experiment("baseline-flowmap", "fit and iterate a GP flow map")
    p.add_argument("--data", type=Path)
    p.add_argument("--z0", type=_z0)
    p.add_argument("--steps", type=int)
    p = sub.add_parser("stats", help="band width, mean and trend of an energy CSV")
    p.add_argument("energy", type=Path)
    p.add_argument("--column")
    return parser


def _run(args) -> dict:
    if args.command == "stats":
        return cmd_stats(args.energy, args.column)
    cfg = load_preset(args.preset) if args.preset else load_config(args.config)
    out = args.out
    if args.command == "gen-data":
        return cmd_gen_data(cfg, out)
    if args.command == "train":
        return cmd_train(cfg, out, args.data)
    if args.command == "predict":
        return cmd_predict(cfg, out, args.model, args.z0, args.steps)
    if args.command == "identify":
        return cmd_identify(cfg, out, args.model, args.order, args.trajectory)
    if args.command == "baseline-direct":
        return cmd_baseline_direct(cfg, out, args.z0, args.steps, args.h_divisor)
    return cmd_baseline_flowmap(cfg, out, args.data, args.z0, args.steps)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        report = _run(args)
    except (ParseError, ContractViolation, DomainError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, FactorizationError, ArithmeticError, np.linalg.LinAlgError) as exc:
        step = getattr(exc, "step_index", None)
        where = f" at step {step}" if step is not None else ""
        print(f"numerical failure{where}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(json.dumps(report, indent=1))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
