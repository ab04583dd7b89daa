"""Batch front-end over one TOML run configuration.

Subcommands: cell-solve, tensors, macro-run, micro-run, validate, nondim,
pipeline.  Exit codes: 0 success, 2 configuration error, 3 solver failure,
4 validation failure.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import dataclass

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import (__version__, cellsolver, errors, geometry, io, microref,
               nondim, tensors)
from .errors import ConfigError, GridMismatch, TrihomError
from .ionic import FhnParams
from .macrosolver import MacroConfig, MacroSolver, Stimulus

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_VALIDATION = 4


# ---------------------------------------------------------------------------
# configuration schema

_NUM = (int, float)

SHAPE_KEYS = {
    "full": set(),
    "ball": {"center", "radius"},
    "laminate": {"axis", "fraction", "wave_amplitude", "wave_periods"},
    "rounded_box": {"center", "half_widths", "corner_radius"},
}

STIM_KEYS = {"kind", "center", "amplitude", "t_on", "t_off",
             "half_widths", "radii"}

SECTION_KEYS = {
    "geometry": {"meso", "micro"},
    "conductivity": {"extracellular", "intracellular", "micro"},
    "cellsolver": {"tol", "directions"},
    "ionic": {"a", "b", "lam", "theta"},
    "macro": {"resolution", "lengths", "dt", "t_end", "tensor_i", "tensor_e",
              "mu_m", "mu_m_method", "v0", "w0", "elliptic_tol",
              "snapshot_every", "activation_threshold", "stimulus"},
    "micro": {"epsilon", "dt", "t_end", "sigma_i", "sigma_e", "stimulus",
              "holes", "micro_cells_per_cell", "snapshot_every",
              "compare_window", "v0", "w0"},
    "nondim": {"ell_mes", "ell_mic", "L", "R_m", "C_m", "lambda_i",
               "lambda_e", "delta_v", "delta_w"},
    "output": {"directory"},
}

GEOM_KEYS = {"dim", "resolution", "lengths", "shape"}


def _fail(path, message):
    raise ConfigError(f"{path}: {message}")


def _check_keys(table, allowed, path):
    if not isinstance(table, dict):
        _fail(path, "expected a table")
    unknown = set(table) - set(allowed)
    if unknown:
        _fail(path, f"unknown keys {sorted(unknown)}")


def _need(table, key, path, types=_NUM):
    if key not in table:
        _fail(path, f"missing required key {key!r}")
    value = table[key]
    if types is not None and not isinstance(value, types):
        _fail(f"{path}.{key}", f"expected {types}")
    return value


def _positive(table, key, path):
    value = _need(table, key, path)
    if value <= 0:
        _fail(f"{path}.{key}", "must be positive")
    return value


def validate_config(cfg):
    """Schema validation: types, ranges, and rejection of unknown keys."""
    _check_keys(cfg, SECTION_KEYS, "config")
    if "geometry" in cfg:
        _check_keys(cfg["geometry"], SECTION_KEYS["geometry"], "geometry")
        for level in cfg["geometry"]:
            _validate_geometry(cfg["geometry"][level], f"geometry.{level}")
    if "conductivity" in cfg:
        _check_keys(cfg["conductivity"], SECTION_KEYS["conductivity"],
                    "conductivity")
        for family, table in cfg["conductivity"].items():
            if not isinstance(table, dict) or not table:
                _fail(f"conductivity.{family}", "expected a label->value table")
            for label, value in table.items():
                if not isinstance(value, _NUM) and not _is_matrix(value):
                    _fail(f"conductivity.{family}.{label}",
                          "expected a number or a square matrix")
    if "cellsolver" in cfg:
        _check_keys(cfg["cellsolver"], SECTION_KEYS["cellsolver"], "cellsolver")
        if "tol" in cfg["cellsolver"] and cfg["cellsolver"]["tol"] <= 0:
            _fail("cellsolver.tol", "must be positive")
        if "directions" in cfg["cellsolver"]:
            dirs = cfg["cellsolver"]["directions"]
            if (not isinstance(dirs, list) or not dirs or
                    any(not isinstance(q, int) or q < 0 for q in dirs)):
                _fail("cellsolver.directions",
                      "expected a list of nonnegative axis indices")
    if "ionic" in cfg:
        _check_keys(cfg["ionic"], SECTION_KEYS["ionic"], "ionic")
        try:
            _fhn_params(cfg)
        except ValueError as exc:
            _fail("ionic", str(exc))
    if "macro" in cfg:
        _validate_macro(cfg["macro"])
    if "micro" in cfg:
        _validate_micro(cfg["micro"])
    if "nondim" in cfg:
        _check_keys(cfg["nondim"], SECTION_KEYS["nondim"], "nondim")
    if "output" in cfg:
        _check_keys(cfg["output"], SECTION_KEYS["output"], "output")
    return cfg


def _is_matrix(value):
    return (isinstance(value, list) and value and
            all(isinstance(r, list) and len(r) == len(value) and
                all(isinstance(x, _NUM) for x in r) for r in value))


def _validate_geometry(table, path):
    _check_keys(table, GEOM_KEYS, path)
    _positive(table, "resolution", path)
    if "dim" in table and table["dim"] not in (2, 3):
        _fail(f"{path}.dim", "must be 2 or 3")
    if "lengths" in table:
        lengths = table["lengths"]
        if (not isinstance(lengths, list) or
                any(not isinstance(x, _NUM) or x <= 0 for x in lengths)):
            _fail(f"{path}.lengths", "expected a list of positive numbers")
    shape = _need(table, "shape", path, types=dict)
    kind = _need(shape, "kind", f"{path}.shape", types=str)
    if kind not in SHAPE_KEYS:
        _fail(f"{path}.shape.kind", f"unknown kind {kind!r}")
    _check_keys(shape, SHAPE_KEYS[kind] | {"kind"}, f"{path}.shape")


def _validate_stimulus(table, path):
    _check_keys(table, STIM_KEYS, path)
    _need(table, "amplitude", path)
    _need(table, "t_on", path)
    _need(table, "t_off", path)
    kind = table.get("kind", "box")
    if kind not in ("box", "ellipse"):
        _fail(f"{path}.kind", "must be 'box' or 'ellipse'")
    _need(table, "center", path, types=list)
    extent = "half_widths" if kind == "box" else "radii"
    _need(table, extent, path, types=list)


def _validate_macro(table):
    _check_keys(table, SECTION_KEYS["macro"], "macro")
    res = _need(table, "resolution", "macro", types=list)
    if any(not isinstance(n, int) or n < 16 for n in res):
        _fail("macro.resolution", "needs at least 16 per axis")
    _need(table, "lengths", "macro", types=list)
    _positive(table, "dt", "macro")
    if _need(table, "t_end", "macro") < 0:
        _fail("macro.t_end", "must be nonnegative")
    if "stimulus" in table:
        _validate_stimulus(table["stimulus"], "macro.stimulus")
    for key in ("tensor_i", "tensor_e"):
        if key in table and not _is_matrix(table[key]):
            _fail(f"macro.{key}", "expected a square matrix")
    if "mu_m" in table and table["mu_m"] <= 0:
        _fail("macro.mu_m", "must be positive")
    if table.get("mu_m_method", "reconstructed") not in ("reconstructed",
                                                         "staircase"):
        _fail("macro.mu_m_method", "must be 'reconstructed' or 'staircase'")


def _validate_micro(table):
    _check_keys(table, SECTION_KEYS["micro"], "micro")
    eps = _need(table, "epsilon", "micro", types=None)
    eps_list = eps if isinstance(eps, list) else [eps]
    for e in eps_list:
        if not isinstance(e, _NUM) or not any(
                abs(e - s) < 1e-12 for s in microref.SUPPORTED_EPSILON):
            _fail("micro.epsilon",
                  f"entries must come from {microref.SUPPORTED_EPSILON}")
    _positive(table, "dt", "micro")
    _positive(table, "sigma_i", "micro")
    _positive(table, "sigma_e", "micro")
    if _need(table, "t_end", "micro") < 0:
        _fail("micro.t_end", "must be nonnegative")
    if "stimulus" in table:
        _validate_stimulus(table["stimulus"], "micro.stimulus")


def load_config(path):
    try:
        with open(path, "rb") as fh:
            cfg = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}")
    return validate_config(cfg)


# ---------------------------------------------------------------------------
# construction helpers

def _build_geometry(cfg, level):
    table = cfg.get("geometry", {}).get(level)
    if table is None:
        return None
    dim = table.get("dim", 2)
    n = table["resolution"]
    lengths = tuple(table.get("lengths", [1.0] * dim))
    spec = geometry.GridSpec(dim=dim, resolution=(n,) * dim, lengths=lengths)
    s = table["shape"]
    kind = s["kind"]
    if kind == "full":
        shape = geometry.ShapeSpec.full()
    elif kind == "ball":
        shape = geometry.ShapeSpec.ball(s["center"], s["radius"])
    elif kind == "laminate":
        shape = geometry.ShapeSpec.laminate(
            s["axis"], s["fraction"],
            wave_amplitude=s.get("wave_amplitude", 0.0),
            wave_periods=s.get("wave_periods", 1))
    else:
        shape = geometry.ShapeSpec.rounded_box(
            s["center"], s["half_widths"], s["corner_radius"])
    glevel = geometry.MESO if level == "meso" else geometry.MICRO
    return geometry.build_cell(spec, shape, glevel)


def _fhn_params(cfg):
    table = cfg.get("ionic", {})
    return FhnParams(a=table.get("a", 0.1), b=table.get("b", 0.5),
                     lam=table.get("lam", -1.0),
                     theta=table.get("theta", 0.25))


def _stimulus(table):
    if table is None:
        return None
    return Stimulus(center=tuple(table["center"]),
                    amplitude=float(table["amplitude"]),
                    t_on=float(table["t_on"]), t_off=float(table["t_off"]),
                    kind=table.get("kind", "box"),
                    half_widths=tuple(table.get("half_widths", ())),
                    radii=tuple(table.get("radii", ())))


def _directions(cfg, geom):
    dirs = cfg.get("cellsolver", {}).get("directions")
    if dirs is None:
        return None
    bad = [q for q in dirs if q >= geom.spec.dim]
    if bad:
        raise ConfigError(f"cellsolver.directions: axes {bad} out of range")
    return sorted(dirs)


# ---------------------------------------------------------------------------
# stages

@dataclass
class TensorStage:
    tensors: list            # (name, HomogenizedTensor)
    mu_m: float
    correctors: dict         # name -> list of CorrectorField
    volume_averages: list    # (name, HomogenizedTensor)


def run_tensor_stage(cfg, geom_meso, geom_micro=None):
    cond = cfg.get("conductivity")
    if not cond:
        raise ConfigError("tensor stage needs a [conductivity] section")
    tol = cfg.get("cellsolver", {}).get("tol", cellsolver.DEFAULT_TOL)
    directions = _directions(cfg, geom_meso)
    named, averages, correctors = [], [], {}
    if "extracellular" in cond:
        coeff = cellsolver.ConductivityField.from_labels(
            geom_meso, cond["extracellular"])
        active = tuple(sorted(cond["extracellular"]))
        T, cors = tensors.effective_tensor(
            geom_meso, coeff, active, level=tensors.LEVEL_EXTRA_MESO,
            directions=directions, tol=tol)
        named.append(("extracellular", T))
        correctors["extracellular"] = cors
        averages.append(("extracellular_volume_average",
                         _restricted_average(geom_meso, coeff, active,
                                             directions)))
    if "intracellular" in cond:
        active = tuple(sorted(cond["intracellular"]))
        if geom_micro is not None:
            result = tensors.two_level_intracellular(
                geom_meso, geom_micro, cond["intracellular"],
                micro_values=cond.get("micro"),
                active_meso_labels=active, directions=directions, tol=tol)
            for i, (key, mt) in enumerate(sorted(result.micro_tensors.items())):
                named.append((f"intracellular_micro_{i}", mt))
            named.append(("intracellular", result.tensor))
            correctors["intracellular"] = result.meso_correctors
            coeff = result.mtilde_field
        else:
            coeff = cellsolver.ConductivityField.from_labels(
                geom_meso, cond["intracellular"])
            T, cors = tensors.effective_tensor(
                geom_meso, coeff, active,
                level=tensors.LEVEL_INTRA_TWO_LEVEL, directions=directions,
                tol=tol)
            named.append(("intracellular", T))
            correctors["intracellular"] = cors
        averages.append(("intracellular_volume_average",
                         _restricted_average(geom_meso, coeff, active,
                                             directions)))
    method = cfg.get("macro", {}).get("mu_m_method", "reconstructed")
    try:
        mu_m = geometry.membrane_ratio(geom_meso, method=method)
    except errors.EmptyInterface:
        mu_m = None  # single-label cell: no membrane at the meso level
    return TensorStage(tensors=named, mu_m=mu_m, correctors=correctors,
                       volume_averages=averages)


def _restricted_average(geom, coeff, active, directions):
    avg = tensors.volume_average_tensor(geom, coeff, active)
    if directions is None:
        return avg
    idx = np.asarray(sorted(directions))
    sub = avg.entries[np.ix_(idx, idx)]
    return tensors.HomogenizedTensor(entries=sub, level=avg.level,
                                     axes=tuple(idx),
                                     provenance=dict(avg.provenance))


def _stage_tensor_by_name(stage, name):
    for key, tensor in stage.tensors:
        if key == name:
            return tensor
    raise ConfigError(f"tensor stage produced no {name!r} tensor")


def build_macro_config(cfg, stage: TensorStage = None, tensor_override=None):
    table = cfg.get("macro")
    if table is None:
        raise ConfigError("missing [macro] section")
    res = tuple(table["resolution"])
    lengths = tuple(table["lengths"])
    d = len(res)
    if len(lengths) != d:
        raise ConfigError("macro.lengths must match macro.resolution")
    if tensor_override is not None:
        tensor_i, tensor_e, mu_m = tensor_override
    elif "tensor_i" in table and "tensor_e" in table:
        tensor_i = np.asarray(table["tensor_i"], dtype=float)
        tensor_e = np.asarray(table["tensor_e"], dtype=float)
        if "mu_m" not in table:
            raise ConfigError("macro.mu_m required with explicit tensors")
        mu_m = float(table["mu_m"])
    elif stage is not None:
        tensor_i = _stage_tensor_by_name(stage, "intracellular").entries
        tensor_e = _stage_tensor_by_name(stage, "extracellular").entries
        mu_m = table.get("mu_m", stage.mu_m)
        if mu_m is None:
            raise ConfigError(
                "macro.mu_m required: the meso cell has no membrane")
    else:
        raise ConfigError(
            "macro tensors: give macro.tensor_i/tensor_e/mu_m or run the "
            "tensor stage (pipeline)")
    if tensor_i.shape != (d, d) or tensor_e.shape != (d, d):
        raise ConfigError(
            f"macro is {d}D but tensors are {tensor_i.shape}; restrict "
            f"cellsolver.directions to {d} axes or fix macro.resolution")
    return MacroConfig(
        lengths=lengths, resolution=res, dt=float(table["dt"]),
        t_end=float(table["t_end"]), tensor_i=tensor_i, tensor_e=tensor_e,
        mu_m=float(mu_m), ionic=_fhn_params(cfg),
        stimulus=_stimulus(table.get("stimulus")),
        v0=float(table.get("v0", 0.0)), w0=float(table.get("w0", 0.0)),
        elliptic_tol=float(table.get("elliptic_tol", 1e-8)),
        snapshot_every=int(table.get("snapshot_every", 0)),
        activation_threshold=float(table.get("activation_threshold", 0.5)))


def build_micro_config(cfg, geom_meso, epsilon):
    table = cfg.get("micro")
    if table is None:
        raise ConfigError("missing [micro] section")
    micro_shape = None
    if table.get("holes", False):
        micro_table = cfg.get("geometry", {}).get("micro")
        if micro_table is None:
            raise ConfigError("micro.holes=true needs [geometry.micro]")
        micro_shape = _build_geometry(cfg, "micro").shape
    return microref.MicroConfig(
        epsilon=float(epsilon), cell=geom_meso,
        sigma_i=float(table["sigma_i"]), sigma_e=float(table["sigma_e"]),
        dt=float(table["dt"]), t_end=float(table["t_end"]),
        ionic=_fhn_params(cfg), stimulus=_stimulus(table.get("stimulus")),
        micro_shape=micro_shape,
        micro_cells_per_cell=int(table.get("micro_cells_per_cell", 4)),
        v0=float(table.get("v0", 0.0)), w0=float(table.get("w0", 0.0)),
        snapshot_every=int(table.get("snapshot_every", 0)))


# ---------------------------------------------------------------------------
# artifact writers / readers

def write_macro_artifacts(outdir, run):
    io.ensure_dir(outdir)
    lengths = run.config.lengths
    shape = tuple(n + 1 for n in run.config.resolution)
    for k, (t, v, u_e, w) in enumerate(run.snapshots):
        io.write_field(f"{outdir}/v_{k:04d}.fld", v.reshape(shape),
                       kind="macro_v", lengths=lengths, time=t)
        io.write_field(f"{outdir}/ue_{k:04d}.fld", u_e.reshape(shape),
                       kind="macro_ue", lengths=lengths, time=t)
        io.write_field(f"{outdir}/w_{k:04d}.fld", w.reshape(shape),
                       kind="macro_w", lengths=lengths, time=t)
    io.write_field(f"{outdir}/activation.fld",
                   run.activation.reshape(shape), kind="activation",
                   lengths=lengths, threshold=run.config.activation_threshold)
    io.write_csv(f"{outdir}/summary.csv",
                 ("time", "v_min", "v_max", "mean_u_e", "activated_fraction"),
                 run.summary)
    io.write_json(f"{outdir}/macro.json", {
        "resolution": list(run.config.resolution),
        "lengths": list(run.config.lengths),
        "dt": run.config.dt,
        "times": run.times,
        "velocities": {str(k): v for k, v in run.velocities.items()},
    })


def write_micro_artifacts(outdir, run):
    io.ensure_dir(outdir)
    coords = run.membrane_coords
    io.write_csv(f"{outdir}/membrane.csv",
                 ("x1", "x2", "area"),
                 [(c[0], c[1], a) for c, a in zip(coords, run.membrane_area)])
    for k, (t, v) in enumerate(zip(run.times, run.v_snapshots)):
        io.write_field(f"{outdir}/v_{k:04d}.fld", v, kind="membrane_v",
                       lengths=(1.0, 1.0), time=t)
    io.write_csv(f"{outdir}/summary.csv",
                 ("time", "v_min", "v_max", "mean_u_e", "current_balance"),
                 run.summary)


@dataclass
class _LoadedMacro:
    config: object
    times: list
    snapshots: list


@dataclass
class _LoadedMicro:
    times: list
    v_snapshots: list
    membrane_coords: np.ndarray
    membrane_area: np.ndarray


@dataclass
class _MacroConfigShim:
    resolution: tuple
    lengths: tuple

    @property
    def dim(self):
        return len(self.resolution)


def load_macro_artifacts(outdir):
    import glob
    paths = sorted(glob.glob(f"{outdir}/v_*.fld"))
    if not paths:
        raise GridMismatch(f"no macro v_*.fld fields under {outdir}")
    times, snapshots = [], []
    lengths = None
    shape = None
    for path in paths:
        arr, meta = io.read_field(path)
        times.append(float(meta["time"]))
        snapshots.append((float(meta["time"]), arr.ravel(), None, None))
        lengths, shape = meta["lengths"], arr.shape
    resolution = tuple(n - 1 for n in shape)
    return _LoadedMacro(config=_MacroConfigShim(resolution, lengths),
                        times=times, snapshots=snapshots)


def load_micro_artifacts(outdir):
    import glob
    _, rows = io.read_csv(f"{outdir}/membrane.csv")
    coords = np.array([[float(r[0]), float(r[1])] for r in rows])
    area = np.array([float(r[2]) for r in rows])
    times, snaps = [], []
    for path in sorted(glob.glob(f"{outdir}/v_*.fld")):
        arr, meta = io.read_field(path)
        times.append(float(meta["time"]))
        snaps.append(arr)
    if not times:
        raise GridMismatch(f"no micro v_*.fld fields under {outdir}")
    return _LoadedMicro(times=times, v_snapshots=snaps,
                        membrane_coords=coords, membrane_area=area)


# ---------------------------------------------------------------------------
# subcommands

def cmd_nondim(args):
    with open(args.params, "rb") as fh:
        table = tomllib.load(fh)
    table = table.get("nondim", table)
    params = nondim.PhysicalParams(**table)
    scales = nondim.derive_scales(params)
    print(f"{'quantity':<22}{'value':>16}")
    for name in ("epsilon", "epsilon_ratio", "epsilon_defect", "delta",
                 "tau", "lambda_total", "conductivity_scale"):
        print(f"{name:<22}{getattr(scales, name):>16.8g}")
    return EXIT_OK


def cmd_cell_solve(args):
    cfg = load_config(args.config)
    level = args.level
    geom = _build_geometry(cfg, level)
    if geom is None:
        raise ConfigError(f"missing [geometry.{level}] section")
    cond = cfg.get("conductivity", {})
    families = {}
    if level == "meso":
        if "extracellular" in cond:
            families["extracellular"] = cond["extracellular"]
        if "intracellular" in cond:
            families["intracellular"] = cond["intracellular"]
    else:
        families["micro"] = cond.get("micro", {"CYTOSOL": 1.0})
    if not families:
        raise ConfigError("no conductivity family for this level")
    tol = args.tol if args.tol else cfg.get("cellsolver", {}).get(
        "tol", cellsolver.DEFAULT_TOL)
    directions = _directions(cfg, geom)
    outdir = io.ensure_dir(args.out)
    for name, mapping in sorted(families.items()):
        coeff = cellsolver.ConductivityField.from_labels(geom, mapping)
        active = tuple(sorted(mapping))
        dirs = directions if directions is not None else range(geom.spec.dim)
        for q in dirs:
            problem = cellsolver.CellProblem(geom, coeff, q, active)
            cor = cellsolver.solve_corrector(problem, tol=tol)
            path = f"{outdir}/corrector_{name}_axis{q}.fld"
            io.write_field(path, cor.values, kind="corrector",
                           lengths=geom.spec.lengths, direction=q,
                           residual=cor.residual, iterations=cor.iterations)
            print(f"{name} axis {q}: residual {cor.residual:.3e} "
                  f"({cor.iterations} iterations) -> {path}")
    return EXIT_OK


def cmd_tensors(args):
    cfg = load_config(args.config)
    geom_meso = _build_geometry(cfg, "meso")
    if geom_meso is None:
        raise ConfigError("missing [geometry.meso] section")
    geom_micro = _build_geometry(cfg, "micro")
    stage = run_tensor_stage(cfg, geom_meso, geom_micro)
    rows = io.tensor_rows(stage.tensors + stage.volume_averages,
                          mu_m=stage.mu_m)
    io.write_csv(args.out, io.TENSOR_HEADER, rows)
    print(f"wrote {len(rows)} tensors to {args.out} (mu_m={stage.mu_m!r})")
    return EXIT_OK


def cmd_macro_run(args):
    cfg = load_config(args.config)
    stage = None
    if "tensor_i" not in cfg.get("macro", {}):
        geom_meso = _build_geometry(cfg, "meso")
        if geom_meso is not None and "conductivity" in cfg:
            stage = run_tensor_stage(cfg, geom_meso,
                                     _build_geometry(cfg, "micro"))
    mcfg = build_macro_config(cfg, stage)
    run = MacroSolver(mcfg).run()
    write_macro_artifacts(args.out, run)
    print(f"macro run: {len(run.times)} snapshots, "
          f"velocities {run.velocities} -> {args.out}")
    return EXIT_OK


def cmd_micro_run(args):
    cfg = load_config(args.config)
    geom_meso = _build_geometry(cfg, "meso")
    if geom_meso is None:
        raise ConfigError("missing [geometry.meso] section")
    eps = cfg["micro"]["epsilon"]
    eps_list = eps if isinstance(eps, list) else [eps]
    for e in eps_list:
        mcfg = build_micro_config(cfg, geom_meso, e)
        run = microref.MicroSolver(mcfg).run()
        sub = f"{args.out}/eps_{e:g}" if len(eps_list) > 1 else args.out
        write_micro_artifacts(sub, run)
        print(f"micro run eps={e:g}: {len(run.times)} snapshots -> {sub}")
    return EXIT_OK


def cmd_validate(args):
    micro_run = load_micro_artifacts(args.micro)
    macro_run = load_macro_artifacts(args.macro)
    rows = microref.compare_to_macro(micro_run, macro_run)
    io.write_csv(args.out, ("time", "l2_error"), rows)
    print(f"wrote {len(rows)} comparison rows to {args.out}")
    return EXIT_OK


def cmd_pipeline(args):
    cfg = load_config(args.config)
    outdir = io.ensure_dir(args.out)
    manifest = {"version": __version__, "config": args.config, "stages": {}}
    t_all = time.time()

    def stage(name):
        manifest["stages"][name] = entry = {"wall_s": None}
        return entry, time.time()

    # geometry
    entry, t0 = stage("geometry")
    geom_meso = _build_geometry(cfg, "meso")
    if geom_meso is None:
        raise ConfigError("missing [geometry.meso] section")
    geom_micro = _build_geometry(cfg, "micro")
    io.write_field(f"{outdir}/labels_meso.fld", geom_meso.labels,
                   kind="labels", lengths=geom_meso.spec.lengths,
                   legend=";".join(f"{k}:{v}" for k, v in
                                   sorted(geom_meso.legend.items())))
    if geom_micro is not None:
        io.write_field(f"{outdir}/labels_micro.fld", geom_micro.labels,
                       kind="labels", lengths=geom_micro.spec.lengths,
                       legend=";".join(f"{k}:{v}" for k, v in
                                       sorted(geom_micro.legend.items())))
    entry["wall_s"] = time.time() - t0

    # correctors + tensors
    entry, t0 = stage("tensors")
    stage_result = run_tensor_stage(cfg, geom_meso, geom_micro)
    for name, cors in sorted(stage_result.correctors.items()):
        for cor in cors:
            io.write_field(
                f"{outdir}/corrector_{name}_axis{cor.direction}.fld",
                cor.values, kind="corrector", lengths=geom_meso.spec.lengths,
                direction=cor.direction, residual=cor.residual)
    rows = io.tensor_rows(stage_result.tensors + stage_result.volume_averages,
                          mu_m=stage_result.mu_m)
    io.write_csv(f"{outdir}/tensors.csv", io.TENSOR_HEADER, rows)
    entry["residuals"] = {
        name: max(c.residual for c in cors)
        for name, cors in sorted(stage_result.correctors.items())}
    entry["tolerance"] = cfg.get("cellsolver", {}).get(
        "tol", cellsolver.DEFAULT_TOL)
    entry["mu_m"] = stage_result.mu_m
    entry["wall_s"] = time.time() - t0

    # macroscopic run
    macro_run = None
    if "macro" in cfg:
        entry, t0 = stage("macro")
        mcfg = build_macro_config(cfg, stage_result)
        macro_run = MacroSolver(mcfg).run()
        write_macro_artifacts(f"{outdir}/macro", macro_run)
        entry["wall_s"] = time.time() - t0

    # microscopic runs + validation
    validation_ok = True
    if "micro" in cfg and macro_run is not None:
        entry, t0 = stage("validation")
        ablation = build_macro_config(cfg, None, tensor_override=(
            _stage_average(stage_result, "intracellular_volume_average"),
            _stage_average(stage_result, "extracellular_volume_average"),
            macro_run.config.mu_m))
        macro_avg = MacroSolver(ablation).run()
        write_macro_artifacts(f"{outdir}/macro_volume_average", macro_avg)
        eps = cfg["micro"]["epsilon"]
        eps_list = eps if isinstance(eps, list) else [eps]
        window = cfg["micro"].get("compare_window")
        report, means = [], {}
        for e in eps_list:
            run = microref.MicroSolver(
                build_micro_config(cfg, geom_meso, e)).run()
            write_micro_artifacts(f"{outdir}/micro_eps_{e:g}", run)
            rows_c = microref.compare_to_macro(run, macro_run)
            rows_a = microref.compare_to_macro(run, macro_avg)
            sel = [(t, ec, ea) for (t, ec), (_, ea) in zip(rows_c, rows_a)
                   if window is None or window[0] <= t <= window[1]]
            if not sel:
                raise GridMismatch("compare_window excludes every snapshot")
            means[e] = (float(np.mean([ec for _, ec, _ in sel])),
                        float(np.mean([ea for _, _, ea in sel])))
            for t, ec, ea in sel:
                report.append((e, t, ec, ea))
        io.write_csv(f"{outdir}/report.csv",
                     ("epsilon", "time", "l2_error_corrected",
                      "l2_error_volume_average"), report)
        ordered = sorted(means, reverse=True)
        decreasing = all(means[a][0] > means[b][0]
                         for a, b in zip(ordered, ordered[1:]))
        finest = ordered[-1]
        beats = means[finest][0] < means[finest][1]
        entry["errors"] = {f"{e:g}": means[e] for e in ordered}
        entry["errors_decrease_with_epsilon"] = decreasing
        entry["corrected_beats_volume_average"] = beats
        entry["wall_s"] = time.time() - t0
        validation_ok = (decreasing and beats) if len(ordered) > 1 else beats

    manifest["wall_s_total"] = time.time() - t_all
    io.write_json(f"{outdir}/manifest.json", manifest)
    print(f"pipeline artifacts under {outdir} "
          f"({manifest['wall_s_total']:.1f} s)")
    if not validation_ok:
        print("validation FAILED: see report.csv", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


def _stage_average(stage, name):
    for key, tensor in stage.volume_averages:
        if key == name:
            return tensor.entries
    raise ConfigError(f"no {name!r} in tensor stage")


# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="trihom",
        description="three-scale homogenization engine for bidomain models")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cell-solve", help="solve unit-cell correctors")
    p.add_argument("--config", required=True)
    p.add_argument("--level", choices=("meso", "micro"), default="meso")
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--out", default="cell_out")
    p.set_defaults(func=cmd_cell_solve)

    p = sub.add_parser("tensors", help="assemble homogenized tensors")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="tensors.csv")
    p.set_defaults(func=cmd_tensors)

    p = sub.add_parser("macro-run", help="run the macroscopic model")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="macro_out")
    p.set_defaults(func=cmd_macro_run)

    p = sub.add_parser("micro-run", help="run the microscopic reference")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="micro_out")
    p.set_defaults(func=cmd_micro_run)

    p = sub.add_parser("validate", help="compare micro and macro artifacts")
    p.add_argument("--micro", required=True)
    p.add_argument("--macro", required=True)
    p.add_argument("--out", default="report.csv")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("nondim", help="derive dimensionless scales")
    p.add_argument("--params", required=True)
    p.set_defaults(func=cmd_nondim)

    p = sub.add_parser("pipeline", help="geometry to validation, one config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="pipeline_out")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GridMismatch as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (TrihomError, nondim.NonPositiveInput) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
