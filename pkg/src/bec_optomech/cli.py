"""Command-line scenario runner.

    bec-optomech cat --config cat.yaml --out runs/cat
    bec-optomech wigner --config w.yaml --method parity --shots 100000 --seed 7
    bec-optomech rerun runs/cat/manifest.json --out runs/cat-again

Each run writes its data files plus ``manifest.json``; the manifest holds the
effective configuration, so ``rerun`` regenerates the same bytes.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import platform
import sys
import time
from pathlib import Path

import mpmath
import numba
import numpy as np
import scipy
import yaml

from . import __version__
from .config import SCENARIOS, ScenarioConfig, load_config, validate_config
from .dynamics import (
    SystemParams,
    analytic_state,
    evolution_trace,
    evolve,
    joint_space_for,
    max_eta,
)
from .errors import (
    ConfigValidationError,
    DegenerateGeometryError,
    NumericalBudgetError,
    OptomechError,
    ProtocolConstraintError,
    ResonanceError,
)
from .fock import LEAKAGE_BUDGET, ModeSpace, coherent_state, fidelity, number_state, policy_dim, random_density, reduce_mode
from .protocols import (
    CONSTRAINT_TOL,
    CatSpec,
    cat_target,
    conditional_quadrature_collapse,
    displaced_number_statistics,
    gaussian_sector_weights,
    quadrature_distribution,
    solve_counting_constraint,
    solve_parity_constraint,
    wigner_direct,
    wigner_reconstruct_counting,
    wigner_reconstruct_parity,
)
from .sampling import ShotConfig, estimate_wigner_finite_shots
from .trap import OpticalParams, TrapGeometry, coupling_map, effective_coupling, mass_from_amu, transition_moment, wave_vectors_from_angle

log = logging.getLogger("bec_optomech")

EXIT_OK, EXIT_OTHER, EXIT_VALIDATION, EXIT_BUDGET, EXIT_CONSTRAINT = 0, 1, 2, 3, 4
MANIFEST = "manifest.json"


# ----------------------------------------------------------------------- output


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


class Outputs:
    """Collects the files of one run and their digests."""

    def __init__(self, out_dir: Path, prefix: str = ""):
        self.dir = Path(out_dir)
        self.prefix = prefix
        self.files: dict[str, str] = {}
        self.dir.mkdir(parents=True, exist_ok=True)

    def _record(self, name: str, data: bytes):
        path = self.dir / (self.prefix + name)
        path.write_bytes(data)
        self.files[path.name] = hashlib.sha256(data).hexdigest()

    def csv(self, name: str, header: list[str], rows, comments: list[str] = ()):
        lines = [f"# {c}\n" for c in comments]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
        self._record(name, ("".join(lines) + buf.getvalue()).encode("utf-8"))

    def json(self, name: str, obj):
        self._record(name, (json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n").encode("utf-8"))


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (complex, np.complexfloating)):
        return [float(obj.real), float(obj.imag)]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    return obj


def _grid(triple) -> np.ndarray:
    start, stop, count = triple
    return np.linspace(float(start), float(stop), int(count))


# -------------------------------------------------------------------- physics


def _optics(cfg: ScenarioConfig):
    p = cfg.physical
    trap = TrapGeometry(tuple(2 * math.pi * f for f in p["trap_hz"]), mass_from_amu(p["mass_amu"]))
    if "theta_rad" in p:
        k_pump, k_cav = wave_vectors_from_angle(p["wavelength_m"], p["theta_rad"])
    else:
        k_cav = np.array([0.0, 0.0, 2 * math.pi / p.get("wavelength_m", 1e-6)])
        k_pump = k_cav + np.asarray(p.get("delta_k_per_m", [0.0, 0.0, 0.0]), dtype=float)
    optics = OpticalParams(
        rabi_pump=cfg.rad_s("rabi_pump_hz"),
        rabi_vacuum=cfg.rad_s("vacuum_rabi_hz"),
        detuning_atom=cfg.rad_s("detuning_hz"),
        k_pump=tuple(k_pump),
        k_cavity=tuple(k_cav),
    )
    return trap, optics, optics.delta_k


def _system(cfg: ScenarioConfig, derived: dict, Lambda: float | None = None) -> SystemParams:
    """SystemParams from an explicit Lambda or from the optics and omega_m."""
    omega0 = cfg.rad_s("omega0_hz") or 0.0
    if Lambda is None and "Lambda" in cfg.protocol:
        Lambda = float(cfg.protocol["Lambda"])
    if Lambda is not None:
        derived["Lambda"] = Lambda
        return SystemParams.from_lambda(Lambda, omega0=omega0)
    trap, optics, dk = _optics(cfg)
    omega_m = cfg.rad_s("omega_m_hz")
    res = effective_coupling(optics, dk, trap, omega_m)
    if abs(res.G.imag) > 1e-12 * abs(res.G):
        raise DegenerateGeometryError("complex G: the dynamics need a real coupling")
    derived.update(G_rad_s=res.G.real, omega_m_rad_s=omega_m, Lambda=-res.G.real / omega_m)
    return SystemParams(omega_m=omega_m, G=res.G.real, omega0=omega0)


def _atom_state(cfg: ScenarioConfig, derived: dict):
    prot = cfg.protocol
    kind = prot.get("state", "cat")
    alpha = cfg.complex_value("alpha", 0.0)
    dim = cfg.numerics.get("atom_dim") or prot.get("dim") or policy_dim(alpha)
    space = ModeSpace.single("atom", dim)
    if kind == "cat":
        state = cat_target(CatSpec.from_revival(alpha, prot.get("m_revival", 1)), space)
    elif kind == "coherent":
        state = coherent_state(space, "atom", alpha, cfg.numerics.get("leakage_budget", LEAKAGE_BUDGET))
    elif kind == "number":
        state = number_state(ModeSpace.single("atom", max(dim, prot["n"] + 2)), "atom", prot["n"])
    else:
        state = random_density(prot["dim"], prot.get("rank"), prot.get("state_seed", 0))
    derived.update(atom_state=kind, atom_dim=state.space.total_dim)
    return state


# ------------------------------------------------------------------ scenarios


def run_coupling_map(cfg: ScenarioConfig, out: Outputs, derived: dict):
    trap, optics, dk = _optics(cfg)
    prot = cfg.protocol
    G = transition_moment((0, 0, 0), (0, 0, 0), dk, trap, optics)
    rows = [("G00_re_rad_s", G.real), ("G00_im_rad_s", G.imag), ("G00_abs_hz", abs(G) / (2 * math.pi))]
    if "omega_m_hz" in cfg.physical:
        res = effective_coupling(optics, dk, trap, cfg.rad_s("omega_m_hz"), prot.get("validity_n_max", 3))
        rows += [("Lambda_re", res.Lambda.real), ("Lambda_im", res.Lambda.imag), ("validity_ratio", res.validity_ratio)]
        derived["Lambda"] = [res.Lambda.real, res.Lambda.imag]
    for i, eta in enumerate(trap.lengths * np.abs(dk) / math.sqrt(2.0)):
        rows.append((f"lamb_dicke_{'xyz'[i]}", eta))
    derived.update(G_rad_s=[G.real, G.imag], G_abs_hz=abs(G) / (2 * math.pi), delta_k_per_m=dk.tolist(),
                   trap_lengths_m=trap.lengths.tolist())
    out.csv("coupling_summary.csv", ["quantity", "value"], rows)
    m_max = prot.get("m_max", 3)
    header = None
    table = []
    for axis in prot.get("axes", [0, 1, 2]):
        for r in coupling_map(trap, optics, axis, _grid(prot.get("dk_L", [0.0, 4.0, 41])), m_max):
            header = header or ["axis"] + list(r)
            table.append([axis] + list(r.values()))
    out.csv("coupling_map.csv", header, table)


def run_evolve(cfg: ScenarioConfig, out: Outputs, derived: dict):
    params = _system(cfg, derived)
    alpha = cfg.complex_value("alpha")
    if "tau" in cfg.protocol:
        taus = [cfg.protocol["tau"]]
    else:
        taus = cfg.protocol.get("taus", [math.pi / 2, math.pi, 2 * math.pi])
    atom_dim = cfg.numerics.get("atom_dim") or policy_dim(alpha)
    space = joint_space_for(atom_dim, params.Lambda, max(max_eta(t) for t in taus))
    if "cavity_dim" in cfg.numerics:
        space = ModeSpace.joint(atom_dim, cfg.numerics["cavity_dim"])
    derived.update(atom_dim=space.dims[0], cavity_dim=space.dims[1])
    rows = evolution_trace(params, alpha, taus, space)
    out.csv("evolution.csv", list(rows[0]), [list(r.values()) for r in rows])
    derived["min_overlap"] = min(r["overlap"] for r in rows)


def run_cat(cfg: ScenarioConfig, out: Outputs, derived: dict):
    spec = CatSpec.from_revival(cfg.complex_value("alpha"), cfg.protocol["m_revival"])
    params = _system(cfg, derived, Lambda=spec.Lambda)
    atom_dim = cfg.numerics.get("atom_dim") or policy_dim(spec.alpha)
    space = joint_space_for(atom_dim, spec.Lambda, 2.0)
    derived.update(atom_dim=space.dims[0], cavity_dim=space.dims[1], tau=spec.tau)
    initial = analytic_state(spec.alpha, params, 0.0, space).state
    result = evolve(params, initial, spec.tau, atol=cfg.numerics.get("atol", 1e-10))
    atom = reduce_mode(result.state, "atom")
    target = cat_target(spec, atom.space)
    vacuum = number_state(ModeSpace.single("cavity", space.dims[1]), "cavity", 0)
    derived.update(
        fidelity_cat=fidelity(atom, target),
        fidelity_cavity_vacuum=fidelity(reduce_mode(result.state, "cavity"), vacuum),
        leakage=result.leakage,
    )
    rows = [(n, atom.matrix[n, n].real, target.amplitudes[n].real, target.amplitudes[n].imag) for n in range(atom_dim)]
    out.csv("cat_atom.csv", ["n", "population", "target_re", "target_im"], rows)
    out.json("cat_summary.json", {k: derived[k] for k in ("fidelity_cat", "fidelity_cavity_vacuum", "Lambda", "tau")})


def run_conditional(cfg: ScenarioConfig, out: Outputs, derived: dict):
    params = _system(cfg, derived)
    prot = cfg.protocol
    alpha = cfg.complex_value("alpha")
    tau = float(prot.get("tau", math.pi))
    convention = prot.get("convention", "half")
    atom_dim = cfg.numerics.get("atom_dim") or policy_dim(alpha)
    space = joint_space_for(atom_dim, params.Lambda, max_eta(tau))
    joint = analytic_state(alpha, params, tau, space).state
    derived.update(atom_dim=space.dims[0], cavity_dim=space.dims[1], tau=tau, convention=convention)
    prior = np.abs(analytic_state(alpha, params, 0.0, space).state.tensor()[:, 0]) ** 2
    odd_pi = abs(tau / math.pi - round(tau / math.pi)) < 1e-9 and round(tau / math.pi) % 2 == 1
    rows, summary = [], []
    for X in prot["X"]:
        atom, density = conditional_quadrature_collapse(joint, X, convention)
        pops = np.abs(atom.amplitudes) ** 2
        gauss = (
            gaussian_sector_weights(X, params.Lambda, tau, atom_dim - 1, prior, convention) if odd_pi else [math.nan] * atom_dim
        )
        rows += [(X, n, pops[n], gauss[n]) for n in range(atom_dim)]
        dev = float(np.max(np.abs(pops - gauss))) if odd_pi else math.nan
        summary.append({"X": X, "density": density, "dominant_n": int(np.argmax(pops)),
                        "dominant_population": float(pops.max()), "gaussian_max_deviation": dev})
    out.csv("conditional.csv", ["X", "n", "population", "gaussian_weight"], rows)
    if "X_grid" in prot:
        xs = _grid(prot["X_grid"])
        out.csv("conditional_density.csv", ["X", "density"],
                [(x, conditional_quadrature_collapse(joint, x, convention)[1]) for x in xs])
    out.json("conditional_summary.json", summary)


def run_number_stats(cfg: ScenarioConfig, out: Outputs, derived: dict):
    rho = _atom_state(cfg, derived)
    beta = cfg.complex_value("beta")
    stats = displaced_number_statistics(rho, beta, cfg.numerics.get("leakage_budget", LEAKAGE_BUDGET))
    out.csv("number_stats.csv", ["n", "probability"], stats)
    if "X_grid" in cfg.protocol:
        Lambda = _system(cfg, derived).Lambda
        rec = quadrature_distribution(rho, beta, Lambda, math.pi, _grid(cfg.protocol["X_grid"]))
        out.csv("quadrature.csv", ["X", "density"], zip(rec.values, rec.weights))


def run_wigner(cfg: ScenarioConfig, out: Outputs, derived: dict, seed: int):
    prot = cfg.protocol
    rho = _atom_state(cfg, derived)
    method = prot.get("method", "direct")
    shots = cfg.sampling.get("shots")
    budget = cfg.numerics.get("leakage_budget", LEAKAGE_BUDGET)
    tol = cfg.numerics.get("constraint_tol", CONSTRAINT_TOL)
    if "beta" in prot:
        points = [cfg.complex_value("beta")]
    else:
        points = [complex(x, y) for y in _grid(prot["beta_im"]) for x in _grid(prot["beta_re"])]
    kw = {}
    if method != "direct":
        Lambda, tau = prot.get("Lambda"), prot.get("tau")
        if Lambda is None and tau is None:
            tau = math.pi
        solve = solve_counting_constraint if method == "counting" else solve_parity_constraint
        Lambda, tau, residual = solve(Lambda, tau, tol)
        kw = {"Lambda": Lambda, "tau": tau, "constraint_tol": tol, "leakage_budget": budget}
        derived.update(Lambda=Lambda, tau=tau, constraint_residual=residual)
    if method == "parity":
        kw.update(rho0=prot.get("rho0", 0.3), rho1=prot.get("rho1", 0.7), cavity_model=prot.get("cavity_model", "blockade"))
    fn = {"direct": wigner_direct, "counting": wigner_reconstruct_counting, "parity": wigner_reconstruct_parity}[method]
    if method == "direct":
        kw = {"leakage_budget": budget}
    header = ["re_beta", "im_beta", "W", "method", "constraint_residual"]
    rows = []
    if shots:
        if method == "direct":
            raise ConfigValidationError(["sampling.shots: finite-shot estimates need method counting or parity"])
        header += ["std_error", "shots", "W_exact"]
        skw = {k: v for k, v in kw.items() if k not in ("constraint_tol",)}
        for i, b in enumerate(points):
            exact = fn(rho, b, **kw)
            point_seed = int(np.random.SeedSequence(seed, spawn_key=(i,)).generate_state(1, np.uint64)[0])
            est = estimate_wigner_finite_shots(rho, b, method, ShotConfig(shots, point_seed), **skw)
            rows.append((b.real, b.imag, est.value, method, exact.constraint_residual, est.std_error, shots, exact.value))
        derived.update(shots=shots, seed=seed)
    else:
        for b in points:
            w = fn(rho, b, **kw)
            rows.append((b.real, b.imag, w.value, method, w.constraint_residual))
    out.csv("wigner.csv", header, rows)


RUNNERS = {
    "coupling-map": run_coupling_map,
    "evolve": run_evolve,
    "cat": run_cat,
    "conditional": run_conditional,
    "number-stats": run_number_stats,
}


def run_scenario(raw: dict, out_dir: Path, scenario: str | None = None) -> dict:
    """Validate ``raw``, run it into ``out_dir`` and return the manifest."""
    cfg = validate_config(raw, scenario)
    out = Outputs(out_dir, cfg.output.get("prefix", ""))
    derived: dict = {}
    seed = int(cfg.sampling.get("seed", 0))
    t0 = time.perf_counter()
    if cfg.scenario == "wigner":
        run_wigner(cfg, out, derived, seed)
    else:
        RUNNERS[cfg.scenario](cfg, out, derived)
    manifest = {
        "scenario": cfg.scenario,
        "config": cfg.raw,
        "derived": derived,
        "artifacts": dict(sorted(out.files.items())),
        "versions": {
            "bec_optomech": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "numba": numba.__version__,
            "mpmath": mpmath.__version__,
        },
        "wall_clock_s": time.perf_counter() - t0,
    }
    (Path(out_dir) / MANIFEST).write_text(json.dumps(_plain(manifest), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


def rerun(manifest_path: Path, out_dir: Path) -> tuple[dict, list[str]]:
    """Repeat a recorded run; returns the new manifest and the files whose digest changed."""
    old = json.loads(Path(manifest_path).read_text(encoding="utf-8"))
    new = run_scenario(old["config"], out_dir, old["scenario"])
    changed = sorted(
        name for name in set(old["artifacts"]) | set(new["artifacts"])
        if old["artifacts"].get(name) != new["artifacts"].get(name)
    )
    return new, changed


# ------------------------------------------------------------------------ main


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="scenario YAML file")
    common.add_argument("--out", type=Path, help="output directory (default: output.dir or ./out)")
    common.add_argument("--seed", type=int, help="sampling seed, overrides sampling.seed")
    common.add_argument("--quiet", action="store_true", help="only report errors")

    ap = argparse.ArgumentParser(prog="bec-optomech", description=__doc__.splitlines()[0] if __doc__ else None,
                                 parents=[common])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in SCENARIOS:
        p = sub.add_parser(name, parents=[common])
        if name == "wigner":
            p.add_argument("--method", choices=["direct", "counting", "parity"])
            p.add_argument("--shots", type=int)
    p = sub.add_parser("rerun", parents=[common], help="repeat a run from its manifest")
    p.add_argument("manifest", type=Path)
    return ap


def _effective_config(args) -> dict:
    raw = load_config(args.config) if args.config else {}
    if not isinstance(raw, dict):
        raise ConfigValidationError(["<root>: configuration must be a mapping"])
    raw.setdefault("version", 1)
    if args.seed is not None:
        raw.setdefault("sampling", {})["seed"] = args.seed
    if getattr(args, "method", None):
        raw.setdefault("protocol", {})["method"] = args.method
    if getattr(args, "shots", None):
        raw.setdefault("sampling", {})["shots"] = args.shots
    return raw


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO, format="%(levelname)s %(message)s")
    try:
        if args.command == "rerun":
            out = args.out or args.manifest.parent / "rerun"
            manifest, changed = rerun(args.manifest, out)
            if changed:
                log.error("rerun differs in: %s", ", ".join(changed))
                return EXIT_OTHER
            log.info("rerun reproduced %d files in %s", len(manifest["artifacts"]), out)
            return EXIT_OK
        raw = _effective_config(args)
        out = args.out or Path(raw.get("output", {}).get("dir", "out"))
        manifest = run_scenario(raw, out, args.command)
        for name in manifest["artifacts"]:
            log.info("wrote %s", out / name)
        return EXIT_OK
    except (ConfigValidationError, ResonanceError, DegenerateGeometryError, yaml.YAMLError, FileNotFoundError) as exc:
        msgs = exc.errors if isinstance(exc, ConfigValidationError) else [str(exc)]
        for m in msgs:
            print(f"error: {m}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalBudgetError as exc:
        print(f"numerical budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except ProtocolConstraintError as exc:
        print(f"protocol constraint: {exc}", file=sys.stderr)
        return EXIT_CONSTRAINT
    except OptomechError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
