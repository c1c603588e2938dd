"""Command line front end.

Five subcommands share one invocation shape:

    loopflow <subcommand> --config <path> [--out <dir>] [--seed <n>]

Output directory precedence is --out, then the LOOPFLOW_OUT environment
variable, then the config's output.directory. Every run writes
config_echo.json with the fully resolved configuration; every JSON
artifact carries the package version and the RNG family, and floats are
serialized through repr so repeated runs are byte-identical.
"""

import argparse
import json
import os
import sys

import numpy as np

from .bundles import (
    build_pullback_bundle,
    chart_decode,
    l2_norm,
    project_section,
    section,
)
from .config import RNG_NAME, VERSION, parse_config_file, resolved_dict
from .flow import FlowConfig, fit_convergence_rate, run_flow
from .lojasiewicz import (
    estimate_gradient_exponent,
    finite_dim_distance_exponent,
    finite_dim_gradient_exponent,
    integrability_probe,
    make_cloud,
    verify_inequality,
)
from .mesh import build_circle_mesh, integrate
from .polynomials import from_term_list
from .reduction import (
    approximation_sweep,
    build_reduction_workspace,
    lipschitz_probe,
    project_onto_kernel,
    sandwich_sweep,
)
from .targets import TargetManifold
from .variational import (
    energy,
    energy_functional_on_bundle,
    functional_value,
    general_euler_lagrange,
    map_state,
    tangential_tension,
    tension_field,
)

__all__ = ["main", "make_initial_map", "build_parser"]

_SUBCOMMANDS = ("energy-eval", "flow-run", "loj-estimate", "reduce-run", "finite-verify")


# -- initial data ----------------------------------------------------------


def _make_target(config):
    t = config.target
    if t.kind == "sphere":
        return TargetManifold.sphere(t.ambient_dim)
    return TargetManifold.ellipsoid(t.semi_axes)


def _base_points(mesh, target, base_cfg):
    if base_cfg.file is not None:
        path = base_cfg.file
        if path.endswith(".npy"):
            pts = np.load(path)
        else:
            pts = np.loadtxt(path, delimiter=",", ndmin=2)
        pts = np.asarray(pts, dtype=float)
        expected = (mesh.n_nodes, target.ambient_dim)
        if pts.shape != expected:
            raise ValueError(
                f"base map file {path} has shape {pts.shape}, expected {expected}"
            )
        return pts
    k = base_cfg.degree
    theta = mesh.node_angles
    pts = np.zeros((mesh.n_nodes, target.ambient_dim))
    pts[:, 0] = target.semi_axes[0] * np.cos(k * theta)
    pts[:, 1] = target.semi_axes[1] * np.sin(k * theta)
    return pts


def make_initial_map(config, seed=None):
    """Base loop plus a seeded trigonometric perturbation, on the target.

    The perturbation is amplitude * sum over modes m of
    (a_m cos m theta + b_m sin m theta) d_m with a_m, b_m uniform on
    (-1/2, 1/2) and d_m a random ambient unit vector, so its sup norm is
    at most amplitude * mode_count. The field is projected into the
    fibers and pushed back to the target through the chart. Amplitude 0
    returns the base loop bit for bit.
    """
    mesh = build_circle_mesh(config.domain.n_nodes, config.domain.diff_order)
    target = _make_target(config)
    base = _base_points(mesh, target, config.base_map)
    pert = config.perturbation
    if pert.amplitude == 0.0:
        return map_state(mesh, target, base)
    if pert.amplitude >= target.tube_radius:
        raise ValueError(
            f"perturbation amplitude {pert.amplitude} must stay below the "
            f"tube radius {target.tube_radius}"
        )
    use_seed = pert.seed if seed is None else seed
    rng = np.random.default_rng(use_seed)
    theta = mesh.node_angles
    field = np.zeros_like(base)
    for m in range(1, pert.mode_count + 1):
        a = rng.uniform(-0.5, 0.5)
        b = rng.uniform(-0.5, 0.5)
        d = rng.standard_normal(target.ambient_dim)
        d = d / np.linalg.norm(d)
        field += np.outer(a * np.cos(m * theta) + b * np.sin(m * theta), d)
    field *= pert.amplitude
    bundle = build_pullback_bundle(mesh, target, base)
    pts = chart_decode(bundle, project_section(bundle, field))
    return map_state(mesh, target, pts)


# -- serialization ---------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _write_json(outdir, name, payload):
    payload = dict(payload)
    payload.setdefault("version", VERSION)
    payload.setdefault("rng", RNG_NAME)
    path = os.path.join(outdir, name)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(payload), fh, sort_keys=True, indent=2)
        fh.write("\n")
    return path


def _write_csv(outdir, name, header, rows):
    path = os.path.join(outdir, name)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(x)) if isinstance(x, (float, np.floating)) else str(x) for x in row) + "\n")
    return path


def _state_l2(state, field):
    return float(np.sqrt(integrate(state.mesh, np.sum(field * field, axis=1))))


# -- subcommands -----------------------------------------------------------


def _run_energy_eval(config, outdir, seed):
    state = make_initial_map(config, seed)
    e = energy(state)
    m_raw = tension_field(state)
    m_tan = tangential_tension(state)
    report = {
        "energy": e,
        "tension_l2": _state_l2(state, m_raw),
        "tangential_tension_l2": _state_l2(state, m_tan),
        "n_nodes": state.mesh.n_nodes,
        "diff_order": state.mesh.diff_order,
        "target_kind": state.target.kind,
        "ambient_dim": state.target.ambient_dim,
    }
    _write_json(outdir, "energy_report.json", report)
    print(
        f"energy {e!r}  tension L2 {report['tension_l2']!r}  "
        f"tangential L2 {report['tangential_tension_l2']!r}"
    )


def _flow_config(config, seed):
    f = config.flow
    use_seed = config.perturbation.seed if seed is None else seed
    return FlowConfig(
        dt_factor=f.dt_factor,
        t_max=f.t_max,
        stop_grad_tol=f.stop_grad_tol,
        integrator=f.integrator,
        seed=use_seed,
    )


def _run_flow(config, outdir, seed):
    state = make_initial_map(config, seed)
    trace = run_flow(state, _flow_config(config, seed))
    stride = config.output.stride
    n = len(trace.times)
    indices = list(range(0, n, stride))
    if indices[-1] != n - 1:
        indices.append(n - 1)
    rows = [
        (trace.times[i], trace.energies[i], trace.grad_norms[i], trace.dist_to_limit[i])
        for i in indices
    ]
    _write_csv(outdir, "trace.csv", ("t", "energy", "grad_norm", "dist_to_limit"), rows)
    try:
        fit = fit_convergence_rate(trace)
    except ValueError as exc:
        fit = {"error": str(exc)}
    fit["flow"] = trace.config_echo
    _write_json(outdir, "rate_fit.json", fit)
    summary = trace.config_echo
    print(
        f"steps {summary['n_steps']}  final energy {float(trace.energies[-1])!r}  "
        f"final grad {float(trace.grad_norms[-1])!r}  "
        f"stopped_on_tolerance {summary['stopped_on_tolerance']}"
    )


def _perturbation_pairs(config, seed, amplitudes=(0.04, 0.02, 0.01, 0.005)):
    """Energy gap against Euler-Lagrange norm for kernel-orthogonal sections."""
    mesh = build_circle_mesh(config.domain.n_nodes, config.domain.diff_order)
    target = _make_target(config)
    base = _base_points(mesh, target, config.base_map)
    bundle = build_pullback_bundle(mesh, target, base)
    functional = energy_functional_on_bundle(bundle)
    workspace = build_reduction_workspace(
        bundle,
        functional,
        kernel_tol=config.reduction.kernel_tol,
        newton_tol=config.reduction.newton_tol,
        newton_max_iter=config.reduction.newton_max_iter,
    )
    rng = np.random.default_rng(config.perturbation.seed if seed is None else seed)
    theta = mesh.node_angles
    gaps, grads = [], []
    for amp in amplitudes:
        raw = np.zeros_like(base)
        for m in range(1, 5):
            coef = rng.uniform(-1.0, 1.0, size=(2, target.ambient_dim))
            raw += np.outer(np.cos(m * theta), coef[0]) + np.outer(np.sin(m * theta), coef[1])
        sec = project_section(bundle, raw)
        ortho = section(bundle, sec.values - project_onto_kernel(workspace, sec).values)
        norm = l2_norm(ortho)
        if norm < 1e-12:
            continue
        u = section(bundle, (amp / norm) * ortho.values)
        gap = abs(functional_value(bundle, functional, u))
        grad = l2_norm(general_euler_lagrange(bundle, functional, u))
        gaps.append(gap)
        grads.append(grad)
    return gaps, grads


def trajectory_pairs(trace):
    """Asymptotic (gap, gradient) pairs from a flow trace.

    The gap is measured to the final energy, the last tenth of the
    records is excluded (they define the limit), and records above half
    the initial gap are dropped: the exponent is local to the limiting
    critical point, and early records can sit near a different (saddle)
    level where the gap stalls while the gradient varies.
    """
    e_inf = float(trace.energies[-1])
    cut = max(1, int(np.floor(0.9 * len(trace.times))))
    gaps = np.abs(trace.energies[:cut] - e_inf)
    grads = trace.grad_norms[:cut]
    if gaps.size:
        keep = gaps <= 0.5 * gaps[0]
        gaps, grads = gaps[keep], grads[keep]
    return gaps, grads


def _run_loj_estimate(config, outdir, seed):
    state = make_initial_map(config, seed)
    trace = run_flow(state, _flow_config(config, seed), fill_distances=False)
    e_inf = float(trace.energies[-1])
    traj_gaps, traj_grads = trajectory_pairs(trace)
    pert_gaps, pert_grads = _perturbation_pairs(config, seed)
    rows = [(g, d, "flow") for g, d in zip(traj_gaps, traj_grads)]
    rows += [(g, d, "perturbation") for g, d in zip(pert_gaps, pert_grads)]
    _write_csv(outdir, "cloud.csv", ("value_gap", "grad_norm", "source"), rows)
    cloud = make_cloud(
        np.concatenate([traj_gaps, pert_gaps]),
        np.concatenate([traj_grads, pert_grads]),
        provenance="flow trajectory + kernel-orthogonal perturbations",
    )
    fit = estimate_gradient_exponent(cloud)
    report = {
        "fit": {
            "theta": fit.theta,
            "constant": fit.constant,
            "r_squared": fit.r_squared,
            "sample_count": fit.sample_count,
            "noise_floor_hits": fit.noise_floor_hits,
        },
        "verification_at_half": verify_inequality(cloud, 0.5),
        "n_flow_pairs": int(traj_gaps.size),
        "n_perturbation_pairs": len(pert_gaps),
        "e_infinity": e_inf,
    }
    _write_json(outdir, "exponent_fit.json", report)
    print(
        f"theta {fit.theta!r}  constant {fit.constant!r}  "
        f"r_squared {fit.r_squared!r}  samples {fit.sample_count}"
    )


def _run_reduce(config, outdir, seed):
    mesh = build_circle_mesh(config.domain.n_nodes, config.domain.diff_order)
    target = _make_target(config)
    base = _base_points(mesh, target, config.base_map)
    bundle = build_pullback_bundle(mesh, target, base)
    functional = energy_functional_on_bundle(bundle)
    workspace = build_reduction_workspace(
        bundle,
        functional,
        kernel_tol=config.reduction.kernel_tol,
        newton_tol=config.reduction.newton_tol,
        newton_max_iter=config.reduction.newton_max_iter,
    )
    use_seed = config.perturbation.seed if seed is None else seed
    loj = config.lojasiewicz
    report = {
        "kernel_dimension": workspace.kernel_dim,
        "kernel_eigenvalues": workspace.kernel_eigenvalues,
        "spectral_radius": workspace.spectral_radius,
        "threshold": workspace.threshold,
        "discarded_min": workspace.discarded_min,
        "gap_ratio": workspace.gap_ratio,
        "sandwich": sandwich_sweep(
            workspace,
            radii=tuple(loj.radii),
            samples_per_radius=loj.samples_per_radius,
            seed=use_seed,
        ),
        "approximation": approximation_sweep(workspace, seed=use_seed),
        "lipschitz": lipschitz_probe(workspace, seed=use_seed),
        "integrability": integrability_probe(
            workspace,
            radii=tuple(loj.radii),
            samples_per_radius=loj.samples_per_radius,
            seed=use_seed,
        ),
    }
    _write_json(outdir, "reduction_report.json", report)
    print(
        f"kernel dimension {workspace.kernel_dim}  gap ratio {workspace.gap_ratio!r}  "
        f"integrable {report['integrability']['integrable']}"
    )


def _run_finite_verify(config, outdir, seed):
    use_seed = config.perturbation.seed if seed is None else seed
    rows = []
    for entry in config.finite_verify.polynomials:
        label = entry.get("label", "?")
        f = from_term_list(entry["terms"])
        check = entry["check"]
        if check == "gradient":
            fit = finite_dim_gradient_exponent(
                f, np.zeros(f.n_vars), entry["radii"], seed=use_seed
            )
            rows.append(
                {
                    "label": label,
                    "check": "gradient",
                    "exponent": fit.theta,
                    "constant": fit.constant,
                    "r_squared": fit.r_squared,
                    "sample_count": fit.sample_count,
                }
            )
        else:
            alpha, c = finite_dim_distance_exponent(f, entry["box"], entry["grid_n"])
            rows.append(
                {
                    "label": label,
                    "check": "distance",
                    "exponent": alpha,
                    "constant": c,
                }
            )
    _write_json(outdir, "exponent_table.json", {"table": rows})
    for row in rows:
        print(f"{row['label']}: {row['check']} exponent {row['exponent']!r}")


_DISPATCH = {
    "energy-eval": _run_energy_eval,
    "flow-run": _run_flow,
    "loj-estimate": _run_loj_estimate,
    "reduce-run": _run_reduce,
    "finite-verify": _run_finite_verify,
}


# -- entry point -----------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="loopflow",
        description="Variational analysis of loop energies on spheres and ellipsoids.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to a JSON run configuration")
        p.add_argument("--out", default=None, help="output directory override")
        p.add_argument("--seed", type=int, default=None, help="seed override")
    return parser


def _resolve_outdir(args, config):
    if args.out:
        return args.out
    env = os.environ.get("LOOPFLOW_OUT")
    if env:
        return env
    return config.output.directory


def main(argv=None):
    args = build_parser().parse_args(argv)
    outdir = None
    try:
        config = parse_config_file(args.config)
        outdir = _resolve_outdir(args, config)
        os.makedirs(outdir, exist_ok=True)
        echo = resolved_dict(config)
        echo["runtime"] = {
            "subcommand": args.command,
            "out_dir": outdir,
            "seed_override": args.seed,
        }
        _write_json(outdir, "config_echo.json", echo)
        _DISPATCH[args.command](config, outdir, args.seed)
    except Exception as exc:
        record = {
            "error": str(exc),
            "error_type": type(exc).__name__,
            "subcommand": args.command,
            "version": VERSION,
        }
        sys.stderr.write(json.dumps(record, sort_keys=True) + "\n")
        if outdir is not None and os.path.isdir(outdir):
            try:
                _write_json(outdir, "error.json", record)
            except OSError:
                pass
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
