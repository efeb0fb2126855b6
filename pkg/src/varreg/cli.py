"""Command-line front end: seeded experiments with CSV/JSON artifacts.

Every run is driven by one INI config plus a single top-level seed; named
substreams keep operator draws, noise, and instance draws independent of each
other, so outputs are byte-identical across reruns.  Exit code 0 means every
certified inequality in the run held; 1 flags a failed certificate or solver
breakdown; 2 is a usage/config error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
from pathlib import Path

import numpy as np

from varreg.bregman_iteration import bregman_iterate, debias_two_step
from varreg.core import norm, substream
from varreg.estimates import (
    bias_variance_study,
    construct_source_instance,
    convergence_study,
)
from varreg.operators import (
    RadonGeometry,
    draw_design,
    full_design,
    make_convolution,
    make_radon,
    make_random_dense,
    make_sampled,
    save_image_csv,
)
from varreg.regularizers import l1, quadratic, tv_aniso
from varreg.risk import build_risk_pair, check_operator_error_estimate, check_risk_theorem
from varreg.solvers import SolverConfig, SolverError, solve_variational
from varreg.core import identity_map

__all__ = ["main", "run"]

DEFAULTS = {
    "experiment": {"seed": "0", "output": ""},
    "operator": {
        "kind": "dense_gaussian",
        "out_dim": "24",
        "in_dim": "16",
        "spectrum": "",
        "grid_n": "16",
        "n_angles": "12",
        "n_offsets": "12",
        "kernel": "0.25,0.5,0.25",
        "n": "32",
    },
    "regularizer": {"kind": "l1", "shape": ""},
    "solver": {"tol": "1e-8", "max_iters": "50000", "step_safety": "0.9"},
    "solve": {"alpha": "0.5", "sigma": "0.05", "data": ""},
    "bregman": {
        "alpha": "1.0",
        "iterations": "10",
        "sigma": "0.05",
        "discrepancy_factor": "1.1",
        "use_discrepancy": "true",
    },
    "debias": {"alpha": "0.1", "sigma": "0.02"},
    "convergence": {"delta0": "0.1", "decay": "0.5", "steps": "6", "alpha_over_delta": "1.0"},
    "bias_variance": {
        "sigma": "0.05",
        "alpha_min": "0.001",
        "alpha_max": "1.0",
        "n_alphas": "8",
        "replicates": "16",
    },
    "operator_error": {"instances": "5", "n_samples": "12", "sigma": "0.0"},
    "risk_theorem": {"instances": "5", "n_samples": "200", "sigma": "0.02"},
    "radon_demo": {"grid_n": "24", "n_angles": "18", "n_offsets": "18", "alpha": "0.01", "sigma": "0.01"},
}

COMMANDS = (
    "solve",
    "bregman",
    "debias",
    "convergence",
    "bias-variance",
    "operator-error",
    "risk-theorem",
    "radon-demo",
)


class ConfigError(Exception):
    pass


def _fmt(x) -> str:
    """Stable scalar formatting: repr for floats, 1/0 for booleans."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _write_csv(path: Path, header: str, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(_fmt(x) for x in row) + "\n")


def _write_summary(path: Path, payload: dict):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(json.dumps(payload, sort_keys=True, indent=2))
        fh.write("\n")


def load_config(path: str | None, overrides) -> configparser.ConfigParser:
    conf = configparser.ConfigParser(interpolation=None)
    conf.read_dict(DEFAULTS)
    if path is not None:
        read = conf.read(path)
        if not read:
            raise ConfigError(f"config file not found: {path}")
    for item in overrides or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        target, value = item.split("=", 1)
        section, key = target.split(".", 1)
        if not conf.has_section(section):
            conf.add_section(section)
        conf.set(section.strip(), key.strip(), value.strip())
    for section in conf.sections():
        if section not in DEFAULTS:
            raise ConfigError(f"unknown config section [{section}]")
        for key in conf[section]:
            if key not in DEFAULTS[section]:
                raise ConfigError(f"unknown config key [{section}] {key}")
    return conf


def _floats(text: str):
    return np.array([float(t) for t in text.split(",") if t.strip() != ""])


def build_operator(conf, seed: int):
    sec = conf["operator"]
    kind = sec.get("kind")
    if kind == "identity":
        return identity_map(sec.getint("n"))
    if kind == "dense_gaussian":
        spectrum = _floats(sec.get("spectrum"))
        return make_random_dense(
            sec.getint("out_dim"), sec.getint("in_dim"),
            seed=_derived_seed(seed, "design"),
            singular_values=spectrum if spectrum.size else None,
        )
    if kind == "convolution":
        return make_convolution(_floats(sec.get("kernel")), sec.getint("n"))
    if kind == "radon":
        geom = RadonGeometry.regular(sec.getint("grid_n"), sec.getint("n_angles"),
                                     sec.getint("n_offsets"))
        return make_radon(geom)
    raise ConfigError(f"unknown operator kind {kind!r}")


def build_regularizer(conf, op):
    sec = conf["regularizer"]
    kind = sec.get("kind")
    if kind == "quadratic":
        return quadratic()
    if kind == "l1":
        return l1()
    if kind == "tv_aniso":
        shape_text = sec.get("shape")
        if shape_text.strip():
            parts = [int(t) for t in shape_text.split(",") if t.strip()]
            shape = parts[0] if len(parts) == 1 else tuple(parts)
        else:
            shape = op.in_dim
        return tv_aniso(shape)
    raise ConfigError(f"unknown regularizer kind {kind!r}")


def solver_config(conf, seed: int) -> SolverConfig:
    sec = conf["solver"]
    return SolverConfig(
        max_iters=sec.getint("max_iters"),
        tol=sec.getfloat("tol"),
        step_safety=sec.getfloat("step_safety"),
        seed=seed,
    )


def _derived_seed(seed: int, name: str, index: int = 0) -> int:
    """Deterministic integer seed from the named substream tree."""
    return int(substream(seed, name, index).integers(2 ** 63 - 1))


def _out_dir(args, conf) -> Path:
    if args.output:
        base = args.output
    elif conf["experiment"].get("output"):
        base = conf["experiment"].get("output")
    else:
        base = os.environ.get("VARREG_OUTDIR", ".")
    path = Path(base)
    path.mkdir(parents=True, exist_ok=True)
    return path


# -- subcommands ----------------------------------------------------------------

def _cmd_solve(conf, seed, out_dir):
    op = build_operator(conf, seed)
    reg = build_regularizer(conf, op)
    cfg = solver_config(conf, seed)
    sec = conf["solve"]
    alpha = sec.getfloat("alpha")
    data_text = sec.get("data").strip()
    if data_text:
        v = _floats(data_text)
    else:
        instance = construct_source_instance(op, reg, seed)
        noise = sec.getfloat("sigma") * substream(seed, "noise").standard_normal(op.out_dim)
        v = instance.v_star + noise
    sol = solve_variational(op, v, alpha, reg, cfg)
    rows = [(i, sol.u_alpha[i], sol.p_alpha.p[i]) for i in range(op.in_dim)]
    _write_csv(out_dir / "solve.csv", "i,u,p", rows)
    _write_summary(out_dir / "solve_summary.json", {
        "command": "solve",
        "seed": seed,
        "alpha": alpha,
        "iterations": sol.iterations,
        "optimality_defect": sol.optimality_defect,
        "data_residual": sol.data_residual,
        "J_value": sol.J_value,
    })
    print(f"solve: alpha={_fmt(alpha)} iters={sol.iterations} "
          f"defect={_fmt(sol.optimality_defect)} J={_fmt(sol.J_value)}")
    return 0


def _cmd_bregman(conf, seed, out_dir):
    op = build_operator(conf, seed)
    reg = build_regularizer(conf, op)
    cfg = solver_config(conf, seed)
    sec = conf["bregman"]
    instance = construct_source_instance(op, reg, seed)
    noise = sec.getfloat("sigma") * substream(seed, "noise").standard_normal(op.out_dim)
    v = instance.v_star + noise
    noise_level = norm(noise) if sec.getboolean("use_discrepancy") else None
    trace = bregman_iterate(
        op, v, sec.getfloat("alpha"), reg, sec.getint("iterations"), cfg,
        reference=instance.u_star, noise_level=noise_level,
        discrepancy_factor=sec.getfloat("discrepancy_factor"),
    )
    _write_csv(out_dir / "bregman.csv", "k,residual,J_value,bregman_to_ref", trace.rows())
    _write_summary(out_dir / "bregman_summary.json", {
        "command": "bregman",
        "seed": seed,
        "steps": len(trace.steps),
        "stopped_by_discrepancy": trace.stopped_by_discrepancy,
        "final_residual": trace.steps[-1].data_residual,
        "noise_level": noise_level,
    })
    print(f"bregman: steps={len(trace.steps)} "
          f"stopped_by_discrepancy={trace.stopped_by_discrepancy} "
          f"final_residual={_fmt(trace.steps[-1].data_residual)}")
    return 0


def _cmd_debias(conf, seed, out_dir):
    op = build_operator(conf, seed)
    reg = build_regularizer(conf, op)
    if reg.kind != "l1":
        raise ConfigError("debias requires [regularizer] kind = l1")
    cfg = solver_config(conf, seed)
    sec = conf["debias"]
    instance = construct_source_instance(op, reg, seed)
    noise = sec.getfloat("sigma") * substream(seed, "noise").standard_normal(op.out_dim)
    v = instance.v_star + noise
    result = debias_two_step(op, v, sec.getfloat("alpha"), reg, cfg)
    res_l1 = norm(op.apply(result.step_one.u_alpha) - v)
    res_db = norm(op.apply(result.u_debiased) - v)
    rows = [
        (i, result.step_one.u_alpha[i], result.u_debiased[i], bool(result.support[i]))
        for i in range(op.in_dim)
    ]
    _write_csv(out_dir / "debias.csv", "i,u_l1,u_debiased,support", rows)
    ok = result.bregman_to_step_one <= 1e-8 and res_db <= res_l1 + 1e-10
    _write_summary(out_dir / "debias_summary.json", {
        "command": "debias",
        "seed": seed,
        "empty_support": result.empty_support,
        "support_size": int(result.support.sum()),
        "residual_l1": res_l1,
        "residual_debiased": res_db,
        "bregman_to_step_one": result.bregman_to_step_one,
        "holds": ok,
    })
    print(f"debias: support={int(result.support.sum())} residual {_fmt(res_l1)} -> {_fmt(res_db)} "
          f"bregman_to_step_one={_fmt(result.bregman_to_step_one)} [{'ok' if ok else 'FAIL'}]")
    return 0 if ok else 1


def _cmd_convergence(conf, seed, out_dir):
    op = build_operator(conf, seed)
    reg = build_regularizer(conf, op)
    cfg = solver_config(conf, seed)
    sec = conf["convergence"]
    instance = construct_source_instance(op, reg, seed)
    steps = sec.getint("steps")
    deltas = sec.getfloat("delta0") * sec.getfloat("decay") ** np.arange(steps)
    alphas = sec.getfloat("alpha_over_delta") * deltas
    rows = convergence_study(op, reg, instance, deltas, alphas, seed=seed, config=cfg)
    _write_csv(
        out_dir / "convergence.csv",
        "n,delta,alpha,bregman,bound,output_err,J_value",
        [(r.n, r.delta, r.alpha, r.bregman, r.bound, r.output_err, r.J_value)
         for r in rows],
    )
    all_hold = all(r.holds for r in rows)
    _write_summary(out_dir / "convergence_summary.json", {
        "command": "convergence",
        "seed": seed,
        "rows": len(rows),
        "holds": all_hold,
    })
    for r in rows:
        print(f"convergence n={r.n}: delta={_fmt(r.delta)} alpha={_fmt(r.alpha)} "
              f"bregman={_fmt(r.bregman)} bound={_fmt(r.bound)} [{'ok' if r.holds else 'FAIL'}]")
    return 0 if all_hold else 1


def _cmd_bias_variance(conf, seed, out_dir):
    op = build_operator(conf, seed)
    reg = build_regularizer(conf, op)
    cfg = solver_config(conf, seed)
    sec = conf["bias_variance"]
    instance = construct_source_instance(op, reg, seed)
    alphas = np.geomspace(sec.getfloat("alpha_min"), sec.getfloat("alpha_max"),
                          sec.getint("n_alphas"))
    result = bias_variance_study(op, reg, instance, sec.getfloat("sigma"), alphas,
                                 sec.getint("replicates"), seed=seed, config=cfg)
    _write_csv(
        out_dir / "bias_variance.csv",
        "alpha,mean_bregman,stderr,bound",
        [(r.alpha, r.mean_bregman, r.stderr, r.bound) for r in result.rows],
    )
    all_hold = all(r.holds for r in result.rows)
    _write_summary(out_dir / "bias_variance_summary.json", {
        "command": "bias-variance",
        "seed": seed,
        "rows": len(result.rows),
        "holds": all_hold,
        "argmin_alpha": result.argmin_alpha,
        "noise_energy_mean": result.noise_energy_mean,
        "noise_energy_expected": result.noise_energy_expected,
    })
    print(f"bias-variance: argmin_alpha={_fmt(result.argmin_alpha)} "
          f"noise_energy mean={_fmt(result.noise_energy_mean)} "
          f"expected={_fmt(result.noise_energy_expected)} [{'ok' if all_hold else 'FAIL'}]")
    return 0 if all_hold else 1


def _pair_study(conf, seed, out_dir, section: str, checker, filename: str):
    op = build_operator(conf, seed)
    reg = build_regularizer(conf, op)
    cfg = solver_config(conf, seed)
    sec = conf[section]
    n_instances = sec.getint("instances")
    alpha = conf["solve"].getfloat("alpha")
    # source certificates must live on the quadrature-weighted population map,
    # not on the raw base operator
    population = make_sampled(op, full_design(op.out_dim))
    rows = []
    for i in range(n_instances):
        instance = construct_source_instance(population, reg, _derived_seed(seed, "instance", i))
        design = draw_design(op.out_dim, sec.getint("n_samples"), sec.getfloat("sigma"),
                             _derived_seed(seed, "design", i))
        pair = build_risk_pair(op, instance.u_star, design)
        report = checker(pair, reg, instance, alpha, cfg)
        rows.append((i, report.lhs, report.rhs, report.slack, report.holds))
    _write_csv(out_dir / f"{filename}.csv", "instance,lhs,rhs,slack,holds", rows)
    all_hold = all(bool(r[4]) for r in rows)
    _write_summary(out_dir / f"{filename}_summary.json", {
        "command": section.replace("_", "-"),
        "seed": seed,
        "rows": len(rows),
        "holds": all_hold,
    })
    for row in rows:
        print(f"{section} instance={row[0]}: lhs={_fmt(row[1])} rhs={_fmt(row[2])} "
              f"[{'ok' if row[4] else 'FAIL'}]")
    return 0 if all_hold else 1


def _cmd_operator_error(conf, seed, out_dir):
    return _pair_study(conf, seed, out_dir, "operator_error",
                       check_operator_error_estimate, "operator_error")


def _cmd_risk_theorem(conf, seed, out_dir):
    def checker(pair, reg, instance, alpha, cfg):
        return check_risk_theorem(pair, reg, instance.u_star, instance.z_star, alpha, cfg)

    return _pair_study(conf, seed, out_dir, "risk_theorem", checker, "risk_theorem")


def _cmd_radon_demo(conf, seed, out_dir):
    sec = conf["radon_demo"]
    grid_n = sec.getint("grid_n")
    geom = RadonGeometry.regular(grid_n, sec.getint("n_angles"), sec.getint("n_offsets"))
    op = make_radon(geom)
    cfg = solver_config(conf, seed)
    # phantom: centered disk plus an off-center block
    xs = (np.arange(grid_n) + 0.5) * (2.0 / grid_n) - 1.0
    X, Y = np.meshgrid(xs, xs, indexing="xy")
    phantom = (X ** 2 + Y ** 2 <= 0.5 ** 2).astype(float)
    phantom[(np.abs(X - 0.45) <= 0.2) & (np.abs(Y + 0.4) <= 0.15)] += 0.5
    u_true = phantom.ravel()
    sino = op.apply(u_true)
    noise = sec.getfloat("sigma") * substream(seed, "noise").standard_normal(op.out_dim)
    v = sino + noise
    sol = solve_variational(op, v, sec.getfloat("alpha"), quadratic(), cfg)
    rel_err = norm(sol.u_alpha - u_true) / norm(u_true)
    save_image_csv(out_dir / "phantom.csv", phantom)
    save_image_csv(out_dir / "recon.csv", sol.u_alpha.reshape(grid_n, grid_n))
    _write_csv(out_dir / "radon_demo.csv", "key,value", [
        ("rel_error", rel_err),
        ("data_residual", sol.data_residual),
        ("iterations", sol.iterations),
    ])
    _write_summary(out_dir / "radon_demo_summary.json", {
        "command": "radon-demo",
        "seed": seed,
        "rel_error": rel_err,
        "iterations": sol.iterations,
    })
    print(f"radon-demo: grid={grid_n} rel_error={_fmt(rel_err)} iters={sol.iterations}")
    return 0


_DISPATCH = {
    "solve": _cmd_solve,
    "bregman": _cmd_bregman,
    "debias": _cmd_debias,
    "convergence": _cmd_convergence,
    "bias-variance": _cmd_bias_variance,
    "operator-error": _cmd_operator_error,
    "risk-theorem": _cmd_risk_theorem,
    "radon-demo": _cmd_radon_demo,
}


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="varreg",
        description="Seeded variational-regularization experiments with certified error bounds.",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", default=None, help="INI config file")
    parser.add_argument("--seed", type=int, default=None, help="override [experiment] seed")
    parser.add_argument("--output", default=None,
                        help="output directory (default: [experiment] output, then $VARREG_OUTDIR)")
    parser.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a single config value (repeatable)")
    return parser


def run(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        conf = load_config(args.config, args.set)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    seed = args.seed if args.seed is not None else conf["experiment"].getint("seed")
    out_dir = _out_dir(args, conf)
    try:
        return _DISPATCH[args.command](conf, seed, out_dir)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except SolverError as err:
        print(f"error: solver failed: {err}", file=sys.stderr)
        return 1
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


def main():  # console entry point
    sys.exit(run())


if __name__ == "__main__":
    main()
