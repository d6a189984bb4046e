"""Command-line pipeline: model -> hypotheses -> normal form -> catalog ->
FGR verdict -> simulation, with every stage persisted under the output
directory and a manifest that is written even when a stage fails.

Exit codes: 0 success, 2 hypothesis violation, 3 numerical failure,
4 configuration error.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import os
import sys

import numpy as np

from . import birkhoff, dynamics, fgr, hamalg, resonance, spectral
from .errors import (
    ConfigError,
    HypothesisViolation,
    NlsnfError,
    NumericalError,
)

EXIT_OK = 0
EXIT_HYPOTHESIS = 2
EXIT_NUMERICAL = 3
EXIT_CONFIG = 4

OUTDIR_ENV = "NLSNF_OUTDIR"

DEFAULTS = {
    "model": {
        "l_box": "40.0",
        "m_pts": "2048",
        "preset": "poschl_teller",
        "a": "1.5",
        "kappa2": "0.35",
        "depth": "",
        "width": "",
        "potential_csv": "",
    },
    "forcing": {"gamma0": "1.0", "gamma1": "1.0"},
    "analysis": {
        "r_max": "",          # default N + 1
        "n0": "",             # default N + 2
        "degree_cap": "",     # default 2N + 4
        "tol_res": "1e-9",
        "estimator": "histogram",
    },
    "simulation": {
        "t_end": "200.0",
        "dt": "1e-3",
        "output_stride": "100",
        "mode_amplitudes": "0.05,0.0",
        "nonlinearity": "cubic",
        "sponge": "false",
        "wrap_policy": "warn",
        "seed": "0",
    },
    "output": {"directory": "out"},
}


def load_config(path: str | None) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    cp.read_dict(DEFAULTS)
    if path:
        if not os.path.exists(path):
            raise ConfigError(f"config file {path} not found")
        cp.read(path)
    return cp


def _output_dir(cp) -> str:
    out = os.environ.get(OUTDIR_ENV) or cp.get("output", "directory")
    os.makedirs(out, exist_ok=True)
    return out


def config_hash(cp) -> str:
    blob = json.dumps({s: dict(cp[s]) for s in cp.sections()}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def build_model_from_config(cp) -> spectral.OperatorModel:
    sec = cp["model"]
    grid = spectral.GridSpec(l_box=sec.getfloat("l_box"), m_pts=sec.getint("m_pts"))
    if sec.get("potential_csv"):
        v = spectral.potential_from_csv(grid, sec.get("potential_csv"))
    else:
        preset = sec.get("preset")
        params = {}
        if preset == "poschl_teller":
            params = {"a": sec.getfloat("a"), "kappa2": sec.getfloat("kappa2")}
        elif preset == "gaussian_well":
            params = {"depth": sec.getfloat("depth"), "width": sec.getfloat("width")}
        elif preset == "sech2_well":
            if sec.get("depth"):
                params = {"depth": sec.getfloat("depth")}
        v = spectral.potential_from_preset(grid, preset, **params)
    return spectral.build_operator(grid, v)


def _complex_list(text: str):
    out = []
    for item in text.split(","):
        item = item.strip()
        if item:
            out.append(complex(item))
    return tuple(out)


def sim_config_from(cp) -> dynamics.SimConfig:
    sec = cp["simulation"]
    return dynamics.SimConfig(
        gamma0=cp.getfloat("forcing", "gamma0"),
        gamma1=cp.getfloat("forcing", "gamma1"),
        nonlinearity=sec.get("nonlinearity"),
        t_end=sec.getfloat("t_end"),
        dt=sec.getfloat("dt"),
        output_stride=sec.getint("output_stride"),
        mode_amplitudes=_complex_list(sec.get("mode_amplitudes")),
        sponge=sec.getboolean("sponge"),
        wrap_policy=sec.get("wrap_policy"),
    )


def write_trajectory_csv(record: dynamics.TrajectoryRecord, path: str):
    nb = record.z.shape[1]
    cols = [record.times]
    header = ["t"]
    for j in range(nb):
        cols += [record.z[:, j].real, record.z[:, j].imag]
        header += [f"re_z{j}", f"im_z{j}"]
    if record.zeta is not None:
        for j in range(nb):
            cols += [record.zeta[:, j].real, record.zeta[:, j].imag]
            header += [f"re_zeta{j}", f"im_zeta{j}"]
    cols += [record.mass, record.energy, record.f_l2, record.f_h1, record.f_weighted]
    header += ["mass", "energy", "f_l2", "f_h1", "f_weighted"]
    if record.g_weighted is not None:
        cols.append(record.g_weighted)
        header.append("g_weighted")
    if record.fgr_flux is not None:
        cols.append(record.fgr_flux)
        header.append("fgr_flux")
    np.savetxt(path, np.column_stack(cols), delimiter=",",
               header=",".join(header), comments="")


def save_expansion(ham, path_json: str, path_npz: str):
    records, vectors = hamalg.expansion_to_records(ham)
    with open(path_json, "w") as fh:
        json.dump({"terms": records, "vectors_file": os.path.basename(path_npz)},
                  fh, indent=1)
    np.savez_compressed(path_npz, **{k: v for k, v in vectors.items()})


# ---------------------------------------------------------------------------
# pipeline


def run_pipeline(cp, outdir: str) -> dict:
    manifest: dict = {
        "config": {s: dict(cp[s]) for s in cp.sections()},
        "config_hash": config_hash(cp),
        "stages": {},
        "incomplete": True,
    }
    manifest_path = os.path.join(outdir, "manifest.json")

    def flush():
        with open(manifest_path, "w") as fh:
            json.dump(manifest, fh, indent=1, default=_json_default)

    stage = "model"
    try:
        model = build_model_from_config(cp)
        manifest["stages"]["model"] = {
            "c": model.c,
            "eigenvalues": model.lam.tolist(),
            "n_bound": int(model.n_bound),
            "grid": {"l_box": model.grid.l_box, "m_pts": model.grid.m_pts},
        }
        spectral.export_eigenpairs_csv(model, os.path.join(outdir, "eigenpairs.csv"))
        flush()

        stage = "resonance"
        tol = cp.getfloat("analysis", "tol_res")
        budget = resonance.resonance_budget(model.lam, model.c, tol)
        report = resonance.check_hypotheses(model.lam, model.c, budget, tol)
        gamma1 = cp.getfloat("forcing", "gamma1")
        manifest["stages"]["resonance"] = {
            "N": budget.big_n, "N_j": budget.n_j, "floor_c": budget.floor_c,
            "h5": report.h5_ok, "h7": report.h7_ok, "h8": report.h8_ok,
            "h10": gamma1 != 0.0,
            "witnesses": report.witnesses,
        }
        flush()
        if not report.all_ok:
            raise HypothesisViolation("hypothesis check failed",
                                      witnesses=report.witnesses)
        catalog = resonance.build_index_sets(model.lam, model.c, budget, report, tol)
        with open(os.path.join(outdir, "resonance_report.txt"), "w") as fh:
            fh.write(resonance.catalog_report(catalog, budget, report))
        manifest["stages"]["catalog"] = {
            "bigM": len(catalog.big_m), "M": len(catalog.minimal),
            "X": catalog.x_values, "min_gap": catalog.min_gap,
        }
        flush()

        gamma0 = cp.getfloat("forcing", "gamma0")
        if gamma0 == 0.0 and gamma1 == 0.0:
            # linear fast path: no normal form content at all
            manifest["stages"]["normal_form"] = {"skipped": "linear run"}
            stage = "simulate"
            record = dynamics.simulate(model, sim_config_from(cp), aux=None)
            _record_sim(manifest, record)
            write_trajectory_csv(record, os.path.join(outdir, "trajectory.csv"))
            manifest["incomplete"] = False
            flush()
            return manifest

        stage = "normal_form"
        e_p = hamalg.expand_potential_energy(model, gamma0, gamma1)
        r_max = cp.get("analysis", "r_max")
        r_max = int(r_max) if r_max else budget.big_n + 1
        n0 = cp.get("analysis", "n0")
        n0 = int(n0) if n0 else budget.big_n + 2
        cap = cp.get("analysis", "degree_cap")
        cap = int(cap) if cap else 2 * budget.big_n + 4
        nf = birkhoff.normal_form(model, e_p, r_max=r_max, n0=n0,
                                  degree_cap=cap, big_n=budget.big_n)
        manifest["stages"]["normal_form"] = {
            "r_final": nf.r_final, "n0": nf.n0, "degree_cap": nf.degree_cap,
            "rounds": [
                {
                    "r": led.r, "extracted": led.extracted,
                    "resonant": led.resonant, "solved": led.solved,
                    "chi_terms": led.chi_terms,
                    "dropped": led.dropped.count,
                    "classes": led.class_counts,
                    "reality_ok": led.reality_ok,
                }
                for led in nf.ledgers
            ],
        }
        for i, chi in enumerate(nf.generators):
            save_expansion(chi, os.path.join(outdir, f"chi_{i + 2}.json"),
                           os.path.join(outdir, f"chi_{i + 2}.npz"))
        flush()

        stage = "reduce"
        reduced = birkhoff.reduce_to_minimal(nf, catalog)
        save_expansion(reduced.z0, os.path.join(outdir, "z0.json"),
                       os.path.join(outdir, "z0.npz"))
        manifest["stages"]["reduce"] = {
            "z0_terms": len(reduced.z0),
            "z1_M": len(reduced.z1_m), "z1_Mprime": len(reduced.z1_mprime),
            "remainder_terms": len(reduced.remainder),
        }
        flush()

        stage = "fgr"
        estimator = cp.get("analysis", "estimator")
        packets = fgr.build_packets(model, reduced, estimator=estimator)
        ray = fgr.rayleigh_report(packets, catalog.minimal, n_modes=len(model.lam),
                                  seed=cp.getint("simulation", "seed"))
        manifest["stages"]["fgr"] = {
            "packets": [{"w": p.w, "members": len(p.members)} for p in packets],
            "min_quotient": ray.min_quotient, "max_quotient": ray.max_quotient,
            "h9prime_verdict": ray.verdict,
        }
        np.savetxt(os.path.join(outdir, "rayleigh_quotients.csv"),
                   ray.quotients, delimiter=",", header="quotient", comments="")
        flush()

        stage = "simulate"
        aux = dynamics.ReducedAux(
            catalog=catalog, reduced=reduced, packets=packets,
            zeta_couplings=dynamics.build_zeta_couplings(model, reduced),
            g_couplings=dynamics.build_g_couplings(model, reduced),
        )
        record = dynamics.simulate(model, sim_config_from(cp), aux=aux)
        _record_sim(manifest, record)
        write_trajectory_csv(record, os.path.join(outdir, "trajectory.csv"))
        manifest["incomplete"] = False
        flush()
        return manifest
    except Exception as exc:
        manifest["failed_stage"] = stage
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        flush()
        raise


def _record_sim(manifest, record: dynamics.TrajectoryRecord):
    z2 = np.sum(np.abs(record.z) ** 2, axis=1)
    manifest["stages"]["simulate"] = {
        "eps_h1": record.eps_h1,
        "t_wrap": record.t_wrap,
        "sponge": record.sponge_used,
        "mass_drift": float(np.max(np.abs(record.mass - record.mass[0]))
                            / max(record.mass[0], 1e-300)),
        "mode_energy_initial": float(z2[0]),
        "mode_energy_final": float(z2[-1]),
        "strichartz": record.strichartz,
        "zsq_integrals": {str(k): v for k, v in record.zsq_integrals.items()},
    }


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serializable: {type(obj)}")


# ---------------------------------------------------------------------------
# subcommands


def cmd_spectrum(args) -> int:
    cp = load_config(args.config)
    if args.preset:
        cp.set("model", "preset", args.preset)
    for name in ("a", "kappa2", "depth", "width"):
        val = getattr(args, name, None)
        if val is not None:
            cp.set("model", name, str(val))
    outdir = _output_dir(cp)
    model = build_model_from_config(cp)
    path = os.path.join(outdir, "eigenpairs.csv")
    spectral.export_eigenpairs_csv(model, path)
    print(f"c = {model.c:.10g}")
    print("eigenvalues:", ", ".join(f"{l:.10g}" for l in model.lam))
    print(f"wrote {path}")
    return EXIT_OK


def cmd_resonance_check(args) -> int:
    lam = np.array([float(s) for s in args.lam.split(",")])
    budget = resonance.resonance_budget(lam, args.c, args.tol)
    report = resonance.check_hypotheses(lam, args.c, budget, args.tol)
    catalog = None
    if report.all_ok:
        catalog = resonance.build_index_sets(lam, args.c, budget, report, args.tol)
        print(resonance.catalog_report(catalog, budget, report))
        return EXIT_OK
    print(f"N = {budget.big_n}; (H5) {report.h5_ok}, (H7) {report.h7_ok}, "
          f"(H8) {report.h8_ok}")
    for key, items in report.witnesses.items():
        print(f"  {key} witnesses: {items[:10]}")
    return EXIT_HYPOTHESIS


def cmd_pipeline(args) -> int:
    cp = load_config(args.config)
    outdir = _output_dir(cp)
    np.random.seed(cp.getint("simulation", "seed"))
    manifest = run_pipeline(cp, outdir)
    print(f"pipeline complete; manifest at {os.path.join(outdir, 'manifest.json')}")
    verdict = manifest["stages"].get("fgr", {}).get("h9prime_verdict")
    if verdict is not None:
        print(f"(H9') verdict: {'positive' if verdict else 'negative'}")
    return EXIT_OK


def cmd_normalform(args) -> int:
    cp = load_config(args.config)
    outdir = _output_dir(cp)
    model = build_model_from_config(cp)
    tol = cp.getfloat("analysis", "tol_res")
    budget = resonance.resonance_budget(model.lam, model.c, tol)
    report = resonance.check_hypotheses(model.lam, model.c, budget, tol)
    if not report.all_ok:
        print("hypotheses dirty; refusing", file=sys.stderr)
        return EXIT_HYPOTHESIS
    e_p = hamalg.expand_potential_energy(
        model, cp.getfloat("forcing", "gamma0"), cp.getfloat("forcing", "gamma1"))
    nf = birkhoff.normal_form(model, e_p, r_max=budget.big_n + 1, big_n=budget.big_n)
    for led in nf.ledgers:
        print(f"round r={led.r}: extracted {led.extracted}, resonant {led.resonant}, "
              f"solved {led.solved}, chi terms {led.chi_terms}, "
              f"dropped {led.dropped.count}, reality {'ok' if led.reality_ok else 'BROKEN'}")
    save_expansion(nf.z_part, os.path.join(outdir, "z_part.json"),
                   os.path.join(outdir, "z_part.npz"))
    print(f"Z terms: {len(nf.z_part)}, remainder terms: {len(nf.remainder)}")
    return EXIT_OK


def cmd_fgr(args) -> int:
    cp = load_config(args.config)
    outdir = _output_dir(cp)
    manifest = run_pipeline(cp, outdir)
    stage = manifest["stages"].get("fgr", {})
    print(json.dumps(stage, indent=1, default=_json_default))
    return EXIT_OK


def cmd_simulate(args) -> int:
    cp = load_config(args.config)
    outdir = _output_dir(cp)
    model = build_model_from_config(cp)
    record = dynamics.simulate(model, sim_config_from(cp), aux=None)
    path = os.path.join(outdir, "trajectory.csv")
    write_trajectory_csv(record, path)
    drift = float(np.max(np.abs(record.mass - record.mass[0])) / record.mass[0])
    print(f"mass drift {drift:.3e}; wrote {path}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="nlsnf",
        description="normal forms, resonance catalogs and FGR diagnostics "
                    "for the forced NLS on a periodic box")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("spectrum", help="eigenpairs of a potential preset")
    p.add_argument("--config", default=None)
    p.add_argument("--preset", default=None)
    p.add_argument("--a", type=float, default=None)
    p.add_argument("--kappa2", type=float, default=None)
    p.add_argument("--depth", type=float, default=None)
    p.add_argument("--width", type=float, default=None)
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("resonance-check", help="hypothesis checks for a given spectrum")
    p.add_argument("--lambda", dest="lam", required=True,
                   help="comma-separated eigenvalues, lambda_0 = 0 first")
    p.add_argument("--c", type=float, required=True)
    p.add_argument("--tol", type=float, default=resonance.TOL_RES)
    p.set_defaults(func=cmd_resonance_check)

    for name, fn in (("normalform", cmd_normalform), ("fgr", cmd_fgr),
                     ("simulate", cmd_simulate), ("pipeline", cmd_pipeline)):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None)
        p.set_defaults(func=fn)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except HypothesisViolation as exc:
        print(f"hypothesis violation: {exc}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    except (ConfigError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, NlsnfError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
