"""Command line front end.

    ringfloquet SUBCOMMAND [--config PATH] [--out DIR] [--threads N] [--seed N]
                           [--override section.key=value ...]
    ringfloquet rerun MANIFEST [--out DIR]

Exit codes: 0 success, 2 negative analysis outcome (resonance, no convergence,
failed check), 1 any other error. Every run writes ``manifest.json`` next to
its products; failures write ``error.json`` instead of partial products.
"""

from __future__ import annotations

import argparse
import os
import sys
import traceback
from pathlib import Path

OUT_ENV = "RINGFLOQUET_OUT"
SUBCOMMANDS = ("spectrum", "floquet", "kam", "sieve", "evolve", "resonant", "sweep")
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


class CheckFailed(Exception):
    """Products were written but the run's own pass criterion failed (exit 2)."""


class ReproducibilityError(Exception):
    pass


def _limit_threads(n):
    for var in _THREAD_VARS:
        os.environ[var] = str(n)


# ---------------------------------------------------------------- runners
# each runner returns (files: {name: text}, result: dict, passed: bool)


def _model_pipeline(cfg, need_basis=True):
    from .cell import coupling_matrix, phase_fixed_eigenbasis, solve_band_spectrum

    mc = cfg.model.build()
    sp = solve_band_spectrum(mc)
    if not need_basis:
        return mc, sp, None, None
    basis = phase_fixed_eigenbasis(mc, sp)
    A = coupling_matrix(mc, basis)
    return mc, sp, basis, A


def run_spectrum(cfg):
    from .cell import verify_gap_growth
    from .io import csv_text, to_json

    mc, _, basis, A = _model_pipeline(cfg)
    sp = basis.spectrum  # carries the boundary traces
    t = mc.t_grid
    nb, nt = sp.energies.shape
    rows = [(n, k, t[k], sp.energies[n, k]) for n in range(nb) for k in range(nt)]
    trace_rows = [
        (n, k, sp.traces0[n, k].real, sp.traces0[n, k].imag, sp.tracesL[n, k].real, sp.tracesL[n, k].imag)
        for n in range(nb) for k in range(nt)
    ]
    gap = verify_gap_growth(sp)
    gap_d = {"min_ratio": gap.min_ratio, "argmin": [int(i) for i in gap.argmin], "passed": bool(gap.passed),
             "margin": gap.margin}
    result = {
        "schema_version": 1,
        "n_bands": nb,
        "n_time": nt,
        "root_residual": sp.root_residual,
        "gap_report": gap_d,
        "means": [float(x) for x in sp.means()],
        "coupling_hermiticity_defect": A.hermiticity_defect,
    }
    files = {
        "spectrum.csv": csv_text(["n", "k", "t", "E"], rows),
        "traces.csv": csv_text(["n", "k", "re_psi0", "im_psi0", "re_psiL", "im_psiL"], trace_rows),
        "gap_report.json": to_json(gap_d) + "\n",
    }
    return files, result, gap.passed


def run_floquet(cfg):
    from .floquet import assemble, decay_profile, finite_norm, matrix_rows, offdiag
    from .io import csv_text

    mc, sp, basis, A = _model_pipeline(cfg)
    M = assemble(mc, sp, A)
    prof, expo = decay_profile(M)
    rows = matrix_rows(M)
    result = {
        "schema_version": 1,
        "dim": M.dim,
        "N_f": M.index.n_f,
        "N_bands": M.index.n_bands,
        "hermiticity_defect": M.symmetrization_correction,
        "decay_exponent": expo,
        "decay_profile": [[d, s] for d, s in prof],
        "finite_norm_off_0_2": finite_norm(offdiag(M), 0.0, 2.0, index=M.index),
        "flattening": "(j1 + N_f) * N_bands + j2",
    }
    files = {
        "floquet_matrix.csv": csv_text(["i", "j", "re", "im"], rows),
        "decay_profile.csv": csv_text(["d", "sup"], prof),
    }
    return files, result, True


def run_kam(cfg):
    from .floquet import assemble
    from .io import csv_text
    from .kam import run

    mc, sp, basis, A = _model_pipeline(cfg)
    M = assemble(mc, sp, A)
    report = run(M, cfg.kam.build(), raise_on_failure=True)
    result = {"schema_version": 1, **report.to_dict()}
    files = {"norm_history.csv": csv_text(["step", "offdiag_max", "w_max"],
                                          [(i + 1, a, b) for i, (a, b) in enumerate(report.norm_history)])}
    return files, result, True


def run_sieve(cfg):
    from .errors import Resonant, ValidationError
    from .io import csv_text
    from .sieve import SieveConfig, constant_levels, is_nonresonant, resonance_intervals

    s = cfg.sieve
    if s.levels == "means":
        if s.n_max >= cfg.model.N_bands:
            raise ValidationError("sieve.n_max must be below model.N_bands when levels = means")
        _, sp, _, _ = _model_pipeline(cfg, need_basis=False)
        levels = constant_levels(sp.means())
    else:
        from .sieve import surrogate_levels

        m = cfg.model
        levels = surrogate_levels(m.L, m.g, m.w_cos[0] if m.w_cos else 0.0)
    sc = SieveConfig((s.omega_lo, s.omega_hi), s.gamma, s.sigma, s.mu, s.n_level, levels, s.n_max, s.k_max)
    rep = resonance_intervals(sc)
    result = {"schema_version": 1, "total_measure": rep.total_measure, "n_intervals": len(rep.excluded_intervals),
              "level_measures": rep.level_measures, "truncation_share": rep.truncation_share,
              "k_max": sc.resolved_k_max(), "test_omega": s.test_omega, "test_passed": None, "witness": None}
    passed = True
    if s.test_omega is not None:
        verdict = is_nonresonant(s.test_omega, sc, rep)
        passed = verdict.passed
        result["test_passed"] = bool(passed)
        if verdict.witness is not None:
            w = verdict.witness
            result["witness"] = {"k": w.k, "m": w.m, "n": w.n, "level": w.level, "lo": w.lo, "hi": w.hi}
    files = {"intervals.csv": csv_text(["lo", "hi", "k", "m", "n", "level"],
                                       [(iv.lo, iv.hi, iv.k, iv.m, iv.n, iv.level) for iv in rep.excluded_intervals])}
    if not passed:
        exc = Resonant(f"omega = {s.test_omega} lies in an excluded interval", report=result,
                       witnesses=[result["witness"]])
        exc.files = files
        raise exc
    return files, result, True


def run_evolve(cfg):
    import numpy as np

    from .dynamics import EvolutionConfig, PeriodicGenerator, propagate
    from .io import csv_text

    mc, sp, basis, A = _model_pipeline(cfg)
    gen = PeriodicGenerator.from_model(sp, A, mc.omega)
    e = cfg.evolution
    nb = sp.n_bands
    c0 = np.zeros(nb, complex)
    c0[e.initial_band] = 1.0
    tail_band = nb - 5 if e.tail_band is None else e.tail_band
    r = float(sp.means()[max(0, min(tail_band, nb - 1))])
    ecfg = EvolutionConfig(e.n_periods, e.steps_per_period, c0, (r,), e.record_every, mc.tol_unitary)
    tr = propagate(ecfg, gen)
    early = tr.energy[tr.times <= min(10, max(e.n_periods, 1)) * mc.T * (1 + 1e-12)]
    result = {
        "schema_version": 1,
        "sup_energy": float(tr.energy.max()),
        "early_max": float(early.max()),
        "ratio": float(tr.energy.max() / early.max()),
        "tail_threshold": r,
        "tail_max": float(tr.tails[r].max()),
        "max_unitarity_defect": float(tr.unitarity_defect.max()),
        "final_populations": [float(p) for p in tr.populations[-1]],
    }
    files = {"energy.csv": csv_text(["t", "energy", f"tail_{tail_band}", "defect"], tr.to_rows())}
    return files, result, True


def run_resonant(cfg):
    import numpy as np

    from .dynamics import PeriodicGenerator, floquet_eigenphases
    from .io import csv_text
    from .resonant import essential_spectrum_check
    from .sieve import classify_rational

    cls = classify_rational(cfg.model.omega, cfg.model.L)
    if not cls.resonant:
        from .errors import NotResonant

        raise NotResonant(f"omega (L/pi)^2 = {cls.ratio!r} is not detectably rational")
    mc, sp, basis, A = _model_pipeline(cfg)
    gen = PeriodicGenerator.from_model(sp, A, mc.omega)
    steps = cfg.evolution.steps_per_period or max(8 * sp.n_bands, 256)
    lam, U = floquet_eigenphases(gen, steps, mc.tol_unitary)
    w, V = np.linalg.eig(U)
    rep = essential_spectrum_check(mc, sp, A, w, V)
    result = {"schema_version": 1, **rep.to_dict()}
    rows = [(n, rep.predicted[n].real, rep.predicted[n].imag, rep.computed[n].real, rep.computed[n].imag,
             rep.distances[n]) for n in range(sp.n_bands)]
    files = {"clustering.csv": csv_text(["n", "re_pred", "im_pred", "re_comp", "im_comp", "distance"], rows)}
    return files, result, rep.passed


def run_sweep(cfg):
    from .io import csv_text
    from .zoo import alpha_sweep, good_frequency, synthesize

    z = cfg.zoo
    rows = []
    for alpha in z.alphas:
        omegas = z.omegas
        if not omegas:
            model = synthesize(alpha, z.c, z.g, z.tau_syn, z.seed, z.n_levels)
            omegas = (good_frequency(model, (z.window_lo, z.window_hi))[0],)
        rows += alpha_sweep([alpha], z.g, omegas, z.c, z.tau_syn, z.seed, z.n_levels, z.n_periods)
    result = {"schema_version": 1, "rows": rows}
    files = {"sweep.csv": csv_text(["alpha", "omega", "bounded", "ratio", "tail", "in_theory"],
                                   [(r["alpha"], r["omega"], str(r["bounded"]).lower(), r["ratio"], r["tail"],
                                     str(r["in_theory"]).lower()) for r in rows])}
    passed = all(r["bounded"] for r in rows if r["in_theory"])
    return files, result, passed


RUNNERS = {
    "spectrum": run_spectrum,
    "floquet": run_floquet,
    "kam": run_kam,
    "sieve": run_sieve,
    "evolve": run_evolve,
    "resonant": run_resonant,
    "sweep": run_sweep,
}


# ---------------------------------------------------------------- plumbing


def _error_payload(exc, code):
    from .errors import AnalysisFailure, ParseError

    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    if isinstance(exc, ParseError) and exc.line is not None:
        payload["line"] = exc.line
    witnesses = getattr(exc, "witnesses", None)
    if witnesses:
        payload["witnesses"] = [w.to_dict() if hasattr(w, "to_dict") else w for w in witnesses]
    if isinstance(exc, AnalysisFailure) and exc.report is not None:
        rep = exc.report
        payload["report"] = rep.to_dict() if hasattr(rep, "to_dict") else rep
    return payload


def execute(subcommand, config_text, out_dir, seed=None, threads=1, inputs=None, overrides=()):
    """Run one subcommand and write its products; returns the exit code."""
    from .config import config_to_dict, parse_config, serialize_config
    from .errors import AnalysisFailure
    from .io import atomic_write, make_manifest, sha256_text, to_json

    out = Path(out_dir)
    code = 0
    files = {}
    resolved = None
    try:
        cfg = parse_config(config_text, overrides)
        if seed is not None:
            cfg = cfg.with_overrides([f"zoo.seed={int(seed)}"])
        resolved = serialize_config(cfg)
        files, result, passed = RUNNERS[subcommand](cfg)
        files["result.json"] = to_json(result) + "\n"
        code = 0 if passed else 2
    except AnalysisFailure as exc:
        code = 2
        files = dict(getattr(exc, "files", {}))
        files["error.json"] = to_json(_error_payload(exc, code)) + "\n"
    except Exception as exc:  # noqa: BLE001 - every other failure maps to exit 1
        code = 1
        files = {"error.json": to_json(_error_payload(exc, code)) + "\n"}
        if os.environ.get("RINGFLOQUET_DEBUG"):
            traceback.print_exc()
    for name, text in files.items():
        atomic_write(out / name, text)
    if resolved is not None:
        manifest = make_manifest(subcommand, resolved, config_to_dict(parse_config(resolved)), inputs or {},
                                 seed, threads, {name: sha256_text(text) for name, text in files.items()})
        atomic_write(out / "manifest.json", to_json(manifest) + "\n")
    if "error.json" in files:
        sys.stderr.write(files["error.json"])
    return code


def rerun(manifest_path, out_dir):
    import json

    from .io import atomic_write, sha256_file, to_json

    manifest = json.loads(Path(manifest_path).read_text(encoding="utf-8"))
    code = execute(manifest["subcommand"], manifest["config_text"], out_dir, manifest.get("seed"),
                   manifest.get("threads", 1), manifest.get("input_digests", {}))
    out = Path(out_dir)
    mismatched = sorted(name for name, digest in manifest["outputs"].items()
                        if not (out / name).exists() or sha256_file(out / name) != digest)
    report = {"identical": not mismatched, "mismatched": mismatched, "exit_code": code}
    atomic_write(out / "rerun.json", to_json(report) + "\n")
    if mismatched:
        sys.stderr.write(f"rerun outputs differ from the manifest: {', '.join(mismatched)}\n")
        return 1
    return code


def build_parser():
    p = argparse.ArgumentParser(prog="ringfloquet", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name, help=f"run the {name} analysis")
        sp.add_argument("--config", type=Path, help="configuration file (default: all defaults)")
        sp.add_argument("--out", type=Path, default=None, help=f"output directory (default: ${OUT_ENV} or ./out)")
        sp.add_argument("--threads", type=int, default=1, help="numerical library threads (default 1)")
        sp.add_argument("--seed", type=int, default=None, help="seed for synthetic models (zoo.seed)")
        sp.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="override a configuration entry, e.g. model.g=0.02 (repeatable)")
    rp = sub.add_parser("rerun", help="re-execute a run from its manifest and compare outputs")
    rp.add_argument("manifest", type=Path)
    rp.add_argument("--out", type=Path, default=None)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    out = args.out or Path(os.environ.get(OUT_ENV, "out"))
    if args.command == "rerun":
        _limit_threads(1)
        return rerun(args.manifest, out)
    if args.threads < 1:
        sys.stderr.write("--threads must be >= 1\n")
        return 1
    _limit_threads(args.threads)
    text, inputs = "", {}
    if args.config is not None:
        try:
            text = args.config.read_text(encoding="utf-8")
        except OSError as exc:
            sys.stderr.write(f"cannot read {args.config}: {exc}\n")
            return 1
        from .io import sha256_text

        inputs = {str(args.config): sha256_text(text)}
    return execute(args.command, text, out, args.seed, args.threads, inputs, tuple(args.override))


if __name__ == "__main__":
    sys.exit(main())
