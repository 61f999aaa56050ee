"""Command line interface.

Subcommands::

    eemmix variation --manifest M --out DIR
    eemmix mixtest   --manifest M --out DIR [--alpha 0.05]
    eemmix unmix     --manifest M --out DIR [--max-combos K]
    eemmix simulate  --out DIR [--seed S --sigma-a A --sigma-e E --n N]
    eemmix report    --manifest M --out DIR

Exit status is 0 on success, 2 on invalid input, 1 on any other failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .core import STUDY_DESIGN, MixtureDesign, ValidationError
from .io import (
    Dataset,
    header_line,
    load_dataset,
    load_manifest,
    write_eem_csv,
    write_scene,
    write_table,
)
from .mixtest import TestInputs, run_mixtest, sigma_j_hat
from .synth import STUDY_SIGMA_E2, study_like_scene
from .unmix import summarize_run, unmix_all_combos
from .variation import analyze_samples, mean_sd_curve

log = logging.getLogger("eemmix")


def _load(args) -> tuple[Dataset, dict]:
    manifest = load_manifest(args.manifest)
    opts = manifest.resolved_options({
        "mask_rule": getattr(args, "mask_rule", None),
        "floor": getattr(args, "floor", None),
        "alpha": getattr(args, "alpha", None),
        "bins": getattr(args, "bins", None),
        "dof": getattr(args, "dof", None),
        "seed": getattr(args, "seed", None),
    })
    return load_dataset(manifest, opts["mask_rule"]), opts


def do_variation(data: Dataset, opts: dict, out: Path) -> dict:
    reports, pooled = analyze_samples(data.samples, opts["floor"], opts["dof"])
    n_max = max(r.scale.a_hat.size for r in reports)
    cols = (["sample"] + [f"rho_{i}" for i in range(1, n_max + 1)]
            + [f"a_{i}" for i in range(1, n_max + 1)] + ["sigma_a"])
    rows = []
    for r in reports:
        pad = [None] * (n_max - r.scale.a_hat.size)
        rows.append([r.sample_id, *r.correlations, *pad, *r.scale.a_hat, *pad, r.scale.sigma_a_hat])
    rows.append(["pooled", *([None] * (2 * n_max)), pooled])
    write_table(out / "scale_factors.tsv", cols, rows, opts)
    write_table(out / "noise_levels.tsv",
                ["sample", "sigma_e", "sigma_e2", "snr", "excluded_pixels"],
                [[r.sample_id, r.noise.sigma_e_hat, r.noise.sigma_e2_hat, r.snr,
                  r.noise.excluded_pixels] for r in reports], opts)
    bins = opts["bins"]
    for rset in data.samples:
        curve = mean_sd_curve(rset, min(bins, rset.matrix.shape[1]))
        write_table(out / f"mean_sd_{rset.sample_id}.tsv", ["mean", "sd"], curve.tolist(), opts)
    return {"pooled_sigma_a": pooled,
            "sigma_e2": {r.sample_id: r.noise.sigma_e2_hat for r in reports}}


def do_mixtest(data: Dataset, opts: dict, out: Path, variation: dict | None = None) -> dict:
    if variation is None:
        reports, pooled = analyze_samples(data.samples, opts["floor"], opts["dof"])
        variation = {"pooled_sigma_a": pooled,
                     "sigma_e2": {r.sample_id: r.noise.sigma_e2_hat for r in reports}}
    se2 = variation["sigma_e2"]
    sa2 = variation["pooled_sigma_a"] ** 2
    summary = []
    for mix in data.mixtures:
        inputs = TestInputs(mix, data.endmembers, sa2, se2[mix.sample_id],
                            [se2[e.sample_id] for e in data.endmembers])
        res = run_mixtest(inputs, opts["alpha"], opts["floor"])
        mid = mix.sample_id
        names = {-1: "lower", 0: "none", 1: "higher"}
        sign = res.sign
        rows = [[res.pixel_index[k, 0], res.pixel_index[k, 1], res.mu_hat[k], res.theta_dot_b[k],
                 res.sigma_j[k], res.z[k], res.p_value[k], bool(res.testable[k]),
                 bool(res.rejected[k]), names[int(sign[k])]]
                for k in range(res.z.size)]
        write_table(out / f"mixtest_{mid}_pixels.csv",
                    ["excitation", "emission", "mu_hat", "theta_dot_b", "sigma_j", "z",
                     "p_value", "testable", "rejected", "deviation_sign"], rows, opts, ",")
        write_eem_csv(mix.layout, out / f"mixtest_{mid}_signs.csv",
                      comment=header_line(opts), values=res.sign_grid())
        write_table(out / f"mixtest_{mid}_logp.tsv", ["mean_fluorescence", "log10_p"],
                    res.logp_table().tolist(), opts)
        summary.append([mid, res.n_testable, res.z.size - res.n_testable, res.n_rejected,
                        res.rejection_fraction, int((sign < 0).sum()), int((sign > 0).sum()),
                        res.threshold])
    write_table(out / "mixtest_summary.tsv",
                ["mixture", "testable", "untestable", "rejected", "fraction", "lower",
                 "higher", "bh_threshold"], summary, opts)
    return {row[0]: row[4] for row in summary}


def do_unmix(data: Dataset, opts: dict, out: Path, max_combos=None) -> dict:
    ids = [e.sample_id for e in data.endmembers]
    cols = ["mixture"]
    for e in ids:
        cols += [f"{e}_b", f"{e}_mean", f"{e}_sd"]
    cols += ["combos", "failed"]
    table, combos = [], []
    result = {}
    for mix in data.mixtures:
        run = unmix_all_combos(mix, data.endmembers, max_combos=max_combos, seed=opts["seed"])
        rows = summarize_run(run)
        line = [mix.sample_id]
        for r in rows:
            line += [r.truth, r.mean, r.sd]
        table.append(line + [int(run.ok.sum()), run.n_failed])
        result[mix.sample_id] = [(r.mean, r.sd) for r in rows]
        for c in range(len(run.indices)):
            combos.append([mix.sample_id, *(run.indices[c] + 1), *run.b_hat[c],
                           "ok" if run.ok[c] else run.errors.get(c, "failed")])
    write_table(out / "abundance_summary.tsv", cols, table, opts)
    write_table(out / "unmix_combos.tsv",
                ["mixture", "mixture_replicate", *[f"{e}_replicate" for e in ids],
                 *[f"{e}_b_hat" for e in ids], "status"], combos, opts)
    return result


def cmd_variation(args):
    data, opts = _load(args)
    do_variation(data, opts, _outdir(args))


def cmd_mixtest(args):
    data, opts = _load(args)
    do_mixtest(data, opts, _outdir(args))


def cmd_unmix(args):
    data, opts = _load(args)
    do_unmix(data, opts, _outdir(args), args.max_combos)


def cmd_report(args):
    data, opts = _load(args)
    out = _outdir(args)
    var = do_variation(data, opts, out)
    fractions = do_mixtest(data, opts, out, var)
    abundances = do_unmix(data, opts, out, args.max_combos)
    files = sorted(p.name for p in out.iterdir() if p.name != "summary.json")
    summary = {
        "tool": "eemmix",
        "version": __version__,
        "versions": {"python": platform.python_version(), "numpy": np.__version__},
        "dataset": data.manifest.dataset,
        "options": opts,
        "seed": opts["seed"],
        "pixels": int(data.samples[0].matrix.shape[1]),
        "dropped_pixels": data.dropped_pixels,
        "pooled_sigma_a": var["pooled_sigma_a"],
        "rejection_fraction": fractions,
        "abundance_mean_sd": abundances,
        "files": {name: hashlib.sha256((out / name).read_bytes()).hexdigest() for name in files},
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                      encoding="utf-8")


def cmd_simulate(args):
    out = _outdir(args)
    overrides = dict(STUDY_SIGMA_E2) if args.study_noise else None
    opts = {"mask_rule": "strictly_longer", "seed": args.seed, "sigma_a": args.sigma_a,
            "sigma_e": "study" if args.study_noise else args.sigma_e, "n": args.n,
            "law": args.law, "perturb_fraction": args.perturb_fraction}
    design = STUDY_DESIGN
    perturb = None
    if args.perturb_fraction > 0:
        perturb = _plant(design, args, overrides)
    scene = study_like_scene(n=args.n, sigma_a=args.sigma_a, sigma_e=args.sigma_e,
                             seed=args.seed, law=args.law, design=design,
                             sigma_e_overrides={k: v ** 0.5 for k, v in overrides.items()}
                             if overrides else None,
                             perturbations=perturb)
    write_scene(scene, out, opts, dataset=f"synthetic-{args.seed}")


def _plant(design: MixtureDesign, args, overrides):
    """+10 sd shifts on a seeded random subset of pixels of every mixture."""
    clean = study_like_scene(n=args.n, sigma_a=0.0, sigma_e=0.0, design=design)
    theta = np.column_stack([clean.mu[e].values for e in design.endmember_ids])
    rng = np.random.default_rng(args.seed)

    def se2(sid):
        return overrides[sid] if overrides else args.sigma_e ** 2

    out = {}
    for mid, b in design.mixtures.items():
        mu = clean.mu[mid].values
        sig = sigma_j_hat(mu, theta, b, args.n, args.sigma_a ** 2, se2(mid),
                          [se2(e) for e in design.endmember_ids])
        delta = np.zeros(mu.size)
        pick = rng.choice(mu.size, int(round(args.perturb_fraction * mu.size)), replace=False)
        delta[pick] = 10.0 * sig[pick]
        out[mid] = delta
    return out


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eemmix", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"eemmix {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def data_command(name, func, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--manifest", required=True, help="dataset manifest (JSON)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--mask-rule", help="strictly_longer | offset_band:<nm> | all")
        p.add_argument("--floor", type=float, help="low-signal floor in QSU")
        p.add_argument("--dof", choices=["model", "naive"],
                       help="residual degrees of freedom for sigma_e")
        p.set_defaults(func=func)
        return p

    p = data_command("variation", cmd_variation, "scale factors, sigma_a, sigma_e, SNR")
    p.add_argument("--bins", type=int, help="bins for the mean-sd curve")
    p = data_command("mixtest", cmd_mixtest, "pixelwise linear mixing tests")
    p.add_argument("--alpha", type=float, help="BH false discovery rate (default 0.05)")
    p = data_command("unmix", cmd_unmix, "NNLS abundances over replicate combos")
    p.add_argument("--max-combos", type=int, help="seeded subsample cap on combos")
    p.add_argument("--seed", type=int, help="seed for combo subsampling")
    p = data_command("report", cmd_report, "all analyses plus summary.json")
    p.add_argument("--alpha", type=float)
    p.add_argument("--bins", type=int)
    p.add_argument("--max-combos", type=int)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("simulate", help="write a synthetic scene and its manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma-a", type=float, default=0.04)
    p.add_argument("--sigma-e", type=float, default=0.01)
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--law", choices=["lognormal", "truncated-normal"], default="lognormal")
    p.add_argument("--study-noise", action="store_true",
                   help="per-sample sigma_e at the study's levels instead of --sigma-e")
    p.add_argument("--perturb-fraction", type=float, default=0.0,
                   help="fraction of mixture pixels shifted by +10 sd")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ValidationError as exc:
        print(f"eemmix: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"eemmix: runtime error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
