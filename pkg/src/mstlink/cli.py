"""Command-line surface.

Subcommands cover the whole workflow: construct, diagnose, clones,
pull/push, break/merge/combine, subset, quickest, threshold, simulate and
benchmark.  Exit codes: 0 ok, 1 usage error, 2 data error, 3 internal
error.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from . import diagnostics, gmath, model, ordering, simulate
from .model import DataError, PopulationType


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _pop(text: str) -> PopulationType:
    return PopulationType.parse(text)


def _default_workers() -> int:
    try:
        return max(1, int(os.environ.get("MSTLINK_WORKERS", "1")))
    except ValueError:
        return 1


def _add_map_params(p: argparse.ArgumentParser):
    p.add_argument("--dist-fun", default=gmath.KOSAMBI, choices=gmath.MAP_FUNCTIONS)
    p.add_argument("--objective-fun", default=gmath.COUNT, choices=gmath.OBJECTIVES)
    p.add_argument("--p-value", type=float, default=1e-6)
    p.add_argument("--no-map-dist", type=float, default=15.0)
    p.add_argument("--no-map-size", type=int, default=0)
    p.add_argument("--miss-thresh", type=float, default=1.0)
    p.add_argument("--mvest-bc", action="store_true")
    p.add_argument("--detect-bad-data", action="store_true")
    p.add_argument("--anchor", action="store_true")
    p.add_argument("--bychr", action="store_true")
    p.add_argument("--suffix", default="numeric", choices=("numeric", "alpha"))
    p.add_argument("--workers", type=int, default=_default_workers())


def _map_params(args) -> ordering.MapParams:
    return ordering.MapParams(
        map_fn=args.dist_fun, objective=args.objective_fun, p_value=args.p_value,
        no_map_dist=args.no_map_dist, no_map_size=args.no_map_size,
        miss_thresh=args.miss_thresh, mvest_bc=args.mvest_bc,
        detect_bad_data=args.detect_bad_data, anchor=args.anchor,
        bychr=args.bychr, suffix=args.suffix, workers=args.workers,
    )


def _push_params(args) -> diagnostics.PushParams:
    seg = args.seg_thresh
    if seg not in (None, "bonf"):
        seg = float(seg)
    return diagnostics.PushParams(
        seg_thresh=seg if seg is not None else 0.05,
        seg_ratio=args.seg_ratio,
        miss_thresh=args.miss_thresh,
        max_rf=args.max_rf,
        min_lod=args.min_lod,
    )


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _parse_pairs(text):
    """ '200x150,400x120' -> ((200, 150.0), (400, 120.0)) """
    out = []
    for cell in text.split(","):
        t, length = cell.lower().split("x")
        out.append((int(t), float(length)))
    return tuple(out)


# ---------------------------------------------------------------------------
# subcommands

def _cmd_construct(args) -> int:
    pop = _pop(args.pop)
    if args.detect_bad_data and not pop.supports_em:
        raise DataError("error detection is not available for finite-r RIL populations")
    cross = model.load_cross(args.input, pop)
    result = ordering.construct_map(cross, _map_params(args))
    model.write_cross(result.cross, args.output)
    if args.imputed_out:
        _emit_imputed(result, args.imputed_out)
    if result.flagged:
        print(f"flagged {len(result.flagged)} suspicious calls (now missing)")
    lengths = result.cross.group_lengths()
    for name, length in lengths.items():
        print(f"{name}\t{length:.3f} cM\t{len(result.cross.group(name).markers)} markers")
    return 0


def _emit_imputed(result, path):
    cross = result.cross
    header = ["genotype"]
    cols = []
    for gname, (rep_names, a) in result.imputed.items():
        for k, mk in enumerate(rep_names):
            header.append(mk)
            cols.append(a[:, k])
    rows = []
    for i, geno in enumerate(cross.matrix.genotype_names):
        rows.append([geno] + [f"{col[i]:.6f}" for col in cols])
    _write_csv(path, header, rows)


def _cmd_diagnose(args) -> int:
    pop = _pop(args.pop)
    cross = model.load_cross(args.input, pop)
    prefix = args.out_prefix
    gs = diagnostics.profile_genotypes(cross, args.xo_lambda)
    _write_csv(
        f"{prefix}.genotypes.csv",
        ["genotype", "xo", "dxo", "miss", "flagged"],
        [
            [g, int(x), int(d), int(m), int(f)]
            for g, x, d, m, f in zip(gs.genotype_names, gs.xo, gs.dxo, gs.miss, gs.flagged)
        ],
    )
    ms = diagnostics.profile_markers(cross, crit_val=args.crit_val, map_fn=args.dist_fun)
    prop_cols = sorted(ms.prop)
    _write_csv(
        f"{prefix}.markers.csv",
        ["marker", "group", "pos", "neglog10P", "miss", *[f"prop{c}" for c in prop_cols], "dxo", "flagged"],
        [
            [ms.marker_names[i], ms.marker_group[i], f"{ms.marker_pos[i]:.3f}",
             f"{ms.neglog10P[i]:.4f}", f"{ms.miss[i]:.4f}",
             *[f"{ms.prop[c][i]:.4f}" for c in prop_cols],
             int(ms.marker_dxo[i]), int(ms.marker_flagged[i])]
            for i in range(len(ms.marker_names))
        ],
    )
    _write_csv(
        f"{prefix}.intervals.csv",
        ["left", "right", "group", "erf", "lod", "dist", "mrf", "recomb", "n_obs", "weak"],
        [
            [ms.interval_left[i], ms.interval_right[i], ms.interval_group[i],
             f"{ms.erf[i]:.5f}", f"{ms.lod[i]:.3f}", f"{ms.dist[i]:.3f}",
             f"{ms.mrf[i]:.5f}", f"{ms.recomb[i]:.2f}", int(ms.n_obs[i]),
             int(ms.interval_weak[i])]
            for i in range(len(ms.interval_left))
        ],
    )
    heat = diagnostics.heatmap_matrices(cross, args.chr or None, lmax=args.lmax)
    _write_csv(f"{prefix}.heatmap_rf.csv", ["marker", *heat.marker_names],
               [[heat.marker_names[i]] + [f"{v:.4f}" for v in heat.rf[i]]
                for i in range(len(heat.marker_names))])
    _write_csv(f"{prefix}.heatmap_lod.csv", ["marker", *heat.marker_names],
               [[heat.marker_names[i]] + [f"{v:.3f}" for v in heat.lod[i]]
                for i in range(len(heat.marker_names))])
    if args.svg:
        _render_svg(prefix, gs, ms, heat)
    print(f"wrote {prefix}.genotypes.csv, .markers.csv, .intervals.csv, .heatmap_*.csv")
    return 0


def _render_svg(prefix, gs, ms, heat):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(3, 1, figsize=(10, 8), sharex=True)
    x = np.arange(len(gs.genotype_names))
    for ax, vals, label in zip(axes, (gs.xo, gs.dxo, gs.miss), ("xo", "dxo", "miss")):
        ax.plot(x, vals, ".", ms=3)
        ax.set_ylabel(label)
    axes[-1].set_xlabel("genotype")
    fig.savefig(f"{prefix}.genotypes.svg")
    plt.close(fig)

    fig, axes = plt.subplots(2, 1, figsize=(10, 6), sharex=True)
    x = np.arange(len(ms.marker_names))
    axes[0].plot(x, ms.neglog10P, ".", ms=3)
    axes[0].set_ylabel("-log10 P")
    axes[1].plot(x, ms.miss, ".", ms=3)
    axes[1].set_ylabel("miss")
    axes[1].set_xlabel("marker")
    fig.savefig(f"{prefix}.markers.svg")
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(7, 6))
    combined = np.tril(heat.lod) + np.triu(np.where(np.isfinite(heat.rf), heat.rf, 0.0), k=1)
    im = ax.imshow(combined, cmap="Spectral_r")
    fig.colorbar(im, ax=ax)
    fig.savefig(f"{prefix}.heatmap.svg")
    plt.close(fig)


def _cmd_clones(args) -> int:
    pop = _pop(args.pop)
    cross = model.load_cross(args.input, pop)
    report = diagnostics.gen_clones(cross, args.tol)
    if args.report_out:
        _write_csv(
            args.report_out,
            ["G1", "G2", "coef", "match", "diff", "na.both", "na.one", "group"],
            [[r.g1, r.g2, f"{r.coef:.4f}", r.match, r.diff, r.na_both, r.na_one, r.group]
             for r in report.rows],
        )
    for r in report.rows:
        print(f"{r.g1}\t{r.g2}\t{r.coef:.4f}\t{r.match}\t{r.diff}\t{r.na_both}\t{r.na_one}\t{r.group}")
    if args.fix:
        if not args.output:
            raise DataError("--fix requires --output")
        fixed = diagnostics.fix_clones(cross, report, consensus=not args.keep_best)
        model.write_cross(fixed, args.output)
        print(f"consensus genotypes written: {fixed.n} of {cross.n} genotypes remain")
    return 0


def _cmd_pull(args) -> int:
    pop = _pop(args.pop)
    cross = model.load_cross(args.input, pop)
    out = diagnostics.pull_markers(cross, args.type, _push_params(args))
    model.write_cross(out, args.output)
    print(f"pulled {cross.n_map_markers - out.n_map_markers} markers into {args.type!r}")
    return 0


def _cmd_push(args) -> int:
    pop = _pop(args.pop)
    cross = model.load_cross(args.input, pop)
    out = diagnostics.push_markers(cross, args.type, _push_params(args),
                                   unlinked_group=args.unlinked_chr)
    model.write_cross(out, args.output)
    print(f"pushed {out.n_map_markers - cross.n_map_markers} markers back from {args.type!r}")
    return 0


def _cmd_break(args) -> int:
    pop = _pop(args.pop)
    cross = model.load_cross(args.input, pop)
    split = {}
    for cell in args.split:
        gname, markers = cell.split(":")
        split[gname] = markers.split("+")
    out = model.break_groups(cross, split, suffix=args.suffix)
    model.write_cross(out, args.output)
    print(f"{len(out.groups)} groups after break")
    return 0


def _cmd_merge(args) -> int:
    pop = _pop(args.pop)
    cross = model.load_cross(args.input, pop)
    merge = {}
    for cell in args.merge:
        new, members = cell.split(":")
        merge[new] = members.split("+")
    out = model.merge_groups(cross, merge, gap=args.gap)
    model.write_cross(out, args.output)
    print(f"{len(out.groups)} groups after merge")
    return 0


def _cmd_combine(args) -> int:
    pop = _pop(args.pop)
    maps = [model.load_cross(p, pop) for p in args.inputs]
    out = model.combine_maps(maps, keep_all=not args.intersect)
    model.write_cross(out, args.output)
    print(f"combined map: {out.n} genotypes, {out.n_markers} markers")
    return 0


def _cmd_subset(args) -> int:
    pop = _pop(args.pop)
    cross = model.load_cross(args.input, pop)
    if args.keep_genotypes:
        keep = args.keep_genotypes.split(",")
    elif args.drop_genotypes:
        dropped = set(args.drop_genotypes.split(","))
        unknown = dropped - set(cross.matrix.genotype_names)
        if unknown:
            raise DataError(f"unknown genotype ids: {sorted(unknown)[:3]}")
        keep = [g for g in cross.matrix.genotype_names if g not in dropped]
    elif args.drop_xo_above is not None:
        gs = diagnostics.profile_genotypes(cross)
        keep = [g for g, x in zip(gs.genotype_names, gs.xo) if x <= args.drop_xo_above]
    else:
        raise DataError("subset needs --keep-genotypes, --drop-genotypes or --drop-xo-above")
    out = model.subset_cross(cross, keep)
    model.write_cross(out, args.output)
    print(f"kept {out.n} of {cross.n} genotypes")
    return 0


def _cmd_quickest(args) -> int:
    pop = _pop(args.pop)
    cross = model.load_cross(args.input, pop)
    out = diagnostics.quick_est(cross, error_prob=args.error_prob, map_fn=args.dist_fun)
    model.write_cross(out, args.output)
    for name, length in out.group_lengths().items():
        print(f"{name}\t{length:.3f} cM")
    return 0


def _cmd_threshold(args) -> int:
    cms = [float(x) for x in args.cm.split(",")]
    lo, hi = (int(x) for x in args.n.split(":"))
    rows = gmath.threshold_profile(range(lo, hi + 1, args.step), cms, args.dist_fun)
    _write_csv(args.output, ["n", "cm_target", "neg_log10_epsilon"],
               [[n, cm, f"{v:.4f}"] for n, cm, v in rows])
    print(f"wrote {len(rows)} rows to {args.output}")
    return 0


def _cmd_simulate(args) -> int:
    pop = _pop(args.pop)
    spec = simulate.SimSpec(
        pop, args.n, _parse_pairs(args.chrom), map_fn=args.dist_fun,
        missing_rate=args.missing, error_rate=args.error, seed=args.seed,
    )
    cross, truth = simulate.simulate_population(spec)
    if args.grouped:
        cross = simulate.true_cross(cross, truth)
    model.write_cross(cross, args.output)
    if args.truth_out:
        simulate.write_truth(truth, cross, args.truth_out)
    print(f"simulated {cross.n} genotypes x {cross.n_markers} markers (seed {args.seed})")
    return 0


def _cmd_benchmark(args) -> int:
    cells = [(int(t), int(n)) for t, n in
             (cell.lower().split("x") for cell in args.cells.split(","))]
    rows = simulate.benchmark(
        cells, pop=_pop(args.pop), error_rate=args.error, p_value=args.p_value,
        seed=args.seed,
    )
    _write_csv(args.output, ["pop", "n", "markers", "error_rate", "full_s", "order_only_s"],
               [[r.pop, r.n, r.markers, r.error_rate, f"{r.full_s:.3f}", f"{r.order_only_s:.3f}"]
                for r in rows])
    for r in rows:
        print(f"{r.pop}\tn={r.n}\tt={r.markers}\tfull={r.full_s:.3f}s\torder_only={r.order_only_s:.3f}s")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    top = _Parser(prog="mstlink", description=__doc__)
    sub = top.add_subparsers(dest="cmd", required=True)

    def common(p, output=True):
        p.add_argument("--input", required=True)
        p.add_argument("--pop", required=True)
        if output:
            p.add_argument("--output", required=True)

    p = sub.add_parser("construct", help="cluster and order markers into a linkage map")
    common(p)
    _add_map_params(p)
    p.add_argument("--imputed-out", help="CSV of imputed A-certainties for representatives")
    p.set_defaults(fn=_cmd_construct)

    p = sub.add_parser("diagnose", help="genotype/marker/interval profiles and heat map")
    common(p, output=False)
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--xo-lambda", type=float)
    p.add_argument("--crit-val", choices=("bonf",))
    p.add_argument("--chr", nargs="*")
    p.add_argument("--lmax", type=float, default=12.0)
    p.add_argument("--dist-fun", default=gmath.KOSAMBI, choices=gmath.MAP_FUNCTIONS)
    p.add_argument("--svg", action="store_true")
    p.set_defaults(fn=_cmd_diagnose)

    p = sub.add_parser("clones", help="detect clone genotypes; optionally form consensus")
    common(p, output=False)
    p.add_argument("--tol", type=float, default=0.9)
    p.add_argument("--fix", action="store_true")
    p.add_argument("--keep-best", action="store_true",
                   help="keep the least-missing member instead of a consensus")
    p.add_argument("--output")
    p.add_argument("--report-out")
    p.set_defaults(fn=_cmd_clones)

    for name, fn in (("pull", _cmd_pull), ("push", _cmd_push)):
        p = sub.add_parser(name, help=f"{name} markers {'into' if name == 'pull' else 'from'} ledgers")
        common(p)
        p.add_argument("--type", required=True,
                       choices=diagnostics.PUSH_TYPES if name == "push" else diagnostics.PULL_TYPES)
        p.add_argument("--seg-thresh", default=None)
        p.add_argument("--seg-ratio", default=None)
        p.add_argument("--miss-thresh", type=float, default=0.1)
        p.add_argument("--max-rf", type=float, default=0.25)
        p.add_argument("--min-lod", type=float, default=3.0)
        if name == "push":
            p.add_argument("--unlinked-chr")
        p.set_defaults(fn=fn)

    p = sub.add_parser("break", help="split linkage groups after named markers")
    common(p)
    p.add_argument("--split", nargs="+", required=True, metavar="GROUP:MK1+MK2")
    p.add_argument("--suffix", default="numeric", choices=("numeric", "alpha"))
    p.set_defaults(fn=_cmd_break)

    p = sub.add_parser("merge", help="concatenate linkage groups with a gap")
    common(p)
    p.add_argument("--merge", nargs="+", required=True, metavar="NEW:G1+G2")
    p.add_argument("--gap", type=float, default=5.0)
    p.set_defaults(fn=_cmd_merge)

    p = sub.add_parser("combine", help="merge maps from the same population")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--pop", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--intersect", action="store_true",
                   help="keep only genotypes shared by all maps")
    p.set_defaults(fn=_cmd_combine)

    p = sub.add_parser("subset", help="restrict a cross to a genotype subset")
    common(p)
    p.add_argument("--keep-genotypes")
    p.add_argument("--drop-genotypes")
    p.add_argument("--drop-xo-above", type=float,
                   help="drop genotypes with more crossovers than this")
    p.set_defaults(fn=_cmd_subset)

    p = sub.add_parser("quickest", help="fast position re-estimation on a constructed map")
    common(p)
    p.add_argument("--error-prob", type=float, default=1e-4)
    p.add_argument("--dist-fun", default=gmath.KOSAMBI, choices=gmath.MAP_FUNCTIONS)
    p.set_defaults(fn=_cmd_quickest)

    p = sub.add_parser("threshold", help="-log10 epsilon vs population size per cM target")
    p.add_argument("--cm", default="25,30,35,40")
    p.add_argument("--n", default="50:400", metavar="LO:HI")
    p.add_argument("--step", type=int, default=10)
    p.add_argument("--dist-fun", default=gmath.KOSAMBI, choices=gmath.MAP_FUNCTIONS)
    p.add_argument("--output", required=True)
    p.set_defaults(fn=_cmd_threshold)

    p = sub.add_parser("simulate", help="simulate a population with known truth")
    p.add_argument("--pop", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--chrom", required=True, metavar="T1xL1,T2xL2",
                   help="markers x length(cM) per chromosome")
    p.add_argument("--dist-fun", default=gmath.KOSAMBI, choices=gmath.MAP_FUNCTIONS)
    p.add_argument("--missing", type=float, default=0.0)
    p.add_argument("--error", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grouped", action="store_true",
                   help="write with the true groups instead of one pooled group")
    p.add_argument("--output", required=True)
    p.add_argument("--truth-out")
    p.set_defaults(fn=_cmd_simulate)

    p = sub.add_parser("benchmark", help="time full construction vs ordering-only")
    p.add_argument("--cells", required=True, metavar="T1xN1,T2xN2")
    p.add_argument("--pop", default="DH")
    p.add_argument("--error", type=float, default=0.0)
    p.add_argument("--p-value", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    p.set_defaults(fn=_cmd_benchmark)

    return top


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.fn(args)
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # pragma: no cover - defensive
        print(f"internal error: {e!r}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
