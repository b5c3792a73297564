"""Command line interface.

Every command accepts the global flags ``--config``, ``--seed``, ``--out``,
``--threads`` and ``--nodes``. Options may also be supplied in a flat
``key=value`` config file (``#`` starts a comment, arrays are comma
separated); command-line flags take precedence. The resolved configuration is
written to ``<out>/run_config.txt`` and embedded in every JSON report.

Exit codes: 0 success, 1 numerical check failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__, clt, ensemble, solver
from .spectra import (
    EmpiricalSpectrum,
    EntryLaw,
    PopulationSpectrum,
    RectContour,
    TestFunction,
    ks_distance,
)

log = logging.getLogger("mpinv")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"config line {lineno}: empty key")
        out[key.replace("-", "_")] = value
    return out


def format_config(cfg: dict) -> str:
    lines = []
    for k in sorted(cfg):
        v = cfg[k]
        if v is None:
            continue
        if isinstance(v, (list, tuple)):
            v = ",".join(str(x) for x in v)
        lines.append(f"{k}={v}")
    return "\n".join(lines) + "\n"


_GLOBAL_KEYS = ("config", "seed", "out", "threads", "nodes")
_INTERNAL = {"func", "command", "clt_mode", "config", "verbose"}


def _resolved(args: argparse.Namespace) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in _INTERNAL}


def _population(args) -> PopulationSpectrum:
    if getattr(args, "H", None):
        return PopulationSpectrum.read(args.H)
    return PopulationSpectrum.isotropic(args.sigma2)


def _law(args) -> EntryLaw:
    return EntryLaw(args.law, args.q) if args.law == "three_point" else EntryLaw(args.law)


def _require_seed(args) -> int:
    if args.seed is None:
        raise ConfigError(f"'{args.command}' is randomized and needs an explicit --seed")
    return int(args.seed)


def _ratio(args) -> float:
    if args.p is not None and args.n is not None:
        if args.p <= args.n:
            raise ConfigError("need p > n")
        return args.p / args.n
    if args.c is None:
        raise ConfigError("give either c or both p and n")
    if args.c <= 1:
        raise ConfigError("need c > 1")
    return float(args.c)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _envelope(args, body: dict) -> dict:
    return {"tool": "mpinv", "version": __version__, "config": _resolved(args), **body}


# ---------------------------------------------------------------------------
# commands


def cmd_density(args) -> int:
    H = _population(args)
    c = _ratio(args)
    limit = solver.limit_law(c, H, resolution=args.resolution, eps=args.eps, margin=args.margin)
    out = _out_dir(args)
    (out / "density.csv").write_text(limit.to_csv())
    body: dict = {
        "atom_at_zero": limit.atom_mass,
        "support": list(limit.support),
        "total_mass": limit.total_mass(),
        "files": ["density.csv"],
    }
    status = EXIT_OK
    if args.overlay_p is not None:
        seed = _require_seed(args)
        p = args.overlay_p
        n = args.overlay_n if args.overlay_n is not None else int(round(p / c))
        ens = ensemble.build_ensemble(_law(args), H, p, n, seed)
        ev = np.sort(1.0 / np.linalg.eigvalsh(ens.gram))
        x = limit.x
        emp = np.searchsorted(ev, x, side="right") / ev.size
        lim = limit.ac_cdf() / limit.ac_cdf()[-1]
        gap = float(np.max(np.abs(emp - lim)))
        hist, edges = np.histogram(ev, bins=args.bins, range=(x[0], x[-1]), density=True)
        # histogram of the nonzero eigenvalues scaled to the a.c. mass n/p
        lines = ["bin_left,bin_right,empirical_density"]
        scale = n / p
        for lo, hi, h in zip(edges[:-1], edges[1:], hist):
            lines.append(f"{float(lo)!r},{float(hi)!r},{float(h * scale)!r}")
        (out / "overlay.csv").write_text("\n".join(lines) + "\n")
        body["overlay"] = {"p": p, "n": n, "seed": ens.seed, "sup_cdf_gap": gap}
        body["files"].append("overlay.csv")
    _write_json(out / "density.json", _envelope(args, body))
    return status


_TRANSFORMS = ("mP", "mF", "mFbar")


def _z_grid(args) -> np.ndarray:
    if args.z:
        vals = [complex(s.replace(" ", "").replace("i", "j")) for s in args.z.split(",") if s.strip()]
        return np.array(vals, dtype=complex)
    re = np.linspace(args.re_min, args.re_max, args.re_num)
    im = np.linspace(args.im_min, args.im_max, args.im_num)
    return (re[None, :] + 1j * im[:, None]).ravel()


def cmd_solve(args) -> int:
    H = _population(args)
    c = _ratio(args)
    if args.transform == "mP" and c <= 1:
        raise ConfigError("m_P needs c > 1")
    zs = _z_grid(args)
    rows = ["re_z,im_z,re_m,im_m,residual,status"]
    failures = 0
    for z in zs:
        try:
            if args.transform == "mP":
                m = solver.solve_m_P(z, c, H)
                res = solver.mp_residual(z, m, c, H)
                tol = 1e-10
            elif args.transform == "mFbar":
                m = solver.solve_m_companion(z, c, H)
                res = solver.companion_residual(m, z, c, H)
                tol = 1e-12
            else:
                m = solver.solve_m_F(z, c, H)
                res = solver.companion_residual(solver.primary_to_companion(m, z, c), z, c, H)
                tol = 1e-12
            herglotz = z.imag <= 0 or m.imag > 0
            ok = res < tol and herglotz
            status = "ok" if ok else ("residual" if res >= tol else "herglotz")
        except (solver.ConvergenceError, ValueError, ZeroDivisionError) as exc:
            m, res, ok, status = complex("nan+nanj"), float("nan"), False, f"error:{type(exc).__name__}"
        failures += not ok
        rows.append(",".join(repr(float(v)) for v in (z.real, z.imag, m.real, m.imag, res)) + f",{status}")
    out = _out_dir(args)
    (out / "solve.csv").write_text("\n".join(rows) + "\n")
    _write_json(out / "solve.json", _envelope(args, {"points": int(zs.size), "failures": failures, "files": ["solve.csv"]}))
    return EXIT_FAIL if failures else EXIT_OK


def cmd_simulate(args) -> int:
    seed = _require_seed(args)
    if args.p is None or args.n is None:
        raise ConfigError("simulate needs p and n")
    H = _population(args)
    ens = ensemble.build_ensemble(_law(args), H, args.p, args.n, seed)
    sp = ens.pinv_spectrum(centered=False)
    st = ens.pinv_spectrum(centered=True)
    out = _out_dir(args)
    (out / "spectrum_S_plus.csv").write_text(sp.to_csv())
    (out / "spectrum_S_tilde_plus.csv").write_text(st.to_csv())
    body = {
        "p": ens.p,
        "n": ens.n,
        "seed": ens.seed,
        "zero_count": {"S_plus": sp.zero_count(), "S_tilde_plus": st.zero_count()},
        "ks_distance": ks_distance(st, sp),
        "ks_bound": 2.0 / ens.p,
        "files": ["spectrum_S_plus.csv", "spectrum_S_tilde_plus.csv"],
    }
    _write_json(out / "simulate.json", _envelope(args, body))
    return EXIT_OK


def identity_checks(ens: ensemble.SampleEnsemble, *, z_points: int = 20, z_seed: int = 0, corrupt: float = 0.0, nodes: int = 2048) -> list[dict]:
    """All exact finite-n checks for one ensemble as JSON-ready records."""
    pair = ens.pinv
    st_plus = pair.S_tilde_plus
    if corrupt:
        rng = np.random.default_rng(z_seed + 1)
        e = rng.standard_normal(st_plus.shape)
        st_plus = st_plus + corrupt * np.linalg.norm(st_plus) * (e + e.T) / (2 * np.linalg.norm(e))
        pair = ensemble.PinvPair(pair.S_plus, st_plus, pair.svd_cutoff)
    recs: list[dict] = []

    def add(name, residual, tol, z=None, **extra):
        rec = ensemble.identity_record(name, ens, z, residual, tol=tol, **extra)
        rec["name"] = name
        rec["pass"] = bool(residual <= tol) if np.isfinite(residual) else False
        recs.append(rec)

    for label, a, ap in (("S", ens.S, pair.S_plus), ("S_tilde", ens.S_tilde, pair.S_tilde_plus)):
        norm = np.linalg.norm(a)
        for crit, r in ensemble.penrose_residuals(a, ap).items():
            add(f"penrose[{label}] {crit}", r / norm, 1e-9)

    sp = EmpiricalSpectrum.from_matrix(pair.S_plus)
    st = EmpiricalSpectrum.from_matrix(pair.S_tilde_plus)
    ks = ks_distance(st, sp)
    add("ks(S~+, S+) <= 2/p", max(0.0, ks - 2.0 / ens.p), 0.0, ks=ks, bound=2.0 / ens.p)
    sv = pair.difference_singular_values()
    add("rank(S+ - S~+) <= 2", float(sv[2] / sv[0]) if sv.size > 2 and sv[0] > 0 else 0.0, 1e-8)
    add("zero eigenvalues of S+ = p - n", float(abs(sp.zero_count() - (ens.p - ens.n))), 0.0, count=sp.zero_count())

    ref = np.linalg.norm(pair.S_tilde_plus)
    upd = ensemble.pinv_rank_one_update(pair.S_plus, ens.ybar)
    add("rank-one update", float(np.linalg.norm(upd - pair.S_tilde_plus) / ref), 1e-8)
    _, _, _, d = ensemble.rank_two_form(pair.S_plus, ens.ybar)
    add("rank-two form", float(np.linalg.norm(d - (pair.S_plus - pair.S_tilde_plus)) / ref), 1e-8)
    add("ybar' S+ ybar = 1", abs(ensemble.ybar_unit_form(pair.S_plus, ens.ybar) - 1.0), 1e-10)

    rng = np.random.default_rng(z_seed)
    top = float(sp.eigenvalues[-1])
    zs = rng.uniform(-0.5 * top, 1.5 * top, z_points) + 1j * rng.uniform(0.05, 2.0, z_points) * max(top, 1.0) ** 0.5
    gram_ev = np.linalg.eigvalsh(ens.gram)
    worst = {"relocation": (0.0, None), "xi direct vs eigen": (0.0, None), "xi simplified vs direct": (0.0, None), "theta representation": (0.0, None)}

    def upd_worst(key, r, z):
        if not np.isfinite(r) or r > worst[key][0]:
            worst[key] = (r, z)

    for z in zs:
        lhs = ensemble.empirical_stieltjes(sp, z)
        upd_worst("relocation", abs(lhs - ensemble.relocation_rhs(gram_ev, ens.p, z)), z)
        xd = ensemble.xi_direct(pair, ens.ybar, z)
        xo = ensemble.xi_oracle(pair, z)
        upd_worst("xi direct vs eigen", abs(xd - xo) / max(1.0, abs(xo)), z)
        xs = ensemble.xi_simplified(ens, z)
        upd_worst("xi simplified vs direct", abs(xs - xd) / max(1.0, abs(xd)), z)
        t1 = ensemble.theta_n(ens, z)
        t2 = ensemble.theta_n_direct(pair.S_plus, ens.ybar, z)
        upd_worst("theta representation", abs(t1 - t2) / max(1.0, abs(t2)), z)
    tols = {"relocation": 1e-10, "xi direct vs eigen": 1e-8, "xi simplified vs direct": 1e-8, "theta representation": 1e-10}
    for key, (r, z) in worst.items():
        add(key, r, tols[key], z=z)

    contour = clt.build_contour(top, nodes=nodes)
    for k in (1, 2, 3):
        g = TestFunction.monomial(k)
        direct = ensemble.lss(sp, g)
        via = ensemble.lss_via_contour(sp, g, contour)
        add(f"lss contour duality x^{k}", abs(via - direct) / max(1.0, abs(direct)), 1e-8)
    return recs


def cmd_check_identities(args) -> int:
    seed = _require_seed(args)
    p = args.p if args.p is not None else 50
    n = args.n if args.n is not None else 20
    if p <= n:
        raise ConfigError("need p > n")
    ens = ensemble.build_ensemble(_law(args), _population(args), p, n, seed)
    recs = identity_checks(ens, z_points=args.z_points, z_seed=seed, corrupt=args.corrupt, nodes=args.nodes)
    failed = [r["name"] for r in recs if not r["pass"]]
    out = _out_dir(args)
    _write_json(out / "identities.json", _envelope(args, {"checks": recs, "failed": failed, "all_pass": not failed}))
    for r in recs:
        print(f"{'PASS' if r['pass'] else 'FAIL'}  {r['name']}: residual={r['residual']:.3e} (tol {r['tol']:.0e})")
    return EXIT_FAIL if failed else EXIT_OK


def _g(args) -> TestFunction:
    try:
        g = TestFunction.parse(args.g)
    except ValueError as exc:
        raise ConfigError(f"bad polynomial coefficients {args.g!r}") from exc
    return g


def cmd_clt(args) -> int:
    g = _g(args)
    H = _population(args)
    law = _law(args)
    out = _out_dir(args)
    if args.clt_mode == "predict":
        c = _ratio(args)
        kurt = args.kurt_excess if args.kurt_excess is not None else law.kurtosis_excess
        preds = clt.predict(g, c, H, kurt, margin=args.margin, y0=args.y0, nodes=args.nodes)
        _write_json(out / "clt_predict.json", _envelope(args, {"predictions": [preds["non_centered"].to_dict(), preds["centered"].to_dict()]}))
        return EXIT_OK

    seed = _require_seed(args)
    if args.p is None or args.n is None:
        raise ConfigError("clt verify needs p and n")
    if args.reps < 100:
        raise ConfigError("clt verify needs reps >= 100")
    cfg = clt.CltConfig(
        p=args.p, n=args.n, g=g, reps=args.reps, seed=seed, law=law, H=H,
        threads=args.threads, margin=args.margin, y0=args.y0, nodes=args.nodes,
    )
    ex = clt.mc_clt_experiment(cfg)
    rep = ex.report()
    pn = ex.predicted["non_centered"]
    checks = {
        "mean_non_centered_within_3se": abs(ex.z_scores["mean_non_centered"]) < 3,
        "mean_centered_within_3se": abs(ex.z_scores["mean_centered"]) < 3,
        "difference_within_3se_of_extra": abs(ex.z_scores["difference_vs_extra"]) < 3,
        "var_non_centered_within_15pct": abs(ex.non_centered["var"] - pn.variance) <= 0.15 * pn.variance,
        "var_centered_within_15pct": abs(ex.centered["var"] - pn.variance) <= 0.15 * pn.variance,
        "var_gap_within_4_joint_se": abs(ex.z_scores["var_gap"]) < 4,
    }
    rep["checks"] = checks
    (out / "clt_replicates.csv").write_text(ex.histogram_csv())
    _write_json(out / "clt_verify.json", _envelope(args, rep))
    for k, v in checks.items():
        print(f"{'PASS' if v else 'FAIL'}  {k}")
    return EXIT_OK if all(checks.values()) else EXIT_FAIL


# ---------------------------------------------------------------------------
# parser


def _common(parser: argparse.ArgumentParser) -> None:
    g = parser.add_argument_group("global")
    g.add_argument("--config", help="key=value config file")
    g.add_argument("--seed", type=int, help="master seed (required by randomized commands)")
    g.add_argument("--out", default=".", help="output directory")
    g.add_argument("--threads", type=int, default=1)
    g.add_argument("--nodes", type=int, default=clt.DEFAULT_NODES, help="contour nodes per side")
    g.add_argument("-v", "--verbose", action="store_true")


def _model(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--p", type=int)
    parser.add_argument("--n", type=int)
    parser.add_argument("--c", type=float, help="ratio p/n (used when p, n are absent)")
    parser.add_argument("--sigma2", type=float, default=1.0, help="isotropic population variance")
    parser.add_argument("--H", help="population spectrum file ('tau weight' per line)")
    parser.add_argument("--law", choices=("gaussian", "rademacher", "three_point"), default="gaussian")
    parser.add_argument("--q", type=float, default=0.25, help="three-point law: P(X = +-b) = q")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mpinv", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    d = sub.add_parser("density", help="limit law of S^+ as a density CSV")
    _common(d)
    _model(d)
    d.add_argument("--resolution", type=int, default=2000)
    d.add_argument("--eps", type=float, default=1e-9)
    d.add_argument("--margin", type=float, default=0.01)
    d.add_argument("--overlay-p", type=int, help="also sample one ensemble of this dimension")
    d.add_argument("--overlay-n", type=int)
    d.add_argument("--bins", type=int, default=100)
    d.set_defaults(func=cmd_density)

    s = sub.add_parser("solve", help="Stieltjes transforms on a z-grid")
    _common(s)
    _model(s)
    s.add_argument("--transform", choices=_TRANSFORMS, default="mP")
    s.add_argument("--z", help="comma separated complex points, e.g. 1+1j,0.5+0.2j")
    s.add_argument("--re-min", type=float, default=-1.0)
    s.add_argument("--re-max", type=float, default=3.0)
    s.add_argument("--re-num", type=int, default=9)
    s.add_argument("--im-min", type=float, default=0.1)
    s.add_argument("--im-max", type=float, default=2.0)
    s.add_argument("--im-num", type=int, default=5)
    s.set_defaults(func=cmd_solve)

    m = sub.add_parser("simulate", help="sample one ensemble and export spectra")
    _common(m)
    _model(m)
    m.set_defaults(func=cmd_simulate)

    k = sub.add_parser("check-identities", help="exact finite-n identity suite")
    _common(k)
    _model(k)
    k.add_argument("--z-points", type=int, default=20)
    k.add_argument("--corrupt", type=float, default=0.0, help="relative perturbation of S~+ (negative control)")
    k.set_defaults(func=cmd_check_identities)

    c = sub.add_parser("clt", help="CLT predictions and Monte Carlo verification")
    csub = c.add_subparsers(dest="clt_mode", required=True)
    for mode in ("predict", "verify"):
        cm = csub.add_parser(mode)
        _common(cm)
        _model(cm)
        cm.add_argument("--g", default="0,1", help="polynomial coefficients, ascending")
        cm.add_argument("--margin", type=float, default=clt.DEFAULT_MARGIN)
        cm.add_argument("--y0", type=float, default=clt.DEFAULT_Y0)
        if mode == "predict":
            cm.add_argument("--kurt-excess", type=float, help="E X^4 - 3 (default: from --law)")
        else:
            cm.add_argument("--reps", type=int, default=1000)
        cm.set_defaults(func=cmd_clt)
    return parser


def _subparser_for(parser: argparse.ArgumentParser, argv: Sequence[str]) -> argparse.ArgumentParser:
    # walk the subcommand chain named in argv
    cur = parser
    for tok in argv:
        actions = [a for a in cur._actions if isinstance(a, argparse._SubParsersAction)]
        if not actions:
            break
        if tok in actions[0].choices:
            cur = actions[0].choices[tok]
    return cur


def parse_args(argv: Sequence[str] | None = None) -> argparse.Namespace:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            cfg = parse_config_text(Path(args.config).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        sp = _subparser_for(parser, argv)
        known = {a.dest for a in sp._actions}
        unknown = sorted(set(cfg) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        types = {a.dest: a.type for a in sp._actions}
        typed = {}
        for key, value in cfg.items():
            conv = types.get(key)
            try:
                typed[key] = conv(value) if conv is not None else value
            except ValueError as exc:
                raise ConfigError(f"config key {key}: {exc}") from exc
        sp.set_defaults(**typed)
        args = parser.parse_args(argv)
    return args


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:  # argparse usage errors
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1 or args.nodes < 16:
        print("config error: need threads >= 1 and nodes >= 16", file=sys.stderr)
        return EXIT_CONFIG
    try:
        out = Path(args.out)
        code = args.func(args)
        out.mkdir(parents=True, exist_ok=True)
        (out / "run_config.txt").write_text(format_config(_resolved(args)))
        return code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (clt.QuadratureError, solver.ConvergenceError, ensemble.DegenerateEnsembleError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
