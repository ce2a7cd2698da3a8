"""evoasym command-line driver.

    evoasym <command> --config <path> --out <dir> [--override key=value]...

Exit codes: 0 all checks pass, 1 any check fails, 2 configuration error.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import diagrams, limits, oracles, perturb
from .model import ConfigError, apply_override, load_config, model_from_config
from .numerics import NumericError, UnsupportedOrderError, fit_quasi_polynomial

FLOAT = limits.FLOAT


class Report:
    def __init__(self, experiment, config):
        self.experiment = experiment
        self.config = config
        self.checks = []

    def check(self, name, measured, threshold, ok):
        self.checks.append({"name": name, "measured": _num(measured), "threshold": _num(threshold),
                            "verdict": "pass" if ok else "fail"})

    def below(self, name, measured, threshold):
        self.check(name, measured, threshold, bool(measured <= threshold))

    @property
    def passed(self):
        return all(c["verdict"] == "pass" for c in self.checks)

    def write(self, out: Path):
        doc = {"experiment": self.experiment, "config": self.config, "checks": self.checks}
        (out / "report.json").write_text(json.dumps(doc, indent=2) + "\n")


def _num(x):
    if isinstance(x, (list, tuple)):
        return [_num(v) for v in x]
    if isinstance(x, (complex, np.complexfloating)):
        return [float(np.real(x)), float(np.imag(x))]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    x = float(x)
    return x if math.isfinite(x) else str(x)


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([FLOAT % v for v in r])


def _exp(cfg, key, default):
    return cfg.get("experiment", {}).get(key, default)


def _time_grid(cfg, t_max=20.0, n_t=201):
    t_max = float(_exp(cfg, "t_max", t_max))
    n_t = int(_exp(cfg, "n_t", n_t))
    if not t_max > 0 or n_t < 2:
        raise ConfigError("experiment.t_max must be > 0 and n_t >= 2")
    return np.linspace(0.0, t_max, n_t)


def _node(model, cfg):
    p = _exp(cfg, "p", None)
    if p is None:
        p = int(np.argmin(model.grid.norms))
    if not isinstance(p, int) or not 0 <= p < model.grid.size:
        raise ConfigError(f"experiment.p must be a node index in [0, {model.grid.size})")
    return p


# ---------------------------------------------------------------- commands

def cmd_solvable(cfg, out: Path) -> Report:
    model = model_from_config(cfg)
    if model.variant != "linear_coupling":
        raise ConfigError("solvable needs model.variant = linear_coupling")
    lam = model.coupling
    t = _time_grid(cfg)
    rep = Report("solvable", cfg)
    closed = np.atleast_1d(oracles.solvable_closed_form(model, t, lam).value)
    pred = np.atleast_1d(perturb.vacuum_prediction(perturb.vacuum_order2(model), t, lam))
    rep.below("prediction_vs_closed_form", float(np.abs(pred - closed).max()), 1e-12)
    rep.below("normalization_t0", abs(closed[0] - 1), 1e-12)
    cols = [t, closed.real, closed.imag]
    header = ["t", "closed_re", "closed_im"]
    n_max = int(_exp(cfg, "n_max", 10))
    if model.grid.size <= int(_exp(cfg, "fock_max_modes", 4)):
        fock = oracles.fock_exact(model, "vacuum", t, lam, n_max=n_max)
        fv = np.atleast_1d(fock.value)
        rep.below("fock_vs_closed_form", float(np.abs(fv - closed).max()), 1e-8)
        rep.below("fock_unitarity", float(np.abs(fv).max()) - 1, 1e-10)
        cols += [fv.real, fv.imag]
        header += ["fock_re", "fock_im"]
    w = model.omega()
    wt = model.grid.weights * np.abs(model.kernel.values(model.grid)) ** 2
    A, B = 1j * lam ** 2 * np.sum(wt / w), -lam ** 2 * np.sum(wt / w ** 2)
    if lam > 0:
        uw = limits.unwrap_exponent(t, closed, freqs=w)
        rep.below("unwrap_A", abs(uw.A - A), 1e-8)
        rep.below("unwrap_B", abs(uw.B - B), 1e-8)
    else:
        rep.below("flat_trace", float(np.abs(closed - 1).max()), 1e-15)
    cols += [np.abs(closed), np.unwrap(np.angle(closed))]
    header += ["abs", "phase"]
    _write_csv(out / "trace.csv", header, np.stack(cols, axis=1))
    return rep


def cmd_decay(cfg, out: Path) -> Report:
    model = model_from_config(cfg)
    rep = Report("decay", cfg)
    dn = model.grid.d * model.arity
    try:
        dc = perturb.decay_order2(model)
    except perturb.LimitMayNotExistError as e:
        print(f"warning: {e}", file=sys.stderr)
        rep.check("limit_exists_dn_ge_3", dn, 3, False)
        return rep
    s = np.geomspace(float(_exp(cfg, "sigma_min", 20.0)), float(_exp(cfg, "sigma_max", 200.0)),
                     int(_exp(cfg, "n_sigma", 16)))
    F = dc.F(s)
    fit = limits.fit_exponent(s, np.abs(F))
    tol = float(_exp(cfg, "slope_tol", 0.05))
    rep.check("F_slope", fit.slope, [-dn / 2, tol], abs(fit.slope + dn / 2) <= tol * dn / 2)
    dual = float(_exp(cfg, "dual_tol", 1e-3))
    if dc.A2_ieps is not None:
        rel = abs(dc.A2.value - dc.A2_ieps.value) / abs(dc.A2.value)
        rep.below("A2_time_vs_ieps", rel, dual)
    if dc.B2_ieps is not None:
        rel = abs(dc.B2.value - dc.B2_ieps.value) / abs(dc.B2.value)
        rep.below("B2_time_vs_ieps", rel, dual)
    _write_csv(out / "F.csv", ["sigma", "F_re", "F_im", "F_abs"], np.stack([s, F.real, F.imag, np.abs(F)], 1))
    tt = _time_grid(cfg, 50.0, 101)
    A2t, B2t = dc.A2_t(tt), dc.B2_t(tt)
    _write_csv(out / "coefficients.csv", ["t", "A2_re", "A2_im", "B2_re", "B2_im"],
               np.stack([tt, A2t.real, A2t.imag, B2t.real, B2t.imag], 1))
    return rep


def _element(model, cfg):
    el = _exp(cfg, "element", "vacuum")
    if el == "vacuum":
        return "vacuum"
    if el == "one_particle":
        return ("one_particle", _node(model, cfg))
    raise ConfigError("experiment.element must be 'vacuum' or 'one_particle'")


def cmd_stochastic(cfg, out: Path) -> Report:
    model = model_from_config(cfg)
    el = _element(model, cfg)
    lams = _exp(cfg, "lambdas", [0.2, 0.1, 0.05, 0.025])
    if not isinstance(lams, list):
        lams = [lams]
    tau = float(_exp(cfg, "tau", 1.0))
    sw = limits.stochastic_sweep(model, el, tau, lams, route=_exp(cfg, "route", None),
                                 n_max=int(_exp(cfg, "n_max", 6)))
    rep = Report("stochastic", cfg)
    tol = float(_exp(cfg, "order_tol", 0.2))
    rep.check("order_uncorrected", sw.fit_uncorrected.slope, [2.0, tol], sw.fit_uncorrected.within(2.0, tol))
    ratio_min = float(_exp(cfg, "ratio_min", 5.0))
    rep.check("corrected_ratio_at_smallest_lambda", sw.ratio_at_smallest, ratio_min,
              sw.ratio_at_smallest >= ratio_min)
    sw.write_csv(out / "sweep.csv")
    return rep


def cmd_oneparticle(cfg, out: Path) -> Report:
    model = model_from_config(cfg)
    p = _node(model, cfg)
    rep = Report("oneparticle", cfg)
    if model.decaying:
        if model.grid.d != 1:
            raise ConfigError("the decaying one-particle route is implemented for d = 1")
        pv = float(model.grid.nodes[p, 0])
        r = perturb.oneparticle_decay_a2(model, pv)
        a2 = r["ieps"].value
        # informational: a decay gap gives A2 an imaginary part
        rep.check("im_A2_nonzero", abs(a2.imag), 0.0, abs(a2.imag) > 0)
        rows = [[pv, a2.real, a2.imag]]
        if "time" in r:
            rel = abs(r["time"].value - a2) / abs(a2)
            rep.below("A2_time_vs_ieps", rel, 1e-4)
        _write_csv(out / "a2.csv", ["p", "A2_re", "A2_im"], rows)
        return rep
    lam = model.coupling
    t = _time_grid(cfg, 10.0, 41)
    c2 = perturb.oneparticle_order2(model, p)
    rep.below("im_A2_zero", abs(c2.A.imag), 1e-12)
    pred2 = perturb.u11_prediction(model, p, t, lam, order=2)
    d2 = oracles.dyson_order2(model, ("one_particle", p), t, lam)
    rep.below("order2_vs_dyson2", float(np.abs(pred2 - d2.value).max()), 1e-9)
    rep.below("normalization_t0", abs(pred2[0] - 1), 1e-12)
    o4 = perturb.oneparticle_order4(model, p)
    d4 = oracles.dyson_order4(model, ("one_particle", p), t, lam)
    rep.below("U4_vs_dyson4", float(np.abs(o4.U4(t) - d4.series[4]).max()), 1e-7)
    tf = np.linspace(0.0, float(_exp(cfg, "fit_t_max", 40.0)), int(_exp(cfg, "fit_n_t", 801)))
    if perturb.sector_frequencies(model, p).size <= 200:
        s4 = oracles.dyson_order4(model, ("one_particle", p), tf, lam).series[4]
        poly, _, _ = fit_quasi_polynomial(tf, s4, perturb.sector_frequencies(model, p), degree=2, osc_degree=2)
        rep.below("fit_t2_vs_minus_A2sq_half", abs(poly[2] + o4.A2 ** 2 / 2), 1e-6)
        rep.below("fit_t1_vs_A4_plus_A2B2", abs(poly[1] - 1j * (o4.A4 + o4.A2 * o4.B2)), 1e-6)
    if model.variant == "cubic_ti":
        mk = perturb.m_kernels(model, p)
        rep.below("M4_identity", abs(mk["M4"] + o4.A4), 1e-10)
    pred4 = perturb.u11_prediction(model, p, t, lam, order=4)
    if lam > 0 and model.variant == "cubic_ti":
        fx = oracles.fock_exact(model, ("one_particle", p), t, lam, n_max=int(_exp(cfg, "n_max", 4)))
        ov = np.atleast_1d(fx.value)
        rep.below("fock_unitarity", float(np.abs(ov).max()) - 1, 1e-10)
    else:
        ov = np.atleast_1d(d4.value)
    _write_csv(out / "trace.csv", ["t", "pred2_re", "pred2_im", "pred4_re", "pred4_im", "oracle_re", "oracle_im"],
               np.stack([t, pred2.real, pred2.imag, pred4.real, pred4.imag, ov.real, ov.imag], 1))
    return rep


def cmd_appendix_a(cfg, out: Path) -> Report:
    model = model_from_config(cfg)
    n = _exp(cfg, "order", 4)
    if not isinstance(n, int):
        raise ConfigError("experiment.order must be an integer")
    terms = diagrams.enumerate_terms(n)
    rep = Report("appendix-a", cfg)
    rep.check("term_count", len(terms), 2 ** (n - 1), len(terms) == 2 ** (n - 1))
    ts = np.array(_exp(cfg, "t", [1.0, 5.0, 10.0]), dtype=float)
    full = diagrams.vacuum_diagrams(model, n, connected=False)
    conn = diagrams.vacuum_diagrams(model, n, connected=True)
    lam = model.coupling or 0.1
    d = oracles.dyson_order4(model, "vacuum", ts, lam, order=n)
    scale = np.maximum(1.0, np.abs(d.series[n]))
    rep.below("sum_vs_dyson", float(np.max(np.abs(full.total(ts) - d.series[n]) / scale)), 1e-8)
    E = oracles.log_series(d.series)
    rep.below("connected_vs_log_dyson", float(np.max(np.abs(conn.total(ts) - E[n]) / np.maximum(1.0, np.abs(E[n])))),
              1e-8)
    abc = diagrams.split_ABC(conn)
    rep.below("split_reconstruction", float(np.max(np.abs(abc.A * ts + abc.B + abc.C(ts) - conn.total(ts)))), 1e-8)
    if _exp(cfg, "c_decay", False):
        c1, c200 = abs(abc.C(1.0)), abs(abc.C(200.0))
        rep.check("C_decay", c200 / c1 if c1 > 0 else float("inf"), 0.1, c200 < c1 / 10)
    table = {"t": float(ts[0]), "connected": True, "terms": diagrams.term_table(conn, float(ts[0]))}
    (out / "terms.json").write_text(json.dumps(table, indent=2) + "\n")
    _write_csv(out / "abc.csv", ["order", "A_re", "A_im", "B_re", "B_im"],
               [[n, abc.A.real, abc.A.imag, abc.B.real, abc.B.imag]])
    return rep


COMMANDS = {
    "solvable": cmd_solvable,
    "decay": cmd_decay,
    "stochastic": cmd_stochastic,
    "oneparticle": cmd_oneparticle,
    "appendix-a": cmd_appendix_a,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="evoasym", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="JSON experiment config")
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                    help="dotted config override, value parsed as JSON")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        cfg = copy.deepcopy(cfg)
        for item in args.override:
            apply_override(cfg, item)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        rep = COMMANDS[args.command](cfg, out)
    except (ConfigError, UnsupportedOrderError, FileNotFoundError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 1
    rep.write(out)
    for c in rep.checks:
        print(f"{c['verdict'].upper():4s} {c['name']}: {c['measured']} (threshold {c['threshold']})")
    return 0 if rep.passed else 1


if __name__ == "__main__":
    sys.exit(main())
