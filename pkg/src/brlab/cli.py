"""Command line front end.

Every subcommand accepts ``--config FILE`` (``[section]`` headers and
``key = value`` lines); command-line flags override file values.  Exit codes:
0 pass, 1 assertion failure, 2 config error, 3 resource skip.
"""
import argparse
import csv
import datetime as _dt
import io
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_SKIP = 0, 1, 2, 3
CSV_VERSION = 1
CSV_COLUMNS = ("experiment_id", "d", "p", "delta", "witness", "ratio", "normalized_constant")
JSON_SCHEMA = "brlab-report/1"


class ConfigError(Exception):
    def __init__(self, msg, line=None):
        super().__init__(msg if line is None else f"line {line}: {msg}")
        self.line = line


# ----------------------------------------------------------------------------- config

# section -> key -> converter; anything else is rejected
def _str(v):
    return v


def _int(v):
    return int(v)


def _float(v):
    from .multiplier import parse_number

    return parse_number(v)


def _dyadic(v):
    from .multiplier import is_dyadic

    x = _float(v)
    if not is_dyadic(x):
        raise ValueError(f"{v} is not a power of two")
    return x


def _floats(v):
    return [_float(s) for s in v.split(",") if s.strip()]


def _strs(v):
    return [s.strip() for s in v.split(",") if s.strip()]


def _bool(v):
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v}")


SCHEMA = {
    "run": {"seed": _int, "out": _str, "json": _str, "memory_budget": _float, "workers": _int,
            "format": _str, "every_witness": _bool},
    "grid": {"d": _str, "oversample": _int},
    "operator": {"op": _str, "phase": _str, "reference_op": _str},
    "experiment": {"ladder": _str, "p": _floats, "witness": _strs, "sigma": _dyadic,
                   "sigma_tilde": _dyadic, "tolerance": _float, "spread_max": _float,
                   "seeds": _int, "R": _floats, "k": _int, "families": _int, "tubes": _str,
                   "points": _int, "sigma2": _dyadic, "witness_seed": _int, "suite": _str},
    "constants": {"eps0": _float, "kappa": _float, "c_trans": _float, "C_normal": _float,
                  "A": _float, "sep": _float, "ratio_max": _float, "rho": _float},
}


def parse_config(text):
    """{section: {key: value}} from the line grammar; ConfigError carries the line number."""
    out = {}
    section = None
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {raw.strip()!r}", no)
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]", no)
            out.setdefault(section, {})
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", no)
        if section is None:
            raise ConfigError("key outside of any [section]", no)
        key, val = (s.strip() for s in line.split("=", 1))
        conv = SCHEMA[section].get(key)
        if conv is None:
            raise ConfigError(f"unknown key {key!r} in [{section}]", no)
        if key in out[section]:
            raise ConfigError(f"duplicate key {key!r}", no)
        try:
            out[section][key] = conv(val)
        except (ValueError, ZeroDivisionError) as e:
            raise ConfigError(f"bad value for {key}: {e}", no) from None
    return out


def _flatten(cfg):
    flat = {}
    for sec in cfg.values():
        flat.update(sec)
    return flat


# ----------------------------------------------------------------------------- output

def fmt(x):
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def csv_text(rows):
    buf = io.StringIO()
    buf.write(f"# brlab-csv v{CSV_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else repr(v)
    if isinstance(v, np.integer):
        return int(v)
    return v


def json_text(command, args, results, checks, status):
    doc = {
        "schema": JSON_SCHEMA,
        "command": command,
        "config": _jsonable(args),
        "results": _jsonable(results),
        "checks": [{"name": n, "pass": bool(ok), "detail": _jsonable(det)} for n, ok, det in checks],
        "status": status,
        "meta": {"timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
                 "version": __version__},
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


@dataclass
class Outcome:
    rows: list
    results: dict
    checks: list  # (name, ok, detail)
    skipped: list
    text: str = ""


# ----------------------------------------------------------------------------- commands

def _d_range(v):
    v = str(v)
    if ".." in v:
        a, b = v.split("..", 1)
        return list(range(int(a), int(b) + 1))
    return [int(v)]


def cmd_exponents(o):
    from .lab import exponents

    rows = []
    for d in _d_range(o.get("d", "2..12")):
        t = exponents(d)
        rows.append({"d": d, "p_circ": str(t.p_circ), "p_s": "degenerate" if t.p_s is None else str(t.p_s),
                     "p_square_eff": str(t.p_square_eff), "stein_tomas": str(t.stein_tomas),
                     "p_circ_float": float(t.p_circ), "p_square_eff_float": float(t.p_square_eff)})
    if o.get("format", "table") == "csv":
        keys = list(rows[0])
        text = "# brlab-exponents v1\n" + ",".join(keys) + "\n"
        text += "".join(",".join(fmt(r[k]) for k in keys) + "\n" for r in rows)
    elif o.get("format") == "json":
        text = json.dumps(rows, indent=2) + "\n"
    else:
        text = "".join(f"d={r['d']:>2}  p_circ={r['p_circ']:>6}  p_s={r['p_s']:>10}  "
                       f"p_sq_eff={r['p_square_eff']:>6}\n" for r in rows)
    return Outcome([], {"table": rows}, [], [], text)


def _spec(o, default_op, d=2):
    from .multiplier import parse_operator

    return parse_operator(o.get("op", default_op), d=d)


def _scaling(o, default_op, witnesses):
    from . import lab

    d = int(o.get("d", 2))
    spec = _spec(o, default_op, d)
    ladder = lab.parse_ladder(o.get("ladder", "2^-3..2^-8"))
    ps = o.get("p", [4.0])
    wit = o.get("witness", witnesses)
    reps = lab.scaling_experiment(spec, wit, list(ps), ladder, o.get("memory_budget", lab.DEFAULT_BUDGET),
                                  workers=o.get("workers", 1), seed=o.get("seed", 0))
    tol = o.get("tolerance", 0.1)
    rows, results, checks, skipped = [], {}, [], []
    for p, r in reps.items():
        rows += r.rows(o.get("every_witness", False))
        results[fmt(p)] = {"slope": r.slope, "stderr": r.stderr, "theoretical": r.theoretical,
                           "per_witness_slope": r.per_witness_slope, "skipped": r.skipped}
        skipped = r.skipped
        if len(r.deltas) >= 2:
            checks.append((f"slope p={fmt(p)}", abs(r.slope - r.theoretical) <= tol,
                           {"slope": r.slope, "theoretical": r.theoretical, "tolerance": tol}))
    return Outcome(rows, results, checks, skipped), reps


def cmd_scaling(o):
    return _scaling(o, "tdelta(phase=paraboloid)", ["knapp", "focus", "conj"])[0]


def cmd_square_scaling(o):
    from . import lab
    from .multiplier import parse_operator

    out, reps = _scaling(o, "sdelta(phase=affine-time)", ["knapp", "focus"])
    ref_op = o.get("reference_op")
    if ref_op:
        ladder = lab.parse_ladder(o.get("ladder", "2^-3..2^-8"))
        ref = lab.scaling_experiment(parse_operator(ref_op), ["knapp", "focus", "conj"], list(reps),
                                     ladder, o.get("memory_budget", lab.DEFAULT_BUDGET),
                                     workers=o.get("workers", 1))
        ref = ref if isinstance(ref, dict) else {list(reps)[0]: ref}
        tol = o.get("tolerance", 0.1)
        for p, r in reps.items():
            gap = r.slope - ref[p].slope
            out.results[fmt(p)]["gap"] = gap
            out.checks.append((f"gap p={fmt(p)}", abs(gap - 0.5) <= tol, {"gap": gap, "expected": 0.5}))
    return out


def cmd_bilinear(o):
    from . import lab

    ladder = lab.parse_ladder(o.get("ladder", "2^-3..2^-7"))
    p = o.get("p", [4.0])[0]
    w = o.get("witness", ["focus"])[0]
    r = lab.bilinear_transversal_experiment(_spec(o, "tdelta(phase=paraboloid)"), p, o.get("sigma", 0.25),
                                            ladder, kind=w, seed=o.get("seed", 0))
    rows = [("bilinear", 2, p, dl, w, L, c) for dl, L, c in zip(r.deltas, r.lhs, r.constants)]
    lim = o.get("spread_max", 4.0)
    return Outcome(rows, {"vol": r.vol, "spread": r.spread, "constants": r.constants},
                   [("c(delta) spread", r.spread < lim, {"spread": r.spread, "limit": lim})], [])


def cmd_confined(o):
    from . import lab

    ladder = lab.parse_ladder(o.get("ladder", "2^-2..2^-4"))
    spec = _spec(o, "sdelta(phase=affine-time)", d=3)
    p = o.get("p", [4.0])[0]
    lim = o.get("spread_max", 4.0)
    rows, results, checks = [], {}, []
    for s in range(o.get("seeds", 1)):
        seed = o.get("seed", 0) + s
        r = lab.confined_square_experiment(spec, [[1, 0, 0], [0, 0, 1]], ladder, p=p,
                                           sigma_tilde=o.get("sigma_tilde", 0.25), seed=seed)
        rows += [("confined", 3, p, dl, f"random-slab:{seed}", q, q) for dl, q in zip(r.deltas, r.ratios)]
        results[str(seed)] = {"ratios": r.ratios, "spread": r.spread}
        checks.append((f"ratio spread seed={seed}", r.spread < lim, {"spread": r.spread}))
    return Outcome(rows, results, checks, [])


def cmd_kakeya(o):
    from . import calibration as cal
    from . import kakeya as K

    Rs = [float(v) for v in o.get("R", [64.0, 256.0, 1024.0])]
    rows, results, checks = [], {}, []
    if o.get("tubes"):
        fam = K.loads(Path(o["tubes"]).read_text())
        for R in Rs:
            res = K.kakeya_ratio(fam, R)
            rows.append(("kakeya:file", fam.d, 0, R, f"k={fam.k}", res.lhs, res.ratio))
            results[fmt(R)] = {"ratio": res.ratio, "lhs": res.lhs, "sigma": res.sigma}
        return Outcome(rows, results, [], [])
    d = int(o.get("d", 2))
    k = int(o.get("k", d))
    n = o.get("families", 50)
    seeds = [o.get("seed", 10_000) + i for i in range(n)]
    best = 0.0
    for R in Rs:
        vals = [K.kakeya_ratio(cal.kakeya_family(d, k, R, s), R).ratio for s in seeds]
        best = max(best, max(vals))
        rows += [("kakeya", d, 0, R, f"seed={s}", v, v) for s, v in zip(seeds, vals)]
    orth = K.kakeya_ratio(K.orthogonal_family(d, Rs[0]), Rs[0]).ratio if k == d else None
    results.update(max_ratio=best, orthogonal=orth)
    try:
        const = cal.kakeya_constant(d, k)
        lim = cal.MARGIN["kakeya"] * const
        checks.append(("max ratio vs calibration", best <= lim, {"max": best, "limit": lim}))
    except KeyError:
        pass
    if orth is not None:
        oracle = K.orthogonal_oracle(d)
        checks.append(("orthogonal oracle", abs(orth - oracle) <= 0.1 * oracle, {"ratio": orth, "oracle": oracle}))
    return Outcome(rows, results, checks, [])


def _decomp_cfg(o):
    from .decompose import DESK

    keys = ("c_trans", "C_normal", "A", "sep", "ratio_max", "rho")
    upd = {k: o[k] for k in keys if k in o}
    return DESK.__class__(**{**DESK.__dict__, **upd})


def cmd_decompose(o):
    from . import grid as G
    from . import lab
    from .decompose import certificate_report, decompose_scale1, verify_certificate

    spec = _spec(o, "tdelta(phase=paraboloid,delta=2^-6)")
    cfg = _decomp_cfg(o)
    sigma1 = o.get("sigma", 0.125)
    g = lab.ladder_grid(2, spec.delta)
    rng = np.random.default_rng(o.get("seed", 0))
    w = o.get("witness", ["random-slab"])[0]
    f = lab.witness(w, spec, spec.delta, o.get("witness_seed", 0), g)
    if w == "random-slab":
        f = G.from_frequency(g, f.samples)
    certs, checks, text = [], [], []
    for i in range(o.get("points", 5)):
        x = rng.uniform(-20, 20, size=2)
        c = decompose_scale1(f, spec, sigma1, x, cfg)
        rep = verify_certificate(c, f, spec, cfg=cfg)
        certs.append({"x": list(c.x), "branch": c.branch, "bound": c.bound, "lhs": c.lhs,
                      "margin": c.margin, "verified": rep.ok})
        checks.append((f"certificate {i}", rep.ok, {"margin": rep.margin}))
        text.append(certificate_report(c))
    return Outcome([], {"certificates": certs}, checks, [], "\n".join(text) + "\n")


def cmd_kernel_decay(o):
    from . import lab
    from .multiplier import kernel, kernel_decay_fit, slab_prediction

    spec = _spec(o, "tdelta(phase=paraboloid)")
    sigma = o.get("sigma", 0.25)
    ladder = lab.parse_ladder(o.get("ladder", "2^-4..2^-7"))
    rows, Cs, k0 = [], [], []
    for dl in ladder:
        sp_ = spec.with_delta(dl)
        K = kernel(sp_, sigma)
        fit = kernel_decay_fit(K, dl, sigma)
        pred = slab_prediction(sp_, sigma)
        K0 = abs(K.samples[(K.grid.n // 2,) * K.grid.d])
        Cs.append(fit.C)
        k0.append(K0 / pred)
        rows.append(("kernel-decay", K.grid.d, 0, dl, "kernel", K0, fit.C))
    spread = max(Cs) / min(Cs)
    lim = o.get("spread_max", 4.0)
    checks = [("C(delta) spread", spread < lim, {"spread": spread}),
              ("K(0) vs slab prediction", all(abs(q - 1) <= 0.1 for q in k0), {"quotients": k0})]
    return Outcome(rows, {"C": Cs, "K0_over_prediction": k0, "spread": spread}, checks, [])


SUITES = ("exponents", "grid", "kakeya", "rubio")


def cmd_verify(o):
    from . import grid as G
    from . import lab

    suite = o.get("suite", "all")
    names = SUITES if suite == "all" else (suite,)
    checks = []
    for s in names:
        if s not in SUITES:
            raise ConfigError(f"unknown suite {s!r}; choose from {', '.join(SUITES)} or all")
        if s == "exponents":
            for d in range(2, 13):
                t = lab.exponents(d)
                alt = lab.exponents_textual(d)
                checks.append((f"exponents d={d}", alt["p_circ"] == t.p_circ and alt["p_s"] == t.p_s, {}))
        elif s == "grid":
            rng = np.random.default_rng(o.get("seed", 0))
            worst = 0.0
            for d, n in ((1, 64), (2, 32), (3, 16)):
                g = G.make_grid(d, n, 2.0 / n * 2)
                for _ in range(20):
                    f = G.random_function(g, rng)
                    back = G.transform(G.transform(f))
                    worst = max(worst, float(np.max(np.abs(back.samples - f.samples)) / np.max(np.abs(f.samples))))
                    F = G.transform(f)
                    lhs = np.sum(np.abs(f.samples) ** 2)
                    worst = max(worst, abs(lhs - G.parseval_constant(g) * np.sum(np.abs(F.samples) ** 2)) / lhs)
            checks.append(("grid round trip and Parseval", worst < 1e-12, {"worst": worst}))
        elif s == "kakeya":
            from . import kakeya as K

            for d in (2, 3):
                r = K.kakeya_ratio(K.orthogonal_family(d, 64), 64).ratio
                checks.append((f"kakeya orthogonal d={d}", abs(r - K.orthogonal_oracle(d)) <= 0.1 * K.orthogonal_oracle(d),
                               {"ratio": r}))
        elif s == "rubio":
            from . import calibration as cal

            for sg in cal.RUBIO_SIGMAS:
                m = float(cal.rubio_ratios(sg, list(cal.HELDOUT_SEEDS)[:20]).max())
                lim = cal.MARGIN["rubio"] * cal.rubio_constant(sg)
                checks.append((f"rubio sigma={sg}", m <= lim, {"max": m, "limit": lim}))
    return Outcome([], {}, checks, [])


COMMANDS = {
    "exponents": cmd_exponents,
    "scaling": cmd_scaling,
    "square-scaling": cmd_square_scaling,
    "bilinear": cmd_bilinear,
    "confined": cmd_confined,
    "kakeya": cmd_kakeya,
    "decompose": cmd_decompose,
    "kernel-decay": cmd_kernel_decay,
    "verify": cmd_verify,
}

# flag -> (config key, section)
FLAGS = {
    "--d": ("d", "grid"), "--op": ("op", "operator"), "--reference-op": ("reference_op", "operator"),
    "--p": ("p", "experiment"), "--ladder": ("ladder", "experiment"), "--witness": ("witness", "experiment"),
    "--sigma": ("sigma", "experiment"), "--sigma-tilde": ("sigma_tilde", "experiment"),
    "--tolerance": ("tolerance", "experiment"), "--spread-max": ("spread_max", "experiment"),
    "--seeds": ("seeds", "experiment"), "--R": ("R", "experiment"), "--k": ("k", "experiment"),
    "--families": ("families", "experiment"), "--tubes": ("tubes", "experiment"),
    "--points": ("points", "experiment"), "--suite": ("suite", "experiment"),
    "--seed": ("seed", "run"), "--out": ("out", "run"), "--json": ("json", "run"),
    "--memory-budget": ("memory_budget", "run"), "--workers": ("workers", "run"),
    "--format": ("format", "run"),
}


def build_parser():
    ap = argparse.ArgumentParser(prog="brlab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"brlab {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="config file ([section] / key = value)")
        for flag in FLAGS:
            sp.add_argument(flag, dest=FLAGS[flag][0], default=None)
        sp.add_argument("--every-witness", dest="every_witness", action="store_true", default=None)
    return ap


def resolve(ns):
    """Merge config file and flags into one flat option dict (flags win)."""
    cfg = {}
    if ns.config:
        try:
            text = Path(ns.config).read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config: {e}") from None
        cfg = parse_config(text)
    opts = _flatten(cfg)
    for flag, (key, sec) in FLAGS.items():
        v = getattr(ns, key)
        if v is None:
            continue
        try:
            opts[key] = SCHEMA[sec][key](v) if key in SCHEMA[sec] else v
        except (ValueError, ZeroDivisionError) as e:
            raise ConfigError(f"bad value for {flag}: {e}") from None
    if ns.every_witness:
        opts["every_witness"] = True
    return opts


def run(command, opts, stdout=None):
    """Execute one subcommand; returns the exit status."""
    stdout = sys.stdout if stdout is None else stdout
    out = COMMANDS[command](opts)
    status = EXIT_OK
    if any(not ok for _, ok, _ in out.checks):
        status = EXIT_FAIL
    if out.skipped:  # a partial ladder makes the assertions moot
        status = EXIT_SKIP
    if out.text:
        stdout.write(out.text)
    if out.rows:
        text = csv_text(out.rows)
        if opts.get("out"):
            Path(opts["out"]).write_text(text)
        elif not out.text:
            stdout.write(text)
    label = {EXIT_OK: "pass", EXIT_FAIL: "fail", EXIT_SKIP: "skip"}[status]
    summary = json_text(command, opts, out.results, out.checks, label)
    if opts.get("json"):
        Path(opts["json"]).write_text(summary)
    elif out.checks or out.skipped:
        stdout.write(summary)
    if out.skipped:
        sys.stderr.write("skipped ladder points (memory budget): " + ", ".join(fmt(v) for v in out.skipped) + "\n")
    return status


def main(argv=None):
    ap = build_parser()
    ns = ap.parse_args(argv)
    try:
        opts = resolve(ns)
        return run(ns.command, opts)
    except ConfigError as e:
        sys.stderr.write(f"config error: {e}\n")
        return EXIT_CONFIG
    except ValueError as e:
        sys.stderr.write(f"error: {e}\n")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
