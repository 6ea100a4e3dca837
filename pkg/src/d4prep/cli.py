"""Command-line entry point: ``d4prep <command> [flags]``.

Every structured output is JSON on stdout (entropy tables are CSV). Errors
from the toolkit exit with the code attached to their class; see README.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

from . import anyons as an
from . import diagnostics as dg
from .circuit import (build_d4_grid_protocol, build_d4_protocol, build_d4_spt_route, build_q8_spt_route,
                      build_toric_code_protocol, ccz_depth, two_body_depth)
from .errors import ConfigError, ToolkitError
from .lattice import QubitId, build_honeycomb_torus, build_square_grid_embedding
from .simulator import DEFAULT_CAP, MeasurementRecord, Policy, StateVector, default_threads, plan, run
from .stabilizers import d4_family, q8_family, toric_family, verify

PROTOCOLS = ("toric", "d4", "d4-grid", "d4-grid-native", "d4-spt", "q8-spt")
POLICIES = ("sampled", "forced", "all-plus")
PRECISIONS = ("complex64", "complex128")

DEFAULTS = {"protocol": "d4", "l1": 2, "l2": 2, "seed": 0, "policy": "sampled", "precision": "complex128",
            "cap": DEFAULT_CAP, "threads": None, "schedule": "eager", "swap_signs": False,
            "orientation": "both"}


# -- config -------------------------------------------------------------------

def load_config(args, keys):
    """Defaults, then the JSON config file, then flags that were given."""
    cfg = {k: DEFAULTS[k] for k in keys if k in DEFAULTS}
    if getattr(args, "config", None):
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        unknown = set(data) - set(DEFAULTS) - {"out_state", "out_record", "record"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update({k: v for k, v in data.items() if k in keys})
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    if cfg.get("threads") is None and "threads" in keys:
        cfg["threads"] = default_threads()
    validate(cfg)
    return cfg


def validate(cfg):
    checks = (("protocol", PROTOCOLS), ("policy", POLICIES), ("precision", PRECISIONS),
              ("schedule", ("eager", "layered")), ("orientation", ("up", "down", "both")))
    for key, allowed in checks:
        if key in cfg and cfg[key] not in allowed:
            raise ConfigError(f"{key} must be one of {allowed}, got {cfg[key]!r}")
    for key in ("l1", "l2", "cap", "threads"):
        if key in cfg and (not isinstance(cfg[key], int) or cfg[key] < 1):
            raise ConfigError(f"{key} must be a positive integer")
    if cfg.get("policy") == "forced" and not cfg.get("record"):
        raise ConfigError("policy 'forced' needs --record")


def build(cfg):
    """(circuit, lattice or None) for a config."""
    proto = cfg["protocol"]
    if proto == "toric":
        return build_toric_code_protocol(cfg["l1"]), None
    lat = build_honeycomb_torus(cfg["l1"], cfg["l2"])
    if proto == "d4":
        return build_d4_protocol(lat, swap_signs=cfg.get("swap_signs", False)), lat
    if proto in ("d4-grid", "d4-grid-native"):
        emb = build_square_grid_embedding(lat)
        return build_d4_grid_protocol(lat, emb, native=proto.endswith("native")), lat
    if proto == "d4-spt":
        return build_d4_spt_route(lat), lat
    return build_q8_spt_route(lat, cfg.get("orientation", "both")), lat


def family_for(cfg, lat, record):
    proto = cfg["protocol"]
    if proto == "toric":
        return toric_family(cfg["l1"], record)
    if proto == "q8-spt":
        return q8_family(lat, record, cfg.get("orientation", "both"))
    return d4_family(lat, record, vertex_signs=proto != "d4-spt")


def policy_for(cfg):
    if cfg["policy"] == "forced":
        return Policy.replay(read_record(cfg["record"]))
    return Policy(cfg["policy"], cfg["seed"])


def read_record(path):
    try:
        return MeasurementRecord.from_dict(json.loads(Path(path).read_text()))
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise ConfigError(f"cannot read record {path}: {exc}") from None


def record_text(rec):
    return json.dumps(rec.to_dict(), indent=1, sort_keys=True) + "\n"


def depth_counts(c):
    tags = {}
    for layer in c.layers:
        tags[layer.tag] = tags.get(layer.tag, 0) + 1
    return {"protocol": c.protocol, "two_body_depth": two_body_depth(c), "ccz_depth": ccz_depth(c),
            "layers": len(c.layers), "layers_by_tag": tags, "n_qubits": len(c.qubits())}


def emit(obj):
    print(json.dumps(obj, indent=1, sort_keys=True))


# -- commands -----------------------------------------------------------------

RUN_KEYS = ("protocol", "l1", "l2", "seed", "policy", "precision", "cap", "threads", "schedule",
            "swap_signs", "orientation", "record")


def cmd_prepare(args):
    cfg = load_config(args, RUN_KEYS)
    c, lat = build(cfg)
    st, rec = run(c, policy_for(cfg), schedule=cfg["schedule"], cap=cfg["cap"],
                  precision=cfg["precision"], threads=cfg["threads"])
    text = record_text(rec)
    summary = {"protocol": cfg["protocol"], "l1": cfg["l1"], "l2": cfg["l2"], "seed": cfg["seed"],
               "policy": cfg["policy"], "peak_live_qubits": st.peak, "final_qubits": st.k,
               "record_sha256": hashlib.sha256(text.encode()).hexdigest(), **depth_counts(c)}
    if args.out_record:
        Path(args.out_record).write_text(text)
        summary["record_file"] = args.out_record
    if args.out_state:
        st.save(args.out_state)
        summary["state_file"] = args.out_state
    if args.verify:
        rep = verify(st, family_for(cfg, lat, rec), args.tol)
        summary["verify"] = {k: rep[k] for k in ("stage", "n", "passed", "ok")}
    emit(summary)
    return 0 if not args.verify or summary["verify"]["ok"] else 1


def cmd_verify(args):
    cfg = load_config(args, ("protocol", "l1", "l2", "orientation"))
    st = StateVector.load(args.state)
    rec = read_record(args.record)
    c, lat = build(cfg)
    try:
        fam = family_for(cfg, lat, rec)
        rep = verify(st, fam, args.tol)
    except (ToolkitError, KeyError, AssertionError) as exc:
        emit({"ok": False, "error": type(exc).__name__, "detail": str(exc)})
        return getattr(exc, "exit_code", 1)
    if not args.rows:
        rep = {k: v for k, v in rep.items() if k != "rows"} | {"failed": [r["name"] for r in rep["rows"] if not r["pass"]]}
    emit(rep)
    return 0 if rep["ok"] else 1


def cmd_depth(args):
    cfg = load_config(args, ("protocol", "l1", "l2", "orientation"))
    c, _ = build(cfg)
    out = depth_counts(c)
    out["peak_live_qubits"] = plan(c)[1]
    emit(out)
    return 0


def _parse_region(text):
    return [QubitId.parse(t.strip()) for t in text.split(",") if t.strip()]


def cmd_entropy(args):
    st = StateVector.load(args.state)
    regions = {f"r{k}": _parse_region(r) for k, r in enumerate(args.region)}
    rows = dg.entropy_table(st, regions)
    sys.stdout.write(dg.to_csv(rows))
    return 0


def cmd_tee(args):
    cfg = load_config(args, RUN_KEYS)
    c, lat = build(cfg)
    st, _ = run(c, policy_for(cfg), cap=cfg["cap"], precision=cfg["precision"], threads=cfg["threads"])
    data = dg.load_regions()
    if cfg["protocol"] == "toric":
        parts, target = data["toric"].get(str(cfg["l1"])), 1.0
    else:
        parts, target = data["d4"].get(f"{cfg['l1']}x{cfg['l2']}"), 3.0
    if not parts:
        raise ConfigError(f"no region choices for {cfg['protocol']} at this size in the data file")
    rep = dg.tee_report(st, parts, lat=lat, L=cfg["l1"], target=target)
    rep["protocol"] = cfg["protocol"]
    emit(rep)
    return 0


def cmd_shift(args):
    cfg = load_config(args, RUN_KEYS)
    if cfg["protocol"] != "d4":
        raise ConfigError("shift runs on the d4 protocol")
    c, lat = build(cfg)
    st, rec = run(c, policy_for(cfg), cap=cfg["cap"], precision=cfg["precision"], threads=cfg["threads"])
    fam = d4_family(lat, rec)
    pair = [int(v) for v in args.vertices.split(",")] if args.vertices else None
    out = dg.shift_experiment(lat, c, st, rec, fam, pair)
    emit(out)
    return 0


def cmd_anyons(args):
    if args.group.lower() == "product":
        if not args.factors:
            raise ConfigError("--group product needs --factors")
        g = an.make_group("product", factors=args.factors.split(","))
    else:
        g = an.make_group(args.group)
    qd = an.QuantumDouble(g)
    out = qd.to_dict()
    out["modular"] = an.check_modular(qd)
    if args.lagrangian == "auto":
        found = an.find_lagrangian_subgroups(qd)
        out["lagrangian"] = [{"members": [qd.anyons[k].name for k in s], "size": len(s)} for s in found]
    elif args.lagrangian:
        idx = [_find_anyon(qd, t) for t in args.lagrangian.split(";")]
        ok, rep = an.is_lagrangian(qd, idx)
        out["lagrangian"] = rep
    if args.bilayer:
        out["bilayer"] = an.bilayer_check(qd)
    emit(out)
    return 0


def _find_anyon(qd, text):
    # "[class],irrep" or "class,irrep" or an index
    text = text.strip()
    if text.isdigit():
        return int(text)
    cls, irrep = text.strip("()").split(",")
    return qd.find(cls.strip("[] "), irrep.strip()).index


def cmd_lattice_dump(args):
    cfg = load_config(args, ("l1", "l2"))
    lat = build_honeycomb_torus(cfg["l1"], cfg["l2"])
    out = lat.to_dict()
    if args.grid:
        out["grid"] = build_square_grid_embedding(lat).to_dict()
    emit(out)
    return 0


# -- parser -------------------------------------------------------------------

def _common(p, run_flags=True):
    p.add_argument("--config", help="JSON file with defaults; flags win")
    p.add_argument("--protocol", choices=PROTOCOLS)
    p.add_argument("--l1", type=int, help="first torus side (the side L for toric)")
    p.add_argument("--l2", type=int)
    p.add_argument("--orientation", choices=("up", "down", "both"), help="Q8 triangle choice")
    if run_flags:
        p.add_argument("--seed", type=int)
        p.add_argument("--policy", choices=POLICIES)
        p.add_argument("--record", help="record file replayed by --policy forced")
        p.add_argument("--precision", choices=PRECISIONS)
        p.add_argument("--cap", type=int, help="maximum live qubits")
        p.add_argument("--threads", type=int, help="worker threads (default: D4PREP_THREADS or all cores)")
        p.add_argument("--schedule", choices=("eager", "layered"))
        p.add_argument("--swap-signs", dest="swap_signs", action="store_const", const=True)


def make_parser():
    ap = argparse.ArgumentParser(prog="d4prep", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="run a protocol and write state and record")
    _common(p)
    p.add_argument("--out-state")
    p.add_argument("--out-record")
    p.add_argument("--verify", action="store_true", help="also check the stabilizer family")
    p.add_argument("--tol", type=float, default=1e-9)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("verify", help="check a saved state against its stabilizer family")
    _common(p, run_flags=False)
    p.add_argument("--state", required=True)
    p.add_argument("--record", required=True)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--rows", action="store_true", help="print every member")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("depth", help="layer counts of a protocol")
    _common(p, run_flags=False)
    p.set_defaults(func=cmd_depth)

    p = sub.add_parser("entropy", help="region entropies of a saved state, as CSV")
    p.add_argument("--state", required=True)
    p.add_argument("--region", action="append", required=True, help="comma-separated qubit names, e.g. e0,e1")
    p.set_defaults(func=cmd_entropy)

    p = sub.add_parser("tee", help="Kitaev-Preskill gamma over the shipped partitions")
    _common(p)
    p.set_defaults(func=cmd_tee)

    p = sub.add_parser("shift", help="entropy shift from vertex-Z insertion")
    _common(p)
    p.add_argument("--vertices", help="two vertex indices, e.g. 0,3 (default: first separated pair)")
    p.set_defaults(func=cmd_shift)

    p = sub.add_parser("anyons", help="quantum-double anyon data")
    p.add_argument("--group", required=True, help="d4, q8, z2, z2^n or product")
    p.add_argument("--factors", help="comma-separated factors for --group product")
    p.add_argument("--lagrangian", help="'auto' to search, or ';'-separated anyons like '[1],s1;[r2],1'")
    p.add_argument("--bilayer", action="store_true", help="check the bilayer correspondence rows")
    p.set_defaults(func=cmd_anyons)

    p = sub.add_parser("lattice", help="lattice utilities")
    lsub = p.add_subparsers(dest="lattice_command", required=True)
    d = lsub.add_parser("dump", help="print the lattice as JSON")
    d.add_argument("--config")
    d.add_argument("--l1", type=int)
    d.add_argument("--l2", type=int)
    d.add_argument("--grid", action="store_true", help="include the square-grid embedding")
    d.set_defaults(func=cmd_lattice_dump)
    return ap


def main(argv=None):
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except ToolkitError as exc:
        detail = {"error": type(exc).__name__, "exit_code": exc.exit_code, "detail": str(exc)}
        if getattr(exc, "peak", None) is not None:
            detail["peak_live_qubits"] = exc.peak
        print(json.dumps(detail), file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
