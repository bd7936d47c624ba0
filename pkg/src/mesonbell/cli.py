"""Command-line entry point: ``mesonbell <command> [options]``.

Options may also come from ``--config file.json`` (flat keys named like the
long options with dashes turned into underscores); explicit flags win.

Exit codes: 0 ran and reported, 1 usage or input error, 2 numeric or I/O
failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import warnings
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .detector import (
    IntegrationError,
    EfficiencyModel,
    Scheme,
    hardy_table,
    pss_closed_form,
    pss_integral_oracle,
)
from .entangled import joint_probability, joint_probability_beauty
from .inequalities import (
    Relation,
    ch_Q,
    chsh_search,
    chsh_value,
    curve_csv,
    curves_nested,
    eberhard_H,
    threshold_scan,
    wigner_uchiyama,
)
from .lhv import KasdaySampler, lhv_vs_qm_report
from .meson import MesonParams, Species, complex_to_json, parse_complex, transition_probability
from .montecarlo import ConsistencyError, estimate_inequalities, generate_events, write_event_log
from .regen import RegeneratorSpec, min_separation_time, prepare_hardy, regeneration_parameter

COMMON_DEFAULTS: dict[str, Any] = {
    "species": "kaon",
    "gamma_s": None,
    "gamma_l": None,
    "delta_m": None,
    "epsilon": None,
    "precision": 6,
    "threads": 1,
}

EFF_DEFAULTS: dict[str, Any] = {
    "scheme": "channel",
    "eta": 1.0,
    "eta_bar": 1.0,
    "eta_tau": 1.0,
    "window": None,
    "R": "-1",
}

DEFAULTS: dict[str, dict[str, Any]] = {
    "prob": {"single": None, "tau": 0.0, "joint": None, "tau_l": 0.0, "tau_r": 0.0},
    "hardy": {**EFF_DEFAULTS, "oracle": False},
    "scan": {
        **EFF_DEFAULTS,
        "eta_tau": "1,0.99,0.98,0.97",
        "relation": "grid",
        "resolution": 0.005,
        "out": None,
    },
    "chsh": {"search": False, "times": None, "t_max": 10.0, "step": 0.05},
    "wigner": {},
    "regen": {
        "r_abs": None,
        "r_phase": 0.0,
        "from_spec": None,
        "delta_tau": 4.8,
        "beta": None,
    },
    "lhv": {
        "n": 1_000_000,
        "seed": 0,
        "bins": 50,
        "t_max": None,
        "width": 0.2,
        "records_out": None,
    },
    "mc": {
        **EFF_DEFAULTS,
        "n": 1_000_000,
        "seed": 0,
        "policy": "random",
        "fixed": None,
        "block_size": 1_000_000,
        "out": None,
    },
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ------------------------------------------------------------------ output


def _round(x: float, precision: int):
    if isinstance(x, bool) or not isinstance(x, (float, np.floating)):
        return x
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return float(f"{x:.{precision}g}")


def _format(obj, precision: int):
    if isinstance(obj, dict):
        return {k: _format(v, precision) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_format(v, precision) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    return _round(obj, precision)


def _emit(payload: dict, cfg: dict) -> None:
    payload = {**payload, "config": cfg}
    print(json.dumps(_format(payload, cfg["precision"]), indent=2))


# ------------------------------------------------------------------ config


def _params(cfg: dict) -> MesonParams:
    overrides: dict[str, Any] = {}
    for key, field in (("gamma_s", "gamma_S"), ("gamma_l", "gamma_L"), ("delta_m", "delta_m")):
        if cfg.get(key) is not None:
            overrides[field] = float(cfg[key])
    if cfg.get("epsilon") is not None:
        overrides["epsilon"] = parse_complex(cfg["epsilon"])
    return MesonParams.defaults(cfg["species"], **overrides)


def _efficiency(cfg: dict, p: MesonParams, eta_tau: float | None = None) -> EfficiencyModel:
    et = float(cfg["eta_tau"]) if eta_tau is None else eta_tau
    return EfficiencyModel.build(
        cfg["scheme"], float(cfg["eta"]), float(cfg["eta_bar"]), et, p, cfg.get("window")
    )


def _floats(text) -> list[float]:
    if isinstance(text, (int, float)):
        return [float(text)]
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(v) for v in str(text).split(",") if v.strip()]


# ----------------------------------------------------------------- commands


def cmd_prob(cfg: dict) -> int:
    p = _params(cfg)
    out: dict[str, Any] = {}
    if cfg["single"] is None and cfg["joint"] is None:
        raise UsageError("prob needs --single A->B and/or --joint A,B")
    if cfg["single"] is not None:
        try:
            initial, final = (s.strip() for s in str(cfg["single"]).split("->"))
        except ValueError:
            raise UsageError(f"--single expects INITIAL->FINAL, got {cfg['single']!r}") from None
        tau = float(cfg["tau"])
        out["single"] = {
            "initial": initial,
            "final": final,
            "tau": tau,
            "probability": transition_probability(initial, final, tau, p),
        }
    if cfg["joint"] is not None:
        try:
            left, right = (s.strip() for s in str(cfg["joint"]).split(","))
        except ValueError:
            raise UsageError(f"--joint expects LEFT,RIGHT, got {cfg['joint']!r}") from None
        tl, tr = float(cfg["tau_l"]), float(cfg["tau_r"])
        fn = joint_probability_beauty if p.species is Species.BMESON else joint_probability
        out["joint"] = {
            "left": left,
            "right": right,
            "tau_l": tl,
            "tau_r": tr,
            "probability": fn(left, tl, right, tr, p),
        }
    _emit(out, cfg)
    return 0


def _inequality_block(table) -> dict:
    h = eberhard_H(table)
    try:
        q = ch_Q(table).to_dict()
    except ZeroDivisionError:
        q = None
    return {"H": h.to_dict(), "Q": q}


def cmd_hardy(cfg: dict) -> int:
    p = _params(cfg)
    eff = _efficiency(cfg, p)
    R = parse_complex(cfg["R"])
    table = hardy_table(R, eff, p)
    block = _inequality_block(table)
    violated = block["H"]["violated"] or bool(block["Q"] and block["Q"]["violated"])
    out = {
        "R": complex_to_json(R),
        "efficiency": eff.to_dict(),
        "table": table.as_dict(),
        **block,
        "H_infinite": block["H"]["value"] == "inf",
        "violated": violated,
    }
    if cfg["oracle"]:
        out["p_ks_ks_closed_form"] = pss_closed_form(eff, p)
        out["p_ks_ks_integral"] = pss_integral_oracle(eff.eta_tau, p, eff.window or 5.82)
    _emit(out, cfg)
    return 0


def cmd_scan(cfg: dict) -> int:
    p = _params(cfg)
    base = _efficiency(cfg, p, eta_tau=1.0)
    etas = _floats(cfg["eta_tau"])
    points = threshold_scan(etas, Relation(cfg["relation"]), float(cfg["resolution"]), p, base, parse_complex(cfg["R"]))
    text = curve_csv(points, cfg["precision"])
    nested = curves_nested(points) if len(etas) > 1 and Relation(cfg["relation"]) is Relation.GRID else None
    if cfg["out"]:
        path = Path(cfg["out"])
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text, encoding="utf-8", newline="\n")
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc}") from exc
        _emit({"csv": str(path), "points": len(points), "nested": nested}, cfg)
    else:
        sys.stdout.write(text)
    return 0


def cmd_chsh(cfg: dict) -> int:
    p = _params(cfg)
    out: dict[str, Any] = {}
    if cfg["times"] is not None:
        t = _floats(cfg["times"])
        if len(t) != 4:
            raise UsageError("--times expects four comma-separated proper times")
        s = chsh_value(*t, p)
        out["evaluation"] = {"times": t, "abs_S": s, "violated": s > 2.0}
    if cfg["search"] or cfg["times"] is None:
        out["search"] = chsh_search(p, float(cfg["t_max"]), float(cfg["step"])).to_dict()
    _emit(out, cfg)
    return 0


def cmd_wigner(cfg: dict) -> int:
    p = _params(cfg)
    _emit(wigner_uchiyama(p.epsilon).to_dict(), cfg)
    return 0


def cmd_regen(cfg: dict) -> int:
    p = _params(cfg)
    out: dict[str, Any] = {}
    if cfg["from_spec"]:
        spec = RegeneratorSpec.from_json(cfg["from_spec"])
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            r = regeneration_parameter(spec)
        out["regenerator"] = spec.to_dict()
        out["crossing_time"] = spec.crossing_time
        out["warnings"] = [str(w.message) for w in caught]
    elif cfg["r_abs"] is not None:
        r = complex(np.exp(1j * float(cfg["r_phase"]))) * float(cfg["r_abs"])
    else:
        raise UsageError("regen needs --r-abs [--r-phase] or --from-spec FILE")
    prep = prepare_hardy(r, p)
    beta = p.beta if cfg["beta"] is None else float(cfg["beta"])
    out.update({
        "r": complex_to_json(r),
        "T": prep.T,
        "R": complex_to_json(prep.R),
        "abs_R": abs(prep.R),
        "phase_mismatch_rad": prep.phase_mismatch,
        "state_lifetime_coeffs": [complex_to_json(complex(c)) for c in prep.state.coeffs.ravel()],
        "T_min": min_separation_time(float(cfg["delta_tau"]), beta) if beta else None,
        "T_ok": prep.T >= min_separation_time(float(cfg["delta_tau"]), beta) if beta else None,
    })
    _emit(out, cfg)
    return 0


def cmd_lhv(cfg: dict) -> int:
    p = _params(cfg)
    n = int(float(cfg["n"]))
    seed = int(cfg["seed"])
    batch = KasdaySampler(p, seed).sample(n)
    report = lhv_vs_qm_report(
        n, p, seed, int(cfg["bins"]),
        None if cfg["t_max"] is None else float(cfg["t_max"]),
        None, float(cfg["width"]), batch=batch,
    )
    out = report.to_dict()
    if cfg["records_out"]:
        path = Path(cfg["records_out"])
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            batch.write_csv(path, cfg["precision"])
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc}") from exc
        out["records_csv"] = str(path)
    _emit(out, cfg)
    return 0


def cmd_mc(cfg: dict) -> int:
    p = _params(cfg)
    eff = _efficiency(cfg, p)
    R = parse_complex(cfg["R"])
    fixed = None
    if cfg["fixed"]:
        fixed = tuple(s.strip() for s in str(cfg["fixed"]).split(","))
        if len(fixed) != 2:
            raise UsageError("--fixed expects LEFT,RIGHT settings such as S,L")
    log = generate_events(
        R, eff, int(float(cfg["n"])), int(cfg["seed"]), cfg["policy"], fixed, p,
        int(cfg["block_size"]), int(cfg["threads"]),
    )
    exact = hardy_table(R, eff, p)
    out: dict[str, Any] = {"n": len(log), "exact": _inequality_block(exact)}
    try:
        out["estimate"] = estimate_inequalities(log).to_dict()
    except ValueError as exc:  # e.g. a fixed policy leaves setting pairs empty
        out["estimate"] = None
        out["estimate_error"] = str(exc)
    if cfg["out"]:
        csv_path, meta_path = write_event_log(log, cfg["out"])
        out["events_csv"] = str(csv_path)
        out["metadata_json"] = str(meta_path)
    _emit(out, cfg)
    return 0


COMMANDS = {
    "prob": cmd_prob,
    "hardy": cmd_hardy,
    "scan": cmd_scan,
    "chsh": cmd_chsh,
    "wigner": cmd_wigner,
    "regen": cmd_regen,
    "lhv": cmd_lhv,
    "mc": cmd_mc,
}


# ------------------------------------------------------------------ parser


def _add_eff(sp: argparse.ArgumentParser, multi_eta_tau: bool = False) -> None:
    S = argparse.SUPPRESS
    sp.add_argument("--scheme", choices=[s.value for s in Scheme], default=S)
    sp.add_argument("--eta", type=float, default=S, help="K0 detection efficiency")
    sp.add_argument("--eta-bar", type=float, default=S, help="K0bar detection efficiency")
    if multi_eta_tau:
        sp.add_argument("--eta-tau", default=S, help="comma-separated lifetime efficiencies")
    else:
        sp.add_argument("--eta-tau", type=float, default=S, help="lifetime-measurement efficiency")
    sp.add_argument("--window", type=float, default=S, help="identification window in tau_S")
    sp.add_argument("--R", default=S, help="regeneration amplitude, e.g. -1 or 0.1+0.9j")


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=S, help="JSON file with default option values")
    common.add_argument("--species", choices=[s.value for s in Species], default=S)
    common.add_argument("--gamma-s", type=float, default=S)
    common.add_argument("--gamma-l", type=float, default=S)
    common.add_argument("--delta-m", type=float, default=S, help="mass difference in units of the width")
    common.add_argument("--epsilon", default=S, help="CP-violation parameter, complex")
    common.add_argument("--precision", type=int, default=S, help="significant digits (default 6)")
    common.add_argument("--threads", type=int, default=S)

    parser = _Parser(prog="mesonbell", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sp = sub.add_parser("prob", parents=[common], help="single and joint probabilities")
    sp.add_argument("--single", default=S, metavar="A->B")
    sp.add_argument("--tau", type=float, default=S)
    sp.add_argument("--joint", default=S, metavar="A,B")
    sp.add_argument("--tau-l", type=float, default=S)
    sp.add_argument("--tau-r", type=float, default=S)

    sp = sub.add_parser("hardy", parents=[common], help="probability table, H and Q")
    _add_eff(sp)
    sp.add_argument("--oracle", action="store_true", default=S, help="also integrate p_ks_ks numerically")

    sp = sub.add_parser("scan", parents=[common], help="efficiency threshold curves as CSV")
    _add_eff(sp, multi_eta_tau=True)
    sp.add_argument("--relation", choices=[r.value for r in Relation], default=S)
    sp.add_argument("--resolution", type=float, default=S)
    sp.add_argument("--out", default=S)

    sp = sub.add_parser("chsh", parents=[common], help="CHSH search over decay times")
    sp.add_argument("--search", action="store_true", default=S)
    sp.add_argument("--times", default=S, metavar="T1,T2,T3,T4")
    sp.add_argument("--t-max", type=float, default=S)
    sp.add_argument("--step", type=float, default=S)

    sub.add_parser("wigner", parents=[common], help="Wigner-type inequality at epsilon")

    sp = sub.add_parser("regen", parents=[common], help="prepare the Hardy state with a regenerator")
    sp.add_argument("--r-abs", type=float, default=S)
    sp.add_argument("--r-phase", type=float, default=S, help="phase of r in radians")
    sp.add_argument("--from-spec", default=S, help="JSON regenerator description")
    sp.add_argument("--delta-tau", type=float, default=S)
    sp.add_argument("--beta", type=float, default=S)

    sp = sub.add_parser("lhv", parents=[common], help="hidden-variable sampler audit")
    sp.add_argument("--n", type=float, default=S)
    sp.add_argument("--seed", type=int, default=S)
    sp.add_argument("--bins", type=int, default=S)
    sp.add_argument("--t-max", type=float, default=S)
    sp.add_argument("--width", type=float, default=S)
    sp.add_argument("--records-out", default=S)

    sp = sub.add_parser("mc", parents=[common], help="Monte Carlo Hardy test")
    _add_eff(sp)
    sp.add_argument("--n", type=float, default=S)
    sp.add_argument("--seed", type=int, default=S)
    sp.add_argument("--policy", choices=["random", "fixed"], default=S)
    sp.add_argument("--fixed", default=S, metavar="S,L")
    sp.add_argument("--block-size", type=int, default=S)
    sp.add_argument("--out", default=S)
    return parser


def resolve_config(ns: argparse.Namespace) -> dict:
    """Built-in defaults, then the config file, then explicit flags."""
    explicit = {k: v for k, v in vars(ns).items() if k not in ("command", "config")}
    command = ns.command
    allowed = {**COMMON_DEFAULTS, **DEFAULTS[command]}
    cfg = dict(allowed)
    if getattr(ns, "config", None):
        path = Path(ns.config)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise UsageError(f"config {path} must hold a JSON object")
        data = {k.replace("-", "_"): v for k, v in data.items()}
        unknown = sorted(set(data) - set(allowed) - {"command"})
        if unknown:
            raise UsageError(f"unknown keys in {path} for '{command}': {unknown}")
        cfg.update({k: v for k, v in data.items() if k != "command"})
    cfg.update(explicit)
    cfg["command"] = command
    return cfg


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        cfg = resolve_config(ns)
        return COMMANDS[ns.command](cfg)
    except UsageError as exc:
        print(f"mesonbell {ns.command}: error: {exc}", file=sys.stderr)
        return 1
    except (IntegrationError, ConsistencyError, ArithmeticError, OSError) as exc:
        print(f"mesonbell {ns.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (ValueError, TypeError, KeyError) as exc:
        print(f"mesonbell {ns.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
