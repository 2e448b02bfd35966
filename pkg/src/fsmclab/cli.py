"""Command-line client.

Dispatches in-process by default; ``--server URL`` posts the same payloads to
a running service instead, so outputs match either way.  Exit codes: 0 on
success, 1 on a package/runtime error (JSON diagnostics on stderr), 2 on
usage errors.
"""

from __future__ import annotations

import argparse
import json
import sys
import urllib.error
import urllib.request

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .errors import FsmclabError, IoFailure
from .harness import ResultTable, parse_config
from .service import handlers

_FACTORS_DEFAULT = "0.5,0.75,0.9,1.0,1.1,1.25,1.5"


def _add_common(p: argparse.ArgumentParser, config_required: bool = True):
    p.add_argument("-c", "--config", required=config_required, metavar="TOML",
                   help="experiment config file")
    p.add_argument("--server", metavar="URL", default=None,
                   help="post to a running service instead of computing locally")
    p.add_argument("--format", choices=("text", "json"), default="text",
                   help="stdout rendering")
    p.add_argument("--seed", type=int, default=None, help="override run.seed")
    p.add_argument("--trials", type=int, default=None, help="override run.trials")
    p.add_argument("--workers", type=int, default=None, help="override run.workers")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fsmclab", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a config: chain, scheme/delay, codebooks")
    _add_common(p)

    p = sub.add_parser("capacity", help="feedback capacity and growth factors")
    _add_common(p)

    p = sub.add_parser("alloc", help="solve the per-state power allocation")
    _add_common(p)

    p = sub.add_parser("simulate", help="run coding trials and tabulate metrics")
    _add_common(p)
    p.add_argument("--horizon", type=int, default=None, help="single K overriding code.horizons")
    p.add_argument("--unbiased", action="store_true", help="unbias estimates before decoding")
    p.add_argument("--out", metavar="PATH", default=None, help="write the result table here")
    p.add_argument("--out-format", choices=("csv", "json"), default=None,
                   help="table file format (default: from PATH suffix)")
    p.add_argument("--dump-traces", metavar="PATH", default=None,
                   help="write full traces of the first trials (local runs only)")

    p = sub.add_parser("pe-curve", help="exact conditional error probability vs horizon")
    _add_common(p)
    p.add_argument("--paths", type=int, default=200, help="gain paths per horizon")
    p.add_argument("--worst-case", action="store_true", help="worst message instead of uniform")
    p.add_argument("--unbiased", action="store_true")
    p.add_argument("--out", metavar="PATH", default=None, help="write points as JSON")

    p = sub.add_parser("growth", help="measured state-product growth vs the rate target")
    _add_common(p)
    p.add_argument("--horizon", type=int, default=100_000)
    p.add_argument("--seeds", type=int, default=20)

    p = sub.add_parser("mss", help="mean-square stability verdicts on a gain grid")
    _add_common(p)
    p.add_argument("--factors", default=_FACTORS_DEFAULT,
                   help="comma-separated feedback factors")
    p.add_argument("--horizon", type=int, default=400)
    p.add_argument("--paths", type=int, default=64)

    p = sub.add_parser("cheap-control", help="average power to hold the loop, per gain factor")
    _add_common(p)
    p.add_argument("--factors", default=_FACTORS_DEFAULT)
    p.add_argument("--horizon", type=int, default=200)
    p.add_argument("--paths", type=int, default=256)

    p = sub.add_parser("reproduce-paper-example",
                       help="run the bundled example and compare to its recorded targets")
    _add_common(p, config_required=False)
    p.add_argument("--out", metavar="PATH", default=None, help="write the result table here")

    return ap


def _load_toml(path: str) -> dict:
    try:
        with open(path, "rb") as fp:
            return tomllib.load(fp)
    except OSError as e:
        raise IoFailure(f"cannot read config {path}: {e}") from e
    except tomllib.TOMLDecodeError as e:
        raise IoFailure(f"config {path} is not valid TOML: {e}") from e


def _apply_overrides(data: dict, args) -> dict:
    run = data.setdefault("run", {})
    if args.seed is not None:
        run["seed"] = args.seed
    if args.trials is not None:
        run["trials"] = args.trials
    if args.workers is not None:
        run["workers"] = args.workers
    if getattr(args, "unbiased", False):
        run["unbiased"] = True
    if getattr(args, "horizon", None) is not None and args.command == "simulate":
        data.setdefault("code", {})["horizons"] = [args.horizon]
    return data


def _post(server: str, path: str, payload: dict) -> dict:
    req = urllib.request.Request(
        server.rstrip("/") + path, data=json.dumps(payload).encode(),
        headers={"Content-Type": "application/json"}, method="POST")
    try:
        with urllib.request.urlopen(req) as resp:
            return json.loads(resp.read().decode())
    except urllib.error.HTTPError as e:
        body = e.read().decode(errors="replace")
        try:
            detail = json.loads(body)
        except json.JSONDecodeError:
            detail = {"error": "HTTPError", "detail": body}
        raise IoFailure(f"server returned {e.code}: {json.dumps(detail)}") from e
    except urllib.error.URLError as e:
        raise IoFailure(f"cannot reach server {server}: {e.reason}") from e


def _parse_factors(text: str) -> list:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise IoFailure(f"bad --factors value {text!r}; expected comma-separated numbers")


def _dump_traces(cfg, path: str, limit: int = 8):
    from .channel import realize
    from .codec import decode, encode, random_message
    from .harness import build_setup, derive_rng
    from .schemes import run_trial

    K = cfg.horizons[0]
    setup = build_setup(cfg, K)
    out = []
    for t in range(min(limit, cfg.trials)):
        rng = derive_rng(cfg.seed, K, t)
        msg = random_message(setup.codebook, rng)
        real = realize(cfg.process, K + 1, rng)
        trace = run_trial(setup.params, real, encode(setup.codebook, msg), K)
        bias = trace.estimate_bias() if cfg.unbiased else None
        out.append({
            "trial": t,
            "message": list(msg),
            "decoded": list(decode(setup.codebook, trace.final_estimate(), bias)),
            "states": None if trace.state_idx is None else trace.state_idx.tolist(),
            "gains": trace.s.tolist(),
            "input": trace.u.tolist(),
            "output": trace.y.tolist(),
            "estimate": trace.estimate.tolist(),
            "residual_max": trace.residual_max,
        })
    try:
        with open(path, "w") as fp:
            json.dump(out, fp, indent=2)
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e


# -- text renderers ------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _render_table(result: dict) -> str:
    cols = result["columns"]
    body = [[_fmt(v) for v in row] for row in result["rows"]]
    widths = [max(len(c), *(len(r[j]) for r in body)) if body else len(c)
              for j, c in enumerate(cols)]
    lines = ["  ".join(c.rjust(w) for c, w in zip(cols, widths))]
    for r in body:
        lines.append("  ".join(v.rjust(w) for v, w in zip(r, widths)))
    return "\n".join(lines)


def _render(command: str, result: dict) -> str:
    if command == "validate":
        lines = ["ok" if result["ok"] else "INVALID"]
        lines += [f"  problem: {p}" for p in result["problems"]]
        for k, s in sorted(result["summary"].items(), key=lambda kv: int(kv[0])):
            lines.append(f"  K={k}: C={s['capacity_bits_per_use']:.6g} b/use, "
                         f"counts={s['counts']}, width={s['width_bits']} bits, "
                         f"rate={s['rate_bits_per_use']:.6g} b/use")
        return "\n".join(lines)
    if command == "capacity":
        lines = [f"capacity: {result['bits_per_use']:.12g} bits/use "
                 f"(growth factor {result['total_growth']:.6g}, delay {result['delay']})"]
        for j, (g, w) in enumerate(zip(result["powers"], result["rate_share_growth"])):
            lines.append(f"  state {j}: power={g:.6g}  share_growth={w:.6g}")
        for k, v in sorted(result["block_bits"].items(), key=lambda kv: int(kv[0])):
            lines.append(f"  block bits at K={k}: {v:.6g}")
        if result["n_samples"]:
            lines.append(f"  (Monte Carlo, n={result['n_samples']}, stderr={result['stderr']:.2e})")
        return "\n".join(lines)
    if command == "alloc":
        lines = [f"powers: {[round(v, 9) for v in result['powers']]}",
                 f"dual: {result['dual']:.10g}   spent: {result['spent']:.10g}",
                 f"objective: {result['objective_bits']:.10g} bits/use   "
                 f"kkt residual: {result['kkt_residual']:.2e}   ({result['method']})"]
        return "\n".join(lines)
    if command == "simulate":
        return _render_table(result)
    if command == "pe-curve":
        lines = [f"mode={result['mode']} unbiased={result['unbiased']}"]
        for p in result["points"]:
            lines.append(f"  K={p['horizon']}: rate={p['rate_bits_per_use']:.4g} b/use  "
                         f"pe={p['pe_exact_mean']:.3e} (+-{p['pe_exact_stderr']:.1e})  "
                         f"bound={p['pe_bound_mean']:.3e}")
        return "\n".join(lines)
    if command == "growth":
        t = result["target"]
        lines = [f"measured growth: {result['mean']:.8g} bits/use over "
                 f"{len(result['per_seed'])} seeds at K={result['horizon']}"]
        if t is not None:
            lines.append(f"rate target: {t:.8g} bits/use   |error|={result['abs_error']:.3e}")
        return "\n".join(lines)
    if command == "mss":
        lo, hi = result["window_lo"], result["window_hi"]
        lines = []
        if lo is not None:
            lines.append(f"worst-case stable window: ({lo:.6g}, {'inf' if hi is None else f'{hi:.6g}'})")
        for r in result["rows"]:
            mark = "stable" if r["stable"] else "UNSTABLE"
            extra = f"  rho={r['spectral_radius']:.4g}"
            if r["max_abs_closed_loop"] is not None:
                extra += f"  max|acl|={r['max_abs_closed_loop']:.4g}"
            lines.append(f"  factor {r['factor']:<5g} {mark}{extra}")
        return "\n".join(lines)
    if command == "cheap-control":
        lines = [f"budget: {result['budget']:.6g}"]
        for r in result["rows"]:
            if r["stable"]:
                lines.append(f"  factor {r['factor']:<5g} power {r['value']:.6g} "
                             f"(+-{r['stderr']:.2g})")
            else:
                lines.append(f"  factor {r['factor']:<5g} UNSTABLE")
        if result["best_factor"] is not None:
            lines.append(f"best factor: {result['best_factor']:g}")
        return "\n".join(lines)
    if command == "reproduce-paper-example":
        lines = [f"capacity: {result['capacity_bits_per_use']:.12g} bits/use",
                 f"codeword counts: {result['counts']}",
                 _render_table(result["table"])]
        for c in result["checks"]:
            verdict = "within" if c["within"] else "OUTSIDE"
            lines.append(f"  {c['name']}: computed {c['computed']:.4f} vs recorded "
                         f"{c['target']} +- {c['tolerance']}  -> {verdict}")
        return "\n".join(lines)
    return json.dumps(result, indent=2)


# -- dispatch ------------------------------------------------------------------

def _run(args) -> dict:
    needs_config = args.command != "reproduce-paper-example"
    data = None
    cfg = None
    if needs_config:
        data = _apply_overrides(_load_toml(args.config), args)
        if not args.server:
            cfg = parse_config(data)

    if args.command == "validate":
        if args.server:
            return _post(args.server, "/validate", {"config": data})
        return handlers.handle_validate(cfg)

    if args.command == "capacity":
        if args.server:
            return _post(args.server, "/capacity", {"config": data})
        return handlers.handle_capacity(cfg)

    if args.command == "alloc":
        if args.server:
            return _post(args.server, "/alloc", {"config": data})
        return handlers.handle_alloc(cfg)

    if args.command == "simulate":
        if args.server:
            if args.dump_traces:
                raise IoFailure("--dump-traces needs a local run (traces stay in-process)")
            result = _post(args.server, "/simulate", {"config": data})
        else:
            result = handlers.handle_simulate(cfg)
            if args.dump_traces:
                _dump_traces(cfg, args.dump_traces)
        if args.out:
            table = ResultTable(columns=result["columns"], rows=result["rows"],
                                meta=result["meta"])
            table.persist(args.out, args.out_format)
        return result

    if args.command == "pe-curve":
        mode = "worst" if args.worst_case else "uniform"
        if args.server:
            result = _post(args.server, "/pe-curve",
                           {"config": data, "n_paths": args.paths, "mode": mode,
                            "unbiased": args.unbiased})
        else:
            result = handlers.handle_pe_curve(cfg, n_paths=args.paths, mode=mode,
                                              unbiased=args.unbiased)
        if args.out:
            try:
                with open(args.out, "w") as fp:
                    json.dump(result, fp, indent=2)
            except OSError as e:
                raise IoFailure(f"cannot write {args.out}: {e}") from e
        return result

    if args.command == "growth":
        if args.server:
            return _post(args.server, "/growth",
                         {"config": data, "horizon": args.horizon, "seeds": args.seeds})
        return handlers.handle_growth(cfg, horizon=args.horizon, seeds=args.seeds)

    if args.command == "mss":
        factors = _parse_factors(args.factors)
        if args.server:
            return _post(args.server, "/mss",
                         {"config": data, "factors": factors,
                          "horizon": args.horizon, "n_paths": args.paths})
        return handlers.handle_mss(cfg, factors, horizon=args.horizon,
                                   n_paths=args.paths)

    if args.command == "cheap-control":
        factors = _parse_factors(args.factors)
        if args.server:
            return _post(args.server, "/cheap-control",
                         {"config": data, "factors": factors,
                          "horizon": args.horizon, "n_paths": args.paths})
        return handlers.handle_cheap_control(cfg, factors, horizon=args.horizon,
                                             n_paths=args.paths)

    # reproduce-paper-example
    payload = {"workers": args.workers or 1}
    if args.trials is not None:
        payload["trials"] = args.trials
    if args.server:
        result = _post(args.server, "/reproduce-paper-example", payload)
    else:
        result = handlers.handle_reproduce(**payload)
    if args.out:
        t = result["table"]
        ResultTable(columns=t["columns"], rows=t["rows"], meta=t["meta"]).persist(args.out)
    return result


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        result = _run(args)
    except FsmclabError as e:
        print(json.dumps({"error": type(e).__name__, "detail": str(e)}),
              file=sys.stderr)
        return 1
    if args.format == "json":
        print(json.dumps(result, indent=2))
    else:
        print(_render(args.command, result))
    return 0


if __name__ == "__main__":
    sys.exit(main())
