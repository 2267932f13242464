"""Command-line entry point.

Subcommands: decode, sweep, ablate, trace-render, serve-oracle. Every
decode option lives in one RunConfig schema that drives the dataclass,
the --help output, the JSON config file keys, and the environment
variable names, so none of them can drift apart.

Precedence (highest wins): command-line flag > DLLM_DECODE_<FIELD> env
var > --config file entry > built-in default.

Exit codes: 0 success, 2 configuration/usage error, 3 backend or
connection error, 4 forward-step budget violation, 5 malformed trace
input.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, fields as dc_fields

from .backends import CountingBackend, MarkovOracleBackend
from .core import init_state, read_trace, trace_header, write_trace
from .harness import (
    BudgetViolation,
    SweepSpec,
    ablation_refine_steps,
    gen_cloze_suite,
    run_decode,
    run_sweep,
)
from .oracle import load_oracle_file
from .protocol import LogitsServer, ProtocolError, RemoteBackend
from .render import render_html, render_text

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BACKEND = 3
EXIT_BUDGET = 4
EXIT_TRACE = 5

ENV_PREFIX = "DLLM_DECODE_"


@dataclass
class RunConfig:
    strategy: str = "vanilla"
    backend: str = "oracle"
    T: int = 16
    rho: float = 0.5
    gamma_max: float = 0.8
    gamma_min: float = 0.4
    lambda_eot: float = 1.0
    seed: int = 0
    temperature: float = 1.0
    mode: str = "greedy"
    metric: str = "maxprob"
    prompt: str = ""
    prompt_file: str = ""
    gen_len: int = 32
    oracle_spec: str = ""
    endpoint: str = ""
    t_on: float = 0.55
    t_off: float = 0.05
    alpha_on: float = 0.9
    max_remask: int = -1
    trace_out: str = ""
    report_out: str = ""


# (field, type, choices, help) - single source for flags, env vars, config keys.
FIELD_SPECS = [
    ("strategy", str, ("vanilla", "tolerator", "rcr", "remdm"), "decoding strategy"),
    ("backend", str, ("oracle", "remote"), "logits backend"),
    ("T", int, None, "total forward-step budget"),
    ("rho", float, None, "fill-up fraction of the budget (tolerator)"),
    ("gamma_max", float, None, "initial refinement remask rate"),
    ("gamma_min", float, None, "final refinement remask rate"),
    ("lambda_eot", float, None, "end-of-text penalty factor (>= 1)"),
    ("seed", int, None, "run seed"),
    ("temperature", float, None, "sampling temperature"),
    ("mode", str, ("greedy", "categorical"), "sampling mode"),
    ("metric", str, ("maxprob", "neg_entropy", "margin"), "acceptance confidence metric"),
    ("prompt", str, None, "comma-separated prompt token ids"),
    ("prompt_file", str, None, "file with comma/whitespace-separated prompt ids"),
    ("gen_len", int, None, "number of tokens to generate"),
    ("oracle_spec", str, None, "path to a chain oracle JSON file"),
    ("endpoint", str, None, "host:port of a remote logits server"),
    ("t_on", float, None, "ReMDM window upper bound"),
    ("t_off", float, None, "ReMDM window lower bound"),
    ("alpha_on", float, None, "ReMDM keep probability inside the window"),
    ("max_remask", int, None, "RCR max remasks per step (-1 = default)"),
    ("trace_out", str, None, "write the step trace to this path"),
    ("report_out", str, None, "write a JSON report to this path"),
]


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_CONFIG):
        super().__init__(message)
        self.code = code


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-") if name != "T" else "--T"


def add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, help="JSON config file (flags override it)")
    for name, typ, choices, help_text in FIELD_SPECS:
        parser.add_argument(_flag(name), dest=name, type=typ, choices=choices, default=None, help=help_text)


def build_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        try:
            with open(args.config, "r", encoding="utf-8") as f:
                file_cfg = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise CliError(f"cannot read config file: {e}")
        known = {f.name for f in dc_fields(RunConfig)}
        for key, value in file_cfg.items():
            if key not in known:
                raise CliError(f"unknown config key {key!r}")
            setattr(cfg, key, type(getattr(cfg, key))(value))
    for name, typ, choices, _ in FIELD_SPECS:
        env = os.environ.get(ENV_PREFIX + name.upper())
        if env is not None:
            try:
                value = typ(env)
            except ValueError as e:
                raise CliError(f"bad env value for {name}: {e}")
            if choices and value not in choices:
                raise CliError(f"env value for {name} must be one of {choices}")
            setattr(cfg, name, value)
    for name, _, _, _ in FIELD_SPECS:
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    return cfg


def parse_prompt(cfg: RunConfig):
    text = cfg.prompt
    if cfg.prompt_file:
        try:
            with open(cfg.prompt_file, "r", encoding="utf-8") as f:
                text = f.read()
        except OSError as e:
            raise CliError(f"cannot read prompt file: {e}")
    if not text.strip():
        raise CliError("no prompt given (use --prompt or --prompt-file)")
    try:
        return [int(t) for t in text.replace(",", " ").split()]
    except ValueError as e:
        raise CliError(f"prompt must be integer token ids: {e}")


def open_backend(cfg: RunConfig):
    """Returns (backend, oracle_spec or None, symbols or None)."""
    if cfg.backend == "oracle":
        if not cfg.oracle_spec:
            raise CliError("--oracle-spec is required with the oracle backend")
        try:
            spec, vocab, symbols = load_oracle_file(cfg.oracle_spec)
        except (OSError, KeyError, ValueError, json.JSONDecodeError) as e:
            raise CliError(f"cannot load oracle spec: {e}")
        return MarkovOracleBackend(spec, vocab), spec, symbols
    if cfg.backend == "remote":
        if not cfg.endpoint:
            raise CliError("--endpoint is required with the remote backend")
        host, _, port = cfg.endpoint.rpartition(":")
        if not host or not port.isdigit():
            raise CliError(f"endpoint must be host:port, got {cfg.endpoint!r}")
        try:
            return RemoteBackend(host, int(port)), None, None
        except (OSError, ProtocolError) as e:
            raise CliError(f"cannot connect to {cfg.endpoint}: {e}", EXIT_BACKEND)
    raise CliError(f"unknown backend {cfg.backend!r}")


def strategy_overrides(cfg: RunConfig) -> dict:
    overrides = {"sampler": {"temperature": cfg.temperature, "mode": cfg.mode, "seed": cfg.seed}, "metric": cfg.metric}
    if cfg.strategy == "tolerator":
        overrides.update(
            rho=cfg.rho, gamma_max=cfg.gamma_max, gamma_min=cfg.gamma_min, lambda_eot=cfg.lambda_eot
        )
    elif cfg.strategy == "remdm":
        overrides.update(t_on=cfg.t_on, t_off=cfg.t_off, alpha_on=cfg.alpha_on)
    elif cfg.strategy == "rcr" and cfg.max_remask >= 0:
        overrides.update(max_remask=cfg.max_remask)
    return overrides


def cmd_decode(args: argparse.Namespace) -> int:
    cfg = build_config(args)
    prompt = parse_prompt(cfg)
    backend, _spec, symbols = open_backend(cfg)
    try:
        counting = CountingBackend(backend)
        try:
            state = init_state(prompt, cfg.gen_len, backend.vocab)
        except ValueError as e:
            raise CliError(str(e))
        try:
            final, traces = run_decode(cfg.strategy, state, counting, cfg.T, cfg.seed, strategy_overrides(cfg))
        except ProtocolError as e:
            raise CliError(f"backend failure: {e}", EXIT_BACKEND)
        if counting.calls != cfg.T:
            raise CliError(
                f"budget violation: {counting.calls} backend calls for budget {cfg.T}", EXIT_BUDGET
            )
        ids = [int(t) for t in final.tokens]
        print(" ".join(str(t) for t in ids))
        if symbols is not None:
            print("".join(str(symbols[t]) for t in ids))
        if cfg.trace_out:
            write_trace(cfg.trace_out, traces, header=trace_header(prompt, cfg.gen_len, backend.vocab))
        return EXIT_OK
    finally:
        if hasattr(backend, "close"):
            backend.close()


def _parse_int_list(text: str, what: str):
    try:
        return [int(t) for t in text.replace(",", " ").split()]
    except ValueError as e:
        raise CliError(f"bad {what}: {e}")


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = build_config(args)
    backend, spec, _symbols = open_backend(cfg)
    if spec is None:
        raise CliError("sweep requires the oracle backend")
    suite = gen_cloze_suite(spec, args.suite_n, args.suite_len, args.suite_prompt_len, args.suite_seed)
    sweep = SweepSpec(
        strategies=tuple(args.strategies.split(",")),
        T_values=tuple(_parse_int_list(args.T_values, "--T-values")),
        seeds=tuple(_parse_int_list(args.seeds, "--seeds")),
        overrides={cfg.strategy: strategy_overrides(cfg)} if args.apply_overrides else {},
    )
    try:
        table = run_sweep(sweep, suite, backend, spec)
    except BudgetViolation as e:
        raise CliError(str(e), EXIT_BUDGET)
    if args.csv_out:
        table.to_csv(args.csv_out)
    if cfg.report_out:
        table.to_json_report(cfg.report_out)
    for row in table.aggregates():
        print(
            f"{row.strategy:14s} T={row.T:<4d} mean={row.mean:.4f} stdev={row.stdev:.4f} "
            f"n={row.n} tokens/forward={row.tokens_per_forward:.2f}"
        )
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = build_config(args)
    backend, spec, _symbols = open_backend(cfg)
    if spec is None:
        raise CliError("ablate requires the oracle backend")
    suite = gen_cloze_suite(spec, args.suite_n, args.suite_len, args.suite_prompt_len, args.suite_seed)
    seeds = tuple(_parse_int_list(args.seeds, "--seeds"))
    try:
        table = ablation_refine_steps(
            args.fill_steps,
            _parse_int_list(args.R_values, "--R-values"),
            suite,
            backend,
            spec,
            seeds=seeds,
            overrides={"lambda_eot": cfg.lambda_eot, "gamma_max": cfg.gamma_max, "gamma_min": cfg.gamma_min},
        )
    except BudgetViolation as e:
        raise CliError(str(e), EXIT_BUDGET)
    if args.csv_out:
        table.to_csv(args.csv_out)
    if cfg.report_out:
        table.to_json_report(cfg.report_out)
    for row in table.aggregates():
        print(f"{row.strategy:16s} T={row.T:<4d} mean={row.mean:.4f} stdev={row.stdev:.4f} n={row.n}")
    return EXIT_OK


def cmd_trace_render(args: argparse.Namespace) -> int:
    try:
        header, traces = read_trace(args.trace)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as e:
        raise CliError(f"malformed trace: {e}", EXIT_TRACE)
    if header is None:
        raise CliError("trace file has no header record; re-run decode with --trace-out", EXIT_TRACE)
    symbols = None
    if args.oracle_spec:
        try:
            _spec, _vocab, symbols = load_oracle_file(args.oracle_spec)
        except (OSError, KeyError, ValueError, json.JSONDecodeError) as e:
            raise CliError(f"cannot load oracle spec: {e}")
    try:
        if args.format == "html":
            text = render_html(header, traces, symbols)
        else:
            text = render_text(header, traces, symbols)
    except (KeyError, IndexError, ValueError) as e:
        raise CliError(f"malformed trace: {e}", EXIT_TRACE)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text)
    else:
        print(text, end="")
    return EXIT_OK


def cmd_serve_oracle(args: argparse.Namespace) -> int:
    cfg = build_config(args)
    if not cfg.oracle_spec:
        raise CliError("--oracle-spec is required")
    try:
        spec, vocab, _symbols = load_oracle_file(cfg.oracle_spec)
    except (OSError, KeyError, ValueError, json.JSONDecodeError) as e:
        raise CliError(f"cannot load oracle spec: {e}")
    endpoint = cfg.endpoint or "127.0.0.1:0"
    host, _, port = endpoint.rpartition(":")
    if not host or not port.isdigit():
        raise CliError(f"endpoint must be host:port, got {endpoint!r}")
    backend = MarkovOracleBackend(spec, vocab)
    try:
        server = LogitsServer(backend, host, int(port))
    except OSError as e:
        raise CliError(f"cannot bind {endpoint}: {e}", EXIT_BACKEND)
    print(f"serving oracle on {server.address[0]}:{server.port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dllm-decode",
        description="Decoding engine for masked discrete diffusion language models.",
        epilog="exit codes: 0 ok, 2 config error, 3 backend error, 4 budget violation, 5 bad trace",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decode", help="run one decode and print the output tokens")
    add_config_flags(p)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("sweep", help="run a strategy x budget sweep on the synthetic suite")
    add_config_flags(p)
    p.add_argument("--strategies", default="vanilla,tolerator", help="comma-separated strategy list")
    p.add_argument("--T-values", dest="T_values", default="4,8,16", help="comma-separated budgets")
    p.add_argument("--seeds", default="0,1,2", help="comma-separated seeds (at least 3)")
    p.add_argument("--suite-n", type=int, default=20, help="instances in the synthetic suite")
    p.add_argument("--suite-len", type=int, default=64, help="sequence length")
    p.add_argument("--suite-prompt-len", type=int, default=16, help="prompt length")
    p.add_argument("--suite-seed", type=int, default=0, help="suite sampling seed")
    p.add_argument("--csv-out", default="", help="write per-decode records CSV here")
    p.add_argument("--apply-overrides", action="store_true", help="apply decode flags to --strategy's cells")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablate", help="refinement-steps ablation with a fixed fill-up budget")
    add_config_flags(p)
    p.add_argument("--fill-steps", dest="fill_steps", type=int, default=16)
    p.add_argument("--R-values", dest="R_values", default="0,4,8", help="refinement step counts")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--suite-n", type=int, default=20)
    p.add_argument("--suite-len", type=int, default=64)
    p.add_argument("--suite-prompt-len", type=int, default=16)
    p.add_argument("--suite-seed", type=int, default=0)
    p.add_argument("--csv-out", default="")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("trace-render", help="render a trace log as colored text or HTML")
    p.add_argument("--trace", required=True, help="trace file written by decode --trace-out")
    p.add_argument("--format", choices=("text", "html"), default="text")
    p.add_argument("--out", default="", help="output path (default: stdout)")
    p.add_argument("--oracle-spec", dest="oracle_spec", default="", help="oracle file providing token symbols")
    p.set_defaults(func=cmd_trace_render)

    p = sub.add_parser(
        "serve-oracle",
        aliases=["protocol-serve"],
        help="serve a chain oracle over the wire protocol",
    )
    add_config_flags(p)
    p.set_defaults(func=cmd_serve_oracle)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code


if __name__ == "__main__":
    sys.exit(main())
