"""Command line interface.

Subcommands: simulate, fit, select-d, summarize, ari, check-identifiability.

Configuration is a flat ``key = value`` text file with dotted namespaces
(``prior.family = MFM``); a JSON object with the same dotted keys is
accepted interchangeably.  All randomness flows from a single root seed;
per-chain and per-replicate seeds are derived by hashing (root, role,
index).

Exit codes: 0 success, 2 config error, 3 IO error, 4 numerical abort.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .core import (ChainTrace, HyperParams, NumericalError, PriorConfig,
                   TraceRecord, ValidationError)
from .ingest import (IngestError, build_graph, log_normalize,
                     parse_neighbor_rule, read_coords, read_expression,
                     read_labels, select_hvg, write_labels)
from .metrics import ari as compute_ari
from .sampler import SamplerConfig, run_chain
from .simulate import SimConfig, generate_dataset, write_dataset
from .summarize import (chain_agreement, compute_icl, compute_ppm,
                        map_estimate, ppm_point_estimate, select_d)

DEFAULT_D_GRID = [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5]


class ConfigError(ValidationError):
    pass


def derive_seed(root: int, role: str, index: int = 0) -> int:
    """Stable 63-bit seed derived from (root, role, index)."""
    digest = hashlib.sha256(f"{root}:{role}:{index}".encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def load_config(path) -> dict[str, object]:
    """Load flat key=value or JSON config into a dotted-key dict."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise IngestError(f"cannot read config {path}: {e}") from e
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid JSON config: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError("JSON config must be an object")
        return {str(k): v for k, v in data.items()}
    out: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key = value")
        key, _, value = line.partition("=")
        out[key.strip()] = _coerce(value.strip())
    return out


def _coerce(text: str):
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", "null", ""):
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


@dataclass
class RunConfig:
    """Validated, namespaced run configuration."""

    prior: PriorConfig
    hyper: HyperParams
    sampler: SamplerConfig
    sim: SimConfig
    normalize: bool = False
    n_hvg: int | None = None
    neighbor_rule: str = "square4"
    n_chains: int = 1
    d_grid: list[float] = field(default_factory=lambda: list(DEFAULT_D_GRID))
    raw: dict[str, object] = field(default_factory=dict)


def build_run_config(data: dict[str, object], seed_override: int | None = None,
                     allow_nonstandard_py: bool = False) -> RunConfig:
    """Assemble module configs from dotted keys, validating every invariant."""
    def get(key, default):
        return data.get(key, default)

    known_keys = {
        "prior.family", "prior.beta", "prior.delta", "prior.mfm_lambda",
        "prior.d", "prior.g",
        "hyper.q", "hyper.tau_w", "hyper.tau_mu", "hyper.a", "hyper.b",
        "sampler.iterations", "sampler.burn_in", "sampler.thin",
        "sampler.seed", "sampler.init", "sampler.parallel_width",
        "sampler.randomize_order",
        "sim.lattice", "sim.h0", "sim.potts_d", "sim.potts_sweeps",
        "sim.p", "sim.q", "sim.signal", "sim.seed",
        "ingest.normalize", "ingest.n_hvg", "ingest.neighbor_rule",
        "run.n_chains", "run.d_grid",
    }
    for key in data:
        if key not in known_keys:
            raise ConfigError(f"unknown config key {key!r}")

    family = str(get("prior.family", "MFM"))
    beta = float(get("prior.beta", 1.0))
    default_delta = {"DP": 0.0, "PY": 0.25, "MFM": -beta}.get(family, 0.0)
    delta = float(get("prior.delta", default_delta))
    lam = float(get("prior.mfm_lambda", 1.0))
    try:
        from .core import shifted_poisson_log_pmf
        prior = PriorConfig(
            family=family, beta=beta, delta=delta,
            mfm_log_pmf=shifted_poisson_log_pmf(lam),
            mrf_d=float(get("prior.d", 0.0)),
            mrf_g=float(get("prior.g", 1.0)),
            allow_nonstandard_py=allow_nonstandard_py,
        )
        hyper = HyperParams(
            q=int(get("hyper.q", 15)),
            tau_w=float(get("hyper.tau_w", 1.0)),
            tau_mu=float(get("hyper.tau_mu", 1.0)),
            a=float(get("hyper.a", 1.0)),
            b=float(get("hyper.b", 1.0)),
        )
        seed = int(get("sampler.seed", 0))
        if seed_override is not None:
            seed = seed_override
        sampler = SamplerConfig(
            iterations=int(get("sampler.iterations", 1000)),
            burn_in=int(get("sampler.burn_in", 500)),
            thin=int(get("sampler.thin", 1)),
            seed=seed,
            init=str(get("sampler.init", "kmeans(5)")),
            parallel_width=int(get("sampler.parallel_width", 1)),
            randomize_order=bool(get("sampler.randomize_order", False)),
        )
        sim = SimConfig(
            lattice=str(get("sim.lattice", "square(40)")),
            H0=int(get("sim.h0", 3)),
            potts_d=float(get("sim.potts_d", 1.2)),
            potts_sweeps=int(get("sim.potts_sweeps", 500)),
            p=int(get("sim.p", 2000)),
            q=int(get("sim.q", 10)),
            signal=str(get("sim.signal", "strong")),
            seed=seed if seed_override is not None else int(get("sim.seed", seed)),
        )
        parse_neighbor_rule(str(get("ingest.neighbor_rule", "square4")))
    except ValidationError as e:
        raise ConfigError(str(e)) from e

    grid_raw = get("run.d_grid", None)
    if grid_raw is None:
        d_grid = list(DEFAULT_D_GRID)
    elif isinstance(grid_raw, (int, float)):
        d_grid = [float(grid_raw)]
    elif isinstance(grid_raw, list):
        d_grid = [float(x) for x in grid_raw]
    else:
        d_grid = [float(x) for x in str(grid_raw).split(",") if x.strip()]
    n_hvg = get("ingest.n_hvg", None)
    return RunConfig(
        prior=prior, hyper=hyper, sampler=sampler, sim=sim,
        normalize=bool(get("ingest.normalize", False)),
        n_hvg=int(n_hvg) if n_hvg is not None else None,
        neighbor_rule=str(get("ingest.neighbor_rule", "square4")),
        n_chains=int(get("run.n_chains", 1)),
        d_grid=d_grid,
        raw=dict(data),
    )


def atomic_write_text(path: Path, text: str):
    """Write via a temp file in the same directory, then rename."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_trace(path: Path, trace: ChainTrace):
    """Checkpoint a trace as line-delimited JSON records."""
    lines = []
    for rec in trace.records:
        lines.append(json.dumps({
            "iteration": rec.iteration,
            "H": rec.H,
            "z": ",".join(str(int(v) + 1) for v in rec.z),
            "log_score": rec.log_score,
        }))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_trace(path) -> ChainTrace:
    """Load a JSONL trace checkpoint (no final state)."""
    records = []
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise IngestError(f"cannot read trace {path}: {e}") from e
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            z = np.array([int(v) - 1 for v in obj["z"].split(",")])
            records.append(TraceRecord(int(obj["iteration"]), z,
                                       int(obj["H"]),
                                       float(obj["log_score"])))
        except (KeyError, ValueError, json.JSONDecodeError) as e:
            raise IngestError(f"{path}: bad trace record at line {lineno}: "
                              f"{e}") from e
    return ChainTrace(records, burn_in=0, thin=1, seed=0)


def _manifest(out: Path, cfg: RunConfig, extra: dict):
    payload = {
        "tool": "spafa",
        "version": __version__,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "seed": cfg.sampler.seed,
        "config": cfg.raw,
        **extra,
    }
    atomic_write_text(out / "manifest.json", json.dumps(payload, indent=2))


def _load_inputs(args, cfg: RunConfig):
    expr = read_expression(args.expression)
    if cfg.normalize:
        expr = log_normalize(expr)
    if cfg.n_hvg is not None and cfg.n_hvg < expr.p:
        expr = select_hvg(expr, cfg.n_hvg)
    coords = read_coords(args.coords, expr)
    graph = build_graph(coords, parse_neighbor_rule(cfg.neighbor_rule))
    return expr, coords, graph


def _labels_csv(out: Path, name: str, spot_ids, z: np.ndarray):
    lines = ["spot_id,label"]
    lines += [f"{sid},{int(lab) + 1}" for sid, lab in zip(spot_ids, z)]
    atomic_write_text(out / name, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = build_run_config(load_config(args.config) if args.config else {},
                           seed_override=args.seed)
    ds = generate_dataset(cfg.sim)
    out = Path(args.out)
    write_dataset(ds, out)
    _manifest(out, cfg, {"command": "simulate",
                         "n_truth_clusters": int(len(np.unique(ds.truth)))})
    if not args.no_figures:
        from .plots import plot_domains
        plot_domains(ds.coords.coords, ds.truth + 1, out / "truth_pattern.png",
                     "Simulated label pattern")
    print(f"wrote simulated dataset to {out}")
    return 0


def _fit_chains(expr, graph, cfg: RunConfig, out: Path):
    traces = []
    for k in range(cfg.n_chains):
        chain_seed = (cfg.sampler.seed if cfg.n_chains == 1
                      else derive_seed(cfg.sampler.seed, "chain", k))
        scfg = SamplerConfig(
            iterations=cfg.sampler.iterations, burn_in=cfg.sampler.burn_in,
            thin=cfg.sampler.thin, seed=chain_seed, init=cfg.sampler.init,
            parallel_width=cfg.sampler.parallel_width,
            randomize_order=cfg.sampler.randomize_order)
        try:
            trace = run_chain(expr, graph, cfg.prior, cfg.hyper, scfg)
        except NumericalError as e:
            raise NumericalError(f"chain {k + 1}: {e}") from e
        write_trace(out / f"trace_chain{k + 1}.jsonl", trace)
        traces.append(trace)
    return traces


def cmd_fit(args) -> int:
    cfg = build_run_config(load_config(args.config) if args.config else {},
                           seed_override=args.seed,
                           allow_nonstandard_py=args.allow_nonstandard_py)
    expr, coords, graph = _load_inputs(args, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    traces = _fit_chains(expr, graph, cfg, out)
    pooled = ChainTrace([r for t in traces for r in t.records],
                        burn_in=cfg.sampler.burn_in, thin=cfg.sampler.thin,
                        seed=cfg.sampler.seed,
                        final_state=traces[-1].final_state)
    ppm = compute_ppm(pooled)
    z_ppm = ppm_point_estimate(pooled, ppm)
    z_map = map_estimate(pooled)
    _labels_csv(out, "labels_ppm.csv", expr.spot_ids, z_ppm.z)
    _labels_csv(out, "labels_map.csv", expr.spot_ids, z_map.z)
    icl = compute_icl(traces[-1].final_state, expr, graph, cfg.prior,
                      cfg.hyper)
    atomic_write_text(out / "icl.txt", f"{icl!r}\n")

    extra = {"command": "fit", "H_hat": int(z_ppm.H),
             "n_chains": cfg.n_chains}
    if len(traces) >= 2:
        agree = chain_agreement(traces)
        lines = [",".join(f"{v:.6f}" for v in row) for row in agree]
        atomic_write_text(out / "chain_agreement.csv", "\n".join(lines) + "\n")
        extra["chain_agreement_min"] = float(
            agree[np.triu_indices_from(agree, 1)].min())
    if args.emit_ppm:
        if expr.n > 5000:
            print(f"warning: writing a dense {expr.n}x{expr.n} PPM",
                  file=sys.stderr)
        lines = [",".join(f"{v:.6f}" for v in row) for row in ppm.matrix]
        atomic_write_text(out / "ppm.csv", "\n".join(lines) + "\n")
    _manifest(out, cfg, extra)

    if not args.no_figures:
        from .plots import plot_agreement, plot_domains
        plot_domains(coords.coords, z_ppm.z + 1, out / "domains_ppm.png",
                     "Posterior co-clustering point estimate")
        plot_domains(coords.coords, z_map.z + 1, out / "domains_map.png",
                     "MAP partition")
        if len(traces) >= 2:
            plot_agreement(agree, out / "chain_agreement.png")
    print(f"fit complete: H_hat = {z_ppm.H}, outputs in {out}")
    return 0


def cmd_select_d(args) -> int:
    cfg = build_run_config(load_config(args.config) if args.config else {},
                           seed_override=args.seed,
                           allow_nonstandard_py=args.allow_nonstandard_py)
    expr, coords, graph = _load_inputs(args, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    best_d, records, traces = select_d(expr, graph, cfg.prior, cfg.hyper,
                                       cfg.sampler, cfg.d_grid)
    lines = ["d,icl,H_hat"]
    lines += [f"{r.d:g},{r.icl!r},{r.H_hat}" for r in records]
    atomic_write_text(out / "icl.csv", "\n".join(lines) + "\n")
    atomic_write_text(out / "best_d.txt", f"{best_d:g}\n")
    for d, trace in traces.items():
        write_trace(out / f"trace_d{d:g}.jsonl", trace)
    _manifest(out, cfg, {"command": "select-d", "best_d": best_d})
    if not args.no_figures:
        from .plots import plot_domains, plot_icl_curve
        ok = [r for r in records if np.isfinite(r.icl)]
        plot_icl_curve([r.d for r in ok], [r.icl for r in ok], best_d,
                       out / "icl.png")
        best_trace = traces[best_d]
        z_best = ppm_point_estimate(best_trace, compute_ppm(best_trace))
        plot_domains(coords.coords, z_best.z + 1, out / "domains_best_d.png",
                     f"Domains at selected d = {best_d:g}")
    print(f"selected d = {best_d:g}, outputs in {out}")
    return 0


def cmd_summarize(args) -> int:
    traces = [read_trace(p) for p in args.traces]
    if not traces:
        raise ConfigError("no trace files given")
    expr_ids = None
    if args.expression:
        expr_ids = read_expression(args.expression).spot_ids
    n = traces[0].n
    spot_ids = expr_ids if expr_ids is not None else [f"s{i + 1}"
                                                      for i in range(n)]
    if len(spot_ids) != n:
        raise ConfigError("expression spot count does not match traces")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pooled = ChainTrace([r for t in traces for r in t.records],
                        burn_in=0, thin=1, seed=0)
    ppm = compute_ppm(pooled)
    z_ppm = ppm_point_estimate(pooled, ppm)
    z_map = map_estimate(pooled)
    _labels_csv(out, "labels_ppm.csv", spot_ids, z_ppm.z)
    _labels_csv(out, "labels_map.csv", spot_ids, z_map.z)
    if len(traces) >= 2:
        agree = chain_agreement(traces)
        lines = [",".join(f"{v:.6f}" for v in row) for row in agree]
        atomic_write_text(out / "chain_agreement.csv", "\n".join(lines) + "\n")
    print(f"summaries written to {out}: H_hat = {z_ppm.H}")
    return 0


def cmd_ari(args) -> int:
    truth_ids, truth_labels = read_labels(args.truth)
    est_ids, est_labels = read_labels(args.est)
    missing = sorted(set(truth_ids) ^ set(est_ids))
    if missing:
        raise IngestError(f"spot ID mismatch between label files: {missing}")
    est_by_id = dict(zip(est_ids, est_labels))
    aligned = [est_by_id[s] for s in truth_ids]
    print(f"{compute_ari(truth_labels, aligned):.6f}")
    return 0


def cmd_check_identifiability(args) -> int:
    from .core import PartitionState
    from .identifiability import invariance_check
    rng = np.random.default_rng(args.seed)
    q, n = args.q, args.n
    Y0 = rng.standard_normal((q, n))
    partitions = [PartitionState(rng.integers(0, max(2, q), size=n))
                  for _ in range(args.partitions)]
    worst = 0.0
    for _ in range(args.transforms):
        M = _random_well_conditioned(q, rng)
        worst = max(worst, invariance_check(Y0, M, partitions, args.tau))
    print(f"max pairwise-difference deviation: {worst:.3e} "
          f"(tolerance {args.tol:g})")
    if worst >= args.tol:
        print("FAIL: partition scores are not transform-invariant",
              file=sys.stderr)
        return 4
    return 0


def _random_well_conditioned(q: int, rng: np.random.Generator,
                             max_cond: float = 100.0) -> np.ndarray:
    """Random nonsingular matrix with condition number below max_cond."""
    A = rng.standard_normal((q, q))
    U, _, Vt = np.linalg.svd(A)
    s = np.exp(rng.uniform(0.0, np.log(max_cond), size=q))
    s = s / s.max()
    return U @ np.diag(s) @ Vt


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spafa",
        description="Spatial factor-mixture clustering for omics matrices")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, inputs=True):
        p.add_argument("--config", help="flat key=value or JSON config file")
        p.add_argument("--seed", type=int, default=None,
                       help="override the root RNG seed")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--threads", type=int, default=1,
                       help="worker hint (updates are vectorized)")
        p.add_argument("--allow-nonstandard-py", action="store_true",
                       help="accept PY discount < 0 as printed")
        p.add_argument("--no-figures", action="store_true",
                       help="skip PNG report figures")
        if inputs:
            p.add_argument("--expression", required=True,
                           help="gene-by-spot expression CSV")
            p.add_argument("--coords", required=True,
                           help="spot_id,x,y coordinate CSV")

    p_sim = sub.add_parser("simulate", help="generate a synthetic dataset")
    common(p_sim, inputs=False)
    p_sim.set_defaults(func=cmd_simulate)

    p_fit = sub.add_parser("fit", help="run MCMC chains and summarize")
    common(p_fit)
    p_fit.add_argument("--emit-ppm", action="store_true",
                       help="also write the dense PPM matrix")
    p_fit.set_defaults(func=cmd_fit)

    p_sel = sub.add_parser("select-d", help="pick MRF smoothness via ICL")
    common(p_sel)
    p_sel.set_defaults(func=cmd_select_d)

    p_sum = sub.add_parser("summarize",
                           help="recompute summaries from trace checkpoints")
    p_sum.add_argument("traces", nargs="+", help="trace JSONL files")
    p_sum.add_argument("--expression", help="expression CSV (for spot IDs)")
    p_sum.add_argument("--out", required=True)
    p_sum.set_defaults(func=cmd_summarize)

    p_ari = sub.add_parser("ari", help="ARI between two label CSVs")
    p_ari.add_argument("truth")
    p_ari.add_argument("est")
    p_ari.set_defaults(func=cmd_ari)

    p_chk = sub.add_parser("check-identifiability",
                           help="numerical transform-invariance regression")
    p_chk.add_argument("--seed", type=int, default=0)
    p_chk.add_argument("--q", type=int, default=3)
    p_chk.add_argument("--n", type=int, default=20)
    p_chk.add_argument("--partitions", type=int, default=10)
    p_chk.add_argument("--transforms", type=int, default=20)
    p_chk.add_argument("--tau", type=float, default=1.0)
    p_chk.add_argument("--tol", type=float, default=1e-8)
    p_chk.set_defaults(func=cmd_check_identifiability)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (IngestError, OSError) as e:
        print(f"IO error: {e}", file=sys.stderr)
        return 3
    except ValidationError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
