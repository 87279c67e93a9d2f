"""Configuration parsing and the ``nilflow`` command line (run, verify, blowdown, family, init)."""

import argparse
import math
import os
import sys
from dataclasses import dataclass, fields

import numpy as np

from . import diagnostics as D
from . import family as F
from . import harness as H
from . import storage
from .algebra import LieStructure
from .errors import ConfigError, DomainError, IntegrationError
from .flow import StepController, evolve, random_state
from .grid import Grid


@dataclass
class RunConfig:
    group: str = "heisenberg"
    c: float = 1.0
    L: float = 2 * math.pi
    N: int = 128
    method: str = "fd4"
    t0: float = 0.0
    t_end: float = 1.0
    cfl_sigma: float = 0.2
    error_tol: float = 1e-8
    dt_min: float = 1e-12
    dt_max: float = 1.0
    seed: int = 0
    amp_G: float = 0.3
    amp_g: float = 0.2
    amp_a: float = 0.2
    amp_m: float = 0.2
    modes: int = 4
    h0: float = 0.0
    snapshot_cadence: float = 1.0
    diagnostics_cadence: float = 0.1
    verify_delta: float = 0.016
    output_dir: str = "nilflow_out"

    def lie(self):
        return LieStructure.heisenberg(self.c) if self.group == "heisenberg" else LieStructure.abelian()

    def grid(self, N=None):
        return Grid(N or self.N, self.L, self.method)

    def initial_state(self, grid=None):
        return random_state(grid or self.grid(), self.lie(), seed=self.seed, amp_G=self.amp_G,
                            amp_g=self.amp_g, amp_a=self.amp_a, amp_m=self.amp_m,
                            modes=self.modes, h0=self.h0, t0=self.t0)

    def controller(self):
        return StepController(cfl_sigma=self.cfl_sigma, dt_min=self.dt_min, dt_max=self.dt_max,
                              error_tol=self.error_tol)


REQUIRED = ("group", "N", "L", "t_end")
_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key, raw, line):
    typ = _TYPES[key]
    try:
        if typ is int:
            return int(raw)
        if typ is float:
            v = float(raw)
            if not math.isfinite(v):
                raise ValueError
            return v
    except ValueError:
        raise ConfigError(f"{key} expects {typ.__name__}, got {raw!r}", line) from None
    return raw


_POSITIVE = ("L", "snapshot_cadence", "diagnostics_cadence", "error_tol", "dt_min", "dt_max", "verify_delta")
_NONNEGATIVE = ("amp_G", "amp_g", "amp_a", "amp_m", "t0")


def _check_value(key, v):
    """Single-key invariant; returns an error message or None."""
    if key == "group" and v not in ("heisenberg", "abelian"):
        return "group must be heisenberg or abelian"
    if key == "N" and (v < 16 or v & (v - 1)):
        return "N must be a power of two ≥ 16"
    if key == "method" and v not in ("fd4", "spectral"):
        return "method must be fd4 or spectral"
    if key in _POSITIVE and v <= 0:
        return f"{key} must be > 0"
    if key in _NONNEGATIVE and v < 0:
        return f"{key} must be ≥ 0"
    if key == "cfl_sigma" and not 0 < v <= 1:
        return "cfl_sigma must lie in (0, 1]"
    if key == "modes" and v < 1:
        return "modes must be ≥ 1"
    return None


def _check(cfg, lines):
    if cfg.group == "heisenberg" and cfg.c <= 0:
        raise ConfigError("c must be > 0", lines.get("c"))
    if cfg.t_end <= cfg.t0:
        raise ConfigError("t_end must exceed t0", lines.get("t_end"))


def parse_config(text):
    """Parse ``key = value`` lines (``#`` starts a comment) into a validated RunConfig."""
    values, lines = {}, {}
    for num, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"expected 'key = value', got {body!r}", num)
        key, val = (p.strip() for p in body.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"unknown key {key!r}", num)
        if key in values:
            raise ConfigError(f"duplicate key {key!r}", num)
        if not val:
            raise ConfigError(f"missing value for {key!r}", num)
        values[key] = _convert(key, val, num)
        lines[key] = num
        msg = _check_value(key, values[key])
        if msg:
            raise ConfigError(msg, num)
    missing = [k for k in REQUIRED if k not in values]
    if missing:
        raise ConfigError(f"missing required keys: {', '.join(missing)}")
    cfg = RunConfig(**values)
    _check(cfg, lines)
    return cfg


SAMPLE_CONFIG = """\
# nilflow run configuration
group = heisenberg        # heisenberg | abelian
c = 1.0                   # structure constant [e1, e2] = c e3
N = 128                   # grid points, power of two >= 16
L = 6.283185307179586     # circle length
method = fd4              # fd4 | spectral
t0 = 0.0
t_end = 10.0
cfl_sigma = 0.4
error_tol = 1e-8
seed = 0
amp_G = 0.3
amp_g = 0.2
amp_a = 0.2
amp_m = 0.2
modes = 4
h0 = 0.5
snapshot_cadence = 1.0
diagnostics_cadence = 0.1
verify_delta = 0.016
output_dir = nilflow_out
"""


# ---------------------------------------------------------------- commands

def _growth_flags(traj):
    """g nondecreasing everywhere; g(t2) <= (t2/t1)(1 + 1e-6) g(t1) once t q_sum <= 2."""
    flags = []
    for s1, s2 in zip(traj.states[:-1], traj.states[1:]):
        if np.any(s2.g < s1.g):
            flags.append(("g_decrease", s2.t))
        if s1.t > 0 and D.record(s1).mon_q <= 2.0:
            if np.any(s2.g > (s2.t / s1.t) * (1 + 1e-6) * s1.g):
                flags.append(("g_growth_cap", s2.t))
    return flags


def run(cfg, out_dir=None):
    """Evolve the configured initial data and write series, snapshots and report; returns exit status."""
    out = out_dir or cfg.output_dir
    s0 = cfg.initial_state()
    ctrl = cfg.controller()
    try:
        traj = evolve(s0, cfg.t_end, ctrl, observers=[D.record],
                      snapshot_cadence=cfg.snapshot_cadence, diagnostics_cadence=cfg.diagnostics_cadence)
    except IntegrationError as exc:
        storage.write_json(os.path.join(out, "report.json"), {"status": "integration_error", "message": str(exc)})
        if exc.state is not None:
            storage.write_snapshot(os.path.join(out, "snapshots"), exc.state)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    records = [r[0] for r in traj.records]
    storage.atomic_write(os.path.join(out, "series.csv"), storage.series_text(records))
    for s in traj.states:
        storage.write_snapshot(os.path.join(out, "snapshots"), s)
    audit = H.audit_records(records)
    growth = _growth_flags(traj)
    ok = audit["ok"] and not growth
    report = {
        "status": "ok" if ok else "flagged",
        "t_end": traj.states[-1].t,
        "snapshots": len(traj),
        "accepted_steps": ctrl.accepted,
        "rejected_steps": ctrl.rejected,
        "audit": audit,
        "growth_flags": growth,
    }
    storage.write_json(os.path.join(out, "report.json"), report)
    return 0 if ok else 1


def verify(cfg, out_dir=None):
    """Identity ladder {(N, d), (2N, d/4), (4N, d/16)} and the homogeneous oracle."""
    out = out_dir or cfg.output_dir
    d = cfg.verify_delta
    rungs = ((cfg.N, d), (2 * cfg.N, d / 4), (4 * cfg.N, d / 16))
    runs = H.ladder_runs(lambda grid: cfg.initial_state(grid), rungs=rungs, method=cfg.method,
                         error_tol=min(cfg.error_tol, 1e-10), cfl_sigma=cfg.cfl_sigma)
    reports = [H.ladder_report(runs, q, cfg.L) for q in H.QUANTITIES]
    ok = True
    for rep in reports:
        passed = rep.passed()
        ok &= passed
        print(f"{rep.quantity:8s} order {rep.order:.3f} extrapolated {rep.extrapolated:.3e} "
              f"{'PASS' if passed else 'FAIL'}")
    lie = cfg.lie()
    s0 = random_state(Grid(16, cfg.L), lie, seed=0, amp_G=0, amp_g=0, amp_a=0, amp_m=0, h0=cfg.h0)
    traj = evolve(s0, 1.0, StepController(error_tol=cfg.error_tol), snapshot_cadence=1.0)
    orc = H.homogeneous_oracle(lie, s0.G[0], 1.0, cfg.h0, (0.0, 1.0), t_eval=[0.0, 1.0])
    rel = float(np.max(np.abs(traj.states[-1].G[0] - orc.G[-1])) / np.max(np.abs(orc.G[-1])))
    oracle_ok = rel <= 1e-6
    ok &= oracle_ok
    print(f"oracle   relative error {rel:.3e} {'PASS' if oracle_ok else 'FAIL'}")
    storage.write_jsonl(os.path.join(out, "verify.jsonl"), [r.as_dict() for r in reports])
    storage.write_json(os.path.join(out, "report.json"),
                       {"status": "ok" if ok else "failed", "oracle_rel_error": rel,
                        "reports": [r.as_dict() for r in reports]})
    return 0 if ok else 1


def blowdown(cfg, scales, out_dir=None, window=(0.5, 2.0)):
    out = out_dir or cfg.output_dir
    t_end = max(cfg.t_end, max(scales) * window[1])
    s0 = cfg.initial_state()
    traj = evolve(s0, t_end, cfg.controller(), snapshot_cadence=cfg.snapshot_cadence)
    res = F.compare_to_family(traj, scales, window)
    rows = [{"scale": r.scale, **r.components(), "C_fit": r.C_fit, "C_original": r.C_original,
             "fit_rms": r.fit_rms} for r in res]
    storage.write_jsonl(os.path.join(out, "blowdown.jsonl"), rows)
    monotone = {k: all(b[k] < a[k] for a, b in zip(rows[:-1], rows[1:])) for k in res[0].components()}
    storage.write_json(os.path.join(out, "report.json"), {"residuals": rows, "monotone": monotone})
    for r in rows:
        print(" ".join(f"{k}={storage.fmt(v) if isinstance(v, float) else v}" for k, v in r.items()))
    return 0


def family_table(C, psi0, t0, t1, n=101):
    p = F.CanonicalFamilyParams(C=C, psi0=psi0)
    fam = F.integrate_family(p, (t0, t1), t_eval=np.linspace(t0, t1, n))
    lines = ["t,Phi,Psi,block_factor,center_factor,g,t_Phi"]
    for i, t in enumerate(fam.t):
        vals = (t, fam.Phi[i], fam.Psi[i], fam.block_factor[i], fam.center_factor[i], fam.g[i], t * fam.Phi[i])
        lines.append(",".join(storage.fmt(v) for v in vals))
    return "\n".join(lines) + "\n"


def _load(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def main(argv=None):
    ap = argparse.ArgumentParser(prog="nilflow", description=__doc__)
    sub = ap.add_subparsers(dest="cmd", required=True)
    for name in ("run", "verify"):
        p = sub.add_parser(name)
        p.add_argument("config")
        p.add_argument("--output", help="override output_dir")
    p = sub.add_parser("blowdown")
    p.add_argument("config")
    p.add_argument("--scales", default="4,16,64")
    p.add_argument("--output")
    p = sub.add_parser("family")
    p.add_argument("--C", type=float, default=0.0)
    p.add_argument("--psi0", type=float, default=0.0)
    p.add_argument("--t0", type=float, default=0.5)
    p.add_argument("--t1", type=float, default=2.0)
    p.add_argument("--n", type=int, default=101)
    sub.add_parser("init")
    args = ap.parse_args(argv)
    try:
        if args.cmd == "init":
            sys.stdout.write(SAMPLE_CONFIG)
            return 0
        if args.cmd == "family":
            sys.stdout.write(family_table(args.C, args.psi0, args.t0, args.t1, args.n))
            return 0
        cfg = _load(args.config)
        if args.cmd == "run":
            return run(cfg, args.output)
        if args.cmd == "verify":
            return verify(cfg, args.output)
        scales = [float(v) for v in args.scales.split(",")]
        return blowdown(cfg, scales, args.output)
    except (ConfigError, DomainError, IntegrationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
