"""Stage orchestration: every stage reads a validated spec, writes CSV/JSON into one
output directory and records what it wrote in manifest.json."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import platform
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .borel import (BorelCoefficientTable, MajorantConstants, PolynomialAlgebra, c11_constant,
                    check_domination, compare_majorants, datum_from_json, fit_growth_envelope, init_keys,
                    key_total, majorant_via_ck, run_majorant, run_recursion, table_norms)
from .divisors import fit_c7, rho_total
from .errors import StageDependencyError, StageFailure
from .gevrey import (DirichletParams, compute_H, dirichlet_log_series, fit_dirichlet_bound, flatness_exponent,
                     gevrey_order, gevrey_remainder, init_expansion_from_datums, measure_flatness,
                     remainder_bound)
from .laplace import CSV_COLUMNS, SectorialSolution, assemble_solution, residual_check
from .norms import GridSpec, c6_constant, chi_norm_bound, fit_c5
from .series import GNormParams, estimate_c2
from .spec import ProblemSpec

log = logging.getLogger(__name__)

STAGES = ("norms", "divisors", "borel", "majorant", "laplace", "flatness", "gevrey")
# artifacts a stage reads, by producing stage
REQUIRES = {
    "majorant": {"norms": "norms.json", "divisors": "divisors.json", "borel": "borel_table.json"},
    "laplace": {"borel": "initial_data.json"},
    "flatness": {"borel": "initial_data.json"},
    "gevrey": {"borel": "initial_data.json"},
}
# the part of the manifest that legitimately differs between identical runs
VOLATILE = ("wall_times",)


def _plain(v):
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.ndarray):
        return _plain(v.tolist())
    if isinstance(v, (complex, np.complexfloating)):
        return [float(v.real), float(v.imag)]
    if isinstance(v, np.floating):
        return float(v)
    if isinstance(v, (np.integer, np.bool_)):
        return v.item()
    return v


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_plain(obj), fh, sort_keys=True, indent=1, allow_nan=True)
        fh.write("\n")


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _sha(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunManifest:
    spec_hash: str
    seeds: dict
    truncation: tuple
    stages: list = field(default_factory=list)
    artifacts: dict = field(default_factory=dict)
    constants: dict = field(default_factory=dict)
    wall_times: dict = field(default_factory=dict)
    versions: dict = field(default_factory=lambda: {"gevrey_lab": __version__, "numpy": np.__version__,
                                                   "scipy": scipy.__version__,
                                                   "python": platform.python_version()})

    def to_json(self) -> dict:
        return {"spec_hash": self.spec_hash, "seeds": self.seeds, "truncation": list(self.truncation),
                "stages": self.stages, "artifacts": self.artifacts, "constants": self.constants,
                "wall_times": self.wall_times, "versions": self.versions}

    @classmethod
    def from_json(cls, d) -> "RunManifest":
        return cls(d["spec_hash"], d["seeds"], tuple(d["truncation"]), d["stages"], d["artifacts"],
                   d["constants"], d["wall_times"], d["versions"])

    def stable_view(self) -> dict:
        return {k: v for k, v in self.to_json().items() if k not in VOLATILE}


class Pipeline:
    """Runs stages of one spec into one directory.

    Solutions built by the flatness stage are kept and reused by the Gevrey
    stage when both run in the same process.
    """

    def __init__(self, spec: ProblemSpec, out, eps_grid=None, seed: int | None = None):
        self.spec = spec
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.eps_grid = None if eps_grid is None else [float(e) for e in eps_grid]
        self.seeds = {k: spec.seed(k) + (0 if seed is None else int(seed)) for k in ("norms", "divisors", "series")}
        self._solutions = {}
        path = self.out / "manifest.json"
        old = None
        if path.exists():
            try:
                old = RunManifest.from_json(json.loads(path.read_text()))
            except (ValueError, KeyError, TypeError):
                old = None
        if old is not None and old.spec_hash == spec.hash and old.seeds == self.seeds \
                and tuple(old.truncation) == (spec.B, spec.M):
            self.manifest = old
        else:
            self.manifest = RunManifest(spec.hash, self.seeds, (spec.B, spec.M))

    # -- bookkeeping
    def _record(self, stage, paths, constants=None):
        for p in paths:
            self.manifest.artifacts[str(Path(p).relative_to(self.out))] = _sha(p)
        if constants:
            self.manifest.constants[stage] = constants
        if stage not in self.manifest.stages:
            self.manifest.stages.append(stage)

    def _save_manifest(self):
        write_json(self.out / "manifest.json", self.manifest.to_json())

    def _need(self, stage):
        for producer, name in REQUIRES.get(stage, {}).items():
            if not (self.out / name).exists():
                raise StageDependencyError(stage, producer)

    def _load(self, name):
        return json.loads((self.out / name).read_text())

    def run(self, stage: str) -> RunManifest:
        order = STAGES if stage == "all" else (stage,)
        if stage != "all" and stage not in STAGES:
            raise ValueError(f"unknown stage {stage!r}")
        for name in order:
            self._need(name)
            t0 = time.perf_counter()
            log.info("stage %s", name)
            try:
                getattr(self, f"stage_{name}")()
            except Exception as exc:
                self.manifest.wall_times[name] = time.perf_counter() - t0
                self._save_manifest()
                raise StageFailure(name, exc, self.manifest) from exc
            self.manifest.wall_times[name] = time.perf_counter() - t0
            self._save_manifest()
        return self.manifest

    # -- shared pieces
    @property
    def domination_eps(self) -> complex:
        d = self.spec.stage("domination")
        return complex(d.get("eps_abs", 1e-3) * np.exp(1j * d.get("eps_arg", np.pi / 4)))

    def init_datums(self) -> dict:
        raw = self._load("initial_data.json")
        return {tuple(row["beta"]): datum_from_json(row["datum"]) for row in raw["entries"]}

    def solution(self, i: int, eps: complex, B: int | None = None, init=None) -> SectorialSolution:
        s = self.spec
        B = s.B if B is None else B
        key = (int(i), complex(eps), int(B))
        if key not in self._solutions:
            init = self.init_datums() if init is None else init
            self._solutions[key] = SectorialSolution(s.structure, s.data, init, s.geometry, i, eps, B,
                                                     s.grid.t, M0=s.M0)
        return self._solutions[key]

    def _magnitudes(self, name):
        if self.eps_grid is not None:
            return sorted(self.eps_grid, reverse=True)
        p = self.spec.stage(name)
        return [p.get("eps_start", 0.1) / 2 ** n for n in range(int(p.get("count", 12)))]

    # -- stages
    def stage_norms(self):
        s, st = self.spec, self.spec.structure
        p = s.stage("norms")
        rng = np.random.default_rng(self.seeds["norms"])
        eps_abs = abs(self.domination_eps)
        fit = fit_c5(rng, int(p.get("c5_samples", 100)), eps_abs, st.sigma, st.b, st.r, s.ctx.region)
        c6 = {f"{t.l0},{t.l1}": c6_constant(fit.c5, t.l0, st.sigma) for t in st.nonlinear}
        ck = s.raw.get("ck", {})
        zbar, xbar = float(ck.get("Zbar0", 8.0)), float(ck.get("Xbar0", 1.0))
        p0 = GNormParams((zbar,) * (st.l + 1), xbar)
        zbar1 = float(ck.get("Zbar1", (s.M0 + zbar) / 2))
        p1 = GNormParams((zbar1,) * (st.l + 1), float(ck.get("Xbar1", xbar / 4)))
        h = (1,) * (st.l + 2)
        c2 = estimate_c2(h, p0, p1, int(p.get("c2_trunc", 10)), np.random.default_rng(self.seeds["series"]),
                         int(p.get("c2_samples", 100)))
        consts = {"C5": fit.c5, "C6": c6, "C11": c11_constant(st, fit.c5), "C2": c2, "C2_derivative": list(h),
                  "C2_radii": [list(p0.zbar) + [p0.xbar], list(p1.zbar) + [p1.xbar]],
                  "chi": chi_norm_bound(st.sigma), "eps_abs": eps_abs, "c5_samples": int(fit.ratios.size)}
        write_json(self.out / "norms.json", consts)
        write_csv(self.out / "c5_ratios.csv", ("sample", "ratio"), enumerate(fit.ratios))
        self._record("norms", [self.out / "norms.json", self.out / "c5_ratios.csv"], consts)

    def stage_divisors(self):
        s, st = self.spec, self.spec.structure
        p = s.stage("divisors")
        ctx = s.ctx
        fit = fit_c7(np.random.default_rng(self.seeds["divisors"]), ctx, st.S, int(p.get("c7_samples", 10_000)))
        top = int(p.get("rho_max_total", 1000))
        write_csv(self.out / "rho_table.csv", ("total", "rho"), ((n, rho_total(n, ctx)) for n in range(top + 1)))
        consts = {"c_xi": st.freq.c_xi, "c_xi_search": int(s.raw.get("c_xi_search", 200)), "C7": fit.c7,
                  "C10": fit.c7, "c7_samples": int(fit.ratios.size)}
        write_json(self.out / "divisors.json", consts)
        self._record("divisors", [self.out / "rho_table.csv", self.out / "divisors.json"], consts)

    def residual_truncations(self):
        rows = self.spec.stage("laplace").get("residual_truncations", [[1, 3], [2, 6], [4, 12], [8, 24]])
        return [(int(b), int(m)) for b, m in rows]

    def stage_borel(self):
        s, st = self.spec, self.spec.structure
        B_init = max([s.B] + [b for b, _ in self.residual_truncations()])
        init = s.initial_data(B_init)
        write_json(self.out / "initial_data.json",
                   {"B": B_init, "entries": [{"beta": list(k), "datum": d.to_json()} for k, d in sorted(init.items())]})
        keep = set(init_keys(st.l, st.S, s.B))
        alg = PolynomialAlgebra(s.M, st.r1, st.r2)
        vals = {k: alg.from_datum(d) for k, d in init.items() if k in keep}
        table = run_recursion(st, s.data, vals, self.domination_eps, s.B, alg)
        write_json(self.out / "borel_table.json", table.to_json())
        consts = {"eps": self.domination_eps, "B": s.B, "M": s.M, "keys": len(table.keys()),
                  "generated": len(table.generated())}
        self._record("borel", [self.out / "initial_data.json", self.out / "borel_table.json"], consts)

    def stage_majorant(self):
        s, st = self.spec, self.spec.structure
        table = BorelCoefficientTable.from_json(self._load("borel_table.json"))
        c5 = self._load("norms.json")["C5"]
        c7 = self._load("divisors.json")["C7"]
        consts = MajorantConstants(c10=c7, c11=c11_constant(st, c5), eps0=s.data.eps0)
        eps_abs = abs(table.eps)
        grid = GridSpec(256, n_circle=128, n_disc_rays=4, max_doublings=1)
        w = table_norms(table, st, s.ctx, eps_abs, grid)
        init_norms = {k: w.get(k, 0.0) for k in init_keys(st.l, st.S, table.max_total)}
        U = run_majorant(st, s.data, init_norms, table.max_total, consts)
        ck = s.raw.get("ck", {})
        params = GNormParams((float(ck.get("Zbar0", 8.0)),) * (st.l + 1), float(ck.get("Xbar0", 1.0)))
        U_ck = majorant_via_ck(st, s.data, init_norms, table.max_total, consts, params)
        agree = compare_majorants(U, U_ck)
        rep = check_domination(table, U, st, s.ctx, eps_abs, norms=w, raise_on_failure=False)
        ratios = rep.ratios()
        keys = sorted(w, key=lambda k: (k[-1], key_total(k), k))
        write_csv(self.out / "majorant.csv", ("beta", "w", "U_recursion", "U_ck", "ratio"),
                  ((" ".join(map(str, k)), w[k], U[k], U_ck[k], ratios[k]) for k in keys))
        env = fit_growth_envelope(w, st.l, s.M0)
        summary = {"C10": consts.c10, "C11": consts.c11, "route_agreement": agree,
                   "max_ratio": max(ratios.values()), "margin": rep.margin, "dominated": rep.ok,
                   "offenders": [list(k) for k in rep.offenders], "envelope": {"C": env.C, "K": env.K,
                                                                               "ratio": env.ratio}}
        write_json(self.out / "majorant.json", summary)
        self._record("majorant", [self.out / "majorant.csv", self.out / "majorant.json"],
                     {k: summary[k] for k in ("C10", "C11", "route_agreement", "max_ratio", "dominated")})

    def stage_laplace(self):
        s, geom = self.spec, self.spec.geometry
        p = s.stage("laplace")
        eps_abs = float(p.get("eps_abs", 0.05))
        init = self.init_datums()
        rows = []
        gammas = []
        for i in range(geom.nu):
            eps = eps_abs * np.exp(1j * geom.eps_directions[i])
            sol = self.solution(i, eps, init=init)
            gammas.append(sol.gamma)
            for t, z, x in s.grid.points():
                val, tail = assemble_solution(sol, (t, z, x, eps), s.rho1, s.rho1_prime)
                rows.append((i, t, z, x, eps, val, tail))
        flat = [(i, t.real, t.imag, z.real, z.imag, x.real, x.imag, e.real, e.imag, v.real, v.imag, float(tl))
                for i, t, z, x, e, v, tl in rows]
        write_csv(self.out / "laplace.csv", CSV_COLUMNS, flat)
        eps0 = eps_abs * np.exp(1j * geom.eps_directions[0])
        res = []
        for B, M in self.residual_truncations():
            rep = residual_check(self.solution(0, eps0, B, init), s.grid.points())
            res.append((B, M, rep.relative, rep.absolute, rep.scale))
        write_csv(self.out / "residual.csv", ("B", "M", "relative", "absolute", "scale"), res)
        rel = [r[2] for r in res]
        summary = {"eps_abs": eps_abs, "gammas": gammas, "residual_relative": rel,
                   "strictly_decreasing": all(b < a for a, b in zip(rel, rel[1:])),
                   "max_tail_estimate": max(float(r[6]) for r in rows)}
        write_json(self.out / "laplace.json", summary)
        self._record("laplace", [self.out / "laplace.csv", self.out / "residual.csv", self.out / "laplace.json"],
                     {"residual_relative": rel})

    def stage_flatness(self):
        s, st, geom = self.spec, self.spec.structure, self.spec.geometry
        p = s.stage("flatness")
        pair = tuple(int(v) for v in p.get("pair", [0, 1]))
        phi = geom.overlap_bisector(pair[0])
        eps = [m * np.exp(1j * phi) for m in self._magnitudes("flatness")]
        init = self.init_datums()
        ds = measure_flatness(lambda i, e: self.solution(i, e, init=init), pair, s.grid, eps,
                              flatness_exponent(st))
        write_csv(self.out / "flatness.csv", ("eps_abs", "sup_difference"), ds.samples)
        summary = ds.to_json()
        summary["predicted_exponent"] = flatness_exponent(st)
        write_json(self.out / "flatness_fit.json", summary)
        self._record("flatness", [self.out / "flatness.csv", self.out / "flatness_fit.json"],
                     {k: summary[k] for k in ("K_fit", "M_fit", "s_fit", "r2", "r2_free")})

    def stage_gevrey(self):
        s, st, geom = self.spec, self.spec.structure, self.spec.geometry
        p = s.stage("gevrey")
        N_max = int(p.get("N_max", 18))
        fit_N = tuple(int(v) for v in p.get("fit_N", [1, 2, 3, 4, 5]))
        phi = geom.overlap_bisector(0)
        init = self.init_datums()
        eps_list = [m * np.exp(1j * phi) for m in self._magnitudes("gevrey")]
        sols = {e: self.solution(0, e, init=init) for e in eps_list}
        tail = compute_H(st, s.data, init_expansion_from_datums(init, st, N_max), N_max, s.B)
        order = gevrey_order(st)
        rep = gevrey_remainder(sols, tail, s.grid, range(N_max), order, fit_N)
        rows = []
        for j, e in enumerate(rep.eps):
            for k, N in enumerate(rep.Ns):
                rows.append((abs(e), N, float(rep.R[k, j]), float(remainder_bound(rep.C, rep.M, N, order, abs(e)))))
        write_csv(self.out / "remainder.csv", ("eps_abs", "N", "remainder", "fitted_bound"), rows)
        mags = sorted(abs(e) for e in rep.eps)
        summary = rep.to_json()
        summary["interior_minimum"] = [[float(m), rep.has_interior_minimum(m)] for m in mags[:2]]
        write_json(self.out / "gevrey_fit.json", summary)
        paths = [self.out / "remainder.csv", self.out / "gevrey_fit.json"]
        paths += self._dirichlet()
        self._record("gevrey", paths, {"C": rep.C, "M": rep.M, "s": order, "covered": rep.covered})

    def _dirichlet(self):
        p = self.spec.stage("dirichlet")
        grid = np.geomspace(float(p.get("eps_min", 1e-4)), float(p.get("eps_max", 0.1)), int(p.get("points", 30)))
        rows, fits = [], []
        for a in p.get("a", [0.3, 0.5, 0.8]):
            for alpha in p.get("alpha", [0.5, 1.0, 2.0]):
                dp = DirichletParams(float(a), float(alpha))
                K, M, logs = fit_dirichlet_bound(dp, grid)
                log_bound = np.log(K) - M * grid ** (-1.0 / (alpha + 1))
                for e, v, bd in zip(grid, logs, log_bound):
                    rows.append((float(a), float(alpha), float(e), float(v), dirichlet_log_series(dp, e)[1],
                                 float(bd)))
                fits.append({"a": a, "alpha": alpha, "K": K, "M": M,
                             "dominates": bool(np.all(logs <= log_bound + 1e-12 * np.abs(log_bound)))})
        write_csv(self.out / "dirichlet.csv", ("a", "alpha", "eps", "log_value", "log_tail_bound", "log_fitted_bound"), rows)
        write_json(self.out / "dirichlet_fit.json", {"fits": fits, "eps_grid": grid})
        return [self.out / "dirichlet.csv", self.out / "dirichlet_fit.json"]


def run_pipeline(spec: ProblemSpec, stage: str, out, eps_grid=None, seed=None, trunc=None) -> RunManifest:
    if trunc is not None:
        spec = replace(spec, B=int(trunc[0]), M=int(trunc[1]))
    return Pipeline(spec, out, eps_grid, seed).run(stage)
