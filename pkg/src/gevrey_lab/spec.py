"""Problem description files: parsing, validation and the objects built from them.

A spec is one JSON document. Frequencies are decimal strings so that parsing
never rounds twice. `validate` is total: any malformed input ends in a
SpecError listing every problem found, never in an unrelated exception.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from math import factorial
from pathlib import Path

import numpy as np

from .borel import (CoefficientData, LinearTerm, LogDatum, NonlinearTerm, Structure, datum_from_json,
                    init_keys, key_total)
from .divisors import AlgebraicFrequencies, DivisorContext, estimate_c_xi, rho_total
from .errors import DependenceError, DomainError, GeometryError, SpecError
from .gevrey import EvaluationGrid
from .laplace import SectorGeometry
from .norms import OmegaRegion

REQUIRED = ("S", "r1", "r2", "r3", "xi", "h", "b", "sigma", "eps0", "linear_terms", "nonlinear_terms",
            "init_data", "truncation")


def default_spec_path() -> Path:
    return Path(str(resources.files("gevrey_lab") / "specs" / "default.json"))


def canonical_hash(raw: dict) -> str:
    text = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def _missing(raw, key, diags) -> bool:
    if key in raw:
        return False
    msg = f"missing field {key!r}"
    if msg not in diags:
        diags.append(msg)
    return True


def _int(raw, key, diags, minimum=None):
    if _missing(raw, key, diags):
        return None
    v = raw.get(key)
    if isinstance(v, bool) or not isinstance(v, int):
        diags.append(f"{key}: expected an integer, got {v!r}")
        return None
    if minimum is not None and v < minimum:
        diags.append(f"{key}: must be >= {minimum}, got {v}")
        return None
    return v


def _real(raw, key, diags, positive=False, default=None):
    if default is None and _missing(raw, key, diags):
        return None
    v = raw.get(key, default)
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not np.isfinite(v):
        diags.append(f"{key}: expected a real number, got {v!r}")
        return None
    if positive and not v > 0:
        diags.append(f"{key}: must be positive, got {v}")
        return None
    return float(v)


def _section(raw, key, diags, kind=dict):
    """raw[key] if it has the expected container type, else an empty one plus a diagnostic."""
    v = raw.get(key)
    if v is None and key not in raw:
        return kind()
    if not isinstance(v, kind):
        diags.append(f"{key}: expected {'an object' if kind is dict else 'a list'}, got {v!r}")
        return kind()
    return v


def _coeff_rows(rows, where, diags):
    out = []
    if not isinstance(rows, list):
        diags.append(f"{where}: coefficients must be a list")
        return out
    for n, row in enumerate(rows):
        try:
            b0, q = int(row["b0"]), int(row["q"])
            eps = [complex(*c) if isinstance(c, list) else complex(c) for c in row["eps"]]
            if b0 < 0 or q < 0:
                raise ValueError("negative index")
            out.append((b0, q, eps))
        except (KeyError, TypeError, ValueError) as exc:
            diags.append(f"{where}[{n}]: bad coefficient row ({exc})")
    return out


@dataclass
class ProblemSpec:
    raw: dict
    structure: Structure
    data: CoefficientData
    geometry: SectorGeometry
    grid: EvaluationGrid
    B: int
    M: int
    M0: float
    rho1: float
    rho1_prime: float

    @property
    def hash(self) -> str:
        return canonical_hash(self.raw)

    @property
    def ctx(self) -> DivisorContext:
        d = self.geometry.directions[0]
        return DivisorContext(self.structure.r1, self.structure.r2, self.structure.freq,
                              OmegaRegion(0.0, d, self.geometry.borel_aperture))

    def stage(self, name: str) -> dict:
        return dict(self.raw.get("stages", {}).get(name, {}))

    def seed(self, name: str) -> int:
        return int(self.raw.get("seeds", {}).get(name, 0))

    def initial_data(self, B: int | None = None) -> dict:
        """Initial Borel data V_(modes, j), j < S, as closed-form datums."""
        B = self.B if B is None else B
        st = self.structure
        init = self.raw["init_data"]
        out = {}
        fam = init.get("family")
        if fam:
            ctx = DivisorContext(st.r1, st.r2, st.freq)
            xs = set(fam.get("x_indices", [0]))
            for key in init_keys(st.l, st.S, B):
                if key[-1] not in xs:
                    continue
                tot = key_total(key)
                amp = fam["delta"] * fam["ratio"] ** tot * float(np.prod([factorial(m) for m in key]))
                pole = fam["pole_factor"] * rho_total(tot, ctx) * np.exp(1j * fam["pole_direction"])
                out[key] = LogDatum(amp, complex(pole))
        keep = set(init_keys(st.l, st.S, B))
        for row in init.get("entries", []):
            key = tuple(int(v) for v in row["beta"])
            if key in keep:
                out[key] = datum_from_json(row["datum"])
        return out


def _structure(raw, diags):
    S = _int(raw, "S", diags, 1)
    r1 = _int(raw, "r1", diags, 1)
    r2 = _int(raw, "r2", diags, 1)
    r3 = _int(raw, "r3", diags, 1)
    h = _int(raw, "h", diags, 1)
    b = _real(raw, "b", diags)
    if b is not None and not b > 1:
        # reported here; the structural conditions below are still checked
        diags.append(f"b: must exceed 1, got {b}")
    sigma = _real(raw, "sigma", diags, positive=True)
    xi = raw.get("xi")
    freq = None
    if xi is None:
        pass
    elif not isinstance(xi, list) or not xi or not all(isinstance(v, str) for v in xi):
        diags.append("xi: expected a non-empty list of decimal strings")
    elif h is not None:
        try:
            K = int(raw.get("c_xi_search", 200))
            freq = AlgebraicFrequencies(tuple(xi), h, estimate_c_xi(xi, h, K))
        except (DomainError, DependenceError, ValueError) as exc:
            diags.append(f"xi: {exc}")
    lin, non = [], []
    for n, t in enumerate(_section(raw, "linear_terms", diags, list)):
        try:
            lin.append(LinearTerm(int(t["s"]), int(t["k0"]), int(t["k1"]), int(t["k2"])))
        except (KeyError, TypeError, ValueError) as exc:
            diags.append(f"linear_terms[{n}]: bad term ({exc})")
    for n, t in enumerate(_section(raw, "nonlinear_terms", diags, list)):
        try:
            non.append(NonlinearTerm(int(t["l0"]), int(t["l1"])))
        except (KeyError, TypeError, ValueError) as exc:
            diags.append(f"nonlinear_terms[{n}]: bad term ({exc})")
    if None in (S, r1, r2, r3, b, sigma) or freq is None:
        return None
    st = Structure(S, r1, r2, r3, b, sigma, freq, tuple(lin), tuple(non))
    diags.extend(st.violations())
    return st


def _data(raw, diags, eps0):
    b_table, c_table = {}, {}
    for n, t in enumerate(raw["linear_terms"] if isinstance(raw.get("linear_terms"), list) else []):
        try:
            term = (int(t["s"]), int(t["k0"]), int(t["k1"]), int(t["k2"]))
        except (KeyError, TypeError, ValueError):
            continue
        for b0, q, eps in _coeff_rows(t.get("coefficients", []), f"linear_terms[{n}].coefficients", diags):
            b_table[term + (b0, q)] = eps
    for n, t in enumerate(raw["nonlinear_terms"] if isinstance(raw.get("nonlinear_terms"), list) else []):
        try:
            term = (int(t["l0"]), int(t["l1"]))
        except (KeyError, TypeError, ValueError):
            continue
        for b0, q, eps in _coeff_rows(t.get("coefficients", []), f"nonlinear_terms[{n}].coefficients", diags):
            c_table[term + (b0, q)] = eps
    dec = _section(raw, "decay", diags)
    try:
        bfrak = {tuple(int(v) for v in k.split(",")): float(x) for k, x in dec.get("bfrak", {}).items()}
        cfrak = {tuple(int(v) for v in k.split(",")): float(x) for k, x in dec.get("cfrak", {}).items()}
        return CoefficientData(b_table, c_table, eps0, float(dec.get("rho", 1.0)),
                               float(dec.get("rho_prime", 1.0)), bfrak, cfrak)
    except (DomainError, ValueError, TypeError, AttributeError) as exc:
        diags.append(f"decay: {exc}")
        return None


def _init(raw, diags, S):
    init = raw.get("init_data")
    if init is None:
        return
    if not isinstance(init, dict):
        diags.append("init_data: expected an object")
        return
    fam = _section(init, "family", diags)
    if fam:
        for k in ("delta", "ratio", "pole_factor", "pole_direction"):
            _real(fam, k, diags)
        if any(not isinstance(j, int) or not 0 <= j < (S or 1) for j in fam.get("x_indices", [0])):
            diags.append("init_data.family.x_indices: need integers 0 <= j < S")
    for n, row in enumerate(_section(init, "entries", diags, list)):
        try:
            datum_from_json(row["datum"])
            key = [int(v) for v in row["beta"]]
            if S is not None and not 0 <= key[-1] < S:
                raise ValueError("x-index must be below S")
        except (KeyError, TypeError, ValueError, DomainError) as exc:
            diags.append(f"init_data.entries[{n}]: {exc}")


def check_spec(raw) -> tuple:
    """(ProblemSpec or None, diagnostics)."""
    diags = []
    if not isinstance(raw, dict):
        return None, ["spec must be a JSON object"]
    for k in REQUIRED:
        if k not in raw:
            diags.append(f"missing field {k!r}")
    st = _structure(raw, diags)
    eps0 = _real(raw, "eps0", diags, positive=True)
    data = _data(raw, diags, eps0) if eps0 is not None else None
    _init(raw, diags, raw.get("S") if isinstance(raw.get("S"), int) else None)
    tr = _section(raw, "truncation", diags)
    B = _int(tr, "B", diags, 0)
    M = _int(tr, "M", diags, 1)
    ck = _section(raw, "ck", diags)
    M0 = _real(ck, "M0", diags, positive=True, default=7.0)
    rho1 = _real(ck, "rho1", diags, positive=True, default=0.5)
    rho1p = _real(ck, "rho1_prime", diags, positive=True, default=0.1)
    if st is not None and None not in (M0, rho1p):
        need = 2 * (st.l + 2) * np.exp(rho1p * float(np.max(np.abs(st.freq.xi))))
        if not M0 > need:
            diags.append(f"ck: M0 > 2(l+2) exp(rho1' max|xi|) fails ({M0} <= {need:.6g})")
    zbar0 = _real(ck, "Zbar0", diags, positive=True, default=8.0)
    zbar1 = _real(ck, "Zbar1", diags, positive=True) if "Zbar1" in ck else None
    _real(ck, "Xbar0", diags, positive=True, default=1.0)
    if "Xbar1" in ck:
        _real(ck, "Xbar1", diags, positive=True)
    if None not in (M0, zbar0):
        lo_ok = zbar0 > M0 if zbar1 is None else M0 < zbar1 < zbar0
        if not lo_ok:
            diags.append(f"ck: radii need M0 < Zbar1 < Zbar0 (M0={M0}, Zbar0={zbar0}, Zbar1={zbar1})")
    geom = None
    try:
        g = dict(_section(raw, "geometry", diags))
        if st is not None:
            g.setdefault("r", st.r)
            g.setdefault("r2", st.r2)
        if eps0 is not None:
            g.setdefault("eps0", eps0)
        geom = SectorGeometry.from_json(g)
        diags.extend(f"geometry: {v}" for v in geom.violations())
    except (GeometryError, TypeError, ValueError) as exc:
        diags.append(f"geometry: {exc}")
    grid = None
    try:
        gr = _section(raw, "grids", diags)
        if geom is not None:
            args = gr.get("t_args", [-0.08, -0.04, 0.0, 0.04, 0.08])
            n = len(args)
            ts = tuple(geom.t_radius * (k + 1) / n * np.exp(1j * (geom.t_direction + a)) for k, a in enumerate(args))
            grid = EvaluationGrid(ts, tuple(complex(v) for v in gr.get("z", [0.0])),
                                  tuple(complex(v) for v in gr.get("x", [0.0])))
            bad = [t for t in ts if not geom.contains_t(t)]
            if bad:
                diags.append("grids: t points outside the t-sector")
            if rho1 is not None and any(abs(x) >= rho1 for x in grid.x):
                diags.append("grids: x points outside |x| < rho1")
            if rho1p is not None and any(abs(z.imag) >= rho1p for z in grid.z):
                diags.append("grids: z points outside |Im z| < rho1'")
    except (TypeError, ValueError) as exc:
        diags.append(f"grids: {exc}")
    stages = _section(raw, "stages", diags)
    for k, v in stages.items():
        if not isinstance(v, dict):
            diags.append(f"stages.{k}: expected an object")
    for k, v in _section(raw, "seeds", diags).items():
        if not isinstance(v, int) or isinstance(v, bool):
            diags.append(f"seeds.{k}: expected an integer")
    if diags:
        return None, diags
    return ProblemSpec(raw, st, data, geom, grid, B, M, M0, rho1, rho1p), []


def load_raw(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise SpecError([f"cannot read {path}: {exc.strerror}"]) from None
    except json.JSONDecodeError as exc:
        raise SpecError([f"parse error at line {exc.lineno} column {exc.colno}: {exc.msg}"]) from None


def validate(path) -> ProblemSpec:
    """Validated spec, or SpecError carrying every violated condition."""
    raw = load_raw(path)
    try:
        spec, diags = check_spec(raw)
    except Exception as exc:  # validation must not escape with anything but diagnostics
        raise SpecError([f"unexpected malformed input: {type(exc).__name__}: {exc}"]) from None
    if diags:
        raise SpecError(diags)
    return spec


def load_default() -> ProblemSpec:
    return validate(default_spec_path())
