"""Dispersion laws, interaction kernels, momentum grids and the model menu."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import gamma as _gamma


class ConfigError(ValueError):
    """Invalid model or grid configuration."""


# ---------------------------------------------------------------- grids

GRID_RULES = ("gauss_legendre", "uniform_trapezoid", "lattice", "radial")


def sphere_area(d: int) -> float:
    """Surface area of the unit sphere S^{d-1} in R^d (2 for d=1)."""
    return 2.0 * math.pi ** (d / 2) / _gamma(d / 2)


def _radial_rule(n: int, cutoff: float, d: int, panel: int = 16):
    # composite Gauss-Legendre in r, panels of `panel` nodes
    npan = max(1, int(math.ceil(n / panel)))
    x, w = np.polynomial.legendre.leggauss(panel)
    edges = np.linspace(0.0, cutoff, npan + 1)
    a, b = edges[:-1, None], edges[1:, None]
    r = (0.5 * (b - a) * x + 0.5 * (a + b)).ravel()
    wr = (0.5 * (b - a) * w).ravel()
    return r, wr * sphere_area(d) * r ** (d - 1)


@dataclass(frozen=True, eq=False)
class MomentumGrid:
    """Quadrature discretization of d-dimensional momentum space.

    Tensor rules carry per-axis nodes; ``radial`` is a 1-D rule in |k| whose
    weights include the sphere factor, valid for isotropic integrands only.
    """

    d: int
    n_axis: int
    cutoff: float
    rule: str = "gauss_legendre"
    axis_nodes: np.ndarray = field(init=False, repr=False)
    axis_weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        d, n, lam = self.d, self.n_axis, self.cutoff
        if int(d) != d or d < 1:
            raise ConfigError(f"grid.d must be a positive integer, got {d}")
        if self.rule not in GRID_RULES:
            raise ConfigError(f"unknown grid rule {self.rule!r}")
        min_n = 1 if self.rule in ("lattice", "radial") else 2
        if int(n) != n or n < min_n:
            raise ConfigError(f"grid.n_axis must be an integer >= {min_n}, got {n}")
        if not lam > 0:
            raise ConfigError(f"grid.cutoff must be > 0, got {lam}")
        if self.rule == "gauss_legendre":
            x, w = np.polynomial.legendre.leggauss(n)
            x, w = lam * x, lam * w
        elif self.rule == "uniform_trapezoid":
            x = np.linspace(-lam, lam, n)
            w = np.full(n, 2 * lam / (n - 1))
            w[0] = w[-1] = lam / (n - 1)
        elif self.rule == "lattice":
            # nodes j*h, j=-K..K, equal weights h: closed under p-q
            if n % 2 == 0:
                raise ConfigError("lattice rule needs an odd n_axis")
            K = n // 2
            h = lam / K if K else 2 * lam
            x = h * np.arange(-K, K + 1, dtype=float)
            w = np.full(n, h)
        else:
            x, w = _radial_rule(n, lam, d)
        object.__setattr__(self, "axis_nodes", x)
        object.__setattr__(self, "axis_weights", w)

    @property
    def radial(self) -> bool:
        return self.rule == "radial"

    @property
    def size(self) -> int:
        return len(self.axis_nodes) if self.radial else len(self.axis_nodes) ** self.d

    @property
    def nodes(self) -> np.ndarray:
        """Node coordinates, shape (size, d); radial grids return radii in column 0."""
        if self.radial:
            out = np.zeros((self.size, self.d))
            out[:, 0] = self.axis_nodes
            return out
        mesh = np.meshgrid(*([self.axis_nodes] * self.d), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @property
    def weights(self) -> np.ndarray:
        if self.radial:
            return self.axis_weights.copy()
        w = self.axis_weights
        out = w
        for _ in range(self.d - 1):
            out = np.multiply.outer(out, w)
        return out.ravel()

    @property
    def norms(self) -> np.ndarray:
        if self.radial:
            return self.axis_nodes.copy()
        return np.linalg.norm(self.nodes, axis=-1)

    @property
    def spacing(self) -> float:
        if self.rule != "lattice":
            raise ConfigError("lattice spacing requested on a non-lattice grid")
        return self.axis_weights[0]

    def lattice_index(self, k) -> np.ndarray:
        """Integer lattice coordinates of momentum vectors (lattice rule only)."""
        h = self.spacing
        return np.rint(np.asarray(k, dtype=float) / h).astype(int)

    def to_config(self) -> dict:
        return {"d": self.d, "n_axis": self.n_axis, "cutoff": self.cutoff, "rule": self.rule}


def build_grid(d: int, n_axis: int, cutoff: float, rule: str = "gauss_legendre") -> MomentumGrid:
    return MomentumGrid(d, n_axis, cutoff, rule)


def single_node_grid(weight: float = 1.0, node: float = 0.0) -> MomentumGrid:
    """One node, one weight: the toy 'single mode' used throughout the tests."""
    lam = weight / 2.0
    g = MomentumGrid(1, 1, lam, "lattice")
    object.__setattr__(g, "axis_nodes", np.array([node]))
    object.__setattr__(g, "axis_weights", np.array([weight]))
    return g


# ---------------------------------------------------------------- dispersions

DISPERSION_KINDS = ("relativistic", "nonrel_shifted", "quadratic_shifted", "tabulated")


@dataclass(frozen=True, eq=False)
class Dispersion:
    kind: str
    d: int = 1
    m: float | None = None
    omega0: float | None = None
    values: tuple | None = None

    def __post_init__(self):
        if self.kind not in DISPERSION_KINDS:
            raise ConfigError(f"unknown dispersion kind {self.kind!r}")
        if self.kind == "relativistic" and not (self.m is not None and self.m > 0):
            raise ConfigError("relativistic dispersion needs mass m > 0")
        if self.kind in ("nonrel_shifted", "quadratic_shifted") and not (
            self.omega0 is not None and self.omega0 > 0
        ):
            raise ConfigError(f"{self.kind} dispersion needs omega0 > 0")
        if self.kind == "tabulated":
            if self.values is None or not np.all(np.isfinite(self.values)):
                raise ConfigError("tabulated dispersion needs finite values")

    @property
    def curvature(self) -> float:
        """c in omega = c k^2 - omega0 for the shifted kinds."""
        return {"nonrel_shifted": 0.5, "quadratic_shifted": 1.0}[self.kind]

    @property
    def changes_sign(self) -> bool:
        if self.kind == "tabulated":
            v = np.asarray(self.values)
            return bool(v.min() <= 0)
        return self.kind != "relativistic"

    def of_norm(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == "relativistic":
            return np.sqrt(r * r + self.m ** 2)
        if self.kind == "nonrel_shifted":
            return 0.5 * r * r - self.omega0
        if self.kind == "quadratic_shifted":
            return r * r - self.omega0
        raise ConfigError("tabulated dispersion has no analytic form; use on_grid")

    def __call__(self, k):
        k = np.asarray(k, dtype=float)
        if k.ndim == 0:
            return self.of_norm(np.abs(k))
        return self.of_norm(np.linalg.norm(k, axis=-1))

    def on_grid(self, grid: MomentumGrid) -> np.ndarray:
        if self.kind == "tabulated":
            v = np.asarray(self.values, dtype=float)
            if v.shape != (grid.size,):
                raise ConfigError(
                    f"tabulated dispersion has {v.size} values, grid has {grid.size} nodes"
                )
            return v.copy()
        return self.of_norm(grid.norms)

    def gradient(self, k):
        k = np.atleast_1d(np.asarray(k, dtype=float))
        if self.kind == "relativistic":
            return k / self.of_norm(np.linalg.norm(k))
        if self.kind == "tabulated":
            raise ConfigError("no gradient for tabulated dispersion")
        return 2 * self.curvature * k

    def hessian(self, k):
        k = np.atleast_1d(np.asarray(k, dtype=float))
        eye = np.eye(len(k))
        if self.kind == "relativistic":
            w = self.of_norm(np.linalg.norm(k))
            return eye / w - np.outer(k, k) / w ** 3
        if self.kind == "tabulated":
            raise ConfigError("no hessian for tabulated dispersion")
        return 2 * self.curvature * eye

    def to_config(self) -> dict:
        params = {}
        if self.m is not None:
            params["m"] = self.m
        if self.omega0 is not None:
            params["omega0"] = self.omega0
        if self.values is not None:
            params["values"] = [float(v) for v in self.values]
        return {"kind": self.kind, "params": params}


def relativistic(m: float = 1.0, d: int = 1) -> Dispersion:
    return Dispersion("relativistic", d, m=m)


def nonrel_shifted(omega0: float, d: int = 1) -> Dispersion:
    return Dispersion("nonrel_shifted", d, omega0=omega0)


def quadratic_shifted(omega0: float, d: int = 1) -> Dispersion:
    return Dispersion("quadratic_shifted", d, omega0=omega0)


# ---------------------------------------------------------------- kernels

KERNEL_NAMES = ("gaussian", "omega_gaussian", "constant")


@dataclass(frozen=True, eq=False)
class InteractionKernel:
    """Test function v of `arity` momentum arguments.

    ``func`` takes a list of momentum arrays (each shape (..., d)) and
    broadcasts.  ``values(grid)`` samples it on the grid tensor power.
    """

    name: str
    arity: int
    func: Callable = field(repr=False)
    symmetric: bool = True
    scale: float = 1.0

    def __call__(self, *ks):
        return self.scale * self.func(*ks)

    def values(self, grid: MomentumGrid, limit: int = 20_000_000) -> np.ndarray:
        M = grid.size
        if M ** self.arity > limit:
            raise ConfigError(f"kernel sample array {M}^{self.arity} exceeds {limit}")
        nodes = grid.nodes
        args = []
        for j in range(self.arity):
            shape = [1] * self.arity + [grid.d]
            shape[j] = M
            args.append(nodes.reshape(shape))
        out = np.asarray(self(*args), dtype=complex)
        if not np.all(np.isfinite(out)):
            raise ConfigError(f"kernel {self.name} has non-finite samples")
        return np.broadcast_to(out, (M,) * self.arity).copy()


def _sq(k):
    return np.sum(np.asarray(k, dtype=float) ** 2, axis=-1)


def gaussian_kernel(arity: int, scale: float = 1.0) -> InteractionKernel:
    """Product of f(k) = exp(-k^2/2) over all arguments."""
    def f(*ks):
        return np.exp(-0.5 * sum(_sq(k) for k in ks))
    return InteractionKernel("gaussian", arity, f, True, scale)


def omega_gaussian_kernel(omega: Dispersion, scale: float = 1.0) -> InteractionKernel:
    """v(k) = omega(k) f(k), the Remark-2 choice making B and A elementary."""
    def f(k):
        return omega(k) * np.exp(-0.5 * _sq(k))
    return InteractionKernel("omega_gaussian", 1, f, True, scale)


def constant_kernel(arity: int, scale: float = 1.0) -> InteractionKernel:
    def f(*ks):
        return np.ones(np.broadcast_shapes(*[np.shape(k)[:-1] for k in ks]))
    return InteractionKernel("constant", arity, f, True, scale)


def cubic_ti_kernel(scale: float = 1.0) -> InteractionKernel:
    """v(p, q) = exp(-(q^2 + (p-q)^2)/2); symmetric under q -> p-q."""
    def f(p, q):
        p, q = np.asarray(p, float), np.asarray(q, float)
        return np.exp(-0.5 * (_sq(q) + _sq(p - q)))
    return InteractionKernel("gaussian", 2, f, True, scale)


# ---------------------------------------------------------------- models

VARIANTS = ("pure_creation", "linear_coupling", "cubic_ti", "lee", "cubic_vacuum")


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """One of the named Hamiltonians H0 + lambda V on a momentum grid.

    pure_creation   V = (1/sqrt(n!)) sum v a*...a* + h.c.
    linear_coupling V = sum v a* + h.c.
    cubic_ti        V = (1/sqrt 2) sum v(p,q) a*(q) a*(p-q) a(p) + h.c.
    lee             V = sum v(p,q) a*(p-q) b*(q) c(p) + h.c.
    cubic_vacuum    V = sum v(k1,k2,k3) phi(k1) phi(k2) phi(k3), phi = a + a*
    """

    variant: str
    grid: MomentumGrid
    kernel: InteractionKernel
    dispersion: Dispersion | None = None
    coupling: float = 0.0
    arity: int = 1
    lee_dispersions: tuple | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown model variant {self.variant!r}")
        if not (self.coupling >= 0 and math.isfinite(self.coupling)):
            raise ConfigError("model.lambda must be real and >= 0")
        if self.variant == "lee":
            if self.lee_dispersions is None or len(self.lee_dispersions) != 3:
                raise ConfigError("lee model needs three dispersions (a, b, c)")
        elif self.dispersion is None:
            raise ConfigError("model needs a dispersion")
        want = {"pure_creation": self.arity, "linear_coupling": 1, "cubic_ti": 2,
                "lee": 2, "cubic_vacuum": 3}[self.variant]
        if self.kernel.arity != want:
            raise ConfigError(f"{self.variant} needs a kernel of arity {want}, got {self.kernel.arity}")
        if self.variant == "pure_creation" and self.arity < 1:
            raise ConfigError("pure_creation arity must be >= 1")
        if not self.decaying and self.variant != "cubic_vacuum":
            e = self.min_energy()
            if not e > 0:
                raise ConfigError(f"non-decaying model has vertex energy {e} <= 0 on the grid")

    # ---- structure
    @property
    def bose_factor(self) -> float:
        """1/sqrt(prod multiplicity!) for identical operators in a vertex."""
        if self.variant == "pure_creation":
            return 1.0 / math.sqrt(math.factorial(self.arity))
        if self.variant == "cubic_ti":
            return 1.0 / math.sqrt(2.0)
        return 1.0

    @property
    def decaying(self) -> bool:
        if self.variant == "lee":
            return self.min_energy() <= 0
        if self.variant in ("cubic_ti",) and self.dispersion.changes_sign:
            return True
        if self.dispersion.kind == "tabulated" or self.variant == "cubic_ti":
            return self.min_energy() <= 0
        return self.dispersion.changes_sign

    def omega(self) -> np.ndarray:
        return self.dispersion.on_grid(self.grid)

    def min_energy(self) -> float:
        g = self.grid
        if self.variant in ("pure_creation", "linear_coupling", "cubic_vacuum"):
            return self.arity * float(self.omega().min()) if self.variant == "pure_creation" \
                else float(self.omega().min())
        e = self.pair_energies()
        return float(np.nanmin(e))

    def pair_energies(self, p_index=None) -> np.ndarray:
        """omega(p-q)+omega(q)-omega(p) (or the Lee analog) on node pairs.

        Entries with p-q off a lattice grid are NaN.  Shape (M, M) indexed
        [p, q], or (M,) for a fixed p node.
        """
        g = self.grid
        nodes = g.nodes
        P = nodes if p_index is None else nodes[[p_index]]
        if self.variant == "lee":
            wa, wb, wc = self.lee_dispersions
        else:
            wa = wb = wc = self.dispersion
        if g.rule == "lattice" or any(w.kind == "tabulated" for w in (wa, wb, wc)):
            idx = self.lattice_difference(p_index)
            ok = idx >= 0
            ea = np.where(ok, self._on_nodes(wa)[np.where(ok, idx, 0)], np.nan)
        else:
            ea = wa(P[:, None, :] - nodes[None, :, :])
        wc_nodes = self._on_nodes(wc)
        wc_p = wc_nodes if p_index is None else wc_nodes[[p_index]]
        e = ea + self._on_nodes(wb)[None, :] - wc_p[:, None]
        return e if p_index is None else e[0]

    def _on_nodes(self, w: Dispersion) -> np.ndarray:
        return w.on_grid(self.grid)

    def lattice_difference(self, p_index=None) -> np.ndarray:
        """Node index of p-q for each (p, q), -1 where p-q is off the lattice."""
        g = self.grid
        if g.rule != "lattice":
            raise ConfigError("momentum closure needs the lattice grid rule")
        ij = g.lattice_index(g.nodes)                     # (M, d)
        K = g.n_axis // 2
        P = ij if p_index is None else ij[[p_index]]
        diff = P[:, None, :] - ij[None, :, :]
        ok = np.all(np.abs(diff) <= K, axis=-1)
        flat = np.zeros(diff.shape[:2], dtype=int)
        for ax in range(g.d):
            flat = flat * g.n_axis + (diff[..., ax] + K)
        return np.where(ok, flat, -1)

    def to_config(self) -> dict:
        disp = (
            {"kind": "lee", "params": {k: w.to_config() for k, w in zip("abc", self.lee_dispersions)}}
            if self.variant == "lee" else self.dispersion.to_config()
        )
        model = {"variant": self.variant, "lambda": self.coupling, "kernel": self.kernel.name,
                 "kernel_scale": self.kernel.scale}
        if self.variant == "pure_creation":
            model["arity"] = self.arity
        return {"model": model, "dispersion": disp, "grid": self.grid.to_config()}


def energy_total(model: ModelSpec, momenta) -> float:
    """Energy attached to one vertex for the given node indices.

    pure_creation: sum omega(p_i); linear_coupling: omega(k);
    cubic_ti: omega(p-q)+omega(q)-omega(p) for (p, q); lee: the three-species analog;
    cubic_vacuum: omega(k1)+omega(k2)+omega(k3).
    """
    idx = tuple(int(i) for i in np.atleast_1d(momenta))
    want = {"pure_creation": model.arity, "linear_coupling": 1, "cubic_ti": 2, "lee": 2,
            "cubic_vacuum": 3}[model.variant]
    if len(idx) != want:
        raise ConfigError(f"{model.variant} vertex takes {want} momenta, got {len(idx)}")
    if model.variant in ("cubic_ti", "lee"):
        e = model.pair_energies(idx[0])[idx[1]]
        if not np.isfinite(e):
            raise ConfigError("p-q is not a grid node")
        return float(e)
    w = model.omega()
    return float(sum(w[i] for i in idx))


# convenience constructors -------------------------------------------------

def PureCreation(n, kernel, dispersion, grid, coupling=0.0) -> ModelSpec:
    return ModelSpec("pure_creation", grid, kernel, dispersion, coupling, arity=n)


def LinearCoupling(kernel, dispersion, grid, coupling=0.0) -> ModelSpec:
    return ModelSpec("linear_coupling", grid, kernel, dispersion, coupling, arity=1)


def CubicTI(kernel, dispersion, grid, coupling=0.0) -> ModelSpec:
    return ModelSpec("cubic_ti", grid, kernel, dispersion, coupling, arity=2)


def LeeModel(kernel, omega_a, omega_b, omega_c, grid, coupling=0.0) -> ModelSpec:
    return ModelSpec("lee", grid, kernel, None, coupling, arity=2,
                     lee_dispersions=(omega_a, omega_b, omega_c))


def CubicVacuum(kernel, dispersion, grid, coupling=0.0) -> ModelSpec:
    return ModelSpec("cubic_vacuum", grid, kernel, dispersion, coupling, arity=3)


# ---------------------------------------------------------------- config

_TOP_KEYS = {"model", "dispersion", "grid", "experiment"}
_MODEL_KEYS = {"variant", "lambda", "arity", "kernel", "kernel_scale"}
_DISP_KEYS = {"kind", "params"}
_GRID_KEYS = {"d", "n_axis", "cutoff", "rule"}
_PARAM_KEYS = {"relativistic": {"m"}, "nonrel_shifted": {"omega0"},
               "quadratic_shifted": {"omega0"}, "tabulated": {"values"}}


def _check_keys(section: str, got: dict, allowed: set):
    if not isinstance(got, dict):
        raise ConfigError(f"{section} must be an object")
    extra = set(got) - allowed
    if extra:
        raise ConfigError(f"unknown keys in {section}: {sorted(extra)}")


def _dispersion_from(cfg: dict, d: int) -> Dispersion:
    _check_keys("dispersion", cfg, _DISP_KEYS)
    kind = cfg.get("kind")
    if kind not in DISPERSION_KINDS:
        raise ConfigError(f"unknown dispersion kind {kind!r}")
    params = cfg.get("params", {})
    _check_keys(f"dispersion.params ({kind})", params, _PARAM_KEYS[kind])
    vals = params.get("values")
    return Dispersion(kind, d, m=params.get("m"), omega0=params.get("omega0"),
                      values=None if vals is None else tuple(float(v) for v in vals))


def _kernel_for(variant, name, scale, arity, disp) -> InteractionKernel:
    if name not in KERNEL_NAMES:
        raise ConfigError(f"unknown kernel {name!r}")
    if variant == "cubic_ti" or variant == "lee":
        if name != "gaussian":
            raise ConfigError(f"{variant} supports only the gaussian kernel")
        return cubic_ti_kernel(scale)
    k = {"pure_creation": arity, "linear_coupling": 1, "cubic_vacuum": 3}[variant]
    if name == "omega_gaussian":
        if k != 1:
            raise ConfigError("omega_gaussian kernel has arity 1")
        return omega_gaussian_kernel(disp, scale)
    if name == "constant":
        return constant_kernel(k, scale)
    return gaussian_kernel(k, scale)


def model_from_config(cfg: dict) -> ModelSpec:
    """Build a ModelSpec from the nested JSON config (experiment section ignored)."""
    _check_keys("config", cfg, _TOP_KEYS)
    for sec in ("model", "dispersion", "grid"):
        if sec not in cfg:
            raise ConfigError(f"missing config section {sec!r}")
    m, g = cfg["model"], cfg["grid"]
    _check_keys("model", m, _MODEL_KEYS)
    _check_keys("grid", g, _GRID_KEYS)
    try:
        grid = MomentumGrid(g["d"], g["n_axis"], float(g["cutoff"]), g.get("rule", "gauss_legendre"))
    except KeyError as e:
        raise ConfigError(f"missing grid key {e}") from None
    variant = m.get("variant")
    if variant not in VARIANTS:
        raise ConfigError(f"unknown model variant {variant!r}")
    lam = m.get("lambda", 0.0)
    if not isinstance(lam, (int, float)) or isinstance(lam, bool):
        raise ConfigError("model.lambda must be a number")
    arity = int(m.get("arity", 1))
    name = m.get("kernel", "gaussian")
    scale = float(m.get("kernel_scale", 1.0))
    if variant == "lee":
        d = cfg["dispersion"]
        _check_keys("dispersion", d, _DISP_KEYS)
        if d.get("kind") != "lee":
            raise ConfigError("lee model needs dispersion.kind = 'lee'")
        p = d.get("params", {})
        _check_keys("dispersion.params (lee)", p, {"a", "b", "c"})
        ws = tuple(_dispersion_from(p[k], grid.d) for k in "abc")
        return LeeModel(_kernel_for(variant, name, scale, 2, None), *ws, grid, float(lam))
    disp = _dispersion_from(cfg["dispersion"], grid.d)
    kernel = _kernel_for(variant, name, scale, arity, disp)
    return ModelSpec(variant, grid, kernel, disp, float(lam),
                     arity=arity if variant == "pure_creation" else kernel.arity)


def load_config(path) -> dict:
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from None


def apply_override(cfg: dict, item: str) -> dict:
    """Apply 'a.b.c=value' (value parsed as JSON, else kept as string)."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not key=value")
    key, raw = item.split("=", 1)
    try:
        val = json.loads(raw)
    except json.JSONDecodeError:
        val = raw
    parts = key.split(".")
    node = cfg
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override path {key!r} crosses a non-object")
    node[parts[-1]] = val
    return cfg
