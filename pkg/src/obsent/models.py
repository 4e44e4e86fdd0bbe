"""Desk-scale spin and hopping models used by the experiment runners.

Random bath splittings come from a splitmix-style 64-bit recurrence (wrap
around arithmetic on 64 bits, then a 53-bit mantissa), so a fixed seed yields
bit-identical Hamiltonians on every platform:

    state <- (state + 0x9E3779B97F4A7C15) mod 2^64
    z <- state;  z <- (z xor (z >> 30)) * 0xBF58476D1CE4E5B9 mod 2^64
    z <- (z xor (z >> 27)) * 0x94D049BB133111EB mod 2^64
    z <- z xor (z >> 31)
    draw = lo + (hi - lo) * (z >> 11) / 2^53
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .dynamics import Protocol
from .errors import SpecInvalid
from .linalg import HermitianOperator, kron_all

PAULI_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=np.complex128)
PAULI_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=np.complex128)
PAULI_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=np.complex128)
IDENTITY_2 = np.eye(2, dtype=np.complex128)
NUMBER_OP = (IDENTITY_2 - PAULI_Z) / 2  # counts |1> as occupied

_MASK64 = (1 << 64) - 1


def splitmix64_stream(seed: int):
    state = seed & _MASK64
    while True:
        state = (state + 0x9E3779B97F4A7C15) & _MASK64
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        z ^= z >> 31
        yield z


def draw_uniform(seed: int, count: int, lo: float = 0.5, hi: float = 1.5):
    """Deterministic uniform draws in [lo, hi) from the documented generator."""
    gen = splitmix64_stream(seed)
    return tuple(lo + (hi - lo) * ((next(gen) >> 11) / float(1 << 53))
                 for _ in range(count))


def site_operator(op: np.ndarray, site: int, n_sites: int) -> np.ndarray:
    """Embed a single-site operator into an n-site tensor product."""
    factors = [IDENTITY_2] * n_sites
    factors[site] = op
    return kron_all(factors)


def two_site_operator(op_a, site_a, op_b, site_b, n_sites) -> np.ndarray:
    factors = [IDENTITY_2] * n_sites
    factors[site_a] = op_a
    factors[site_b] = op_b
    return kron_all(factors)


def hopping_bond(site_a: int, site_b: int, n_sites: int, j: float) -> np.ndarray:
    """(j/2)(X_a X_b + Y_a Y_b): one particle-conserving hopping bond."""
    return (j / 2) * (two_site_operator(PAULI_X, site_a, PAULI_X, site_b, n_sites)
                      + two_site_operator(PAULI_Y, site_a, PAULI_Y, site_b, n_sites))


@dataclass(frozen=True)
class ModelSpec:
    """Reproducible description of a model family instance."""

    kind: str = "spin_star"
    bath_sites: tuple = (8,)
    system_sites: int = 1
    coupling: tuple = (0.1,)
    bath_ring: float = 0.2
    omegas: tuple | None = None
    eps0: float = 1.0
    tunnel: float = 0.4
    hopping: float = 1.0
    transverse_field: float = 0.0   # on-site X field; breaks particle number
    drive_kind: str = "none"        # none | ramp | periodic | quench
    drive_amplitude: float = 0.0
    drive_period: float = 1.0
    seed: int = 1
    custom_h: tuple | None = None   # nested [re, im] rows for kind == custom

    def __post_init__(self):
        object.__setattr__(self, "bath_sites", tuple(int(s) for s in self.bath_sites))
        object.__setattr__(self, "coupling", tuple(float(g) for g in self.coupling))
        if self.omegas is not None:
            object.__setattr__(self, "omegas", tuple(float(w) for w in self.omegas))
        if self.kind == "hopping_particle":
            # the hopping chain carries a fixed two-site system block
            object.__setattr__(self, "system_sites", 2)

    def validate(self):
        kinds = {"spin_star", "spin_chain_two_bath", "hopping_particle", "custom"}
        if self.kind not in kinds:
            raise SpecInvalid(f"unknown model kind {self.kind!r}")
        if self.drive_kind not in {"none", "ramp", "periodic", "quench"}:
            raise SpecInvalid(f"unknown drive kind {self.drive_kind!r}")
        for name in ("bath_ring", "eps0", "tunnel", "hopping",
                     "transverse_field", "drive_amplitude", "drive_period"):
            if not math.isfinite(getattr(self, name)):
                raise SpecInvalid(f"{name} must be finite")
        if any(not math.isfinite(g) for g in self.coupling):
            raise SpecInvalid("couplings must be finite")
        if self.kind == "custom":
            if self.custom_h is None:
                raise SpecInvalid("custom models need an explicit Hamiltonian")
            return
        if self.kind == "spin_star" and len(self.bath_sites) != 1:
            raise SpecInvalid("spin_star has exactly one bath")
        if self.kind == "spin_chain_two_bath" and len(self.bath_sites) != 2:
            raise SpecInvalid("spin_chain_two_bath has exactly two baths")
        if self.kind == "hopping_particle" and len(self.bath_sites) != 2:
            raise SpecInvalid("hopping_particle has exactly two baths")
        if any(s < 1 for s in self.bath_sites):
            raise SpecInvalid("every bath needs at least one site")
        if len(self.coupling) != len(self.bath_sites):
            raise SpecInvalid("need one coupling per bath")
        n_sys = self.system_sites if self.kind == "hopping_particle" else 1
        total = n_sys + sum(self.bath_sites)
        if 2 ** total > 4096:
            raise SpecInvalid(f"total dimension 2^{total} exceeds 4096")
        if self.omegas is not None and len(self.omegas) != sum(self.bath_sites):
            raise SpecInvalid("omegas must list one splitting per bath site")

    def bath_splittings(self) -> tuple:
        if self.omegas is not None:
            return self.omegas
        return draw_uniform(self.seed, sum(self.bath_sites))

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("bath_sites", "coupling", "omegas"):
            if d[key] is not None:
                d[key] = list(d[key])
        if d["custom_h"] is not None:
            d["custom_h"] = [
                [list(x) if isinstance(x, (list, tuple)) else x for x in row]
                for row in d["custom_h"]]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        for key in ("bath_sites", "coupling", "omegas"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        if d.get("custom_h") is not None:
            d["custom_h"] = tuple(
                tuple(tuple(x) if isinstance(x, list) else x for x in row)
                for row in d["custom_h"])
        return cls(**d)


@dataclass(frozen=True)
class BuiltModel:
    """Operators of a model, ready for the experiment runners."""

    spec: ModelSpec
    dims: tuple                      # one factor per site
    system_factors: tuple
    bath_factors: tuple              # tuple of per-bath factor index tuples
    protocol: Protocol               # full system-bath drive
    v_full: np.ndarray               # total interaction, embedded
    h_baths: tuple                   # bath-subspace Hamiltonians
    n_baths: tuple | None            # bath-subspace number operators
    n_total_full: HermitianOperator | None
    _h_system_builder: object = field(repr=False, default=None)

    @property
    def n_baths_count(self) -> int:
        return len(self.bath_factors)

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims))

    def h_system_full(self, grid_k: int) -> HermitianOperator:
        """Embedded system Hamiltonian in force at grid point grid_k."""
        k = min(grid_k, self.protocol.n_steps - 1)
        return self._h_system_builder(k)


def _drive_values(spec: ModelSpec, t_max: float, steps: int) -> np.ndarray:
    """Drive parameter per step, sampled at segment midpoints."""
    mids = (np.arange(steps) + 0.5) * (t_max / steps)
    if spec.drive_kind == "none":
        return np.full(steps, spec.eps0)
    if spec.drive_kind == "ramp":
        return spec.eps0 + spec.drive_amplitude * mids
    if spec.drive_kind == "periodic":
        return spec.eps0 + spec.drive_amplitude * np.sin(
            2 * np.pi * mids / spec.drive_period)
    if spec.drive_kind == "quench":
        return spec.eps0 + spec.drive_amplitude * (mids >= t_max / 2)
    raise SpecInvalid(f"unknown drive kind {spec.drive_kind!r}")


def _bath_block(n: int, omegas, ring: float) -> np.ndarray:
    """Spin-bath Hamiltonian on its own subspace: onsite Z plus an X-X ring."""
    h = np.zeros((2 ** n, 2 ** n), dtype=np.complex128)
    for k in range(n):
        h += (omegas[k] / 2) * site_operator(PAULI_Z, k, n)
    if n == 2:
        h += ring * two_site_operator(PAULI_X, 0, PAULI_X, 1, n)
    elif n >= 3:
        for k in range(n):
            h += ring * two_site_operator(PAULI_X, k, PAULI_X, (k + 1) % n, n)
    return h


def _hopping_block(n: int, omegas, j: float) -> np.ndarray:
    """Open hopping chain with onsite energies on its own subspace."""
    h = np.zeros((2 ** n, 2 ** n), dtype=np.complex128)
    for k in range(n):
        h += omegas[k] * site_operator(NUMBER_OP, k, n)
    for k in range(n - 1):
        h += hopping_bond(k, k + 1, n, j)
    return h


def build(spec: ModelSpec, t_max: float, steps: int) -> BuiltModel:
    """Instantiate the operators of a model and its drive protocol.

    The external drive only touches the system Hamiltonian; bath blocks and
    interactions are static.
    """
    spec.validate()
    if steps < 1 or not math.isfinite(t_max) or t_max < 0:
        raise SpecInvalid("need steps >= 1 and finite non-negative t_max")

    if spec.kind == "custom":
        rows = [[complex(x[0], x[1]) if isinstance(x, (list, tuple)) else complex(x)
                 for x in row] for row in spec.custom_h]
        h = HermitianOperator(np.array(rows, dtype=np.complex128))
        protocol = Protocol(t_max, (h,) * steps, constant=True,
                            metadata={"drive": "none", "kind": "custom"})
        dim = h.dim
        zero = np.zeros((dim, dim), dtype=np.complex128)
        return BuiltModel(spec, (dim,), (0,), (), protocol, zero, (), None,
                          None, _h_system_builder=lambda k: h)

    eps = _drive_values(spec, t_max, steps)
    omegas = spec.bath_splittings()

    if spec.kind in ("spin_star", "spin_chain_two_bath"):
        baths = spec.bath_sites
        n_total = 1 + sum(baths)
        dims = (2,) * n_total
        system_factors = (0,)
        bath_factors = []
        offset = 1
        for nb in baths:
            bath_factors.append(tuple(range(offset, offset + nb)))
            offset += nb
        bath_factors = tuple(bath_factors)

        h_baths = []
        pos = 0
        for nb in baths:
            h_baths.append(HermitianOperator(
                _bath_block(nb, omegas[pos:pos + nb], spec.bath_ring)))
            pos += nb

        # embed static pieces on the full space
        h_static = np.zeros((2 ** n_total, 2 ** n_total), dtype=np.complex128)
        for nb, factors, hb in zip(baths, bath_factors, h_baths):
            pre = int(2 ** factors[0])
            post = int(2 ** (n_total - factors[-1] - 1))
            h_static += kron_all([np.eye(pre), hb.matrix, np.eye(post)])

        v_full = np.zeros_like(h_static)
        if spec.kind == "spin_star":
            nb = baths[0]
            collective = sum(site_operator(PAULI_X, f, n_total)
                             for f in bath_factors[0])
            v_full = spec.coupling[0] * (
                site_operator(PAULI_X, 0, n_total) @ collective) / math.sqrt(nb)
        else:
            for g, factors in zip(spec.coupling, bath_factors):
                v_full += g * two_site_operator(PAULI_X, 0, PAULI_X,
                                                factors[0], n_total)
        h_static += v_full

        z_emb = site_operator(PAULI_Z, 0, n_total)
        x_emb = site_operator(PAULI_X, 0, n_total)
        sys_static = (spec.tunnel / 2) * x_emb
        h_static_total = h_static + sys_static
        h_static_total.setflags(write=False)
        z_emb.setflags(write=False)
        sys_static.setflags(write=False)

        def step_builder(k):
            return HermitianOperator(h_static_total + (eps[k] / 2) * z_emb)

        def h_system_builder(k):
            return HermitianOperator(sys_static + (eps[k] / 2) * z_emb)

        protocol = Protocol(t_max, builder=step_builder, n_steps=steps,
                            constant=spec.drive_kind == "none",
                            metadata={"drive": spec.drive_kind, "kind": spec.kind})
        return BuiltModel(spec, dims, system_factors, bath_factors, protocol,
                          v_full, tuple(h_baths), None, None,
                          _h_system_builder=h_system_builder)

    # hopping_particle: bath1 sites -- system pair -- bath2 sites, all hopping
    n_sys = spec.system_sites
    if n_sys != 2:
        raise SpecInvalid("hopping_particle uses a two-site system")
    nb1, nb2 = spec.bath_sites
    n_total = n_sys + nb1 + nb2
    dims = (2,) * n_total
    system_factors = (0, 1)
    bath_factors = (tuple(range(2, 2 + nb1)),
                    tuple(range(2 + nb1, 2 + nb1 + nb2)))

    h_baths = []
    pos = 0
    for nb in (nb1, nb2):
        h_baths.append(HermitianOperator(
            _hopping_block(nb, omegas[pos:pos + nb], spec.hopping)))
        pos += nb
    n_baths = tuple(
        HermitianOperator(sum(site_operator(NUMBER_OP, k, nb)
                              for k in range(nb)))
        for nb in (nb1, nb2))

    h_static = np.zeros((2 ** n_total, 2 ** n_total), dtype=np.complex128)
    for factors, hb in zip(bath_factors, h_baths):
        pre = int(2 ** factors[0])
        post = int(2 ** (n_total - factors[-1] - 1))
        h_static += kron_all([np.eye(pre), hb.matrix, np.eye(post)])

    # contacts: first site of bath 1 <-> system site 0, system site 1 <-> first of bath 2
    v_full = (spec.coupling[0] * hopping_bond(bath_factors[0][0], 0, n_total, 1.0)
              + spec.coupling[1] * hopping_bond(1, bath_factors[1][0], n_total, 1.0))
    h_static += v_full

    sys_static = hopping_bond(0, 1, n_total, spec.hopping)
    if spec.transverse_field != 0.0:
        sys_static = sys_static + spec.transverse_field * site_operator(
            PAULI_X, 0, n_total)
    n_sys_emb = (site_operator(NUMBER_OP, 0, n_total)
                 + site_operator(NUMBER_OP, 1, n_total))
    h_static_total = h_static + sys_static

    def step_builder(k):
        return HermitianOperator(h_static_total + eps[k] * n_sys_emb)

    def h_system_builder(k):
        return HermitianOperator(sys_static + eps[k] * n_sys_emb)

    n_total_full = HermitianOperator(
        sum(site_operator(NUMBER_OP, k, n_total) for k in range(n_total)))
    protocol = Protocol(t_max, builder=step_builder, n_steps=steps,
                        constant=spec.drive_kind == "none",
                        metadata={"drive": spec.drive_kind, "kind": spec.kind})
    return BuiltModel(spec, dims, system_factors, bath_factors, protocol,
                      v_full, tuple(h_baths), n_baths, n_total_full,
                      _h_system_builder=h_system_builder)
