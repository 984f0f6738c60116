"""System parameters of the control/feedback loop and the CGF models they induce.

Data sizes are in bits, rates in bits/s, frequencies in cycles/s, times in
seconds. The builders turn a :class:`ScenarioConfig` and a compression ratio
into :class:`~cgclatency.distributions.CgfModel` instances whose gamma rates
already include the data-size and processor-frequency scaling.
"""

from __future__ import annotations

import enum
import json
import math
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping

from .distributions import (
    CgfModel,
    DomainError,
    GammaTerm,
    GaussianTerm,
    LatticeTerm,
)

KB = 8 * 1024
MB = 8 * 1024 * 1024

#: constants of the two-antenna deadline-constrained capacity approximation
CAPACITY_CONSTANTS = (2.8771, 1.8771, 3.411)

LINK_IDS = ("HL", "LL", "PF1", "PF2", "CD", "VI")


class ConfigurationError(ValueError):
    """Raised for inconsistent scenario definitions."""


class CompressionKind(str, enum.Enum):
    EXP = "exp"
    POWER = "power"


class ModelKind(str, enum.Enum):
    ET = "ET"      # event-triggered feedback path only
    CL = "CL"      # control link only
    LOOP = "Loop"  # control link followed by the event-triggered path


@dataclass(frozen=True)
class LinkConfig:
    bandwidth: float = 1.0
    power: float = 1.0
    distance: float = 1.0
    path_loss_exp: float = 0.0
    noise_psd: float = 1.0
    outage_prob: float = 0.0
    packets: int = 1
    packet_bits: float = 1.0
    packet_time: float | None = None

    def __post_init__(self):
        for name in ("bandwidth", "power", "distance", "noise_psd", "packet_bits"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        if not 0.0 <= self.outage_prob < 1.0:
            raise ConfigurationError("outage_prob must lie in [0, 1)")
        if int(self.packets) != self.packets or self.packets < 1:
            raise ConfigurationError("packets must be a positive integer")

    @property
    def gain(self) -> float:
        """Large-scale gain ``d^-l``."""
        return self.distance ** (-self.path_loss_exp)


@dataclass(frozen=True)
class ComputeConfig:
    mec_shape: float = 1.25
    ra_shape: float = 1.5
    rate_LL: float = 1.0
    rate_VI: float = 1.0
    mec_freq: float = 15e9
    ra_freq: float = 5e9
    hl_total_bits: float = 3 * 128 * KB
    et_bits: float = 1 * MB

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ConfigurationError(f"{f.name} must be positive")


@dataclass(frozen=True)
class CompressionModel:
    kind: CompressionKind = CompressionKind.EXP
    psi: float = 3.5
    omega0: float = 0.1
    omegas: tuple = (1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0)
    kappa_max: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "kind", CompressionKind(self.kind))
        object.__setattr__(self, "omegas", tuple(float(w) for w in self.omegas))
        if not self.psi > 0:
            raise ConfigurationError("psi must be positive")
        if not 0.0 < self.omega0 < 1.0:
            raise ConfigurationError("omega0 must lie in (0, 1)")
        if len(self.omegas) != 8:
            raise ConfigurationError("omegas holds omega_1..omega_8")
        if any(w <= 0 for i, w in enumerate(self.omegas) if i != 6):
            raise ConfigurationError("omega_1..omega_6 and omega_8 must be positive")
        if not self.kappa_max >= 1.0:
            raise ConfigurationError("kappa_max must be at least 1")


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to build the latency models of one loop.

    ``cd_packet_mode`` selects how the compressed data is packetised:
    ``"scale"`` keeps the packet size and uses
    ``ceil(kappa_ref / kappa * N_ref)`` packets; ``"fixed"`` keeps the packet
    count at ``links["CD"].packets`` and shrinks the packets instead.
    """

    links: Mapping[str, LinkConfig]
    compute: ComputeConfig = field(default_factory=ComputeConfig)
    compression: CompressionModel = field(default_factory=CompressionModel)
    t_u: float = 5e-3
    T_s: float = 1e-2
    tau_PF: float = 0.25
    n_PF: float = 1000.0
    N_CD_at_kappa1: int | None = None
    kappa_ref: float = 1.1
    cd_packet_mode: str = "scale"
    corrected_rate: bool = False
    preset_name: str = "custom"

    def __post_init__(self):
        links = dict(self.links)
        missing = set(LINK_IDS) - set(links)
        if missing:
            raise ConfigurationError(f"missing links: {sorted(missing)}")
        extra = set(links) - set(LINK_IDS)
        if extra:
            raise ConfigurationError(f"unknown links: {sorted(extra)}")
        object.__setattr__(self, "links", links)
        if not self.t_u > 0:
            raise ConfigurationError("t_u must be positive")
        if self.cd_packet_mode not in ("scale", "fixed"):
            raise ConfigurationError("cd_packet_mode must be 'scale' or 'fixed'")
        if not self.tau_PF >= 0:
            raise ConfigurationError("tau_PF must be nonnegative")

    def __hash__(self):
        return hash((tuple(sorted(self.links.items())), self.compute, self.compression,
                     self.t_u, self.T_s, self.tau_PF, self.n_PF, self.N_CD_at_kappa1,
                     self.kappa_ref, self.cd_packet_mode, self.corrected_rate, self.preset_name))

    def with_links(self, **updates: LinkConfig) -> "ScenarioConfig":
        links = dict(self.links)
        links.update(updates)
        return replace(self, links=links)

    def n_cd(self, kappa: float) -> int:
        """Number of compressed-data packets at compression ratio ``kappa``."""
        n_ref = self.links["CD"].packets
        if self.cd_packet_mode == "fixed":
            return n_ref
        # tolerance keeps ceil(1.1/1.1*20) at 20
        return max(1, math.ceil(self.kappa_ref / kappa * n_ref - 1e-9))

    @property
    def kappa_max(self) -> float:
        return self.compression.kappa_max


# -- link rates --------------------------------------------------------------


def outage_rate(link: LinkConfig) -> float:
    """Fixed rate whose Rayleigh-fading outage probability is ``link.outage_prob``.

    Returns 0 for a zero outage probability (a degenerate link).
    """
    snr = link.gain * link.power / (link.noise_psd * link.bandwidth)
    return link.bandwidth * math.log2(1.0 - snr * math.log1p(-link.outage_prob))


def packet_time(link: LinkConfig) -> float:
    rate = outage_rate(link)
    if rate == 0.0:
        raise DomainError("zero outage probability gives a zero rate")
    return link.packet_bits / rate


def power_for_outage_rate(link: LinkConfig, rate: float) -> float:
    """Power at which :func:`outage_rate` equals ``rate``."""
    if link.outage_prob == 0.0:
        raise DomainError("no finite power achieves a positive rate at zero outage")
    try:
        growth = math.expm1(rate / link.bandwidth * math.log(2.0))
    except OverflowError:
        return math.inf
    return growth * link.noise_psd * link.bandwidth / (-math.log1p(-link.outage_prob) * link.gain)


def deadline_capacity(link: LinkConfig, tau: float, constants=CAPACITY_CONSTANTS) -> float:
    """Deadline-constrained capacity with CSI at both ends and two-branch diversity."""
    if not tau > 0:
        raise DomainError("deadline must be positive")
    c1, c2, c3 = constants
    snr = c1 * link.gain * link.power / (link.noise_psd * link.bandwidth * (c2 + tau ** (-c3)))
    return link.bandwidth * math.log2(1.0 + snr)


def pf_phi(link: LinkConfig, T_s: float, n_PF: float, constants=CAPACITY_CONSTANTS) -> float:
    """Link constant ``phi`` with ``P = phi^(-c3-1) (c2 + tau^-c3)``."""
    c1, _, c3 = constants
    base = link.noise_psd * link.bandwidth / (c1 * link.gain) * (2.0 ** (n_PF / (T_s * link.bandwidth)) - 1.0)
    return base ** (-1.0 / (c3 + 1.0))


def pf_power_for_deadline(
    link: LinkConfig, tau: float, T_s: float, n_PF: float, constants=CAPACITY_CONSTANTS
) -> float:
    """Average power that sustains rate ``n_PF / T_s`` under deadline ``tau``."""
    if not tau > 0:
        raise DomainError("deadline must be positive")
    _, c2, c3 = constants
    phi = pf_phi(link, T_s, n_PF, constants)
    return phi ** (-c3 - 1.0) * (c2 + tau ** (-c3))


# -- compression cost --------------------------------------------------------


def _check_kappa(model: CompressionModel, kappa: float):
    if not 1.0 <= kappa <= model.kappa_max:
        raise DomainError(f"kappa={kappa} outside [1, {model.kappa_max}]")


def zeta_c(model: CompressionModel, kappa: float) -> float:
    """Expected compression cycles per bit at ratio ``kappa``."""
    _check_kappa(model, kappa)
    if model.kind is CompressionKind.EXP:
        return math.exp(model.psi * kappa) - math.exp(model.psi)
    w1, w2, w3, w4 = model.omegas[:4]
    return w1 * (w2 * kappa**w3 + w4)


def zeta_d(model: CompressionModel, kappa: float) -> float:
    """Expected decompression cycles per bit at ratio ``kappa``."""
    _check_kappa(model, kappa)
    if model.kind is CompressionKind.EXP:
        return model.omega0 * (math.exp(model.psi * kappa) - math.exp(model.psi))
    w5, w6, w7, w8 = model.omegas[4:]
    return w5 * (w6 * kappa**w7 + w8)


def zeta_c_prime(model: CompressionModel, kappa: float) -> float:
    if model.kind is CompressionKind.EXP:
        return model.psi * math.exp(model.psi * kappa)
    w1, w2, w3, _ = model.omegas[:4]
    return w1 * w2 * w3 * kappa ** (w3 - 1.0)


def zeta_d_prime(model: CompressionModel, kappa: float) -> float:
    if model.kind is CompressionKind.EXP:
        return model.omega0 * model.psi * math.exp(model.psi * kappa)
    w5, w6, w7, _ = model.omegas[4:]
    return w5 * w6 * w7 * kappa ** (w7 - 1.0)


# -- gamma terms -------------------------------------------------------------


@dataclass(frozen=True)
class ContinuousTerms:
    """Gamma terms of the loop at one compression ratio.

    ``compression`` and ``decompression`` are ``None`` when their mean cost is
    zero (ratio 1 under the exponential cost model).
    """

    compression: GammaTerm | None
    decompression: GammaTerm | None
    vi_processing: GammaTerm
    ll_processing: GammaTerm


def compression_rate(scenario: ScenarioConfig, kappa: float) -> float:
    c = scenario.compute
    z = zeta_c(scenario.compression, kappa)
    return math.inf if z == 0 else c.ra_freq * c.ra_shape / (c.et_bits * z)


def decompression_rate(scenario: ScenarioConfig, kappa: float) -> float:
    c = scenario.compute
    z = zeta_d(scenario.compression, kappa)
    return math.inf if z == 0 else c.mec_freq * c.mec_shape * kappa / (c.et_bits * z)


def continuous_terms(scenario: ScenarioConfig, kappa: float) -> ContinuousTerms:
    c = scenario.compute
    bc = compression_rate(scenario, kappa)
    bd = decompression_rate(scenario, kappa)
    return ContinuousTerms(
        compression=GammaTerm(c.ra_shape, bc) if math.isfinite(bc) else None,
        decompression=GammaTerm(c.mec_shape, bd) if math.isfinite(bd) else None,
        vi_processing=GammaTerm(c.mec_shape, c.mec_freq * c.rate_VI / c.et_bits),
        ll_processing=GammaTerm(c.mec_shape, c.mec_freq * c.rate_LL / c.hl_total_bits),
    )


def _gamma_list(scenario, kappa, kind: ModelKind):
    ct = continuous_terms(scenario, kappa)
    terms = [t for t in (ct.compression, ct.decompression) if t is not None]
    terms.append(ct.vi_processing)
    if kind is ModelKind.LOOP:
        terms.append(ct.ll_processing)
    return terms


def _lattice_links(kind: ModelKind):
    return {
        ModelKind.ET: ("CD", "VI"),
        ModelKind.CL: ("HL", "LL"),
        ModelKind.LOOP: ("HL", "LL", "CD", "VI"),
    }[kind]


def lattice_terms(scenario: ScenarioConfig, kappa: float, kind: ModelKind) -> list[LatticeTerm]:
    kind = ModelKind(kind)
    out = []
    for lid in _lattice_links(kind):
        link = scenario.links[lid]
        if link.packet_time is not None and not math.isclose(link.packet_time, scenario.t_u, rel_tol=1e-9):
            raise ConfigurationError(
                f"link {lid} packet time {link.packet_time} differs from the common spacing {scenario.t_u}"
            )
        packets = scenario.n_cd(kappa) if lid == "CD" else link.packets
        out.append(LatticeTerm(packets, link.outage_prob, scenario.t_u))
    return out


def build_continuous_cgf(scenario: ScenarioConfig, kappa: float, kind: ModelKind = ModelKind.ET) -> CgfModel:
    """Gamma-only CGF of the computation, compression and decompression times."""
    kind = ModelKind(kind)
    if kind is ModelKind.CL:
        return CgfModel(gamma_terms=[continuous_terms(scenario, kappa).ll_processing])
    return CgfModel(gamma_terms=_gamma_list(scenario, kappa, kind))


def build_lattice_cgf(scenario: ScenarioConfig, kind: ModelKind = ModelKind.ET, kappa: float | None = None) -> CgfModel:
    """Lattice-only CGF of the packet transmission times (common spacing ``t_u``)."""
    kappa = scenario.kappa_ref if kappa is None else kappa
    return CgfModel(lattice_terms=lattice_terms(scenario, kappa, kind))


def build_clt_cgf(scenario: ScenarioConfig, kappa: float, kind: ModelKind = ModelKind.ET) -> CgfModel:
    """Gamma terms plus one Gaussian standing in for the lattice sum."""
    kind = ModelKind(kind)
    if kind is ModelKind.CL:
        raise ConfigurationError("the normal approximation is built for ET or Loop only")
    lat = lattice_terms(scenario, kappa, kind)
    gauss = GaussianTerm(sum(t.mean for t in lat), sum(t.variance for t in lat))
    return CgfModel(gamma_terms=_gamma_list(scenario, kappa, kind), gaussian_terms=[gauss])


# -- closed-form moments -----------------------------------------------------


@dataclass(frozen=True)
class NamedConstants:
    """Means, variances and third cumulants written out term by term.

    Computed directly from the scenario parameters, independently of the
    :class:`CgfModel` code path, so the two can check each other.
    """

    theta: float
    iota1: float
    iota2: float
    theta_t: float
    iota1_t: float
    iota2_t: float
    vartheta: float
    Psi: float
    Upsilon: float
    Psi_t: float
    Upsilon_t: float


def named_constants(scenario: ScenarioConfig, kappa: float) -> NamedConstants:
    c = scenario.compute
    n, zc, zd = c.et_bits, zeta_c(scenario.compression, kappa), zeta_d(scenario.compression, kappa)
    a_ra, a_mec = c.ra_shape, c.mec_shape
    x_ra, x_mec = c.ra_freq, c.mec_freq
    b_vi, b_ll = c.rate_VI, c.rate_LL
    nhl = c.hl_total_bits

    iota1 = (
        n**2 * zc**2 / (x_ra**2 * a_ra)
        + n**2 * zd**2 / (x_mec**2 * kappa**2 * a_mec)
        + n**2 * a_mec / (x_mec**2 * b_vi**2)
    ) ** 1.5
    iota2 = (
        2 * n**3 * zc**3 / (x_ra**3 * a_ra**2)
        + 2 * n**3 * zd**3 / (kappa**3 * x_mec**3 * a_mec**2)
        + 2 * a_mec * n**3 / (x_mec**3 * b_vi**3)
    )
    theta = n * a_mec / (x_mec * b_vi) + n * zc / x_ra + n * zd / (x_mec * kappa)

    ll_var = nhl**2 * a_mec / (x_mec**2 * b_ll**2)
    iota1_t = (iota1 ** (2 / 3) + ll_var) ** 1.5
    iota2_t = iota2 + 2 * a_mec * nhl**3 / (x_mec**3 * b_ll**3)
    theta_t = theta + nhl * a_mec / (x_mec * b_ll)

    t_u = scenario.t_u
    links = scenario.links
    n_cd, n_vi = scenario.n_cd(kappa), links["VI"].packets
    e_cd, e_vi = links["CD"].outage_prob, links["VI"].outage_prob
    n_hl, n_ll = links["HL"].packets, links["LL"].packets
    e_hl, e_ll = links["HL"].outage_prob, links["LL"].outage_prob

    vartheta = n_cd / (1 - e_cd) + n_vi / (1 - e_vi)
    et_lat_var = e_cd * n_cd * t_u**2 / (1 - e_cd) ** 2 + e_vi * n_vi * t_u**2 / (1 - e_vi) ** 2
    cl_lat_var = e_hl * n_hl * t_u**2 / (1 - e_hl) ** 2 + e_ll * n_ll * t_u**2 / (1 - e_ll) ** 2
    Psi = theta + vartheta * t_u
    Upsilon = (iota1 ** (2 / 3) + et_lat_var) ** 1.5
    Psi_t = theta_t + (vartheta + n_hl / (1 - e_hl) + n_ll / (1 - e_ll)) * t_u
    Upsilon_t = (Upsilon ** (2 / 3) + ll_var + cl_lat_var) ** 1.5
    return NamedConstants(theta, iota1, iota2, theta_t, iota1_t, iota2_t, vartheta, Psi, Upsilon, Psi_t, Upsilon_t)


def et_variance(scenario: ScenarioConfig, kappa: float) -> float:
    """Variance of the event-triggered latency, summed over its five components."""
    c = scenario.compute
    n = c.et_bits
    zc, zd = zeta_c(scenario.compression, kappa), zeta_d(scenario.compression, kappa)
    xi_c = (n * zc) ** 2 / (c.ra_freq**2 * c.ra_shape)
    xi_d = (n * zd) ** 2 / ((c.mec_freq * kappa) ** 2 * c.mec_shape)
    return xi_c + xi_d + et_variance_floor(scenario, kappa)


def et_variance_floor(scenario: ScenarioConfig, kappa: float | None = None) -> float:
    """Part of the ET variance that does not depend on the compression cost."""
    c = scenario.compute
    kappa = scenario.kappa_ref if kappa is None else kappa
    xi_vi = c.et_bits**2 * c.mec_shape / (c.mec_freq * c.rate_VI) ** 2
    return xi_vi + sum(t.variance for t in lattice_terms(scenario, kappa, ModelKind.ET))


def cl_mean(scenario: ScenarioConfig) -> float:
    ct = continuous_terms(scenario, scenario.kappa_ref)
    lat = lattice_terms(scenario, scenario.kappa_ref, ModelKind.CL)
    return ct.ll_processing.mean + sum(t.mean for t in lat)


def clt_regime_warning(scenario: ScenarioConfig, kappa: float) -> str | None:
    """Describe why the normal approximation of the lattice part is doubtful, if it is.

    The approximation needs many packets or a packet time that is small next
    to the spread of the continuous part.
    """
    lat = lattice_terms(scenario, kappa, ModelKind.ET)
    packets = sum(t.packets for t in lat)
    sd = math.sqrt(build_continuous_cgf(scenario, kappa, ModelKind.ET).variance)
    if packets < 30 and scenario.t_u > sd:
        return (
            f"packet time {scenario.t_u:g} s exceeds the continuous-part spread {sd:.3g} s "
            f"with only {packets} packets; the normal approximation of the lattice part is unreliable"
        )
    return None


# -- presets -----------------------------------------------------------------


def _base_links(t_u, n_cd, n_vi, e_cd, e_vi, **cd_extra):
    hl = LinkConfig(outage_prob=1e-5, packets=3, packet_bits=128 * KB)
    ll = LinkConfig(outage_prob=1e-5, packets=1, packet_bits=128 * KB)
    pf = LinkConfig(bandwidth=1e5, outage_prob=1e-3, packets=1, packet_bits=1000.0)
    cd = LinkConfig(outage_prob=e_cd, packets=n_cd, packet_bits=MB / (1.1 * n_cd), **cd_extra)
    vi = LinkConfig(outage_prob=e_vi, packets=n_vi, packet_bits=1000.0)
    return {"HL": hl, "LL": ll, "PF1": pf, "PF2": pf, "CD": cd, "VI": vi}


def _figure_preset(name, t_u, n_cd, n_vi, e_cd, e_vi):
    return ScenarioConfig(links=_base_links(t_u, n_cd, n_vi, e_cd, e_vi), t_u=t_u, preset_name=name)


def opt_default() -> ScenarioConfig:
    """The 5 ms, 20-packet loop with a fixed compressed-packet count.

    Noise power over gain is 1 on the PF and CD links; the CD bandwidth is
    chosen so that uncompressed data needs a rate of about 4.2 bits/s/Hz.
    """
    links = _base_links(5e-3, 20, 3, 1e-3, 1e-4)
    pf = replace(links["PF1"], noise_psd=1.0 / links["PF1"].bandwidth)
    links["PF1"] = links["PF2"] = pf
    links["CD"] = replace(links["CD"], bandwidth=2e7, noise_psd=1.0 / 2e7, packet_bits=MB / 20)
    return ScenarioConfig(
        links=links,
        compression=CompressionModel(kappa_max=1.7),
        t_u=5e-3,
        T_s=1e-2,
        n_PF=4600.0,
        tau_PF=0.25,
        cd_packet_mode="fixed",
        corrected_rate=True,
        preset_name="opt-default",
    )


PRESETS = {
    "fig4": lambda: _figure_preset("fig4", 5e-3, 20, 3, 1e-3, 1e-4),
    "fig5": lambda: _figure_preset("fig5", 5e-3, 50, 3, 1e-3, 1e-4),
    "fig6": lambda: _figure_preset("fig6", 5e-3, 5, 1, 1e-1, 1e-3),
    "fig7": lambda: _figure_preset("fig7", 100e-3, 5, 1, 1e-1, 1e-3),
    "opt-default": opt_default,
}

#: four i.i.d. Gamma(2, 1) terms, the reference case for the truncated-convolution comparison
FIG3_TERMS = (GammaTerm(2.0, 1.0),) * 4


def preset(name: str) -> ScenarioConfig:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)} or 'fig3'") from None


# -- config files ------------------------------------------------------------

_TOP_FIELDS = {f.name for f in fields(ScenarioConfig)} - {"links", "compute", "compression"}


def _check_keys(cls, data, where):
    unknown = set(data) - {f.name for f in fields(cls)}
    if unknown:
        raise ConfigurationError(f"unknown keys in {where}: {sorted(unknown)}")


def _merge(cls, current, data, where):
    _check_keys(cls, data, where)
    return cls(**data) if current is None else replace(current, **data)


def scenario_from_dict(data: Mapping) -> ScenarioConfig:
    """Build a scenario from nested mappings whose keys are the dataclass field names.

    A ``preset`` key names a preset to start from; every other key overrides it
    (link, compute and compression tables are merged field by field).
    """
    data = dict(data)
    base = preset(data.pop("preset")) if "preset" in data else None
    unknown = set(data) - _TOP_FIELDS - {"links", "compute", "compression"}
    if unknown:
        raise ConfigurationError(f"unknown scenario keys: {sorted(unknown)}")

    links = dict(base.links) if base else {}
    for lid, spec in data.pop("links", {}).items():
        if lid not in LINK_IDS:
            raise ConfigurationError(f"unknown link {lid!r}")
        links[lid] = _merge(LinkConfig, links.get(lid), spec, f"links.{lid}")
    kw = dict(data)
    for key, cls in (("compute", ComputeConfig), ("compression", CompressionModel)):
        if key in kw:
            kw[key] = _merge(cls, getattr(base, key) if base else None, kw[key], key)
    if base is not None:
        return replace(base, links=links, **kw)
    return ScenarioConfig(links=links, **kw)


def scenario_to_dict(scenario: ScenarioConfig) -> dict:
    out = {name: getattr(scenario, name) for name in sorted(_TOP_FIELDS)}
    out["links"] = {lid: {f.name: getattr(l, f.name) for f in fields(LinkConfig)} for lid, l in scenario.links.items()}
    out["compute"] = {f.name: getattr(scenario.compute, f.name) for f in fields(ComputeConfig)}
    comp = scenario.compression
    out["compression"] = {f.name: getattr(comp, f.name) for f in fields(CompressionModel)}
    out["compression"]["kind"] = comp.kind.value
    out["compression"]["omegas"] = list(comp.omegas)
    return out


def _read_config(path) -> dict:
    path = Path(path)
    if path.suffix.lower() == ".json":
        return json.loads(path.read_text())
    if path.suffix.lower() == ".toml":
        try:
            import tomllib
        except ImportError:  # Python < 3.11
            import tomli as tomllib
        return tomllib.loads(path.read_text())
    raise ConfigurationError(f"unsupported config format: {path.suffix!r} (use .toml or .json)")


def load_scenario(name_or_path: str) -> ScenarioConfig:
    """Resolve a preset name, a file in ``CGC_SCENARIO_PATH`` or a file path.

    Directories listed in ``CGC_SCENARIO_PATH`` are searched first for
    ``<name>.toml`` or ``<name>.json``, so they can override built-in presets.
    """
    for d in filter(None, os.environ.get("CGC_SCENARIO_PATH", "").split(os.pathsep)):
        for ext in (".toml", ".json"):
            cand = Path(d) / f"{name_or_path}{ext}"
            if cand.is_file():
                return _from_file(cand, name_or_path)
    if name_or_path in PRESETS:
        return preset(name_or_path)
    p = Path(name_or_path)
    if p.is_file():
        return _from_file(p, p.stem)
    raise ConfigurationError(f"unknown preset or missing file {name_or_path!r}; presets: {sorted(PRESETS)}")


def _from_file(path: Path, name: str) -> ScenarioConfig:
    data = _read_config(path)
    data.setdefault("preset_name", name)
    return scenario_from_dict(data)
