"""Downlink capacity simulator for a three-site cellular network serving UAVs.

The channel stack is a deliberately simple stand-in for a full 3GPP model:
log-distance path loss with separate exponents for ground and aerial links,
log-normal shadowing frozen per link, a sector antenna with a 3GPP-style
parabolic pattern whose vertical lobe is steered by the tilt, and Rayleigh
small-scale fading. Every constant lives in :class:`ChannelParams`.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

N_SITES = 3
SECTORS_PER_SITE = 3
N_BS = N_SITES * SECTORS_PER_SITE
P_MIN_DBM, P_MAX_DBM = 6.0, 46.0
TILT_MIN, TILT_MAX = -90.0, 90.0


def dbm_to_watt(p_dbm):
    return 10.0 ** ((np.asarray(p_dbm, dtype=float) - 30.0) / 10.0)


def watt_to_dbm(p_w):
    return 10.0 * np.log10(np.asarray(p_w, dtype=float)) + 30.0


def db_to_linear(x_db):
    return 10.0 ** (np.asarray(x_db, dtype=float) / 10.0)


@dataclass(frozen=True)
class ChannelParams:
    """Non-authoritative constants of the simplified channel model."""

    carrier_hz: float = 2.0e9
    ref_distance_m: float = 1.0
    exponent_gu: float = 3.7
    exponent_uav: float = 2.2
    shadow_db_gu: float = 8.0
    shadow_db_uav: float = 4.0
    h_beamwidth_deg: float = 65.0
    v_beamwidth_deg: float = 10.0
    front_to_back_db: float = 25.0
    vertical_sidelobe_db: float = 25.0
    element_gain_dbi: float = 8.0
    noise_dbm: float = -104.0

    @property
    def ref_loss_db(self) -> float:
        lam = 299_792_458.0 / self.carrier_hz
        return float(20.0 * np.log10(4.0 * np.pi * self.ref_distance_m / lam))


@dataclass(frozen=True)
class NetworkLayout:
    bs_xy: np.ndarray          # (9, 2)
    bs_height: float
    bs_azimuth_deg: np.ndarray  # (9,)
    bs_site: np.ndarray        # (9,)
    users: np.ndarray          # (K, 3) positions; GUs first then UAVs
    is_uav: np.ndarray         # (K,) bool
    shadow_db: np.ndarray      # (K, 9)
    association: np.ndarray    # (K,) serving BS index
    channel: ChannelParams = field(default_factory=ChannelParams)

    @property
    def n_users(self) -> int:
        return len(self.users)

    def to_json(self) -> str:
        return json.dumps(
            {
                "bs_xy": self.bs_xy.tolist(),
                "bs_height": self.bs_height,
                "bs_azimuth_deg": self.bs_azimuth_deg.tolist(),
                "bs_site": self.bs_site.tolist(),
                "users": self.users.tolist(),
                "is_uav": self.is_uav.tolist(),
                "shadow_db": self.shadow_db.tolist(),
                "association": self.association.tolist(),
                "channel": asdict(self.channel),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> NetworkLayout:
        d = json.loads(text)
        return cls(
            bs_xy=np.array(d["bs_xy"]),
            bs_height=d["bs_height"],
            bs_azimuth_deg=np.array(d["bs_azimuth_deg"]),
            bs_site=np.array(d["bs_site"]),
            users=np.array(d["users"]),
            is_uav=np.array(d["is_uav"], dtype=bool),
            shadow_db=np.array(d["shadow_db"]),
            association=np.array(d["association"]),
            channel=ChannelParams(**d["channel"]),
        )


@dataclass(frozen=True)
class RadioConfig:
    powers_dbm: np.ndarray
    tilts_deg: np.ndarray
    lambda_gu: float = 0.7

    def __post_init__(self):
        p = np.asarray(self.powers_dbm)
        t = np.asarray(self.tilts_deg)
        if p.shape != (N_BS,) or t.shape != (N_BS,):
            raise ValueError(f"expected {N_BS} powers and tilts")
        if np.any(p < P_MIN_DBM) or np.any(p > P_MAX_DBM):
            raise ValueError(f"powers must lie in [{P_MIN_DBM}, {P_MAX_DBM}] dBm")
        if np.any(t < TILT_MIN) or np.any(t > TILT_MAX):
            raise ValueError(f"tilts must lie in [{TILT_MIN}, {TILT_MAX}] degrees")
        if not 0.0 <= self.lambda_gu <= 1.0:
            raise ValueError("lambda_gu must be in [0, 1]")

    @classmethod
    def uniform(cls, power_dbm=46.0, tilt_deg=12.0, lambda_gu=0.7):
        return cls(np.full(N_BS, power_dbm), np.full(N_BS, tilt_deg), lambda_gu)


# ---------------------------------------------------------------------------
# layout


def site_positions(isd: float = 200.0) -> np.ndarray:
    r = isd / np.sqrt(3.0)
    ang = np.deg2rad([90.0, 210.0, 330.0])
    return np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1)


def uav_positions(altitude: float = 100.0) -> np.ndarray:
    """Four 60 m x 20 m rectangles around the centre, 7 UAVs evenly spaced in each."""
    centres = [(-60.0, 0.0, 0.0), (60.0, 0.0, 0.0), (0.0, -80.0, 90.0), (0.0, 80.0, 90.0)]
    offsets = np.linspace(-30.0, 30.0, 7)
    rows = np.array([-5.0, 5.0, -5.0, 5.0, -5.0, 5.0, -5.0])
    pts = []
    for cx, cy, rot in centres:
        c, s = np.cos(np.deg2rad(rot)), np.sin(np.deg2rad(rot))
        for u, v in zip(offsets, rows):
            pts.append((cx + c * u - s * v, cy + s * u + c * v, altitude))
    return np.array(pts)


def make_layout(
    seed: int = 2024,
    n_gu: int = 36,
    isd: float = 200.0,
    bs_height: float = 25.0,
    gu_height: float = 1.5,
    uav_altitude: float = 100.0,
    channel: ChannelParams | None = None,
    default_tilt: float = 12.0,
) -> NetworkLayout:
    """Shipped layout: 3 sites x 3 sectors, GUs uniform in each cell, 28 UAVs."""
    channel = channel or ChannelParams()
    rng = np.random.default_rng(seed)
    sites = site_positions(isd)
    bs_xy = np.repeat(sites, SECTORS_PER_SITE, axis=0)
    bs_site = np.repeat(np.arange(N_SITES), SECTORS_PER_SITE)
    bs_az = np.tile([30.0, 150.0, 270.0], N_SITES)

    cell_r = isd / np.sqrt(3.0)
    per_site = n_gu // N_SITES
    gus = []
    for s in range(N_SITES):
        rad = np.sqrt(rng.uniform((10.0 / cell_r) ** 2, 1.0, per_site)) * cell_r
        ang = rng.uniform(0.0, 2 * np.pi, per_site)
        for r_, a_ in zip(rad, ang):
            gus.append((sites[s, 0] + r_ * np.cos(a_), sites[s, 1] + r_ * np.sin(a_), gu_height))
    users = np.vstack([np.array(gus), uav_positions(uav_altitude)])
    is_uav = np.arange(len(users)) >= len(gus)

    sd = np.where(is_uav, channel.shadow_db_uav, channel.shadow_db_gu)[:, None]
    shadow = sd * rng.standard_normal((len(users), N_BS))
    layout = NetworkLayout(bs_xy, bs_height, bs_az, bs_site, users, is_uav, shadow,
                           np.zeros(len(users), dtype=int), channel)
    gains = gain_matrix(layout, np.full(N_BS, default_tilt))
    return _with_association(layout, np.argmax(gains, axis=1))


def _with_association(layout: NetworkLayout, assoc) -> NetworkLayout:
    return replace(layout, association=np.asarray(assoc, dtype=int))


def rotate_layout_users(layout: NetworkLayout, degrees: float) -> NetworkLayout:
    """Rotate user positions about the origin; BSs, shadowing and association kept."""
    c, s = np.cos(np.deg2rad(degrees)), np.sin(np.deg2rad(degrees))
    R = np.array([[c, -s], [s, c]])
    users = layout.users.copy()
    users[:, :2] = users[:, :2] @ R.T
    return replace(layout, users=users)


# ---------------------------------------------------------------------------
# large-scale gain


def pathloss_db(distance_m, is_uav, channel: ChannelParams):
    d = np.asarray(distance_m, dtype=float)
    if np.any(d <= 0):
        raise ValueError("zero link distance")
    n = np.where(is_uav, channel.exponent_uav, channel.exponent_gu)
    return channel.ref_loss_db + 10.0 * n * np.log10(d / channel.ref_distance_m)


def antenna_gain_db(azimuth_offset_deg, elevation_deg, tilt_deg, channel: ChannelParams):
    """Sector pattern in dBi; elevation and tilt are measured downward from horizontal."""
    phi = (np.asarray(azimuth_offset_deg) + 180.0) % 360.0 - 180.0
    a_h = -np.minimum(12.0 * (phi / channel.h_beamwidth_deg) ** 2, channel.front_to_back_db)
    a_v = -np.minimum(
        12.0 * ((np.asarray(elevation_deg) - tilt_deg) / channel.v_beamwidth_deg) ** 2,
        channel.vertical_sidelobe_db,
    )
    return channel.element_gain_dbi - np.minimum(-(a_h + a_v), channel.front_to_back_db)


def link_geometry(layout: NetworkLayout):
    """Per (user, BS): 3-d distance, azimuth offset from boresight, elevation below horizon."""
    dx = layout.users[:, None, 0] - layout.bs_xy[None, :, 0]
    dy = layout.users[:, None, 1] - layout.bs_xy[None, :, 1]
    dz = layout.bs_height - layout.users[:, None, 2]
    d2 = np.hypot(dx, dy)
    d3 = np.sqrt(d2 * d2 + dz * dz)
    az = np.rad2deg(np.arctan2(dy, dx)) - layout.bs_azimuth_deg[None, :]
    el = np.rad2deg(np.arctan2(dz, d2))
    return d3, az, el


def gain_matrix(layout: NetworkLayout, tilts_deg) -> np.ndarray:
    """Linear large-scale gain for every (user, BS) pair, shape (K, 9)."""
    d3, az, el = link_geometry(layout)
    tilts = np.asarray(tilts_deg, dtype=float)[None, :]
    g_db = (
        antenna_gain_db(az, el, tilts, layout.channel)
        - pathloss_db(d3, layout.is_uav[:, None], layout.channel)
        + layout.shadow_db
    )
    return db_to_linear(g_db)


def large_scale_gain(layout: NetworkLayout, bs: int, user: int, tilt_deg: float) -> float:
    tilts = np.zeros(N_BS)
    tilts[bs] = tilt_deg
    return float(gain_matrix(layout, tilts)[user, bs])


# ---------------------------------------------------------------------------
# rates and objective


def rates_from_gains(gains, powers_w, assoc, fading, noise_w):
    """Rates in bit/s/Hz.

    ``gains`` (K, B), ``powers_w`` (B,), ``assoc`` (K,), ``fading`` |h|^2 of shape
    (..., K, B). Returns an array of shape (..., K).
    """
    rx = fading * (gains * powers_w[None, :])
    k = np.arange(gains.shape[0])
    signal = rx[..., k, assoc]
    interference = rx.sum(-1) - signal
    return np.log2(1.0 + signal / (interference + noise_w))


def user_rate(layout: NetworkLayout, config: RadioConfig, user: int, h) -> float:
    """Rate of one user for complex channel coefficients h (length 9)."""
    g = gain_matrix(layout, config.tilts_deg)[user]
    fading = np.abs(np.asarray(h)) ** 2
    rates = rates_from_gains(
        g[None, :], dbm_to_watt(config.powers_dbm), layout.association[user : user + 1],
        fading[None, :], float(dbm_to_watt(layout.channel.noise_dbm)),
    )
    return float(rates[0])


def weighted_capacity(rates, is_uav, lambda_gu):
    """Weight ``lambda_gu`` on the UAV average and ``1 - lambda_gu`` on the GU average."""
    is_uav = np.asarray(is_uav, dtype=bool)
    zero = np.zeros(np.shape(rates)[:-1])
    uav = rates[..., is_uav].mean(-1) if is_uav.any() else zero
    gu = rates[..., ~is_uav].mean(-1) if (~is_uav).any() else zero
    return lambda_gu * uav + (1.0 - lambda_gu) * gu


def _capacity_samples(layout, config, n, rng, chunk=2000):
    gains = gain_matrix(layout, config.tilts_deg)
    pw = dbm_to_watt(config.powers_dbm)
    noise = float(dbm_to_watt(layout.channel.noise_dbm))
    out = []
    done = 0
    while done < n:
        m = min(chunk, n - done)
        fading = rng.exponential(1.0, size=(m,) + gains.shape)
        out.append(weighted_capacity(rates_from_gains(gains, pw, layout.association, fading, noise),
                                     layout.is_uav, config.lambda_gu))
        done += m
    return np.concatenate(out)


EVAL_SEED = 987_654


def capacity_objective(layout: NetworkLayout, config: RadioConfig, n_mc_channels: int = 10_000,
                       seed: int = EVAL_SEED, return_stderr: bool = False):
    """Monte-Carlo average capacity over Rayleigh fading (the reported ground truth)."""
    if n_mc_channels < 1:
        raise ValueError("n_mc_channels must be positive")
    s = _capacity_samples(layout, config, n_mc_channels, np.random.default_rng(seed))
    if return_stderr:
        return float(s.mean()), float(s.std(ddof=1) / np.sqrt(len(s))) if len(s) > 1 else np.inf
    return float(s.mean())


def noisy_observe(layout: NetworkLayout, config: RadioConfig, n_ch: int, rng: np.random.Generator) -> float:
    """Empirical average capacity over ``n_ch`` fading draws."""
    if n_ch < 1:
        raise ValueError("n_ch must be positive")
    return float(_capacity_samples(layout, config, n_ch, rng).mean())


# ---------------------------------------------------------------------------
# optimisation interface


def decode(u) -> RadioConfig:
    """Map a point of the unit cube [0, 1]^18 to powers and tilts."""
    u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
    return RadioConfig(P_MIN_DBM + (P_MAX_DBM - P_MIN_DBM) * u[:N_BS],
                       TILT_MIN + (TILT_MAX - TILT_MIN) * u[N_BS:])


def encode(config: RadioConfig) -> np.ndarray:
    return np.concatenate([
        (np.asarray(config.powers_dbm) - P_MIN_DBM) / (P_MAX_DBM - P_MIN_DBM),
        (np.asarray(config.tilts_deg) - TILT_MIN) / (TILT_MAX - TILT_MIN),
    ])


def block_for_round(t: int) -> int:
    """0-based index of the BS tuned at 1-based round t."""
    return (t - 1) % N_BS


def block_indices(bs: int) -> np.ndarray:
    return np.array([bs, N_BS + bs])


@dataclass(frozen=True)
class BlockCoordinate:
    """Two-dimensional slice (p_b, theta_b) of the full configuration."""

    base: np.ndarray
    bs: int

    @classmethod
    def for_round(cls, base, t: int) -> BlockCoordinate:
        return cls(np.asarray(base, dtype=float), block_for_round(t))

    @property
    def lower(self):
        return np.zeros(2)

    @property
    def upper(self):
        return np.ones(2)

    def embed(self, sub) -> np.ndarray:
        sub = np.asarray(sub, dtype=float)
        full = np.broadcast_to(self.base, sub.shape[:-1] + self.base.shape).copy()
        full[..., block_indices(self.bs)] = sub
        return full

    def extract(self, full) -> np.ndarray:
        return np.asarray(full)[..., block_indices(self.bs)]


def make_rrm_problem(layout: NetworkLayout | None = None, n_ch: int = 1,
                     n_eval_channels: int = 10_000, lambda_gu: float = 0.7):
    """BO problem over the unit cube: noisy oracle with ``n_ch`` draws, MC ground truth."""
    from .problems import Problem

    layout = layout or make_layout()

    def cfg(u):
        c = decode(u)
        return RadioConfig(c.powers_dbm, c.tilts_deg, lambda_gu)

    return Problem(
        name="rrm-uav",
        lower=np.zeros(2 * N_BS),
        upper=np.ones(2 * N_BS),
        objective=lambda u: capacity_objective(layout, cfg(u), n_eval_channels),
        sampler=lambda u, rng: noisy_observe(layout, cfg(u), n_ch, rng),
        blocks=tuple(tuple(int(i) for i in block_indices(b)) for b in range(N_BS)),
        cheap_f=False,
    )
