"""Synthetic beating-heart cine phantoms with known LV geometry.

The phantom is a static body ellipse holding a bright blood pool surrounded
by a myocardial ring.  The cavity contracts once per sequence following a
raised-cosine profile, and a few dark papillary specks rotate with the cardiac
phase.  Edges are anti-aliased over one pixel.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np

from .rng import RngStream
from .types import CineSequence


@dataclass(frozen=True)
class PhantomConfig:
    grid: tuple[int, int] = (192, 192)
    T: int = 50
    lv_center_px: tuple[float, float] = (96.0, 96.0)
    cavity_radius_px: float = 16.0
    contraction: float = 0.3
    myocardium_thickness_px: float = 6.0
    blood: float = 1.0
    myocardium: float = 0.35
    background: float = 0.2
    noise_sigma: float = 0.02
    n_papillary: int = 2
    papillary_radius_px: float = 1.6
    papillary_twist_rad: float = 0.35
    body_semi_axes_px: tuple[float, float] = (80.0, 88.0)
    seed: int = 0

    def validate(self) -> None:
        h, w = self.grid
        r0, c, th = self.cavity_radius_px, self.contraction, self.myocardium_thickness_px
        if self.T < 2:
            raise ValueError("a cine needs T >= 2 frames")
        if not 0.0 <= c <= 1.0:
            raise ValueError(f"contraction fraction must lie in [0, 1], got {c}")
        if r0 * (1.0 - c) < 2.0:
            raise ValueError(f"end-systolic cavity radius {r0 * (1 - c):.2f} px is below 2 px")
        if th <= 0:
            raise ValueError("myocardium thickness must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        margin = r0 + th
        cr, cc = self.lv_center_px
        if min(cr, cc) < margin or cr > h - 1 - margin or cc > w - 1 - margin:
            raise ValueError(f"LV at {self.lv_center_px} is closer than {margin} px to the border")


def cavity_radius(cfg: PhantomConfig, t: np.ndarray | int) -> np.ndarray:
    """r(t) = r0 * (1 - c * (1 - cos(2 pi t / T)) / 2)."""
    t = np.asarray(t, dtype=np.float64)
    phase = (1.0 - np.cos(2.0 * np.pi * t / cfg.T)) / 2.0
    return cfg.cavity_radius_px * (1.0 - cfg.contraction * phase)


def _disc(dist: np.ndarray, radius: float) -> np.ndarray:
    # fractional coverage, linear ramp one pixel wide centred on the boundary
    return np.clip(radius - dist + 0.5, 0.0, 1.0)


def render_frames(cfg: PhantomConfig) -> np.ndarray:
    """Noise-free frames, float64, shape (T, H, W)."""
    cfg.validate()
    h, w = cfg.grid
    rows, cols = np.mgrid[0:h, 0:w].astype(np.float64)
    cr, cc = cfg.lv_center_px
    dist = np.hypot(rows - cr, cols - cc)

    ar, ac = cfg.body_semi_axes_px
    body_r = np.sqrt(((rows - (h - 1) / 2) / ar) ** 2 + ((cols - (w - 1) / 2) / ac) ** 2)
    base = cfg.background * np.clip((1.0 - body_r) * min(ar, ac) + 0.5, 0.0, 1.0)

    radii = cavity_radius(cfg, np.arange(cfg.T))
    # the specks twist with the contraction; a non-contracting heart is static
    twist = cfg.papillary_twist_rad if cfg.contraction > 0 else 0.0
    out = np.empty((cfg.T, h, w))
    for t, r in enumerate(radii):
        img = base.copy()
        outer = _disc(dist, r + cfg.myocardium_thickness_px)
        img += outer * (cfg.myocardium - img)
        inner = _disc(dist, r)
        img += inner * (cfg.blood - img)
        phase = (1.0 - np.cos(2.0 * np.pi * t / cfg.T)) / 2.0
        for k in range(cfg.n_papillary):
            ang = 2.0 * np.pi * k / cfg.n_papillary + 0.6 + twist * phase
            pr = cr + 0.6 * r * np.sin(ang)
            pc = cc + 0.6 * r * np.cos(ang)
            speck = _disc(np.hypot(rows - pr, cols - pc), cfg.papillary_radius_px)
            img += speck * (cfg.myocardium - img)
        out[t] = img
    return out


def generate_phantom(cfg: PhantomConfig, seq_id: Optional[str] = None) -> tuple[CineSequence, dict]:
    """Render a phantom cine and its ground truth.

    Returns the sequence and ``{"center": [row, col], "radius": [r(0), ..., r(T-1)]}``.
    """
    frames = render_frames(cfg)
    if cfg.noise_sigma > 0:
        g = RngStream(cfg.seed).child("phantom-noise").generator()
        frames = frames + g.normal(0.0, cfg.noise_sigma, size=frames.shape)
    seq_id = seq_id if seq_id is not None else f"phantom_{cfg.seed}"
    truth = {
        "id": seq_id,
        "center": [float(cfg.lv_center_px[0]), float(cfg.lv_center_px[1])],
        "radius": [float(r) for r in cavity_radius(cfg, np.arange(cfg.T))],
    }
    return CineSequence(id=seq_id, frames=frames), truth


def sample_config(rng: RngStream, seed: int, grid: tuple[int, int] = (192, 192), T: int = 50) -> PhantomConfig:
    """Draw a plausible random phantom geometry; *seed* drives its noise."""
    g = rng.generator()
    h, w = grid
    r0 = g.uniform(12.0, 19.0)
    th = g.uniform(4.0, 7.0)
    # keep the heart well inside the body ellipse and away from the border
    jitter = 0.12 * min(h, w)
    center = (h / 2 + g.uniform(-jitter, jitter), w / 2 + g.uniform(-jitter, jitter))
    return PhantomConfig(
        grid=grid,
        T=T,
        lv_center_px=(float(center[0]), float(center[1])),
        cavity_radius_px=float(r0),
        contraction=float(g.uniform(0.22, 0.4)),
        myocardium_thickness_px=float(th),
        blood=float(g.uniform(0.85, 1.0)),
        myocardium=float(g.uniform(0.25, 0.4)),
        background=float(g.uniform(0.12, 0.22)),
        noise_sigma=float(g.uniform(0.01, 0.03)),
        n_papillary=int(g.integers(1, 4)),
        body_semi_axes_px=(0.42 * h, 0.46 * w),
        seed=seed,
    )


def config_to_dict(cfg: PhantomConfig) -> dict:
    return asdict(cfg)
