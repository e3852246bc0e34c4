import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=100, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def blurred_blocks(h, w, cell=6, sigma=1.0, seed=0, pad=16):
    """Float texture: random blocks upsampled by nearest neighbour, then blurred."""
    rng = np.random.default_rng(seed)
    bh = (h + 2 * pad) // cell + 2
    bw = (w + 2 * pad) // cell + 2
    blocks = rng.uniform(0, 255, size=(bh, bw))
    tex = np.kron(blocks, np.ones((cell, cell)))
    r = int(np.ceil(3 * sigma))
    x = np.arange(-r, r + 1)
    g = np.exp(-0.5 * (x / sigma) ** 2)
    g /= g.sum()
    tex = np.apply_along_axis(lambda v: np.convolve(v, g, mode="same"), 1, tex)
    tex = np.apply_along_axis(lambda v: np.convolve(v, g, mode="same"), 0, tex)
    return tex


def bilinear_sample(tex, xs, ys):
    x0 = np.floor(xs).astype(int)
    y0 = np.floor(ys).astype(int)
    ax = xs - x0
    ay = ys - y0
    return (
        tex[y0, x0] * (1 - ax) * (1 - ay)
        + tex[y0, x0 + 1] * ax * (1 - ay)
        + tex[y0 + 1, x0] * (1 - ax) * ay
        + tex[y0 + 1, x0 + 1] * ax * ay
    )


def shifted_pair(h=240, w=320, shift=(0.0, 0.0), cell=6, sigma=1.0, seed=0, pad=16):
    """Reference image and a copy whose content moved by ``shift`` pixels."""
    tex = blurred_blocks(h, w, cell, sigma, seed, pad)
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    ref = bilinear_sample(tex, xx + pad, yy + pad)
    cur = bilinear_sample(tex, xx + pad - shift[0], yy + pad - shift[1])
    to8 = lambda a: np.clip(np.rint(a), 0, 255).astype(np.uint8)
    return to8(ref), to8(cur)


@pytest.fixture
def textured_pair():
    return shifted_pair
