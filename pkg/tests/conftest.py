import numpy as np
import pytest

from verilime import DatasetManifest, Image, ImageRef, RegionEmbedder, Subject


def random_image(rng, height=32, width=32, channels=3):
    pixels = rng.integers(0, 256, (height, width, channels)).astype(np.uint8)
    return Image(pixels=pixels)


def smooth_image(rng, height=64, width=64, channels=3, cells=4):
    """Low-frequency random image: bilinear upsampling of a coarse grid."""
    coarse = rng.uniform(30, 225, (cells + 1, cells + 1, channels))
    ys = np.linspace(0, cells, height)
    xs = np.linspace(0, cells, width)
    y0 = np.minimum(ys.astype(int), cells - 1)
    x0 = np.minimum(xs.astype(int), cells - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    tl = coarse[y0][:, x0]
    tr = coarse[y0][:, x0 + 1]
    bl = coarse[y0 + 1][:, x0]
    br = coarse[y0 + 1][:, x0 + 1]
    top = tl * (1 - fx) + tr * fx
    bottom = bl * (1 - fx) + br * fx
    pixels = top * (1 - fy) + bottom * fy
    return Image(pixels=np.clip(np.rint(pixels), 0, 255).astype(np.uint8))


def block_image(rng, size=64, cells=4, channels=1):
    """Piecewise-constant image over a cells x cells grid.

    With k_target = cells^2 the segmentation reproduces the grid exactly,
    so superpixel boundaries align with the region embedder's zones."""
    colors = rng.uniform(30, 225, (cells, cells, channels))
    block = size // cells
    pixels = np.repeat(np.repeat(colors, block, axis=0), block, axis=1)
    return Image(pixels=np.rint(pixels).astype(np.uint8))


def region_benchmark(rng, n_subjects=10, images_per_subject=5, size=64, noise=18.0):
    """Synthetic identity dataset for the region embedder.

    Each subject gets a base intensity per zone; each image adds pixel
    noise, so zone-mean signatures separate identities while genuine images
    still vary. Returns (manifest, path -> Image loader dict).
    """
    subjects = []
    images: dict[str, Image] = {}
    bounds = RegionEmbedder.zone_bounds(size, size)
    for s in range(n_subjects):
        base = rng.uniform(40, 215, len(bounds))
        refs = []
        for j in range(images_per_subject):
            path = f"mem://s{s:03d}/img{j:02d}.png"
            canvas = np.zeros((size, size, 1))
            for z, (y0, y1, x0, x1) in enumerate(bounds):
                canvas[y0:y1, x0:x1, 0] = base[z]
            canvas += rng.normal(0.0, noise, canvas.shape)
            images[path] = Image(pixels=np.clip(np.rint(canvas), 1, 255).astype(np.uint8))
            refs.append(ImageRef(path=path, pose="untagged"))
        subjects.append(Subject(id=f"s{s:03d}", images=tuple(refs)))
    return DatasetManifest(subjects=tuple(subjects)), images


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
