import numpy as np
import pytest
from skimage import data as skdata

from sesr.images import write_image

# small local corpus: crops of the sample images bundled with scikit-image
SAMPLES = ("astronaut", "camera", "coffee", "chelsea", "rocket", "immunohistochemistry")


def sample_images(size=96):
    out = {}
    for name in SAMPLES:
        img = getattr(skdata, name)()
        h, w = img.shape[:2]
        i, j = (h - size) // 2, (w - size) // 2
        out[name] = np.ascontiguousarray(img[i:i + size, j:j + size])
    return out


def y_planes(size=96):
    from sesr.color import luma
    return [luma(img) / 255.0 for img in sample_images(size).values()]


@pytest.fixture(scope="session")
def image_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    for name, img in sample_images(98).items():
        write_image(d / f"{name}.png", img)
    return d


@pytest.fixture
def corrupt_dir(image_dir, tmp_path):
    d = tmp_path / "with_bad"
    d.mkdir()
    for p in sorted(image_dir.iterdir())[:2]:
        (d / p.name).write_bytes(p.read_bytes())
    (d / "broken.png").write_bytes(b"\x89PNG not really")
    return d
