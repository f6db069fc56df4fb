"""Grayscale image buffers, mirror-padded filtering and PGM/PNG I/O.

Images are plain 2-D ``float64`` numpy arrays with nominal range [0, 255].
Kernels are square 2-D arrays with odd side length.  Boundary handling is
symmetric (edge-duplicating) mirror padding everywhere, so that for a row
``a b c`` a pad of two gives ``b a | a b c | c b``.
"""

import os
import tempfile

import numpy as np

from .errors import DimensionError, ImageIOError, ValidationError


def as_image(data, name="image"):
    """Validate ``data`` as an image buffer and return it as float64."""
    img = np.asarray(data, dtype=np.float64)
    if img.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise DimensionError(f"{name} must be at least 1x1, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValidationError(f"{name} contains NaN or Inf values")
    return img


def as_kernel(data):
    k = np.asarray(data, dtype=np.float64)
    if k.ndim != 2 or k.shape[0] != k.shape[1] or k.shape[0] % 2 == 0:
        raise DimensionError(f"kernel must be square with odd side, got shape {k.shape}")
    if not np.all(np.isfinite(k)):
        raise ValidationError("kernel contains NaN or Inf values")
    return k


def check_same_shape(a, b, what="images"):
    if a.shape != b.shape:
        raise DimensionError(f"{what} differ in shape: {a.shape} vs {b.shape}")


def _check_kernel_fits(shape, size):
    if size > 2 * min(shape):
        raise DimensionError(
            f"kernel of size {size} is too large for a {shape[0]}x{shape[1]} image"
        )


def mirror_pad(img, radius):
    return np.pad(img, radius, mode="symmetric")


def mirror_pad_adjoint(padded, radius):
    """Adjoint of :func:`mirror_pad`: fold padded borders back onto the image.

    Valid for ``radius`` not exceeding either image dimension.
    """
    r = radius
    if r == 0:
        return padded.copy()
    # rows
    h = padded.shape[-2] - 2 * r
    out = padded[..., r:r + h, :].copy()
    out[..., :r, :] += padded[..., r - 1::-1, :]
    out[..., h - r:, :] += padded[..., ::-1, :][..., :r, :]
    # columns
    w = out.shape[-1] - 2 * r
    res = out[..., r:r + w].copy()
    res[..., :r] += out[..., r - 1::-1]
    res[..., w - r:] += out[..., ::-1][..., :r]
    return res


def convolve_mirrored(img, kernel):
    """Filter ``img`` with ``kernel`` under mirror boundary handling.

    ``out[p] = sum_{u,v} kernel[u, v] * padded[p + (u - r, v - r)]``; that is,
    the kernel is applied as a correlation template (no flip), which is the
    filter-response convention of the FoE prior.
    """
    img = as_image(img)
    k = as_kernel(kernel)
    return filter_responses(img, k[None])[0]


def filter_responses(img, filters):
    """Responses of a stack of ``(K, s, s)`` filters, shape ``(K, H, W)``."""
    filters = np.asarray(filters, dtype=np.float64)
    s = filters.shape[-1]
    r = s // 2
    h, w = img.shape
    _check_kernel_fits(img.shape, s)
    padded = mirror_pad(img, r)
    out = np.zeros((filters.shape[0], h, w))
    for u in range(s):
        for v in range(s):
            out += filters[:, u, v, None, None] * padded[u:u + h, v:v + w]
    return out


def filter_responses_adjoint(responses, filters):
    """Transpose of :func:`filter_responses`, summed over the filter axis.

    Exact including the mirror-padded border, so it yields the true gradient
    of any pixelwise function of the responses.
    """
    filters = np.asarray(filters, dtype=np.float64)
    k, h, w = responses.shape
    s = filters.shape[-1]
    r = s // 2
    padded = np.zeros((k, h + 2 * r, w + 2 * r))
    for u in range(s):
        for v in range(s):
            padded[:, u:u + h, v:v + w] += filters[:, u, v, None, None] * responses
    return mirror_pad_adjoint(padded, r).sum(axis=0)


def extract_patch(img, center, radius):
    """Return the ``(2r+1) x (2r+1)`` mirror-padded block around ``center=(row, col)``."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    img = as_image(img)
    row, col = center
    h, w = img.shape
    if not (0 <= row < h and 0 <= col < w):
        raise IndexError(f"center {center} outside {h}x{w} image")
    rows = _mirror_index(np.arange(row - radius, row + radius + 1), h)
    cols = _mirror_index(np.arange(col - radius, col + radius + 1), w)
    return img[np.ix_(rows, cols)]


def _mirror_index(idx, n):
    # symmetric reflection with period 2n
    idx = np.mod(idx, 2 * n)
    return np.where(idx >= n, 2 * n - 1 - idx, idx)


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------

def atomic_write_bytes(path, payload):
    """Write ``payload`` to ``path`` via a temp file in the same directory."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _pgm_tokens(data, count):
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    tokens = []
    pos = 0
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ImageIOError("truncated PGM header")
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates header from raster
    if pos >= n or not data[pos:pos + 1].isspace():
        raise ImageIOError("truncated PGM header")
    return tokens, pos + 1


def decode_pgm(data, source="<bytes>"):
    if data[:2] != b"P5":
        raise ImageIOError(f"{source}: not a binary PGM (magic {data[:2]!r}, expected b'P5')")
    try:
        tokens, offset = _pgm_tokens(data, 4)
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise ImageIOError(f"{source}: malformed PGM header") from exc
    except ImageIOError as exc:
        raise ImageIOError(f"{source}: {exc}") from None
    if width < 1 or height < 1:
        raise ImageIOError(f"{source}: invalid dimensions {width}x{height}")
    if maxval != 255:
        raise ImageIOError(f"{source}: maxval {maxval} unsupported (only 255)")
    raster = data[offset:offset + width * height]
    if len(raster) < width * height:
        raise ImageIOError(
            f"{source}: truncated raster ({len(raster)} of {width * height} bytes)"
        )
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width).astype(np.float64)


def encode_pgm(img):
    img = as_image(img)
    q = np.floor(np.clip(img, 0.0, 255.0) + 0.5).astype(np.uint8)
    h, w = q.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + q.tobytes()


def read_image(path):
    """Read an 8-bit grayscale P5 PGM (or, with Pillow installed, PNG).

    Pixel values are widened to float64 without rescaling.
    """
    path = os.fspath(path)
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise ImageIOError(f"{path}: {exc.strerror or exc}") from exc
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        return _read_png(path)
    return decode_pgm(data, source=path)


def _read_png(path):
    try:
        from PIL import Image
    except ImportError as exc:  # pragma: no cover - optional dependency
        raise ImageIOError(f"{path}: PNG support requires Pillow") from exc
    try:
        with Image.open(path) as im:
            if im.mode != "L":
                raise ImageIOError(f"{path}: PNG mode {im.mode!r} is not 8-bit grayscale")
            return np.asarray(im, dtype=np.float64)
    except ImageIOError:
        raise
    except Exception as exc:
        raise ImageIOError(f"{path}: unreadable PNG ({exc})") from exc


def write_image(img, path):
    """Clamp to [0, 255], round half up and write atomically as P5 PGM."""
    atomic_write_bytes(path, encode_pgm(img))
