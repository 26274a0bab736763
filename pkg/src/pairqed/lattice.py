"""Lattice geometry, site assignment and single-atom fluorescence images.

Lattice coordinates: x is transverse to the cavity (532 nm period), y runs
along the cavity axis (386 nm period).  Camera coordinates are mapped to
lattice coordinates by a rotation followed by a shear (:func:`deskew`).
Lengths are in micrometres unless a name says otherwise.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.optimize import least_squares
from scipy.special import erf

TWO_PI = 2 * np.pi
FWHM_PER_SIGMA = 2 * np.sqrt(2 * np.log(2))

#: Diffraction-limited spot FWHM along x and y, in pixels.
DIFFRACTION_FWHM_PX = (1.23, 1.78)
#: Observed spots are this much wider than the diffraction limit.
PSF_INFLATION = 1.5
BACKGROUND_COUNTS = 450.0
ATOM_COUNTS = 18_000.0


class AmbiguousAssignmentError(ValueError):
    pass


class OverlapError(ValueError):
    pass


class FitError(RuntimeError):
    pass


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class LatticeGeometry:
    period_x: float = 0.532
    period_y: float = 0.386
    probe_wavelength: float = 0.780
    alpha: float = 0.0
    beta: float = 0.0
    pixel_scale: float = 0.48

    def __post_init__(self):
        if self.period_x <= 0 or self.period_y <= 0:
            raise ValueError("lattice periods must be positive")
        lim = np.deg2rad(10)
        if abs(self.alpha) >= lim or abs(self.beta) >= lim:
            raise ValueError("alpha and beta must be smaller than 10 degrees")

    @classmethod
    def measured(cls) -> LatticeGeometry:
        """Geometry with the calibrated rotation 0.64 deg and skew 1.6 deg."""
        return cls(alpha=np.deg2rad(0.64), beta=np.deg2rad(1.6))

    @property
    def periods(self) -> np.ndarray:
        return np.array([self.period_x, self.period_y])

    def transform(self) -> np.ndarray:
        """2x2 matrix taking camera coordinates to lattice coordinates."""
        ca, sa = np.cos(self.alpha), np.sin(self.alpha)
        cb, sb = np.cos(self.beta), np.sin(self.beta)
        shear = np.array([[cb, -sb], [0.0, 1.0]])
        rot = np.array([[ca, sa], [-sa, ca]])
        return shear @ rot


@dataclass(frozen=True)
class SiteDifference:
    dnx: int
    dny: int

    def __post_init__(self):
        if (self.dnx, self.dny) == (0, 0):
            raise ValueError("two atoms cannot occupy the same site")

    def __neg__(self):
        return SiteDifference(-self.dnx, -self.dny)


def phase_from_sites(d: SiteDifference, geom: LatticeGeometry | None = None) -> float:
    """Relative phase of an atom pair, reduced to [0, 2 pi).

    The drive phase advances by 2 pi x period_x / wavelength per transverse
    site; the cavity coupling flips sign between neighbouring sites along y.
    """
    geom = geom or LatticeGeometry()
    ratio = geom.period_x / geom.probe_wavelength
    # fractional turns first so that dny -> dny + 2 is exact
    turns = (d.dnx * ratio) % 1.0 + (d.dny % 2) * 0.5
    return float(TWO_PI * (turns % 1.0))


def deskew(x, y, geom: LatticeGeometry):
    """Camera -> lattice coordinates: rotate by alpha, then shear by beta."""
    m = geom.transform()
    xy = np.stack([np.asarray(x, float), np.asarray(y, float)])
    out = np.tensordot(m, xy, axes=1)
    return out[0], out[1]


def reskew(x, y, geom: LatticeGeometry):
    """Inverse of :func:`deskew`."""
    m = np.linalg.inv(geom.transform())
    xy = np.stack([np.asarray(x, float), np.asarray(y, float)])
    out = np.tensordot(m, xy, axes=1)
    return out[0], out[1]


@dataclass(frozen=True)
class SiteAssignment:
    difference: SiteDifference | None
    residual: float  # largest distance to the nearest site, in periods
    ambiguous: bool


def assign_site(p1, p2, geom: LatticeGeometry, threshold: float = 0.35) -> tuple[SiteDifference, float]:
    """Site difference of two deskewed positions and its residual (in periods)."""
    diff = (np.asarray(p2, float) - np.asarray(p1, float)) / geom.periods
    n = np.rint(diff)
    residual = float(np.abs(diff - n).max())
    if residual > threshold:
        raise AmbiguousAssignmentError(
            f"pair lies {residual:.2f} periods from the nearest site (threshold {threshold})"
        )
    dnx, dny = int(n[0]), int(n[1])
    if (dnx, dny) == (0, 0):
        raise AmbiguousAssignmentError("both atoms assigned to the same site")
    return SiteDifference(dnx, dny), residual


def assign_sites(pairs, geom: LatticeGeometry, threshold: float = 0.35, discard: bool = True):
    """Assign each ``(p1, p2)`` pair of deskewed positions to a site difference.

    Pairs further than ``threshold`` periods from a lattice site are marked
    ambiguous (``discard=True``) or raise :class:`AmbiguousAssignmentError`.
    """
    out = []
    for p1, p2 in pairs:
        try:
            d, r = assign_site(p1, p2, geom, threshold)
            out.append(SiteAssignment(d, r, False))
        except AmbiguousAssignmentError:
            if not discard:
                raise
            diff = (np.asarray(p2, float) - np.asarray(p1, float)) / geom.periods
            out.append(SiteAssignment(None, float(np.abs(diff - np.rint(diff)).max()), True))
    return out


@dataclass(frozen=True, eq=False)
class AtomImage:
    counts: np.ndarray = field(repr=False)
    background: float = BACKGROUND_COUNTS
    amplitude: float = ATOM_COUNTS
    pixel_scale: float = 0.48
    exposure: float = 0.75

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=float)
        if not np.all(np.isfinite(c)) or np.any(c < 0):
            raise ValueError("image counts must be finite and non-negative")
        object.__setattr__(self, "counts", c)


def default_psf_fwhm() -> tuple[float, float]:
    return tuple(PSF_INFLATION * f for f in DIFFRACTION_FWHM_PX)


def _pixel_fraction(n: int, center: float, sigma: float) -> np.ndarray:
    edges = np.arange(n + 1) - 0.5
    cdf = 0.5 * (1 + erf((edges - center) / (np.sqrt(2) * sigma)))
    return np.diff(cdf)


def _spot(shape, x0, y0, sx, sy, amp) -> np.ndarray:
    # pixel-integrated Gaussian: column index is x, row index is y
    return amp * np.outer(_pixel_fraction(shape[0], y0, sy), _pixel_fraction(shape[1], x0, sx))


def synth_image(
    positions_px,
    shape=(32, 32),
    psf_fwhm=None,
    amplitude: float = ATOM_COUNTS,
    background: float = BACKGROUND_COUNTS,
    noise_seed: int | None = None,
    pixel_scale: float = 0.48,
) -> AtomImage:
    """Gaussian spots on a flat background, optionally with Poisson shot noise.

    ``positions_px`` are (x, y) pixel coordinates; ``amplitude`` is the
    integrated count per atom.  ``noise_seed=None`` returns the noiseless
    expectation.
    """
    fx, fy = psf_fwhm or default_psf_fwhm()
    sx, sy = fx / FWHM_PER_SIGMA, fy / FWHM_PER_SIGMA
    img = np.full(shape, float(background))
    for x0, y0 in np.atleast_2d(positions_px):
        if not (0 <= x0 < shape[1] and 0 <= y0 < shape[0]):
            raise ValueError(f"atom at ({x0}, {y0}) lies outside the frame")
        img += _spot(shape, x0, y0, sx, sy, amplitude)
    if noise_seed is not None:
        img = np.random.default_rng(noise_seed).poisson(img).astype(float)
    return AtomImage(img, background, amplitude, pixel_scale)


@dataclass(frozen=True)
class SpotFit:
    x: float
    y: float
    fwhm_x: float
    fwhm_y: float
    amplitude: float
    background: float


def _find_peaks(img: np.ndarray, n: int, min_sep: float) -> np.ndarray:
    smooth = ndimage.gaussian_filter(img, 1.0)
    peaks = []
    work = smooth.copy()
    for _ in range(n):
        iy, ix = np.unravel_index(np.argmax(work), work.shape)
        peaks.append((float(ix), float(iy)))
        yy, xx = np.ogrid[: img.shape[0], : img.shape[1]]
        work[(xx - ix) ** 2 + (yy - iy) ** 2 < min_sep**2] = -np.inf
    return np.array(peaks)


def _plausible(f: SpotFit, shape, fwhm, factor: float = 3.0) -> bool:
    inside = 0 <= f.x < shape[1] and 0 <= f.y < shape[0]
    widths = all(w / factor < got < w * factor for got, w in zip((f.fwhm_x, f.fwhm_y), fwhm))
    return inside and widths and f.amplitude > 0


def fit_psf(image: AtomImage, n_atoms: int = 1, min_separation: float = 2.0, max_nfev: int = 200) -> list[SpotFit]:
    """Least-squares fit of ``n_atoms`` pixel-integrated Gaussians plus background.

    Raises :class:`OverlapError` when fitted atoms are closer than
    ``min_separation`` pixels or a second atom cannot be resolved, and
    :class:`FitError` when the optimizer does not converge to a 1e-4 px
    parameter step or a single spot is implausible.
    """
    if n_atoms not in (1, 2):
        raise ValueError("fit_psf handles one or two atoms")
    img = image.counts
    shape = img.shape
    fx, fy = default_psf_fwhm()
    peaks = _find_peaks(img, n_atoms, min_separation)
    if n_atoms == 2 and np.hypot(*(peaks[0] - peaks[1])) < min_separation:
        raise OverlapError("atoms too close to separate")
    bg0 = float(np.median(img))
    p0 = [bg0]
    for x0, y0 in peaks:
        p0 += [x0, y0, fx / FWHM_PER_SIGMA, fy / FWHM_PER_SIGMA, max(img.sum() - bg0 * img.size, 1.0) / n_atoms]

    def model(p):
        out = np.full(shape, p[0])
        for k in range(n_atoms):
            x0, y0, sx, sy, amp = p[1 + 5 * k : 6 + 5 * k]
            out += _spot(shape, x0, y0, abs(sx), abs(sy), amp)
        return out

    # Poisson weights from the data, floored at the background level
    weight = 1 / np.sqrt(np.maximum(img, 1.0))
    res = least_squares(
        lambda p: ((model(p) - img) * weight).ravel(), p0,
        method="lm", xtol=1e-10, ftol=1e-12, max_nfev=max_nfev * len(p0),
    )
    if not res.success:
        raise FitError(f"PSF fit did not converge: {res.message}")
    fits = []
    for k in range(n_atoms):
        x0, y0, sx, sy, amp = res.x[1 + 5 * k : 6 + 5 * k]
        fits.append(SpotFit(x0, y0, abs(sx) * FWHM_PER_SIGMA, abs(sy) * FWHM_PER_SIGMA, amp, res.x[0]))
    bad = [f for f in fits if not _plausible(f, shape, (fx, fy))]
    if bad:
        if n_atoms == 2:
            raise OverlapError("could not resolve two separate atoms")
        raise FitError("fitted spot is outside the frame or has an implausible width")
    if n_atoms == 2 and np.hypot(fits[0].x - fits[1].x, fits[0].y - fits[1].y) < min_separation:
        raise OverlapError("fitted atoms closer than the minimum separation")
    return sorted(fits, key=lambda f: (f.x, f.y))


def projected_widths(diffs: np.ndarray, theta: float, geom: LatticeGeometry) -> tuple[float, float]:
    """FWHM of the site peaks after rotating difference vectors by ``theta``.

    Each projection is folded onto one lattice period and its spread is taken
    from the circular (wrapped-normal) standard deviation.
    """
    c, s = np.cos(theta), np.sin(theta)
    px = c * diffs[:, 0] + s * diffs[:, 1]
    py = -s * diffs[:, 0] + c * diffs[:, 1]
    out = []
    for proj, period in ((px, geom.period_x), (py, geom.period_y)):
        R = np.abs(np.mean(np.exp(1j * TWO_PI * proj / period)))
        sigma = period / TWO_PI * np.sqrt(-2 * np.log(max(R, 1e-300)))
        out.append(FWHM_PER_SIGMA * sigma)
    return out[0], out[1]


def _minimum(thetas, widths, half_window):
    i = int(np.argmin(widths))
    if i in (0, len(thetas) - 1):
        raise CalibrationError("width minimum at the edge of the scanned range")
    sel = np.abs(thetas - thetas[i]) <= half_window
    if sel.sum() < 3:
        raise CalibrationError("too few scan points near the minimum")
    c2, c1, _ = np.polyfit(thetas[sel], widths[sel], 2)
    if c2 <= 0:
        raise CalibrationError("no clear width minimum")
    return -c1 / (2 * c2)


def calibrate_angles(
    pairs,
    geom: LatticeGeometry | None = None,
    scan_deg: float = 3.0,
    step_deg: float = 0.05,
    fit_window_deg: float = 0.6,
    min_pairs: int = 1000,
) -> tuple[float, float]:
    """Recover rotation ``alpha`` and skew ``beta`` (radians) from atom pairs.

    ``pairs`` holds camera-frame difference vectors with shape (N, 2), or the
    two positions of each pair with shape (N, 2, 2).  The projected peak
    widths are scanned over rotation angle and each axis' minimum is located
    with a quadratic fit.  The y-axis minimum sits at ``alpha`` and the x-axis
    minimum at ``alpha - beta``.
    """
    geom = geom or LatticeGeometry()
    arr = np.asarray(pairs, dtype=float)
    if arr.ndim == 3:
        arr = arr[:, 1] - arr[:, 0]
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("pairs must have shape (N, 2) or (N, 2, 2)")
    if len(arr) < min_pairs:
        raise CalibrationError(f"need at least {min_pairs} pairs, got {len(arr)}")
    thetas = np.deg2rad(np.arange(-scan_deg, scan_deg + step_deg / 2, step_deg))
    widths = np.array([projected_widths(arr, t, geom) for t in thetas])
    half = np.deg2rad(fit_window_deg)
    theta_x = _minimum(thetas, widths[:, 0], half)
    theta_y = _minimum(thetas, widths[:, 1], half)
    return theta_y, theta_y - theta_x


def synth_pairs(
    n_pairs: int,
    geom: LatticeGeometry,
    sigma: float = 0.030,
    envelope_fwhm: float = 3.0,
    seed: int = 0,
):
    """Random atom pairs on the lattice with Gaussian position noise.

    Returns the true site differences and the noisy camera-frame positions,
    shape (N, 2, 2).  Sites are drawn from a Gaussian envelope; pairs that
    would share a site are redrawn.
    """
    rng = np.random.default_rng(seed)
    sd = envelope_fwhm / FWHM_PER_SIGMA
    sites = np.rint(rng.normal(0, sd, size=(n_pairs, 2, 2)) / geom.periods)
    same = np.all(sites[:, 0] == sites[:, 1], axis=1)
    while same.any():
        sites[same, 1] = np.rint(rng.normal(0, sd, size=(same.sum(), 2)) / geom.periods)
        same = np.all(sites[:, 0] == sites[:, 1], axis=1)
    lattice_xy = sites * geom.periods + rng.normal(0, sigma, size=sites.shape)
    cam_x, cam_y = reskew(lattice_xy[..., 0], lattice_xy[..., 1], geom)
    cam = np.stack([cam_x, cam_y], axis=-1)
    diffs = (sites[:, 1] - sites[:, 0]).astype(int)
    return [SiteDifference(int(a), int(b)) for a, b in diffs], cam


def write_image(path, image: AtomImage) -> tuple[Path, Path]:
    """Write a 16-bit binary PGM plus a ``.txt`` sidecar with metadata."""
    path = Path(path)
    data = np.clip(np.rint(image.counts), 0, 65535).astype(">u2")
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(data.tobytes())
    side = path.with_suffix(".txt")
    side.write_text(
        f"pixel_scale_um = {image.pixel_scale!r}\n"
        f"exposure_s = {image.exposure!r}\n"
        f"background_counts = {image.background!r}\n"
        f"atom_counts = {image.amplitude!r}\n"
    )
    return path, side


def read_image(path) -> AtomImage:
    path = Path(path)
    raw = path.read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end : end + 1].isspace():
            end += 1
        fields.append(raw[pos:end].decode("ascii"))
        pos = end
    if fields[0] != "P5" or int(fields[3]) != 65535:
        raise ValueError("expected a 16-bit binary PGM")
    w, h = int(fields[1]), int(fields[2])
    data = np.frombuffer(raw[pos + 1 : pos + 1 + 2 * w * h], dtype=">u2").reshape(h, w)
    meta = {}
    side = path.with_suffix(".txt")
    if side.exists():
        for line in side.read_text().splitlines():
            if "=" in line:
                k, v = line.split("=", 1)
                meta[k.strip()] = float(v)
    return AtomImage(
        data.astype(float),
        background=meta.get("background_counts", BACKGROUND_COUNTS),
        amplitude=meta.get("atom_counts", ATOM_COUNTS),
        pixel_scale=meta.get("pixel_scale_um", 0.48),
        exposure=meta.get("exposure_s", 0.75),
    )


def write_centroids(path, fits: list[SpotFit], frame: int = 0, append: bool = False):
    """Append fitted spots to a CSV file (header written for new files)."""
    path = Path(path)
    new = not (append and path.exists())
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(["frame", "x_px", "y_px", "fwhm_x_px", "fwhm_y_px", "amplitude", "background"])
        for f in fits:
            w.writerow([frame, f"{f.x:.6f}", f"{f.y:.6f}", f"{f.fwhm_x:.6f}", f"{f.fwhm_y:.6f}",
                        f"{f.amplitude:.3f}", f"{f.background:.3f}"])
