"""Domain types, the portable sample directory format, and cube utilities.

A capture of one specimen is a :class:`SpectralCube`: one monochrome frame
per illumination band plus a dark frame recorded with all LEDs off.  All
types here are immutable after construction (arrays are locked read-only)
and every operation is a pure function, so cubes and samples can be shared
freely across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np

from .errors import (
    DimensionMismatchError,
    MissingFrameError,
    ValidationError,
)
from .pgm import read_pgm16, write_pgm16

#: The fourteen dominant LED wavelengths of the imaging head, in nm.
TABLE1_WAVELENGTHS = (365, 405, 428, 473, 530, 575, 621, 660, 735, 770, 830, 850, 890, 940)

BIT_DEPTH = 16
RAW_MAX = 65535


class Mode(Enum):
    """Illumination geometry: light reflected off or transmitted through."""

    REFLECTANCE = "reflectance"
    TRANSMITTANCE = "transmittance"

    @property
    def tag(self) -> str:
        """Single-letter column prefix used in data matrices (R or T)."""
        return "R" if self is Mode.REFLECTANCE else "T"


@dataclass(frozen=True)
class BandSet:
    """Ordered set of band wavelengths present in a cube.

    Wavelengths must be distinct positive integers in strictly increasing
    order.  The default is the full fourteen-LED head; the device is also
    commonly run with the 365 nm UV band excluded (thirteen bands), which
    doubles to 26 columns in merged mode.
    """

    wavelengths_nm: tuple[int, ...] = TABLE1_WAVELENGTHS

    def __post_init__(self):
        wls = tuple(int(w) for w in self.wavelengths_nm)
        object.__setattr__(self, "wavelengths_nm", wls)
        if len(wls) < 1:
            raise ValidationError("band set needs at least one wavelength")
        if any(w <= 0 for w in wls):
            raise ValidationError("wavelengths must be positive")
        if any(b <= a for a, b in zip(wls, wls[1:])):
            raise ValidationError(f"wavelengths must be strictly increasing: {wls}")

    @classmethod
    def thirteen_band(cls) -> "BandSet":
        """The thirteen-band configuration (365 nm UV band excluded)."""
        return cls(tuple(w for w in TABLE1_WAVELENGTHS if w != 365))

    def __len__(self) -> int:
        return len(self.wavelengths_nm)

    def __iter__(self) -> Iterator[int]:
        return iter(self.wavelengths_nm)

    def __contains__(self, wavelength_nm: int) -> bool:
        return wavelength_nm in self.wavelengths_nm

    def index(self, wavelength_nm: int) -> int:
        return self.wavelengths_nm.index(wavelength_nm)


def _lock(arr: np.ndarray) -> np.ndarray:
    # always copy so freezing never reaches back into caller-owned arrays
    out = np.array(arr, order="C")
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class SpectralFrame:
    """One monochrome frame: uint16 raw counts or float64 in [0, 1].

    ``saturated`` is derived from the pixel values: a raw frame is
    saturated when any pixel sits at full scale, a normalized frame when
    any pixel reaches 1.0.
    """

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values)
        if arr.ndim != 2 or arr.shape[0] <= 0 or arr.shape[1] <= 0:
            raise ValidationError(f"frame must be a non-empty 2-D grid, got {arr.shape}")
        if np.issubdtype(arr.dtype, np.integer):
            arr = arr.astype(np.uint16) if arr.dtype != np.uint16 else arr
            if self._out_of_range(np.asarray(self.values)):
                raise ValidationError("raw frame values outside [0, 65535]")
        elif np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64, copy=False)
            if not np.all(np.isfinite(arr)):
                raise ValidationError("normalized frame contains non-finite values")
        else:
            raise ValidationError(f"unsupported frame dtype {arr.dtype}")
        object.__setattr__(self, "values", _lock(arr))

    @staticmethod
    def _out_of_range(arr: np.ndarray) -> bool:
        return bool(arr.size) and (int(arr.min()) < 0 or int(arr.max()) > RAW_MAX)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def is_raw(self) -> bool:
        return np.issubdtype(self.values.dtype, np.integer)

    @property
    def saturated(self) -> bool:
        if self.is_raw:
            return bool((self.values == RAW_MAX).any())
        return bool((self.values >= 1.0).any())

    def __eq__(self, other) -> bool:
        if not isinstance(other, SpectralFrame):
            return NotImplemented
        return self.values.dtype == other.values.dtype and np.array_equal(
            self.values, other.values
        )


@dataclass(frozen=True, eq=False)
class SpectralCube:
    """Per-band frames plus the dark frame for one capture.

    Invariants checked on construction: the band map covers the band set
    exactly once, and every frame (dark included) has identical
    dimensions.
    """

    bands: Mapping[int, SpectralFrame]
    dark: SpectralFrame
    mode: Mode
    band_set: BandSet

    def __post_init__(self):
        bands = dict(self.bands)
        expected = set(self.band_set)
        got = set(bands)
        if got != expected:
            missing = sorted(expected - got)
            extra = sorted(got - expected)
            raise ValidationError(
                f"band map does not match band set (missing={missing}, extra={extra})"
            )
        shape = self.dark.values.shape
        for wl, frame in bands.items():
            if frame.values.shape != shape:
                raise DimensionMismatchError(
                    f"band {wl} nm is {frame.values.shape}, dark frame is {shape}"
                )
        object.__setattr__(self, "bands", bands)

    @property
    def width(self) -> int:
        return self.dark.width

    @property
    def height(self) -> int:
        return self.dark.height

    @property
    def is_raw(self) -> bool:
        return self.dark.is_raw

    def frame(self, wavelength_nm: int) -> SpectralFrame:
        return self.bands[wavelength_nm]

    def stack(self) -> np.ndarray:
        """Band frames as one (B, h, w) array in band-set order."""
        return np.stack([self.bands[wl].values for wl in self.band_set])

    def map_frames(self, fn) -> "SpectralCube":
        """New cube with ``fn(values) -> values`` applied to every band."""
        bands = {wl: SpectralFrame(fn(f.values)) for wl, f in self.bands.items()}
        return replace(self, bands=bands)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SpectralCube):
            return NotImplemented
        return (
            self.mode == other.mode
            and self.band_set == other.band_set
            and self.dark == other.dark
            and all(self.bands[wl] == other.bands[wl] for wl in self.band_set)
        )


@dataclass(frozen=True)
class Label:
    """Ground truth for one sample: adulteration percentage or color class.

    Exactly one of the two variants may be set.
    """

    adulteration_pct: float | None = None
    class_id: int | None = None

    def __post_init__(self):
        if (self.adulteration_pct is None) == (self.class_id is None):
            raise ValidationError("label must set exactly one of adulteration_pct/class_id")
        if self.adulteration_pct is not None:
            pct = float(self.adulteration_pct)
            if not 0.0 <= pct <= 100.0:
                raise ValidationError(f"adulteration_pct outside [0, 100]: {pct}")
            object.__setattr__(self, "adulteration_pct", pct)
        else:
            cid = int(self.class_id)
            if cid < 0:
                raise ValidationError(f"class_id must be non-negative: {cid}")
            object.__setattr__(self, "class_id", cid)

    @classmethod
    def adulteration(cls, pct: float) -> "Label":
        return cls(adulteration_pct=pct)

    @classmethod
    def color(cls, class_id: int) -> "Label":
        return cls(class_id=class_id)

    @property
    def key(self) -> float:
        """Scalar class key used by splits, classifiers and signatures."""
        if self.adulteration_pct is not None:
            return self.adulteration_pct
        return float(self.class_id)

    def to_json(self) -> dict:
        if self.adulteration_pct is not None:
            return {"adulteration_pct": self.adulteration_pct}
        return {"class_id": self.class_id}

    @classmethod
    def from_json(cls, obj: dict) -> "Label":
        if not isinstance(obj, dict) or len(obj) != 1:
            raise ValidationError(f"malformed label object: {obj!r}")
        if "adulteration_pct" in obj:
            return cls.adulteration(obj["adulteration_pct"])
        if "class_id" in obj:
            return cls.color(obj["class_id"])
        raise ValidationError(f"unknown label variant: {obj!r}")


@dataclass(frozen=True, eq=False)
class Sample:
    """One specimen capture: id, cube and ground-truth label.

    ``provenance`` records the preprocessing stages already applied, in
    order; it lives only in memory and is not part of the disk format.
    """

    id: str
    cube: SpectralCube
    label: Label
    provenance: tuple[str, ...] = field(default=())

    def __eq__(self, other) -> bool:
        if not isinstance(other, Sample):
            return NotImplemented
        return (
            self.id == other.id
            and self.label == other.label
            and self.cube == other.cube
        )


def crop(cube: SpectralCube, x: int, y: int, w: int, h: int) -> SpectralCube:
    """Crop the identical (x, y, w, h) rectangle from every band and the dark frame.

    Output pixel (i, j) of each band equals input pixel (x+i, y+j); x runs
    along width, y along height.
    """
    if w <= 0 or h <= 0:
        raise ValidationError(f"crop size must be positive, got {w}x{h}")
    if x < 0 or y < 0 or x + w > cube.width or y + h > cube.height:
        raise ValidationError(
            f"crop rectangle ({x},{y},{w},{h}) exceeds frame {cube.width}x{cube.height}"
        )
    window = np.s_[y : y + h, x : x + w]
    bands = {wl: SpectralFrame(f.values[window]) for wl, f in cube.bands.items()}
    dark = SpectralFrame(cube.dark.values[window])
    return SpectralCube(bands=bands, dark=dark, mode=cube.mode, band_set=cube.band_set)


# --------------------------------------------------------------------------
# Sample directory format
#
# <dir>/manifest.json plus one 16-bit PGM per band and dark.pgm.  The
# manifest schema (keys and order) is fixed; see save_sample.
# --------------------------------------------------------------------------

MANIFEST_NAME = "manifest.json"
DARK_NAME = "dark.pgm"


def _band_filename(wavelength_nm: int) -> str:
    return f"band_{wavelength_nm}.pgm"


def save_sample(sample: Sample, dir_path) -> None:
    """Write a raw sample to ``dir_path`` in the portable directory format.

    Emits manifest.json plus one 16-bit PGM per band and the dark frame.
    Writing is deterministic: saving the same sample twice produces
    byte-identical files.  Only raw (uint16) cubes can be persisted.
    """
    cube = sample.cube
    if not cube.is_raw:
        raise ValidationError("only raw 16-bit cubes can be saved; quantize first")
    directory = Path(dir_path)
    directory.mkdir(parents=True, exist_ok=True)

    manifest = {
        "id": sample.id,
        "mode": cube.mode.value,
        "label": sample.label.to_json(),
        "width": cube.width,
        "height": cube.height,
        "bit_depth": BIT_DEPTH,
        "dark": DARK_NAME,
        "bands": [
            {"wavelength_nm": wl, "file": _band_filename(wl)} for wl in cube.band_set
        ],
    }
    payload = json.dumps(manifest, indent=2).encode("utf-8") + b"\n"
    (directory / MANIFEST_NAME).write_bytes(payload)
    write_pgm16(directory / DARK_NAME, cube.dark.values)
    for wl in cube.band_set:
        write_pgm16(directory / _band_filename(wl), cube.frame(wl).values)


def load_sample(dir_path) -> Sample:
    """Load a sample directory written by :func:`save_sample`, bit-exactly."""
    directory = Path(dir_path)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.is_file():
        raise ValidationError(f"no {MANIFEST_NAME} in {directory}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"malformed manifest in {directory}: {exc}") from exc

    for key in ("id", "mode", "label", "width", "height", "bit_depth", "dark", "bands"):
        if key not in manifest:
            raise ValidationError(f"manifest missing key {key!r} in {directory}")
    if manifest["bit_depth"] != BIT_DEPTH:
        raise ValidationError(f"unsupported bit depth {manifest['bit_depth']}")
    try:
        mode = Mode(manifest["mode"])
    except ValueError:
        raise ValidationError(f"unknown mode string {manifest['mode']!r}") from None

    width = int(manifest["width"])
    height = int(manifest["height"])
    label = Label.from_json(manifest["label"])

    wavelengths = [int(entry["wavelength_nm"]) for entry in manifest["bands"]]
    if len(set(wavelengths)) != len(wavelengths):
        raise ValidationError(f"duplicate wavelength in manifest: {sorted(wavelengths)}")
    band_set = BandSet(tuple(sorted(wavelengths)))

    def read_frame(file_name: str, wavelength_nm: int | None) -> SpectralFrame:
        path = directory / file_name
        if not path.is_file():
            if wavelength_nm is not None:
                raise MissingFrameError(wavelength_nm, path)
            raise ValidationError(f"missing dark frame: {path}")
        values = read_pgm16(path)
        if values.shape != (height, width):
            raise DimensionMismatchError(
                f"{file_name} is {values.shape[1]}x{values.shape[0]}, "
                f"manifest says {width}x{height}"
            )
        return SpectralFrame(values)

    bands = {
        int(entry["wavelength_nm"]): read_frame(entry["file"], int(entry["wavelength_nm"]))
        for entry in manifest["bands"]
    }
    dark = read_frame(manifest["dark"], None)
    cube = SpectralCube(bands=bands, dark=dark, mode=mode, band_set=band_set)
    return Sample(id=str(manifest["id"]), cube=cube, label=label)


def save_dataset(samples, dir_path) -> None:
    """Write a dataset directory: one subdirectory per sample, named by id."""
    samples = list(samples)
    ids = [s.id for s in samples]
    if len(set(ids)) != len(ids):
        raise ValidationError("sample ids must be unique within a dataset")
    directory = Path(dir_path)
    directory.mkdir(parents=True, exist_ok=True)
    for sample in samples:
        save_sample(sample, directory / sample.id)


def load_dataset(dir_path) -> list[Sample]:
    """Load every sample subdirectory of ``dir_path`` in name order."""
    directory = Path(dir_path)
    if not directory.is_dir():
        raise ValidationError(f"not a dataset directory: {directory}")
    samples = []
    for sub in sorted(p for p in directory.iterdir() if p.is_dir()):
        if (sub / MANIFEST_NAME).is_file():
            samples.append(load_sample(sub))
    if not samples:
        raise ValidationError(f"no samples found under {directory}")
    ids = [s.id for s in samples]
    if len(set(ids)) != len(ids):
        raise ValidationError(f"duplicate sample ids in dataset {directory}")
    return samples
