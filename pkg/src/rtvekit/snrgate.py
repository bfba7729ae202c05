"""WADA-SNR estimation and SNR-gated dispatch to an external enhancer.

The estimator looks only at the amplitude distribution of the whole file:
``G = log(mean|x|) - mean(log(|x| + eps))`` is scale invariant and grows with
SNR when speech is gamma distributed and noise Gaussian.  ``G`` is mapped to
dB through a lookup table derived from that model.
"""

from __future__ import annotations

import logging
import math
import shlex
import shutil
import subprocess
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from rtvekit import ConfigError, RtveError, ValidationError
from rtvekit._wada_table import G_VALUES, SNR_DB_MIN, SNR_DB_STEP
from rtvekit.formats import AudioBuffer, read_audio

log = logging.getLogger(__name__)

EPS = 1e-10
SNR_CLAMP = (-20.0, 100.0)
MIN_DURATION = 0.1

_G_TABLE = np.asarray(G_VALUES)
_SNR_TABLE = SNR_DB_MIN + SNR_DB_STEP * np.arange(len(G_VALUES))


class InsufficientSignalError(RtveError, ValueError):
    """Audio too short or silent to estimate an SNR."""


@dataclass(frozen=True)
class SnrEstimate:
    recording_id: str
    snr_db: float
    statistic_g: float


def g_statistic(samples) -> float:
    x = np.abs(np.asarray(samples, dtype=np.float64))
    # peak normalization makes the eps guard scale independent
    x = x / x.max()
    return float(np.log(np.mean(x)) - np.mean(np.log(x + EPS)))


def g_to_snr(g: float) -> float:
    """Table lookup with linear interpolation; clamps outside the table."""
    lo, hi = SNR_CLAMP
    if g <= _G_TABLE[0]:
        return lo
    if g >= _G_TABLE[-1]:
        return hi
    return float(np.clip(np.interp(g, _G_TABLE, _SNR_TABLE), lo, hi))


def wada_snr(audio: AudioBuffer, recording_id: str = "") -> SnrEstimate:
    samples = audio.samples
    if len(samples) < MIN_DURATION * audio.sample_rate:
        raise InsufficientSignalError(
            f"{recording_id or 'audio'}: {len(samples)} samples is shorter than {MIN_DURATION} s")
    if not np.any(samples):
        raise InsufficientSignalError(f"{recording_id or 'audio'}: all samples are zero")
    g = g_statistic(samples)
    return SnrEstimate(recording_id, g_to_snr(g), g)


@dataclass(frozen=True)
class GateRange:
    low: float = -math.inf
    high: float = math.inf

    def __post_init__(self):
        if not self.low < self.high:
            raise ValidationError(f"empty SNR range ({self.low}, {self.high})")

    @classmethod
    def parse(cls, text: str) -> "GateRange":
        """``"-5:8"``, ``":10"``, ``"-inf:inf"`` and friends."""
        if ":" not in text:
            raise ValidationError(f"SNR range {text!r} must look like LOW:HIGH")
        lo_s, hi_s = text.split(":", 1)
        try:
            lo = float(lo_s) if lo_s.strip() else -math.inf
            hi = float(hi_s) if hi_s.strip() else math.inf
        except ValueError:
            raise ValidationError(f"bad SNR range {text!r}") from None
        return cls(lo, hi)

    def label(self) -> str:
        def fmt(v):
            if math.isinf(v):
                return "-inf" if v < 0 else "inf"
            return f"{v:g}"
        return f"({fmt(self.low)}, {fmt(self.high)})"


def gate_decision(est: SnrEstimate, rng: GateRange) -> bool:
    """Open interval: an estimate exactly on a bound is not gated."""
    return rng.low < est.snr_db < rng.high


@dataclass
class FileResult:
    id: str
    snr_db: Optional[float]
    gated: bool
    status: str  # enhanced | passthrough | failed | error
    output: Optional[str] = None
    message: Optional[str] = None


@dataclass
class GateReport:
    files: list = field(default_factory=list)
    range_label: str = ""

    @property
    def cleaned_fraction(self) -> float:
        if not self.files:
            return 0.0
        return 100.0 * sum(f.gated for f in self.files) / len(self.files)

    def to_json(self) -> dict:
        return {"kind": "gate", "range": self.range_label,
                "files": [asdict(f) for f in self.files],
                "cleaned_fraction": self.cleaned_fraction}


def check_command(template: str) -> list:
    """Split the command template and make sure it can run at all."""
    argv = shlex.split(template)
    if not argv:
        raise ConfigError("empty enhancement command")
    joined = " ".join(argv)
    if "{in}" not in joined or "{out}" not in joined:
        raise ConfigError("command template needs both {in} and {out} placeholders")
    if shutil.which(argv[0]) is None:
        raise ConfigError(f"enhancement command not found: {argv[0]}")
    return argv


def _file_id(path: Path) -> str:
    return path.stem


def _process_file(path: Path, rng: GateRange, argv: list, out_dir: Path) -> FileResult:
    fid = _file_id(path)
    out_path = out_dir / path.name
    try:
        with open(path, "rb") as fh:
            est = wada_snr(read_audio(fh), fid)
    except (InsufficientSignalError, OSError, RtveError) as exc:
        shutil.copyfile(path, out_path)
        return FileResult(fid, None, False, "error", str(out_path), str(exc))
    gated = gate_decision(est, rng)
    if not gated:
        shutil.copyfile(path, out_path)
        return FileResult(fid, est.snr_db, False, "passthrough", str(out_path))
    cmd = [a.replace("{in}", str(path)).replace("{out}", str(out_path)) for a in argv]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.returncode != 0 or not out_path.exists():
        shutil.copyfile(path, out_path)
        msg = proc.stderr.strip()[-500:] or f"exit status {proc.returncode}"
        log.warning("enhancement failed for %s: %s", fid, msg)
        return FileResult(fid, est.snr_db, True, "failed", str(out_path), msg)
    return FileResult(fid, est.snr_db, True, "enhanced", str(out_path))


def enhance_dispatch(files: Sequence, rng: GateRange, command: str, out_dir,
                     workers: int = 1) -> GateReport:
    """Estimate SNR per file and run ``command`` on the files inside ``rng``.

    Every input ends up in ``out_dir``: gated files as the command's output,
    the rest (and any whose command failed) as unchanged copies.  Report order
    follows input order.
    """
    argv = check_command(command)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [Path(f) for f in files]
    for p in paths:
        if p.resolve().parent == out_dir.resolve():
            raise ConfigError(f"input {p} lives in the output directory")
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(lambda p: _process_file(p, rng, argv, out_dir), paths))
    return GateReport(results, rng.label())


def estimate_files(files: Sequence, workers: int = 1) -> list:
    """WADA-SNR for each path (``None`` entries for unusable audio)."""
    def one(path):
        path = Path(path)
        try:
            with open(path, "rb") as fh:
                return wada_snr(read_audio(fh), _file_id(path))
        except (InsufficientSignalError, OSError, RtveError) as exc:
            log.warning("%s: %s", path, exc)
            return None
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        return list(pool.map(one, files))

