"""CTM / STM transcript files, text normalization and PCM WAVE audio.

CTM lines are ``recording channel start duration word [confidence]`` and STM
lines are ``recording channel speaker start end [<labels>] text...``.  Lines
starting with ``;;`` are comments in both.  Times are written with three
decimals so that ``parse(write(x)) == x`` for millisecond-resolution input.
"""

from __future__ import annotations

import io
import struct
import unicodedata
from dataclasses import dataclass, field
from typing import IO, Iterable, Optional, Sequence, Union

import numpy as np

from rtvekit import ParseError, RtveError, ValidationError

# Reserved token standing in for noise / music / overlap labels.  It is kept
# in the word stream (so timing survives) but never scored.
NONSCORED = "<nonscored>"

TextInput = Union[str, IO[str], Iterable[str]]


def _lines(source: TextInput) -> Iterable[str]:
    if isinstance(source, str):
        return source.splitlines()
    return source


def _nfc(word: str) -> str:
    return unicodedata.normalize("NFC", word)


@dataclass(frozen=True)
class WordToken:
    recording_id: str
    channel: str
    start: float
    duration: float
    word: str
    confidence: Optional[float] = None

    def __post_init__(self):
        if self.start < 0 or self.duration < 0:
            raise ValidationError(
                f"negative time in token {self.word!r}: start={self.start} dur={self.duration}")
        if not self.word:
            raise ValidationError("empty word")
        if self.confidence is not None and not 0.0 <= self.confidence <= 1.0:
            raise ValidationError(f"confidence {self.confidence} outside [0, 1]")

    @property
    def end(self) -> float:
        return self.start + self.duration

    @property
    def midpoint(self) -> float:
        return self.start + 0.5 * self.duration

    @property
    def conf(self) -> float:
        """Confidence with the absent-means-certain convention applied."""
        return 1.0 if self.confidence is None else self.confidence


@dataclass(frozen=True)
class CtmFile:
    """Time-sorted word tokens, possibly spanning several recordings."""

    tokens: tuple = ()

    def __post_init__(self):
        ordered = sorted(self.tokens, key=lambda t: (t.recording_id, t.channel, t.start))
        object.__setattr__(self, "tokens", tuple(ordered))

    def __len__(self):
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)

    def recordings(self) -> list:
        """Recording ids in sorted order."""
        return sorted({t.recording_id for t in self.tokens})

    def by_recording(self) -> dict:
        out: dict = {}
        for tok in self.tokens:
            out.setdefault(tok.recording_id, []).append(tok)
        return out


@dataclass(frozen=True)
class StmSegment:
    recording_id: str
    channel: str
    speaker: str
    start: float
    end: float
    labels: Optional[str] = None
    text: tuple = ()

    def __post_init__(self):
        if not self.start < self.end:
            raise ValidationError(
                f"segment {self.recording_id} has start {self.start} >= end {self.end}")
        object.__setattr__(self, "text", tuple(self.text))

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class NormalizationRules:
    case_folding: bool = True
    punctuation_strip: bool = True
    auxiliary_labels: frozenset = field(default_factory=frozenset)
    # Diacritics are never removed; the flag only documents that.
    diacritics_preserved: bool = True

    def __post_init__(self):
        object.__setattr__(self, "auxiliary_labels", frozenset(self.auxiliary_labels))


DEFAULT_AUX_LABELS = frozenset({"[música]", "[musica]", "[ruido]", "[risas]", "[aplausos]",
                                "[solapamiento]", "[noise]", "[music]", "[overlap]", "<unk>"})
DEFAULT_RULES = NormalizationRules(auxiliary_labels=DEFAULT_AUX_LABELS)


def _strip_punct(word: str) -> str:
    # P*: punctuation (incl. ¿ ¡), Z*: separators, Cc/Cf: control/format chars
    return "".join(ch for ch in word
                   if not unicodedata.category(ch).startswith(("P", "Z"))
                   and unicodedata.category(ch) not in ("Cc", "Cf"))


def _normalize_token(word: str, rules: NormalizationRules, labels: frozenset) -> str:
    w = _nfc(word)
    if w == NONSCORED:
        return w
    if rules.case_folding:
        w = _nfc(w.casefold())
    if w in labels:
        return NONSCORED
    if rules.punctuation_strip:
        w = _nfc(_strip_punct(w))
        if w in labels:
            return NONSCORED
    else:
        w = "".join(ch for ch in w if not ch.isspace())
    return w


def normalize_text(words: Sequence[str], rules: NormalizationRules = DEFAULT_RULES) -> list:
    """Fold case, strip punctuation and map auxiliary labels to :data:`NONSCORED`.

    Empty tokens are dropped and diacritics are kept.  The result is a fixed
    point: normalizing it again returns it unchanged.
    """
    labels = set()
    for lab in rules.auxiliary_labels:
        lab = _nfc(lab)
        if rules.case_folding:
            lab = _nfc(lab.casefold())
        labels.add(lab)
        if rules.punctuation_strip:
            stripped = _nfc(_strip_punct(lab))
            if stripped:
                labels.add(stripped)
    labels = frozenset(labels)

    out = []
    for word in words:
        w = _normalize_token(word, rules, labels)
        # a few casefold/NFC interactions need a second round to settle
        for _ in range(4):
            again = _normalize_token(w, rules, labels)
            if again == w:
                break
            w = again
        if w:
            out.append(w)
    return out


def _parse_float(text: str, what: str, line_no: int) -> float:
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"bad {what} {text!r}", line_no) from None


def parse_ctm(source: TextInput) -> CtmFile:
    tokens = []
    for line_no, raw in enumerate(_lines(source), start=1):
        line = raw.strip()
        if not line or line.startswith(";;"):
            continue
        fields = line.split()
        if len(fields) not in (5, 6):
            raise ParseError(f"expected 5 or 6 fields, got {len(fields)}", line_no)
        rec, chan, start, dur, word = fields[:5]
        conf = _parse_float(fields[5], "confidence", line_no) if len(fields) == 6 else None
        try:
            tokens.append(WordToken(rec, chan, _parse_float(start, "start", line_no),
                                    _parse_float(dur, "duration", line_no), _nfc(word), conf))
        except ValidationError as exc:
            raise ValidationError(f"line {line_no}: {exc}") from None
    return CtmFile(tuple(tokens))


def _fmt_time(t: float) -> str:
    return f"{t:.3f}"


def write_ctm(ctm: CtmFile) -> str:
    lines = []
    for t in ctm.tokens:
        fields = [t.recording_id, t.channel, _fmt_time(t.start), _fmt_time(t.duration), t.word]
        if t.confidence is not None:
            fields.append(repr(float(t.confidence)))
        lines.append(" ".join(fields))
    return "".join(line + "\n" for line in lines)


def parse_stm(source: TextInput) -> list:
    segments = []
    for line_no, raw in enumerate(_lines(source), start=1):
        line = raw.strip()
        if not line or line.startswith(";;"):
            continue
        fields = line.split()
        if len(fields) < 5:
            raise ParseError(f"expected at least 5 fields, got {len(fields)}", line_no)
        rec, chan, spk, start, end = fields[:5]
        rest = fields[5:]
        labels = None
        if rest and rest[0].startswith("<") and rest[0].endswith(">"):
            labels = rest[0][1:-1]
            rest = rest[1:]
        try:
            segments.append(StmSegment(rec, chan, spk, _parse_float(start, "start", line_no),
                                       _parse_float(end, "end", line_no), labels,
                                       tuple(_nfc(w) for w in rest)))
        except ValidationError as exc:
            raise ValidationError(f"line {line_no}: {exc}") from None
    return segments


def write_stm(segments: Iterable[StmSegment]) -> str:
    lines = []
    for s in segments:
        fields = [s.recording_id, s.channel, s.speaker, _fmt_time(s.start), _fmt_time(s.end)]
        if s.labels is not None:
            fields.append(f"<{s.labels}>")
        fields.extend(s.text)
        lines.append(" ".join(fields))
    return "".join(line + "\n" for line in lines)


# --------------------------------------------------------------------------
# audio

class UnsupportedFormatError(RtveError):
    """WAVE file with a codec or sample width this reader does not handle."""


WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE


@dataclass(frozen=True, eq=False)
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValidationError("AudioBuffer holds mono audio only; down-mix first")
        if self.sample_rate <= 0:
            raise ValidationError(f"bad sample rate {self.sample_rate}")
        object.__setattr__(self, "samples", np.clip(samples, -1.0, 1.0))

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def read_audio(source: Union[bytes, IO[bytes]]) -> AudioBuffer:
    """Read a RIFF/WAVE file (16/32-bit integer PCM or 32-bit float)."""
    data = source if isinstance(source, (bytes, bytearray)) else source.read()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise UnsupportedFormatError("not a RIFF/WAVE stream")

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id, size = struct.unpack_from("<4sI", data, pos)
        body = data[pos + 8:pos + 8 + size]
        if chunk_id == b"fmt ":
            if len(body) < 16:
                raise OSError("truncated fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", body)
            if fmt[0] == WAVE_FORMAT_EXTENSIBLE and len(body) >= 26:
                sub_tag = struct.unpack_from("<H", body, 24)[0]
                fmt = (sub_tag,) + fmt[1:]
        elif chunk_id == b"data":
            if len(body) < size:
                raise OSError(f"truncated data chunk: {len(body)} of {size} bytes")
            payload = body
            break
        pos += 8 + size + (size & 1)

    if fmt is None:
        raise UnsupportedFormatError("missing fmt chunk")
    if payload is None:
        raise OSError("missing data chunk")
    tag, n_channels, rate, _, block_align, bits = fmt

    if tag == WAVE_FORMAT_PCM and bits == 16:
        samples = np.frombuffer(payload, dtype="<i2").astype(np.float64) / 32768.0
    elif tag == WAVE_FORMAT_PCM and bits == 32:
        samples = np.frombuffer(payload, dtype="<i4").astype(np.float64) / 2147483648.0
    elif tag == WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        samples = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    else:
        raise UnsupportedFormatError(f"unsupported WAVE format tag={tag:#x} bits={bits}")
    if n_channels < 1 or len(samples) % n_channels:
        raise OSError("data chunk is not a whole number of frames")
    if n_channels > 1:
        samples = samples.reshape(-1, n_channels).mean(axis=1)
    return AudioBuffer(samples, int(rate))


def write_audio(samples, sample_rate: int, sink: Optional[IO[bytes]] = None,
                *, float32: bool = False) -> bytes:
    """Serialize audio as 16-bit PCM (default) or 32-bit float WAVE.

    ``samples`` may be 1-D (mono) or 2-D ``(frames, channels)``.
    """
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    n_channels = arr.shape[1]
    if float32:
        payload = arr.astype("<f4").tobytes()
        tag, bits = WAVE_FORMAT_IEEE_FLOAT, 32
    else:
        ints = np.clip(np.round(arr * 32768.0), -32768, 32767).astype("<i2")
        payload = ints.tobytes()
        tag, bits = WAVE_FORMAT_PCM, 16
    block_align = n_channels * bits // 8
    fmt = struct.pack("<HHIIHH", tag, n_channels, sample_rate,
                      sample_rate * block_align, block_align, bits)
    buf = io.BytesIO()
    buf.write(b"RIFF" + struct.pack("<I", 4 + 8 + len(fmt) + 8 + len(payload)) + b"WAVE")
    buf.write(b"fmt " + struct.pack("<I", len(fmt)) + fmt)
    buf.write(b"data" + struct.pack("<I", len(payload)) + payload)
    out = buf.getvalue()
    if sink is not None:
        sink.write(out)
    return out
