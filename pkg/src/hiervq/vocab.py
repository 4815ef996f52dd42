"""Token strings, modality framing, embedding-table export, and ID streams.

Flat code ``h`` is spelled ``<IMG_h>``.  Image segments are wrapped in
delimiter pairs: ``<|im_start|>``/``<|im_end|>`` for understanding inputs,
``<start_of_image>``/``<end_of_image>`` for generation outputs.

When a frame is lowered onto a text vocabulary of size V, special tokens
occupy a fixed contiguous block and image codes follow::

    V + 0  <|im_start|>       V + 2  <start_of_image>
    V + 1  <|im_end|>         V + 3  <end_of_image>
    V + 4 + h                 image code h

Binary ID streams ("SGID") are ``magic | u32 count | count * u32``, all
little-endian.
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .core import HierarchicalCodebook, TokenGrid
from .errors import ConfigError, FormatError, FrameError, ParseError, RangeError

__all__ = [
    "Delimiter",
    "VocabFrame",
    "NUM_SPECIAL_TOKENS",
    "token_string",
    "parse_token",
    "frame_image",
    "parse_frame",
    "frame_to_text",
    "parse_frame_text",
    "export_embedding_table",
    "assemble_stream",
    "invert_stream",
    "write_id_stream",
    "read_id_stream",
]

STREAM_MAGIC = b"SGID"


class Delimiter(Enum):
    IM_START = "<|im_start|>"
    IM_END = "<|im_end|>"
    START_IMG = "<start_of_image>"
    END_IMG = "<end_of_image>"


_OPENERS = {Delimiter.IM_START: Delimiter.IM_END, Delimiter.START_IMG: Delimiter.END_IMG}
_CLOSERS = set(_OPENERS.values())
_SPECIAL_ORDER = [
    Delimiter.IM_START,
    Delimiter.IM_END,
    Delimiter.START_IMG,
    Delimiter.END_IMG,
]
NUM_SPECIAL_TOKENS = len(_SPECIAL_ORDER)
_DELIM_OFFSET = {d: i for i, d in enumerate(_SPECIAL_ORDER)}

_TOKEN_RE = re.compile(r"^<IMG_(0|[1-9][0-9]*)>$")
_RESERVED_RE = re.compile(
    "|".join(re.escape(d.value) for d in _SPECIAL_ORDER) + r"|<IMG_[0-9]+>"
)


def token_string(h: int, vocab_size: int | None = None) -> str:
    """Exact ``<IMG_h>`` spelling of a flat code index."""
    if h < 0:
        raise RangeError(f"flat index must be >= 0, got {h}")
    if vocab_size is not None and h >= vocab_size:
        raise RangeError(f"flat index {h} outside [0, {vocab_size})")
    return f"<IMG_{h}>"


def parse_token(s: str, vocab_size: int | None = None) -> int:
    """Inverse of :func:`token_string`; rejects padding and malformed text."""
    match = _TOKEN_RE.match(s)
    if match is None:
        raise ParseError(f"not an image token: {s!r}")
    h = int(match.group(1))
    if vocab_size is not None and h >= vocab_size:
        raise RangeError(f"flat index {h} outside [0, {vocab_size})")
    return h


@dataclass
class VocabFrame:
    """An ordered sequence of token atoms.

    Atoms are text chunks (``str``), image codes (``int``), or
    :class:`Delimiter` members.  Image codes must lie strictly inside one
    balanced, non-nested delimiter pair; text chunks may not contain
    reserved token spellings.
    """

    tokens: list

    def __post_init__(self) -> None:
        open_pair: Delimiter | None = None
        for atom in self.tokens:
            if isinstance(atom, Delimiter):
                if atom in _OPENERS:
                    if open_pair is not None:
                        raise FrameError(f"nested delimiter {atom.value}")
                    open_pair = atom
                elif atom in _CLOSERS:
                    if open_pair is None or _OPENERS[open_pair] is not atom:
                        raise FrameError(f"unmatched delimiter {atom.value}")
                    open_pair = None
            elif isinstance(atom, (int, np.integer)):
                if open_pair is None:
                    raise FrameError(f"image code {int(atom)} outside a delimiter pair")
                if atom < 0:
                    raise FrameError(f"negative image code {int(atom)}")
            elif isinstance(atom, str):
                if _RESERVED_RE.search(atom):
                    raise FrameError(f"text chunk contains reserved token syntax: {atom!r}")
            else:
                raise FrameError(f"unsupported atom type {type(atom).__name__}")
        if open_pair is not None:
            raise FrameError(f"unclosed delimiter {open_pair.value}")

    def image_codes(self) -> list[int]:
        return [int(a) for a in self.tokens if isinstance(a, (int, np.integer))]


def frame_image(tokens: TokenGrid, mode: str) -> VocabFrame:
    """Wrap a token grid's flat indices (row-major) in modality delimiters."""
    if mode == "understanding":
        opener, closer = Delimiter.IM_START, Delimiter.IM_END
    elif mode == "generation":
        opener, closer = Delimiter.START_IMG, Delimiter.END_IMG
    else:
        raise FrameError(f"unknown mode {mode!r}; use 'understanding' or 'generation'")
    flat = [int(h) for h in tokens.flat_idx.ravel()]
    return VocabFrame([opener, *flat, closer])


def parse_frame(frame: VocabFrame, height: int, width: int, m: int) -> TokenGrid:
    """Recover the token grid from a frame holding exactly one image segment."""
    pairs = sum(1 for a in frame.tokens if isinstance(a, Delimiter) and a in _OPENERS)
    if pairs != 1:
        raise FrameError(f"expected exactly one image segment, found {pairs}")
    codes = frame.image_codes()
    if len(codes) != height * width:
        raise FrameError(
            f"frame holds {len(codes)} image codes, expected {height}x{width}="
            f"{height * width}"
        )
    flat = np.asarray(codes, dtype=np.int64).reshape(height, width)
    return TokenGrid.from_flat(flat, m)


def frame_to_text(frame: VocabFrame) -> str:
    """UTF-8 spelling of a frame, image codes as ``<IMG_h>``."""
    parts = []
    for atom in frame.tokens:
        if isinstance(atom, Delimiter):
            parts.append(atom.value)
        elif isinstance(atom, (int, np.integer)):
            parts.append(token_string(int(atom)))
        else:
            parts.append(atom)
    return "".join(parts)


def parse_frame_text(text: str) -> VocabFrame:
    """Inverse of :func:`frame_to_text`."""
    atoms: list = []
    pos = 0
    for match in _RESERVED_RE.finditer(text):
        if match.start() > pos:
            atoms.append(text[pos : match.start()])
        literal = match.group(0)
        if literal.startswith("<IMG_"):
            atoms.append(parse_token(literal))
        else:
            atoms.append(Delimiter(literal))
        pos = match.end()
    if pos < len(text):
        atoms.append(text[pos:])
    return VocabFrame(atoms)


def export_embedding_table(hier: HierarchicalCodebook) -> np.ndarray:
    """Flat (k*m) x (d_sem + d_pix) table: row h concatenates semantic code
    h // m with row h % m of its sub-codebook."""
    sem = np.repeat(hier.semantic.vectors, hier.m, axis=0)
    pix = hier.sub_vectors().reshape(hier.vocab_size, hier.dim_pix)
    return np.concatenate([sem, pix], axis=1)


def _delimiter_id(d: Delimiter, text_vocab_size: int) -> int:
    return text_vocab_size + _DELIM_OFFSET[d]


def _image_id(h: int, text_vocab_size: int) -> int:
    return text_vocab_size + NUM_SPECIAL_TOKENS + h


def assemble_stream(
    text_ids,
    frames: list[VocabFrame],
    text_vocab_size: int,
    *,
    image_vocab_size: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Lower text IDs and image frames into one unified ID sequence.

    Returns ``(ids, image_mask)`` where the mask marks positions holding
    image-code IDs (delimiters and text are unmasked).  Text IDs must lie in
    ``[0, text_vocab_size)``; frames must be fully tokenized (no text
    chunks).  The mapping is affine and invertible via
    :func:`invert_stream`.
    """
    if text_vocab_size < 0:
        raise ConfigError(f"text vocabulary size must be >= 0, got {text_vocab_size}")
    text = [int(t) for t in text_ids]
    for t in text:
        if not (0 <= t < text_vocab_size):
            raise ConfigError(
                f"text ID {t} outside [0, {text_vocab_size}); ranges would overlap"
            )
    ids: list[int] = list(text)
    mask: list[bool] = [False] * len(text)
    for frame in frames:
        for atom in frame.tokens:
            if isinstance(atom, Delimiter):
                ids.append(_delimiter_id(atom, text_vocab_size))
                mask.append(False)
            elif isinstance(atom, (int, np.integer)):
                h = int(atom)
                if image_vocab_size is not None and h >= image_vocab_size:
                    raise RangeError(f"flat index {h} outside [0, {image_vocab_size})")
                ids.append(_image_id(h, text_vocab_size))
                mask.append(True)
            else:
                raise FrameError(
                    "frames must be fully tokenized before assembly; found text chunk"
                )
    return np.asarray(ids, dtype=np.int64), np.asarray(mask, dtype=np.bool_)


def invert_stream(ids, text_vocab_size: int) -> tuple[list[int], list[VocabFrame]]:
    """Recover text IDs and frames from a unified ID sequence."""
    if text_vocab_size < 0:
        raise ConfigError(f"text vocabulary size must be >= 0, got {text_vocab_size}")
    id_to_delim = {_delimiter_id(d, text_vocab_size): d for d in _SPECIAL_ORDER}
    text: list[int] = []
    frames: list[VocabFrame] = []
    current: list | None = None
    for raw in np.asarray(ids, dtype=np.int64).ravel():
        i = int(raw)
        if i < 0:
            raise FrameError(f"negative ID {i} in stream")
        if i < text_vocab_size:
            if current is not None:
                raise FrameError(f"text ID {i} inside an image segment")
            text.append(i)
        elif i in id_to_delim:
            d = id_to_delim[i]
            if d in _OPENERS:
                if current is not None:
                    raise FrameError(f"nested delimiter {d.value}")
                current = [d]
            else:
                if current is None or _OPENERS[current[0]] is not d:
                    raise FrameError(f"unmatched delimiter {d.value}")
                current.append(d)
                frames.append(VocabFrame(current))
                current = None
        else:
            if current is None:
                raise FrameError(f"image ID {i} outside a delimiter pair")
            current.append(i - text_vocab_size - NUM_SPECIAL_TOKENS)
    if current is not None:
        raise FrameError("stream ends inside an image segment")
    return text, frames


def write_id_stream(path, ids) -> None:
    """Write IDs as an SGID file (u32 little-endian with a count prefix)."""
    arr = np.asarray(ids, dtype=np.int64).ravel()
    if arr.size and (arr.min() < 0 or arr.max() > 0xFFFFFFFF):
        raise RangeError("stream IDs must fit in an unsigned 32-bit integer")
    payload = arr.astype("<u4").tobytes()
    Path(path).write_bytes(STREAM_MAGIC + struct.pack("<I", arr.size) + payload)


def read_id_stream(path) -> np.ndarray:
    """Read an SGID file back into an int64 ID array."""
    buf = Path(path).read_bytes()
    if buf[:4] != STREAM_MAGIC:
        raise FormatError(f"bad magic: expected {STREAM_MAGIC!r}, got {buf[:4]!r}")
    if len(buf) < 8:
        raise ParseError("truncated ID stream: missing count")
    (count,) = struct.unpack("<I", buf[4:8])
    expected = 8 + 4 * count
    if len(buf) < expected:
        raise ParseError(
            f"truncated ID stream: needs {expected} bytes for {count} IDs, got {len(buf)}"
        )
    if len(buf) > expected:
        raise ParseError(f"inconsistent ID stream: {len(buf) - expected} trailing bytes")
    return np.frombuffer(buf, dtype="<u4", count=count, offset=8).astype(np.int64)
