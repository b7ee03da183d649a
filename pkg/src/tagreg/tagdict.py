"""Square-tag payload dictionary: codes, rotations, distances, file I/O.

A tag is a dark border one cell wide around a ``grid_n x grid_n`` payload.
Payload bit ``k = row * grid_n + col`` maps to the cell at column ``col``
along the marker x axis and row ``row`` along the marker y axis; bit 1 is a
bright cell.  ``rotate_pattern`` is the payload permutation induced by
shifting the corner order by one, so decoding can try all four orientations
of a sampled pattern.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DictionaryError, FormatError


def rotate_pattern(code: int, n: int) -> int:
    """Payload bits as seen when the corner order is cyclically shifted by one.

    new[i][j] = old[j][n - 1 - i]
    """
    out = 0
    for i in range(n):
        for j in range(n):
            src = j * n + (n - 1 - i)
            if (code >> src) & 1:
                out |= 1 << (i * n + j)
    return out


def pattern_rotations(code: int, n: int) -> tuple[int, int, int, int]:
    r1 = rotate_pattern(code, n)
    r2 = rotate_pattern(r1, n)
    r3 = rotate_pattern(r2, n)
    return (code, r1, r2, r3)


def rotational_distance(a: int, b: int, n: int) -> int:
    """Minimum Hamming distance between ``a`` and any rotation of ``b``."""
    return min(bin(a ^ rb).count("1") for rb in pattern_rotations(b, n))


def self_rotation_distance(code: int, n: int) -> int:
    """Minimum Hamming distance between a code and its own proper rotations."""
    rots = pattern_rotations(code, n)
    return min(bin(code ^ rb).count("1") for rb in rots[1:])


def payload_grid(code: int, n: int) -> np.ndarray:
    """(n, n) uint8 grid of payload bits; grid[row, col] = bit row*n+col."""
    g = np.zeros((n, n), dtype=np.uint8)
    for i in range(n):
        for j in range(n):
            g[i, j] = (code >> (i * n + j)) & 1
    return g


def cells_from_code(code: int, n: int) -> np.ndarray:
    """Full (n+2, n+2) cell grid with the dark border ring included."""
    cells = np.zeros((n + 2, n + 2), dtype=np.uint8)
    cells[1 : n + 1, 1 : n + 1] = payload_grid(code, n)
    return cells


@dataclass(frozen=True)
class TagDictionary:
    """Decodable code family with a Hamming tolerance."""

    grid_n: int
    codes: tuple[tuple[int, int], ...]  # (id, payload bits)
    max_hamming: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        ids = [tag_id for tag_id, _ in self.codes]
        if len(set(ids)) != len(ids):
            raise DictionaryError("duplicate tag ids")
        required = 2 * self.max_hamming + 2
        for i, (_, a) in enumerate(self.codes):
            for _, b in list(self.codes)[i + 1 :]:
                d = rotational_distance(a, b, self.grid_n)
                if d < required:
                    raise DictionaryError(
                        f"rotational distance {d} < {required} between codes"
                    )

    def decode(self, pattern: int) -> tuple[int, int] | None:
        """Best (id, rotation) whose code is within max_hamming of the pattern.

        The pattern's four rotations are tried; rotation r means the sampled
        corner order must be cyclically shifted by r to read the tag upright.
        """
        best = None
        best_d = self.max_hamming + 1
        for r, rotated in enumerate(pattern_rotations(pattern, self.grid_n)):
            for tag_id, code in self.codes:
                d = bin(rotated ^ code).count("1")
                if d < best_d or (d == best_d and best is not None and tag_id < best[0]):
                    best_d = d
                    best = (tag_id, r)
        return best if best_d <= self.max_hamming else None


def build_default16(grid_n: int = 4, max_hamming: int = 1) -> TagDictionary:
    """Deterministic greedy scan over 16-bit codes, ascending.

    A candidate is accepted when every rotation stays at least
    ``2*max_hamming + 2`` bits away from all accepted codes and from the
    candidate's own other rotations (rotationally symmetric codes such as 0
    would make the corner order ambiguous).
    """
    required = 2 * max_hamming + 2
    accepted: list[tuple[int, int]] = []
    code = 0
    while len(accepted) < 16 and code < (1 << (grid_n * grid_n)):
        if self_rotation_distance(code, grid_n) >= required and all(
            rotational_distance(existing, code, grid_n) >= required
            for _, existing in accepted
        ):
            accepted.append((len(accepted), code))
        code += 1
    if len(accepted) < 16:
        raise DictionaryError("could not build 16 codes at the required distance")
    return TagDictionary(grid_n=grid_n, codes=tuple(accepted), max_hamming=max_hamming)


_DEFAULT16: TagDictionary | None = None


def default16() -> TagDictionary:
    global _DEFAULT16
    if _DEFAULT16 is None:
        _DEFAULT16 = build_default16()
    return _DEFAULT16


def save_dictionary(d: TagDictionary, path) -> None:
    """One line per code: ``id hex_bits``."""
    lines = [f"{tag_id} 0x{code:04x}" for tag_id, code in d.codes]
    Path(path).write_text("\n".join(lines) + "\n")


def load_dictionary(path, grid_n: int = 4, max_hamming: int = 1) -> TagDictionary:
    codes = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        tokens = stripped.split()
        if len(tokens) != 2:
            raise FormatError(f"{path}:{lineno}: expected 'id hex_bits'")
        try:
            codes.append((int(tokens[0]), int(tokens[1], 16)))
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from exc
    return TagDictionary(grid_n=grid_n, codes=tuple(codes), max_hamming=max_hamming)


def resolve_dictionary(spec: str) -> TagDictionary:
    """Accepts the literal ``default16`` or a dictionary file path."""
    if spec == "default16":
        return default16()
    return load_dictionary(spec)
