"""On-disk datasets and CSV manifests.

A dataset directory holds ``clean/NAME.png``, ``depth/NAME.pfm`` (or a 16-bit
``depth/NAME.png``) and ``hazy/NAME.png`` sharing a stem, plus ``manifest.csv``
written by the command that produced it.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Sequence

from .haze_aug import SyntheticPair
from .imaging import ImageIOError, load_depth, load_image, save_image, save_pfm

MANIFEST = "manifest.csv"


class DataError(RuntimeError):
    """Missing, unpaired or unreadable data (CLI exit code 3)."""


def _stems(folder: Path, suffixes: tuple[str, ...]) -> dict[str, Path]:
    if not folder.is_dir():
        raise DataError(f"missing directory {folder}")
    found: dict[str, Path] = {}
    for p in sorted(folder.iterdir()):
        if p.suffix.lower() in suffixes and p.stem not in found:
            found[p.stem] = p
    return found


def pair_files(clean_dir: str | Path, depth_dir: str | Path) -> list[tuple[str, Path, Path]]:
    """Match clean PNGs with depth maps by filename stem; any orphan is an error."""
    clean = _stems(Path(clean_dir), (".png",))
    depth = _stems(Path(depth_dir), (".pfm", ".png"))
    orphans = sorted(set(clean) ^ set(depth))
    if orphans:
        raise DataError(f"unpaired files: {orphans}")
    if not clean:
        raise DataError(f"no images found in {clean_dir}")
    return [(s, clean[s], depth[s]) for s in sorted(clean)]


def load_dataset(root: str | Path, require_manifest: bool = False) -> list[SyntheticPair]:
    root = Path(root)
    if require_manifest and not (root / MANIFEST).is_file():
        raise DataError(f"dataset manifest {root / MANIFEST} not found")
    hazy = _stems(root / "hazy", (".png",))
    pairs = []
    try:
        for stem, cpath, dpath in pair_files(root / "clean", root / "depth"):
            if stem not in hazy:
                raise DataError(f"no hazy image for {stem}")
            pairs.append(SyntheticPair(load_image(hazy[stem]), load_image(cpath), load_depth(dpath), stem))
    except (ImageIOError, OSError, ValueError) as exc:
        raise DataError(str(exc)) from exc
    return pairs


def write_dataset(root: str | Path, pairs: Sequence[SyntheticPair]) -> None:
    root = Path(root)
    for sub in ("clean", "depth", "hazy"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    for p in pairs:
        save_image(p.clean, root / "clean" / f"{p.name}.png")
        save_pfm(p.depth, root / "depth" / f"{p.name}.pfm")
        save_image(p.hazy, root / "hazy" / f"{p.name}.png")


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)  # round-trips exactly through float()
    return str(v)


def write_manifest(path: str | Path, columns: Sequence[str], rows: Iterable[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(row.get(c)) for c in columns])


def read_manifest(path: str | Path) -> list[dict]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest {path} not found")
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
