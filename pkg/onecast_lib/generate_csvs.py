# generate_csvs.py
"""
Writes the synthetic corpora used by the acceptance experiments to CSV, one
file per corpus and seed, plus a TOML run file pointing at them.
"""

import logging
from pathlib import Path
from typing import Dict, Iterable, List, Union

from .data_generation import (
    LevelShiftSpec,
    SinusoidRampSpec,
    generate_level_shift,
    generate_pure_sinusoid,
    generate_sinusoid_ramp,
)

logger = logging.getLogger(__name__)

CORPORA = ("sinusoid_ramp", "pure_sinusoid", "level_shift")


def ensure_output_directory(folder: Union[str, Path]) -> Path:
    folder = Path(folder)
    if not folder.exists():
        folder.mkdir(parents=True)
        logger.info("Created directory: %s", folder)
    return folder


def write_corpora(folder: Union[str, Path], seeds: Iterable[int] = (0,), length: int = 4000) -> Dict[str, List[Path]]:
    """Generate every corpus for every seed; returns the written paths per corpus."""
    folder = ensure_output_directory(folder)
    written: Dict[str, List[Path]] = {name: [] for name in CORPORA}
    for seed in seeds:
        path = folder / f"sinusoid_ramp_seed{seed}.csv"
        generate_sinusoid_ramp(SinusoidRampSpec(length=length, seed=seed), csv_path=str(path))
        written["sinusoid_ramp"].append(path)

        path = folder / f"level_shift_seed{seed}.csv"
        generate_level_shift(LevelShiftSpec(length=length, seed=seed), csv_path=str(path))
        written["level_shift"].append(path)

    path = folder / "pure_sinusoid.csv"
    generate_pure_sinusoid(csv_path=str(path))
    written["pure_sinusoid"].append(path)

    run_file = folder / "run.toml"
    first = written["sinusoid_ramp"][0]
    run_file.write_text(
        "[[datasets]]\n"
        f'path = "{first.as_posix()}"\n'
        'domain_id = "synthetic"\n'
        'sampling_period = "1h"\n',
        encoding="utf-8",
    )
    logger.info("Generated %d files in %s", sum(len(v) for v in written.values()) + 1, folder)
    return written
