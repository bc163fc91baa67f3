"""Reading and writing observation tables, chain stores, rasters and summaries."""
import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import scipy

from splinecos.basis import SupportGeometry, SupportKind, Weight
from splinecos.errors import StorageError, ValidationError
from splinecos.model import ModelLayout
from splinecos.predict import PosteriorSamples

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

OBSERVATION_COLUMNS = ["kind", "lo1", "hi1", "lo2", "hi2", "x", "y", "value"]
FLOAT_FORMAT = "%.17g"
NODATA = -9999.0
METADATA_FILE = "metadata.json"


def package_versions() -> Dict[str, str]:
    from splinecos import __version__
    return {"splinecos": __version__, "numpy": np.__version__, "scipy": scipy.__version__}


class StorageService:
    """Service for the on-disk formats shared by every command."""

    def __init__(self, float_format: str = FLOAT_FORMAT):
        self.float_format = float_format

    def _prepare(self, path: PathLike) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise StorageError(f"cannot create directory {path.parent}: {e}") from e
        return path

    # Observation tables
    def write_observations(self, path: PathLike, supports: Sequence[SupportGeometry],
                           values: Sequence[float]):
        """Write supports and values as a delimited table."""
        path = self._prepare(path)
        rows = []
        for s, v in zip(supports, values):
            if s.is_point:
                rows.append(("point", None, None, None, None, s.lo1, s.lo2, float(v)))
            else:
                rows.append(("rect", s.lo1, s.hi1, s.lo2, s.hi2, None, None, float(v)))
        table = pd.DataFrame(rows, columns=OBSERVATION_COLUMNS)
        try:
            table.to_csv(path, index=False, float_format=self.float_format)
        except OSError as e:
            raise StorageError(f"cannot write {path}: {e}") from e
        logger.info("wrote %d observations to %s", len(table), path)

    def read_observations(self, path: PathLike, weight: Weight = Weight.AVERAGE
                          ) -> Tuple[List[SupportGeometry], np.ndarray]:
        """Read a table written by write_observations; rectangles get `weight`."""
        path = Path(path)
        try:
            table = pd.read_csv(path, float_precision="round_trip")
        except FileNotFoundError:
            raise ValidationError(f"observation file not found: {path}") from None
        except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise StorageError(f"cannot read {path}: {e}") from e
        missing = [c for c in OBSERVATION_COLUMNS if c not in table.columns]
        if missing:
            raise ValidationError(f"{path}: missing columns {', '.join(missing)}")
        supports = []
        for i, row in enumerate(table.itertuples(index=False)):
            try:
                kind = SupportKind(str(row.kind).strip().lower())
                if kind is SupportKind.POINT:
                    supports.append(SupportGeometry.point(row.x, row.y))
                else:
                    supports.append(SupportGeometry.rect(row.lo1, row.hi1, row.lo2, row.hi2, weight))
            except ValueError as e:
                raise ValidationError(f"{path}: row {i + 1}: {e}") from e
        return supports, table["value"].to_numpy(dtype=float)

    # Chain stores
    def write_chains(self, directory: PathLike, samples: PosteriorSamples,
                     config: Optional[Dict] = None):
        """One chain_<c>.npy per chain plus a metadata.json sidecar."""
        directory = Path(directory)
        try:
            directory.mkdir(parents=True, exist_ok=True)
            for c, draws in enumerate(samples.chains):
                np.save(directory / f"chain_{c}.npy", np.asfortranarray(draws, dtype=np.float64),
                        allow_pickle=False)
        except OSError as e:
            raise StorageError(f"cannot write chain store {directory}: {e}") from e
        metadata = dict(samples.metadata)
        metadata.update({
            "columns": samples.columns,
            "layout": samples.layout.to_dict(),
            "n_chains": samples.n_chains,
            "draws_per_chain": [len(c) for c in samples.chains],
            "versions": package_versions(),
        })
        if config is not None:
            metadata["config"] = config
        self.write_json(directory / METADATA_FILE, metadata)
        logger.info("wrote %d chains to %s", samples.n_chains, directory)

    def read_chains(self, directory: PathLike) -> PosteriorSamples:
        directory = Path(directory)
        metadata = self.read_json(directory / METADATA_FILE)
        try:
            layout = ModelLayout.from_dict(metadata["layout"])
            columns = metadata["columns"]
            n_chains = int(metadata["n_chains"])
        except (KeyError, TypeError, ValueError) as e:
            raise StorageError(f"{directory}: malformed chain store metadata: {e}") from e
        chains = []
        for c in range(n_chains):
            path = directory / f"chain_{c}.npy"
            try:
                chains.append(np.load(path, allow_pickle=False))
            except (OSError, ValueError) as e:
                raise StorageError(f"cannot read {path}: {e}") from e
        try:
            return PosteriorSamples(columns, chains, layout, metadata)
        except ValidationError as e:
            raise StorageError(f"{directory}: {e}") from e

    # Rasters
    def write_raster(self, path: PathLike, grid: np.ndarray, x0: float, y0: float,
                     dx: float, dy: float):
        """Text grid with an ESRI-style header; rows run north to south."""
        path = self._prepare(path)
        grid = np.atleast_2d(np.asarray(grid, dtype=float))
        header = "\n".join([
            f"ncols {grid.shape[1]}",
            f"nrows {grid.shape[0]}",
            f"xllcorner {x0:.17g}",
            f"yllcorner {y0:.17g}",
            f"dx {dx:.17g}",
            f"dy {dy:.17g}",
            f"NODATA_value {NODATA:.17g}",
        ])
        try:
            np.savetxt(path, np.where(np.isfinite(grid), grid, NODATA), fmt=self.float_format,
                       header=header, comments="")
        except OSError as e:
            raise StorageError(f"cannot write {path}: {e}") from e
        logger.info("wrote %d x %d raster to %s", grid.shape[0], grid.shape[1], path)

    def read_raster(self, path: PathLike) -> Tuple[np.ndarray, Dict[str, float]]:
        path = Path(path)
        try:
            with open(path, "r") as f:
                header = {}
                for _ in range(7):
                    key, value = f.readline().split()
                    header[key] = float(value)
                grid = np.loadtxt(f, ndmin=2)
        except (OSError, ValueError) as e:
            raise StorageError(f"cannot read raster {path}: {e}") from e
        grid[grid == header["NODATA_value"]] = np.nan
        return grid, header

    # Tables and JSON
    def write_table(self, path: PathLike, table: pd.DataFrame, index: bool = True):
        path = self._prepare(path)
        try:
            table.to_csv(path, index=index, float_format=self.float_format)
        except OSError as e:
            raise StorageError(f"cannot write {path}: {e}") from e
        logger.info("wrote table %s", path)

    def read_table(self, path: PathLike, index_col: Optional[int] = 0) -> pd.DataFrame:
        try:
            return pd.read_csv(path, index_col=index_col, float_precision="round_trip")
        except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise StorageError(f"cannot read {path}: {e}") from e

    def write_json(self, path: PathLike, data: Dict):
        path = self._prepare(path)
        try:
            with open(path, "w") as f:
                json.dump(data, f, indent=2, sort_keys=True)
                f.write("\n")
        except (OSError, TypeError) as e:
            raise StorageError(f"cannot write {path}: {e}") from e

    def read_json(self, path: PathLike) -> Dict:
        try:
            with open(path, "r") as f:
                return json.load(f)
        except FileNotFoundError:
            raise StorageError(f"file not found: {path}") from None
        except (OSError, json.JSONDecodeError) as e:
            raise StorageError(f"cannot read {path}: {e}") from e

    def write_array(self, path: PathLike, values: np.ndarray):
        path = self._prepare(path)
        try:
            np.save(path, np.asarray(values, dtype=np.float64), allow_pickle=False)
        except OSError as e:
            raise StorageError(f"cannot write {path}: {e}") from e


# Global instance
storage_service = StorageService()
