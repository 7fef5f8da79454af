"""Regenerate data/synthetic_observations.csv and data/synthetic_grid.csv.

The table mimics the application schema (prevalence counts plus four
environmental covariates) with a partial-sum latent surface over altitude
and temperature. Deterministic for a given seed.
"""
import sys
from pathlib import Path

import numpy as np

from nsgeo.io import write_table
from nsgeo.kernels import CovarianceSpec, MaternKernel, PointSet, covariance_matrix
from nsgeo.likelihood import cholesky_jittered
from nsgeo.model import DataTable

N_OBS, GRID_SIDE = 150, 12


def covariates(lon, lat, rng):
    altitude = 200 + 120 * (lon - 30) + 60 * np.sin(lat) + rng.normal(0, 40, lon.size)
    temperature = 28 - 0.006 * altitude + 0.3 * (lat + 20) + rng.normal(0, 0.5, lon.size)
    humidity = 60 + 2.0 * (lon - 35) + rng.normal(0, 3, lon.size)
    distance = np.abs(rng.normal(10, 8, lon.size))
    return {"altitude": altitude, "temperature": temperature,
            "humidity": humidity, "distance_water": distance}


def main(out_dir="data", seed=447):
    rng = np.random.default_rng(seed)
    lon_o, lat_o = rng.uniform(31, 40, N_OBS), rng.uniform(-26, -11, N_OBS)
    g = np.linspace(0, 1, GRID_SIDE)
    lon_g = np.repeat(31 + 9 * g, GRID_SIDE)
    lat_g = np.tile(-26 + 15 * g, GRID_SIDE)
    lon = np.concatenate([lon_o, lon_g])
    lat = np.concatenate([lat_o, lat_g])
    cov = covariates(lon, lat, rng)

    z_alt = (cov["altitude"] - cov["altitude"].mean()) / cov["altitude"].std(ddof=1)
    z_tmp = (cov["temperature"] - cov["temperature"].mean()) / cov["temperature"].std(ddof=1)
    spec = CovarianceSpec("partial_sum", MaternKernel(3.0, 1.5),
                          (("altitude", MaternKernel(2.0, 2.5)),
                           ("temperature", MaternKernel(2.0, 1.5))), 0.35)
    pts = PointSet(np.column_stack([lon, lat]), np.column_stack([z_alt, z_tmp]),
                   ("altitude", "temperature"))
    L, _ = cholesky_jittered(covariance_matrix(pts, spec, 0.0))
    s = L @ rng.standard_normal(lon.size)
    eta = (-1.0 + 0.0015 * (cov["altitude"] - 700) + 0.25 * (cov["temperature"] - 24)
           + 0.05 * (cov["humidity"] - 60) + 0.01 * cov["distance_water"] + s
           + rng.normal(0, np.sqrt(0.3), lon.size))
    examined = rng.integers(20, 120, lon.size)
    positive = rng.binomial(examined, 1 / (1 + np.exp(-eta)))

    out = Path(out_dir)
    obs = slice(0, N_OBS)
    cols = {k: v[obs] for k, v in cov.items()}
    cols["positive"] = positive[obs].astype(float)
    cols["examined"] = examined[obs].astype(float)
    write_table(DataTable(np.column_stack([lon_o, lat_o]), cols), out / "synthetic_observations.csv")
    grid = slice(N_OBS, None)
    write_table(DataTable(np.column_stack([lon[grid], lat[grid]]), {k: v[grid] for k, v in cov.items()}),
                out / "synthetic_grid.csv")


if __name__ == "__main__":
    main(*sys.argv[1:])
