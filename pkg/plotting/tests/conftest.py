import numpy as np
import pytest


def write_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(format(v, ".17g") if isinstance(v, float) else str(v)
                              for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture
def flux_csv(tmp_path):
    x = np.linspace(-5, 5, 40)
    phi = np.exp(-(x**2))
    return write_csv(tmp_path / "flux_t1.csv", ["x", "phi"],
                     [[float(a), float(b)] for a, b in zip(x, phi)])


@pytest.fixture
def diagnostics_csv(tmp_path):
    header = ["step", "t", "rank", "eta", "reject_bound", "norm", "retries", "tail"]
    rows = []
    ranks = [1, 3, 5, 8, 9, 9, 9]
    for k, rank in enumerate(ranks):
        rows.append([k, 0.1 * k, rank, 1e-3 * (k > 0), 5e-2, 10.0 - 0.1 * k, 0,
                     1e-4 * (k > 0)])
    return write_csv(tmp_path / "diagnostics.csv", header, rows)


@pytest.fixture
def single_row_diagnostics_csv(tmp_path):
    header = ["step", "t", "rank", "eta", "reject_bound", "norm", "retries", "tail"]
    return write_csv(tmp_path / "single.csv", header,
                     [[0, 0.0, 1, 0.0, 0.0, 10.0, 0, 0.0]])
