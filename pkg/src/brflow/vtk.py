"""Legacy ASCII VTK export of meshes and solution fields."""

import numpy as np

_VTK_CELL_TYPE = {2: 5, 3: 10}  # triangle, tetrahedron


def write_vtk(path, mesh, point_data=None, cell_data=None, title="brflow"):
    """Write an unstructured-grid legacy VTK file.

    point_data / cell_data: dicts mapping names to arrays of shape (n,) for
    scalars or (n, d) for vectors (padded to 3 components).
    """
    point_data = point_data or {}
    cell_data = cell_data or {}
    nv, nc = mesh.n_vertices, mesh.n_cells
    nloc = mesh.dim + 1
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(f"{title}\n")
        fh.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {nv} double\n")
        pts = np.zeros((nv, 3))
        pts[:, :mesh.dim] = mesh.vertices
        for p in pts:
            fh.write(f"{p[0]:.12g} {p[1]:.12g} {p[2]:.12g}\n")
        fh.write(f"CELLS {nc} {nc * (nloc + 1)}\n")
        for cell in mesh.cells:
            fh.write(str(nloc) + " " + " ".join(str(v) for v in cell) + "\n")
        fh.write(f"CELL_TYPES {nc}\n")
        ctype = _VTK_CELL_TYPE[mesh.dim]
        for _ in range(nc):
            fh.write(f"{ctype}\n")
        if point_data:
            fh.write(f"POINT_DATA {nv}\n")
            for name, arr in point_data.items():
                _write_attr(fh, name, np.asarray(arr, float), nv)
        if cell_data:
            fh.write(f"CELL_DATA {nc}\n")
            for name, arr in cell_data.items():
                _write_attr(fh, name, np.asarray(arr, float), nc)


def _write_attr(fh, name, arr, n):
    if arr.shape[0] != n:
        raise ValueError(f"attribute {name!r} has {arr.shape[0]} entries, expected {n}")
    if arr.ndim == 1:
        fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
        for v in arr:
            fh.write(f"{v:.12g}\n")
    else:
        vec = np.zeros((n, 3))
        vec[:, :arr.shape[1]] = arr
        fh.write(f"VECTORS {name} double\n")
        for v in vec:
            fh.write(f"{v[0]:.12g} {v[1]:.12g} {v[2]:.12g}\n")


def write_solution_vtk(path, mesh, u=None, p=None):
    """Export velocity (vertex vectors) and pressure (cell scalars)."""
    point_data = {}
    cell_data = {}
    if u is not None:
        point_data["velocity"] = u.linear.coeffs
    if p is not None:
        cell_data["pressure"] = p.coeffs
    write_vtk(path, mesh, point_data=point_data, cell_data=cell_data)
