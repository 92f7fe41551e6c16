"""Legacy-ASCII VTK output of leaf-cell fields, plus a minimal reader.

Each leaf element becomes an independent VTK_QUAD with its own four
corner points; duplicating shared corners keeps hanging-node meshes
trivially valid for any viewer.  The reader handles exactly the subset
the writer emits and exists for round-trip checks.
"""

import numpy as np

_QUAD = 9  # VTK cell type id


def write_vtk(path, points, quads, point_data=None, cell_data=None,
              title="twoscale fields"):
    """Write an unstructured grid of quads.

    points: (np, 2|3); quads: (nc, 4) point indices; point_data maps
    name -> (np,) or (np, 3); cell_data maps name -> (nc,).
    """
    points = np.asarray(points, dtype=float)
    if points.shape[1] == 2:
        points = np.column_stack([points, np.zeros(len(points))])
    quads = np.asarray(quads, dtype=int)
    lines = ["# vtk DataFile Version 3.0", title, "ASCII",
             "DATASET UNSTRUCTURED_GRID",
             f"POINTS {len(points)} double"]
    for p in points:
        lines.append("%.12g %.12g %.12g" % tuple(p))
    lines.append(f"CELLS {len(quads)} {5 * len(quads)}")
    for q in quads:
        lines.append("4 %d %d %d %d" % tuple(q))
    lines.append(f"CELL_TYPES {len(quads)}")
    lines.extend([str(_QUAD)] * len(quads))

    def emit_block(header, data):
        lines.append(header)
        for name, arr in data.items():
            arr = np.asarray(arr, dtype=float)
            if arr.ndim == 2:
                if arr.shape[1] == 2:
                    arr = np.column_stack([arr, np.zeros(len(arr))])
                lines.append(f"VECTORS {name} double")
                for row in arr:
                    lines.append("%.12g %.12g %.12g" % tuple(row))
            else:
                lines.append(f"SCALARS {name} double 1")
                lines.append("LOOKUP_TABLE default")
                for v in arr:
                    lines.append("%.12g" % v)

    if point_data:
        emit_block(f"POINT_DATA {len(points)}", point_data)
    if cell_data:
        emit_block(f"CELL_DATA {len(quads)}", cell_data)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_vtk(path):
    """Parse a file written by write_vtk.

    Returns dict with points (np, 3), quads (nc, 4), point_data,
    cell_data (name -> array).
    """
    with open(path, encoding="utf-8") as fh:
        tokens = fh.read().split("\n")
    out = {"points": None, "quads": None, "point_data": {}, "cell_data": {}}
    i = 0
    section = None
    while i < len(tokens):
        line = tokens[i].strip()
        parts = line.split()
        if not parts:
            i += 1
            continue
        word = parts[0]
        if word == "POINTS":
            n = int(parts[1])
            vals = [list(map(float, tokens[i + 1 + k].split()))
                    for k in range(n)]
            out["points"] = np.array(vals)
            i += 1 + n
        elif word == "CELLS":
            n = int(parts[1])
            quads = []
            for k in range(n):
                row = list(map(int, tokens[i + 1 + k].split()))
                if row[0] != 4:
                    raise ValueError("only quad cells supported")
                quads.append(row[1:])
            out["quads"] = np.array(quads)
            i += 1 + n
        elif word == "CELL_TYPES":
            n = int(parts[1])
            for k in range(n):
                if int(tokens[i + 1 + k]) != _QUAD:
                    raise ValueError("unexpected cell type")
            i += 1 + n
        elif word == "POINT_DATA":
            section = ("point_data", int(parts[1]))
            i += 1
        elif word == "CELL_DATA":
            section = ("cell_data", int(parts[1]))
            i += 1
        elif word == "SCALARS":
            name = parts[1]
            target, n = section
            vals = [float(tokens[i + 2 + k]) for k in range(n)]
            out[target][name] = np.array(vals)
            i += 2 + n
        elif word == "VECTORS":
            name = parts[1]
            target, n = section
            vals = [list(map(float, tokens[i + 1 + k].split()))
                    for k in range(n)]
            out[target][name] = np.array(vals)
            i += 1 + n
        else:
            i += 1
    if out["points"] is None or out["quads"] is None:
        raise ValueError("missing POINTS or CELLS section")
    return out


def leaf_quads(problem):
    """Per-leaf corner points and connectivity for write_vtk.

    Returns (points (4 nE, 2), quads (nE, 4), corner node index array
    (nE, 4)) with corners ordered counterclockwise from the lower left.
    """
    corners = problem.element_nodes[:, [0, 2, 8, 6]]
    points = problem.node_coords[corners.ravel()]
    quads = np.arange(corners.size).reshape(-1, 4)
    return points, quads, corners
