#!/usr/bin/env python3
"""Convert a Planetoid citation dataset (ind.<name>.* files) to a gsr dataset directory.

Usage:
    planetoid_to_gsr.py --raw DIR --name cora --out data/cora

DIR must hold ind.<name>.{x,y,tx,ty,allx,ally,graph,test.index}. The standard
split is kept: the first |y| nodes train (140 on Cora), the next 500 validate,
and the 1000 test.index nodes test. Features are stored raw and row-normalized
at load time.
"""

import argparse
import json
import pickle
import struct
import sys
from pathlib import Path

import numpy as np
import scipy.sparse as sp


def load_pickle(path):
    with open(path, "rb") as f:
        return pickle.load(f, encoding="latin1")


def load_planetoid(raw: Path, name: str):
    parts = {k: load_pickle(raw / f"ind.{name}.{k}") for k in ("x", "y", "tx", "ty", "allx", "ally", "graph")}
    test_index = [int(line) for line in (raw / f"ind.{name}.test.index").read_text().split()]
    test_sorted = np.sort(test_index)

    tx, ty = parts["tx"], parts["ty"]
    if name == "citeseer":
        # Some test nodes are isolated and absent from tx; pad them with zero rows.
        full = range(test_sorted[0], test_sorted[-1] + 1)
        tx_ext = sp.lil_matrix((len(full), tx.shape[1]))
        tx_ext[test_sorted - test_sorted[0], :] = tx
        ty_ext = np.zeros((len(full), ty.shape[1]))
        ty_ext[test_sorted - test_sorted[0], :] = ty
        tx, ty = tx_ext, ty_ext

    features = sp.vstack((parts["allx"], tx)).tolil()
    features[test_index, :] = features[test_sorted, :]
    onehot = np.vstack((parts["ally"], ty))
    onehot[test_index, :] = onehot[test_sorted, :]

    n = features.shape[0]
    edges = set()
    for u, neighbors in parts["graph"].items():
        for v in neighbors:
            if u != v and u < n and v < n:
                edges.add((min(u, v), max(u, v)))

    labels = onehot.argmax(axis=1)
    n_train = parts["y"].shape[0]
    split = (list(range(n_train)), list(range(n_train, n_train + 500)), sorted(int(i) for i in test_sorted))
    return np.asarray(features.todense(), dtype=np.float32), sorted(edges), labels, onehot.shape[1], split


def write_matrix(path: Path, m: np.ndarray):
    rows, cols = m.shape
    with open(path, "wb") as f:
        f.write(b"GSRM" + struct.pack("<IQQI", 1, rows, cols, 1))
        f.write(np.ascontiguousarray(m, dtype="<f4").tobytes())


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--raw", type=Path, required=True, help="directory with the ind.<name>.* files")
    ap.add_argument("--name", required=True, choices=["cora", "citeseer", "pubmed"])
    ap.add_argument("--out", type=Path, required=True)
    args = ap.parse_args()

    features, edges, labels, num_classes, (train, val, test) = load_planetoid(args.raw, args.name)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    write_matrix(out / "features.gsrm", features)
    (out / "edges.tsv").write_text("".join(f"{u}\t{v}\n" for u, v in edges))
    (out / "labels.tsv").write_text("".join(f"{i}\t{int(c)}\n" for i, c in enumerate(labels)))
    (out / "split.txt").write_text("\n".join(" ".join(map(str, s)) for s in (train, val, test)) + "\n")
    manifest = {
        "format_version": 1,
        "name": args.name,
        "num_nodes": int(features.shape[0]),
        "num_classes": int(num_classes),
        "edges": "edges.tsv",
        "features": "features.gsrm",
        "labels": "labels.tsv",
        "split": "split.txt",
        "row_normalize_features": True,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"{args.name}: {features.shape[0]} nodes, {len(edges)} edges, {features.shape[1]} features, "
          f"{num_classes} classes, split {len(train)}/{len(val)}/{len(test)} -> {out}", file=sys.stderr)


if __name__ == "__main__":
    main()
