"""
The command line, end to end
============================

The same pipeline through the ``workgraph`` command: generate a toy task,
cache working graphs, train, evaluate and export one trace. Each step
writes a manifest.json with every resolved option.
"""

import tempfile
from pathlib import Path

from workgraph.cli import main

root = Path(tempfile.mkdtemp())
steps = [
    ["gen", "--task", "negation", "--count", "40", "--seed", "7", "--out", root / "data"],
    ["preprocess", "--kg", root / "data/kg.tsv", "--dataset", root / "data/dataset.jsonl", "--out", root / "cache"],
    ["train", "--cache", root / "cache", "--D", "16", "--L", "2", "--epochs", "5", "--lr-gnn", "3e-3",
     "--lr-encoder", "3e-3", "--out", root / "model"],
    ["eval", "--cache", root / "cache", "--model", root / "model", "--hit", "1,3", "--out", root / "eval"],
    ["explain", "--cache", root / "cache", "--model", root / "model", "--example", "neg-0-1", "--out", root / "dot"],
]
for argv in steps:
    argv = [str(a) for a in argv]
    print("$ workgraph", " ".join(argv))
    code = main(argv)
    assert code == 0, code

print(sorted(p.name for p in (root / "dot").iterdir()))
