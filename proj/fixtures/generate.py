"""Regenerates the CLI fixtures. Seeded, so the outputs are stable."""
import json
import pathlib

import numpy as np

here = pathlib.Path(__file__).parent
rng = np.random.default_rng(20240611)

# Root Z -> four group latents -> three binary words each.
n, groups, per = 600, 4, 3
z = rng.random(n) < 0.5
rows = []
for g in range(groups):
    y = np.where(rng.random(n) < 0.8, z, ~z)
    for _ in range(per):
        rows.append(np.where(rng.random(n) < 0.9, y, ~y))
x = np.stack(rows, axis=1).astype(int)
names = [f"w{j}" for j in range(groups * per)]
with open(here / "planted.csv", "w") as f:
    f.write(",".join(names + ["label"]) + "\n")
    for i in range(n):
        f.write(",".join(str(v) for v in x[i]) + f",{int(z[i])}\n")

# Words of a group share a direction.
dim = 8
centers = rng.normal(size=(groups, dim))
with open(here / "embeddings.txt", "w") as f:
    for j, w in enumerate(names):
        v = centers[j // per] + 0.1 * rng.normal(size=dim)
        f.write(w + " " + " ".join(f"{c:.6f}" for c in v) + "\n")

config = {
    "data.path": "planted.csv",
    "data.format": "dense-csv",
    "skeleton.top_threshold": 2,
    "expansion.fan_in_fraction": 0.5,
    "net.top_width": 8,
    "net.skip_width": 4,
    "train.epochs": 3,
    "train.batch_size": 32,
    "interpret.embeddings": "embeddings.txt",
    "interpret.k": 3,
}
(here / "config.json").write_text(json.dumps(config, indent=1) + "\n")
