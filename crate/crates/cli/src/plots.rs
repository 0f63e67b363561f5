//! Matplotlib scripts that read the CSV outputs next to them.

pub const PROFILES: &str = r#"import csv
import sys
from pathlib import Path

import matplotlib.pyplot as plt

here = Path(__file__).resolve().parent


def load(name):
    with open(here / name) as f:
        rows = list(csv.DictReader(f))
    return {k: [float(r[k]) for r in rows] for k in rows[0]}


fig, ax = plt.subplots(figsize=(6, 4))
styles = {"profile_minimizer.csv": "-", "profile_longtime.csv": "--", "profile_final.csv": "-"}
for name, style in styles.items():
    if (here / name).exists():
        p = load(name)
        label = name.removeprefix("profile_").removesuffix(".csv")
        ax.plot(p["x"], p["r"], style, color="tab:red", label=f"r ({label})")
        ax.plot(p["x"], p["b"], style, color="tab:blue", label=f"b ({label})")
ax.set_xlabel("x")
ax.set_ylabel("density")
ax.legend()
fig.tight_layout()
fig.savefig(here / "profiles.png", dpi=150)
if "--show" in sys.argv:
    plt.show()
"#;

pub const SWEEP: &str = r#"import csv
import sys
from pathlib import Path

import matplotlib.pyplot as plt

here = Path(__file__).resolve().parent
with open(here / "sweep.csv") as f:
    rows = [r for r in csv.DictReader(f) if not r["failure"]]
axis = rows[0]["axis"] if rows else "value"
x = [float(r["value"]) for r in rows]
fig, (ax_abs, ax_rel) = plt.subplots(1, 2, figsize=(10, 4))
for ax, kind in ((ax_abs, "abs"), (ax_rel, "rel")):
    ax.plot(x, [float(r[f"{kind}_err_r"]) for r in rows], "o-", color="tab:red", label="r")
    ax.plot(x, [float(r[f"{kind}_err_b"]) for r in rows], "s--", color="tab:blue", label="b")
    if axis == "epsilon":
        ax.set_xscale("log")
        ax.set_yscale("log")
    ax.set_xlabel(axis)
    ax.set_ylabel(f"{kind}. L2 error")
    ax.legend()
fig.tight_layout()
fig.savefig(here / "sweep.png", dpi=150)
if "--show" in sys.argv:
    plt.show()
"#;

pub const TRAJECTORY: &str = r#"import csv
import sys
from pathlib import Path

import matplotlib.pyplot as plt

here = Path(__file__).resolve().parent
with open(here / "trajectory.csv") as f:
    rows = list(csv.DictReader(f))
t = [float(r["t"]) for r in rows]
fig, (ax_e, ax_d) = plt.subplots(1, 2, figsize=(10, 4))
ax_e.plot(t, [float(r["E"]) for r in rows])
ax_e.set_xlabel("t")
ax_e.set_ylabel("entropy")
ax_d.semilogy(t[1:], [max(float(r["dissipation"]), 1e-300) for r in rows[1:]])
ax_d.set_xlabel("t")
ax_d.set_ylabel("dissipation")
fig.tight_layout()
fig.savefig(here / "trajectory.png", dpi=150)
if "--show" in sys.argv:
    plt.show()
"#;

pub const SPECTRUM: &str = r#"import csv
import sys
from pathlib import Path

import matplotlib.pyplot as plt

here = Path(__file__).resolve().parent
with open(here / "spectrum.csv") as f:
    rows = list(csv.DictReader(f))
fig, ax = plt.subplots(figsize=(6, 4))
ax.plot([int(r["index"]) for r in rows], [float(r["eigenvalue"]) for r in rows], "o")
ax.axhline(0.0, color="k", lw=0.5)
ax.set_xlabel("index")
ax.set_ylabel("eigenvalue")
fig.tight_layout()
fig.savefig(here / "spectrum.png", dpi=150)
if "--show" in sys.argv:
    plt.show()
"#;
