"""Mass, excess and first-variation expansions, swept in the scale eps.

Runs every expansion config under demos/configs and prints the residual
against the main terms at each scale, with the fitted log-log slope.

    python3 demos/demo_expansions.py
"""
from pathlib import Path

from qcurrents import cli
from qcurrents import variational as var

CONFIGS = Path(__file__).resolve().parent / "configs"
SWEEPS = ["flat_mass", "curved_mass", "curvilinear_excess", "cylindrical_excess",
          "graph_variation", "outer_variation", "inner_variation"]


def show(name):
    cfg = cli.load_config(str(CONFIGS / f"{name}.json"))
    order = cfg.get("quad_order", var.DEFAULT_ORDER)
    report, _, ok = cli.run_sweep(cfg, order)
    sw = report["sweep"]
    print(f"\n{name} ({cfg['functional']}), checks {'pass' if ok else 'FAIL'}: {report['checks']}")
    print(f"  {'eps':>10} {'oracle':>14} {'residual':>12} {'C':>8}")
    for r in sw["reports"]:
        print(f"  {r['eps']:10.5f} {r['oracle']:14.8f} {r['residual']:12.3e} {r['fitted_C']:8.3f}")
    if sw["slope"]:
        print(f"  slope {sw['slope']['slope']:.3f}, r2 {sw['slope']['r2']:.4f}")


def main():
    for name in SWEEPS:
        show(name)


if __name__ == "__main__":
    main()
