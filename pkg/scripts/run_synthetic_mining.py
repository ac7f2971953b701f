"""Mine the planted-signal panel with the offline mock provider.

Writes panel.csv and config.json next to the run directory, so the same run can
be repeated through the CLI:

    dagalpha mine --config OUT/config.json --data OUT/panel.csv --out OUT/run
"""
import argparse
import json
from pathlib import Path

from dagalpha.engine import evaluate
from dagalpha.expr import parse
from dagalpha.metrics import ic_suite
from dagalpha.mining import run_mining
from dagalpha.panel import forward_returns, write_panel
from dagalpha.synthetic import HIDDEN_EXPR, demo_config, planted_panel


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/synthetic")
    ap.add_argument("--iterations", type=int, default=30)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--dates", type=int, default=400)
    ap.add_argument("--assets", type=int, default=40)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    panel = planted_panel(args.dates, args.assets, seed=args.seed)
    cfg = demo_config(panel, iterations=args.iterations, seed=args.seed)
    write_panel(panel, out / "panel.csv")
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2))

    rep = run_mining(cfg, panel, out / "run")
    sl = panel.date_slice(*cfg.splits["train"])
    ret = forward_returns(panel.rows(sl), cfg.horizon)
    seed_ic = {s.expr: ic_suite(evaluate(parse(s.expr), panel)[sl], ret).ic for s in cfg.seeds}
    hidden_ic = ic_suite(evaluate(parse(HIDDEN_EXPR), panel)[sl], ret).ic

    print(f"status {rep.status}, {len(rep.final_pool)} factors in pool, "
          f"{rep.evaluations} candidate evaluations")
    for expr, ic in seed_ic.items():
        print(f"  seed {expr:<36} train IC {ic:.4f}")
    print(f"  hidden {HIDDEN_EXPR:<34} train IC {hidden_ic:.4f}")
    for name, s in rep.splits.items():
        if s:
            print(f"  mega {name:<6} IC {s['ic']:.4f}  ICIR {s['icir']:.3f}")
    best = sorted(rep.final_pool, key=lambda n: -n["quality"])[:5]
    print("top pool factors:")
    for n in best:
        print(f"  {n['quality']:.3f}  {n['expr']}")


if __name__ == "__main__":
    main()
