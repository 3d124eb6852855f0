"""The synthetic heating benchmark end to end.

Part 1 compares forward surrogates under open-loop control of a heat pump
whose output jumps when the compressor cuts in. Part 2 adds a 1 degC bias
to the ambient temperature over the control period and compares open-loop
with closed-loop control. SVG reports land in ``demo_output/``.

    python demos/mpc_benchmark.py          # about two minutes
"""
from pathlib import Path

from ccr_mpc.mpc import (
    BENCHMARK,
    Drift,
    benchmark_config,
    benchmark_forward,
    make_scenario,
    run_batch,
    run_sequential,
    train_forecaster,
)
from ccr_mpc.report import emit_report

OUT = Path("demo_output")


def main():
    sc = make_scenario(seed=0)
    fc = train_forecaster(sc.history)
    print("open loop, 500 steps, 17.5/21 degC setpoint")
    for kind in ("ccr", "polynomial", "knn", "random-forest"):
        traj = run_batch(benchmark_config(sc, benchmark_forward(sc, kind), fc), sc.history, sc.env())
        s = emit_report(traj, OUT, f"batch_{kind}")
        print(f"  {kind:<14} discomfort {s['discomfort']:.4f} degC^2  (root {s['discomfort_root']:.3f} degC)")

    drift = make_scenario(seed=0, drift=Drift(0, BENCHMARK["drift_offset"]))
    cfg = benchmark_config(drift, benchmark_forward(drift, "ccr"), train_forecaster(drift.history))
    print(f"\nambient bias of +{BENCHMARK['drift_offset']} degC during control")
    for mode, run in (("batch", run_batch), ("sequential", run_sequential)):
        s = emit_report(run(cfg, drift.history, drift.env()), OUT, f"drift_{mode}")
        print(f"  {mode:<14} discomfort {s['discomfort']:.4f} degC^2  relearned {s['relearn_count']} times")
    print(f"\nreports written to {OUT.resolve()}")


if __name__ == "__main__":
    main()
