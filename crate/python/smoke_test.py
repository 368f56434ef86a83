"""Smoke test for the qualia extension module.

Build and install first, e.g. `pip install ./crates/python` or
`maturin develop -m crates/python/Cargo.toml`, then run `python python/smoke_test.py`.
"""

import math
import tempfile
from pathlib import Path

import qualia


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol * max(1.0, abs(b))


def main():
    assert qualia.optimal_return("gridworld") == -8.0
    assert qualia.optimal_return("chain") == 10.0

    trace = qualia.simulate("gridworld", episodes=5, seed=7, baseline=-1.0)
    assert len(trace) == len(trace.states) == len(trace.rewards)
    assert len(trace.episodes) == 5
    for i, (start, end) in enumerate(trace.episodes):
        assert trace.states[start] == 0
        assert trace.states[end] is None and trace.actions[end] is None
        assert trace.episode_return(i) == -(end - start - 1)
    assert trace.performance() == sum(trace.episode_return(i) for i in range(5))
    again = qualia.simulate("gridworld", episodes=5, seed=7, baseline=-1.0)
    assert again.td_errors == trace.td_errors

    c, gamma_q = 1.5, 0.5
    plain = qualia.simulate("chain", episodes=20, seed=3)
    bonus = qualia.simulate("chain", episodes=20, seed=3, aei=f"reward_bonus({c}, {gamma_q})", inverse=True)
    assert bonus.states == plain.states and bonus.actions == plain.actions
    assert bonus.performance() == plain.performance()
    shift = bonus.reward_qualia(gamma_q) - plain.reward_qualia(gamma_q)
    assert close(shift, c * 20 / (1 - gamma_q)), shift

    assert close(qualia.shannon_entropy([0.5, 0.25, 0.25]), 1.5)
    assert close(qualia.mutual_information([[0.5, 0.0], [0.0, 0.5]]), 1.0)
    assert qualia.kl_divergence([0.5, 0.5], [0.5, 0.5]) == 0.0
    try:
        qualia.kl_divergence([0.5, 0.5], [1.0, 0.0])
    except ValueError:
        pass
    else:
        raise AssertionError("unsupported KL should raise")

    assert qualia.check_invariance("kl", trials=50)["passed"]
    assert all(c["passed"] for c in qualia.exploit_demo("chain", c=-2.0, episodes=5, trials=4))
    [grad] = qualia.accept("gradient-checks")
    assert grad["id"] == 6 and grad["passed"], grad

    with tempfile.TemporaryDirectory() as tmp:
        config = 'environment = "chain"\ntrials = 4\ni_max = 10\nbaseline_values = [0.0, -1.0]\n'
        files = [Path(p) for p in qualia.run_experiment(config, out_dir=tmp)]
        names = {p.name for p in files}
        assert {"learning_curve.csv", "signal_stats.csv", "histograms.csv", "objectives.csv", "manifest.json"} <= names
        rows = (Path(tmp) / "learning_curve.csv").read_text().splitlines()
        assert rows[0].startswith("env,baseline_c,episode,mean_return")
        assert len(rows) == 1 + 2 * 10
        assert all(math.isfinite(float(r.split(",")[3])) for r in rows[1:])
        trace.to_csv(Path(tmp) / "trace.csv")
        assert (Path(tmp) / "trace.csv").read_text().count("\n") == len(trace) + 1

    print("qualia smoke test passed")


if __name__ == "__main__":
    main()
