"""Smoke test for the pyjackson extension.

Build and install first:
    maturin build --release -m crates/python/Cargo.toml -o target/wheels
    pip install --force-reinstall target/wheels/pyjackson-*.whl
"""

import math

import pyjackson

MM1 = {
    "stations": [
        {
            "arrival": {"family": "exponential", "rate": 1.0},
            "service": {"family": "exponential", "rate": 2.0},
        }
    ],
    "routing": [[0.0]],
}


def main():
    assert abs(pyjackson.spectral_radius([[0.0, 0.5], [0.5, 0.0]]) - 0.5) < 1e-10
    rates = pyjackson.effective_rates([1.0, 1.0], [[0.0, 0.5], [0.5, 0.0]])
    assert all(abs(r - 2.0) < 1e-12 for r in rates)

    report = pyjackson.validate(MM1)
    assert report["passed"], report
    bad = dict(MM1, routing=[[1.5]])
    assert not pyjackson.validate(bad)["passed"]

    rest = pyjackson.local_rate(MM1, [0.0], [0.0])
    assert abs(rest["value"]) < 1e-12
    interior = pyjackson.local_rate(MM1, [1.0], [0.0])
    assert abs(interior["value"] - (math.sqrt(2) - 1) ** 2) < 1e-9

    qp = pyjackson.quasipotential(MM1, [1.0], starts=4)
    assert abs(qp["value"] - math.log(2)) < 1e-8, qp["value"]
    path = qp["optimal_path"]
    again = pyjackson.path_action(MM1, path["times"], path["positions"])
    assert abs(again - qp["value"]) < 1e-8

    sweep = pyjackson.quasipotential_finite(MM1, [1.0], [0.5, 5.0], starts=2)
    assert sweep[0]["value"] >= sweep[1]["value"] - 1e-9

    a = pyjackson.run_simulation(MM1, 100.0, seed=3)
    b = pyjackson.run_simulation(MM1, 100.0, seed=3)
    assert a["digest"] == b["digest"] and a["events"] > 0

    est = pyjackson.tail(MM1, [1.0], [2, 4, 6], 5000, seed=1)
    assert abs(est["slope"] - math.log(2)) < 0.2, est["slope"]

    try:
        pyjackson.local_rate(MM1, [-1.0], [0.0])
    except ValueError:
        pass
    else:
        raise AssertionError("negative position accepted")
    print("pyjackson smoke test passed")


if __name__ == "__main__":
    main()
