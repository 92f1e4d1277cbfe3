"""Smoke test for the selcdf extension module.

Build and install first:  maturin develop -m crates/python/Cargo.toml
"""

import json

import selcdf


def main():
    model = selcdf.SuperpopModel.uniform(0.5, 1.5)
    design = selcdf.Design.from_json(json.dumps({"variant": "length_biased", "tau": 0.5}))
    limit = selcdf.LimitCdf.for_design(design, model)
    assert abs(limit.eval(1.0) - 0.375) < 1e-12

    pop = model.draw_population(2000, 7)
    counts = design.sample(pop, 8)
    d = selcdf.sup_distance(pop, counts, limit)
    print(f"sup distance at N=2000: {d:.4f}")
    assert d < 0.1

    m = selcdf.m_theoretical(design, model, 1.2, 2000)
    est = selcdf.m_monte_carlo(design, model, 1.2, 2000, 4000, 1)
    print(f"m(1.2): exact {m:.4f}, monte carlo {est['m_hat']:.4f} +- {est['se_m']:.4f}")
    assert abs(est["m_hat"] - m) < 5 * est["se_m"] + 1e-9

    cov, rhs = selcdf.srswor_cov_identity(10, 4)
    assert abs(cov - rhs) < 1e-12

    try:
        selcdf.LimitCdf.for_design(
            selcdf.Design.from_json('{"variant": "cluster_split", "tau": 1.0}'), model
        )
    except RuntimeError as e:
        print(f"cluster design: {e}")
    else:
        raise AssertionError("cluster design should have no limit")

    report = selcdf.run_experiment(json.dumps({
        "model": {"kind": "uniform", "a": 0.5, "b": 1.5},
        "design": {"variant": "length_biased", "tau": 0.5},
        "n_grid": [100, 400, 1600],
        "replicates": 20,
        "seed": 1,
    }))
    for agg in report["aggregates"]:
        print(f"N={agg['N']:5d}  mean sup {agg['mean_sup']:.4f}")
    print("slope", report["slope"])
    print("ok")


if __name__ == "__main__":
    main()
