"""Quick end-to-end check of the `neb` extension module."""

import csv
import io
import json

import neb


def main():
    x = neb.BitString("0110")
    assert len(x) == 4 and x.ones_count() == 2 and str(x) == "0110"
    x.flip(0)
    assert x.leading_ones() == 3

    jump = neb.Problem.jump(8, 3)
    assert jump.fitness(neb.BitString("11111111")) == 11
    assert jump.fitness(neb.BitString("11111110")) == 1

    om = neb.Problem.onemax(32)
    r = neb.run(om, "one_plus_ll_ga", lam=3, noise="bitwise", q=0.1, seed=7)
    assert r.done and not r.censored and r.evaluations > 0
    again = neb.run(om, "one_plus_ll_ga", lam=3, noise="bitwise", q=0.1, seed=7)
    assert again.evaluations == r.evaluations

    capped = neb.run(neb.Problem.jump(32, 3), budget=50)
    assert capped.censored and capped.evaluations == 50

    assert neb.expected_runtime(neb.Problem.onemax(1)) == 0.5
    exact = neb.expected_runtime(jump)
    runs = [neb.run(jump, seed=s).evaluations for s in range(2000)]
    mean = sum(runs) / len(runs)
    assert abs(mean - exact) / exact < 0.1, (mean, exact)

    t, df, p = neb.welch_t([1, 2, 3, 4, 5], [2, 3, 4, 5, 6])
    assert abs(t + 1) < 1e-12 and abs(df - 8) < 1e-12 and abs(p - 0.3466) < 1e-4
    assert abs(neb.wilcoxon_rank_sum([1, 2], [3, 4]) - 1 / 3) < 1e-12
    assert not neb.bonferroni_significant(0.02)

    plan = {
        "id": "smoke",
        "problems": [{"kind": "onemax", "n": 16}],
        "algorithms": [{"kind": "one_plus_lambda_ea", "lambda_rule": "ln_n"}],
        "noise": [{"kind": "bitwise", "q": "0"}, {"kind": "bitwise", "q": "ln_n_over_n"}],
        "replications": 4,
        "master_seed": 1,
    }
    rows = list(csv.DictReader(io.StringIO(neb.run_plan(json.dumps(plan), workers=2))))
    assert len(rows) == 8 and all(row["done"] == "true" for row in rows)
    assert rows[0]["algorithm"] == "one_plus_lambda_ea/ln_n"

    try:
        neb.Problem.jump(4, 5)
    except ValueError:
        pass
    else:
        raise AssertionError("invalid jump accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
