"""Smoke test for the Python bindings.

Build and install first:
    pip install maturin
    maturin build --release -m crates/dichotomy-py/Cargo.toml -o dist
    pip install dist/dichotomy_py-*.whl
then run `python python/smoke_test.py`.
"""

import math

import dichotomy_py as d


def close(a, b, tol):
    return all(abs(x - y) <= tol for ra, rb in zip(a, b) for x, y in zip(ra, rb))


def main():
    stair = d.Cocycle.remark42()
    assert stair.dim == 3

    det = d.detect(stair, 0.1, window=40, beta=0.5)
    assert close(det.projector(0), [[1, 0, 0], [0, 1, 0], [0, 0, 0]], 1e-8)
    assert abs(det.alpha - math.log(2)) < 1e-6
    assert det.defects()["idempotence"] < 1e-8

    ex = d.lyapunov(stair, 0.1, 10_000)
    assert ex[0] > 0 > ex[1] > ex[2]
    assert abs(ex[1] + math.log(2)) < 1e-4

    hyp = d.Cocycle.constant_diag([0.5, 2.0])
    data = d.met(hyp, 0.1, 1000, 10)
    assert close(data.projector(0), [[1, 0], [0, 0]], 1e-10)
    x = data.convolve([[1.0, 0.0]] * (2 * data.half_width + 1))
    assert abs(x[data.half_width][0] - 1.0 / (1.0 - 0.5)) < 1e-3

    assert d.gamma_sharp(math.log(2), 0.3) <= d.gamma(math.log(2), 0.3)

    c = d.roughness_constants(math.log(2), 0.1)
    assert abs(c["beta_star"] - 0.2801846889813014) < 1e-12
    assert abs(c["alpha_tilde"] - 0.4980108003716949) < 1e-12

    assert abs(d.return_constants(1.0)["q"] - 8.154845485377136) < 1e-12

    r = d.returns(hyp, 0.1, 0.0, 0.5, 10_000, samples=100_000, seed=1)
    gaps = {b - a for a, b in zip([0] + r["return_times"], r["return_times"])}
    assert gaps <= {1, 2, 3}
    assert abs(r["kac_ratio"] - 1.0) < 0.02

    shear = [[[0.0, 1.0], [0.0, 0.0]]]
    det2 = d.detect(hyp, 0.1, window=30, beta=0.3)
    p = d.perturbed_projector(det2, shear, [0.03], 0.06)
    direct = d.detect(d.Cocycle.perturbed(hyp, shear, [0.03]), 0.1, window=30, beta=0.3)
    assert close(p, direct.projector(0), 1e-7)

    rot = d.Cocycle.constant([[math.cos(0.7), -math.sin(0.7)], [math.sin(0.7), math.cos(0.7)]])
    try:
        d.met(rot, 0.1, 1000, 5)
    except d.NumericalError as e:
        assert "gap" in str(e)
    else:
        raise AssertionError("an isometry has no gap")

    try:
        d.roughness_constants(math.log(2), -1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("negative rho accepted")

    print("python smoke test: ok")


if __name__ == "__main__":
    main()
