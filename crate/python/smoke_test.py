"""Smoke test for the onebit_lamb_py extension module."""

import onebit_lamb_py as ob


def main():
    assert ob.clip(5.0, 0.0, 1.0) == 1.0
    assert abs(ob.l2_norm([3.0, 4.0]) - 5.0) < 1e-12
    assert abs(ob.volume_reduction(0.167) - 4.56) < 0.05

    v = [0.5, -1.5, 2.0, -0.25, 1.0]
    signs, scale, n = ob.compress_1bit(v)
    decoded = ob.decompress(signs, scale, n)
    assert len(decoded) == n == len(v)
    assert all((d > 0) == (x >= 0) for d, x in zip(decoded, v))

    cluster = ob.SimCluster(4, compressor="onebit", audit=True)
    inputs = [[float(i + j) - 3.0 for j in range(64)] for i in range(4)]
    exact = ob.SimCluster(4, compressor="identity").lossless_allreduce(inputs)
    out = cluster.compressed_allreduce(inputs)
    assert len(out) == len(exact) == 64
    assert cluster.compressed_collectives == 1
    assert cluster.max_audit_violation <= 1e-12

    params = [("a", [1.0, -2.0, 0.5]), ("b", [0.3] * 5)]
    opt = ob.Optimizer("onebit_lamb", params, workers=2, lr=0.01, total_steps=20, warmup_steps=5)
    for _ in range(20):
        grads = [[[x for x in p] for _, p in params] for _ in range(2)]
        stage, coeffs = opt.step(grads, 0.01)
    assert stage == "compression" and len(coeffs) == 2
    assert opt.steps_taken == 20

    summary = ob.run_training('task = "quadratic"\ntotal_steps = 100\nwarmup_steps = 20\n')
    assert summary["losses"][-1] < summary["losses"][0]
    assert summary["reduction_factor"] > 1.0

    try:
        ob.normalize_config("beta4 = 1\n")
    except ValueError as e:
        assert "beta4" in str(e)
    else:
        raise AssertionError("unknown key accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
