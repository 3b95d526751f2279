"""Quick end-to-end check of the Python bindings."""

import tfperf


def main():
    bert = tfperf.ModelConfig.preset("bert-base", seq_len=512)
    prof = tfperf.analyze(bert)
    proj = prof["per_category"]["MHA (projections)"]
    assert f"{proj['flops']:.2e}" == "2.90e+10", proj
    assert abs(proj["intensity"] - 438.857) < 1e-2, proj

    accel = tfperf.AcceleratorConfig.preset("gemmini-baseline")
    lat = tfperf.latency_breakdown(bert, accel)
    assert lat["MHA (act-to-act matmuls)"] > 0

    rows, total = tfperf.nonideal_profile(bert.with_seq_len(4096), accel)
    assert total["nonideal_intensity"] <= total["ideal_intensity"]

    sweep = tfperf.memory_split_sweep(bert, 320, [(256, 64), (64, 256)], accel)
    assert sweep["best"] == 1

    stats = tfperf.mapspace_stats("bert.qk", 2000, seed=3)
    again = tfperf.mapspace_stats("bert.qk", 2000, seed=3)
    assert stats == again and stats["n_samples"] == 2000

    mapping, cost = tfperf.exhaustive_best(2, 2, 2)
    assert cost["edp"] > 0

    fused = tfperf.fusion_eval("qk-softmax", bert, accel)
    assert fused["verdict"] == "FusionWins", fused

    ref = {"N": 6, "d": 672, "h": [12, 6, 12, 8, 10, 6], "d_FFN": [1280, 1280, 2560, 768, 2048, 1024]}
    base = {"N": 12, "d": 768, "h": [12] * 12, "d_FFN": [3072] * 12}
    assert tfperf.candidate_cost(ref, accel)["edp"] < tfperf.candidate_cost(base, accel)["edp"]

    res = tfperf.evolve(population=8, rounds=3, seed=1)
    assert res["front"]["points"], res
    assert res == tfperf.evolve(population=8, rounds=3, seed=1)

    try:
        tfperf.ModelConfig.preset("gpt5")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown preset accepted")

    print("smoke test ok")


if __name__ == "__main__":
    main()
