"""Exercise the extension module end to end: codec, rewards, GRPO arithmetic,
metrics, environment sampling, the policy and a few trainer steps."""

import math
import tempfile
from pathlib import Path

import gql


def main():
    good = '<think>sharp edges</think><answer>{"rating": 3.2}</answer>'
    p = gql.parse_response(good)
    assert p["structure_ok"] and p["json_shape_ok"] and p["format_reward"] == 1
    assert gql.format_reward("<answer>{}</answer>") == 0

    b = gql.evaluate_response(good, {"task": "score", "mos": 3.0})
    assert (b["r_fmt"], b["r_scr"], b["total"]) == (1, 1, 2.0)
    deg = '<think></think><answer>{"distortion_class": "blur", "severity": "slight"}</answer>'
    group = gql.evaluate_group([deg, good], {"task": "degradation", "class": "blur", "severity": "serious"})
    assert [g["total"] for g in group] == [1.25, 1.0]

    adv = gql.normalize_advantages([2.0, 1.0, 1.0, 0.0])
    assert abs(sum(adv)) < 1e-12 and adv[0] > adv[1] > adv[3]
    assert gql.normalize_advantages([1.0, 1.0]) == [0.0, 0.0]
    assert gql.clipped_surrogate(1.5, 1.0, 0.2) == 1.2
    assert gql.prob_ratio(0.0, -1.0) == math.e
    assert gql.lr_schedule(0, 10, 1e-3, 1e-6) == 1e-3
    assert gql.lr_schedule(10, 10, 1e-3, 1e-6) == 1e-6

    assert abs(gql.plcc([1, 2, 3], [2, 4, 7]) - 0.9933992677987828) < 1e-12
    assert abs(gql.srcc([1, 2, 3], [1, 4, 9]) - 1.0) < 1e-12
    try:
        gql.plcc([1, 1, 1], [1, 2, 3])
    except ValueError:
        pass
    else:
        raise AssertionError("constant input must be rejected")

    samples = gql.sample_env("comparison", 3, seed=7)
    assert len(samples) == 3 and samples[0]["features_b"] is not None

    policy = gql.ToyPolicy(seed=1, template_prior=4.3)
    s = samples[0]
    text, lp = policy.sample(s["features"], "comparison", 11, features_b=s["features_b"])
    assert lp <= 0.0
    again, _ = policy.sample(s["features"], "comparison", 11, features_b=s["features_b"])
    assert text == again
    assert abs(policy.log_prob(s["features"], "comparison", text, features_b=s["features_b"]) - lp) < 1e-9

    with tempfile.TemporaryDirectory() as tmp:
        trainer = gql.Trainer({
            "batch_size": 2,
            "group_size": 4,
            "steps_per_epoch": 3,
            "policy": {"hidden": 8, "embed": 4},
            "out_dir": str(Path(tmp) / "run"),
        })
        records = [trainer.step() for _ in range(3)]
        assert [r["step"] for r in records] == [0, 1, 2]
        report = trainer.evaluate(5)
        assert report["n"] > 0
        ckpt = Path(tmp) / "policy.json"
        trainer.save(str(ckpt))
        assert gql.ToyPolicy.load(str(ckpt)).num_params > 0

    print("python smoke test passed")


if __name__ == "__main__":
    main()
