"""Smoke test for the eegssm Python module.

    pip install --no-build-isolation -e crates/python
    python crates/python/python/smoke_test.py
"""

import math
import tempfile
from pathlib import Path

import numpy as np

import eegssm


def main():
    recs = eegssm.synthesize(3, 10.0, 125.0, seed=42)
    assert len(recs) == 9
    assert recs[0].data.shape == (19, 1250)
    assert sorted({r.label for r in recs}) == sorted(eegssm.CLASSES)

    fs = 125.0
    t = np.arange(2 * int(fs)) / fs
    sine = np.sin(2 * math.pi * 10.0 * t)[None, :]
    freqs, power = eegssm.welch_psd(sine, fs)
    assert abs(freqs[np.argmax(power[0])] - 10.0) < 1.0
    feats = eegssm.band_features(np.repeat(sine, 3, axis=0), fs)
    assert feats.shape == (3, 5) and int(np.argmax(feats[0])) == 2

    x = np.random.default_rng(0).standard_normal(64)
    a_log, b, c = [0.0, 0.5], [0.3, -0.2], [1.0, 0.4]
    y = eegssm.ssm_scan(a_log, b, c, 0.5, math.log(0.1), x)
    k = eegssm.ssm_kernel(a_log, b, c, math.log(0.1), 64)
    conv = np.array([k[: i + 1][::-1] @ x[: i + 1] for i in range(64)]) + 0.5 * x
    assert np.max(np.abs(y - conv)) < 1e-10

    model = eegssm.Model("combined", 19)
    logits = model.forward(segment=recs[0].data[:, :250], features=feats[:1].repeat(19, axis=0))
    assert logits.shape == (3,)

    for variant, optw in [("temporal", False), ("spectral", True), ("combined", True)]:
        err, worst = eegssm.grad_check(variant, optw)
        assert err <= eegssm.GRAD_CHECK_TOL, (variant, err, worst)

    with tempfile.TemporaryDirectory() as tmp:
        data = Path(tmp) / "data"
        eegssm.write_dataset(data, recs)
        assert len(eegssm.load_dataset(data)) == 9
        trained, history = eegssm.train(data, "spectral", epochs=3, seed=1)
        assert len(history) == 3
        metrics = eegssm.evaluate(trained, data, "test")
        assert 0.0 <= metrics["accuracy"] <= 1.0
        path = Path(tmp) / "model.json"
        trained.save(path)
        again = eegssm.evaluate(eegssm.Model.load(path), data, "test")
        assert again["accuracy"] == metrics["accuracy"]

    print(f"ok: {model!r}, {model.param_count()} parameters")


if __name__ == "__main__":
    main()
