"""Smoke test for the etfcil extension module."""

import json
import math
import tempfile
from pathlib import Path

import etfcil


def main():
    clf = etfcil.EtfClassifier(8, 4, seed=3)
    anchors = clf.anchors()
    for i, a in enumerate(anchors):
        assert abs(math.fsum(x * x for x in a) - 1.0) < 1e-9
        for b in anchors[i + 1:]:
            assert abs(math.fsum(x * y for x, y in zip(a, b)) + 1 / 3) < 1e-9
    grown = clf.expand(6)
    assert grown.num_classes == 6 and grown.basis()[:4] == clf.basis()

    idx, scores = clf.predict(anchors[2])
    assert idx == 2 and len(scores) == 4
    assert etfcil.pap_loss(anchors[1], 1, clf) < 1e-12
    loss, grad = etfcil.ce_loss(anchors[0], 0, clf)
    assert loss > 0 and len(grad) == 8

    feats = [a for a in anchors for _ in range(3)]
    labels = [k for k in range(4) for _ in range(3)]
    nc = etfcil.nc_metrics(feats, labels, classifier=anchors)
    assert nc["nc1"] < 1e-12 and nc["nc2"] < 1e-9 and nc["nc3"] < 1e-9

    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "x.emb"
        etfcil.write_embeddings(path, labels, feats)
        dim, back_labels, back = etfcil.read_embeddings(path)
        assert dim == 8 and back_labels == labels
        assert all(abs(u - v) < 1e-6 for r, s in zip(feats, back) for u, v in zip(r, s))

        manifest = etfcil.synth(Path(tmp) / "stream", dim=16, classes=6, tasks=3,
                                samples_per_class=60, seed=1)
        report = json.loads(etfcil.run_manifest(manifest, seed=2, epochs=5))
        assert len(report["stages"]) == 3
        assert 0.0 <= report["average_accuracy"] <= 1.0
        try:
            etfcil.EtfClassifier(3, 4)
        except ValueError:
            pass
        else:
            raise AssertionError("expected ValueError")
    print(f"smoke test ok: average accuracy {report['average_accuracy']:.4f}")


if __name__ == "__main__":
    main()
