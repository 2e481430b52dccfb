# std-lib imports
import tempfile
import unittest
from pathlib import Path

# 3 party imports
import numpy as np

# project imports
from simic.model.attention_maps import AttentionMaps
from simic.plotting.plot_helper import generate_lineplot, render_attention_overlay, training_curve
from simic.training.trainer import TrainLog


class TestPlotHelper(unittest.TestCase):
    def test_lineplot_traces(self):
        fig = generate_lineplot({"a": {1: 2.0, 2: 3.0}, "b": {1: 1.0}}, title="t")
        self.assertEqual([trace.name for trace in fig.data], ["a", "b"])
        self.assertEqual(list(fig.data[0].y), [2.0, 3.0])

    def test_lineplot_rejects_flat_data(self):
        with self.assertRaises(ValueError):
            generate_lineplot({"a": [1.0, 2.0]})

    def test_training_curve(self):
        log = TrainLog(train_loss=[4.0, 2.0, 1.0], val_loss=[5.0, 3.0, 3.5], seconds=[0.0] * 3, best_epoch=1)
        fig = training_curve(log, title="residual")
        self.assertEqual([trace.name for trace in fig.data], ["train", "val"])
        self.assertEqual(list(fig.data[1].x), [1, 2, 3])
        self.assertEqual(fig.layout.yaxis.type, "log")
        self.assertEqual(fig.layout.shapes[0].x0, 2)

    def test_attention_overlay_png(self):
        image = np.random.default_rng(0).integers(0, 256, size=(16, 16), dtype=np.uint8)
        maps = AttentionMaps(weights=np.random.default_rng(1).dirichlet(np.ones(4), size=2).reshape(2, 2, 2),
                             heads=2, sample_id="tip_0000")
        with tempfile.TemporaryDirectory() as tmp:
            path = render_attention_overlay(image, maps, Path(tmp) / "nested" / "overlay.png")
            self.assertTrue(path.read_bytes().startswith(b"\x89PNG"))


if __name__ == "__main__":
    unittest.main()
