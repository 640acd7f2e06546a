import json

import numpy as np
import pytest

from tagflow.grid import Geometry, ScalarVolume, VectorField
from tagflow.metrics import DetHistogram, MetricsReport, det_auc
from tagflow.objective import LossBreakdown
from tagflow.report import (
    export_slices,
    render_metric_figures,
    save_det_curves,
    save_loss_curves,
    save_slice_panels,
    write_pgm,
)
from conftest import geom

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def read_pgm(path):
    """Minimal parser for the binary graymap files this package writes."""
    data = path.read_bytes()
    magic, dims, maxval, payload = data.split(b"\n", 3)
    assert magic == b"P5"
    cols, rows = (int(t) for t in dims.split())
    assert maxval == b"255"
    pixels = np.frombuffer(payload, dtype=np.uint8)
    assert pixels.size == rows * cols
    return pixels.reshape(rows, cols)


class TestWritePgm:
    def test_known_values_map_exactly(self, tmp_path):
        values = np.array([[0.0, 0.5], [1.0, 0.25]])
        path = tmp_path / "a.pgm"
        lo, hi = write_pgm(values, path, window=(0.0, 1.0))
        assert (lo, hi) == (0.0, 1.0)
        img = read_pgm(path)
        assert img.tolist() == [[0, 128], [255, 64]]

    def test_values_outside_window_clip(self, tmp_path):
        values = np.array([[-5.0, 9.0]])
        write_pgm(values, tmp_path / "b.pgm", window=(0.0, 1.0))
        assert read_pgm(tmp_path / "b.pgm").tolist() == [[0, 255]]

    def test_degenerate_window_is_mid_gray(self, tmp_path):
        values = np.full((3, 4), 7.25)
        lo, hi = write_pgm(values, tmp_path / "c.pgm")
        assert lo == hi == 7.25
        assert np.all(read_pgm(tmp_path / "c.pgm") == 128)

    def test_default_window_is_data_range(self, tmp_path):
        values = np.array([[2.0, 4.0, 6.0]])
        lo, hi = write_pgm(values, tmp_path / "d.pgm")
        assert (lo, hi) == (2.0, 6.0)
        assert read_pgm(tmp_path / "d.pgm").tolist() == [[0, 128, 255]]

    def test_rejects_non_2d(self, tmp_path):
        with pytest.raises(ValueError, match="2D"):
            write_pgm(np.zeros((2, 2, 2)), tmp_path / "e.pgm")


class TestExportSlices:
    def test_constant_volume_is_uniform_gray(self, tmp_path):
        g = geom(6)
        vol = ScalarVolume(g, np.full(g.dims, 3.0))
        export_slices(vol, axis=2, indices=[2], out_dir=tmp_path)
        img = read_pgm(tmp_path / "slice_z0002.pgm")
        assert np.all(img == img[0, 0])

    def test_identity_determinant_window_records_one(self, tmp_path):
        # The determinant map of no motion is exactly 1 everywhere, so the
        # sidecar window collapses onto 1.0 and the image is uniform.
        from tagflow.grid import jacobian_determinant
        g = geom(6)
        det = jacobian_determinant(VectorField(g, np.zeros((*g.dims, 3))))
        export_slices(det, axis=0, indices=[3], out_dir=tmp_path)
        sidecar = json.loads((tmp_path / "slice_window.json").read_text())
        assert sidecar["window"] == [1.0, 1.0]
        assert np.all(read_pgm(tmp_path / "slice_x0003.pgm") == 128)

    def test_ramp_rows_are_strictly_monotone(self, tmp_path):
        g = geom(8)
        x = np.arange(8, dtype=np.float64)
        vol = ScalarVolume(g, np.broadcast_to(x[:, None, None], g.dims).copy())
        export_slices(vol, axis=2, indices=[4], out_dir=tmp_path)
        img = read_pgm(tmp_path / "slice_z0004.pgm").astype(int)
        # x increases along pixel columns; every row must strictly increase.
        assert np.all(np.diff(img, axis=1) > 0)

    def test_vector_field_exports_magnitude(self, tmp_path):
        g = geom(6)
        vecs = np.zeros((*g.dims, 3))
        vecs[..., 0] = 3.0
        vecs[..., 1] = 4.0
        export_slices(VectorField(g, vecs), axis=1, indices=[0], out_dir=tmp_path)
        sidecar = json.loads((tmp_path / "slice_window.json").read_text())
        assert sidecar["window"] == [5.0, 5.0]

    def test_sidecar_lists_every_file(self, tmp_path):
        g = geom(6)
        vol = ScalarVolume(g, np.random.default_rng(0).uniform(size=g.dims))
        written = export_slices(vol, axis=2, indices=[0, 3, 5], out_dir=tmp_path,
                                source="vol.vvol")
        sidecar = json.loads((tmp_path / "slice_window.json").read_text())
        assert sidecar["source"] == "vol.vvol"
        assert sidecar["axis"] == "z"
        assert sidecar["files"] == {"slice_z0000.pgm": 0,
                                    "slice_z0003.pgm": 3,
                                    "slice_z0005.pgm": 5}
        assert len(written) == 4  # three images plus the sidecar

    def test_out_of_range_index_rejected(self, tmp_path):
        g = geom(6)
        vol = ScalarVolume(g, np.zeros(g.dims))
        with pytest.raises(ValueError, match="out of range"):
            export_slices(vol, axis=2, indices=[6], out_dir=tmp_path)
        with pytest.raises(ValueError, match="out of range"):
            export_slices(vol, axis=2, indices=[-1], out_dir=tmp_path)

    def test_empty_indices_rejected(self, tmp_path):
        g = geom(6)
        vol = ScalarVolume(g, np.zeros(g.dims))
        with pytest.raises(ValueError, match="no slice indices"):
            export_slices(vol, axis=2, indices=[], out_dir=tmp_path)


def fake_history(n=12):
    return [LossBreakdown(sim=1.0 / (i + 1), smooth=0.01 * i,
                          incompress=0.002 * i, total=1.0 / (i + 1) + 0.012 * i)
            for i in range(n)]


class TestFigures:
    def test_loss_curves_written_as_png(self, tmp_path):
        path = save_loss_curves(fake_history(), tmp_path / "loss.png")
        assert path.read_bytes().startswith(PNG_MAGIC)
        assert path.stat().st_size > 1000

    def test_loss_curves_reject_empty_history(self, tmp_path):
        with pytest.raises(ValueError, match="empty"):
            save_loss_curves([], tmp_path / "loss.png")

    def test_det_curves_written_as_png(self, tmp_path):
        g = geom(8)
        zero = VectorField(g, np.zeros((*g.dims, 3)))
        auc, hist = det_auc(zero, ScalarVolume(g, np.ones(g.dims)))
        path = save_det_curves(hist, auc, tmp_path / "det.png")
        assert path.read_bytes().startswith(PNG_MAGIC)

    def test_det_curves_reject_empty_histogram(self, tmp_path):
        hist = DetHistogram(np.linspace(0, 1, 11), np.zeros(10))
        with pytest.raises(ValueError, match="zero total weight"):
            save_det_curves(hist, 1.0, tmp_path / "det.png")

    def test_slice_panels_written_as_png(self, tmp_path):
        g = geom(8)
        rng = np.random.default_rng(1)
        panels = {"first": ScalarVolume(g, rng.uniform(size=g.dims)),
                  "second": ScalarVolume(g, rng.uniform(size=g.dims))}
        path = save_slice_panels(panels, tmp_path / "slices.png")
        assert path.read_bytes().startswith(PNG_MAGIC)

    def test_render_metric_figures_selects_outputs(self, tmp_path):
        g = geom(8)
        zero = VectorField(g, np.zeros((*g.dims, 3)))
        auc, hist = det_auc(zero, ScalarVolume(g, np.ones(g.dims)))
        report = MetricsReport(rmse_global=0.0, rmse_masked=0.0, det_auc=auc,
                               negdet_percent=0.0, histogram=hist)

        only_det = render_metric_figures(report, tmp_path / "a")
        assert [p.name for p in only_det] == ["det_cdf.png"]

        everything = render_metric_figures(
            report, tmp_path / "b", history=fake_history(),
            panels={"det": ScalarVolume(g, np.ones(g.dims))})
        assert sorted(p.name for p in everything) == [
            "det_cdf.png", "loss_curves.png", "slices.png"]
        for p in everything:
            assert p.read_bytes().startswith(PNG_MAGIC)
