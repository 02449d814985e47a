import json

import numpy as np
import pytest

from augforge.errors import DecodeError, DimensionMismatch, IoError, MalformedAnnotation, ValidationError
from augforge.fixtures import make_scene
from augforge.scene_io import (
    BoxAnnotation,
    ScenePacket,
    discover_scenes,
    load_scene,
    load_scene_dir,
    read_image,
    read_jsonl,
    read_pfm,
    write_pfm,
    write_png,
    write_scene,
)


class TestBoxes:
    def test_rejects_inverted(self):
        with pytest.raises(MalformedAnnotation):
            BoxAnnotation(0, 5, 0, 5, 3)

    def test_dict_round_trip(self):
        b = BoxAnnotation(2, 1.5, 2, 3, 4.25)
        assert BoxAnnotation.from_dict(b.to_dict()) == b


class TestPacket:
    def test_arrays_are_read_only_copies(self):
        img = np.zeros((2, 2, 3), np.uint8)
        s = ScenePacket("a", img)
        img[0, 0, 0] = 9
        assert s.image[0, 0, 0] == 0
        with pytest.raises(ValueError):
            s.image[0, 0, 0] = 1

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            ScenePacket("a", np.zeros((2, 2, 3), np.uint8), depth=np.zeros((3, 2), np.float32))

    def test_bad_image(self):
        with pytest.raises(ValidationError):
            ScenePacket("a", np.zeros((2, 2), np.uint8))

    def test_bad_tag(self):
        with pytest.raises(ValidationError):
            ScenePacket("a", np.zeros((2, 2, 3), np.uint8), condition_tag="snow")


class TestFiles:
    def test_pfm_round_trip(self, tmp_path):
        d = np.arange(12, dtype=np.float32).reshape(3, 4) * 1.5
        write_pfm(tmp_path / "d.pfm", d)
        assert np.array_equal(read_pfm(tmp_path / "d.pfm"), d)

    def test_pfm_bottom_up_rows(self, tmp_path):
        d = np.array([[1.0], [2.0]], np.float32)
        write_pfm(tmp_path / "d.pfm", d)
        raw = (tmp_path / "d.pfm").read_bytes()
        assert raw.startswith(b"Pf\n1 2\n-1.0\n")
        assert np.frombuffer(raw[-8:], "<f4").tolist() == [2.0, 1.0]

    def test_pfm_truncated(self, tmp_path):
        (tmp_path / "d.pfm").write_bytes(b"Pf\n4 4\n-1.0\n\x00\x00")
        with pytest.raises(DecodeError):
            read_pfm(tmp_path / "d.pfm")

    def test_png_tag_round_trip(self, tmp_path):
        img = np.random.default_rng(0).integers(0, 256, (5, 6, 3), dtype=np.uint8)
        write_png(tmp_path / "x.png", img, {"condition_tag": "fog"})
        back, tag = read_image(tmp_path / "x.png")
        assert np.array_equal(back, img) and tag == "fog"

    def test_missing_file(self, tmp_path):
        with pytest.raises(IoError):
            load_scene(tmp_path / "nope.png")

    def test_jsonl_error_names_line(self, tmp_path):
        p = tmp_path / "a.jsonl"
        p.write_text('{"a": 1}\n{oops\n')
        with pytest.raises(DecodeError, match="line 2"):
            read_jsonl(p)

    def test_scene_round_trip(self, tmp_path):
        s = make_scene("abc", 32, 40, seed=3, condition_tag="rain")
        write_scene(s, tmp_path)
        assert discover_scenes(tmp_path) == ["abc"]
        assert load_scene_dir(tmp_path, "abc") == s

    def test_rewrite_is_byte_identical(self, tmp_path):
        s = make_scene("abc", 16, 16, seed=1)
        first = {p.name: p.read_bytes() for p in map(lambda q: q, _written(s, tmp_path / "a"))}
        second = {p.name: p.read_bytes() for p in _written(s, tmp_path / "b")}
        assert first == second

    def test_annotations_json(self, tmp_path):
        s = make_scene("abc", 32, 32, seed=3)
        write_scene(s, tmp_path)
        recs = [json.loads(line) for line in (tmp_path / "abc.jsonl").read_text().splitlines()]
        assert len(recs) == len(s.annotations)


def _written(scene, out):
    return write_scene(scene, out)
