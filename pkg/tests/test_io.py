"""Tensor files, PGM/PPM images, configs and checkpoints."""

import struct

import numpy as np
import pytest

from sacnet.errors import ParameterError, ParseError, ShapeError
from sacnet.io import (read_config, read_pgm, read_ppm, read_stf,
                       load_checkpoint, save_checkpoint, write_config,
                       write_pgm, write_ppm, write_stf)


# -------------------------------------------------------------- tensor files

def test_stf_roundtrip(tmp_path):
    g = np.random.default_rng(0)
    for shape in ((), (5,), (3, 4), (2, 3, 4, 5)):
        arr = g.normal(size=shape)
        path = tmp_path / "t.stf"
        write_stf(path, arr)
        back = read_stf(path)
        assert back.dtype == np.float64
        assert back.shape == arr.shape
        np.testing.assert_allclose(back, arr.astype(np.float32), atol=0)


def test_stf_corruption_offsets(tmp_path):
    path = tmp_path / "t.stf"
    write_stf(path, np.arange(6.0).reshape(2, 3))
    good = path.read_bytes()

    path.write_bytes(b"XXX1" + good[4:])
    with pytest.raises(ParseError) as e:
        read_stf(path)
    assert e.value.offset == 0

    path.write_bytes(good[:6])                         # truncated rank field
    with pytest.raises(ParseError) as e:
        read_stf(path)
    assert e.value.offset == 6

    path.write_bytes(good[:4] + struct.pack("<I", 1000) + good[8:])
    with pytest.raises(ParseError) as e:
        read_stf(path)
    assert e.value.offset == 4                         # implausible rank

    path.write_bytes(good[:10])                        # inside the dims list
    with pytest.raises(ParseError) as e:
        read_stf(path)
    assert e.value.offset == 10

    path.write_bytes(good[:-4])                        # short payload
    with pytest.raises(ParseError) as e:
        read_stf(path)
    assert e.value.offset == len(good) - 4

    path.write_bytes(good + b"\x00" * 4)               # long payload
    with pytest.raises(ParseError):
        read_stf(path)

    with pytest.raises(OSError):
        read_stf(tmp_path / "absent.stf")


def test_stf_rank_limit(tmp_path):
    with pytest.raises(ParameterError):
        write_stf(tmp_path / "t.stf", np.zeros((1,) * 33))


# ------------------------------------------------------------------- images

def test_pgm_roundtrip(tmp_path):
    img = np.random.default_rng(1).random((7, 9))
    path = tmp_path / "m.pgm"
    write_pgm(path, img)
    back = read_pgm(path)
    assert back.shape == (7, 9)
    assert np.max(np.abs(back - img)) <= 0.5 / 255 + 1e-12


def test_ppm_roundtrip(tmp_path):
    img = np.random.default_rng(2).random((3, 5, 8))
    path = tmp_path / "m.ppm"
    write_ppm(path, img)
    back = read_ppm(path)
    assert back.shape == (3, 5, 8)
    assert np.max(np.abs(back - img)) <= 0.5 / 255 + 1e-12


def test_pgm_uint8_passthrough(tmp_path):
    img = np.arange(12, dtype=np.uint8).reshape(3, 4)
    path = tmp_path / "m.pgm"
    write_pgm(path, img)
    np.testing.assert_allclose(read_pgm(path), img / 255.0, atol=1e-12)


def test_pnm_header_comments(tmp_path):
    path = tmp_path / "m.pgm"
    payload = bytes(range(6))
    path.write_bytes(b"P5\n# a comment\n3 2\n# another\n255\n" + payload)
    img = read_pgm(path)
    assert img.shape == (2, 3)
    np.testing.assert_allclose(img.ravel(), np.arange(6) / 255.0, atol=1e-12)


def test_pnm_malformed(tmp_path):
    path = tmp_path / "m.pgm"

    path.write_bytes(b"P6\n3 2\n255\n" + bytes(6))     # wrong magic for pgm
    with pytest.raises(ParseError) as e:
        read_pgm(path)
    assert e.value.offset == 0

    path.write_bytes(b"P5\n3 2\n")                     # header ends early
    with pytest.raises(ParseError):
        read_pgm(path)

    path.write_bytes(b"P5\n3 x\n255\n" + bytes(6))     # non-integer token
    with pytest.raises(ParseError) as e:
        read_pgm(path)
    assert e.value.offset == 5

    path.write_bytes(b"P5\n3 2\n999\n" + bytes(6))     # maxval out of range
    with pytest.raises(ParseError):
        read_pgm(path)

    path.write_bytes(b"P5\n3 2\n255\n" + bytes(5))     # short payload
    with pytest.raises(ParseError):
        read_pgm(path)

    path.write_bytes(b"P5\n3 2\n255\n" + bytes(7))     # long payload
    with pytest.raises(ParseError):
        read_pgm(path)


def test_image_write_validation(tmp_path):
    with pytest.raises(ParameterError):
        write_pgm(tmp_path / "m.pgm", np.full((3, 3), 1.5))
    with pytest.raises(ShapeError):
        write_pgm(tmp_path / "m.pgm", np.zeros((3, 3, 3)))
    with pytest.raises(ShapeError):
        write_ppm(tmp_path / "m.ppm", np.zeros((4, 3, 3)))


# ------------------------------------------------------------------- config

def test_config_roundtrip(tmp_path):
    path = tmp_path / "c.txt"
    cfg = {"steps": "300", "lr": "0.001", "name": "toy run"}
    write_config(path, cfg)
    assert read_config(path) == cfg
    # keys come back sorted in the file, so rewrites are byte-stable
    write_config(tmp_path / "c2.txt", dict(reversed(list(cfg.items()))))
    assert (tmp_path / "c2.txt").read_bytes() == path.read_bytes()


def test_config_comments_and_errors(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("# header\n\nlr = 0.1\n# trailing\nsteps=5\n")
    assert read_config(path) == {"lr": "0.1", "steps": "5"}

    path.write_text("lr=0.1\nbogus line\n")
    with pytest.raises(ParseError) as e:
        read_config(path)
    assert e.value.offset == len("lr=0.1\n")


# --------------------------------------------------------------- checkpoints

def test_checkpoint_roundtrip(tmp_path):
    g = np.random.default_rng(3)
    arrays = {"b.w": g.normal(size=(2, 3)), "a.w": g.normal(size=(4,)),
              "c.b": g.normal(size=())}
    config = {"seed": "7", "size": "64"}
    ckpt = tmp_path / "ckpt"
    save_checkpoint(ckpt, arrays, config)
    back, cfg = load_checkpoint(ckpt)
    assert cfg == config
    assert set(back) == set(arrays)
    for name in arrays:
        np.testing.assert_allclose(back[name],
                                   arrays[name].astype(np.float32), atol=0)


def test_checkpoint_deterministic_bytes(tmp_path):
    arrays = {"x": np.ones((2, 2)), "y": np.zeros(3)}
    a, b = tmp_path / "a", tmp_path / "b"
    save_checkpoint(a, arrays, {"k": "v"})
    save_checkpoint(b, arrays, {"k": "v"})
    for f in sorted(p.name for p in a.iterdir()):
        assert (a / f).read_bytes() == (b / f).read_bytes()
