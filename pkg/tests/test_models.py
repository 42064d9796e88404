import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from patchaug import tensor as T
from patchaug.checkpoint import load_checkpoint, save_checkpoint
from patchaug.errors import CorruptManifestError, GeometryError, VersionMismatchError
from patchaug.metrics import accuracy
from patchaug.models import (
    GeneratorConfig,
    build_classifier,
    build_discriminator,
    build_generator,
    classifier_forward,
    discriminator_forward,
    forward,
    generator_forward,
    trainable,
)

SMALL = (3, 8, 8)


@pytest.fixture(scope="module")
def generator():
    return build_generator(GeneratorConfig(64, 16, (3, 50, 50)), seed=1)


class TestGenerator:
    def test_shape_and_range(self, generator):
        z = T.random_uniform((5, 64), -1, 1, seed=0)
        out = generator_forward(generator, z).data
        assert out.shape == (5, 3, 50, 50)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_corners_of_latent_cube(self):
        g = build_generator(GeneratorConfig(4, 4, SMALL), seed=2)
        corners = np.array(np.meshgrid(*[[-1.0, 1.0]] * 4)).reshape(4, -1).T
        # blow the weights up so tanh saturates
        big = {k: T.Tensor(v.data * 50) for k, v in g.params.items()}
        out = generator_forward(g, corners, big).data
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_seed_determinism(self):
        a = build_generator(GeneratorConfig(8, 4, SMALL), seed=3)
        b = build_generator(GeneratorConfig(8, 4, SMALL), seed=3)
        c = build_generator(GeneratorConfig(8, 4, SMALL), seed=4)
        assert a == b
        assert a != c

    @pytest.mark.parametrize("geometry", [(3, 15, 15), (3, 16, 15), (0, 16, 16), (3, 2, 2)])
    def test_bad_geometry(self, geometry):
        with pytest.raises(GeometryError):
            build_generator(GeneratorConfig(8, 4, geometry), seed=0)

    def test_latent_size_checked(self):
        g = build_generator(GeneratorConfig(8, 4, SMALL), seed=0)
        with pytest.raises(GeometryError):
            generator_forward(g, np.zeros((2, 7)))


class TestDiscriminator:
    def test_shape_and_range(self):
        d = build_discriminator((3, 50, 50), seed=0)
        x = T.random_uniform((7, 3, 50, 50), 0, 1, seed=1)
        out = discriminator_forward(d, x).data
        assert out.shape == (7, 1)
        assert np.all((out > 0) & (out < 1))

    @given(st.floats(-1e6, 1e6))
    @settings(max_examples=30, deadline=None)
    def test_output_inside_open_interval(self, value):
        d = build_discriminator(SMALL, seed=0)
        out = discriminator_forward(d, np.full((1, *SMALL), value, np.float32)).data
        assert np.all((out > 0) & (out < 1))

    def test_input_gradient_matches_finite_differences(self):
        d = build_discriminator((1, 4, 4), seed=5, widths=(2, 2))
        params = {k: T.Tensor(v.data, dtype=np.float64) for k, v in d.params.items()}
        x0 = np.random.default_rng(0).uniform(0, 1, (1, 1, 4, 4))

        def f(x):
            return discriminator_forward(d, x, params).sum()

        x = T.Tensor(x0, requires_grad=True, dtype=np.float64)
        with T.Tape() as tape:
            loss = f(x)
        (g,) = tape.gradient(loss, [x])
        fd = T.finite_diff_grad(f, T.Tensor(x0, dtype=np.float64))
        err = np.linalg.norm(g.data - fd.data) / np.linalg.norm(fd.data)
        assert err < 1e-3

    def test_wrong_geometry(self):
        d = build_discriminator(SMALL, seed=0)
        with pytest.raises(GeometryError):
            discriminator_forward(d, np.zeros((1, 3, 8, 10), np.float32))

    def test_seed_determinism(self):
        assert build_discriminator(SMALL, seed=9) == build_discriminator(SMALL, seed=9)


class TestClassifier:
    def test_untrained_is_near_chance(self):
        c = build_classifier((3, 16, 16), seed=0)
        rng = np.random.default_rng(0)
        x = rng.uniform(0, 1, (1000, 3, 16, 16)).astype(np.float32)
        labels = rng.integers(0, 2, 1000)
        pred = classifier_forward(c, x).data
        assert np.all((pred > 0) & (pred < 1))
        assert abs(accuracy(pred, labels) - 0.5) <= 0.1

    def test_dispatch(self):
        c = build_classifier(SMALL, seed=0)
        x = np.zeros((2, *SMALL), np.float32)
        np.testing.assert_array_equal(forward(c, x).data, classifier_forward(c, x).data)

    def test_trainable_leaves(self):
        c = build_classifier(SMALL, seed=0)
        leaves = trainable(c)
        assert all(t.requires_grad for t in leaves.values())
        assert list(leaves) == list(c.params)


class TestCheckpoint:
    def test_round_trip_preserves_outputs(self, tmp_path):
        c = build_classifier(SMALL, seed=3)
        save_checkpoint(c, tmp_path / "c.galc")
        back = load_checkpoint(tmp_path / "c.galc")
        assert back == c
        x = np.random.default_rng(1).uniform(0, 1, (4, *SMALL)).astype(np.float32)
        assert classifier_forward(back, x).data.tobytes() == classifier_forward(c, x).data.tobytes()

    def test_generator_round_trip(self, tmp_path):
        g = build_generator(GeneratorConfig(8, 4, SMALL), seed=0)
        save_checkpoint(g, tmp_path / "g.galc")
        assert load_checkpoint(tmp_path / "g.galc") == g

    def test_truncated(self, tmp_path):
        path = tmp_path / "d.galc"
        save_checkpoint(build_discriminator(SMALL, seed=0), path)
        data = path.read_bytes()
        for cut in (3, 20, len(data) - 1):
            path.write_bytes(data[:cut])
            with pytest.raises(CorruptManifestError):
                load_checkpoint(path)

    def test_version_bump(self, tmp_path):
        path = tmp_path / "d.galc"
        save_checkpoint(build_discriminator(SMALL, seed=0), path)
        data = bytearray(path.read_bytes())
        struct.pack_into("<I", data, 4, 2)
        path.write_bytes(bytes(data))
        with pytest.raises(VersionMismatchError):
            load_checkpoint(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.galc"
        path.write_bytes(b"NOPE" + bytes(20))
        with pytest.raises(CorruptManifestError):
            load_checkpoint(path)

    def test_saving_is_byte_stable(self, tmp_path):
        c = build_classifier(SMALL, seed=3)
        save_checkpoint(c, tmp_path / "a.galc")
        save_checkpoint(c, tmp_path / "b.galc")
        assert (tmp_path / "a.galc").read_bytes() == (tmp_path / "b.galc").read_bytes()
