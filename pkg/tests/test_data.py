import numpy as np
import pytest

from pogdiff.data import IdentitySpec, draw_centers, generate, identity_of, read_csv


def test_thirty_vs_two_layout():
    ds = generate([IdentitySpec("A", 30), IdentitySpec("B", 2)])
    assert len(ds) == 32
    assert ds.counts() == {"A": 30, "B": 2}
    assert ds.imbalance_ratio() == 15.0
    assert ds.x0.shape == (32, 2) and ds.y.shape == (32, 4)


def test_zero_spread_collapses_each_identity():
    ds = generate([IdentitySpec("A", 5, spread=0.0), IdentitySpec("B", 3, spread=0.0)])
    for lab in ds.labels():
        m = ds.members(lab)
        assert np.all(ds.x0[m] == ds.x0[m[0]]) and np.all(ds.y[m] == ds.y[m[0]])


def test_generation_is_deterministic():
    specs = [IdentitySpec("A", 10), IdentitySpec("B", 4)]
    a, b = generate(specs, seed=3), generate(specs, seed=3)
    np.testing.assert_array_equal(a.x0, b.x0)
    np.testing.assert_array_equal(a.y, b.y)
    assert not np.array_equal(a.x0, generate(specs, seed=4).x0)


def test_explicit_centers_are_used():
    ds = generate([IdentitySpec("A", 4, 0.0, (1.0, 2.0), (0.0, 0.0, 1.0, 0.0)), IdentitySpec("B", 2)])
    np.testing.assert_array_equal(ds.x0[0], [1.0, 2.0])
    with pytest.raises(ValueError):
        generate([IdentitySpec("A", 4, 0.1, (1.0,))])


def test_csv_roundtrip_is_lossless(tmp_path):
    ds = generate([IdentitySpec("A", 7), IdentitySpec("B", 3)], 2, 3, seed=1)
    ds.to_csv(tmp_path / "d.csv")
    back = read_csv(tmp_path / "d.csv")
    np.testing.assert_array_equal(back.x0, ds.x0)
    np.testing.assert_array_equal(back.y, ds.y)
    np.testing.assert_array_equal(back.ids, ds.ids)
    assert back.identities.tolist() == ds.identities.tolist()


def test_invalid_specs():
    with pytest.raises(ValueError):
        generate([IdentitySpec("A", 3), IdentitySpec("A", 2)])
    with pytest.raises(ValueError):
        IdentitySpec("A", 1)
    with pytest.raises(ValueError):
        IdentitySpec("A", 3, spread=-0.1)
    with pytest.raises(ValueError):
        generate([])


def test_identity_oracle():
    ds = generate([IdentitySpec("A", 3), IdentitySpec("B", 2)])
    assert identity_of(ds, 0) == "A" and identity_of(ds, 4) == "B"
    assert (identity_of(ds, 0) != identity_of(ds, 1)) == 0
    assert (identity_of(ds, 0) != identity_of(ds, 3)) == 1
    with pytest.raises(KeyError):
        identity_of(ds, 99)


def test_centers_respect_separation():
    c = draw_centers(4, 2, 0.5, 2.0, np.random.default_rng(0))
    d = np.linalg.norm(c[:, None] - c[None], axis=-1)
    assert np.min(d[np.triu_indices(4, 1)]) >= 2.0


def test_reference_set_draws_from_source():
    ds = generate([IdentitySpec("A", 3, spread=0.2), IdentitySpec("B", 2)], seed=2)
    ref = ds.reference_set("A", 20_000, np.random.default_rng(0))
    center, spread = ds.sources["A"]
    np.testing.assert_allclose(ref.mean(0), center, atol=4 * spread / np.sqrt(20_000))
