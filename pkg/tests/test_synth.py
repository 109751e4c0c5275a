import numpy as np
import pytest

from mmrec.errors import ValidationError
from mmrec.subspace import reconstruction_loss
from mmrec.synth import SyntheticSpec, generate_synthetic


def test_zero_noise_matches_decoder():
    ds, views, truth = generate_synthetic(SyntheticSpec(num_users=20, num_items=150, view_dims=[4, 3, 5],
                                                        latent_dim=2, noise_sigma=0.0, interactions_per_user=5))
    for v, view in enumerate(views):
        assert np.array_equal(view.features, truth.model.decode_all(v))
    assert reconstruction_loss(truth.model, views) <= 1e-18


def test_deterministic():
    spec = SyntheticSpec(num_users=30, num_items=120, view_dims=[3, 3, 3], latent_dim=2, interactions_per_user=4, seed=9)
    a, b = generate_synthetic(spec), generate_synthetic(spec)
    assert np.array_equal(a[0].indices, b[0].indices)
    assert np.array_equal(a[0].indptr, b[0].indptr)
    for x, y in zip(a[1], b[1]):
        assert x.features.tobytes() == y.features.tobytes()
    assert a[2].user_taste.tobytes() == b[2].user_taste.tobytes()


def test_default_spec_passes_invariants():
    ds, views, truth = generate_synthetic(SyntheticSpec())
    assert (ds.num_users, ds.num_items) == (500, 2000)
    ds.validate()
    assert np.all(ds.degrees() == 20)
    assert [v.dim for v in views] == [20, 30, 25]
    assert all(v.num_items == 2000 and np.all(np.isfinite(v.features)) for v in views)
    assert truth.model.H.shape == (8, 2000)


def test_planted_affinity_drives_interactions():
    ds, _, truth = generate_synthetic(SyntheticSpec(num_users=100, num_items=500, view_dims=[3, 3, 3],
                                                    latent_dim=4, interactions_per_user=10, seed=2))
    higher = 0
    rng = np.random.default_rng(0)
    for u in range(ds.num_users):
        pos = ds.items_of(u)
        other = rng.integers(ds.num_items, size=pos.size)
        higher += truth.affinity(u, pos).mean() > truth.affinity(u, other).mean()
    assert higher >= 95


@pytest.mark.parametrize("kw", [dict(view_dims=[3, 3]), dict(noise_sigma=-1.0), dict(interactions_per_user=10**6)])
def test_bad_spec(kw):
    with pytest.raises(ValidationError):
        SyntheticSpec(**kw)
