import numpy as np

from tradeslab.rng import Rng

MASK = (1 << 64) - 1


def splitmix64_reference(seed, n):
    """Textbook sequential SplitMix64, pure Python."""
    out, state = [], seed
    for _ in range(n):
        state = (state + 0x9E3779B97F4A7C15) & MASK
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
        out.append(z ^ (z >> 31))
    return out


def test_matches_reference_splitmix64():
    assert Rng(0).next_u64(1)[0] == 0xE220A8397B1DCDAF
    for seed in (0, 1, 12345, MASK):
        assert Rng(seed).next_u64(50).tolist() == splitmix64_reference(seed, 50)


def test_stream_independent_of_chunking():
    a = Rng(42)
    chunks = np.concatenate([a.next_u64(3), a.next_u64(7), a.next_u64(1)])
    np.testing.assert_array_equal(chunks, Rng(42).next_u64(11))


def test_children_differ_and_do_not_advance_parent():
    r = Rng(3)
    c1, c2 = r.child(1), r.child(2)
    assert r.counter == 0
    assert c1.seed != c2.seed
    assert r.child(1, 5).seed == Rng(3).child(1, 5).seed


def test_uniform_range_and_permutation():
    u = Rng(8).uniform((1000,), -2.0, 3.0)
    assert u.min() >= -2.0 and u.max() < 3.0
    p = Rng(8).permutation(100)
    assert sorted(p.tolist()) == list(range(100))


def test_integers_respect_bounds():
    hi = np.array([1, 2, 5, 100] * 250)
    v = Rng(4).integers(hi)
    assert np.all(v >= 0) and np.all(v < hi)
