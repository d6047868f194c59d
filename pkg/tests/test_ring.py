import numpy as np
import pytest
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from hypothesis import given
from hypothesis import strategies as st

from trilink.ring import (
    MASK,
    Pair,
    Party,
    RandomStream,
    SeedBook,
    Share,
    ShareVector,
    StreamExhausted,
    StructuralError,
    as_ring,
    derive_seed,
    elements_from_bytes,
    elements_to_bytes,
    local_linear,
    reconstruct,
    share_value,
    to_signed,
)

u64 = st.integers(min_value=0, max_value=MASK)


@given(st.lists(st.integers(min_value=-(2**70), max_value=2**70), min_size=1, max_size=40))
def test_share_roundtrip_any_integers(values):
    s0, s1 = share_value(values, RandomStream.fresh())
    assert [int(v) for v in reconstruct(s0, s1)] == [v % 2**64 for v in values]


@given(u64, u64)
def test_addition_wraps_like_integers_mod_2_64(a, b):
    assert int(as_ring(a) + as_ring(b)) == (a + b) % 2**64
    assert int(as_ring(a) * as_ring(b)) == (a * b) % 2**64


def test_zero_secret_has_nonzero_shares():
    s0, s1 = share_value(np.zeros(64, dtype=np.uint64), RandomStream.fresh())
    assert np.count_nonzero(s0) > 60
    assert np.count_nonzero(reconstruct(s0, s1)) == 0


def test_two_sharings_differ():
    secret = np.arange(32, dtype=np.uint64)
    a, _ = share_value(secret, RandomStream.fresh())
    b, _ = share_value(secret, RandomStream.fresh())
    assert not np.array_equal(a, b)


def test_stream_matches_aes_ecb_keystream():
    # independent construction: word i is half of AES_k(i // 2) as a big-endian block
    seed = bytes(range(16))
    words = RandomStream(seed).draw(10)
    enc = Cipher(algorithms.AES(seed), modes.ECB()).encryptor()
    blocks = b"".join(enc.update(k.to_bytes(16, "big")) for k in range(5))
    assert np.array_equal(words, np.frombuffer(blocks, dtype="<u8"))


@given(st.integers(min_value=0, max_value=200), st.integers(min_value=0, max_value=50))
def test_stream_is_addressable(offset, n):
    seed = b"s" * 16
    assert np.array_equal(RandomStream(seed, counter=offset).draw(n), RandomStream(seed).draw(offset + n)[offset:])


def test_stream_draws_never_overlap():
    s = RandomStream(b"k" * 16)
    a, b = s.draw(3), s.draw(3)
    assert s.counter == 6
    assert not np.array_equal(a, b)


def test_stream_exhaustion():
    s = RandomStream(b"k" * 16, counter=2**64 - 2)
    s.draw(2)
    with pytest.raises(StreamExhausted):
        s.draw(1)


def test_seed_length_checked():
    with pytest.raises(ValueError):
        RandomStream(b"short")


def test_derived_seeds_are_distinct_per_pair_and_session():
    master = b"m" * 32
    seeds = {derive_seed(master, p, sid) for p in Pair for sid in (b"a" * 16, b"b" * 16)}
    assert len(seeds) == 2 * len(Pair)


def test_seedbook_restrict_drops_foreign_pairs():
    book = SeedBook.from_master(b"x" * 32)
    assert set(book.restrict(0).seeds) == {Pair.P0_P1, Pair.P0_HELPER}
    assert set(book.restrict(2).seeds) == {Pair.P0_HELPER, Pair.P1_HELPER}
    with pytest.raises(KeyError):
        book.restrict(0).session_streams(1, b"s" * 16)


def test_pairwise_streams_agree_across_parties():
    book = SeedBook.from_master(b"x" * 32)
    sid = b"q" * 16
    p0, p1, h = (book.restrict(r).session_streams(r, sid) for r in (0, 1, 2))
    assert np.array_equal(p0[Pair.P0_P1].draw(4), p1[Pair.P0_P1].draw(4))
    assert np.array_equal(p0[Pair.P0_HELPER].draw(4), h[Pair.P0_HELPER].draw(4))


def test_reconstruct_share_objects():
    assert reconstruct(Share(Party.P0, 2**64 - 1), Share(Party.P1, 3)) == 2
    v = reconstruct(ShareVector(Party.P0, [1, 2]), ShareVector(Party.P1, [3, 4]))
    assert v.tolist() == [4, 6]


@pytest.mark.parametrize(
    "a, b",
    [
        (Share(Party.P0, 1), Share(Party.P0, 2)),
        (Share(Party.P0, 1), ShareVector(Party.P1, [2])),
        (np.zeros(2, np.uint64), np.zeros(3, np.uint64)),
    ],
)
def test_reconstruct_structural_errors(a, b):
    with pytest.raises(StructuralError):
        reconstruct(a, b)


def test_local_linear_offset_only_on_p0():
    x = np.array([5, 7], dtype=np.uint64)
    s0, s1 = share_value(x, RandomStream.fresh())
    out = reconstruct(local_linear(s0, [2, 3], 10, Party.P0), local_linear(s1, [2, 3], 10, Party.P1))
    assert int(out) == 2 * 5 + 3 * 7 + 10


def test_local_linear_shape_check():
    with pytest.raises(StructuralError):
        local_linear([1, 2, 3], [1, 2], 0, Party.P0)


def test_signed_view_and_bytes():
    v = as_ring([-1, 5])
    assert to_signed(v).tolist() == [-1, 5]
    raw = elements_to_bytes(v)
    assert raw[:8] == b"\xff" * 8 and raw[8] == 5
    assert elements_from_bytes(raw).tolist() == v.tolist()
    with pytest.raises(StructuralError):
        elements_from_bytes(b"123")
