"""Fixed-point arithmetic: exactness, rounding rules, audit identities."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from auditfl import (
    DimensionMismatchError,
    FixedPointOverflowError,
    FpVector,
    dot,
    floor_div,
    hadamard,
    quantize,
    sign_indicator,
)
from auditfl.fixedpoint import scale_by_dyadic
from auditfl.randomness import prg


def round_half_away(num: int, den: int) -> int:
    """Independent integer oracle for round-half-away-from-zero of num/den."""
    assert den > 0
    if num >= 0:
        return (2 * num + den) // (2 * den)
    return -((2 * (-num) + den) // (2 * den))


class TestQuantize:
    def test_zero(self):
        assert quantize(0.0, 20).raw == 0

    def test_half(self):
        assert quantize(0.5, 20).raw == 524288

    def test_one_third(self):
        # 2^20 / 3 = 349525.33..., rounds down
        expected = round_half_away(1 << 20, 3)
        assert expected == 349525
        assert quantize(1 / 3, 20).raw == expected

    def test_negative_half_tie_rounds_away(self):
        # |x| * 2^t landing exactly on .5 rounds away from zero
        assert quantize(1.5 / (1 << 20), 20).raw == 2
        assert quantize(-1.5 / (1 << 20), 20).raw == -2

    def test_matches_rational_oracle_on_dyadic_inputs(self):
        # dyadic inputs are exact in float64, so the oracle applies exactly
        words = prg(123, 500)
        nums = (words % np.uint64(1 << 30)).astype(np.int64) - (1 << 29)
        for num in nums[:200]:
            x = int(num) / (1 << 25)
            expected = round_half_away(int(num) * (1 << 20), 1 << 25)
            assert quantize(x, 20).raw == expected

    def test_overflow_rejected_with_magnitude(self):
        with pytest.raises(FixedPointOverflowError) as ei:
            quantize(2.0**50, 20)
        assert "2^20" in str(ei.value)

    def test_nan_rejected(self):
        with pytest.raises(FixedPointOverflowError):
            quantize(float("nan"), 20)

    def test_quantization_error_bound(self):
        words = prg(9, 1000)
        xs = (words % np.uint64(2_000_001)).astype(np.float64) / 1e6 - 1.0
        v = FpVector.from_floats(xs, 20)
        assert np.all(np.abs(v.to_floats() - xs) <= 2.0**-21 + 1e-18)


class TestDot:
    def test_orthogonal(self):
        a = FpVector(np.array([1, 0]), 20)
        b = FpVector(np.array([0, 1]), 20)
        assert dot(a, b) == 0

    def test_hand_arithmetic(self):
        a = FpVector(np.array([1, 2]), 20)
        b = FpVector(np.array([3, 4]), 20)
        assert dot(a, b) == 11

    def test_dimension_mismatch(self):
        a = FpVector(np.array([1, 2]), 20)
        b = FpVector(np.array([1, 2, 3]), 20)
        with pytest.raises(DimensionMismatchError):
            dot(a, b)

    @pytest.mark.parametrize("dim", [1, 7, 1000, 10_000])
    def test_matches_bigint_oracle(self, dim):
        words = prg(dim, 2 * dim)
        raws = (words % np.uint64(1 << 45)).astype(np.int64) - (1 << 44)
        a, b = raws[:dim], raws[dim:]
        expected = sum(int(x) * int(y) for x, y in zip(a, b))
        assert dot(FpVector(a, 20), FpVector(b, 20)) == expected

    def test_large_raws_beyond_fast_path(self):
        # magnitudes near 2^62 force the arbitrary-precision fallback
        a = np.array([(1 << 62) - 3, -(1 << 61), 12345], dtype=np.int64)
        b = np.array([(1 << 60) + 1, (1 << 62) - 9, -7], dtype=np.int64)
        expected = sum(int(x) * int(y) for x, y in zip(a, b))
        assert dot(FpVector(a, 20), FpVector(b, 20)) == expected

    def test_sign_invariant_under_positive_scaling(self):
        words = prg(77, 400)
        raws = (words % np.uint64(2001)).astype(np.int64) - 1000
        for k in range(0, 400, 40):
            a = FpVector(raws[k : k + 20], 20)
            b = FpVector(raws[k + 20 : k + 40] if k + 40 <= 400 else raws[:20], 20)
            base = sign_indicator(dot(a, b))
            for c in (1, 2, 97, 10**6):
                assert sign_indicator(dot(a.scalar_mul(c), b)) == base


class TestHadamard:
    def test_identity_mask(self):
        g = FpVector(np.array([5, -9, 0]), 20)
        assert hadamard(g, np.ones(3, dtype=np.int64)) == g

    def test_hand_arithmetic(self):
        g = FpVector.from_floats([1.0, -2.0], 20)
        out = hadamard(g, np.array([3, -3]))
        assert out == FpVector.from_floats([3.0, 6.0], 20)

    def test_overflow_aborts_with_diagnostic(self):
        g = FpVector(np.array([1 << 60]), 20)
        with pytest.raises(FixedPointOverflowError) as ei:
            hadamard(g, np.array([16]))
        assert "mask range" in str(ei.value)

    def test_paired_masks_recover_l_scaling(self):
        from auditfl.randomness import gen_correlated_pair, prvg

        for seed in range(30):
            pair = gen_correlated_pair(seed)
            g = FpVector((prg(seed, 16) % np.uint64(4001)).astype(np.int64) - 2000, 20)
            once = hadamard(g, prvg(seed, pair.rn_i, 16))
            twice = hadamard(once, prvg(seed, pair.rn_s, 16))
            assert twice == g.scalar_mul(pair.l)


class TestSignIndicator:
    def test_zero_is_bad(self):
        assert sign_indicator(0) == 0

    def test_negative(self):
        assert sign_indicator(-7) == 0

    def test_positive(self):
        assert sign_indicator(1) == 1


class TestFloorDiv:
    def test_rounds_toward_negative_infinity(self):
        v = FpVector(np.array([-3]), 20)
        assert floor_div(v, 2).raw[0] == -2

    def test_identity_divisor(self):
        v = FpVector(np.array([7, -8, 0]), 20)
        assert floor_div(v, 1) == v

    def test_zero_divisor_rejected(self):
        with pytest.raises(ValueError):
            floor_div(FpVector(np.array([1]), 20), 0)

    @settings(max_examples=200, deadline=None)
    @given(
        a=st.integers(min_value=-(1 << 40), max_value=1 << 40),
        b=st.integers(min_value=-(1 << 40), max_value=1 << 40),
        c=st.integers(min_value=1, max_value=1 << 20),
    )
    def test_separation_identity_hypothesis(self, a, b, c):
        lhs = floor_div(FpVector(np.array([c * a + b]), 20), c).raw[0]
        assert int(lhs) == a + (b // c)  # python // floors: independent oracle

    def test_separation_identity_bulk(self):
        # >= 10^4 random triples in one vectorized sweep
        words = prg(31337, 30000)
        A = (words[:10000] % np.uint64(1 << 41)).astype(np.int64) - (1 << 40)
        B = (words[10000:20000] % np.uint64(1 << 41)).astype(np.int64) - (1 << 40)
        C = (words[20000:] % np.uint64(1 << 16)).astype(np.int64) + 1
        lhs = (C * A + B) // C
        rhs = A + B // C
        assert np.array_equal(lhs, rhs)


class TestScaleByDyadic:
    def test_matches_floor_oracle(self):
        words = prg(5150, 2000)
        raws = (words % np.uint64(1 << 41)).astype(np.int64) - (1 << 40)
        v = FpVector(raws, 20)
        for num, exp in [(1, 1), (3, 3), (1, 0), (5, 4)]:
            out = scale_by_dyadic(v, num, exp)
            expected = [(num * int(x)) >> exp for x in raws]
            # python's >> on ints floors toward -inf: independent oracle
            assert out.raw.tolist() == expected


class TestVectorOps:
    def test_add_sub_roundtrip(self):
        a = FpVector(np.array([1, -2, 3]), 20)
        b = FpVector(np.array([10, 20, -30]), 20)
        assert (a + b) - b == a

    def test_add_overflow_detected(self):
        big = FpVector(np.array([(1 << 62) + (1 << 61)]), 20)
        with pytest.raises(FixedPointOverflowError):
            big + big

    def test_scalar_mul_overflow_detected(self):
        big = FpVector(np.array([1 << 60]), 20)
        with pytest.raises(FixedPointOverflowError):
            big.scalar_mul(16)

    def test_mixed_scale_rejected(self):
        a = FpVector(np.array([1]), 20)
        b = FpVector(np.array([1]), 16)
        with pytest.raises(ValueError):
            a + b

    def test_immutable(self):
        a = FpVector(np.array([1]), 20)
        with pytest.raises(AttributeError):
            a.scale = 5
        with pytest.raises(ValueError):
            a.raw[0] = 9


class TestEncoding:
    def test_roundtrip(self):
        v = FpVector(np.array([0, 1, -1, (1 << 62), -(1 << 62)]), 20)
        assert FpVector.decode(v.encode()) == v

    def test_layout(self):
        v = FpVector(np.array([1], dtype=np.int64), 7)
        enc = v.encode()
        assert enc[:8] == (1).to_bytes(8, "little")
        assert enc[8] == 7
        assert enc[9:] == (1).to_bytes(8, "little", signed=True)

    def test_truncated_rejected(self):
        v = FpVector(np.array([1, 2, 3]), 20)
        with pytest.raises(ValueError):
            FpVector.decode(v.encode()[:-1])

    def test_determinism_across_construction_paths(self):
        a = FpVector.from_floats([0.25, -0.75], 20)
        b = FpVector(np.array([262144, -786432]), 20)
        assert a.encode() == b.encode()
