"""Signatures and hashing, pinned to published test vectors."""
import hashlib

import numpy as np
import pytest

from auditfl import crypto
from auditfl.fixedpoint import FpVector

# RFC 6979 appendix A.2.5 (P-256, SHA-256)
RFC6979_SK = 0xC9AFA9D845BA75166B5C215767B1D6934E50C3DB36E89B127B8A622B120F6721
RFC6979_PK = (
    0x60FED4BA255A9D31C961EB74C6356D68C049B8923B61FA6CE669622E60F29FB6,
    0x7903FE1008B8BC99A41AE9E95628BC64F2F1B20C2D7E9F5177A3C294D4462299,
)
RFC6979_VECTORS = [
    (
        b"sample",
        0xA6E3C57DD01ABE90086538398355DD4C3B17AA873382B0F24D6129493D8AAD60,
        0xEFD48B2AACB6A8FD1140DD9CD45E81D69D2C877B56AAF991C34D0EA84EAF3716,
        0xF7CB1C942D657C41D436C7A1B6E29F65F3E900DBB9AFF4064DC4AB2F843ACDA8,
    ),
    (
        b"test",
        0xD16B6AE827F17175E040871A1C7EC3500192C4C92677336EC2537ACAEE0008E0,
        0xF1ABB023518351CD71D881567B1EA663ED3EFCF6C5132B354F28D3B0B7D38367,
        0x019F4113742A2B14BD25926B49C649155F267E60D3814B4C0CC84250E46F0083,
    ),
]


class TestRfc6979Vectors:
    def test_public_key_derivation(self):
        kp_pk = crypto._jac_to_affine(crypto._table_mult(crypto._G_TABLE, RFC6979_SK))
        assert kp_pk == RFC6979_PK

    @pytest.mark.parametrize("msg,k,r,s", RFC6979_VECTORS)
    def test_nonce_and_signature(self, msg, k, r, s):
        h1 = hashlib.sha256(msg).digest()
        assert crypto._rfc6979_k(RFC6979_SK, h1) == k
        sig = crypto.sign(RFC6979_SK, msg)
        assert int.from_bytes(sig[:32], "big") == r
        assert int.from_bytes(sig[32:], "big") == s


class TestKeygen:
    def test_distinct_keys(self):
        a = crypto.keygen(b"a" * 32)
        b = crypto.keygen(b"b" * 32)
        assert a.pk != b.pk

    def test_deterministic_from_entropy(self):
        assert crypto.keygen(b"x" * 32) == crypto.keygen(b"x" * 32)

    def test_short_entropy_rejected(self):
        with pytest.raises(ValueError):
            crypto.keygen(b"short")

    def test_self_verify_roundtrip(self):
        kp = crypto.keygen(b"r" * 32)
        sig = crypto.sign(kp.sk, b"hello")
        assert crypto.verify(kp.pk, b"hello", sig)

    def test_cross_key_rejects(self):
        a = crypto.keygen(b"1" * 32)
        b = crypto.keygen(b"2" * 32)
        sig = crypto.sign(a.sk, b"msg")
        assert not crypto.verify(b.pk, b"msg", sig)


class TestSignVerify:
    def test_fpvector_roundtrip(self):
        kp = crypto.keygen(b"v" * 32)
        msg = FpVector(np.arange(32, dtype=np.int64), 20).encode()
        assert crypto.verify(kp.pk, msg, crypto.sign(kp.sk, msg))

    def test_single_byte_flip_rejects(self):
        kp = crypto.keygen(b"f" * 32)
        msg = bytearray(b"some canonical serialization")
        sig = crypto.sign(kp.sk, bytes(msg))
        for i in range(len(msg)):
            bad = bytes(msg[:i]) + bytes([msg[i] ^ 1]) + bytes(msg[i + 1 :])
            assert not crypto.verify(kp.pk, bad, sig)

    def test_malformed_signature_rejects_not_raises(self):
        kp = crypto.keygen(b"m" * 32)
        assert not crypto.verify(kp.pk, b"msg", b"")
        assert not crypto.verify(kp.pk, b"msg", b"\x00" * 64)
        assert not crypto.verify(kp.pk, b"msg", b"\xff" * 64)
        assert not crypto.verify(kp.pk, b"msg", b"short")
        assert not crypto.verify(kp.pk, b"msg", None)  # type: ignore[arg-type]

    def test_malformed_public_key_rejects(self):
        sig = crypto.sign(crypto.keygen(b"k" * 32).sk, b"msg")
        assert not crypto.verify(b"\x00" * 64, b"msg", sig)
        assert not crypto.verify(b"\xff" * 64, b"msg", sig)
        assert not crypto.verify(b"short", b"msg", sig)

    def test_signature_determinism(self):
        kp = crypto.keygen(b"d" * 32)
        assert crypto.sign(kp.sk, b"same") == crypto.sign(kp.sk, b"same")

    def test_tampered_signature_rejects(self):
        kp = crypto.keygen(b"t" * 32)
        sig = bytearray(crypto.sign(kp.sk, b"msg"))
        sig[5] ^= 0x10
        assert not crypto.verify(kp.pk, b"msg", bytes(sig))


class TestHash:
    def test_empty_input_digest(self):
        # frozen from an independent implementation of SHA-256
        assert crypto.sha256(b"").hex() == (
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        )

    def test_equal_inputs_equal_digests(self):
        assert crypto.sha256(b"abc") == crypto.sha256(b"abc")

    def test_bit_difference_changes_digest(self):
        from auditfl.randomness import prg

        for seed in range(50):
            data = prg(seed, 4).tobytes()
            flipped = bytes([data[0] ^ 1]) + data[1:]
            assert crypto.sha256(data) != crypto.sha256(flipped)

    def test_digest_length(self):
        assert len(crypto.sha256(b"x")) == 32
