from hypothesis import given, strategies as st

from assise.crc import crc32c, crc32c_reference


def test_known_check_value():
    # standard CRC-32C check value for the ASCII digits 1..9
    assert crc32c(b"123456789") == 0xE3069283
    assert crc32c_reference(b"123456789") == 0xE3069283
    assert crc32c(b"") == 0


@given(st.binary(max_size=512), st.binary(max_size=512))
def test_fast_path_matches_bitwise_reference(a, b):
    assert crc32c(a) == crc32c_reference(a)
    # incremental computation equals one pass over the concatenation
    assert crc32c(b, crc32c(a)) == crc32c(a + b)
