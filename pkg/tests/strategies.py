"""Shared hypothesis strategies: small POSIX programs over a tiny namespace."""
from hypothesis import strategies as st

NAMES = ["/d/a", "/d/b", "/d/c", "/e/a", "/d/s/a"]
DIRS = ["/d", "/e", "/d/s"]

data = st.binary(min_size=1, max_size=6000)
offsets = st.sampled_from([0, 1, 100, 4095, 4096, 5000, 9000])

op = st.one_of(
    st.tuples(st.just("create"), st.tuples(st.sampled_from(NAMES))),
    st.tuples(st.just("mkdir"), st.tuples(st.sampled_from(DIRS + ["/d/a"]))),
    st.tuples(st.just("write"), st.tuples(st.sampled_from(NAMES), offsets, data)),
    st.tuples(st.just("truncate"), st.tuples(st.sampled_from(NAMES), st.sampled_from([0, 10, 4096, 7000]))),
    st.tuples(st.just("unlink"), st.tuples(st.sampled_from(NAMES + DIRS))),
    st.tuples(st.just("rename"), st.tuples(st.sampled_from(NAMES + DIRS), st.sampled_from(NAMES + DIRS))),
    st.tuples(st.just("read"), st.tuples(st.sampled_from(NAMES), offsets, st.sampled_from([1, 100, 5000]))),
    st.tuples(st.just("readdir"), st.tuples(st.sampled_from(DIRS + ["/"]))),
    st.tuples(st.just("stat"), st.tuples(st.sampled_from(NAMES + DIRS))),
)

programs = st.lists(op, min_size=1, max_size=30)
