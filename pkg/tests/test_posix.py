from assise.posix import PosixModel, basename, is_under, normalize, parent, split


def test_path_helpers():
    assert split("/a//b/") == ["a", "b"]
    assert normalize("/a//b/") == "/a/b"
    assert parent("/a/b") == "/a" and parent("/a") == "/"
    assert basename("/a/b") == "b"
    assert is_under("/tmp/x", "/tmp") and not is_under("/tmpx", "/tmp") and is_under("/x", "/")


def test_namespace_errors():
    m = PosixModel()
    assert m.apply("create", "/a/b") == ("err", "ENOENT")
    assert m.apply("mkdir", "/a") == ("ok", None)
    assert m.apply("mkdir", "/a") == ("err", "EEXIST")
    assert m.apply("create", "/a/f") == ("ok", None)
    assert m.apply("create", "/a/f/g") == ("err", "ENOTDIR")
    assert m.apply("unlink", "/a") == ("err", "ENOTEMPTY")
    assert m.apply("readdir", "/a/f") == ("err", "ENOTDIR")
    assert m.apply("read", "/a", 0, 1) == ("err", "EISDIR")
    assert m.apply("readdir", "/") == ("ok", ("a",))


def test_data_ops():
    m = PosixModel()
    m.apply("create", "/f")
    assert m.apply("write", "/f", 4, b"xy") == ("ok", 2)
    assert m.apply("read", "/f", 0, 10) == ("ok", b"\0\0\0\0xy")
    m.apply("truncate", "/f", 2)
    assert m.apply("stat", "/f") == ("ok", ("file", 2))
    m.apply("truncate", "/f", 5)
    assert m.apply("read", "/f", 0, 10) == ("ok", bytes(5))
    assert m.apply("read", "/f", 50, 10) == ("ok", b"")


def test_rename_rules():
    m = PosixModel()
    for op, *a in [("mkdir", "/d"), ("mkdir", "/e"), ("create", "/d/f"), ("create", "/e/g"), ("mkdir", "/e/h")]:
        m.apply(op, *a)
    assert m.apply("rename", "/d/f", "/e/g") == ("ok", None)  # replaces a file
    assert not m.exists("/d/f") and m.exists("/e/g")
    assert m.apply("rename", "/e/g", "/e/h") == ("err", "EISDIR")
    assert m.apply("rename", "/d", "/d/sub") == ("err", "EINVAL")  # into itself
    assert m.apply("rename", "/e", "/x") == ("ok", None)
    assert m.exists("/x/g") and m.exists("/x/h") and not m.exists("/e")
    assert m.apply("rename", "/x/g", "/x/g") == ("ok", None)


def test_state_hash_tracks_content():
    a, b = PosixModel(), PosixModel()
    for m in (a, b):
        m.apply("create", "/f")
        m.apply("write", "/f", 0, b"1")
    assert a.state_hash() == b.state_hash()
    b.apply("write", "/f", 0, b"2")
    assert a.state_hash() != b.state_hash()
    c = a.copy()
    c.apply("unlink", "/f")
    assert a.exists("/f") and not c.exists("/f")
