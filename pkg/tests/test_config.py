import pytest
import yaml

from assise.clock import MS, SEC, US
from assise.config import ChainSpec, ClusterConfig, GiB, KiB, MiB, parse_duration, parse_size


@pytest.mark.parametrize("text,want", [("16MiB", 16 * MiB), ("4 KiB", 4 * KiB), ("1GiB", GiB), ("1kb", 1000),
                                       ("512", 512), (4096, 4096), ("1.5MiB", 3 * MiB // 2)])
def test_parse_size(text, want):
    assert parse_size(text) == want


@pytest.mark.parametrize("text,want", [("1s", SEC), ("250ms", 250 * MS), ("3us", 3 * US), ("7ns", 7), (2, 2 * SEC),
                                       ("0.5", SEC // 2)])
def test_parse_duration(text, want):
    assert parse_duration(text) == want


@pytest.mark.parametrize("bad", ["lots", "4 parsecs", "-1MiB", ""])
def test_parse_size_rejects(bad):
    with pytest.raises(ValueError):
        parse_size(bad)


def test_roundtrip_through_yaml(tmp_path):
    cfg = ClusterConfig(nodes=["a", "b", "c"], chains={"/": ChainSpec("/", ["a", "b"], reserve="c")},
                        mode="optimistic")
    cfg.sizes.log_capacity = 2 * MiB
    cfg.timeouts.manager_expiry = 3 * MS
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump(cfg.to_dict()))
    back = ClusterConfig.load(p)
    assert back.to_dict() == cfg.to_dict()
    assert back.chains["/"].members() == ["a", "b", "c"]


def test_example_config_loads():
    from .conftest import ROOT
    cfg = ClusterConfig.load(ROOT / "configs" / "three-node.yaml")
    assert cfg.nodes == ["n0", "n1", "n2"]
    assert cfg.sizes.log_capacity == 16 * MiB


@pytest.mark.parametrize("d", [
    {"version": 2},
    {"nodes": ["a"], "chains": {"/": ["a", "zz"]}},
    {"nodes": ["a"], "chains": {"/x": ["a"]}},
    {"mode": "eventual"},
    {"colour": "blue"},
    {"timeouts": {"heartbeet": "1s"}},
    {"sizes": {"log_capacity": "big"}},
])
def test_bad_configs(d):
    with pytest.raises(ValueError):
        ClusterConfig.from_dict(d)


def test_chain_for_picks_longest_root():
    cfg = ClusterConfig(nodes=["a", "b"], chains={"/": ChainSpec("/", ["a"]), "/home": ChainSpec("/home", ["b"])})
    assert cfg.chain_for("/home/x/y").subtree == "/home"
    assert cfg.chain_for("/homer").subtree == "/"
    assert cfg.chain_for("/").subtree == "/"


def test_latency_classes_ordered():
    # the access-class table is listed fastest first
    lat = ClusterConfig().latency
    order = lat.ordering()
    reads = [lat.read_ns(c) for c in order]
    assert reads == sorted(reads)
