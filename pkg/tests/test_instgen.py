import hashlib
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from picard_sim.instgen import (NetworkGeometry, demand_counts, generate_instance, haversine_km,
                                largest_remainder, load_instance, make_product_partition,
                                rewards_from_distances, round_half_up, save_instance)

GOLDEN_SMALL = "b9b352432dcb013b9a29fbf047fd7779b55de6e64bfe5912a3695fbce664481b"
GOLDEN_DESK = "bf65a6b42092a28f35fb386adbd942f8d1f08e6d7f7817b664b4f0ce5bfa68b8"


def manifest_hash(inst, directory):
    return hashlib.sha256(save_instance(inst, directory).read_bytes()).hexdigest()


def test_demand_counts():
    assert demand_counts(4, 8, 0.0).tolist() == [2, 2, 2, 2]
    q = demand_counts(4, 10**6, -1.0)
    assert q.sum() == 10**6
    assert np.allclose(q / q[0], [1, 1 / 2, 1 / 3, 1 / 4], rtol=1e-5)


def test_capacity_split_pro_rata():
    geo = NetworkGeometry.from_records([("A", "X", 0.0, 0.0, 3e6), ("B", "Y", 1.0, 1.0, 1e6)])
    inst = generate_instance(2, 3, 100, 0.0, 0.8, 0, geometry=geo)
    assert inst.c1.tolist() == [60, 20]


def test_rewards_from_distances():
    assert rewards_from_distances([0, 10]).tolist() == [1.0, 0.0]
    assert rewards_from_distances([5, 10]).tolist() == [0.5, 0.0]
    assert rewards_from_distances([2, 4, 8]).tolist() == [0.75, 0.5, 0.0]
    assert rewards_from_distances([0, 0]).tolist() == [1.0, 1.0]


def test_haversine_against_independent_formula():
    la, lo, hla, hlo = 34.0522, -118.2437, 29.7604, -95.3698
    p1, p2 = math.radians(la), math.radians(hla)
    # spherical law of cosines
    want = 6371.0088 * math.acos(math.sin(p1) * math.sin(p2) + math.cos(p1) * math.cos(p2)
                                 * math.cos(math.radians(hlo - lo)))
    assert haversine_km(la, lo, hla, hlo) == pytest.approx(want, rel=1e-9)
    assert 2150 < want < 2260


def test_rounding_helpers():
    assert [round_half_up(v) for v in (0.5, 1.5, 2.5, 2.4999)] == [1, 2, 3, 2]
    assert largest_remainder(10, [1, 1, 1]).tolist() == [4, 3, 3]
    assert largest_remainder(0, [1, 2]).tolist() == [0, 0]
    with pytest.raises(ValueError):
        largest_remainder(5, [0, 0])


def test_generator_validation():
    with pytest.raises(ValueError):
        generate_instance(31, 5, 5)
    with pytest.raises(ValueError):
        generate_instance(3, 5, 5, coverage=0)
    with pytest.raises(ValueError):
        generate_instance(3, 0, 5)


@given(seed=st.integers(0, 10_000), J=st.integers(1, 30), I=st.integers(1, 30),
       T=st.integers(1, 400), beta=st.sampled_from([0.0, -0.4, -0.8, -1.0]),
       coverage=st.sampled_from([0.3, 0.8, 1.0]))
def test_instance_invariants(seed, J, I, T, beta, coverage):
    inst = generate_instance(J, I, T, beta, coverage, seed)
    r = inst.orders.rewards
    assert (r >= 0).all() and (r <= 1).all()
    assert np.allclose(r[np.arange(T), inst.orders.origins], 1.0)
    assert inst.c1.sum() == round_half_up(coverage * T)
    Q = inst.demand()
    assert Q.tolist() == demand_counts(I, T, beta).tolist()
    assert inst.x1.sum(axis=1).tolist() == [round_half_up(coverage * q) for q in Q]
    plan = make_product_partition(inst, 1 + seed % 7, seed)
    owner = {}
    for i, m in zip(inst.orders.products.tolist(), plan.owner.tolist()):
        assert owner.setdefault(i, m) == m


def test_generation_is_pure():
    a = generate_instance(5, 20, 200, 0.0, 0.8, 3)
    b = generate_instance(5, 20, 200, 0.0, 0.8, 3)
    assert np.array_equal(a.orders.products, b.orders.products)
    assert np.array_equal(a.orders.rewards, b.orders.rewards)
    assert np.array_equal(a.x1, b.x1)


def test_golden_small(tmp_path):
    assert manifest_hash(generate_instance(5, 20, 200, 0.0, 0.8, 3), tmp_path) == GOLDEN_SMALL


def test_golden_desk(tmp_path, desk_instance):
    assert manifest_hash(desk_instance, tmp_path) == GOLDEN_DESK


def test_roundtrip(tmp_path):
    inst = generate_instance(6, 15, 120, -0.8, 0.8, 11)
    save_instance(inst, tmp_path)
    back = load_instance(tmp_path)
    assert (back.J, back.I, back.T) == (6, 15, 120)
    assert np.array_equal(back.x1, inst.x1) and np.array_equal(back.c1, inst.c1)
    assert np.array_equal(back.orders.products, inst.orders.products)
    assert np.array_equal(back.orders.rewards, inst.orders.rewards)
    assert np.array_equal(back.orders.origins, inst.orders.origins)
    assert back.meta["beta"] == -0.8
    assert b"\r\n" not in (tmp_path / "orders.csv").read_bytes()


def test_tampered_file_detected(tmp_path):
    save_instance(generate_instance(3, 4, 20, 0.0, 0.8, 0), tmp_path)
    path = tmp_path / "capacity.csv"
    path.write_text(path.read_text() + "0,1\n")
    with pytest.raises(ValueError, match="checksum"):
        load_instance(tmp_path)


def test_product_partition_bin_packing():
    geo = NetworkGeometry.default(2)
    inst = generate_instance(2, 4, 10, 0.0, 0.8, 0, geometry=geo)
    # force demand [4, 3, 2, 1]
    from picard_sim.fo_env import OrderSequence
    products = np.repeat(np.arange(4), [4, 3, 2, 1])
    inst.orders = OrderSequence(products, np.ones((10, 2)))
    plan = make_product_partition(inst, 2)
    groups = {}
    for i, m in zip(products.tolist(), plan.owner.tolist()):
        groups.setdefault(m, set()).add(i)
    assert sorted(map(sorted, groups.values())) == [[0, 3], [1, 2]]
    assert sorted(plan.sizes().tolist()) == [5, 5]
    assert make_product_partition(inst, 1).owner.tolist() == [0] * 10


def test_product_partition_balance(desk_instance):
    plan = make_product_partition(desk_instance, 256, 0)
    assert plan.sizes().max() / (desk_instance.T / 256) <= 1.2


def test_unconstrained_inventory():
    inst = generate_instance(3, 4, 20, 0.0, 0.8, 0).with_unconstrained_inventory()
    assert (inst.x1 == 20).all()
