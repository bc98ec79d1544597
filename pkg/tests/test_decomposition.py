import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ddcnn.decomposition import (
    DecompositionPlan,
    DomainShape,
    PatchBox,
    coverage_map,
    extract_patch,
    make_plan,
    plan_type_a,
    plan_type_b,
    stitch,
)
from ddcnn.exceptions import ParameterError, ShapeError, UnsupportedVariantError
from oracles import box_count


def boxes(plan):
    return [(b.offset, b.size) for b in plan.patches]


def test_quadrants():
    plan = plan_type_a(DomainShape((32, 32), 3), (2, 2), 0)
    assert boxes(plan) == [((0, 0), (16, 16)), ((0, 16), (16, 16)), ((16, 0), (16, 16)), ((16, 16), (16, 16))]


def test_overlap_four():
    plan = plan_type_a(DomainShape((32, 32), 3), (2, 2), 4)
    assert boxes(plan) == [((0, 0), (20, 20)), ((0, 12), (20, 20)), ((12, 0), (20, 20)), ((12, 12), (20, 20))]


def test_3d_grid():
    plan = plan_type_a(DomainShape((128, 128, 64)), (4, 4, 2), 0)
    assert plan.n == 32
    assert {b.size for b in plan.patches} == {(32, 32, 32)}


def test_remainder_goes_to_last_cell():
    plan = plan_type_a(DomainShape((10, 7)), (3, 2), 0)
    assert [b.size[0] for b in plan.patches[::2]] == [3, 3, 4]
    assert [b.size[1] for b in plan.patches[:2]] == [3, 4]


def test_type_a_errors():
    with pytest.raises(ParameterError):
        plan_type_a(DomainShape((8, 8)), (9, 1), 0)
    with pytest.raises(ParameterError):
        plan_type_a(DomainShape((8, 8)), (2, 2), 5)
    with pytest.raises(ParameterError):
        plan_type_a(DomainShape((8, 8)), (2, 2, 2), 0)


def test_type_b_180():
    plan = plan_type_b(DomainShape((180, 180), 3))
    small = [b for b in plan.patches if b.size == (60, 60)]
    large = [b for b in plan.patches if b.size == (120, 120)]
    assert len(small) == 9 and len(large) == 4
    assert [b.offset for b in large] == [(0, 0), (0, 60), (60, 0), (60, 60)]


def test_type_b_minimal():
    plan = plan_type_b(DomainShape((3, 3)))
    assert sorted(b.size for b in plan.patches) == [(1, 1)] * 9 + [(2, 2)] * 4


def test_type_b_rejects_3d():
    with pytest.raises(UnsupportedVariantError):
        plan_type_b(DomainShape((6, 6, 6)))


def test_type_b_coverage():
    plan = plan_type_b(DomainShape((180, 180)))
    cov = coverage_map(plan)
    assert cov[90, 90] == 5
    # the four two-thirds patches already cover the whole domain, so every pixel is hit twice or more
    assert cov.min() == 2 and cov.max() == 5
    np.testing.assert_array_equal(coverage_map(plan_type_b(DomainShape((9, 9)))),
                                  box_count((9, 9), boxes(plan_type_b(DomainShape((9, 9))))))


def test_coverage_overlap_bands():
    cov = coverage_map(plan_type_a(DomainShape((32, 32)), (2, 2), 2))
    expected = np.ones((32, 32), dtype=int)
    band = slice(14, 18)
    expected[band, :] += 1
    expected[:, band] += 1
    expected[band, band] = 4
    np.testing.assert_array_equal(cov, expected)
    assert (coverage_map(plan_type_a(DomainShape((32, 32)), (2, 2), 0)) == 1).all()


def test_extract_patch():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(5, 6, 2))
    full = PatchBox((0, 0), (5, 6))
    np.testing.assert_array_equal(extract_patch(x, full), x)
    np.testing.assert_array_equal(extract_patch(x, PatchBox((2, 3), (1, 1))), x[2:3, 3:4])
    batch = rng.normal(size=(4, 5, 6, 2))
    np.testing.assert_array_equal(extract_patch(batch, PatchBox((1, 1), (2, 3))), batch[:, 1:3, 1:4])
    with pytest.raises(ShapeError):
        extract_patch(x, PatchBox((4, 0), (2, 2)))


def test_stitch_reassembles():
    x = np.random.default_rng(1).normal(size=(3, 13, 9, 2))
    plan = plan_type_a(DomainShape((13, 9), 2), (3, 2), 0)
    np.testing.assert_array_equal(stitch([extract_patch(x, b) for b in plan.patches], plan), x)


def test_plan_text_round_trip():
    for plan in (plan_type_a(DomainShape((32, 32), 3), (2, 2), 4), plan_type_b(DomainShape((12, 12)))):
        assert DecompositionPlan.from_text(plan.to_text()) == plan


def test_make_plan_dispatch():
    assert make_plan(DomainShape((6, 6)), "type-b").n == 13
    assert make_plan(DomainShape((6, 6)), "type-a", (3, 3), 1).n == 9
    with pytest.raises(ParameterError):
        make_plan(DomainShape((6, 6)), "type-c")


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_random_type_a_plans(data):
    d = data.draw(st.integers(2, 3))
    spatial = tuple(data.draw(st.integers(2, 12)) for _ in range(d))
    p = tuple(data.draw(st.integers(1, n)) for n in spatial)
    delta = data.draw(st.integers(0, min(n // q for n, q in zip(spatial, p)) - 1))
    plan = plan_type_a(DomainShape(spatial), p, delta)
    assert plan.n == int(np.prod(p))
    cov = coverage_map(plan)
    assert cov.min() >= 1
    if delta == 0:
        assert (cov == 1).all()
        assert sum(b.volume for b in plan.patches) == int(np.prod(spatial))
    assert plan_type_a(DomainShape(spatial), p, delta) == plan
