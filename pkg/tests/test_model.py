from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from joinsketch.model import (EstimatorParams, Instance, QueryShape, QuerySpec, QuerySpecError,
                              Relation, ShapeError, ShapeKind, ValidationError, check_instance,
                              classify_query, rho_star_closed_form, validate_instance)

from builders import m1


def spec(schemas, output):
    return QuerySpec.of(schemas, output)


class TestQuerySpec:
    def test_attributes_must_match_schemas(self):
        with pytest.raises(QuerySpecError):
            QuerySpec(("A", "B"), (("A", "B"), ("B", "C")), ("A",))

    def test_empty_output_rejected(self):
        with pytest.raises(QuerySpecError):
            spec([("A", "B")], ())

    def test_output_outside_schemas_rejected(self):
        with pytest.raises(QuerySpecError):
            spec([("A", "B")], ("Z",))

    def test_full(self):
        s = spec([("A", "B"), ("B", "C")], ("A", "C")).full()
        assert set(s.output) == {"A", "B", "C"}


class TestClassify:
    def test_matrix(self):
        sh = classify_query(spec([("A", "B"), ("B", "C")], ("A", "C")))
        assert sh.variant is ShapeKind.MATRIX and sh.order == ("A", "B", "C")

    def test_star3(self):
        sh = classify_query(spec([("A1", "B"), ("A2", "B"), ("A3", "B")], ("A1", "A2", "A3")))
        assert sh.variant is ShapeKind.STAR and sh.k == 3 and sh.order[-1] == "B"

    def test_chain3(self):
        sh = classify_query(spec([("A", "B"), ("B", "C"), ("C", "D")], ("A", "D")))
        assert sh.variant is ShapeKind.CHAIN and sh.k == 3
        assert sh.order in (("A", "B", "C", "D"), ("D", "C", "B", "A"))

    def test_single_relation_full_is_acyclic(self):
        assert classify_query(spec([("A", "B")], ("A", "B"))).variant is ShapeKind.ACYCLIC

    def test_triangle_unsupported(self):
        sh = classify_query(spec([("A", "B"), ("B", "C"), ("A", "C")], ("A", "C")))
        assert sh.variant is ShapeKind.UNSUPPORTED

    def test_wide_schema_routes_to_acyclic(self):
        sh = classify_query(spec([("A", "B", "X"), ("B", "C")], ("A", "C")))
        assert sh.variant is ShapeKind.ACYCLIC

    def test_star_with_partial_output_is_acyclic(self):
        sh = classify_query(spec([("A1", "B"), ("A2", "B"), ("A3", "B")], ("A1", "A2")))
        assert sh.variant is ShapeKind.ACYCLIC

    def test_chain_with_inner_output_is_acyclic(self):
        sh = classify_query(spec([("A", "B"), ("B", "C"), ("C", "D")], ("A", "C")))
        assert sh.variant is ShapeKind.ACYCLIC

    @given(st.permutations(["A1", "A2", "A3", "A4"]), st.data())
    def test_star_invariant_under_renaming_and_reordering(self, names, data):
        centre = data.draw(st.sampled_from(["B", "Z", "hub"]))
        rename = dict(zip(["A1", "A2", "A3", "A4"], names))
        schemas = [(rename[a], centre) if data.draw(st.booleans()) else (centre, rename[a])
                   for a in ["A1", "A2", "A3", "A4"]]
        schemas = data.draw(st.permutations(schemas))
        sh = classify_query(spec(schemas, names))
        assert sh.variant is ShapeKind.STAR and sh.k == 4 and sh.order[-1] == centre

    @given(st.integers(2, 6), st.data())
    def test_chain_invariant_under_renaming_and_reordering(self, k, data):
        names = data.draw(st.permutations([f"X{i}" for i in range(k + 1)]))
        schemas = [(names[i], names[i + 1]) if data.draw(st.booleans()) else (names[i + 1], names[i])
                   for i in range(k)]
        schemas = data.draw(st.permutations(schemas))
        output = (names[-1], names[0]) if data.draw(st.booleans()) else (names[0], names[-1])
        sh = classify_query(spec(schemas, output))
        expected = ShapeKind.MATRIX if k == 2 else ShapeKind.CHAIN
        assert sh.variant is expected and sh.k == k

    def test_deterministic(self):
        s = spec([("A", "B"), ("B", "C"), ("C", "D")], ("A", "D"))
        assert classify_query(s) == classify_query(s)


class TestRho:
    def test_values(self):
        assert rho_star_closed_form(QueryShape(ShapeKind.STAR, 3)) == 3
        assert rho_star_closed_form(QueryShape(ShapeKind.CHAIN, 3)) == 2
        assert rho_star_closed_form(QueryShape(ShapeKind.MATRIX, 2)) == 2
        assert rho_star_closed_form(QueryShape(ShapeKind.CHAIN, 4)) == Fraction(3)

    def test_chain2_equals_matrix(self):
        assert rho_star_closed_form(QueryShape(ShapeKind.CHAIN, 2)) == rho_star_closed_form(
            QueryShape(ShapeKind.MATRIX, 2))

    def test_acyclic_has_no_closed_form(self):
        with pytest.raises(ShapeError):
            rho_star_closed_form(QueryShape(ShapeKind.ACYCLIC, 3))


class TestValidate:
    def test_ok(self):
        inst, s = m1()
        assert validate_instance(inst, s) == []
        check_instance(inst, s)

    def test_missing_relation(self):
        inst, s = m1()
        only = Instance(inst.relations[:1])
        assert "missing relation for schema {B,C}" in validate_instance(only, s)

    def test_duplicate_row(self):
        inst, s = m1()
        r = Relation(("A", "B"), np.array([[0, 1], [0, 1]]))
        bad = Instance((r, inst.relations[1]))
        probs = validate_instance(bad, s)
        assert any("duplicate row" in p for p in probs)
        with pytest.raises(ValidationError):
            check_instance(bad, s)

    def test_reports_all_violations(self):
        _, s = m1()
        r = Relation(("A", "B"), np.array([[0, 1], [0, 1]]))
        stray = Relation(("X", "Y"), np.zeros((0, 2), dtype=np.int64))
        probs = validate_instance(Instance((r, stray)), s)
        assert len(probs) == 3


class TestRelation:
    def test_reordered(self):
        r = Relation(("A", "B"), np.array([[1, 2], [3, 4]]))
        assert r.reordered(("B", "A")).tuples() == [(2, 1), (4, 3)]

    def test_immutable_rows(self):
        r = Relation(("A", "B"), np.array([[1, 2]]))
        with pytest.raises(ValueError):
            r.rows[0, 0] = 5

    def test_n_total(self):
        inst, _ = m1()
        assert inst.n_total == 7


class TestParams:
    @pytest.mark.parametrize("eps,delta", [(0, 0.1), (1, 0.1), (0.2, 0), (0.2, 1.5)])
    def test_bounds(self, eps, delta):
        with pytest.raises(ValueError):
            EstimatorParams(eps, delta)

    def test_ok(self):
        assert EstimatorParams(0.2, 0.1, seed=7).seed == 7
