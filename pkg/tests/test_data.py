"""Ingestion, validation, and parameter-container behavior."""

import math

import numpy as np
import pytest

from modevar.data import (
    ColumnSchema,
    DataError,
    Dataset,
    Design,
    Engine,
    ModelSpec,
    ParameterVector,
    RespondentRecord,
    dataset_report,
    infer_design,
    load_dataset,
    write_dataset,
)


def _write(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


BASIC = ColumnSchema(outcome="y", mode="m", interviewer="iw")


class TestRecordAndDataset:
    def test_record_rejects_nonbinary_outcome(self):
        with pytest.raises(DataError):
            RespondentRecord(outcome=2, mode=1, interviewer="A")
        with pytest.raises(DataError):
            RespondentRecord(outcome=0, mode=5, interviewer="A")

    def test_dataset_needs_both_modes(self):
        recs = (RespondentRecord(1, 1, "A"), RespondentRecord(0, 1, "B"))
        with pytest.raises(DataError, match="TEL"):
            Dataset(recs)

    def test_dataset_rejects_ragged_covariates(self):
        recs = (RespondentRecord(1, 1, "A", (0.5,)),
                RespondentRecord(0, 0, "B"))
        with pytest.raises(DataError, match="covariates"):
            Dataset(recs, covariate_names=("x",))

    def test_nested_design_forbids_shared_interviewer(self):
        recs = (RespondentRecord(1, 1, "A"), RespondentRecord(0, 0, "A"),
                RespondentRecord(1, 0, "B"))
        with pytest.raises(DataError, match="both modes"):
            Dataset(recs, design=Design.NESTED)
        # the same records are fine under the crossed design
        ds = Dataset(recs, design=Design.CROSSED)
        assert ds.n == 3

    def test_interviewers_first_appearance_order(self):
        recs = (RespondentRecord(1, 1, "C"), RespondentRecord(0, 0, "A"),
                RespondentRecord(1, 1, "C"), RespondentRecord(0, 0, "B"))
        ds = Dataset(recs)
        assert ds.interviewers == ("C", "A", "B")
        assert ds.mode_counts() == {1: 2, 0: 2}

    def test_n_dropped_excluded_from_equality(self):
        recs = (RespondentRecord(1, 1, "A"), RespondentRecord(0, 0, "B"))
        assert Dataset(recs, n_dropped=0) == Dataset(recs, n_dropped=7)


class TestLoadDataset:
    def test_round_trip(self, tmp_path):
        recs = tuple(
            RespondentRecord(y, m, f"I{j}", (0.25 * j, float(y)))
            for j, (y, m) in enumerate([(1, 1), (0, 1), (1, 0), (0, 0)])
        )
        ds = Dataset(recs, covariate_names=("a", "b"))
        path = str(tmp_path / "rt.csv")
        write_dataset(ds, path)
        back = load_dataset(path, ColumnSchema("outcome", "mode", "interviewer",
                                               ("a", "b")))
        assert back == ds

    def test_missing_cells_dropped_and_counted(self, tmp_path):
        path = _write(tmp_path, "y,m,iw\n1,1,A\n,1,A\n0,0,B\nNA,0,B\n1,0,B\n")
        ds = load_dataset(path, BASIC)
        assert ds.n == 3
        assert ds.n_dropped == 2

    def test_missing_value_in_unmapped_column_kept(self, tmp_path):
        path = _write(tmp_path, "y,m,iw,junk\n1,1,A,NA\n0,0,B,\n")
        ds = load_dataset(path, BASIC)
        assert ds.n == 2 and ds.n_dropped == 0

    def test_header_missing_column(self, tmp_path):
        path = _write(tmp_path, "y,m\n1,1\n")
        with pytest.raises(DataError, match="'iw' not found"):
            load_dataset(path, BASIC)

    def test_field_count_mismatch_reports_line(self, tmp_path):
        path = _write(tmp_path, "y,m,iw\n1,1,A\n1,1\n")
        with pytest.raises(DataError, match="line 3"):
            load_dataset(path, BASIC)

    def test_bad_binary_reports_line_and_column(self, tmp_path):
        path = _write(tmp_path, "y,m,iw\n1,1,A\n2,0,B\n")
        with pytest.raises(DataError, match=r"line 3: column 'y'"):
            load_dataset(path, BASIC)

    def test_empty_file(self, tmp_path):
        path = _write(tmp_path, "")
        with pytest.raises(DataError, match="empty"):
            load_dataset(path, BASIC)

    def test_all_rows_missing(self, tmp_path):
        path = _write(tmp_path, "y,m,iw\nNA,1,A\n")
        with pytest.raises(DataError, match="no complete rows"):
            load_dataset(path, BASIC)

    def test_numeric_covariate_passthrough(self, tmp_path):
        path = _write(tmp_path, "y,m,iw,age\n1,1,A,30.5\n0,0,B,41\n")
        ds = load_dataset(path, ColumnSchema("y", "m", "iw", ("age",)))
        assert ds.covariate_names == ("age",)
        assert ds.records[0].covariates == (30.5,)

    def test_non_finite_numeric_covariate_reports_line(self, tmp_path):
        # "nan" parses as a float, so the column is numeric, not categorical
        path = _write(tmp_path, "y,m,iw,age\n1,1,A,30.5\n0,0,B,nan\n")
        with pytest.raises(DataError, match=r"line 3: non-finite .* 'age'"):
            load_dataset(path, ColumnSchema("y", "m", "iw", ("age",)))
        path = _write(tmp_path, "y,m,iw,age\n1,1,A,inf\n0,0,B,41\n")
        with pytest.raises(DataError, match="line 2"):
            load_dataset(path, ColumnSchema("y", "m", "iw", ("age",)))

    def test_categorical_dummy_coding(self, tmp_path):
        # reference level is the first in sorted order ("high")
        path = _write(
            tmp_path,
            "y,m,iw,edu\n1,1,A,low\n0,1,A,mid\n1,0,B,high\n0,0,B,low\n")
        ds = load_dataset(path, ColumnSchema("y", "m", "iw", ("edu",)))
        assert ds.covariate_names == ("edu=low", "edu=mid")
        rows = [r.covariates for r in ds.records]
        assert (1.0, 0.0) in rows and (0.0, 1.0) in rows and (0.0, 0.0) in rows
        for row in rows:
            assert sum(row) <= 1.0

    def test_categorical_triggered_by_single_nonnumeric(self, tmp_path):
        # one stray word makes the whole column categorical
        path = _write(tmp_path, "y,m,iw,x\n1,1,A,1.5\n0,0,B,two\n")
        ds = load_dataset(path, ColumnSchema("y", "m", "iw", ("x",)))
        assert ds.covariate_names == ("x=two",)

    def test_design_inferred(self, tmp_path):
        nested = _write(tmp_path, "y,m,iw\n1,1,A\n0,0,B\n", "n.csv")
        crossed = _write(tmp_path, "y,m,iw\n1,1,A\n0,0,A\n1,0,B\n", "c.csv")
        assert load_dataset(nested, BASIC).design is Design.NESTED
        assert load_dataset(crossed, BASIC).design is Design.CROSSED

    def test_explicit_nested_rejects_crossed_data(self, tmp_path):
        path = _write(tmp_path, "y,m,iw\n1,1,A\n0,0,A\n1,0,B\n")
        with pytest.raises(DataError, match="both modes"):
            load_dataset(path, BASIC, design=Design.NESTED)

    def test_infer_design_function(self):
        recs = (RespondentRecord(1, 1, "A"), RespondentRecord(0, 0, "A"),
                RespondentRecord(1, 0, "B"))
        ds = Dataset(recs, design=Design.CROSSED)
        assert infer_design(ds) is Design.CROSSED


class TestModelSpec:
    def test_fixed_rho_requires_crossed(self):
        with pytest.raises(DataError, match="crossed"):
            ModelSpec(design=Design.NESTED, fixed_rho=0.3)

    def test_fixed_rho_open_interval(self):
        with pytest.raises(DataError):
            ModelSpec(design=Design.CROSSED, fixed_rho=1.0)
        spec = ModelSpec(design=Design.CROSSED, fixed_rho=0.0)
        assert spec.fixed_rho == 0.0

    def test_engine_values(self):
        assert Engine("ml") is Engine.LIKELIHOOD
        assert Engine("mcmc") is Engine.MCMC


class TestParameterVector:
    def test_natural_scale_properties(self):
        p = ParameterVector(beta0=0.1, beta1=0.5, lambda_f=math.log(0.2),
                            lambda_t=math.log(0.1), zeta=math.atanh(0.5))
        assert p.var_f == pytest.approx(0.2)
        assert p.var_t == pytest.approx(0.1)
        assert p.rho == pytest.approx(0.5)
        assert p.alpha == pytest.approx(0.5 * math.log(2.0))

    def test_nested_has_no_rho(self):
        p = ParameterVector(beta0=0.0, beta1=0.0)
        assert p.rho is None and p.zeta is None

    def test_array_round_trip_crossed(self):
        p = ParameterVector(beta0=0.1, beta1=-0.2, gamma=(0.3, 0.4),
                            lambda_f=-1.0, lambda_t=-2.0, zeta=0.25)
        q = ParameterVector.from_array(p.to_array(), n_gamma=2, crossed=True)
        assert q == p

    def test_array_round_trip_fixed_zeta(self):
        theta = np.array([0.1, -0.2, -1.0, -2.0])
        p = ParameterVector.from_array(theta, n_gamma=0, crossed=True,
                                       fixed_zeta=0.7)
        assert p.zeta == 0.7
        # fixed zeta is excluded from the free vector
        assert len(p.to_array()) == 5

    def test_from_array_length_check(self):
        with pytest.raises(DataError, match="expected 4"):
            ParameterVector.from_array([0.0] * 5, n_gamma=0, crossed=False)


def test_dataset_report_mentions_counts():
    recs = (RespondentRecord(1, 1, "A"), RespondentRecord(0, 0, "B"),
            RespondentRecord(1, 0, "B"))
    text = dataset_report(Dataset(recs))
    assert "records: 3" in text
    assert "records FTF: 1" in text
    assert "interviewers TEL: 1" in text
    assert "design: nested" in text
