//! External data formats: the model-spec and precoder-problem JSON schemas,
//! complex-matrix JSON, and the CSV layouts emitted by the pipelines.
//!
//! All numeric text output goes through [`fmt_f64`], which prints 17
//! significant digits (lossless for `f64`).

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CMat;
use crate::mc::{MomentEstimate, RateFit};
use crate::mimo::PrecoderProblem;
use crate::model::{EntryLaw, ModelSpec};

pub type C64 = Complex64;

/// 17 significant digits; round-trips every finite `f64` exactly.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Complex scalar as `{re, im}`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ComplexParts {
    pub re: f64,
    pub im: f64,
}

impl From<C64> for ComplexParts {
    fn from(z: C64) -> Self {
        ComplexParts { re: z.re, im: z.im }
    }
}

impl From<ComplexParts> for C64 {
    fn from(p: ComplexParts) -> Self {
        C64::new(p.re, p.im)
    }
}

/// JSON form of a complex matrix: either a structured shorthand carrying a
/// `kind` tag or dense row-major `re`/`im` arrays (`im` optional).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixJson {
    Structured(StructuredMatrix),
    Dense(DenseMatrix),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum StructuredMatrix {
    Zero,
    Diag {
        re: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        im: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseMatrix {
    pub re: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub im: Option<Vec<Vec<f64>>>,
}

impl MatrixJson {
    /// Materialize with the expected dimensions.
    pub fn to_matrix(&self, n_rows: usize, n_cols: usize) -> Result<CMat> {
        match self {
            MatrixJson::Structured(StructuredMatrix::Zero) => Ok(CMat::zeros(n_rows, n_cols)),
            MatrixJson::Structured(StructuredMatrix::Diag { re, im }) => {
                let len = n_rows.min(n_cols);
                if re.len() != len {
                    return Err(Error::InvalidSpec(format!(
                        "diag matrix: expected {len} diagonal values, got {}",
                        re.len()
                    )));
                }
                if let Some(im) = im {
                    if im.len() != len {
                        return Err(Error::InvalidSpec(
                            "diag matrix: re and im lengths differ".into(),
                        ));
                    }
                }
                let mut m = CMat::zeros(n_rows, n_cols);
                for i in 0..len {
                    let im_i = im.as_ref().map_or(0.0, |v| v[i]);
                    m[(i, i)] = C64::new(re[i], im_i);
                }
                Ok(m)
            }
            MatrixJson::Dense(dense) => {
                if dense.re.len() != n_rows {
                    return Err(Error::InvalidSpec(format!(
                        "dense matrix: expected {n_rows} rows, got {}",
                        dense.re.len()
                    )));
                }
                let mut m = CMat::zeros(n_rows, n_cols);
                for (i, row) in dense.re.iter().enumerate() {
                    if row.len() != n_cols {
                        return Err(Error::InvalidSpec(format!(
                            "dense matrix: row {i} has {} entries, expected {n_cols}",
                            row.len()
                        )));
                    }
                    for (j, &v) in row.iter().enumerate() {
                        m[(i, j)] = C64::new(v, 0.0);
                    }
                }
                if let Some(im) = &dense.im {
                    if im.len() != n_rows {
                        return Err(Error::InvalidSpec(
                            "dense matrix: im row count differs from re".into(),
                        ));
                    }
                    for (i, row) in im.iter().enumerate() {
                        if row.len() != n_cols {
                            return Err(Error::InvalidSpec(format!(
                                "dense matrix: im row {i} has {} entries, expected {n_cols}",
                                row.len()
                            )));
                        }
                        for (j, &v) in row.iter().enumerate() {
                            m[(i, j)].im = v;
                        }
                    }
                }
                Ok(m)
            }
        }
    }

    /// Dense JSON form of a matrix (row-major).
    pub fn from_matrix(m: &CMat) -> MatrixJson {
        if m.iter().all(|c| c.re == 0.0 && c.im == 0.0) {
            return MatrixJson::Structured(StructuredMatrix::Zero);
        }
        let re: Vec<Vec<f64>> = (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| m[(i, j)].re).collect())
            .collect();
        let has_im = m.iter().any(|c| c.im != 0.0);
        let im = has_im.then(|| {
            (0..m.nrows())
                .map(|i| (0..m.ncols()).map(|j| m[(i, j)].im).collect())
                .collect()
        });
        MatrixJson::Dense(DenseMatrix { re, im })
    }
}

/// JSON schema of a model spec.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpecJson {
    #[serde(rename = "N")]
    pub n_rows: usize,
    pub n: usize,
    pub d: Vec<f64>,
    pub d_tilde: Vec<f64>,
    #[serde(rename = "A")]
    pub a: MatrixJson,
    pub entry_law: String,
}

impl ModelSpecJson {
    pub fn to_spec(&self) -> Result<ModelSpec> {
        if self.d.len() != self.n_rows {
            return Err(Error::InvalidSpec(format!(
                "d: length {} does not match N = {}",
                self.d.len(),
                self.n_rows
            )));
        }
        if self.d_tilde.len() != self.n {
            return Err(Error::InvalidSpec(format!(
                "d_tilde: length {} does not match n = {}",
                self.d_tilde.len(),
                self.n
            )));
        }
        let a = self.a.to_matrix(self.n_rows, self.n)?;
        let law = EntryLaw::from_name(&self.entry_law)?;
        ModelSpec::new(self.d.clone(), self.d_tilde.clone(), a, law)
    }

    pub fn from_spec(spec: &ModelSpec) -> Self {
        ModelSpecJson {
            n_rows: spec.n_rows(),
            n: spec.n_cols(),
            d: spec.d().to_vec(),
            d_tilde: spec.d_tilde().to_vec(),
            a: MatrixJson::from_matrix(spec.a()),
            entry_law: spec.entry_law().name().to_string(),
        }
    }
}

pub fn spec_from_json(text: &str) -> Result<ModelSpec> {
    let parsed: ModelSpecJson = serde_json::from_str(text)
        .map_err(|e| Error::InvalidSpec(format!("spec JSON parse error: {e}")))?;
    parsed.to_spec()
}

pub fn spec_to_json(spec: &ModelSpec) -> String {
    serde_json::to_string_pretty(&ModelSpecJson::from_spec(spec)).expect("serializable")
}

/// JSON schema of a precoder problem.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrecoderProblemJson {
    #[serde(rename = "N")]
    pub n_rows: usize,
    pub n: usize,
    #[serde(rename = "B")]
    pub b: MatrixJson,
    #[serde(rename = "R")]
    pub r: MatrixJson,
    #[serde(rename = "R_tilde")]
    pub r_tilde: MatrixJson,
    pub a: f64,
}

impl PrecoderProblemJson {
    pub fn to_problem(&self) -> Result<PrecoderProblem> {
        let b = self.b.to_matrix(self.n_rows, self.n)?;
        let r = self.r.to_matrix(self.n_rows, self.n_rows)?;
        let r_tilde = self.r_tilde.to_matrix(self.n, self.n)?;
        PrecoderProblem::new(b, r, r_tilde, self.a)
    }

    pub fn from_problem(problem: &PrecoderProblem) -> Self {
        PrecoderProblemJson {
            n_rows: problem.n_rows(),
            n: problem.n_cols(),
            b: MatrixJson::from_matrix(problem.b()),
            r: MatrixJson::from_matrix(problem.r()),
            r_tilde: MatrixJson::from_matrix(problem.r_tilde()),
            a: problem.trace_budget(),
        }
    }
}

pub fn problem_from_json(text: &str) -> Result<PrecoderProblem> {
    let parsed: PrecoderProblemJson = serde_json::from_str(text)
        .map_err(|e| Error::InvalidSpec(format!("problem JSON parse error: {e}")))?;
    parsed.to_problem()
}

pub fn problem_to_json(problem: &PrecoderProblem) -> String {
    serde_json::to_string_pretty(&PrecoderProblemJson::from_problem(problem))
        .expect("serializable")
}

/// JSON form of a rate fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateFitJson {
    pub slope: f64,
    pub intercept: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n_grid: Vec<usize>,
}

impl From<&RateFit> for RateFitJson {
    fn from(fit: &RateFit) -> Self {
        RateFitJson {
            slope: fit.slope,
            intercept: fit.intercept,
            ci_lo: fit.slope_ci.0,
            ci_hi: fit.slope_ci.1,
            n_grid: fit.n_grid.clone(),
        }
    }
}

pub const STABILITY_CSV_HEADER: &str = "z_re,z_im,u1,u1t,v1,v1t,w1,w1t,det";

pub fn stability_csv_row(rep: &crate::equivalents::StabilityReport) -> String {
    [
        rep.z.re,
        rep.z.im,
        rep.u1,
        rep.u1_tilde,
        rep.v1,
        rep.v1_tilde,
        rep.w1,
        rep.w1_tilde,
        rep.det_i_minus_c1,
    ]
    .map(fmt_f64)
    .join(",")
}

pub const MOMENT_CSV_HEADER: &str = "n,p,z_re,z_im,mean_moment,std_error,replicates,seed";

pub fn moment_csv_row(e: &MomentEstimate) -> String {
    format!(
        "{},{},{},{},{},{},{},{}",
        e.n_cols,
        e.p,
        fmt_f64(e.z.re),
        fmt_f64(e.z.im),
        fmt_f64(e.mean_moment),
        fmt_f64(e.std_error),
        e.replicates,
        e.seed
    )
}

pub const SUBSPACE_CSV_HEADER: &str =
    "seed,N,n,r,u_kind,estimate,oracle,abs_err,nodes_per_edge,x_minus,x_plus,y";

/// One row of the subspace-estimation sweep.
#[derive(Debug, Clone)]
pub struct SubspaceRecord {
    pub seed: u64,
    pub n_rows: usize,
    pub n_cols: usize,
    pub rank: usize,
    pub u_kind: String,
    pub estimate: f64,
    pub oracle: f64,
    pub nodes_per_edge: usize,
    pub x_minus: f64,
    pub x_plus: f64,
    pub y: f64,
}

pub fn subspace_csv_row(r: &SubspaceRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{}",
        r.seed,
        r.n_rows,
        r.n_cols,
        r.rank,
        r.u_kind,
        fmt_f64(r.estimate),
        fmt_f64(r.oracle),
        fmt_f64((r.estimate - r.oracle).abs()),
        r.nodes_per_edge,
        fmt_f64(r.x_minus),
        fmt_f64(r.x_plus),
        fmt_f64(r.y)
    )
}

pub const OPTIMIZER_CSV_HEADER: &str = "iter,objective,trace_norm,step";

pub fn optimizer_csv_row(rec: &crate::mimo::IterationRecord) -> String {
    format!(
        "{},{},{},{}",
        rec.iter,
        fmt_f64(rec.objective),
        fmt_f64(rec.trace_norm),
        fmt_f64(rec.step)
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fmt_roundtrips() {
        for x in [0.1, -3.5e-7, 0.618033988749894848, 1e300, 0.0] {
            let s = fmt_f64(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back, x, "{s}");
        }
    }

    #[test]
    fn spec_json_roundtrip() {
        let a = crate::subspace::planted_low_rank(3, 4, &[2.0], 1).unwrap();
        let spec = ModelSpec::new(
            vec![1.0, 2.0, 0.5],
            vec![1.0; 4],
            a,
            EntryLaw::ComplexRademacher,
        )
        .unwrap();
        let text = spec_to_json(&spec);
        let back = spec_from_json(&text).unwrap();
        assert_eq!(back.n_rows(), 3);
        assert_eq!(back.n_cols(), 4);
        assert_eq!(back.d(), spec.d());
        assert_eq!(back.entry_law(), spec.entry_law());
        for i in 0..3 {
            for j in 0..4 {
                let x = spec.a()[(i, j)];
                let y = back.a()[(i, j)];
                assert_eq!(
                    (x.re.to_bits(), x.im.to_bits()),
                    (y.re.to_bits(), y.im.to_bits()),
                    "entry ({i},{j}): {x} vs {y}"
                );
            }
        }
    }

    #[test]
    fn spec_json_zero_and_diag_forms() {
        let text = r#"{
            "N": 2, "n": 3,
            "d": [1.0, 2.0],
            "d_tilde": [1.0, 1.0, 1.0],
            "A": {"kind": "zero"},
            "entry_law": "uniform-phase"
        }"#;
        let spec = spec_from_json(text).unwrap();
        assert!(spec.a_is_zero());

        let text = r#"{
            "N": 2, "n": 3,
            "d": [1.0, 2.0],
            "d_tilde": [1.0, 1.0, 1.0],
            "A": {"kind": "diag", "re": [3.0, 4.0], "im": [0.5, -0.5]},
            "entry_law": "circular-complex-gaussian"
        }"#;
        let spec = spec_from_json(text).unwrap();
        assert_eq!(spec.a()[(0, 0)], C64::new(3.0, 0.5));
        assert_eq!(spec.a()[(1, 1)], C64::new(4.0, -0.5));
        assert_eq!(spec.a()[(0, 1)], C64::new(0.0, 0.0));
    }

    #[test]
    fn spec_json_dense_form_and_errors() {
        let text = r#"{
            "N": 2, "n": 2,
            "d": [1.0, 1.0],
            "d_tilde": [1.0, 1.0],
            "A": {"re": [[1.0, 0.0], [0.0, 1.0]], "im": [[0.0, 2.0], [0.0, 0.0]]},
            "entry_law": "uniform-phase"
        }"#;
        let spec = spec_from_json(text).unwrap();
        assert_eq!(spec.a()[(0, 1)], C64::new(0.0, 2.0));

        let bad = r#"{
            "N": 2, "n": 2,
            "d": [1.0, -1.0],
            "d_tilde": [1.0, 1.0],
            "A": {"kind": "zero"},
            "entry_law": "uniform-phase"
        }"#;
        let err = spec_from_json(bad).unwrap_err().to_string();
        assert!(err.contains("d[1]"), "{err}");

        let unknown_law = r#"{
            "N": 1, "n": 1,
            "d": [1.0],
            "d_tilde": [1.0],
            "A": {"kind": "zero"},
            "entry_law": "bernoulli"
        }"#;
        assert!(spec_from_json(unknown_law).is_err());
    }

    #[test]
    fn problem_json_roundtrip() {
        let problem = PrecoderProblem::new(
            CMat::zeros(2, 3),
            CMat::identity(2, 2),
            CMat::identity(3, 3),
            1.5,
        )
        .unwrap();
        let text = problem_to_json(&problem);
        let back = problem_from_json(&text).unwrap();
        assert_eq!(back.n_rows(), 2);
        assert_eq!(back.n_cols(), 3);
        assert_eq!(back.trace_budget(), 1.5);
    }

    #[test]
    fn csv_rows_have_matching_arity() {
        let header_fields = STABILITY_CSV_HEADER.split(',').count();
        let rep = crate::equivalents::StabilityReport {
            z: C64::new(-1.0, 0.0),
            u1: 0.0,
            u1_tilde: 0.0,
            v1: 0.1,
            v1_tilde: 0.1,
            w1: 0.1,
            w1_tilde: 0.1,
            det_i_minus_c1: 0.9,
        };
        assert_eq!(stability_csv_row(&rep).split(',').count(), header_fields);

        let est = MomentEstimate {
            n_rows: 10,
            n_cols: 10,
            p: 1,
            z: C64::new(-1.0, 0.0),
            mean_moment: 0.5,
            std_error: 0.1,
            replicates: 4,
            seed: 7,
        };
        assert_eq!(
            moment_csv_row(&est).split(',').count(),
            MOMENT_CSV_HEADER.split(',').count()
        );
    }
}
