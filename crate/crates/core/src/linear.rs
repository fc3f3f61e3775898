//! Linear descriptor systems `E x' = A x`, `y = C x`.

use std::collections::HashSet;
use std::path::Path;

use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DaeModel, ModelFile};
use crate::ranktest::{
    numerical_rank, partitioned_rank, tolerance_from_norm, EvalPoint, OneFull, RankReport, StopReason, Verdict,
};
use crate::sim::Trajectory;

/// Nonsingularity guard on condition numbers.
pub const COND_LIMIT: f64 = 1e12;
/// Relative rank tolerance of the PBH sweep. Eigenvalues of defective
/// pencils are only accurate to about the square root of machine epsilon.
pub const PBH_RTOL: f64 = 1e-8;

/// A matrix given inline or as a path to a header-less CSV file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSource {
    Literal(Vec<Vec<f64>>),
    Path(String),
}

/// On-disk form of a linear model.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub struct LinearFile {
    #[serde(default)]
    pub name: String,
    #[serde(rename = "E")]
    pub e: Option<MatrixSource>,
    #[serde(rename = "A")]
    pub a: Option<MatrixSource>,
    #[serde(rename = "C")]
    pub c: Option<MatrixSource>,
    #[serde(default)]
    pub partition: Option<[usize; 2]>,
    /// Entries of `A` fixed at zero, named `a{i}{j}` (1-based).
    #[serde(default)]
    pub structural_zeros: Vec<String>,
    /// Free entries of `A`; defaults to every entry not listed as a structural zero.
    #[serde(default)]
    pub theta_mask: Option<Vec<Vec<bool>>>,
    #[serde(default)]
    pub initial_differential: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearDae {
    pub name: String,
    pub e: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub partition: Option<(usize, usize)>,
    /// Free entries of `A` in column-wise vec order (`j * n + i` for `A[i][j]`).
    mask: Vec<bool>,
    pub initial_differential: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Index1Preconditions {
    pub index1: bool,
    pub a21_full: bool,
}

fn rows_to_matrix(what: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dimension(format!("matrix {what} has ragged rows")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidModel(format!("matrix {what} has non-finite entries")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn read_csv_matrix(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_path(path)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row = record
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| Error::InvalidModel(format!("{}: {s:?}: {e}", path.display()))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Name of `A[i][j]` (0-based indices).
pub fn entry_name(n: usize, i: usize, j: usize) -> String {
    if n < 10 {
        format!("a{}{}", i + 1, j + 1)
    } else {
        format!("a{}_{}", i + 1, j + 1)
    }
}

fn parse_entry(n: usize, name: &str) -> Option<(usize, usize)> {
    (0..n).flat_map(|j| (0..n).map(move |i| (i, j))).find(|&(i, j)| entry_name(n, i, j) == name)
}

fn cond(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 1.0;
    }
    let s = m.clone().svd(false, false).singular_values;
    let (max, min) = (s.max(), s.min());
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

impl LinearDae {
    pub fn new(e: DMatrix<f64>, a: DMatrix<f64>, c: DMatrix<f64>, partition: Option<(usize, usize)>) -> Result<LinearDae> {
        let n = a.nrows();
        if a.ncols() != n || e.shape() != (n, n) || c.ncols() != n {
            return Err(Error::Dimension(format!(
                "E is {:?}, A is {:?}, C is {:?}; expected n x n, n x n, q x n",
                e.shape(),
                a.shape(),
                c.shape()
            )));
        }
        if let Some((n1, n2)) = partition {
            if n1 + n2 != n {
                return Err(Error::Dimension(format!("partition ({n1}, {n2}) does not sum to {n}")));
            }
            let expected = DMatrix::from_fn(n, n, |i, j| if i == j && i < n1 { 1.0 } else { 0.0 });
            if e != expected {
                return Err(Error::InvalidModel("partitioned systems need E = diag(I, 0)".into()));
            }
        }
        Ok(LinearDae {
            name: String::new(),
            e,
            a,
            c,
            partition,
            mask: vec![true; n * n],
            initial_differential: None,
        })
    }

    pub fn from_file(file: &LinearFile, base: Option<&Path>) -> Result<LinearDae> {
        let load = |what: &str, src: &Option<MatrixSource>| -> Result<Option<DMatrix<f64>>> {
            match src {
                None => Ok(None),
                Some(MatrixSource::Literal(rows)) => rows_to_matrix(what, rows).map(Some),
                Some(MatrixSource::Path(p)) => {
                    let path = base.map_or_else(|| Path::new(p).to_path_buf(), |b| b.join(p));
                    rows_to_matrix(what, &read_csv_matrix(&path)?).map(Some)
                }
            }
        };
        let a = load("A", &file.a)?.ok_or_else(|| Error::InvalidModel("linear model needs A".into()))?;
        let n = a.nrows();
        let e = load("E", &file.e)?.unwrap_or_else(|| DMatrix::identity(n, n));
        let c = load("C", &file.c)?.unwrap_or_else(|| DMatrix::identity(n, n));
        let mut d = LinearDae::new(e, a, c, file.partition.map(|[a, b]| (a, b)))?;
        d.name = file.name.clone();
        if let Some(mask) = &file.theta_mask {
            let m = rows_to_matrix("theta_mask", &mask.iter().map(|r| r.iter().map(|&b| b as u8 as f64).collect()).collect::<Vec<_>>())?;
            if m.shape() != (n, n) {
                return Err(Error::Dimension(format!("theta_mask is {:?}, expected ({n}, {n})", m.shape())));
            }
            d.mask = (0..n * n).map(|k| m[(k % n, k / n)] != 0.0).collect();
        }
        for z in &file.structural_zeros {
            let (i, j) = parse_entry(n, z).ok_or_else(|| Error::UnknownParameter(z.clone()))?;
            if d.a[(i, j)] != 0.0 {
                return Err(Error::InvalidModel(format!("structural zero {z} has value {}", d.a[(i, j)])));
            }
            d.mask[j * n + i] = false;
        }
        if let Some(x) = &file.initial_differential {
            let expected = d.partition.map_or(n, |p| p.0);
            if x.len() != expected {
                return Err(Error::Dimension(format!("initial_differential has {} entries, expected {expected}", x.len())));
            }
        }
        d.initial_differential = file.initial_differential.clone();
        Ok(d)
    }

    pub fn from_json(text: &str) -> Result<LinearDae> {
        let file: LinearFile = serde_json::from_str(text)?;
        LinearDae::from_file(&file, None)
    }

    /// Loads a JSON file whose matrices may be CSV paths relative to it.
    pub fn from_path(path: &Path) -> Result<LinearDae> {
        let text = std::fs::read_to_string(path)?;
        let file: LinearFile = serde_json::from_str(&text)?;
        LinearDae::from_file(&file, path.parent())
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn q(&self) -> usize {
        self.c.nrows()
    }

    pub fn is_free(&self, i: usize, j: usize) -> bool {
        self.mask[j * self.n() + i]
    }

    /// Free entries in column-wise vec order as `(i, j)`.
    pub fn free_entries(&self) -> Vec<(usize, usize)> {
        let n = self.n();
        (0..n * n).filter(|&k| self.mask[k]).map(|k| (k % n, k / n)).collect()
    }

    pub fn p(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn theta_names(&self) -> Vec<String> {
        self.free_entries().into_iter().map(|(i, j)| entry_name(self.n(), i, j)).collect()
    }

    pub fn theta_values(&self) -> Vec<f64> {
        self.free_entries().into_iter().map(|(i, j)| self.a[(i, j)]).collect()
    }

    /// Restricts the free entries to `names`.
    pub fn with_theta<S: AsRef<str>>(&self, names: &[S]) -> Result<LinearDae> {
        let n = self.n();
        let mut mask = vec![false; n * n];
        for s in names {
            let (i, j) = parse_entry(n, s.as_ref()).ok_or_else(|| Error::UnknownParameter(s.as_ref().to_string()))?;
            mask[j * n + i] = true;
        }
        Ok(LinearDae { mask, ..self.clone() })
    }

    pub fn with_output(&self, c: DMatrix<f64>) -> Result<LinearDae> {
        if c.ncols() != self.n() {
            return Err(Error::Dimension(format!("C has {} columns, expected {}", c.ncols(), self.n())));
        }
        Ok(LinearDae { c, ..self.clone() })
    }

    /// Same `A` and `C` with `E = I` and no partition.
    pub fn as_ode(&self) -> LinearDae {
        let n = self.n();
        LinearDae { e: DMatrix::identity(n, n), partition: None, ..self.clone() }
    }

    fn blocks(&self) -> Result<(usize, usize)> {
        self.partition.ok_or_else(|| Error::Usage("the system has no (n1, n2) partition".into()))
    }

    /// `(A_c, G)` with `x1' = A_c x1` and `x2 = G x1`; for nonsingular `E` without
    /// a partition, `A_c = E^-1 A` and `G` is empty.
    pub fn reduction(&self) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let n = self.n();
        match self.partition {
            Some((n1, n2)) => {
                let a22 = self.a.view((n1, n1), (n2, n2)).into_owned();
                if cond(&a22) >= COND_LIMIT {
                    return Err(Error::SingularJacobian { iteration: 0 });
                }
                let a21 = self.a.view((n1, 0), (n2, n1)).into_owned();
                let g = -a22.lu().solve(&a21).ok_or(Error::SingularJacobian { iteration: 0 })?;
                let ac = self.a.view((0, 0), (n1, n1)) + self.a.view((0, n1), (n1, n2)) * &g;
                Ok((ac, g))
            }
            None => {
                if cond(&self.e) >= COND_LIMIT {
                    return Err(Error::SingularE);
                }
                let ac = self.e.clone().lu().solve(&self.a).ok_or(Error::SingularE)?;
                Ok((ac, DMatrix::zeros(0, n)))
            }
        }
    }

    /// `[x, x', ..., x^(sigma)]` of the consistent solution through `x1`.
    pub fn consistent_levels(&self, x1: &[f64], sigma: usize) -> Result<Vec<Vec<f64>>> {
        let (ac, g) = self.reduction()?;
        if x1.len() != ac.nrows() {
            return Err(Error::Dimension(format!("x1 has {} entries, expected {}", x1.len(), ac.nrows())));
        }
        let mut v = DVector::from_column_slice(x1);
        let mut out = Vec::with_capacity(sigma + 1);
        for k in 0..=sigma {
            if k > 0 {
                v = &ac * v;
            }
            let x2 = &g * &v;
            out.push(v.iter().chain(x2.iter()).copied().collect());
        }
        Ok(out)
    }

    pub fn point(&self, x1: &[f64], sigma: usize) -> Result<EvalPoint> {
        Ok(EvalPoint { theta: self.theta_values(), derivatives: self.consistent_levels(x1, sigma)?, time: 0.0 })
    }

    /// Exact flow sampled every `dt`, with derivative arrays up to `sigma`.
    pub fn trajectory(&self, x1_0: &[f64], t_span: (f64, f64), dt: f64, sigma: usize) -> Result<Trajectory> {
        let (ac, _) = self.reduction()?;
        if !(dt > 0.0 && t_span.1 > t_span.0) {
            return Err(Error::Usage(format!("invalid time span {t_span:?} or step {dt}")));
        }
        let steps = ((t_span.1 - t_span.0) / dt).round().max(1.0) as usize;
        let h = (t_span.1 - t_span.0) / steps as f64;
        let phi = (&ac * h).exp();
        let mut x1 = DVector::from_column_slice(x1_0);
        let mut tr = Trajectory {
            state_names: (1..=self.n()).map(|i| format!("x{i}")).collect(),
            dt: h,
            derivative_arrays: Some(Vec::new()),
            ..Default::default()
        };
        let arrays = tr.derivative_arrays.as_mut().expect("set above");
        for i in 0..=steps {
            if i > 0 {
                x1 = &phi * x1;
            }
            let mut levels = self.consistent_levels(x1.as_slice(), sigma)?;
            let x = levels.remove(0);
            tr.times.push(t_span.0 + i as f64 * h);
            let n1 = self.partition.map_or(self.n(), |p| p.0);
            let ax = &self.a * DVector::from_column_slice(&x);
            tr.consistency_residuals.push(ax.rows(n1, self.n() - n1).iter().fold(0.0, |m, v| m.max(v.abs())));
            tr.states.push(x);
            arrays.push(levels);
        }
        Ok(tr)
    }

    /// The same system as a symbolic model with one parameter per free or
    /// nonzero entry of `A`.
    pub fn to_dae_model(&self) -> Result<DaeModel> {
        let n = self.n();
        let x: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
        let mut parameters = indexmap::IndexMap::new();
        for j in 0..n {
            for i in 0..n {
                if self.is_free(i, j) || self.a[(i, j)] != 0.0 {
                    parameters.insert(entry_name(n, i, j), Some(self.a[(i, j)]));
                }
            }
        }
        let row = |i: usize| -> String {
            let terms: Vec<String> = (0..n)
                .filter(|&j| parameters.contains_key(&entry_name(n, i, j)))
                .map(|j| format!("{}*{}", entry_name(n, i, j), x[j]))
                .collect();
            if terms.is_empty() {
                "0".into()
            } else {
                terms.join(" + ")
            }
        };
        let lin = |coeffs: Vec<(f64, &str)>| -> String {
            let terms: Vec<String> = coeffs.into_iter().filter(|(c, _)| *c != 0.0).map(|(c, v)| format!("({c:?})*{v}")).collect();
            if terms.is_empty() {
                "0".into()
            } else {
                terms.join(" + ")
            }
        };
        let rows: Vec<String> = (0..n).map(row).collect();
        let outputs = (0..self.q()).map(|r| lin((0..n).map(|j| (self.c[(r, j)], x[j].as_str())).collect())).collect();
        let mut file = ModelFile { name: self.name.clone(), outputs, ..Default::default() };
        match self.partition {
            Some((n1, _)) => {
                file.states_differential = x[..n1].to_vec();
                file.states_algebraic = x[n1..].to_vec();
                file.f1 = Some(rows[..n1].to_vec());
                file.f2 = Some(rows[n1..].to_vec());
            }
            None if self.e == DMatrix::identity(n, n) => {
                file.states_differential = x.clone();
                file.f1 = Some(rows);
                file.f2 = Some(Vec::new());
            }
            None => {
                file.states_differential = x.clone();
                let residual = |i: usize| {
                    let e_terms: Vec<String> = (0..n)
                        .filter(|&j| self.e[(i, j)] != 0.0)
                        .map(|j| format!("({:?})*{}'", self.e[(i, j)], x[j]))
                        .collect();
                    if e_terms.is_empty() {
                        rows[i].clone()
                    } else {
                        format!("{} - ({})", rows[i], e_terms.join(" + "))
                    }
                };
                file.implicit = Some((0..n).map(residual).collect());
            }
        }
        file.parameters = parameters;
        DaeModel::from_file(&file)
    }
}

/// The banded block observability matrix with `levels` rows of `[A -E]` and `C`.
pub fn build_block_o(d: &LinearDae, levels: usize) -> DMatrix<f64> {
    let (n, q) = (d.n(), d.q());
    let mut o = DMatrix::zeros(levels * (n + q), (levels + 1) * n);
    for k in 0..levels {
        o.view_mut((k * n, k * n), (n, n)).copy_from(&d.a);
        o.view_mut((k * n, (k + 1) * n), (n, n)).copy_from(&(-&d.e));
        o.view_mut((levels * n + k * q, k * n), (q, n)).copy_from(&d.c);
    }
    o
}

/// Block-matrix R-observability test with `levels` levels (`n` by default).
pub fn block_o_observable(d: &LinearDae, levels: Option<usize>) -> Result<OneFull> {
    let levels = levels.unwrap_or(d.n()).max(1);
    let o = build_block_o(d, levels);
    let (rank, rank_right, ..) = partitioned_rank(&o, d.n(), levels, d.n(), None)?;
    Ok(OneFull { one_full: rank == d.n() + rank_right, rank, rank_right })
}

fn complex_rank(m: &DMatrix<Complex<f64>>, rtol: f64) -> usize {
    let s = m.clone().svd(false, false).singular_values;
    let tol = rtol * s.max().max(1.0);
    s.iter().filter(|&&v| v > tol).count()
}

/// Finite generalized eigenvalues of `(E, A)`, i.e. roots of `det(lambda E - A)`.
pub fn finite_eigenvalues(d: &LinearDae) -> Result<Vec<Complex<f64>>> {
    let n = d.n();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let scale = d.a.amax().max(d.e.amax()).max(1.0);
    for _ in 0..8 {
        let alpha = scale * rng.gen_range(0.5..1.5) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let shifted = &d.e * alpha - &d.a;
        if cond(&shifted) >= COND_LIMIT {
            continue;
        }
        let k = shifted.lu().solve(&d.e).ok_or(Error::SingularPencil)?;
        let knorm = k.norm().max(f64::MIN_POSITIVE);
        let ev = k.complex_eigenvalues();
        return Ok(ev
            .iter()
            .filter(|kappa| kappa.norm() > 1e-10 * knorm)
            .map(|kappa| Complex::new(alpha, 0.0) - Complex::new(1.0, 0.0) / kappa)
            .collect());
    }
    Err(Error::SingularPencil)
}

fn pencil_rank(d: &LinearDae, lambda: Complex<f64>) -> usize {
    let (n, q) = (d.n(), d.q());
    let m = DMatrix::from_fn(n + q, n, |i, j| {
        if i < n {
            lambda * d.e[(i, j)] - Complex::new(d.a[(i, j)], 0.0)
        } else {
            Complex::new(d.c[(i - n, j)], 0.0)
        }
    });
    complex_rank(&m, PBH_RTOL)
}

/// PBH rank condition at every finite generalized eigenvalue plus one random probe.
pub fn pbh_r_observable(d: &LinearDae) -> Result<bool> {
    let eig = finite_eigenvalues(d)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0xb0b);
    let probe = Complex::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
    Ok(eig.into_iter().chain(std::iter::once(probe)).all(|l| pencil_rank(d, l) == d.n()))
}

/// Rank of `[C; C A'; ...; C A'^(n-1)]` with `A' = E^-1 A`.
pub fn kalman_rank(d: &LinearDae) -> Result<usize> {
    let n = d.n();
    if cond(&d.e) >= COND_LIMIT {
        return Err(Error::SingularE);
    }
    let ap = d.e.clone().lu().solve(&d.a).ok_or(Error::SingularE)?;
    let q = d.q();
    let mut k = DMatrix::zeros(n * q, n);
    let mut block = d.c.clone();
    for i in 0..n {
        k.view_mut((i * q, 0), (q, n)).copy_from(&block);
        block = &block * &ap;
    }
    let tol = tolerance_from_norm(k.clone().svd(false, false).singular_values.max(), n, n);
    numerical_rank(&k, tol)
}

pub fn kalman_observable(d: &LinearDae) -> Result<bool> {
    Ok(kalman_rank(d)? == d.n())
}

/// `d/dtheta` of the stacked `A(theta) x^(k)`, `k = 0..mu`, with `mu + 1 = derivatives.len()`.
pub fn build_i11(d: &LinearDae, derivatives: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = d.n();
    if let Some(v) = derivatives.iter().find(|v| v.len() != n) {
        return Err(Error::Dimension(format!("derivative vector has {} entries, expected {n}", v.len())));
    }
    let free = d.free_entries();
    let mut m = DMatrix::zeros(n * derivatives.len(), free.len());
    for (k, x) in derivatives.iter().enumerate() {
        for (col, &(i, j)) in free.iter().enumerate() {
            m[(k * n + i, col)] = x[j];
        }
    }
    Ok(m)
}

/// The concise identifiability matrix at `mu = nu`, columns `(theta | x, ..., x^(mu+1))`.
pub fn concise_identifiability_matrix(d: &LinearDae, pt: &EvalPoint, mu: usize) -> Result<DMatrix<f64>> {
    let (n, q, p) = (d.n(), d.q(), d.p());
    let sigma = mu + 1;
    if pt.derivatives.len() < sigma + 1 {
        return Err(Error::MissingDerivatives { needed: sigma, have: pt.order() });
    }
    let i11 = build_i11(d, &pt.derivatives[..=mu])?;
    let eye = |r: usize| DMatrix::<f64>::identity(r, r);
    let mut delta1 = DMatrix::zeros(sigma, sigma + 1);
    delta1.view_mut((0, 0), (sigma, sigma)).copy_from(&eye(sigma));
    let mut delta2 = DMatrix::zeros(sigma, sigma + 1);
    delta2.view_mut((0, 1), (sigma, sigma)).copy_from(&eye(sigma));
    let top = kron(&delta1, &d.a) - kron(&delta2, &d.e);
    let bottom = kron(&delta1, &d.c);
    let rows = sigma * n + sigma * q;
    let mut m = DMatrix::zeros(rows, p + (sigma + 1) * n);
    m.view_mut((0, 0), (sigma * n, p)).copy_from(&i11);
    m.view_mut((0, p), (sigma * n, (sigma + 1) * n)).copy_from(&top);
    m.view_mut((sigma * n, p), (sigma * q, (sigma + 1) * n)).copy_from(&bottom);
    Ok(m)
}

/// Rank condition of the concise matrix at fixed `mu = nu`.
pub fn linear_identifiability(d: &LinearDae, pt: &EvalPoint, mu: usize, tol: Option<f64>) -> Result<RankReport> {
    let m = concise_identifiability_matrix(d, pt, mu)?;
    let (n, p, sigma) = (d.n(), d.p(), mu + 1);
    let (rank_full, rank_right, tolerance, margin, ..) = partitioned_rank(&m, p, sigma, n, tol)?;
    let required = p + rank_right;
    Ok(RankReport {
        test: "linear-identifiability".into(),
        verdict: if rank_full == required { Verdict::Satisfied } else { Verdict::NotSatisfied },
        rank_full,
        rank_right,
        required,
        deficit: required.saturating_sub(rank_full),
        mu,
        nu: mu,
        sigma,
        n,
        p,
        tolerance,
        margin,
        ill_conditioned: margin.is_some_and(|r| (1.0..=10.0).contains(&r)),
        stop: StopReason::FixedOrder,
        singular_values: None,
        singular_values_right: None,
        point: pt.clone(),
    })
}

/// Tries `mu = 0, 1, ...` up to `max_mu` (default `n`) and stops at the first success.
pub fn linear_identifiability_search(d: &LinearDae, pt: &EvalPoint, max_mu: Option<usize>, tol: Option<f64>) -> Result<RankReport> {
    let max_mu = max_mu.unwrap_or(d.n());
    let mut last = None;
    for mu in 0..=max_mu {
        let mut r = linear_identifiability(d, pt, mu, tol)?;
        if r.verdict.is_satisfied() {
            r.stop = StopReason::Satisfied;
            return Ok(r);
        }
        r.stop = StopReason::MaxOrder;
        last = Some(r);
    }
    Ok(last.expect("loop runs at least once"))
}

/// Full-state shortcut: `rank I11 = p` with `mu + 1` derivative levels.
pub fn fullstate_shortcut(d: &LinearDae, pt: &EvalPoint, mu: usize) -> Result<bool> {
    let n = d.n();
    if d.c != DMatrix::identity(n, n) {
        return Err(Error::Usage("the full-state shortcut needs C = I".into()));
    }
    if pt.derivatives.len() < mu + 1 {
        return Err(Error::MissingDerivatives { needed: mu, have: pt.order() });
    }
    let m = build_i11(d, &pt.derivatives[..=mu])?;
    let norm = if m.is_empty() { 0.0 } else { m.clone().svd(false, false).singular_values.max() };
    Ok(numerical_rank(&m, tolerance_from_norm(norm, mu + 1, n))? == d.p())
}

/// Index-1 and full-rank-coupling checks of the partitioned system.
pub fn index1_preconditions(d: &LinearDae) -> Result<Index1Preconditions> {
    let (n1, n2) = d.blocks()?;
    let a22 = d.a.view((n1, n1), (n2, n2)).into_owned();
    let a21 = d.a.view((n1, 0), (n2, n1)).into_owned();
    let index1 = cond(&a22) < COND_LIMIT;
    let a21_full = if a21.is_empty() {
        true
    } else {
        let s = a21.clone().svd(false, false).singular_values;
        numerical_rank(&a21, tolerance_from_norm(s.max(), 1, n1 + n2))? == n1.min(n2)
    };
    Ok(Index1Preconditions { index1, a21_full })
}

/// Column indices of `vec(A_ij)` blocks for the partitioned system.
pub fn block_entries(d: &LinearDae, blocks: &[(usize, usize)]) -> Result<Vec<String>> {
    let (n1, _) = d.blocks()?;
    let n = d.n();
    let range = |b: usize| if b == 1 { 0..n1 } else { n1..n };
    let mut set = HashSet::new();
    for &(bi, bj) in blocks {
        for j in range(bj) {
            for i in range(bi) {
                set.insert((i, j));
            }
        }
    }
    Ok((0..n * n).map(|k| (k % n, k / n)).filter(|e| set.contains(e)).map(|(i, j)| entry_name(n, i, j)).collect())
}
