//! Euclidean embeddings of a chain's state graph: directed diffusion maps,
//! unweighted Laplacian eigenmaps, and the canonical count-scaled embedding.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ctmc::perturb::undirected_components;
use crate::ctmc::{default_eps, uniformise_sparse, GeneratorMatrix, StateLabel};
use crate::error::{GfaError, Result};
use crate::io::{read_json, write_json, Table};
use crate::linalg::{
    eigensolve_all, eigensolve_symmetric_with, CsrMatrix, EigenPairs, OperatorKind, SolverPath, SymmetricOperator,
    Which,
};

/// Tolerance on the unit diagonal of a similarity matrix.
const UNIT_DIAGONAL_TOL: f64 = 1e-12;

/// Nontrivial eigenvalues must stay this far from the excluded trivial one.
const TRIVIAL_GAP: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingMethod {
    DiffusionMap,
    LaplacianEigenmap,
    /// Species counts divided by the cap (concentration space).
    Canonical,
    /// Coordinates supplied by the caller.
    Custom,
}

impl EmbeddingMethod {
    fn is_spectral(self) -> bool {
        matches!(self, EmbeddingMethod::DiffusionMap | EmbeddingMethod::LaplacianEigenmap)
    }
}

/// `N × K` state coordinates with the spectrum they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    coords: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    method: EmbeddingMethod,
    eps: Option<f64>,
    diffusion_time: Option<f64>,
}

/// Sidecar record written next to the coordinate table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMeta {
    pub method: EmbeddingMethod,
    pub n_states: usize,
    pub dim: usize,
    #[serde(default)]
    pub eps: Option<f64>,
    #[serde(default)]
    pub diffusion_time: Option<f64>,
    pub eigenvalues: Vec<f64>,
}

impl Embedding {
    /// Validates and wraps coordinates. Spectral methods need one eigenvalue per
    /// column, sorted ascending, and `K < N`.
    pub fn new(
        coords: DMatrix<f64>,
        eigenvalues: Vec<f64>,
        method: EmbeddingMethod,
        eps: Option<f64>,
    ) -> Result<Self> {
        let (n, k) = coords.shape();
        if n == 0 || k == 0 {
            return Err(GfaError::invalid("embedding needs at least one state and one dimension"));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(GfaError::invalid("embedding coordinates must be finite"));
        }
        if method.is_spectral() {
            if k >= n {
                return Err(GfaError::invalid(format!("embedding dimension {k} must be below {n} states")));
            }
            if eigenvalues.len() != k {
                return Err(GfaError::DimensionMismatch(format!(
                    "{} eigenvalues for {k} coordinates",
                    eigenvalues.len()
                )));
            }
            if eigenvalues.windows(2).any(|w| w[0] > w[1]) {
                return Err(GfaError::invalid("eigenvalues must be sorted ascending"));
            }
        }
        Ok(Embedding {
            coords,
            eigenvalues,
            method,
            eps,
            diffusion_time: None,
        })
    }

    /// Caller-provided coordinates, e.g. an eigenvector basis or the identity.
    pub fn custom(coords: DMatrix<f64>) -> Result<Self> {
        Self::new(coords, Vec::new(), EmbeddingMethod::Custom, None)
    }

    pub fn coords(&self) -> &DMatrix<f64> {
        &self.coords
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn method(&self) -> EmbeddingMethod {
        self.method
    }

    pub fn eps(&self) -> Option<f64> {
        self.eps
    }

    pub fn diffusion_time(&self) -> Option<f64> {
        self.diffusion_time
    }

    pub fn n_states(&self) -> usize {
        self.coords.nrows()
    }

    pub fn dim(&self) -> usize {
        self.coords.ncols()
    }

    /// Coordinates of state `i`.
    pub fn point(&self, i: usize) -> DVector<f64> {
        self.coords.row(i).transpose()
    }

    /// Diagonal of the axis-aligned bounding box of all embedded states.
    pub fn bbox_diagonal(&self) -> f64 {
        self.coords
            .column_iter()
            .map(|c| {
                let span = c.max() - c.min();
                span * span
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn meta(&self) -> EmbeddingMeta {
        EmbeddingMeta {
            method: self.method,
            n_states: self.n_states(),
            dim: self.dim(),
            eps: self.eps,
            diffusion_time: self.diffusion_time,
            eigenvalues: self.eigenvalues.clone(),
        }
    }

    /// Table with header `state_index, y_1..y_K`.
    pub fn to_table(&self) -> Table {
        let mut header = vec!["state_index".to_string()];
        header.extend((1..=self.dim()).map(|c| format!("y_{c}")));
        let mut t = Table::new(header);
        for i in 0..self.n_states() {
            let mut row = vec![i as f64];
            row.extend(self.coords.row(i).iter());
            t.push(row);
        }
        t
    }

    pub fn from_parts(table: &Table, meta: &EmbeddingMeta) -> Result<Self> {
        let k = table.header.len().saturating_sub(1);
        if k != meta.dim || table.rows.len() != meta.n_states {
            return Err(GfaError::DimensionMismatch(format!(
                "table is {}x{k}, metadata says {}x{}",
                table.rows.len(),
                meta.n_states,
                meta.dim
            )));
        }
        for (i, row) in table.rows.iter().enumerate() {
            if row[0] != i as f64 {
                return Err(GfaError::Parse(format!("row {i} has state_index {}", row[0])));
            }
        }
        let coords = DMatrix::from_fn(meta.n_states, k, |i, c| table.rows[i][c + 1]);
        let mut e = Self::new(coords, meta.eigenvalues.clone(), meta.method, meta.eps)?;
        e.diffusion_time = meta.diffusion_time;
        Ok(e)
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        self.to_table().write(&dir.join(format!("{stem}.csv")))?;
        write_json(&dir.join(format!("{stem}.json")), &self.meta())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let table = Table::read(&dir.join(format!("{stem}.csv")))?;
        let meta: EmbeddingMeta = read_json(&dir.join(format!("{stem}.json")))?;
        Self::from_parts(&table, &meta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DiffusionMapOptions {
    /// Scales coordinate `k` by `exp(−λ_k t)` when set.
    pub diffusion_time: Option<f64>,
    pub solver: SolverPath,
}

/// Diffusion-map embedding of a dense similarity matrix `W`.
pub fn diffusion_map(w: &DMatrix<f64>, k: usize) -> Result<Embedding> {
    if !w.is_square() {
        return Err(GfaError::DimensionMismatch("similarity matrix must be square".into()));
    }
    diffusion_map_sparse(&CsrMatrix::from_dense(w), k, DiffusionMapOptions::default())
}

/// Diffusion-map embedding of a sparse similarity matrix `W`.
///
/// Builds `S = (W + Wᵀ)/2`, `V = P̃⁻¹ S P̃⁻¹` with `P̃ = diag(S 1)`, and
/// `H = D̃^{-1/2} V D̃^{-1/2}` with `D̃ = diag(V 1)`. `H` is similar to a
/// stochastic matrix, so its largest eigenvalue 1 is the trivial one; the
/// embedding uses the next `k` eigenvectors and reports `1 − μ` (the spectrum
/// of the normalized Laplacian `I − H`) in ascending order.
pub fn diffusion_map_sparse(w: &CsrMatrix, k: usize, opts: DiffusionMapOptions) -> Result<Embedding> {
    let n = w.nrows();
    if w.ncols() != n {
        return Err(GfaError::DimensionMismatch("similarity matrix must be square".into()));
    }
    check_dim(k, n)?;
    for i in 0..n {
        if (w.get(i, i) - 1.0).abs() > UNIT_DIAGONAL_TOL {
            return Err(GfaError::invalid(format!("W[{i},{i}] = {} but must be 1", w.get(i, i))));
        }
    }
    if let Some((i, j, v)) = w.iter().find(|&(_, _, v)| !(v >= 0.0) || !v.is_finite()) {
        return Err(GfaError::invalid(format!("W[{i},{j}] = {v} must be finite and >= 0")));
    }
    check_connected(n, w.iter().filter(|&(i, j, _)| i != j).map(|(i, j, _)| (i, j)))?;

    let s = CsrMatrix::from_triplets(n, n, w.iter().flat_map(|(i, j, v)| [(i, j, 0.5 * v), (j, i, 0.5 * v)]));
    let p: Vec<f64> = (0..n).map(|i| s.row(i).1.iter().sum()).collect();
    let v = CsrMatrix::from_triplets(n, n, s.iter().map(|(i, j, x)| (i, j, x / (p[i] * p[j]))));
    let d: Vec<f64> = (0..n).map(|i| v.row(i).1.iter().sum()).collect();
    let h = CsrMatrix::from_triplets(n, n, v.iter().map(|(i, j, x)| (i, j, x / (d[i] * d[j]).sqrt())));
    let op = SymmetricOperator::sparse(h, OperatorKind::HSs1)?;

    let pairs = solve_extreme(&op, k + 1, Which::Largest, opts.solver)?;
    let trivial = pairs.values[0];
    let values: Vec<f64> = pairs.values[1..].iter().map(|mu| 1.0 - mu).collect();
    if let Some(mu) = pairs.values[1..].iter().find(|mu| (trivial - *mu).abs() <= TRIVIAL_GAP) {
        return Err(GfaError::NonConvergence {
            residual: (trivial - mu).abs(),
        });
    }
    let mut coords = pairs.vectors.columns(1, k).into_owned();
    if let Some(t) = opts.diffusion_time {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(GfaError::invalid("diffusion time must be finite and >= 0"));
        }
        for (c, lam) in values.iter().enumerate() {
            coords.column_mut(c).scale_mut((-lam * t).exp());
        }
    }
    let mut e = Embedding::new(coords, values, EmbeddingMethod::DiffusionMap, None)?;
    e.diffusion_time = opts.diffusion_time;
    Ok(e)
}

/// Uniformises `q` (with [`default_eps`] unless `eps` is given) and embeds the
/// result by diffusion maps, recording `eps` in the embedding.
pub fn diffusion_map_from_generator(
    q: &GeneratorMatrix,
    k: usize,
    eps: Option<f64>,
    opts: DiffusionMapOptions,
) -> Result<Embedding> {
    let eps = eps.unwrap_or_else(|| default_eps(q));
    let w = uniformise_sparse(q, eps)?;
    let mut e = diffusion_map_sparse(&w, k, opts)?;
    e.eps = Some(eps);
    Ok(e)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaplacianNormalization {
    /// Generalized problem `L y = λ D y`.
    #[default]
    Generalized,
    /// Plain `L y = λ y`; its eigenvectors on grids are exactly separable cosines.
    Combinatorial,
}

/// Laplacian-eigenmap embedding of the unweighted transition graph: an edge
/// joins `i` and `j` whenever a transition exists in either direction.
pub fn laplacian_eigenmap(q: &GeneratorMatrix, k: usize) -> Result<Embedding> {
    laplacian_eigenmap_with(q, k, LaplacianNormalization::Generalized, SolverPath::Auto)
}

pub fn laplacian_eigenmap_with(
    q: &GeneratorMatrix,
    k: usize,
    norm: LaplacianNormalization,
    solver: SolverPath,
) -> Result<Embedding> {
    let n = q.n_states();
    check_dim(k, n)?;
    let adj = CsrMatrix::from_triplets(
        n,
        n,
        q.entries().flat_map(|(i, j, _)| [(i, j, 1.0), (j, i, 1.0)]),
    );
    // Duplicate directions summed to 2; collapse back to a binary adjacency.
    let adj = CsrMatrix::from_triplets(n, n, adj.iter().map(|(i, j, _)| (i, j, 1.0)));
    check_connected(n, adj.iter().map(|(i, j, _)| (i, j)))?;
    let deg: Vec<f64> = (0..n).map(|i| adj.row(i).0.len() as f64).collect();

    let (op, kind) = match norm {
        LaplacianNormalization::Combinatorial => {
            let trip = adj
                .iter()
                .map(|(i, j, _)| (i, j, -1.0))
                .chain((0..n).map(|i| (i, i, deg[i])));
            (CsrMatrix::from_triplets(n, n, trip), OperatorKind::UnweightedLaplacian)
        }
        LaplacianNormalization::Generalized => {
            let trip = adj
                .iter()
                .map(|(i, j, _)| (i, j, -1.0 / (deg[i] * deg[j]).sqrt()))
                .chain((0..n).map(|i| (i, i, 1.0)));
            (CsrMatrix::from_triplets(n, n, trip), OperatorKind::NormalizedLaplacian)
        }
    };
    let op = SymmetricOperator::sparse(op, kind)?;
    let pairs = solve_extreme(&op, k + 1, Which::Smallest, solver)?;
    if let Some(lam) = pairs.values[1..].iter().find(|l| (*l - pairs.values[0]).abs() <= TRIVIAL_GAP) {
        return Err(GfaError::NonConvergence { residual: lam.abs() });
    }
    let mut coords = pairs.vectors.columns(1, k).into_owned();
    if norm == LaplacianNormalization::Generalized {
        // z = D^{1/2} y
        for (i, d) in deg.iter().enumerate() {
            coords.row_mut(i).scale_mut(1.0 / d.sqrt());
        }
    }
    Embedding::new(coords, pairs.values[1..].to_vec(), EmbeddingMethod::LaplacianEigenmap, None)
}

/// Concentration-space embedding `u / cap` of labelled population states.
pub fn canonical_embedding(labels: &[StateLabel], cap: u32) -> Result<Embedding> {
    let Some(first) = labels.first() else {
        return Err(GfaError::invalid("no states to embed"));
    };
    let k = first.coords.len();
    if labels.iter().any(|l| l.coords.len() != k) {
        return Err(GfaError::DimensionMismatch("state labels differ in length".into()));
    }
    let scale = 1.0 / f64::from(cap.max(1));
    let coords = DMatrix::from_fn(labels.len(), k, |i, c| f64::from(labels[i].coords[c]) * scale);
    Embedding::new(coords, Vec::new(), EmbeddingMethod::Canonical, None)
}

fn check_dim(k: usize, n: usize) -> Result<()> {
    if k == 0 || k >= n {
        return Err(GfaError::invalid(format!(
            "embedding dimension K = {k} must satisfy 1 <= K < N = {n}"
        )));
    }
    Ok(())
}

fn check_connected(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<()> {
    let components = undirected_components(n, edges);
    if components > 1 {
        return Err(GfaError::Disconnected { components });
    }
    Ok(())
}

/// `m` extreme pairs; falls back to the full dense decomposition when `m`
/// reaches the operator size.
fn solve_extreme(op: &SymmetricOperator, m: usize, which: Which, solver: SolverPath) -> Result<EigenPairs> {
    if m < op.dim() {
        return eigensolve_symmetric_with(op, m, which, solver);
    }
    let mut all = eigensolve_all(op)?;
    if which == Which::Largest {
        all.values.reverse();
        let n = all.vectors.ncols();
        all.vectors = DMatrix::from_fn(all.vectors.nrows(), n, |i, c| all.vectors[(i, n - 1 - c)]);
    }
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctmc::models::birth_death;

    fn path_generator(n: usize) -> GeneratorMatrix {
        GeneratorMatrix::from_rates(n, (0..n - 1).flat_map(|i| [(i, i + 1, 1.0), (i + 1, i, 1.0)])).unwrap()
    }

    #[test]
    fn complete_graph_has_equal_distances() {
        let w = DMatrix::from_element(3, 3, 1.0);
        let e = diffusion_map(&w, 1).unwrap();
        let y = e.coords();
        assert!(y.column(0).sum().abs() < 1e-12);
        // k = 2 spans the whole complement of the trivial vector
        let e2 = diffusion_map(&w, 2).unwrap();
        let d = |a: usize, b: usize| (e2.point(a) - e2.point(b)).norm();
        assert!((d(0, 1) - d(1, 2)).abs() < 1e-12);
        assert!((d(0, 1) - d(0, 2)).abs() < 1e-12);
    }

    #[test]
    fn path_diffusion_map_is_monotone() {
        let w = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
        let e = diffusion_map(&w, 1).unwrap();
        let y = e.coords().column(0);
        assert!((y[0] < y[1] && y[1] < y[2]) || (y[0] > y[1] && y[1] > y[2]), "{y}");
        assert!(e.eigenvalues()[0] > TRIVIAL_GAP);
    }

    #[test]
    fn rejects_bad_similarities() {
        let w = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert!(matches!(diffusion_map(&w, 1), Err(GfaError::Disconnected { components: 2 })));
        let w = DMatrix::from_row_slice(2, 2, &[0.5, 1.0, 1.0, 1.0]);
        assert!(diffusion_map(&w, 1).is_err());
        let w = DMatrix::from_element(3, 3, 1.0);
        assert!(diffusion_map(&w, 3).is_err());
        assert!(diffusion_map(&w, 0).is_err());
    }

    #[test]
    fn three_node_path_eigenmap_is_a_cosine() {
        let q = path_generator(3);
        for norm in [LaplacianNormalization::Generalized, LaplacianNormalization::Combinatorial] {
            let e = laplacian_eigenmap_with(&q, 1, norm, SolverPath::Auto).unwrap();
            let y = e.coords().column(0);
            let s = 3f64.sqrt() / 2.0;
            let scale = y[0] / s;
            assert!(y[1].abs() < 1e-12);
            assert!((y[2] + s * scale).abs() < 1e-12);
        }
    }

    #[test]
    fn star_leaves_coincide() {
        let q = GeneratorMatrix::from_rates(4, (1..4).flat_map(|i| [(0, i, 1.0), (i, 0, 2.0)])).unwrap();
        let e = laplacian_eigenmap(&q, 1).unwrap();
        // The nontrivial spectrum is degenerate; any vector in it may mix leaves,
        // so check the full-dimension distances instead.
        let e3 = laplacian_eigenmap(&q, 3).unwrap();
        let d = |a: usize, b: usize| (e3.point(a) - e3.point(b)).norm();
        assert!((d(0, 1) - d(0, 2)).abs() < 1e-10 && (d(0, 2) - d(0, 3)).abs() < 1e-10);
        assert_eq!(e.dim(), 1);
    }

    #[test]
    fn birth_death_grid_axes_are_orthogonal() {
        let c = birth_death(8).unwrap();
        let e = diffusion_map_from_generator(&c.generator, 2, None, DiffusionMapOptions::default()).unwrap();
        assert_eq!(e.eps(), Some(default_eps(&c.generator)));
        // Moving along species A changes the embedding in a direction
        // orthogonal to moving along species B, near the grid centre.
        let at = |a: u32, b: u32| e.point(c.index_of(&[a, b]).unwrap());
        let da = at(5, 4) - at(3, 4);
        let db = at(4, 5) - at(4, 3);
        let cos = da.dot(&db) / (da.norm() * db.norm());
        assert!(cos.abs() < 0.05, "cos = {cos}");
    }

    #[test]
    fn sparse_and_dense_paths_agree() {
        let q = birth_death(6).unwrap().generator;
        let a = laplacian_eigenmap_with(&q, 3, LaplacianNormalization::Combinatorial, SolverPath::Dense).unwrap();
        let b = laplacian_eigenmap_with(&q, 3, LaplacianNormalization::Combinatorial, SolverPath::Lanczos).unwrap();
        for (x, y) in a.eigenvalues().iter().zip(b.eigenvalues()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn diffusion_time_scales_columns() {
        let q = path_generator(5);
        let plain = diffusion_map_from_generator(&q, 2, None, DiffusionMapOptions::default()).unwrap();
        let opts = DiffusionMapOptions {
            diffusion_time: Some(3.0),
            ..Default::default()
        };
        let scaled = diffusion_map_from_generator(&q, 2, None, opts).unwrap();
        for c in 0..2 {
            let f = (-plain.eigenvalues()[c] * 3.0).exp();
            assert!((scaled.coords().column(c) - plain.coords().column(c) * f).amax() < 1e-12);
        }
    }

    #[test]
    fn save_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let q = path_generator(6);
        let e = diffusion_map_from_generator(&q, 2, Some(0.1), DiffusionMapOptions::default()).unwrap();
        e.save(dir.path(), "embedding").unwrap();
        let text = std::fs::read_to_string(dir.path().join("embedding.csv")).unwrap();
        assert!(text.starts_with("state_index,y_1,y_2\n"));
        assert_eq!(Embedding::load(dir.path(), "embedding").unwrap(), e);
    }

    #[test]
    fn canonical_scales_by_cap() {
        let c = birth_death(4).unwrap();
        let e = canonical_embedding(&c.labels, c.cap).unwrap();
        let i = c.index_of(&[2, 3]).unwrap();
        assert_eq!(e.point(i).as_slice(), &[0.5, 0.75]);
    }
}
