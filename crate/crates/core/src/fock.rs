//! Truncated Fock-space linear algebra.
//!
//! Operators and density matrices are dense `(n_max + 1) x (n_max + 1)`
//! complex matrices. Superoperators act on column-stacked density matrices,
//! so the matrix element `rho[(i, j)]` sits at vector index `i + j * dim`
//! (the same layout as `nalgebra`'s column-major storage). They are kept in
//! compressed sparse-row form: every generator in this crate is a sum of
//! number-shifting sandwiches, and its dense `dim^2 x dim^2` form would not
//! fit in memory at the truncations the steady-state checks need.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub type C64 = Complex64;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Relative singular-value threshold below which a direction counts as null.
const NULL_REL_TOL: f64 = 1e-9;
/// Absolute bound on `|gen(rho_ss)|_max` accepted from the null-space solve.
const RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationConfig {
    n_max: usize,
    tail_tol: f64,
}

impl TruncationConfig {
    pub fn new(n_max: usize, tail_tol: f64) -> Result<Self> {
        if n_max < 1 {
            return Err(Error::InvalidParameter("n_max must be at least 1".into()));
        }
        if !(tail_tol > 0.0 && tail_tol < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "tail_tol must lie in (0, 1), got {tail_tol}"
            )));
        }
        Ok(Self { n_max, tail_tol })
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn dim(&self) -> usize {
        self.n_max + 1
    }

    pub fn tail_tol(&self) -> f64 {
        self.tail_tol
    }

    /// Errors when the population of the highest retained level exceeds `tail_tol`.
    pub fn check_tail(&self, rho: &DensityMatrix) -> Result<()> {
        let mass = rho.population(self.n_max);
        if mass >= self.tail_tol {
            return Err(Error::TailViolation {
                n_max: self.n_max,
                mass,
                tail_tol: self.tail_tol,
            });
        }
        Ok(())
    }
}

fn check_square_finite(m: &DMatrix<C64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let z = m[(i, j)];
            if !(z.re.is_finite() && z.im.is_finite()) {
                return Err(Error::NonFinite { level: i });
            }
        }
    }
    Ok(())
}

/// A linear operator on the truncated Fock space.
#[derive(Debug, Clone, PartialEq)]
pub struct FockOperator(DMatrix<C64>);

impl FockOperator {
    pub fn from_matrix(m: DMatrix<C64>) -> Result<Self> {
        check_square_finite(&m)?;
        Ok(Self(m))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(DMatrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        Self(DMatrix::identity(dim, dim))
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let n = values.len();
        Self(DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                C64::new(values[i], 0.0)
            } else {
                ZERO
            }
        }))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.0
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.0[(row, col)]
    }

    pub fn adjoint(&self) -> Self {
        Self(self.0.adjoint())
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self(self.0.map(|z| z * factor))
    }

    pub fn compose(&self, rhs: &FockOperator) -> Self {
        Self(&self.0 * &rhs.0)
    }

    pub fn add(&self, rhs: &FockOperator) -> Self {
        Self(&self.0 + &rhs.0)
    }

    pub fn max_abs_diff(&self, rhs: &FockOperator) -> f64 {
        (&self.0 - &rhs.0).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// `sum_i |<i|A|n>|^2`, i.e. `<n|A^dag A|n>`.
    pub fn column_norm_sqr(&self, n: usize) -> f64 {
        self.0.column(n).iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|z| *z == ZERO)
    }
}

/// A density matrix on the truncated Fock space.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix(DMatrix<C64>);

impl DensityMatrix {
    /// Accepts any square, finite, Hermitian (to 1e-10) matrix. Positivity and
    /// normalization are not enforced here.
    pub fn from_matrix(m: DMatrix<C64>) -> Result<Self> {
        check_square_finite(&m)?;
        let skew = (&m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if skew > 1e-10 {
            return Err(Error::InvalidParameter(format!(
                "density matrix is not Hermitian (max skew {skew:e})"
            )));
        }
        Ok(Self(m))
    }

    pub fn fock(level: usize, dim: usize) -> Result<Self> {
        if level >= dim {
            return Err(Error::InvalidParameter(format!(
                "Fock level {level} outside truncated space of dimension {dim}"
            )));
        }
        let mut m = DMatrix::zeros(dim, dim);
        m[(level, level)] = ONE;
        Ok(Self(m))
    }

    pub fn from_populations(pops: &[f64]) -> Result<Self> {
        if let Some(level) = pops.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite { level });
        }
        Ok(Self(FockOperator::diagonal(pops).into_matrix()))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn trace(&self) -> C64 {
        self.0.trace()
    }

    pub fn population(&self, n: usize) -> f64 {
        self.0[(n, n)].re
    }

    pub fn populations(&self) -> Vec<f64> {
        (0..self.dim()).map(|n| self.population(n)).collect()
    }

    pub fn is_diagonal(&self, tol: f64) -> bool {
        let d = self.dim();
        (0..d).all(|j| (0..d).all(|i| i == j || self.0[(i, j)].norm() <= tol))
    }

    pub fn expectation(&self, op: &FockOperator) -> C64 {
        (&op.0 * &self.0).trace()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.0
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Hermitian part rescaled to unit trace.
    pub fn normalized(&self) -> Result<Self> {
        let herm = (&self.0 + self.0.adjoint()) * C64::new(0.5, 0.0);
        let tr = herm.trace().re;
        if tr.abs() < 1e-300 {
            return Err(Error::InvalidParameter("density matrix has zero trace".into()));
        }
        Ok(Self(herm / C64::new(tr, 0.0)))
    }

    pub fn mix(weights_and_states: &[(f64, &DensityMatrix)]) -> Result<Self> {
        let first = weights_and_states
            .first()
            .ok_or_else(|| Error::InvalidParameter("empty mixture".into()))?;
        let dim = first.1.dim();
        let mut m = DMatrix::zeros(dim, dim);
        for (w, rho) in weights_and_states {
            if rho.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: rho.dim(),
                });
            }
            m += &rho.0 * C64::new(*w, 0.0);
        }
        Ok(Self(m))
    }
}

/// Annihilation, creation and number operators `(a, a_dag, N)`.
pub fn ladder_operators(trunc: TruncationConfig) -> (FockOperator, FockOperator, FockOperator) {
    let d = trunc.dim();
    let a = DMatrix::from_fn(d, d, |i, j| {
        if j == i + 1 {
            C64::new((j as f64).sqrt(), 0.0)
        } else {
            ZERO
        }
    });
    let a_dag = a.adjoint();
    let n_op = &a_dag * &a;
    (FockOperator(a), FockOperator(a_dag), FockOperator(n_op))
}

/// Diagonal operator `f(N)` on levels `0..=n_max`.
pub fn diag_number_function(f: impl Fn(usize) -> f64, trunc: TruncationConfig) -> Result<FockOperator> {
    let values: Vec<f64> = (0..trunc.dim()).map(f).collect();
    if let Some(level) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { level });
    }
    Ok(FockOperator::diagonal(&values))
}

/// `sin(theta sqrt(n)) / sqrt(n)`, continued to `theta` at `n = 0`.
pub fn sin_sqrt_over_sqrt(theta: f64, n: usize) -> f64 {
    if n == 0 {
        theta
    } else {
        let r = (n as f64).sqrt();
        (theta * r).sin() / r
    }
}

/// Trace distance `0.5 * ||rho1 - rho2||_1`.
pub fn trace_distance(rho1: &DensityMatrix, rho2: &DensityMatrix) -> Result<f64> {
    if rho1.dim() != rho2.dim() {
        return Err(Error::DimensionMismatch {
            expected: rho1.dim(),
            found: rho2.dim(),
        });
    }
    let diff = &rho1.0 - &rho2.0;
    Ok(0.5 * diff.singular_values().iter().sum::<f64>())
}

/// Sparse (CSR) superoperator on column-stacked density matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Superoperator {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
}

impl Superoperator {
    fn from_triplets(dim: usize, mut triplets: Vec<(usize, usize, C64)>) -> Self {
        let size = dim * dim;
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; size + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<C64> = Vec::with_capacity(triplets.len());
        let mut rows = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            if rows.last() == Some(&r) && cols.last() == Some(&c) {
                *vals.last_mut().unwrap() += v;
            } else {
                rows.push(r);
                cols.push(c);
                vals.push(v);
            }
        }
        let mut keep_cols = Vec::with_capacity(cols.len());
        let mut keep_vals = Vec::with_capacity(vals.len());
        for ((r, c), v) in rows.into_iter().zip(cols).zip(vals) {
            if v != ZERO {
                row_ptr[r + 1] += 1;
                keep_cols.push(c);
                keep_vals.push(v);
            }
        }
        for r in 0..size {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            dim,
            row_ptr,
            cols: keep_cols,
            vals: keep_vals,
        }
    }

    fn triplets(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.size()).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (r, self.cols[k], self.vals[k]))
        })
    }

    pub fn zero(dim: usize) -> Self {
        Self::from_triplets(dim, Vec::new())
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_triplets(dim, (0..dim * dim).map(|i| (i, i, ONE)).collect())
    }

    /// The map `rho -> left * rho * right`.
    pub fn sandwich(left: &FockOperator, right: &FockOperator) -> Result<Self> {
        let d = left.dim();
        if right.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: right.dim(),
            });
        }
        let nz = |m: &DMatrix<C64>| -> Vec<(usize, usize, C64)> {
            let mut out = Vec::new();
            for j in 0..d {
                for i in 0..d {
                    let z = m[(i, j)];
                    if z != ZERO {
                        out.push((i, j, z));
                    }
                }
            }
            out
        };
        let a = nz(left.matrix());
        let b = nz(right.matrix());
        let mut triplets = Vec::with_capacity(a.len() * b.len());
        // (A rho B)_{ij} = sum_{kl} A_ik rho_kl B_lj
        for &(i, k, av) in &a {
            for &(l, j, bv) in &b {
                triplets.push((i + j * d, k + l * d, av * bv));
            }
        }
        Ok(Self::from_triplets(d, triplets))
    }

    /// Lindblad dissipator `rho -> L rho L^dag - (L^dag L rho + rho L^dag L) / 2`.
    pub fn dissipator(l: &FockOperator) -> Result<Self> {
        let d = l.dim();
        let id = FockOperator::identity(d);
        let l_dag = l.adjoint();
        let ldl = l_dag.compose(l).scale(0.5);
        let jump = Self::sandwich(l, &l_dag)?;
        let left = Self::sandwich(&ldl, &id)?;
        let right = Self::sandwich(&id, &ldl)?;
        Ok(jump.sub(&left).sub(&right))
    }

    /// Unitary part `rho -> -i [H, rho]`.
    pub fn hamiltonian(h: &FockOperator) -> Result<Self> {
        let id = FockOperator::identity(h.dim());
        let hl = Self::sandwich(h, &id)?;
        let hr = Self::sandwich(&id, h)?;
        Ok(hl.sub(&hr).scale_complex(C64::new(0.0, -1.0)))
    }

    /// Hilbert-space dimension.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Side length of the superoperator matrix (`dim^2`).
    pub fn size(&self) -> usize {
        self.dim * self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        let range = self.row_ptr[row]..self.row_ptr[row + 1];
        match self.cols[range.clone()].binary_search(&col) {
            Ok(k) => self.vals[range.start + k],
            Err(_) => ZERO,
        }
    }

    pub fn add(&self, rhs: &Superoperator) -> Self {
        assert_eq!(self.dim, rhs.dim, "superoperator dimension mismatch");
        Self::from_triplets(self.dim, self.triplets().chain(rhs.triplets()).collect())
    }

    pub fn sub(&self, rhs: &Superoperator) -> Self {
        self.add(&rhs.scale(-1.0))
    }

    pub fn scale(&self, factor: f64) -> Self {
        self.scale_complex(C64::new(factor, 0.0))
    }

    pub fn scale_complex(&self, factor: C64) -> Self {
        let mut out = self.clone();
        out.vals.iter_mut().for_each(|v| *v *= factor);
        if factor == ZERO {
            return Self::zero(self.dim);
        }
        out
    }

    pub fn apply_vec(&self, v: &[C64]) -> Vec<C64> {
        (0..self.size())
            .map(|r| {
                (self.row_ptr[r]..self.row_ptr[r + 1])
                    .map(|k| self.vals[k] * v[self.cols[k]])
                    .sum()
            })
            .collect()
    }

    pub fn apply(&self, rho: &DMatrix<C64>) -> DMatrix<C64> {
        let out = self.apply_vec(rho.as_slice());
        DMatrix::from_column_slice(self.dim, self.dim, &out)
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let mut m = DMatrix::zeros(self.size(), self.size());
        for (r, c, v) in self.triplets() {
            m[(r, c)] = v;
        }
        m
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, rhs: &Superoperator) -> f64 {
        self.sub(rhs).max_abs()
    }

    /// `max_c |sum_i G[(i,i), c]|`: zero for a trace-annihilating generator.
    pub fn trace_annihilation_residual(&self) -> f64 {
        let mut col_sums = vec![ZERO; self.size()];
        for i in 0..self.dim {
            let r = i + i * self.dim;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                col_sums[self.cols[k]] += self.vals[k];
            }
        }
        col_sums.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Groups of vector indices that the superoperator never mixes. Each group
    /// is sorted; groups are ordered by their smallest index.
    pub fn invariant_blocks(&self) -> Vec<Vec<usize>> {
        let size = self.size();
        let mut parent: Vec<usize> = (0..size).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for (r, c, _) in self.triplets() {
            let (a, b) = (find(&mut parent, r), find(&mut parent, c));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
        let mut slot = vec![usize::MAX; size];
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for i in 0..size {
            let root = find(&mut parent, i);
            if slot[root] == usize::MAX {
                slot[root] = groups.len();
                groups.push(Vec::new());
            }
            groups[slot[root]].push(i);
        }
        groups
    }

    fn dense_block(&self, group: &[usize], local: &mut [usize]) -> DMatrix<C64> {
        for (li, &g) in group.iter().enumerate() {
            local[g] = li;
        }
        let n = group.len();
        let mut m = DMatrix::zeros(n, n);
        for (li, &r) in group.iter().enumerate() {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                m[(li, local[self.cols[k]])] = self.vals[k];
            }
        }
        m
    }

    /// Dense matrices of the invariant blocks, paired with their index groups.
    pub fn block_decomposition(&self) -> Vec<(Vec<usize>, DMatrix<C64>)> {
        let mut local = vec![usize::MAX; self.size()];
        self.invariant_blocks()
            .into_iter()
            .map(|g| {
                let m = self.dense_block(&g, &mut local);
                (g, m)
            })
            .collect()
    }

    /// Matrix inverse, computed block by block.
    pub fn inverse(&self) -> Result<Self> {
        let mut triplets = Vec::new();
        for (group, block) in self.block_decomposition() {
            let inv = block.clone().try_inverse();
            let sv = block.singular_values();
            let smax = sv.iter().copied().fold(0.0, f64::max);
            let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
            let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
            let inv = match inv {
                Some(inv) if condition < 1e14 => inv,
                _ => return Err(Error::Singular { condition }),
            };
            for (lj, &c) in group.iter().enumerate() {
                for (li, &r) in group.iter().enumerate() {
                    triplets.push((r, c, inv[(li, lj)]));
                }
            }
        }
        Ok(Self::from_triplets(self.dim, triplets))
    }
}

/// Time evolution `exp(gen * t)` evaluated block by block.
#[derive(Debug, Clone)]
pub struct Propagator {
    dim: usize,
    blocks: Vec<(Vec<usize>, DMatrix<C64>)>,
}

impl Propagator {
    pub fn new(gen: &Superoperator) -> Self {
        Self {
            dim: gen.dim(),
            blocks: gen.block_decomposition(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `exp(gen * t) rho`. Blocks on which `rho` vanishes are skipped.
    pub fn propagate(&self, rho: &DMatrix<C64>, t: f64) -> DMatrix<C64> {
        let v = rho.as_slice();
        let mut out = vec![ZERO; v.len()];
        for (group, block) in &self.blocks {
            let sub: Vec<C64> = group.iter().map(|&i| v[i]).collect();
            if sub.iter().all(|z| *z == ZERO) {
                continue;
            }
            let exp = (block * C64::new(t, 0.0)).exp();
            let res = exp * nalgebra::DVector::from_vec(sub);
            for (li, &i) in group.iter().enumerate() {
                out[i] = res[li];
            }
        }
        DMatrix::from_column_slice(self.dim, self.dim, &out)
    }

    /// Population transfer matrix `T[(n, m)] = <n| exp(gen t)(|m><m|) |n>`.
    /// `None` when the populations do not all share one invariant block.
    pub fn population_transfer(&self, t: f64) -> Option<DMatrix<f64>> {
        let d = self.dim;
        let diag0 = 0;
        let (group, block) = self.blocks.iter().find(|(g, _)| g.contains(&diag0))?;
        let positions: Vec<usize> = (0..d)
            .map(|n| group.binary_search(&(n + n * d)).ok())
            .collect::<Option<Vec<_>>>()?;
        let exp = (block * C64::new(t, 0.0)).exp();
        let mut out = DMatrix::zeros(d, d);
        for (n, &pn) in positions.iter().enumerate() {
            for (m, &pm) in positions.iter().enumerate() {
                out[(n, m)] = exp[(pn, pm)].re;
            }
        }
        Some(out)
    }
}

/// Unique stationary state of a trace-preserving generator.
///
/// Each invariant block is solved by SVD; the right-singular vector of the
/// smallest singular value spans its null space when that value is below
/// `1e-9` times the largest singular value across all blocks. More than one
/// such direction in total is reported as a degenerate null space.
pub fn steady_state_nullspace(gen: &Superoperator) -> Result<DensityMatrix> {
    let dim = gen.dim();
    let blocks = gen.block_decomposition();
    let spectra: Vec<_> = blocks
        .par_iter()
        .map(|(_, b)| b.singular_values())
        .collect();
    let scale = spectra
        .iter()
        .flat_map(|s| s.iter().copied())
        .fold(0.0, f64::max)
        .max(1.0);
    let mut null_blocks: Vec<usize> = Vec::new();
    for (bi, sv) in spectra.iter().enumerate() {
        for &s in sv.iter() {
            if s <= NULL_REL_TOL * scale {
                null_blocks.push(bi);
            }
        }
    }
    if null_blocks.len() != 1 {
        return Err(Error::DegenerateNullSpace(null_blocks.len()));
    }
    let bi = null_blocks[0];
    let svd = blocks[bi].1.clone().svd(false, true);
    let k = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (k, &s)| if s < best.1 { (k, s) } else { best })
        .0;
    let v_t = svd.v_t.as_ref().expect("requested V^H");
    let mut vec = vec![ZERO; dim * dim];
    for (li, &g) in blocks[bi].0.iter().enumerate() {
        vec[g] = v_t[(k, li)].conj();
    }
    let raw = DMatrix::from_column_slice(dim, dim, &vec);
    let trace = raw.trace();
    if trace.norm() < 1e-12 {
        return Err(Error::DegenerateNullSpace(0));
    }
    let rho = DensityMatrix(raw / trace).normalized()?;
    let residual = gen
        .apply(rho.matrix())
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    if residual > RESIDUAL_TOL {
        return Err(Error::SteadyStateResidual(residual));
    }
    Ok(rho)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trunc(n: usize) -> TruncationConfig {
        TruncationConfig::new(n, 1e-6).unwrap()
    }

    #[test]
    fn ladder_matrix_elements() {
        let (a, a_dag, n) = ladder_operators(trunc(2));
        assert_eq!(a.get(0, 1), ONE);
        assert_eq!(a.get(1, 2), C64::new(2f64.sqrt(), 0.0));
        assert!(a.matrix().column(0).iter().all(|z| *z == ZERO));
        assert_eq!(a_dag, a.adjoint());
        for k in 0..3 {
            assert!((n.get(k, k).re - k as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn truncation_rejects_bad_config() {
        assert!(TruncationConfig::new(0, 1e-3).is_err());
        assert!(TruncationConfig::new(3, 0.0).is_err());
        assert!(TruncationConfig::new(3, 1.0).is_err());
    }

    #[test]
    fn number_functions() {
        let theta = std::f64::consts::FRAC_PI_2;
        assert!((sin_sqrt_over_sqrt(theta, 1) - 1.0).abs() < 1e-15);
        assert_eq!(sin_sqrt_over_sqrt(0.7, 0), 0.7);
        let c = diag_number_function(|n| (0.0 * ((n + 1) as f64).sqrt()).cos(), trunc(4)).unwrap();
        assert_eq!(c, FockOperator::identity(5));
        let err = diag_number_function(|n| if n == 3 { f64::NAN } else { 1.0 }, trunc(4));
        assert!(matches!(err, Err(Error::NonFinite { level: 3 })));
    }

    #[test]
    fn dissipator_single_photon_decay() {
        let t = trunc(3);
        let (a, _, _) = ladder_operators(t);
        let d = Superoperator::dissipator(&a).unwrap();
        let out = d.apply(DensityMatrix::fock(1, 4).unwrap().matrix());
        let mut expect = DMatrix::zeros(4, 4);
        expect[(0, 0)] = ONE;
        expect[(1, 1)] = -ONE;
        assert!((out - expect).iter().all(|z| z.norm() < 1e-15));

        let vac = d.apply(DensityMatrix::fock(0, 4).unwrap().matrix());
        assert!(vac.iter().all(|z| *z == ZERO));

        let zero = Superoperator::dissipator(&FockOperator::zeros(4)).unwrap();
        assert_eq!(zero.nnz(), 0);
    }

    #[test]
    fn sparse_matches_dense_kron() {
        let t = trunc(3);
        let (a, a_dag, n) = ladder_operators(t);
        let x = a.add(&n.scale(0.3));
        let y = a_dag.add(&FockOperator::identity(4).scale(-1.2));
        let s = Superoperator::sandwich(&x, &y).unwrap();
        let dense = y.matrix().transpose().kronecker(x.matrix());
        assert!((s.to_dense() - dense).iter().all(|z| z.norm() < 1e-14));
    }

    #[test]
    fn trace_distance_examples() {
        let r0 = DensityMatrix::fock(0, 3).unwrap();
        let r1 = DensityMatrix::fock(1, 3).unwrap();
        assert_eq!(trace_distance(&r0, &r0).unwrap(), 0.0);
        assert!((trace_distance(&r0, &r1).unwrap() - 1.0).abs() < 1e-12);
        let half = DensityMatrix::from_populations(&[0.5, 0.5, 0.0]).unwrap();
        assert!((trace_distance(&half, &r0).unwrap() - 0.5).abs() < 1e-12);
        assert!(trace_distance(&r0, &DensityMatrix::fock(0, 4).unwrap()).is_err());
    }

    #[test]
    fn vacuum_is_the_decay_fixed_point() {
        let (a, _, _) = ladder_operators(trunc(5));
        let gen = Superoperator::dissipator(&a).unwrap();
        let rho = steady_state_nullspace(&gen).unwrap();
        let vac = DensityMatrix::fock(0, 6).unwrap();
        assert!(trace_distance(&rho, &vac).unwrap() < 1e-12);
    }

    #[test]
    fn pure_commutator_is_degenerate() {
        let (_, _, n) = ladder_operators(trunc(3));
        let gen = Superoperator::hamiltonian(&n).unwrap();
        assert!(matches!(
            steady_state_nullspace(&gen),
            Err(Error::DegenerateNullSpace(k)) if k > 1
        ));
    }

    #[test]
    fn inverse_round_trip() {
        let t = trunc(3);
        let (a, _, n) = ladder_operators(t);
        let gen = Superoperator::dissipator(&a)
            .unwrap()
            .add(&Superoperator::hamiltonian(&n).unwrap())
            .sub(&Superoperator::identity(4));
        let inv = gen.inverse().unwrap();
        let prod = gen.to_dense() * inv.to_dense();
        let id = DMatrix::<C64>::identity(16, 16);
        assert!((prod - id).iter().all(|z| z.norm() < 1e-12));
        assert!(matches!(
            Superoperator::dissipator(&a).unwrap().inverse(),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn propagator_matches_dense_exponential() {
        let t = trunc(3);
        let (a, a_dag, n) = ladder_operators(t);
        let gen = Superoperator::dissipator(&a)
            .unwrap()
            .add(&Superoperator::dissipator(&a_dag).unwrap().scale(0.4))
            .add(&Superoperator::hamiltonian(&n).unwrap());
        let mut rho = DMatrix::<C64>::zeros(4, 4);
        rho[(1, 1)] = C64::new(0.5, 0.0);
        rho[(2, 2)] = C64::new(0.5, 0.0);
        rho[(1, 2)] = C64::new(0.2, 0.1);
        rho[(2, 1)] = C64::new(0.2, -0.1);
        let prop = Propagator::new(&gen);
        let got = prop.propagate(&rho, 0.8);
        let dense = (gen.to_dense() * C64::new(0.8, 0.0)).exp()
            * nalgebra::DVector::from_column_slice(rho.as_slice());
        for (x, y) in got.as_slice().iter().zip(dense.iter()) {
            assert!((x - y).norm() < 1e-12);
        }
    }
}
