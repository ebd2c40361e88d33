//! Dense Hermitian linear algebra for small composite quantum systems.
//!
//! Everything operates on dynamically sized complex matrices. Conventions,
//! fixed here and relied on by every other module:
//!
//! * eigenvalues are returned ascending, eigenvectors as orthonormal columns
//!   in the matching order;
//! * eigenvector phases are fixed by rotating each column so its
//!   largest-magnitude component is real and positive (ties broken by the
//!   lowest index), which makes derived matrix elements reproducible;
//! * tensor products are battery-major: `tensor(a, b)` gives the composite
//!   index `i = i_a * dim_b + i_b`, so the left (battery) factor owns the
//!   slow index;
//! * propagators are built by spectral decomposition,
//!   `U = V exp(-i lambda t) V^H`, never by series expansion.

use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;

/// Numerical tolerances used across the crate.
///
/// Validation tolerances guard algebraic identities that hold to roundoff
/// (Hermiticity, unit trace, unitarity); the physics tolerance is looser and
/// guards quantities that accumulate error over thousands of collisions.
pub mod tol {
    /// Max allowed |A - A^H| entry for a matrix claimed Hermitian.
    pub const HERMITICITY: f64 = 1e-12;
    /// Max allowed |tr(rho) - 1| for a density matrix.
    pub const TRACE: f64 = 1e-10;
    /// Eigenvalue floor for positive semidefiniteness checks.
    pub const EIGENVALUE_FLOOR: f64 = -1e-10;
    /// Max allowed |U U^H - I| entry for a propagator.
    pub const UNITARITY: f64 = 1e-10;
    /// Tolerance for physics assertions on evolved or accumulated quantities.
    pub const PHYSICS: f64 = 1e-9;
}

/// Largest entry of |m - m^H|; zero for an exactly Hermitian matrix.
pub fn hermiticity_violation(m: &CMat) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let d = (m[(i, j)] - m[(j, i)].conj()).norm();
            if d > worst {
                worst = d;
            }
        }
    }
    worst
}

fn check_square(m: &CMat) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(())
}

fn check_hermitian(m: &CMat) -> Result<()> {
    check_square(m)?;
    let max_asym = hermiticity_violation(m);
    if max_asym > tol::HERMITICITY {
        return Err(Error::NotHermitian {
            max_asym,
            tol: tol::HERMITICITY,
        });
    }
    Ok(())
}

/// A validated Hermitian matrix.
#[derive(Debug, Clone)]
pub struct HermitianOperator {
    mat: CMat,
}

impl HermitianOperator {
    /// Accepts `mat` if it is square and Hermitian within
    /// [`tol::HERMITICITY`].
    pub fn new(mat: CMat) -> Result<Self> {
        check_hermitian(&mat)?;
        Ok(Self { mat })
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &CMat {
        &self.mat
    }

    pub fn into_matrix(self) -> CMat {
        self.mat
    }
}

/// Eigendecomposition of a Hermitian matrix: `values` ascending, `vectors`
/// the matching orthonormal columns with the phase convention applied.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub values: DVector<f64>,
    pub vectors: CMat,
}

/// Relative slack for picking the reference component of an eigenvector:
/// among components whose magnitude is within this factor of the maximum,
/// the lowest index wins. Charge-symmetric states carry +N/-N pairs of equal
/// magnitude, and a strict comparison would let roundoff decide between them.
const PHASE_PICK_SLACK: f64 = 1e-9;

/// Index of the first component whose magnitude is within
/// [`PHASE_PICK_SLACK`] of the column maximum; `None` for a zero column.
pub(crate) fn reference_component(magnitudes: &[f64]) -> Option<usize> {
    let max = magnitudes.iter().fold(0.0_f64, |a, &b| a.max(b));
    if max == 0.0 {
        return None;
    }
    let floor = max * (1.0 - PHASE_PICK_SLACK);
    magnitudes.iter().position(|&a| a >= floor)
}

/// Rotates each column so its largest-magnitude component is real positive
/// (near-ties resolved toward the lowest index); zero columns are left alone.
fn fix_phases(vectors: &mut CMat) {
    for j in 0..vectors.ncols() {
        let mags: Vec<f64> = (0..vectors.nrows()).map(|i| vectors[(i, j)].norm()).collect();
        let Some(iref) = reference_component(&mags) else {
            continue;
        };
        let phase = vectors[(iref, j)] / mags[iref];
        let rot = phase.conj();
        for i in 0..vectors.nrows() {
            vectors[(i, j)] *= rot;
        }
    }
}

/// Full eigendecomposition of a Hermitian matrix, ascending and phase-fixed.
pub fn eig_hermitian(h: &HermitianOperator) -> EigenDecomposition {
    let se = nalgebra::SymmetricEigen::new(h.mat.clone());
    sorted_decomposition(se.eigenvalues, se.eigenvectors)
}

/// Shared post-processing: sort ascending, permute columns, fix phases.
fn sorted_decomposition(values: DVector<f64>, vectors: CMat) -> EigenDecomposition {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let sorted_values = DVector::from_fn(n, |k, _| values[order[k]]);
    let mut sorted_vectors = CMat::zeros(vectors.nrows(), n);
    for (k, &src) in order.iter().enumerate() {
        sorted_vectors.set_column(k, &vectors.column(src));
    }
    fix_phases(&mut sorted_vectors);
    EigenDecomposition {
        values: sorted_values,
        vectors: sorted_vectors,
    }
}

/// Same decomposition for a real symmetric matrix; eigenvectors stay real.
pub fn eig_symmetric(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let se = nalgebra::SymmetricEigen::new(m.clone());
    let n = se.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| se.eigenvalues[a].total_cmp(&se.eigenvalues[b]));
    let values = DVector::from_fn(n, |k, _| se.eigenvalues[order[k]]);
    let mut vectors = DMatrix::zeros(se.eigenvectors.nrows(), n);
    for (k, &src) in order.iter().enumerate() {
        vectors.set_column(k, &se.eigenvectors.column(src));
    }
    // Same sign convention as the complex path.
    for j in 0..vectors.ncols() {
        let mags: Vec<f64> = (0..vectors.nrows()).map(|i| vectors[(i, j)].abs()).collect();
        if let Some(iref) = reference_component(&mags) {
            if vectors[(iref, j)] < 0.0 {
                for i in 0..vectors.nrows() {
                    vectors[(i, j)] = -vectors[(i, j)];
                }
            }
        }
    }
    (values, vectors)
}

/// Unitary time-evolution operator together with a key identifying the
/// `(generator, duration)` pair it was built from.
#[derive(Debug, Clone)]
pub struct UnitaryPropagator {
    mat: CMat,
    generator_hash: u64,
}

impl UnitaryPropagator {
    pub fn matrix(&self) -> &CMat {
        &self.mat
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn generator_hash(&self) -> u64 {
        self.generator_hash
    }

    /// Wraps a matrix built by other means (e.g. a product of unitaries)
    /// as a propagator, checking unitarity. The caller supplies the cache
    /// key identifying how the matrix was produced.
    pub fn from_checked(mat: CMat, generator_hash: u64) -> Result<Self> {
        let deviation = unitarity_violation(&mat);
        if deviation > tol::UNITARITY {
            return Err(Error::NotUnitary {
                deviation,
                tol: tol::UNITARITY,
            });
        }
        Ok(Self {
            mat,
            generator_hash,
        })
    }
}

/// Largest entry of |U U^H - I|.
pub fn unitarity_violation(u: &CMat) -> f64 {
    let prod = u * u.adjoint();
    let mut worst = 0.0_f64;
    for i in 0..prod.nrows() {
        for j in 0..prod.ncols() {
            let expect = if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
            let d = (prod[(i, j)] - expect).norm();
            if d > worst {
                worst = d;
            }
        }
    }
    worst
}

/// Key identifying a propagator build: all generator entries plus the
/// duration, hashed bit-exactly.
pub fn generator_hash(h: &HermitianOperator, t: f64) -> u64 {
    let mut hasher = std::hash::DefaultHasher::new();
    h.mat.nrows().hash(&mut hasher);
    for z in h.mat.iter() {
        z.re.to_bits().hash(&mut hasher);
        z.im.to_bits().hash(&mut hasher);
    }
    t.to_bits().hash(&mut hasher);
    hasher.finish()
}

/// `U = exp(-i H t)` by spectral decomposition of the Hermitian generator.
///
/// The result is checked unitary within [`tol::UNITARITY`]; `t` must be
/// finite.
pub fn expm_hermitian_generator(h: &HermitianOperator, t: f64) -> Result<UnitaryPropagator> {
    if !t.is_finite() {
        return Err(Error::param("t", format!("duration must be finite, got {t}")));
    }
    let eig = eig_hermitian(h);
    let n = h.dim();
    let mut scaled = eig.vectors.clone();
    for k in 0..n {
        let phase = C64::from_polar(1.0, -eig.values[k] * t);
        for i in 0..n {
            scaled[(i, k)] *= phase;
        }
    }
    let mat = &scaled * eig.vectors.adjoint();
    let deviation = unitarity_violation(&mat);
    if deviation > tol::UNITARITY {
        return Err(Error::NotUnitary {
            deviation,
            tol: tol::UNITARITY,
        });
    }
    Ok(UnitaryPropagator {
        mat,
        generator_hash: generator_hash(h, t),
    })
}

/// Propagator cache keyed by [`generator_hash`]. One eigensolve per distinct
/// `(generator, duration)` pair; lookups share the built propagator.
#[derive(Debug, Default)]
pub struct PropagatorCache {
    map: Mutex<HashMap<u64, Arc<UnitaryPropagator>>>,
}

impl PropagatorCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_build(&self, h: &HermitianOperator, t: f64) -> Result<Arc<UnitaryPropagator>> {
        self.get_or_insert_with(generator_hash(h, t), || expm_hermitian_generator(h, t))
    }

    /// Looks up `key`, building and storing the propagator on a miss. The
    /// key must uniquely identify the construction recipe.
    pub fn get_or_insert_with(
        &self,
        key: u64,
        build: impl FnOnce() -> Result<UnitaryPropagator>,
    ) -> Result<Arc<UnitaryPropagator>> {
        if let Some(hit) = self.map.lock().unwrap().get(&key) {
            return Ok(Arc::clone(hit));
        }
        let built = Arc::new(build()?);
        let mut map = self.map.lock().unwrap();
        Ok(Arc::clone(map.entry(key).or_insert(built)))
    }

    pub fn len(&self) -> usize {
        self.map.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Battery-major Kronecker product: composite index `i = i_a * dim_b + i_b`.
pub fn tensor(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

/// Traces out the trailing (ancilla) factor of a battery-major composite:
/// `out[i][j] = sum_a rho[i * dim_ancilla + a][j * dim_ancilla + a]`.
pub fn partial_trace_ancilla(rho: &CMat, dim_battery: usize, dim_ancilla: usize) -> Result<CMat> {
    let n = dim_battery * dim_ancilla;
    if rho.nrows() != n || rho.ncols() != n {
        return Err(Error::shape(format!(
            "partial trace expects a {n}x{n} composite (battery {dim_battery} x ancilla \
             {dim_ancilla}), got {}x{}",
            rho.nrows(),
            rho.ncols()
        )));
    }
    let mut out = CMat::zeros(dim_battery, dim_battery);
    for i in 0..dim_battery {
        for j in 0..dim_battery {
            let mut acc = C64::new(0.0, 0.0);
            for a in 0..dim_ancilla {
                acc += rho[(i * dim_ancilla + a, j * dim_ancilla + a)];
            }
            out[(i, j)] = acc;
        }
    }
    Ok(out)
}

/// A validated density matrix: Hermitian, unit trace, positive semidefinite.
#[derive(Debug, Clone)]
pub struct DensityMatrix {
    mat: CMat,
}

impl DensityMatrix {
    /// Full validation: Hermiticity within [`tol::HERMITICITY`], trace within
    /// [`tol::TRACE`] of one, smallest eigenvalue above
    /// [`tol::EIGENVALUE_FLOOR`].
    pub fn new(mat: CMat) -> Result<Self> {
        check_hermitian(&mat)?;
        let deviation = (trace_of(&mat) - C64::new(1.0, 0.0)).norm();
        if deviation > tol::TRACE {
            return Err(Error::TraceNotOne {
                deviation,
                tol: tol::TRACE,
            });
        }
        let eig = nalgebra::SymmetricEigen::new(mat.clone());
        let lambda_min = eig.eigenvalues.iter().fold(f64::INFINITY, |m, &v| m.min(v));
        if lambda_min < tol::EIGENVALUE_FLOOR {
            return Err(Error::NotPositive {
                lambda_min,
                floor: tol::EIGENVALUE_FLOOR,
            });
        }
        Ok(Self { mat })
    }

    /// Pure basis state `|k><k|` in a `dim`-level space.
    pub fn pure(dim: usize, k: usize) -> Result<Self> {
        if k >= dim {
            return Err(Error::param("k", format!("basis index {k} out of range for dim {dim}")));
        }
        let mut mat = CMat::zeros(dim, dim);
        mat[(k, k)] = C64::new(1.0, 0.0);
        Ok(Self { mat })
    }

    /// Wraps a matrix known valid by construction; used on hot paths where
    /// the caller has already run the checks.
    pub(crate) fn from_validated(mat: CMat) -> Self {
        Self { mat }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &CMat {
        &self.mat
    }

    pub fn trace(&self) -> C64 {
        trace_of(&self.mat)
    }

    /// tr(rho^2); 1 for a pure state, 1/dim for the maximally mixed state.
    pub fn purity(&self) -> f64 {
        self.mat.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Eigendecomposition with the crate-wide ordering and phase convention.
    pub fn eig(&self) -> EigenDecomposition {
        let se = nalgebra::SymmetricEigen::new(self.mat.clone());
        sorted_decomposition(se.eigenvalues, se.eigenvectors)
    }
}

pub(crate) fn trace_of(m: &CMat) -> C64 {
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..m.nrows().min(m.ncols()) {
        acc += m[(i, i)];
    }
    acc
}
