//! Recursive least squares with exponential forgetting.
//!
//! Regressors and outputs are divided by fixed scale factors before they
//! enter the recursion so that single-precision arithmetic stays well
//! conditioned. Parameters are stored in the scaled space; [`RlsState::theta`]
//! maps them back.
//!
//! The covariance step is guarded: when `P - K xᵀP` would drive a diagonal
//! entry non-positive, the gain is halved until it does not (down to 2⁻²⁰,
//! then zero). Afterwards `P` is symmetrised and its entries clamped to
//! `±1e10`.

use nalgebra::{DMatrix, DVector, RealField};

use crate::error::RlsError;

pub const DEFAULT_P0: f64 = 100.0;
pub const COV_LIMIT: f64 = 1e10;
/// Time for the weight of past samples to decay by a factor e, s.
pub const FORGETTING_TIME_CONSTANT: f64 = 0.2;

/// `λ = exp(-Ps / 0.2)`
pub fn forgetting_factor(sample_period: f64) -> f64 {
    (-sample_period / FORGETTING_TIME_CONSTANT).exp()
}

fn lit<T: RealField + Copy>(v: f64) -> T {
    nalgebra::convert(v)
}

fn all_finite<T: RealField + Copy>(v: &[T]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Covariance recursion shared by the single- and multi-output filters.
/// Returns the (possibly attenuated) gain.
fn gain_and_covariance<T: RealField + Copy>(cov: &mut DMatrix<T>, x: &DVector<T>, lambda: T) -> DVector<T> {
    let n = x.len();
    let px = &*cov * x;
    let denom = lambda + x.dot(&px);
    let mut k = &px / denom;

    let half: T = lit(0.5);
    let mut factor = T::one();
    let mut ok = false;
    for _ in 0..=20 {
        if (0..n).all(|i| cov[(i, i)] - factor * k[i] * px[i] > T::zero()) {
            ok = true;
            break;
        }
        factor *= half;
    }
    if !ok {
        factor = T::zero();
    }
    if factor != T::one() {
        k *= factor;
    }

    let inv_lambda = T::one() / lambda;
    for i in 0..n {
        for j in 0..n {
            cov[(i, j)] = (cov[(i, j)] - k[i] * px[j]) * inv_lambda;
        }
    }
    let limit: T = lit(COV_LIMIT);
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = (cov[(i, j)] + cov[(j, i)]) * half;
            let avg = avg.clamp(-limit, limit);
            cov[(i, j)] = avg;
            cov[(j, i)] = avg;
        }
        if cov[(i, i)] > limit {
            cov[(i, i)] = limit;
        }
    }
    k
}

/// Single-output RLS filter `y = xᵀθ`.
#[derive(Debug, Clone, PartialEq)]
pub struct RlsState<T: RealField + Copy> {
    theta: DVector<T>,
    cov: DMatrix<T>,
    lambda: T,
    scale: DVector<T>,
    y_scale: T,
}

impl<T: RealField + Copy> RlsState<T> {
    /// `θ = 0`, `P = p0·I`, `λ = 1`, unit scales.
    pub fn new(n: usize, p0: T) -> Result<Self, RlsError> {
        if n == 0 {
            return Err(RlsError::ZeroDimension);
        }
        if !(p0 > T::zero()) || !p0.is_finite() {
            return Err(RlsError::InvalidSetting("p0 must be positive"));
        }
        Ok(Self {
            theta: DVector::zeros(n),
            cov: DMatrix::identity(n, n) * p0,
            lambda: T::one(),
            scale: DVector::from_element(n, T::one()),
            y_scale: T::one(),
        })
    }

    pub fn with_forgetting(mut self, lambda: T) -> Result<Self, RlsError> {
        if !(lambda > T::zero() && lambda <= T::one()) {
            return Err(RlsError::InvalidSetting("lambda must lie in (0, 1]"));
        }
        self.lambda = lambda;
        Ok(self)
    }

    pub fn with_scales(mut self, scale: &[T], y_scale: T) -> Result<Self, RlsError> {
        if scale.len() != self.dim() {
            return Err(RlsError::DimensionMismatch {
                expected: self.dim(),
                got: scale.len(),
            });
        }
        if scale
            .iter()
            .chain(std::iter::once(&y_scale))
            .any(|s| !(*s > T::zero()) || !s.is_finite())
        {
            return Err(RlsError::InvalidSetting("scales must be positive"));
        }
        self.scale = DVector::from_column_slice(scale);
        self.y_scale = y_scale;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn cov(&self) -> &DMatrix<T> {
        &self.cov
    }

    /// Parameters in the scaled space the recursion runs in.
    pub fn theta_scaled(&self) -> &DVector<T> {
        &self.theta
    }

    /// Parameters in the caller's units.
    pub fn theta(&self) -> DVector<T> {
        DVector::from_fn(self.dim(), |i, _| self.theta[i] * self.y_scale / self.scale[i])
    }

    fn scaled(&self, x: &[T]) -> Result<DVector<T>, RlsError> {
        if x.len() != self.dim() {
            return Err(RlsError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(DVector::from_fn(self.dim(), |i, _| x[i] / self.scale[i]))
    }

    /// One recursion step. Returns the a-priori innovation `y - xᵀθ` in the
    /// caller's units. Non-finite input leaves the state untouched.
    pub fn update(&mut self, x: &[T], y: T) -> Result<T, RlsError> {
        if !all_finite(x) || !y.is_finite() {
            return Err(RlsError::NonFinite);
        }
        let xs = self.scaled(x)?;
        let ys = y / self.y_scale;
        let e = ys - xs.dot(&self.theta);
        let k = gain_and_covariance(&mut self.cov, &xs, self.lambda);
        self.theta.axpy(e, &k, T::one());
        Ok(e * self.y_scale)
    }
}

/// Several RLS filters that share one regressor, and therefore one
/// covariance and gain.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedRlsState<T: RealField + Copy> {
    thetas: Vec<DVector<T>>,
    cov: DMatrix<T>,
    lambda: T,
    scale: DVector<T>,
    y_scales: Vec<T>,
}

impl<T: RealField + Copy> SharedRlsState<T> {
    pub fn new(n: usize, outputs: usize, p0: T) -> Result<Self, RlsError> {
        if n == 0 || outputs == 0 {
            return Err(RlsError::ZeroDimension);
        }
        if !(p0 > T::zero()) || !p0.is_finite() {
            return Err(RlsError::InvalidSetting("p0 must be positive"));
        }
        Ok(Self {
            thetas: vec![DVector::zeros(n); outputs],
            cov: DMatrix::identity(n, n) * p0,
            lambda: T::one(),
            scale: DVector::from_element(n, T::one()),
            y_scales: vec![T::one(); outputs],
        })
    }

    pub fn with_forgetting(mut self, lambda: T) -> Result<Self, RlsError> {
        if !(lambda > T::zero() && lambda <= T::one()) {
            return Err(RlsError::InvalidSetting("lambda must lie in (0, 1]"));
        }
        self.lambda = lambda;
        Ok(self)
    }

    pub fn with_scales(mut self, scale: &[T], y_scales: &[T]) -> Result<Self, RlsError> {
        if scale.len() != self.dim() {
            return Err(RlsError::DimensionMismatch {
                expected: self.dim(),
                got: scale.len(),
            });
        }
        if y_scales.len() != self.outputs() {
            return Err(RlsError::DimensionMismatch {
                expected: self.outputs(),
                got: y_scales.len(),
            });
        }
        if scale
            .iter()
            .chain(y_scales)
            .any(|s| !(*s > T::zero()) || !s.is_finite())
        {
            return Err(RlsError::InvalidSetting("scales must be positive"));
        }
        self.scale = DVector::from_column_slice(scale);
        self.y_scales = y_scales.to_vec();
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.scale.len()
    }

    pub fn outputs(&self) -> usize {
        self.thetas.len()
    }

    pub fn cov(&self) -> &DMatrix<T> {
        &self.cov
    }

    pub fn theta_scaled(&self, output: usize) -> &DVector<T> {
        &self.thetas[output]
    }

    pub fn theta(&self, output: usize) -> DVector<T> {
        let ys = self.y_scales[output];
        DVector::from_fn(self.dim(), |i, _| self.thetas[output][i] * ys / self.scale[i])
    }

    /// One step for all outputs; returns the innovations in caller units.
    pub fn update(&mut self, x: &[T], ys: &[T]) -> Result<Vec<T>, RlsError> {
        if !all_finite(x) || !all_finite(ys) {
            return Err(RlsError::NonFinite);
        }
        if x.len() != self.dim() {
            return Err(RlsError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        if ys.len() != self.outputs() {
            return Err(RlsError::DimensionMismatch {
                expected: self.outputs(),
                got: ys.len(),
            });
        }
        let xs = DVector::from_fn(self.dim(), |i, _| x[i] / self.scale[i]);
        let innovations: Vec<T> = (0..self.outputs())
            .map(|j| ys[j] / self.y_scales[j] - xs.dot(&self.thetas[j]))
            .collect();
        let k = gain_and_covariance(&mut self.cov, &xs, self.lambda);
        for (theta, e) in self.thetas.iter_mut().zip(&innovations) {
            theta.axpy(*e, &k, T::one());
        }
        Ok(innovations.iter().zip(&self.y_scales).map(|(e, s)| *e * *s).collect())
    }
}
