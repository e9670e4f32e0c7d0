//! Sliding-window weighted least-squares fit of a quadratic to GNSS velocity.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, Vector3};

use crate::attitude::InertialVelocityExtended;
use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

/// The `n` most recent GNSS velocity samples, newest first.
#[derive(Debug, Clone)]
pub struct GnssWindow<T: Real> {
    n: usize,
    samples: VecDeque<(i64, Vector3<T>)>,
}

impl<T: Real> GnssWindow<T> {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            samples: VecDeque::with_capacity(n),
        }
    }

    pub fn capacity(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.samples.len() == self.n
    }

    pub fn newest_epoch(&self) -> Option<i64> {
        self.samples.front().map(|s| s.0)
    }

    pub fn clear(&mut self) {
        self.samples.clear();
    }

    /// Adds the sample of `epoch`. A gap in the epochs restarts the window.
    pub fn push(&mut self, epoch: i64, y: Vector3<T>) -> Result<()> {
        if let Some(last) = self.newest_epoch() {
            if epoch <= last {
                return Err(Error::Data(format!(
                    "GNSS epoch {epoch} does not follow epoch {last}"
                )));
            }
            if epoch != last + 1 {
                self.samples.clear();
            }
        }
        self.samples.push_front((epoch, y));
        self.samples.truncate(self.n);
        Ok(())
    }

    /// Stacked measurement vector, newest sample first.
    pub fn stacked(&self) -> DVector<T> {
        DVector::from_iterator(
            3 * self.samples.len(),
            self.samples.iter().flat_map(|(_, y)| y.iter().copied()),
        )
    }
}

/// Quadratic velocity model `v(t̃) = c2 t̃² + c1 t̃ + c0`, `t̃ = t - epoch·τ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolyCoeffs<T: Real> {
    pub c2: Vector3<T>,
    pub c1: Vector3<T>,
    pub c0: Vector3<T>,
    pub epoch: i64,
}

impl<T: Real> PolyCoeffs<T> {
    pub fn to_vector(&self) -> SMatrix<T, 9, 1> {
        let mut z = SMatrix::<T, 9, 1>::zeros();
        z.fixed_rows_mut::<3>(0).copy_from(&self.c2);
        z.fixed_rows_mut::<3>(3).copy_from(&self.c1);
        z.fixed_rows_mut::<3>(6).copy_from(&self.c0);
        z
    }

    pub fn from_vector(z: &SMatrix<T, 9, 1>, epoch: i64) -> Self {
        Self {
            c2: z.fixed_rows::<3>(0).into_owned(),
            c1: z.fixed_rows::<3>(3).into_owned(),
            c0: z.fixed_rows::<3>(6).into_owned(),
            epoch,
        }
    }
}

/// Precomputed fit: design matrix, gain and coefficient covariance.
#[derive(Debug, Clone)]
pub struct LsqDesign<T: Real> {
    n: usize,
    tau: T,
    c: DMatrix<T>,
    ks: DMatrix<T>,
    r_nu_s: Matrix3<T>,
    /// `Ks (I ⊗ R_νs) Ksᵀ`.
    coeff_cov: SMatrix<T, 9, 9>,
}

/// `Φ(t̃)`: maps the coefficients to velocity and acceleration.
pub fn evaluation_matrix<T: Real>(t: T) -> SMatrix<T, 6, 9> {
    let mut phi = SMatrix::<T, 6, 9>::zeros();
    let i3 = Matrix3::<T>::identity();
    let two: T = lit(2.0);
    phi.fixed_view_mut::<3, 3>(0, 0).copy_from(&(i3 * (t * t)));
    phi.fixed_view_mut::<3, 3>(0, 3).copy_from(&(i3 * t));
    phi.fixed_view_mut::<3, 3>(0, 6).copy_from(&i3);
    phi.fixed_view_mut::<3, 3>(3, 0).copy_from(&(i3 * (two * t)));
    phi.fixed_view_mut::<3, 3>(3, 3).copy_from(&i3);
    phi
}

/// Builds `C` and `Ks = (Cᵀ W C)⁻¹ Cᵀ W` with `W = I_n ⊗ R_νs⁻¹`.
pub fn build_design<T: Real>(n: usize, tau: T, r_nu_s: &Matrix3<T>) -> Result<LsqDesign<T>> {
    if n < 3 {
        return Err(Error::Underdetermined { n });
    }
    if !(tau > T::zero()) {
        return Err(Error::Config("GNSS period must be positive".into()));
    }
    let r_inv = r_nu_s
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("GNSS noise covariance"))?
        .inverse();
    let mut c = DMatrix::<T>::zeros(3 * n, 9);
    let mut w = DMatrix::<T>::zeros(3 * n, 3 * n);
    for i in 0..n {
        let ti = -(tau * lit::<T>(i as f64));
        for a in 0..3 {
            c[(3 * i + a, a)] = ti * ti;
            c[(3 * i + a, 3 + a)] = ti;
            c[(3 * i + a, 6 + a)] = T::one();
        }
        w.view_mut((3 * i, 3 * i), (3, 3)).copy_from(&r_inv);
    }
    let ctw = c.transpose() * &w;
    let normal = &ctw * &c;
    // conditioning judged after Jacobi scaling, so units and axis weights do not count
    let d = normal.diagonal().map(|x| T::one() / x.sqrt());
    let scaled = DMatrix::from_fn(9, 9, |i, j| normal[(i, j)] * d[i] * d[j]);
    let eig = scaled.symmetric_eigen();
    let (lo, hi) = eig
        .eigenvalues
        .iter()
        .fold((T::max_value().unwrap(), T::zero()), |(lo, hi), &e| (lo.min(e), hi.max(e)));
    let cond_limit: T = T::one() / (T::default_epsilon() * lit(1e4));
    if !(lo > T::zero()) || hi / lo > cond_limit {
        return Err(Error::IllConditioned);
    }
    let ks = normal.cholesky().ok_or(Error::IllConditioned)?.solve(&ctw);
    let mut noise = DMatrix::<T>::zeros(3 * n, 3 * n);
    for i in 0..n {
        noise.view_mut((3 * i, 3 * i), (3, 3)).copy_from(r_nu_s);
    }
    let cov = &ks * noise * ks.transpose();
    let coeff_cov = SMatrix::<T, 9, 9>::from_fn(|i, j| (cov[(i, j)] + cov[(j, i)]) * lit(0.5));
    Ok(LsqDesign {
        n,
        tau,
        c,
        ks,
        r_nu_s: *r_nu_s,
        coeff_cov,
    })
}

impl<T: Real> LsqDesign<T> {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn tau(&self) -> T {
        self.tau
    }

    pub fn design_matrix(&self) -> &DMatrix<T> {
        &self.c
    }

    pub fn gain(&self) -> &DMatrix<T> {
        &self.ks
    }

    pub fn gnss_covariance(&self) -> &Matrix3<T> {
        &self.r_nu_s
    }

    pub fn coefficient_covariance(&self) -> &SMatrix<T, 9, 9> {
        &self.coeff_cov
    }

    /// `R_v(t̃) = Φ(t̃) Ks (I ⊗ R_νs) Ksᵀ Φ(t̃)ᵀ`.
    pub fn covariance_rv(&self, t_offset: T) -> SMatrix<T, 6, 6> {
        let phi = evaluation_matrix(t_offset);
        let r = phi * self.coeff_cov * phi.transpose();
        (r + r.transpose()) * lit::<T>(0.5)
    }

    /// Worst case over the extrapolation window, `R_v(τ)`.
    pub fn covariance_rv_bar(&self) -> SMatrix<T, 6, 6> {
        self.covariance_rv(self.tau)
    }
}

/// `ζ̂ = Ks y`.
pub fn fit<T: Real>(window: &GnssWindow<T>, design: &LsqDesign<T>) -> Result<PolyCoeffs<T>> {
    if window.capacity() != design.n() {
        return Err(Error::Config("window length differs from the design".into()));
    }
    if !window.is_full() {
        return Err(Error::InsufficientData {
            have: window.len(),
            need: design.n(),
        });
    }
    let z = design.gain() * window.stacked();
    let z = SMatrix::<T, 9, 1>::from_iterator(z.iter().copied());
    Ok(PolyCoeffs::from_vector(&z, window.newest_epoch().unwrap_or(0)))
}

/// `v̂_e(t̃) = Φ(t̃) ζ̂`.
pub fn evaluate<T: Real>(coeffs: &PolyCoeffs<T>, t_offset: T) -> InertialVelocityExtended<T> {
    let t = t_offset;
    let two: T = lit(2.0);
    InertialVelocityExtended {
        v: coeffs.c2 * (t * t) + coeffs.c1 * t + coeffs.c0,
        v_dot: coeffs.c2 * (two * t) + coeffs.c1,
    }
}
