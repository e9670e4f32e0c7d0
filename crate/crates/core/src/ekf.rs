//! Second observer stage: continuous-time EKF on `x = (b_g, q)` with the
//! information-form Riccati equation.

use nalgebra::{Matrix3, Matrix4, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::attitude::{euler_from_quat, quat_rate_jacobian, quat_rate_matrix, Quat4, UnitQuat};
use crate::error::{Error, Result};
use crate::prefilter::PrefilterOutput;
use crate::scalar::{lit, to_f64, Real};
use crate::sensors::NoiseParams;

pub type Vector7<T> = SVector<T, 7>;
pub type Matrix7<T> = SMatrix<T, 7, 7>;
pub type Matrix11<T> = SMatrix<T, 11, 11>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EkfConfig {
    /// Weight of the process-noise term in the Riccati equation.
    pub lambda: f64,
    /// `ε` relative to the smallest gyro-noise singular value.
    pub eps_factor: f64,
    /// Initial information `S₀ = s₀ I`.
    pub s0: f64,
    /// Upper bound on `h · (stiffness)` for the adaptive RK4 substeps.
    pub stiffness_step: f64,
    /// Substep budget per frame.
    pub max_substeps: usize,
}

impl Default for EkfConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            eps_factor: 1e-6,
            s0: 1.0,
            stiffness_step: 1.0,
            max_substeps: 200_000,
        }
    }
}

/// Filter state: gyro bias, unnormalized quaternion and information matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObserverState<T: Real> {
    pub b_g: Vector3<T>,
    pub q: Quat4<T>,
    pub s: Matrix7<T>,
}

impl<T: Real> ObserverState<T> {
    pub fn x(&self) -> Vector7<T> {
        stack(&self.b_g, &self.q)
    }
}

fn stack<T: Real>(b: &Vector3<T>, q: &Quat4<T>) -> Vector7<T> {
    Vector7::from_iterator(b.iter().chain(q.iter()).copied())
}

fn split<T: Real>(x: &Vector7<T>) -> (Vector3<T>, Quat4<T>) {
    (x.fixed_rows::<3>(0).into_owned(), x.fixed_rows::<4>(3).into_owned())
}

/// `f(x) = (0, M(q)(y_g - b))`.
pub fn drift<T: Real>(x: &Vector7<T>, y_g: &Vector3<T>) -> Vector7<T> {
    let (b, q) = split(x);
    stack(&Vector3::zeros(), &(quat_rate_matrix(&q) * (y_g - b)))
}

/// `A = ∂f/∂x = [[0, 0], [-M(q), ∂(M(q)ω̂)/∂q]]`, `ω̂ = y_g - b`.
pub fn jacobian_a<T: Real>(x: &Vector7<T>, y_g: &Vector3<T>) -> Matrix7<T> {
    let (b, q) = split(x);
    let mut a = Matrix7::zeros();
    a.fixed_view_mut::<4, 3>(3, 0).copy_from(&(-quat_rate_matrix(&q)));
    a.fixed_view_mut::<4, 4>(3, 3).copy_from(&quat_rate_jacobian(&(y_g - b)));
    a
}

/// `g(x) = [[I₃, 0, 0, 0], [0, I₄, -M(q), q]]`, 7×11.
pub fn diffusion_g<T: Real>(q: &Quat4<T>) -> SMatrix<T, 7, 11> {
    let mut g = SMatrix::<T, 7, 11>::zeros();
    g.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
    g.fixed_view_mut::<4, 4>(3, 3).copy_from(&Matrix4::identity());
    g.fixed_view_mut::<4, 3>(3, 7).copy_from(&(-quat_rate_matrix(q)));
    g.fixed_view_mut::<4, 1>(3, 10).copy_from(q);
    g
}

/// Process-noise weight and its derived scalars.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EkfTuning<T: Real> {
    pub lambda: T,
    pub q: Matrix11<T>,
    pub epsilon: T,
    pub beta_q: T,
    pub s0: T,
}

/// `β_Q`: mean of the extreme singular values of the gyro-noise block.
pub fn build_beta_q<T: Real>(block: &Matrix3<T>) -> T {
    let sv = block.singular_values();
    (sv.max() + sv.min()) * lit::<T>(0.5)
}

/// `Q = blkdiag(E[w_b w_bᵀ] + εI, εI₄, N² I + E[z_g z_gᵀ], β_Q²)`.
///
/// `E[z_g z_gᵀ] = 0.4365² τ_g² q_z` with `q_z` the coloured-noise density,
/// i.e. `(2 ln 2 / π) B² I`. The bias block carries `ε` as a floor because
/// the gyro random-walk level may be zero.
pub fn build_q<T: Real>(gyro: &NoiseParams, eps_factor: T) -> (Matrix11<T>, T, T) {
    let coloured = 0.4365f64.powi(2) * gyro.tau_c.powi(2) * gyro.coloured_psd();
    let third = Matrix3::from_diagonal(&Vector3::from_fn(|k, _| lit::<T>(gyro.white[k].powi(2) + coloured)));
    let sv_min = third.singular_values().min();
    let eps = eps_factor * sv_min;
    let beta_q = build_beta_q(&third);
    let mut q = Matrix11::zeros();
    let k2: T = lit(gyro.random_walk.powi(2));
    q.fixed_view_mut::<3, 3>(0, 0).copy_from(&(Matrix3::identity() * (k2 + eps)));
    q.fixed_view_mut::<4, 4>(3, 3).copy_from(&(Matrix4::identity() * eps));
    q.fixed_view_mut::<3, 3>(7, 7).copy_from(&third);
    q[(10, 10)] = beta_q * beta_q;
    (q, eps, beta_q)
}

impl<T: Real> EkfTuning<T> {
    pub fn from_config(cfg: &EkfConfig, gyro: &NoiseParams) -> Result<Self> {
        if !(cfg.lambda > 0.0) || !(cfg.eps_factor > 0.0) || !(cfg.s0 > 0.0) || !(cfg.stiffness_step > 0.0) {
            return Err(Error::Config("EKF parameters must be positive".into()));
        }
        let (q, epsilon, beta_q) = build_q(gyro, lit(cfg.eps_factor));
        if q.cholesky().is_none() {
            return Err(Error::NotPositiveDefinite("Q"));
        }
        Ok(Self {
            lambda: lit(cfg.lambda),
            q,
            epsilon,
            beta_q,
            s0: lit(cfg.s0),
        })
    }
}

/// Measurement information `R⁻¹` for the quaternion pseudo-measurement.
fn information<T: Real>(r_t: &Matrix4<T>) -> Result<Matrix4<T>> {
    Ok(r_t.cholesky().ok_or(Error::NotPositiveDefinite("R(t)"))?.inverse())
}

fn embed<T: Real>(r_inv: &Matrix4<T>) -> Matrix7<T> {
    let mut m = Matrix7::zeros();
    m.fixed_view_mut::<4, 4>(3, 3).copy_from(r_inv);
    m
}

/// Right-hand side of the Riccati equation.
fn riccati_rhs<T: Real>(
    s: &Matrix7<T>,
    x: &Vector7<T>,
    y_g: &Vector3<T>,
    tuning: &EkfTuning<T>,
    r_inv: Option<&Matrix4<T>>,
) -> Matrix7<T> {
    let a = jacobian_a(x, y_g);
    let (_, q) = split(x);
    let g = diffusion_g(&q);
    let gqg = g * tuning.q * g.transpose();
    let sa = s * a;
    let mut ds = -sa - sa.transpose() - s * gqg * s * tuning.lambda;
    if let Some(ri) = r_inv {
        ds += embed(ri);
    }
    ds
}

/// Right-hand side of the state equation.
fn state_rhs<T: Real>(
    x: &Vector7<T>,
    s: &Matrix7<T>,
    y_g: &Vector3<T>,
    meas: Option<(&Quat4<T>, &Matrix4<T>)>,
) -> Result<Vector7<T>> {
    let mut dx = drift(x, y_g);
    if let Some((q1, r_inv)) = meas {
        let (_, q) = split(x);
        let innov = r_inv * (q1 - q);
        let rhs = stack(&Vector3::zeros(), &innov);
        let chol = s.cholesky().ok_or(Error::NotPositiveDefinite("S"))?;
        dx += chol.solve(&rhs);
    }
    Ok(dx)
}

fn symmetrize<T: Real>(s: &Matrix7<T>) -> Matrix7<T> {
    (s + s.transpose()) * lit::<T>(0.5)
}

fn check_step<T: Real>(s: &Matrix7<T>, dt: T) -> Result<()> {
    if s.iter().all(|v| v.is_finite()) && s.cholesky().is_some() {
        Ok(())
    } else {
        Err(Error::StepSize { dt: to_f64(dt) })
    }
}

/// One RK4 step of the Riccati equation with the state and inputs held fixed.
pub fn riccati_step<T: Real>(
    s: &Matrix7<T>,
    x: &Vector7<T>,
    y_g: &Vector3<T>,
    tuning: &EkfTuning<T>,
    r_t: Option<&Matrix4<T>>,
    dt: T,
) -> Result<Matrix7<T>> {
    let ri = r_t.map(information).transpose()?;
    let f = |s: &Matrix7<T>| riccati_rhs(s, x, y_g, tuning, ri.as_ref());
    let half: T = lit(0.5);
    let k1 = f(s);
    let k2 = f(&(s + k1 * (dt * half)));
    let k3 = f(&(s + k2 * (dt * half)));
    let k4 = f(&(s + k3 * dt));
    let out = symmetrize(&(s + (k1 + (k2 + k3) * lit::<T>(2.0) + k4) * (dt / lit(6.0))));
    check_step(&out, dt)?;
    Ok(out)
}

/// One RK4 step of the state equation with `S` and inputs held fixed.
pub fn state_step<T: Real>(
    x: &Vector7<T>,
    s: &Matrix7<T>,
    q1: Option<&Quat4<T>>,
    y_g: &Vector3<T>,
    r_t: Option<&Matrix4<T>>,
    dt: T,
) -> Result<Vector7<T>> {
    let ri = match (q1, r_t) {
        (Some(_), Some(r)) => Some(information(r)?),
        _ => None,
    };
    let meas = q1.zip(ri.as_ref());
    let f = |x: &Vector7<T>| state_rhs(x, s, y_g, meas);
    let half: T = lit(0.5);
    let k1 = f(x)?;
    let k2 = f(&(x + k1 * (dt * half)))?;
    let k3 = f(&(x + k2 * (dt * half)))?;
    let k4 = f(&(x + k3 * dt))?;
    Ok(x + (k1 + (k2 + k3) * lit::<T>(2.0) + k4) * (dt / lit(6.0)))
}

/// Filter output at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EkfOutput<T: Real> {
    pub t: T,
    pub phi_hat: T,
    pub q_hat: UnitQuat<T>,
    pub b_g_hat: Vector3<T>,
    pub s_eigen_range: (T, T),
    pub s_diag: Vector7<T>,
    /// Trace of the measurement covariance in use, zero when coasting.
    pub r_trace: T,
    /// RK4 substeps used for the last frame.
    pub substeps: usize,
}

/// `h(x)`: roll of the normalized quaternion.
pub fn output_roll<T: Real>(q: &Quat4<T>) -> Result<T> {
    euler_from_quat(q)
        .map(|e| e.angles.phi)
        .map_err(|_| Error::Invariant("quaternion estimate collapsed to zero".into()))
}

#[derive(Debug, Clone, Copy)]
struct Input<T: Real> {
    y_g: Vector3<T>,
    q1: Option<Quat4<T>>,
}

/// Stateful filter stepping frame to frame.
#[derive(Debug, Clone)]
pub struct Ekf<T: Real> {
    tuning: EkfTuning<T>,
    stiffness_step: T,
    max_substeps: usize,
    state: Option<ObserverState<T>>,
    t: T,
    last_input: Option<Input<T>>,
    r_inv: Option<Matrix4<T>>,
    r_trace: T,
}

impl<T: Real> Ekf<T> {
    pub fn new(cfg: &EkfConfig, gyro: &NoiseParams) -> Result<Self> {
        Ok(Self {
            tuning: EkfTuning::from_config(cfg, gyro)?,
            stiffness_step: lit(cfg.stiffness_step),
            max_substeps: cfg.max_substeps,
            state: None,
            t: T::zero(),
            last_input: None,
            r_inv: None,
            r_trace: T::zero(),
        })
    }

    pub fn tuning(&self) -> &EkfTuning<T> {
        &self.tuning
    }

    pub fn state(&self) -> Option<&ObserverState<T>> {
        self.state.as_ref()
    }

    pub fn is_initialized(&self) -> bool {
        self.state.is_some()
    }

    /// Starts the filter at `x̂ = (b0, q0)`, `S = s₀ I`.
    pub fn initialize(&mut self, t: T, b0: Vector3<T>, q0: Quat4<T>) {
        self.state = Some(ObserverState {
            b_g: b0,
            q: q0,
            s: Matrix7::identity() * self.tuning.s0,
        });
        self.t = t;
        self.last_input = None;
    }

    /// Bound on the local linear rate of the joint state/Riccati system.
    fn stiffness(&self, st: &ObserverState<T>, y_g: &Vector3<T>, r_inv: Option<&Matrix4<T>>) -> Result<T> {
        let x = st.x();
        let a = jacobian_a(&x, y_g);
        let g = diffusion_g(&st.q);
        let gqg = g * self.tuning.q * g.transpose();
        let eig = st.s.symmetric_eigenvalues();
        let s_max = eig.max();
        let mut rho = a.norm().max(lit::<T>(2.0) * self.tuning.lambda * gqg.norm() * s_max);
        if let Some(ri) = r_inv {
            let l = st.s.cholesky().ok_or(Error::NotPositiveDefinite("S"))?;
            let linv = l.l().try_inverse().ok_or(Error::NotPositiveDefinite("S"))?;
            let k = linv * embed(ri) * linv.transpose();
            rho = rho.max(symmetrize(&k).symmetric_eigenvalues().max());
        }
        Ok(rho)
    }

    fn joint_rk4(
        &self,
        st: &ObserverState<T>,
        h: T,
        from: &Input<T>,
        to: &Input<T>,
        u0: T,
        u1: T,
        r_inv: Option<&Matrix4<T>>,
    ) -> Result<ObserverState<T>> {
        let lerp = |a: &Vector3<T>, b: &Vector3<T>, u: T| a + (b - a) * u;
        let q1_at = |u: T| match (from.q1, to.q1) {
            (Some(a), Some(b)) => Some(a + (b - a) * u),
            (None, Some(b)) => Some(b),
            _ => None,
        };
        let meas_ri = if to.q1.is_some() { r_inv } else { None };
        let f = |x: &Vector7<T>, s: &Matrix7<T>, u: T| -> Result<(Vector7<T>, Matrix7<T>)> {
            let yg = lerp(&from.y_g, &to.y_g, u);
            let q1 = q1_at(u);
            let meas = q1.as_ref().zip(meas_ri);
            Ok((state_rhs(x, s, &yg, meas)?, riccati_rhs(s, x, &yg, &self.tuning, meas_ri)))
        };
        let half: T = lit(0.5);
        let um = (u0 + u1) * half;
        let (x, s) = (st.x(), st.s);
        let (kx1, ks1) = f(&x, &s, u0)?;
        let (kx2, ks2) = f(&(x + kx1 * (h * half)), &symmetrize(&(s + ks1 * (h * half))), um)?;
        let (kx3, ks3) = f(&(x + kx2 * (h * half)), &symmetrize(&(s + ks2 * (h * half))), um)?;
        let (kx4, ks4) = f(&(x + kx3 * h), &symmetrize(&(s + ks3 * h)), u1)?;
        let two: T = lit(2.0);
        let sixth = h / lit(6.0);
        let xn = x + (kx1 + (kx2 + kx3) * two + kx4) * sixth;
        let sn = symmetrize(&(s + (ks1 + (ks2 + ks3) * two + ks4) * sixth));
        check_step(&sn, h)?;
        if !xn.iter().all(|v| v.is_finite()) {
            return Err(Error::StepSize { dt: to_f64(h) });
        }
        let (b_g, q) = split(&xn);
        Ok(ObserverState { b_g, q, s: sn })
    }

    /// Advances to frame time `t` with gyro sample `y_g` and, when available, the
    /// pre-filter output of that frame. The first available output initializes the filter.
    pub fn update(&mut self, t: T, y_g: Vector3<T>, pre: Option<&PrefilterOutput<T>>) -> Result<Option<EkfOutput<T>>> {
        if self.state.is_none() {
            match pre {
                Some(p) => self.initialize(t, Vector3::zeros(), p.q1),
                None => return Ok(None),
            }
        }
        if let Some(p) = pre {
            self.r_inv = Some(information(&p.r_t)?);
            self.r_trace = p.r_t.trace();
        } else {
            self.r_trace = T::zero();
        }
        let input = Input {
            y_g,
            q1: pre.map(|p| p.q1),
        };
        let mut substeps = 0;
        if let Some(prev) = self.last_input {
            let dt = t - self.t;
            if !(dt > T::zero()) {
                return Err(Error::Data("filter time must increase".into()));
            }
            substeps = self.propagate(dt, &prev, &input)?;
        }
        self.t = t;
        self.last_input = Some(input);
        self.output(substeps).map(Some)
    }

    fn propagate(&mut self, dt: T, from: &Input<T>, to: &Input<T>) -> Result<usize> {
        let mut st = self.state.expect("initialized");
        let r_inv = if to.q1.is_some() { self.r_inv } else { None };
        let mut u = T::zero();
        let mut count = 0usize;
        while u < T::one() {
            let yg = from.y_g + (to.y_g - from.y_g) * u;
            let rho = self.stiffness(&st, &yg, r_inv.as_ref())?;
            let mut h = (self.stiffness_step / rho).min(dt * (T::one() - u));
            let mut tries = 0;
            loop {
                let du = h / dt;
                let u1 = (u + du).min(T::one());
                match self.joint_rk4(&st, h, from, to, u, u1, r_inv.as_ref()) {
                    Ok(next) => {
                        st = next;
                        u = if (T::one() - u1) * dt < T::default_epsilon() * lit(16.0) * dt { T::one() } else { u1 };
                        break;
                    }
                    Err(Error::StepSize { .. } | Error::NotPositiveDefinite(_)) if tries < 30 => {
                        h *= lit::<T>(0.5);
                        tries += 1;
                    }
                    Err(e) => return Err(e),
                }
            }
            count += 1;
            if count > self.max_substeps {
                return Err(Error::StepSize { dt: to_f64(dt) });
            }
        }
        self.state = Some(st);
        Ok(count)
    }

    pub fn output(&self, substeps: usize) -> Result<EkfOutput<T>> {
        let st = self.state.as_ref().ok_or_else(|| Error::Invariant("filter not initialized".into()))?;
        let eig = st.s.symmetric_eigenvalues();
        Ok(EkfOutput {
            t: self.t,
            phi_hat: output_roll(&st.q)?,
            q_hat: UnitQuat::new_normalize(st.q).map_err(|_| Error::Invariant("zero quaternion".into()))?,
            b_g_hat: st.b_g,
            s_eigen_range: (eig.min(), eig.max()),
            s_diag: st.s.diagonal(),
            r_trace: self.r_trace,
            substeps,
        })
    }
}
