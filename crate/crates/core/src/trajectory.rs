//! Synthetic ground truth: closed track, limit-curve speed profile and
//! coordinated-manoeuvre attitude with a rider lean offset.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::attitude::{
    acceleration_from_aero, body_rates_from_euler_rates, manoeuvre_denominator, rotation_from_euler,
    velocity_from_aero, EulerAngles, GravityModel, KinematicStateExtended, LapCounters, DEFAULT_A_FLOOR,
    STANDARD_GRAVITY,
};
use crate::error::{Error, Result};

const GL_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683_1,
    0.0,
    0.538_469_310_105_683_1,
    0.906_179_845_938_664,
];
const GL_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189_1,
    0.478_628_670_499_366_5,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
];

/// Track building block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrackElement {
    Straight {
        length: f64,
    },
    /// Turn through `angle` (rad, positive to the right) at `radius`, entered
    /// and left through clothoids of length `transition` each.
    Arc {
        angle: f64,
        radius: f64,
        #[serde(default)]
        transition: f64,
    },
}

/// Sinusoidal grade profile `gamma(s) = amplitude · sin(2π waves s / L)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlopeProfile {
    pub amplitude: f64,
    pub waves: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackSpec {
    pub elements: Vec<TrackElement>,
    #[serde(default)]
    pub initial_heading: f64,
    #[serde(default)]
    pub slope: Option<SlopeProfile>,
}

impl TrackSpec {
    /// Two straights joined by two half turns.
    pub fn stadium(straight: f64, radius: f64, transition: f64) -> Self {
        let arc = TrackElement::Arc {
            angle: PI,
            radius,
            transition,
        };
        Self {
            elements: vec![
                TrackElement::Straight { length: straight },
                arc,
                TrackElement::Straight { length: straight },
                arc,
            ],
            initial_heading: 0.0,
            slope: None,
        }
    }

    pub fn circle(radius: f64) -> Self {
        Self {
            elements: vec![TrackElement::Arc {
                angle: TAU,
                radius,
                transition: 0.0,
            }],
            initial_heading: 0.0,
            slope: None,
        }
    }
}

impl Default for TrackSpec {
    fn default() -> Self {
        Self::stadium(400.0, 60.0, 40.0)
    }
}

/// Segment of linearly varying curvature.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Piece {
    s0: f64,
    len: f64,
    k0: f64,
    k1: f64,
    chi0: f64,
    /// Index of the generating straight, used by the closure solver.
    straight: Option<usize>,
}

impl Piece {
    fn curvature(&self, u: f64) -> f64 {
        self.k0 + (self.k1 - self.k0) * u / self.len
    }

    fn heading(&self, u: f64) -> f64 {
        self.chi0 + self.k0 * u + 0.5 * (self.k1 - self.k0) * u * u / self.len
    }

    fn dkappa(&self) -> f64 {
        (self.k1 - self.k0) / self.len
    }

    /// Planar displacement over the piece, by composite Gauss-Legendre quadrature.
    fn displacement(&self) -> Vector2<f64> {
        let n = (self.len / 2.0).ceil().max(1.0) as usize;
        let h = self.len / n as f64;
        let mut d = Vector2::zeros();
        for j in 0..n {
            let mid = (j as f64 + 0.5) * h;
            for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
                let chi = self.heading(mid + 0.5 * h * x);
                d += Vector2::new(chi.cos(), chi.sin()) * (0.5 * h * w);
            }
        }
        d
    }
}

/// Arc-length parametrized closed centreline.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackModel {
    pieces: Vec<Piece>,
    length: f64,
    /// Net heading change per lap, `±2π`.
    turn: f64,
    slope: Option<SlopeProfile>,
}

/// Local geometry at one arc length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPoint {
    pub kappa: f64,
    pub dkappa: f64,
    pub chi: f64,
    pub gamma: f64,
    pub dgamma: f64,
    pub ddgamma: f64,
}

fn pieces_from_spec(elements: &[TrackElement], lengths: &[f64], chi0: f64) -> Result<Vec<Piece>> {
    let mut pieces = Vec::new();
    let mut s = 0.0;
    let mut chi = chi0;
    let mut push = |len: f64, k0: f64, k1: f64, straight: Option<usize>, pieces: &mut Vec<Piece>| {
        if len > 0.0 {
            let p = Piece {
                s0: s,
                len,
                k0,
                k1,
                chi0: chi,
                straight,
            };
            chi = p.heading(len);
            s += len;
            pieces.push(p);
        }
    };
    for (i, e) in elements.iter().enumerate() {
        match *e {
            TrackElement::Straight { .. } => {
                let len = lengths[i];
                if !(len > 0.0) {
                    return Err(Error::Geometry(format!("straight {i} has non-positive length {len}")));
                }
                push(len, 0.0, 0.0, Some(i), &mut pieces);
            }
            TrackElement::Arc {
                angle,
                radius,
                transition,
            } => {
                if !(radius > 0.0) || !(transition >= 0.0) || angle == 0.0 || !angle.is_finite() {
                    return Err(Error::Geometry(format!("arc {i} has invalid parameters")));
                }
                let k = angle.signum() / radius;
                let body = angle.abs() * radius - transition;
                if body < 0.0 {
                    return Err(Error::Geometry(format!(
                        "arc {i}: transitions too long for a {angle} rad turn"
                    )));
                }
                push(transition, 0.0, k, None, &mut pieces);
                push(body, k, k, None, &mut pieces);
                push(transition, k, 0.0, None, &mut pieces);
            }
        }
    }
    Ok(pieces)
}

/// Builds a closed track; the two first non-parallel straights absorb any position mismatch.
pub fn build_track(spec: &TrackSpec) -> Result<TrackModel> {
    if spec.elements.is_empty() {
        return Err(Error::Geometry("empty track".into()));
    }
    let turn: f64 = spec
        .elements
        .iter()
        .map(|e| match e {
            TrackElement::Straight { .. } => 0.0,
            TrackElement::Arc { angle, .. } => *angle,
        })
        .sum();
    if (turn.abs() - TAU).abs() > 1e-6 {
        return Err(Error::Geometry(format!("net heading change {turn} rad is not ±2π")));
    }
    let mut lengths: Vec<f64> = spec
        .elements
        .iter()
        .map(|e| match e {
            TrackElement::Straight { length } => *length,
            TrackElement::Arc { .. } => 0.0,
        })
        .collect();
    let mut pieces = pieces_from_spec(&spec.elements, &lengths, spec.initial_heading)?;
    let residual: Vector2<f64> = pieces.iter().map(Piece::displacement).sum();
    let tolerance = 1e-9_f64.max(1e-15 * pieces.iter().map(|p| p.len).sum::<f64>());
    if residual.norm() > tolerance {
        let straights: Vec<(usize, f64)> = pieces
            .iter()
            .filter_map(|p| p.straight.map(|i| (i, p.chi0)))
            .collect();
        let pair = straights.iter().enumerate().find_map(|(a, &(i, ci))| {
            straights[a + 1..]
                .iter()
                .find(|&&(_, cj)| (ci - cj).sin().abs() > 0.1)
                .map(|&(j, cj)| (i, ci, j, cj))
        });
        let (i, ci, j, cj) = pair.ok_or_else(|| {
            Error::Geometry(format!(
                "track does not close (residual {:.3e} m) and has no two non-parallel straights",
                residual.norm()
            ))
        })?;
        let m = Matrix2::new(ci.cos(), cj.cos(), ci.sin(), cj.sin());
        let dl = m
            .lu()
            .solve(&(-residual))
            .ok_or_else(|| Error::Geometry("closure system is singular".into()))?;
        lengths[i] += dl[0];
        lengths[j] += dl[1];
        pieces = pieces_from_spec(&spec.elements, &lengths, spec.initial_heading)?;
    }
    let length = pieces.iter().map(|p| p.len).sum();
    Ok(TrackModel {
        pieces,
        length,
        turn: turn.signum() * TAU,
        slope: spec.slope,
    })
}

impl TrackModel {
    pub fn length(&self) -> f64 {
        self.length
    }

    /// Heading change per lap, `±2π`.
    pub fn net_turn(&self) -> f64 {
        self.turn
    }

    /// Planar closure error of the centreline, m.
    pub fn closure_residual(&self) -> f64 {
        self.pieces.iter().map(Piece::displacement).sum::<Vector2<f64>>().norm()
    }

    fn locate(&self, s: f64) -> (usize, f64) {
        let i = self.pieces.partition_point(|p| p.s0 <= s).saturating_sub(1);
        let p = &self.pieces[i];
        (i, (s - p.s0).clamp(0.0, p.len))
    }

    /// Geometry at arc length `s` (any real; laps wrap with the heading unwrapped).
    pub fn point(&self, s: f64) -> TrackPoint {
        let lap = (s / self.length).floor();
        let sl = s - lap * self.length;
        let (i, u) = self.locate(sl);
        let p = &self.pieces[i];
        let (gamma, dgamma, ddgamma) = match self.slope {
            Some(sp) if sp.amplitude != 0.0 && sp.waves > 0 => {
                let w = TAU * f64::from(sp.waves) / self.length;
                let (sn, c) = (w * sl).sin_cos();
                (sp.amplitude * sn, sp.amplitude * w * c, -sp.amplitude * w * w * sn)
            }
            _ => (0.0, 0.0, 0.0),
        };
        TrackPoint {
            kappa: p.curvature(u),
            dkappa: p.dkappa(),
            chi: p.heading(u) + lap * self.turn,
            gamma,
            dgamma,
            ddgamma,
        }
    }

    /// Largest |curvature| on `[s0, s1]` within one lap, including both sides of discontinuities.
    pub fn max_abs_curvature(&self, s0: f64, s1: f64) -> f64 {
        let mut m: f64 = 0.0;
        for p in &self.pieces {
            let (a, b) = (p.s0, p.s0 + p.len);
            if b < s0 || a > s1 {
                continue;
            }
            let ua = (s0.max(a) - a).clamp(0.0, p.len);
            let ub = (s1.min(b) - a).clamp(0.0, p.len);
            m = m.max(p.curvature(ua).abs()).max(p.curvature(ub).abs());
        }
        m
    }

    pub fn max_curvature(&self) -> f64 {
        self.max_abs_curvature(0.0, self.length)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeedProfileLimits {
    /// Peak tyre friction coefficient.
    pub mu_max: f64,
    /// Longitudinal acceleration cap (wheelie), m/s².
    pub a_long_max: f64,
    /// Engine power, W.
    pub p_max: f64,
    pub mass: f64,
    /// Drag area, m².
    pub cda: f64,
    /// Air density, kg/m³.
    pub rho: f64,
}

impl Default for SpeedProfileLimits {
    fn default() -> Self {
        Self {
            mu_max: 1.2,
            a_long_max: 9.0,
            p_max: 150e3,
            mass: 250.0,
            cda: 0.3,
            rho: 1.2,
        }
    }
}

impl SpeedProfileLimits {
    pub fn validate(&self) -> Result<()> {
        let v = [self.mu_max, self.a_long_max, self.p_max, self.mass, self.cda, self.rho];
        if v.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
            return Err(Error::Infeasible("speed-profile limits must all be positive".into()));
        }
        Ok(())
    }

    /// Speed at which aerodynamic drag absorbs the full engine power.
    pub fn terminal_speed(&self) -> f64 {
        (2.0 * self.p_max / (self.rho * self.cda)).cbrt()
    }

    fn drag_force(&self, v: f64) -> f64 {
        0.5 * self.rho * self.cda * v * v
    }

    /// Friction left for longitudinal use at speed `v` on curvature `kappa`.
    fn friction_long(&self, v: f64, kappa: f64) -> f64 {
        let mg = self.mu_max * STANDARD_GRAVITY;
        let r = kappa * v * v / mg;
        mg * (1.0 - r * r).max(0.0).sqrt()
    }

    fn accel_cap(&self, v: f64, kappa: f64) -> f64 {
        let power = (self.p_max / v - self.drag_force(v)) / self.mass;
        self.a_long_max.min(power).min(self.friction_long(v, kappa))
    }
}

/// Largest `a` in `[0, hi]` with `a <= cap(sqrt(v0² + 2 a ds))`.
fn max_cell_accel(v0: f64, ds: f64, hi: f64, cap: impl Fn(f64) -> f64) -> f64 {
    let ok = |a: f64| a <= cap((v0 * v0 + 2.0 * a * ds).sqrt());
    if ok(hi) {
        return hi;
    }
    if !ok(0.0) {
        return 0.0;
    }
    let (mut lo, mut up) = (0.0, hi);
    for _ in 0..60 {
        let mid = 0.5 * (lo + up);
        if ok(mid) {
            lo = mid;
        } else {
            up = mid;
        }
    }
    lo
}

/// Periodic speed profile on a uniform arc-length grid, constant acceleration per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedProfile {
    ds: f64,
    length: f64,
    /// Speed at nodes `0..=n`; node `n` coincides with node 0.
    v: Vec<f64>,
    /// Time at nodes, `t[0] = 0`, `t[n]` is the lap time.
    t: Vec<f64>,
    /// Acceleration per cell.
    a: Vec<f64>,
    v_lim: Vec<f64>,
}

/// Kinematics along the path at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathState {
    /// Arc length including completed laps.
    pub s: f64,
    pub v: f64,
    pub a: f64,
    pub lap: u64,
}

/// Two-pass limit-curve speed profile (friction ellipse, power and drag, acceleration cap).
pub fn speed_profile(track: &TrackModel, limits: &SpeedProfileLimits, ds_target: f64) -> Result<SpeedProfile> {
    limits.validate()?;
    if !(ds_target > 0.0) {
        return Err(Error::Config("profile grid step must be positive".into()));
    }
    let length = track.length();
    let n = (length / ds_target).ceil().max(4.0) as usize;
    let ds = length / n as f64;
    let mg = limits.mu_max * STANDARD_GRAVITY;
    let v_top = limits.terminal_speed();

    // Curvature bound per cell and speed limit per node.
    let k_cell: Vec<f64> = (0..n)
        .map(|i| track.max_abs_curvature(i as f64 * ds, (i + 1) as f64 * ds))
        .collect();
    let v_lim: Vec<f64> = (0..n)
        .map(|i| {
            let k = k_cell[i].max(k_cell[(i + n - 1) % n]);
            if k > 0.0 {
                (mg / k).sqrt().min(v_top)
            } else {
                v_top
            }
        })
        .collect();
    let start = v_lim
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    if v_lim[start] < 1.0 {
        return Err(Error::Infeasible(format!(
            "limit speed {:.3} m/s too low to define a course",
            v_lim[start]
        )));
    }

    let mut v = v_lim.clone();
    v[start] = v_lim[start];
    for step in 0..n {
        let i = (start + step) % n;
        let j = (i + 1) % n;
        let a = max_cell_accel(v[i], ds, limits.a_long_max.min(mg), |vu| limits.accel_cap(vu, k_cell[i]));
        v[j] = v_lim[j].min((v[i] * v[i] + 2.0 * a * ds).sqrt());
    }
    for step in 0..n {
        let j = (start + n - step) % n;
        let i = (j + n - 1) % n;
        let d = max_cell_accel(v[j], ds, mg, |vu| limits.friction_long(vu, k_cell[i]));
        v[i] = v[i].min((v[j] * v[j] + 2.0 * d * ds).sqrt());
    }

    v.push(v[0]);
    let mut t = Vec::with_capacity(n + 1);
    let mut a = Vec::with_capacity(n);
    t.push(0.0);
    for i in 0..n {
        a.push((v[i + 1] * v[i + 1] - v[i] * v[i]) / (2.0 * ds));
        t.push(t[i] + 2.0 * ds / (v[i] + v[i + 1]));
    }
    Ok(SpeedProfile {
        ds,
        length,
        v,
        t,
        a,
        v_lim,
    })
}

impl SpeedProfile {
    pub fn lap_time(&self) -> f64 {
        *self.t.last().unwrap()
    }

    pub fn grid_step(&self) -> f64 {
        self.ds
    }

    /// Node speeds over one lap, including the closing node.
    pub fn node_speeds(&self) -> &[f64] {
        &self.v
    }

    pub fn cell_accelerations(&self) -> &[f64] {
        &self.a
    }

    pub fn speed_limits(&self) -> &[f64] {
        &self.v_lim
    }

    /// Speed at arc length `s` within a lap.
    pub fn speed_at(&self, s: f64) -> f64 {
        let sl = s.rem_euclid(self.length);
        let i = ((sl / self.ds).floor() as usize).min(self.a.len() - 1);
        let u = sl - i as f64 * self.ds;
        (self.v[i] * self.v[i] + 2.0 * self.a[i] * u).max(0.0).sqrt()
    }

    pub fn state_at(&self, t: f64) -> PathState {
        let lt = self.lap_time();
        let lap = (t / lt).floor().max(0.0);
        let tau = t - lap * lt;
        let i = self.t.partition_point(|&x| x <= tau).saturating_sub(1).min(self.a.len() - 1);
        let tp = tau - self.t[i];
        let a = self.a[i];
        PathState {
            s: lap * self.length + i as f64 * self.ds + self.v[i] * tp + 0.5 * a * tp * tp,
            v: self.v[i] + a * tp,
            a,
            lap: lap as u64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TruthOptions {
    /// Rider offset gain `k` in `Δφ = k φ`.
    pub k_rider: f64,
    /// Sample period, s.
    pub dt: f64,
    /// Duration, s.
    pub duration: f64,
    /// Peak side-slip added to the yaw angle (stress knob), rad.
    pub side_slip_max: f64,
    pub g_mag: f64,
    /// Floor on the manoeuvre denominator along the path.
    pub a_floor: f64,
}

impl Default for TruthOptions {
    fn default() -> Self {
        Self {
            k_rider: 0.1,
            dt: 0.01,
            duration: 60.0,
            side_slip_max: 0.0,
            g_mag: STANDARD_GRAVITY,
            a_floor: DEFAULT_A_FLOOR,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthSample {
    pub t: f64,
    /// Arc length including completed laps.
    pub s: f64,
    pub v: Vector3<f64>,
    pub v_dot: Vector3<f64>,
    pub xi: KinematicStateExtended<f64>,
    pub theta: EulerAngles<f64>,
    pub omega: Vector3<f64>,
    /// Roll, equal to `theta.phi`.
    pub phi: f64,
    /// Rider lean offset.
    pub delta_phi: f64,
}

impl TruthSample {
    /// Noise-free accelerometer reading.
    pub fn specific_force(&self, g_mag: f64) -> Vector3<f64> {
        rotation_from_euler(&self.theta) * (self.v_dot - GravityModel::new(g_mag).g_vec)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTruth {
    pub dt: f64,
    pub g_mag: f64,
    pub lap_time: f64,
    pub track_length: f64,
    pub samples: Vec<TruthSample>,
}

impl TrajectoryTruth {
    /// Seam crossings of the course angle implied by the unwrapped truth.
    pub fn seam_crossings(&self) -> LapCounters {
        let mut c = LapCounters::default();
        let idx = |chi: f64| ((chi + PI) / TAU).floor() as i64;
        for w in self.samples.windows(2) {
            let d = idx(w[1].xi.chi) - idx(w[0].xi.chi);
            if d > 0 {
                c.n_plus += d as u32;
            } else if d < 0 {
                c.n_minus += (-d) as u32;
            }
        }
        c
    }

    /// Lap index of each sample.
    pub fn lap_of(&self, i: usize) -> u64 {
        (self.samples[i].t / self.lap_time).floor() as u64
    }
}

fn check_options(opts: &TruthOptions) -> Result<()> {
    if !(opts.dt > 0.0) || !(opts.duration >= 0.0) || !(opts.k_rider >= 0.0) || !(opts.g_mag > 0.0) {
        return Err(Error::Config("truth options out of range".into()));
    }
    Ok(())
}

/// Evaluates the truth at an arbitrary time.
pub fn truth_at(track: &TrackModel, profile: &SpeedProfile, opts: &TruthOptions, t: f64) -> Result<TruthSample> {
    check_options(opts)?;
    let g = opts.g_mag;
    let k_max = track.max_curvature();
    let slip_gain = if k_max > 0.0 { opts.side_slip_max / k_max } else { 0.0 };
    let ps = profile.state_at(t);
    let p = track.point(ps.s);
    let (sg, cg) = p.gamma.sin_cos();
    let (vm, am) = (ps.v, ps.a);
    let chi_dot = p.kappa * vm;
    let chi_ddot = p.dkappa * vm * vm + p.kappa * am;
    let gamma_dot = p.dgamma * vm;
    let gamma_ddot = p.ddgamma * vm * vm + p.dgamma * am;
    let xi = KinematicStateExtended {
        v_mag: vm,
        gamma: p.gamma,
        chi: p.chi,
        v_mag_dot: am,
        gamma_dot,
        chi_dot,
    };

    // Equilibrium roll of the combined centre of gravity, split by the rider law.
    let w = g * cg - vm * gamma_dot;
    let y = vm * chi_dot * cg;
    let w_dot = -g * sg * gamma_dot - am * gamma_dot - vm * gamma_ddot;
    let y_dot = am * chi_dot * cg + vm * chi_ddot * cg - vm * chi_dot * sg * gamma_dot;
    let scale = 1.0 / (1.0 + opts.k_rider);
    let phi = -(y / w).atan() * scale;
    let phi_dot = -(y_dot * w - y * w_dot) / (w * w + y * y) * scale;

    let beta = slip_gain * p.kappa;
    let beta_dot = slip_gain * p.dkappa * vm;
    let theta = EulerAngles::new(phi, p.gamma, p.chi + beta);
    let rates = EulerAngles::new(phi_dot, gamma_dot, chi_dot + beta_dot);
    let sample = TruthSample {
        t,
        s: ps.s,
        v: velocity_from_aero(&xi),
        v_dot: acceleration_from_aero(&xi),
        xi,
        theta,
        omega: body_rates_from_euler_rates(&theta, &rates),
        phi,
        delta_phi: opts.k_rider * phi,
    };
    let den = manoeuvre_denominator(&sample.specific_force(g), &xi, g);
    if !(den > opts.a_floor) {
        return Err(Error::Infeasible(format!(
            "manoeuvre denominator {den:.3} at t = {t:.2} s does not exceed the floor"
        )));
    }
    Ok(sample)
}

/// Samples the coordinated-manoeuvre truth at `opts.dt`.
pub fn generate_truth(track: &TrackModel, profile: &SpeedProfile, opts: &TruthOptions) -> Result<TrajectoryTruth> {
    check_options(opts)?;
    let n = (opts.duration / opts.dt).round() as usize + 1;
    let samples = (0..n)
        .map(|i| truth_at(track, profile, opts, i as f64 * opts.dt))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrajectoryTruth {
        dt: opts.dt,
        g_mag: opts.g_mag,
        lap_time: profile.lap_time(),
        track_length: track.length(),
        samples,
    })
}

/// Convenience: default profile grid step, m.
pub const DEFAULT_PROFILE_STEP: f64 = 0.25;

/// Builds track, profile and truth in one call.
pub fn simulate_truth(
    spec: &TrackSpec,
    limits: &SpeedProfileLimits,
    opts: &TruthOptions,
) -> Result<(TrackModel, SpeedProfile, TrajectoryTruth)> {
    let track = build_track(spec)?;
    let profile = speed_profile(&track, limits, DEFAULT_PROFILE_STEP)?;
    let truth = generate_truth(&track, &profile, opts)?;
    Ok((track, profile, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attitude::{phi_av, quat_from_euler, quat_rate_matrix};
    use approx::assert_relative_eq;

    #[test]
    fn circle_geometry() {
        let t = build_track(&TrackSpec::circle(50.0)).unwrap();
        assert_relative_eq!(t.length(), TAU * 50.0, max_relative = 1e-14);
        for s in [0.0, 10.0, 200.0] {
            assert_relative_eq!(t.point(s).kappa, 0.02, max_relative = 1e-14);
        }
        assert!(t.closure_residual() < 1e-9);
    }

    #[test]
    fn stadium_closes_by_construction() {
        let t = build_track(&TrackSpec::default()).unwrap();
        assert!(t.closure_residual() < 1e-9);
        assert_eq!(t.point(100.0).kappa, 0.0);
        let apex = 400.0 + 60.0 * PI / 2.0;
        assert_relative_eq!(t.point(apex).kappa, 1.0 / 60.0, max_relative = 1e-12);
        // each clothoid pair lengthens a turn by one transition length
        assert_relative_eq!(t.length(), 800.0 + TAU * 60.0 + 80.0, max_relative = 1e-12);
    }

    #[test]
    fn heading_is_integral_of_curvature() {
        let t = build_track(&TrackSpec::default()).unwrap();
        let h = 1e-4;
        let mut s = 0.3;
        while s < 2.0 * t.length() {
            let fd = (t.point(s + h).chi - t.point(s - h).chi) / (2.0 * h);
            assert!((fd - t.point(s).kappa).abs() < 1e-8, "s = {s}");
            s += 7.3;
        }
        assert_relative_eq!(t.point(t.length() + 1.0).chi - t.point(1.0).chi, TAU, epsilon = 1e-12);
    }

    #[test]
    fn open_heading_is_rejected() {
        let spec = TrackSpec {
            elements: vec![
                TrackElement::Straight { length: 100.0 },
                TrackElement::Arc {
                    angle: 3.0,
                    radius: 20.0,
                    transition: 0.0,
                },
            ],
            initial_heading: 0.0,
            slope: None,
        };
        assert!(matches!(build_track(&spec), Err(Error::Geometry(_))));
    }

    #[test]
    fn random_tracks_close_after_adjustment() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let mut angles: Vec<f64> = (0..4).map(|_| rng.random_range(0.3..2.0)).collect();
            let sum: f64 = angles.iter().sum();
            angles.iter_mut().for_each(|a| *a *= TAU / sum);
            let mut elements = Vec::new();
            for a in angles {
                elements.push(TrackElement::Straight {
                    length: rng.random_range(150.0..300.0),
                });
                elements.push(TrackElement::Arc {
                    angle: a,
                    radius: rng.random_range(30.0..80.0),
                    transition: rng.random_range(0.0..10.0),
                });
            }
            let spec = TrackSpec {
                elements,
                initial_heading: rng.random_range(-PI..PI),
                slope: None,
            };
            match build_track(&spec) {
                Ok(t) => assert!(t.closure_residual() < 1e-9),
                Err(Error::Geometry(msg)) => assert!(msg.contains("non-positive"), "{msg}"),
                Err(e) => panic!("{e}"),
            }
        }
    }

    #[test]
    fn circle_profile_is_constant_friction_limited() {
        let r = 60.0;
        let t = build_track(&TrackSpec::circle(r)).unwrap();
        let lim = SpeedProfileLimits::default();
        let p = speed_profile(&t, &lim, 0.5).unwrap();
        let expected = (lim.mu_max * STANDARD_GRAVITY * r).sqrt();
        for v in p.node_speeds() {
            assert_relative_eq!(*v, expected, max_relative = 1e-12);
        }
    }

    #[test]
    fn huge_circle_runs_at_drag_power_balance() {
        let t = build_track(&TrackSpec::circle(1e6)).unwrap();
        let lim = SpeedProfileLimits::default();
        let p = speed_profile(&t, &lim, 50.0).unwrap();
        let vt = lim.terminal_speed();
        // oracle: P = ½ ρ CdA v³
        assert_relative_eq!(0.5 * lim.rho * lim.cda * vt.powi(3), lim.p_max, max_relative = 1e-12);
        for v in p.node_speeds() {
            assert_relative_eq!(*v, vt, max_relative = 1e-12);
        }
    }

    #[test]
    fn straight_line_acceleration_approaches_terminal_speed() {
        let lim = SpeedProfileLimits::default();
        let (mut v, ds) = (5.0, 1.0);
        for _ in 0..100_000 {
            let a = max_cell_accel(v, ds, lim.a_long_max, |vu| lim.accel_cap(vu, 0.0));
            v = (v * v + 2.0 * a * ds).sqrt();
        }
        assert_relative_eq!(v, lim.terminal_speed(), max_relative = 1e-3);
        assert!(v <= lim.terminal_speed());
    }

    fn stadium_profile() -> (TrackModel, SpeedProfile) {
        let t = build_track(&TrackSpec::default()).unwrap();
        let p = speed_profile(&t, &SpeedProfileLimits::default(), DEFAULT_PROFILE_STEP).unwrap();
        (t, p)
    }

    #[test]
    fn stadium_profile_respects_limits() {
        let (t, p) = stadium_profile();
        let lim = SpeedProfileLimits::default();
        let mg = lim.mu_max * STANDARD_GRAVITY;
        let v = p.node_speeds();
        let ds = p.grid_step();
        for (i, a) in p.cell_accelerations().iter().enumerate() {
            let vu = v[i].max(v[i + 1]);
            let k = t.max_abs_curvature(i as f64 * ds, (i + 1) as f64 * ds);
            let lat = k * vu * vu;
            assert!(lat <= mg * (1.0 + 1e-9));
            assert!((a / mg).powi(2) + (lat / mg).powi(2) <= 1.0 + 1e-9, "cell {i}");
            let power = lim.mass * a * vu + 0.5 * lim.rho * lim.cda * vu.powi(3);
            assert!(power <= lim.p_max * (1.0 + 1e-9) + 1e-6, "cell {i}: {power}");
            assert!(*a <= lim.a_long_max * (1.0 + 1e-9));
        }
        assert_eq!(v[0], v[v.len() - 1]);
    }

    #[test]
    fn stadium_profile_brakes_into_and_accelerates_out_of_turns() {
        let (t, p) = stadium_profile();
        let apex = p.speed_at(400.0 + 60.0 * PI / 2.0);
        assert_relative_eq!(apex, (1.2 * STANDARD_GRAVITY * 60.0).sqrt(), max_relative = 1e-9);
        // Along the straight the speed rises to one maximum and then falls.
        let ds = p.grid_step();
        let i0 = ((400.0 + 60.0 * PI) / ds).ceil() as usize + 1;
        let i1 = ((800.0 + 60.0 * PI) / ds).floor() as usize - 1;
        let seg = &p.node_speeds()[i0..i1];
        let peak = seg.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert!(seg[..=peak].windows(2).all(|w| w[1] >= w[0]));
        assert!(seg[peak..].windows(2).all(|w| w[1] <= w[0]));
        assert!(seg[peak] > 1.5 * apex);
        let _ = t;
    }

    #[test]
    fn profile_converges_under_grid_refinement() {
        let t = build_track(&TrackSpec::default()).unwrap();
        let lim = SpeedProfileLimits::default();
        let coarse = speed_profile(&t, &lim, 1.0).unwrap();
        let fine = speed_profile(&t, &lim, 0.0625).unwrap();
        assert_relative_eq!(coarse.lap_time(), fine.lap_time(), max_relative = 5e-3);
        for s in [10.0, 300.0, 500.0, 900.0, 1100.0] {
            assert_relative_eq!(coarse.speed_at(s), fine.speed_at(s), max_relative = 2e-2);
        }
    }

    #[test]
    fn infeasible_limits_are_rejected() {
        let t = build_track(&TrackSpec::default()).unwrap();
        let lim = SpeedProfileLimits {
            mu_max: 0.0,
            ..Default::default()
        };
        assert!(matches!(speed_profile(&t, &lim, 1.0), Err(Error::Infeasible(_))));
    }

    fn stadium_truth(k: f64, duration: f64) -> TrajectoryTruth {
        let (t, p) = stadium_profile();
        let opts = TruthOptions {
            k_rider: k,
            duration,
            ..Default::default()
        };
        generate_truth(&t, &p, &opts).unwrap()
    }

    #[test]
    fn truth_is_coordinated_and_satisfies_roll_identity() {
        let truth = stadium_truth(0.1, 50.0);
        let g = truth.g_mag;
        for s in &truth.samples {
            let vb = rotation_from_euler(&s.theta) * s.v;
            assert!((vb - Vector3::new(s.xi.v_mag, 0.0, 0.0)).norm() < 1e-9);
            let pav = phi_av(&s.specific_force(g), &s.xi, g, DEFAULT_A_FLOOR).unwrap();
            assert!((pav - s.phi).abs() < 1e-9);
            assert_relative_eq!(s.delta_phi, 0.1 * s.phi);
        }
    }

    #[test]
    fn straight_has_zero_roll_and_turn_has_closed_form_roll() {
        let (t, p) = stadium_profile();
        let truth = generate_truth(&t, &p, &TruthOptions { k_rider: 0.0, duration: 40.0, ..Default::default() }).unwrap();
        for s in &truth.samples {
            let sl = s.s.rem_euclid(t.length());
            if sl > 5.0 && sl < 395.0 {
                assert_eq!(s.phi, 0.0);
                assert!(s.omega.norm() < 1e-12);
            }
            let expected = -(s.xi.v_mag * s.xi.chi_dot / truth.g_mag).atan();
            assert!((s.phi - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn body_rates_match_quaternion_finite_differences() {
        let (t, p) = stadium_profile();
        let opts = TruthOptions::default();
        let q = |time: f64| quat_from_euler(&truth_at(&t, &p, &opts, time).unwrap().theta).into_vector();
        let h = 1e-5;
        let (mut checked, mut kinks) = (0, 0);
        for i in 1..4000 {
            let tc = i as f64 * 0.01;
            let (qm, q0, qp) = (q(tc - h), q(tc), q(tc + h));
            // skip the isolated instants where the roll rate jumps within ±h
            if ((qp - q0) - (q0 - qm)).norm() / h > 1e-3 {
                kinks += 1;
                continue;
            }
            let s = truth_at(&t, &p, &opts, tc).unwrap();
            let fd = (qp - qm) / (2.0 * h);
            let an = quat_rate_matrix(&q0) * s.omega;
            assert!((fd - an).norm() < 1e-6, "t = {tc}: {}", (fd - an).norm());
            checked += 1;
        }
        assert!(kinks * 100 < checked, "{kinks} kinks");
    }

    #[test]
    fn laps_repeat() {
        let truth = stadium_truth(0.1, 100.0);
        let lt = truth.lap_time;
        let a = &truth.samples[500];
        let (t, p) = stadium_profile();
        let b = generate_truth(
            &t,
            &p,
            &TruthOptions {
                duration: 0.0,
                ..Default::default()
            },
        )
        .unwrap();
        let _ = b;
        let ps1 = p.state_at(a.t);
        let ps2 = p.state_at(a.t + lt);
        assert_relative_eq!(ps1.v, ps2.v, max_relative = 1e-9);
        assert_relative_eq!(ps2.s - ps1.s, t.length(), max_relative = 1e-9);
    }

    #[test]
    fn seam_crossings_one_per_lap() {
        let truth = stadium_truth(0.1, 3.0 * 39.0);
        let laps = (truth.samples.last().unwrap().t / truth.lap_time).floor() as u32;
        let c = truth.seam_crossings();
        assert_eq!(c.n_minus, 0);
        assert!(c.n_plus == laps || c.n_plus == laps + 1);
    }

    #[test]
    fn slope_profile_keeps_coordination() {
        let spec = TrackSpec {
            slope: Some(SlopeProfile {
                amplitude: 0.05,
                waves: 3,
            }),
            ..TrackSpec::default()
        };
        let (_, _, truth) = simulate_truth(
            &spec,
            &SpeedProfileLimits::default(),
            &TruthOptions {
                duration: 30.0,
                ..Default::default()
            },
        )
        .unwrap();
        let g = truth.g_mag;
        for s in &truth.samples {
            let vb = rotation_from_euler(&s.theta) * s.v;
            assert!((vb - Vector3::new(s.xi.v_mag, 0.0, 0.0)).norm() < 1e-9);
            let pav = phi_av(&s.specific_force(g), &s.xi, g, DEFAULT_A_FLOOR).unwrap();
            assert!((pav - s.phi).abs() < 1e-9);
        }
    }

    #[test]
    fn side_slip_breaks_coordination() {
        let (t, p) = stadium_profile();
        let truth = generate_truth(
            &t,
            &p,
            &TruthOptions {
                side_slip_max: 2f64.to_radians(),
                duration: 30.0,
                ..Default::default()
            },
        )
        .unwrap();
        let worst = truth
            .samples
            .iter()
            .map(|s| (rotation_from_euler(&s.theta) * s.v)[1].abs())
            .fold(0.0, f64::max);
        assert!(worst > 0.1);
    }
}
