//! Seam-crossing detection for the continuous course estimate.

use crate::attitude::LapCounters;
use crate::prefilter::reconstructor::PolyCoeffs;
use crate::scalar::{lit, Real};

/// Direction of a crossing of the `±π` course seam.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrossingDirection {
    /// Course increasing through `π` (`v_y` falls through zero with `v_x < 0`).
    Plus,
    /// Course decreasing through `π`.
    Minus,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossing<T> {
    /// Time of the crossing, relative to the fit epoch.
    pub t: T,
    pub direction: CrossingDirection,
}

/// Real roots of `a t² + b t + c` in `[lo, hi)` with non-zero slope; tangential roots are dropped.
fn quadratic_roots<T: Real>(a: T, b: T, c: T, lo: T, hi: T) -> Vec<T> {
    let scale = b.abs() * hi.abs().max(lo.abs()) + c.abs();
    let span = hi.abs().max(lo.abs());
    let mut roots = Vec::with_capacity(2);
    if a.abs() * span * span <= T::default_epsilon() * scale {
        if b != T::zero() {
            roots.push(-c / b);
        }
    } else {
        let four_ac = lit::<T>(4.0) * a * c;
        let disc = b * b - four_ac;
        // a discriminant at rounding level is a double (tangential) root
        if disc > T::default_epsilon() * lit(64.0) * (b * b).max(four_ac.abs()) {
            let sq = disc.sqrt();
            let q = if b >= T::zero() { -(b + sq) } else { sq - b } * lit::<T>(0.5);
            roots.push(q / a);
            if q != T::zero() {
                roots.push(c / q);
            }
        }
    }
    roots.retain(|r| *r >= lo && *r < hi);
    roots.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
    roots
}

/// Seam crossings of the fitted velocity over `[lo, hi)` (epoch-relative time).
pub fn detect_crossings<T: Real>(coeffs: &PolyCoeffs<T>, lo: T, hi: T) -> Vec<Crossing<T>> {
    let (a, b, c) = (coeffs.c2[1], coeffs.c1[1], coeffs.c0[1]);
    let two: T = lit(2.0);
    quadratic_roots(a, b, c, lo, hi)
        .into_iter()
        .filter_map(|t| {
            let vx = coeffs.c2[0] * t * t + coeffs.c1[0] * t + coeffs.c0[0];
            let slope = two * a * t + b;
            if !(vx < T::zero()) || slope == T::zero() {
                return None;
            }
            let direction = if slope < T::zero() {
                CrossingDirection::Plus
            } else {
                CrossingDirection::Minus
            };
            Some(Crossing { t, direction })
        })
        .collect()
}

/// Lap counters with a refractory debounce.
///
/// A crossing opposite to the previously counted one and closer than the
/// refractory period cancels it, so seam chatter leaves the counters (and
/// the continuity of the course) unchanged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LapCounter<T> {
    pub laps: LapCounters,
    refractory: T,
    last: Option<(T, CrossingDirection)>,
}

impl<T: Real> LapCounter<T> {
    pub fn new(refractory: T) -> Self {
        Self {
            laps: LapCounters::default(),
            refractory,
            last: None,
        }
    }

    /// Registers a crossing at absolute time `t`.
    pub fn register(&mut self, t: T, direction: CrossingDirection) {
        if let Some((t0, d0)) = self.last {
            if d0 != direction && t - t0 < self.refractory {
                match d0 {
                    CrossingDirection::Plus => self.laps.n_plus -= 1,
                    CrossingDirection::Minus => self.laps.n_minus -= 1,
                }
                self.last = None;
                return;
            }
        }
        match direction {
            CrossingDirection::Plus => self.laps.n_plus += 1,
            CrossingDirection::Minus => self.laps.n_minus += 1,
        }
        self.last = Some((t, direction));
    }
}

/// Applies crossings, given in absolute time, to the counters.
pub fn update_lap_counters<T: Real>(counter: &mut LapCounter<T>, crossings: &[Crossing<T>]) -> LapCounters {
    for c in crossings {
        counter.register(c.t, c.direction);
    }
    counter.laps
}
