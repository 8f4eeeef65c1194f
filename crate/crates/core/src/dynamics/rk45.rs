//! Dormand–Prince 5(4) embedded pair with FSAL and step-size control, on a
//! flat complex state vector. The right-hand side is autonomous, so the
//! stage times never enter.

use crate::error::{Error, Result};
use crate::quantum::C64;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// fifth-order weights minus embedded fourth-order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 5.0;
const BETA: f64 = 0.04;

#[derive(Clone, Copy, Debug)]
pub struct Tolerances {
    pub rel: f64,
    pub abs: f64,
    pub max_step: f64,
}

#[derive(Clone, Debug, Default, serde::Serialize)]
pub struct Stats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

/// Adaptive integrator that keeps its step size between calls to
/// [`DormandPrince::advance`].
pub struct DormandPrince {
    tol: Tolerances,
    h: Option<f64>,
    err_old: f64,
    k: [Vec<C64>; 7],
    y_stage: Vec<C64>,
    y_new: Vec<C64>,
    fsal_valid: bool,
    pub stats: Stats,
}

impl DormandPrince {
    pub fn new(n: usize, tol: Tolerances) -> Self {
        let z = vec![C64::default(); n];
        Self {
            tol,
            h: None,
            err_old: 1e-4,
            k: [z.clone(), z.clone(), z.clone(), z.clone(), z.clone(), z.clone(), z.clone()],
            y_stage: z.clone(),
            y_new: z,
            fsal_valid: false,
            stats: Stats::default(),
        }
    }

    /// Forget the cached derivative; call when the right-hand side changes.
    pub fn reset(&mut self) {
        self.fsal_valid = false;
        self.err_old = 1e-4;
    }

    fn scaled_norm(&self, y: &[C64], y_new: &[C64], err: &[C64]) -> f64 {
        let mut acc = 0.0;
        for ((a, b), e) in y.iter().zip(y_new).zip(err) {
            let sc = self.tol.abs + self.tol.rel * a.norm().max(b.norm());
            acc += (e.norm() / sc).powi(2);
        }
        (acc / y.len() as f64).sqrt()
    }

    fn initial_step<F>(&mut self, y: &[C64], f: &mut F) -> f64
    where
        F: FnMut(&[C64], &mut [C64]),
    {
        let n = y.len() as f64;
        let norm = |v: &[C64], w: &[C64]| -> f64 {
            (v.iter()
                .zip(w)
                .map(|(a, s)| (a.norm() / (self.tol.abs + self.tol.rel * s.norm())).powi(2))
                .sum::<f64>()
                / n)
                .sqrt()
        };
        let d0 = norm(y, y);
        let d1 = norm(&self.k[0], y);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let h0 = h0.min(self.tol.max_step);
        for i in 0..y.len() {
            self.y_stage[i] = y[i] + self.k[0][i] * h0;
        }
        f(&self.y_stage, &mut self.k[1]);
        self.stats.rhs_evals += 1;
        let diff: Vec<C64> = self.k[1].iter().zip(&self.k[0]).map(|(a, b)| (a - b) / h0).collect();
        let d2 = norm(&diff, y);
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        (100.0 * h0).min(h1).min(self.tol.max_step)
    }

    /// Integrate `y` from `t` to exactly `t_end`.
    pub fn advance<F>(&mut self, y: &mut [C64], t: f64, t_end: f64, f: &mut F) -> Result<()>
    where
        F: FnMut(&[C64], &mut [C64]),
    {
        let mut t = t;
        if !self.fsal_valid {
            f(y, &mut self.k[0]);
            self.stats.rhs_evals += 1;
            self.fsal_valid = true;
        }
        if self.h.is_none() {
            let h0 = self.initial_step(y, f);
            self.h = Some(h0);
        }
        let n = y.len();
        while t < t_end {
            let remaining = t_end - t;
            let mut h = self.h.unwrap().min(self.tol.max_step);
            let last = h >= remaining * (1.0 - 1e-12);
            if last {
                h = remaining;
            }
            if h < 1e-14 * t.abs().max(1.0) {
                return Err(Error::StepSizeUnderflow { time: t, step: h });
            }

            let [k1, k2, k3, k4, k5, k6, k7] = &mut self.k;
            let ys = &mut self.y_stage;
            for i in 0..n {
                ys[i] = y[i] + k1[i] * (h * A21);
            }
            f(ys, k2);
            for i in 0..n {
                ys[i] = y[i] + (k1[i] * A31 + k2[i] * A32) * h;
            }
            f(ys, k3);
            for i in 0..n {
                ys[i] = y[i] + (k1[i] * A41 + k2[i] * A42 + k3[i] * A43) * h;
            }
            f(ys, k4);
            for i in 0..n {
                ys[i] = y[i] + (k1[i] * A51 + k2[i] * A52 + k3[i] * A53 + k4[i] * A54) * h;
            }
            f(ys, k5);
            for i in 0..n {
                ys[i] = y[i]
                    + (k1[i] * A61 + k2[i] * A62 + k3[i] * A63 + k4[i] * A64 + k5[i] * A65) * h;
            }
            f(ys, k6);
            let yn = &mut self.y_new;
            for i in 0..n {
                yn[i] = y[i]
                    + (k1[i] * A71 + k3[i] * A73 + k4[i] * A74 + k5[i] * A75 + k6[i] * A76) * h;
            }
            f(yn, k7);
            self.stats.rhs_evals += 6;

            // reuse the stage buffer for the error estimate
            for i in 0..n {
                ys[i] = (k1[i] * E1 + k3[i] * E3 + k4[i] * E4 + k5[i] * E5 + k6[i] * E6 + k7[i] * E7)
                    * h;
            }
            let err = self.scaled_norm(y, &self.y_new, &self.y_stage);

            if err <= 1.0 {
                let fac = if err == 0.0 {
                    FAC_MAX
                } else {
                    (SAFETY * err.powf(-0.2 + 0.75 * BETA) * self.err_old.powf(BETA))
                        .clamp(FAC_MIN, FAC_MAX)
                };
                self.err_old = err.max(1e-4);
                y.copy_from_slice(&self.y_new);
                self.k.swap(0, 6);
                t = if last { t_end } else { t + h };
                self.stats.accepted += 1;
                // keep the controller's own proposal even when the step was
                // truncated to land on t_end
                let proposed = if last { self.h.unwrap().max(h) } else { h * fac };
                self.h = Some(if last { proposed } else { proposed.min(self.tol.max_step) });
            } else {
                let fac = (SAFETY * err.powf(-0.2)).max(FAC_MIN);
                self.h = Some(h * fac);
                self.stats.rejected += 1;
            }
        }
        Ok(())
    }
}
