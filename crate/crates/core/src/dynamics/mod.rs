//! Lindblad master-equation integration with piecewise-constant Hamiltonians.
//!
//! Time is in µs and rates in rad·µs⁻¹ (ħ = 1). The integrator is an adaptive
//! Dormand–Prince 5(4) pair acting on the row-major density matrix; it is
//! restarted at every segment boundary.

mod rk45;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantum::{c, hermitian_eigen, CMatrix, DensityMatrix, Operator, C64};

pub use rk45::Stats as IntegratorStats;

/// Hermiticity tolerance for Hamiltonians passed to the master equation.
pub const HAMILTONIAN_HERMITIAN_TOL: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct CollapseOp {
    pub op: Operator,
    pub label: String,
}

impl CollapseOp {
    pub fn new(op: Operator, label: impl Into<String>) -> Self {
        Self { op, label: label.into() }
    }
}

/// Observable sampled during an evolution.
#[derive(Clone, Debug)]
pub struct Observable {
    pub label: String,
    pub op: Operator,
}

impl Observable {
    pub fn new(label: impl Into<String>, op: Operator) -> Self {
        Self { label: label.into(), op }
    }
}

/// Sampled observable record on a strictly ascending time grid (µs).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeTrace {
    t: Vec<f64>,
    labels: Vec<String>,
    values: Vec<Vec<f64>>,
}

impl TimeTrace {
    pub fn new(t: Vec<f64>, labels: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self> {
        if labels.len() != values.len() {
            return Err(Error::InvalidArgument(format!(
                "{} labels for {} value columns",
                labels.len(),
                values.len()
            )));
        }
        if let Some(col) = values.iter().find(|v| v.len() != t.len()) {
            return Err(Error::DimensionMismatch { expected: t.len(), found: col.len() });
        }
        if t.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::GridMismatch("time grid is not strictly ascending".into()));
        }
        Ok(Self { t, labels, values })
    }

    /// Single-column trace.
    pub fn single(t: Vec<f64>, label: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        Self::new(t, vec![label.into()], vec![values])
    }

    pub fn t(&self) -> &[f64] {
        &self.t
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn column(&self, label: &str) -> Option<&[f64]> {
        self.labels.iter().position(|l| l == label).map(|k| self.values[k].as_slice())
    }

    pub fn column_at(&self, index: usize) -> &[f64] {
        &self.values[index]
    }

    pub fn require(&self, label: &str) -> Result<&[f64]> {
        self.column(label)
            .ok_or_else(|| Error::InvalidArgument(format!("trace has no column `{label}`")))
    }

    /// Append a derived column.
    pub fn with_column(mut self, label: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.t.len() {
            return Err(Error::DimensionMismatch { expected: self.t.len(), found: values.len() });
        }
        self.labels.push(label.into());
        self.values.push(values);
        Ok(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// µs
    pub max_step: f64,
    /// µs
    pub sample_dt: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self { rel_tol: 1e-8, abs_tol: 1e-12, max_step: 0.01, sample_dt: 0.01 }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("rel_tol", self.rel_tol),
            ("abs_tol", self.abs_tol),
            ("max_step", self.max_step),
            ("sample_dt", self.sample_dt),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Constant Hamiltonian applied for `duration` µs.
#[derive(Clone, Debug)]
pub struct Segment {
    pub duration: f64,
    pub hamiltonian: Operator,
}

fn check_hamiltonian(h: &Operator) -> Result<()> {
    let dev = h.hermitian_deviation();
    if dev > HAMILTONIAN_HERMITIAN_TOL {
        return Err(Error::NotHermitian { deviation: dev });
    }
    Ok(())
}

/// `dρ/dt = −i[H,ρ] + Σ_c (cρc† − ½{c†c,ρ})`, evaluated densely.
pub fn lindblad_rhs(rho: &DensityMatrix, h: &Operator, cs: &[CollapseOp]) -> Result<CMatrix> {
    check_hamiltonian(h)?;
    let n = rho.dim();
    if h.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, found: h.dim() });
    }
    let r = rho.matrix();
    let hm = h.matrix();
    let mi = c(0.0, -1.0);
    let mut d = (hm * r - r * hm).map(|z| z * mi);
    for col in cs {
        if col.op.dim() != n {
            return Err(Error::DimensionMismatch { expected: n, found: col.op.dim() });
        }
        let cm = col.op.matrix();
        let cd = cm.adjoint();
        let cdc = &cd * cm;
        d += cm * r * &cd - (&cdc * r + r * &cdc).unscale(2.0);
    }
    Ok(d)
}

/// Sparse row-major matrix used by the compiled generator.
#[derive(Clone, Debug)]
struct Sparse {
    entries: Vec<(usize, usize, C64)>,
}

impl Sparse {
    fn from_dense(m: &CMatrix) -> Self {
        let mut entries = Vec::new();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                let v = m[(i, j)];
                if v != C64::default() {
                    entries.push((i, j, v));
                }
            }
        }
        Self { entries }
    }
}

/// Master-equation generator compiled for repeated evaluation:
/// `dρ = −i(H_eff ρ − ρ H_eff†) + Σ cρc†` with `H_eff = H − (i/2) Σ c†c`.
struct Generator {
    n: usize,
    h_eff: Sparse,
    jumps: Vec<Sparse>,
    scratch: Vec<C64>,
}

impl Generator {
    fn new(h: &Operator, cs: &[CollapseOp]) -> Self {
        let n = h.dim();
        let mut h_eff = h.matrix().clone();
        for col in cs {
            let cm = col.op.matrix();
            h_eff -= (cm.adjoint() * cm).map(|z| z * c(0.0, 0.5));
        }
        Self {
            n,
            h_eff: Sparse::from_dense(&h_eff),
            jumps: cs.iter().map(|col| Sparse::from_dense(col.op.matrix())).collect(),
            scratch: vec![C64::default(); n * n],
        }
    }

    fn apply(&mut self, rho: &[C64], out: &mut [C64]) {
        let n = self.n;
        let x = &mut self.scratch;
        x.iter_mut().for_each(|z| *z = C64::default());
        for &(i, k, v) in &self.h_eff.entries {
            let (row_x, row_r) = (i * n, k * n);
            for j in 0..n {
                x[row_x + j] += v * rho[row_r + j];
            }
        }
        // −i X + i X†, where X = H_eff ρ and ρ H_eff† = X† for Hermitian ρ
        for i in 0..n {
            for j in 0..n {
                let a = x[i * n + j];
                let b = x[j * n + i].conj();
                out[i * n + j] = C64::new(a.im - b.im, b.re - a.re);
            }
        }
        for jump in &self.jumps {
            // Y = c ρ, then out += Y c†
            x.iter_mut().for_each(|z| *z = C64::default());
            for &(i, k, v) in &jump.entries {
                let (row_x, row_r) = (i * n, k * n);
                for j in 0..n {
                    x[row_x + j] += v * rho[row_r + j];
                }
            }
            for &(j, l, v) in &jump.entries {
                let vc = v.conj();
                for i in 0..n {
                    out[i * n + j] += x[i * n + l] * vc;
                }
            }
        }
    }
}

/// Result of [`evolve`].
#[derive(Clone, Debug)]
pub struct Evolution {
    pub trace: TimeTrace,
    pub final_state: DensityMatrix,
    /// Largest `|Tr ρ − 1|` seen at any sample.
    pub max_trace_deviation: f64,
    /// Smallest eigenvalue of ρ seen at any sample.
    pub min_eigenvalue: f64,
    pub stats: IntegratorStats,
}

fn to_flat(m: &CMatrix) -> Vec<C64> {
    let n = m.nrows();
    let mut v = vec![C64::default(); n * n];
    for i in 0..n {
        for j in 0..n {
            v[i * n + j] = m[(i, j)];
        }
    }
    v
}

fn from_flat(v: &[C64], n: usize) -> CMatrix {
    CMatrix::from_fn(n, n, |i, j| v[i * n + j])
}

/// Integrate the master equation through `segments`, sampling `observables`
/// (real part of `Tr ρO`) every `cfg.sample_dt` starting at t = 0.
pub fn evolve(
    rho0: &DensityMatrix,
    segments: &[Segment],
    collapse: &[CollapseOp],
    cfg: &IntegratorConfig,
    observables: &[Observable],
) -> Result<Evolution> {
    cfg.validate()?;
    rho0.validate()?;
    let n = rho0.dim();
    if segments.is_empty() {
        return Err(Error::InvalidArgument("schedule has no segments".into()));
    }
    for seg in segments {
        if !(seg.duration > 0.0 && seg.duration.is_finite()) {
            return Err(Error::InvalidArgument(format!("segment duration {} ≤ 0", seg.duration)));
        }
        if seg.hamiltonian.dim() != n {
            return Err(Error::DimensionMismatch { expected: n, found: seg.hamiltonian.dim() });
        }
        check_hamiltonian(&seg.hamiltonian)?;
    }
    for op in collapse.iter().map(|c| &c.op).chain(observables.iter().map(|o| &o.op)) {
        if op.dim() != n {
            return Err(Error::DimensionMismatch { expected: n, found: op.dim() });
        }
    }

    let total: f64 = segments.iter().map(|s| s.duration).sum();
    let n_samples = (total / cfg.sample_dt + 1e-9).floor() as usize + 1;
    let obs_flat: Vec<Vec<C64>> = observables.iter().map(|o| to_flat(&o.op.matrix().transpose())).collect();

    let mut t_grid = Vec::with_capacity(n_samples);
    let mut values = vec![Vec::with_capacity(n_samples); observables.len()];
    let mut max_dev = 0.0f64;
    let mut min_eig = f64::INFINITY;

    let mut record = |t: f64, y: &[C64]| {
        t_grid.push(t);
        for (col, o) in values.iter_mut().zip(&obs_flat) {
            // Tr(ρO) = Σ_ij ρ_ij O_ji; o holds Oᵀ row-major
            let s: C64 = y.iter().zip(o).map(|(a, b)| a * b).sum();
            col.push(s.re);
        }
        let m = from_flat(y, n);
        max_dev = max_dev.max((m.trace() - c(1.0, 0.0)).norm());
        min_eig = min_eig.min(hermitian_eigen(&m).0[0]);
    };

    let mut y = to_flat(rho0.matrix());
    let tol = rk45::Tolerances { rel: cfg.rel_tol, abs: cfg.abs_tol, max_step: cfg.max_step };
    let mut stepper = rk45::DormandPrince::new(n * n, tol);

    record(0.0, &y);
    let mut next_sample = 1usize;
    let mut t = 0.0;
    for seg in segments {
        let mut gen = Generator::new(&seg.hamiltonian, collapse);
        let mut f = |r: &[C64], d: &mut [C64]| gen.apply(r, d);
        stepper.reset();
        let t_seg_end = t + seg.duration;
        loop {
            let sample_t = next_sample as f64 * cfg.sample_dt;
            let hits_sample = next_sample < n_samples && sample_t <= t_seg_end + 1e-12;
            let target = if hits_sample { sample_t.min(t_seg_end) } else { t_seg_end };
            if target > t {
                stepper.advance(&mut y, t, target, &mut f)?;
                t = target;
            }
            if hits_sample {
                record(sample_t, &y);
                next_sample += 1;
            } else {
                break;
            }
        }
        t = t_seg_end;
    }

    let trace = TimeTrace::new(t_grid, observables.iter().map(|o| o.label.clone()).collect(), values)?;
    let final_state = DensityMatrix::new_unchecked(rho0.dims().to_vec(), from_flat(&y, n))?;
    Ok(Evolution {
        trace,
        final_state,
        max_trace_deviation: max_dev,
        min_eigenvalue: min_eig,
        stats: stepper.stats.clone(),
    })
}

/// Time integral of a photon-flux column.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmissionIntegral {
    /// Trapezoidal integral, photons.
    pub photons: f64,
    /// Last sample divided by the peak.
    pub tail_ratio: f64,
    /// `tail_ratio < 1e-3`.
    pub converged: bool,
}

/// Residual flux (relative to the peak) below which a trace counts as fully decayed.
pub const TAIL_CONVERGENCE: f64 = 1e-3;

/// Trapezoidal integral of the flux column `label` (photons/µs) over the trace.
pub fn emitted_photons(trace: &TimeTrace, label: &str) -> Result<EmissionIntegral> {
    let flux = trace.require(label)?;
    if flux.len() < 2 {
        return Err(Error::InvalidArgument("need at least two samples to integrate".into()));
    }
    let photons = trapezoid(trace.t(), flux);
    let peak = flux.iter().copied().fold(0.0, f64::max);
    let tail_ratio = if peak > 0.0 { flux[flux.len() - 1].abs() / peak } else { 0.0 };
    Ok(EmissionIntegral { photons, tail_ratio, converged: tail_ratio < TAIL_CONVERGENCE })
}

pub(crate) fn trapezoid(t: &[f64], y: &[f64]) -> f64 {
    t.windows(2).zip(y.windows(2)).map(|(tw, yw)| 0.5 * (tw[1] - tw[0]) * (yw[0] + yw[1])).sum()
}
