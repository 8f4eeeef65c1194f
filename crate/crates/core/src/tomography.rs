//! Single-mode field tomography from heterodyne records: moment estimation,
//! amplifier-noise deconvolution and a positivity-constrained least-squares fit
//! in the Fock basis.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::{QuadratureRecordSet, RecordKind};
use crate::error::{Error, Result};
use crate::quantum::{destroy, trace_of_product, CMatrix, DensityMatrix, Operator, C64};

/// Minimum number of shots for moment estimation.
pub const MIN_SHOTS: usize = 1000;

/// Jackknife blocks.
pub const JACKKNIFE_BLOCKS: usize = 100;

/// Gradient-norm stopping threshold of [`reconstruct`].
pub const GRADIENT_TOL: f64 = 1e-9;

/// Iteration cap of [`reconstruct`].
pub const MAX_ITERATIONS: usize = 10_000;

/// Normally ordered moments `⟨(a†)ⁿaᵐ⟩` for `n + m ≤ 2·max_order`.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentTable {
    max_order: usize,
    n_shots: usize,
    values: Vec<C64>,
    std_err: Vec<f64>,
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

impl MomentTable {
    /// Table with every entry zero except `(0,0) = 1`.
    pub fn new(max_order: usize, n_shots: usize) -> Self {
        let w = 2 * max_order + 1;
        let mut values = vec![C64::default(); w * w];
        values[0] = C64::new(1.0, 0.0);
        Self { max_order, n_shots, values, std_err: vec![0.0; w * w] }
    }

    fn width(&self) -> usize {
        2 * self.max_order + 1
    }

    fn idx(&self, n: usize, m: usize) -> usize {
        assert!(self.contains(n, m), "moment ({n},{m}) outside order {}", 2 * self.max_order);
        n * self.width() + m
    }

    pub fn contains(&self, n: usize, m: usize) -> bool {
        n + m <= 2 * self.max_order
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    pub fn n_shots(&self) -> usize {
        self.n_shots
    }

    pub fn get(&self, n: usize, m: usize) -> C64 {
        self.values[self.idx(n, m)]
    }

    pub fn std_err(&self, n: usize, m: usize) -> f64 {
        self.std_err[self.idx(n, m)]
    }

    /// Set `(n,m)` and its conjugate partner `(m,n)`.
    pub fn set(&mut self, n: usize, m: usize, value: C64, std_err: f64) {
        let (a, b) = (self.idx(n, m), self.idx(m, n));
        self.values[a] = value;
        self.std_err[a] = std_err;
        self.values[b] = value.conj();
        self.std_err[b] = std_err;
        if n == m {
            self.values[a].im = 0.0;
        }
    }

    /// Index pairs `(n, m)` with `n ≤ m` in ascending total order.
    pub fn upper_pairs(&self) -> impl Iterator<Item = (usize, usize)> {
        let top = 2 * self.max_order;
        (0..=top).flat_map(move |s| (0..=s / 2).map(move |n| (n, s - n)))
    }

    /// Multiply every `(n,m)` entry by `e^{i(m−n)θ}`.
    pub fn rotated(&self, theta: f64) -> Self {
        let mut out = self.clone();
        for (n, m) in self.upper_pairs() {
            let ph = C64::from_polar(1.0, (m as f64 - n as f64) * theta);
            out.set(n, m, self.get(n, m) * ph, self.std_err(n, m));
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
struct MomentEntry {
    n: usize,
    m: usize,
    value: [f64; 2],
    std_err: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MomentTableRepr {
    max_order: usize,
    n_shots: usize,
    moments: Vec<MomentEntry>,
}

impl Serialize for MomentTable {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let moments = self
            .upper_pairs()
            .map(|(n, m)| {
                let v = self.get(n, m);
                MomentEntry { n, m, value: [v.re, v.im], std_err: self.std_err(n, m) }
            })
            .collect();
        MomentTableRepr { max_order: self.max_order, n_shots: self.n_shots, moments }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for MomentTable {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = MomentTableRepr::deserialize(d)?;
        let mut t = MomentTable::new(r.max_order, r.n_shots);
        for e in r.moments {
            if !t.contains(e.n, e.m) {
                return Err(D::Error::custom(format!("moment ({},{}) exceeds the table order", e.n, e.m)));
            }
            t.set(e.n, e.m, C64::new(e.value[0], e.value[1]), e.std_err);
        }
        Ok(t)
    }
}

/// Sample moments `⟨(S*)ⁿSᵐ⟩` of `S/gain` with blocked-jackknife standard errors.
pub fn estimate_raw_moments(records: &QuadratureRecordSet, max_order: usize) -> Result<MomentTable> {
    if records.n_bins() != 1 {
        return Err(Error::InvalidArgument(format!(
            "moment estimation needs single-mode records, got {} bins",
            records.n_bins()
        )));
    }
    let n = records.n_shots();
    if n < MIN_SHOTS {
        return Err(Error::InsufficientShots { required: MIN_SHOTS, found: n });
    }
    let top = 2 * max_order;
    let w = top + 1;
    let inv_gain = 1.0 / records.config.gain;
    let data = records.data();
    let blocks = JACKKNIFE_BLOCKS;
    // block sums, computed in parallel but combined in a fixed order
    let sums: Vec<(usize, Vec<C64>)> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let (lo, hi) = (b * n / blocks, (b + 1) * n / blocks);
            let mut acc = vec![C64::default(); w * w];
            let mut p = vec![C64::default(); w];
            let mut q = vec![C64::default(); w];
            for &z in &data[lo..hi] {
                let z = z * inv_gain;
                p[0] = C64::new(1.0, 0.0);
                q[0] = p[0];
                for k in 1..w {
                    p[k] = p[k - 1] * z;
                    q[k] = p[k].conj();
                }
                for i in 0..=top {
                    for j in i..=top - i {
                        acc[i * w + j] += q[i] * p[j];
                    }
                }
            }
            (hi - lo, acc)
        })
        .collect();
    let mut total = vec![C64::default(); w * w];
    for (_, s) in &sums {
        for (t, v) in total.iter_mut().zip(s) {
            *t += v;
        }
    }
    let mut table = MomentTable::new(max_order, n);
    let bf = blocks as f64;
    for (i, j) in table.upper_pairs().collect::<Vec<_>>() {
        let k = i * w + j;
        let mean = total[k] / n as f64;
        let loo: Vec<C64> = sums.iter().map(|(nb, s)| (total[k] - s[k]) / (n - nb) as f64).collect();
        let loo_mean: C64 = loo.iter().sum::<C64>() / bf;
        let var = (bf - 1.0) / bf * loo.iter().map(|x| (x - loo_mean).norm_sqr()).sum::<f64>();
        table.set(i, j, mean, var.sqrt());
    }
    table.set(0, 0, C64::new(1.0, 0.0), 0.0);
    Ok(table)
}

fn check_orders(a: &MomentTable, b: &MomentTable) -> Result<()> {
    if a.max_order != b.max_order {
        return Err(Error::ConfigMismatch(format!(
            "moment tables of order {} and {}",
            a.max_order, b.max_order
        )));
    }
    Ok(())
}

/// Signal-mode moments `⟨(a†)ⁿaᵐ⟩` from raw moments of `S = a + h†`, with the
/// noise moments `⟨hᵏ(h†)ᵏ⟩` taken from the off-measurement.
pub fn deconvolve_noise(sig: &MomentTable, off: &MomentTable) -> Result<MomentTable> {
    check_orders(sig, off)?;
    let mut out = MomentTable::new(sig.max_order, sig.n_shots);
    for (n, m) in sig.upper_pairs().skip(1) {
        let mut v = sig.get(n, m);
        let mut var = sig.std_err(n, m).powi(2);
        for k in 1..=n.min(m) {
            let c = binom(n, k) * binom(m, k);
            let a = out.get(n - k, m - k);
            let h = off.get(k, k).re;
            v -= a * (c * h);
            var += c * c * (a.norm_sqr() * off.std_err(k, k).powi(2) + h * h * out.std_err(n - k, m - k).powi(2));
        }
        out.set(n, m, v, var.sqrt());
    }
    let na = out.get(1, 1).re;
    let sigma = out.std_err(1, 1);
    if na < -3.0 * sigma {
        return Err(Error::Miscalibration { value: na, sigma });
    }
    Ok(out)
}

/// Inverse of [`deconvolve_noise`]: raw moments of `S = a + h†`.
pub fn reconvolve(signal: &MomentTable, off: &MomentTable) -> Result<MomentTable> {
    check_orders(signal, off)?;
    let mut out = MomentTable::new(signal.max_order, signal.n_shots);
    for (n, m) in signal.upper_pairs().skip(1) {
        let mut v = signal.get(n, m);
        for k in 1..=n.min(m) {
            v += signal.get(n - k, m - k) * (binom(n, k) * binom(m, k) * off.get(k, k).re);
        }
        out.set(n, m, v, signal.std_err(n, m));
    }
    Ok(out)
}

/// `Tr(ρ (a†)ⁿaᵐ)` for every entry up to total order `2·max_order`, with zero
/// standard errors.
pub fn exact_moments(rho: &DensityMatrix, max_order: usize) -> Result<MomentTable> {
    if rho.dims().len() != 1 {
        return Err(Error::InvalidArgument(format!("expected a single-mode state, got dims {:?}", rho.dims())));
    }
    let ops = MomentOps::new(rho.dim() - 1, 2 * max_order)?;
    let mut t = MomentTable::new(max_order, 0);
    for (n, m) in t.upper_pairs().collect::<Vec<_>>() {
        t.set(n, m, trace_of_product(rho.matrix(), ops.get(n, m)), 0.0);
    }
    Ok(t)
}

/// `(a†)ⁿaᵐ` on a truncated Fock space for `n + m ≤ top`.
struct MomentOps {
    top: usize,
    ops: Vec<CMatrix>,
}

impl MomentOps {
    fn new(n_max: usize, top: usize) -> Result<Self> {
        let a: Operator = destroy(n_max.max(1))?;
        let a = a.matrix().clone();
        let ad = a.adjoint();
        let d = a.nrows();
        let mut pa = vec![CMatrix::identity(d, d)];
        let mut pd = vec![CMatrix::identity(d, d)];
        for k in 1..=top {
            pa.push(&pa[k - 1] * &a);
            pd.push(&pd[k - 1] * &ad);
        }
        let mut ops = Vec::with_capacity((top + 1) * (top + 1));
        for n in 0..=top {
            for m in 0..=top {
                ops.push(if n + m <= top { &pd[n] * &pa[m] } else { CMatrix::zeros(0, 0) });
            }
        }
        Ok(Self { top, ops })
    }

    fn get(&self, n: usize, m: usize) -> &CMatrix {
        &self.ops[n * (self.top + 1) + m]
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ReconstructionResult {
    #[serde(serialize_with = "ser_density")]
    pub rho: DensityMatrix,
    /// Final weighted sum of squared moment residuals.
    pub residual: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
}

fn ser_density<S: serde::Serializer>(rho: &DensityMatrix, s: S) -> std::result::Result<S::Ok, S::Error> {
    density_to_pairs(rho).serialize(s)
}

/// Rows of `[re, im]` pairs.
pub fn density_to_pairs(rho: &DensityMatrix) -> Vec<Vec<[f64; 2]>> {
    let m = rho.matrix();
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect()).collect()
}

/// Least-squares objective on `T` with `ρ = T†T / Tr(T†T)`, `T` lower triangular.
struct Objective {
    d: usize,
    ops: MomentOps,
    /// `(n, m, target, weight)` for every fitted entry.
    terms: Vec<(usize, usize, C64, f64)>,
}

impl Objective {
    fn new(moments: &MomentTable, n_max: usize) -> Result<Self> {
        let ops = MomentOps::new(n_max, 2 * n_max)?;
        let mut terms = Vec::new();
        for n in 0..=n_max {
            for m in 0..=n_max {
                if (n, m) == (0, 0) || !moments.contains(n, m) {
                    continue;
                }
                let s = moments.std_err(n, m);
                let w = if s > 0.0 { 1.0 / (s * s) } else { 1.0 };
                terms.push((n, m, moments.get(n, m), w));
            }
        }
        Ok(Self { d: n_max + 1, ops, terms })
    }

    fn n_params(&self) -> usize {
        self.d * self.d
    }

    /// Real parameters: the diagonal of `T`, then `(re, im)` of each strictly
    /// lower entry row by row. Diagonal phases are a gauge freedom and are fixed real.
    fn unpack(&self, x: &[f64]) -> CMatrix {
        let d = self.d;
        let mut t = CMatrix::zeros(d, d);
        for i in 0..d {
            t[(i, i)] = C64::new(x[i], 0.0);
        }
        let mut k = d;
        for i in 1..d {
            for j in 0..i {
                t[(i, j)] = C64::new(x[k], x[k + 1]);
                k += 2;
            }
        }
        t
    }

    fn pack(&self, t: &CMatrix) -> Vec<f64> {
        let d = self.d;
        let mut x = Vec::with_capacity(self.n_params());
        for i in 0..d {
            x.push(t[(i, i)].re);
        }
        for i in 1..d {
            for j in 0..i {
                x.push(t[(i, j)].re);
                x.push(t[(i, j)].im);
            }
        }
        x
    }

    fn rho(&self, t: &CMatrix) -> CMatrix {
        let p = t.adjoint() * t;
        let tr = p.trace().re;
        p / C64::new(tr, 0.0)
    }

    /// Cost and gradient. With `M = Σ w r* A` and `H = M + M†`, the
    /// differential is `2 Re Tr(X dT)`, `X = (H − Tr(ρH)) T† / Tr(T†T)`.
    fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let d = self.d;
        let t = self.unpack(x);
        let p = t.adjoint() * &t;
        let tr = p.trace().re;
        let rho = &p / C64::new(tr, 0.0);
        let mut cost = 0.0;
        let mut m = CMatrix::zeros(d, d);
        for &(n, k, target, w) in &self.terms {
            let a = self.ops.get(n, k);
            let r = trace_of_product(&rho, a) - target;
            cost += w * r.norm_sqr();
            m += a * (r.conj() * w);
        }
        let h = &m + m.adjoint();
        let shift = trace_of_product(&rho, &h).re;
        let mut hs = h;
        for i in 0..d {
            hs[(i, i)] -= shift;
        }
        let xm = hs * t.adjoint() / C64::new(tr, 0.0);
        for i in 0..d {
            grad[i] = 2.0 * xm[(i, i)].re;
        }
        let mut k = d;
        for i in 1..d {
            for j in 0..i {
                grad[k] = 2.0 * xm[(j, i)].re;
                grad[k + 1] = -2.0 * xm[(j, i)].im;
                k += 2;
            }
        }
        cost
    }
}

/// Relative floor on the initial populations, keeping every parameter off the
/// stationary face `T_ii = 0`.
const INIT_FLOOR: f64 = 1e-10;

/// Fit `ρ = T†T/Tr(T†T)` on Fock levels `0..=n_max` to the moments, weighted by
/// `1/σ²` (unit weight where `σ = 0`), starting from a thermal state at the
/// measured `⟨a†a⟩`.
pub fn reconstruct(moments: &MomentTable, n_max: usize) -> Result<ReconstructionResult> {
    if n_max < 1 {
        return Err(Error::InvalidArgument(format!("Fock cutoff {n_max} < 1")));
    }
    if moments.max_order < n_max {
        return Err(Error::InvalidArgument(format!(
            "moments to total order {} cannot fix a cutoff of {n_max}",
            2 * moments.max_order
        )));
    }
    let obj = Objective::new(moments, n_max)?;
    let nbar = moments.get(1, 1).re.max(0.0);
    let ratio = nbar / (1.0 + nbar);
    let pops: Vec<f64> = (0..=n_max).map(|k| ratio.powi(k as i32)).collect();
    let z: f64 = pops.iter().sum();
    let mut t0 = CMatrix::zeros(n_max + 1, n_max + 1);
    for (k, p) in pops.iter().enumerate() {
        t0[(k, k)] = C64::new((p / z).max(INIT_FLOOR).sqrt(), 0.0);
    }
    let x0 = obj.pack(&t0);
    let out = bfgs(&x0, |x, g| obj.eval(x, g), GRADIENT_TOL, MAX_ITERATIONS);
    let rho = obj.rho(&obj.unpack(&out.x));
    let rho = DensityMatrix::new(vec![n_max + 1], (&rho + rho.adjoint()) * C64::new(0.5, 0.0))?;
    Ok(ReconstructionResult {
        rho,
        residual: out.f,
        iterations: out.iterations,
        gradient_norm: out.grad_norm,
        converged: out.converged,
    })
}

/// Records to density matrix: raw moments of signal and off records,
/// deconvolution, fit.
pub fn reconstruct_from_records(
    sig: &QuadratureRecordSet,
    off: &QuadratureRecordSet,
    n_max: usize,
) -> Result<ReconstructionResult> {
    if sig.kind != RecordKind::Signal || off.kind != RecordKind::Off {
        return Err(Error::InvalidArgument("expected a signal and an off record set".into()));
    }
    let raw = estimate_raw_moments(sig, n_max)?;
    let noise = estimate_raw_moments(off, n_max)?;
    reconstruct(&deconvolve_noise(&raw, &noise)?, n_max)
}

struct Minimum {
    x: Vec<f64>,
    f: f64,
    grad_norm: f64,
    iterations: usize,
    converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Quasi-Newton minimization with the inverse-Hessian BFGS update and a
/// strong-Wolfe line search.
fn bfgs<F>(x0: &[f64], mut fg: F, gtol: f64, max_iter: usize) -> Minimum
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut f = fg(&x, &mut g);
    let mut hinv = identity(n);
    let mut fresh = true;
    let mut iterations = 0;
    while iterations < max_iter {
        if norm(&g) < gtol {
            return Minimum { grad_norm: norm(&g), x, f, iterations, converged: true };
        }
        let mut p: Vec<f64> = (0..n).map(|i| -dot(&hinv[i * n..(i + 1) * n], &g)).collect();
        let mut slope = dot(&p, &g);
        if slope >= 0.0 {
            hinv = identity(n);
            fresh = true;
            p = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }
        iterations += 1;
        match line_search(&mut fg, &x, f, slope, &p) {
            Some((alpha, f_new, g_new)) => {
                let s: Vec<f64> = p.iter().map(|v| alpha * v).collect();
                let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                for i in 0..n {
                    x[i] += s[i];
                }
                f = f_new;
                g = g_new;
                if sy > 1e-300 {
                    if fresh {
                        let scale = sy / dot(&y, &y);
                        hinv.iter_mut().for_each(|h| *h = 0.0);
                        for i in 0..n {
                            hinv[i * n + i] = scale;
                        }
                        fresh = false;
                    }
                    update_inverse(&mut hinv, &s, &y, sy);
                }
            }
            None if fresh => break,
            None => {
                hinv = identity(n);
                fresh = true;
            }
        }
    }
    Minimum { grad_norm: norm(&g), x, f, iterations, converged: norm(&g) < gtol }
}

fn identity(n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    h
}

/// `H ← (I − ρsyᵀ) H (I − ρysᵀ) + ρssᵀ`.
fn update_inverse(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let r = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| dot(&h[i * n..(i + 1) * n], y)).collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += -r * (hy[i] * s[j] + s[i] * hy[j]) + (r * r * yhy + r) * s[i] * s[j];
        }
    }
}

const C1: f64 = 1e-4;
const C2: f64 = 0.9;

/// Strong-Wolfe line search (bracketing then zoom). Returns the step, value and
/// gradient at the accepted point. Decreases within round-off of `f` are accepted
/// when the curvature condition holds, so the search still progresses once the
/// cost has flattened to machine precision.
fn line_search<F>(fg: &mut F, x: &[f64], f0: f64, d0: f64, p: &[f64]) -> Option<(f64, f64, Vec<f64>)>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x.len();
    let eps_f = 1e-14 * f0.abs().max(1e-300);
    let mut eval = |a: f64| -> (f64, f64, Vec<f64>) {
        let xa: Vec<f64> = x.iter().zip(p).map(|(xi, pi)| xi + a * pi).collect();
        let mut g = vec![0.0; n];
        let f = fg(&xa, &mut g);
        let d = dot(&g, p);
        (f, d, g)
    };
    let sufficient = |a: f64, f: f64| f <= f0 + C1 * a * d0 || (f <= f0 + eps_f);
    let curvature = |d: f64| d.abs() <= -C2 * d0;

    let (mut a_lo, mut f_lo, mut d_lo) = (0.0, f0, d0);
    let mut a = 1.0;
    let mut hi: Option<(f64, f64, f64)> = None;
    for _ in 0..30 {
        let (f, d, g) = eval(a);
        if !f.is_finite() {
            hi = Some((a, f64::INFINITY, 0.0));
            break;
        }
        if !sufficient(a, f) || f >= f_lo && a_lo > 0.0 {
            hi = Some((a, f, d));
            break;
        }
        if curvature(d) {
            return Some((a, f, g));
        }
        if d >= 0.0 {
            hi = Some((a_lo, f_lo, d_lo));
            a_lo = a;
            f_lo = f;
            d_lo = d;
            break;
        }
        a_lo = a;
        f_lo = f;
        d_lo = d;
        a *= 2.0;
    }
    let (mut a_hi, mut f_hi, mut d_hi) = hi?;
    for _ in 0..40 {
        let a = cubic_step(a_lo, f_lo, d_lo, a_hi, f_hi, d_hi);
        let (f, d, g) = eval(a);
        if !f.is_finite() || !sufficient(a, f) || f >= f_lo {
            a_hi = a;
            f_hi = f;
            d_hi = d;
        } else {
            if curvature(d) {
                return Some((a, f, g));
            }
            if d * (a_hi - a_lo) >= 0.0 {
                a_hi = a_lo;
                f_hi = f_lo;
                d_hi = d_lo;
            }
            a_lo = a;
            f_lo = f;
            d_lo = d;
        }
        if (a_hi - a_lo).abs() < 1e-16 * a_lo.abs().max(1e-300) {
            break;
        }
    }
    if a_lo > 0.0 && f_lo < f0 {
        let (f, _, g) = eval(a_lo);
        return Some((a_lo, f, g));
    }
    None
}

/// Minimizer of the cubic through both end points, safeguarded into the
/// middle of the bracket; bisection when the interpolation is unusable.
fn cubic_step(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> f64 {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let mid = 0.5 * (a + b);
    if !fb.is_finite() {
        return mid;
    }
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    if disc < 0.0 {
        return mid;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2);
    let margin = 0.1 * (hi - lo);
    if t.is_finite() && t > lo + margin && t < hi - margin {
        t
    } else {
        mid
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::{synthesize_single_mode_off, synthesize_single_mode_records, DetectionConfig};
    use crate::oracles::{fidelity, rho_minus, rho_plus};
    use crate::quantum::{c, fock};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn cfg(n_noise: f64, seed: u64) -> DetectionConfig {
        DetectionConfig { n_noise, rng_seed: seed, ..Default::default() }
    }

    #[test]
    fn table_symmetry_and_serde() {
        let mut t = MomentTable::new(2, 10);
        t.set(1, 2, c(0.3, -0.4), 0.01);
        assert_eq!(t.get(2, 1), c(0.3, 0.4));
        assert_eq!(t.get(0, 0), c(1.0, 0.0));
        let json = serde_json::to_string(&t).unwrap();
        assert!(json.contains("\"value\":[0.3,-0.4]"));
        let back: MomentTable = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
        assert!(serde_json::from_str::<MomentTable>(
            r#"{"max_order":1,"n_shots":0,"moments":[{"n":2,"m":1,"value":[0,0],"std_err":0}]}"#
        )
        .is_err());
    }

    #[test]
    fn vacuum_raw_moments() {
        let vac = fock(3, 0).unwrap().projector();
        let r = synthesize_single_mode_records(&vac, 100_000, &cfg(0.0, 11), RecordKind::Signal).unwrap();
        let t = estimate_raw_moments(&r, 2).unwrap();
        assert_eq!(t.get(0, 0), c(1.0, 0.0));
        assert!((t.get(1, 1).re - 1.0).abs() < 3.0 * t.std_err(1, 1));
        // Q-ordered vacuum: ⟨(S*)²S²⟩ = 2
        assert!((t.get(2, 2).re - 2.0).abs() < 3.0 * t.std_err(2, 2));
        assert!(t.get(0, 1).norm() < 3.0 * t.std_err(0, 1));
    }

    #[test]
    fn too_few_shots() {
        let vac = fock(2, 0).unwrap().projector();
        let r = synthesize_single_mode_records(&vac, 999, &cfg(0.0, 0), RecordKind::Signal).unwrap();
        assert!(matches!(estimate_raw_moments(&r, 1), Err(Error::InsufficientShots { required: 1000, found: 999 })));
    }

    #[test]
    fn jackknife_error_of_the_mean() {
        let vac = fock(2, 0).unwrap().projector();
        let r = synthesize_single_mode_records(&vac, 50_000, &cfg(1.0, 12), RecordKind::Signal).unwrap();
        let t = estimate_raw_moments(&r, 1).unwrap();
        // |S|² is exponential with mean 2 and variance 4
        let naive = (4.0f64 / 50_000.0).sqrt();
        assert!((t.std_err(1, 1) / naive - 1.0).abs() < 0.25, "{}", t.std_err(1, 1));
    }

    fn thermal_noise(order: usize, nbar: f64) -> MomentTable {
        // ⟨hᵏh†ᵏ⟩ = k!(n̄+1)ᵏ
        let mut off = MomentTable::new(order, 0);
        let mut fact = 1.0;
        for k in 1..=2 * order {
            fact *= k as f64;
            if off.contains(k, k) {
                off.set(k, k, c(fact * (nbar + 1.0).powi(k as i32), 0.0), 0.0);
            }
        }
        off
    }

    #[test]
    fn deconvolution_of_identical_tables_is_empty() {
        let t = thermal_noise(3, 5.0);
        let a = deconvolve_noise(&t, &t).unwrap();
        for (n, m) in a.upper_pairs() {
            let expect = if (n, m) == (0, 0) { 1.0 } else { 0.0 };
            assert!((a.get(n, m) - expect).norm() < 1e-12 * t.get(3, 3).norm(), "({n},{m})");
        }
        let vac = fock(3, 0).unwrap().projector();
        let off = synthesize_single_mode_records(&vac, 5000, &cfg(2.0, 1), RecordKind::Off).unwrap();
        let t = estimate_raw_moments(&off, 3).unwrap();
        let a = deconvolve_noise(&t, &t).unwrap();
        for k in 1..=3 {
            assert!(a.get(k, k).norm() < 1e-9 * t.get(k, k).norm(), "({k},{k})");
        }
    }

    #[test]
    fn first_and_second_order_deconvolution() {
        let mut sig = MomentTable::new(1, 1000);
        sig.set(0, 1, c(0.2, 0.1), 0.01);
        sig.set(1, 1, c(7.5, 0.0), 0.05);
        let mut off = MomentTable::new(1, 1000);
        off.set(1, 1, c(6.0, 0.0), 0.05);
        let a = deconvolve_noise(&sig, &off).unwrap();
        assert_eq!(a.get(0, 1), c(0.2, 0.1));
        assert_abs_diff_eq!(a.get(1, 1).re, 1.5);
        off.set(1, 1, c(8.0, 0.0), 0.05);
        assert!(matches!(deconvolve_noise(&sig, &off), Err(Error::Miscalibration { .. })));
        assert!(deconvolve_noise(&sig, &MomentTable::new(2, 1)).is_err());
    }

    #[test]
    fn photon_number_of_rho_plus_from_records() {
        let rho = rho_plus(3).unwrap();
        let sig = synthesize_single_mode_records(&rho, 100_000, &cfg(5.0, 21), RecordKind::Signal).unwrap();
        let off = synthesize_single_mode_off(100_000, 3, &cfg(5.0, 21)).unwrap();
        let a = deconvolve_noise(&estimate_raw_moments(&sig, 3).unwrap(), &estimate_raw_moments(&off, 3).unwrap())
            .unwrap();
        assert!((a.get(1, 1).re - 1.0).abs() < 3.0 * a.std_err(1, 1), "{} ± {}", a.get(1, 1).re, a.std_err(1, 1));
    }

    #[test]
    fn deconvolve_then_reconvolve_is_identity() {
        let rho = rho_minus(6).unwrap();
        let signal = exact_moments(&rho, 3).unwrap();
        let off = thermal_noise(3, 5.0);
        let raw = reconvolve(&signal, &off).unwrap();
        let back = deconvolve_noise(&raw, &off).unwrap();
        for (n, m) in raw.upper_pairs() {
            assert!((back.get(n, m) - signal.get(n, m)).norm() < 1e-10, "({n},{m})");
        }
        let again = reconvolve(&back, &off).unwrap();
        for (n, m) in raw.upper_pairs() {
            assert!((again.get(n, m) - raw.get(n, m)).norm() < 1e-10 * raw.get(n, m).norm().max(1.0));
        }
    }

    fn numeric_grad(obj: &Objective, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        let mut scratch = vec![0.0; x.len()];
        for i in 0..x.len() {
            let h = 1e-6;
            let mut xp = x.to_vec();
            xp[i] += h;
            let fp = obj.eval(&xp, &mut scratch);
            xp[i] -= 2.0 * h;
            let fm = obj.eval(&xp, &mut scratch);
            g[i] = (fp - fm) / (2.0 * h);
        }
        g
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut t = exact_moments(&rho_plus(3).unwrap(), 3).unwrap();
        t.set(1, 2, c(0.1, 0.3), 0.2);
        t.set(2, 2, c(0.4, 0.0), 0.5);
        let obj = Objective::new(&t, 3).unwrap();
        let x: Vec<f64> = (0..obj.n_params()).map(|k| 0.3 + 0.1 * ((k * 7) % 5) as f64 - 0.05 * k as f64).collect();
        let mut g = vec![0.0; x.len()];
        obj.eval(&x, &mut g);
        let num = numeric_grad(&obj, &x);
        for (a, b) in g.iter().zip(&num) {
            assert!((a - b).abs() < 1e-6 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn exact_vacuum_is_recovered() {
        let t = exact_moments(&fock(3, 0).unwrap().projector(), 3).unwrap();
        let r = reconstruct(&t, 3).unwrap();
        assert!(r.converged);
        let target = fock(3, 0).unwrap().projector();
        assert!((r.rho.matrix() - target.matrix()).norm() < 1e-8, "{}", r.rho.matrix());
    }

    #[test]
    fn exact_rho_plus_is_recovered() {
        let target = rho_plus(3).unwrap();
        let r = reconstruct(&exact_moments(&target, 3).unwrap(), 3).unwrap();
        let f = fidelity(&r.rho, &target).unwrap();
        assert!(f >= 1.0 - 1e-6, "F = {f}, iters {}, |g| {}", r.iterations, r.gradient_norm);
        assert!(r.converged);
    }

    #[test]
    fn reconstruction_is_phase_covariant() {
        let target = rho_minus(3).unwrap();
        let mut t = exact_moments(&target, 3).unwrap();
        t.set(0, 1, c(0.05, 0.02), 0.1);
        t.set(1, 2, c(-0.1, 0.04), 0.1);
        let theta = std::f64::consts::FRAC_PI_2;
        let a = reconstruct(&t, 3).unwrap();
        let b = reconstruct(&t.rotated(theta), 3).unwrap();
        for j in 0..4 {
            for k in 0..4 {
                let expect = a.rho.get(j, k) * C64::from_polar(1.0, theta * (j as f64 - k as f64));
                assert!((b.rho.get(j, k) - expect).norm() < 1e-9, "({j},{k})");
            }
        }
    }

    #[test]
    fn noiseless_round_trip() {
        for (target, seed) in [(rho_plus(3).unwrap(), 31), (rho_minus(3).unwrap(), 32)] {
            let sig = synthesize_single_mode_records(&target, 1_000_000, &cfg(0.0, seed), RecordKind::Signal).unwrap();
            let off = synthesize_single_mode_off(1_000_000, 3, &cfg(0.0, seed)).unwrap();
            let r = reconstruct_from_records(&sig, &off, 3).unwrap();
            let f = fidelity(&r.rho, &target).unwrap();
            assert!(f >= 0.98, "F = {f}");
        }
    }

    #[test]
    fn reconstruct_rejects_short_tables() {
        assert!(reconstruct(&MomentTable::new(2, 0), 3).is_err());
        assert!(reconstruct(&MomentTable::new(2, 0), 0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn reconstruction_is_a_density_matrix(noise in prop::collection::vec(-0.3f64..0.3, 40)) {
            let mut t = exact_moments(&rho_plus(3).unwrap(), 3).unwrap();
            let pairs: Vec<_> = t.upper_pairs().skip(1).collect();
            for ((n, m), k) in pairs.into_iter().zip(0..) {
                let v = t.get(n, m) + c(noise[k % 40], noise[(k + 7) % 40]);
                t.set(n, m, v, 0.1);
            }
            let r = reconstruct(&t, 3).unwrap();
            prop_assert!((r.rho.trace().re - 1.0).abs() < 1e-12);
            prop_assert!(r.rho.min_eigenvalue() > -1e-12);
        }
    }
}
