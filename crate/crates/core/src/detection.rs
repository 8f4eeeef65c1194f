//! Synthetic heterodyne acquisition: quadrature records of a single field mode
//! or of a time-resolved emission, the IF chain with its square filter, and
//! noise-subtracted power traces.

use std::f64::consts::PI;
use std::io::{Read, Write};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cqed::labels;
use crate::dynamics::TimeTrace;
use crate::error::{Error, Result};
use crate::quantum::{c, DensityMatrix, C64};

/// Largest Fock cutoff accepted by the Husimi rejection sampler.
pub const MAX_SAMPLING_CUTOFF: usize = 12;

/// Shots generated from one random substream.
pub const CHUNK_SHOTS: usize = 1024;

const GRID_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionConfig {
    /// Intermediate frequency, MHz.
    pub if_freq: f64,
    /// ADC sample spacing, µs.
    pub sample_dt: f64,
    /// Length of the square filter, samples.
    pub filter_len: usize,
    /// Added noise photons `n̄`.
    pub n_noise: f64,
    /// Overall amplitude gain.
    pub gain: f64,
    pub rng_seed: u64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self { if_freq: 25.0, sample_dt: 0.01, filter_len: 4, n_noise: 0.0, gain: 1.0, rng_seed: 0 }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.if_freq > 0.0) || !(self.sample_dt > 0.0) || self.filter_len == 0 {
            return bad(format!(
                "if_freq, sample_dt and filter_len must be positive (got {}, {}, {})",
                self.if_freq, self.sample_dt, self.filter_len
            ));
        }
        let span = self.if_freq * self.sample_dt * self.filter_len as f64;
        if (span - 1.0).abs() > 1e-9 {
            return bad(format!("if_freq·sample_dt·filter_len = {span}, must equal 1"));
        }
        if !(self.n_noise >= 0.0 && self.n_noise.is_finite()) {
            return bad(format!("n_noise = {} must be non-negative", self.n_noise));
        }
        if !(self.gain > 0.0 && self.gain.is_finite()) {
            return bad(format!("gain = {} must be positive", self.gain));
        }
        Ok(())
    }
}

/// Frequency response of the square filter at baseband frequency `f` (MHz).
pub fn filter_response(cfg: &DetectionConfig, f: f64) -> C64 {
    let l = cfg.filter_len;
    let sum: C64 = (0..l).map(|j| C64::from_polar(1.0, -2.0 * PI * f * cfg.sample_dt * j as f64)).sum();
    sum / l as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Signal,
    Off,
}

impl RecordKind {
    fn tag(self) -> u8 {
        match self {
            RecordKind::Signal => 0,
            RecordKind::Off => 1,
        }
    }

    fn from_tag(t: u8) -> Result<Self> {
        match t {
            0 => Ok(RecordKind::Signal),
            1 => Ok(RecordKind::Off),
            _ => Err(Error::Format(format!("unknown record kind {t}"))),
        }
    }
}

/// `n_shots × n_bins` complex amplitudes, shot-major.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRecordSet {
    pub kind: RecordKind,
    pub config: DetectionConfig,
    n_shots: usize,
    n_bins: usize,
    data: Vec<C64>,
}

impl QuadratureRecordSet {
    pub fn new(kind: RecordKind, config: DetectionConfig, n_shots: usize, n_bins: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != n_shots * n_bins {
            return Err(Error::DimensionMismatch { expected: n_shots * n_bins, found: data.len() });
        }
        Ok(Self { kind, config, n_shots, n_bins, data })
    }

    pub fn n_shots(&self) -> usize {
        self.n_shots
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn shot(&self, k: usize) -> &[C64] {
        &self.data[k * self.n_bins..(k + 1) * self.n_bins]
    }

    /// Values of one time bin across all shots.
    pub fn bin(&self, b: usize) -> impl Iterator<Item = C64> + '_ {
        self.data.iter().skip(b).step_by(self.n_bins.max(1)).copied()
    }

    /// CSV with columns `shot,bin,re,im`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "shot,bin,re,im")?;
        for s in 0..self.n_shots {
            for (b, z) in self.shot(s).iter().enumerate() {
                writeln!(w, "{s},{b},{:.16e},{:.16e}", z.re, z.im)?;
            }
        }
        Ok(())
    }

    /// Little-endian binary: magic, version, kind, config (JSON), sizes, then `re, im` pairs.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let cfg = serde_json::to_vec(&self.config).map_err(|e| Error::Format(e.to_string()))?;
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&BINARY_VERSION.to_le_bytes())?;
        w.write_all(&[self.kind.tag()])?;
        w.write_all(&(cfg.len() as u32).to_le_bytes())?;
        w.write_all(&cfg)?;
        w.write_all(&(self.n_shots as u64).to_le_bytes())?;
        w.write_all(&(self.n_bins as u64).to_le_bytes())?;
        for z in &self.data {
            w.write_all(&z.re.to_le_bytes())?;
            w.write_all(&z.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
            let mut b = [0u8; N];
            r.read_exact(&mut b).map_err(|e| Error::Format(format!("truncated header: {e}")))?;
            Ok(b)
        }
        if &take::<4, _>(&mut r)? != BINARY_MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = u32::from_le_bytes(take(&mut r)?);
        if version != BINARY_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let kind = RecordKind::from_tag(take::<1, _>(&mut r)?[0])?;
        let cfg_len = u32::from_le_bytes(take(&mut r)?) as usize;
        let mut cfg = vec![0u8; cfg_len];
        r.read_exact(&mut cfg).map_err(|e| Error::Format(format!("truncated config: {e}")))?;
        let config: DetectionConfig = serde_json::from_slice(&cfg).map_err(|e| Error::Format(e.to_string()))?;
        let n_shots = u64::from_le_bytes(take(&mut r)?) as usize;
        let n_bins = u64::from_le_bytes(take(&mut r)?) as usize;
        let n = n_shots
            .checked_mul(n_bins)
            .ok_or_else(|| Error::Format("record size overflows".into()))?;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() != 16 * n {
            return Err(Error::Format(format!("expected {} payload bytes, found {}", 16 * n, bytes.len())));
        }
        let data = bytes
            .chunks_exact(16)
            .map(|b| {
                let re = f64::from_le_bytes(b[..8].try_into().unwrap());
                let im = f64::from_le_bytes(b[8..].try_into().unwrap());
                c(re, im)
            })
            .collect();
        Self::new(kind, config, n_shots, n_bins, data)
    }
}

const BINARY_MAGIC: &[u8; 4] = b"DSQR";
const BINARY_VERSION: u32 = 1;

fn substream(seed: u64, kind: RecordKind, chunk: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((kind.tag() as u64) << 48) | chunk as u64);
    rng
}

/// Complex Gaussian with `E|z|² = var`.
fn complex_normal<R: Rng>(rng: &mut R, var: f64) -> C64 {
    let s = (0.5 * var).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    c(s * re, s * im)
}

/// Rejection sampler for the Husimi distribution of one Fock-basis ket.
struct HusimiSampler {
    coeffs: Vec<C64>,
    proposal_var: f64,
    bound: f64,
}

impl HusimiSampler {
    fn new(coeffs: Vec<C64>) -> Self {
        let top = coeffs.iter().rposition(|z| z.norm_sqr() > 0.0).unwrap_or(0);
        let s = (top + 1) as f64;
        let u = 1.0 - 1.0 / s;
        let mut bound = 0.0;
        let mut fact = 1.0;
        for n in 0..=top {
            if n > 0 {
                fact *= n as f64;
            }
            let nf = n as f64;
            let term = if n == 0 { 1.0 } else { (nf / u).powf(nf) * (-nf).exp() / fact };
            bound += term;
        }
        Self { coeffs: coeffs[..=top].to_vec(), proposal_var: s, bound: s * bound }
    }

    /// `π·Q(A)/g(A)` up to the constant `s`, where `g` is the proposal density.
    fn ratio(&self, a: C64) -> f64 {
        let r = a.norm_sqr();
        let z = a.conj();
        let mut pow = c(1.0, 0.0);
        let mut fact = 1.0;
        let mut amp = C64::default();
        for (n, cn) in self.coeffs.iter().enumerate() {
            if n > 0 {
                pow *= z;
                fact *= n as f64;
            }
            amp += cn * pow / fact.sqrt();
        }
        self.proposal_var * (-r * (1.0 - 1.0 / self.proposal_var)).exp() * amp.norm_sqr()
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> C64 {
        loop {
            let a = complex_normal(rng, self.proposal_var);
            let u: f64 = rng.random();
            if u * self.bound <= self.ratio(a) {
                return a;
            }
        }
    }
}

/// One complex amplitude per shot, `S = gain·(A + H*)` with `A` drawn from the
/// Husimi distribution of `rho` and `H` Gaussian noise with `E|H|² = n̄`.
pub fn synthesize_single_mode_records(
    rho: &DensityMatrix,
    n_shots: usize,
    cfg: &DetectionConfig,
    kind: RecordKind,
) -> Result<QuadratureRecordSet> {
    cfg.validate()?;
    rho.validate()?;
    if rho.dims().len() != 1 {
        return Err(Error::InvalidArgument(format!("expected a single-mode state, got dims {:?}", rho.dims())));
    }
    let cutoff = rho.dim() - 1;
    if cutoff > MAX_SAMPLING_CUTOFF {
        return Err(Error::CutoffTooLarge { cutoff, limit: MAX_SAMPLING_CUTOFF });
    }
    let (weights, samplers): (Vec<f64>, Vec<HusimiSampler>) = rho
        .spectral_decomposition()
        .into_iter()
        .filter(|(p, _)| *p > 0.0)
        .map(|(p, k)| (p, HusimiSampler::new(k.amplitudes().iter().copied().collect())))
        .unzip();
    let pick = WeightedIndex::new(&weights).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let chunks: Vec<Vec<C64>> = (0..n_shots.div_ceil(CHUNK_SHOTS))
        .into_par_iter()
        .map(|ci| {
            let mut rng = substream(cfg.rng_seed, kind, ci);
            let len = CHUNK_SHOTS.min(n_shots - ci * CHUNK_SHOTS);
            (0..len)
                .map(|_| {
                    let a = samplers[pick.sample(&mut rng)].sample(&mut rng);
                    let h = complex_normal(&mut rng, cfg.n_noise);
                    (a + h.conj()) * cfg.gain
                })
                .collect()
        })
        .collect();
    QuadratureRecordSet::new(kind, cfg.clone(), n_shots, 1, chunks.concat())
}

/// Vacuum input with the same chain: the off-measurement for single-mode records.
pub fn synthesize_single_mode_off(n_shots: usize, n_max: usize, cfg: &DetectionConfig) -> Result<QuadratureRecordSet> {
    let vac = crate::quantum::fock(n_max, 0)?.projector();
    synthesize_single_mode_records(&vac, n_shots, cfg, RecordKind::Off)
}

/// Cavity field input for time-resolved records, on the detection sample grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldTrace {
    pub t: Vec<f64>,
    /// `⟨a⟩(t)` in the cavity frame.
    pub field: Vec<C64>,
    /// `⟨a†a⟩(t)`.
    pub photons: Vec<f64>,
}

impl FieldTrace {
    /// Read the `a_re`, `a_im` and `n` columns of a simulated trace.
    pub fn from_trace(trace: &TimeTrace) -> Result<Self> {
        let re = trace.require(labels::FIELD_RE)?;
        let im = trace.require(labels::FIELD_IM)?;
        let n = trace.require(labels::PHOTONS)?;
        Ok(Self {
            t: trace.t().to_vec(),
            field: re.iter().zip(im).map(|(&r, &i)| c(r, i)).collect(),
            photons: n.to_vec(),
        })
    }

    /// Empty cavity on the detection grid.
    pub fn vacuum(n_bins: usize, dt: f64) -> Self {
        Self {
            t: (0..n_bins).map(|k| k as f64 * dt).collect(),
            field: vec![C64::default(); n_bins],
            photons: vec![0.0; n_bins],
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    fn check_grid(&self, dt: f64) -> Result<()> {
        if self.field.len() != self.len() || self.photons.len() != self.len() {
            return Err(Error::GridMismatch("field trace columns differ in length".into()));
        }
        for (k, &t) in self.t.iter().enumerate() {
            if (t - k as f64 * dt).abs() > GRID_TOL * (1.0 + t.abs()) {
                return Err(Error::GridMismatch(format!("sample {k} at t = {t}, detection grid expects {}", k as f64 * dt)));
            }
        }
        Ok(())
    }
}

/// Per-sample output-mode amplitude and noise variance of a time-resolved emission.
struct Baseband {
    signal: Vec<C64>,
    variance: Vec<f64>,
}

/// The emitted field in one sample interval is a mode with amplitude
/// `√(κ·dt)·⟨a⟩`, shifted to the local oscillator at `carrier` (rad·µs⁻¹).
fn baseband(input: &FieldTrace, kappa: f64, carrier: f64, cfg: &DetectionConfig) -> Result<Baseband> {
    input.check_grid(cfg.sample_dt)?;
    if !(kappa > 0.0) {
        return Err(Error::InvalidArgument(format!("kappa = {kappa} must be positive")));
    }
    let scale = (kappa * cfg.sample_dt).sqrt();
    let signal = input
        .t
        .iter()
        .zip(&input.field)
        .map(|(&t, &a)| a * C64::from_polar(scale, carrier * t))
        .collect();
    let variance = input
        .photons
        .iter()
        .zip(&input.field)
        .map(|(&n, a)| cfg.n_noise + 0.5 + kappa * cfg.sample_dt * (n - a.norm_sqr()).max(0.0))
        .collect();
    Ok(Baseband { signal, variance })
}

/// First and one-past-last sample of the square window producing output bin
/// `k`; windows are centred on the bin, half a sample late for even lengths.
fn window(k: usize, len: usize) -> (isize, isize) {
    let start = k as isize - (len as isize - 1) / 2;
    (start, start + len as isize)
}

/// Shot generator for time-resolved records.
struct TimeSynth<'a> {
    bb: Baseband,
    n_bins: usize,
    first: isize,
    n_samples: usize,
    omega_if: f64,
    n_shots: usize,
    kind: RecordKind,
    cfg: &'a DetectionConfig,
}

impl<'a> TimeSynth<'a> {
    fn new(
        input: &FieldTrace,
        kappa: f64,
        carrier: f64,
        n_shots: usize,
        cfg: &'a DetectionConfig,
        kind: RecordKind,
    ) -> Result<Self> {
        cfg.validate()?;
        let bb = baseband(input, kappa, carrier, cfg)?;
        let n_bins = input.len();
        let (first, _) = window(0, cfg.filter_len);
        let (_, last) = window(n_bins.saturating_sub(1), cfg.filter_len);
        Ok(Self {
            bb,
            n_bins,
            first,
            n_samples: (last - first) as usize,
            omega_if: 2.0 * PI * cfg.if_freq,
            n_shots,
            kind,
            cfg,
        })
    }

    fn n_chunks(&self) -> usize {
        self.n_shots.div_ceil(CHUNK_SHOTS)
    }

    fn sample(&self, j: isize) -> (C64, f64) {
        if j >= 0 && (j as usize) < self.n_bins {
            (self.bb.signal[j as usize], self.bb.variance[j as usize])
        } else {
            (C64::default(), self.cfg.n_noise + 0.5)
        }
    }

    /// Bins of every shot in chunk `ci`, shot-major.
    fn chunk(&self, ci: usize) -> Vec<C64> {
        let cfg = self.cfg;
        let len = cfg.filter_len;
        let mut rng = substream(cfg.rng_seed, self.kind, ci);
        let shots = CHUNK_SHOTS.min(self.n_shots - ci * CHUNK_SHOTS);
        let mut out = Vec::with_capacity(shots * self.n_bins);
        let mut mixed = vec![C64::default(); self.n_samples];
        for _ in 0..shots {
            for (i, m) in mixed.iter_mut().enumerate() {
                let j = self.first + i as isize;
                let (s, v) = self.sample(j);
                let z = s + complex_normal(&mut rng, 2.0 * v);
                let lo = C64::from_polar(1.0, self.omega_if * j as f64 * cfg.sample_dt);
                let adc = 2.0 * (z * lo).re;
                *m = adc * lo.conj();
            }
            for k in 0..self.n_bins {
                let (a, b) = window(k, len);
                let sum: C64 = mixed[(a - self.first) as usize..(b - self.first) as usize].iter().sum();
                out.push(sum * (cfg.gain / len as f64));
            }
        }
        out
    }

    /// Per-bin `Σ|S|²` over all shots, chunk sums added in chunk order.
    fn power_sum(&self) -> Vec<f64> {
        let n = self.n_bins;
        let partial: Vec<Vec<f64>> = (0..self.n_chunks())
            .into_par_iter()
            .map(|ci| {
                let mut acc = vec![0.0; n];
                for shot in self.chunk(ci).chunks_exact(n) {
                    for (a, z) in acc.iter_mut().zip(shot) {
                        *a += z.norm_sqr();
                    }
                }
                acc
            })
            .collect();
        let mut sum = vec![0.0; n];
        for p in partial {
            sum.iter_mut().zip(p).for_each(|(x, y)| *x += y);
        }
        sum
    }
}

/// Heterodyne records of a time-resolved emission.
///
/// Each sample is modulated onto the IF carrier, digitized as a real voltage,
/// digitally mixed back down and averaged by the square filter, which removes
/// the image at twice the IF. Noise is added before the ADC with twice the
/// target variance, since the real projection discards half of it.
pub fn synthesize_time_records(
    input: &FieldTrace,
    kappa: f64,
    carrier: f64,
    n_shots: usize,
    cfg: &DetectionConfig,
    kind: RecordKind,
) -> Result<QuadratureRecordSet> {
    let synth = TimeSynth::new(input, kappa, carrier, n_shots, cfg, kind)?;
    let chunks: Vec<Vec<C64>> = (0..synth.n_chunks()).into_par_iter().map(|ci| synth.chunk(ci)).collect();
    QuadratureRecordSet::new(kind, cfg.clone(), n_shots, input.len(), chunks.concat())
}

/// [`power_trace`] of signal and off records synthesized from `input`, without
/// keeping the records in memory. Bit-identical to synthesizing both sets.
pub fn streamed_power_trace(
    input: &FieldTrace,
    kappa: f64,
    carrier: f64,
    n_shots: usize,
    cfg: &DetectionConfig,
) -> Result<TimeTrace> {
    if n_shots == 0 {
        return Err(Error::InsufficientShots { required: 1, found: 0 });
    }
    let sig = TimeSynth::new(input, kappa, carrier, n_shots, cfg, RecordKind::Signal)?;
    let vac = FieldTrace::vacuum(input.len(), cfg.sample_dt);
    let off = TimeSynth::new(&vac, kappa, carrier, n_shots, cfg, RecordKind::Off)?;
    let norm = cfg.gain * cfg.gain * cfg.sample_dt;
    let shots = n_shots as f64;
    let p = sig
        .power_sum()
        .into_iter()
        .zip(off.power_sum())
        .map(|(s, o)| (s / shots - o / shots) / norm)
        .collect();
    let t = (0..input.len()).map(|k| k as f64 * cfg.sample_dt).collect();
    TimeTrace::single(t, POWER, p)
}

/// Expected output of [`power_trace`] for records synthesized from `input`,
/// including the smoothing of the square filter.
pub fn expected_power(input: &FieldTrace, kappa: f64, carrier: f64, cfg: &DetectionConfig) -> Result<Vec<f64>> {
    let bb = baseband(input, kappa, carrier, cfg)?;
    let n = input.len();
    let len = cfg.filter_len;
    let floor = cfg.n_noise + 0.5;
    Ok((0..n)
        .map(|k| {
            let (a, b) = window(k, len);
            let (mut mean, mut excess) = (C64::default(), 0.0);
            for j in a..b {
                if j >= 0 && (j as usize) < n {
                    mean += bb.signal[j as usize];
                    excess += bb.variance[j as usize] - floor;
                }
            }
            mean /= len as f64;
            excess /= len as f64;
            (mean.norm_sqr() + excess) / cfg.sample_dt
        })
        .collect())
}

fn check_pair(sig: &QuadratureRecordSet, off: &QuadratureRecordSet) -> Result<()> {
    let (a, b) = (&sig.config, &off.config);
    let same = a.if_freq == b.if_freq
        && a.sample_dt == b.sample_dt
        && a.filter_len == b.filter_len
        && a.n_noise == b.n_noise
        && a.gain == b.gain;
    if !same {
        return Err(Error::ConfigMismatch(format!("signal {a:?} vs off {b:?}")));
    }
    if sig.n_bins != off.n_bins {
        return Err(Error::ConfigMismatch(format!("{} signal bins vs {} off bins", sig.n_bins, off.n_bins)));
    }
    if sig.n_shots == 0 || off.n_shots == 0 {
        return Err(Error::InsufficientShots { required: 1, found: 0 });
    }
    Ok(())
}

/// Mean `|S|²` per bin. Chunk sums are combined in a fixed order so the result
/// does not depend on the thread count.
fn mean_power(r: &QuadratureRecordSet) -> Vec<f64> {
    let n = r.n_bins;
    let partial: Vec<Vec<f64>> = r
        .data
        .par_chunks(n * CHUNK_SHOTS)
        .map(|chunk| {
            let mut acc = vec![0.0; n];
            for shot in chunk.chunks_exact(n) {
                for (a, z) in acc.iter_mut().zip(shot) {
                    *a += z.norm_sqr();
                }
            }
            acc
        })
        .collect();
    let mut sum = vec![0.0; n];
    for p in partial {
        sum.iter_mut().zip(p).for_each(|(x, y)| *x += y);
    }
    sum.into_iter().map(|s| s / r.n_shots as f64).collect()
}

/// Label of the power column written by [`power_trace`].
pub const POWER: &str = "power";

/// `P(t) = (⟨|S_sig|²⟩ − ⟨|S_off|²⟩) / (gain²·dt)`, photons/µs.
pub fn power_trace(sig: &QuadratureRecordSet, off: &QuadratureRecordSet) -> Result<TimeTrace> {
    check_pair(sig, off)?;
    let cfg = &sig.config;
    let norm = cfg.gain * cfg.gain * cfg.sample_dt;
    let p: Vec<f64> = mean_power(sig).into_iter().zip(mean_power(off)).map(|(s, o)| (s - o) / norm).collect();
    let t = (0..sig.n_bins).map(|k| k as f64 * cfg.sample_dt).collect();
    TimeTrace::single(t, POWER, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::rho_plus;
    use crate::quantum::{destroy, expect, fock};
    use approx::assert_abs_diff_eq;

    fn cfg(n_noise: f64, seed: u64) -> DetectionConfig {
        DetectionConfig { n_noise, rng_seed: seed, ..Default::default() }
    }

    fn mean_var(xs: impl Iterator<Item = f64>) -> (f64, f64, usize) {
        let v: Vec<f64> = xs.collect();
        let n = v.len();
        let m = v.iter().sum::<f64>() / n as f64;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        (m, var, n)
    }

    #[test]
    fn default_config_spans_one_if_period() {
        DetectionConfig::default().validate().unwrap();
        let bad = DetectionConfig { filter_len: 3, ..Default::default() };
        assert!(bad.validate().is_err());
        assert!(DetectionConfig { n_noise: -1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn square_filter_rejects_image_and_carrier() {
        let c = DetectionConfig::default();
        assert!(filter_response(&c, 2.0 * c.if_freq).norm() < 1e-15);
        assert!(filter_response(&c, c.if_freq).norm() < 1e-15);
        assert_abs_diff_eq!(filter_response(&c, 0.0).re, 1.0);
    }

    #[test]
    fn husimi_bound_dominates_ratio() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let k = HusimiSampler::new(vec![c(0.0, 0.0), c(s, 0.0), c(0.0, s)]);
        for i in 0..200 {
            for j in 0..200 {
                let a = c(-5.0 + 0.05 * i as f64, -5.0 + 0.05 * j as f64);
                assert!(k.ratio(a) <= k.bound * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn vacuum_quadrature_variance() {
        let vac = fock(3, 0).unwrap().projector();
        let r = synthesize_single_mode_records(&vac, 100_000, &cfg(0.0, 1), RecordKind::Signal).unwrap();
        for part in [|z: C64| z.re, |z: C64| z.im] {
            let (_, var, n) = mean_var(r.data().iter().map(|&z| part(z)));
            // Var of a sample variance of a Gaussian: 2σ⁴/(n−1)
            let se = (2.0 * 0.25 / (n - 1) as f64).sqrt();
            assert!((var - 0.5).abs() < 3.0 * se, "var {var}");
        }
    }

    #[test]
    fn noisy_vacuum_mean_power() {
        let vac = fock(3, 0).unwrap().projector();
        let r = synthesize_single_mode_records(&vac, 100_000, &cfg(5.0, 2), RecordKind::Off).unwrap();
        let (m, var, n) = mean_var(r.data().iter().map(|z| z.norm_sqr()));
        assert!((m - 6.0).abs() < 3.0 * (var / n as f64).sqrt(), "mean {m}");
    }

    #[test]
    fn mean_amplitude_of_rho_plus() {
        let rho = rho_plus(3).unwrap();
        let a = expect(&rho, &destroy(3).unwrap()).unwrap();
        // ½·(1/√2)·1 + (1/√2)·½·√2
        assert_abs_diff_eq!(a.re, 0.5 * std::f64::consts::FRAC_1_SQRT_2 + 0.5, epsilon = 1e-12);
        let r = synthesize_single_mode_records(&rho, 100_000, &cfg(0.0, 3), RecordKind::Signal).unwrap();
        let (mr, vr, n) = mean_var(r.data().iter().map(|z| z.re));
        let (mi, vi, _) = mean_var(r.data().iter().map(|z| z.im));
        assert!((mr - a.re).abs() < 3.0 * (vr / n as f64).sqrt());
        assert!(mi.abs() < 3.0 * (vi / n as f64).sqrt());
    }

    #[test]
    fn gain_scales_records() {
        let vac = fock(2, 0).unwrap().projector();
        let a = synthesize_single_mode_records(&vac, 3000, &cfg(1.0, 4), RecordKind::Signal).unwrap();
        let g = DetectionConfig { gain: 10.0, ..cfg(1.0, 4) };
        let b = synthesize_single_mode_records(&vac, 3000, &g, RecordKind::Signal).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_abs_diff_eq!((x * 10.0 - y).norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn cutoff_limit() {
        let big = fock(13, 0).unwrap().projector();
        let err = synthesize_single_mode_records(&big, 10, &cfg(0.0, 0), RecordKind::Signal).unwrap_err();
        assert!(matches!(err, Error::CutoffTooLarge { cutoff: 13, limit: 12 }));
        let ok = fock(12, 12).unwrap().projector();
        assert!(synthesize_single_mode_records(&ok, 100, &cfg(0.0, 0), RecordKind::Signal).is_ok());
    }

    #[test]
    fn fixed_seed_is_bit_reproducible() {
        let rho = rho_plus(3).unwrap();
        let a = synthesize_single_mode_records(&rho, 5000, &cfg(2.0, 9), RecordKind::Signal).unwrap();
        let b = synthesize_single_mode_records(&rho, 5000, &cfg(2.0, 9), RecordKind::Signal).unwrap();
        assert_eq!(a, b);
        let c = synthesize_single_mode_records(&rho, 5000, &cfg(2.0, 10), RecordKind::Signal).unwrap();
        assert_ne!(a, c);
        let f = FieldTrace::vacuum(20, 0.01);
        let x = synthesize_time_records(&f, 100.0, 0.0, 3000, &cfg(1.0, 9), RecordKind::Off).unwrap();
        let y = synthesize_time_records(&f, 100.0, 0.0, 3000, &cfg(1.0, 9), RecordKind::Off).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn signal_and_off_streams_differ() {
        let vac = fock(2, 0).unwrap().projector();
        let a = synthesize_single_mode_records(&vac, 100, &cfg(1.0, 5), RecordKind::Signal).unwrap();
        let b = synthesize_single_mode_records(&vac, 100, &cfg(1.0, 5), RecordKind::Off).unwrap();
        assert_ne!(a.data(), b.data());
    }

    #[test]
    fn constant_field_power_before_subtraction() {
        let dt = 0.01;
        let n = 40;
        let kappa = 1.0 / dt;
        let amp = c(0.6, -0.3);
        let f = FieldTrace {
            t: (0..n).map(|k| k as f64 * dt).collect(),
            field: vec![amp; n],
            photons: vec![amp.norm_sqr(); n],
        };
        let r = synthesize_time_records(&f, kappa, 0.0, 50_000, &cfg(0.0, 6), RecordKind::Signal).unwrap();
        // bins whose window lies inside the trace
        for b in [5, 20, 35] {
            let (m, var, k) = mean_var(r.bin(b).map(|z| z.norm_sqr()));
            assert!((m - (amp.norm_sqr() + 0.5)).abs() < 3.0 * (var / k as f64).sqrt(), "bin {b}: {m}");
            let (mr, vr, k) = mean_var(r.bin(b).map(|z| z.re));
            assert!((mr - amp.re).abs() < 3.0 * (vr / k as f64).sqrt());
        }
    }

    #[test]
    fn zero_field_power_is_zero() {
        let f = FieldTrace::vacuum(30, 0.01);
        let c1 = cfg(3.0, 7);
        let sig = synthesize_time_records(&f, 270.0, 0.0, 20_000, &c1, RecordKind::Signal).unwrap();
        let off = synthesize_time_records(&f, 270.0, 0.0, 20_000, &c1, RecordKind::Off).unwrap();
        let p = power_trace(&sig, &off).unwrap();
        let col = p.column(POWER).unwrap();
        // per bin: both means have standard error (n̄+½)/√N
        let se = (2.0f64).sqrt() * 3.5 / (20_000f64).sqrt() / 0.01;
        let z: Vec<f64> = col.iter().map(|p| p / se).collect();
        let outliers = z.iter().filter(|z| z.abs() > 4.0).count();
        assert_eq!(outliers, 0, "{z:?}");
    }

    #[test]
    fn streamed_power_matches_stored_records() {
        let dt = 0.01;
        let n = 25;
        let f = FieldTrace {
            t: (0..n).map(|k| k as f64 * dt).collect(),
            field: (0..n).map(|k| c(0.3, 0.1) * (-(k as f64) * 0.1).exp()).collect(),
            photons: (0..n).map(|k| 0.2 * (-(k as f64) * 0.1).exp()).collect(),
        };
        let c1 = cfg(0.5, 11);
        let shots = 2 * CHUNK_SHOTS + 17;
        let sig = synthesize_time_records(&f, 270.0, 3.0, shots, &c1, RecordKind::Signal).unwrap();
        let off = synthesize_time_records(&FieldTrace::vacuum(n, dt), 270.0, 3.0, shots, &c1, RecordKind::Off).unwrap();
        let stored = power_trace(&sig, &off).unwrap();
        let streamed = streamed_power_trace(&f, 270.0, 3.0, shots, &c1).unwrap();
        assert_eq!(stored.column(POWER), streamed.column(POWER));
        assert_eq!(stored.t(), streamed.t());
    }

    #[test]
    fn power_trace_requires_matching_configs() {
        let f = FieldTrace::vacuum(10, 0.01);
        let sig = synthesize_time_records(&f, 1.0, 0.0, 10, &cfg(1.0, 0), RecordKind::Signal).unwrap();
        let off = synthesize_time_records(&f, 1.0, 0.0, 10, &cfg(2.0, 0), RecordKind::Off).unwrap();
        assert!(matches!(power_trace(&sig, &off), Err(Error::ConfigMismatch(_))));
        let short = synthesize_time_records(&FieldTrace::vacuum(9, 0.01), 1.0, 0.0, 10, &cfg(1.0, 0), RecordKind::Off).unwrap();
        assert!(matches!(power_trace(&sig, &short), Err(Error::ConfigMismatch(_))));
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let mut f = FieldTrace::vacuum(10, 0.02);
        assert!(matches!(
            synthesize_time_records(&f, 1.0, 0.0, 10, &cfg(0.0, 0), RecordKind::Signal),
            Err(Error::GridMismatch(_))
        ));
        f = FieldTrace::vacuum(10, 0.01);
        f.photons.pop();
        assert!(synthesize_time_records(&f, 1.0, 0.0, 10, &cfg(0.0, 0), RecordKind::Signal).is_err());
    }

    #[test]
    fn binary_and_csv_export() {
        let rho = rho_plus(3).unwrap();
        let r = synthesize_single_mode_records(&rho, 50, &cfg(1.0, 8), RecordKind::Signal).unwrap();
        let mut buf = Vec::new();
        r.write_binary(&mut buf).unwrap();
        let back = QuadratureRecordSet::read_binary(&buf[..]).unwrap();
        assert_eq!(back, r);
        assert!(QuadratureRecordSet::read_binary(&buf[..buf.len() - 1]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(QuadratureRecordSet::read_binary(&bad[..]), Err(Error::Format(_))));
        let mut csv = Vec::new();
        r.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "shot,bin,re,im");
        assert_eq!(lines.len(), 51);
        let fields: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(fields[2].parse::<f64>().unwrap(), r.data()[0].re);
    }
}
