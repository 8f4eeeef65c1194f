//! Closed-form reference results: Purcell rates, the weak-probe transmission
//! spectrum, superradiant decay laws, the emitted-field density matrices and
//! the Uhlmann fidelity.

use serde::{Deserialize, Serialize};

use crate::cqed::{mhz, CoupledAmplitudes, NamedState, Qubit, SystemParams};
use crate::error::{Error, Result};
use crate::quantum::{c, psd_sqrt, tol, CMatrix, CVector, DensityMatrix, Ket, C64};

/// Initial states with a closed-form decay law.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayCase {
    /// One qubit in `|e⟩`.
    SingleQubit,
    /// `|ee⟩`.
    BothExcited,
    /// `(|g⟩+|e⟩)(|g⟩+|e⟩)/2`.
    InPhaseSuperposition,
    /// `|ge⟩`, half bright and half dark.
    OneExcited,
}

impl DecayCase {
    pub const ALL: [DecayCase; 4] = [
        DecayCase::SingleQubit,
        DecayCase::BothExcited,
        DecayCase::InPhaseSuperposition,
        DecayCase::OneExcited,
    ];

    /// Photons emitted over the full decay.
    pub fn emitted_photons(self) -> f64 {
        match self {
            DecayCase::SingleQubit => 1.0,
            DecayCase::BothExcited => 2.0,
            DecayCase::InPhaseSuperposition => 1.0,
            DecayCase::OneExcited => 0.5,
        }
    }

    pub fn named_state(self) -> NamedState {
        match self {
            DecayCase::SingleQubit => NamedState::SingleA,
            DecayCase::BothExcited => NamedState::Ee,
            DecayCase::InPhaseSuperposition => NamedState::PlusPlus,
            DecayCase::OneExcited => NamedState::Ge,
        }
    }

    pub fn from_named(state: NamedState) -> Option<Self> {
        match state {
            NamedState::Ee => Some(DecayCase::BothExcited),
            NamedState::PlusPlus => Some(DecayCase::InPhaseSuperposition),
            NamedState::Ge => Some(DecayCase::OneExcited),
            NamedState::SingleA | NamedState::SingleB => Some(DecayCase::SingleQubit),
            NamedState::PlusMinus => None,
        }
    }
}

/// `Γ_κ = κg²/((κ/2)² + Δ²)`.
pub fn purcell_rate(g: f64, kappa: f64, delta: f64) -> f64 {
    kappa * g * g / (0.25 * kappa * kappa + delta * delta)
}

/// Mean Purcell rate of the two qubits at a common detuning `delta_r`.
pub fn mean_purcell_rate(p: &SystemParams, delta_r: f64) -> f64 {
    0.5 * (purcell_rate(p.g_a, p.kappa, delta_r) + purcell_rate(p.g_b, p.kappa, delta_r))
}

/// Emitted photon flux of a decay law at time `t` (µs), with `P₀ = Γ̄`.
pub fn decay_power(case: DecayCase, gamma: f64, t: f64) -> f64 {
    let e2 = (-2.0 * gamma * t).exp();
    match case {
        DecayCase::SingleQubit => gamma * (-gamma * t).exp(),
        DecayCase::BothExcited => 2.0 * gamma * e2 * (1.0 + 2.0 * gamma * t),
        DecayCase::InPhaseSuperposition => gamma * e2 * (1.5 + gamma * t),
        DecayCase::OneExcited => gamma * e2,
    }
}

/// Decay law of an arbitrary two-qubit state `α|gg⟩ + δ|D⟩ + β|B⟩ + γ|ee⟩`
/// with identical qubits: `2Γ̄ e^{−2Γ̄t}(|γ|²(1+2Γ̄t) + |β|²)`.
pub fn ladder_power(amps: &CoupledAmplitudes, gamma: f64, t: f64) -> f64 {
    let gg = amps.gamma.norm_sqr();
    let bb = amps.beta.norm_sqr();
    2.0 * gamma * (-2.0 * gamma * t).exp() * (gg * (1.0 + 2.0 * gamma * t) + bb)
}

/// Weak-probe transmission amplitude with one qubit coupled to the cavity,
/// at probe detuning `delta_p = ω_p − ω_r`.
pub fn transmission(delta_p: f64, p: &SystemParams, qubit: Qubit) -> C64 {
    let half_k = 0.5 * p.kappa;
    let g = p.g(qubit);
    let qubit_term = g * g / (c(0.0, -(delta_p - p.delta(qubit))) + p.gamma2(qubit));
    C64::from(half_k) / (c(half_k, -delta_p) + qubit_term)
}

/// Closed-form approximations for the narrow dip of a resonant qubit.
pub fn dip_width_formula(p: &SystemParams, qubit: Qubit) -> f64 {
    let g2 = p.gamma2(qubit);
    let g = p.g(qubit);
    2.0 * g2 + 4.0 * g * g / (p.kappa - 2.0 * g2)
}

/// `d = Γ₂/(Γ_κ + Γ₂)` with the resonant `Γ_κ = 4g²/κ`.
pub fn dip_depth_formula(p: &SystemParams, qubit: Qubit) -> f64 {
    let g2 = p.gamma2(qubit);
    g2 / (purcell_rate(p.g(qubit), p.kappa, 0.0) + g2)
}

/// Dip shape read off a numerical scan of the transmission.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DipShape {
    /// Probe detuning of the minimum, rad·µs⁻¹.
    pub center: f64,
    /// Minimum of `|t|`.
    pub min_amplitude: f64,
    /// Minimum of `|t|²`.
    pub min_transmittance: f64,
    /// Full width of the `|t|²` dip at `(min + 1)/2`, rad·µs⁻¹.
    pub fwhm: f64,
}

/// Scan resolution for [`extract_dip`]: 1 kHz.
pub fn dip_scan_step() -> f64 {
    mhz(1e-3)
}

/// Locate the narrow dip of `|t|²` around the qubit frequency by a uniform scan.
pub fn extract_dip(p: &SystemParams, qubit: Qubit, step: f64) -> Result<DipShape> {
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("scan step {step} must be positive")));
    }
    let span = 5.0 * dip_width_formula(p, qubit).max(p.gamma2(qubit)).max(step * 10.0);
    let center = p.delta(qubit);
    let n = (span / step).ceil() as i64;
    let xs: Vec<f64> = (-n..=n).map(|k| center + k as f64 * step).collect();
    let ys: Vec<f64> = xs.iter().map(|&x| transmission(x, p, qubit).norm_sqr()).collect();
    let (imin, &ymin) = ys
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty scan");
    let half = 0.5 * (ymin + 1.0);
    let crossing = |range: &mut dyn Iterator<Item = usize>| -> Option<f64> {
        let mut prev = imin;
        for i in range {
            if ys[i] >= half {
                let f = (half - ys[prev]) / (ys[i] - ys[prev]);
                return Some(xs[prev] + f * (xs[i] - xs[prev]));
            }
            prev = i;
        }
        None
    };
    let right = crossing(&mut (imin + 1..xs.len()));
    let left = crossing(&mut (0..imin).rev());
    match (left, right) {
        (Some(l), Some(r)) => Ok(DipShape {
            center: xs[imin],
            min_amplitude: ymin.sqrt(),
            min_transmittance: ymin,
            fwhm: r - l,
        }),
        _ => Err(Error::InvalidArgument("transmission dip does not reach its half level within the scan".into())),
    }
}

fn check_norm(norm_sqr: f64) -> Result<()> {
    if (norm_sqr - 1.0).abs() > tol::KET_NORM {
        return Err(Error::NotNormalized { norm_sqr });
    }
    Ok(())
}

/// Single-mode field emitted by `α|gg⟩ + δ|D⟩ + β|B⟩ + γ|ee⟩`:
/// `|δ|²|0⟩⟨0| + |v⟩⟨v|` with `v = α|0⟩ + β|1⟩ + γ|2⟩`, on Fock levels `0..=n_max`.
pub fn output_field_state(amps: &CoupledAmplitudes, n_max: usize) -> Result<DensityMatrix> {
    if n_max < 2 {
        return Err(Error::InvalidArgument(format!("Fock cutoff {n_max} < 2")));
    }
    check_norm(amps.norm_sqr())?;
    let d = n_max + 1;
    let dark = amps.delta.norm_sqr();
    let mut m = CMatrix::zeros(d, d);
    if dark >= 1.0 {
        m[(0, 0)] = c(1.0, 0.0);
        return DensityMatrix::new(vec![d], m);
    }
    let v = [amps.alpha, amps.beta, amps.gamma];
    for i in 0..3 {
        for j in 0..3 {
            m[(i, j)] = v[i] * v[j].conj();
        }
    }
    m[(0, 0)] += dark;
    DensityMatrix::new(vec![d], m)
}

/// `α|g⟩ + β|e⟩ ↦ α|0⟩ + β|1⟩` on Fock levels `0..=n_max`.
pub fn single_qubit_map(alpha: C64, beta: C64, n_max: usize) -> Result<Ket> {
    if n_max < 1 {
        return Err(Error::InvalidArgument(format!("Fock cutoff {n_max} < 1")));
    }
    check_norm(alpha.norm_sqr() + beta.norm_sqr())?;
    let mut v = CVector::zeros(n_max + 1);
    v[0] = alpha;
    v[1] = beta;
    Ket::new(vec![n_max + 1], v)
}

/// Uhlmann fidelity `(Tr√(√σ ρ √σ))²`, clamped to `[0, 1]`.
pub fn fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    if rho.dim() != sigma.dim() {
        return Err(Error::DimensionMismatch { expected: rho.dim(), found: sigma.dim() });
    }
    for m in [rho, sigma] {
        let min = m.min_eigenvalue();
        if min < tol::MIN_EIGENVALUE {
            return Err(Error::NotPositive { min_eigenvalue: min });
        }
    }
    // Tr√(√σ ρ √σ) is the trace norm of √ρ √σ
    let prod = psd_sqrt(rho.matrix()) * psd_sqrt(sigma.matrix());
    let root: f64 = prod.singular_values().iter().sum();
    Ok((root * root).clamp(0.0, 1.0))
}

/// Emitted field of `(|g⟩+|e⟩)(|g⟩+|e⟩)/2`.
pub fn rho_plus(n_max: usize) -> Result<DensityMatrix> {
    output_field_state(&NamedState::PlusPlus.coupled_amplitudes(), n_max)
}

/// Emitted field of `(|g⟩+|e⟩)(|g⟩−|e⟩)/2`.
pub fn rho_minus(n_max: usize) -> Result<DensityMatrix> {
    output_field_state(&NamedState::PlusMinus.coupled_amplitudes(), n_max)
}
