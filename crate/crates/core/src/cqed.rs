//! Two qubits coupled to one lossy cavity mode (Tavis–Cummings model).
//!
//! The Hamiltonian is written in the frame rotating at the cavity frequency,
//! so only qubit–cavity detunings enter. Internally every rate is an angular
//! frequency in rad·µs⁻¹; the serialized form uses `/2π` MHz.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use serde::{Deserialize, Serialize};

use crate::dynamics::{evolve, CollapseOp, Evolution, IntegratorConfig, Observable, Segment};
use crate::error::{Error, Result};
use crate::quantum::{
    c, destroy, ground, sigma_minus, sigma_z, tensor, CVector, DensityMatrix, Ket, Operator, C64,
};

/// `2π · f` for `f` in MHz, giving rad·µs⁻¹.
pub fn mhz(f: f64) -> f64 {
    2.0 * PI * f
}

/// Inverse of [`mhz`].
pub fn to_mhz(w: f64) -> f64 {
    w / (2.0 * PI)
}

/// Device frequencies kept as metadata; the numerics only see detunings.
pub mod device {
    /// Cavity frequency `ω_r/2π`, MHz.
    pub const CAVITY_MHZ: f64 = 7064.0;
    /// Idle (flux-off) frequency of qubit A, MHz.
    pub const IDLE_A_MHZ: f64 = 8200.0;
    /// Idle frequency of qubit B, MHz.
    pub const IDLE_B_MHZ: f64 = 7400.0;
    /// Qubit–cavity detuning used in the decay experiments, MHz.
    pub const DECAY_DETUNING_MHZ: f64 = 25.0;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Qubit {
    A,
    B,
}

impl Qubit {
    pub fn index(self) -> usize {
        match self {
            Qubit::A => 0,
            Qubit::B => 1,
        }
    }

    pub fn other(self) -> Qubit {
        match self {
            Qubit::A => Qubit::B,
            Qubit::B => Qubit::A,
        }
    }

    /// Idle detuning from the cavity, rad·µs⁻¹.
    pub fn idle_detuning(self) -> f64 {
        match self {
            Qubit::A => mhz(device::IDLE_A_MHZ - device::CAVITY_MHZ),
            Qubit::B => mhz(device::IDLE_B_MHZ - device::CAVITY_MHZ),
        }
    }
}

/// Physical rate set, all angular frequencies in rad·µs⁻¹.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "ParamsMhz", try_from = "ParamsMhz")]
pub struct SystemParams {
    pub g_a: f64,
    pub g_b: f64,
    pub kappa: f64,
    pub gamma_nr_a: f64,
    pub gamma_nr_b: f64,
    pub gamma_phi_a: f64,
    pub gamma_phi_b: f64,
    pub delta_a: f64,
    pub delta_b: f64,
    /// Highest Fock level kept.
    pub n_max: usize,
}

/// `/2π` MHz representation used on disk.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsMhz {
    pub g_a_mhz: f64,
    pub g_b_mhz: f64,
    pub kappa_mhz: f64,
    pub gamma_nr_a_mhz: f64,
    pub gamma_nr_b_mhz: f64,
    pub gamma_phi_a_mhz: f64,
    pub gamma_phi_b_mhz: f64,
    pub delta_a_mhz: f64,
    pub delta_b_mhz: f64,
    pub n_max: usize,
}

impl From<SystemParams> for ParamsMhz {
    fn from(p: SystemParams) -> Self {
        Self {
            g_a_mhz: to_mhz(p.g_a),
            g_b_mhz: to_mhz(p.g_b),
            kappa_mhz: to_mhz(p.kappa),
            gamma_nr_a_mhz: to_mhz(p.gamma_nr_a),
            gamma_nr_b_mhz: to_mhz(p.gamma_nr_b),
            gamma_phi_a_mhz: to_mhz(p.gamma_phi_a),
            gamma_phi_b_mhz: to_mhz(p.gamma_phi_b),
            delta_a_mhz: to_mhz(p.delta_a),
            delta_b_mhz: to_mhz(p.delta_b),
            n_max: p.n_max,
        }
    }
}

impl TryFrom<ParamsMhz> for SystemParams {
    type Error = Error;

    fn try_from(p: ParamsMhz) -> Result<Self> {
        let params = SystemParams {
            g_a: mhz(p.g_a_mhz),
            g_b: mhz(p.g_b_mhz),
            kappa: mhz(p.kappa_mhz),
            gamma_nr_a: mhz(p.gamma_nr_a_mhz),
            gamma_nr_b: mhz(p.gamma_nr_b_mhz),
            gamma_phi_a: mhz(p.gamma_phi_a_mhz),
            gamma_phi_b: mhz(p.gamma_phi_b_mhz),
            delta_a: mhz(p.delta_a_mhz),
            delta_b: mhz(p.delta_b_mhz),
            n_max: p.n_max,
        };
        params.validate()?;
        Ok(params)
    }
}

impl SystemParams {
    /// Experimentally extracted rates of the two-qubit device, both qubits
    /// resonant with the cavity.
    pub fn measured() -> Self {
        Self {
            g_a: mhz(3.5),
            g_b: mhz(3.7),
            kappa: mhz(43.0),
            gamma_nr_a: mhz(0.040),
            gamma_nr_b: mhz(0.042),
            gamma_phi_a: mhz(0.25),
            gamma_phi_b: mhz(0.27),
            delta_a: 0.0,
            delta_b: 0.0,
            n_max: 5,
        }
    }

    /// Idealized device: symmetric coupling (mean of the measured `g`),
    /// no non-radiative decay and no dephasing.
    pub fn ideal() -> Self {
        let p = Self::measured();
        let g = 0.5 * (p.g_a + p.g_b);
        Self {
            g_a: g,
            g_b: g,
            gamma_nr_a: 0.0,
            gamma_nr_b: 0.0,
            gamma_phi_a: 0.0,
            gamma_phi_b: 0.0,
            ..p
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(Error::InvalidArgument(format!("{what} = {v} is out of range")));
        if !(self.kappa > 0.0) {
            return bad("kappa", self.kappa);
        }
        if !(self.g_a > 0.0) {
            return bad("g_a", self.g_a);
        }
        if !(self.g_b > 0.0) {
            return bad("g_b", self.g_b);
        }
        for (what, v) in [
            ("gamma_nr_a", self.gamma_nr_a),
            ("gamma_nr_b", self.gamma_nr_b),
            ("gamma_phi_a", self.gamma_phi_a),
            ("gamma_phi_b", self.gamma_phi_b),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(what, v);
            }
        }
        if !self.delta_a.is_finite() || !self.delta_b.is_finite() {
            return Err(Error::InvalidArgument("detunings must be finite".into()));
        }
        if self.n_max < 2 {
            return Err(Error::InvalidArgument(format!("n_max = {} < 2", self.n_max)));
        }
        Ok(())
    }

    pub fn dims(&self) -> [usize; 3] {
        [2, 2, self.n_max + 1]
    }

    pub fn dim(&self) -> usize {
        4 * (self.n_max + 1)
    }

    pub fn g(&self, q: Qubit) -> f64 {
        match q {
            Qubit::A => self.g_a,
            Qubit::B => self.g_b,
        }
    }

    pub fn delta(&self, q: Qubit) -> f64 {
        match q {
            Qubit::A => self.delta_a,
            Qubit::B => self.delta_b,
        }
    }

    /// Qubit coherence decay `Γ₂ = Γ_nr/2 + Γ*`.
    pub fn gamma2(&self, q: Qubit) -> f64 {
        match q {
            Qubit::A => 0.5 * self.gamma_nr_a + self.gamma_phi_a,
            Qubit::B => 0.5 * self.gamma_nr_b + self.gamma_phi_b,
        }
    }

    pub fn with_detunings(self, delta_a: f64, delta_b: f64) -> Self {
        Self { delta_a, delta_b, ..self }
    }
}

/// Operators of the full qubit A ⊗ qubit B ⊗ cavity space.
#[derive(Clone, Debug)]
pub struct SystemOperators {
    pub a: Operator,
    pub sm_a: Operator,
    pub sm_b: Operator,
    pub sz_a: Operator,
    pub sz_b: Operator,
}

impl SystemOperators {
    pub fn new(n_max: usize) -> Result<Self> {
        let dims = [2, 2, n_max + 1];
        Ok(Self {
            a: destroy(n_max)?.embed(2, &dims)?,
            sm_a: sigma_minus().embed(0, &dims)?,
            sm_b: sigma_minus().embed(1, &dims)?,
            sz_a: sigma_z().embed(0, &dims)?,
            sz_b: sigma_z().embed(1, &dims)?,
        })
    }

    pub fn number(&self) -> Operator {
        &self.a.dagger() * &self.a
    }
}

/// `H = Σ_q Δ_q σ⁺_qσ⁻_q + g_q (a σ⁺_q + a† σ⁻_q)` in the cavity frame.
pub fn build_hamiltonian(p: &SystemParams) -> Result<Operator> {
    p.validate()?;
    let ops = SystemOperators::new(p.n_max)?;
    let ad = ops.a.dagger();
    let mut h = Operator::zeros(&p.dims());
    for (sm, delta, g) in [(&ops.sm_a, p.delta_a, p.g_a), (&ops.sm_b, p.delta_b, p.g_b)] {
        let sp = sm.dagger();
        h = h + (&sp * sm).scale_real(delta);
        h = h + (&(&ops.a * &sp) + &(&ad * sm)).scale_real(g);
    }
    Ok(h)
}

/// `√κ a`, `√Γ_nr σ⁻` and `√(Γ*/2) σ_z` for each qubit; zero-rate channels are omitted.
pub fn collapse_ops(p: &SystemParams) -> Result<Vec<CollapseOp>> {
    p.validate()?;
    let ops = SystemOperators::new(p.n_max)?;
    let mut cs = vec![CollapseOp::new(ops.a.scale_real(p.kappa.sqrt()), "cavity")];
    let channels = [
        (&ops.sm_a, p.gamma_nr_a, "relax_a"),
        (&ops.sm_b, p.gamma_nr_b, "relax_b"),
        (&ops.sz_a, 0.5 * p.gamma_phi_a, "dephase_a"),
        (&ops.sz_b, 0.5 * p.gamma_phi_b, "dephase_b"),
    ];
    for (op, rate, label) in channels {
        if rate > 0.0 {
            cs.push(CollapseOp::new(op.scale_real(rate.sqrt()), label));
        }
    }
    Ok(cs)
}

/// Ideal instantaneous single-qubit rotation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rotation {
    pub qubit: Qubit,
    pub theta: f64,
    pub phi: f64,
}

impl Rotation {
    pub fn new(qubit: Qubit, theta: f64, phi: f64) -> Self {
        Self { qubit, theta, phi }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=PI).contains(&self.theta) {
            return Err(Error::InvalidArgument(format!("θ = {} outside [0, π]", self.theta)));
        }
        if !(0.0..2.0 * PI).contains(&self.phi) {
            return Err(Error::InvalidArgument(format!("φ = {} outside [0, 2π)", self.phi)));
        }
        Ok(())
    }

    /// `cos(θ/2)|g⟩ + e^{iφ} sin(θ/2)|e⟩`.
    pub fn ket(&self) -> Ket {
        let (s, co) = (0.5 * self.theta).sin_cos();
        Ket::from_amplitudes(&[c(co, 0.0), C64::from_polar(s, self.phi)])
    }
}

/// Constant detunings held for `duration` µs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetuningStep {
    pub duration: f64,
    pub delta_a: f64,
    pub delta_b: f64,
}

/// Preparation rotations applied at t = 0⁻ followed by piecewise-constant detunings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseSchedule {
    pub prep: Vec<Rotation>,
    pub segments: Vec<DetuningStep>,
}

impl PulseSchedule {
    pub fn validate(&self) -> Result<()> {
        for r in &self.prep {
            r.validate()?;
        }
        if self.segments.is_empty() {
            return Err(Error::InvalidArgument("schedule has no detuning segments".into()));
        }
        for s in &self.segments {
            if !(s.duration > 0.0) {
                return Err(Error::InvalidArgument(format!("segment duration {} ≤ 0", s.duration)));
            }
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    /// Hamiltonian segments for [`evolve`]; each step overrides the detunings of `p`.
    pub fn segments(&self, p: &SystemParams) -> Result<Vec<Segment>> {
        self.validate()?;
        self.segments
            .iter()
            .map(|s| {
                Ok(Segment {
                    duration: s.duration,
                    hamiltonian: build_hamiltonian(&p.with_detunings(s.delta_a, s.delta_b))?,
                })
            })
            .collect()
    }
}

/// Two-qubit product state from the rotations; unrotated qubits stay in `|g⟩`.
pub fn prepare_qubits(prep: &[Rotation]) -> Result<Ket> {
    let mut kets = [ground(), ground()];
    for r in prep {
        r.validate()?;
        kets[r.qubit.index()] = r.ket();
    }
    tensor(&kets)
}

/// Full-system initial state: prepared qubits with the cavity in vacuum.
pub fn prepare_state(prep: &[Rotation], n_max: usize) -> Result<Ket> {
    let qubits = prepare_qubits(prep)?;
    let vac = Ket::basis(&[n_max + 1], 0)?;
    let psi = tensor(&[qubits, vac])?;
    if !psi.is_normalized() {
        return Err(Error::NotNormalized { norm_sqr: psi.norm_sqr() });
    }
    Ok(psi)
}

/// Amplitudes of `α|gg⟩ + δ|D⟩ + β|B⟩ + γ|ee⟩` with
/// `|B⟩ = (|ge⟩+|eg⟩)/√2`, `|D⟩ = (|ge⟩−|eg⟩)/√2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoupledAmplitudes {
    pub alpha: C64,
    pub delta: C64,
    pub beta: C64,
    pub gamma: C64,
}

impl CoupledAmplitudes {
    pub fn norm_sqr(&self) -> f64 {
        self.alpha.norm_sqr() + self.delta.norm_sqr() + self.beta.norm_sqr() + self.gamma.norm_sqr()
    }

    /// Back to the product basis `|gg⟩, |ge⟩, |eg⟩, |ee⟩`.
    pub fn recompose(&self) -> Ket {
        let s = FRAC_1_SQRT_2;
        let ge = (self.beta + self.delta) * s;
        let eg = (self.beta - self.delta) * s;
        Ket::new(vec![2, 2], CVector::from_vec(vec![self.alpha, ge, eg, self.gamma]))
            .expect("four amplitudes on a 2×2 space")
    }
}

/// Norm tolerance for the coupled-basis decomposition.
pub const COUPLED_NORM_TOL: f64 = 1e-12;

pub fn coupled_basis_decompose(psi: &Ket) -> Result<CoupledAmplitudes> {
    if psi.dims() != [2, 2] {
        return Err(Error::InvalidArgument(format!(
            "expected a two-qubit ket, got dims {:?}",
            psi.dims()
        )));
    }
    let n = psi.norm_sqr();
    if (n - 1.0).abs() > COUPLED_NORM_TOL {
        return Err(Error::NotNormalized { norm_sqr: n });
    }
    let s = FRAC_1_SQRT_2;
    let (ge, eg) = (psi.amplitude(1), psi.amplitude(2));
    Ok(CoupledAmplitudes {
        alpha: psi.amplitude(0),
        delta: (ge - eg) * s,
        beta: (ge + eg) * s,
        gamma: psi.amplitude(3),
    })
}

/// Named preparations of the decay and tomography experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedState {
    /// `|ee⟩`
    Ee,
    /// `(|g⟩+|e⟩)(|g⟩+|e⟩)/2`
    PlusPlus,
    /// `(|g⟩+|e⟩)(|g⟩−|e⟩)/2`
    PlusMinus,
    /// `|ge⟩`: qubit A in `|g⟩`, qubit B in `|e⟩`
    Ge,
    /// Qubit A excited, qubit B parked at its idle frequency
    #[serde(rename = "single_A")]
    SingleA,
    /// Qubit B excited, qubit A parked at its idle frequency
    #[serde(rename = "single_B")]
    SingleB,
}

impl NamedState {
    pub fn rotations(self) -> Vec<Rotation> {
        let half = PI / 2.0;
        match self {
            NamedState::Ee => vec![Rotation::new(Qubit::A, PI, 0.0), Rotation::new(Qubit::B, PI, 0.0)],
            NamedState::PlusPlus => {
                vec![Rotation::new(Qubit::A, half, 0.0), Rotation::new(Qubit::B, half, 0.0)]
            }
            NamedState::PlusMinus => {
                vec![Rotation::new(Qubit::A, half, 0.0), Rotation::new(Qubit::B, half, PI)]
            }
            NamedState::Ge => vec![Rotation::new(Qubit::B, PI, 0.0)],
            NamedState::SingleA => vec![Rotation::new(Qubit::A, PI, 0.0)],
            NamedState::SingleB => vec![Rotation::new(Qubit::B, PI, 0.0)],
        }
    }

    /// The prepared two-qubit state in the bright/dark basis.
    pub fn coupled_amplitudes(self) -> CoupledAmplitudes {
        let psi = prepare_qubits(&self.rotations()).expect("named rotations are valid");
        coupled_basis_decompose(&psi).expect("rotations preserve the norm")
    }

    /// The qubit left detuned for single-qubit decays.
    pub fn parked_qubit(self) -> Option<Qubit> {
        match self {
            NamedState::SingleA => Some(Qubit::B),
            NamedState::SingleB => Some(Qubit::A),
            _ => None,
        }
    }
}

/// Schedule for a decay run: both qubits at `delta_r` for `duration`, except
/// that a parked qubit stays at its idle detuning.
pub fn decay_schedule(prep: Vec<Rotation>, parked: Option<Qubit>, delta_r: f64, duration: f64) -> PulseSchedule {
    let detuning = |q: Qubit| if parked == Some(q) { q.idle_detuning() } else { delta_r };
    PulseSchedule {
        prep,
        segments: vec![DetuningStep { duration, delta_a: detuning(Qubit::A), delta_b: detuning(Qubit::B) }],
    }
}

/// Observable labels recorded by [`simulate`].
pub mod labels {
    /// `κ⟨a†a⟩`, photons/µs.
    pub const FLUX: &str = "flux";
    /// `⟨a†a⟩`.
    pub const PHOTONS: &str = "n";
    /// `Re⟨a⟩`.
    pub const FIELD_RE: &str = "a_re";
    /// `Im⟨a⟩`.
    pub const FIELD_IM: &str = "a_im";
}

/// Standard observables: output flux, intracavity photon number and the field quadratures.
pub fn standard_observables(p: &SystemParams) -> Result<Vec<Observable>> {
    let ops = SystemOperators::new(p.n_max)?;
    let a = &ops.a;
    let ad = a.dagger();
    let n = ops.number();
    Ok(vec![
        Observable::new(labels::FLUX, n.scale_real(p.kappa)),
        Observable::new(labels::PHOTONS, n),
        Observable::new(labels::FIELD_RE, (a + &ad).scale_real(0.5)),
        Observable::new(labels::FIELD_IM, (a - &ad).scale(c(0.0, -0.5))),
    ])
}

/// Prepare, then integrate the master equation through `schedule`.
pub fn simulate(p: &SystemParams, schedule: &PulseSchedule, cfg: &IntegratorConfig) -> Result<Evolution> {
    let psi = prepare_state(&schedule.prep, p.n_max)?;
    let rho0: DensityMatrix = psi.projector();
    evolve(&rho0, &schedule.segments(p)?, &collapse_ops(p)?, cfg, &standard_observables(p)?)
}

/// [`simulate`] from an arbitrary two-qubit state (e.g. the dark state) with
/// the cavity in vacuum; the rotations of `schedule` are ignored.
pub fn simulate_from(
    p: &SystemParams,
    qubits: &Ket,
    schedule: &PulseSchedule,
    cfg: &IntegratorConfig,
) -> Result<Evolution> {
    if qubits.dims() != [2, 2] {
        return Err(Error::InvalidArgument(format!("expected a two-qubit ket, got dims {:?}", qubits.dims())));
    }
    let psi = tensor(&[qubits.clone(), Ket::basis(&[p.n_max + 1], 0)?])?;
    if !psi.is_normalized() {
        return Err(Error::NotNormalized { norm_sqr: psi.norm_sqr() });
    }
    evolve(&psi.projector(), &schedule.segments(p)?, &collapse_ops(p)?, cfg, &standard_observables(p)?)
}
