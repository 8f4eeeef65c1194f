//! Declarative experiment runs: config in, plot-ready files out.

mod config;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::cqed::{
    coupled_basis_decompose, decay_schedule, device, labels, prepare_qubits, simulate, to_mhz, CoupledAmplitudes, Qubit,
};
use crate::detection::{
    streamed_power_trace, synthesize_single_mode_off, synthesize_single_mode_records, FieldTrace, RecordKind, POWER,
};
use crate::dynamics::{emitted_photons, trapezoid, TimeTrace};
use crate::oracles::{
    decay_power, dip_depth_formula, dip_scan_step, dip_width_formula, extract_dip, fidelity, ladder_power,
    output_field_state, purcell_rate, transmission, DecayCase,
};
use crate::tomography::{deconvolve_noise, density_to_pairs, estimate_raw_moments, reconstruct};
use crate::Error;

pub use config::{
    apply_override, load_config, ConfigError, ExperimentConfig, ExperimentKind, InitialState, OutputNames,
    ParamOverrides, ParamSet, SpectrumSettings, TomoSettings, DEFAULT_DECAY_DURATION_US, DEFAULT_TOMO_SHOTS,
    SCHEMA_VERSION,
};

/// Why a run failed; maps onto the CLI exit status.
#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("invalid config at {0}")]
    Validation(ConfigError),
    #[error("no convergence: {0}")]
    NonConvergence(String),
    #[error(transparent)]
    Failed(Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Validation(_) => 2,
            RunError::NonConvergence(_) => 3,
            RunError::Failed(_) => 1,
        }
    }
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Validation(e)
    }
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        match e {
            Error::StepSizeUnderflow { .. } => RunError::NonConvergence(e.to_string()),
            e => RunError::Failed(e),
        }
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Failed(Error::Io(e))
    }
}

/// Files written by a run and its summary.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub files: Vec<PathBuf>,
    pub summary: Value,
}

/// Least-squares scale `s` minimizing `Σ(measured − s·model)²` over the first
/// column of each trace.
pub fn fit_scale(measured: &TimeTrace, model: &TimeTrace) -> crate::Result<f64> {
    if measured.t() != model.t() {
        return Err(Error::GridMismatch("measured and model traces differ in time grid".into()));
    }
    if measured.labels().is_empty() || model.labels().is_empty() {
        return Err(Error::InvalidArgument("traces carry no data column".into()));
    }
    let (y, m) = (measured.column_at(0), model.column_at(0));
    let mm: f64 = m.iter().map(|x| x * x).sum();
    if !(mm > 0.0) {
        return Err(Error::Degenerate("model trace is identically zero".into()));
    }
    Ok(y.iter().zip(m).map(|(a, b)| a * b).sum::<f64>() / mm)
}

fn csv_writer(path: &Path) -> std::io::Result<BufWriter<fs::File>> {
    fs::File::create(path).map(BufWriter::new)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    let mut w = csv_writer(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Format(e.to_string()))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Execute a resolved config, writing every artifact into `out`.
///
/// A tomography fit that stops short of its gradient tolerance still writes
/// its files before reporting [`RunError::NonConvergence`].
pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome, RunError> {
    let kind = cfg.kind.ok_or_else(|| ConfigError::new("/kind", "config is not resolved"))?;
    let cfg = cfg.clone().resolve(kind)?;
    fs::create_dir_all(out)?;
    let names = &cfg.outputs;
    let file = |n: &Option<String>| out.join(n.as_deref().expect("resolved"));
    let mut files = Vec::new();
    let (summary, pending) = match kind {
        ExperimentKind::Spectrum => (run_spectrum(&cfg, &file(&names.data))?, None),
        ExperimentKind::Decay => (run_decay(&cfg, &file(&names.data))?, None),
        ExperimentKind::Tomo => run_tomo(&cfg, out, &file(&names.data), &mut files)?,
    };
    files.insert(0, file(&names.data));
    write_json(&file(&names.summary), &summary)?;
    files.push(file(&names.summary));
    write_json(&file(&names.manifest), &cfg)?;
    files.push(file(&names.manifest));
    match pending {
        Some(e) => Err(e),
        None => Ok(RunOutcome { files, summary }),
    }
}

fn run_spectrum(cfg: &ExperimentConfig, path: &Path) -> Result<Value, RunError> {
    let p = cfg.system_params();
    let s = &cfg.spectrum;
    let q = s.qubit;
    let mut w = csv_writer(path)?;
    writeln!(w, "probe_mhz,detuning_mhz,transmittance,phase_rad")?;
    let n = ((s.stop_mhz - s.start_mhz) / s.step_mhz + 1e-9).floor() as usize;
    for k in 0..=n {
        let d = s.start_mhz + k as f64 * s.step_mhz;
        let t = transmission(crate::cqed::mhz(d), &p, q);
        writeln!(w, "{:.16e},{:.16e},{:.16e},{:.16e}", device::CAVITY_MHZ + d, d, t.norm_sqr(), t.arg())?;
    }
    w.flush()?;
    let dip = extract_dip(&p, q, dip_scan_step())?;
    Ok(json!({
        "kind": "spectrum",
        "qubit": q,
        "qubit_detuning_mhz": to_mhz(p.delta(q)),
        "d": dip.min_transmittance,
        "d_amplitude": dip.min_amplitude,
        "w_mhz": to_mhz(dip.fwhm),
        "dip_center_mhz": to_mhz(dip.center),
        "d_formula": dip_depth_formula(&p, q),
        "w_formula_mhz": to_mhz(dip_width_formula(&p, q)),
        "points": n + 1,
    }))
}

/// Analytic emission of the prepared state: the single-qubit law for the
/// named single-qubit runs, the rate-equation ladder otherwise.
struct DecayModel {
    amps: CoupledAmplitudes,
    single: Option<Qubit>,
    gamma: f64,
    /// Mean of the two single-qubit power laws.
    mean_rates: [f64; 2],
    excitations: f64,
}

impl DecayModel {
    fn power(&self, t: f64) -> f64 {
        match self.single {
            Some(_) => decay_power(DecayCase::SingleQubit, self.gamma, t),
            None => ladder_power(&self.amps, self.gamma, t),
        }
    }

    fn photons(&self) -> f64 {
        match self.single {
            Some(_) => 1.0,
            None => 2.0 * self.amps.gamma.norm_sqr() + self.amps.beta.norm_sqr(),
        }
    }

    fn mean_single(&self, t: f64) -> f64 {
        0.5 * self.mean_rates.iter().map(|&g| g * (-g * t).exp()).sum::<f64>()
    }
}

fn run_decay(cfg: &ExperimentConfig, path: &Path) -> Result<Value, RunError> {
    let p = cfg.system_params();
    let state = cfg.initial_state.as_ref().expect("resolved");
    let rots = state.rotations();
    let parked = state.parked_qubit();
    let delta_r = cfg.delta_r();
    let duration = cfg.duration_us.expect("resolved");
    let schedule = decay_schedule(rots.clone(), parked, delta_r, duration);
    let evo = simulate(&p, &schedule, &cfg.integrator)?;
    let trace = &evo.trace;
    let flux = trace.require(labels::FLUX)?;

    let rate = |q: Qubit| purcell_rate(p.g(q), p.kappa, delta_r);
    let amps = coupled_basis_decompose(&prepare_qubits(&rots)?)?;
    let single = parked.map(|q| q.other());
    let model = DecayModel {
        amps,
        single,
        gamma: match single {
            Some(q) => rate(q),
            None => 0.5 * (rate(Qubit::A) + rate(Qubit::B)),
        },
        mean_rates: [rate(Qubit::A), rate(Qubit::B)],
        excitations: rots.iter().map(|r| (0.5 * r.theta).sin().powi(2)).sum(),
    };
    let s = cfg.scale_s.unwrap_or(1.0);
    let shots = cfg.n_shots.expect("resolved");
    let detected = if shots > 0 {
        let field = FieldTrace::from_trace(trace)?;
        Some(streamed_power_trace(&field, p.kappa, delta_r, shots, &cfg.detection)?)
    } else {
        None
    };

    let mut w = csv_writer(path)?;
    write!(w, "t_us,P_ME,P_analytic,dP")?;
    if detected.is_some() {
        write!(w, ",P_detected")?;
    }
    writeln!(w)?;
    let mut analytic = Vec::with_capacity(trace.len());
    for (k, &t) in trace.t().iter().enumerate() {
        let pa = model.power(t);
        analytic.push(pa);
        let dp = flux[k] - model.excitations * model.mean_single(t);
        write!(w, "{:.16e},{:.16e},{:.16e},{:.16e}", t, s * flux[k], s * pa, s * dp)?;
        if let Some(d) = &detected {
            write!(w, ",{:.16e}", d.column_at(0)[k])?;
        }
        writeln!(w)?;
    }
    w.flush()?;

    let emission = emitted_photons(trace, labels::FLUX)?;
    let mut summary = json!({
        "kind": "decay",
        "initial_state": state,
        "emitted_photons": emission.photons,
        "emission_tail_ratio": emission.tail_ratio,
        "emission_converged": emission.converged,
        "analytic_photons": model.photons(),
        "analytic_photons_on_grid": trapezoid(trace.t(), &analytic),
        "purcell_rate_mhz": to_mhz(model.gamma),
        "scale_s": s,
        "max_trace_deviation": evo.max_trace_deviation,
        "min_eigenvalue": evo.min_eigenvalue,
        "integrator": evo.stats,
    });
    if let Some(d) = &detected {
        let me = TimeTrace::single(trace.t().to_vec(), labels::FLUX, flux.to_vec())?;
        summary["n_shots"] = json!(shots);
        summary["detected_photons"] = json!(trapezoid(d.t(), d.require(POWER)?));
        summary["fitted_s"] = json!(fit_scale(d, &me)?);
    }
    Ok(summary)
}

type TomoResult = (Value, Option<RunError>);

fn run_tomo(cfg: &ExperimentConfig, out: &Path, path: &Path, files: &mut Vec<PathBuf>) -> Result<TomoResult, RunError> {
    let state = cfg.initial_state.as_ref().expect("resolved");
    let cutoff = cfg.tomo.cutoff;
    let shots = cfg.n_shots.expect("resolved");
    let amps = coupled_basis_decompose(&prepare_qubits(&state.rotations())?)?;
    let target = output_field_state(&amps, cutoff)?;
    let det = &cfg.detection;
    let sig = synthesize_single_mode_records(&target, shots, det, RecordKind::Signal)?;
    let off = synthesize_single_mode_off(shots, cutoff, det)?;
    if cfg.tomo.write_records {
        for (r, name) in [(&sig, "records_signal.bin"), (&off, "records_off.bin")] {
            let p = out.join(name);
            let mut w = csv_writer(&p)?;
            r.write_binary(&mut w)?;
            w.flush()?;
            files.push(p);
        }
    }
    let raw = estimate_raw_moments(&sig, cutoff)?;
    let noise = estimate_raw_moments(&off, cutoff)?;
    let moments = deconvolve_noise(&raw, &noise)?;
    let fit = reconstruct(&moments, cutoff)?;
    let f = fidelity(&fit.rho, &target)?;
    let doc = json!({
        "cutoff": cutoff,
        "rho": density_to_pairs(&fit.rho),
        "target": density_to_pairs(&target),
        "fidelity": f,
        "residual": fit.residual,
        "iterations": fit.iterations,
        "gradient_norm": fit.gradient_norm,
        "converged": fit.converged,
        "moments": moments,
    });
    write_json(path, &doc)?;
    let summary = json!({
        "kind": "tomo",
        "initial_state": state,
        "n_shots": shots,
        "n_noise": det.n_noise,
        "fidelity": f,
        "photon_number": fit.rho.matrix().diagonal().iter().enumerate().map(|(k, z)| k as f64 * z.re).sum::<f64>(),
        "converged": fit.converged,
        "iterations": fit.iterations,
    });
    let pending = (!fit.converged).then(|| {
        RunError::NonConvergence(format!(
            "reconstruction stopped after {} iterations, gradient norm {:.3e}",
            fit.iterations, fit.gradient_norm
        ))
    });
    Ok((summary, pending))
}
