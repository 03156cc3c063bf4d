// Copyright 2026 Tripex Contributors
// SPDX-License-Identifier: Apache-2.0

//! Run-configuration files: a line-oriented `key = value` format with
//! `[section]` headers.
//!
//! # Grammar
//!
//! * UTF-8 text, processed line by line.
//! * `#` starts a comment (to end of line); blank lines are ignored.
//! * `[name]` opens a section; every `key = value` line belongs to the most
//!   recent section.
//! * Values are scalars (`-1.5`, `42`, `exact`, `-`) or comma-separated
//!   lists (`1, 1/2`); spins accept fractions (`1/2`) or decimals (`0.5`).
//! * Unknown sections, unknown keys, duplicate keys, and out-of-bounds
//!   values are hard errors citing the offending line — there is no silent
//!   typo tolerance.
//!
//! # Sections
//!
//! | section    | keys |
//! |------------|------|
//! | `[system]` | `spins`, `g_factors`, `labels` |
//! | `[model]`  | `j_mev`, `field_tesla`, `lifetime_ns` |
//! | `[evolve]` | `times_ns` or `t_max_ns` + `n_points`, `dt_ns`, `engine`, `initial_m` |
//! | `[echo]`   | `b1_tesla` or `pi_pulse_ns`, `frequency_ghz`, `tau_ns` or `tau_start_ns` + `tau_step_ns` + `tau_count`, `sigma_detuning_ghz`, `n_samples`, `seed`, `window_ns` |
//! | `[report]` | `table`, `lifetime_ns` |
//! | `[output]` | `out`, `format` |
//!
//! Every key is optional; compiled-in defaults describe the canonical
//! spin-1 / spin-1/2 pair with no exchange, no field, and no decay.

use std::path::{Path, PathBuf};

use tripex::error::{Error, Result};
use tripex::exchange::{oscillation_period_ns, MAX_J_MEV};
use tripex::hamiltonian::MAX_FIELD_TESLA;
use tripex::spin::{SpinSite, SpinSystem, SpinValue};

use crate::output::OutFormat;

/// Largest accepted decay lifetime, ns.
pub const MAX_LIFETIME_NS: f64 = 1e6;

/// Sanity band for g factors.
pub const MAX_G_FACTOR: f64 = 10.0;

/// System block: which spins make up the cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub spins: Vec<SpinValue>,
    pub g_factors: Vec<f64>,
    pub labels: Vec<String>,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            spins: vec![SpinValue::one(), SpinValue::half()],
            g_factors: vec![2.0023, 2.0023],
            labels: vec!["triplet".into(), "cu".into()],
        }
    }
}

impl SystemConfig {
    /// Build the spin system this block describes.
    pub fn build(&self) -> Result<SpinSystem> {
        let sites = self
            .spins
            .iter()
            .zip(self.g_factors.iter())
            .zip(self.labels.iter())
            .map(|((spin, g), label)| SpinSite::with_g(*spin, *g, label.clone()))
            .collect();
        SpinSystem::new(sites)
    }
}

/// Model block: exchange, static field, optional decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub j_mev: f64,
    pub field_tesla: f64,
    /// Exciton lifetime; `None` means closed (no decay).
    pub lifetime_ns: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            j_mev: 0.0,
            field_tesla: 0.0,
            lifetime_ns: None,
        }
    }
}

/// Integration engine of the open-system evolver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    /// Liouvillian exponentials between output times (no step error).
    Exact,
    /// Fixed-step RK4 (step from `dt_ns` or the stability default).
    Rk4,
}

/// Output time grid of the `evolve` command.
#[derive(Debug, Clone, PartialEq)]
pub enum TimeGrid {
    /// Explicit strictly increasing times, ns.
    Explicit(Vec<f64>),
    /// `n_points` evenly spaced times covering `[0, t_max_ns]`.
    Linear { t_max_ns: f64, n_points: usize },
}

impl TimeGrid {
    /// Materialize the grid.
    pub fn times(&self) -> Vec<f64> {
        match self {
            TimeGrid::Explicit(times) => times.clone(),
            TimeGrid::Linear { t_max_ns, n_points } => {
                if *n_points == 1 {
                    vec![0.0]
                } else {
                    (0..*n_points)
                        .map(|k| t_max_ns * k as f64 / (*n_points as f64 - 1.0))
                        .collect()
                }
            }
        }
    }
}

/// Evolve block: time grid and integrator choices.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolveConfig {
    pub grid: TimeGrid,
    pub dt_ns: Option<f64>,
    pub engine: Engine,
    /// Initial per-site magnetic quantum numbers; default: site 0 at its
    /// top level, every other site at its bottom level.
    pub initial_m: Option<Vec<f64>>,
}

/// Tau sweep of the `echo` command.
#[derive(Debug, Clone, PartialEq)]
pub enum TauSpec {
    Explicit(Vec<f64>),
    Linear {
        start_ns: f64,
        step_ns: f64,
        count: usize,
    },
}

impl TauSpec {
    pub fn taus(&self) -> Vec<f64> {
        match self {
            TauSpec::Explicit(taus) => taus.clone(),
            TauSpec::Linear {
                start_ns,
                step_ns,
                count,
            } => (0..*count)
                .map(|k| start_ns + k as f64 * step_ns)
                .collect(),
        }
    }
}

/// Echo block: pulse sizing, carrier, tau sweep, and ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct EchoConfig {
    /// Co-rotating drive amplitude; exclusive with `pi_pulse_ns`.
    pub b1_tesla: Option<f64>,
    /// Probe pi-pulse duration the amplitude is derived from (default
    /// 0.1 ns when neither key is given).
    pub pi_pulse_ns: Option<f64>,
    /// Carrier frequency; default: the probe's Larmor frequency in the
    /// configured field.
    pub frequency_ghz: Option<f64>,
    pub taus: TauSpec,
    pub sigma_detuning_ghz: f64,
    pub n_samples: usize,
    pub seed: u64,
    /// Detection-window override, ns (default: four preparation-pulse
    /// durations).
    pub window_ns: Option<f64>,
}

/// Report block: which functional table to evaluate, at which lifetime.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReportConfig {
    pub table: Option<PathBuf>,
    /// Falls back to the model lifetime, then to 35 ns.
    pub lifetime_ns: Option<f64>,
    /// Use the embedded fixture instead of a file (set by `--preset`).
    pub bundled: bool,
}

/// Output block: destination and format (both overridable by flags).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OutputConfig {
    pub out: Option<String>,
    pub format: Option<OutFormat>,
}

/// A fully validated run configuration.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub system: SystemConfig,
    pub model: ModelConfig,
    pub evolve: Option<EvolveConfig>,
    pub echo: Option<EchoConfig>,
    pub report: ReportConfig,
    pub output: OutputConfig,
}

/// The built-in `table1` preset: the canonical pair with the strongest
/// ferromagnetic coupling of the shipped benchmark table (J = -1.5 meV) in
/// a 0.35 T field, a three-beat closed evolution, a short echo sweep, and
/// the embedded functional table evaluated at a 35 ns lifetime.
pub fn preset_table1() -> RunConfig {
    let beat_ns = oscillation_period_ns(-1.5).expect("valid preset J");
    RunConfig {
        system: SystemConfig {
            spins: vec![SpinValue::one(), SpinValue::half()],
            g_factors: vec![2.002, 2.05],
            labels: vec!["triplet".into(), "cu".into()],
        },
        model: ModelConfig {
            j_mev: -1.5,
            field_tesla: 0.35,
            lifetime_ns: None,
        },
        evolve: Some(EvolveConfig {
            grid: TimeGrid::Linear {
                t_max_ns: 3.0 * beat_ns,
                n_points: 241,
            },
            dt_ns: None,
            engine: Engine::Exact,
            initial_m: None,
        }),
        echo: Some(EchoConfig {
            b1_tesla: None,
            pi_pulse_ns: Some(0.1),
            frequency_ghz: None,
            taus: TauSpec::Linear {
                start_ns: 1.0,
                step_ns: beat_ns / 6.0,
                count: 24,
            },
            sigma_detuning_ghz: 0.01,
            n_samples: 8,
            seed: 42,
            window_ns: None,
        }),
        report: ReportConfig {
            table: None,
            lifetime_ns: Some(35.0),
            bundled: true,
        },
        output: OutputConfig::default(),
    }
}

/// Parse and validate a configuration file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config_text(&text, &path.display().to_string())
}

/// Slot that remembers whether a key was already set (for duplicate
/// detection) without yet committing to a parsed type.
#[derive(Default)]
struct Raw<'a> {
    value: Option<(&'a str, usize)>,
}

impl<'a> Raw<'a> {
    fn set(&mut self, value: &'a str, line: usize, key: &str, path: &str) -> Result<()> {
        if let Some((_, first)) = self.value {
            return Err(Error::ParseError {
                path: path.to_string(),
                line,
                message: format!("duplicate key {key:?} (first set on line {first})"),
            });
        }
        self.value = Some((value, line));
        Ok(())
    }
}

/// All raw slots of the schema.
#[derive(Default)]
struct RawConfig<'a> {
    sys_spins: Raw<'a>,
    sys_g: Raw<'a>,
    sys_labels: Raw<'a>,
    model_j: Raw<'a>,
    model_field: Raw<'a>,
    model_lifetime: Raw<'a>,
    ev_times: Raw<'a>,
    ev_t_max: Raw<'a>,
    ev_n_points: Raw<'a>,
    ev_dt: Raw<'a>,
    ev_engine: Raw<'a>,
    ev_initial: Raw<'a>,
    echo_b1: Raw<'a>,
    echo_pi: Raw<'a>,
    echo_freq: Raw<'a>,
    echo_taus: Raw<'a>,
    echo_tau_start: Raw<'a>,
    echo_tau_step: Raw<'a>,
    echo_tau_count: Raw<'a>,
    echo_sigma: Raw<'a>,
    echo_n: Raw<'a>,
    echo_seed: Raw<'a>,
    echo_window: Raw<'a>,
    report_table: Raw<'a>,
    report_lifetime: Raw<'a>,
    out_path: Raw<'a>,
    out_format: Raw<'a>,
    saw_evolve: bool,
    saw_echo: bool,
}

fn err_at(path: &str, line: usize, message: String) -> Error {
    Error::ParseError {
        path: path.to_string(),
        line,
        message,
    }
}

fn f64_at(raw: &Raw<'_>, path: &str, key: &str) -> Result<Option<f64>> {
    match raw.value {
        None => Ok(None),
        Some((text, line)) => text
            .parse::<f64>()
            .map(Some)
            .map_err(|_| err_at(path, line, format!("cannot parse {key} from {text:?}"))),
    }
}

fn u64_at(raw: &Raw<'_>, path: &str, key: &str) -> Result<Option<u64>> {
    match raw.value {
        None => Ok(None),
        Some((text, line)) => text
            .parse::<u64>()
            .map(Some)
            .map_err(|_| err_at(path, line, format!("cannot parse {key} from {text:?}"))),
    }
}

fn usize_at(raw: &Raw<'_>, path: &str, key: &str) -> Result<Option<usize>> {
    Ok(u64_at(raw, path, key)?.map(|v| v as usize))
}

fn f64_list_at(raw: &Raw<'_>, path: &str, key: &str) -> Result<Option<Vec<f64>>> {
    match raw.value {
        None => Ok(None),
        Some((text, line)) => {
            let mut out = Vec::new();
            for item in text.split(',') {
                let item = item.trim();
                out.push(item.parse::<f64>().map_err(|_| {
                    err_at(path, line, format!("cannot parse {key} entry from {item:?}"))
                })?);
            }
            Ok(Some(out))
        }
    }
}

/// Range check helper producing a line-cited error naming the field.
fn in_bounds(
    value: f64,
    ok: bool,
    raw: &Raw<'_>,
    path: &str,
    key: &str,
    constraint: &str,
) -> Result<f64> {
    if ok {
        Ok(value)
    } else {
        let line = raw.value.map(|(_, l)| l).unwrap_or(0);
        Err(err_at(
            path,
            line,
            format!("{key} = {value} out of bounds: {constraint}"),
        ))
    }
}

/// Parse configuration text; `origin` names the source in errors.
pub fn parse_config_text(text: &str, origin: &str) -> Result<RunConfig> {
    let mut raw = RawConfig::default();
    let mut section: Option<&str> = None;
    for (idx, full_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match full_line.find('#') {
            Some(pos) => &full_line[..pos],
            None => full_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name.strip_suffix(']').ok_or_else(|| {
                err_at(origin, line_no, format!("malformed section header {line:?}"))
            })?;
            let name = name.trim();
            section = Some(match name {
                "system" => "system",
                "model" => "model",
                "evolve" => {
                    raw.saw_evolve = true;
                    "evolve"
                }
                "echo" => {
                    raw.saw_echo = true;
                    "echo"
                }
                "report" => "report",
                "output" => "output",
                other => {
                    return Err(err_at(
                        origin,
                        line_no,
                        format!(
                            "unknown section {other:?} (expected system, model, evolve, \
                             echo, report, or output)"
                        ),
                    ))
                }
            });
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            err_at(
                origin,
                line_no,
                format!("expected `key = value` or `[section]`, found {line:?}"),
            )
        })?;
        let key = key.trim();
        let value = value.trim();
        if value.is_empty() {
            return Err(err_at(origin, line_no, format!("empty value for key {key:?}")));
        }
        let section = section.ok_or_else(|| {
            err_at(
                origin,
                line_no,
                format!("key {key:?} appears before any [section] header"),
            )
        })?;
        let slot = match (section, key) {
            ("system", "spins") => &mut raw.sys_spins,
            ("system", "g_factors") => &mut raw.sys_g,
            ("system", "labels") => &mut raw.sys_labels,
            ("model", "j_mev") => &mut raw.model_j,
            ("model", "field_tesla") => &mut raw.model_field,
            ("model", "lifetime_ns") => &mut raw.model_lifetime,
            ("evolve", "times_ns") => &mut raw.ev_times,
            ("evolve", "t_max_ns") => &mut raw.ev_t_max,
            ("evolve", "n_points") => &mut raw.ev_n_points,
            ("evolve", "dt_ns") => &mut raw.ev_dt,
            ("evolve", "engine") => &mut raw.ev_engine,
            ("evolve", "initial_m") => &mut raw.ev_initial,
            ("echo", "b1_tesla") => &mut raw.echo_b1,
            ("echo", "pi_pulse_ns") => &mut raw.echo_pi,
            ("echo", "frequency_ghz") => &mut raw.echo_freq,
            ("echo", "tau_ns") => &mut raw.echo_taus,
            ("echo", "tau_start_ns") => &mut raw.echo_tau_start,
            ("echo", "tau_step_ns") => &mut raw.echo_tau_step,
            ("echo", "tau_count") => &mut raw.echo_tau_count,
            ("echo", "sigma_detuning_ghz") => &mut raw.echo_sigma,
            ("echo", "n_samples") => &mut raw.echo_n,
            ("echo", "seed") => &mut raw.echo_seed,
            ("echo", "window_ns") => &mut raw.echo_window,
            ("report", "table") => &mut raw.report_table,
            ("report", "lifetime_ns") => &mut raw.report_lifetime,
            ("output", "out") => &mut raw.out_path,
            ("output", "format") => &mut raw.out_format,
            (section, key) => {
                return Err(err_at(
                    origin,
                    line_no,
                    format!("unknown key {key:?} in section [{section}]"),
                ))
            }
        };
        slot.set(value, line_no, key, origin)?;
    }
    finalize(raw, origin)
}

fn finalize(raw: RawConfig<'_>, path: &str) -> Result<RunConfig> {
    // [system]
    let mut system = SystemConfig::default();
    if let Some((text, line)) = raw.sys_spins.value {
        let mut spins = Vec::new();
        for item in text.split(',') {
            spins.push(SpinValue::parse(item.trim()).map_err(|e| {
                err_at(path, line, format!("bad spins entry {:?}: {e}", item.trim()))
            })?);
        }
        if spins.is_empty() {
            return Err(err_at(path, line, "spins list is empty".into()));
        }
        // A different site count resets the default g factors and labels.
        if spins.len() != system.spins.len() {
            system.g_factors = vec![2.0023; spins.len()];
            system.labels = (0..spins.len()).map(|k| format!("site{k}")).collect();
        }
        system.spins = spins;
    }
    if let Some(gs) = f64_list_at(&raw.sys_g, path, "g_factors")? {
        let line = raw.sys_g.value.map(|(_, l)| l).unwrap_or(0);
        if gs.len() != system.spins.len() {
            return Err(err_at(
                path,
                line,
                format!(
                    "g_factors lists {} values for {} spins",
                    gs.len(),
                    system.spins.len()
                ),
            ));
        }
        for g in &gs {
            in_bounds(
                *g,
                g.is_finite() && *g > 0.0 && *g <= MAX_G_FACTOR,
                &raw.sys_g,
                path,
                "g_factors",
                "each g must be in (0, 10]",
            )?;
        }
        system.g_factors = gs;
    }
    if let Some((text, line)) = raw.sys_labels.value {
        let labels: Vec<String> = text.split(',').map(|s| s.trim().to_string()).collect();
        if labels.len() != system.spins.len() {
            return Err(err_at(
                path,
                line,
                format!(
                    "labels lists {} values for {} spins",
                    labels.len(),
                    system.spins.len()
                ),
            ));
        }
        if labels.iter().any(|l| l.is_empty()) {
            return Err(err_at(path, line, "labels must not be empty".into()));
        }
        system.labels = labels;
    }

    // [model]
    let mut model = ModelConfig::default();
    if let Some(j) = f64_at(&raw.model_j, path, "j_mev")? {
        model.j_mev = in_bounds(
            j,
            j.is_finite() && j.abs() <= MAX_J_MEV,
            &raw.model_j,
            path,
            "j_mev",
            "|J| must be finite and at most 1e3 meV",
        )?;
    }
    if let Some(b) = f64_at(&raw.model_field, path, "field_tesla")? {
        model.field_tesla = in_bounds(
            b,
            b.is_finite() && b.abs() <= MAX_FIELD_TESLA,
            &raw.model_field,
            path,
            "field_tesla",
            "|B| must be finite and at most 20 T",
        )?;
    }
    if let Some(t) = f64_at(&raw.model_lifetime, path, "lifetime_ns")? {
        model.lifetime_ns = Some(in_bounds(
            t,
            t.is_finite() && t > 0.0 && t <= MAX_LIFETIME_NS,
            &raw.model_lifetime,
            path,
            "lifetime_ns",
            "must be in (0, 1e6] ns",
        )?);
    }

    // [evolve]
    let evolve = if raw.saw_evolve {
        let explicit = f64_list_at(&raw.ev_times, path, "times_ns")?;
        let t_max = f64_at(&raw.ev_t_max, path, "t_max_ns")?;
        let n_points = usize_at(&raw.ev_n_points, path, "n_points")?;
        let grid = match (explicit, t_max, n_points) {
            (Some(times), None, None) => {
                let line = raw.ev_times.value.map(|(_, l)| l).unwrap_or(0);
                if times.is_empty() {
                    return Err(err_at(path, line, "times_ns list is empty".into()));
                }
                if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
                    return Err(err_at(
                        path,
                        line,
                        "times_ns must be finite and non-negative".into(),
                    ));
                }
                if !times.windows(2).all(|w| w[0] < w[1]) {
                    return Err(err_at(
                        path,
                        line,
                        "times_ns must be strictly increasing".into(),
                    ));
                }
                TimeGrid::Explicit(times)
            }
            (None, Some(t_max_ns), Some(n)) => {
                in_bounds(
                    t_max_ns,
                    t_max_ns.is_finite() && t_max_ns >= 0.0,
                    &raw.ev_t_max,
                    path,
                    "t_max_ns",
                    "must be finite and non-negative",
                )?;
                let line = raw.ev_n_points.value.map(|(_, l)| l).unwrap_or(0);
                if n == 0 {
                    return Err(err_at(path, line, "n_points must be at least 1".into()));
                }
                if (t_max_ns == 0.0) != (n == 1) {
                    return Err(err_at(
                        path,
                        line,
                        "t_max_ns = 0 needs n_points = 1 and vice versa".into(),
                    ));
                }
                TimeGrid::Linear {
                    t_max_ns,
                    n_points: n,
                }
            }
            _ => {
                return Err(err_at(
                    path,
                    0,
                    "[evolve] needs either times_ns or both t_max_ns and n_points".into(),
                ))
            }
        };
        let dt_ns = match f64_at(&raw.ev_dt, path, "dt_ns")? {
            Some(dt) => Some(in_bounds(
                dt,
                dt.is_finite() && dt > 0.0,
                &raw.ev_dt,
                path,
                "dt_ns",
                "must be finite and positive",
            )?),
            None => None,
        };
        let engine = match raw.ev_engine.value {
            None => Engine::Exact,
            Some(("exact", _)) => Engine::Exact,
            Some(("rk4", _)) => Engine::Rk4,
            Some((other, line)) => {
                return Err(err_at(
                    path,
                    line,
                    format!("unknown engine {other:?} (expected exact or rk4)"),
                ))
            }
        };
        let initial_m = f64_list_at(&raw.ev_initial, path, "initial_m")?;
        Some(EvolveConfig {
            grid,
            dt_ns,
            engine,
            initial_m,
        })
    } else {
        for (slot, key) in [
            (&raw.ev_times, "times_ns"),
            (&raw.ev_t_max, "t_max_ns"),
            (&raw.ev_n_points, "n_points"),
            (&raw.ev_dt, "dt_ns"),
            (&raw.ev_engine, "engine"),
            (&raw.ev_initial, "initial_m"),
        ] {
            if let Some((_, line)) = slot.value {
                return Err(err_at(
                    path,
                    line,
                    format!("{key} outside an [evolve] section"),
                ));
            }
        }
        None
    };

    // [echo]
    let echo = if raw.saw_echo {
        let b1_tesla = match f64_at(&raw.echo_b1, path, "b1_tesla")? {
            Some(b1) => Some(in_bounds(
                b1,
                b1.is_finite() && b1 > 0.0 && b1 <= MAX_FIELD_TESLA,
                &raw.echo_b1,
                path,
                "b1_tesla",
                "must be in (0, 20] T",
            )?),
            None => None,
        };
        let pi_pulse_ns = match f64_at(&raw.echo_pi, path, "pi_pulse_ns")? {
            Some(d) => Some(in_bounds(
                d,
                d.is_finite() && d > 0.0,
                &raw.echo_pi,
                path,
                "pi_pulse_ns",
                "must be finite and positive",
            )?),
            None => None,
        };
        if b1_tesla.is_some() && pi_pulse_ns.is_some() {
            let line = raw.echo_pi.value.map(|(_, l)| l).unwrap_or(0);
            return Err(err_at(
                path,
                line,
                "give either b1_tesla or pi_pulse_ns, not both".into(),
            ));
        }
        let frequency_ghz = match f64_at(&raw.echo_freq, path, "frequency_ghz")? {
            Some(f) => Some(in_bounds(
                f,
                f.is_finite() && f >= 0.0,
                &raw.echo_freq,
                path,
                "frequency_ghz",
                "must be finite and non-negative",
            )?),
            None => None,
        };
        let explicit = f64_list_at(&raw.echo_taus, path, "tau_ns")?;
        let start = f64_at(&raw.echo_tau_start, path, "tau_start_ns")?;
        let step = f64_at(&raw.echo_tau_step, path, "tau_step_ns")?;
        let count = usize_at(&raw.echo_tau_count, path, "tau_count")?;
        let taus = match (explicit, start, step, count) {
            (Some(taus), None, None, None) => {
                let line = raw.echo_taus.value.map(|(_, l)| l).unwrap_or(0);
                if taus.is_empty() {
                    return Err(err_at(path, line, "tau_ns list is empty".into()));
                }
                TauSpec::Explicit(taus)
            }
            (None, Some(start_ns), Some(step_ns), Some(n)) => {
                in_bounds(
                    start_ns,
                    start_ns.is_finite() && start_ns > 0.0,
                    &raw.echo_tau_start,
                    path,
                    "tau_start_ns",
                    "must be finite and positive",
                )?;
                in_bounds(
                    step_ns,
                    step_ns.is_finite() && step_ns > 0.0,
                    &raw.echo_tau_step,
                    path,
                    "tau_step_ns",
                    "must be finite and positive",
                )?;
                let line = raw.echo_tau_count.value.map(|(_, l)| l).unwrap_or(0);
                if n == 0 {
                    return Err(err_at(path, line, "tau_count must be at least 1".into()));
                }
                TauSpec::Linear {
                    start_ns,
                    step_ns,
                    count: n,
                }
            }
            _ => {
                return Err(err_at(
                    path,
                    0,
                    "[echo] needs either tau_ns or all of tau_start_ns, tau_step_ns, \
                     tau_count"
                        .into(),
                ))
            }
        };
        let sigma_detuning_ghz = match f64_at(&raw.echo_sigma, path, "sigma_detuning_ghz")? {
            Some(s) => in_bounds(
                s,
                s.is_finite() && s >= 0.0,
                &raw.echo_sigma,
                path,
                "sigma_detuning_ghz",
                "must be finite and non-negative",
            )?,
            None => 0.01,
        };
        let n_samples = usize_at(&raw.echo_n, path, "n_samples")?.unwrap_or(64);
        if n_samples == 0 {
            let line = raw.echo_n.value.map(|(_, l)| l).unwrap_or(0);
            return Err(err_at(path, line, "n_samples must be at least 1".into()));
        }
        let seed = u64_at(&raw.echo_seed, path, "seed")?.unwrap_or(42);
        let window_ns = match f64_at(&raw.echo_window, path, "window_ns")? {
            Some(w) => Some(in_bounds(
                w,
                w.is_finite() && w > 0.0,
                &raw.echo_window,
                path,
                "window_ns",
                "must be finite and positive",
            )?),
            None => None,
        };
        Some(EchoConfig {
            b1_tesla,
            pi_pulse_ns,
            frequency_ghz,
            taus,
            sigma_detuning_ghz,
            n_samples,
            seed,
            window_ns,
        })
    } else {
        for (slot, key) in [
            (&raw.echo_b1, "b1_tesla"),
            (&raw.echo_pi, "pi_pulse_ns"),
            (&raw.echo_freq, "frequency_ghz"),
            (&raw.echo_taus, "tau_ns"),
            (&raw.echo_tau_start, "tau_start_ns"),
            (&raw.echo_tau_step, "tau_step_ns"),
            (&raw.echo_tau_count, "tau_count"),
            (&raw.echo_sigma, "sigma_detuning_ghz"),
            (&raw.echo_n, "n_samples"),
            (&raw.echo_seed, "seed"),
            (&raw.echo_window, "window_ns"),
        ] {
            if let Some((_, line)) = slot.value {
                return Err(err_at(path, line, format!("{key} outside an [echo] section")));
            }
        }
        None
    };

    // [report]
    let mut report = ReportConfig::default();
    if let Some((text, _)) = raw.report_table.value {
        report.table = Some(PathBuf::from(text));
    }
    if let Some(t) = f64_at(&raw.report_lifetime, path, "lifetime_ns")? {
        report.lifetime_ns = Some(in_bounds(
            t,
            t.is_finite() && t > 0.0 && t <= MAX_LIFETIME_NS,
            &raw.report_lifetime,
            path,
            "lifetime_ns",
            "must be in (0, 1e6] ns",
        )?);
    }

    // [output]
    let mut output = OutputConfig::default();
    if let Some((text, _)) = raw.out_path.value {
        output.out = Some(text.to_string());
    }
    if let Some((text, line)) = raw.out_format.value {
        output.format = Some(match text {
            "csv" => OutFormat::Csv,
            "json" => OutFormat::Json,
            other => {
                return Err(err_at(
                    path,
                    line,
                    format!("unknown format {other:?} (expected csv or json)"),
                ))
            }
        });
    }

    Ok(RunConfig {
        system,
        model,
        evolve,
        echo,
        report,
        output,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig> {
        parse_config_text(text, "test.cfg")
    }

    #[test]
    fn defaults_describe_the_canonical_pair() {
        let cfg = parse("").unwrap();
        assert_eq!(cfg.model.j_mev, 0.0);
        assert_eq!(cfg.model.field_tesla, 0.0);
        assert!(cfg.model.lifetime_ns.is_none());
        let system = cfg.system.build().unwrap();
        assert_eq!(system.dimension(), 6);
        assert_eq!(system.sites()[0].label, "triplet");
        assert_eq!(system.sites()[1].label, "cu");
        assert!(cfg.evolve.is_none());
        assert!(cfg.echo.is_none());
    }

    #[test]
    fn full_document_round_trips_values() {
        let cfg = parse(
            "# comment\n\
             [system]\n\
             spins = 1, 1/2\n\
             g_factors = 2.002, 2.05\n\
             labels = triplet, cu\n\
             [model]\n\
             j_mev = -1.5   # trailing comment\n\
             field_tesla = 0.35\n\
             lifetime_ns = 35\n\
             [echo]\n\
             pi_pulse_ns = 0.1\n\
             tau_start_ns = 1.0\n\
             tau_step_ns = 3.0e-4\n\
             tau_count = 4\n\
             sigma_detuning_ghz = 0.01\n\
             n_samples = 8\n\
             seed = 7\n\
             [output]\n\
             out = -\n\
             format = json\n",
        )
        .unwrap();
        assert_eq!(cfg.model.j_mev, -1.5);
        assert_eq!(cfg.model.field_tesla, 0.35);
        assert_eq!(cfg.model.lifetime_ns, Some(35.0));
        let echo = cfg.echo.unwrap();
        assert_eq!(echo.pi_pulse_ns, Some(0.1));
        assert_eq!(echo.seed, 7);
        assert_eq!(echo.n_samples, 8);
        assert_eq!(
            echo.taus,
            TauSpec::Linear {
                start_ns: 1.0,
                step_ns: 3.0e-4,
                count: 4
            }
        );
        let taus = echo.taus.taus();
        assert_eq!(taus.len(), 4);
        assert_eq!(taus[0], 1.0);
        assert!(taus.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(cfg.output.format, Some(OutFormat::Json));
        assert_eq!(cfg.output.out.as_deref(), Some("-"));
    }

    #[test]
    fn unknown_keys_and_sections_are_errors() {
        let err = parse("[model]\njmev = 1\n").unwrap_err();
        let text = err.to_string();
        assert!(text.contains("jmev") && text.contains(":2:"), "{text}");

        let err = parse("[mdoel]\n").unwrap_err();
        assert!(err.to_string().contains("mdoel"));

        let err = parse("j_mev = 1\n").unwrap_err();
        assert!(err.to_string().contains("before any"));

        let err = parse("[model]\nj_mev = 1\nj_mev = 2\n").unwrap_err();
        assert!(err.to_string().contains("duplicate"));

        let err = parse("[model]\nj_mev\n").unwrap_err();
        assert!(err.to_string().contains("key = value"));
    }

    #[test]
    fn bounds_violations_name_the_field() {
        let err = parse("[model]\nlifetime_ns = 0\n").unwrap_err();
        let text = err.to_string();
        assert!(text.contains("lifetime_ns") && text.contains(":2:"), "{text}");

        let err = parse("[model]\nj_mev = 1500\n").unwrap_err();
        assert!(err.to_string().contains("j_mev"));

        let err = parse("[model]\nfield_tesla = 25\n").unwrap_err();
        assert!(err.to_string().contains("field_tesla"));

        let err = parse("[system]\ng_factors = 2.0, -1.0\n").unwrap_err();
        assert!(err.to_string().contains("g_factors"));
    }

    #[test]
    fn evolve_grid_specs_are_exclusive() {
        let err = parse("[evolve]\ntimes_ns = 0, 1\nt_max_ns = 1\nn_points = 2\n").unwrap_err();
        assert!(err.to_string().contains("either times_ns"));

        let err = parse("[evolve]\nt_max_ns = 1\n").unwrap_err();
        assert!(err.to_string().contains("either times_ns"));

        let cfg = parse("[evolve]\nt_max_ns = 0\nn_points = 1\n").unwrap();
        assert_eq!(cfg.evolve.unwrap().grid.times(), vec![0.0]);

        let err = parse("[evolve]\nt_max_ns = 1\nn_points = 1\n").unwrap_err();
        assert!(err.to_string().contains("n_points = 1"));

        let err = parse("[evolve]\ntimes_ns = 1, 0.5\n").unwrap_err();
        assert!(err.to_string().contains("increasing"));

        // Keys outside their section are rejected even without the header.
        let err = parse("[model]\nt_max_ns = 1\n").unwrap_err();
        assert!(err.to_string().contains("t_max_ns"));
    }

    #[test]
    fn echo_pulse_sizing_is_exclusive() {
        let base = "[echo]\ntau_ns = 1.0\n";
        let cfg = parse(base).unwrap();
        let echo = cfg.echo.unwrap();
        assert!(echo.b1_tesla.is_none() && echo.pi_pulse_ns.is_none());
        assert_eq!(echo.sigma_detuning_ghz, 0.01);
        assert_eq!(echo.n_samples, 64);
        assert_eq!(echo.seed, 42);

        let err = parse("[echo]\ntau_ns = 1\nb1_tesla = 0.1\npi_pulse_ns = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("not both"));

        let err = parse("[echo]\ntau_start_ns = 1\ntau_step_ns = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("tau_count"));

        let err = parse("[echo]\ntau_ns = 1\nn_samples = 0\n").unwrap_err();
        assert!(err.to_string().contains("n_samples"));
    }

    #[test]
    fn spin_lists_resize_defaults() {
        let cfg = parse("[system]\nspins = 1/2, 1/2, 1/2\n").unwrap();
        assert_eq!(cfg.system.spins.len(), 3);
        assert_eq!(cfg.system.g_factors, vec![2.0023; 3]);
        assert_eq!(cfg.system.labels, vec!["site0", "site1", "site2"]);
        let system = cfg.system.build().unwrap();
        assert_eq!(system.dimension(), 8);

        let err = parse("[system]\nspins = 1, 1/2\ng_factors = 2.0\n").unwrap_err();
        assert!(err.to_string().contains("g_factors"));
    }

    #[test]
    fn preset_is_a_valid_config() {
        let cfg = preset_table1();
        assert_eq!(cfg.model.j_mev, -1.5);
        assert!(cfg.report.bundled);
        assert_eq!(cfg.report.lifetime_ns, Some(35.0));
        cfg.system.build().unwrap();
        let echo = cfg.echo.as_ref().unwrap();
        let taus = echo.taus.taus();
        assert_eq!(taus.len(), 24);
        assert!(taus.windows(2).all(|w| w[0] < w[1]));
    }
}
