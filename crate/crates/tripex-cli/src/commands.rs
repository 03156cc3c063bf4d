// Copyright 2026 Tripex Contributors
// SPDX-License-Identifier: Apache-2.0

//! Scenario execution: each command turns a [`RunConfig`] into a rendered
//! CSV or JSON document plus any propagation warnings.
//!
//! # Document schemas
//!
//! * `spectrum` — CSV `level_index,energy_mev,degeneracy`, one row per
//!   degenerate level, ascending in energy; JSON mirrors the rows under
//!   `"levels"` together with the model parameters.
//! * `exchange-report` — CSV `functional,e_triplet_ev,s2_fm,s2_afm,j_mev,`
//!   `period_ps,ratio,survives` with `-` for rows whose broken-symmetry
//!   calculation did not converge; JSON adds the lifetime, the broadening
//!   scale `hbar/T`, the `|J|` and beat-period ranges, and the
//!   not-converged list.
//! * `evolve` — CSV `t_ns,<observable>...` with one `sz_<label>` column
//!   per site, plus `exciton_population` when decay is configured.
//! * `echo` — CSV `tau_ns,integrated_echo`; JSON carries the tau, echo-time
//!   and amplitude arrays plus the ensemble parameters.

use tripex::constants::{MU_BOHR_MEV_PER_T, PLANCK_MEV_NS};
use tripex::dynamics::{
    build_decay_model, evolve_closed, evolve_lindblad, evolve_lindblad_exact, ExtendedSystem,
    LindbladModel, Observables, Trajectory,
};
use tripex::error::{Error, Result};
use tripex::exchange::{bundled_table1, exchange_report, load_functional_table, ExchangeReport};
use tripex::hamiltonian::{eigensystem, grouping_tolerance, heisenberg, zeeman};
use tripex::pulses::{b1_for_pi_duration, integrated_echo, DetuningEnsemble, EchoExperiment};
use tripex::spin::{Operator, SpinSystem};

use crate::config::{Engine, RunConfig};
use crate::output::{Cell, Json, OutFormat, TableDoc};

/// A rendered command result: the document body plus diagnostics that
/// belong on stderr.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandOutput {
    pub body: String,
    pub warnings: Vec<String>,
}

impl CommandOutput {
    fn quiet(body: String) -> Self {
        CommandOutput {
            body,
            warnings: Vec::new(),
        }
    }
}

/// The configured spin system, which must have at least the exchange pair
/// (exchange couples sites 0 and 1).
fn coupled_system(cfg: &RunConfig) -> Result<SpinSystem> {
    let system = cfg.system.build()?;
    if system.n_sites() < 2 {
        return Err(Error::InvalidInput(format!(
            "this command needs at least two sites (exciton + probe); \
             the configuration lists {}",
            system.n_sites()
        )));
    }
    Ok(system)
}

/// Exchange (sites 0-1) plus Zeeman under the configured parameters.
fn static_hamiltonian(system: &SpinSystem, cfg: &RunConfig) -> Result<Operator> {
    heisenberg(cfg.model.j_mev, system, 0, 1)?.add(&zeeman(cfg.model.field_tesla, system)?)
}

/// Eigenvalues of the configured Hamiltonian, grouped into degenerate
/// levels.
pub fn cmd_spectrum(cfg: &RunConfig, format: OutFormat) -> Result<CommandOutput> {
    let system = coupled_system(cfg)?;
    let h = static_hamiltonian(&system, cfg)?;
    let eig = eigensystem(&h)?;
    let tol = grouping_tolerance(&eig.values);
    let levels = eig.grouped(tol);
    let body = match format {
        OutFormat::Csv => {
            let mut table = TableDoc::new(["level_index", "energy_mev", "degeneracy"]);
            for (index, (energy, degeneracy)) in levels.iter().enumerate() {
                table.push(vec![
                    Cell::Int(index as i64),
                    Cell::Num(*energy),
                    Cell::Int(*degeneracy as i64),
                ]);
            }
            table.csv()
        }
        OutFormat::Json => Json::Obj(vec![
            ("command".into(), Json::str("spectrum")),
            ("j_mev".into(), Json::Num(cfg.model.j_mev)),
            ("field_tesla".into(), Json::Num(cfg.model.field_tesla)),
            (
                "levels".into(),
                Json::Arr(
                    levels
                        .iter()
                        .enumerate()
                        .map(|(index, (energy, degeneracy))| {
                            Json::Obj(vec![
                                ("level_index".into(), Json::Int(index as i64)),
                                ("energy_mev".into(), Json::Num(*energy)),
                                ("degeneracy".into(), Json::Int(*degeneracy as i64)),
                            ])
                        })
                        .collect(),
                ),
            ),
        ])
        .render(),
    };
    Ok(CommandOutput::quiet(body))
}

fn report_csv(report: &ExchangeReport) -> String {
    let mut table = TableDoc::new([
        "functional",
        "e_triplet_ev",
        "s2_fm",
        "s2_afm",
        "j_mev",
        "period_ps",
        "ratio",
        "survives",
    ]);
    for row in &report.rows {
        let opt = |v: Option<f64>| v.map(Cell::Num).unwrap_or(Cell::Missing);
        table.push(vec![
            Cell::Text(row.functional.clone()),
            Cell::Num(row.e_triplet_ev),
            Cell::Num(row.s2_fm),
            opt(row.s2_afm),
            opt(row.j_mev),
            opt(row.period_ps),
            opt(row.verdict.as_ref().map(|v| v.ratio)),
            row.verdict
                .as_ref()
                .map(|v| Cell::Bool(v.survives))
                .unwrap_or(Cell::Missing),
        ]);
    }
    table.csv()
}

fn report_json(report: &ExchangeReport) -> String {
    let range = |r: Option<(f64, f64)>| match r {
        Some((lo, hi)) => Json::Arr(vec![Json::Num(lo), Json::Num(hi)]),
        None => Json::Null,
    };
    Json::Obj(vec![
        ("command".into(), Json::str("exchange-report")),
        ("lifetime_ns".into(), Json::Num(report.lifetime_ns)),
        (
            "hbar_over_lifetime_mev".into(),
            Json::Num(report.hbar_over_lifetime_mev),
        ),
        ("j_abs_range_mev".into(), range(report.j_abs_range_mev)),
        ("period_range_ps".into(), range(report.period_range_ps)),
        (
            "not_converged".into(),
            Json::str_array(report.not_converged.iter().cloned()),
        ),
        (
            "rows".into(),
            Json::Arr(
                report
                    .rows
                    .iter()
                    .map(|row| {
                        Json::Obj(vec![
                            ("functional".into(), Json::str(row.functional.clone())),
                            ("e_triplet_ev".into(), Json::Num(row.e_triplet_ev)),
                            ("s2_fm".into(), Json::Num(row.s2_fm)),
                            ("s2_afm".into(), Json::opt_num(row.s2_afm)),
                            ("j_mev".into(), Json::opt_num(row.j_mev)),
                            ("period_ps".into(), Json::opt_num(row.period_ps)),
                            (
                                "ratio".into(),
                                Json::opt_num(row.verdict.as_ref().map(|v| v.ratio)),
                            ),
                            (
                                "oscillations_within_lifetime".into(),
                                Json::opt_num(
                                    row.verdict
                                        .as_ref()
                                        .map(|v| v.oscillations_within_lifetime),
                                ),
                            ),
                            (
                                "survives".into(),
                                row.verdict
                                    .as_ref()
                                    .map(|v| Json::Bool(v.survives))
                                    .unwrap_or(Json::Null),
                            ),
                        ])
                    })
                    .collect(),
            ),
        ),
    ])
    .render()
}

/// Coherence-survival report over a functional benchmark table.
///
/// The table comes from `[report] table = PATH` or, under
/// `--preset table1`, from the embedded fixture.  The lifetime falls back
/// from `[report] lifetime_ns` to `[model] lifetime_ns` to 35 ns.
pub fn cmd_exchange_report(cfg: &RunConfig, format: OutFormat) -> Result<CommandOutput> {
    let records = match (&cfg.report.table, cfg.report.bundled) {
        (Some(path), _) => load_functional_table(path)?,
        (None, true) => bundled_table1()?,
        (None, false) => {
            return Err(Error::InvalidInput(
                "exchange-report needs a table: set `[report] table = PATH` in the \
                 configuration or pass --preset table1"
                    .into(),
            ))
        }
    };
    let lifetime = cfg
        .report
        .lifetime_ns
        .or(cfg.model.lifetime_ns)
        .unwrap_or(35.0);
    let report = exchange_report(&records, lifetime)?;
    let body = match format {
        OutFormat::Csv => report_csv(&report),
        OutFormat::Json => report_json(&report),
    };
    Ok(CommandOutput::quiet(body))
}

fn trajectory_csv(traj: &Trajectory) -> String {
    let mut columns = vec!["t_ns".to_string()];
    columns.extend(traj.columns().iter().cloned());
    let mut table = TableDoc::new(columns);
    for (t, row) in traj.times_ns().iter().zip(traj.rows()) {
        let mut cells = vec![Cell::Num(*t)];
        cells.extend(row.iter().map(|v| Cell::Num(*v)));
        table.push(cells);
    }
    table.csv()
}

fn trajectory_json(command: &str, traj: &Trajectory) -> String {
    let mut columns = vec![Json::str("t_ns")];
    columns.extend(traj.columns().iter().map(|c| Json::str(c.clone())));
    Json::Obj(vec![
        ("command".into(), Json::str(command)),
        ("columns".into(), Json::Arr(columns)),
        (
            "rows".into(),
            Json::Arr(
                traj.times_ns()
                    .iter()
                    .zip(traj.rows())
                    .map(|(t, row)| {
                        let mut values = vec![Json::Num(*t)];
                        values.extend(row.iter().map(|v| Json::Num(*v)));
                        Json::Arr(values)
                    })
                    .collect(),
            ),
        ),
        (
            "warnings".into(),
            Json::str_array(traj.warnings().iter().cloned()),
        ),
    ])
    .render()
}

/// Default initial product state: site 0 at its top Zeeman level, every
/// other site at its bottom level.
fn default_initial_m(system: &SpinSystem) -> Vec<f64> {
    system
        .sites()
        .iter()
        .enumerate()
        .map(|(i, site)| {
            if i == 0 {
                site.spin.value()
            } else {
                -site.spin.value()
            }
        })
        .collect()
}

/// Time evolution of the configured initial state, closed or with decay.
pub fn cmd_evolve(cfg: &RunConfig, format: OutFormat) -> Result<CommandOutput> {
    let system = coupled_system(cfg)?;
    let ev = cfg.evolve.as_ref().ok_or_else(|| {
        Error::InvalidInput(
            "evolve needs an [evolve] section with a time grid in the configuration".into(),
        )
    })?;
    let times = ev.grid.times();
    let initial_m = ev
        .initial_m
        .clone()
        .unwrap_or_else(|| default_initial_m(&system));
    let psi0 = system.product_state(&initial_m)?;

    let traj = match cfg.model.lifetime_ns {
        None => {
            if ev.engine == Engine::Rk4 || ev.dt_ns.is_some() {
                return Err(Error::InvalidInput(
                    "engine = rk4 and dt_ns apply to decaying models; closed evolution \
                     is spectral-exact"
                        .into(),
                ));
            }
            let h = static_hamiltonian(&system, cfg)?;
            let observables = Observables::sz_per_site(&system)?;
            evolve_closed(&h, &psi0, &times, &observables)?
        }
        Some(lifetime_ns) => {
            let ext = ExtendedSystem::new(system.clone())?;
            let model = build_decay_model(
                &ext,
                cfg.model.j_mev,
                cfg.model.field_tesla,
                lifetime_ns,
            )?;
            let mut observables = Observables::new();
            for (i, site) in system.sites().iter().enumerate() {
                observables.push(format!("sz_{}", site.label), ext.site_component(i, 'z')?)?;
            }
            observables.push("exciton_population", ext.exciton_projector())?;
            let rho0 = ext.exciton_state(&psi0)?.density();
            match ev.engine {
                Engine::Exact => {
                    if ev.dt_ns.is_some() {
                        return Err(Error::InvalidInput(
                            "dt_ns applies to engine = rk4; the exact engine has no step"
                                .into(),
                        ));
                    }
                    evolve_lindblad_exact(&model, &rho0, &times, &observables)?
                }
                Engine::Rk4 => evolve_lindblad(&model, &rho0, &times, &observables, ev.dt_ns)?,
            }
        }
    };
    let body = match format {
        OutFormat::Csv => trajectory_csv(&traj),
        OutFormat::Json => trajectory_json("evolve", &traj),
    };
    Ok(CommandOutput {
        body,
        warnings: traj.warnings().to_vec(),
    })
}

/// Integrated Hahn-echo tau sweep.
pub fn cmd_echo(
    cfg: &RunConfig,
    format: OutFormat,
    seed_override: Option<u64>,
) -> Result<CommandOutput> {
    let system = coupled_system(cfg)?;
    let e = cfg.echo.as_ref().ok_or_else(|| {
        Error::InvalidInput(
            "echo needs an [echo] section with a tau sweep in the configuration".into(),
        )
    })?;
    let g_probe = system.sites()[1].g_factor;
    let b1_tesla = match (e.b1_tesla, e.pi_pulse_ns) {
        (Some(b1), _) => b1,
        (None, Some(duration)) => b1_for_pi_duration(g_probe, duration)?,
        (None, None) => b1_for_pi_duration(g_probe, 0.1)?,
    };
    let frequency_ghz = e.frequency_ghz.unwrap_or_else(|| {
        g_probe * MU_BOHR_MEV_PER_T * cfg.model.field_tesla.abs() / PLANCK_MEV_NS
    });
    let mut experiment = EchoExperiment::hahn(g_probe, b1_tesla, frequency_ghz, e.taus.taus())?;
    if let Some(window_ns) = e.window_ns {
        experiment.detection_window_ns = window_ns;
    }
    experiment.ensemble = DetuningEnsemble {
        sigma_ghz: e.sigma_detuning_ghz,
        n_samples: e.n_samples,
        seed: seed_override.unwrap_or(e.seed),
    };

    let model = match cfg.model.lifetime_ns {
        None => LindbladModel::closed(static_hamiltonian(&system, cfg)?)?,
        Some(lifetime_ns) => build_decay_model(
            &ExtendedSystem::new(system.clone())?,
            cfg.model.j_mev,
            cfg.model.field_tesla,
            lifetime_ns,
        )?,
    };
    let trace = integrated_echo(&experiment, &system, &model, cfg.model.j_mev)?;

    let body = match format {
        OutFormat::Csv => {
            let mut table = TableDoc::new(["tau_ns", "integrated_echo"]);
            for (tau, amp) in trace.tau_ns.iter().zip(&trace.integrated_echo) {
                table.push(vec![Cell::Num(*tau), Cell::Num(*amp)]);
            }
            table.csv()
        }
        OutFormat::Json => Json::Obj(vec![
            ("command".into(), Json::str("echo")),
            ("window_ns".into(), Json::Num(trace.window_ns)),
            (
                "ensemble".into(),
                Json::Obj(vec![
                    ("sigma_ghz".into(), Json::Num(trace.ensemble.sigma_ghz)),
                    (
                        "n_samples".into(),
                        Json::Int(trace.ensemble.n_samples as i64),
                    ),
                    ("seed".into(), Json::UInt(trace.ensemble.seed)),
                ]),
            ),
            ("tau_ns".into(), Json::num_array(trace.tau_ns.clone())),
            (
                "echo_time_ns".into(),
                Json::num_array(trace.echo_time_ns.clone()),
            ),
            (
                "integrated_echo".into(),
                Json::num_array(trace.integrated_echo.clone()),
            ),
            (
                "warnings".into(),
                Json::str_array(trace.warnings.iter().cloned()),
            ),
        ])
        .render(),
    };
    Ok(CommandOutput {
        body,
        warnings: trace.warnings.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{
        parse_config_text, preset_table1, EchoConfig, EvolveConfig, TauSpec, TimeGrid,
    };
    use approx::assert_relative_eq;

    fn cfg_from(text: &str) -> RunConfig {
        parse_config_text(text, "test.cfg").unwrap()
    }

    fn csv_rows(body: &str) -> Vec<Vec<String>> {
        body.lines()
            .skip(1)
            .map(|line| line.split(',').map(|s| s.to_string()).collect())
            .collect()
    }

    #[test]
    fn spectrum_groups_degenerate_levels() {
        let cfg = cfg_from("[model]\nj_mev = -1.5\n");
        let out = cmd_spectrum(&cfg, OutFormat::Csv).unwrap();
        let rows = csv_rows(&out.body);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0][0], "0");
        assert_relative_eq!(rows[0][1].parse::<f64>().unwrap(), -0.75, max_relative = 1e-9);
        assert_eq!(rows[0][2], "4");
        assert_relative_eq!(rows[1][1].parse::<f64>().unwrap(), 1.5, max_relative = 1e-9);
        assert_eq!(rows[1][2], "2");

        // Free spins: one six-fold level at zero.
        let cfg = cfg_from("");
        let out = cmd_spectrum(&cfg, OutFormat::Csv).unwrap();
        let rows = csv_rows(&out.body);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0][2], "6");
        assert_eq!(rows[0][1], "0");

        // Antiferromagnetic J: doublet ground state.
        let cfg = cfg_from("[model]\nj_mev = 34.6\n");
        let out = cmd_spectrum(&cfg, OutFormat::Csv).unwrap();
        let rows = csv_rows(&out.body);
        assert_relative_eq!(rows[0][1].parse::<f64>().unwrap(), -34.6, max_relative = 1e-9);
        assert_eq!(rows[0][2], "2");
        assert_relative_eq!(rows[1][1].parse::<f64>().unwrap(), 17.3, max_relative = 1e-9);
        assert_eq!(rows[1][2], "4");
    }

    #[test]
    fn exchange_report_runs_on_the_bundled_table() {
        let cfg = preset_table1();
        let out = cmd_exchange_report(&cfg, OutFormat::Csv).unwrap();
        let rows = csv_rows(&out.body);
        assert_eq!(rows.len(), 10);
        let missing = rows.iter().filter(|r| r[4] == "-").count();
        assert_eq!(missing, 4);
        let survivors = rows.iter().filter(|r| r[7] == "true").count();
        assert_eq!(survivors, 6);

        // Without a table source the command refuses.
        let cfg = cfg_from("");
        assert!(cmd_exchange_report(&cfg, OutFormat::Csv).is_err());
    }

    #[test]
    fn evolve_zero_time_grid_echoes_the_initial_state() {
        let cfg = cfg_from(
            "[model]\nj_mev = -1.5\n[evolve]\nt_max_ns = 0\nn_points = 1\n",
        );
        let out = cmd_evolve(&cfg, OutFormat::Csv).unwrap();
        let lines: Vec<&str> = out.body.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], "t_ns,sz_triplet,sz_cu");
        let values: Vec<f64> = lines[1].split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(values[0], 0.0);
        assert_relative_eq!(values[1], 1.0, max_relative = 1e-12);
        assert_relative_eq!(values[2], -0.5, max_relative = 1e-12);
    }

    #[test]
    fn evolve_rejects_step_options_for_closed_models() {
        let mut cfg = cfg_from("[model]\nj_mev = -1.5\n");
        cfg.evolve = Some(EvolveConfig {
            grid: TimeGrid::Linear {
                t_max_ns: 1.0,
                n_points: 2,
            },
            dt_ns: Some(0.1),
            engine: Engine::Exact,
            initial_m: None,
        });
        assert!(cmd_evolve(&cfg, OutFormat::Csv).is_err());
    }

    #[test]
    fn echo_command_respects_the_seed_override() {
        let mut cfg = cfg_from("[model]\nj_mev = 0\nfield_tesla = 0.35\n");
        cfg.echo = Some(EchoConfig {
            b1_tesla: None,
            pi_pulse_ns: Some(0.1),
            frequency_ghz: None,
            taus: TauSpec::Explicit(vec![1.0]),
            sigma_detuning_ghz: 0.2,
            n_samples: 4,
            seed: 42,
            window_ns: None,
        });
        let base = cmd_echo(&cfg, OutFormat::Csv, None).unwrap();
        let rerun = cmd_echo(&cfg, OutFormat::Csv, None).unwrap();
        assert_eq!(base.body, rerun.body);
        let reseeded = cmd_echo(&cfg, OutFormat::Csv, Some(7)).unwrap();
        assert_ne!(base.body, reseeded.body);
        assert!(base.body.starts_with("tau_ns,integrated_echo\n"));
    }
}
