// Copyright 2026 Tripex Contributors
// SPDX-License-Identifier: Apache-2.0

//! Data-parallel core vs sequential fallback on the echo-ensemble workload.
//!
//! `map/parallel` routes the per-tau echo jobs through
//! [`tripex::parallel::map_indexed`] (rayon under the default `parallel`
//! feature, plain iteration without it); `map/sequential` forces the
//! always-sequential baseline.  `echo_sweep/shipped` measures the public
//! [`integrated_echo`] entry point exactly as the CLI drives it.

use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, Criterion};

use tripex::constants::{MU_BOHR_MEV_PER_T, PLANCK_MEV_NS};
use tripex::dynamics::LindbladModel;
use tripex::exchange::oscillation_period_ns;
use tripex::hamiltonian::{heisenberg, zeeman};
use tripex::parallel::{map_indexed, map_indexed_seq};
use tripex::pulses::{integrated_echo, DetuningEnsemble, EchoExperiment};
use tripex::SpinSystem;

const J_MEV: f64 = -1.5;
const BZ_TESLA: f64 = 0.35;
const B1_TESLA: f64 = 0.1786; // 0.1 ns pi pulse at g = 2.05
const N_TAUS: usize = 12;

fn system() -> SpinSystem {
    SpinSystem::triplet_cu_with_g(2.002, 2.05)
}

fn model(system: &SpinSystem) -> LindbladModel {
    let h = heisenberg(J_MEV, system, 0, 1)
        .unwrap()
        .add(&zeeman(BZ_TESLA, system).unwrap())
        .unwrap();
    LindbladModel::closed(h).unwrap()
}

fn carrier_ghz(system: &SpinSystem) -> f64 {
    system.sites()[1].g_factor * MU_BOHR_MEV_PER_T * BZ_TESLA / PLANCK_MEV_NS
}

fn taus() -> Vec<f64> {
    let period = oscillation_period_ns(J_MEV).unwrap();
    (0..N_TAUS).map(|k| 1.0 + k as f64 * period / 6.0).collect()
}

/// One atomic ensemble job: a single-tau, single-sample echo evaluation.
fn echo_job(system: &SpinSystem, model: &LindbladModel, tau_ns: f64) -> f64 {
    let g_probe = system.sites()[1].g_factor;
    let experiment = EchoExperiment::hahn(g_probe, B1_TESLA, carrier_ghz(system), vec![tau_ns])
        .unwrap()
        .with_ensemble(DetuningEnsemble {
            sigma_ghz: 0.0,
            n_samples: 1,
            seed: 42,
        });
    integrated_echo(&experiment, system, model, J_MEV).unwrap().integrated_echo[0]
}

fn bench_map(c: &mut Criterion) {
    let system = system();
    let model = model(&system);
    let taus = taus();

    let mut group = c.benchmark_group("map");
    group.sample_size(10).measurement_time(Duration::from_secs(8));
    group.bench_function("parallel", |b| {
        b.iter(|| {
            map_indexed(taus.len(), |k| {
                echo_job(black_box(&system), &model, taus[k])
            })
        })
    });
    group.bench_function("sequential", |b| {
        b.iter(|| {
            map_indexed_seq(taus.len(), |k| {
                echo_job(black_box(&system), &model, taus[k])
            })
        })
    });
    group.finish();
}

fn bench_shipped_sweep(c: &mut Criterion) {
    let system = system();
    let model = model(&system);
    let g_probe = system.sites()[1].g_factor;
    let experiment = EchoExperiment::hahn(g_probe, B1_TESLA, carrier_ghz(&system), taus())
        .unwrap()
        .with_ensemble(DetuningEnsemble {
            sigma_ghz: 0.01,
            n_samples: 8,
            seed: 42,
        });

    let mut group = c.benchmark_group("echo_sweep");
    group.sample_size(10).measurement_time(Duration::from_secs(10));
    group.bench_function("shipped", |b| {
        b.iter(|| integrated_echo(black_box(&experiment), &system, &model, J_MEV).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_map, bench_shipped_sweep);
criterion_main!(benches);
