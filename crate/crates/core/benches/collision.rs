//! Sequential against rayon for the hot loops: cache construction, the cached
//! operator, the streaming operator and one kinetic step.

use bfd_core::collision::{qfd_apply, CollisionKernel, CrossSection, Statistics};
use bfd_core::kinetic_solver::{InitialCondition, KineticSolver, ScalingRegime, SimulationConfig};
use bfd_core::par::Exec;
use bfd_core::phase_space::{sphere_quadrature, VelocityGrid};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];
const FD: Statistics = Statistics::FermiDirac { delta: 1.0 };

fn setup(n: usize) -> (CollisionKernel, Vec<f64>) {
    let g = VelocityGrid::new(3, n, 2.5).unwrap();
    let s = sphere_quadrature(3, 2).unwrap();
    let k = CollisionKernel::new(&g, &s, &CrossSection::constant(1.0).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let f = (0..g.len()).map(|_| rng.random::<f64>()).collect();
    (k, f)
}

fn operator(c: &mut Criterion) {
    let mut group = c.benchmark_group("collision");
    group.sample_size(10);
    for n in [6, 8] {
        let (k, f) = setup(n);
        for (name, exec) in MODES {
            group.bench_function(BenchmarkId::new(format!("build_cache/{name}"), n), |b| {
                b.iter(|| black_box(k.build_cache(exec).len()))
            });
            let cache = k.build_cache(exec);
            group.bench_function(BenchmarkId::new(format!("cached/{name}"), n), |b| {
                b.iter(|| qfd_apply(&cache, black_box(&f), FD, exec).unwrap())
            });
            group.bench_function(BenchmarkId::new(format!("streaming/{name}"), n), |b| {
                b.iter(|| qfd_apply(&k, black_box(&f), FD, exec).unwrap())
            });
        }
    }
    group.finish();
}

fn step(c: &mut Criterion) {
    let regime = ScalingRegime {
        eps: 0.2,
        kappa: 1.2,
        tau: 0.5,
        gamma: 0.5,
        alpha: 3.0,
    };
    let mut cfg = SimulationConfig::homogeneous(6, regime);
    cfg.n_x = 4;
    cfg.v_max = 2.0;
    cfg.initial = InitialCondition::Wave {
        rho: 0.2,
        u: vec![0.1, 0.0, 0.0],
        e: 0.1,
        mode: 1,
    };
    let mut group = c.benchmark_group("kinetic_step");
    group.sample_size(10);
    for (name, exec) in MODES {
        let mut c = cfg.clone();
        c.exec = exec;
        let solver = KineticSolver::new(&c).unwrap();
        let dt = 0.5 * solver.dt_max();
        let mut st = solver.initial_state(&c).unwrap();
        group.bench_function(name, |b| b.iter(|| solver.step(&mut st, dt).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, operator, step);
criterion_main!(benches);
