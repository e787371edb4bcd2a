//! Sequential versus rayon execution of an identification sweep.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use poreflow::geometry::{build_geometry, GeometryConfig};
use poreflow::identification::{evaluate_curves, sobol_sample, FeasibleBox, TransportModel};
use poreflow::mesh::triangulate;
use poreflow::par::Execution;
use poreflow::stokes::{solve_stokes, FlowBcs};
use poreflow::transport::{assemble_transport, Isotherm, TransportSolver};

fn model() -> TransportModel {
    let mesh = triangulate(&build_geometry(&GeometryConfig::default()).unwrap(), 0.15).unwrap();
    let flow = solve_stokes(&mesh, &FlowBcs::default()).unwrap();
    let ops = assemble_transport(&mesh, &flow, 10.0).unwrap();
    TransportModel {
        solver: TransportSolver::new(ops, 0.1).unwrap(),
        isotherm: Isotherm::default(),
        n_steps: 100,
    }
}

fn sweep(c: &mut Criterion) {
    let model = model();
    let params = sobol_sample(&FeasibleBox::default(), 16);
    let workers = std::thread::available_parallelism().map_or(2, |n| n.get().max(2));
    let mut group = c.benchmark_group("sobol_16");
    group.sample_size(10);
    for exec in [Execution::Sequential, Execution::Parallel { workers }] {
        let label = match exec {
            Execution::Sequential => "sequential".to_string(),
            Execution::Parallel { workers } => format!("parallel_{workers}"),
        };
        group.bench_with_input(BenchmarkId::from_parameter(label), &exec, |b, &exec| {
            b.iter(|| evaluate_curves(&model, &params, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, sweep);
criterion_main!(benches);
