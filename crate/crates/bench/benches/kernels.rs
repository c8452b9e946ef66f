use criterion::{black_box, criterion_group, criterion_main, Criterion};
use mhdci::building_flows::{BoxFlowFamily, FlowParams};
use mhdci::geometry::load_direction_sets;
use mhdci::inverse_divergence::{inv_div_anti, inv_div_sym};
use mhdci::iteration::desk_data;
use mhdci::mhd_solver::{integrate, MhdState};
use mhdci::products::{anti_stress, sym_stress};
use mhdci::Grid;

fn transforms(c: &mut Criterion) {
    for n in [32, 64] {
        let g = Grid::new(n).unwrap();
        let (v, b) = desk_data(g, 1.0);
        c.bench_function(&format!("to_real vector n={n}"), |bn| bn.iter(|| black_box(v.to_real())));
        c.bench_function(&format!("sym_stress n={n}"), |bn| bn.iter(|| sym_stress(black_box(&v), black_box(&b))));
        c.bench_function(&format!("anti_stress n={n}"), |bn| bn.iter(|| anti_stress(black_box(&v), black_box(&b))));
        c.bench_function(&format!("inv_div_sym n={n}"), |bn| bn.iter(|| inv_div_sym(black_box(&v)).unwrap()));
        c.bench_function(&format!("inv_div_anti n={n}"), |bn| bn.iter(|| inv_div_anti(black_box(&b)).unwrap()));
    }
}

fn solver(c: &mut Criterion) {
    let g = Grid::new(32).unwrap();
    let (v, b) = desk_data(g, 0.1);
    let s = MhdState::new(v, b, 0.0).unwrap();
    let mut grp = c.benchmark_group("solver");
    grp.sample_size(10);
    grp.bench_function("8 steps n=32", |bn| bn.iter(|| integrate(&s, 0.125, 1.0 / 64.0, &[]).unwrap()));
    grp.finish();
}

fn flows(c: &mut Criterion) {
    let g = Grid::new(64).unwrap();
    let dirs = load_direction_sets();
    let p = FlowParams::desk(2665);
    let mut grp = c.benchmark_group("flows");
    grp.sample_size(10);
    grp.bench_function("desk family build", |bn| bn.iter(|| BoxFlowFamily::build(g, &dirs, &p).unwrap()));
    let fam = BoxFlowFamily::build(g, &dirs, &p).unwrap();
    grp.bench_function("sample one flow", |bn| bn.iter(|| fam.samples(&fam.flows[0], black_box(0.3))));
    grp.bench_function("overlap count", |bn| bn.iter(|| fam.overlap_count(black_box(0.3))));
    grp.finish();
}

criterion_group!(benches, transforms, solver, flows);
criterion_main!(benches);
