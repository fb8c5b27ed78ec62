use criterion::{black_box, criterion_group, criterion_main, Criterion};
use jumpbvp::law::LawOptions;
use jumpbvp::{
    build_case5_chaos, estimate_law, eval_chaos, forward_flow, solve_forward_bvp,
    solve_skorohod_bvp, BoundaryMap, BvpOptions, CoefficientField, GenericBvpSolver, JumpPath,
    LinearBvpSolver, PathwiseSolver, SkorohodMemo, SkorohodOptions, TimeFn,
};
use jumpbvp_bench::{reference_path, reference_problem};

fn bench_flow(c: &mut Criterion) {
    let (lc, _) = reference_problem();
    let f = lc.drift_field();
    let jump = lc.jump_field();
    let path = reference_path();
    c.bench_function("forward_flow value (3 jumps, step 1e-3)", |b| {
        b.iter(|| {
            forward_flow(&f, &jump, &path, 0.0, black_box(1.0), black_box(0.3), 1e-3).unwrap()
        })
    });
}

fn bench_bvp(c: &mut Criterion) {
    let (lc, psi) = reference_problem();
    let f = lc.drift_field();
    let jump = lc.jump_field();
    let path = reference_path();
    let opts = BvpOptions::default();
    c.bench_function("solve_forward_bvp (generic, 3 jumps)", |b| {
        b.iter(|| solve_forward_bvp(&f, &jump, &psi, black_box(&path), &opts).unwrap())
    });
    let solver = LinearBvpSolver::forward(&lc, psi.clone(), 1e-10, 1e-3);
    c.bench_function("linear closed-form values_at (3 jumps)", |b| {
        b.iter(|| solver.values_at(black_box(&path), &[1.0]).unwrap())
    });
}

fn bench_law(c: &mut Criterion) {
    let (lc, psi) = reference_problem();
    let solver = GenericBvpSolver {
        f: lc.drift_field(),
        jump: lc.jump_field(),
        psi: psi.clone(),
        opts: BvpOptions::default(),
    };
    let drift = lc.drift_field();
    let opts = LawOptions::default();
    let mut group = c.benchmark_group("law");
    group.sample_size(10);
    group.bench_function("estimate_law 1000 paths (generic)", |b| {
        b.iter(|| estimate_law(&solver, &drift, &psi, 1.0, 1000, black_box(7), &opts).unwrap())
    });
    group.finish();
}

fn bench_chaos(c: &mut Criterion) {
    let series = build_case5_chaos(&TimeFn::Const(0.3), 1.0, 0.7, 0.5, 30);
    let omega = reference_path();
    c.bench_function("eval_chaos order 30", |b| {
        b.iter(|| eval_chaos(&series, black_box(&omega)))
    });
}

fn bench_skorohod(c: &mut Criterion) {
    let f = CoefficientField::linear(TimeFn::Const(0.3), TimeFn::Const(0.4));
    let jump = CoefficientField::linear(TimeFn::Const(0.2), TimeFn::Const(0.3));
    let psi = BoundaryMap::clamped_affine(-0.3, 0.5, -2.0, 2.0);
    let omega = JumpPath::new(vec![0.2, 0.4, 0.6, 0.8]).unwrap();
    let opts = SkorohodOptions::default();
    let mut group = c.benchmark_group("skorohod");
    group.sample_size(20);
    group.bench_function("solve_skorohod_bvp 4 jumps (cold memo)", |b| {
        b.iter(|| {
            let mut memo = SkorohodMemo::new();
            solve_skorohod_bvp(&f, &jump, &psi, black_box(&omega), &opts, &mut memo).unwrap()
        })
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_flow,
    bench_bvp,
    bench_law,
    bench_chaos,
    bench_skorohod
);
criterion_main!(benches);
