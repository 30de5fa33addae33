use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use fractune_core::gp::{parse_expr, FeatureVector};
use fractune_core::lti::{make_testbench, Family, TestBenchSpec};
use fractune_core::reduction::{NyquistObjective, ReducedModel, ReductionConfig};
use fractune_core::robustness::{default_corners, robustness_sweep};
use fractune_core::rules::{apply_rule, rule_text, RuleKind, SoptdParams};
use fractune_core::sim::{closed_loop_step, FopidParams, OustaloupConfig, SimConfig};

fn simulation(c: &mut Criterion) {
    let plant = make_testbench(TestBenchSpec::new(Family::P1, 8.0)).unwrap();
    let o = OustaloupConfig::default();
    let s = SimConfig::default();
    let pid = FopidParams::pid(0.717, 0.126, 1.3042);
    let fopid = FopidParams::new(0.4895, 0.129, 0.4882, 0.9952, 0.669);
    c.benchmark_group("closed_loop_step P1 n=8")
        .sample_size(20)
        .bench_function("pid dt=0.01", |b| {
            b.iter(|| closed_loop_step(&plant, black_box(&pid), &o, &s).unwrap())
        })
        .bench_function("fopid dt=0.01", |b| {
            b.iter(|| closed_loop_step(&plant, black_box(&fopid), &o, &s).unwrap())
        });

    let p2 = TestBenchSpec::new(Family::P2, 0.6);
    let mut factored = p2.factored().unwrap();
    factored.apparent_delay = Some(0.409777);
    let ctrl = FopidParams::new(0.6027, 0.6612, 0.4647, 0.9969, 0.2957);
    let corners = default_corners();
    c.benchmark_group("robustness")
        .sample_size(10)
        .bench_function("9 corners P2 a=0.6", |b| {
            b.iter(|| robustness_sweep(&factored, &ctrl, &corners, &o, &s).unwrap())
        });
}

fn reduction(c: &mut Criterion) {
    let cfg = ReductionConfig::default();
    let grid = cfg.grid().unwrap();
    let plant = make_testbench(TestBenchSpec::new(Family::P1, 20.0)).unwrap();
    let obj = NyquistObjective::new(&plant, &grid, cfg.w1, cfg.w2, cfg.delay_mode);
    let model = ReducedModel::soptd(1.0, 5.0, 4.0, 12.0)
        .to_delayed_tf()
        .unwrap();
    c.bench_function("nyquist objective 500 points", |b| {
        b.iter(|| obj.eval(black_box(&model)))
    });
    c.bench_function("nyquist objective setup P1 n=20", |b| {
        b.iter(|| NyquistObjective::new(black_box(&plant), &grid, cfg.w1, cfg.w2, cfg.delay_mode))
    });
}

fn rules(c: &mut Criterion) {
    let p = SoptdParams::new(1.0, 5.271248, 4.954549, 0.85439).unwrap();
    let mut g = c.benchmark_group("apply_rule");
    for kind in RuleKind::ALL {
        g.bench_function(kind.to_string(), |b| {
            b.iter(|| apply_rule(kind, black_box(&p)).unwrap())
        });
    }
    g.finish();

    let trees: Vec<_> = rule_text(RuleKind::MG_FOPID)
        .iter()
        .map(|t| parse_expr(t).unwrap())
        .collect();
    let x = FeatureVector::new(1.0, 5.271248, 4.954549, 0.85439).values();
    c.bench_function("gp eval mg-fopid trees", |b| {
        b.iter(|| trees.iter().map(|t| t.eval(black_box(&x))).sum::<f64>())
    });
    c.bench_function("gp parse mg-fopid text", |b| {
        b.iter_batched(
            || rule_text(RuleKind::MG_FOPID),
            |texts| {
                texts
                    .iter()
                    .map(|t| parse_expr(t).unwrap().node_count())
                    .sum::<usize>()
            },
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, simulation, reduction, rules);
criterion_main!(benches);
